mod common;

use common::*;
use proptest::prelude::*;
use sdrl_core::{SimSpecs, Variable};

// Node i depends only on earlier nodes, under shuffled names.
fn dag() -> impl Strategy<Value = (Vec<usize>, Vec<Vec<usize>>)> {
    (2usize..25).prop_flat_map(|n| {
        let names = Just((0..n).collect::<Vec<_>>()).prop_shuffle();
        let deps = (0..n)
            .map(|i| prop::collection::btree_set(0..i.max(1), 0..=i.min(3)))
            .collect::<Vec<_>>();
        (names, deps).prop_map(move |(names, deps)| {
            let deps = deps
                .into_iter()
                .enumerate()
                .map(|(i, d)| d.into_iter().filter(|&j| j < i).collect())
                .collect();
            (names, deps)
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn dependencies_come_first((names, deps) in dag()) {
        let name = |i: usize| format!("v{}", names[i]);
        let vars = deps
            .iter()
            .enumerate()
            .map(|(i, d): (usize, &Vec<usize>)| {
                let rhs = if d.is_empty() {
                    format!("{i} + TIME")
                } else {
                    d.iter().map(|&j| name(j)).collect::<Vec<_>>().join(" + ")
                };
                Variable::aux(id(&name(i)), eq(&rhs))
            })
            .collect();
        let m = model(SimSpecs::new(0.0, 1.0, 1.0), vars);
        let order: Vec<&str> = m.dependency_order().iter().map(|v| v.as_str()).collect();
        prop_assert_eq!(order.len(), deps.len());
        let pos = |s: &str| order.iter().position(|&o| o == s).unwrap();
        for (i, d) in deps.iter().enumerate() {
            for &j in d {
                prop_assert!(pos(&name(j)) < pos(&name(i)));
            }
        }
    }

    #[test]
    fn order_is_deterministic((names, deps) in dag()) {
        let build = || {
            let vars = deps
                .iter()
                .enumerate()
                .map(|(i, d): (usize, &Vec<usize>)| {
                    let rhs = d
                        .iter()
                        .map(|&j| format!("v{}", names[j]))
                        .chain(std::iter::once("TIME".to_string()))
                        .collect::<Vec<_>>()
                        .join(" + ");
                    Variable::aux(id(&format!("v{}", names[i])), eq(&rhs))
                })
                .collect();
            model(SimSpecs::new(0.0, 1.0, 1.0), vars)
        };
        let (a, b) = (build(), build());
        prop_assert_eq!(a.dependency_order(), b.dependency_order());
    }
}
