use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Serialize};

/// Canonical variable name: lowercase, with each run of whitespace or
/// underscores collapsed to a single `_`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct VariableId(String);

impl TryFrom<String> for VariableId {
    type Error = &'static str;

    fn try_from(raw: String) -> Result<Self, Self::Error> {
        VariableId::new(&raw).ok_or("empty variable name")
    }
}

impl From<VariableId> for String {
    fn from(id: VariableId) -> String {
        id.0
    }
}

impl VariableId {
    /// Normalizes `raw`. Returns `None` when nothing is left after trimming.
    pub fn new(raw: &str) -> Option<Self> {
        let id = normalize(raw);
        if id.is_empty() {
            None
        } else {
            Some(VariableId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for VariableId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl AsRef<str> for VariableId {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

impl core::borrow::Borrow<str> for VariableId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

/// Name normalization shared by the parser, the engine and config lookups.
///
/// XMILE writes line breaks inside names as the two characters `\n`; those
/// count as whitespace here.
pub fn normalize(raw: &str) -> String {
    let raw = raw.trim();
    let raw = raw
        .strip_prefix('"')
        .and_then(|r| r.strip_suffix('"'))
        .unwrap_or(raw);
    let mut out = String::with_capacity(raw.len());
    let mut pending_sep = false;
    let mut chars = raw.chars().peekable();
    while let Some(c) = chars.next() {
        let is_sep = if c == '\\' && chars.peek() == Some(&'n') {
            chars.next();
            true
        } else {
            c.is_whitespace() || c == '_'
        };
        if is_sep {
            pending_sep = true;
            continue;
        }
        if pending_sep && !out.is_empty() {
            out.push('_');
        }
        pending_sep = false;
        out.extend(c.to_lowercase());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spaces_and_case() {
        assert_eq!(
            normalize("Price EC  without Taxes"),
            "price_ec_without_taxes"
        );
        assert_eq!(normalize("  \"Teacup Temperature\" "), "teacup_temperature");
        assert_eq!(normalize("room\\ntemp"), "room_temp");
        assert_eq!(normalize("a__b_"), "a_b");
        assert!(VariableId::new("   ").is_none());
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(s in "[ a-zA-Z_0-9\\t]{0,24}") {
            let once = normalize(&s);
            prop_assert_eq!(normalize(&once), once.clone());
        }
    }
}
