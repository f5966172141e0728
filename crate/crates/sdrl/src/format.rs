//! Trajectory CSV and number formatting.

use std::io::Write;

use sdrl_core::{SimState, VariableId};

/// Formats like C's `%.17g`: 17 significant digits, trailing zeros dropped,
/// scientific notation outside `[1e-4, 1e17)`. Parsing the result gives back
/// the same double.
pub fn fmt_g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{v:.16e}");
    let (mant, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..17).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let decimals = (16 - exp).max(0) as usize;
    trim_zeros(&format!("{v:.decimals$}")).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn csv_header(columns: &[VariableId]) -> Vec<String> {
    std::iter::once("time".to_string())
        .chain(columns.iter().map(|c| c.as_str().to_string()))
        .collect()
}

/// Writes `time,<columns...>` and one row per recorded dt.
pub fn write_trajectory<W: Write>(out: W, state: &SimState) -> csv::Result<()> {
    let model = state.model();
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::CRLF)
        .from_writer(out);
    w.write_record(csv_header(model.columns()))?;
    let specs = model.specs();
    for (i, row) in state.history_rows().enumerate() {
        let mut rec = Vec::with_capacity(row.len() + 1);
        rec.push(fmt_g17(specs.time_at(i)));
        rec.extend(row.iter().map(|v| fmt_g17(*v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn trajectory_csv(state: &SimState) -> Vec<u8> {
    let mut buf = Vec::new();
    write_trajectory(&mut buf, state).expect("writing to memory");
    buf
}

/// Reads back a trajectory CSV: header and numeric rows.
pub fn read_trajectory(bytes: &[u8]) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r
        .headers()
        .map_err(|e| e.to_string())?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| e.to_string())?;
        let row = rec
            .iter()
            .map(|s| s.parse::<f64>().map_err(|e| format!("`{s}`: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}
