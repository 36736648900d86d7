//! CSV and JSON writers for result tables.

use std::io::Write;

use crate::config::Format;
use crate::run::Row;

pub const COLUMNS: [&str; 10] = ["T", "re_K", "im_K", "abs2_K", "method", "n_traj", "caustic_flag", "re_B", "im_B", "status"];

/// 17 significant digits, enough to round-trip any double.
pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn write_rows<W: Write>(rows: &[Row], format: Format, out: W) -> anyhow::Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(COLUMNS)?;
            for r in rows {
                w.write_record([
                    num(r.t),
                    num(r.re_k),
                    num(r.im_k),
                    num(r.abs2_k),
                    r.method.to_string(),
                    r.n_traj.to_string(),
                    r.caustic_flag.to_string(),
                    opt(r.re_b),
                    opt(r.im_b),
                    r.status.clone(),
                ])?;
            }
            w.flush()?;
        }
        Format::Json => {
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, rows)?;
            writeln!(out)?;
        }
    }
    Ok(())
}

/// Writes a table with arbitrary named numeric columns as CSV.
pub fn write_table<W: Write>(header: &[&str], rows: &[Vec<String>], out: W) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, -7.25e12] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
