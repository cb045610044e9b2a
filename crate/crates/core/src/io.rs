//! Fixed-format rendering for trajectory and run logs.
//!
//! Floats are written in scientific notation with 17 significant digits so
//! every value re-parses to the same double. Lines end in `\n`.

use std::fmt::Write;

/// 17-significant-digit rendering of a double.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A record with a fixed column order.
pub trait CsvRecord {
    const HEADER: &'static [&'static str];
    fn write_fields(&self, out: &mut Vec<String>);
}

pub fn to_csv<R: CsvRecord>(records: &[R]) -> String {
    let mut s = R::HEADER.join(",");
    s.push('\n');
    let mut fields = Vec::with_capacity(R::HEADER.len());
    for r in records {
        fields.clear();
        r.write_fields(&mut fields);
        debug_assert_eq!(fields.len(), R::HEADER.len());
        let _ = writeln!(s, "{}", fields.join(","));
    }
    s
}
