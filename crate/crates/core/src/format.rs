/// Shortest-safe text form of a float: 17 significant digits, so values
/// round-trip exactly through CSV and JSON.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}
