//! Locale-independent number formatting for CSV reports.

/// 17 significant digits in scientific notation: enough to round-trip any
/// f64 exactly, and stable across platforms.
pub fn g17(x: f64) -> String {
    format!("{x:.16e}")
}
