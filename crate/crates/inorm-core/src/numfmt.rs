//! Number formatting for report files.

/// Nine significant digits in scientific notation, e.g. `5.00000000e-2`.
/// Fixed width keeps report CSVs byte-stable across runs.
pub fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

#[cfg(test)]
mod tests {
    use super::sig9;

    #[test]
    fn formats_nine_significant_digits() {
        assert_eq!(sig9(0.05), "5.00000000e-2");
        assert_eq!(sig9(0.0), "0.00000000e0");
        assert_eq!(sig9(-1.0 / 3.0), "-3.33333333e-1");
        assert_eq!(sig9(12345.6789), "1.23456789e4");
    }
}
