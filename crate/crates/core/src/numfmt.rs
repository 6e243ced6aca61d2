//! Significant-digit rounding shared by the JSON and text renderers.

/// Rounds `x` to `digits` significant digits.
///
/// Goes through the decimal representation so the result is the `f64`
/// closest to the printed value, which keeps serialized output short.
pub fn round_sig(x: f64, digits: usize) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    let digits = digits.max(1);
    let s = format!("{:.*e}", digits - 1, x);
    let rounded: f64 = s.parse().expect("formatted float re-parses");
    // normalise -0.0
    if rounded == 0.0 {
        0.0
    } else {
        rounded
    }
}

/// Value of one unit in the last of `digits` significant digits of `x`.
///
/// `ulp_sig(0.85, 4) == 0.0001`, `ulp_sig(29.0, 4) == 0.01`. Zero maps to
/// `10^-digits`.
pub fn ulp_sig(x: f64, digits: usize) -> f64 {
    let digits = digits.max(1) as i32;
    if x == 0.0 || !x.is_finite() {
        return 10f64.powi(-digits);
    }
    let exponent = x.abs().log10().floor() as i32;
    // log10 can land just below an exact power of ten
    let exponent = if 10f64.powi(exponent + 1) <= x.abs() {
        exponent + 1
    } else {
        exponent
    };
    10f64.powi(exponent - digits + 1)
}

/// Formats with at most `digits` significant digits and no trailing zeros.
pub fn format_sig(x: f64, digits: usize) -> String {
    let r = round_sig(x, digits);
    if r == r.trunc() && r.abs() < 1e15 {
        return format!("{}", r as i64);
    }
    let s = format!("{}", r);
    if s.contains('e') {
        return s;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounds_to_requested_digits() {
        assert_eq!(round_sig(0.123456789123, 9), 0.123456789);
        assert_eq!(round_sig(28.96712, 4), 28.97);
        assert_eq!(round_sig(-0.000123456, 2), -0.00012);
        assert_eq!(round_sig(0.0, 4), 0.0);
    }

    #[test]
    fn unit_in_last_place() {
        assert!((ulp_sig(0.85, 4) - 1e-4).abs() < 1e-15);
        assert!((ulp_sig(29.0, 4) - 1e-2).abs() < 1e-15);
        assert!((ulp_sig(100.0, 4) - 1e-1).abs() < 1e-12);
        assert!((ulp_sig(0.0, 4) - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn formatting_drops_trailing_zeros() {
        assert_eq!(format_sig(29.0, 4), "29");
        assert_eq!(format_sig(0.85, 4), "0.85");
        assert_eq!(format_sig(28.96712, 4), "28.97");
        assert_eq!(format_sig(0.70001, 4), "0.7");
    }
}
