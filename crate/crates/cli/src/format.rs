//! Number formatting: 9 significant digits for people, 17 for files.

/// `x` with 9 significant digits, in fixed notation when that stays short.
pub fn human(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0.00000000".into() } else { x.to_string() };
    }
    let magnitude = x.abs().log10().floor() as i32;
    if (-4..9).contains(&magnitude) {
        let decimals = (8 - magnitude).max(0) as usize;
        format!("{x:.decimals$}")
    } else {
        format!("{x:.8e}")
    }
}

/// `x` with 17 significant digits, enough to round-trip any f64.
pub fn exact(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(human(3.0), "3.00000000");
        assert_eq!(human(5f64.sqrt()), "2.23606798");
        assert_eq!(human(123.456), "123.456000");
        assert_eq!(human(0.001234), "0.00123400000");
        assert_eq!(human(0.0), "0.00000000");
        assert_eq!(human(3e12), "3.00000000e12");
    }

    #[test]
    fn exact_round_trips() {
        for x in [0.1, 1.0 / 3.0, 2.2250738585072014e-308, 1e300, 5f64.sqrt()] {
            assert_eq!(exact(x).parse::<f64>().unwrap(), x);
        }
    }
}
