//! Numeric formatting for reports: six significant digits.

/// `%.6g`-style rendering. Non-finite values render as `NaN`, `inf`, `-inf`.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..6).contains(&exp) {
        let decimals = (5 - exp) as usize;
        trim(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim(mantissa.to_string()))
    }
}

/// `x` rounded to six significant digits.
pub fn round6(x: f64) -> f64 {
    if x.is_finite() {
        sig6(x).parse().expect("sig6 output parses")
    } else {
        x
    }
}

fn trim(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_printf_g() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (-2.5, "-2.5"),
            (1.0 / 3.0, "0.333333"),
            (123456.7, "123457"),
            (999999.5, "1e6"),
            (0.000123456789, "0.000123457"),
            (1.5e-7, "1.5e-7"),
            (6.02214076e23, "6.02214e23"),
            (100.0, "100"),
        ];
        for (x, want) in cases {
            assert_eq!(sig6(x), want, "{x}");
        }
        assert_eq!(sig6(f64::NAN), "NaN");
    }

    #[test]
    fn round6_is_idempotent() {
        let x = round6(std::f64::consts::PI);
        assert_eq!(x.to_string(), "3.14159");
        assert_eq!(round6(x), x);
    }
}
