use crate::error::{Error, Result};
use crate::model::std_normal_cdf;

/// Share of subjects for whom treatment lowers the hazard immediately,
/// `P(γ0 b2 + γ1 ν ≤ 0)` with `b2 ~ N(mean_b2, var_b2)`.
pub fn benefit_fraction(
    gamma0: f64,
    gamma1: f64,
    nu: f64,
    mean_b2: f64,
    var_b2: f64,
) -> Result<f64> {
    if gamma0 == 0.0 || !gamma0.is_finite() {
        return Err(Error::Domain(format!(
            "benefit fraction is degenerate for gamma0 = {gamma0}"
        )));
    }
    if !(var_b2 > 0.0 && var_b2.is_finite()) {
        return Err(Error::Domain(format!(
            "var_b2 must be positive, got {var_b2}"
        )));
    }
    let threshold = -gamma1 * nu / gamma0;
    let z = (threshold - mean_b2) / var_b2.sqrt();
    Ok(if gamma0 > 0.0 {
        std_normal_cdf(z)
    } else {
        std_normal_cdf(-z)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reported_example() {
        let p = benefit_fraction(0.01539, 0.3829, 0.5567, -2.640, 111.41).unwrap();
        assert!((p - 0.1441).abs() < 1e-3, "{p}");
    }

    #[test]
    fn limits() {
        assert_eq!(benefit_fraction(0.1, 0.0, 0.7, 0.0, 2.0).unwrap(), 0.5);
        assert_eq!(benefit_fraction(0.1, 0.4, 0.0, 0.0, 2.0).unwrap(), 0.5);
        assert!(benefit_fraction(0.1, 0.4, 0.5, -1000.0, 1.0).unwrap() > 1.0 - 1e-12);
        assert!(benefit_fraction(0.0, 0.4, 0.5, 0.0, 1.0).is_err());
        assert!(benefit_fraction(0.1, 0.4, 0.5, 0.0, 0.0).is_err());
    }

    #[test]
    fn monotone_in_mean() {
        let mut prev = 1.0;
        for m in [-5.0, -2.0, 0.0, 1.0, 4.0] {
            let p = benefit_fraction(0.05, 0.2, 0.5, m, 3.0).unwrap();
            assert!(p < prev);
            prev = p;
        }
    }
}
