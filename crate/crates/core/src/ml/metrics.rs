use super::MlError;

/// Absolute percentage error.
pub fn ape(actual: f64, predicted: f64) -> Result<f64, MlError> {
    if actual <= 0.0 || actual.is_nan() {
        return Err(MlError::NonPositiveActual(actual));
    }
    Ok((actual - predicted).abs() / actual * 100.0)
}

/// Symmetric absolute percentage error, in `[0, 200]` for non-negative inputs.
pub fn sape(actual: f64, predicted: f64) -> Result<f64, MlError> {
    let denom = actual + predicted;
    if denom <= 0.0 || denom.is_nan() {
        return Err(MlError::DegenerateDenominator);
    }
    Ok((actual - predicted).abs() / denom * 200.0)
}

pub fn loss_mse(residuals: &[f64]) -> Result<f64, MlError> {
    if residuals.is_empty() {
        return Err(MlError::EmptyInput);
    }
    Ok(residuals.iter().map(|d| d * d).sum::<f64>() / residuals.len() as f64)
}

pub fn huber(d: f64, delta: f64) -> f64 {
    let a = d.abs();
    if a <= delta {
        0.5 * d * d
    } else {
        delta * a - 0.5 * delta * delta
    }
}

/// Mean Huber loss: quadratic within `delta`, linear beyond.
pub fn loss_huber(residuals: &[f64], delta: f64) -> Result<f64, MlError> {
    if residuals.is_empty() {
        return Err(MlError::EmptyInput);
    }
    if !(delta > 0.0) {
        return Err(MlError::InvalidHyperparameter(format!(
            "huber delta {delta} must be positive"
        )));
    }
    Ok(residuals.iter().map(|&d| huber(d, delta)).sum::<f64>() / residuals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn ape_cases() {
        assert_eq!(ape(100.0, 100.0).unwrap(), 0.0);
        assert_eq!(ape(200.0, 100.0).unwrap(), 50.0);
        assert_eq!(ape(100.0, 150.0).unwrap(), 50.0);
        assert!(matches!(ape(0.0, 1.0), Err(MlError::NonPositiveActual(_))));
    }

    #[test]
    fn sape_cases() {
        assert_eq!(sape(100.0, 100.0).unwrap(), 0.0);
        assert!((sape(200.0, 100.0).unwrap() - 66.666_666).abs() < 1e-4);
        assert_eq!(sape(100.0, 200.0).unwrap(), sape(200.0, 100.0).unwrap());
        assert!(matches!(
            sape(0.0, 0.0),
            Err(MlError::DegenerateDenominator)
        ));
    }

    #[test]
    fn loss_cases() {
        assert_eq!(loss_huber(&[1.0], 1.35).unwrap(), 0.5);
        assert!((loss_huber(&[2.0], 1.35).unwrap() - 1.78875).abs() < 1e-12);
        assert_eq!(loss_mse(&[3.0, -4.0]).unwrap(), 12.5);
        assert!(matches!(loss_mse(&[]), Err(MlError::EmptyInput)));
        assert!(matches!(loss_huber(&[], 1.0), Err(MlError::EmptyInput)));
    }

    #[test]
    fn huber_continuity_at_delta() {
        for delta in [0.1f64, 1.0, 1.35, 7.5] {
            let quad = 0.5 * delta * delta;
            let lin = delta * delta - 0.5 * delta * delta;
            assert!((quad - lin).abs() < 1e-12);
            assert!((huber(delta, delta) - quad).abs() < 1e-12);
            assert!((huber(delta + 1e-13, delta) - quad).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn metric_ranges(a in 1e-3f64..1e6, p in 0f64..1e6) {
            let s = sape(a, p).unwrap();
            prop_assert!((0.0..=200.0).contains(&s));
            prop_assert!(ape(a, p).unwrap() >= 0.0);
            prop_assert!((s - sape(p.max(1e-3), a).unwrap()).abs() < 1e-9 || p < 1e-3);
        }
    }
}
