use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Expected improvement of a Gaussian belief N(mu, sigma^2) over `f_best`
/// (maximization convention) with exploration margin `xi`:
/// `(mu - f_best - xi) Phi(z) + sigma phi(z)`, `z = (mu - f_best - xi) / sigma`.
pub fn expected_improvement(mu: f64, sigma: f64, f_best: f64, xi: f64) -> f64 {
    assert!(sigma >= 0.0, "sigma must be non-negative, got {sigma}");
    let gain = mu - f_best - xi;
    if sigma == 0.0 {
        return gain.max(0.0);
    }
    let std = Normal::standard();
    let z = gain / sigma;
    (gain * std.cdf(z) + sigma * std.pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_sigma() {
        assert_eq!(expected_improvement(0.5, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(expected_improvement(1.0, 0.0, 1.0, 0.0), 0.0);
        assert_eq!(expected_improvement(2.0, 0.0, 1.0, 0.25), 0.75);
    }

    #[test]
    fn at_incumbent_equals_density_at_zero() {
        let ei = expected_improvement(0.3, 1.0, 0.3, 0.0);
        assert!((ei - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-12);
        assert!((ei - 0.39894).abs() < 1e-5);
    }

    #[test]
    fn monotone_in_sigma() {
        for mu in [-1.0, 0.0, 0.5, 2.0] {
            let e: Vec<f64> = [0.1, 1.0, 10.0]
                .iter()
                .map(|&s| expected_improvement(mu, s, 0.5, 0.01))
                .collect();
            assert!(e[0] <= e[1] && e[1] <= e[2], "{mu}: {e:?}");
        }
    }
}
