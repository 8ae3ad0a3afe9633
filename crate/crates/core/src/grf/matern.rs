use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};

/// Matérn covariance parameters: smoothness `nu`, correlation length `r`,
/// variance `sigma2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaternParams {
    pub nu: f64,
    pub r: f64,
    pub sigma2: f64,
}

impl MaternParams {
    pub fn new(nu: f64, r: f64, sigma2: f64) -> Result<Self> {
        let p = Self { nu, r, sigma2 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.5 && self.nu.is_finite()) {
            return Err(invalid("nu", format!("must be finite and > 1/2, got {}", self.nu)));
        }
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(invalid("r", format!("must be finite and > 0, got {}", self.r)));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(invalid("sigma2", format!("must be finite and > 0, got {}", self.sigma2)));
        }
        Ok(())
    }

    /// Covariance at distance `s >= 0`. No argument checks.
    pub(crate) fn at(&self, s: f64) -> f64 {
        if s == 0.0 {
            return self.sigma2;
        }
        let t = 2.0 * s * self.nu.sqrt() / self.r;
        if t > 745.0 {
            return 0.0;
        }
        // t^nu K_nu(t) = t^nu e^{-t} (e^t K_nu(t)), evaluated in log space.
        let scaled = scaled_bessel_k(self.nu, t);
        let log_val = (1.0 - self.nu) * std::f64::consts::LN_2 - ln_gamma(self.nu)
            + self.nu * t.ln()
            - t
            + scaled.ln();
        self.sigma2 * log_val.exp()
    }
}

/// Matérn covariance `rho(s)`; `s = 0` returns the variance.
pub fn matern_covariance(s: f64, p: &MaternParams) -> Result<f64> {
    if !s.is_finite() || s < 0.0 {
        return Err(invalid("s", format!("distance must be finite and >= 0, got {s}")));
    }
    Ok(p.at(s))
}

/// `e^t K_nu(t)` for `t > 0`.
///
/// Half-integer orders use the terminating series
/// `K_{k+1/2}(t) = sqrt(pi/(2t)) e^{-t} sum_j (k+j)!/(j!(k-j)!) (2t)^{-j}`;
/// other orders use [`scaled_bessel_k_integral`].
pub fn scaled_bessel_k(nu: f64, t: f64) -> f64 {
    let nu = nu.abs();
    let k = nu - 0.5;
    if k >= 0.0 && k.fract() == 0.0 && k <= 30.0 {
        scaled_bessel_k_half_integer(k as u32, t)
    } else {
        scaled_bessel_k_integral(nu, t)
    }
}

pub(crate) fn scaled_bessel_k_half_integer(k: u32, t: f64) -> f64 {
    let mut sum = 0.0;
    let mut coeff = 1.0; // (k+j)!/(j!(k-j)!) at j = 0
    let mut pow = 1.0;
    for j in 0..=k {
        sum += coeff * pow;
        let jf = f64::from(j);
        let kf = f64::from(k);
        coeff *= (kf + jf + 1.0) * (kf - jf) / (jf + 1.0);
        pow /= 2.0 * t;
    }
    (std::f64::consts::PI / (2.0 * t)).sqrt() * sum
}

/// `e^t K_nu(t)` from `K_nu(t) = int_0^inf exp(-t cosh u) cosh(nu u) du`
/// with the trapezoidal rule, which converges geometrically for this
/// analytic, doubly-exponentially decaying integrand.
pub fn scaled_bessel_k_integral(nu: f64, t: f64) -> f64 {
    let step = 0.02_f64.min(2.0 / (1.0 + nu));
    let mut sum = 0.5; // u = 0 term: exp(0) * cosh(0)
    let mut u = step;
    loop {
        let log_term = -t * (u.cosh() - 1.0) + nu * u + (1.0 + (-2.0 * nu * u).exp()).ln() - std::f64::consts::LN_2;
        let term = log_term.exp();
        sum += term;
        if term < 1e-18 * sum && t * (u.cosh() - 1.0) > nu * u {
            break;
        }
        u += step;
        if u > 60.0 {
            break;
        }
    }
    sum * step
}

#[cfg(test)]
mod tests {
    use super::*;

    fn closed_form_15(s: f64, r: f64, sigma2: f64) -> f64 {
        let t = 6f64.sqrt() * s / r;
        sigma2 * (1.0 + t) * (-t).exp()
    }

    #[test]
    fn zero_distance_is_variance() {
        let p = MaternParams::new(1.5, 0.5, 2.25).unwrap();
        assert_eq!(matern_covariance(0.0, &p).unwrap(), 2.25);
        let q = MaternParams::new(2.3, 0.1, 0.7).unwrap();
        assert_eq!(matern_covariance(0.0, &q).unwrap(), 0.7);
    }

    #[test]
    fn nu_three_halves_example_value() {
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        let v = matern_covariance(0.5, &p).unwrap();
        assert!((v - 0.29778).abs() < 1e-4, "{v}");
        assert!((v - closed_form_15(0.5, 0.5, 1.0)).abs() < 1e-14);
        assert!(matern_covariance(10.0, &p).unwrap() < 1e-18);
    }

    #[test]
    fn general_bessel_path_matches_closed_forms() {
        for &k in &[0u32, 1, 2, 3] {
            for &t in &[1e-3, 0.05, 0.5, 1.0, 2.449, 7.0, 30.0, 120.0] {
                let exact = scaled_bessel_k_half_integer(k, t);
                let quad = scaled_bessel_k_integral(f64::from(k) + 0.5, t);
                let rel = ((quad - exact) / exact).abs();
                assert!(rel < 1e-10, "k={k} t={t} rel={rel}");
            }
        }
    }

    #[test]
    fn general_order_covariance_is_continuous_in_nu() {
        let a = MaternParams::new(1.5, 0.5, 1.0).unwrap().at(0.3);
        let b = MaternParams::new(1.5 + 1e-7, 0.5, 1.0).unwrap().at(0.3);
        assert!((a - b).abs() < 1e-6);
    }

    #[test]
    fn small_distance_tends_to_variance() {
        let p = MaternParams::new(2.2, 0.5, 1.3).unwrap();
        assert!((p.at(1e-8) - 1.3).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_input() {
        let p = MaternParams::new(1.5, 0.5, 1.0).unwrap();
        assert!(matern_covariance(f64::NAN, &p).is_err());
        assert!(matern_covariance(-1.0, &p).is_err());
        assert!(MaternParams::new(0.5, 0.5, 1.0).is_err());
        assert!(MaternParams::new(1.5, 0.0, 1.0).is_err());
        assert!(MaternParams::new(1.5, 0.5, -1.0).is_err());
    }
}
