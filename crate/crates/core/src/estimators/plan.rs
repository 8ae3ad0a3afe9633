use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Rate parameters of the error model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// FE convergence rate `κ`.
    pub kappa: f64,
    /// Field approximation rate `γ`.
    pub gamma: f64,
    /// Subordinator exponent `c`.
    pub c: f64,
    /// Slack `ξ > 0` in the sample numbers.
    pub xi: f64,
}

impl RateParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.gamma > 0.0) {
            return Err(invalid("rates", "kappa and gamma must be > 0"));
        }
        if !(self.c >= 1.0) {
            return Err(invalid("rates.c", format!("must be >= 1, got {}", self.c)));
        }
        if !(self.xi > 0.0) {
            return Err(invalid("rates.xi", format!("must be > 0, got {}", self.xi)));
        }
        Ok(())
    }
}

/// Calibration constants `C_W`, `C_l`, `C_M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub c_w: f64,
    pub c_l: f64,
    pub c_m: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self { c_w: 1.0, c_l: 1.0, c_m: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelSpec {
    /// Mesh size (refinement threshold for adapted meshes).
    pub h: f64,
    pub eps_w: f64,
    pub eps_l: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MeshMode {
    #[default]
    Uniform,
    /// Meshes aligned with the jump lines of each sample.
    Adapted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelPlan {
    pub levels: Vec<LevelSpec>,
    pub mesh: MeshMode,
    /// Rates the plan was equilibrated with, if any.
    pub rates: Option<RateParams>,
}

impl LevelPlan {
    /// Plan with `h`, `ε_W` and `ε_l` strictly decreasing in the level.
    pub fn new(levels: Vec<LevelSpec>, mesh: MeshMode) -> Result<Self> {
        let plan = Self::with_repeats(levels, mesh)?;
        for w in plan.levels.windows(2) {
            if !(w[1].h < w[0].h && w[1].eps_w < w[0].eps_w && w[1].eps_l < w[0].eps_l) {
                return Err(invalid("levels", "h, eps_w and eps_l must decrease strictly with the level"));
            }
        }
        Ok(plan)
    }

    /// Like [`LevelPlan::new`] but allows equal neighbouring levels.
    pub fn with_repeats(levels: Vec<LevelSpec>, mesh: MeshMode) -> Result<Self> {
        if levels.is_empty() {
            return Err(invalid("levels", "plan needs at least one level"));
        }
        for l in &levels {
            if !(l.h > 0.0 && l.eps_w > 0.0 && l.eps_l > 0.0) {
                return Err(invalid("levels", "h, eps_w and eps_l must be > 0"));
            }
            if l.samples == 0 {
                return Err(invalid("levels.samples", "every level needs at least one sample"));
            }
        }
        for w in levels.windows(2) {
            if w[1].h > w[0].h || w[1].eps_w > w[0].eps_w || w[1].eps_l > w[0].eps_l {
                return Err(invalid("levels", "h, eps_w and eps_l must not increase with the level"));
            }
        }
        Ok(Self { levels, mesh, rates: None })
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn finest(&self) -> &LevelSpec {
        self.levels.last().expect("nonempty plan")
    }

    pub fn with_mesh(mut self, mesh: MeshMode) -> Self {
        self.mesh = mesh;
        self
    }

    /// Levels `0..=top` only.
    pub fn truncated(&self, top: usize) -> Result<Self> {
        if top >= self.levels.len() {
            return Err(invalid("levels", format!("plan has no level {top}")));
        }
        Ok(Self { levels: self.levels[..=top].to_vec(), ..self.clone() })
    }

    pub fn sample_counts(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.samples).collect()
    }

    pub fn with_samples(&self, samples: &[usize]) -> Result<Self> {
        if samples.len() != self.levels.len() {
            return Err(invalid("samples", "one sample count per level required"));
        }
        if samples.contains(&0) {
            return Err(invalid("samples", "every level needs at least one sample"));
        }
        let levels = self
            .levels
            .iter()
            .zip(samples)
            .map(|(l, &m)| LevelSpec { samples: m, ..*l })
            .collect();
        Ok(Self { levels, ..self.clone() })
    }

    /// Multiplies every sample count by `scale`, rounding up with floor 1.
    pub fn scaled(&self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid("scale", format!("must be finite and > 0, got {scale}")));
        }
        let m: Vec<usize> = self.levels.iter().map(|l| ceil_count(l.samples as f64 * scale)).collect();
        self.with_samples(&m)
    }
}

pub(crate) fn ceil_count(v: f64) -> usize {
    let c = v.ceil();
    if c.is_finite() && c >= 1.0 {
        c as usize
    } else {
        1
    }
}

/// `ε_W = C_W h^{κ/γ}`
pub fn equilibrated_eps_w(h: f64, rates: &RateParams, cal: &Calibration) -> f64 {
    cal.c_w * h.powf(rates.kappa / rates.gamma)
}

/// `ε_l = C_l h^{2κc}`
pub fn equilibrated_eps_l(h: f64, rates: &RateParams, cal: &Calibration) -> f64 {
    cal.c_l * h.powf(2.0 * rates.kappa * rates.c)
}

/// Sample number before rounding: `C_M h_L^{-2κ}` for level 0 and
/// `C_M h_L^{-2κ} h_prev^{2κ} (ℓ+1)^{2(1+ξ)}` for `ℓ >= 1`, where `h_prev`
/// is the mesh size of level `ℓ - 1`.
pub fn equilibrated_sample_count(level: usize, h_finest: f64, h_prev: Option<f64>, rates: &RateParams, cal: &Calibration) -> f64 {
    let base = cal.c_m * h_finest.powf(-2.0 * rates.kappa);
    match (level, h_prev) {
        (0, _) | (_, None) => base,
        (l, Some(hp)) => base * hp.powf(2.0 * rates.kappa) * ((l + 1) as f64).powf(2.0 * (1.0 + rates.xi)),
    }
}

/// Level plan for the mesh sizes `hs` (level 0 first, strictly decreasing).
pub fn equilibrate(hs: &[f64], rates: &RateParams, cal: &Calibration) -> Result<LevelPlan> {
    rates.validate()?;
    if hs.is_empty() {
        return Err(invalid("h", "need at least one mesh size"));
    }
    if hs.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(invalid("h", "mesh sizes must be finite and > 0"));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("h", "mesh sizes must be strictly decreasing"));
    }
    let h_l = *hs.last().unwrap();
    let levels = hs
        .iter()
        .enumerate()
        .map(|(l, &h)| LevelSpec {
            h,
            eps_w: equilibrated_eps_w(h, rates, cal),
            eps_l: equilibrated_eps_l(h, rates, cal),
            samples: ceil_count(equilibrated_sample_count(l, h_l, l.checked_sub(1).map(|p| hs[p]), rates, cal)),
        })
        .collect();
    let mut plan = LevelPlan::new(levels, MeshMode::Uniform)?;
    plan.rates = Some(*rates);
    Ok(plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalSamples {
    pub samples: Vec<usize>,
    /// Values before rounding.
    pub raw: Vec<f64>,
    /// Set when every variance was zero and all counts fell back to 1.
    pub all_zero_variance: bool,
}

/// `M_ℓ = h_L^{-2} √VAR_ℓ h_ℓ Σ_i √VAR_i / h_i`, rounded up with floor 1.
pub fn optimal_samples(vars: &[f64], hs: &[f64]) -> Result<OptimalSamples> {
    if vars.len() != hs.len() || vars.is_empty() {
        return Err(invalid("VAR", "one variance per level required"));
    }
    if vars.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
        return Err(invalid("VAR", "variances must be finite and >= 0"));
    }
    if hs.windows(2).any(|w| w[1] > w[0]) || hs.iter().any(|&h| !(h > 0.0)) {
        return Err(invalid("h", "mesh sizes must be > 0 and decreasing"));
    }
    let h_l = *hs.last().unwrap();
    let sum: f64 = vars.iter().zip(hs).map(|(v, h)| v.sqrt() / h).sum();
    let raw: Vec<f64> = vars.iter().zip(hs).map(|(v, h)| h_l.powi(-2) * v.sqrt() * h * sum).collect();
    let all_zero = vars.iter().all(|&v| v == 0.0);
    Ok(OptimalSamples {
        samples: raw.iter().map(|&m| ceil_count(m)).collect(),
        raw,
        all_zero_variance: all_zero,
    })
}

/// Nested cell counts: level 0 gets `⌈extent/ε_0⌉` cells, every further
/// level the smallest multiple of the previous count with step `<= ε_ℓ`.
pub fn nested_cells(extent: f64, eps: &[f64]) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::with_capacity(eps.len());
    for &e in eps {
        let need = crate::grf::TensorGrid::cells_for_step(extent, e);
        let cells = match out.last() {
            None => need,
            Some(&prev) => prev * need.div_ceil(prev),
        };
        out.push(cells);
    }
    out
}

/// The mesh sizes `h_ℓ = h_1 ρ^{-(ℓ-1)}` for `ℓ = 1..=levels`.
pub fn geometric_mesh_sizes(h1: f64, ratio: f64, levels: usize) -> Vec<f64> {
    (0..levels).map(|k| h1 * ratio.powi(-(k as i32))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn poisson_rates() -> RateParams {
        RateParams { kappa: 1.0, gamma: 1.0, c: 1.5, xi: 0.1 }
    }

    #[test]
    fn equilibrated_accuracies() {
        let r = poisson_rates();
        let c = Calibration::default();
        assert!((equilibrated_eps_w(0.1, &r, &c) - 0.1).abs() < 1e-15);
        assert!((equilibrated_eps_l(0.1, &r, &c) - 1e-3).abs() < 1e-15);
    }

    #[test]
    fn equilibrated_sample_examples() {
        let r = poisson_rates();
        let c = Calibration::default();
        let (h0, h1) = (0.3, 0.3 / 1.7);
        // hand values: 1.7²/0.09, then times 0.09·2^2.2, then times h1²·3^2.2
        let m0 = 1.7f64.powi(2) / 0.09;
        let m1 = m0 * 0.09 * 2f64.powf(2.2);
        let m2 = m0 * h1 * h1 * 3f64.powf(2.2);
        let got = [
            equilibrated_sample_count(0, h1, None, &r, &c),
            equilibrated_sample_count(1, h1, Some(h0), &r, &c),
            equilibrated_sample_count(2, h1, Some(h1), &r, &c),
        ];
        for (g, e) in got.iter().zip([m0, m1, m2]) {
            assert!((g - e).abs() < 1e-12 * e, "{g} vs {e}");
        }
        assert!((m0 - 32.111).abs() < 1e-3 && (m1 - 13.279).abs() < 1e-3 && (m2 - 11.212).abs() < 1e-3);
        assert_eq!(got.map(ceil_count), [33, 14, 12]);
        let plan = equilibrate(&[h0, h1], &r, &c).unwrap();
        assert_eq!(plan.sample_counts(), vec![33, 14]);
    }

    #[test]
    fn equilibrate_rejects_bad_input() {
        let c = Calibration::default();
        let mut r = poisson_rates();
        assert!(equilibrate(&[0.3, 0.4], &r, &c).is_err());
        r.xi = 0.0;
        assert!(equilibrate(&[0.3, 0.2], &r, &c).is_err());
    }

    #[test]
    fn equilibrate_monotonicity_on_experiment_schedules() {
        let c = Calibration::default();
        for h1 in [0.3, 0.2] {
            let hs = geometric_mesh_sizes(h1, 1.7, 5);
            let plan = equilibrate(&hs, &poisson_rates(), &c).unwrap();
            for w in plan.levels.windows(2) {
                assert!(w[1].eps_w < w[0].eps_w && w[1].eps_l < w[0].eps_l);
            }
            for w in plan.levels[1..].windows(2) {
                assert!(w[1].samples <= w[0].samples, "{:?}", plan.sample_counts());
            }
        }
    }

    #[test]
    fn optimal_sample_example() {
        let hs = [0.3, 0.176_47];
        let o = optimal_samples(&[1.0, 0.01], &hs).unwrap();
        let sum = 1.0 / 0.3 + 0.1 / 0.176_47;
        let m1 = 0.176_47f64.powi(-2) * 0.3 * sum;
        let m2 = 0.176_47f64.powi(-2) * 0.1 * 0.176_47 * sum;
        assert!((sum - 3.9).abs() < 1e-4);
        assert!((o.raw[0] - m1).abs() < 1e-12 * m1 && (o.raw[1] - m2).abs() < 1e-12 * m2);
        assert_eq!(o.samples, vec![38, 3]);
    }

    #[test]
    fn optimal_sample_symmetry_and_homogeneity() {
        let o = optimal_samples(&[0.5, 0.5], &[0.1, 0.1]).unwrap();
        assert_eq!(o.samples[0], o.samples[1]);
        let a = optimal_samples(&[0.3, 0.02, 0.001], &[0.3, 0.2, 0.1]).unwrap();
        let b = optimal_samples(&[1.2, 0.08, 0.004], &[0.3, 0.2, 0.1]).unwrap();
        // both factors of the formula carry a square root of VAR
        for (x, y) in a.raw.iter().zip(&b.raw) {
            assert!((y - 4.0 * x).abs() < 1e-12 * y);
        }
        let z = optimal_samples(&[0.0, 0.0], &[0.2, 0.1]).unwrap();
        assert!(z.all_zero_variance);
        assert_eq!(z.samples, vec![1, 1]);
    }

    #[test]
    fn nesting() {
        let cells = nested_cells(1.0, &[0.3, 0.1, 0.04]);
        assert_eq!(cells, vec![4, 12, 36]);
        for w in cells.windows(2) {
            assert_eq!(w[1] % w[0], 0);
        }
        assert_eq!(nested_cells(1.0, &[0.25, 0.25]), vec![4, 4]);
    }

    #[test]
    fn scaling_rounds_up() {
        let plan = LevelPlan::new(vec![
            LevelSpec { h: 0.3, eps_w: 0.3, eps_l: 0.027, samples: 93 },
            LevelSpec { h: 0.2, eps_w: 0.2, eps_l: 0.008, samples: 3 },
        ], MeshMode::Uniform)
        .unwrap();
        assert_eq!(plan.scaled(0.05).unwrap().sample_counts(), vec![5, 1]);
    }

    #[test]
    fn strictness() {
        let l = LevelSpec { h: 0.3, eps_w: 0.3, eps_l: 0.027, samples: 2 };
        assert!(LevelPlan::new(vec![l, l], MeshMode::Uniform).is_err());
        assert!(LevelPlan::with_repeats(vec![l, l], MeshMode::Uniform).is_ok());
        assert!(LevelPlan::new(vec![LevelSpec { samples: 0, ..l }], MeshMode::Uniform).is_err());
    }
}
