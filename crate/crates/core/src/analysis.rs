//! Regret metrics and numeric checks of the regret bounds.

use serde::{Deserialize, Serialize};

use crate::controller::{prop1_factor, EpisodeConfig, TraceRow};
use crate::error::{Error, Result};
use crate::linalg::dist_sq;
use crate::surrogate::{Dataset, SurrogateSpec};

/// Per-step regret of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSeries {
    pub rho: Vec<f64>,
    /// Estimation slack of each entry (zero when regret is exact).
    pub slack: Vec<f64>,
    #[serde(rename = "N")]
    pub n_init: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    /// `dim_z + dim_u`.
    pub d: usize,
}

impl RegretSeries {
    /// A run may stop early, so the series can be shorter than `T − N`.
    pub fn new(rho: Vec<f64>, slack: Vec<f64>, n_init: usize, horizon: usize, d: usize) -> Result<Self> {
        if horizon <= n_init {
            return Err(Error::InvalidInput(format!("need N < T, got N={n_init} T={horizon}")));
        }
        if rho.len() > horizon - n_init {
            return Err(Error::InvalidInput(format!("{} regret entries exceed T − N = {}", rho.len(), horizon - n_init)));
        }
        if slack.len() != rho.len() {
            return Err(Error::DimensionMismatch { expected: rho.len(), got: slack.len() });
        }
        if let Some((r, s)) = rho.iter().zip(&slack).find(|(r, s)| **r < -**s - 1e-9 || !r.is_finite()) {
            return Err(Error::InvalidInput(format!("regret {r} below its slack {s}")));
        }
        Ok(Self { rho, slack, n_init, horizon, d })
    }

    pub fn exact(rho: Vec<f64>, n_init: usize, horizon: usize, d: usize) -> Result<Self> {
        let slack = vec![0.0; rho.len()];
        Self::new(rho, slack, n_init, horizon, d)
    }
}

/// Mean per-step regret over the executed steps.
pub fn average_regret(rs: &RegretSeries) -> Result<f64> {
    if rs.rho.is_empty() {
        return Err(Error::InvalidInput("empty regret series".into()));
    }
    Ok(rs.rho.iter().sum::<f64>() / rs.rho.len() as f64)
}

pub fn cumulative_regret(rs: &RegretSeries) -> f64 {
    rs.rho.iter().sum()
}

/// Constants of the per-step and counting bounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub lipschitz_gradient: f64,
    pub alpha: f64,
    pub beta: f64,
    pub diam_zu: f64,
    pub grad_max: f64,
    pub d: usize,
    /// `L_C (1 + |α|/(α+β))`
    pub m0_prime: f64,
    /// `(diam · sqrt(M0' d))^d`
    pub m0: f64,
}

impl BoundConstants {
    /// `grad_max` defaults to `L_C · diam`.
    pub fn new(spec: &SurrogateSpec, diam_zu: f64, grad_max: Option<f64>, d: usize) -> Result<Self> {
        let (alpha, beta, lc) = (spec.alpha, spec.beta, spec.lipschitz_gradient);
        if alpha + beta <= 0.0 {
            return Err(Error::AntiObjective { sum: alpha + beta });
        }
        if !(diam_zu > 0.0) || d == 0 {
            return Err(Error::InvalidInput("diameter and dimension must be positive".into()));
        }
        let grad_max = grad_max.unwrap_or(lc * diam_zu);
        if !(grad_max > 0.0) {
            return Err(Error::InvalidInput("gradient bound must be positive".into()));
        }
        let m0_prime = lc * (1.0 + alpha.abs() / (alpha + beta));
        let m0 = (diam_zu * (m0_prime * d as f64).sqrt()).powi(d as i32);
        Ok(Self { lipschitz_gradient: lc, alpha, beta, diam_zu, grad_max, d, m0_prime, m0 })
    }
}

/// Number of points that forces a pair within squared distance `eps` inside
/// a set of diameter `diam` in dimension `d`.
pub fn volume_counting_threshold(diam: f64, eps: f64, d: usize) -> usize {
    (diam * (d as f64 / eps).sqrt()).powi(d as i32).ceil() as usize + 1
}

/// True iff some point lies within squared distance `eps` of an earlier one.
/// Points are expected to lie in a set of diameter `s_diam`.
pub fn check_volume_counting(points: &[Vec<f64>], s_diam: f64, eps: f64) -> bool {
    debug_assert!(points.iter().all(|p| points.iter().all(|q| dist_sq(p, q) <= s_diam * s_diam * (1.0 + 1e-9))));
    (1..points.len()).any(|t| points[..t].iter().any(|q| dist_sq(q, &points[t]) <= eps))
}

/// Counts steps with regret at least `delta` plus their slack and compares
/// with `M0 δ^{−d/2}`.
pub fn check_count_bound(rs: &RegretSeries, bc: &BoundConstants, delta: f64) -> bool {
    let count = rs.rho.iter().zip(&rs.slack).filter(|(r, s)| **r >= delta + **s).count();
    count as f64 <= bc.m0 * delta.powf(-(bc.d as f64) / 2.0)
}

/// Right-hand side of the series inequality.
pub fn series_lemma_bound(a: f64, mu: f64, t: f64) -> f64 {
    if mu > 1.0 {
        mu / (mu - 1.0) * a.powf(1.0 / mu) * t.powf(1.0 - 1.0 / mu)
    } else if t < a {
        t
    } else {
        a * ((t / a).ln() + 1.0)
    }
}

/// Checks `Σ_k n_k e^{−k} <= bound` (k from 1) after validating the
/// hypotheses `n_k >= 0`, `Σ n_k = T` and `n_k <= A e^{μk}`.
pub fn check_series_lemma(n: &[f64], a: f64, mu: f64, t: f64) -> Result<bool> {
    if !(a > 0.0) || !(mu >= 1.0) || !(t >= 0.0) {
        return Err(Error::Hypothesis(format!("need A > 0, mu >= 1, T >= 0; got A={a} mu={mu} T={t}")));
    }
    let total: f64 = n.iter().sum();
    if (total - t).abs() > 1e-9 * t.max(1.0) {
        return Err(Error::Hypothesis(format!("terms sum to {total}, expected {t}")));
    }
    for (i, nk) in n.iter().enumerate() {
        let k = (i + 1) as f64;
        if !(*nk >= 0.0) {
            return Err(Error::Hypothesis(format!("term {} is negative", i + 1)));
        }
        if *nk > a * (mu * k).exp() * (1.0 + 1e-12) {
            return Err(Error::Hypothesis(format!("term {} exceeds A e^(mu k)", i + 1)));
        }
    }
    let lhs: f64 = n.iter().enumerate().map(|(i, nk)| nk * (-((i + 1) as f64)).exp()).sum();
    let rhs = series_lemma_bound(a, mu, t);
    Ok(lhs <= rhs * (1.0 + 1e-12) + 1e-300)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveScale {
    /// Unit constants.
    Normalized,
    Constant(f64),
}

/// Worst-case average-regret rate `T ↦ T^{−2/d}` for `d >= 3` and
/// `log T / T + 1/T` for `d = 2`.
pub fn bound_curves(d: usize, ts: &[f64], scale: CurveScale) -> Result<Vec<(f64, f64)>> {
    if d < 2 {
        return Err(Error::InvalidInput(format!("bound curves need d >= 2, got {d}")));
    }
    let c = match scale {
        CurveScale::Normalized => 1.0,
        CurveScale::Constant(c) => c,
    };
    Ok(ts
        .iter()
        .map(|&t| {
            let v = if d == 2 { t.ln() / t + 1.0 / t } else { t.powf(-2.0 / d as f64) };
            (t, c * v)
        })
        .collect())
}

/// Log-spaced `δ` values in `[lo, hi]`.
pub fn delta_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n).map(|k| lo * (hi / lo).powf(k as f64 / (n - 1) as f64)).collect()
}

/// Certification summary of one stored run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub config_hash: String,
    pub steps: usize,
    pub regret_available: bool,
    pub regret_nonnegative: bool,
    /// `None` when `α <= 0 < α+β` does not hold.
    pub prop1_violations: Option<usize>,
    pub prop1_max_ratio: Option<f64>,
    pub cor2_ok: Option<bool>,
    pub cor2_deltas: usize,
    pub avg_regret: Option<f64>,
    pub cum_regret: Option<f64>,
    pub ok: bool,
}

/// Re-derives the per-step bound from the stored dataset and checks it, the
/// counting bound over `δ ∈ [1e−3, 1]`, and regret nonnegativity.
pub fn certify_run(cfg: &EpisodeConfig, rows: &[TraceRow], dataset: &Dataset, diam_zu: f64) -> Result<CertificationReport> {
    let n0 = cfg.n_init;
    if dataset.len() < n0 + rows.len() {
        return Err(Error::InvalidInput(format!(
            "dataset has {} samples, trace needs {}",
            dataset.len(),
            n0 + rows.len()
        )));
    }
    let d = dataset.dim();
    let regret: Option<Vec<f64>> = rows.iter().map(|r| r.regret).collect();
    let slack: Vec<f64> = rows.iter().map(|r| r.regret_slack.unwrap_or(0.0)).collect();
    let mut report = CertificationReport {
        config_hash: cfg.hash(),
        steps: rows.len(),
        regret_available: regret.is_some(),
        regret_nonnegative: true,
        prop1_violations: None,
        prop1_max_ratio: None,
        cor2_ok: None,
        cor2_deltas: 0,
        avg_regret: None,
        cum_regret: None,
        ok: true,
    };
    let Some(rho) = regret else {
        return Ok(report);
    };
    report.regret_nonnegative = rho.iter().zip(&slack).all(|(r, s)| *r >= -s - 1e-9);
    let samples = dataset.samples();
    if let Some(factor) = prop1_factor(&cfg.spec) {
        let mut violations = 0;
        let mut ratio: f64 = 0.0;
        for (k, r) in rho.iter().enumerate() {
            let idx = n0 + k;
            let s = &samples[idx].q;
            let nearest = samples[..idx].iter().map(|x| dist_sq(&x.q, s)).fold(f64::INFINITY, f64::min);
            let bound = factor * nearest + slack[k];
            if *r > bound + 1e-9 {
                violations += 1;
            }
            if bound > 0.0 {
                ratio = ratio.max(r / bound);
            }
        }
        report.prop1_violations = Some(violations);
        report.prop1_max_ratio = Some(ratio);
        let bc = BoundConstants::new(&cfg.spec, diam_zu, None, d)?;
        let series = RegretSeries::new(rho.clone(), slack.clone(), n0, cfg.horizon, d)?;
        let deltas = delta_grid(1e-3, 1.0, 31);
        report.cor2_deltas = deltas.len();
        report.cor2_ok = Some(deltas.iter().all(|&delta| check_count_bound(&series, &bc, delta)));
    }
    if !rho.is_empty() {
        let cum: f64 = rho.iter().sum();
        report.cum_regret = Some(cum);
        report.avg_regret = Some(cum / rho.len() as f64);
    }
    report.ok = report.regret_nonnegative && report.prop1_violations.unwrap_or(0) == 0 && report.cor2_ok.unwrap_or(true);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_regret_examples() {
        assert_eq!(average_regret(&RegretSeries::exact(vec![0.0; 3], 0, 3, 2).unwrap()).unwrap(), 0.0);
        let r = average_regret(&RegretSeries::exact(vec![1.0, 0.5, 0.25], 0, 3, 2).unwrap()).unwrap();
        assert!((r - 1.75 / 3.0).abs() < 1e-15);
        assert_eq!(average_regret(&RegretSeries::exact(vec![0.7], 4, 5, 2).unwrap()).unwrap(), 0.7);
        assert!(average_regret(&RegretSeries::exact(vec![], 0, 3, 2).unwrap()).is_err());
        assert!(RegretSeries::exact(vec![-1.0], 0, 3, 2).is_err());
    }

    #[test]
    fn volume_counting_examples() {
        assert_eq!(volume_counting_threshold(1.0, 0.01, 1), 11);
        assert!(check_volume_counting(&[vec![0.0], vec![1.0]], 1.0, 4.0));
        let even: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64 / 9.0]).collect();
        assert!(!check_volume_counting(&even, 1.0, 0.01));
        let eleven: Vec<Vec<f64>> = (0..11).map(|k| vec![k as f64 / 10.0]).collect();
        assert!(check_volume_counting(&eleven, 1.0, 0.01 + 1e-12));
    }

    #[test]
    fn count_bound_examples() {
        let spec = SurrogateSpec::new(0.0, 1.0, 10.0).unwrap();
        let bc = BoundConstants::new(&spec, 2.0, None, 2).unwrap();
        assert_eq!(bc.m0_prime, 10.0);
        assert!((bc.m0 - 80.0).abs() < 1e-9);
        let zeros = RegretSeries::exact(vec![0.0; 10], 0, 10, 2).unwrap();
        assert!(check_count_bound(&zeros, &bc, 0.1));
        let big = RegretSeries::exact(vec![5.0; 10], 0, 10, 2).unwrap();
        assert!(check_count_bound(&big, &bc, 1e12));
        let tight = BoundConstants { m0: 1.0, ..bc };
        assert!(!check_count_bound(&big, &tight, 1.0));
    }

    #[test]
    fn series_lemma_examples() {
        let t = 5.0;
        for mu in [1.0f64, 1.5, 2.0, 3.0] {
            let a = t * (-mu).exp() * 1.01;
            assert!(check_series_lemma(&[t], a, mu, t).unwrap());
        }
        assert!(check_series_lemma(&[0.0, 0.0], 1.0, 2.0, 0.0).unwrap());
        assert!(matches!(check_series_lemma(&[1.0, -1.0], 1.0, 2.0, 0.0), Err(Error::Hypothesis(_))));
        assert!(matches!(check_series_lemma(&[100.0], 1.0, 2.0, 100.0), Err(Error::Hypothesis(_))));
        assert!(matches!(check_series_lemma(&[1.0], 1.0, 2.0, 2.0), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn curve_examples() {
        let c = bound_curves(4, &[16.0], CurveScale::Normalized).unwrap();
        assert!((c[0].1 - 0.25).abs() < 1e-15);
        let e = std::f64::consts::E;
        let c = bound_curves(2, &[e], CurveScale::Normalized).unwrap();
        assert!((c[0].1 - 2.0 / e).abs() < 1e-15);
        assert!(bound_curves(1, &[2.0], CurveScale::Normalized).is_err());
        let ts: Vec<f64> = (2..200).map(f64::from).collect();
        let lo = bound_curves(3, &ts, CurveScale::Normalized).unwrap();
        let hi = bound_curves(7, &ts, CurveScale::Normalized).unwrap();
        assert!(lo.iter().zip(&hi).all(|(a, b)| b.1 > a.1));
        assert!(lo.windows(2).all(|w| w[1].1 < w[0].1));
    }
}
