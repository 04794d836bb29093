//! Data-driven bounds on a function with Lipschitz-continuous gradient.
//!
//! Every first-order sample `(q_i, C(q_i), ∇C(q_i))` yields a quadratic upper
//! and lower model of `C`; the pointwise min (max) over samples is the
//! majorant (minorant). The surrogate minimized by the controller is
//! `m = α·majorant + β·minorant`.
//!
//! Writing `P_i(s) = (L/2)|s|² + a_i·s + c_i` for the majorant pieces and
//! `M_j(s) = −(L/2)|s|² + b_j·s + e_j` for the minorant pieces gives the
//! difference-of-convex split
//! `m(s) = L(α−β)/2 |s|² + α·min_i(a_i·s + c_i) + β·max_j(b_j·s + e_j)`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist_sq, dot};

/// One datum `(q, C(q), ∇C(q))` in context-control space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstOrderSample {
    pub q: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
}

impl FirstOrderSample {
    pub fn new(q: Vec<f64>, value: f64, gradient: Vec<f64>) -> Result<Self> {
        check_dim(q.len(), gradient.len())?;
        if !value.is_finite() || gradient.iter().chain(&q).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("sample has non-finite entries".into()));
        }
        Ok(Self { q, value, gradient })
    }

    pub fn dim(&self) -> usize {
        self.q.len()
    }

    /// First-order model `C(q) + ∇C(q)·(s − q)`.
    pub fn linear(&self, s: &[f64]) -> f64 {
        self.value
            + self
                .gradient
                .iter()
                .zip(s.iter().zip(&self.q))
                .map(|(g, (x, q))| g * (x - q))
                .sum::<f64>()
    }
}

/// Ordered first-order samples sharing the split `dim_z + dim_u`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<FirstOrderSample>,
    dim_z: usize,
    dim_u: usize,
}

impl Dataset {
    pub fn new(dim_z: usize, dim_u: usize) -> Self {
        Self { samples: Vec::new(), dim_z, dim_u }
    }

    pub fn from_samples(dim_z: usize, dim_u: usize, samples: Vec<FirstOrderSample>) -> Result<Self> {
        let mut d = Self::new(dim_z, dim_u);
        for s in samples {
            d.push(s)?;
        }
        Ok(d)
    }

    pub fn dim_z(&self) -> usize {
        self.dim_z
    }

    pub fn dim_u(&self) -> usize {
        self.dim_u
    }

    pub fn dim(&self) -> usize {
        self.dim_z + self.dim_u
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[FirstOrderSample] {
        &self.samples
    }

    pub fn push(&mut self, sample: FirstOrderSample) -> Result<()> {
        check_dim(self.dim(), sample.dim())?;
        self.samples.push(sample);
        Ok(())
    }

    /// Copy-on-append: a new version with one more sample.
    pub fn with_sample(&self, sample: FirstOrderSample) -> Result<Self> {
        let mut next = self.clone();
        next.push(sample)?;
        Ok(next)
    }

    /// Squared distance from `s` to the closest sample.
    pub fn min_dist_sq(&self, s: &[f64]) -> Result<f64> {
        self.ensure_query(s)?;
        Ok(self
            .samples
            .iter()
            .map(|x| dist_sq(&x.q, s))
            .fold(f64::INFINITY, f64::min))
    }

    fn ensure_query(&self, s: &[f64]) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        check_dim(self.dim(), s.len())
    }

    /// CSV with header `q_0..q_{d-1},value,grad_0..grad_{d-1}`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.dim();
        let mut wr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (0..d).map(|k| format!("q_{k}")).collect();
        header.push("value".into());
        header.extend((0..d).map(|k| format!("grad_{k}")));
        wr.write_record(&header)?;
        for s in &self.samples {
            let row: Vec<String> = s
                .q
                .iter()
                .chain(std::iter::once(&s.value))
                .chain(&s.gradient)
                .map(|v| format!("{v:?}"))
                .collect();
            wr.write_record(&row)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads the CSV written by [`Dataset::write_csv`]; the context/control
    /// split is not stored in the file and must be supplied.
    pub fn read_csv<R: Read>(r: R, dim_z: usize) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.len() < 3 || header.len() % 2 == 0 {
            return Err(Error::InvalidInput(format!("bad dataset header of {} columns", header.len())));
        }
        let d = (header.len() - 1) / 2;
        if dim_z > d {
            return Err(Error::InvalidInput(format!("dim_z {dim_z} exceeds sample dimension {d}")));
        }
        let mut out = Self::new(dim_z, d - dim_z);
        for rec in rd.records() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::InvalidInput(format!("bad number in dataset: {e}")))?;
            out.push(FirstOrderSample::new(vals[..d].to_vec(), vals[d], vals[d + 1..].to_vec())?)?;
        }
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MonotoneDirection {
    Increasing,
    Decreasing,
}

/// High-level knowledge about the unknown function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SideInfo {
    ConvexInAllArgs,
    Monotone { coordinate: usize, direction: MonotoneDirection },
    LowerBound(f64),
    UpperBound(f64),
}

/// Parameters of the surrogate `α·C⁺ + β·C⁻`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSpec {
    pub alpha: f64,
    pub beta: f64,
    pub lipschitz_gradient: f64,
    #[serde(default)]
    pub side_info: Vec<SideInfo>,
    /// Off-axis tolerance when comparing points under a monotone flag.
    #[serde(default)]
    pub monotone_slab: f64,
}

impl SurrogateSpec {
    pub fn new(alpha: f64, beta: f64, lipschitz_gradient: f64) -> Result<Self> {
        if !(lipschitz_gradient > 0.0) || !lipschitz_gradient.is_finite() {
            return Err(Error::InvalidInput(format!(
                "Lipschitz gradient constant must be positive, got {lipschitz_gradient}"
            )));
        }
        if !alpha.is_finite() || !beta.is_finite() {
            return Err(Error::InvalidInput("alpha and beta must be finite".into()));
        }
        if alpha == 0.0 && beta == 0.0 {
            return Err(Error::InvalidInput("alpha and beta cannot both be zero".into()));
        }
        Ok(Self { alpha, beta, lipschitz_gradient, side_info: Vec::new(), monotone_slab: 0.0 })
    }

    pub fn with_side_info(mut self, info: SideInfo) -> Self {
        self.side_info.push(info);
        self
    }

    /// Same surrogate argmin with `(α, β)` scaled onto the unit circle.
    pub fn normalized(&self) -> Self {
        let r = self.alpha.hypot(self.beta);
        Self { alpha: self.alpha / r, beta: self.beta / r, ..self.clone() }
    }

    pub fn has_convex_flag(&self) -> bool {
        self.side_info.iter().any(|s| matches!(s, SideInfo::ConvexInAllArgs))
    }
}

fn majorant_piece(sample: &FirstOrderSample, lc: f64, s: &[f64]) -> f64 {
    sample.linear(s) + 0.5 * lc * dist_sq(s, &sample.q)
}

fn minorant_piece(sample: &FirstOrderSample, lc: f64, s: &[f64]) -> f64 {
    sample.linear(s) - 0.5 * lc * dist_sq(s, &sample.q)
}

/// Index and value of the active majorant piece (smallest index on ties).
pub fn majorant_argmin(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<(usize, f64)> {
    d.ensure_query(s)?;
    let mut best = (0, f64::INFINITY);
    for (i, x) in d.samples.iter().enumerate() {
        let v = majorant_piece(x, spec.lipschitz_gradient, s);
        if v < best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

/// Index and value of the active minorant piece (smallest index on ties).
pub fn minorant_argmax(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<(usize, f64)> {
    d.ensure_query(s)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, x) in d.samples.iter().enumerate() {
        let v = minorant_piece(x, spec.lipschitz_gradient, s);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best)
}

/// `C⁺(s) = min_i C(q_i) + ∇C(q_i)·(s − q_i) + (L/2)|s − q_i|²`.
pub fn majorant(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<f64> {
    majorant_argmin(d, spec, s).map(|(_, v)| v)
}

/// `C⁻(s) = max_i C(q_i) + ∇C(q_i)·(s − q_i) − (L/2)|s − q_i|²`.
pub fn minorant(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<f64> {
    minorant_argmax(d, spec, s).map(|(_, v)| v)
}

pub fn gap(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<f64> {
    Ok(majorant(d, spec, s)? - minorant(d, spec, s)?)
}

/// The surrogate `α·C⁺(s) + β·C⁻(s)`.
pub fn m_eval(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<f64> {
    let mut out = 0.0;
    if spec.alpha != 0.0 {
        out += spec.alpha * majorant(d, spec, s)?;
    }
    if spec.beta != 0.0 {
        out += spec.beta * minorant(d, spec, s)?;
    }
    if spec.alpha == 0.0 && spec.beta == 0.0 {
        d.ensure_query(s)?;
    }
    Ok(out)
}

/// Tangent-plane minorant `max_i C(q_i) + ∇C(q_i)·(s − q_i)`, valid when the
/// function is convex.
pub fn convex_minorant(d: &Dataset, s: &[f64]) -> Result<f64> {
    d.ensure_query(s)?;
    Ok(d.samples.iter().map(|x| x.linear(s)).fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearPiece {
    pub slope: Vec<f64>,
    pub intercept: f64,
}

impl LinearPiece {
    pub fn eval(&self, s: &[f64]) -> f64 {
        dot(&self.slope, s) + self.intercept
    }
}

/// `m(s) = quad_coeff·(s·s) + α·min_i f2_i(s) + β·max_j f3_j(s)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DCDecomposition {
    pub alpha: f64,
    pub beta: f64,
    pub quad_coeff: f64,
    pub f2_pieces: Vec<LinearPiece>,
    pub f3_pieces: Vec<LinearPiece>,
}

impl DCDecomposition {
    pub fn eval(&self, s: &[f64]) -> f64 {
        let mut out = self.quad_coeff * dot(s, s);
        if self.alpha != 0.0 {
            out += self.alpha * self.f2_pieces.iter().map(|p| p.eval(s)).fold(f64::INFINITY, f64::min);
        }
        if self.beta != 0.0 {
            out += self.beta
                * self.f3_pieces.iter().map(|p| p.eval(s)).fold(f64::NEG_INFINITY, f64::max);
        }
        out
    }
}

/// Majorant piece `i` minus its quadratic part: `a_i·s + c_i`.
pub(crate) fn upper_linear_piece(x: &FirstOrderSample, lc: f64) -> LinearPiece {
    let slope: Vec<f64> = x.gradient.iter().zip(&x.q).map(|(g, q)| g - lc * q).collect();
    let intercept = x.value - dot(&x.gradient, &x.q) + 0.5 * lc * dot(&x.q, &x.q);
    LinearPiece { slope, intercept }
}

/// Minorant piece `j` minus its quadratic part: `b_j·s + e_j`.
pub(crate) fn lower_linear_piece(x: &FirstOrderSample, lc: f64) -> LinearPiece {
    let slope: Vec<f64> = x.gradient.iter().zip(&x.q).map(|(g, q)| g + lc * q).collect();
    let intercept = x.value - dot(&x.gradient, &x.q) - 0.5 * lc * dot(&x.q, &x.q);
    LinearPiece { slope, intercept }
}

pub fn dc_decompose(d: &Dataset, spec: &SurrogateSpec) -> Result<DCDecomposition> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let lc = spec.lipschitz_gradient;
    Ok(DCDecomposition {
        alpha: spec.alpha,
        beta: spec.beta,
        quad_coeff: 0.5 * lc * (spec.alpha - spec.beta),
        f2_pieces: d.samples.iter().map(|x| upper_linear_piece(x, lc)).collect(),
        f3_pieces: d.samples.iter().map(|x| lower_linear_piece(x, lc)).collect(),
    })
}

fn comparable(spec: &SurrogateSpec, coord: usize, q: &[f64], s: &[f64]) -> bool {
    q.iter()
        .zip(s)
        .enumerate()
        .all(|(k, (a, b))| k == coord || (a - b).abs() <= spec.monotone_slab)
}

/// Bounds tightened by the side information carried in `spec`.
///
/// The lower bound is the largest of the minorant, the tangent-plane minorant
/// (convex flag), a stated floor, and, for each monotone coordinate, the
/// values of samples that dominate `s` in the direction of decrease. The
/// upper bound mirrors this with the majorant, a stated ceiling, and samples
/// that `s` dominates.
pub fn tighten_with_side_info(d: &Dataset, spec: &SurrogateSpec, s: &[f64]) -> Result<(f64, f64)> {
    let mut lower = minorant(d, spec, s)?;
    let mut upper = majorant(d, spec, s)?;
    for info in &spec.side_info {
        match info {
            SideInfo::ConvexInAllArgs => lower = lower.max(convex_minorant(d, s)?),
            SideInfo::LowerBound(v) => lower = lower.max(*v),
            SideInfo::UpperBound(v) => upper = upper.min(*v),
            SideInfo::Monotone { coordinate, direction } => {
                let k = *coordinate;
                if k >= s.len() {
                    return Err(Error::InvalidInput(format!("monotone coordinate {k} out of range")));
                }
                for x in &d.samples {
                    if !comparable(spec, k, &x.q, s) {
                        continue;
                    }
                    let (caps, floors) = match direction {
                        MonotoneDirection::Decreasing => (x.q[k] <= s[k], x.q[k] >= s[k]),
                        MonotoneDirection::Increasing => (x.q[k] >= s[k], x.q[k] <= s[k]),
                    };
                    if caps {
                        upper = upper.min(x.value);
                    }
                    if floors {
                        lower = lower.max(x.value);
                    }
                }
            }
        }
    }
    if lower > upper + 1e-9 * (1.0 + lower.abs().max(upper.abs())) {
        return Err(Error::InconsistentSideInfo { lower, upper });
    }
    Ok((lower, upper))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square_data(points: &[f64]) -> Dataset {
        let samples = points
            .iter()
            .map(|&q| FirstOrderSample::new(vec![q], q * q, vec![2.0 * q]).unwrap())
            .collect();
        Dataset::from_samples(0, 1, samples).unwrap()
    }

    fn spec(alpha: f64, beta: f64) -> SurrogateSpec {
        SurrogateSpec::new(alpha, beta, 2.0).unwrap()
    }

    #[test]
    fn majorant_examples() {
        let d = square_data(&[1.0]);
        assert_eq!(majorant(&d, &spec(1.0, 0.0), &[0.0]).unwrap(), 0.0);
        assert_eq!(majorant(&d, &spec(1.0, 0.0), &[1.0]).unwrap(), 1.0);
        // both pieces give 1 at s = 1; with a tight constant the majorant is s² itself
        let d2 = square_data(&[0.0, 2.0]);
        assert_eq!(majorant(&d2, &spec(1.0, 0.0), &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn minorant_and_gap_examples() {
        let d = square_data(&[1.0]);
        let sp = spec(1.0, 0.0);
        assert_eq!(minorant(&d, &sp, &[0.0]).unwrap(), -2.0);
        assert_eq!(minorant(&d, &sp, &[1.0]).unwrap(), 1.0);
        assert_eq!(gap(&d, &sp, &[0.0]).unwrap(), 2.0);
        assert_eq!(gap(&d, &sp, &[1.0]).unwrap(), 0.0);
        // Equality case of the gap bound: L·dist² = 2·1.
        assert!(gap(&d, &sp, &[0.0]).unwrap() <= 2.0 * d.min_dist_sq(&[0.0]).unwrap());
    }

    #[test]
    fn surrogate_examples() {
        let d = square_data(&[1.0]);
        for s in [-3.0, -0.5, 0.0, 0.7, 2.0] {
            let m = m_eval(&d, &spec(0.5, 0.5), &[s]).unwrap();
            assert!((m - (2.0 * s - 1.0)).abs() < 1e-12);
            assert_eq!(m_eval(&d, &spec(1.0, 0.0), &[s]).unwrap(), majorant(&d, &spec(1.0, 0.0), &[s]).unwrap());
            assert_eq!(m_eval(&d, &spec(0.0, 1.0), &[s]).unwrap(), minorant(&d, &spec(0.0, 1.0), &[s]).unwrap());
        }
    }

    #[test]
    fn dc_examples() {
        let d = square_data(&[1.0, -0.5]);
        assert_eq!(dc_decompose(&d, &spec(0.5, 0.5)).unwrap().quad_coeff, 0.0);
        assert_eq!(dc_decompose(&d, &spec(1.0, 0.0)).unwrap().quad_coeff, 1.0);
    }

    #[test]
    fn convex_minorant_examples() {
        let d = square_data(&[-1.0, 1.0]);
        assert_eq!(convex_minorant(&d, &[0.0]).unwrap(), -1.0);
        assert_eq!(convex_minorant(&d, &[1.0]).unwrap(), 1.0);
    }

    #[test]
    fn empty_dataset_is_refused() {
        let d = Dataset::new(0, 1);
        assert!(matches!(majorant(&d, &spec(1.0, 0.0), &[0.0]), Err(Error::EmptyDataset)));
        assert!(matches!(dc_decompose(&d, &spec(1.0, 0.0)), Err(Error::EmptyDataset)));
        assert!(matches!(convex_minorant(&d, &[0.0]), Err(Error::EmptyDataset)));
    }

    #[test]
    fn side_info_identity_and_clipping() {
        let d = square_data(&[1.0]);
        let sp = spec(1.0, 0.0);
        assert_eq!(tighten_with_side_info(&d, &sp, &[0.0]).unwrap(), (-2.0, 0.0));
        let floored = sp.clone().with_side_info(SideInfo::LowerBound(0.0));
        assert_eq!(tighten_with_side_info(&d, &floored, &[0.0]).unwrap().0, 0.0);
    }

    #[test]
    fn inconsistent_side_info_is_an_error() {
        let d = square_data(&[1.0]);
        let sp = spec(1.0, 0.0).with_side_info(SideInfo::LowerBound(5.0));
        assert!(matches!(
            tighten_with_side_info(&d, &sp, &[1.0]),
            Err(Error::InconsistentSideInfo { .. })
        ));
    }

    #[test]
    fn monotone_rule() {
        // Decreasing function sampled at 0 (value 3) and 2 (value 1).
        let samples = vec![
            FirstOrderSample::new(vec![0.0], 3.0, vec![-1.0]).unwrap(),
            FirstOrderSample::new(vec![2.0], 1.0, vec![-1.0]).unwrap(),
        ];
        let d = Dataset::from_samples(0, 1, samples).unwrap();
        let sp = SurrogateSpec::new(1.0, 0.0, 100.0).unwrap().with_side_info(SideInfo::Monotone {
            coordinate: 0,
            direction: MonotoneDirection::Decreasing,
        });
        let (lo, hi) = tighten_with_side_info(&d, &sp, &[1.0]).unwrap();
        assert_eq!((lo, hi), (1.0, 3.0));
    }

    #[test]
    fn csv_round_trip() {
        let d = Dataset::from_samples(
            1,
            1,
            vec![
                FirstOrderSample::new(vec![0.1, 1.0 / 3.0], std::f64::consts::PI, vec![1e-300, -2.5]).unwrap(),
                FirstOrderSample::new(vec![-7.0, 2.0], 0.0, vec![0.0, 1.0]).unwrap(),
            ],
        )
        .unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("q_0,q_1,value,grad_0,grad_1\n"));
        assert_eq!(Dataset::read_csv(buf.as_slice(), 1).unwrap(), d);
    }
}
