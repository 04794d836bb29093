//! Exact minimization of the surrogate over the control set.
//!
//! With the context fixed, the control set splits into piece-regions: on the
//! region where majorant piece `i` is the minimum and minorant piece `j` is the
//! maximum, the surrogate is the single quadratic
//! `curvature·|u|² + slope·u + intercept` with `curvature = L(α−β)/2`. Piece
//! comparisons are linear in `u` (the quadratic terms cancel), so every region
//! is a polytope. Each region is then solved exactly:
//!
//! * `curvature > 0`: Euclidean projection of the unconstrained minimizer,
//! * `curvature <= 0`: best vertex (concave or linear objective).
//!
//! The global minimizer is the best region minimizer, ties resolved toward the
//! lexicographically smallest control.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, lex_cmp};
use crate::polyhedral::{AxisBox, Halfspace, Polyhedron, Polytope};
use crate::surrogate::{lower_linear_piece, upper_linear_piece, Dataset, SurrogateSpec};

/// Values within `TIE_TOL·max(1, |v|)` of the minimum count as ties.
pub const TIE_TOL: f64 = 1e-12;
/// Default number of grid points `grid_minimize` may visit.
pub const DEFAULT_GRID_BUDGET: u128 = 10_000_000;

/// Shape of the per-step program as a function of the sign pattern of `(α, β)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConvexityCase {
    /// `α > 0 >= β`: minimum of at most t² convex quadratic programs.
    ConvexQuadPiecesTSq,
    /// `α > β >= 0`: at most t convex quadratic programs.
    ConvexQuadPiecesT,
    /// `α = β`: at most t linear programs.
    LinearPieces,
    /// `β > α >= 0`: a concave quadratic program.
    SingleConcave,
    /// `β > 0 >= α`: at most t concave quadratic programs.
    ConcavePiecesT,
}

impl ConvexityCase {
    /// Sign of the per-region curvature `L(α−β)/2`.
    pub fn curvature_sign(self) -> std::cmp::Ordering {
        use std::cmp::Ordering::*;
        match self {
            ConvexityCase::ConvexQuadPiecesTSq | ConvexityCase::ConvexQuadPiecesT => Greater,
            ConvexityCase::LinearPieces => Equal,
            ConvexityCase::SingleConcave | ConvexityCase::ConcavePiecesT => Less,
        }
    }
}

/// Classifies `(α, β)`. Pairs with `α + β < 0` amount to maximizing a bound on
/// the cost and are rejected.
pub fn classify(alpha: f64, beta: f64) -> Result<ConvexityCase> {
    if !alpha.is_finite() || !beta.is_finite() {
        return Err(Error::InvalidInput("alpha and beta must be finite".into()));
    }
    if alpha == 0.0 && beta == 0.0 {
        return Err(Error::InvalidInput("alpha and beta cannot both be zero".into()));
    }
    if alpha + beta < 0.0 {
        return Err(Error::AntiObjective { sum: alpha + beta });
    }
    Ok(if alpha > 0.0 && beta <= 0.0 {
        ConvexityCase::ConvexQuadPiecesTSq
    } else if beta > 0.0 && alpha <= 0.0 {
        ConvexityCase::ConcavePiecesT
    } else if alpha == beta {
        ConvexityCase::LinearPieces
    } else if alpha > beta {
        ConvexityCase::ConvexQuadPiecesT
    } else {
        ConvexityCase::SingleConcave
    })
}

/// Which pieces are active on a region. `None` when that side of the
/// surrogate has zero weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionSource {
    pub upper: Option<usize>,
    pub lower: Option<usize>,
}

/// One piece-region and the quadratic the surrogate equals on it.
#[derive(Clone, Debug)]
pub struct RegionQuadratic {
    pub region: Polyhedron,
    pub curvature: f64,
    pub slope: Vec<f64>,
    pub intercept: f64,
    pub source: RegionSource,
    geometry: Polytope,
}

impl RegionQuadratic {
    /// Builds a region from an explicit polyhedron.
    pub fn new(
        region: Polyhedron,
        curvature: f64,
        slope: Vec<f64>,
        intercept: f64,
        source: RegionSource,
    ) -> Result<Self> {
        check_dim(region.dim(), slope.len())?;
        let geometry = region.to_polytope()?;
        Ok(Self { region, curvature, slope, intercept, source, geometry })
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.curvature * dot(u, u) + dot(&self.slope, u) + self.intercept
    }

    pub fn is_empty(&self) -> bool {
        self.geometry.is_empty()
    }

    pub fn vertices(&self) -> Vec<Vec<f64>> {
        self.geometry.vertex_points()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        self.geometry.contains(u, tol)
    }
}

/// Picks the lexicographically smallest candidate among those within the tie
/// tolerance of the smallest value. Independent of candidate order.
fn select_min(cands: impl IntoIterator<Item = (Vec<f64>, f64)>) -> Option<(Vec<f64>, f64)> {
    let cands: Vec<(Vec<f64>, f64)> = cands.into_iter().collect();
    let vmin = cands.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    if !vmin.is_finite() {
        return cands.into_iter().min_by(|a, b| a.1.total_cmp(&b.1).then(lex_cmp(&a.0, &b.0)));
    }
    let cut = vmin + TIE_TOL * vmin.abs().max(1.0);
    cands
        .into_iter()
        .filter(|c| c.1 <= cut)
        .min_by(|a, b| lex_cmp(&a.0, &b.0).then(a.1.total_cmp(&b.1)))
}

/// Minimizes the region's quadratic over the region. `Ok(None)` for an empty
/// region.
pub fn solve_region(rq: &RegionQuadratic) -> Result<Option<(Vec<f64>, f64)>> {
    if rq.geometry.is_empty() {
        return Ok(None);
    }
    if rq.curvature > 0.0 {
        let target: Vec<f64> = rq.slope.iter().map(|g| -g / (2.0 * rq.curvature)).collect();
        Ok(rq.geometry.project(&target).map(|u| {
            let v = rq.eval(&u);
            (u, v)
        }))
    } else {
        Ok(select_min(rq.geometry.vertex_iter().map(|u| (u.to_vec(), rq.eval(u)))))
    }
}

/// Piece `k` restricted to the fixed context: `slope·u + offset`.
struct FoldedPiece {
    slope: Vec<f64>,
    offset: f64,
}

fn fold_pieces(
    d: &Dataset,
    z: &[f64],
    make: fn(&crate::surrogate::FirstOrderSample, f64) -> crate::surrogate::LinearPiece,
    lc: f64,
) -> Vec<FoldedPiece> {
    let dz = d.dim_z();
    d.samples()
        .iter()
        .map(|x| {
            let p = make(x, lc);
            FoldedPiece { slope: p.slope[dz..].to_vec(), offset: p.intercept + dot(&p.slope[..dz], z) }
        })
        .collect()
}

/// Cells of the lower envelope (`minimize = true`) or upper envelope of a
/// family of affine functions over `base`. Identical pieces are owned by the
/// smallest index.
fn envelope_cells(base: &Polytope, pieces: &[FoldedPiece], minimize: bool) -> Vec<Option<Polytope>> {
    let sign = if minimize { 1.0 } else { -1.0 };
    pieces
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let mut cell = base.clone();
            for (k, pk) in pieces.iter().enumerate() {
                if k == i {
                    continue;
                }
                // minimize: pi(u) <= pk(u)  <=>  (s_i − s_k)·u <= o_k − o_i
                let normal: Vec<f64> =
                    pi.slope.iter().zip(&pk.slope).map(|(a, b)| sign * (a - b)).collect();
                let offset = sign * (pk.offset - pi.offset);
                if normal.iter().all(|v| *v == 0.0) && offset.abs() <= 1e-12 * (1.0 + pi.offset.abs()) && k < i {
                    return None;
                }
                cell.clip(&normal, offset);
                if cell.is_empty() {
                    return None;
                }
            }
            Some(cell)
        })
        .collect()
}

fn boxes_overlap(a: &(Vec<f64>, Vec<f64>), b: &(Vec<f64>, Vec<f64>)) -> bool {
    a.0.iter()
        .zip(&a.1)
        .zip(b.0.iter().zip(&b.1))
        .all(|((alo, ahi), (blo, bhi))| {
            let tol = 1e-9 * (1.0 + alo.abs().max(ahi.abs()));
            *alo <= bhi + tol && *blo <= ahi + tol
        })
}

fn to_polyhedron(bbox: &AxisBox, geometry: &Polytope) -> Polyhedron {
    let halfspaces = geometry
        .tight_constraints()
        .into_iter()
        .filter_map(|(n, o)| Halfspace::new(n, o).ok())
        .collect();
    Polyhedron::new(bbox.clone(), halfspaces).expect("dimensions agree by construction")
}

/// A lower-envelope cell with its vertex bounding box.
type BoxedCell = (Polytope, (Vec<f64>, Vec<f64>));

/// All nonempty piece-regions together with the number of `(i, j)` pairs
/// examined.
pub fn enumerate_regions_counted(
    d: &Dataset,
    spec: &SurrogateSpec,
    z: &[f64],
    control_set: &Polyhedron,
) -> Result<(Vec<RegionQuadratic>, usize)> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(d.dim_z(), z.len())?;
    check_dim(d.dim_u(), control_set.dim())?;
    let lc = spec.lipschitz_gradient;
    let (alpha, beta) = (spec.alpha, spec.beta);
    let curvature = 0.5 * lc * (alpha - beta);
    let zz = dot(z, z);
    let base = control_set.to_polytope()?;
    let t = d.len();
    let du = d.dim_u();

    let upper = fold_pieces(d, z, upper_linear_piece, lc);
    let lower = fold_pieces(d, z, lower_linear_piece, lc);
    let upper_cells = if alpha != 0.0 { envelope_cells(&base, &upper, true) } else { Vec::new() };
    let lower_cells = if beta != 0.0 { envelope_cells(&base, &lower, false) } else { Vec::new() };

    let mut regions = Vec::new();
    let mut push = |geometry: Polytope, i: Option<usize>, j: Option<usize>| {
        let mut slope = vec![0.0; du];
        let mut intercept = curvature * zz;
        if let Some(i) = i {
            crate::linalg::axpy(alpha, &upper[i].slope, &mut slope);
            intercept += alpha * upper[i].offset;
        }
        if let Some(j) = j {
            crate::linalg::axpy(beta, &lower[j].slope, &mut slope);
            intercept += beta * lower[j].offset;
        }
        regions.push(RegionQuadratic {
            region: to_polyhedron(control_set.bounding_box(), &geometry),
            curvature,
            slope,
            intercept,
            source: RegionSource { upper: i, lower: j },
            geometry,
        });
    };

    let examined;
    match (alpha != 0.0, beta != 0.0) {
        (true, false) => {
            examined = t;
            for (i, c) in upper_cells.into_iter().enumerate() {
                if let Some(c) = c {
                    push(c, Some(i), None);
                }
            }
        }
        (false, true) => {
            examined = t;
            for (j, c) in lower_cells.into_iter().enumerate() {
                if let Some(c) = c {
                    push(c, None, Some(j));
                }
            }
        }
        _ => {
            examined = t * t;
            let lower_info: Vec<Option<BoxedCell>> = lower_cells
                .into_iter()
                .map(|c| c.map(|c| {
                    let b = c.vertex_bounds().expect("nonempty cell");
                    (c, b)
                }))
                .collect();
            for (i, ci) in upper_cells.into_iter().enumerate() {
                let Some(ci) = ci else { continue };
                let bi = ci.vertex_bounds().expect("nonempty cell");
                for (j, cj) in lower_info.iter().enumerate() {
                    let Some((cj, bj)) = cj else { continue };
                    if !boxes_overlap(&bi, bj) {
                        continue;
                    }
                    let mut cell = ci.clone();
                    for (n, o) in cj.tight_constraints() {
                        cell.clip(&n, o);
                        if cell.is_empty() {
                            break;
                        }
                    }
                    if !cell.is_empty() {
                        push(cell, Some(i), Some(j));
                    }
                }
            }
        }
    }
    Ok((regions, examined))
}

/// All nonempty piece-regions of the surrogate at context `z` over the
/// control set.
pub fn enumerate_regions(
    d: &Dataset,
    spec: &SurrogateSpec,
    z: &[f64],
    control_set: &Polyhedron,
) -> Result<Vec<RegionQuadratic>> {
    enumerate_regions_counted(d, spec, z, control_set).map(|(r, _)| r)
}

/// Result of one exact surrogate minimization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub minimizer: Vec<f64>,
    pub value: f64,
    pub case: ConvexityCase,
    pub regions_examined: usize,
    pub regions_nonempty: usize,
    /// Distinct majorant pieces among nonempty regions.
    pub upper_pieces_used: usize,
    /// Wall-clock seconds.
    pub solve_time: f64,
}

/// Global minimizer of `u ↦ m(z, u)` over the control set.
pub fn minimize_surrogate(
    d: &Dataset,
    spec: &SurrogateSpec,
    z: &[f64],
    control_set: &Polyhedron,
) -> Result<SolveReport> {
    let start = Instant::now();
    let case = classify(spec.alpha, spec.beta)?;
    let (regions, examined) = enumerate_regions_counted(d, spec, z, control_set)?;
    let mut cands = Vec::with_capacity(regions.len());
    for rq in &regions {
        if let Some(c) = solve_region(rq)? {
            cands.push(c);
        }
    }
    let mut upper_used: Vec<usize> = regions.iter().filter_map(|r| r.source.upper).collect();
    upper_used.sort_unstable();
    upper_used.dedup();
    let (minimizer, value) = select_min(cands).ok_or_else(|| {
        Error::InvalidInput("control set is empty; no feasible control".into())
    })?;
    Ok(SolveReport {
        minimizer,
        value,
        case,
        regions_examined: examined,
        regions_nonempty: regions.len(),
        upper_pieces_used: upper_used.len(),
        solve_time: start.elapsed().as_secs_f64(),
    })
}

/// Grid coordinates along one axis: `lower + k·h`, with `upper` appended
/// when the spacing does not land on it.
fn axis_points(lo: f64, hi: f64, h: f64) -> Vec<f64> {
    let width = hi - lo;
    let ratio = width / h;
    let n = (ratio + 1e-9).floor() as usize;
    let mut pts: Vec<f64> = (0..=n).map(|k| lo + k as f64 * h).collect();
    if (ratio - n as f64).abs() <= 1e-9 {
        *pts.last_mut().unwrap() = hi;
    } else {
        pts.push(hi);
    }
    pts
}

/// Exhaustive minimization of `f` over grid points of the control set.
///
/// `spacing` holds one entry per coordinate, or a single entry broadcast to
/// all of them. Ties follow the same rule as the exact solver.
pub fn grid_minimize<F>(f: F, set: &Polyhedron, spacing: &[f64]) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    grid_minimize_with_budget(f, set, spacing, DEFAULT_GRID_BUDGET)
}

pub fn grid_minimize_with_budget<F>(
    mut f: F,
    set: &Polyhedron,
    spacing: &[f64],
    budget: u128,
) -> Result<(Vec<f64>, f64)>
where
    F: FnMut(&[f64]) -> f64,
{
    let n = set.dim();
    if n > crate::polyhedral::DEFAULT_VERTEX_DIM_CAP {
        return Err(Error::UnsupportedDimension { dim: n, cap: crate::polyhedral::DEFAULT_VERTEX_DIM_CAP });
    }
    let h: Vec<f64> = match spacing.len() {
        1 => vec![spacing[0]; n],
        k if k == n => spacing.to_vec(),
        k => return Err(Error::DimensionMismatch { expected: n, got: k }),
    };
    if h.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput("grid spacing must be positive".into()));
    }
    let b = set.bounding_box();
    // Width-based count first so absurd spacings fail before allocating.
    let mut points: u128 = 1;
    for k in 0..n {
        let count = ((b.upper()[k] - b.lower()[k]) / h[k]).floor() as u128 + 2;
        points = points.saturating_mul(count);
    }
    if points > budget.saturating_mul(2) {
        return Err(Error::GridBudget { points, budget });
    }
    let axes: Vec<Vec<f64>> = (0..n).map(|k| axis_points(b.lower()[k], b.upper()[k], h[k])).collect();
    let total: u128 = axes.iter().map(|a| a.len() as u128).product();
    if total > budget {
        return Err(Error::GridBudget { points: total, budget });
    }
    let mut idx = vec![0usize; n];
    let mut u: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    // Iteration is lexicographic (first coordinate most significant), so the
    // first visited point within the tie band is the lexicographic minimum.
    let mut values: Vec<(f64, usize)> = Vec::new();
    let mut ordinal = 0usize;
    let mut flat: Vec<Vec<usize>> = Vec::new();
    let has_halfspaces = !set.halfspaces().is_empty();
    loop {
        let feasible = !has_halfspaces || set.halfspaces().iter().all(|hs| hs.violation(&u) <= 1e-9);
        if feasible {
            let v = f(&u);
            values.push((v, ordinal));
            flat.push(idx.clone());
        }
        ordinal += 1;
        // odometer, last coordinate fastest
        let mut k = n;
        loop {
            if k == 0 {
                let vmin = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
                if values.is_empty() {
                    return Err(Error::InvalidInput("no feasible grid point".into()));
                }
                let cut = vmin + TIE_TOL * vmin.abs().max(1.0);
                let pos = values.iter().position(|v| v.0 <= cut).unwrap_or(0);
                let best = &flat[pos];
                let u: Vec<f64> = best.iter().enumerate().map(|(k, &i)| axes[k][i]).collect();
                return Ok((u, values[pos].0));
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                u[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            u[k] = axes[k][0];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{m_eval, FirstOrderSample};

    fn interval() -> Polyhedron {
        Polyhedron::from_box(AxisBox::new(vec![-1.0], vec![1.0]).unwrap())
    }

    fn origin_data() -> Dataset {
        Dataset::from_samples(1, 1, vec![FirstOrderSample::new(vec![0.0, 0.0], 0.0, vec![0.0, 0.0]).unwrap()])
            .unwrap()
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(0.5, 0.5).unwrap(), ConvexityCase::LinearPieces);
        assert_eq!(classify(1.0, -0.5).unwrap(), ConvexityCase::ConvexQuadPiecesTSq);
        assert_eq!(classify(0.0, 1.0).unwrap(), ConvexityCase::ConcavePiecesT);
        assert_eq!(classify(1.0, 0.3).unwrap(), ConvexityCase::ConvexQuadPiecesT);
        assert_eq!(classify(0.3, 1.0).unwrap(), ConvexityCase::SingleConcave);
        assert_eq!(classify(-0.5, 1.0).unwrap(), ConvexityCase::ConcavePiecesT);
        assert_eq!(classify(1.0, 0.0).unwrap(), ConvexityCase::ConvexQuadPiecesTSq);
        assert!(matches!(classify(1.0, -2.0), Err(Error::AntiObjective { .. })));
        assert!(classify(0.0, 0.0).is_err());
    }

    #[test]
    fn single_sample_gives_one_region() {
        let spec = SurrogateSpec::new(1.0, -0.5, 2.0).unwrap();
        let regions = enumerate_regions(&origin_data(), &spec, &[0.0], &interval()).unwrap();
        assert_eq!(regions.len(), 1);
        let mut v = regions[0].vertices();
        v.sort_by(|a, b| lex_cmp(a, b));
        assert_eq!(v, vec![vec![-1.0], vec![1.0]]);
    }

    #[test]
    fn minimize_examples() {
        let d = origin_data();
        let u = interval();
        let r = minimize_surrogate(&d, &SurrogateSpec::new(0.0, 1.0, 2.0).unwrap(), &[0.0], &u).unwrap();
        assert_eq!((r.minimizer.clone(), r.value), (vec![-1.0], -1.0));
        let r = minimize_surrogate(&d, &SurrogateSpec::new(1.0, 0.0, 2.0).unwrap(), &[0.0], &u).unwrap();
        assert_eq!((r.minimizer.clone(), r.value), (vec![0.0], 0.0));
        let r = minimize_surrogate(&d, &SurrogateSpec::new(0.5, 0.5, 2.0).unwrap(), &[0.0], &u).unwrap();
        assert_eq!((r.minimizer.clone(), r.value), (vec![-1.0], 0.0));
    }

    #[test]
    fn solve_region_examples() {
        let sq = Polyhedron::from_box(AxisBox::cube(2, -1.0, 1.0).unwrap());
        let src = RegionSource { upper: Some(0), lower: None };
        let rq = RegionQuadratic::new(sq, 1.0, vec![-2.0, 0.0], 0.5, src).unwrap();
        let (u, v) = solve_region(&rq).unwrap().unwrap();
        assert_eq!(u, vec![1.0, 0.0]);
        assert_eq!(v, -1.0 + 0.5);

        let rq = RegionQuadratic::new(interval(), -1.0, vec![0.0], 0.0, src).unwrap();
        assert_eq!(solve_region(&rq).unwrap().unwrap(), (vec![-1.0], -1.0));

        let empty = interval().with_halfspace(Halfspace::new(vec![1.0], -2.0).unwrap()).unwrap();
        let rq = RegionQuadratic::new(empty, 1.0, vec![0.0], 0.0, src).unwrap();
        assert_eq!(solve_region(&rq).unwrap(), None);
    }

    #[test]
    fn two_samples_in_one_dimension() {
        let d = Dataset::from_samples(
            0,
            1,
            vec![
                FirstOrderSample::new(vec![-0.5], 0.25, vec![-1.0]).unwrap(),
                FirstOrderSample::new(vec![0.5], 0.25, vec![1.0]).unwrap(),
            ],
        )
        .unwrap();
        let spec = SurrogateSpec::new(1.0, -0.5, 2.0).unwrap();
        let regions = enumerate_regions(&d, &spec, &[], &interval()).unwrap();
        assert!(regions.len() <= 4);
        for rq in &regions {
            assert_eq!(rq.region.dim(), 1);
            for u in rq.vertices() {
                let direct = m_eval(&d, &spec, &u).unwrap();
                assert!((direct - rq.eval(&u)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn grid_examples() {
        let (u, v) = grid_minimize(|u| u[0] * u[0], &interval(), &[0.5]).unwrap();
        assert_eq!((u, v), (vec![0.0], 0.0));
        let (u, v) = grid_minimize(|u| -u[0] * u[0], &interval(), &[0.5]).unwrap();
        assert_eq!((u, v), (vec![-1.0], -1.0));
        assert!(matches!(
            grid_minimize(|u| u[0], &interval(), &[1e-8]),
            Err(Error::GridBudget { .. })
        ));
        assert!(grid_minimize(|u| u[0], &interval(), &[0.0]).is_err());
    }

    #[test]
    fn grid_includes_upper_endpoint() {
        assert_eq!(axis_points(0.0, 1.0, 0.3).last().copied(), Some(1.0));
        assert_eq!(axis_points(0.0, 1.0, 0.25).len(), 5);
    }
}
