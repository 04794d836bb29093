//! Exact low-dimensional polyhedral geometry.
//!
//! A [`Polyhedron`] is an axis-aligned box intersected with finitely many
//! halfspaces. Because the box is always present the set is bounded, so it is
//! a polytope whenever it is nonempty. Vertices are enumerated incrementally:
//! start from the box corners and clip by one halfspace at a time, creating a
//! new vertex on every edge that crosses the cutting hyperplane (the
//! double-description update with the combinatorial adjacency test). The
//! resulting [`Polytope`] carries both the vertex list and the constraints that
//! are tight somewhere on it, which is all the exact solvers need:
//!
//! * Euclidean projection is the closest feasible point among projections onto
//!   the affine hulls of independent subsets of tight constraints.
//! * A concave (or linear) objective attains its minimum at a vertex.

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dot, norm, solve};

/// Largest dimension for which vertex enumeration is offered.
pub const DEFAULT_VERTEX_DIM_CAP: usize = 4;
/// Two vertices closer than this (sup-norm, relative to coordinate magnitude)
/// are the same vertex.
pub const DEDUP_TOL: f64 = 1e-9;
/// Feasibility tolerance used by the solvers when accepting a point.
pub const FEASIBILITY_TOL: f64 = 1e-7;

/// Axis-aligned box `{u : lower <= u <= upper}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl AxisBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::InvalidInput("box must have dimension >= 1".into()));
        }
        for (k, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidInput(format!("box bound {k} is not finite")));
            }
            if lo > hi {
                return Err(Error::InvalidInput(format!(
                    "box coordinate {k}: lower {lo} > upper {hi}"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// The cube `[lo, hi]^dim`.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| 0.5 * (l + u))
            .collect()
    }

    pub fn widths(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| u - l).collect()
    }

    /// Euclidean diameter `‖upper − lower‖`.
    pub fn diameter(&self) -> f64 {
        norm(&self.widths())
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> Result<bool> {
        check_dim(self.dim(), u.len())?;
        Ok(u
            .iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(x, (lo, hi))| *x >= lo - tol && *x <= hi + tol))
    }

    pub fn clamp(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .map(|(x, (lo, hi))| x.clamp(*lo, *hi))
            .collect()
    }

    /// Cartesian product `self × other`.
    pub fn product(&self, other: &AxisBox) -> AxisBox {
        let mut lower = self.lower.clone();
        lower.extend_from_slice(&other.lower);
        let mut upper = self.upper.clone();
        upper.extend_from_slice(&other.upper);
        AxisBox { lower, upper }
    }
}

/// Diameter of a box.
pub fn diameter(b: &AxisBox) -> f64 {
    b.diameter()
}

/// Halfspace `{u : normal · u <= offset}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    normal: Vec<f64>,
    offset: f64,
}

impl Halfspace {
    pub fn new(normal: Vec<f64>, offset: f64) -> Result<Self> {
        if normal.iter().all(|v| *v == 0.0) {
            return Err(Error::InvalidInput("halfspace normal is the zero vector".into()));
        }
        if !offset.is_finite() || normal.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("halfspace has non-finite entries".into()));
        }
        Ok(Self { normal, offset })
    }

    pub fn normal(&self) -> &[f64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Signed distance past the boundary (positive means violated).
    pub fn violation(&self, u: &[f64]) -> f64 {
        (dot(&self.normal, u) - self.offset) / norm(&self.normal)
    }
}

/// Box ∩ halfspaces. May be empty; emptiness is detected, not forbidden.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    #[serde(rename = "box")]
    bbox: AxisBox,
    halfspaces: Vec<Halfspace>,
}

impl Polyhedron {
    pub fn new(bbox: AxisBox, halfspaces: Vec<Halfspace>) -> Result<Self> {
        for h in &halfspaces {
            check_dim(bbox.dim(), h.normal.len())?;
        }
        Ok(Self { bbox, halfspaces })
    }

    pub fn from_box(bbox: AxisBox) -> Self {
        Self { bbox, halfspaces: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.bbox.dim()
    }

    pub fn bounding_box(&self) -> &AxisBox {
        &self.bbox
    }

    pub fn halfspaces(&self) -> &[Halfspace] {
        &self.halfspaces
    }

    pub fn with_halfspace(mut self, h: Halfspace) -> Result<Self> {
        check_dim(self.dim(), h.normal.len())?;
        self.halfspaces.push(h);
        Ok(self)
    }

    /// Membership with additive tolerance on box bounds and on the
    /// (normalized) halfspace inequalities.
    pub fn contains(&self, u: &[f64], tol: f64) -> Result<bool> {
        if !self.bbox.contains(u, tol)? {
            return Ok(false);
        }
        Ok(self.halfspaces.iter().all(|h| h.violation(u) <= tol))
    }

    /// Vertex/facet description, subject to [`DEFAULT_VERTEX_DIM_CAP`].
    pub fn to_polytope(&self) -> Result<Polytope> {
        self.to_polytope_capped(DEFAULT_VERTEX_DIM_CAP)
    }

    pub fn to_polytope_capped(&self, cap: usize) -> Result<Polytope> {
        if self.dim() > cap {
            return Err(Error::UnsupportedDimension { dim: self.dim(), cap });
        }
        let mut poly = Polytope::from_box(&self.bbox);
        for h in &self.halfspaces {
            poly.clip(h.normal(), h.offset());
            if poly.is_empty() {
                break;
            }
        }
        Ok(poly)
    }

    /// All vertices, deduplicated; empty iff the polyhedron is empty.
    pub fn vertices(&self) -> Result<Vec<Vec<f64>>> {
        self.vertices_capped(DEFAULT_VERTEX_DIM_CAP)
    }

    pub fn vertices_capped(&self, cap: usize) -> Result<Vec<Vec<f64>>> {
        Ok(self.to_polytope_capped(cap)?.vertex_points())
    }

    /// Euclidean projection of `point`. `Ok(None)` signals an empty region.
    pub fn project(&self, point: &[f64]) -> Result<Option<Vec<f64>>> {
        check_dim(self.dim(), point.len())?;
        Ok(self.to_polytope()?.project(point))
    }
}

/// Unit-normal inequality `normal · u <= offset`.
#[derive(Clone, Debug, PartialEq)]
struct Constraint {
    normal: Vec<f64>,
    offset: f64,
}

impl Constraint {
    fn slack(&self, u: &[f64]) -> f64 {
        dot(&self.normal, u) - self.offset
    }

    fn tol(&self) -> f64 {
        DEDUP_TOL * (1.0 + self.offset.abs())
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Vertex {
    x: Vec<f64>,
    /// Sorted indices of constraints tight at `x`.
    active: Vec<usize>,
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    // both sorted
    let mut it = big.iter();
    'outer: for s in small {
        for b in it.by_ref() {
            if b == s {
                continue 'outer;
            }
            if b > s {
                return false;
            }
        }
        return false;
    }
    true
}

fn intersect_sorted(a: &[usize], b: &[usize]) -> Vec<usize> {
    let (mut i, mut j) = (0, 0);
    let mut out = Vec::new();
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out
}

/// A bounded polyhedron held in both vertex and inequality form.
#[derive(Clone, Debug, PartialEq)]
pub struct Polytope {
    dim: usize,
    constraints: Vec<Constraint>,
    vertices: Vec<Vertex>,
}

impl Polytope {
    pub fn from_box(b: &AxisBox) -> Self {
        let n = b.dim();
        let mut constraints = Vec::with_capacity(2 * n);
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = -1.0;
            constraints.push(Constraint { normal: e.clone(), offset: -b.lower[k] });
            e[k] = 1.0;
            constraints.push(Constraint { normal: e, offset: b.upper[k] });
        }
        let mut vertices = Vec::with_capacity(1 << n);
        for mask in 0..(1usize << n) {
            let x: Vec<f64> = (0..n)
                .map(|k| if mask >> k & 1 == 0 { b.lower[k] } else { b.upper[k] })
                .collect();
            vertices.push(Vertex { x, active: Vec::new() });
        }
        let mut poly = Polytope { dim: n, constraints, vertices };
        poly.dedup();
        poly.recompute_active(0..poly.vertices.len());
        poly
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn vertex_points(&self) -> Vec<Vec<f64>> {
        self.vertices.iter().map(|v| v.x.clone()).collect()
    }

    pub fn vertex_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.vertices.iter().map(|v| v.x.as_slice())
    }

    /// Intersects with `{u : normal · u <= offset}` in place.
    ///
    /// A numerically zero normal either leaves the set unchanged or empties
    /// it, depending on the sign of `offset`.
    pub fn clip(&mut self, normal: &[f64], offset: f64) {
        debug_assert_eq!(normal.len(), self.dim);
        if self.vertices.is_empty() {
            return;
        }
        let nn = norm(normal);
        let scale = normal.iter().fold(0.0_f64, |a, v| a.max(v.abs())) + offset.abs();
        if nn <= 1e-14 * scale.max(1e-300) || nn == 0.0 {
            if offset < -DEDUP_TOL * (1.0 + offset.abs()) {
                self.vertices.clear();
            }
            return;
        }
        let c = Constraint {
            normal: normal.iter().map(|v| v / nn).collect(),
            offset: offset / nn,
        };
        let tol = c.tol();
        let slack: Vec<f64> = self.vertices.iter().map(|v| c.slack(&v.x)).collect();
        let any_out = slack.iter().any(|s| *s > tol);
        let idx = self.constraints.len();
        if !any_out {
            // Redundant, possibly supporting: record tightness only.
            let mut touched = false;
            for (v, s) in self.vertices.iter_mut().zip(&slack) {
                if s.abs() <= tol {
                    v.active.push(idx);
                    touched = true;
                }
            }
            if touched {
                self.constraints.push(c);
            } else {
                // Strictly redundant constraints are dropped, keeping the
                // description small.
            }
            return;
        }
        if slack.iter().all(|s| *s > tol) {
            self.vertices.clear();
            self.constraints.push(c);
            return;
        }
        let need = self.dim.saturating_sub(1);
        let mut next: Vec<Vertex> = Vec::with_capacity(self.vertices.len() + 4);
        let mut fresh = Vec::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if slack[i] >= -tol {
                continue;
            }
            for (j, w) in self.vertices.iter().enumerate() {
                if slack[j] <= tol {
                    continue;
                }
                let common = intersect_sorted(&v.active, &w.active);
                if common.len() < need {
                    continue;
                }
                let blocked = self
                    .vertices
                    .iter()
                    .enumerate()
                    .any(|(k, x)| k != i && k != j && is_subset(&common, &x.active));
                if blocked {
                    continue;
                }
                let t = slack[i] / (slack[i] - slack[j]);
                let x: Vec<f64> = v.x.iter().zip(&w.x).map(|(a, b)| a + t * (b - a)).collect();
                fresh.push(x);
            }
        }
        for (v, s) in self.vertices.iter().zip(&slack) {
            if *s <= tol {
                let mut v = v.clone();
                if s.abs() <= tol {
                    v.active.push(idx);
                }
                next.push(v);
            }
        }
        self.constraints.push(c);
        let first_fresh = next.len();
        next.extend(fresh.into_iter().map(|x| Vertex { x, active: Vec::new() }));
        self.vertices = next;
        let n_total = self.vertices.len();
        self.recompute_active(first_fresh..n_total);
        self.dedup();
        self.prune_constraints();
    }

    fn recompute_active(&mut self, range: std::ops::Range<usize>) {
        for vi in range {
            let x = &self.vertices[vi].x;
            let active: Vec<usize> = self
                .constraints
                .iter()
                .enumerate()
                .filter(|(_, c)| c.slack(x).abs() <= c.tol())
                .map(|(k, _)| k)
                .collect();
            self.vertices[vi].active = active;
        }
    }

    fn dedup(&mut self) {
        let mut out: Vec<Vertex> = Vec::with_capacity(self.vertices.len());
        for v in self.vertices.drain(..) {
            let scale = 1.0 + v.x.iter().fold(0.0_f64, |a, c| a.max(c.abs()));
            if let Some(existing) = out.iter_mut().find(|e| {
                e.x.iter().zip(&v.x).all(|(a, b)| (a - b).abs() <= DEDUP_TOL * scale)
            }) {
                let mut merged = existing.active.clone();
                merged.extend_from_slice(&v.active);
                merged.sort_unstable();
                merged.dedup();
                existing.active = merged;
            } else {
                let mut v = v;
                v.active.sort_unstable();
                v.active.dedup();
                out.push(v);
            }
        }
        self.vertices = out;
    }

    /// Drops constraints that are no longer tight at any vertex and reindexes.
    fn prune_constraints(&mut self) {
        let mut used = vec![false; self.constraints.len()];
        for v in &self.vertices {
            for &a in &v.active {
                used[a] = true;
            }
        }
        if used.iter().all(|u| *u) {
            return;
        }
        let mut remap = vec![usize::MAX; self.constraints.len()];
        let mut kept = Vec::new();
        for (k, c) in self.constraints.drain(..).enumerate() {
            if used[k] {
                remap[k] = kept.len();
                kept.push(c);
            }
        }
        self.constraints = kept;
        for v in &mut self.vertices {
            for a in &mut v.active {
                *a = remap[*a];
            }
        }
    }

    /// Constraints tight at one or more vertices, as `(unit normal, offset)`.
    pub fn tight_constraints(&self) -> Vec<(Vec<f64>, f64)> {
        self.constraints.iter().map(|c| (c.normal.clone(), c.offset)).collect()
    }

    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        !self.is_empty() && self.constraints.iter().all(|c| c.slack(u) <= tol)
    }

    /// Componentwise bounds of the vertex set, `None` when empty.
    pub fn vertex_bounds(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let first = self.vertices.first()?;
        let mut lo = first.x.clone();
        let mut hi = first.x.clone();
        for v in &self.vertices[1..] {
            for k in 0..self.dim {
                lo[k] = lo[k].min(v.x[k]);
                hi[k] = hi[k].max(v.x[k]);
            }
        }
        Some((lo, hi))
    }

    /// Closest point to `point`, or `None` when empty.
    pub fn project(&self, point: &[f64]) -> Option<Vec<f64>> {
        if self.is_empty() {
            return None;
        }
        let tol = |c: &Constraint| 10.0 * c.tol();
        if self.constraints.iter().all(|c| c.slack(point) <= tol(c)) {
            return Some(point.to_vec());
        }
        let n = self.dim;
        let m = self.constraints.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut consider = |x: Vec<f64>| {
            if self.constraints.iter().all(|c| c.slack(&x) <= tol(c)) {
                let d = crate::linalg::dist_sq(&x, point);
                if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                    best = Some((d, x));
                }
            }
        };
        let mut subset = Vec::with_capacity(n);
        for size in 1..=n.min(m) {
            subsets(m, size, &mut subset, 0, &mut |s| {
                if let Some(x) = project_affine(&self.constraints, s, point) {
                    consider(x);
                }
            });
        }
        // Vertices are always candidates; they guard against numerically
        // singular subsets.
        for v in &self.vertices {
            consider(v.x.clone());
        }
        best.map(|(_, x)| x)
    }
}

fn subsets(m: usize, size: usize, cur: &mut Vec<usize>, start: usize, f: &mut dyn FnMut(&[usize])) {
    if cur.len() == size {
        f(cur);
        return;
    }
    for k in start..m {
        if m - k < size - cur.len() {
            break;
        }
        cur.push(k);
        subsets(m, size, cur, k + 1, f);
        cur.pop();
    }
}

/// Projection of `p` onto `{u : normal_k · u = offset_k, k in subset}`.
fn project_affine(cs: &[Constraint], subset: &[usize], p: &[f64]) -> Option<Vec<f64>> {
    let k = subset.len();
    let mut gram = vec![0.0; k * k];
    let mut rhs = vec![0.0; k];
    for (a, &ia) in subset.iter().enumerate() {
        rhs[a] = cs[ia].slack(p);
        for (b, &ib) in subset.iter().enumerate() {
            gram[a * k + b] = dot(&cs[ia].normal, &cs[ib].normal);
        }
    }
    let lambda = solve(gram, rhs)?;
    let mut x = p.to_vec();
    for (a, &ia) in subset.iter().enumerate() {
        crate::linalg::axpy(-lambda[a], &cs[ia].normal, &mut x);
    }
    Some(x)
}
