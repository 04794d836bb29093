//! Ground-truth simulators and the first-order cost oracle.
//!
//! The oracle composes the one-step cost as `C(z, u) = c(F(Φ⁻¹(z), u))` and
//! differentiates it in `(z, u)` either analytically or by finite differences.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{dist_sq, dot, norm, sub};
use crate::polyhedral::{AxisBox, Polyhedron};

/// Relative step of the finite-difference gradient.
pub const FD_STEP: f64 = 1e-5;

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.sin().atan2(theta.cos());
    if w <= -PI {
        PI
    } else {
        w
    }
}

/// Map from states to contexts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextMap {
    /// `z = x`.
    Identity { dim: usize },
    /// `(p_x, p_y, θ) ↦ (p_x, p_y, sin θ, cos θ)`.
    PlanarHeading,
}

impl ContextMap {
    pub fn dim_z(&self) -> usize {
        match self {
            ContextMap::Identity { dim } => *dim,
            ContextMap::PlanarHeading => 4,
        }
    }

    pub fn dim_x(&self) -> usize {
        match self {
            ContextMap::Identity { dim } => *dim,
            ContextMap::PlanarHeading => 3,
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ContextMap::Identity { .. } => x.to_vec(),
            ContextMap::PlanarHeading => vec![x[0], x[1], x[2].sin(), x[2].cos()],
        }
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        match self {
            ContextMap::Identity { .. } => z.to_vec(),
            ContextMap::PlanarHeading => vec![z[0], z[1], wrap_angle(z[2].atan2(z[3]))],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Unicycle,
    Aircraft,
    Lq,
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EnvKind::Unicycle => "unicycle",
            EnvKind::Aircraft => "aircraft",
            EnvKind::Lq => "lq",
        })
    }
}

/// A simulated plant with a known one-step cost.
pub trait Plant: Send + Sync + fmt::Debug {
    fn kind(&self) -> EnvKind;
    fn context_map(&self) -> &ContextMap;
    fn sampling_time(&self) -> f64;
    fn control_set(&self) -> &Polyhedron;
    /// Declared state set; the simulator clips into it.
    fn state_box(&self) -> &AxisBox;
    /// Box containing the image of the state set under the context map.
    fn context_box(&self) -> &AxisBox;
    /// Box the seeding controller draws from.
    fn seeding_box(&self) -> &AxisBox;
    /// One sampling period of the true dynamics, without clipping.
    fn flow(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>>;
    /// Stage cost of the successor state (and the applied control).
    fn stage_cost(&self, x_next: &[f64], u: &[f64]) -> f64;
    /// Exact gradient of `C` over `(z, u)` when available.
    fn cost_gradient(&self, _z: &[f64], _u: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn dim_x(&self) -> usize {
        self.context_map().dim_x()
    }
    fn dim_z(&self) -> usize {
        self.context_map().dim_z()
    }
    fn dim_u(&self) -> usize {
        self.control_set().dim()
    }
    fn context(&self, x: &[f64]) -> Vec<f64> {
        self.context_map().forward(x)
    }
}

/// `C(z, u)` evaluated through the true dynamics.
pub fn composed_cost(env: &dyn Plant, z: &[f64], u: &[f64]) -> Result<f64> {
    let x = env.context_map().inverse(z);
    let next = env.flow(&x, u)?;
    Ok(env.stage_cost(&next, u))
}

/// Gradient of `C` over `(z, u)` by central differences; falls back to a
/// one-sided difference when a perturbed context leaves the context box.
/// Returns the gradient and whether any coordinate used a one-sided step.
pub fn fd_gradient(env: &dyn Plant, z: &[f64], u: &[f64]) -> Result<(Vec<f64>, bool)> {
    let dz = z.len();
    let mut s: Vec<f64> = z.iter().chain(u).copied().collect();
    let eval = |s: &[f64]| composed_cost(env, &s[..dz], &s[dz..]);
    let mut grad = vec![0.0; s.len()];
    let mut one_sided = false;
    let zbox = env.context_box();
    for k in 0..s.len() {
        let orig = s[k];
        let h = FD_STEP * (1.0 + orig.abs());
        let fits = |v: f64| k >= dz || (v >= zbox.lower()[k] && v <= zbox.upper()[k]);
        let (plus_ok, minus_ok) = (fits(orig + h), fits(orig - h));
        grad[k] = if plus_ok && minus_ok {
            s[k] = orig + h;
            let fp = eval(&s)?;
            s[k] = orig - h;
            let fm = eval(&s)?;
            (fp - fm) / (2.0 * h)
        } else {
            one_sided = true;
            let c0 = eval(&s)?;
            if plus_ok || !minus_ok {
                s[k] = orig + h;
                (eval(&s)? - c0) / h
            } else {
                s[k] = orig - h;
                (c0 - eval(&s)?) / h
            }
        };
        s[k] = orig;
    }
    if one_sided {
        log::debug!("one-sided finite differences at context {z:?}");
    }
    Ok((grad, one_sided))
}

/// First-order feedback for one executed step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub next_state: Vec<f64>,
    pub cost: f64,
    pub cost_gradient: Vec<f64>,
    /// The requested control was outside the control set and was projected.
    pub control_clipped: bool,
    /// The successor state left the state box and was clipped.
    pub state_clipped: bool,
    pub one_sided_fd: bool,
    /// The control actually applied.
    pub applied_control: Vec<f64>,
}

/// Executes `u` from state `x` and returns cost and gradient information.
pub fn oracle_query(env: &dyn Plant, x: &[f64], u: &[f64]) -> Result<OracleResponse> {
    check_dim(env.dim_x(), x.len())?;
    check_dim(env.dim_u(), u.len())?;
    let set = env.control_set();
    let (u, control_clipped) = if set.contains(u, 1e-12)? {
        (u.to_vec(), false)
    } else {
        let p = set
            .project(u)?
            .ok_or_else(|| Error::InvalidInput("control set is empty".into()))?;
        log::warn!("control {u:?} outside the control set, clipped to {p:?}");
        (p, true)
    };
    let raw = env.flow(x, &u)?;
    let next_state = env.state_box().clamp(&raw);
    let state_clipped = next_state != raw;
    if state_clipped {
        log::warn!("state {raw:?} left the state box, clipped to {next_state:?}");
    }
    let cost = env.stage_cost(&next_state, &u);
    let z = env.context(x);
    let (cost_gradient, one_sided_fd) = match env.cost_gradient(&z, &u) {
        Some(g) => (g, false),
        None => fd_gradient(env, &z, &u)?,
    };
    if !cost.is_finite() || cost_gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite oracle output at state {x:?}")));
    }
    Ok(OracleResponse {
        next_state,
        cost,
        cost_gradient,
        control_clipped,
        state_clipped,
        one_sided_fd,
        applied_control: u,
    })
}

/// `sin(x)/x`, continuous at 0.
fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// Exact zero-order-hold step of the unicycle. The control is not clipped.
pub fn unicycle_flow(x: &[f64], u: &[f64], ts: f64) -> Vec<f64> {
    let (v, w) = (u[0], u[1]);
    let half = 0.5 * w * ts;
    // sin(θ+a) − sin θ = 2 cos(θ + a/2) sin(a/2), same for cos; stable as ω → 0
    let chord = v * ts * sinc(half);
    let mid = x[2] + half;
    vec![x[0] + chord * mid.cos(), x[1] + chord * mid.sin(), wrap_angle(x[2] + w * ts)]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UnicycleParams {
    pub state_box: AxisBox,
    pub seeding_box: AxisBox,
}

impl Default for UnicycleParams {
    fn default() -> Self {
        Self {
            state_box: AxisBox::new(vec![-10.0, -10.0, -PI], vec![10.0, 10.0, PI]).unwrap(),
            seeding_box: AxisBox::new(vec![-4.0, -PI], vec![0.0, PI]).unwrap(),
        }
    }
}

/// Unicycle with context `(p_x, p_y, sin θ, cos θ)` and cost `p_x² + p_y²`.
#[derive(Clone, Debug)]
pub struct Unicycle {
    ts: f64,
    control: Polyhedron,
    params: UnicycleParams,
    context_box: AxisBox,
    map: ContextMap,
}

impl Unicycle {
    pub fn default_control_box() -> AxisBox {
        AxisBox::new(vec![-4.0, -PI], vec![4.0, PI]).unwrap()
    }

    pub fn new(ts: f64, control: AxisBox, params: UnicycleParams) -> Result<Self> {
        check_dim(2, control.dim())?;
        check_dim(3, params.state_box.dim())?;
        check_dim(2, params.seeding_box.dim())?;
        let sb = &params.state_box;
        let context_box = AxisBox::new(
            vec![sb.lower()[0], sb.lower()[1], -1.0, -1.0],
            vec![sb.upper()[0], sb.upper()[1], 1.0, 1.0],
        )?;
        Ok(Self { ts, control: Polyhedron::from_box(control), params, context_box, map: ContextMap::PlanarHeading })
    }

    /// Clips the control into the control box, then steps.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let b = self.control.bounding_box();
        let uc = b.clamp(u);
        if uc != u {
            log::warn!("unicycle control {u:?} clipped to {uc:?}");
        }
        unicycle_flow(x, &uc, self.ts)
    }
}

impl Default for Unicycle {
    fn default() -> Self {
        Self::new(0.1, Self::default_control_box(), UnicycleParams::default()).unwrap()
    }
}

impl Plant for Unicycle {
    fn kind(&self) -> EnvKind {
        EnvKind::Unicycle
    }
    fn context_map(&self) -> &ContextMap {
        &self.map
    }
    fn sampling_time(&self) -> f64 {
        self.ts
    }
    fn control_set(&self) -> &Polyhedron {
        &self.control
    }
    fn state_box(&self) -> &AxisBox {
        &self.params.state_box
    }
    fn context_box(&self) -> &AxisBox {
        &self.context_box
    }
    fn seeding_box(&self) -> &AxisBox {
        &self.params.seeding_box
    }
    fn flow(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(unicycle_flow(x, u, self.ts))
    }
    fn stage_cost(&self, x_next: &[f64], _u: &[f64]) -> f64 {
        x_next[0] * x_next[0] + x_next[1] * x_next[1]
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum AircraftCost {
    /// `h² + γ²` of the successor state.
    #[default]
    #[serde(rename = "h2_gamma2")]
    AltitudeGamma,
    /// `h²` of the successor state plus the squared applied angle of attack.
    #[serde(rename = "h2_alpha2")]
    AltitudeAoa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AircraftParams {
    /// kg
    pub mass: f64,
    pub gravity: f64,
    /// N
    pub max_thrust: f64,
    /// m/s
    pub stall_speed: f64,
    pub cost_variant: AircraftCost,
    pub rk4_substeps: usize,
    pub state_box: AxisBox,
}

impl Default for AircraftParams {
    fn default() -> Self {
        Self {
            mass: 54_900.0,
            gravity: 9.81,
            max_thrust: 1.6e5,
            stall_speed: 57.75,
            cost_variant: AircraftCost::default(),
            rk4_substeps: 1,
            state_box: AxisBox::new(vec![0.0, -PI / 2.0, -50.0], vec![250.0, PI / 2.0, 150.0]).unwrap(),
        }
    }
}

/// Lift in newtons at angle of attack `alpha` (rad) and airspeed `v` (m/s).
pub fn lift(alpha: f64, v: f64) -> f64 {
    68.6 * (1.25 + 4.2 * alpha) * v * v
}

/// Drag in newtons.
pub fn drag(alpha: f64, v: f64) -> f64 {
    let cl = 1.25 + 4.2 * alpha;
    (2.7 + 3.08 * cl * cl) * v * v
}

/// Longitudinal point-mass aircraft, state `(V, γ, h)`, control
/// `(thrust fraction, angle of attack)`.
#[derive(Clone, Debug)]
pub struct Aircraft {
    ts: f64,
    damaged: bool,
    control: Polyhedron,
    params: AircraftParams,
    map: ContextMap,
}

impl Aircraft {
    pub fn default_control_box() -> AxisBox {
        let a = 10f64.to_radians();
        AxisBox::new(vec![0.1, -a], vec![0.3, a]).unwrap()
    }

    pub fn initial_state(&self) -> Vec<f64> {
        vec![2.0 * self.params.stall_speed, 0.0, 50.0]
    }

    pub fn new(ts: f64, control: AxisBox, damaged: bool, params: AircraftParams) -> Result<Self> {
        check_dim(2, control.dim())?;
        check_dim(3, params.state_box.dim())?;
        if params.mass <= 0.0 || params.rk4_substeps == 0 {
            return Err(Error::InvalidInput("aircraft mass and substeps must be positive".into()));
        }
        Ok(Self { ts, damaged, control: Polyhedron::from_box(control), params, map: ContextMap::Identity { dim: 3 } })
    }

    pub fn params(&self) -> &AircraftParams {
        &self.params
    }

    fn derivative(&self, x: &[f64], u: &[f64]) -> Result<[f64; 3]> {
        let (v, gamma) = (x[0], x[1]);
        if !(v > 0.0) {
            return Err(Error::Stall { speed: v });
        }
        let p = &self.params;
        let thrust = u[0] * p.max_thrust;
        let a = u[1];
        let m = p.mass;
        let mut vdot = (thrust * a.cos() - drag(a, v) - m * p.gravity * gamma.sin()) / m;
        let mut gdot = (thrust * a.sin() + lift(a, v) - m * p.gravity * gamma.cos()) / (m * v);
        if self.damaged {
            vdot += thrust * a.sin() / (2.0 * m);
            gdot += thrust * a.cos() / (2.0 * m * v);
        }
        Ok([vdot, gdot, v * gamma.sin()])
    }

    /// Clips the control into the control box, then integrates one period.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let uc = self.control.bounding_box().clamp(u);
        if uc != u {
            log::warn!("aircraft control {u:?} clipped to {uc:?}");
        }
        self.flow(x, &uc)
    }
}

impl Default for Aircraft {
    fn default() -> Self {
        Self::new(0.1, Self::default_control_box(), true, AircraftParams::default()).unwrap()
    }
}

impl Plant for Aircraft {
    fn kind(&self) -> EnvKind {
        EnvKind::Aircraft
    }
    fn context_map(&self) -> &ContextMap {
        &self.map
    }
    fn sampling_time(&self) -> f64 {
        self.ts
    }
    fn control_set(&self) -> &Polyhedron {
        &self.control
    }
    fn state_box(&self) -> &AxisBox {
        &self.params.state_box
    }
    fn context_box(&self) -> &AxisBox {
        &self.params.state_box
    }
    fn seeding_box(&self) -> &AxisBox {
        self.control.bounding_box()
    }
    fn flow(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let n = self.params.rk4_substeps;
        let h = self.ts / n as f64;
        let mut s = [x[0], x[1], x[2]];
        let shift = |s: &[f64; 3], k: &[f64; 3], c: f64| [s[0] + c * k[0], s[1] + c * k[1], s[2] + c * k[2]];
        for _ in 0..n {
            let k1 = self.derivative(&s, u)?;
            let k2 = self.derivative(&shift(&s, &k1, h / 2.0), u)?;
            let k3 = self.derivative(&shift(&s, &k2, h / 2.0), u)?;
            let k4 = self.derivative(&shift(&s, &k3, h), u)?;
            for i in 0..3 {
                s[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        if !(s[0] > 0.0) {
            return Err(Error::Stall { speed: s[0] });
        }
        Ok(s.to_vec())
    }
    fn stage_cost(&self, x_next: &[f64], u: &[f64]) -> f64 {
        let h = x_next[2];
        match self.params.cost_variant {
            AircraftCost::AltitudeGamma => h * h + x_next[1] * x_next[1],
            AircraftCost::AltitudeAoa => h * h + u[1] * u[1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LqParams {
    /// Row-major state matrix.
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    pub state_box: Option<AxisBox>,
}

impl Default for LqParams {
    fn default() -> Self {
        Self { a: vec![vec![1.0, 0.0], vec![0.0, 1.0]], b: vec![vec![1.0, 0.0], vec![0.0, 1.0]], state_box: None }
    }
}

/// `x⁺ = A x + B u` with cost `|x⁺|²`.
#[derive(Clone, Debug)]
pub struct LinearQuadratic {
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    control: Polyhedron,
    state_box: AxisBox,
    map: ContextMap,
    ts: f64,
}

impl LinearQuadratic {
    pub fn new(ts: f64, control: AxisBox, params: LqParams) -> Result<Self> {
        let n = params.a.len();
        if n == 0 {
            return Err(Error::InvalidInput("A must be nonempty".into()));
        }
        for row in &params.a {
            check_dim(n, row.len())?;
        }
        check_dim(n, params.b.len())?;
        for row in &params.b {
            check_dim(control.dim(), row.len())?;
        }
        let state_box = match params.state_box {
            Some(b) => {
                check_dim(n, b.dim())?;
                b
            }
            None => AxisBox::cube(n, -10.0, 10.0)?,
        };
        Ok(Self { a: params.a, b: params.b, control: Polyhedron::from_box(control), state_box, map: ContextMap::Identity { dim: n }, ts })
    }

    pub fn with_matrices(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> Result<Self> {
        let m = b.first().map_or(0, |r| r.len());
        Self::new(1.0, AxisBox::cube(m, -1.0, 1.0)?, LqParams { a, b, state_box: None })
    }

    fn apply(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(ar, br)| dot(ar, x) + dot(br, u)).collect()
    }

    /// Largest eigenvalue of `2 [A B]ᵀ[A B]`, the exact Lipschitz constant of
    /// the cost gradient.
    pub fn gradient_lipschitz(&self) -> f64 {
        let n = self.a.len();
        let m = self.control.dim();
        let rows: Vec<Vec<f64>> = self.a.iter().zip(&self.b).map(|(a, b)| a.iter().chain(b).copied().collect()).collect();
        let mut v = vec![1.0; n + m];
        let mut lam = 0.0;
        for _ in 0..500 {
            let mv: Vec<f64> = rows.iter().map(|r| dot(r, &v)).collect();
            let mut w = vec![0.0; n + m];
            for (r, s) in rows.iter().zip(&mv) {
                crate::linalg::axpy(*s, r, &mut w);
            }
            let nw = norm(&w);
            if nw == 0.0 {
                return 0.0;
            }
            lam = nw / norm(&v);
            v = w.iter().map(|x| x / nw).collect();
        }
        2.0 * lam
    }
}

impl Plant for LinearQuadratic {
    fn kind(&self) -> EnvKind {
        EnvKind::Lq
    }
    fn context_map(&self) -> &ContextMap {
        &self.map
    }
    fn sampling_time(&self) -> f64 {
        self.ts
    }
    fn control_set(&self) -> &Polyhedron {
        &self.control
    }
    fn state_box(&self) -> &AxisBox {
        &self.state_box
    }
    fn context_box(&self) -> &AxisBox {
        &self.state_box
    }
    fn seeding_box(&self) -> &AxisBox {
        self.control.bounding_box()
    }
    fn flow(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply(x, u))
    }
    fn stage_cost(&self, x_next: &[f64], _u: &[f64]) -> f64 {
        dot(x_next, x_next)
    }
    fn cost_gradient(&self, z: &[f64], u: &[f64]) -> Option<Vec<f64>> {
        let next = self.apply(z, u);
        let n = self.a.len();
        let m = self.control.dim();
        let mut g = vec![0.0; n + m];
        for (i, xi) in next.iter().enumerate() {
            for j in 0..n {
                g[j] += 2.0 * self.a[i][j] * xi;
            }
            for j in 0..m {
                g[n + j] += 2.0 * self.b[i][j] * xi;
            }
        }
        Some(g)
    }
}

/// Environment description as stored in JSON configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub env: EnvKind,
    #[serde(rename = "Ts", default, skip_serializing_if = "Option::is_none")]
    pub ts: Option<f64>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    pub control_box: Option<AxisBox>,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    #[serde(default)]
    pub damage: bool,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

impl EnvConfig {
    pub fn new(env: EnvKind) -> Self {
        Self { env, ts: None, control_box: None, params: empty_object(), damage: env == EnvKind::Aircraft }
    }

    pub fn build(&self) -> Result<Box<dyn Plant>> {
        let params = if self.params.is_null() { empty_object() } else { self.params.clone() };
        let ts = self.ts.unwrap_or(match self.env {
            EnvKind::Lq => 1.0,
            _ => 0.1,
        });
        if !(ts > 0.0) {
            return Err(Error::InvalidInput("Ts must be positive".into()));
        }
        Ok(match self.env {
            EnvKind::Unicycle => {
                let p: UnicycleParams = serde_json::from_value(params)?;
                let u = self.control_box.clone().unwrap_or_else(Unicycle::default_control_box);
                Box::new(Unicycle::new(ts, u, p)?)
            }
            EnvKind::Aircraft => {
                let p: AircraftParams = serde_json::from_value(params)?;
                let u = self.control_box.clone().unwrap_or_else(Aircraft::default_control_box);
                Box::new(Aircraft::new(ts, u, self.damage, p)?)
            }
            EnvKind::Lq => {
                let p: LqParams = serde_json::from_value(params)?;
                let m = p.b.first().map_or(0, |r| r.len());
                let u = match &self.control_box {
                    Some(b) => b.clone(),
                    None => AxisBox::cube(m, -1.0, 1.0)?,
                };
                Box::new(LinearQuadratic::new(ts, u, p)?)
            }
        })
    }
}

/// Largest observed `|∇C(s) − ∇C(s')| / |s − s'|` over random nearby pairs
/// of on-manifold contexts and controls. Gradients come from the oracle.
pub fn estimate_gradient_lipschitz(env: &dyn Plant, pairs: usize, radius: f64, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sbox = env.state_box();
    let ubox = env.control_set().bounding_box();
    let draw = |rng: &mut ChaCha8Rng, b: &AxisBox| -> Vec<f64> {
        b.lower().iter().zip(b.upper()).map(|(lo, hi)| if hi > lo { rng.gen_range(*lo..=*hi) } else { *lo }).collect()
    };
    let grad_at = |x: &[f64], u: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let z = env.context(x);
        let g = match env.cost_gradient(&z, u) {
            Some(g) => g,
            None => fd_gradient(env, &z, u)?.0,
        };
        Ok((z.into_iter().chain(u.iter().copied()).collect(), g))
    };
    let mut best: f64 = 0.0;
    for _ in 0..pairs {
        let x = draw(&mut rng, sbox);
        let u = draw(&mut rng, ubox);
        let x2 = sbox.clamp(&x.iter().map(|v| v + radius * rng.gen_range(-1.0..=1.0)).collect::<Vec<_>>());
        let u2 = ubox.clamp(&u.iter().map(|v| v + radius * rng.gen_range(-1.0..=1.0)).collect::<Vec<_>>());
        let (s1, g1) = match grad_at(&x, &u) {
            Ok(v) => v,
            Err(Error::Stall { .. }) => continue,
            Err(e) => return Err(e),
        };
        let (s2, g2) = match grad_at(&x2, &u2) {
            Ok(v) => v,
            Err(Error::Stall { .. }) => continue,
            Err(e) => return Err(e),
        };
        let ds = dist_sq(&s1, &s2).sqrt();
        if ds > 1e-6 {
            best = best.max(norm(&sub(&g1, &g2)) / ds);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn unicycle_examples() {
        assert!(close(&unicycle_flow(&[0.0, 0.0, 0.0], &[1.0, 0.0], 0.1), &[0.1, 0.0, 0.0], 1e-15));
        assert!(close(&unicycle_flow(&[0.0, 0.0, 0.0], &[0.0, PI], 0.1), &[0.0, 0.0, 0.1 * PI], 1e-15));
        let a = 0.1 * PI;
        let expect = [a.sin() / PI, (1.0 - a.cos()) / PI, a];
        assert!(close(&unicycle_flow(&[0.0, 0.0, 0.0], &[1.0, PI], 0.1), &expect, 1e-15));
    }

    #[test]
    fn unicycle_step_clips_control() {
        let env = Unicycle::default();
        assert_eq!(env.step(&[0.0, 0.0, 0.0], &[10.0, 0.0]), unicycle_flow(&[0.0, 0.0, 0.0], &[4.0, 0.0], 0.1));
    }

    #[test]
    fn lift_and_drag() {
        assert!((lift(0.0, 115.5) - 68.6 * 1.25 * 115.5 * 115.5).abs() < 1e-6);
        assert!((lift(0.0, 115.5) - 1.1439e6).abs() < 1e2);
        let d = (2.7 + 3.08 * 1.25 * 1.25) * 115.5 * 115.5;
        assert!((drag(0.0, 115.5) - d).abs() < 1e-6);
    }

    #[test]
    fn level_flight_has_zero_climb_rate() {
        let env = Aircraft::default();
        let k = env.derivative(&[115.5, 0.0, 50.0], &[0.2, 0.0]).unwrap();
        assert_eq!(k[2], 0.0);
    }

    #[test]
    fn aircraft_cost_variants() {
        let gamma = Aircraft::default();
        let params = AircraftParams { cost_variant: AircraftCost::AltitudeAoa, ..Default::default() };
        let aoa = Aircraft::new(0.1, Aircraft::default_control_box(), true, params).unwrap();
        let (x, u) = ([100.0, 0.1, 3.0], [0.2, -0.05]);
        assert!((gamma.stage_cost(&x, &u) - (9.0 + 0.01)).abs() < 1e-12);
        assert!((aoa.stage_cost(&x, &u) - (9.0 + 0.0025)).abs() < 1e-12);
    }

    #[test]
    fn aircraft_stall_is_an_error() {
        let env = Aircraft::default();
        assert!(matches!(env.flow(&[0.0, 0.0, 50.0], &[0.2, 0.0]), Err(Error::Stall { .. })));
        assert!(matches!(env.flow(&[-1.0, 0.0, 50.0], &[0.2, 0.0]), Err(Error::Stall { .. })));
    }

    #[test]
    fn lq_examples() {
        let env = LinearQuadratic::with_matrices(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = oracle_query(&env, &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.next_state, vec![0.0, 0.0]);
        assert_eq!(r.cost, 0.0);
        assert!(r.cost_gradient.iter().all(|g| *g == 0.0));

        let env = LinearQuadratic::with_matrices(vec![vec![0.5, 0.0], vec![0.0, 0.5]], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let r = oracle_query(&env, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.cost, 0.25);
        assert!((env.gradient_lipschitz() - 2.5).abs() < 1e-9);
    }

    #[test]
    fn unicycle_origin_is_stationary() {
        let env = Unicycle::default();
        let r = oracle_query(&env, &[0.0, 0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(r.cost, 0.0);
        assert!(r.cost_gradient[..2].iter().all(|g| g.abs() < 1e-12));
    }

    #[test]
    fn out_of_set_control_is_projected() {
        let env = Unicycle::default();
        let r = oracle_query(&env, &[1.0, 1.0, 0.0], &[9.0, 0.0]).unwrap();
        assert!(r.control_clipped);
        assert_eq!(r.applied_control, vec![4.0, 0.0]);
    }

    #[test]
    fn config_parsing() {
        let cfg: EnvConfig = serde_json::from_str(
            r#"{"env":"aircraft","Ts":0.1,"params":{"mass":60000,"cost_variant":"h2_alpha2"},"damage":true}"#,
        )
        .unwrap();
        let env = cfg.build().unwrap();
        assert_eq!(env.kind(), EnvKind::Aircraft);
        assert_eq!(env.dim_u(), 2);
        let bad: EnvConfig = serde_json::from_str(r#"{"env":"unicycle","params":{"nope":1}}"#).unwrap();
        assert!(bad.build().is_err());
        let lq: EnvConfig = serde_json::from_str(r#"{"env":"lq","params":{"A":[[0.5]],"B":[[1.0]]}}"#).unwrap();
        assert_eq!(lq.build().unwrap().dim_z(), 1);
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
    }
}
