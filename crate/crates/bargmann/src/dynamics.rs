//! Complex Hamiltonian flow in `(u, v)` with tangent matrix, action, slow correction and
//! unwound phases; Newton shooting for the two boundary-value problems; root continuation
//! in `T` and caustic location.
//!
//! Equations of motion: `i hbar u' = dH/dv`, `i hbar v' = -dH/du`. The action is
//! `S = int [(i hbar/2)(u' v - u v') - H] dt - (i hbar/2)(u(T) v(T) + u(0) v(0))` and
//! `G = (1/2) int H_uv dt`.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::model::{Model, ModelError, NumberSymbol};

const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("integration failed at t={t} after {accepted} accepted steps: {reason}")]
    Integration { t: f64, accepted: usize, reason: String },
    #[error("Newton did not converge in {iterations} iterations (residual {residual:e})")]
    NoRoot { iterations: usize, residual: f64 },
    #[error("Jacobian {jacobian:e} is vanishing near v0={v0}: caustic-adjacent")]
    CausticAdjacent { v0: C64, jacobian: f64 },
    #[error("no caustic found (nearest approach |m_vv|={min_abs:e} at T={t_nearest})")]
    CausticNotFound { t_nearest: f64, min_abs: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentMatrix {
    pub m_uu: C64,
    pub m_uv: C64,
    pub m_vu: C64,
    pub m_vv: C64,
}

impl TangentMatrix {
    pub fn identity() -> Self {
        let (o, z) = (C64::new(1.0, 0.0), C64::new(0.0, 0.0));
        Self { m_uu: o, m_uv: z, m_vu: z, m_vv: o }
    }
    pub fn det(&self) -> C64 {
        self.m_uu * self.m_vv - self.m_uv * self.m_vu
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRecord {
    pub u0: C64,
    pub v0: C64,
    pub u_t: C64,
    pub v_t: C64,
    pub s: C64,
    pub g: C64,
    pub m: TangentMatrix,
    /// Continuously unwound `arg m_vv`, zero at `t = 0`.
    pub sigma_vv: f64,
    /// Continuously unwound `arg m_uv`, starting from the principal value at `t -> 0+`.
    pub sigma_uv: f64,
    pub t: f64,
    pub stats: StepStats,
}

impl TrajectoryRecord {
    /// `ln m_vv` on the unwound branch.
    pub fn log_m_vv(&self) -> C64 {
        C64::new(self.m.m_vv.norm().ln(), self.sigma_vv)
    }
    /// `ln m_uv` on the unwound branch.
    pub fn log_m_uv(&self) -> C64 {
        C64::new(self.m.m_uv.norm().ln(), self.sigma_uv)
    }
    /// Legendre-transformed action `S + i hbar u(T) v(T)`.
    pub fn s_tilde(&self, hbar: f64) -> C64 {
        self.s + I * hbar * self.u_t * self.v_t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlowMethod {
    /// Closed form for number-diagonal models, Runge-Kutta otherwise.
    Auto,
    Numeric,
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    pub method: FlowMethod,
    /// Local error tolerance of the adaptive integrator, in `[1e-13, 1e-6]`.
    pub tol: f64,
    pub max_step: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self { method: FlowMethod::Auto, tol: 1e-11, max_step: f64::INFINITY }
    }
}

impl FlowOptions {
    pub fn numeric(tol: f64) -> Self {
        Self { method: FlowMethod::Numeric, tol, max_step: f64::INFINITY }
    }
}

/// Runs the flow with the method chosen in `opts`.
pub fn flow(model: &dyn Model, u0: C64, v0: C64, t: f64, opts: &FlowOptions) -> Result<TrajectoryRecord, DynamicsError> {
    match (opts.method, model.number_symbol()) {
        (FlowMethod::Numeric, _) | (FlowMethod::Auto, None) => integrate(model, u0, v0, t, opts.tol, opts.max_step),
        (_, Some(sym)) => analytic_flow(sym, model.hbar(), u0, v0, t),
        (FlowMethod::Analytic, None) => Err(DynamicsError::InvalidInput(format!(
            "model `{}` has no closed-form flow",
            model.id()
        ))),
    }
}

/// Closed-form flow of `H = F(u v)`: `n` is conserved and the flow is a rotation by `F'(n) t / hbar`.
pub fn analytic_flow(sym: &dyn NumberSymbol, hbar: f64, u0: C64, v0: C64, t: f64) -> Result<TrajectoryRecord, DynamicsError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DynamicsError::InvalidInput(format!("T must be finite and >= 0, got {t}")));
    }
    let n = u0 * v0;
    let [f, f1, f2] = sym.f(n);
    let theta = f1 * t / hbar;
    let (eu, ev) = ((-I * theta).exp(), (I * theta).exp());
    let k = f2 * t / hbar;
    let a = I * n * k;
    let m = TangentMatrix {
        m_uu: eu * (1.0 - a),
        m_uv: -I * k * u0 * u0 * eu,
        m_vu: I * k * v0 * v0 * ev,
        m_vv: ev * (1.0 + a),
    };
    let sigma_uv = if m.m_uv.norm() > 0.0 { -theta.re + (-I * k * u0 * u0).arg() } else { 0.0 };
    let rec = TrajectoryRecord {
        u0,
        v0,
        u_t: u0 * eu,
        v_t: v0 * ev,
        s: (n * f1 - f) * t - I * hbar * n,
        g: (f1 + n * f2) * (0.5 * t),
        m,
        // The factor 1 + i n k moves on a straight line from 1 and can only reach the
        // negative axis through zero, so its principal argument is already continuous.
        sigma_vv: theta.re + (1.0 + a).arg(),
        sigma_uv,
        t,
        stats: StepStats::default(),
    };
    check_finite(&rec)?;
    Ok(rec)
}

fn check_finite(r: &TrajectoryRecord) -> Result<(), DynamicsError> {
    let all = [r.u_t, r.v_t, r.s, r.g, r.m.m_uu, r.m.m_uv, r.m.m_vu, r.m.m_vv];
    if all.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Ok(())
    } else {
        Err(DynamicsError::Integration { t: r.t, accepted: r.stats.accepted, reason: "non-finite state".into() })
    }
}

type State = [C64; 8];

fn rhs(model: &dyn Model, y: &State) -> Result<State, DynamicsError> {
    let [u, v, muu, muv, mvu, mvv, _, _] = *y;
    let j = model.jet(u, v)?;
    let ih = I / model.hbar();
    let du = -ih * j.h_v;
    let dv = ih * j.h_u;
    // d/dt M = J M with J = [[-i/h H_uv, -i/h H_vv], [i/h H_uu, i/h H_uv]].
    let (j11, j12, j21, j22) = (-ih * j.h_uv, -ih * j.h_vv, ih * j.h_uu, ih * j.h_uv);
    let ds = I * model.hbar() * 0.5 * (du * v - u * dv) - j.h;
    Ok([
        du,
        dv,
        j11 * muu + j12 * mvu,
        j11 * muv + j12 * mvv,
        j21 * muu + j22 * mvu,
        j21 * muv + j22 * mvv,
        ds,
        0.5 * j.h_uv,
    ])
}

fn axpy(y: &State, h: f64, ks: &[(&State, f64)]) -> State {
    let mut out = *y;
    for (k, c) in ks {
        if *c != 0.0 {
            for i in 0..8 {
                out[i] += k[i] * (h * c);
            }
        }
    }
    out
}

fn wrap(x: f64) -> f64 {
    let mut d = x % (2.0 * PI);
    if d > PI {
        d -= 2.0 * PI;
    } else if d <= -PI {
        d += 2.0 * PI;
    }
    d
}

/// Adaptive Dormand-Prince 5(4) integration of the joint state `(u, v, M, S, G)`.
///
/// A step is rejected when `arg m_vv` or `arg m_uv` would turn by `pi/2` or more.
pub fn integrate(model: &dyn Model, u0: C64, v0: C64, t: f64, tol: f64, max_step: f64) -> Result<TrajectoryRecord, DynamicsError> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DynamicsError::InvalidInput(format!("T must be finite and >= 0, got {t}")));
    }
    if !(1e-13..=1e-6).contains(&tol) {
        return Err(DynamicsError::InvalidInput(format!("tol must lie in [1e-13, 1e-6], got {tol}")));
    }
    let m0 = TangentMatrix::identity();
    let mut y: State = [u0, v0, m0.m_uu, m0.m_uv, m0.m_vu, m0.m_vv, C64::new(0.0, 0.0), C64::new(0.0, 0.0)];
    let mut stats = StepStats::default();
    let mut sigma_vv = 0.0;
    let mut sigma_uv: Option<f64> = None;
    let mut time = 0.0;
    if t > 0.0 {
        let j = model.jet(u0, v0)?;
        let rate = (j.h_u.norm() + j.h_v.norm() + j.h_uv.norm() + j.h_uu.norm() + j.h_vv.norm()) / model.hbar();
        let mut h = (0.05 / (1.0 + rate)).min(t).min(max_step);
        let mut k1 = rhs(model, &y)?;
        const A: [[f64; 6]; 6] = [
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const E: [f64; 7] = [
            71.0 / 57600.0,
            0.0,
            -71.0 / 16695.0,
            71.0 / 1920.0,
            -17253.0 / 339200.0,
            22.0 / 525.0,
            -1.0 / 40.0,
        ];
        while time < t {
            let last = time + h >= t * (1.0 - 1e-15);
            if last {
                h = t - time;
            }
            let k2 = rhs(model, &axpy(&y, h, &[(&k1, A[0][0])]))?;
            let k3 = rhs(model, &axpy(&y, h, &[(&k1, A[1][0]), (&k2, A[1][1])]))?;
            let k4 = rhs(model, &axpy(&y, h, &[(&k1, A[2][0]), (&k2, A[2][1]), (&k3, A[2][2])]))?;
            let k5 = rhs(model, &axpy(&y, h, &[(&k1, A[3][0]), (&k2, A[3][1]), (&k3, A[3][2]), (&k4, A[3][3])]))?;
            let k6 = rhs(
                model,
                &axpy(&y, h, &[(&k1, A[4][0]), (&k2, A[4][1]), (&k3, A[4][2]), (&k4, A[4][3]), (&k5, A[4][4])]),
            )?;
            let yn = axpy(&y, h, &[(&k1, A[5][0]), (&k3, A[5][2]), (&k4, A[5][3]), (&k5, A[5][4]), (&k6, A[5][5])]);
            let k7 = rhs(model, &yn)?;
            let mut err = 0.0f64;
            for i in 0..8 {
                let e = (k1[i] * E[0] + k3[i] * E[2] + k4[i] * E[3] + k5[i] * E[4] + k6[i] * E[5] + k7[i] * E[6]) * h;
                err = err.max(e.norm() / (tol * (1.0 + y[i].norm().max(yn[i].norm()))));
            }
            let finite = yn.iter().all(|z| z.re.is_finite() && z.im.is_finite());
            let dvv = wrap(yn[5].arg() - y[5].arg());
            let uv_tracked = y[3].norm() > 1e-8 && yn[3].norm() > 1e-8;
            let duv = if uv_tracked { wrap(yn[3].arg() - y[3].arg()) } else { 0.0 };
            let phase_ok = dvv.abs() < FRAC_PI_2 && duv.abs() < FRAC_PI_2;
            if finite && err <= 1.0 && phase_ok {
                time = if last { t } else { time + h };
                sigma_vv += dvv;
                sigma_uv = match sigma_uv {
                    Some(s) if uv_tracked => Some(s + duv),
                    Some(s) => Some(s),
                    None if yn[3].norm() > 0.0 => Some(yn[3].arg()),
                    None => None,
                };
                y = yn;
                k1 = k7;
                stats.accepted += 1;
                let fac = if err > 0.0 { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) } else { 5.0 };
                h = (h * fac).min(max_step);
            } else {
                stats.rejected += 1;
                h *= if finite && err > 1.0 { (0.9 * err.powf(-0.2)).clamp(0.1, 0.5) } else { 0.5 };
            }
            if h < 1e-14 * t.max(1e-300) {
                return Err(DynamicsError::Integration { t: time, accepted: stats.accepted, reason: "step size underflow".into() });
            }
        }
    }
    let [u_t, v_t, muu, muv, mvu, mvv, s_int, g] = y;
    let rec = TrajectoryRecord {
        u0,
        v0,
        u_t,
        v_t,
        s: s_int - I * model.hbar() * 0.5 * (u_t * v_t + u0 * v0),
        g,
        m: TangentMatrix { m_uu: muu, m_uv: muv, m_vu: mvu, m_vv: mvv },
        sigma_vv,
        sigma_uv: sigma_uv.unwrap_or(0.0),
        t,
        stats,
    };
    check_finite(&rec)?;
    Ok(rec)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BvpKind {
    /// `u(0) = u'`, `v(T) = v''`.
    VV,
    /// `u(0) = u'`, `u(T) = u''`.
    UU,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpProblem {
    pub kind: BvpKind,
    pub u_init: C64,
    /// `v''` for `VV`, `u''` for `UU`.
    pub target: C64,
    pub t: f64,
}

impl BvpProblem {
    pub fn vv(u_init: C64, v_final: C64, t: f64) -> Self {
        Self { kind: BvpKind::VV, u_init, target: v_final, t }
    }
    pub fn uu(u_init: C64, u_final: C64, t: f64) -> Self {
        Self { kind: BvpKind::UU, u_init, target: u_final, t }
    }
    pub fn at(&self, t: f64) -> Self {
        Self { t, ..*self }
    }
    fn residual_and_jacobian(&self, r: &TrajectoryRecord) -> (C64, C64) {
        match self.kind {
            BvpKind::VV => (r.v_t - self.target, r.m.m_vv),
            BvpKind::UU => (r.u_t - self.target, r.m.m_uv),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BvpOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
    pub flow: FlowOptions,
}

impl Default for BvpOptions {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 50, max_halvings: 8, flow: FlowOptions::default() }
    }
}

/// Newton shooting on the free initial value `v(0)`, differentiating through the tangent matrix.
pub fn solve_bvp(model: &dyn Model, problem: &BvpProblem, guess_v0: C64, opts: &BvpOptions) -> Result<TrajectoryRecord, DynamicsError> {
    if !(guess_v0.re.is_finite() && guess_v0.im.is_finite()) {
        return Err(DynamicsError::InvalidInput(format!("non-finite guess {guess_v0}")));
    }
    if problem.t == 0.0 {
        return match problem.kind {
            BvpKind::VV => flow(model, problem.u_init, problem.target, 0.0, &opts.flow),
            BvpKind::UU if (problem.target - problem.u_init).norm() <= opts.tol => {
                flow(model, problem.u_init, guess_v0, 0.0, &opts.flow)
            }
            BvpKind::UU => Err(DynamicsError::NoRoot { iterations: 0, residual: (problem.target - problem.u_init).norm() }),
        };
    }
    let scale = 1.0 + problem.target.norm();
    let mut v0 = guess_v0;
    let mut rec = flow(model, problem.u_init, v0, problem.t, &opts.flow)?;
    let (mut res, mut jac) = problem.residual_and_jacobian(&rec);
    for _ in 0..opts.max_iter {
        if res.norm() < opts.tol * scale {
            return Ok(rec);
        }
        if jac.norm() < 1e-12 {
            return Err(DynamicsError::CausticAdjacent { v0, jacobian: jac.norm() });
        }
        let step = -res / jac;
        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial = v0 + step * lambda;
            if let Ok(r) = flow(model, problem.u_init, trial, problem.t, &opts.flow) {
                let (rn, jn) = problem.residual_and_jacobian(&r);
                if rn.norm() < res.norm() {
                    accepted = Some((trial, r, rn, jn));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((t, r, rn, jn)) => {
                v0 = t;
                rec = r;
                res = rn;
                jac = jn;
            }
            None => break,
        }
    }
    if res.norm() < opts.tol * scale {
        return Ok(rec);
    }
    Err(DynamicsError::NoRoot { iterations: opts.max_iter, residual: res.norm() })
}

/// Axis-aligned rectangle in the complex `v0` plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBox {
    pub lo: C64,
    pub hi: C64,
}

impl SearchBox {
    pub fn around(center: C64, half_width: f64) -> Self {
        Self { lo: center - C64::new(half_width, half_width), hi: center + C64::new(half_width, half_width) }
    }
    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.lo.re && z.re <= self.hi.re && z.im >= self.lo.im && z.im <= self.hi.im
    }
}

/// Deduplicates at distance `tol` and sorts by real then imaginary part of `v0`.
pub fn dedup_roots(mut roots: Vec<TrajectoryRecord>, tol: f64) -> Vec<TrajectoryRecord> {
    roots.sort_by(|a, b| a.v0.re.total_cmp(&b.v0.re).then(a.v0.im.total_cmp(&b.v0.im)));
    let mut out: Vec<TrajectoryRecord> = Vec::with_capacity(roots.len());
    for r in roots {
        if !out.iter().any(|k| (k.v0 - r.v0).norm() < tol) {
            out.push(r);
        }
    }
    out
}

/// Multistart Newton from a `grid_n x grid_n` lattice; roots outside the box are dropped.
pub fn find_all_roots(
    model: &dyn Model,
    problem: &BvpProblem,
    search_box: &SearchBox,
    grid_n: usize,
    opts: &BvpOptions,
) -> Result<Vec<TrajectoryRecord>, DynamicsError> {
    if grid_n < 2 {
        return Err(DynamicsError::InvalidInput(format!("grid_n must be >= 2, got {grid_n}")));
    }
    let (lo, hi) = (search_box.lo, search_box.hi);
    let starts: Vec<C64> = (0..grid_n * grid_n)
        .map(|k| {
            let (i, j) = ((k / grid_n) as f64, (k % grid_n) as f64);
            let d = (grid_n - 1) as f64;
            C64::new(lo.re + (hi.re - lo.re) * i / d, lo.im + (hi.im - lo.im) * j / d)
        })
        .collect();
    let found: Vec<TrajectoryRecord> = starts
        .par_iter()
        .filter_map(|&g| solve_bvp(model, problem, g, opts).ok())
        .filter(|r| search_box.contains(r.v0))
        .collect();
    Ok(dedup_roots(found, 1e-7))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationOptions {
    pub h_max: f64,
    /// Smallest step (as a fraction of the span) before giving up.
    pub h_min: f64,
    pub bvp: BvpOptions,
}

impl Default for ContinuationOptions {
    fn default() -> Self {
        Self { h_max: 0.05, h_min: 1e-9, bvp: BvpOptions::default() }
    }
}

/// Follows one root of `problem` in `T`, starting from `start` (a solution at `start.t`), through
/// the requested times in order. Steps longer than `h_max` are subdivided; failing steps are
/// halved. Each target gets its own result; after a failure the remaining targets fail too.
pub fn continue_root(
    model: &dyn Model,
    problem: &BvpProblem,
    start: &TrajectoryRecord,
    targets: &[f64],
    opts: &ContinuationOptions,
) -> Vec<Result<TrajectoryRecord, DynamicsError>> {
    let mut out = Vec::with_capacity(targets.len());
    let mut cur = *start;
    let mut prev: Option<TrajectoryRecord> = None;
    let mut failed: Option<DynamicsError> = None;
    for &tt in targets {
        if let Some(e) = &failed {
            out.push(Err(e.clone()));
            continue;
        }
        let mut h = opts.h_max;
        while cur.t != tt {
            let dir = (tt - cur.t).signum();
            let step = h.min((tt - cur.t).abs());
            let tn = if step >= (tt - cur.t).abs() { tt } else { cur.t + dir * step };
            let guess = match prev {
                Some(p) if (p.t - cur.t).abs() > 0.0 => cur.v0 + (cur.v0 - p.v0) * ((tn - cur.t) / (cur.t - p.t)),
                _ => cur.v0,
            };
            match solve_bvp(model, &problem.at(tn), guess, &opts.bvp) {
                Ok(r) if (r.v0 - guess).norm() <= 0.1 * (1.0 + cur.v0.norm()) || step <= opts.h_min => {
                    prev = Some(cur);
                    cur = r;
                    h = (h * 1.5).min(opts.h_max);
                }
                res => {
                    h *= 0.5;
                    if h < opts.h_min {
                        // Stuck at a fold: the two coalescing roots are equally near the predictor.
                        let tf = if (tt - cur.t).abs() > opts.h_min { cur.t + dir * opts.h_min } else { tt };
                        match fold_jump(model, problem, &cur, prev.as_ref(), tf, &opts.bvp) {
                            Some(r) => {
                                prev = Some(cur);
                                cur = r;
                                h = opts.h_min;
                                continue;
                            }
                            None => {
                                failed = Some(match res {
                                    Err(e) => e,
                                    Ok(_) => DynamicsError::NoRoot { iterations: 0, residual: f64::NAN },
                                });
                                break;
                            }
                        }
                    }
                }
            }
        }
        match &failed {
            Some(e) => out.push(Err(e.clone())),
            None => out.push(Ok(cur)),
        }
    }
    out
}

/// Newton from seeds ringed around `cur` at time `t`; the converged root nearest the linear
/// predictor wins, ties broken by the order of `v0`.
fn fold_jump(
    model: &dyn Model,
    problem: &BvpProblem,
    cur: &TrajectoryRecord,
    prev: Option<&TrajectoryRecord>,
    t: f64,
    opts: &BvpOptions,
) -> Option<TrajectoryRecord> {
    let scale = 1.0 + cur.v0.norm();
    let pred = match prev {
        Some(p) if p.t != cur.t => cur.v0 + (cur.v0 - p.v0) * ((t - cur.t) / (cur.t - p.t)),
        _ => cur.v0,
    };
    let mut found = Vec::new();
    for k in 0..6 {
        let rho = scale * 10f64.powi(-6 + k);
        for j in 0..8 {
            let g = cur.v0 + C64::from_polar(rho, PI * j as f64 / 4.0 + 0.1);
            if let Ok(r) = solve_bvp(model, &problem.at(t), g, opts) {
                if (r.v0 - cur.v0).norm() < 0.1 * scale {
                    found.push(r);
                }
            }
        }
        if !found.is_empty() {
            break;
        }
    }
    dedup_roots(found, 1e-9).into_iter().min_by(|a, b| (a.v0 - pred).norm().total_cmp(&(b.v0 - pred).norm()))
}

/// The VV root continued from `T = 0`, where `v0 = v''` exactly, to each requested time.
pub fn continued_vv_family(
    model: &dyn Model,
    u_init: C64,
    v_final: C64,
    times: &[f64],
    opts: &ContinuationOptions,
) -> Result<Vec<Result<TrajectoryRecord, DynamicsError>>, DynamicsError> {
    if times.windows(2).any(|w| w[1] < w[0]) || times.first().is_some_and(|&t| t < 0.0) {
        return Err(DynamicsError::InvalidInput("continuation times must be ascending and >= 0".into()));
    }
    let problem = BvpProblem::vv(u_init, v_final, 0.0);
    let start = flow(model, u_init, v_final, 0.0, &opts.bvp.flow)?;
    Ok(continue_root(model, &problem, &start, times, opts))
}

/// A located phase-space caustic of the continued VV family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Caustic {
    pub t_c: f64,
    pub trajectory: TrajectoryRecord,
}

/// Locates a real-time zero of `m_vv` along the continued VV family in `[t_lo, t_hi]`.
///
/// The family is scanned for an interior minimum of `|m_vv|`; a secant iteration on `m_vv^2`
/// (smooth through the fold, where `m_vv` itself changes sign with the branch label) refines
/// it, projecting each update onto real `T`.
pub fn locate_caustic(
    model: &dyn Model,
    u_init: C64,
    v_final: C64,
    t_lo: f64,
    t_hi: f64,
    opts: &ContinuationOptions,
) -> Result<Caustic, DynamicsError> {
    if !(t_lo >= 0.0 && t_hi > t_lo) {
        return Err(DynamicsError::InvalidInput(format!("bad interval [{t_lo}, {t_hi}]")));
    }
    let n = 200;
    let times: Vec<f64> = (0..=n).map(|k| t_lo + (t_hi - t_lo) * k as f64 / n as f64).collect();
    let family = continued_vv_family(model, u_init, v_final, &times, opts)?;
    let ok: Vec<TrajectoryRecord> = family.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    if ok.len() < 3 {
        return Err(DynamicsError::CausticNotFound { t_nearest: t_lo, min_abs: f64::NAN });
    }
    let (kmin, rmin) = ok
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.m.m_vv.norm().total_cmp(&b.1.m.m_vv.norm()))
        .map(|(k, r)| (k, *r))
        .unwrap();
    if kmin == 0 || kmin == ok.len() - 1 {
        return Err(DynamicsError::CausticNotFound { t_nearest: rmin.t, min_abs: rmin.m.m_vv.norm() });
    }
    let problem = BvpProblem::vv(u_init, v_final, 0.0);
    let (lo, hi) = (ok[kmin - 1].t, ok[kmin + 1].t);
    let solve_at = |t: f64, near: &TrajectoryRecord| -> Result<TrajectoryRecord, DynamicsError> {
        let res = continue_root(model, &problem, near, &[t], &ContinuationOptions { h_max: (t - near.t).abs().max(1e-12), ..*opts });
        res.into_iter().next().unwrap()
    };
    let mut best = rmin;
    let (mut t0, mut f0) = (ok[kmin - 1].t, ok[kmin - 1].m.m_vv.powi(2));
    let (mut t1, mut f1) = (rmin.t, rmin.m.m_vv.powi(2));
    for _ in 0..60 {
        if best.m.m_vv.norm() < 1e-9 {
            break;
        }
        let df = f1 - f0;
        if df.norm() == 0.0 {
            break;
        }
        let tn_c = C64::new(t1, 0.0) - f1 * (t1 - t0) / df;
        let tn = tn_c.re.clamp(lo, hi);
        if (tn - t1).abs() < 1e-15 * (1.0 + t1) {
            break;
        }
        let near = if (best.t - tn).abs() < (rmin.t - tn).abs() { best } else { rmin };
        let r = match solve_at(tn, &near) {
            Ok(r) => r,
            Err(_) => break,
        };
        (t0, f0) = (t1, f1);
        (t1, f1) = (tn, r.m.m_vv.powi(2));
        if r.m.m_vv.norm() < best.m.m_vv.norm() {
            best = r;
        }
    }
    if best.m.m_vv.norm() < 1e-6 {
        Ok(Caustic { t_c: best.t, trajectory: best })
    } else {
        Err(DynamicsError::CausticNotFound { t_nearest: best.t, min_abs: best.m.m_vv.norm() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HarmonicOscillator, NormalOrdered, QuarticNumber};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn anharmonic() -> NormalOrdered {
        // Hermitian cubic-quartic perturbation of an oscillator, no closed-form flow.
        NormalOrdered::new(
            1.0,
            vec![
                (1, 1, c(1.0, 0.0)),
                (2, 0, c(0.1, 0.05)),
                (0, 2, c(0.1, -0.05)),
                (2, 2, c(0.3, 0.0)),
                (2, 1, c(0.05, 0.0)),
                (1, 2, c(0.05, 0.0)),
            ],
        )
    }

    #[test]
    fn oscillator_closed_form() {
        let m = HarmonicOscillator::new(1.0, 1.0);
        let (u0, v0, t) = (c(0.4, -0.2), c(0.1, 0.7), 5.0);
        let r = integrate(&m, u0, v0, t, 1e-12, f64::INFINITY).unwrap();
        assert!((r.u_t - u0 * C64::from_polar(1.0, -t)).norm() < 1e-9);
        assert!((r.v_t - v0 * C64::from_polar(1.0, t)).norm() < 1e-9);
        assert!((r.m.m_vv - C64::from_polar(1.0, t)).norm() < 1e-9);
        assert!(r.m.m_uv.norm() < 1e-12);
        assert!((r.sigma_vv - t).abs() < 1e-9, "sigma_vv={}", r.sigma_vv);
    }

    #[test]
    fn zero_time_is_identity() {
        let m = QuarticNumber::new(1.0, 1.0);
        let (u0, v0) = (c(0.3, 0.1), c(-0.2, 0.5));
        for method in [FlowMethod::Numeric, FlowMethod::Analytic] {
            let r = flow(&m, u0, v0, 0.0, &FlowOptions { method, ..Default::default() }).unwrap();
            assert_eq!(r.m, TangentMatrix::identity());
            assert!((r.s + I * u0 * v0).norm() < 1e-15);
            assert_eq!(r.g, c(0.0, 0.0));
            assert_eq!(r.sigma_vv, 0.0);
        }
    }

    #[test]
    fn quartic_numeric_matches_closed_form() {
        let m = QuarticNumber::new(1.0, 1.0);
        let (u0, v0, t) = (c(0.35, 0.1), c(0.2, -0.3), 3.7);
        let a = integrate(&m, u0, v0, t, 1e-12, f64::INFINITY).unwrap();
        let b = analytic_flow(&m, 1.0, u0, v0, t).unwrap();
        let n = u0 * v0;
        assert!((a.u_t * a.v_t - n).norm() < 1e-10);
        assert!((b.u_t - u0 * (-I * (2.0 * n + 2.0) * t).exp()).norm() < 1e-14);
        for (x, y) in [(a.u_t, b.u_t), (a.v_t, b.v_t), (a.s, b.s), (a.g, b.g), (a.m.m_vv, b.m.m_vv), (a.m.m_uv, b.m.m_uv)] {
            assert!((x - y).norm() < 1e-8 * (1.0 + y.norm()), "{x} vs {y}");
        }
        assert!((a.sigma_vv - b.sigma_vv).abs() < 1e-8);
        assert!((a.sigma_uv - b.sigma_uv).abs() < 1e-8);
    }

    #[test]
    fn sigma_is_step_independent() {
        let m = anharmonic();
        let (u0, v0) = (c(0.5, 0.2), c(0.4, -0.3));
        let a = integrate(&m, u0, v0, 9.0, 1e-12, 0.02).unwrap();
        let b = integrate(&m, u0, v0, 9.0, 1e-12, 0.01).unwrap();
        assert!(a.sigma_vv.abs() > PI);
        assert!((a.sigma_vv - b.sigma_vv).abs() < 1e-6);
    }

    #[test]
    fn general_model_invariants() {
        let m = anharmonic();
        let (u0, v0, t) = (c(0.5, 0.2), c(0.4, -0.3), 2.5);
        let r = integrate(&m, u0, v0, t, 1e-12, f64::INFINITY).unwrap();
        assert!((r.m.det() - 1.0).norm() < 1e-8);
        let e0 = m.jet(u0, v0).unwrap().h;
        let e1 = m.jet(r.u_t, r.v_t).unwrap().h;
        assert!((e0 - e1).norm() < 1e-9);
        // Columns of M by central differences.
        let d = 1e-6;
        let pu = integrate(&m, u0 + d, v0, t, 1e-12, f64::INFINITY).unwrap();
        let mu = integrate(&m, u0 - d, v0, t, 1e-12, f64::INFINITY).unwrap();
        let pv = integrate(&m, u0, v0 + d, t, 1e-12, f64::INFINITY).unwrap();
        let mv = integrate(&m, u0, v0 - d, t, 1e-12, f64::INFINITY).unwrap();
        let fd = [
            ((pu.u_t - mu.u_t) / (2.0 * d), r.m.m_uu),
            ((pv.u_t - mv.u_t) / (2.0 * d), r.m.m_uv),
            ((pu.v_t - mu.v_t) / (2.0 * d), r.m.m_vu),
            ((pv.v_t - mv.v_t) / (2.0 * d), r.m.m_vv),
        ];
        for (a, b) in fd {
            assert!((a - b).norm() < 1e-5 * (1.0 + b.norm()), "{a} vs {b}");
        }
    }

    #[test]
    fn oscillator_bvp() {
        let m = HarmonicOscillator::new(1.0, 1.3);
        let (up, vpp, t) = (c(0.3, 0.4), c(-0.5, 0.2), 2.0);
        let opts = BvpOptions { flow: FlowOptions::numeric(1e-12), ..Default::default() };
        let r = solve_bvp(&m, &BvpProblem::vv(up, vpp, t), vpp, &opts).unwrap();
        assert!((r.v0 - vpp * C64::from_polar(1.0, -1.3 * t)).norm() < 1e-10);
        let r0 = solve_bvp(&m, &BvpProblem::vv(up, vpp, 0.0), c(9.0, 9.0), &opts).unwrap();
        assert_eq!(r0.v0, vpp);
    }

    #[test]
    fn oscillator_has_one_root() {
        let m = HarmonicOscillator::new(1.0, 1.0);
        let p = BvpProblem::vv(c(0.3, 0.0), c(0.3, 0.1), 1.2);
        let roots = find_all_roots(&m, &p, &SearchBox::around(c(0.0, 0.0), 2.0), 6, &BvpOptions::default()).unwrap();
        assert_eq!(roots.len(), 1);
        let far = find_all_roots(&m, &p, &SearchBox::around(c(50.0, 50.0), 1.0), 4, &BvpOptions::default()).unwrap();
        assert!(far.is_empty());
    }

    #[test]
    fn quartic_short_time_root() {
        let m = QuarticNumber::new(1.0, 1.0);
        let z = 1.0 / (2.0 * 2f64.sqrt());
        let fam = continued_vv_family(&m, c(z, 0.0), c(z, 0.0), &[0.1], &ContinuationOptions::default()).unwrap();
        let r = fam[0].as_ref().unwrap();
        assert!((r.v_t - z).norm() < 1e-10);
        assert!((r.v0 - z).norm() < 0.1);
        let roots = find_all_roots(&m, &BvpProblem::vv(c(z, 0.0), c(z, 0.0), 0.1), &SearchBox::around(c(z, 0.0), 0.2), 5, &BvpOptions::default()).unwrap();
        assert!(roots.iter().any(|k| (k.v0 - r.v0).norm() < 1e-8));
    }

    #[test]
    fn coalescing_pair_near_fig1_caustic() {
        let m = QuarticNumber::new(1.0, 1.0);
        let z = 1.0 / (2.0 * 2f64.sqrt());
        let p = BvpProblem::vv(c(z, 0.0), c(z, 0.0), 2.2);
        let roots = find_all_roots(&m, &p, &SearchBox::around(c(0.0, 0.0), 3.0), 24, &BvpOptions::default()).unwrap();
        assert!(roots.len() >= 2);
        let mut small: Vec<f64> = roots.iter().map(|r| r.m.m_vv.norm()).collect();
        small.sort_by(f64::total_cmp);
        assert!(small[1] < 2.0, "two smallest |m_vv|: {:?}", &small[..2]);
    }

    #[test]
    fn constructed_caustic_is_located() {
        let m = QuarticNumber::new(1.0, 1.0);
        let tc = 1.3f64;
        let p = I * (2.0 * I * tc).exp() / (2.0 * std::f64::consts::E * tc);
        let up = c(p.norm().sqrt(), 0.0);
        let vpp = p / up;
        let cst = locate_caustic(&m, up, vpp, 0.8, 1.8, &ContinuationOptions::default()).unwrap();
        assert!(cst.trajectory.m.m_vv.norm() < 1e-6);
        let n = cst.trajectory.u0 * cst.trajectory.v0;
        assert!((1.0 + 2.0 * I * n * cst.t_c).norm() < 1e-5);
        assert!((cst.t_c - tc).abs() < 1e-5);
        let ho = HarmonicOscillator::new(1.0, 1.0);
        assert!(matches!(
            locate_caustic(&ho, up, vpp, 0.1, 5.0, &ContinuationOptions::default()),
            Err(DynamicsError::CausticNotFound { .. })
        ));
    }

    #[test]
    fn legendre_identities() {
        let m = QuarticNumber::new(1.0, 1.0);
        let opts = BvpOptions::default();
        let (up, vpp, t) = (c(0.3, 0.05), c(0.25, -0.1), 0.8);
        let solve = |u: C64, v: C64| {
            continued_vv_family(&m, u, v, &[t], &ContinuationOptions::default()).unwrap()[0].clone().unwrap()
        };
        let r = solve(up, vpp);
        let d = 1e-5;
        let ds_dv = (solve(up, vpp + d).s - solve(up, vpp - d).s) / (2.0 * d);
        let ds_du = (solve(up + d, vpp).s - solve(up - d, vpp).s) / (2.0 * d);
        assert!((I * ds_dv - r.u_t).norm() < 1e-4 * r.u_t.norm());
        assert!((I * ds_du - r.v0).norm() < 1e-4 * r.v0.norm());
        // UU family: dS~/du'' = i hbar v''.
        let uu = |upp: C64| solve_bvp(&m, &BvpProblem::uu(up, upp, t), r.v0, &opts).unwrap();
        let st = |x: &TrajectoryRecord| x.s_tilde(1.0);
        let dst = (st(&uu(r.u_t + d)) - st(&uu(r.u_t - d))) / (2.0 * d);
        assert!((-I * dst - vpp).norm() < 1e-4 * vpp.norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn determinant_and_energy(ur in -0.6..0.6f64, ui in -0.6..0.6f64, vr in -0.6..0.6f64, vi in -0.6..0.6f64, t in 0.0..4.0f64) {
            let m = anharmonic();
            let r = integrate(&m, c(ur, ui), c(vr, vi), t, 1e-12, f64::INFINITY).unwrap();
            prop_assert!((r.m.det() - 1.0).norm() < 1e-8);
            let e0 = m.jet(c(ur, ui), c(vr, vi)).unwrap().h;
            let e1 = m.jet(r.u_t, r.v_t).unwrap().h;
            prop_assert!((e0 - e1).norm() < 1e-9 * (1.0 + e0.norm()));
        }

        #[test]
        fn analytic_flow_is_exact_for_quartic(ur in -0.6..0.6f64, ui in -0.6..0.6f64, vr in -0.6..0.6f64, vi in -0.6..0.6f64, t in 0.0..3.0f64) {
            let m = QuarticNumber::new(1.0, 1.0);
            let a = integrate(&m, c(ur, ui), c(vr, vi), t, 1e-12, f64::INFINITY).unwrap();
            let b = analytic_flow(&m, 1.0, c(ur, ui), c(vr, vi), t).unwrap();
            prop_assert!((a.m.m_vv - b.m.m_vv).norm() < 1e-7 * (1.0 + b.m.m_vv.norm()));
            prop_assert!((a.s - b.s).norm() < 1e-7 * (1.0 + b.s.norm()));
            prop_assert!((a.sigma_vv - b.sigma_vv).abs() < 1e-7);
        }
    }
}
