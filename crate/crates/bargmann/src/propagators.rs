//! Semiclassical propagators: the bare sum over VV trajectories, the conjugate propagator
//! from UU trajectories, and the uniform Airy approximation that stays finite at caustics.
//!
//! Bare term of one trajectory: `m_vv^{-1/2} exp{(i/hbar)(S + G)}` with `m_vv^{-1/2}` on the
//! branch continued from `t = 0`. Conjugate term: `(i/m_uv)^{1/2} exp{(i/hbar)(S~ + G)}`, with
//! `S~ = S + i hbar u'' v(T)`.
//!
//! Uniform value: the transform back from the conjugate representation is mapped onto
//! `X^3/3 - B X + A` with the two coalescing stationary points at `X = +-B^{1/2}`. The cubic
//! carries the actions only (`A = (S+ + S-)/(2 hbar)`, `B^3 = (3 (S+ - S-)/(4 hbar))^2`); the slowly
//! varying factors enter the linear amplitude `c0 + c1 X` through its values `f+-` at the saddles.
//! The contour class is fixed by the cube root chosen for `B`, tracked continuously in `T`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use thiserror::Error;

use crate::core::Label;
use crate::dynamics::{
    continue_root, continued_vv_family, dedup_roots, find_all_roots, solve_bvp, BvpOptions, BvpProblem,
    ContinuationOptions, DynamicsError, SearchBox, TrajectoryRecord,
};
use crate::model::Model;
use crate::specfun::{cubic_oscillatory_integral, ContourHint, SpecfunError};

const I: C64 = C64 { re: 0.0, im: 1.0 };
/// `|m|` below which a bare or conjugate term is treated as sitting on a caustic.
pub const CAUSTIC_THRESHOLD: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PropagatorError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Specfun(#[from] SpecfunError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Bare,
    Conjugate,
    Exact,
    Uniform,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Bare => "bare",
            Method::Conjugate => "conjugate",
            Method::Exact => "exact",
            Method::Uniform => "uniform",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim() {
            "bare" => Ok(Method::Bare),
            "conjugate" => Ok(Method::Conjugate),
            "exact" => Ok(Method::Exact),
            "uniform" => Ok(Method::Uniform),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// How the relative sign of `f-` to `f+` was fixed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignRule {
    /// Continuation of the amplitude along the straight segment joining the stationary points.
    Path,
    /// Near coalescence, where `f+ ~ f-`.
    Coalescence,
    /// Continuity with the previous time step.
    Continuity,
}

/// Which square root of `B` is the `+` stationary point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SqrtBranch {
    Principal,
    Negated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPair {
    pub traj_plus: TrajectoryRecord,
    pub traj_minus: TrajectoryRecord,
    pub a: C64,
    pub b: C64,
    pub f_plus: C64,
    pub f_minus: C64,
    pub sqrt_b_branch: SqrtBranch,
    pub sign_rule: SignRule,
    /// Whether this pair was first identified at this time.
    pub new_pair: bool,
}

impl UniformPair {
    /// `X+`, the root of `B` assigned to `traj_plus`.
    pub fn x_plus(&self) -> C64 {
        let r = self.b.sqrt();
        match self.sqrt_b_branch {
            SqrtBranch::Principal => r,
            SqrtBranch::Negated => -r,
        }
    }

    /// The same pair with the roles of the two stationary points exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            traj_plus: self.traj_minus,
            traj_minus: self.traj_plus,
            f_plus: self.f_minus,
            f_minus: self.f_plus,
            sqrt_b_branch: match self.sqrt_b_branch {
                SqrtBranch::Principal => SqrtBranch::Negated,
                SqrtBranch::Negated => SqrtBranch::Principal,
            },
            ..*self
        }
    }

    /// `sqrt(2 pi) e^{iA} [c0 Ai(-B) - i c1 Ai'(-B)]` with `c0 + c1 X` interpolating `f+-` at `X+-`.
    pub fn value(&self) -> Result<C64, SpecfunError> {
        let x = self.x_plus();
        let (c0, c1) = if x.norm() > 0.0 {
            let c1 = (self.f_plus - self.f_minus) / (2.0 * x);
            (self.f_plus - c1 * x, c1)
        } else {
            (0.5 * (self.f_plus + self.f_minus), C64::new(0.0, 0.0))
        };
        Ok(cubic_oscillatory_integral(self.a, self.b, c0, c1, ContourHint::Principal)?.value)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    /// Smallest `|m_vv|` (or `|m_uv|`) among the trajectories used.
    pub min_abs_jacobian: f64,
    /// Initial values of further roots found by multistart but not summed.
    pub extra_roots: Vec<C64>,
    pub warnings: Vec<String>,
    pub pair: Option<UniformPair>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorValue {
    pub value: C64,
    pub method: Method,
    pub n_traj: usize,
    pub caustic_flag: bool,
    /// The cubic coefficient `B` (uniform only).
    pub b_coeff: Option<C64>,
    pub diagnostics: Diagnostics,
}

impl PropagatorValue {
    /// False for a bare or conjugate value sitting on a caustic.
    pub fn is_valid(&self) -> bool {
        self.value.re.is_finite() && self.value.im.is_finite()
    }
}

/// One bare contribution, `exp{(i/hbar)(S + G) - (1/2) ln m_vv}`.
pub fn bare_term(r: &TrajectoryRecord, hbar: f64) -> C64 {
    (I * (r.s + r.g) / hbar - 0.5 * r.log_m_vv()).exp()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BareOptions {
    pub continuation: ContinuationOptions,
    /// Multistart box for reporting (or summing) further roots.
    pub search: Option<(SearchBox, usize)>,
    /// Adds the multistart roots to the sum.
    pub include_all_roots: bool,
}

fn infinite() -> C64 {
    C64::new(f64::INFINITY, f64::INFINITY)
}

/// Bare propagator as a function of `u' = z0` and `v'' = zf*`.
pub fn bare_kernel(model: &dyn Model, u_init: C64, v_final: C64, t: f64, opts: &BareOptions) -> Result<PropagatorValue, PropagatorError> {
    let fam = continued_vv_family(model, u_init, v_final, &[t], &opts.continuation)?;
    let phys = fam.into_iter().next().unwrap()?;
    let mut diagnostics = Diagnostics { min_abs_jacobian: phys.m.m_vv.norm(), ..Default::default() };
    let mut used = vec![phys];
    if let Some((bx, n)) = &opts.search {
        let others = find_all_roots(model, &BvpProblem::vv(u_init, v_final, t), bx, *n, &opts.continuation.bvp)?;
        for r in others.into_iter().filter(|r| (r.v0 - phys.v0).norm() > 1e-7) {
            if opts.include_all_roots {
                used.push(r);
            } else {
                diagnostics.extra_roots.push(r.v0);
            }
        }
    }
    let hbar = model.hbar();
    let caustic = used.iter().any(|r| r.m.m_vv.norm() < CAUSTIC_THRESHOLD);
    diagnostics.min_abs_jacobian = used.iter().map(|r| r.m.m_vv.norm()).fold(f64::INFINITY, f64::min);
    let value = if caustic {
        diagnostics.warnings.push("trajectory at a caustic: m_vv vanishes".into());
        infinite()
    } else {
        used.iter().map(|r| bare_term(r, hbar)).sum()
    };
    Ok(PropagatorValue { value, method: Method::Bare, n_traj: used.len(), caustic_flag: caustic, b_coeff: None, diagnostics })
}

/// Bare semiclassical propagator `K(zf*, z0, T)`.
pub fn bare_propagator(model: &dyn Model, z0: &Label, zf: &Label, t: f64, opts: &BareOptions) -> Result<PropagatorValue, PropagatorError> {
    bare_kernel(model, z0.z0, zf.z0.conj(), t, opts)
}

/// `ln m_uv` continued from `prev` (its imaginary part moves by less than `pi`).
fn continue_log(prev: C64, m: C64) -> C64 {
    let raw = m.ln();
    let k = ((prev.im - raw.im) / (2.0 * PI)).round();
    C64::new(raw.re, raw.im + 2.0 * PI * k)
}

/// Follows the UU root along the straight segment `u'' = from + s (to - from)`, starting from
/// `start` (a trajectory with `u(T) = from`). Returns the records at `n + 1` equally spaced `s`.
fn uu_path(
    model: &dyn Model,
    u_init: C64,
    start: &TrajectoryRecord,
    to: C64,
    n: usize,
    opts: &BvpOptions,
) -> Result<Vec<TrajectoryRecord>, DynamicsError> {
    let from = start.u_t;
    let mut out = Vec::with_capacity(n + 1);
    out.push(*start);
    let mut cur = *start;
    for k in 1..=n {
        let target = from + (to - from) * (k as f64 / n as f64);
        // Sub-steps in case a single segment step is too long for Newton.
        let mut done = false;
        let mut sub = 1usize;
        while !done && sub <= 64 {
            let mut trial = cur;
            let mut ok = true;
            let prev_target = trial.u_t;
            for j in 1..=sub {
                let tg = prev_target + (target - prev_target) * (j as f64 / sub as f64);
                match solve_bvp(model, &BvpProblem::uu(u_init, tg, start.t), trial.v0, opts) {
                    Ok(r) => trial = r,
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if ok {
                cur = trial;
                done = true;
            } else {
                sub *= 4;
            }
        }
        if !done {
            return Err(DynamicsError::NoRoot { iterations: 0, residual: (cur.u_t - target).norm() });
        }
        out.push(cur);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConjugateOptions {
    pub continuation: ContinuationOptions,
    /// Points on the path in `u''` from the reference trajectory to the requested endpoint.
    pub path_points: usize,
}

impl Default for ConjugateOptions {
    fn default() -> Self {
        Self { continuation: ContinuationOptions::default(), path_points: 200 }
    }
}

/// A UU trajectory together with the branch of `ln m_uv` used for its conjugate contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConjugateTrajectory {
    pub record: TrajectoryRecord,
    pub log_m_uv: C64,
}

/// One conjugate contribution `(i/m_uv)^{1/2} exp{(i/hbar)(S~ + G)}`.
pub fn conjugate_term(c: &ConjugateTrajectory, hbar: f64) -> C64 {
    let (expo, amp) = conjugate_parts(c, hbar);
    amp * expo.exp()
}

/// The conjugate contribution split into its rapidly varying exponent `(i/hbar) S~` and the
/// slowly varying amplitude `(i/m_uv)^{1/2} e^{(i/hbar) G}`.
pub fn conjugate_parts(c: &ConjugateTrajectory, hbar: f64) -> (C64, C64) {
    let r = &c.record;
    let log_pref = 0.5 * (C64::new(0.0, PI / 2.0) - c.log_m_uv);
    (I * r.s_tilde(hbar) / hbar, (I * r.g / hbar + log_pref).exp())
}

/// The UU trajectory with `u(T) = u_final` used by [`conjugate_propagator`]: the one reached
/// from the diagonal (`zf = z0`) physical trajectory by moving its endpoint `u(T)` along a
/// straight line to `u_final`.
///
/// At the diagonal trajectory the branch of `(m_uv)^{1/2}` is the one for which the Gaussian
/// inverse along `w = (alpha + i t) e^{-i arg v''}` returns the bare branch `m_vv^{-1/2}`; it is
/// continued along the path from there.
pub fn conjugate_trajectory(model: &dyn Model, u_final: C64, z0: &Label, t: f64, opts: &ConjugateOptions) -> Result<ConjugateTrajectory, PropagatorError> {
    let u_init = z0.z0;
    let v_diag = u_init.conj();
    let fam = continued_vv_family(model, u_init, v_diag, &[t], &opts.continuation)?;
    let reference = fam.into_iter().next().unwrap()?;
    if reference.m.m_uv.norm() < CAUSTIC_THRESHOLD {
        return Err(PropagatorError::InvalidInput("degenerate UU problem: m_uv vanishes".into()));
    }
    let along = I * C64::from_polar(1.0, -v_diag.arg());
    let mut log = reference.log_m_uv();
    if ((0.5 * (log - reference.log_m_vv())).exp() * along.conj()).re < 0.0 {
        log += C64::new(0.0, 2.0 * PI);
    }
    let path = uu_path(model, u_init, &reference, u_final, opts.path_points.max(1), &opts.continuation.bvp)?;
    for r in &path[1..] {
        log = continue_log(log, r.m.m_uv);
    }
    Ok(ConjugateTrajectory { record: *path.last().unwrap(), log_m_uv: log })
}

/// Semiclassical conjugate propagator `K~(u'', z0, T)` from the trajectory of [`conjugate_trajectory`].
pub fn conjugate_propagator(model: &dyn Model, u_final: C64, z0: &Label, t: f64, opts: &ConjugateOptions) -> Result<PropagatorValue, PropagatorError> {
    let c = match conjugate_trajectory(model, u_final, z0, t, opts) {
        Ok(c) => c,
        Err(PropagatorError::InvalidInput(w)) => {
            let diagnostics = Diagnostics { min_abs_jacobian: 0.0, warnings: vec![w], ..Default::default() };
            return Ok(PropagatorValue { value: infinite(), method: Method::Conjugate, n_traj: 0, caustic_flag: true, b_coeff: None, diagnostics });
        }
        Err(e) => return Err(e),
    };
    let m_uv = c.record.m.m_uv.norm();
    let mut diagnostics = Diagnostics { min_abs_jacobian: m_uv, ..Default::default() };
    let caustic = m_uv < CAUSTIC_THRESHOLD;
    let value = if caustic {
        diagnostics.warnings.push("trajectory at a conjugate caustic: m_uv vanishes".into());
        infinite()
    } else {
        conjugate_term(&c, model.hbar())
    };
    Ok(PropagatorValue { value, method: Method::Conjugate, n_traj: 1, caustic_flag: caustic, b_coeff: None, diagnostics })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UniformOptions {
    /// First time of the internal tracking grid.
    pub t_start: f64,
    /// Spacing of the internal tracking grid.
    pub h_grid: f64,
    /// Points on the amplitude path used to fix the relative sign of `f+-`.
    pub path_points: usize,
    /// Multistart discovery of new roots every this many grid steps.
    pub discover_every: usize,
    /// Radial and angular counts of the multistart seeds around the physical root.
    pub seeds: (usize, usize),
    /// Number of roots nearest to the physical one kept in the tracked set.
    pub keep: usize,
    pub continuation: ContinuationOptions,
}

impl Default for UniformOptions {
    fn default() -> Self {
        Self {
            t_start: 0.05,
            h_grid: 0.01,
            path_points: 400,
            discover_every: 10,
            seeds: (30, 16),
            keep: 16,
            continuation: ContinuationOptions::default(),
        }
    }
}

/// Uniform Airy approximation of `K(zf*, z0, T)`.
pub fn uniform_propagator(model: &dyn Model, z0: &Label, zf: &Label, t: f64, opts: &UniformOptions) -> Result<PropagatorValue, PropagatorError> {
    uniform_sweep(model, z0.z0, zf.z0.conj(), &[t], opts).into_iter().next().unwrap()
}

/// Failure of a tracking step because the pair cannot be resolved numerically.
const COALESCED: &str = "stationary points numerically coalesced";
/// Failure of a tracking step that was too long to continue `B` reliably.
const AMBIGUOUS: &str = "step too long to continue the cubic coefficient";

/// Tracking state after one grid time.
#[derive(Debug, Clone)]
struct TrackState {
    pair: UniformPair,
    roots: Vec<TrajectoryRecord>,
    centroid: C64,
    /// Recent `(t, B)` values, oldest first, at most three.
    b_hist: Vec<(f64, C64)>,
    ratio: C64,
    value: C64,
}

struct Ctx<'a> {
    model: &'a dyn Model,
    u_init: C64,
    v_final: C64,
    opts: &'a UniformOptions,
}

fn cube_roots(w: C64) -> [C64; 3] {
    let (r, a) = (w.norm().cbrt(), w.arg());
    [0, 1, 2].map(|k| C64::from_polar(r, (a + 2.0 * PI * k as f64) / 3.0))
}

/// `X+`: the root of `B` with `X^3` closest to `-(3/4) dS/hbar`.
fn x_plus(b: C64, d: C64) -> (C64, SqrtBranch) {
    let r = b.sqrt();
    if (r.powi(3) + 0.75 * d).norm() < (r.powi(3) - 0.75 * d).norm() {
        (r, SqrtBranch::Principal)
    } else {
        (-r, SqrtBranch::Negated)
    }
}

/// The `B` whose principal Airy contour picks up the `+` stationary point alone.
fn phys_only_b(d: C64) -> Option<C64> {
    let w = (0.75 * d).powi(2);
    cube_roots(w).into_iter().find(|&c| {
        let y = -c;
        if y.arg().abs() >= 2.0 * PI / 3.0 {
            return false;
        }
        let (x1, _) = x_plus(c, d);
        let e1 = I * (x1.powi(3) / 3.0 - c * x1);
        let target = -(2.0 / 3.0) * y.powf(1.5);
        (e1 - target).norm() < 1e-8 * target.norm().max(1.0)
    })
}

/// Cube root of `B^3` nearest to the polynomial extrapolation of the recent values to `t`;
/// `None` when the prediction does not clearly separate the roots.
fn track_b(d: C64, hist: &[(f64, C64)], t: f64) -> Option<C64> {
    let mut pred = C64::new(0.0, 0.0);
    for (i, (ti, bi)) in hist.iter().enumerate() {
        let w: f64 = hist.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, (tj, _))| (t - tj) / (ti - tj)).product();
        pred += bi * w;
    }
    let mut cands = cube_roots((0.75 * d).powi(2));
    cands.sort_by(|x, y| (*x - pred).norm().total_cmp(&(*y - pred).norm()));
    let spacing = 3f64.sqrt() * cands[0].norm();
    ((cands[0] - pred).norm() <= 0.3 * spacing || spacing == 0.0).then_some(cands[0])
}

fn push_b(hist: &mut Vec<(f64, C64)>, t: f64, b: C64) {
    hist.push((t, b));
    if hist.len() > 3 {
        hist.remove(0);
    }
}

/// Roots of `X^3/3 - B X + c = 0`.
fn cubic_roots(b: C64, c: C64) -> [C64; 3] {
    // x^3 + p x + q = 0 with p = -3B, q = 3c.
    let (p, q) = (-3.0 * b, 3.0 * c);
    let disc = (q * q / 4.0 + p * p * p / 27.0).sqrt();
    let mut s = -q / 2.0 + disc;
    if s.norm() < (-q / 2.0 - disc).norm() {
        s = -q / 2.0 - disc;
    }
    let u = if s.norm() == 0.0 { C64::new(0.0, 0.0) } else { s.powf(1.0 / 3.0) };
    let w = C64::from_polar(1.0, 2.0 * PI / 3.0);
    let mut out = [C64::new(0.0, 0.0); 3];
    let mut uk = u;
    for o in out.iter_mut() {
        let mut x = if uk.norm() > 0.0 { uk - p / (3.0 * uk) } else { C64::new(0.0, 0.0) };
        for _ in 0..3 {
            let f = x * x * x + p * x + q;
            let fp = 3.0 * x * x + p;
            if fp.norm() > 0.0 {
                x -= f / fp;
            }
        }
        *o = x;
        uk *= w;
    }
    out
}

impl Ctx<'_> {
    fn hbar(&self) -> f64 {
        self.model.hbar()
    }

    fn problem(&self, t: f64) -> BvpProblem {
        BvpProblem::vv(self.u_init, self.v_final, t)
    }

    /// Multistart Newton from seeds spread geometrically around the physical root.
    fn discover(&self, phys: &TrajectoryRecord) -> Vec<TrajectoryRecord> {
        let (nr, na) = self.opts.seeds;
        let scale = 1.0 + phys.v0.norm();
        let seeds: Vec<C64> = (0..nr * na)
            .map(|k| {
                let (i, j) = (k / na, k % na);
                let rho = scale * 10f64.powf(-2.0 + 5.0 * i as f64 / (nr.max(2) - 1) as f64);
                let ang = 2.0 * PI * (j as f64 + 0.5 * (i % 2) as f64) / na as f64;
                phys.v0 + C64::from_polar(rho, ang)
            })
            .collect();
        let problem = self.problem(phys.t);
        let bvp = &self.opts.continuation.bvp;
        let found: Vec<TrajectoryRecord> = seeds
            .par_iter()
            .filter_map(|&g| solve_bvp(self.model, &problem, g, bvp).ok())
            .filter(|r| r.v0.norm() < 1e4 * scale)
            .collect();
        dedup_roots(found, 1e-7)
    }

    /// Tracked roots at `t`: the previous set and physical root continued, optionally merged with fresh discoveries,
    /// trimmed to those nearest the physical root.
    fn roots_at(&self, prev: Option<&TrackState>, phys: &TrajectoryRecord, discover: bool) -> Vec<TrajectoryRecord> {
        let problem = self.problem(phys.t);
        let bvp = &self.opts.continuation.bvp;
        let mut seeds: Vec<C64> = prev.map(|p| p.roots.iter().map(|r| r.v0).collect()).unwrap_or_default();
        if let Some(p) = prev {
            // Partner reflected through the slowly moving pair centroid; survives a fold crossing.
            seeds.extend([p.pair.traj_plus.v0, 2.0 * p.centroid - phys.v0]);
        }
        let mut all: Vec<TrajectoryRecord> = seeds
            .par_iter()
            .filter_map(|&g| solve_bvp(self.model, &problem, g, bvp).ok())
            .collect();
        if discover {
            all.extend(self.discover(phys));
        }
        all.push(*phys);
        let mut all = dedup_roots(all, 1e-7);
        all.retain(|r| (r.v0 - phys.v0).norm() > 1e-7);
        let mut by_v: Vec<TrajectoryRecord> = all.clone();
        by_v.sort_by(|a, b| (a.v0 - phys.v0).norm().total_cmp(&(b.v0 - phys.v0).norm()));
        by_v.truncate(self.opts.keep);
        let mut by_u = all;
        by_u.sort_by(|a, b| (a.u_t - phys.u_t).norm().total_cmp(&(b.u_t - phys.u_t).norm()));
        by_u.truncate(self.opts.keep / 3 + 1);
        by_v.extend(by_u);
        dedup_roots(by_v, 1e-7)
    }

    fn pair_data(&self, phys: &TrajectoryRecord, partner: &TrajectoryRecord) -> C64 {
        (phys.s - partner.s) / self.hbar()
    }

    /// Partner continued backwards through `times` (descending), then `B` tracked forward from
    /// the single-saddle class at the earliest time.
    fn initial_b(&self, history: &[(f64, TrajectoryRecord)], partner: &TrajectoryRecord) -> Option<Vec<(f64, C64)>> {
        let mut partners = vec![*partner];
        let mut q = *partner;
        let bvp = &self.opts.continuation.bvp;
        for (t, _) in history.iter().rev().skip(1) {
            q = solve_bvp(self.model, &self.problem(*t), q.v0, bvp).ok()?;
            partners.push(q);
        }
        partners.reverse();
        let mut hist: Vec<(f64, C64)> = Vec::new();
        for ((t, phys), part) in history.iter().zip(&partners) {
            let d = self.pair_data(phys, part);
            let b = if hist.is_empty() { phys_only_b(d)? } else { track_b(d, &hist, *t)? };
            push_b(&mut hist, *t, b);
        }
        (!hist.is_empty()).then_some(hist)
    }

    /// Ratio `f-/f+` obtained by continuing the amplitude along the `u''` segment.
    fn path_ratio(&self, phys: &TrajectoryRecord, partner: &TrajectoryRecord, b: C64, x1: C64, a: C64) -> Option<C64> {
        let n = self.opts.path_points.max(4);
        let path = uu_path(self.model, self.u_init, phys, partner.u_t, n, &self.opts.continuation.bvp).ok()?;
        let end = path.last()?;
        if (end.v0 - partner.v0).norm() > 1e-6 * partner.v0.norm().max(1.0) {
            return None;
        }
        let hbar = self.hbar();
        let mut logs = Vec::with_capacity(path.len());
        let mut l = path[0].m.m_uv.ln();
        for r in &path {
            l = continue_log(l, r.m.m_uv);
            logs.push(l);
        }
        let expo: Vec<C64> = path.iter().map(|r| (r.s_tilde(hbar) - I * hbar * r.u_t * self.v_final) / hbar).collect();
        let du = partner.u_t - phys.u_t;
        let ds = 1.0 / n as f64;
        let mut ratios = Vec::new();
        for br in 0..2 {
            let mut xs = vec![x1];
            for e in expo.iter().skip(1) {
                let roots = cubic_roots(b, a - e);
                let prev = *xs.last().unwrap();
                let x = if xs.len() == 1 {
                    let mut r = roots.to_vec();
                    r.sort_by(|p, q| (*p - x1).norm().total_cmp(&(*q - x1).norm()));
                    r[br]
                } else {
                    *roots.iter().min_by(|p, q| (**p - prev).norm().total_cmp(&(**q - prev).norm())).unwrap()
                };
                xs.push(x);
            }
            if (xs[n] + x1).norm() < 1e-3 * x1.norm().max(1.0) {
                let g = |k: usize| {
                    let dx = (xs[k + 1] - xs[k - 1]) / (2.0 * ds);
                    (I * path[k].g / hbar - 0.5 * logs[k]).exp() * du / dx
                };
                ratios.push(g(n - 1) / g(1));
            }
        }
        if ratios.len() == 1 {
            Some(ratios[0])
        } else {
            None
        }
    }

    /// Advances the tracking state to `t`. `history` lists the grid times and physical roots
    /// strictly before `t`; `prev` is the state at the last of them.
    fn advance(
        &self,
        prev: Option<&TrackState>,
        history: &[(f64, TrajectoryRecord)],
        phys: TrajectoryRecord,
        discover: bool,
    ) -> Result<(TrackState, UniformPair), String> {
        let t = phys.t;
        let roots = self.roots_at(prev, &phys, discover || prev.is_none());
        let partner = *roots
            .iter()
            .min_by(|a, b| (a.u_t - phys.u_t).norm().total_cmp(&(b.u_t - phys.u_t).norm()))
            .ok_or("no second stationary point found")?;
        if (partner.v0 - phys.v0).norm() < 1e-5 * (1.0 + phys.v0.norm()) {
            return Err(COALESCED.into());
        }
        let centroid = 0.5 * (phys.v0 + partner.v0);
        let same = prev.is_some_and(|p| {
            let nearest_other = roots
                .iter()
                .filter(|r| (r.v0 - partner.v0).norm() > 1e-7)
                .map(|r| (r.v0 - p.centroid).norm())
                .fold(f64::INFINITY, f64::min);
            (centroid - p.centroid).norm() < 0.5 * nearest_other
        });
        let d = self.pair_data(&phys, &partner);
        let b_hist = if same {
            let mut hist = prev.unwrap().b_hist.clone();
            let b = track_b(d, &hist, t).ok_or(AMBIGUOUS)?;
            push_b(&mut hist, t, b);
            hist
        } else {
            let mut hist: Vec<(f64, TrajectoryRecord)> = history.to_vec();
            hist.push((t, phys));
            self.initial_b(&hist, &partner).ok_or("no single-saddle contour class for the new pair")?
        };
        let b = b_hist.last().unwrap().1;
        let hbar = self.hbar();
        let (x1, branch) = x_plus(b, d);
        let a = (phys.s + partner.s) / (2.0 * hbar);
        let g1 = (2.0 * x1 / I).sqrt() * (I * phys.g / hbar - 0.5 * phys.log_m_vv()).exp();
        let mut g2 = (-2.0 * x1 / I).sqrt() * (I * partner.g / hbar - 0.5 * partner.log_m_vv()).exp();
        let path = if b.norm() > 1e-3 { self.path_ratio(&phys, &partner, b, x1, a) } else { None };
        let prev_ratio = if same { prev.map(|p| p.ratio) } else { None };
        let r = g2 / g1;
        let rule = match (path, prev_ratio) {
            (Some(ps), _) => {
                if (r + ps).norm() < (r - ps).norm() {
                    g2 = -g2;
                }
                SignRule::Path
            }
            _ if b.norm() < 1e-2 => {
                if r.re < 0.0 {
                    g2 = -g2;
                }
                SignRule::Coalescence
            }
            (None, Some(pr)) => {
                if (-r - pr).norm() < (r - pr).norm() {
                    g2 = -g2;
                }
                SignRule::Continuity
            }
            (None, None) => SignRule::Continuity,
        };
        let mut pair = UniformPair {
            traj_plus: phys,
            traj_minus: partner,
            a,
            b,
            f_plus: g1,
            f_minus: g2,
            sqrt_b_branch: branch,
            sign_rule: rule,
            new_pair: !same,
        };
        let mut v = pair.value().map_err(|e| e.to_string())?;
        let flip = match prev.filter(|_| same) {
            Some(p) => (-v - p.value).norm() < (v - p.value).norm(),
            None => (v * bare_term(&phys, hbar).conj()).re < 0.0,
        };
        if flip {
            v = -v;
            pair.f_plus = -pair.f_plus;
            pair.f_minus = -pair.f_minus;
        }
        let state = TrackState { pair, roots, centroid, b_hist, ratio: pair.f_minus / pair.f_plus, value: v };
        Ok((state, pair))
    }
}

impl Ctx<'_> {
    /// `advance` from a tracked state, bisecting the step while `B` cannot be continued reliably.
    fn advance_refined(
        &self,
        prev: &TrackState,
        history: &[(f64, TrajectoryRecord)],
        phys: TrajectoryRecord,
        depth: usize,
    ) -> Result<(TrackState, UniformPair), String> {
        match self.advance(Some(prev), history, phys, true) {
            Err(e) if e == AMBIGUOUS && depth < 40 => {
                let from = prev.pair.traj_plus;
                let t_mid = 0.5 * (from.t + phys.t);
                let mid = continue_root(self.model, &self.problem(0.0), &from, &[t_mid], &self.opts.continuation)
                    .pop()
                    .unwrap()
                    .map_err(|e| e.to_string())?;
                let (mid_state, _) = self.advance_refined(prev, history, mid, depth + 1)?;
                let mut hist = history.to_vec();
                hist.push((t_mid, mid));
                self.advance_refined(&mid_state, &hist, phys, depth + 1)
            }
            r => r,
        }
    }
}

fn uniform_value(pair: UniformPair, value: C64) -> PropagatorValue {
    let min_abs = pair.traj_plus.m.m_vv.norm().min(pair.traj_minus.m.m_vv.norm());
    PropagatorValue {
        value,
        method: Method::Uniform,
        n_traj: 2,
        caustic_flag: pair.b.norm() < 1.0,
        b_coeff: Some(pair.b),
        diagnostics: Diagnostics { min_abs_jacobian: min_abs, pair: Some(pair), ..Default::default() },
    }
}

fn bare_fallback(phys: &TrajectoryRecord, hbar: f64, reason: String) -> PropagatorValue {
    let caustic = phys.m.m_vv.norm() < CAUSTIC_THRESHOLD;
    PropagatorValue {
        value: if caustic { infinite() } else { bare_term(phys, hbar) },
        method: Method::Uniform,
        n_traj: 1,
        caustic_flag: caustic,
        b_coeff: None,
        diagnostics: Diagnostics {
            min_abs_jacobian: phys.m.m_vv.norm(),
            warnings: vec![format!("uniform pairing failed ({reason}); bare value returned")],
            ..Default::default()
        },
    }
}

/// Uniform values at each requested time.
///
/// The pair and the contour class are tracked on the grid `t_start + k h_grid`; the value at a
/// requested time is a single extra step from the last grid time at or before it, so a result
/// does not depend on which other times are requested.
pub fn uniform_sweep(
    model: &dyn Model,
    u_init: C64,
    v_final: C64,
    times: &[f64],
    opts: &UniformOptions,
) -> Vec<Result<PropagatorValue, PropagatorError>> {
    let ctx = Ctx { model, u_init, v_final, opts };
    if let Some(bad) = times.iter().find(|t| !(t.is_finite() && **t >= 0.0)) {
        return times.iter().map(|_| Err(PropagatorError::InvalidInput(format!("bad time {bad}")))).collect();
    }
    let t_max = times.iter().copied().fold(0.0, f64::max);
    let h = opts.h_grid;
    let n_grid = if t_max >= opts.t_start { ((t_max - opts.t_start) / h).floor() as usize + 1 } else { 0 };
    let grid: Vec<f64> = (0..n_grid).map(|k| opts.t_start + k as f64 * h).collect();

    // Physical root along the grid.
    let phys_grid: Vec<Result<TrajectoryRecord, DynamicsError>> = if grid.is_empty() {
        Vec::new()
    } else {
        match continued_vv_family(model, u_init, v_final, &grid, &opts.continuation) {
            Ok(v) => v,
            Err(e) => grid.iter().map(|_| Err(e.clone())).collect(),
        }
    };
    // Failed grid points are skipped; a gap longer than `MAX_GAP` restarts the tracking history.
    const MAX_GAP: usize = 3;
    let mut states: Vec<Option<TrackState>> = Vec::with_capacity(n_grid);
    let mut seg_begin = vec![0usize; n_grid];
    let mut history: Vec<(usize, TrajectoryRecord)> = Vec::with_capacity(n_grid);
    let mut last_ok: Option<usize> = None;
    for (k, ph) in phys_grid.iter().enumerate() {
        if last_ok.is_some_and(|j| k - j > MAX_GAP) {
            history.clear();
            last_ok = None;
        }
        seg_begin[k] = history.first().map_or(k, |h| h.0);
        let st = match ph {
            Ok(ph) => {
                let prev = last_ok.and_then(|j| states[j].as_ref());
                let hist: Vec<(f64, TrajectoryRecord)> = history.iter().map(|(j, r)| (grid[*j], *r)).collect();
                let st = ctx.advance(prev, &hist, *ph, k % opts.discover_every.max(1) == 0).ok().map(|(s, _)| s);
                if st.is_some() {
                    history.push((k, *ph));
                    last_ok = Some(k);
                }
                st
            }
            Err(_) => None,
        };
        states.push(st);
    }

    let phys_ok: Vec<Option<TrajectoryRecord>> = phys_grid.iter().map(|r| r.as_ref().ok().copied()).collect();

    let eval = |t: f64| -> Result<PropagatorValue, PropagatorError> {
        let hbar = model.hbar();
        // Last grid index at or before t.
        let k = if t >= opts.t_start { Some((((t - opts.t_start) / h).floor() as usize).min(n_grid - 1)) } else { None };
        let k = k.filter(|&k| grid[k] <= t);
        if let Some(s) = k.filter(|&k| (grid[k] - t).abs() <= 1e-14 * t.max(1.0)).and_then(|k| states[k].as_ref()) {
            return Ok(uniform_value(s.pair, s.value));
        }
        // Physical root at t, continued from the grid (or from T = 0).
        let phys = match k.and_then(|k| phys_ok[k]) {
            Some(p) => continue_root(model, &BvpProblem::vv(u_init, v_final, 0.0), &p, &[t], &opts.continuation)
                .into_iter()
                .next()
                .unwrap()?,
            None => continued_vv_family(model, u_init, v_final, &[t], &opts.continuation)?.into_iter().next().unwrap()?,
        };
        let last = k.and_then(|k| (k.saturating_sub(MAX_GAP)..=k).rev().find(|&j| states[j].is_some()));
        let (prev, hist): (Option<&TrackState>, Vec<(f64, TrajectoryRecord)>) = match last {
            Some(j) => (
                states[j].as_ref(),
                (seg_begin[j]..=j).filter(|&i| states[i].is_some()).filter_map(|i| phys_ok[i].map(|p| (grid[i], p))).collect(),
            ),
            None => (None, Vec::new()),
        };
        let step = match prev {
            Some(p) => ctx.advance_refined(p, &hist, phys, 0),
            None => ctx.advance(None, &hist, phys, true),
        };
        match step {
            Ok((s, pair)) => Ok(uniform_value(pair, s.value)),
            Err(e) if e == COALESCED => Err(PropagatorError::InvalidInput(e)),
            Err(e) => Ok(bare_fallback(&phys, hbar, e)),
        }
    };

    times
        .par_iter()
        .map(|&t| match eval(t) {
            // On a caustic within numerical resolution: the value is analytic in T, so the
            // midpoint of two nearby evaluations is accurate to second order.
            Err(PropagatorError::InvalidInput(e)) if e == COALESCED => {
                let d = 1e-4 * t.max(1.0);
                let (lo, hi) = (eval(t - d)?, eval(t + d)?);
                let mut out = hi.clone();
                out.value = 0.5 * (lo.value + hi.value);
                out.b_coeff = lo.b_coeff.zip(hi.b_coeff).map(|(a, b)| 0.5 * (a + b));
                out.caustic_flag = true;
                out.diagnostics.warnings.push(format!("value at a caustic interpolated from T +- {d:e}"));
                Ok(out)
            }
            r => r,
        })
        .collect()
}

/// Saddle-point inverse of a conjugate-representation function `f~ = a(w) e^{phi(w)}`, given as
/// `parts(w) = (phi, a)` with `phi` the rapidly varying exponent.
///
/// Locates the stationary point of `phi(w) + w v''` near `guess` by Newton iteration and returns
/// `(2 pi i)^{-1/2} a e^{phi + w v''} (2 pi / -phi'')^{1/2}`, the square root oriented along the
/// inverse contour `w = (alpha + i t) e^{-i arg v''}`.
pub fn steepest_descent_inverse<F>(parts: F, v_final: C64, guess: C64) -> Result<C64, PropagatorError>
where
    F: Fn(C64) -> Result<(C64, C64), PropagatorError>,
{
    let phi = |w: C64| -> Result<C64, PropagatorError> { Ok(parts(w)?.0 + w * v_final) };
    let mut w = guess;
    let h = 1e-4 * (1.0 + guess.norm());
    let mut d2 = C64::new(0.0, 0.0);
    let mut converged = false;
    for _ in 0..40 {
        let (p0, pp, pm) = (phi(w)?, phi(w + h)?, phi(w - h)?);
        let d1 = (pp - pm) / (2.0 * h);
        d2 = (pp - 2.0 * p0 + pm) / (h * h);
        let step = -d1 / d2;
        w += step;
        if step.norm() < 1e-10 * (1.0 + w.norm()) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(PropagatorError::InvalidInput("no stationary point of the inverse integrand".into()));
    }
    let (p, a) = parts(w)?;
    let along = I * C64::from_polar(1.0, -v_final.arg());
    let mut dir = (-1.0 / d2).sqrt();
    if (dir * along.conj()).re < 0.0 {
        dir = -dir;
    }
    Ok(a * (p + w * v_final).exp() * (2.0 * PI).sqrt() * dir / crate::transforms::sqrt_2pi_i())
}

/// All roots of the VV problem near the physical one at `t`, as used by the uniform pairing.
pub fn tracked_roots(model: &dyn Model, u_init: C64, v_final: C64, t: f64, opts: &UniformOptions) -> Result<Vec<TrajectoryRecord>, PropagatorError> {
    let ctx = Ctx { model, u_init, v_final, opts };
    let phys = continued_vv_family(model, u_init, v_final, &[t], &opts.continuation)?.into_iter().next().unwrap()?;
    Ok(ctx.roots_at(None, &phys, true))
}
