//! The conjugate Bargmann application `f̃(w) = (2 pi i)^{-1/2} int f(z*) e^{-z* w} dz*` and its inverse.
//!
//! The forward integral runs along the ray `z* = r e^{-i arg w}` where `e^{-z* w}` is real and
//! decaying. The inverse runs along the rotated Bromwich line `w = (alpha + i t) e^{i arg z}`,
//! on which `e^{z* w} = e^{|z| (alpha + i t)}`; the oscillatory tails are summed panel by
//! panel (half periods) and accelerated with the Wynn epsilon algorithm.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TransformError {
    #[error("transform undefined: {0}")]
    Undefined(String),
    #[error("integral did not converge: {0}")]
    NotConverged(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContourKind {
    /// Forward transform on `z* = r e^{-i arg w}`, `r` from 0 to infinity.
    Ray,
    /// Inverse transform on `w = (alpha + i t) e^{i arg z}`, `t` over the real line.
    ShiftedLine,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourSpec {
    pub kind: ContourKind,
    /// Offset of the inverse line from the origin, in units of `1/|z|`-free `w` length.
    pub alpha: f64,
    /// Hard truncation of `r` or `|t|`; the automatic tail cut usually stops earlier.
    pub t_max: f64,
    /// Gauss-Legendre order per panel.
    pub n_points: usize,
}

impl ContourSpec {
    pub fn ray() -> Self {
        Self { kind: ContourKind::Ray, alpha: 0.0, t_max: 1e6, n_points: 24 }
    }
    pub fn shifted_line(alpha: f64) -> Self {
        Self { kind: ContourKind::ShiftedLine, alpha, t_max: 1e6, n_points: 24 }
    }
}

impl Default for ContourSpec {
    fn default() -> Self {
        Self::ray()
    }
}

/// `sqrt(2 pi i)` on the principal branch, `e^{i pi/4} sqrt(2 pi)`.
pub fn sqrt_2pi_i() -> C64 {
    C64::from_polar((2.0 * PI).sqrt(), PI / 4.0)
}

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut t = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * t * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { t } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (t * pn - pm) / (t * t - 1.0);
            let dt = pn / dp;
            t -= dt;
            if dt.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -t;
        x[n - 1 - i] = t;
        let wi = 2.0 / ((1.0 - t * t) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn panel<F: Fn(f64) -> C64>(f: &F, lo: f64, hi: f64, x: &[f64], w: &[f64]) -> (C64, f64) {
    let (h, m) = (0.5 * (hi - lo), 0.5 * (hi + lo));
    let mut s = C64::new(0.0, 0.0);
    let mut peak = 0.0f64;
    for (xi, wi) in x.iter().zip(w) {
        let v = f(h * xi + m);
        peak = peak.max(v.norm());
        s += v * (wi * h);
    }
    (s, peak)
}

/// Forward conjugate application of `f` at `w`.
pub fn conjugate_apply<F>(f: F, w: C64, contour: &ContourSpec) -> Result<C64, TransformError>
where
    F: Fn(C64) -> C64,
{
    if contour.kind != ContourKind::Ray {
        return Err(TransformError::Undefined("forward transform needs a ray contour".into()));
    }
    let aw = w.norm();
    if aw == 0.0 || !aw.is_finite() {
        return Err(TransformError::Undefined(format!("ray direction needs |w| > 0, got w={w}")));
    }
    let dir = C64::from_polar(1.0, -w.arg());
    let g = |r: f64| f(dir * r) * (-r * aw).exp();
    let (x, wt) = gauss_legendre(contour.n_points.max(2));
    let width = 0.5 / aw;
    let mut total = C64::new(0.0, 0.0);
    let mut peak = 0.0f64;
    let mut lo = 0.0;
    let mut quiet = 0;
    let mut last_panel_peak = f64::INFINITY;
    let mut rising = 0usize;
    while lo < contour.t_max {
        let hi = lo + width;
        let (s, p) = panel(&g, lo, hi, &x, &wt);
        if !s.re.is_finite() || !s.im.is_finite() {
            return Err(TransformError::Undefined(format!("non-finite integrand near r={lo}")));
        }
        total += s;
        peak = peak.max(p);
        if p <= 1e-16 * peak {
            quiet += 1;
            if quiet >= 3 {
                return Ok(dir * total / sqrt_2pi_i());
            }
        } else {
            quiet = 0;
        }
        rising = if p > last_panel_peak { rising + 1 } else { 0 };
        if rising > 20_000 {
            return Err(TransformError::Undefined("integrand grows along the ray".into()));
        }
        last_panel_peak = p;
        lo = hi;
    }
    Err(TransformError::Undefined(format!("tail not negligible at r_max={}", contour.t_max)))
}

/// Wynn epsilon extrapolation of a sequence of partial sums.
pub fn wynn_epsilon(s: &[C64]) -> C64 {
    let n = s.len();
    if n < 3 {
        return *s.last().unwrap_or(&C64::new(0.0, 0.0));
    }
    let mut prev = vec![C64::new(0.0, 0.0); n + 1];
    let mut cur: Vec<C64> = s.to_vec();
    let mut best = s[n - 1];
    for k in 1..n {
        let mut next = Vec::with_capacity(cur.len() - 1);
        for j in 0..cur.len() - 1 {
            let d = cur[j + 1] - cur[j];
            if d.norm() == 0.0 {
                return if k % 2 == 1 { cur[j + 1] } else { best };
            }
            next.push(prev[j + 1] + 1.0 / d);
        }
        prev = cur;
        cur = next;
        if k % 2 == 0 {
            if let Some(&v) = cur.last() {
                if v.re.is_finite() && v.im.is_finite() {
                    best = v;
                }
            }
        }
        if cur.len() < 2 {
            break;
        }
    }
    best
}

/// Inverse conjugate application of `ftil` at `z_star`.
pub fn conjugate_invert<F>(ftil: F, z_star: C64, contour: &ContourSpec) -> Result<C64, TransformError>
where
    F: Fn(C64) -> C64,
{
    if contour.kind != ContourKind::ShiftedLine || contour.alpha.is_nan() || contour.alpha <= 0.0 {
        return Err(TransformError::Undefined("inverse transform needs a shifted line with alpha > 0".into()));
    }
    let az = z_star.norm();
    if az == 0.0 || !az.is_finite() {
        return Err(TransformError::Undefined(format!("line orientation needs |z*| > 0, got {z_star}")));
    }
    let alpha = contour.alpha;
    let rot = C64::from_polar(1.0, -z_star.arg());
    let i = C64::new(0.0, 1.0);
    // t and -t together, so the panel sums form an alternating-like sequence.
    let g = |t: f64| {
        let mut acc = C64::new(0.0, 0.0);
        for tt in [t, -t] {
            let w = C64::new(alpha, tt) * rot;
            acc += ftil(w) * (C64::new(alpha, tt) * az).exp();
        }
        acc * i * rot
    };
    let (x, wt) = gauss_legendre(contour.n_points.max(2));
    let half = PI / az;
    let n_panels = 60usize;
    let mut partial = Vec::with_capacity(n_panels);
    let mut total = C64::new(0.0, 0.0);
    for k in 0..n_panels {
        let (lo, hi) = (k as f64 * half, (k + 1) as f64 * half);
        if lo > contour.t_max {
            break;
        }
        // Resolve the neighbourhood of the line's closest approach to singularities near the origin.
        let sub = ((hi - lo) / (0.25 * alpha.max(lo))).ceil().clamp(1.0, 256.0) as usize;
        let dh = (hi - lo) / sub as f64;
        for j in 0..sub {
            let (s, _) = panel(&g, lo + j as f64 * dh, lo + (j + 1) as f64 * dh, &x, &wt);
            total += s;
        }
        if !total.re.is_finite() || !total.im.is_finite() {
            return Err(TransformError::Undefined(format!("non-finite integrand near t={lo}")));
        }
        partial.push(total);
    }
    let est = wynn_epsilon(&partial);
    let est_short = wynn_epsilon(&partial[..partial.len() - 6]);
    let scale = est.norm().max(partial.iter().map(|p| p.norm()).fold(0.0, f64::max) * 1e-6);
    if (est - est_short).norm() > 1e-8 * scale.max(1e-300) {
        return Err(TransformError::NotConverged(format!(
            "oscillatory tail did not settle (estimates {est} vs {est_short})"
        )));
    }
    // The t-integral was folded onto t >= 0, which covers the full line once.
    Ok(est / sqrt_2pi_i())
}
