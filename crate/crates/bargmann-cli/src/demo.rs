//! The `transform-demo` and `caustic-scan` subcommands.

use bargmann::dynamics::{continued_vv_family, locate_caustic, ContinuationOptions};
use bargmann::model::Model;
use bargmann::oracle::oscillator_propagator;
use bargmann::transforms::{conjugate_apply, conjugate_invert, sqrt_2pi_i, ContourSpec};
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::output::num;

pub struct Check {
    pub name: &'static str,
    pub max_err: f64,
    pub tol: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_err < self.tol
    }
}

fn factorial(m: u32) -> f64 {
    (1..=m).map(f64::from).product()
}

fn phi(m: u32, z: C64) -> C64 {
    z.powu(m) / factorial(m).sqrt()
}

fn phi_tilde(m: u32, w: C64) -> C64 {
    factorial(m).sqrt() / (sqrt_2pi_i() * w.powu(m + 1))
}

fn point(rng: &mut ChaCha8Rng, r: std::ops::Range<f64>) -> C64 {
    C64::from_polar(rng.gen_range(r), rng.gen_range(-3.0..3.0))
}

/// Forward and inverse transforms of `phi_m`, and the transformed oscillator propagator.
pub fn transform_demo(seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ray = ContourSpec::ray();
    let line = ContourSpec::shifted_line(1.0);
    let rel = |a: C64, b: C64| (a - b).norm() / b.norm();
    let mut forward = 0.0f64;
    let mut round_trip = 0.0f64;
    for m in 0..=5 {
        let w = point(&mut rng, 0.5..2.0);
        let f = conjugate_apply(|z| phi(m, z), w, &ray).map_or(f64::INFINITY, |v| rel(v, phi_tilde(m, w)));
        forward = forward.max(f);
        let z = point(&mut rng, 0.3..2.0);
        let back = conjugate_invert(|w| conjugate_apply(|z| phi(m, z), w, &ray).unwrap_or(C64::new(f64::NAN, 0.0)), z, &line);
        round_trip = round_trip.max(back.map_or(f64::INFINITY, |v| rel(v, phi(m, z))));
    }
    let mut oscillator = 0.0f64;
    for _ in 0..10 {
        let z0 = point(&mut rng, 0.1..1.0);
        let w = C64::from_polar(z0.norm() * 1.5 + 0.2, rng.gen_range(-3.0..3.0));
        let t = rng.gen_range(0.0..6.0);
        let closed = C64::from_polar(1.0, -t / 2.0) / (sqrt_2pi_i() * (w - z0 * C64::from_polar(1.0, -t)));
        let num = conjugate_apply(|z| oscillator_propagator(1.0, z, z0, t), w, &ray);
        oscillator = oscillator.max(num.map_or(f64::INFINITY, |v| rel(v, closed)));
    }
    vec![
        Check { name: "forward phi_m, m = 0..5", max_err: forward, tol: 1e-7 },
        Check { name: "round trip phi_m, m = 0..5", max_err: round_trip, tol: 1e-6 },
        Check { name: "oscillator K~, 10 points", max_err: oscillator, tol: 1e-6 },
    ]
}

/// `|m_vv|` along the continued VV family, plus the located caustic if there is one.
pub fn caustic_scan(model: &dyn Model, u_init: C64, v_final: C64, times: &[f64]) -> (Vec<Vec<String>>, Option<(f64, f64)>) {
    let opts = ContinuationOptions::default();
    let fam = continued_vv_family(model, u_init, v_final, times, &opts)
        .unwrap_or_else(|e| times.iter().map(|_| Err(e.clone())).collect());
    let rows = times
        .iter()
        .zip(&fam)
        .map(|(t, r)| match r {
            Ok(r) => vec![num(*t), num(r.m.m_vv.norm()), num(r.m.m_vv.re), num(r.m.m_vv.im), "ok".into()],
            Err(e) => vec![num(*t), String::new(), String::new(), String::new(), format!("error: {e}")],
        })
        .collect();
    let (lo, hi) = (times.first().copied().unwrap_or(0.0), times.last().copied().unwrap_or(0.0));
    let found = (hi > lo).then(|| locate_caustic(model, u_init, v_final, lo, hi, &opts).ok()).flatten();
    (rows, found.map(|c| (c.t_c, c.trajectory.m.m_vv.norm())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_checks_pass() {
        for c in transform_demo(1) {
            assert!(c.passed(), "{}: {:e}", c.name, c.max_err);
        }
    }
}
