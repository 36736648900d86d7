//! Coherent-state parameters, the `(q, p) <-> (u, v)` maps and labels.
//!
//! Coherent states are non-normalized throughout: `<z_f|z_0> = exp(z_f* z_0)`.

use num_complex::Complex64 as C64;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CoreError {
    #[error("invalid state parameters: {0}")]
    InvalidParams(String),
}

/// Widths and action unit of the coherent-state family, with `b c = hbar`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateParams {
    pub hbar: f64,
    pub b: f64,
    pub c: f64,
    /// Frequency `hbar / (m b^2)`; informational only.
    pub omega: f64,
}

impl StateParams {
    pub fn new(hbar: f64, b: f64, c: f64) -> Result<Self, CoreError> {
        Self::with_omega(hbar, b, c, 1.0)
    }

    pub fn with_omega(hbar: f64, b: f64, c: f64, omega: f64) -> Result<Self, CoreError> {
        for (name, x) in [("hbar", hbar), ("b", b), ("c", c)] {
            if !(x.is_finite() && x > 0.0) {
                return Err(CoreError::InvalidParams(format!("{name} must be positive, got {x}")));
            }
        }
        // b c = hbar up to the rounding of the product.
        if ((b * c - hbar) / hbar).abs() > 4.0 * f64::EPSILON {
            return Err(CoreError::InvalidParams(format!(
                "widths must satisfy b*c = hbar (b={b}, c={c}, hbar={hbar})"
            )));
        }
        Ok(Self { hbar, b, c, omega })
    }

    /// Widths `b = sqrt(hbar / (m omega))`, `c = sqrt(hbar m omega)` for a given mass.
    pub fn from_mass_frequency(hbar: f64, mass: f64, omega: f64) -> Result<Self, CoreError> {
        let b = (hbar / (mass * omega)).sqrt();
        Self::with_omega(hbar, b, hbar / b, omega)
    }
}

impl Default for StateParams {
    fn default() -> Self {
        Self { hbar: 1.0, b: 1.0, c: 1.0, omega: 1.0 }
    }
}

/// A point of complexified phase space in the dimensionless `(u, v)` variables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhasePoint {
    pub u: C64,
    pub v: C64,
}

impl PhasePoint {
    pub fn new(u: C64, v: C64) -> Self {
        Self { u, v }
    }

    /// `v = conj(u)`, i.e. the point comes from real `(q, p)`.
    pub fn is_real_phase(&self, tol: f64) -> bool {
        (self.v - self.u.conj()).norm() <= tol * (1.0 + self.u.norm())
    }
}

/// Coherent-state label `z = (q/b + i p/c)/sqrt(2)` with its real phase-space centre.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Label {
    pub q0: f64,
    pub p0: f64,
    pub z0: C64,
}

impl Label {
    pub fn from_qp(q0: f64, p0: f64, params: &StateParams) -> Self {
        let z0 = C64::new(q0 / params.b, p0 / params.c) / std::f64::consts::SQRT_2;
        Self { q0, p0, z0 }
    }

    pub fn from_z(z0: C64, params: &StateParams) -> Self {
        let s = std::f64::consts::SQRT_2;
        Self { q0: s * params.b * z0.re, p0: s * params.c * z0.im, z0 }
    }
}

pub fn uv_from_qp(q: C64, p: C64, params: &StateParams) -> PhasePoint {
    let a = q / params.b;
    let b = p / params.c;
    let s = std::f64::consts::FRAC_1_SQRT_2;
    PhasePoint { u: (a + C64::i() * b) * s, v: (a - C64::i() * b) * s }
}

pub fn qp_from_uv(pt: PhasePoint, params: &StateParams) -> (C64, C64) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let q = (pt.u + pt.v) * (s * params.b);
    let p = (pt.u - pt.v) * (-C64::i() * s * params.c);
    (q, p)
}

/// Non-normalized overlap `<z_f|z_0> = exp(conj(z_f) z_0)`.
pub fn overlap(zf: &Label, z0: &Label) -> C64 {
    (zf.z0.conj() * z0.z0).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const R2: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn position_axis_maps_to_equal_u_v() {
        let pt = uv_from_qp(C64::new(1.0, 0.0), C64::new(0.0, 0.0), &StateParams::default());
        assert!((pt.u - C64::new(R2, 0.0)).norm() < 1e-15);
        assert!((pt.v - C64::new(R2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn momentum_axis_maps_to_imaginary_pair() {
        let pt = uv_from_qp(C64::new(0.0, 0.0), C64::new(1.0, 0.0), &StateParams::default());
        assert!((pt.u - C64::new(0.0, R2)).norm() < 1e-15);
        assert!((pt.v - C64::new(0.0, -R2)).norm() < 1e-15);
    }

    #[test]
    fn inverse_map_of_known_points() {
        let p = StateParams::default();
        let (q, pp) = qp_from_uv(PhasePoint::new(C64::new(R2, 0.0), C64::new(R2, 0.0)), &p);
        assert!((q - C64::new(1.0, 0.0)).norm() < 1e-15 && pp.norm() < 1e-15);
        let (q, pp) = qp_from_uv(PhasePoint::new(C64::new(0.0, 0.0), C64::new(0.0, 0.0)), &p);
        assert_eq!((q, pp), (C64::new(0.0, 0.0), C64::new(0.0, 0.0)));
    }

    #[test]
    fn rejects_inconsistent_widths() {
        assert!(StateParams::new(1.0, 2.0, 1.0).is_err());
        assert!(StateParams::new(-1.0, 1.0, -1.0).is_err());
        assert!(StateParams::new(2.0, 4.0, 0.5).is_ok());
        let p = StateParams::from_mass_frequency(0.7, 2.0, 3.0).unwrap();
        assert!((p.b * p.c - 0.7).abs() < 1e-15);
    }

    #[test]
    fn overlap_values() {
        let p = StateParams::default();
        let zero = Label::from_z(C64::new(0.0, 0.0), &p);
        assert_eq!(overlap(&zero, &zero), C64::new(1.0, 0.0));
        let z = Label::from_z(C64::new(1.0 / (2.0 * 2f64.sqrt()), 0.0), &p);
        assert!((overlap(&z, &z) - C64::new((0.125f64).exp(), 0.0)).norm() < 1e-15);
    }

    #[test]
    fn real_points_have_conjugate_pair() {
        let p = StateParams::new(2.0, 0.5, 4.0).unwrap();
        let pt = uv_from_qp(C64::new(0.3, 0.0), C64::new(-1.7, 0.0), &p);
        assert!(pt.is_real_phase(0.0));
        let cq = uv_from_qp(C64::new(0.3, 0.1), C64::new(-1.7, 0.0), &p);
        assert!(!cq.is_real_phase(1e-12));
    }

    proptest! {
        #[test]
        fn qp_round_trip(qr in -5.0..5.0f64, qi in -5.0..5.0f64, pr in -5.0..5.0f64, pi in -5.0..5.0f64,
                         b in 0.2..3.0f64) {
            let params = StateParams::new(1.3, b, 1.3 / b).unwrap();
            let (q, p) = (C64::new(qr, qi), C64::new(pr, pi));
            let (q2, p2) = qp_from_uv(uv_from_qp(q, p, &params), &params);
            prop_assert!((q2 - q).norm() < 1e-14 * (1.0 + q.norm()));
            prop_assert!((p2 - p).norm() < 1e-14 * (1.0 + p.norm()));
        }

        #[test]
        fn label_recomputes_z(q in -5.0..5.0f64, p in -5.0..5.0f64) {
            let params = StateParams::new(0.5, 0.25, 2.0).unwrap();
            let l = Label::from_qp(q, p, &params);
            let l2 = Label::from_z(l.z0, &params);
            prop_assert!((l2.q0 - q).abs() < 1e-14 * (1.0 + q.abs()));
            prop_assert!((l2.p0 - p).abs() < 1e-14 * (1.0 + p.abs()));
        }
    }
}
