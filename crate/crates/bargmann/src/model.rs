//! Hamiltonians as smooth symbols `H(u, v) = <v|H|u> / <v|u>` with their 2-jets.
//!
//! Number-diagonal models (functions of `a†a` only) depend on `(u, v)` through
//! `n = u v` and expose the scalar function `F(n)` for closed-form flows.

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::core::StateParams;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("symbol is not finite at u={u}, v={v}")]
    NonFinite { u: C64, v: C64 },
    #[error("unknown model id `{0}`")]
    UnknownId(String),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
}

/// Value and all first and second partials of a symbol at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolJet {
    pub h: C64,
    pub h_u: C64,
    pub h_v: C64,
    pub h_uu: C64,
    pub h_uv: C64,
    pub h_vv: C64,
}

impl SymbolJet {
    pub fn is_finite(&self) -> bool {
        [self.h, self.h_u, self.h_v, self.h_uu, self.h_uv, self.h_vv]
            .iter()
            .all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// `H = F(n)` with `n = u v`; `eigenvalue(m) = F` evaluated on the Fock state `|m>`.
pub trait NumberSymbol: Send + Sync {
    /// `[F(n), F'(n), F''(n)]`.
    fn f(&self, n: C64) -> [C64; 3];
    fn eigenvalue(&self, m: usize) -> f64;
}

pub trait Model: Send + Sync {
    fn id(&self) -> &str;
    fn hbar(&self) -> f64;
    fn jet(&self, u: C64, v: C64) -> Result<SymbolJet, ModelError>;
    /// Closed-form structure for number-diagonal models.
    fn number_symbol(&self) -> Option<&dyn NumberSymbol> {
        None
    }
    /// Matrix element `<m|H|k>` in the Fock basis.
    fn fock_element(&self, m: usize, k: usize) -> C64;
    /// `omega` when the model is `hbar omega (a†a + 1/2)`, enabling closed-form propagators.
    fn oscillator_frequency(&self) -> Option<f64> {
        None
    }
}

fn jet_from_number(sym: &dyn NumberSymbol, u: C64, v: C64) -> Result<SymbolJet, ModelError> {
    let [f, f1, f2] = sym.f(u * v);
    let jet = SymbolJet {
        h: f,
        h_u: f1 * v,
        h_v: f1 * u,
        h_uu: f2 * v * v,
        h_uv: f1 + f2 * u * v,
        h_vv: f2 * u * u,
    };
    if jet.is_finite() {
        Ok(jet)
    } else {
        Err(ModelError::NonFinite { u, v })
    }
}

/// `H = hbar omega (a†a + 1/2)`, symbol `hbar omega (u v + 1/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicOscillator {
    pub hbar: f64,
    pub omega: f64,
}

impl HarmonicOscillator {
    pub fn new(hbar: f64, omega: f64) -> Self {
        Self { hbar, omega }
    }
}

impl NumberSymbol for HarmonicOscillator {
    fn f(&self, n: C64) -> [C64; 3] {
        let e = self.hbar * self.omega;
        [(n + 0.5) * e, C64::new(e, 0.0), C64::new(0.0, 0.0)]
    }
    fn eigenvalue(&self, m: usize) -> f64 {
        self.hbar * self.omega * (m as f64 + 0.5)
    }
}

impl Model for HarmonicOscillator {
    fn id(&self) -> &str {
        "ho"
    }
    fn oscillator_frequency(&self) -> Option<f64> {
        Some(self.omega)
    }
    fn hbar(&self) -> f64 {
        self.hbar
    }
    fn jet(&self, u: C64, v: C64) -> Result<SymbolJet, ModelError> {
        jet_from_number(self, u, v)
    }
    fn number_symbol(&self) -> Option<&dyn NumberSymbol> {
        Some(self)
    }
    fn fock_element(&self, m: usize, k: usize) -> C64 {
        if m == k {
            C64::new(self.eigenvalue(m), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }
}

/// `H = scale (a†a + 1/2)^2`, symbol `scale ((u v)^2 + 2 u v + 1/4)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuarticNumber {
    pub hbar: f64,
    pub scale: f64,
}

impl QuarticNumber {
    pub fn new(hbar: f64, scale: f64) -> Self {
        Self { hbar, scale }
    }
}

impl NumberSymbol for QuarticNumber {
    fn f(&self, n: C64) -> [C64; 3] {
        let s = self.scale;
        [(n * n + n * 2.0 + 0.25) * s, (n * 2.0 + 2.0) * s, C64::new(2.0 * s, 0.0)]
    }
    fn eigenvalue(&self, m: usize) -> f64 {
        let x = m as f64 + 0.5;
        self.scale * x * x
    }
}

impl Model for QuarticNumber {
    fn id(&self) -> &str {
        "quartic-number"
    }
    fn hbar(&self) -> f64 {
        self.hbar
    }
    fn jet(&self, u: C64, v: C64) -> Result<SymbolJet, ModelError> {
        jet_from_number(self, u, v)
    }
    fn number_symbol(&self) -> Option<&dyn NumberSymbol> {
        Some(self)
    }
    fn fock_element(&self, m: usize, k: usize) -> C64 {
        if m == k {
            C64::new(self.eigenvalue(m), 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    }
}

/// Normal-ordered polynomial `H = sum c_jk (a†)^j a^k`, symbol `sum c_jk v^j u^k`.
///
/// Hermiticity (`c_kj = conj(c_jk)`) is the caller's responsibility.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalOrdered {
    pub hbar: f64,
    pub terms: Vec<(u32, u32, C64)>,
}

impl NormalOrdered {
    pub fn new(hbar: f64, terms: Vec<(u32, u32, C64)>) -> Self {
        Self { hbar, terms }
    }
}

fn powi(z: C64, k: u32) -> C64 {
    z.powu(k)
}

impl Model for NormalOrdered {
    fn id(&self) -> &str {
        "normal-ordered"
    }
    fn hbar(&self) -> f64 {
        self.hbar
    }
    fn jet(&self, u: C64, v: C64) -> Result<SymbolJet, ModelError> {
        let zero = C64::new(0.0, 0.0);
        let mut jet = SymbolJet { h: zero, h_u: zero, h_v: zero, h_uu: zero, h_uv: zero, h_vv: zero };
        for &(j, k, c) in &self.terms {
            let (jf, kf) = (j as f64, k as f64);
            let vj = powi(v, j);
            let uk = powi(u, k);
            let vj1 = if j >= 1 { powi(v, j - 1) } else { zero };
            let uk1 = if k >= 1 { powi(u, k - 1) } else { zero };
            let vj2 = if j >= 2 { powi(v, j - 2) } else { zero };
            let uk2 = if k >= 2 { powi(u, k - 2) } else { zero };
            jet.h += c * vj * uk;
            jet.h_u += c * vj * uk1 * kf;
            jet.h_v += c * vj1 * uk * jf;
            jet.h_uu += c * vj * uk2 * (kf * (kf - 1.0));
            jet.h_uv += c * vj1 * uk1 * (jf * kf);
            jet.h_vv += c * vj2 * uk * (jf * (jf - 1.0));
        }
        if jet.is_finite() {
            Ok(jet)
        } else {
            Err(ModelError::NonFinite { u, v })
        }
    }
    fn fock_element(&self, m: usize, k: usize) -> C64 {
        // <m|(a†)^j a^l|k> = sqrt(k!/(k-l)!) sqrt(m!/(m-j)!) when m - j = k - l >= 0.
        let mut acc = C64::new(0.0, 0.0);
        for &(j, l, c) in &self.terms {
            let (j, l) = (j as usize, l as usize);
            if k < l || m < j || m - j != k - l {
                continue;
            }
            let mut w = 1.0f64;
            for i in (k - l + 1)..=k {
                w *= i as f64;
            }
            for i in (m - j + 1)..=m {
                w *= i as f64;
            }
            acc += c * w.sqrt();
        }
        acc
    }
}

/// Builds a model from its CLI/config id.
pub fn model_from_id(id: &str, params: &StateParams, omega: f64) -> Result<Box<dyn Model>, ModelError> {
    match id {
        "ho" => {
            if !(omega.is_finite() && omega > 0.0) {
                return Err(ModelError::InvalidParameter(format!("omega must be positive, got {omega}")));
            }
            Ok(Box::new(HarmonicOscillator::new(params.hbar, omega)))
        }
        "quartic-number" => Ok(Box::new(QuarticNumber::new(params.hbar, 1.0))),
        other => Err(ModelError::UnknownId(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn oscillator_symbol_at_origin() {
        let m = HarmonicOscillator::new(1.0, 1.3);
        let j = m.jet(c(0.0, 0.0), c(0.0, 0.0)).unwrap();
        assert!((j.h - c(0.65, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn quartic_symbol_values() {
        let m = QuarticNumber::new(1.0, 1.0);
        let j = m.jet(c(0.0, 0.0), c(0.0, 0.0)).unwrap();
        assert!((j.h - c(0.25, 0.0)).norm() < 1e-15);
        let j = m.jet(c(1.0, 0.0), c(1.0, 0.0)).unwrap();
        assert!((j.h_uv - c(6.0, 0.0)).norm() < 1e-14);
    }

    #[test]
    fn normal_ordered_matches_quartic() {
        // (a†a + 1/2)^2 = (a†)^2 a^2 + 2 a†a + 1/4
        let no = NormalOrdered::new(1.0, vec![(2, 2, c(1.0, 0.0)), (1, 1, c(2.0, 0.0)), (0, 0, c(0.25, 0.0))]);
        let q = QuarticNumber::new(1.0, 1.0);
        let (u, v) = (c(0.3, -0.7), c(1.1, 0.4));
        let (a, b) = (no.jet(u, v).unwrap(), q.jet(u, v).unwrap());
        for (x, y) in [(a.h, b.h), (a.h_u, b.h_u), (a.h_v, b.h_v), (a.h_uu, b.h_uu), (a.h_uv, b.h_uv), (a.h_vv, b.h_vv)] {
            assert!((x - y).norm() < 1e-13);
        }
        for m in 0..6 {
            assert!((no.fock_element(m, m) - c(q.eigenvalue(m), 0.0)).norm() < 1e-12);
            assert_eq!(no.fock_element(m, m + 1), c(0.0, 0.0));
        }
    }

    #[test]
    fn ids_resolve() {
        let p = StateParams::default();
        assert_eq!(model_from_id("ho", &p, 2.0).unwrap().id(), "ho");
        assert_eq!(model_from_id("quartic-number", &p, 1.0).unwrap().id(), "quartic-number");
        assert!(model_from_id("duffing", &p, 1.0).is_err());
        assert!(model_from_id("ho", &p, -1.0).is_err());
    }

    fn fd_check(model: &dyn Model, u: C64, v: C64) -> f64 {
        let h = 1e-5;
        let j = model.jet(u, v).unwrap();
        let du = |uu: C64, vv: C64| model.jet(uu, vv).unwrap();
        let hu = c(h, 0.0);
        let uu = (du(u + hu, v).h_u - du(u - hu, v).h_u) / (2.0 * h);
        let uv = (du(u, v + hu).h_u - du(u, v - hu).h_u) / (2.0 * h);
        let vv = (du(u, v + hu).h_v - du(u, v - hu).h_v) / (2.0 * h);
        let hu1 = (du(u + hu, v).h - du(u - hu, v).h) / (2.0 * h);
        let scale = 1.0 + j.h_uv.norm() + j.h_uu.norm() + j.h_vv.norm();
        [(uu - j.h_uu).norm(), (uv - j.h_uv).norm(), (vv - j.h_vv).norm(), (hu1 - j.h_u).norm() / (1.0 + j.h_u.norm())]
            .iter()
            .fold(0.0f64, |a, &b| a.max(b))
            / scale
    }

    proptest! {
        #[test]
        fn jets_match_finite_differences(ur in -1.5..1.5f64, ui in -1.5..1.5f64, vr in -1.5..1.5f64, vi in -1.5..1.5f64) {
            let (u, v) = (c(ur, ui), c(vr, vi));
            let models: Vec<Box<dyn Model>> = vec![
                Box::new(HarmonicOscillator::new(0.7, 1.9)),
                Box::new(QuarticNumber::new(1.0, 1.0)),
                Box::new(NormalOrdered::new(1.0, vec![(2, 0, c(0.3, 0.1)), (0, 2, c(0.3, -0.1)), (3, 1, c(0.2, 0.0)), (1, 3, c(0.2, 0.0))])),
            ];
            for m in &models {
                prop_assert!(fd_check(m.as_ref(), u, v) < 1e-6);
            }
        }

        #[test]
        fn number_diagonal_symbols_are_gauge_invariant(ur in -1.5..1.5f64, ui in -1.5..1.5f64, vr in -1.5..1.5f64, vi in -1.5..1.5f64,
                                                     lr in 0.2..3.0f64, la in -3.0..3.0f64) {
            let (u, v) = (c(ur, ui), c(vr, vi));
            let lam = C64::from_polar(lr, la);
            let q = QuarticNumber::new(1.0, 1.0);
            let a = q.jet(u, v).unwrap().h;
            let b = q.jet(u * lam, v / lam).unwrap().h;
            prop_assert!((a - b).norm() < 1e-12 * (1.0 + a.norm()));
        }
    }
}
