//! Exact propagators for validation: closed forms for the oscillator, Fock-basis sums for
//! number-diagonal models and a truncated matrix exponential otherwise.
//!
//! `K(z_f*, z_0, T) = <z_f| e^{-i H T/hbar} |z_0>` with non-normalized coherent states.

use std::cell::RefCell;

use num_complex::Complex64 as C64;
use thiserror::Error;

use crate::core::Label;
use crate::model::Model;
use crate::transforms::{conjugate_apply, sqrt_2pi_i, ContourSpec, TransformError};

/// Hard cap on the Fock truncation.
pub const MAX_FOCK: usize = 512;
const I: C64 = C64 { re: 0.0, im: 1.0 };

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("Fock sum not converged within N={cap} (need N >= {required})")]
    NotConverged { required: usize, cap: usize },
    #[error("w is within {distance:e} of the pole z0 e^(-i omega T)")]
    Pole { distance: f64 },
    #[error(transparent)]
    Transform(#[from] TransformError),
}

/// Smallest `N` with `x^N/N! < rel * partial sum of the exponential series` for `x = |arg|`.
pub fn fock_truncation(x: f64, rel: f64) -> Result<usize, OracleError> {
    let mut term = 1.0f64;
    let mut sum = 1.0f64;
    for n in 1..=MAX_FOCK {
        term *= x / n as f64;
        sum += term;
        if (n as f64) > x && term < rel * sum {
            return Ok(n);
        }
    }
    Err(OracleError::NotConverged { required: (x.ceil() as usize).max(MAX_FOCK + 1), cap: MAX_FOCK })
}

/// `e^{x e^{-i omega T} - i omega T/2}`.
pub fn oscillator_propagator(omega: f64, zf_star: C64, z0: C64, t: f64) -> C64 {
    (zf_star * z0 * C64::from_polar(1.0, -omega * t) - I * (0.5 * omega * t)).exp()
}

/// `sum_m x^m/m! e^{-i E_m T/hbar}` truncated at `n`.
fn fock_sum(eig: impl Fn(usize) -> f64, hbar: f64, x: C64, t: f64, n: usize) -> C64 {
    let mut term = C64::new(1.0, 0.0);
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..=n {
        if m > 0 {
            term *= x / m as f64;
        }
        acc += term * C64::from_polar(1.0, -eig(m) * t / hbar);
    }
    acc
}

/// Complex matrix stored row-major.
#[derive(Clone)]
struct Mat {
    n: usize,
    a: Vec<C64>,
}

impl Mat {
    fn identity(n: usize) -> Self {
        let mut a = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            a[i * n + i] = C64::new(1.0, 0.0);
        }
        Self { n, a }
    }
    fn mul(&self, o: &Mat) -> Mat {
        let n = self.n;
        let mut out = vec![C64::new(0.0, 0.0); n * n];
        for i in 0..n {
            for k in 0..n {
                let x = self.a[i * n + k];
                if x.norm_sqr() == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out[i * n + j] += x * o.a[k * n + j];
                }
            }
        }
        Mat { n, a: out }
    }
    fn norm1(&self) -> f64 {
        (0..self.n).map(|j| (0..self.n).map(|i| self.a[i * self.n + j].norm()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// `exp(A)` by scaling and squaring with a Taylor core.
fn expm(a: &Mat) -> Mat {
    let nrm = a.norm1();
    let s = if nrm > 0.5 { (nrm / 0.5).log2().ceil() as u32 } else { 0 };
    let scale = 0.5f64.powi(s as i32);
    let mut x = a.clone();
    x.a.iter_mut().for_each(|z| *z *= scale);
    let mut result = Mat::identity(a.n);
    let mut term = Mat::identity(a.n);
    for k in 1..=30 {
        term = term.mul(&x);
        term.a.iter_mut().for_each(|z| *z /= k as f64);
        for (r, t) in result.a.iter_mut().zip(&term.a) {
            *r += t;
        }
        if term.norm1() < 1e-18 {
            break;
        }
    }
    for _ in 0..s {
        result = result.mul(&result);
    }
    result
}

fn matrix_kernel(model: &dyn Model, zf_star: C64, z0: C64, t: f64, n: usize) -> C64 {
    let h = model.hbar();
    let mut a = Mat { n, a: vec![C64::new(0.0, 0.0); n * n] };
    for i in 0..n {
        for j in 0..n {
            a.a[i * n + j] = -I * model.fock_element(i, j) * (t / h);
        }
    }
    let u = expm(&a);
    let mut left = vec![C64::new(1.0, 0.0); n];
    let mut right = vec![C64::new(1.0, 0.0); n];
    for m in 1..n {
        left[m] = left[m - 1] * zf_star / (m as f64).sqrt();
        right[m] = right[m - 1] * z0 / (m as f64).sqrt();
    }
    left.iter()
        .zip(u.a.chunks(n))
        .map(|(l, row)| l * row.iter().zip(&right).map(|(x, r)| x * r).sum::<C64>())
        .sum()
}

/// Exact `K` as a function of the complex final label `zf*`.
pub fn exact_kernel(model: &dyn Model, zf_star: C64, z0: C64, t: f64) -> Result<C64, OracleError> {
    if let Some(omega) = model.oscillator_frequency() {
        return Ok(oscillator_propagator(omega, zf_star, z0, t));
    }
    let x = zf_star * z0;
    if let Some(sym) = model.number_symbol() {
        let n = fock_truncation(x.norm(), 1e-16)?;
        return Ok(fock_sum(|m| sym.eigenvalue(m), model.hbar(), x, t, n));
    }
    // Truncated matrix exponential, doubled until two sizes agree.
    let r = zf_star.norm().max(z0.norm());
    let mut n = (fock_truncation(r * r, 1e-16)? + 8).min(MAX_FOCK / 2);
    let mut prev = matrix_kernel(model, zf_star, z0, t, n);
    while 2 * n <= MAX_FOCK / 2 {
        n *= 2;
        let cur = matrix_kernel(model, zf_star, z0, t, n);
        if (cur - prev).norm() < 1e-12 * cur.norm().max(1e-300) {
            return Ok(cur);
        }
        prev = cur;
    }
    Err(OracleError::NotConverged { required: 2 * n, cap: MAX_FOCK / 2 })
}

/// Exact propagator between labels.
pub fn exact_propagator(model: &dyn Model, z0: &Label, zf: &Label, t: f64) -> Result<C64, OracleError> {
    exact_kernel(model, zf.z0.conj(), z0.z0, t)
}

/// Exact conjugate propagator `K~(w, z0, T)`: closed form for the oscillator, numerical
/// conjugate application of the exact kernel otherwise.
pub fn exact_conjugate(model: &dyn Model, w: C64, z0: &Label, t: f64) -> Result<C64, OracleError> {
    if let Some(omega) = model.oscillator_frequency() {
        let pole = z0.z0 * C64::from_polar(1.0, -omega * t);
        let d = (w - pole).norm();
        if d < 1e-8 {
            return Err(OracleError::Pole { distance: d });
        }
        return Ok(C64::from_polar(1.0, -0.5 * omega * t) / (sqrt_2pi_i() * (w - pole)));
    }
    let err = RefCell::new(None);
    let v = conjugate_apply(
        |zs| match exact_kernel(model, zs, z0.z0, t) {
            Ok(k) => k,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                C64::new(f64::NAN, 0.0)
            }
        },
        w,
        &ContourSpec::ray(),
    );
    // A truncation failure inside the integrand takes precedence over the transform's report.
    match (err.into_inner(), v) {
        (Some(e), _) => Err(e),
        (None, v) => Ok(v?),
    }
}

/// The smooth symbol `<v|H|u>/<v|u>` summed in the Fock basis.
pub fn fock_symbol(model: &dyn Model, u: C64, v: C64) -> Result<C64, OracleError> {
    let r = u.norm().max(v.norm());
    let n = fock_truncation(r * r, 1e-18)?;
    let mut pu = vec![C64::new(1.0, 0.0); n + 1];
    let mut pv = vec![C64::new(1.0, 0.0); n + 1];
    for m in 1..=n {
        pu[m] = pu[m - 1] * u / (m as f64).sqrt();
        pv[m] = pv[m - 1] * v / (m as f64).sqrt();
    }
    let diagonal = model.number_symbol().is_some();
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..=n {
        if diagonal {
            acc += pv[m] * pu[m] * model.fock_element(m, m);
            continue;
        }
        for (k, p) in pu.iter().enumerate().take(n + 1) {
            let h = model.fock_element(m, k);
            if h.norm_sqr() != 0.0 {
                acc += pv[m] * h * p;
            }
        }
    }
    Ok(acc * (-u * v).exp())
}
