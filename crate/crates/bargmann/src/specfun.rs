//! Airy functions of complex argument and the closed-form cubic oscillatory integral.
//!
//! `Ai` is evaluated by the large-argument expansion for `|z| >= R_ASY` and by Taylor
//! integration of `y'' = z y` inside that disc: outward from the origin where `Ai` does
//! not decay along the ray, inward from the asymptotic circle in the decaying sector
//! `|arg z| < pi/3`. Both directions keep the wanted solution dominant, so no digits
//! are lost to cancellation.

use std::f64::consts::{FRAC_PI_3, PI};

use num_complex::Complex64 as C64;
use thiserror::Error;

/// Radius beyond which the asymptotic expansion is used directly.
pub const R_ASY: f64 = 9.0;
/// Inside this radius Taylor integration starts from the origin in every direction.
const R_ORIGIN: f64 = 2.5;
const AI0: f64 = 0.355_028_053_887_817_2;
const AIP0: f64 = -0.258_819_403_792_806_8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecfunError {
    #[error("Ai({z}) overflows; use airy_scaled")]
    Overflow { z: C64 },
    #[error("argument {z} outside the supported domain |z| < 1e4")]
    Domain { z: C64 },
}

/// Which solution of `y'' = z y` is meant: `Ai(z)`, `Ai(w z)` or `Ai(w^2 z)` with `w = e^{2 pi i/3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AiryBranch {
    Principal,
    RotPlus,
    RotMinus,
}

impl AiryBranch {
    /// Rotation factor `lambda` with the branch solution `Ai(lambda z)`.
    pub fn lambda(self) -> C64 {
        match self {
            AiryBranch::Principal => C64::new(1.0, 0.0),
            AiryBranch::RotPlus => C64::from_polar(1.0, 2.0 * PI / 3.0),
            AiryBranch::RotMinus => C64::from_polar(1.0, -2.0 * PI / 3.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AiryValue {
    /// `Ai(lambda z)`.
    pub ai: C64,
    /// `Ai'(lambda z)`, the derivative with respect to the full argument.
    pub ai_prime: C64,
    pub branch: AiryBranch,
}

/// `Ai` and `Ai'` multiplied by `exp(zeta)`, `zeta = (2/3) z^{3/2}` on the principal branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledAiry {
    pub ai: C64,
    pub ai_prime: C64,
    pub zeta: C64,
}

impl ScaledAiry {
    pub fn unscaled(&self) -> (C64, C64) {
        let e = (-self.zeta).exp();
        (self.ai * e, self.ai_prime * e)
    }
}

fn zeta(z: C64) -> C64 {
    z.powf(1.5) * (2.0 / 3.0)
}

/// One Taylor step of `y'' = z y` from `z0` by `h`.
fn taylor_step(z0: C64, y: C64, yp: C64, h: C64) -> (C64, C64) {
    // a_{k+2} = (z0 a_k + a_{k-1}) / ((k+1)(k+2))
    let mut a_km1 = C64::new(0.0, 0.0);
    let mut a_k = y;
    let mut a_k1 = yp;
    let mut hp = C64::new(1.0, 0.0);
    let mut val = C64::new(0.0, 0.0);
    let mut der = C64::new(0.0, 0.0);
    let mut small = 0;
    let scale = y.norm() + yp.norm() * h.norm() + 1e-300;
    for k in 0..400usize {
        let term = a_k * hp;
        val += term;
        der += a_k1 * hp * (k as f64 + 1.0);
        if term.norm() < 1e-18 * scale && (a_k1 * hp * h).norm() < 1e-18 * scale {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
        let a_k2 = (z0 * a_k + a_km1) / ((k as f64 + 1.0) * (k as f64 + 2.0));
        a_km1 = a_k;
        a_k = a_k1;
        a_k1 = a_k2;
        hp *= h;
    }
    (val, der)
}

fn integrate_line(from: C64, to: C64, mut y: C64, mut yp: C64) -> (C64, C64) {
    let d = to - from;
    let n = (d.norm() / 0.75).ceil().max(1.0) as usize;
    let h = d / n as f64;
    let mut z = from;
    for _ in 0..n {
        (y, yp) = taylor_step(z, y, yp, h);
        z += h;
    }
    (y, yp)
}

/// Large-`|z|` expansion valid for `|arg z| <= 2 pi/3`, scaled by `exp(zeta)`.
fn asymptotic_scaled(z: C64) -> (C64, C64) {
    let zt = zeta(z);
    let inv = 1.0 / zt;
    let mut u = 1.0f64;
    let mut sum_u = C64::new(1.0, 0.0);
    let mut sum_v = C64::new(1.0, 0.0);
    let mut p = C64::new(1.0, 0.0);
    let mut last = f64::INFINITY;
    for k in 1..200usize {
        let kf = k as f64;
        u *= (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0) / ((2.0 * kf - 1.0) * 216.0 * kf);
        let v = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u;
        p *= -inv;
        let tu = p * u;
        let mag = tu.norm();
        if mag > last {
            break;
        }
        sum_u += tu;
        sum_v += p * v;
        last = mag;
        if mag < 1e-17 {
            break;
        }
    }
    let z14 = z.powf(0.25);
    let pre = 1.0 / (2.0 * PI.sqrt());
    (sum_u * pre / z14, -sum_v * pre * z14)
}

/// Scaled principal `Ai`, `Ai'`, finite for every `|z| < 1e4`.
pub fn airy_scaled(z: C64) -> Result<ScaledAiry, SpecfunError> {
    if z.norm().is_nan() || z.norm() >= 1e4 {
        return Err(SpecfunError::Domain { z });
    }
    let zt = zeta(z);
    let r = z.norm();
    let th = z.arg();
    if r >= R_ASY {
        if th.abs() <= 2.0 * PI / 3.0 {
            let (a, ap) = asymptotic_scaled(z);
            return Ok(ScaledAiry { ai: a, ai_prime: ap, zeta: zt });
        }
        // Ai(z) = -w Ai(w z) - w^2 Ai(w^2 z); both rotated arguments lie in |arg| <= 2 pi/3.
        let w = AiryBranch::RotPlus.lambda();
        let w2 = AiryBranch::RotMinus.lambda();
        let mut ai = C64::new(0.0, 0.0);
        let mut aip = C64::new(0.0, 0.0);
        for (lam, coef) in [(w, -w), (w2, -w2)] {
            let zr = z * lam;
            let (a, ap) = asymptotic_scaled(zr);
            let f = (zt - zeta(zr)).exp();
            ai += coef * a * f;
            aip += coef * lam * ap * f;
        }
        return Ok(ScaledAiry { ai, ai_prime: aip, zeta: zt });
    }
    let (a, ap) = if r <= R_ORIGIN || th.abs() >= FRAC_PI_3 {
        integrate_line(C64::new(0.0, 0.0), z, C64::new(AI0, 0.0), C64::new(AIP0, 0.0))
    } else {
        let zr = C64::from_polar(R_ASY, th);
        let (sa, sap) = asymptotic_scaled(zr);
        // Carry the scale of the start point to keep magnitudes near one.
        let f = (zt - zeta(zr)).exp();
        let (a, ap) = integrate_line(zr, z, sa * f, sap * f);
        return Ok(ScaledAiry { ai: a, ai_prime: ap, zeta: zt });
    };
    let e = zt.exp();
    Ok(ScaledAiry { ai: a * e, ai_prime: ap * e, zeta: zt })
}

/// Principal `Ai(z)` and `Ai'(z)`.
pub fn airy(z: C64) -> Result<AiryValue, SpecfunError> {
    let s = airy_scaled(z)?;
    if -s.zeta.re > 700.0 {
        return Err(SpecfunError::Overflow { z });
    }
    let (ai, ai_prime) = s.unscaled();
    Ok(AiryValue { ai, ai_prime, branch: AiryBranch::Principal })
}

/// `Ai(lambda z)` and `Ai'(lambda z)` for the given branch.
pub fn airy_branch(z: C64, branch: AiryBranch) -> Result<AiryValue, SpecfunError> {
    let v = airy(z * branch.lambda())?;
    Ok(AiryValue { branch, ..v })
}

/// `Bi(z) = e^{i pi/6} Ai(w z) + e^{-i pi/6} Ai(w^2 z)` and its derivative.
pub fn airy_bi(z: C64) -> Result<(C64, C64), SpecfunError> {
    let (w, w2) = (AiryBranch::RotPlus.lambda(), AiryBranch::RotMinus.lambda());
    let a = airy(z * w)?;
    let b = airy(z * w2)?;
    let (ep, em) = (C64::from_polar(1.0, PI / 6.0), C64::from_polar(1.0, -PI / 6.0));
    Ok((ep * a.ai + em * b.ai, ep * w * a.ai_prime + em * w2 * b.ai_prime))
}

/// Contour family for the integral of `exp(i(X^3/3 - B X))`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ContourHint {
    /// The real-axis contour (valleys at `arg X = pi/6` and `5 pi/6`).
    Principal,
    /// Valleys at `5 pi/6` and `-pi/2`, giving `Ai(w y)`.
    RotPlus,
    /// Valleys at `-pi/2` and `pi/6`, giving `Ai(w^2 y)`.
    RotMinus,
    /// The class whose steepest-descent path passes through both saddles `X = +-B^{1/2}`.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubicIntegral {
    pub value: C64,
    pub branch: AiryBranch,
    /// Set when `Auto` met `-B` on a sector boundary and fell back to the principal class.
    pub on_stokes_line: bool,
}

/// Branch whose contour passes through both saddles for Airy argument `y = -B`.
pub fn two_saddle_branch(y: C64) -> (AiryBranch, bool) {
    if y.norm() == 0.0 {
        return (AiryBranch::Principal, false);
    }
    let mut best = (AiryBranch::Principal, f64::NEG_INFINITY);
    for b in [AiryBranch::Principal, AiryBranch::RotPlus, AiryBranch::RotMinus] {
        let a = (y * b.lambda()).arg().abs();
        if a > best.1 {
            best = (b, a);
        }
    }
    let margin = best.1 - 2.0 * PI / 3.0;
    if margin.abs() < 1e-12 * (1.0 + PI) {
        (AiryBranch::Principal, true)
    } else {
        (best.0, false)
    }
}

/// `(1/sqrt(2 pi)) int (c0 + c1 X) exp(i(A - B X + X^3/3)) dX` in closed form,
/// `sqrt(2 pi) e^{iA} lambda [c0 Ai(lambda y) - i c1 lambda Ai'(lambda y)]` with `y = -B`.
pub fn cubic_oscillatory_integral(
    a: C64,
    b: C64,
    c0: C64,
    c1: C64,
    hint: ContourHint,
) -> Result<CubicIntegral, SpecfunError> {
    let y = -b;
    let (branch, on_stokes_line) = match hint {
        ContourHint::Principal => (AiryBranch::Principal, false),
        ContourHint::RotPlus => (AiryBranch::RotPlus, false),
        ContourHint::RotMinus => (AiryBranch::RotMinus, false),
        ContourHint::Auto => two_saddle_branch(y),
    };
    let lam = branch.lambda();
    let i = C64::new(0.0, 1.0);
    let s = airy_scaled(y * lam)?;
    // Combine the exponentials before exponentiating so large |B| does not overflow.
    let expo = i * a - s.zeta;
    if expo.re > 700.0 {
        return Err(SpecfunError::Overflow { z: y * lam });
    }
    let e = expo.exp() * (2.0 * PI).sqrt() * lam;
    let value = e * (c0 * s.ai - i * c1 * lam * s.ai_prime);
    Ok(CubicIntegral { value, branch, on_stokes_line })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transforms::gauss_legendre;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn rel(a: C64, b: C64) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn values_at_origin() {
        let v = airy(c(0.0, 0.0)).unwrap();
        assert!((v.ai.re - 0.3550280539).abs() < 1e-10);
        assert!((v.ai_prime.re - (-0.2588194038)).abs() < 1e-10);
    }

    #[test]
    fn reference_values() {
        // Ai(1), Ai(-5), Ai(10), Ai'(-10)
        let cases = [
            (1.0, 0.135_292_416_312_881_4, -0.159_147_441_296_793_2),
            (-5.0, 0.350_761_009_024_114_2, 0.327_192_818_554_443_67),
            (10.0, 1.104_753_255_289_868_6e-10, -3.520_633_676_738_923_6e-10),
            (-10.0, 0.040_241_238_486_443_2, 0.996_265_044_132_79),
        ];
        for (x, ai, aip) in cases {
            let v = airy(c(x, 0.0)).unwrap();
            assert!(rel(v.ai, c(ai, 0.0)) < 1e-10, "Ai({x}) = {}", v.ai);
            assert!(rel(v.ai_prime, c(aip, 0.0)) < 1e-10, "Ai'({x}) = {}", v.ai_prime);
        }
    }

    #[test]
    fn real_on_real_axis() {
        for k in 0..=150 {
            let x = -10.0 + 0.1 * k as f64;
            let v = airy(c(x, 0.0)).unwrap();
            assert!(v.ai.im.abs() < 1e-12 * v.ai.norm().max(1.0), "x={x}");
        }
    }

    #[test]
    fn connection_and_wronskian() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (w, w2) = (AiryBranch::RotPlus.lambda(), AiryBranch::RotMinus.lambda());
        for _ in 0..200 {
            let z = C64::from_polar(rng.gen_range(0.0..8.0), rng.gen_range(-PI..PI));
            let a = airy(z).unwrap().ai;
            let b = airy(z * w).unwrap().ai;
            let d = airy(z * w2).unwrap().ai;
            let scale = a.norm() + b.norm() + d.norm();
            assert!((a + w * b + w2 * d).norm() < 1e-10 * scale, "z={z}");
            let v = airy(z).unwrap();
            let (bi, bip) = airy_bi(z).unwrap();
            let wr = v.ai * bip - v.ai_prime * bi;
            let sc = (v.ai * bip).norm() + (v.ai_prime * bi).norm();
            assert!((wr - 1.0 / PI).norm() < 1e-9 * sc.max(1.0), "z={z}");
        }
    }

    #[test]
    fn continuous_across_crossovers() {
        for k in 0..48 {
            let th = -PI + 2.0 * PI * (k as f64 + 0.5) / 48.0;
            for r in [R_ASY, R_ORIGIN] {
                let a = airy_scaled(C64::from_polar(r - 1e-3, th)).unwrap();
                let b = airy_scaled(C64::from_polar(r + 1e-3, th)).unwrap();
                let z = C64::from_polar(r, th);
                // Compare against the local Taylor continuation of the inner value.
                let (ua, uap) = a.unscaled();
                let (y, _) = taylor_step(C64::from_polar(r - 1e-3, th), ua, uap, z * (2e-3 / z.norm()));
                let (ub, _) = b.unscaled();
                assert!(rel(y, ub) < 1e-9, "r={r} th={th}");
            }
        }
    }

    #[test]
    fn large_argument_scaled_form() {
        let s = airy_scaled(c(-2000.0, 500.0)).unwrap();
        assert!(s.ai.norm().is_finite() && s.ai.norm() > 0.0);
        assert!(airy(c(-2000.0, 500.0)).is_err());
        let v = airy(c(50.0, 0.0)).unwrap();
        assert!(rel(v.ai, c(4.584_941_724_074_828_5e-104, 0.0)) < 1e-10, "{}", v.ai);
    }

    /// Straight-ray quadrature of the cubic integral along the valleys of the chosen class.
    pub(crate) fn cubic_quadrature(a: C64, b: C64, c0: C64, c1: C64, branch: AiryBranch) -> C64 {
        let (th_in, th_out) = match branch {
            AiryBranch::Principal => (5.0 * PI / 6.0, PI / 6.0),
            AiryBranch::RotPlus => (-PI / 2.0, 5.0 * PI / 6.0),
            AiryBranch::RotMinus => (PI / 6.0, -PI / 2.0),
        };
        let i = C64::new(0.0, 1.0);
        let f = |x: C64| (c0 + c1 * x) * (i * (a - b * x + x * x * x / 3.0)).exp();
        let (nodes, weights) = gauss_legendre(40);
        let mut total = C64::new(0.0, 0.0);
        for (th, sign) in [(th_in, -1.0), (th_out, 1.0)] {
            let dir = C64::from_polar(1.0, th);
            let edges: Vec<f64> = (0..=120).map(|k| 12.0 * k as f64 / 120.0).collect();
            for w in edges.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                for (x, wt) in nodes.iter().zip(&weights) {
                    let r = 0.5 * (hi - lo) * x + 0.5 * (hi + lo);
                    total += f(dir * r) * dir * (0.5 * (hi - lo) * wt * sign);
                }
            }
        }
        total / (2.0 * PI).sqrt()
    }

    #[test]
    fn cubic_integral_reductions() {
        let v = cubic_oscillatory_integral(c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), ContourHint::Principal).unwrap();
        assert!(rel(v.value, c((2.0 * PI).sqrt() * AI0, 0.0)) < 1e-14);
        let b = c(2.3, 0.0);
        let v = cubic_oscillatory_integral(c(0.4, 0.0), b, c(1.0, 0.0), c(0.0, 0.0), ContourHint::Principal).unwrap();
        let q = cubic_quadrature(c(0.4, 0.0), b, c(1.0, 0.0), c(0.0, 0.0), AiryBranch::Principal);
        assert!(rel(v.value, q) < 1e-6);
        let auto = cubic_oscillatory_integral(c(0.4, 0.0), b, c(1.0, 0.0), c(0.0, 0.0), ContourHint::Auto).unwrap();
        assert_eq!(auto.branch, AiryBranch::Principal);
    }

    #[test]
    fn closed_form_matches_quadrature_on_random_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(26);
        for _ in 0..200 {
            let a = c(rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5));
            let b = C64::from_polar(rng.gen_range(0.0..4.0), rng.gen_range(-PI..PI));
            let c0 = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let c1 = c(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            for (hint, br) in [
                (ContourHint::Principal, AiryBranch::Principal),
                (ContourHint::RotPlus, AiryBranch::RotPlus),
                (ContourHint::RotMinus, AiryBranch::RotMinus),
            ] {
                let v = cubic_oscillatory_integral(a, b, c0, c1, hint).unwrap();
                let q = cubic_quadrature(a, b, c0, c1, br);
                assert!((v.value - q).norm() < 1e-6 * q.norm().max(1e-3), "a={a} b={b} {br:?}: {} vs {q}", v.value);
            }
        }
    }

    proptest! {
        #[test]
        fn derivative_matches_finite_difference(r in 0.0..20.0f64, th in -PI..PI) {
            let z = C64::from_polar(r, th);
            let s = airy_scaled(z).unwrap();
            let h = 1e-4;
            let up = airy_scaled(z + h).unwrap();
            let dn = airy_scaled(z - h).unwrap();
            // Central difference of Ai, brought to the scale of the centre point.
            let fd = (up.ai * (s.zeta - up.zeta).exp() - dn.ai * (s.zeta - dn.zeta).exp()) / (2.0 * h);
            prop_assert!((fd - s.ai_prime).norm() < 1e-6 * (s.ai_prime.norm() + s.ai.norm() * z.norm().sqrt() + 1e-3));
        }
    }
}
