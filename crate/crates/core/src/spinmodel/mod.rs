//! CPMG coherence of an NV electron spin coupled to 13C nuclear spins.
//!
//! Couplings are angular frequencies (rad/s) internally; constructors that
//! take kHz convert at the boundary. For one nucleus the conditional
//! Hamiltonians are `H0 = wL Iz` (electron in |0>) and
//! `H1 = (A + wL) Iz + B Ix` (electron in |1>). The closed form here is
//! checked against the direct unitary evolution in [`oracle`].

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub mod oracle;
pub mod trace;

pub use oracle::{px_oracle, px_oracle_multi};
pub use trace::{sample_counts, sample_trace, Contrast, CpmgTrace, TracePoint, TraceError};

/// 13C gyromagnetic ratio, Hz per gauss.
pub const GAMMA_C13_HZ_PER_GAUSS: f64 = 1070.5;

/// Default coupling bound, |A|, |B| < 1 MHz, in rad/s.
pub const DEFAULT_COUPLING_BOUND: f64 = TAU * 1.0e6;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpinError {
    #[error("tau must be positive and finite, got {0} s")]
    BadTau(f64),
    #[error("number of pulses must be at least 1")]
    NoPulses,
    #[error("resonance index must be at least 1")]
    BadHarmonic,
    #[error("A + 2 wL must be positive, got {0} rad/s")]
    NonPositiveDenominator(f64),
    #[error("field must be positive, got {0} G")]
    BadField(f64),
    #[error("coupling ({a_khz:.3}, {b_khz:.3}) kHz outside bound {bound_khz:.3} kHz")]
    OutOfBound { a_khz: f64, b_khz: f64, bound_khz: f64 },
    #[error("decoherence parameters invalid: {0}")]
    BadDecoherence(String),
    #[error("contrast needs c0 > c1 >= 0, got c0 = {c0}, c1 = {c1}")]
    BadContrast { c0: f64, c1: f64 },
    #[error("shots must be at least 1")]
    NoShots,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub b_field_gauss: f64,
    #[serde(default = "default_gamma")]
    pub gamma_c13: f64,
}

fn default_gamma() -> f64 {
    GAMMA_C13_HZ_PER_GAUSS
}

impl FieldConfig {
    pub fn new(b_field_gauss: f64) -> Result<Self, SpinError> {
        Self::with_gamma(b_field_gauss, GAMMA_C13_HZ_PER_GAUSS)
    }

    pub fn with_gamma(b_field_gauss: f64, gamma_c13: f64) -> Result<Self, SpinError> {
        if !(b_field_gauss > 0.0 && b_field_gauss.is_finite() && gamma_c13 > 0.0) {
            return Err(SpinError::BadField(b_field_gauss));
        }
        Ok(FieldConfig { b_field_gauss, gamma_c13 })
    }

    /// Nuclear Larmor angular frequency, rad/s.
    pub fn omega_l(&self) -> f64 {
        TAU * self.gamma_c13 * self.b_field_gauss
    }

    /// Larmor frequency in kHz.
    pub fn larmor_khz(&self) -> f64 {
        self.gamma_c13 * self.b_field_gauss * 1e-3
    }
}

/// Parallel and perpendicular hyperfine components, rad/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HyperfinePair {
    pub a_par: f64,
    pub b_perp: f64,
}

impl HyperfinePair {
    pub fn new(a_par: f64, b_perp: f64) -> Self {
        HyperfinePair { a_par, b_perp }
    }

    pub fn from_khz(a_khz: f64, b_khz: f64) -> Self {
        HyperfinePair { a_par: TAU * a_khz * 1e3, b_perp: TAU * b_khz * 1e3 }
    }

    /// Construct from kHz and check `|A| < bound`, `0 <= B < bound` (bound in rad/s).
    pub fn checked_khz(a_khz: f64, b_khz: f64, bound: f64) -> Result<Self, SpinError> {
        let p = Self::from_khz(a_khz, b_khz);
        if !(p.a_par.abs() < bound && p.b_perp >= 0.0 && p.b_perp < bound) {
            return Err(SpinError::OutOfBound { a_khz, b_khz, bound_khz: bound / TAU * 1e-3 });
        }
        Ok(p)
    }

    pub fn a_khz(&self) -> f64 {
        self.a_par / TAU * 1e-3
    }

    pub fn b_khz(&self) -> f64 {
        self.b_perp / TAU * 1e-3
    }
}

/// Electron decoherence envelope parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoherenceModel {
    pub t1: f64,
    pub t2: f64,
    pub stretch_p: f64,
}

impl DecoherenceModel {
    pub fn new(t1: f64, t2: f64, stretch_p: f64) -> Result<Self, SpinError> {
        if !(t1 > 0.0 && t2 > 0.0) {
            return Err(SpinError::BadDecoherence(format!("t1 = {t1}, t2 = {t2} must be positive")));
        }
        if !(0.5..=3.0).contains(&stretch_p) {
            return Err(SpinError::BadDecoherence(format!("stretch exponent {stretch_p} outside [0.5, 3]")));
        }
        Ok(DecoherenceModel { t1, t2, stretch_p })
    }

    /// Multiplier on the coherent part after total free evolution `2 N tau`.
    pub fn envelope(&self, tau: f64, n_pulses: u32) -> f64 {
        let t = 2.0 * f64::from(n_pulses) * tau;
        (-(t / self.t2).powf(self.stretch_p)).exp() * (-t / self.t1).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpinSystem {
    pub field: FieldConfig,
    pub spins: Vec<HyperfinePair>,
    pub decoherence: Option<DecoherenceModel>,
}

fn check_args(tau: f64, n_pulses: u32) -> Result<(), SpinError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SpinError::BadTau(tau));
    }
    if n_pulses == 0 {
        return Err(SpinError::NoPulses);
    }
    Ok(())
}

/// Probability of finding the electron back along +x after `n_pulses`
/// tau-pi-tau units, nuclear spin unpolarised.
pub fn px_analytic(spin: &HyperfinePair, field: &FieldConfig, tau: f64, n_pulses: u32) -> Result<f64, SpinError> {
    check_args(tau, n_pulses)?;
    Ok(0.5 * (1.0 + coherence(spin.a_par, spin.b_perp, field.omega_l(), tau, n_pulses)))
}

/// Coherence factor M for one nucleus; P_x = (1 + M) / 2.
///
/// Even N uses the two-pulse unit V = exp(-iH0 tau) exp(-iH1 2tau) exp(-iH0 tau)
/// with `cos phi = cos a cos b - mz sin a sin b` and
/// `1 - n0.n1 = mx^2 (1 - cos a)(1 - cos b) / (1 + cos phi)`, where
/// `a = w~ tau`, `b = wL tau`, `w~ = |(A + wL, B)|`. Odd N composes the
/// leftover single unit explicitly.
pub fn coherence(a_par: f64, b_perp: f64, omega_l: f64, tau: f64, n_pulses: u32) -> f64 {
    if b_perp == 0.0 {
        return 1.0;
    }
    let h1z = a_par + omega_l;
    let wt = h1z.hypot(b_perp);
    let (mz, mx) = (h1z / wt, b_perp / wt);
    let alpha = wt * tau;
    let beta = omega_l * tau;
    if n_pulses % 2 == 1 {
        return coherence_odd(mz, mx, alpha, beta, n_pulses);
    }
    let (sa, ca) = alpha.sin_cos();
    let (sb, cb) = beta.sin_cos();
    let cos_phi = (ca * cb - mz * sa * sb).clamp(-1.0, 1.0);
    let phi = cos_phi.acos();
    let ha = (0.5 * alpha).sin();
    let hb = (0.5 * beta).sin();
    let num = 4.0 * mx * mx * ha * ha * hb * hb;
    let den = 1.0 + cos_phi;
    let one_minus_dot = if den > 1e-300 { (num / den).min(2.0) } else { 0.0 };
    let s = (0.5 * f64::from(n_pulses) * phi).sin();
    1.0 - one_minus_dot * s * s
}

/// SU(2) element `w - i v.sigma`.
#[derive(Debug, Clone, Copy)]
struct Rot {
    w: f64,
    v: [f64; 3],
}

impl Rot {
    /// exp(-i angle/2 axis.sigma)
    fn about(axis: [f64; 3], angle: f64) -> Rot {
        let (s, c) = (0.5 * angle).sin_cos();
        Rot { w: c, v: [s * axis[0], s * axis[1], s * axis[2]] }
    }

    /// Operator product `self * rhs` (rhs acts first).
    fn then_after(self, rhs: Rot) -> Rot {
        let (a, b) = (self.v, rhs.v);
        Rot {
            w: self.w * rhs.w - (a[0] * b[0] + a[1] * b[1] + a[2] * b[2]),
            v: [
                self.w * b[0] + rhs.w * a[0] + (a[1] * b[2] - a[2] * b[1]),
                self.w * b[1] + rhs.w * a[1] + (a[2] * b[0] - a[0] * b[2]),
                self.w * b[2] + rhs.w * a[2] + (a[0] * b[1] - a[1] * b[0]),
            ],
        }
    }

    fn pow(self, k: u32) -> Rot {
        let norm = (self.v[0] * self.v[0] + self.v[1] * self.v[1] + self.v[2] * self.v[2]).sqrt();
        if norm == 0.0 {
            let w = if self.w < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            return Rot { w, v: [0.0; 3] };
        }
        let half = norm.atan2(self.w);
        let (s, c) = (f64::from(k) * half).sin_cos();
        let f = s / norm;
        Rot { w: c, v: [f * self.v[0], f * self.v[1], f * self.v[2]] }
    }

    /// Re Tr(self * other^dagger) / 2.
    fn overlap(self, other: Rot) -> f64 {
        self.w * other.w + self.v[0] * other.v[0] + self.v[1] * other.v[1] + self.v[2] * other.v[2]
    }
}

fn coherence_odd(mz: f64, mx: f64, alpha: f64, beta: f64, n_pulses: u32) -> f64 {
    let z = [0.0, 0.0, 1.0];
    let m = [mx, 0.0, mz];
    let u0 = Rot::about(z, beta);
    let u1 = Rot::about(m, alpha);
    let v0 = u0.then_after(Rot::about(m, 2.0 * alpha)).then_after(u0);
    let v1 = u1.then_after(Rot::about(z, 2.0 * beta)).then_after(u1);
    let k = n_pulses / 2;
    let b0 = u1.then_after(u0).then_after(v0.pow(k));
    let b1 = u0.then_after(u1).then_after(v1.pow(k));
    b0.overlap(b1)
}

/// Position of the k-th resonance under `wL >> B`: `(2k - 1) pi / (A + 2 wL)`.
pub fn resonance_tau(k: u32, spin: &HyperfinePair, field: &FieldConfig) -> Result<f64, SpinError> {
    if k == 0 {
        return Err(SpinError::BadHarmonic);
    }
    let den = spin.a_par + 2.0 * field.omega_l();
    if den <= 0.0 {
        return Err(SpinError::NonPositiveDenominator(den));
    }
    Ok(f64::from(2 * k - 1) * PI / den)
}

/// Multi-spin signal: coherence factors multiply, then the decoherence
/// envelope shrinks the coherent part towards 1/2.
pub fn px_multi(system: &SpinSystem, tau: f64, n_pulses: u32) -> Result<f64, SpinError> {
    check_args(tau, n_pulses)?;
    let wl = system.field.omega_l();
    let m: f64 = system
        .spins
        .iter()
        .map(|s| coherence(s.a_par, s.b_perp, wl, tau, n_pulses))
        .product();
    let p = 0.5 * (1.0 + m);
    Ok(match &system.decoherence {
        Some(d) => 0.5 + (p - 0.5) * d.envelope(tau, n_pulses),
        None => p,
    })
}
