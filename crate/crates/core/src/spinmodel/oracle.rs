//! Brute-force reference: joint electron-nuclear state evolution with
//! numerically exponentiated Hamiltonians and ideal pi pulses.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::{FieldConfig, HyperfinePair, SpinError};
use crate::sequencer::PhasePattern;

type CMat = DMatrix<Complex64>;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Spin-1/2 operators on nucleus `which` of `count`, as 2^count square matrices.
fn nuclear_op(count: usize, which: usize, op: [[Complex64; 2]; 2]) -> CMat {
    let mut m = CMat::from_element(1, 1, ONE);
    for j in 0..count {
        let f = if j == which {
            CMat::from_fn(2, 2, |r, col| op[r][col])
        } else {
            CMat::identity(2, 2)
        };
        m = m.kronecker(&f);
    }
    m
}

fn iz() -> [[Complex64; 2]; 2] {
    [[c(0.5, 0.0), ZERO], [ZERO, c(-0.5, 0.0)]]
}

fn ix() -> [[Complex64; 2]; 2] {
    [[ZERO, c(0.5, 0.0)], [c(0.5, 0.0), ZERO]]
}

/// `|0><0| (x) H0 + |1><1| (x) H1` for the given nuclei.
fn joint_hamiltonian(spins: &[HyperfinePair], omega_l: f64) -> CMat {
    let n = spins.len();
    let dim = 1 << n;
    let mut h0 = CMat::zeros(dim, dim);
    let mut h1 = CMat::zeros(dim, dim);
    for (j, s) in spins.iter().enumerate() {
        let z = nuclear_op(n, j, iz());
        let x = nuclear_op(n, j, ix());
        h0 += &z * c(omega_l, 0.0);
        h1 += &z * c(s.a_par + omega_l, 0.0) + &x * c(s.b_perp, 0.0);
    }
    let p0 = CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, ZERO]);
    let p1 = CMat::from_row_slice(2, 2, &[ZERO, ZERO, ZERO, ONE]);
    p0.kronecker(&h0) + p1.kronecker(&h1)
}

/// Electron pi rotation about `cos(phase) x + sin(phase) y`.
fn pi_pulse(phase: f64) -> CMat {
    let (s, co) = phase.sin_cos();
    // -i (cos X + sin Y)
    CMat::from_row_slice(2, 2, &[ZERO, c(-s, -co), c(s, -co), ZERO])
}

/// Probability that the electron is found in its ideal final state, for
/// any number of nuclei, averaged over the nuclear computational basis.
fn evolve(spins: &[HyperfinePair], field: &FieldConfig, tau: f64, n_pulses: u32, pattern: PhasePattern) -> f64 {
    let n = spins.len();
    let dim_n = 1usize << n;
    let h = joint_hamiltonian(spins, field.omega_l());
    let u_tau = (h * c(0.0, -tau)).exp();
    let id_n = CMat::identity(dim_n, dim_n);

    let plus = DVector::from_vec(vec![c(std::f64::consts::FRAC_1_SQRT_2, 0.0); 2]);
    let mut ideal = plus.clone();
    let mut sequence = CMat::identity(2 * dim_n, 2 * dim_n);
    for k in 0..n_pulses as usize {
        let r = pi_pulse(pattern.phase(k));
        ideal = &r * ideal;
        sequence = &u_tau * r.kronecker(&id_n) * &u_tau * sequence;
    }

    let mut total = 0.0;
    for m in 0..dim_n {
        let mut basis = DVector::from_element(dim_n, ZERO);
        basis[m] = ONE;
        let psi = &sequence * plus.kronecker(&basis);
        // project the electron onto `ideal`, leaving a nuclear vector
        let mut proj = DVector::from_element(dim_n, ZERO);
        for e in 0..2 {
            let w = ideal[e].conj();
            for j in 0..dim_n {
                proj[j] += w * psi[e * dim_n + j];
            }
        }
        total += proj.norm_squared();
    }
    total / dim_n as f64
}

fn check(tau: f64) -> Result<(), SpinError> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(SpinError::BadTau(tau));
    }
    Ok(())
}

/// Single-nucleus reference for [`super::px_analytic`]. `n_pulses == 0`
/// is the bare pi/2 - pi/2 pair.
pub fn px_oracle(
    spin: &HyperfinePair,
    field: &FieldConfig,
    tau: f64,
    n_pulses: u32,
    pattern: PhasePattern,
) -> Result<f64, SpinError> {
    check(tau)?;
    Ok(evolve(std::slice::from_ref(spin), field, tau, n_pulses, pattern))
}

/// Several nuclei evolving jointly; reference for [`super::px_multi`] without decoherence.
pub fn px_oracle_multi(
    spins: &[HyperfinePair],
    field: &FieldConfig,
    tau: f64,
    n_pulses: u32,
    pattern: PhasePattern,
) -> Result<f64, SpinError> {
    check(tau)?;
    Ok(evolve(spins, field, tau, n_pulses, pattern))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spinmodel::px_analytic;

    #[test]
    fn pi_pulse_is_unitary_and_flips() {
        for ph in [0.0, 0.3, std::f64::consts::FRAC_PI_2] {
            let r = pi_pulse(ph);
            let prod = r.adjoint() * &r;
            assert!((prod - CMat::identity(2, 2)).norm() < 1e-15);
            assert!(r[(0, 0)].norm() == 0.0 && r[(1, 1)].norm() == 0.0);
        }
    }

    #[test]
    fn no_coupling_and_no_pulses() {
        let f = FieldConfig::new(525.0).unwrap();
        let zero = HyperfinePair::new(0.0, 0.0);
        let s = HyperfinePair::from_khz(225.01, 203.15);
        for n in [1, 8, 32] {
            let p = px_oracle(&zero, &f, 1.7e-6, n, PhasePattern::Xy8).unwrap();
            assert!((p - 1.0).abs() < 1e-12);
        }
        assert!((px_oracle(&s, &f, 1.7e-6, 0, PhasePattern::Xy8).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn patterns_agree() {
        let f = FieldConfig::new(365.0).unwrap();
        let s = HyperfinePair::from_khz(-18.64, 18.36);
        for tau in [0.61e-6, 1.96e-6, 3.3e-6] {
            let a = px_oracle(&s, &f, tau, 32, PhasePattern::Xy8).unwrap();
            let b = px_oracle(&s, &f, tau, 32, PhasePattern::AllX).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_closed_form_on_fringe_resonance() {
        let f = FieldConfig::new(525.0).unwrap();
        let s = HyperfinePair::from_khz(225.01, 203.15);
        for tau in [368.36e-9, 370.6e-9, 444.8e-9] {
            for n in [7, 8, 320] {
                let o = px_oracle(&s, &f, tau, n, PhasePattern::Xy8).unwrap();
                let a = px_analytic(&s, &f, tau, n).unwrap();
                assert!((o - a).abs() < 1e-9, "tau {tau} n {n}: {o} vs {a}");
            }
        }
    }
}
