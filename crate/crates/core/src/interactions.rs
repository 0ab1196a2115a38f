//! The five resonant probe-field interaction Hamiltonians, in units of the
//! coupling (g = 1) and with ham = H / (hbar g):
//!
//! ```text
//! JC1            sigma^+ a        + sigma^- a^+           one qubit, one mode
//! JC2            sigma^+ a^2      + sigma^- a^+2          one qubit, one mode
//! TwoAtomJC      (s1^+ + s2^+) a  + (s1^- + s2^-) a^+     two qubits, one mode
//! ModeExchangeA  sigma^+ a1 a2^+  + sigma^- a1^+ a2       one qubit, two modes
//! ModeSqueezeB   sigma^+ a1^+a2^+ + sigma^- a1 a2         one qubit, two modes
//! ```
//!
//! All of them are built as `term + term^dag`, so Hermiticity holds by
//! construction. Ladder operators are hard-truncated; couplings that would
//! leave the truncated space are simply absent, which leaves the conserved
//! quantities below exact at any truncation.

use crate::error::{QpError, Result};
use crate::opsalg::{annihilation, sigma_plus, HilbertSpace, Operator};

/// Selects one of the five interaction Hamiltonians.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InteractionSpec {
    /// One-photon exchange, sigma^+ a + h.c.
    JC1,
    /// Two-photon exchange, sigma^+ a^2 + h.c.
    JC2,
    /// Two probe qubits symmetrically coupled to one mode.
    TwoAtomJC,
    /// Probe-mediated excitation swap between two modes, sigma^+ a1 a2^+ + h.c.
    ModeExchangeA,
    /// Probe-mediated pair creation in two modes, sigma^+ a1^+ a2^+ + h.c.
    ModeSqueezeB,
}

impl InteractionSpec {
    /// Qubit count followed by mode count.
    pub fn layout(&self) -> (usize, usize) {
        match self {
            InteractionSpec::JC1 | InteractionSpec::JC2 => (1, 1),
            InteractionSpec::TwoAtomJC => (2, 1),
            InteractionSpec::ModeExchangeA | InteractionSpec::ModeSqueezeB => (1, 2),
        }
    }
}

/// Materialize the interaction on `space`, whose subsystems must be the
/// variant's qubits (each of dimension 2) followed by its field modes.
pub fn build_interaction(spec: &InteractionSpec, space: &HilbertSpace) -> Result<Operator> {
    let (qubits, modes) = spec.layout();
    check_layout(space, qubits, modes)?;

    let dims = space.dims();
    let raise = |site: usize| Operator::embed(space, site, &sigma_plus());
    let lower_mode = |site: usize| Operator::embed(space, site, &annihilation(dims[site]));

    let term = match spec {
        InteractionSpec::JC1 => &raise(0)? * &lower_mode(1)?,
        InteractionSpec::JC2 => {
            let a = lower_mode(1)?;
            &raise(0)? * &(&a * &a)
        }
        InteractionSpec::TwoAtomJC => {
            let either_up = &raise(0)? + &raise(1)?;
            &either_up * &lower_mode(2)?
        }
        InteractionSpec::ModeExchangeA => {
            &(&raise(0)? * &lower_mode(1)?) * &lower_mode(2)?.adjoint()
        }
        InteractionSpec::ModeSqueezeB => {
            &(&raise(0)? * &lower_mode(1)?.adjoint()) * &lower_mode(2)?.adjoint()
        }
    };
    Ok(&term + &term.adjoint())
}

fn check_layout(space: &HilbertSpace, qubits: usize, modes: usize) -> Result<()> {
    let dims = space.dims();
    if dims.len() != qubits + modes {
        return Err(QpError::ShapeMismatch(format!(
            "interaction needs {} qubit(s) + {} mode(s), space has {} subsystems",
            qubits,
            modes,
            dims.len()
        )));
    }
    for (k, &d) in dims.iter().take(qubits).enumerate() {
        if d != 2 {
            return Err(QpError::ShapeMismatch(format!(
                "subsystem {} must be a qubit (dimension 2), got dimension {}",
                k, d
            )));
        }
    }
    for (k, &d) in dims.iter().enumerate().skip(qubits) {
        if d < 2 {
            return Err(QpError::ShapeMismatch(format!(
                "mode subsystem {} must have at least 2 levels, got {}",
                k, d
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::opsalg::number;
    use approx::assert_relative_eq;
    use num_complex::Complex64;

    fn space(dims: &[usize]) -> HilbertSpace {
        HilbertSpace::new(dims).unwrap()
    }

    fn commutator_norm(a: &Operator, b: &Operator) -> f64 {
        (&(a * b) - &(b * a)).max_abs()
    }

    fn number_on(space: &HilbertSpace, site: usize) -> Operator {
        Operator::embed(space, site, &number(space.dims()[site])).unwrap()
    }

    #[test]
    fn jc1_couplings() {
        let sp = space(&[2, 6]);
        let h = build_interaction(&InteractionSpec::JC1, &sp).unwrap();
        assert!(h.hermiticity_deviation() < 1e-12);
        for n in 0..5 {
            let en = sp.basis_index(&[1, n]);
            let gn1 = sp.basis_index(&[0, n + 1]);
            assert_relative_eq!(h.matrix()[(en, gn1)].re, ((n + 1) as f64).sqrt(), epsilon = 1e-14);
        }
        for i in 0..sp.total_dim() {
            assert_eq!(h.matrix()[(i, i)], Complex64::new(0.0, 0.0));
        }
        // one quantum in the probe trades against one photon
        let invariant = &number_on(&sp, 0) + &number_on(&sp, 1);
        assert!(commutator_norm(&h, &invariant) < 1e-12);
    }

    #[test]
    fn jc2_couplings() {
        let sp = space(&[2, 7]);
        let h = build_interaction(&InteractionSpec::JC2, &sp).unwrap();
        assert!(h.hermiticity_deviation() < 1e-12);
        for n in 0..5 {
            let en = sp.basis_index(&[1, n]);
            let gn2 = sp.basis_index(&[0, n + 2]);
            let want = (((n + 1) * (n + 2)) as f64).sqrt();
            assert_relative_eq!(h.matrix()[(en, gn2)].re, want, epsilon = 1e-13);
        }
        // probe excitation costs two photons
        let invariant = &number_on(&sp, 0).scale(Complex64::new(2.0, 0.0)) + &number_on(&sp, 1);
        assert!(commutator_norm(&h, &invariant) < 1e-12);
    }

    #[test]
    fn two_atom_couplings_and_dark_singlet() {
        let sp = space(&[2, 2, 6]);
        let h = build_interaction(&InteractionSpec::TwoAtomJC, &sp).unwrap();
        assert!(h.hermiticity_deviation() < 1e-12);
        let n = 2;
        let ee_n = sp.basis_index(&[1, 1, n]);
        let ge_n1 = sp.basis_index(&[0, 1, n + 1]);
        let eg_n1 = sp.basis_index(&[1, 0, n + 1]);
        let gg_n2 = sp.basis_index(&[0, 0, n + 2]);
        assert_relative_eq!(h.matrix()[(ge_n1, ee_n)].re, ((n + 1) as f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(h.matrix()[(eg_n1, ee_n)].re, ((n + 1) as f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(h.matrix()[(gg_n2, ge_n1)].re, ((n + 2) as f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(h.matrix()[(gg_n2, eg_n1)].re, ((n + 2) as f64).sqrt(), epsilon = 1e-14);

        // the antisymmetric probe combination never couples to the field
        let inv = 1.0 / 2f64.sqrt();
        let mut v = nalgebra::DVector::from_element(sp.total_dim(), Complex64::new(0.0, 0.0));
        v[sp.basis_index(&[0, 1, 3])] = Complex64::new(inv, 0.0);
        v[sp.basis_index(&[1, 0, 3])] = Complex64::new(-inv, 0.0);
        let hv = h.matrix() * v;
        assert!(hv.iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-14);

        let invariant = &(&number_on(&sp, 0) + &number_on(&sp, 1)) + &number_on(&sp, 2);
        assert!(commutator_norm(&h, &invariant) < 1e-12);
    }

    #[test]
    fn mode_exchange_couplings() {
        let sp = space(&[2, 5, 5]);
        let h = build_interaction(&InteractionSpec::ModeExchangeA, &sp).unwrap();
        assert!(h.hermiticity_deviation() < 1e-12);
        for (n1, n2) in [(0usize, 1usize), (1, 3), (2, 2)] {
            let from = sp.basis_index(&[0, n1 + 1, n2 - 1]);
            let to = sp.basis_index(&[1, n1, n2]);
            let want = (((n1 + 1) * n2) as f64).sqrt();
            assert_relative_eq!(h.matrix()[(to, from)].re, want, epsilon = 1e-13);
        }
        let photons = &number_on(&sp, 1) + &number_on(&sp, 2);
        assert!(commutator_norm(&h, &photons) < 1e-12);
        let probe_plus_one = &number_on(&sp, 0) + &number_on(&sp, 1);
        assert!(commutator_norm(&h, &probe_plus_one) < 1e-12);
    }

    #[test]
    fn mode_squeeze_couplings() {
        let sp = space(&[2, 5, 5]);
        let h = build_interaction(&InteractionSpec::ModeSqueezeB, &sp).unwrap();
        assert!(h.hermiticity_deviation() < 1e-12);
        for (m1, m2) in [(0usize, 0usize), (1, 2), (3, 3)] {
            let from = sp.basis_index(&[0, m1, m2]);
            let to = sp.basis_index(&[1, m1 + 1, m2 + 1]);
            let want = (((m1 + 1) * (m2 + 1)) as f64).sqrt();
            assert_relative_eq!(h.matrix()[(to, from)].re, want, epsilon = 1e-13);
        }
        // photon number grows in pairs, so only the difference is conserved
        let diff = &number_on(&sp, 1) - &number_on(&sp, 2);
        assert!(commutator_norm(&h, &diff) < 1e-12);
        let total = &number_on(&sp, 1) + &number_on(&sp, 2);
        assert!(commutator_norm(&h, &total) > 0.5);
    }

    #[test]
    fn diagonal_vanishes_for_all_variants() {
        let cases = [
            (InteractionSpec::JC1, vec![2usize, 5]),
            (InteractionSpec::JC2, vec![2, 5]),
            (InteractionSpec::TwoAtomJC, vec![2, 2, 5]),
            (InteractionSpec::ModeExchangeA, vec![2, 4, 4]),
            (InteractionSpec::ModeSqueezeB, vec![2, 4, 4]),
        ];
        for (spec, dims) in cases {
            let h = build_interaction(&spec, &space(&dims)).unwrap();
            for i in 0..h.dim() {
                assert_eq!(h.matrix()[(i, i)], Complex64::new(0.0, 0.0), "{:?}", spec);
            }
            assert!(h.hermiticity_deviation() < 1e-12, "{:?}", spec);
        }
    }

    #[test]
    fn wrong_space_structure_is_rejected() {
        let err = build_interaction(&InteractionSpec::JC1, &space(&[2, 4, 4]));
        assert!(matches!(err, Err(QpError::ShapeMismatch(_))));
        let err = build_interaction(&InteractionSpec::TwoAtomJC, &space(&[2, 4]));
        assert!(matches!(err, Err(QpError::ShapeMismatch(_))));
        let err = build_interaction(&InteractionSpec::ModeExchangeA, &space(&[4, 4, 2]));
        assert!(matches!(err, Err(QpError::ShapeMismatch(_))));
        let err = build_interaction(&InteractionSpec::JC1, &space(&[3, 4]));
        assert!(matches!(err, Err(QpError::ShapeMismatch(_))));
    }

    #[test]
    fn truncation_edge_has_no_outgoing_coupling() {
        let sp = space(&[2, 4]);
        let h = build_interaction(&InteractionSpec::JC1, &sp).unwrap();
        // |e, 3> would need |g, 4>, which the truncation removed
        let e_top = sp.basis_index(&[1, 3]);
        let col_norm: f64 = (0..sp.total_dim()).map(|i| h.matrix()[(i, e_top)].norm()).sum();
        assert_eq!(col_norm, 0.0);
    }
}
