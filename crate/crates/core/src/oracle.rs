//! Ground-truth field moments computed straight from the density matrix.
//!
//! Every observable is evaluated twice, by independent code paths:
//!
//! * the trace route builds the observable from truncated ladder operators
//!   and takes Tr[rho O],
//! * the series route sums the closed-form coefficient series in the matrix
//!   elements rho_{n,m}.
//!
//! [`dual_moment`] runs both and refuses to answer if they drift apart. The
//! duplication is deliberate: these numbers anchor every extraction test, so
//! a transcription slip in either form has to be caught by the other.
//!
//! Quadrature convention: X_phi = (a e^{-i phi} + a^dag e^{i phi})/2, so the
//! vacuum has Var X = 1/4. The two-mode correlators are
//!
//! ```text
//! A(delta) = a1^dag a2 e^{i delta} + a1 a2^dag e^{-i delta}
//! B(sigma) = a1^dag a2^dag e^{i sigma} + a1 a2 e^{-i sigma}
//! ```
//!
//! with delta = phi1 - phi2 and sigma = phi1 + phi2, giving
//! <X_{phi1} X_{phi2}> = (<A> + <B>)/4. The EPR variance sum uses the
//! sqrt(2)-normalized quadratures, matching the separability bound
//! a0^2 + 1/a0^2.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::opsalg::{
    annihilation, enumerate_indices, number, partial_trace, real_expectation, DensityOperator,
    HilbertSpace, Operator,
};

/// Agreement demanded between the trace and series evaluation routes.
pub const DUAL_ROUTE_TOL: f64 = 1e-10;

/// A field moment the probe protocols can target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    X { phi: f64 },
    Y { phi: f64 },
    N,
    X2 { phi: f64 },
    Y2 { phi: f64 },
    VarX { phi: f64 },
    VarY { phi: f64 },
    A { delta: f64 },
    B { sigma: f64 },
    X2TwoMode { phi1: f64, phi2: f64 },
    Y2TwoMode { phi1: f64, phi2: f64 },
    /// Var(u) + Var(v) for u = a0 X~1 - (s1/a0) X~2, v = a0 Y~1 - (s2/a0) Y~2
    /// in sqrt(2)-normalized quadratures at phase zero.
    DuanVarSum { a0: f64, s1: f64, s2: f64 },
}

impl Observable {
    pub fn modes(&self) -> usize {
        match self {
            Observable::A { .. }
            | Observable::B { .. }
            | Observable::X2TwoMode { .. }
            | Observable::Y2TwoMode { .. }
            | Observable::DuanVarSum { .. } => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::X { phi } => write!(f, "X({phi:.4})"),
            Observable::Y { phi } => write!(f, "Y({phi:.4})"),
            Observable::N => write!(f, "n"),
            Observable::X2 { phi } => write!(f, "X^2({phi:.4})"),
            Observable::Y2 { phi } => write!(f, "Y^2({phi:.4})"),
            Observable::VarX { phi } => write!(f, "VarX({phi:.4})"),
            Observable::VarY { phi } => write!(f, "VarY({phi:.4})"),
            Observable::A { delta } => write!(f, "A({delta:.4})"),
            Observable::B { sigma } => write!(f, "B({sigma:.4})"),
            Observable::X2TwoMode { phi1, phi2 } => write!(f, "X^2_2mode({phi1:.4},{phi2:.4})"),
            Observable::Y2TwoMode { phi1, phi2 } => write!(f, "Y^2_2mode({phi1:.4},{phi2:.4})"),
            Observable::DuanVarSum { a0, s1, s2 } => {
                write!(f, "VarU+VarV(a0={a0:.4},s=({s1:+.0},{s2:+.0}))")
            }
        }
    }
}

fn check_modes(rho_f: &DensityOperator, observable: &Observable) -> Result<()> {
    let have = rho_f.space().subsystems();
    let want = observable.modes();
    if have != want {
        return Err(QpError::ShapeMismatch(format!(
            "{observable} needs a {want}-mode state, got {have} modes"
        )));
    }
    Ok(())
}

/// Zero-pad each mode by two levels so that products of two ladder operators
/// act exactly on states supported inside the original truncation. Without
/// this, squaring the truncated quadrature loses the a a^dag term at the top
/// Fock level and the trace route would undershoot the coefficient series on
/// any state with top-level weight.
fn padded(rho_f: &DensityOperator) -> DensityOperator {
    let old_dims = rho_f.space().dims().to_vec();
    let new_dims: Vec<usize> = old_dims.iter().map(|d| d + 2).collect();
    let new_space = HilbertSpace::new(&new_dims).expect("padded dims positive");
    let occupations = enumerate_indices(&old_dims);
    let d = rho_f.matrix().nrows();
    let mut mat = nalgebra::DMatrix::zeros(new_space.total_dim(), new_space.total_dim());
    for i in 0..d {
        let row = new_space.basis_index(&occupations[i]);
        for j in 0..d {
            mat[(row, new_space.basis_index(&occupations[j]))] = rho_f.matrix()[(i, j)];
        }
    }
    DensityOperator::trusted_from_parts(new_space, mat)
}

/// Evaluate Tr[rho_f O] with O assembled from truncated ladder operators,
/// on the two-level zero-padded copy of the state (see [`padded`]).
pub fn direct_moment(rho_f: &DensityOperator, observable: &Observable) -> Result<f64> {
    check_modes(rho_f, observable)?;
    let rho_f = &padded(rho_f);
    let space = rho_f.space();
    match *observable {
        Observable::X { phi } => real_expectation(rho_f, &quadrature_x(space, phi)),
        Observable::Y { phi } => real_expectation(rho_f, &quadrature_y(space, phi)),
        Observable::N => {
            let n_op = Operator::from_matrix(space.clone(), number(space.total_dim()))?;
            real_expectation(rho_f, &n_op)
        }
        Observable::X2 { phi } => {
            let x = quadrature_x(space, phi);
            real_expectation(rho_f, &(&x * &x))
        }
        Observable::Y2 { phi } => {
            let y = quadrature_y(space, phi);
            real_expectation(rho_f, &(&y * &y))
        }
        Observable::VarX { phi } => {
            let x = quadrature_x(space, phi);
            variance(rho_f, &x)
        }
        Observable::VarY { phi } => {
            let y = quadrature_y(space, phi);
            variance(rho_f, &y)
        }
        Observable::A { delta } => real_expectation(rho_f, &exchange_op(space, delta)?),
        Observable::B { sigma } => real_expectation(rho_f, &pair_op(space, sigma)?),
        Observable::X2TwoMode { phi1, phi2 } => {
            let x = joint_quadrature(space, phi1, phi2, false)?;
            real_expectation(rho_f, &(&x * &x))
        }
        Observable::Y2TwoMode { phi1, phi2 } => {
            let y = joint_quadrature(space, phi1, phi2, true)?;
            real_expectation(rho_f, &(&y * &y))
        }
        Observable::DuanVarSum { a0, s1, s2 } => {
            check_duan_params(a0, s1, s2)?;
            let root2 = Complex64::new(2f64.sqrt(), 0.0);
            let x1 = embed_single(space, 0, |d| quadrature_x(&mode_space(d), 0.0))?;
            let x2 = embed_single(space, 1, |d| quadrature_x(&mode_space(d), 0.0))?;
            let y1 = embed_single(space, 0, |d| quadrature_y(&mode_space(d), 0.0))?;
            let y2 = embed_single(space, 1, |d| quadrature_y(&mode_space(d), 0.0))?;
            let ca = Complex64::new(a0, 0.0);
            let cb = Complex64::new(1.0 / a0, 0.0);
            let u = (&x1.scale(ca) - &x2.scale(Complex64::new(s1, 0.0) * cb)).scale(root2);
            let v = (&y1.scale(ca) - &y2.scale(Complex64::new(s2, 0.0) * cb)).scale(root2);
            Ok(variance(rho_f, &u)? + variance(rho_f, &v)?)
        }
    }
}

/// Evaluate the same moment from the explicit rho_{n,m} coefficient series.
pub fn series_moment(rho_f: &DensityOperator, observable: &Observable) -> Result<f64> {
    check_modes(rho_f, observable)?;
    match *observable {
        Observable::X { phi } => Ok(first_moment_sum(rho_f, phi).re),
        Observable::Y { phi } => Ok(first_moment_sum(rho_f, phi).im),
        Observable::N => Ok(mean_photon_sum(rho_f)),
        Observable::X2 { phi } => Ok(0.25 + 0.5 * mean_photon_sum(rho_f) + coherence_sum(rho_f, phi)),
        Observable::Y2 { phi } => Ok(0.25 + 0.5 * mean_photon_sum(rho_f) - coherence_sum(rho_f, phi)),
        Observable::VarX { phi } => {
            let x = first_moment_sum(rho_f, phi).re;
            Ok(0.25 + 0.5 * mean_photon_sum(rho_f) + coherence_sum(rho_f, phi) - x * x)
        }
        Observable::VarY { phi } => {
            let y = first_moment_sum(rho_f, phi).im;
            Ok(0.25 + 0.5 * mean_photon_sum(rho_f) - coherence_sum(rho_f, phi) - y * y)
        }
        Observable::A { delta } => Ok(exchange_sum(rho_f, delta)),
        Observable::B { sigma } => Ok(pair_sum(rho_f, sigma)),
        Observable::X2TwoMode { phi1, phi2 } => {
            let (r1, r2) = reduced_modes(rho_f)?;
            Ok(series_moment(&r1, &Observable::X2 { phi: phi1 })?
                + series_moment(&r2, &Observable::X2 { phi: phi2 })?
                + 0.5 * exchange_sum(rho_f, phi1 - phi2)
                + 0.5 * pair_sum(rho_f, phi1 + phi2))
        }
        Observable::Y2TwoMode { phi1, phi2 } => {
            let (r1, r2) = reduced_modes(rho_f)?;
            Ok(series_moment(&r1, &Observable::Y2 { phi: phi1 })?
                + series_moment(&r2, &Observable::Y2 { phi: phi2 })?
                + 0.5 * exchange_sum(rho_f, phi1 - phi2)
                - 0.5 * pair_sum(rho_f, phi1 + phi2))
        }
        Observable::DuanVarSum { a0, s1, s2 } => {
            check_duan_params(a0, s1, s2)?;
            let (r1, r2) = reduced_modes(rho_f)?;
            let var_x1 = series_moment(&r1, &Observable::VarX { phi: 0.0 })?;
            let var_x2 = series_moment(&r2, &Observable::VarX { phi: 0.0 })?;
            let var_y1 = series_moment(&r1, &Observable::VarY { phi: 0.0 })?;
            let var_y2 = series_moment(&r2, &Observable::VarY { phi: 0.0 })?;
            let mean = |r: &DensityOperator| first_moment_sum(r, 0.0);
            let (m1, m2) = (mean(&r1), mean(&r2));
            let a = exchange_sum(rho_f, 0.0);
            let b = pair_sum(rho_f, 0.0);
            let cov_x = 0.25 * (a + b) - m1.re * m2.re;
            let cov_y = 0.25 * (a - b) - m1.im * m2.im;
            let a0sq = a0 * a0;
            let var_u = 2.0 * (a0sq * var_x1 + var_x2 / a0sq - 2.0 * s1 * cov_x);
            let var_v = 2.0 * (a0sq * var_y1 + var_y2 / a0sq - 2.0 * s2 * cov_y);
            Ok(var_u + var_v)
        }
    }
}

/// Both evaluation routes, cross-checked to [`DUAL_ROUTE_TOL`].
pub fn dual_moment(rho_f: &DensityOperator, observable: &Observable) -> Result<f64> {
    let direct = direct_moment(rho_f, observable)?;
    let series = series_moment(rho_f, observable)?;
    let gap = (direct - series).abs();
    if gap > DUAL_ROUTE_TOL * direct.abs().max(1.0) {
        return Err(QpError::Numerics(format!(
            "oracle routes disagree on {observable}: trace {direct:.15e} vs series {series:.15e}"
        )));
    }
    Ok(direct)
}

fn check_duan_params(a0: f64, s1: f64, s2: f64) -> Result<()> {
    if !(a0 > 0.0) || !a0.is_finite() {
        return Err(QpError::BadParameter(format!("a0 must be positive, got {a0}")));
    }
    if s1.abs() != 1.0 || s2.abs() != 1.0 {
        return Err(QpError::BadParameter(format!("sign constants must be +-1, got ({s1}, {s2})")));
    }
    Ok(())
}

fn mode_space(dim: usize) -> HilbertSpace {
    HilbertSpace::new(&[dim]).expect("positive mode dimension")
}

fn quadrature_x(space: &HilbertSpace, phi: f64) -> Operator {
    let a = annihilation(space.total_dim());
    let mat = (&a * Complex64::from_polar(0.5, -phi)) + (a.adjoint() * Complex64::from_polar(0.5, phi));
    Operator::from_matrix(space.clone(), mat).expect("square ladder matrix")
}

fn quadrature_y(space: &HilbertSpace, phi: f64) -> Operator {
    quadrature_x(space, phi + std::f64::consts::FRAC_PI_2)
}

fn embed_single(
    space: &HilbertSpace,
    site: usize,
    build: impl Fn(usize) -> Operator,
) -> Result<Operator> {
    let local = build(space.dims()[site]);
    Operator::embed(space, site, local.matrix())
}

fn exchange_op(space: &HilbertSpace, delta: f64) -> Result<Operator> {
    let a1 = Operator::embed(space, 0, &annihilation(space.dims()[0]))?;
    let a2 = Operator::embed(space, 1, &annihilation(space.dims()[1]))?;
    let cross = &a1.adjoint() * &a2;
    Ok(&cross.scale(Complex64::from_polar(1.0, delta))
        + &cross.adjoint().scale(Complex64::from_polar(1.0, -delta)))
}

fn pair_op(space: &HilbertSpace, sigma: f64) -> Result<Operator> {
    let a1 = Operator::embed(space, 0, &annihilation(space.dims()[0]))?;
    let a2 = Operator::embed(space, 1, &annihilation(space.dims()[1]))?;
    let pair = &a1 * &a2;
    Ok(&pair.adjoint().scale(Complex64::from_polar(1.0, sigma))
        + &pair.scale(Complex64::from_polar(1.0, -sigma)))
}

fn joint_quadrature(space: &HilbertSpace, phi1: f64, phi2: f64, rotate: bool) -> Result<Operator> {
    let shift = if rotate { std::f64::consts::FRAC_PI_2 } else { 0.0 };
    let q1 = embed_single(space, 0, |d| quadrature_x(&mode_space(d), phi1 + shift))?;
    let q2 = embed_single(space, 1, |d| quadrature_x(&mode_space(d), phi2 + shift))?;
    Ok(&q1 + &q2)
}

fn variance(rho: &DensityOperator, o: &Operator) -> Result<f64> {
    let mean = real_expectation(rho, o)?;
    let second = real_expectation(rho, &(o * o))?;
    Ok(second - mean * mean)
}

fn reduced_modes(rho_f: &DensityOperator) -> Result<(DensityOperator, DensityOperator)> {
    Ok((partial_trace(rho_f, &[0])?, partial_trace(rho_f, &[1])?))
}

/// <X_phi> + i <Y_phi> = e^{-i phi} Tr[rho a] as a single complex sum.
fn first_moment_sum(rho_f: &DensityOperator, phi: f64) -> Complex64 {
    let dim = rho_f.space().total_dim();
    let mut sum = Complex64::new(0.0, 0.0);
    for n in 0..dim - 1 {
        sum += ((n + 1) as f64).sqrt() * rho_f.element(n + 1, n);
    }
    sum * Complex64::from_polar(1.0, -phi)
}

fn mean_photon_sum(rho_f: &DensityOperator) -> f64 {
    let dim = rho_f.space().total_dim();
    (0..dim).map(|n| n as f64 * rho_f.element(n, n).re).sum()
}

/// Coherence half of <X^2_phi>: sum_n sqrt((n+1)(n+2)) Re(e^{2i phi} rho_{n,n+2}) / 2.
fn coherence_sum(rho_f: &DensityOperator, phi: f64) -> f64 {
    let dim = rho_f.space().total_dim();
    let rot = Complex64::from_polar(1.0, 2.0 * phi);
    (0..dim.saturating_sub(2))
        .map(|n| 0.5 * (((n + 1) * (n + 2)) as f64).sqrt() * (rot * rho_f.element(n, n + 2)).re)
        .sum()
}

/// <A(delta)> = 2 Re(e^{i delta} sum sqrt((k1+1) k2) <k1,k2|rho|k1+1,k2-1>).
fn exchange_sum(rho_f: &DensityOperator, delta: f64) -> f64 {
    let space = rho_f.space();
    let (n1, n2) = (space.dims()[0], space.dims()[1]);
    let mut sum = Complex64::new(0.0, 0.0);
    for k1 in 0..n1 - 1 {
        for k2 in 1..n2 {
            let row = space.basis_index(&[k1, k2]);
            let col = space.basis_index(&[k1 + 1, k2 - 1]);
            sum += (((k1 + 1) * k2) as f64).sqrt() * rho_f.element(row, col);
        }
    }
    2.0 * (Complex64::from_polar(1.0, delta) * sum).re
}

/// <B(sigma)> = 2 Re(e^{-i sigma} sum sqrt((m1+1)(m2+1)) <m1+1,m2+1|rho|m1,m2>).
fn pair_sum(rho_f: &DensityOperator, sigma: f64) -> f64 {
    let space = rho_f.space();
    let (n1, n2) = (space.dims()[0], space.dims()[1]);
    let mut sum = Complex64::new(0.0, 0.0);
    for m1 in 0..n1 - 1 {
        for m2 in 0..n2 - 1 {
            let row = space.basis_index(&[m1 + 1, m2 + 1]);
            let col = space.basis_index(&[m1, m2]);
            sum += (((m1 + 1) * (m2 + 1)) as f64).sqrt() * rho_f.element(row, col);
        }
    }
    2.0 * (Complex64::from_polar(1.0, -sigma) * sum).re
}
