//! Factories for initial field and probe states.
//!
//! Field states are number-basis density matrices at a finite truncation.
//! Closed-form amplitudes are summed up to the cutoff, the weight that falls
//! past it is recorded as `leakage`, and the truncated matrix is renormalized
//! so the density-operator invariants hold exactly:
//!
//! ```text
//! coherent         c_n = e^{-|alpha|^2/2} alpha^n / sqrt(n!)
//! thermal          p_n = nbar^n / (1 + nbar)^{n+1}
//! squeezed vacuum  c_0 = sqrt(sech r),
//!                  c_{2m+2} = -e^{i theta} tanh(r) sqrt((2m+1)/(2m+2)) c_{2m}
//! two-mode sq. vac c_n |n,n> with c_n = (-tanh r)^n / cosh r
//! cat              (|alpha> + e^{i phi_c} |-alpha>) / norm
//! ```
//!
//! Probe states are pure one- or two-qubit states; in particular
//! |+-_phi> = (|g> +- e^{i phi} |e>)/sqrt(2) and the Bell pair
//! (|gg> +- e^{i theta} |ee>)/sqrt(2).

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{QpError, Result};
use crate::opsalg::{kron, DensityOperator, HilbertSpace};

/// Default Fock-space truncation per mode.
pub const DEFAULT_TRUNCATION: usize = 40;
/// Default per-mode truncation for two-mode states, where the joint dimension
/// grows quadratically.
pub const DEFAULT_TWO_MODE_TRUNCATION: usize = 24;
/// Default bound on the probability weight lost to truncation.
pub const DEFAULT_LEAKAGE_TOL: f64 = 1e-8;

/// Recipe for an initial field state.
#[derive(Clone, Debug, PartialEq)]
pub enum FieldStateSpec {
    /// Number state |n>.
    Fock(usize),
    /// Coherent state with complex amplitude alpha.
    Coherent(Complex64),
    /// Thermal mixture with mean occupation nbar.
    Thermal(f64),
    /// Squeezed vacuum with squeeze parameter xi = r e^{i theta}.
    SqueezedVacuum { r: f64, theta: f64 },
    /// Superposition of opposite coherent states, (|alpha> + e^{i phase} |-alpha>)/norm.
    Cat { alpha: Complex64, phase: f64 },
    /// Two-mode squeezed vacuum; occupies the joint space of two modes.
    TwoModeSqueezedVacuum { r: f64 },
    /// Externally supplied matrix elements, see [`RawMatrixSpec`].
    RawMatrix(RawMatrixSpec),
}

impl FieldStateSpec {
    /// Number of field modes the built state occupies.
    pub fn modes(&self) -> usize {
        match self {
            FieldStateSpec::TwoModeSqueezedVacuum { .. } => 2,
            FieldStateSpec::RawMatrix(raw) => raw.modes,
            _ => 1,
        }
    }
}

/// A density matrix given element by element, for injecting measured or
/// externally computed states.
///
/// Entries index the number basis. With `modes = 2` the row and column are
/// composite indices `n1 * N + n2` for truncation `N`. An entry's conjugate
/// partner may be omitted; it is filled in automatically. The matrix is
/// renormalized to unit trace and then fully validated.
#[derive(Clone, Debug, PartialEq)]
pub struct RawMatrixSpec {
    pub modes: usize,
    pub entries: Vec<RawEntry>,
}

/// One matrix element of a [`RawMatrixSpec`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RawEntry {
    pub row: usize,
    pub col: usize,
    pub value: Complex64,
}

/// Parse a plain-text table of matrix elements with one `row col real imag`
/// record per line. Fields are separated by whitespace or commas; empty lines
/// and lines starting with `#` are skipped.
pub fn parse_raw_entries(text: &str) -> Result<Vec<RawEntry>> {
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(|ch: char| ch == ',' || ch.is_whitespace()).filter(|f| !f.is_empty()).collect();
        if fields.len() != 4 {
            return Err(QpError::BadParameter(format!(
                "line {}: expected `row col real imag`, got {} fields",
                lineno + 1,
                fields.len()
            )));
        }
        let parse_idx = |f: &str| {
            f.parse::<usize>().map_err(|_| {
                QpError::BadParameter(format!("line {}: bad index {:?}", lineno + 1, f))
            })
        };
        let parse_val = |f: &str| {
            f.parse::<f64>().map_err(|_| {
                QpError::BadParameter(format!("line {}: bad value {:?}", lineno + 1, f))
            })
        };
        entries.push(RawEntry {
            row: parse_idx(fields[0])?,
            col: parse_idx(fields[1])?,
            value: Complex64::new(parse_val(fields[2])?, parse_val(fields[3])?),
        });
    }
    if entries.is_empty() {
        return Err(QpError::BadParameter("raw matrix table has no entries".into()));
    }
    Ok(entries)
}

/// A built field state together with its truncation bookkeeping.
#[derive(Clone, Debug)]
pub struct FieldState {
    pub rho: DensityOperator,
    /// Probability weight past the truncation, before renormalization.
    pub leakage: f64,
}

/// Materialize a field state at truncation `n_trunc` levels per mode.
///
/// Fails with [`QpError::TruncationLeak`] when more than `leakage_tol` of the
/// untruncated state's weight lies past the cutoff.
pub fn build_field(spec: &FieldStateSpec, n_trunc: usize, leakage_tol: f64) -> Result<FieldState> {
    if n_trunc < 2 {
        return Err(QpError::BadParameter("truncation must be at least 2".into()));
    }
    if !(leakage_tol >= 0.0) {
        return Err(QpError::BadParameter("leakage tolerance must be nonnegative".into()));
    }
    match spec {
        FieldStateSpec::Fock(n) => build_fock(*n, n_trunc, leakage_tol),
        FieldStateSpec::Coherent(alpha) => {
            require_finite(&[alpha.re, alpha.im], "coherent amplitude")?;
            let amps = coherent_amplitudes(*alpha, n_trunc);
            pure_from_amplitudes(&amps, n_trunc, leakage_tol)
        }
        FieldStateSpec::Thermal(nbar) => build_thermal(*nbar, n_trunc, leakage_tol),
        FieldStateSpec::SqueezedVacuum { r, theta } => {
            require_finite(&[*r, *theta], "squeeze parameter")?;
            if *r < 0.0 {
                return Err(QpError::BadParameter("squeeze magnitude r must be nonnegative".into()));
            }
            let amps = squeezed_vacuum_amplitudes(*r, *theta, n_trunc);
            pure_from_amplitudes(&amps, n_trunc, leakage_tol)
        }
        FieldStateSpec::Cat { alpha, phase } => build_cat(*alpha, *phase, n_trunc, leakage_tol),
        FieldStateSpec::TwoModeSqueezedVacuum { r } => build_tmsv(*r, n_trunc, leakage_tol),
        FieldStateSpec::RawMatrix(raw) => build_raw(raw, n_trunc),
    }
}

fn require_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(QpError::BadParameter(format!("{} must be finite", what)));
    }
    Ok(())
}

fn build_fock(n: usize, n_trunc: usize, leakage_tol: f64) -> Result<FieldState> {
    if n >= n_trunc {
        if 1.0 > leakage_tol {
            return Err(QpError::TruncationLeak(format!(
                "Fock level {} does not fit below truncation {}",
                n, n_trunc
            )));
        }
        return Err(QpError::BadParameter(format!("Fock level {} >= truncation {}", n, n_trunc)));
    }
    let space = HilbertSpace::new(&[n_trunc])?;
    let mut v = vec![Complex64::new(0.0, 0.0); n_trunc];
    v[n] = Complex64::new(1.0, 0.0);
    Ok(FieldState { rho: DensityOperator::from_pure(space, &v)?, leakage: 0.0 })
}

fn build_thermal(nbar: f64, n_trunc: usize, leakage_tol: f64) -> Result<FieldState> {
    require_finite(&[nbar], "thermal occupation")?;
    if nbar < 0.0 {
        return Err(QpError::BadParameter("thermal occupation must be nonnegative".into()));
    }
    let q = nbar / (1.0 + nbar);
    let leakage = q.powi(n_trunc as i32);
    if leakage > leakage_tol {
        return Err(QpError::TruncationLeak(format!(
            "thermal nbar {} leaks {:.3e} past truncation {}, tolerance {:.3e}",
            nbar, leakage, n_trunc, leakage_tol
        )));
    }
    let mut mat = DMatrix::zeros(n_trunc, n_trunc);
    let mut p = 1.0 / (1.0 + nbar);
    let mut total = 0.0;
    for n in 0..n_trunc {
        mat[(n, n)] = Complex64::new(p, 0.0);
        total += p;
        p *= q;
    }
    for n in 0..n_trunc {
        mat[(n, n)] /= Complex64::new(total, 0.0);
    }
    let space = HilbertSpace::new(&[n_trunc])?;
    Ok(FieldState { rho: DensityOperator::trusted_from_parts(space, mat), leakage })
}

fn build_cat(alpha: Complex64, phase: f64, n_trunc: usize, leakage_tol: f64) -> Result<FieldState> {
    require_finite(&[alpha.re, alpha.im, phase], "cat parameters")?;
    let norm_sq = 2.0 + 2.0 * phase.cos() * (-2.0 * alpha.norm_sqr()).exp();
    if norm_sq < 1e-12 {
        return Err(QpError::BadParameter(
            "cat state norm vanishes for this amplitude and parity phase".into(),
        ));
    }
    let plus = coherent_amplitudes(alpha, n_trunc);
    let rot = Complex64::from_polar(1.0, phase);
    let inv = Complex64::new(1.0 / norm_sq.sqrt(), 0.0);
    let amps: Vec<Complex64> = plus
        .iter()
        .enumerate()
        .map(|(n, &c)| {
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            (c + rot * c * sign) * inv
        })
        .collect();
    pure_from_amplitudes(&amps, n_trunc, leakage_tol)
}

fn build_tmsv(r: f64, n_trunc: usize, leakage_tol: f64) -> Result<FieldState> {
    require_finite(&[r], "squeeze magnitude")?;
    if r < 0.0 {
        return Err(QpError::BadParameter("squeeze magnitude r must be nonnegative".into()));
    }
    let t = r.tanh();
    let leakage = t.powi(2 * n_trunc as i32);
    if leakage > leakage_tol {
        return Err(QpError::TruncationLeak(format!(
            "two-mode squeezed vacuum r {} leaks {:.3e} past truncation {}, tolerance {:.3e}",
            r, leakage, n_trunc, leakage_tol
        )));
    }
    let space = HilbertSpace::new(&[n_trunc, n_trunc])?;
    let mut v = vec![Complex64::new(0.0, 0.0); n_trunc * n_trunc];
    let mut c = 1.0 / r.cosh();
    let mut norm_sq = 0.0;
    for n in 0..n_trunc {
        v[space.basis_index(&[n, n])] = Complex64::new(c, 0.0);
        norm_sq += c * c;
        c *= -t;
    }
    let inv = Complex64::new(1.0 / norm_sq.sqrt(), 0.0);
    for z in v.iter_mut() {
        *z *= inv;
    }
    Ok(FieldState { rho: DensityOperator::from_pure(space, &v)?, leakage })
}

fn build_raw(raw: &RawMatrixSpec, n_trunc: usize) -> Result<FieldState> {
    if raw.modes != 1 && raw.modes != 2 {
        return Err(QpError::BadParameter(format!("raw matrix supports 1 or 2 modes, got {}", raw.modes)));
    }
    let dims = vec![n_trunc; raw.modes];
    let space = HilbertSpace::new(&dims)?;
    let d = space.total_dim();
    let mut mat: DMatrix<Complex64> = DMatrix::zeros(d, d);
    let mut given = vec![false; d * d];
    for e in &raw.entries {
        if e.row >= d || e.col >= d {
            return Err(QpError::BadParameter(format!(
                "raw entry ({}, {}) outside the {}-dimensional truncated space",
                e.row, e.col, d
            )));
        }
        if given[e.row * d + e.col] {
            return Err(QpError::BadParameter(format!("duplicate raw entry ({}, {})", e.row, e.col)));
        }
        given[e.row * d + e.col] = true;
        mat[(e.row, e.col)] = e.value;
    }
    // Fill in omitted conjugate partners; explicit but inconsistent pairs are
    // left for validation to reject.
    for r in 0..d {
        for c in 0..d {
            if given[r * d + c] && !given[c * d + r] {
                mat[(c, r)] = mat[(r, c)].conj();
            }
        }
    }
    let trace: Complex64 = (0..d).map(|i| mat[(i, i)]).sum();
    if trace.re <= 0.0 || trace.im.abs() > 1e-12 * trace.re.max(1.0) {
        return Err(QpError::BadParameter(format!(
            "raw matrix trace {:.6} + {:.2e}i is not usable for normalization",
            trace.re, trace.im
        )));
    }
    mat /= Complex64::new(trace.re, 0.0);
    Ok(FieldState { rho: DensityOperator::new(space, mat)?, leakage: 0.0 })
}

/// Coherent-state amplitudes c_0..c_{N-1}, computed by the stable recurrence
/// c_n = c_{n-1} alpha / sqrt(n).
fn coherent_amplitudes(alpha: Complex64, n_trunc: usize) -> Vec<Complex64> {
    let mut amps = Vec::with_capacity(n_trunc);
    let mut c = Complex64::new((-0.5 * alpha.norm_sqr()).exp(), 0.0);
    for n in 0..n_trunc {
        if n > 0 {
            c *= alpha / Complex64::new((n as f64).sqrt(), 0.0);
        }
        amps.push(c);
    }
    amps
}

fn squeezed_vacuum_amplitudes(r: f64, theta: f64, n_trunc: usize) -> Vec<Complex64> {
    let mut amps = vec![Complex64::new(0.0, 0.0); n_trunc];
    let step = Complex64::from_polar(r.tanh(), theta) * Complex64::new(-1.0, 0.0);
    let mut c = Complex64::new((1.0 / r.cosh()).sqrt(), 0.0);
    let mut n = 0;
    while n < n_trunc {
        amps[n] = c;
        let m = n as f64;
        c *= step * Complex64::new(((m + 1.0) / (m + 2.0)).sqrt(), 0.0);
        n += 2;
    }
    amps
}

/// Turn untruncated-normalized amplitudes into a truncated, renormalized pure
/// density matrix, accounting the lost weight as leakage.
fn pure_from_amplitudes(amps: &[Complex64], n_trunc: usize, leakage_tol: f64) -> Result<FieldState> {
    let kept: f64 = amps.iter().map(|c| c.norm_sqr()).sum();
    let leakage = (1.0 - kept).max(0.0);
    if leakage > leakage_tol {
        return Err(QpError::TruncationLeak(format!(
            "state leaks {:.3e} past truncation {}, tolerance {:.3e}",
            leakage, n_trunc, leakage_tol
        )));
    }
    let space = HilbertSpace::new(&[n_trunc])?;
    Ok(FieldState { rho: DensityOperator::from_pure(space, amps)?, leakage })
}

/// Recipe for the probe's initial state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProbeStateSpec {
    Ground,
    Excited,
    /// (|g> + e^{i phi} |e>)/sqrt(2).
    PlusPhi(f64),
    /// (|g> - e^{i phi} |e>)/sqrt(2).
    MinusPhi(f64),
    /// (|gg> + e^{i theta} |ee>)/sqrt(2) on two probe qubits.
    BellPhiPlus(f64),
    /// (|gg> - e^{i theta} |ee>)/sqrt(2).
    BellPhiMinus(f64),
    /// (|ge> + |eg>)/sqrt(2).
    PsiPlus,
}

impl ProbeStateSpec {
    pub fn qubits(&self) -> usize {
        match self {
            ProbeStateSpec::BellPhiPlus(_) | ProbeStateSpec::BellPhiMinus(_) | ProbeStateSpec::PsiPlus => 2,
            _ => 1,
        }
    }
}

/// Materialize a probe state as a pure density matrix.
pub fn build_probe(spec: &ProbeStateSpec) -> DensityOperator {
    let c = Complex64::new;
    let inv = 1.0 / 2f64.sqrt();
    let (dims, v): (&[usize], Vec<Complex64>) = match spec {
        ProbeStateSpec::Ground => (&[2], vec![c(1.0, 0.0), c(0.0, 0.0)]),
        ProbeStateSpec::Excited => (&[2], vec![c(0.0, 0.0), c(1.0, 0.0)]),
        ProbeStateSpec::PlusPhi(phi) => {
            (&[2], vec![c(inv, 0.0), Complex64::from_polar(inv, *phi)])
        }
        ProbeStateSpec::MinusPhi(phi) => {
            (&[2], vec![c(inv, 0.0), -Complex64::from_polar(inv, *phi)])
        }
        ProbeStateSpec::BellPhiPlus(theta) => (
            &[2, 2],
            vec![c(inv, 0.0), c(0.0, 0.0), c(0.0, 0.0), Complex64::from_polar(inv, *theta)],
        ),
        ProbeStateSpec::BellPhiMinus(theta) => (
            &[2, 2],
            vec![c(inv, 0.0), c(0.0, 0.0), c(0.0, 0.0), -Complex64::from_polar(inv, *theta)],
        ),
        ProbeStateSpec::PsiPlus => {
            (&[2, 2], vec![c(0.0, 0.0), c(inv, 0.0), c(inv, 0.0), c(0.0, 0.0)])
        }
    };
    let space = HilbertSpace::new(dims).expect("static dims");
    DensityOperator::from_pure(space, &v).expect("probe states are normalized by construction")
}

/// Joint initial state, probe subsystems first, then the field mode(s).
pub fn compose(probe: &DensityOperator, field: &DensityOperator) -> DensityOperator {
    let joint = kron(probe.operator(), field.operator());
    DensityOperator::trusted(joint)
}
