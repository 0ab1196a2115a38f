//! Dense operator algebra on small multipartite Hilbert spaces.
//!
//! Conventions used throughout the crate:
//!
//! * Subsystems are ordered probe qubit(s) first, then field mode(s).
//!   Subsystem 0 is the leftmost Kronecker factor, so its index varies
//!   slowest in the composite basis.
//! * Qubit basis: index 0 is the ground state |g>, index 1 the excited
//!   state |e>. The lowering operator maps |e> to |g>.
//! * Fock spaces are hard-truncated at `dim` levels (occupations 0..dim-1);
//!   the ladder operators simply drop the flow past the top level.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{QpError, Result};

/// Max deviation from Hermitian symmetry tolerated by the density-operator invariant.
pub const HERMITICITY_TOL: f64 = 1e-10;
/// Max deviation of the trace from one tolerated by the density-operator invariant.
pub const TRACE_TOL: f64 = 1e-10;
/// Most negative eigenvalue tolerated by the density-operator positivity invariant.
pub const POSITIVITY_TOL: f64 = 1e-8;

/// Tensor-product structure of a state space: one dimension per subsystem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HilbertSpace {
    dims: Vec<usize>,
}

impl HilbertSpace {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(QpError::BadParameter("hilbert space needs at least one subsystem".into()));
        }
        if dims.contains(&0) {
            return Err(QpError::BadParameter("subsystem dimension must be positive".into()));
        }
        Ok(Self { dims: dims.to_vec() })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn subsystems(&self) -> usize {
        self.dims.len()
    }

    pub fn total_dim(&self) -> usize {
        self.dims.iter().product()
    }

    /// Stride of subsystem `k` in the composite basis index
    /// (product of the dimensions to its right).
    pub fn stride(&self, k: usize) -> usize {
        self.dims[k + 1..].iter().product()
    }

    /// Composite basis index of a per-subsystem occupation tuple.
    pub fn basis_index(&self, occupations: &[usize]) -> usize {
        debug_assert_eq!(occupations.len(), self.dims.len());
        occupations
            .iter()
            .zip(&self.dims)
            .fold(0, |acc, (&n, &d)| {
                debug_assert!(n < d);
                acc * d + n
            })
    }

    /// Space obtained by joining `self` with `other` (self's subsystems first).
    pub fn join(&self, other: &HilbertSpace) -> HilbertSpace {
        let mut dims = self.dims.clone();
        dims.extend_from_slice(&other.dims);
        HilbertSpace { dims }
    }
}

/// A linear operator tagged with the space it acts on.
#[derive(Clone, Debug)]
pub struct Operator {
    space: HilbertSpace,
    mat: DMatrix<Complex64>,
}

impl Operator {
    pub fn from_matrix(space: HilbertSpace, mat: DMatrix<Complex64>) -> Result<Self> {
        let d = space.total_dim();
        if mat.nrows() != d || mat.ncols() != d {
            return Err(QpError::ShapeMismatch(format!(
                "matrix is {}x{}, space dimension is {}",
                mat.nrows(),
                mat.ncols(),
                d
            )));
        }
        Ok(Self { space, mat })
    }

    pub fn zeros(space: HilbertSpace) -> Self {
        let d = space.total_dim();
        Self { space, mat: DMatrix::zeros(d, d) }
    }

    pub fn identity(space: HilbertSpace) -> Self {
        let d = space.total_dim();
        Self { space, mat: DMatrix::identity(d, d) }
    }

    /// Lift a single-subsystem matrix to the full space:
    /// identity on every factor except `site`.
    pub fn embed(space: &HilbertSpace, site: usize, local: &DMatrix<Complex64>) -> Result<Self> {
        if site >= space.subsystems() {
            return Err(QpError::ShapeMismatch(format!(
                "site {} out of range for {} subsystems",
                site,
                space.subsystems()
            )));
        }
        let d_site = space.dims()[site];
        if local.nrows() != d_site || local.ncols() != d_site {
            return Err(QpError::ShapeMismatch(format!(
                "local operator is {}x{}, subsystem {} has dimension {}",
                local.nrows(),
                local.ncols(),
                site,
                d_site
            )));
        }
        let left: usize = space.dims()[..site].iter().product();
        let right: usize = space.dims()[site + 1..].iter().product();
        let d = space.total_dim();
        let mut mat = DMatrix::zeros(d, d);
        for l in 0..left {
            for (i, j) in (0..d_site).flat_map(|i| (0..d_site).map(move |j| (i, j))) {
                let v = local[(i, j)];
                if v == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for r in 0..right {
                    let row = (l * d_site + i) * right + r;
                    let col = (l * d_site + j) * right + r;
                    mat[(row, col)] = v;
                }
            }
        }
        Ok(Self { space: space.clone(), mat })
    }

    pub fn space(&self) -> &HilbertSpace {
        &self.space
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.mat
    }

    pub fn into_matrix(self) -> DMatrix<Complex64> {
        self.mat
    }

    pub fn dim(&self) -> usize {
        self.mat.nrows()
    }

    pub fn adjoint(&self) -> Operator {
        Operator { space: self.space.clone(), mat: self.mat.adjoint() }
    }

    pub fn scale(&self, factor: Complex64) -> Operator {
        Operator { space: self.space.clone(), mat: self.mat.map(|z| z * factor) }
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim()).map(|i| self.mat[(i, i)]).sum()
    }

    /// Largest absolute deviation from Hermitian symmetry.
    pub fn hermiticity_deviation(&self) -> f64 {
        let d = self.dim();
        let mut dev: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                dev = dev.max((self.mat[(i, j)] - self.mat[(j, i)].conj()).norm());
            }
        }
        dev
    }

    pub fn max_abs(&self) -> f64 {
        self.mat.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
    }
}

macro_rules! op_binop {
    ($trait:ident, $fn:ident, $op:tt) => {
        impl std::ops::$trait for &Operator {
            type Output = Operator;
            fn $fn(self, rhs: &Operator) -> Operator {
                assert_eq!(self.space, rhs.space, "operator arithmetic across different spaces");
                Operator { space: self.space.clone(), mat: &self.mat $op &rhs.mat }
            }
        }
    };
}
op_binop!(Add, add, +);
op_binop!(Sub, sub, -);
op_binop!(Mul, mul, *);

/// Kronecker product. The result space is the concatenation of the factors'
/// subsystem lists, `a` first.
pub fn kron(a: &Operator, b: &Operator) -> Operator {
    let (ra, ca) = (a.mat.nrows(), a.mat.ncols());
    let (rb, cb) = (b.mat.nrows(), b.mat.ncols());
    let mut mat = DMatrix::zeros(ra * rb, ca * cb);
    for ia in 0..ra {
        for ja in 0..ca {
            let va = a.mat[(ia, ja)];
            if va == Complex64::new(0.0, 0.0) {
                continue;
            }
            for ib in 0..rb {
                for jb in 0..cb {
                    mat[(ia * rb + ib, ja * cb + jb)] = va * b.mat[(ib, jb)];
                }
            }
        }
    }
    Operator { space: a.space.join(&b.space), mat }
}

/// A density operator: Hermitian, unit trace, positive semidefinite
/// (within [`HERMITICITY_TOL`], [`TRACE_TOL`] and [`POSITIVITY_TOL`]).
#[derive(Clone, Debug)]
pub struct DensityOperator {
    op: Operator,
}

impl DensityOperator {
    /// Construct with full validation, including a spectral positivity check.
    pub fn new(space: HilbertSpace, mat: DMatrix<Complex64>) -> Result<Self> {
        let op = Operator::from_matrix(space, mat)?;
        let rho = Self { op };
        rho.validate()?;
        Ok(rho)
    }

    /// Density operator of a pure state |v><v|. The vector is normalized.
    pub fn from_pure(space: HilbertSpace, v: &[Complex64]) -> Result<Self> {
        let d = space.total_dim();
        if v.len() != d {
            return Err(QpError::ShapeMismatch(format!(
                "state vector has length {}, space dimension is {}",
                v.len(),
                d
            )));
        }
        let norm_sq: f64 = v.iter().map(|z| z.norm_sqr()).sum();
        if norm_sq <= 0.0 {
            return Err(QpError::BadParameter("state vector is zero".into()));
        }
        let mut mat = DMatrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                mat[(i, j)] = v[i] * v[j].conj() / norm_sq;
            }
        }
        Ok(Self { op: Operator { space, mat } })
    }

    /// Construct from an operator already known to satisfy the invariants
    /// (outputs of unitary evolution, partial traces of valid states, ...).
    /// Cheap checks only; the spectral check is skipped.
    pub(crate) fn trusted(op: Operator) -> Self {
        debug_assert!(op.hermiticity_deviation() <= 100.0 * HERMITICITY_TOL);
        debug_assert!((op.trace().re - 1.0).abs() <= 100.0 * TRACE_TOL);
        Self { op }
    }

    pub(crate) fn trusted_from_parts(space: HilbertSpace, mat: DMatrix<Complex64>) -> Self {
        Self::trusted(Operator { space, mat })
    }

    /// Re-check all three invariants.
    pub fn validate(&self) -> Result<()> {
        let dev = self.op.hermiticity_deviation();
        if dev > HERMITICITY_TOL {
            return Err(QpError::NotHermitian { dev, tol: HERMITICITY_TOL });
        }
        let tr = self.op.trace();
        if (tr.re - 1.0).abs() > TRACE_TOL || tr.im.abs() > TRACE_TOL {
            return Err(QpError::NotDensity(format!("trace is {:.12} + {:.3e}i, need 1", tr.re, tr.im)));
        }
        // rho is positive semidefinite within tolerance iff rho + tol*I admits
        // a Cholesky factorization with positive pivots; this avoids an
        // iterative eigensolve, which can break down on degenerate matrices.
        let d = self.op.dim();
        let shifted = self.op.mat.clone() + DMatrix::identity(d, d) * Complex64::new(POSITIVITY_TOL, 0.0);
        if !cholesky_pivots_positive(shifted) {
            return Err(QpError::NotDensity(format!(
                "an eigenvalue lies below -{:.1e}, not positive semidefinite",
                POSITIVITY_TOL
            )));
        }
        Ok(())
    }

    pub fn space(&self) -> &HilbertSpace {
        self.op.space()
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        self.op.matrix()
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    /// Matrix element <m| rho |n> of the composite basis.
    pub fn element(&self, row: usize, col: usize) -> Complex64 {
        self.op.mat[(row, col)]
    }
}

/// Eigendecomposition of a Hermitian operator: `h = V diag(lambda) V^dag`
/// with eigenvalues ascending and `V` unitary.
pub struct EigH {
    pub eigenvalues: Vec<f64>,
    pub vectors: Operator,
}

/// Eigendecomposition of a Hermitian operator.
///
/// The nonzero pattern of `h` is split into connected components first and each
/// block is diagonalized on its own. The interaction Hamiltonians used here
/// couple basis states in blocks of dimension at most three, so this runs in
/// O(d) for them while remaining a plain dense solve for unstructured input.
pub fn eig_hermitian(h: &Operator) -> Result<EigH> {
    let decomp = SpectralDecomp::new(h)?;
    let d = h.dim();
    let mut order: Vec<(f64, usize, usize)> = Vec::with_capacity(d);
    for (ci, comp) in decomp.components.iter().enumerate() {
        for (k, &lambda) in comp.eigenvalues.iter().enumerate() {
            order.push((lambda, ci, k));
        }
    }
    order.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut vectors = DMatrix::zeros(d, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (col, &(lambda, ci, k)) in order.iter().enumerate() {
        eigenvalues.push(lambda);
        let comp = &decomp.components[ci];
        for (local_row, &global_row) in comp.indices.iter().enumerate() {
            vectors[(global_row, col)] = comp.vectors[(local_row, k)];
        }
    }
    Ok(EigH {
        eigenvalues,
        vectors: Operator { space: h.space.clone(), mat: vectors },
    })
}

/// One diagonalized connected component of a Hamiltonian's coupling graph.
pub(crate) struct SpectralComponent {
    /// Global basis indices of this block, ascending.
    pub indices: Vec<usize>,
    /// Block eigenvalues, ascending.
    pub eigenvalues: Vec<f64>,
    /// Block eigenvectors in block-local row order, one column per eigenvalue.
    pub vectors: DMatrix<Complex64>,
}

/// Block-diagonalized Hermitian operator, the reusable core of both
/// [`eig_hermitian`] and the spectral time-evolution cache.
pub(crate) struct SpectralDecomp {
    pub dim: usize,
    pub components: Vec<SpectralComponent>,
}

impl SpectralDecomp {
    pub fn new(h: &Operator) -> Result<Self> {
        Self::aligned(h, None)
    }

    /// Like [`SpectralDecomp::new`], but components are additionally merged
    /// across the nonzero pattern of `align`, so that a measurement operator
    /// with off-diagonal elements stays block-diagonal in the merged layout.
    pub fn aligned(h: &Operator, align: Option<&Operator>) -> Result<Self> {
        let dev = h.hermiticity_deviation();
        if dev > HERMITICITY_TOL {
            return Err(QpError::NotHermitian { dev, tol: HERMITICITY_TOL });
        }
        let d = h.dim();
        let mut uf = UnionFind::new(d);
        let zero = Complex64::new(0.0, 0.0);
        for j in 0..d {
            for i in 0..d {
                if i != j && h.mat[(i, j)] != zero {
                    uf.union(i, j);
                }
            }
        }
        if let Some(a) = align {
            assert_eq!(a.dim(), d, "alignment operator dimension mismatch");
            for j in 0..d {
                for i in 0..d {
                    if i != j && a.mat[(i, j)] != zero {
                        uf.union(i, j);
                    }
                }
            }
        }

        let mut groups: std::collections::BTreeMap<usize, Vec<usize>> = std::collections::BTreeMap::new();
        for i in 0..d {
            groups.entry(uf.find(i)).or_default().push(i);
        }

        let mut components = Vec::with_capacity(groups.len());
        for (_, indices) in groups {
            let n = indices.len();
            let mut block = DMatrix::zeros(n, n);
            for (bi, &gi) in indices.iter().enumerate() {
                for (bj, &gj) in indices.iter().enumerate() {
                    block[(bi, bj)] = h.mat[(gi, gj)];
                }
            }
            let se = block.symmetric_eigen();
            if se.eigenvalues.iter().any(|l| !l.is_finite()) {
                return Err(QpError::Numerics(format!(
                    "eigensolver did not converge on a {}-dimensional block",
                    n
                )));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
            let eigenvalues: Vec<f64> = order.iter().map(|&k| se.eigenvalues[k]).collect();
            let mut vectors = DMatrix::zeros(n, n);
            for (col, &k) in order.iter().enumerate() {
                vectors.set_column(col, &se.eigenvectors.column(k));
            }
            components.push(SpectralComponent { indices, eigenvalues, vectors });
        }
        Ok(Self { dim: d, components })
    }

    /// Apply `exp(-i h tau) rho exp(+i h tau)` without materializing the full propagator.
    pub fn evolve_density(&self, rho: &DMatrix<Complex64>, tau: f64) -> DMatrix<Complex64> {
        let mut out = rho.clone();
        for comp in &self.components {
            let b = comp.propagator_block(tau);
            // Left-multiply the block rows: out[I, :] = B * out[I, :].
            let n = comp.indices.len();
            let cols = out.ncols();
            let mut rows = DMatrix::zeros(n, cols);
            for (bi, &gi) in comp.indices.iter().enumerate() {
                for c in 0..cols {
                    rows[(bi, c)] = out[(gi, c)];
                }
            }
            let rows = &b * rows;
            for (bi, &gi) in comp.indices.iter().enumerate() {
                for c in 0..cols {
                    out[(gi, c)] = rows[(bi, c)];
                }
            }
        }
        for comp in &self.components {
            let b = comp.propagator_block(tau);
            // Right-multiply the block columns: out[:, I] = out[:, I] * B^dag.
            let n = comp.indices.len();
            let rows_n = out.nrows();
            let mut cols_m = DMatrix::zeros(rows_n, n);
            for (bj, &gj) in comp.indices.iter().enumerate() {
                for r in 0..rows_n {
                    cols_m[(r, bj)] = out[(r, gj)];
                }
            }
            let cols_m = cols_m * b.adjoint();
            for (bj, &gj) in comp.indices.iter().enumerate() {
                for r in 0..rows_n {
                    out[(r, gj)] = cols_m[(r, bj)];
                }
            }
        }
        out
    }
}

impl SpectralComponent {
    /// Block propagator `V diag(e^{-i lambda tau}) V^dag`.
    fn propagator_block(&self, tau: f64) -> DMatrix<Complex64> {
        let n = self.indices.len();
        let mut phases = DMatrix::zeros(n, n);
        for k in 0..n {
            let phase = Complex64::from_polar(1.0, -self.eigenvalues[k] * tau);
            phases[(k, k)] = phase;
        }
        &self.vectors * phases * self.vectors.adjoint()
    }
}

/// In-place Hermitian Cholesky that reports whether every pivot stayed
/// positive, i.e. whether the matrix is positive definite.
fn cholesky_pivots_positive(mut m: DMatrix<Complex64>) -> bool {
    let d = m.nrows();
    for j in 0..d {
        let mut pivot = m[(j, j)].re;
        for k in 0..j {
            pivot -= m[(j, k)].norm_sqr();
        }
        if pivot <= 0.0 || !pivot.is_finite() {
            return false;
        }
        let ljj = pivot.sqrt();
        m[(j, j)] = Complex64::new(ljj, 0.0);
        for i in j + 1..d {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= m[(i, k)] * m[(j, k)].conj();
            }
            m[(i, j)] = v / ljj;
        }
    }
    true
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Unitary evolution `rho(tau) = e^{-i h tau} rho e^{+i h tau}` for dimensionless
/// time `tau = g t`. Negative `tau` is legitimate and gives the inverse rotation.
pub fn evolve(rho: &DensityOperator, h: &Operator, tau: f64) -> Result<DensityOperator> {
    if rho.space() != h.space() {
        return Err(QpError::ShapeMismatch("state and Hamiltonian act on different spaces".into()));
    }
    let decomp = SpectralDecomp::new(h)?;
    let mat = decomp.evolve_density(rho.matrix(), tau);
    Ok(DensityOperator::trusted(Operator { space: rho.space().clone(), mat }))
}

/// Trace of `rho * o`.
pub fn expectation(rho: &DensityOperator, o: &Operator) -> Result<Complex64> {
    if rho.space() != o.space() {
        return Err(QpError::ShapeMismatch("state and observable act on different spaces".into()));
    }
    let d = o.dim();
    let mut acc = Complex64::new(0.0, 0.0);
    for i in 0..d {
        for j in 0..d {
            acc += rho.matrix()[(i, j)] * o.matrix()[(j, i)];
        }
    }
    Ok(acc)
}

/// Real part of an expectation value whose operator is Hermitian.
/// Errors if the imaginary residue is large.
pub fn real_expectation(rho: &DensityOperator, o: &Operator) -> Result<f64> {
    let z = expectation(rho, o)?;
    let scale = 1.0_f64.max(z.re.abs());
    if z.im.abs() > 1e-8 * scale {
        return Err(QpError::NonRealResult { residue: z.im.abs(), tol: 1e-8 });
    }
    Ok(z.re)
}

/// Trace out every subsystem not listed in `keep` (ascending, no duplicates).
pub fn partial_trace(rho: &DensityOperator, keep: &[usize]) -> Result<DensityOperator> {
    let dims = rho.space().dims();
    if keep.is_empty() {
        return Err(QpError::BadParameter("must keep at least one subsystem".into()));
    }
    if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= dims.len() {
        return Err(QpError::BadParameter(format!(
            "keep list {:?} is not a strictly ascending subset of 0..{}",
            keep,
            dims.len()
        )));
    }

    let traced: Vec<usize> = (0..dims.len()).filter(|s| !keep.contains(s)).collect();
    let keep_dims: Vec<usize> = keep.iter().map(|&s| dims[s]).collect();
    let out_space = HilbertSpace::new(&keep_dims)?;
    let out_dim = out_space.total_dim();

    let stride: Vec<usize> = (0..dims.len()).map(|s| rho.space().stride(s)).collect();
    let keep_indices = enumerate_indices(&keep_dims);
    let traced_dims: Vec<usize> = traced.iter().map(|&s| dims[s]).collect();
    let traced_indices = enumerate_indices(&traced_dims);

    let offset = |occ: &[usize], subs: &[usize]| -> usize {
        occ.iter().zip(subs).map(|(&n, &s)| n * stride[s]).sum()
    };

    let mut mat = DMatrix::zeros(out_dim, out_dim);
    for (r, kr) in keep_indices.iter().enumerate() {
        let base_r = offset(kr, keep);
        for (c, kc) in keep_indices.iter().enumerate() {
            let base_c = offset(kc, keep);
            let mut acc = Complex64::new(0.0, 0.0);
            for t in &traced_indices {
                let shift = offset(t, &traced);
                acc += rho.matrix()[(base_r + shift, base_c + shift)];
            }
            mat[(r, c)] = acc;
        }
    }
    Ok(DensityOperator::trusted(Operator { space: out_space, mat }))
}

/// All occupation tuples of the given dimensions, in composite-index order.
pub(crate) fn enumerate_indices(dims: &[usize]) -> Vec<Vec<usize>> {
    let total: usize = dims.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut flat in 0..total {
        let mut occ = vec![0; dims.len()];
        for s in (0..dims.len()).rev() {
            occ[s] = flat % dims[s];
            flat /= dims[s];
        }
        out.push(occ);
    }
    out
}

// Single-subsystem building blocks. These return bare matrices so they can be
// embedded into composite spaces with [`Operator::embed`] or [`kron`].

/// Truncated annihilation operator: `a |n> = sqrt(n) |n-1>`, `a |0> = 0`.
pub fn annihilation(dim: usize) -> DMatrix<Complex64> {
    let mut a = DMatrix::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    a
}

/// Truncated creation operator: `a^dag |n> = sqrt(n+1) |n+1>`, zero past the top level.
pub fn creation(dim: usize) -> DMatrix<Complex64> {
    annihilation(dim).adjoint()
}

/// Number operator `diag(0, 1, ..., dim-1)`.
pub fn number(dim: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            Complex64::new(i as f64, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    })
}

/// Projector |k><k| on a Fock space.
pub fn fock_projector(dim: usize, k: usize) -> DMatrix<Complex64> {
    let mut p = DMatrix::zeros(dim, dim);
    p[(k, k)] = Complex64::new(1.0, 0.0);
    p
}

/// Qubit lowering operator |g><e|.
pub fn sigma_minus() -> DMatrix<Complex64> {
    let mut s = DMatrix::zeros(2, 2);
    s[(0, 1)] = Complex64::new(1.0, 0.0);
    s
}

/// Qubit raising operator |e><g|.
pub fn sigma_plus() -> DMatrix<Complex64> {
    sigma_minus().adjoint()
}

/// Pauli z in the (g, e) ordering: -1 on |g>, +1 on |e>.
pub fn sigma_z() -> DMatrix<Complex64> {
    DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
        Complex64::new(-1.0, 0.0),
        Complex64::new(1.0, 0.0),
    ]))
}

/// Projector |e><e|.
pub fn projector_excited() -> DMatrix<Complex64> {
    fock_projector(2, 1)
}

/// Projector |g><g|.
pub fn projector_ground() -> DMatrix<Complex64> {
    fock_projector(2, 0)
}
