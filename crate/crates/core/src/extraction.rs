//! Reading field moments off probe populations.
//!
//! A two-level probe coupled briefly to the field carries the field's
//! quadrature information in the tau-derivatives of its level populations at
//! tau = 0. This module owns both halves of that statement: numerical
//! derivative estimation on population data (four interchangeable estimators,
//! each with an error estimate), and the protocol layer that assembles the
//! right runs, differentiates them, and maps slopes and curvatures back to
//! moments.
//!
//! Extraction dictionary, with every derivative taken at tau = 0 and
//! D = P^{+} - P^{-} the signed difference of the two rotated-probe runs:
//!
//! ```text
//! JC probe |+_phi>, excited pop.      dP/dtau   = <Y_phi>
//! JC probe, rotated-pair difference   dD/dtau   = 2 <Y_phi>
//! JC probe |e>, ground pop.           d2P/dtau2 = 2 (<n> + 1)
//! two-photon probe, ground diff.      dD/dtau   = 4 S(phi)   at probe phase 2 phi + pi/2
//! atom pair, psi+ difference          d2D/dtau2 = 16 S(phi)  at Bell phase 2 phi
//! mode-exchange probe, excited diff.  dD/dtau   = <A(delta)> at probe phase delta - pi/2
//! pair-creation probe, excited diff.  dD/dtau   = <B(sigma)> at probe phase -sigma - pi/2
//! ```
//!
//! Here S(phi) = <X_phi^2> - 1/4 - <n>/2 is the anomalous coherence sum, and
//! <X_phi> is read as <Y_{phi - pi/2}> by shifting the probe phase. Every
//! extraction also evaluates the matching [`oracle`] moment on the input
//! state, so the protocol's answer ships next to the ground truth it can be
//! audited against.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::evolution::{
    difference_of, linear_grid, lindblad_series, mirror_even, mirror_odd, population_series,
    LindbladSpec, PopulationCurve, PopulationSeries,
};
use crate::interactions::{build_interaction, InteractionSpec};
use crate::opsalg::{
    kron, partial_trace, projector_excited, projector_ground, DensityOperator, HilbertSpace,
    Operator,
};
use crate::oracle::{dual_moment, Observable};
use crate::sampling::{sample_difference, sample_series, ShotSpec};
use crate::states::{build_probe, compose, ProbeStateSpec};

/// Slope-to-correlator calibration for the mode-exchange difference:
/// dD/dtau = EXCHANGE_CALIBRATION * <A(delta)> once the probe phase is set to
/// delta - pi/2. Pinned by a regression test against the oracle on
/// (|10> + |01>)/sqrt(2).
pub const EXCHANGE_CALIBRATION: f64 = 1.0;

/// Same for the pair-creation difference: dD/dtau = PAIR_CALIBRATION *
/// <B(sigma)> at probe phase -sigma - pi/2. Pinned against the oracle on a
/// two-mode squeezed vacuum.
pub const PAIR_CALIBRATION: f64 = 1.0;

/// Default decision margin for the separability check: a variance sum within
/// this distance of the bound is not called a violation. Suitable for
/// noiseless extractions; shot-noise pipelines should pass something like
/// their own error estimate instead.
pub const DUAN_DECISION_TOL: f64 = 1e-8;

/// Which tau-derivative of the population curve an estimator targets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivOrder {
    First,
    Second,
}

impl DerivOrder {
    fn index(self) -> usize {
        match self {
            DerivOrder::First => 1,
            DerivOrder::Second => 2,
        }
    }

    fn factorial(self) -> f64 {
        match self {
            DerivOrder::First => 1.0,
            DerivOrder::Second => 2.0,
        }
    }
}

/// Numerical derivative estimator, with its tuning knobs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DerivMethod {
    /// Central finite difference of the given accuracy order (2 or 4).
    CentralFd { step: f64, accuracy: usize },
    /// Central difference extrapolated over halved steps; the workhorse for
    /// exactly evaluable curves.
    Richardson { initial_step: f64, levels: usize },
    /// Weighted least-squares polynomial through the points inside the
    /// window; the workhorse for sampled grids.
    Polyfit { degree: usize, window: f64 },
    /// Gaussian smoothing-kernel quadrature: integrating the series against
    /// a derivative-of-Gaussian weight reads off P'(0) or P''(0) with an
    /// O(sigma^2) bias. `extrapolate` removes that bias by Richardson
    /// extrapolation over sigma, sigma/2, sigma/4 (on sampled grids this
    /// needs spacing <= sigma/24).
    KernelIntegral {
        sigma: f64,
        #[serde(default)]
        extrapolate: bool,
    },
}

impl DerivMethod {
    /// Order-adaptive default for exactly evaluable curves.
    pub fn default_evaluable() -> Self {
        DerivMethod::Richardson { initial_step: 0.4, levels: 7 }
    }

    /// Default for sampled or otherwise gridded series.
    pub fn default_gridded() -> Self {
        DerivMethod::Polyfit { degree: 4, window: 0.3 }
    }

    /// The step, window or kernel width, for reporting.
    pub fn step_or_width(&self) -> f64 {
        match *self {
            DerivMethod::CentralFd { step, .. } => step,
            DerivMethod::Richardson { initial_step, .. } => initial_step,
            DerivMethod::Polyfit { window, .. } => window,
            DerivMethod::KernelIntegral { sigma, .. } => sigma,
        }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        let positive = |x: f64, what: &str| {
            if x.is_finite() && x > 0.0 {
                Ok(())
            } else {
                Err(QpError::BadParameter(format!("{what} must be positive and finite, got {x}")))
            }
        };
        match *self {
            DerivMethod::CentralFd { step, accuracy } => {
                positive(step, "finite-difference step")?;
                if accuracy != 2 && accuracy != 4 {
                    return Err(QpError::BadParameter(format!(
                        "central differences are implemented at accuracy 2 and 4, got {accuracy}"
                    )));
                }
                Ok(())
            }
            DerivMethod::Richardson { initial_step, levels } => {
                positive(initial_step, "initial step")?;
                if !(3..=12).contains(&levels) {
                    return Err(QpError::BadParameter(format!(
                        "step-halving levels must lie in 3..=12, got {levels}"
                    )));
                }
                Ok(())
            }
            DerivMethod::Polyfit { degree, window } => {
                positive(window, "fit window")?;
                if degree == 0 || degree > 40 {
                    return Err(QpError::BadParameter(format!(
                        "fit degree must lie in 1..=40, got {degree}"
                    )));
                }
                Ok(())
            }
            DerivMethod::KernelIntegral { sigma, .. } => positive(sigma, "kernel width"),
        }
    }
}

/// A derivative at tau = 0 together with how it was obtained and how far off
/// it is believed to be.
#[derive(Clone, Debug, Serialize)]
pub struct DerivativeEstimate {
    pub value: f64,
    pub order: DerivOrder,
    pub method: DerivMethod,
    pub step_or_width: f64,
    pub error_estimate: f64,
    /// Weighted rms misfit of the polynomial fit, reported so an oversized
    /// window shows up as a residual jump. `None` for non-fit methods.
    pub fit_residual: Option<f64>,
}

/// What the estimator differentiates: an exactly evaluable curve or a fixed
/// grid of recorded points.
pub enum DerivSource<'a> {
    Evaluable(&'a dyn Fn(f64) -> f64),
    Gridded(&'a PopulationSeries),
}

fn roundoff_floor(order: DerivOrder, fscale: f64, h: f64) -> f64 {
    let eps = f64::EPSILON * fscale.max(1.0);
    match order {
        DerivOrder::First => eps / h,
        DerivOrder::Second => 4.0 * eps / (h * h),
    }
}

/// Estimate a derivative of the population curve at tau = 0.
///
/// Stencil methods (central differences, step-halving extrapolation) need an
/// evaluable source and refuse grids; fitting and kernel methods accept
/// either, synthesizing a symmetric grid of their own when handed a curve.
/// Per-point variances on sampled grids weight the fit and propagate into the
/// error estimate.
pub fn derivative_at_zero(
    source: &DerivSource,
    order: DerivOrder,
    method: &DerivMethod,
) -> Result<DerivativeEstimate> {
    method.validate()?;
    let (value, error_estimate, fit_residual) = match (method, source) {
        (DerivMethod::CentralFd { step, accuracy }, DerivSource::Evaluable(f)) => {
            let (v, e) = central_fd(*f, order, *step, *accuracy);
            (v, e, None)
        }
        (DerivMethod::Richardson { initial_step, levels }, DerivSource::Evaluable(f)) => {
            let (v, e) = richardson(*f, order, *initial_step, *levels);
            (v, e, None)
        }
        (DerivMethod::CentralFd { .. } | DerivMethod::Richardson { .. }, DerivSource::Gridded(_)) => {
            return Err(QpError::SourceMismatch(
                "stencil estimators evaluate the curve at their own abscissae; \
                 fit or kernel methods handle fixed grids"
                    .into(),
            ));
        }
        (DerivMethod::Polyfit { degree, window }, _) => {
            let (taus, values, variances) = fit_points(source, *window)?;
            let (v, e, r) =
                polyfit_derivative(&taus, &values, variances.as_deref(), order, *degree, *window)?;
            (v, e, Some(r))
        }
        (DerivMethod::KernelIntegral { sigma, extrapolate }, _) => {
            let (v, e) = kernel_derivative(source, order, *sigma, *extrapolate)?;
            (v, e, None)
        }
    };
    Ok(DerivativeEstimate {
        value,
        order,
        method: *method,
        step_or_width: method.step_or_width(),
        error_estimate,
        fit_residual,
    })
}

fn central_fd(f: &dyn Fn(f64) -> f64, order: DerivOrder, h: f64, accuracy: usize) -> (f64, f64) {
    let f0 = f(0.0);
    let (f1p, f1m) = (f(h), f(-h));
    let (f2p, f2m) = (f(2.0 * h), f(-2.0 * h));
    let fscale = [f0, f1p, f1m, f2p, f2m].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (acc2, acc4) = match order {
        DerivOrder::First => (
            (f1p - f1m) / (2.0 * h),
            (-f2p + 8.0 * f1p - 8.0 * f1m + f2m) / (12.0 * h),
        ),
        DerivOrder::Second => (
            (f1p - 2.0 * f0 + f1m) / (h * h),
            (-f2p + 16.0 * f1p - 30.0 * f0 + 16.0 * f1m - f2m) / (12.0 * h * h),
        ),
    };
    let value = if accuracy == 2 { acc2 } else { acc4 };
    let error = (acc4 - acc2).abs() + roundoff_floor(order, fscale, h);
    (value, error)
}

fn richardson(f: &dyn Fn(f64) -> f64, order: DerivOrder, h0: f64, levels: usize) -> (f64, f64) {
    let f0 = f(0.0);
    let mut fscale = f0.abs();
    let mut tableau: Vec<Vec<f64>> = Vec::with_capacity(levels + 1);
    let mut best = (0.0, f64::INFINITY);
    for i in 0..=levels {
        let h = h0 * 0.5f64.powi(i as i32);
        let (fp, fm) = (f(h), f(-h));
        fscale = fscale.max(fp.abs()).max(fm.abs());
        let base = match order {
            DerivOrder::First => (fp - fm) / (2.0 * h),
            DerivOrder::Second => (fp - 2.0 * f0 + fm) / (h * h),
        };
        let mut row = Vec::with_capacity(i + 1);
        row.push(base);
        for j in 1..=i {
            let p = 4.0f64.powi(j as i32);
            let v = (p * row[j - 1] - tableau[i - 1][j - 1]) / (p - 1.0);
            row.push(v);
        }
        if i >= 1 {
            let error = (row[i] - row[i - 1]).abs().max(roundoff_floor(order, fscale, h));
            if error < best.1 {
                best = (row[i], error);
            }
        }
        tableau.push(row);
    }
    best
}

fn fit_points(source: &DerivSource, window: f64) -> Result<(Vec<f64>, Vec<f64>, Option<Vec<f64>>)> {
    match source {
        DerivSource::Evaluable(f) => {
            let grid = linear_grid(-window, window, 41)?;
            let values = grid.iter().map(|&t| f(t)).collect();
            Ok((grid, values, None))
        }
        DerivSource::Gridded(series) => Ok((
            series.tau_grid.clone(),
            series.values.clone(),
            series.metadata.variances.clone(),
        )),
    }
}

fn vandermonde_fit(
    u: &[f64],
    y: &[f64],
    weights: &[f64],
    degree: usize,
) -> Result<(DVector<f64>, Vec<f64>)> {
    let n = u.len();
    let cols = degree + 1;
    let mut a = DMatrix::zeros(n, cols);
    let mut b = DVector::zeros(n);
    for i in 0..n {
        for j in 0..cols {
            a[(i, j)] = weights[i] * u[i].powi(j as i32);
        }
        b[i] = weights[i] * y[i];
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().fold(0.0f64, |m, &s| m.max(s));
    let smin = svd.singular_values.iter().fold(f64::INFINITY, |m, &s| m.min(s));
    if !(smin > smax * 1e-12) {
        return Err(QpError::IllConditionedFit(format!(
            "design matrix condition {:.2e} (degree {degree}, {n} points)",
            smax / smin
        )));
    }
    let c = svd
        .solve(&b, smax * 1e-14)
        .map_err(|e| QpError::Numerics(format!("least-squares solve failed: {e}")))?;
    let coeffs = DVector::from_iterator(cols, c.column(0).iter().copied());

    let residual = &a * &coeffs - &b;
    let dof = (n - cols).max(1) as f64;
    let s2 = residual.norm_squared() / dof;
    let v_t = svd.v_t.as_ref().expect("svd computed with v_t");
    let mut coeff_vars = vec![0.0; cols];
    for (k, var) in coeff_vars.iter_mut().enumerate() {
        let mut sum = 0.0;
        for j in 0..cols {
            let vjk = v_t[(j, k)];
            sum += vjk * vjk / (svd.singular_values[j] * svd.singular_values[j]);
        }
        *var = s2 * sum;
    }
    Ok((coeffs, coeff_vars))
}

fn polyfit_derivative(
    taus: &[f64],
    values: &[f64],
    variances: Option<&[f64]>,
    order: DerivOrder,
    degree: usize,
    window: f64,
) -> Result<(f64, f64, f64)> {
    let k = order.index();
    if degree < k {
        return Err(QpError::BadParameter(format!(
            "fit degree {degree} cannot resolve a derivative of order {k}"
        )));
    }
    let mut sel: Vec<usize> = Vec::new();
    for (i, &t) in taus.iter().enumerate() {
        if t.abs() <= window * (1.0 + 1e-12) {
            sel.push(i);
        }
    }
    if sel.len() < degree + 2 {
        return Err(QpError::WindowTooSmall(format!(
            "{} points inside |tau| <= {window}, fit of degree {degree} needs at least {}",
            sel.len(),
            degree + 2
        )));
    }
    let u: Vec<f64> = sel.iter().map(|&i| taus[i] / window).collect();
    let y: Vec<f64> = sel.iter().map(|&i| values[i]).collect();
    let w: Vec<f64> = match variances {
        Some(vars) => sel.iter().map(|&i| 1.0 / vars[i].max(1e-300).sqrt()).collect(),
        None => vec![1.0; sel.len()],
    };

    let fact = order.factorial();
    let scale = window.powi(k as i32);
    let (coeffs, coeff_vars) = vandermonde_fit(&u, &y, &w, degree)?;
    let value = coeffs[k] * fact / scale;
    let statistical = coeff_vars[k].sqrt() * fact / scale;

    let mut bias = 0.0;
    if sel.len() >= degree + 4 {
        let (hi, _) = vandermonde_fit(&u, &y, &w, degree + 2)?;
        bias = (hi[k] * fact / scale - value).abs();
    }

    let (mut wrss, mut wsum) = (0.0, 0.0);
    for (i, &ui) in u.iter().enumerate() {
        let predicted = coeffs.iter().rev().fold(0.0, |acc, &c| acc * ui + c);
        wrss += (w[i] * (y[i] - predicted)).powi(2);
        wsum += w[i] * w[i];
    }
    let residual = (wrss / wsum).sqrt();

    Ok((value, statistical + bias + 1e-13 * (1.0 + value.abs()), residual))
}

/// Raw kernel quadrature at one width. Returns the estimate and the shot-noise
/// standard deviation propagated through the quadrature weights (zero without
/// per-point variances). `strict` enforces the span and spacing requirements;
/// the internal half-width error probe relaxes them.
fn kernel_at(
    source: &DerivSource,
    order: DerivOrder,
    sigma: f64,
    strict: bool,
) -> Result<(f64, f64)> {
    let synthesized: Option<(Vec<f64>, Vec<f64>)> = match source {
        DerivSource::Evaluable(f) => {
            let grid = linear_grid(-8.0 * sigma, 8.0 * sigma, 193)?;
            let values = grid.iter().map(|&t| f(t)).collect();
            Some((grid, values))
        }
        DerivSource::Gridded(_) => None,
    };
    let (taus, values, variances): (&[f64], &[f64], Option<&[f64]>) = match (&synthesized, source) {
        (Some((g, v)), _) => (g, v, None),
        (None, DerivSource::Gridded(series)) => (
            &series.tau_grid,
            &series.values,
            series.metadata.variances.as_deref(),
        ),
        _ => unreachable!(),
    };

    let n = taus.len();
    let span = taus[n - 1] - taus[0];
    for k in 0..n {
        if (taus[k] + taus[n - 1 - k]).abs() > 1e-9 * span {
            return Err(QpError::AsymmetricGrid(format!(
                "kernel quadrature needs a symmetric grid; tau[{k}] = {} has no mirror",
                taus[k]
            )));
        }
    }
    if strict {
        if taus[n - 1] < 6.0 * sigma * (1.0 - 1e-12) {
            return Err(QpError::WindowTooSmall(format!(
                "grid reaches |tau| = {:.3}, kernel of width {sigma} needs at least {:.3}",
                taus[n - 1],
                6.0 * sigma
            )));
        }
        let max_gap = taus.windows(2).map(|w| w[1] - w[0]).fold(0.0f64, f64::max);
        if max_gap > sigma / 6.0 * (1.0 + 1e-9) {
            return Err(QpError::WindowTooSmall(format!(
                "grid spacing {max_gap:.3e} too coarse for kernel width {sigma}; need <= sigma/6"
            )));
        }
    }

    let s2 = sigma * sigma;
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let weight = |t: f64| {
        let g = norm * (-t * t / (2.0 * s2)).exp();
        match order {
            DerivOrder::First => t / s2 * g,
            DerivOrder::Second => (t * t - s2) / (s2 * s2) * g,
        }
    };
    let mut estimate = 0.0;
    let mut noise_var = 0.0;
    for i in 0..n {
        let left = if i > 0 { taus[i] - taus[i - 1] } else { 0.0 };
        let right = if i + 1 < n { taus[i + 1] - taus[i] } else { 0.0 };
        let q = 0.5 * (left + right) * weight(taus[i]);
        estimate += q * values[i];
        if let Some(vars) = variances {
            noise_var += q * q * vars[i];
        }
    }
    Ok((estimate, noise_var.sqrt()))
}

fn kernel_derivative(
    source: &DerivSource,
    order: DerivOrder,
    sigma: f64,
    extrapolate: bool,
) -> Result<(f64, f64)> {
    let (k1, noise1) = kernel_at(source, order, sigma, true)?;
    if !extrapolate {
        let (k2, _) = kernel_at(source, order, sigma / 2.0, false)?;
        let error = 4.0 / 3.0 * (k1 - k2).abs() + noise1 + 1e-13 * (1.0 + k1.abs());
        return Ok((k1, error));
    }
    let (k2, noise2) = kernel_at(source, order, sigma / 2.0, true)?;
    let (k3, noise3) = kernel_at(source, order, sigma / 4.0, true)?;
    let a1 = (4.0 * k2 - k1) / 3.0;
    let a2 = (4.0 * k3 - k2) / 3.0;
    let value = (16.0 * a2 - a1) / 15.0;
    let noise = 1.9 * noise1.max(noise2).max(noise3);
    let error = (value - a2).abs() + noise + 1e-13 * (1.0 + value.abs());
    Ok((value, error))
}

/// Nearest-point lookup on a recorded series, for driving stencil estimators
/// from gridded data when the bias of snapping is acceptable.
pub fn nearest_grid_eval(series: &PopulationSeries) -> impl Fn(f64) -> f64 + '_ {
    move |t: f64| {
        let grid = &series.tau_grid;
        let after = grid.partition_point(|&g| g < t);
        let i = if after == 0 {
            0
        } else if after == grid.len() {
            grid.len() - 1
        } else if (t - grid[after - 1]).abs() <= (grid[after] - t).abs() {
            after - 1
        } else {
            after
        };
        series.values[i]
    }
}

/// An extracted moment next to its oracle value and the derivative estimates
/// it was combined from.
#[derive(Clone, Debug, Serialize)]
pub struct MomentResult {
    pub observable: Observable,
    pub extracted: f64,
    /// Ground truth from [`oracle::dual_moment`](crate::oracle::dual_moment),
    /// when the input state is available.
    pub oracle: Option<f64>,
    /// Propagated estimator error, |combination coefficient|-weighted.
    pub error_estimate: f64,
    pub inputs: Vec<DerivativeEstimate>,
    pub phases: Vec<f64>,
    /// The population series behind this result, companion runs included.
    /// Written out as CSV artifacts by the scenario runner, skipped in JSON.
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
}

impl MomentResult {
    pub fn oracle_gap(&self) -> Option<f64> {
        self.oracle.map(|o| (self.extracted - o).abs())
    }
}

/// How the population series behind an extraction are produced: the recorded
/// grid, optional finite shots, optional dissipation.
#[derive(Clone, Debug)]
pub struct RunPlan {
    pub grid: Vec<f64>,
    pub shots: Option<ShotSpec>,
    pub lindblad: Option<LindbladSpec>,
}

impl RunPlan {
    pub fn noiseless(grid: Vec<f64>) -> Self {
        RunPlan { grid, shots: None, lindblad: None }
    }

    /// Derive an independently seeded copy for a companion run, so the shot
    /// noise of multi-run protocols stays uncorrelated.
    pub fn salted(&self, role: u64) -> RunPlan {
        let mut plan = self.clone();
        if let Some(shots) = &mut plan.shots {
            shots.rng_seed = mix_seed(shots.rng_seed, role);
        }
        plan
    }

    fn forward_grid(&self) -> Result<Vec<f64>> {
        let fwd: Vec<f64> = self.grid.iter().copied().filter(|&t| t >= 0.0).collect();
        if fwd.first() != Some(&0.0) {
            return Err(QpError::AsymmetricGrid(
                "dissipative runs need a grid containing tau = 0".into(),
            ));
        }
        Ok(fwd)
    }
}

fn mix_seed(base: u64, role: u64) -> u64 {
    let mut z = base.wrapping_add(role.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Parity of the underlying curve in tau, used to extend forward-only
/// dissipative data onto a symmetric grid.
#[derive(Clone, Copy, PartialEq)]
pub(crate) enum TauParity {
    Even,
    Odd,
    Free,
}

#[derive(Clone, Copy)]
pub(crate) enum Measure {
    Excited,
    Ground,
    PsiPlus,
}

impl Measure {
    fn label(self) -> &'static str {
        match self {
            Measure::Excited => "excited",
            Measure::Ground => "ground",
            Measure::PsiPlus => "psi+",
        }
    }
}

fn assemble(
    field: &DensityOperator,
    interaction: &InteractionSpec,
    probe: &ProbeStateSpec,
) -> Result<(HilbertSpace, Operator, DensityOperator)> {
    let (qubits, modes) = interaction.layout();
    if probe.qubits() != qubits {
        return Err(QpError::ShapeMismatch(format!(
            "{interaction:?} drives {qubits} probe qubit(s), probe {probe:?} has {}",
            probe.qubits()
        )));
    }
    if field.space().subsystems() != modes {
        return Err(QpError::ShapeMismatch(format!(
            "{interaction:?} couples {modes} mode(s), field state has {}",
            field.space().subsystems()
        )));
    }
    let mut dims = vec![2usize; qubits];
    dims.extend_from_slice(field.space().dims());
    let space = HilbertSpace::new(&dims)?;
    let h = build_interaction(interaction, &space)?;
    let rho0 = compose(&build_probe(probe), field);
    Ok((space, h, rho0))
}

fn probe_label(probe: &ProbeStateSpec) -> String {
    match probe {
        ProbeStateSpec::Ground => "|g>".into(),
        ProbeStateSpec::Excited => "|e>".into(),
        ProbeStateSpec::PlusPhi(phi) => format!("|+({phi:+.4})>"),
        ProbeStateSpec::MinusPhi(phi) => format!("|-({phi:+.4})>"),
        ProbeStateSpec::BellPhiPlus(theta) => format!("|Phi+({theta:+.4})>"),
        ProbeStateSpec::BellPhiMinus(theta) => format!("|Phi-({theta:+.4})>"),
        ProbeStateSpec::PsiPlus => "|Psi+>".into(),
    }
}

fn measurement_projector(space: &HilbertSpace, measure: Measure) -> Result<Operator> {
    match measure {
        Measure::Excited => Operator::embed(space, 0, &projector_excited()),
        Measure::Ground => Operator::embed(space, 0, &projector_ground()),
        Measure::PsiPlus => {
            let probe = build_probe(&ProbeStateSpec::PsiPlus);
            let probe_op = Operator::from_matrix(probe.space().clone(), probe.matrix().clone())?;
            let field_space = HilbertSpace::new(&space.dims()[2..])?;
            Ok(kron(&probe_op, &Operator::identity(field_space)))
        }
    }
}

/// One recorded population series, labeled by the run that produced it, as
/// carried along with extraction results for the output manifest.
#[derive(Clone, Debug)]
pub struct RunRecord {
    pub role: String,
    pub series: PopulationSeries,
}

/// One assembled probe run: the recorded series and, when the evolution is
/// exact and noiseless, the closed-form curve for evaluable differentiation.
pub struct PreparedRun {
    pub series: PopulationSeries,
    curve: Option<PopulationCurve>,
    role: String,
}

impl PreparedRun {
    pub fn derivative(&self, order: DerivOrder, method: &DerivMethod) -> Result<DerivativeEstimate> {
        match &self.curve {
            Some(curve) => {
                let f = |t: f64| curve.eval(t);
                derivative_at_zero(&DerivSource::Evaluable(&f), order, method)
            }
            None => derivative_at_zero(&DerivSource::Gridded(&self.series), order, method),
        }
    }

    /// Benchmark variant: stencil methods consume a recorded grid by snapping
    /// their abscissae to the nearest grid point instead of refusing, so all
    /// estimator families can run on identical noisy data.
    pub fn derivative_snapped(
        &self,
        order: DerivOrder,
        method: &DerivMethod,
    ) -> Result<DerivativeEstimate> {
        if self.curve.is_some() {
            return self.derivative(order, method);
        }
        let f = nearest_grid_eval(&self.series);
        derivative_at_zero(&DerivSource::Evaluable(&f), order, method)
    }

    pub fn record(&self) -> RunRecord {
        RunRecord { role: self.role.clone(), series: self.series.clone() }
    }
}

/// A rotated-probe pair: both branch series (pre-sampling, for the record)
/// and the signed working difference, parity-extended when dissipative.
pub struct PreparedDifference {
    pub plus: PopulationSeries,
    pub minus: PopulationSeries,
    pub series: PopulationSeries,
    curves: Option<(PopulationCurve, PopulationCurve)>,
    role: String,
    role_plus: String,
    role_minus: String,
}

impl PreparedDifference {
    pub fn derivative(&self, order: DerivOrder, method: &DerivMethod) -> Result<DerivativeEstimate> {
        match &self.curves {
            Some((plus, minus)) => {
                let f = |t: f64| plus.eval(t) - minus.eval(t);
                derivative_at_zero(&DerivSource::Evaluable(&f), order, method)
            }
            None => derivative_at_zero(&DerivSource::Gridded(&self.series), order, method),
        }
    }

    /// Grid-snapping counterpart of [`PreparedRun::derivative_snapped`].
    pub fn derivative_snapped(
        &self,
        order: DerivOrder,
        method: &DerivMethod,
    ) -> Result<DerivativeEstimate> {
        if self.curves.is_some() {
            return self.derivative(order, method);
        }
        let f = nearest_grid_eval(&self.series);
        derivative_at_zero(&DerivSource::Evaluable(&f), order, method)
    }

    /// Both branches plus the working difference, in recording order.
    pub fn records(&self) -> Vec<RunRecord> {
        vec![
            RunRecord { role: self.role_plus.clone(), series: self.plus.clone() },
            RunRecord { role: self.role_minus.clone(), series: self.minus.clone() },
            RunRecord { role: self.role.clone(), series: self.series.clone() },
        ]
    }
}

pub(crate) fn single_run(
    field: &DensityOperator,
    interaction: &InteractionSpec,
    probe: &ProbeStateSpec,
    measure: Measure,
    parity: TauParity,
    plan: &RunPlan,
) -> Result<PreparedRun> {
    let (space, h, rho0) = assemble(field, interaction, probe)?;
    let projector = measurement_projector(&space, measure)?;
    let role =
        format!("{interaction:?} probe {}, {} population", probe_label(probe), measure.label());

    if let Some(lindblad) = &plan.lindblad {
        let fwd = plan.forward_grid()?;
        let mut series = lindblad_series(&rho0, &h, lindblad, &projector, measure.label(), &fwd)?;
        if let Some(shots) = &plan.shots {
            series = sample_series(&series, shots)?;
        }
        let series = match parity {
            TauParity::Even => mirror_even(&series)?,
            TauParity::Odd => mirror_odd(&series)?,
            TauParity::Free => series,
        };
        return Ok(PreparedRun { series, curve: None, role });
    }

    let series = population_series(&rho0, &h, &projector, measure.label(), &plan.grid)?;
    match &plan.shots {
        Some(shots) => {
            Ok(PreparedRun { series: sample_series(&series, shots)?, curve: None, role })
        }
        None => {
            let curve = PopulationCurve::new(&rho0, &h, &projector)?;
            Ok(PreparedRun { series, curve: Some(curve), role })
        }
    }
}

pub(crate) fn difference_run(
    field: &DensityOperator,
    interaction: &InteractionSpec,
    probes: (ProbeStateSpec, ProbeStateSpec),
    measure: Measure,
    parity: TauParity,
    plan: &RunPlan,
) -> Result<PreparedDifference> {
    let (space, h, rho_plus) = assemble(field, interaction, &probes.0)?;
    let (_, _, rho_minus) = assemble(field, interaction, &probes.1)?;
    let projector = measurement_projector(&space, measure)?;
    let label = measure.label();
    let (lp, lm) = (probe_label(&probes.0), probe_label(&probes.1));
    let role = format!("{interaction:?} probes {lp} minus {lm}, {label} difference");
    let role_plus = format!("{interaction:?} probe {lp}, {label} population");
    let role_minus = format!("{interaction:?} probe {lm}, {label} population");

    if let Some(lindblad) = &plan.lindblad {
        let fwd = plan.forward_grid()?;
        let plus = lindblad_series(&rho_plus, &h, lindblad, &projector, label, &fwd)?;
        let minus = lindblad_series(&rho_minus, &h, lindblad, &projector, label, &fwd)?;
        let diff = match &plan.shots {
            Some(shots) => sample_difference(&plus, &minus, shots)?,
            None => difference_of(&plus, &minus)?,
        };
        let series = match parity {
            TauParity::Even => mirror_even(&diff)?,
            TauParity::Odd => mirror_odd(&diff)?,
            TauParity::Free => diff,
        };
        return Ok(PreparedDifference {
            plus,
            minus,
            series,
            curves: None,
            role,
            role_plus,
            role_minus,
        });
    }

    let plus = population_series(&rho_plus, &h, &projector, label, &plan.grid)?;
    let minus = population_series(&rho_minus, &h, &projector, label, &plan.grid)?;
    match &plan.shots {
        Some(shots) => {
            let series = sample_difference(&plus, &minus, shots)?;
            Ok(PreparedDifference { plus, minus, series, curves: None, role, role_plus, role_minus })
        }
        None => {
            let series = difference_of(&plus, &minus)?;
            let curve_plus = PopulationCurve::new(&rho_plus, &h, &projector)?;
            let curve_minus = PopulationCurve::new(&rho_minus, &h, &projector)?;
            Ok(PreparedDifference {
                plus,
                minus,
                series,
                curves: Some((curve_plus, curve_minus)),
                role,
                role_plus,
                role_minus,
            })
        }
    }
}

fn single_mode_only(field: &DensityOperator, what: &str) -> Result<()> {
    if field.space().subsystems() != 1 {
        return Err(QpError::ShapeMismatch(format!(
            "{what} reads a single mode, got {} modes",
            field.space().subsystems()
        )));
    }
    Ok(())
}

/// `<Y_phi>` from the slope of one rotated-probe excited population.
///
/// Under dissipation the run has no tau-parity to exploit, so the series
/// stays forward-only and needs a fit-type estimator.
pub fn extract_y(
    field: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    single_mode_only(field, "the linear probe")?;
    let run = single_run(
        field,
        &InteractionSpec::JC1,
        &ProbeStateSpec::PlusPhi(phi),
        Measure::Excited,
        TauParity::Free,
        plan,
    )?;
    let d = run.derivative(DerivOrder::First, method)?;
    Ok(MomentResult {
        observable: Observable::Y { phi },
        extracted: d.value,
        oracle: Some(dual_moment(field, &Observable::Y { phi })?),
        error_estimate: d.error_estimate,
        inputs: vec![d],
        phases: vec![phi],
        runs: vec![run.record()],
    })
}

/// `<X_phi>`, read as `<Y_{phi - pi/2}>` by shifting the probe phase.
pub fn extract_x(
    field: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    single_mode_only(field, "the linear probe")?;
    let run = single_run(
        field,
        &InteractionSpec::JC1,
        &ProbeStateSpec::PlusPhi(phi - std::f64::consts::FRAC_PI_2),
        Measure::Excited,
        TauParity::Free,
        plan,
    )?;
    let d = run.derivative(DerivOrder::First, method)?;
    Ok(MomentResult {
        observable: Observable::X { phi },
        extracted: d.value,
        oracle: Some(dual_moment(field, &Observable::X { phi })?),
        error_estimate: d.error_estimate,
        inputs: vec![d],
        phases: vec![phi],
        runs: vec![run.record()],
    })
}

/// `<Y_phi>` from the slope of the rotated-pair difference, dD/dtau = 2<Y>.
///
/// Costs a second run but cancels the probe-diagonal background before
/// differentiation, which halves the variance of the slope under shot noise.
pub fn extract_y_homodyne(
    field: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    single_mode_only(field, "the linear probe")?;
    let diff = difference_run(
        field,
        &InteractionSpec::JC1,
        (ProbeStateSpec::PlusPhi(phi), ProbeStateSpec::MinusPhi(phi)),
        Measure::Excited,
        TauParity::Odd,
        plan,
    )?;
    let d = diff.derivative(DerivOrder::First, method)?;
    Ok(MomentResult {
        observable: Observable::Y { phi },
        extracted: 0.5 * d.value,
        oracle: Some(dual_moment(field, &Observable::Y { phi })?),
        error_estimate: 0.5 * d.error_estimate,
        inputs: vec![d],
        phases: vec![phi],
        runs: diff.records(),
    })
}

fn number_curvature(
    field: &DensityOperator,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<(DerivativeEstimate, RunRecord)> {
    let run = single_run(
        field,
        &InteractionSpec::JC1,
        &ProbeStateSpec::Excited,
        Measure::Ground,
        TauParity::Even,
        plan,
    )?;
    Ok((run.derivative(DerivOrder::Second, method)?, run.record()))
}

/// `<n>` from the curvature of the ground population of an initially excited
/// probe, d2P/dtau2 = 2(<n> + 1).
pub fn extract_n(
    field: &DensityOperator,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    single_mode_only(field, "the photon-number run")?;
    let (d, record) = number_curvature(field, plan, method)?;
    Ok(MomentResult {
        observable: Observable::N,
        extracted: 0.5 * d.value - 1.0,
        oracle: Some(dual_moment(field, &Observable::N)?),
        error_estimate: 0.5 * d.error_estimate,
        inputs: vec![d],
        phases: vec![],
        runs: vec![record],
    })
}

/// `<X_phi^2>` and `<Y_phi^2>` via the two-photon probe.
///
/// One ground-population difference at probe phase 2 phi + pi/2 reads the
/// anomalous coherence sum (slope = 4 S(phi)); a companion number run
/// supplies the diagonal part. Both moments come from the same two pieces:
///
/// ```text
/// <X^2> = dD/4 + d2P/4 - 1/4        <Y^2> = -dD/4 + d2P/4 - 1/4
/// ```
///
/// The companion run is seeded independently (role 1) when sampling.
pub fn extract_second_moments(
    field: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<(MomentResult, MomentResult)> {
    single_mode_only(field, "the two-photon probe")?;
    let probe_phase = 2.0 * phi + std::f64::consts::FRAC_PI_2;
    let diff = difference_run(
        field,
        &InteractionSpec::JC2,
        (ProbeStateSpec::PlusPhi(probe_phase), ProbeStateSpec::MinusPhi(probe_phase)),
        Measure::Ground,
        TauParity::Odd,
        plan,
    )?;
    let d1 = diff.derivative(DerivOrder::First, method)?;
    let (d2, mut n_record) = number_curvature(field, &plan.salted(1), method)?;
    n_record.role.push_str(" [companion]");
    let mut runs = diff.records();
    runs.push(n_record);

    let error_estimate = 0.25 * (d1.error_estimate + d2.error_estimate);
    let x2 = MomentResult {
        observable: Observable::X2 { phi },
        extracted: 0.25 * d1.value + 0.25 * d2.value - 0.25,
        oracle: Some(dual_moment(field, &Observable::X2 { phi })?),
        error_estimate,
        inputs: vec![d1.clone(), d2.clone()],
        phases: vec![phi],
        runs: runs.clone(),
    };
    let y2 = MomentResult {
        observable: Observable::Y2 { phi },
        extracted: -0.25 * d1.value + 0.25 * d2.value - 0.25,
        oracle: Some(dual_moment(field, &Observable::Y2 { phi })?),
        error_estimate,
        inputs: vec![d1, d2],
        phases: vec![phi],
        runs,
    };
    Ok((x2, y2))
}

/// `<X_phi^2>` and `<Y_phi^2>` via the atom-pair probe instead of the
/// two-photon one.
///
/// The psi+ population difference of the two Bell preparations at phase
/// theta = 2 phi is even in tau and reads the coherence sum from its
/// curvature, d2D/dtau2 = 16 S(phi); the number run is as above.
pub fn extract_second_moments_atom_pair(
    field: &DensityOperator,
    phi: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<(MomentResult, MomentResult)> {
    single_mode_only(field, "the atom-pair probe")?;
    let theta = 2.0 * phi;
    let diff = difference_run(
        field,
        &InteractionSpec::TwoAtomJC,
        (ProbeStateSpec::BellPhiPlus(theta), ProbeStateSpec::BellPhiMinus(theta)),
        Measure::PsiPlus,
        TauParity::Even,
        plan,
    )?;
    let db = diff.derivative(DerivOrder::Second, method)?;
    let (dn, mut n_record) = number_curvature(field, &plan.salted(1), method)?;
    n_record.role.push_str(" [companion]");
    let mut runs = diff.records();
    runs.push(n_record);

    let error_estimate = db.error_estimate / 16.0 + dn.error_estimate / 4.0;
    let x2 = MomentResult {
        observable: Observable::X2 { phi },
        extracted: db.value / 16.0 + 0.25 * dn.value - 0.25,
        oracle: Some(dual_moment(field, &Observable::X2 { phi })?),
        error_estimate,
        inputs: vec![db.clone(), dn.clone()],
        phases: vec![phi],
        runs: runs.clone(),
    };
    let y2 = MomentResult {
        observable: Observable::Y2 { phi },
        extracted: -db.value / 16.0 + 0.25 * dn.value - 0.25,
        oracle: Some(dual_moment(field, &Observable::Y2 { phi })?),
        error_estimate,
        inputs: vec![db, dn],
        phases: vec![phi],
        runs,
    };
    Ok((x2, y2))
}

fn two_modes_only(field: &DensityOperator, what: &str) -> Result<()> {
    if field.space().subsystems() != 2 {
        return Err(QpError::ShapeMismatch(format!(
            "{what} reads a two-mode field, got {} mode(s)",
            field.space().subsystems()
        )));
    }
    Ok(())
}

/// `<A(phi1 - phi2)>` from the mode-exchange probe's excited-population
/// difference at probe phase (phi1 - phi2) - pi/2.
pub fn extract_exchange_correlator(
    field: &DensityOperator,
    phi1: f64,
    phi2: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    two_modes_only(field, "the mode-exchange probe")?;
    let delta = phi1 - phi2;
    let probe_phase = delta - std::f64::consts::FRAC_PI_2;
    let diff = difference_run(
        field,
        &InteractionSpec::ModeExchangeA,
        (ProbeStateSpec::PlusPhi(probe_phase), ProbeStateSpec::MinusPhi(probe_phase)),
        Measure::Excited,
        TauParity::Odd,
        plan,
    )?;
    let d = diff.derivative(DerivOrder::First, method)?;
    Ok(MomentResult {
        observable: Observable::A { delta },
        extracted: EXCHANGE_CALIBRATION * d.value,
        oracle: Some(dual_moment(field, &Observable::A { delta })?),
        error_estimate: EXCHANGE_CALIBRATION.abs() * d.error_estimate,
        inputs: vec![d],
        phases: vec![phi1, phi2],
        runs: diff.records(),
    })
}

/// `<B(phi1 + phi2)>` from the pair-creation probe's excited-population
/// difference at probe phase -(phi1 + phi2) - pi/2.
pub fn extract_pair_correlator(
    field: &DensityOperator,
    phi1: f64,
    phi2: f64,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    two_modes_only(field, "the pair-creation probe")?;
    let sigma = phi1 + phi2;
    let probe_phase = -sigma - std::f64::consts::FRAC_PI_2;
    let diff = difference_run(
        field,
        &InteractionSpec::ModeSqueezeB,
        (ProbeStateSpec::PlusPhi(probe_phase), ProbeStateSpec::MinusPhi(probe_phase)),
        Measure::Excited,
        TauParity::Odd,
        plan,
    )?;
    let d = diff.derivative(DerivOrder::First, method)?;
    Ok(MomentResult {
        observable: Observable::B { sigma },
        extracted: PAIR_CALIBRATION * d.value,
        oracle: Some(dual_moment(field, &Observable::B { sigma })?),
        error_estimate: PAIR_CALIBRATION.abs() * d.error_estimate,
        inputs: vec![d],
        phases: vec![phi1, phi2],
        runs: diff.records(),
    })
}

fn expect_phi(result: &MomentResult, want_x: bool, what: &str) -> Result<f64> {
    match (want_x, &result.observable) {
        (true, Observable::X2 { phi }) => Ok(*phi),
        (false, Observable::Y2 { phi }) => Ok(*phi),
        _ => Err(QpError::SourceMismatch(format!(
            "{what} slot holds {}, expected a single-mode second moment",
            result.observable
        ))),
    }
}

/// Combine per-mode second moments with the exchange and pair correlators
/// into the joint-quadrature second moments
///
/// ```text
/// <(X_{phi1} + X_{phi2})^2> = <X1^2> + <X2^2> + <A>/2 + <B>/2
/// <(Y_{phi1} + Y_{phi2})^2> = <Y1^2> + <Y2^2> + <A>/2 - <B>/2
/// ```
///
/// The component results must carry matching phases (A at phi1 - phi2, B at
/// phi1 + phi2); mismatches are refused rather than silently combined. When
/// the joint state is supplied the combined results carry oracle values.
#[allow(clippy::too_many_arguments)]
pub fn two_mode_second_moments(
    x2_1: &MomentResult,
    y2_1: &MomentResult,
    x2_2: &MomentResult,
    y2_2: &MomentResult,
    a: &MomentResult,
    b: &MomentResult,
    joint_state: Option<&DensityOperator>,
) -> Result<(MomentResult, MomentResult)> {
    let phi1 = expect_phi(x2_1, true, "mode-1 X^2")?;
    let phi2 = expect_phi(x2_2, true, "mode-2 X^2")?;
    if expect_phi(y2_1, false, "mode-1 Y^2")? != phi1 || expect_phi(y2_2, false, "mode-2 Y^2")? != phi2
    {
        return Err(QpError::SourceMismatch(
            "X^2 and Y^2 components were extracted at different phases".into(),
        ));
    }
    let (a_val, a_err) = match a.observable {
        Observable::A { delta } if (delta - (phi1 - phi2)).abs() < 1e-12 => {
            (a.extracted, a.error_estimate)
        }
        _ => {
            return Err(QpError::SourceMismatch(format!(
                "exchange slot holds {}, expected A({:.4})",
                a.observable,
                phi1 - phi2
            )))
        }
    };
    let (b_val, b_err) = match b.observable {
        Observable::B { sigma } if (sigma - (phi1 + phi2)).abs() < 1e-12 => {
            (b.extracted, b.error_estimate)
        }
        _ => {
            return Err(QpError::SourceMismatch(format!(
                "pair slot holds {}, expected B({:.4})",
                b.observable,
                phi1 + phi2
            )))
        }
    };

    let mut inputs = x2_1.inputs.clone();
    inputs.extend(x2_2.inputs.iter().cloned());
    inputs.extend(a.inputs.iter().cloned());
    inputs.extend(b.inputs.iter().cloned());
    let x2 = MomentResult {
        observable: Observable::X2TwoMode { phi1, phi2 },
        extracted: x2_1.extracted + x2_2.extracted + 0.5 * a_val + 0.5 * b_val,
        oracle: match joint_state {
            Some(rho) => Some(dual_moment(rho, &Observable::X2TwoMode { phi1, phi2 })?),
            None => None,
        },
        error_estimate: x2_1.error_estimate + x2_2.error_estimate + 0.5 * (a_err + b_err),
        inputs,
        phases: vec![phi1, phi2],
        runs: vec![],
    };

    let mut inputs = y2_1.inputs.clone();
    inputs.extend(y2_2.inputs.iter().cloned());
    inputs.extend(a.inputs.iter().cloned());
    inputs.extend(b.inputs.iter().cloned());
    let y2 = MomentResult {
        observable: Observable::Y2TwoMode { phi1, phi2 },
        extracted: y2_1.extracted + y2_2.extracted + 0.5 * a_val - 0.5 * b_val,
        oracle: match joint_state {
            Some(rho) => Some(dual_moment(rho, &Observable::Y2TwoMode { phi1, phi2 })?),
            None => None,
        },
        error_estimate: y2_1.error_estimate + y2_2.error_estimate + 0.5 * (a_err + b_err),
        inputs,
        phases: vec![phi1, phi2],
        runs: vec![],
    };
    Ok((x2, y2))
}

/// The phase-zero moments entering the separability check. X and Y are the
/// phase-0 and phase-pi/2 quadratures, A and B the correlators at delta =
/// sigma = 0.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TwoModeMoments {
    pub mean_x1: f64,
    pub mean_y1: f64,
    pub mean_x2: f64,
    pub mean_y2: f64,
    pub x2_1: f64,
    pub y2_1: f64,
    pub x2_2: f64,
    pub y2_2: f64,
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DuanVerdict {
    pub sum: f64,
    pub bound: f64,
    pub violates: bool,
}

/// Separability test on the EPR-type variance sum.
///
/// With sqrt(2)-normalized quadratures u = a0 X~1 - (s1/a0) X~2 and
/// v = a0 Y~1 - (s2/a0) Y~2, every separable state obeys
/// Var u + Var v >= a0^2 + 1/a0^2. `violates` is true when the measured sum
/// undercuts the bound by more than `tol`.
pub fn duan_check(
    a0: f64,
    s1: f64,
    s2: f64,
    moments: &TwoModeMoments,
    tol: f64,
) -> Result<DuanVerdict> {
    if !(a0.is_finite() && a0 > 0.0) {
        return Err(QpError::BadParameter(format!(
            "quadrature weight a0 must be positive and finite, got {a0}"
        )));
    }
    if s1.abs() != 1.0 || s2.abs() != 1.0 {
        return Err(QpError::BadParameter(format!(
            "sign choices must be +1 or -1, got s1 = {s1}, s2 = {s2}"
        )));
    }
    if !(tol.is_finite() && tol >= 0.0) {
        return Err(QpError::BadParameter(format!("decision margin must be >= 0, got {tol}")));
    }
    let var_x1 = moments.x2_1 - moments.mean_x1 * moments.mean_x1;
    let var_y1 = moments.y2_1 - moments.mean_y1 * moments.mean_y1;
    let var_x2 = moments.x2_2 - moments.mean_x2 * moments.mean_x2;
    let var_y2 = moments.y2_2 - moments.mean_y2 * moments.mean_y2;
    let cov_x = 0.25 * (moments.a + moments.b) - moments.mean_x1 * moments.mean_x2;
    let cov_y = 0.25 * (moments.a - moments.b) - moments.mean_y1 * moments.mean_y2;
    let a0sq = a0 * a0;
    let var_u = 2.0 * (a0sq * var_x1 + var_x2 / a0sq - 2.0 * s1 * cov_x);
    let var_v = 2.0 * (a0sq * var_y1 + var_y2 / a0sq - 2.0 * s2 * cov_y);
    let sum = var_u + var_v;
    let bound = a0sq + 1.0 / a0sq;
    Ok(DuanVerdict { sum, bound, violates: sum < bound - tol })
}

/// Run the full ten-run protocol on a two-mode state and apply the
/// separability check to the extracted moments.
///
/// Single-mode moments are extracted from the reduced states (the probe only
/// ever talks to one mode at a time, so its populations depend on the joint
/// state through the partial trace alone); the correlators use the two-mode
/// probes. Each of the ten runs gets an independently derived seed when
/// sampling. Returns the verdict, the extracted moment set, and every
/// component result for the record.
pub fn extract_duan(
    field: &DensityOperator,
    a0: f64,
    s1: f64,
    s2: f64,
    plan: &RunPlan,
    method: &DerivMethod,
    tol: f64,
) -> Result<(DuanVerdict, TwoModeMoments, Vec<MomentResult>)> {
    two_modes_only(field, "the separability protocol")?;
    let r1 = partial_trace(field, &[0])?;
    let r2 = partial_trace(field, &[1])?;

    let mut x1 = extract_x(&r1, 0.0, &plan.salted(2), method)?;
    let mut y1 = extract_y(&r1, 0.0, &plan.salted(3), method)?;
    let mut x2 = extract_x(&r2, 0.0, &plan.salted(4), method)?;
    let mut y2 = extract_y(&r2, 0.0, &plan.salted(5), method)?;
    let (mut xx1, mut yy1) = extract_second_moments(&r1, 0.0, &plan.salted(6), method)?;
    let (mut xx2, mut yy2) = extract_second_moments(&r2, 0.0, &plan.salted(7), method)?;
    let a = extract_exchange_correlator(field, 0.0, 0.0, &plan.salted(8), method)?;
    let b = extract_pair_correlator(field, 0.0, 0.0, &plan.salted(9), method)?;

    for (result, mode) in [
        (&mut x1, 1),
        (&mut y1, 1),
        (&mut xx1, 1),
        (&mut yy1, 1),
        (&mut x2, 2),
        (&mut y2, 2),
        (&mut xx2, 2),
        (&mut yy2, 2),
    ] {
        for record in &mut result.runs {
            record.role = format!("mode {mode}: {}", record.role);
        }
    }

    let moments = TwoModeMoments {
        mean_x1: x1.extracted,
        mean_y1: y1.extracted,
        mean_x2: x2.extracted,
        mean_y2: y2.extracted,
        x2_1: xx1.extracted,
        y2_1: yy1.extracted,
        x2_2: xx2.extracted,
        y2_2: yy2.extracted,
        a: a.extracted,
        b: b.extracted,
    };
    let verdict = duan_check(a0, s1, s2, &moments, tol)?;
    Ok((verdict, moments, vec![x1, y1, x2, y2, xx1, yy1, xx2, yy2, a, b]))
}
