//! Declarative scenario files and the pipeline behind the `qprobe` binary.
//!
//! A scenario is a single TOML file with a versioned schema: a field state,
//! a tau grid, an estimator, optional shot noise and dissipation, and a list
//! of requested observables. The runner compiles and validates the file
//! (every impossible combination is rejected before any matrix is built),
//! executes one extraction per request, and writes a results JSON plus one
//! CSV per recorded population series. Companion runs that a protocol adds on
//! its own, such as the photon-number run behind a second-moment extraction,
//! show up in the output manifest so the full experimental cost is visible.
//!
//! ```toml
//! schema = 1
//! name = "thermal-demo"
//!
//! [[field]]
//! kind = "thermal"
//! nbar = 0.85
//!
//! [grid]
//! min = -1.0
//! max = 1.0
//! points = 41
//!
//! [estimator]
//! name = "richardson"
//!
//! [[observables]]
//! kind = "n"
//! ```
//!
//! Unknown keys anywhere in the file are hard errors, as are parameters that
//! do not belong to the declared `kind` (a `thermal` field with an `r` key is
//! a typo, not a request). The results JSON is deterministic for a fixed file
//! and seed; the write timestamp lives in an isolated header line so byte
//! comparison of the report body stays meaningful.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QpError, Result};
use crate::evolution::{linear_grid, LindbladSpec, PopulationSeries, DEFAULT_LINDBLAD_STEP};
use crate::extraction::{
    difference_run, extract_duan, extract_exchange_correlator, extract_n, extract_pair_correlator,
    extract_second_moments, extract_second_moments_atom_pair, extract_x, extract_y,
    extract_y_homodyne, single_run, DerivMethod, DerivOrder, DerivativeEstimate, DuanVerdict,
    Measure, MomentResult, RunPlan, RunRecord, TauParity, TwoModeMoments, DUAN_DECISION_TOL,
};
use crate::interactions::InteractionSpec;
use crate::opsalg::{kron, DensityOperator, Operator};
use crate::sampling::ShotSpec;
use crate::states::{
    build_field, FieldStateSpec, ProbeStateSpec, DEFAULT_LEAKAGE_TOL, DEFAULT_TRUNCATION,
    DEFAULT_TWO_MODE_TRUNCATION,
};

/// Schema revision this build reads.
pub const SCHEMA_VERSION: u32 = 1;

/// Seeds drawn per method when the comparison report averages over shot noise.
pub const COMPARE_SEEDS: usize = 20;

/// Kernel widths swept by the comparison report's convergence check.
pub const COMPARE_SWEEP_SIGMAS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

fn validation(msg: impl Into<String>) -> QpError {
    QpError::Validation(msg.into())
}

// ---------------------------------------------------------------------------
// Scenario file schema.
//
// Every table is a flat struct with a `kind` (or `name`) selector plus
// optional parameters, rather than a serde-tagged enum: tagged enums cannot
// reject unknown keys, and a quietly ignored typo in a physics config is
// exactly the failure mode this format exists to prevent. The price is the
// explicit per-kind parameter checks below.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Fock,
    Coherent,
    Thermal,
    SqueezedVacuum,
    Cat,
    TwoModeSqueezedVacuum,
}

/// One field state. `kind` picks the family; the other keys are its
/// parameters and must match the family exactly.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nbar: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
}

struct FieldKeys {
    n: bool,
    re: bool,
    im: bool,
    nbar: bool,
    r: bool,
    theta: bool,
    phase: bool,
}

impl FieldConfig {
    fn check_keys(&self, want: FieldKeys) -> Result<()> {
        let have = [
            ("n", self.n.is_some(), want.n),
            ("re", self.re.is_some(), want.re),
            ("im", self.im.is_some(), want.im),
            ("nbar", self.nbar.is_some(), want.nbar),
            ("r", self.r.is_some(), want.r),
            ("theta", self.theta.is_some(), want.theta),
            ("phase", self.phase.is_some(), want.phase),
        ];
        for (key, set, allowed) in have {
            if set && !allowed {
                return Err(validation(format!(
                    "field kind {:?} does not take `{key}`",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    fn require<T: Copy>(&self, value: Option<T>, key: &str) -> Result<T> {
        value.ok_or_else(|| {
            validation(format!("field kind {:?} needs `{key}`", self.kind))
        })
    }

    pub fn compile(&self) -> Result<FieldStateSpec> {
        const NONE: FieldKeys = FieldKeys {
            n: false,
            re: false,
            im: false,
            nbar: false,
            r: false,
            theta: false,
            phase: false,
        };
        match self.kind {
            FieldKind::Fock => {
                self.check_keys(FieldKeys { n: true, ..NONE })?;
                Ok(FieldStateSpec::Fock(self.require(self.n, "n")?))
            }
            FieldKind::Coherent => {
                self.check_keys(FieldKeys { re: true, im: true, ..NONE })?;
                let re = self.require(self.re, "re")?;
                Ok(FieldStateSpec::Coherent(num_complex::Complex64::new(
                    re,
                    self.im.unwrap_or(0.0),
                )))
            }
            FieldKind::Thermal => {
                self.check_keys(FieldKeys { nbar: true, ..NONE })?;
                Ok(FieldStateSpec::Thermal(self.require(self.nbar, "nbar")?))
            }
            FieldKind::SqueezedVacuum => {
                self.check_keys(FieldKeys { r: true, theta: true, ..NONE })?;
                Ok(FieldStateSpec::SqueezedVacuum {
                    r: self.require(self.r, "r")?,
                    theta: self.theta.unwrap_or(0.0),
                })
            }
            FieldKind::Cat => {
                self.check_keys(FieldKeys { re: true, im: true, phase: true, ..NONE })?;
                let re = self.require(self.re, "re")?;
                Ok(FieldStateSpec::Cat {
                    alpha: num_complex::Complex64::new(re, self.im.unwrap_or(0.0)),
                    phase: self.phase.unwrap_or(0.0),
                })
            }
            FieldKind::TwoModeSqueezedVacuum => {
                self.check_keys(FieldKeys { r: true, ..NONE })?;
                Ok(FieldStateSpec::TwoModeSqueezedVacuum { r: self.require(self.r, "r")? })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    Ground,
    Excited,
    PlusPhi,
    MinusPhi,
    BellPhiPlus,
    BellPhiMinus,
    PsiPlus,
}

/// Optional declaration of the primary run's probe preparation. For
/// difference protocols this names the plus branch; the minus branch is
/// implied. Purely a cross-check: the protocol for each observable fixes the
/// probe, and a declaration that disagrees is rejected.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub kind: ProbeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
}

impl ProbeConfig {
    pub fn compile(&self) -> Result<ProbeStateSpec> {
        let phase_only = |need_phi: bool, need_theta: bool| -> Result<()> {
            if self.phi.is_some() && !need_phi {
                return Err(validation(format!("probe kind {:?} does not take `phi`", self.kind)));
            }
            if self.theta.is_some() && !need_theta {
                return Err(validation(format!(
                    "probe kind {:?} does not take `theta`",
                    self.kind
                )));
            }
            Ok(())
        };
        match self.kind {
            ProbeKind::Ground => {
                phase_only(false, false)?;
                Ok(ProbeStateSpec::Ground)
            }
            ProbeKind::Excited => {
                phase_only(false, false)?;
                Ok(ProbeStateSpec::Excited)
            }
            ProbeKind::PlusPhi => {
                phase_only(true, false)?;
                Ok(ProbeStateSpec::PlusPhi(self.phi.unwrap_or(0.0)))
            }
            ProbeKind::MinusPhi => {
                phase_only(true, false)?;
                Ok(ProbeStateSpec::MinusPhi(self.phi.unwrap_or(0.0)))
            }
            ProbeKind::BellPhiPlus => {
                phase_only(false, true)?;
                Ok(ProbeStateSpec::BellPhiPlus(self.theta.unwrap_or(0.0)))
            }
            ProbeKind::BellPhiMinus => {
                phase_only(false, true)?;
                Ok(ProbeStateSpec::BellPhiMinus(self.theta.unwrap_or(0.0)))
            }
            ProbeKind::PsiPlus => {
                phase_only(false, false)?;
                Ok(ProbeStateSpec::PsiPlus)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionConfig {
    Jc1,
    Jc2,
    TwoAtomJc,
    ModeExchangeA,
    ModeSqueezeB,
}

impl InteractionConfig {
    pub fn compile(self) -> InteractionSpec {
        match self {
            InteractionConfig::Jc1 => InteractionSpec::JC1,
            InteractionConfig::Jc2 => InteractionSpec::JC2,
            InteractionConfig::TwoAtomJc => InteractionSpec::TwoAtomJC,
            InteractionConfig::ModeExchangeA => InteractionSpec::ModeExchangeA,
            InteractionConfig::ModeSqueezeB => InteractionSpec::ModeSqueezeB,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementConfig {
    Excited,
    Ground,
    PsiPlus,
}

impl MeasurementConfig {
    fn label(self) -> &'static str {
        match self {
            MeasurementConfig::Excited => "excited",
            MeasurementConfig::Ground => "ground",
            MeasurementConfig::PsiPlus => "psi+",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    CentralFd,
    Richardson,
    Polyfit,
    KernelIntegral,
}

/// Estimator selection. Omitted parameters fall back to the per-method
/// defaults listed in the README; parameters from another method are errors.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub name: MethodName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degree: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub extrapolate: Option<bool>,
}

impl EstimatorConfig {
    pub fn compile(&self) -> Result<DerivMethod> {
        let stray = [
            ("step", self.step.is_some()),
            ("accuracy", self.accuracy.is_some()),
            ("initial_step", self.initial_step.is_some()),
            ("levels", self.levels.is_some()),
            ("degree", self.degree.is_some()),
            ("window", self.window.is_some()),
            ("sigma", self.sigma.is_some()),
            ("extrapolate", self.extrapolate.is_some()),
        ];
        let allowed: &[&str] = match self.name {
            MethodName::CentralFd => &["step", "accuracy"],
            MethodName::Richardson => &["initial_step", "levels"],
            MethodName::Polyfit => &["degree", "window"],
            MethodName::KernelIntegral => &["sigma", "extrapolate"],
        };
        for (key, set) in stray {
            if set && !allowed.contains(&key) {
                return Err(validation(format!(
                    "estimator {:?} does not take `{key}`",
                    self.name
                )));
            }
        }
        let method = match self.name {
            MethodName::CentralFd => DerivMethod::CentralFd {
                step: self.step.unwrap_or(1e-3),
                accuracy: self.accuracy.unwrap_or(4),
            },
            MethodName::Richardson => DerivMethod::Richardson {
                initial_step: self.initial_step.unwrap_or(0.4),
                levels: self.levels.unwrap_or(7),
            },
            MethodName::Polyfit => DerivMethod::Polyfit {
                degree: self.degree.unwrap_or(4),
                window: self.window.unwrap_or(0.3),
            },
            MethodName::KernelIntegral => DerivMethod::KernelIntegral {
                sigma: self.sigma.unwrap_or(0.1),
                extrapolate: self.extrapolate.unwrap_or(false),
            },
        };
        method.validate()?;
        Ok(method)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LindbladConfig {
    #[serde(default)]
    pub kappa: f64,
    #[serde(default)]
    pub gamma: f64,
    #[serde(default)]
    pub gamma_phi: f64,
    #[serde(default = "default_lindblad_step")]
    pub step: f64,
}

fn default_lindblad_step() -> f64 {
    DEFAULT_LINDBLAD_STEP
}

impl LindbladConfig {
    fn compile(&self) -> LindbladSpec {
        LindbladSpec {
            kappa: self.kappa,
            gamma: self.gamma,
            gamma_phi: self.gamma_phi,
            step: self.step,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservableKind {
    X,
    Y,
    YHomodyne,
    N,
    SecondMoments,
    SecondMomentsAtomPair,
    ExchangeCorrelator,
    PairCorrelator,
    Duan,
}

/// One requested observable. As with fields, `kind` selects the protocol and
/// the remaining keys must belong to it.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableRequest {
    pub kind: ObservableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
}

impl ObservableRequest {
    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        let have = [
            ("phi", self.phi.is_some()),
            ("phi1", self.phi1.is_some()),
            ("phi2", self.phi2.is_some()),
            ("a0", self.a0.is_some()),
            ("s1", self.s1.is_some()),
            ("s2", self.s2.is_some()),
            ("tol", self.tol.is_some()),
        ];
        for (key, set) in have {
            if set && !allowed.contains(&key) {
                return Err(validation(format!(
                    "observable {:?} does not take `{key}`",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    pub fn compile(&self) -> Result<CompiledRequest> {
        match self.kind {
            ObservableKind::X => {
                self.check_keys(&["phi"])?;
                Ok(CompiledRequest::X { phi: self.phi.unwrap_or(0.0) })
            }
            ObservableKind::Y => {
                self.check_keys(&["phi"])?;
                Ok(CompiledRequest::Y { phi: self.phi.unwrap_or(0.0) })
            }
            ObservableKind::YHomodyne => {
                self.check_keys(&["phi"])?;
                Ok(CompiledRequest::YHomodyne { phi: self.phi.unwrap_or(0.0) })
            }
            ObservableKind::N => {
                self.check_keys(&[])?;
                Ok(CompiledRequest::N)
            }
            ObservableKind::SecondMoments => {
                self.check_keys(&["phi"])?;
                Ok(CompiledRequest::SecondMoments { phi: self.phi.unwrap_or(0.0) })
            }
            ObservableKind::SecondMomentsAtomPair => {
                self.check_keys(&["phi"])?;
                Ok(CompiledRequest::SecondMomentsAtomPair { phi: self.phi.unwrap_or(0.0) })
            }
            ObservableKind::ExchangeCorrelator => {
                self.check_keys(&["phi1", "phi2"])?;
                Ok(CompiledRequest::Exchange {
                    phi1: self.phi1.unwrap_or(0.0),
                    phi2: self.phi2.unwrap_or(0.0),
                })
            }
            ObservableKind::PairCorrelator => {
                self.check_keys(&["phi1", "phi2"])?;
                Ok(CompiledRequest::Pair {
                    phi1: self.phi1.unwrap_or(0.0),
                    phi2: self.phi2.unwrap_or(0.0),
                })
            }
            ObservableKind::Duan => {
                self.check_keys(&["a0", "s1", "s2", "tol"])?;
                let s1 = self
                    .s1
                    .ok_or_else(|| validation("observable Duan needs `s1` (+1 or -1)"))?;
                let s2 = self
                    .s2
                    .ok_or_else(|| validation("observable Duan needs `s2` (+1 or -1)"))?;
                Ok(CompiledRequest::Duan {
                    a0: self.a0.unwrap_or(1.0),
                    s1,
                    s2,
                    tol: self.tol.unwrap_or(DUAN_DECISION_TOL),
                })
            }
        }
    }
}

/// The whole scenario file.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub field: Vec<FieldConfig>,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<EstimatorConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub leakage_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lindblad: Option<LindbladConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub observables: Vec<ObservableRequest>,
}

// ---------------------------------------------------------------------------
// Compilation: config to validated plan, before any matrix work.
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompiledRequest {
    X { phi: f64 },
    Y { phi: f64 },
    YHomodyne { phi: f64 },
    N,
    SecondMoments { phi: f64 },
    SecondMomentsAtomPair { phi: f64 },
    Exchange { phi1: f64, phi2: f64 },
    Pair { phi1: f64, phi2: f64 },
    Duan { a0: f64, s1: f64, s2: f64, tol: f64 },
}

const HALF_PI: f64 = std::f64::consts::FRAC_PI_2;

impl CompiledRequest {
    pub fn modes(&self) -> usize {
        match self {
            CompiledRequest::Exchange { .. }
            | CompiledRequest::Pair { .. }
            | CompiledRequest::Duan { .. } => 2,
            _ => 1,
        }
    }

    /// Number of state preparations the protocol performs, companion runs
    /// included. The separability protocol reads four first moments (one run
    /// each), two per-mode second-moment pairs (three runs each) and the two
    /// correlators (two runs each).
    pub fn preparations(&self) -> usize {
        match self {
            CompiledRequest::X { .. } | CompiledRequest::Y { .. } | CompiledRequest::N => 1,
            CompiledRequest::YHomodyne { .. }
            | CompiledRequest::Exchange { .. }
            | CompiledRequest::Pair { .. } => 2,
            CompiledRequest::SecondMoments { .. }
            | CompiledRequest::SecondMomentsAtomPair { .. } => 3,
            CompiledRequest::Duan { .. } => 14,
        }
    }

    /// The primary run the protocol performs, for cross-checking declared
    /// probe, interaction and measurement. For difference protocols the
    /// probe is the plus branch; the minus partner is implied. `None` for
    /// the composite separability protocol, which derives all of its runs
    /// itself.
    fn expected_primary(&self) -> Option<(InteractionSpec, ProbeStateSpec, &'static str)> {
        match *self {
            CompiledRequest::X { phi } => Some((
                InteractionSpec::JC1,
                ProbeStateSpec::PlusPhi(phi - HALF_PI),
                "excited",
            )),
            CompiledRequest::Y { phi } => {
                Some((InteractionSpec::JC1, ProbeStateSpec::PlusPhi(phi), "excited"))
            }
            CompiledRequest::YHomodyne { phi } => {
                Some((InteractionSpec::JC1, ProbeStateSpec::PlusPhi(phi), "excited"))
            }
            CompiledRequest::N => {
                Some((InteractionSpec::JC1, ProbeStateSpec::Excited, "ground"))
            }
            CompiledRequest::SecondMoments { phi } => Some((
                InteractionSpec::JC2,
                ProbeStateSpec::PlusPhi(2.0 * phi + HALF_PI),
                "ground",
            )),
            CompiledRequest::SecondMomentsAtomPair { phi } => Some((
                InteractionSpec::TwoAtomJC,
                ProbeStateSpec::BellPhiPlus(2.0 * phi),
                "psi+",
            )),
            CompiledRequest::Exchange { phi1, phi2 } => Some((
                InteractionSpec::ModeExchangeA,
                ProbeStateSpec::PlusPhi((phi1 - phi2) - HALF_PI),
                "excited",
            )),
            CompiledRequest::Pair { phi1, phi2 } => Some((
                InteractionSpec::ModeSqueezeB,
                ProbeStateSpec::PlusPhi(-(phi1 + phi2) - HALF_PI),
                "excited",
            )),
            CompiledRequest::Duan { .. } => None,
        }
    }

    /// Whether any series behind the request is recorded without a tau
    /// parity to exploit, which matters for dissipative runs: those series
    /// stay one-sided and only the fit estimator can consume them.
    fn has_free_parity_run(&self) -> bool {
        matches!(
            self,
            CompiledRequest::X { .. } | CompiledRequest::Y { .. } | CompiledRequest::Duan { .. }
        )
    }

    fn label(&self) -> String {
        match *self {
            CompiledRequest::X { phi } => format!("x(phi={phi:.4})"),
            CompiledRequest::Y { phi } => format!("y(phi={phi:.4})"),
            CompiledRequest::YHomodyne { phi } => format!("y_homodyne(phi={phi:.4})"),
            CompiledRequest::N => "n".into(),
            CompiledRequest::SecondMoments { phi } => format!("second_moments(phi={phi:.4})"),
            CompiledRequest::SecondMomentsAtomPair { phi } => {
                format!("second_moments_atom_pair(phi={phi:.4})")
            }
            CompiledRequest::Exchange { phi1, phi2 } => {
                format!("exchange_correlator(phi1={phi1:.4}, phi2={phi2:.4})")
            }
            CompiledRequest::Pair { phi1, phi2 } => {
                format!("pair_correlator(phi1={phi1:.4}, phi2={phi2:.4})")
            }
            CompiledRequest::Duan { a0, s1, s2, .. } => {
                format!("duan(a0={a0:.4}, s1={s1:+.0}, s2={s2:+.0})")
            }
        }
    }
}

fn probe_specs_match(declared: &ProbeStateSpec, expected: &ProbeStateSpec) -> bool {
    const TOL: f64 = 1e-9;
    match (declared, expected) {
        (ProbeStateSpec::Ground, ProbeStateSpec::Ground) => true,
        (ProbeStateSpec::Excited, ProbeStateSpec::Excited) => true,
        (ProbeStateSpec::PsiPlus, ProbeStateSpec::PsiPlus) => true,
        (ProbeStateSpec::PlusPhi(a), ProbeStateSpec::PlusPhi(b)) => (a - b).abs() < TOL,
        (ProbeStateSpec::MinusPhi(a), ProbeStateSpec::MinusPhi(b)) => (a - b).abs() < TOL,
        (ProbeStateSpec::BellPhiPlus(a), ProbeStateSpec::BellPhiPlus(b)) => (a - b).abs() < TOL,
        (ProbeStateSpec::BellPhiMinus(a), ProbeStateSpec::BellPhiMinus(b)) => (a - b).abs() < TOL,
        _ => false,
    }
}

/// CLI-level overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct CliOverrides {
    pub seed: Option<u64>,
    pub truncation: Option<usize>,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
}

/// A fully validated scenario, ready to execute.
#[derive(Debug)]
pub struct CompiledScenario {
    pub scenario: Scenario,
    pub source: String,
    pub field_specs: Vec<FieldStateSpec>,
    pub modes: usize,
    pub requests: Vec<CompiledRequest>,
    pub grid: Vec<f64>,
    pub method: DerivMethod,
    pub truncation: usize,
    pub leakage_tol: f64,
    pub seed: Option<u64>,
    pub shots: Option<u64>,
    pub lindblad: Option<LindbladSpec>,
}

impl CompiledScenario {
    fn base_plan(&self) -> RunPlan {
        RunPlan {
            grid: self.grid.clone(),
            shots: self.shots.map(|shots_per_point| ShotSpec {
                shots_per_point,
                rng_seed: self.seed.unwrap_or(0),
            }),
            lindblad: self.lindblad,
        }
    }
}

/// Parse a scenario file, attaching the source name to any syntax or schema
/// error (the TOML errors carry line and column on their own).
pub fn parse_scenario(source: &str, text: &str) -> Result<Scenario> {
    toml::from_str::<Scenario>(text).map_err(|e| validation(format!("{source}: {e}")))
}

/// Validate a parsed scenario against the overrides and produce the
/// executable form. Nothing heavier than a grid allocation happens here;
/// every rejected combination fails before compute.
pub fn compile(scenario: &Scenario, source: &str, ov: &CliOverrides) -> Result<CompiledScenario> {
    if scenario.schema != SCHEMA_VERSION {
        return Err(validation(format!(
            "{source}: schema {} is not supported, this build reads schema {SCHEMA_VERSION}",
            scenario.schema
        )));
    }
    if scenario.name.is_empty()
        || !scenario
            .name
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
    {
        return Err(validation(format!(
            "{source}: scenario name {:?} must be non-empty and use only [A-Za-z0-9_-] \
             (it becomes the output directory)",
            scenario.name
        )));
    }

    if scenario.field.is_empty() {
        return Err(validation(format!("{source}: no field state declared")));
    }
    let field_specs: Vec<FieldStateSpec> =
        scenario.field.iter().map(|f| f.compile()).collect::<Result<_>>()?;
    let modes: usize = field_specs.iter().map(|s| s.modes()).sum();
    if field_specs.len() > 1 && field_specs.iter().any(|s| s.modes() != 1) {
        return Err(validation(format!(
            "{source}: a two-mode state occupies both modes and must be declared alone"
        )));
    }
    if modes > 2 {
        return Err(validation(format!(
            "{source}: {modes} modes declared, the probes address at most 2"
        )));
    }

    if scenario.observables.is_empty() {
        return Err(validation(format!("{source}: no observables requested")));
    }
    let requests: Vec<CompiledRequest> =
        scenario.observables.iter().map(|o| o.compile()).collect::<Result<_>>()?;
    for req in &requests {
        if req.modes() != modes {
            return Err(validation(format!(
                "{source}: observable {} reads a {}-mode field, scenario declares {modes}",
                req.label(),
                req.modes()
            )));
        }
        if let CompiledRequest::Duan { a0, s1, s2, tol } = *req {
            // Same checks the extraction applies, surfaced at parse time.
            if !(a0.is_finite() && a0 > 0.0) {
                return Err(validation(format!(
                    "{source}: duan weight a0 must be positive and finite, got {a0}"
                )));
            }
            if s1.abs() != 1.0 || s2.abs() != 1.0 {
                return Err(validation(format!(
                    "{source}: duan signs must be +1 or -1, got s1 = {s1}, s2 = {s2}"
                )));
            }
            if !(tol.is_finite() && tol >= 0.0) {
                return Err(validation(format!(
                    "{source}: duan decision margin must be >= 0, got {tol}"
                )));
            }
        }
    }

    // Declared primary run, if any, must agree with what each requested
    // observable's protocol actually does.
    let declared_probe = scenario.probe.as_ref().map(|p| p.compile()).transpose()?;
    for req in &requests {
        let primary = req.expected_primary();
        if scenario.probe.is_none()
            && scenario.interaction.is_none()
            && scenario.measurement.is_none()
        {
            break;
        }
        let Some((interaction, probe, measurement)) = primary else {
            return Err(validation(format!(
                "{source}: observable {} derives all of its runs itself; \
                 drop the probe/interaction/measurement declarations",
                req.label()
            )));
        };
        if let Some(declared) = scenario.interaction {
            if declared.compile() != interaction {
                return Err(validation(format!(
                    "{source}: observable {} runs {interaction:?}, scenario declares {:?}",
                    req.label(),
                    declared.compile()
                )));
            }
        }
        if let Some(declared) = &declared_probe {
            if !probe_specs_match(declared, &probe) {
                return Err(validation(format!(
                    "{source}: observable {} prepares the probe as {probe:?}, \
                     scenario declares {declared:?}",
                    req.label()
                )));
            }
        }
        if let Some(declared) = scenario.measurement {
            if declared.label() != measurement {
                return Err(validation(format!(
                    "{source}: observable {} measures the {measurement} projector, \
                     scenario declares {}",
                    req.label(),
                    declared.label()
                )));
            }
        }
    }

    let method = match &scenario.estimator {
        Some(cfg) => cfg.compile()?,
        None if scenario.shots.is_some() || scenario.lindblad.is_some() => {
            DerivMethod::default_gridded()
        }
        None => DerivMethod::default_evaluable(),
    };

    let noisy = scenario.shots.is_some() || scenario.lindblad.is_some();
    if noisy
        && matches!(method, DerivMethod::CentralFd { .. } | DerivMethod::Richardson { .. })
    {
        return Err(validation(format!(
            "{source}: stencil estimators evaluate an exact curve, but shot noise or \
             dissipation records a fixed grid; use polyfit or kernel_integral"
        )));
    }
    if scenario.lindblad.is_some() && matches!(method, DerivMethod::KernelIntegral { .. }) {
        for req in &requests {
            if req.has_free_parity_run() {
                return Err(validation(format!(
                    "{source}: observable {} records a one-sided series under dissipation \
                     and the kernel estimator needs a symmetric grid; use polyfit",
                    req.label()
                )));
            }
        }
    }

    if let Some(0) = scenario.shots {
        return Err(validation(format!("{source}: shots must be positive when given")));
    }
    let seed = ov.seed.or(scenario.seed);
    if scenario.shots.is_some() && seed.is_none() {
        return Err(validation(format!(
            "{source}: sampled scenarios need an rng seed (file key `seed` or flag --seed)"
        )));
    }

    let grid = linear_grid(scenario.grid.min, scenario.grid.max, scenario.grid.points)?;
    if scenario.lindblad.is_some() && scenario.grid.min != 0.0 {
        return Err(validation(format!(
            "{source}: dissipative runs record forward-only series; set grid.min = 0"
        )));
    }

    let leakage_tol = scenario.leakage_tol.unwrap_or(DEFAULT_LEAKAGE_TOL);
    if !(leakage_tol.is_finite() && leakage_tol > 0.0) {
        return Err(validation(format!(
            "{source}: leakage_tol must be positive and finite, got {leakage_tol}"
        )));
    }

    let truncation = ov.truncation.or(scenario.truncation).unwrap_or(if modes == 2 {
        DEFAULT_TWO_MODE_TRUNCATION
    } else {
        DEFAULT_TRUNCATION
    });

    Ok(CompiledScenario {
        scenario: scenario.clone(),
        source: source.to_string(),
        field_specs,
        modes,
        requests,
        grid,
        method,
        truncation,
        leakage_tol,
        seed,
        shots: scenario.shots,
        lindblad: scenario.lindblad.as_ref().map(|l| l.compile()),
    })
}

// ---------------------------------------------------------------------------
// Bundled scenarios.
// ---------------------------------------------------------------------------

pub const BUNDLED: [(&str, &str); 3] = [
    ("vacuum-smoke", include_str!("../scenarios/vacuum-smoke.toml")),
    ("ens-thermal", include_str!("../scenarios/ens-thermal.toml")),
    ("duan-tmsv", include_str!("../scenarios/duan-tmsv.toml")),
];

/// Resolve a CLI argument to scenario text: an existing file wins, otherwise
/// a bundled name. Returns the source label used in errors and reports.
pub fn resolve_source(arg: &str) -> Result<(String, String)> {
    let path = Path::new(arg);
    if path.exists() {
        let text = fs::read_to_string(path)?;
        return Ok((arg.to_string(), text));
    }
    for (name, text) in BUNDLED {
        if name == arg {
            return Ok((format!("bundled:{name}"), text.to_string()));
        }
    }
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
    Err(validation(format!(
        "no scenario file {arg:?} and no bundled scenario of that name (bundled: {})",
        names.join(", ")
    )))
}

/// One line per bundled scenario: name, observable count, description.
pub fn list_bundled() -> String {
    let mut out = String::new();
    for (name, text) in BUNDLED {
        // Bundled files parse by construction; a panic here is a build bug.
        let scenario = parse_scenario(name, text).expect("bundled scenario must parse");
        let _ = writeln!(
            out,
            "{name:<14} {} observable(s)  {}",
            scenario.observables.len(),
            scenario.description.as_deref().unwrap_or("")
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Execution.
// ---------------------------------------------------------------------------

pub struct ExecutedEntry {
    pub request: ObservableRequest,
    pub label: String,
    pub moments: Vec<MomentResult>,
    /// Deduplicated by role within the entry: second-moment pairs share
    /// their underlying runs.
    pub records: Vec<RunRecord>,
    pub duan: Option<(DuanVerdict, TwoModeMoments)>,
}

pub struct Executed {
    pub entries: Vec<ExecutedEntry>,
    pub field_leakage: Vec<f64>,
    pub leakage_alarm: bool,
}

fn build_joint_field(compiled: &CompiledScenario) -> Result<(DensityOperator, Vec<f64>)> {
    let mut states = Vec::new();
    let mut leakage = Vec::new();
    for spec in &compiled.field_specs {
        let built = build_field(spec, compiled.truncation, compiled.leakage_tol)?;
        leakage.push(built.leakage);
        states.push(built.rho);
    }
    let joint = match states.len() {
        1 => states.pop().expect("one state"),
        _ => {
            let mut iter = states.into_iter();
            let first = iter.next().expect("at least one state");
            let mut op =
                Operator::from_matrix(first.space().clone(), first.matrix().clone())?;
            for rho in iter {
                let rhs = Operator::from_matrix(rho.space().clone(), rho.matrix().clone())?;
                op = kron(&op, &rhs);
            }
            DensityOperator::new(op.space().clone(), op.matrix().clone())?
        }
    };
    Ok((joint, leakage))
}

fn dedupe_records(moments: &[MomentResult]) -> Vec<RunRecord> {
    let mut seen: HashSet<String> = HashSet::new();
    let mut records = Vec::new();
    for m in moments {
        for rec in &m.runs {
            if seen.insert(rec.role.clone()) {
                records.push(rec.clone());
            }
        }
    }
    records
}

fn execute_request(
    field: &DensityOperator,
    request: &ObservableRequest,
    compiled_req: &CompiledRequest,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<ExecutedEntry> {
    let (moments, duan) = match *compiled_req {
        CompiledRequest::X { phi } => (vec![extract_x(field, phi, plan, method)?], None),
        CompiledRequest::Y { phi } => (vec![extract_y(field, phi, plan, method)?], None),
        CompiledRequest::YHomodyne { phi } => {
            (vec![extract_y_homodyne(field, phi, plan, method)?], None)
        }
        CompiledRequest::N => (vec![extract_n(field, plan, method)?], None),
        CompiledRequest::SecondMoments { phi } => {
            let (x2, y2) = extract_second_moments(field, phi, plan, method)?;
            (vec![x2, y2], None)
        }
        CompiledRequest::SecondMomentsAtomPair { phi } => {
            let (x2, y2) = extract_second_moments_atom_pair(field, phi, plan, method)?;
            (vec![x2, y2], None)
        }
        CompiledRequest::Exchange { phi1, phi2 } => {
            (vec![extract_exchange_correlator(field, phi1, phi2, plan, method)?], None)
        }
        CompiledRequest::Pair { phi1, phi2 } => {
            (vec![extract_pair_correlator(field, phi1, phi2, plan, method)?], None)
        }
        CompiledRequest::Duan { a0, s1, s2, tol } => {
            let (verdict, two_mode, components) =
                extract_duan(field, a0, s1, s2, plan, method, tol)?;
            (components, Some((verdict, two_mode)))
        }
    };
    let records = dedupe_records(&moments);
    Ok(ExecutedEntry {
        request: *request,
        label: compiled_req.label(),
        moments,
        records,
        duan,
    })
}

/// Run every requested extraction. Requests are independent and run in
/// parallel on the current rayon pool; each one derives its own seeds, so
/// the results do not depend on the degree of parallelism.
pub fn execute(compiled: &CompiledScenario) -> Result<Executed> {
    let (field, field_leakage) = build_joint_field(compiled)?;
    let base_plan = compiled.base_plan();

    let entries: Vec<ExecutedEntry> = compiled
        .requests
        .par_iter()
        .enumerate()
        .map(|(i, req)| {
            let plan = base_plan.salted(100 + i as u64);
            execute_request(
                &field,
                &compiled.scenario.observables[i],
                req,
                &plan,
                &compiled.method,
            )
        })
        .collect::<Result<_>>()?;

    let leakage_alarm = entries
        .iter()
        .flat_map(|e| e.records.iter())
        .any(|r| r.series.metadata.leakage_alarm);
    Ok(Executed { entries, field_leakage, leakage_alarm })
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    match jobs {
        None => f(),
        Some(0) => Err(validation("--jobs must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| QpError::Numerics(format!("thread pool: {e}")))?
            .install(f),
    }
}

// ---------------------------------------------------------------------------
// Report.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct MomentEntry {
    pub observable: String,
    pub extracted: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle_gap: Option<f64>,
    pub error_estimate: f64,
    pub inputs: Vec<DerivativeEstimate>,
}

impl MomentEntry {
    fn from_result(m: &MomentResult) -> Self {
        let mut observable = m.observable.to_string();
        // Separability components tag their runs "mode 1:"/"mode 2:"; carry
        // that over so the two per-mode X rows stay distinguishable.
        if let Some(mode) = m
            .runs
            .first()
            .and_then(|rec| rec.role.strip_prefix("mode "))
            .and_then(|rest| rest.split_once(':'))
            .map(|(n, _)| n)
        {
            observable = format!("mode {mode} {observable}");
        }
        MomentEntry {
            observable,
            extracted: m.extracted,
            oracle: m.oracle,
            oracle_gap: m.oracle_gap(),
            error_estimate: m.error_estimate,
            inputs: m.inputs.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RunRef {
    pub role: String,
    pub file: String,
    pub points: usize,
    pub provenance: String,
    /// True for derived difference series, false for recorded populations.
    pub derived: bool,
    pub leakage_alarm: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DuanEntry {
    pub sum: f64,
    pub bound: f64,
    pub violates: bool,
    pub moments: TwoModeMoments,
}

#[derive(Clone, Debug, Serialize)]
pub struct ResultEntry {
    pub request: ObservableRequest,
    pub label: String,
    pub moments: Vec<MomentEntry>,
    pub runs: Vec<RunRef>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub duan: Option<DuanEntry>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScenarioReport {
    pub schema: u32,
    pub name: String,
    pub source: String,
    pub modes: usize,
    pub truncation: usize,
    pub leakage_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lindblad: Option<LindbladSpec>,
    pub estimator: DerivMethod,
    pub grid: GridConfig,
    pub field_leakage: Vec<f64>,
    pub leakage_alarm: bool,
    pub results: Vec<ResultEntry>,
}

fn slugify(role: &str) -> String {
    let mut slug = String::new();
    let mut dash = true;
    for c in role.chars() {
        if c.is_ascii_alphanumeric() {
            slug.push(c.to_ascii_lowercase());
            dash = false;
        } else if !dash {
            slug.push('-');
            dash = true;
        }
        if slug.len() >= 48 {
            break;
        }
    }
    while slug.ends_with('-') {
        slug.pop();
    }
    if slug.is_empty() {
        slug.push_str("run");
    }
    slug
}

/// Turn an execution into the serializable report plus the CSV payloads,
/// assigning each recorded series its artifact path.
pub fn build_report(
    compiled: &CompiledScenario,
    executed: &Executed,
) -> (ScenarioReport, Vec<(String, PopulationSeries)>) {
    let mut csvs: Vec<(String, PopulationSeries)> = Vec::new();
    let mut results = Vec::new();
    for (ei, entry) in executed.entries.iter().enumerate() {
        let mut runs = Vec::new();
        for (ri, rec) in entry.records.iter().enumerate() {
            let file = format!("runs/r{ei:02}-{ri:02}-{}.csv", slugify(&rec.role));
            runs.push(RunRef {
                role: rec.role.clone(),
                file: file.clone(),
                points: rec.series.len(),
                provenance: format!("{:?}", rec.series.provenance),
                derived: rec.series.signed,
                leakage_alarm: rec.series.metadata.leakage_alarm,
            });
            csvs.push((file, rec.series.clone()));
        }
        results.push(ResultEntry {
            request: entry.request,
            label: entry.label.clone(),
            moments: entry.moments.iter().map(MomentEntry::from_result).collect(),
            runs,
            duan: entry.duan.map(|(verdict, moments)| DuanEntry {
                sum: verdict.sum,
                bound: verdict.bound,
                violates: verdict.violates,
                moments,
            }),
        });
    }

    let report = ScenarioReport {
        schema: SCHEMA_VERSION,
        name: compiled.scenario.name.clone(),
        source: compiled.source.clone(),
        modes: compiled.modes,
        truncation: compiled.truncation,
        leakage_tol: compiled.leakage_tol,
        seed: compiled.seed,
        shots: compiled.shots,
        lindblad: compiled.lindblad,
        estimator: compiled.method,
        grid: compiled.scenario.grid,
        field_leakage: executed.field_leakage.clone(),
        leakage_alarm: executed.leakage_alarm,
        results,
    };
    (report, csvs)
}

/// Current UTC time, RFC 3339 at second resolution, for the results header.
pub fn utc_timestamp() -> String {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .unwrap_or_default()
        .as_secs();
    let (days, rem) = (secs / 86_400, secs % 86_400);
    let (h, m, s) = (rem / 3600, (rem % 3600) / 60, rem % 60);
    let (y, mo, d) = civil_from_days(days as i64);
    format!("{y:04}-{mo:02}-{d:02}T{h:02}:{m:02}:{s:02}Z")
}

fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = (if mp < 10 { mp + 3 } else { mp - 9 }) as u32;
    (yoe + era * 400 + i64::from(m <= 2), m, d)
}

/// Serialize the report with the timestamp isolated on the second line, so
/// two runs of the same scenario and seed differ in exactly that line.
pub fn render_results_json(report: &ScenarioReport, stamp: &str) -> Result<String> {
    let body = serde_json::to_string_pretty(report).map_err(io::Error::other)?;
    let mut indented = String::with_capacity(body.len() + 256);
    for (k, line) in body.lines().enumerate() {
        if k > 0 {
            indented.push_str("\n  ");
        }
        indented.push_str(line);
    }
    Ok(format!(
        "{{\n  \"generated_at\": \"{stamp}\",\n  \"report\": {indented}\n}}\n"
    ))
}

/// Write `results.json` and the per-run CSVs under `<out_root>/<name>/`.
/// Everything is staged in a temporary sibling directory and moved into
/// place with one rename, replacing any previous output for the scenario.
pub fn write_artifacts(
    report: &ScenarioReport,
    csvs: &[(String, PopulationSeries)],
    out_root: &Path,
) -> Result<PathBuf> {
    let final_dir = out_root.join(&report.name);
    let staging = out_root.join(format!(".{}.tmp-{}", report.name, std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(staging.join("runs"))?;
    for (rel, series) in csvs {
        let file = fs::File::create(staging.join(rel))?;
        series.write_csv(io::BufWriter::new(file))?;
    }
    fs::write(
        staging.join("results.json"),
        render_results_json(report, &utc_timestamp())?,
    )?;
    if final_dir.exists() {
        fs::remove_dir_all(&final_dir)?;
    }
    fs::rename(&staging, &final_dir)?;
    Ok(final_dir)
}

fn method_label(method: &DerivMethod) -> String {
    match method {
        DerivMethod::CentralFd { step, accuracy } => {
            format!("central_fd(step={step}, accuracy={accuracy})")
        }
        DerivMethod::Richardson { initial_step, levels } => {
            format!("richardson(initial_step={initial_step}, levels={levels})")
        }
        DerivMethod::Polyfit { degree, window } => {
            format!("polyfit(degree={degree}, window={window})")
        }
        DerivMethod::KernelIntegral { sigma, extrapolate } => {
            format!("kernel_integral(sigma={sigma}, extrapolate={extrapolate})")
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:+.8}"),
        None => "-".into(),
    }
}

/// Human-readable summary of a run, one line per extracted moment.
pub fn render_table(report: &ScenarioReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario {} (schema {}, source {})",
        report.name, report.schema, report.source
    );
    let _ = writeln!(
        out,
        "  truncation {} per mode, estimator {}, grid [{}, {}] x {}",
        report.truncation,
        method_label(&report.estimator),
        report.grid.min,
        report.grid.max,
        report.grid.points
    );
    match (report.shots, report.seed) {
        (Some(m), Some(s)) => {
            let _ = writeln!(out, "  shot noise: {m} shots per point, seed {s}");
        }
        _ => {
            let _ = writeln!(out, "  noiseless populations");
        }
    }
    if let Some(l) = &report.lindblad {
        let _ = writeln!(
            out,
            "  dissipation: kappa {} gamma {} gamma_phi {} (rk4 step {})",
            l.kappa, l.gamma, l.gamma_phi, l.step
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "  {:<22} {:>15} {:>15} {:>10} {:>10} {:>10}",
        "observable", "extracted", "oracle", "gap", "err.est", "residual"
    );
    for entry in &report.results {
        for m in &entry.moments {
            let residual = m
                .inputs
                .iter()
                .filter_map(|d| d.fit_residual)
                .fold(None::<f64>, |acc, r| Some(acc.map_or(r, |a| a.max(r))));
            let _ = writeln!(
                out,
                "  {:<22} {:>15} {:>15} {:>10} {:>10} {:>10}",
                m.observable,
                format!("{:+.8}", m.extracted),
                fmt_opt(m.oracle),
                m.oracle_gap.map_or("-".into(), |g| format!("{g:.1e}")),
                format!("{:.1e}", m.error_estimate),
                residual.map_or("-".into(), |r| format!("{r:.1e}")),
            );
        }
        if let Some(duan) = &entry.duan {
            let _ = writeln!(
                out,
                "  {:<22} sum {:.8} vs bound {:.8} -> {}",
                entry.label,
                duan.sum,
                duan.bound,
                if duan.violates { "violation (non-separable)" } else { "no violation" }
            );
        }
    }
    let n_runs: usize = report.results.iter().map(|r| r.runs.len()).sum();
    let _ = writeln!(out);
    let _ = writeln!(out, "  {n_runs} series CSV(s) listed in results.json");
    if report.leakage_alarm {
        let _ = writeln!(
            out,
            "  WARNING: truncation leakage alarm raised, results are suspect; \
             raise `truncation`"
        );
    }
    out
}

// ---------------------------------------------------------------------------
// Entry points used by the binary.
// ---------------------------------------------------------------------------

pub struct RunOutput {
    pub report: ScenarioReport,
    pub dir: PathBuf,
    pub table: String,
}

fn out_root(compiled: &CompiledScenario, ov: &CliOverrides) -> PathBuf {
    ov.out
        .clone()
        .or_else(|| compiled.scenario.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("qprobe-out"))
}

/// The `run` subcommand: resolve, compile, execute, write artifacts.
pub fn run(arg: &str, ov: &CliOverrides) -> Result<RunOutput> {
    let (source, text) = resolve_source(arg)?;
    let scenario = parse_scenario(&source, &text)?;
    let compiled = compile(&scenario, &source, ov)?;
    let executed = with_pool(ov.jobs, || execute(&compiled))?;
    let (report, csvs) = build_report(&compiled, &executed);
    let dir = write_artifacts(&report, &csvs, &out_root(&compiled, ov))?;
    let table = render_table(&report);
    Ok(RunOutput { report, dir, table })
}

/// The cost summary `validate` prints: observables, preparations, grid size.
pub fn summarize(compiled: &CompiledScenario) -> String {
    let preparations: usize = compiled.requests.iter().map(|r| r.preparations()).sum();
    let mut out = String::new();
    let _ = writeln!(out, "ok: {} ({})", compiled.scenario.name, compiled.source);
    let _ = writeln!(
        out,
        "  {} observable(s), {} state preparation(s), {} tau point(s), truncation {}",
        compiled.requests.len(),
        preparations,
        compiled.grid.len(),
        compiled.truncation
    );
    let _ = writeln!(out, "  estimator {}", method_label(&compiled.method));
    out
}

/// The `validate` subcommand: everything up to (but excluding) compute.
pub fn validate(arg: &str, ov: &CliOverrides) -> Result<String> {
    let (source, text) = resolve_source(arg)?;
    let scenario = parse_scenario(&source, &text)?;
    let compiled = compile(&scenario, &source, ov)?;
    Ok(summarize(&compiled))
}

/// Exit code the binary maps an error to: 3 for numerical breakdown during a
/// run, 2 for anything wrong with the inputs.
pub fn exit_code(err: &QpError) -> i32 {
    match err {
        QpError::TruncationLeak(_)
        | QpError::StepNotConverged(_)
        | QpError::Numerics(_)
        | QpError::IllConditionedFit(_)
        | QpError::NonRealResult { .. } => 3,
        _ => 2,
    }
}

// ---------------------------------------------------------------------------
// Estimator comparison.
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub method: String,
    pub noiseless_gap: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot_bias: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shot_std: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub name: String,
    pub observable: String,
    pub oracle: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shots: Option<u64>,
    pub seeds: usize,
    pub rows: Vec<CompareRow>,
    pub kernel_sweep: Vec<SweepPoint>,
    pub kernel_slope: f64,
}

pub struct CompareOutput {
    pub report: CompareReport,
    pub json_path: PathBuf,
    pub table: String,
}

/// The first-moment and number protocols again, but driven through the
/// grid-snapping derivative so stencil methods can consume sampled series.
/// The noiseless path is identical to the public extract functions, which
/// the unit tests pin; the phases here must stay in step with them.
fn benchmark_extract(
    field: &DensityOperator,
    req: &CompiledRequest,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<f64> {
    match *req {
        CompiledRequest::X { phi } => {
            let run = single_run(
                field,
                &InteractionSpec::JC1,
                &ProbeStateSpec::PlusPhi(phi - HALF_PI),
                Measure::Excited,
                TauParity::Free,
                plan,
            )?;
            Ok(run.derivative_snapped(DerivOrder::First, method)?.value)
        }
        CompiledRequest::Y { phi } => {
            let run = single_run(
                field,
                &InteractionSpec::JC1,
                &ProbeStateSpec::PlusPhi(phi),
                Measure::Excited,
                TauParity::Free,
                plan,
            )?;
            Ok(run.derivative_snapped(DerivOrder::First, method)?.value)
        }
        CompiledRequest::YHomodyne { phi } => {
            let diff = difference_run(
                field,
                &InteractionSpec::JC1,
                (ProbeStateSpec::PlusPhi(phi), ProbeStateSpec::MinusPhi(phi)),
                Measure::Excited,
                TauParity::Odd,
                plan,
            )?;
            Ok(0.5 * diff.derivative_snapped(DerivOrder::First, method)?.value)
        }
        CompiledRequest::N => {
            let run = single_run(
                field,
                &InteractionSpec::JC1,
                &ProbeStateSpec::Excited,
                Measure::Ground,
                TauParity::Even,
                plan,
            )?;
            Ok(0.5 * run.derivative_snapped(DerivOrder::Second, method)?.value - 1.0)
        }
        _ => Err(validation(
            "the comparison report covers x, y, y_homodyne and n observables",
        )),
    }
}

fn reference_extract(
    field: &DensityOperator,
    req: &CompiledRequest,
    plan: &RunPlan,
    method: &DerivMethod,
) -> Result<MomentResult> {
    match *req {
        CompiledRequest::X { phi } => extract_x(field, phi, plan, method),
        CompiledRequest::Y { phi } => extract_y(field, phi, plan, method),
        CompiledRequest::YHomodyne { phi } => extract_y_homodyne(field, phi, plan, method),
        CompiledRequest::N => extract_n(field, plan, method),
        _ => Err(validation(
            "the comparison report covers x, y, y_homodyne and n observables",
        )),
    }
}

fn compare_methods(order: DerivOrder, grid: &GridConfig) -> (Vec<DerivMethod>, Vec<DerivMethod>) {
    let degree = match order {
        DerivOrder::First => 5,
        DerivOrder::Second => 6,
    };
    // Tight parameters for the noiseless accuracy column. These mirror the
    // estimator-consistency invariant: every entry lands within 1e-6 of the
    // oracle on smooth population curves.
    let noiseless = vec![
        DerivMethod::CentralFd { step: 1e-3, accuracy: 4 },
        DerivMethod::Richardson { initial_step: 0.4, levels: 7 },
        DerivMethod::Polyfit { degree, window: 0.1 },
        DerivMethod::KernelIntegral { sigma: 0.1, extrapolate: true },
    ];
    // Noise-appropriate parameters, scaled to the recorded grid: stencil
    // steps far above the spacing, the fit window spanning the whole record,
    // the kernel width wide enough for its quadrature but inside the span.
    let half = 0.5 * (grid.max - grid.min);
    let spacing = (grid.max - grid.min) / (grid.points.max(2) - 1) as f64;
    let sigma = (half / 5.0).max(6.0 * spacing).min(half / 3.0);
    let noisy = vec![
        DerivMethod::CentralFd { step: (half / 4.0).max(2.0 * spacing), accuracy: 2 },
        DerivMethod::Richardson { initial_step: (half / 2.0).max(4.0 * spacing), levels: 3 },
        DerivMethod::Polyfit { degree, window: half },
        DerivMethod::KernelIntegral { sigma, extrapolate: false },
    ];
    (noiseless, noisy)
}

fn family(method: &DerivMethod) -> &'static str {
    match method {
        DerivMethod::CentralFd { .. } => "central_fd",
        DerivMethod::Richardson { .. } => "richardson",
        DerivMethod::Polyfit { .. } => "polyfit",
        DerivMethod::KernelIntegral { .. } => "kernel_integral",
    }
}

fn log_log_slope(points: &[SweepPoint]) -> f64 {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for p in points {
        let x = p.sigma.ln();
        let y = p.abs_error.max(1e-300).ln();
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    (n * sxy - sx * sy) / (n * sxx - sx * sx)
}

/// The `compare` subcommand: benchmark all four estimator families on the
/// scenario's first observable. Noiseless accuracy comes from the public
/// extraction path; the shot-noise columns rerun the protocol over
/// [`COMPARE_SEEDS`] independent seeds and report ensemble bias and spread.
pub fn compare(arg: &str, ov: &CliOverrides) -> Result<CompareOutput> {
    let (source, text) = resolve_source(arg)?;
    let scenario = parse_scenario(&source, &text)?;
    let compiled = compile(&scenario, &source, ov)?;
    if compiled.lindblad.is_some() {
        return Err(validation(format!(
            "{source}: the comparison report benchmarks sampled unitary runs; drop [lindblad]"
        )));
    }
    let request = compiled.requests[0];
    if !matches!(
        request,
        CompiledRequest::X { .. }
            | CompiledRequest::Y { .. }
            | CompiledRequest::YHomodyne { .. }
            | CompiledRequest::N
    ) {
        return Err(validation(format!(
            "{source}: the comparison report covers x, y, y_homodyne and n; \
             first observable is {}",
            request.label()
        )));
    }
    let order = match request {
        CompiledRequest::N => DerivOrder::Second,
        _ => DerivOrder::First,
    };

    let report = with_pool(ov.jobs, || {
        let (field, _) = build_joint_field(&compiled)?;
        let noiseless_plan = RunPlan::noiseless(compiled.grid.clone());
        let (tight, noisy) = compare_methods(order, &compiled.scenario.grid);

        let reference = reference_extract(&field, &request, &noiseless_plan, &tight[1])?;
        let oracle = reference.oracle.expect("protocol extractions carry oracles");

        let mut rows = Vec::new();
        for (tight_method, noisy_method) in tight.iter().zip(&noisy) {
            let clean = reference_extract(&field, &request, &noiseless_plan, tight_method)?;
            let (mut bias, mut std) = (None, None);
            if let Some(m) = compiled.shots {
                let base_seed = compiled.seed.unwrap_or(0);
                let estimates: Vec<f64> = (0..COMPARE_SEEDS)
                    .into_par_iter()
                    .map(|s| {
                        let mut plan = RunPlan::noiseless(compiled.grid.clone());
                        plan.shots = Some(ShotSpec {
                            shots_per_point: m,
                            rng_seed: base_seed,
                        });
                        let plan = plan.salted(9000 + s as u64);
                        benchmark_extract(&field, &request, &plan, noisy_method)
                    })
                    .collect::<Result<_>>()?;
                let mean = estimates.iter().sum::<f64>() / estimates.len() as f64;
                let var = estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>()
                    / (estimates.len() - 1) as f64;
                bias = Some(mean - oracle);
                std = Some(var.sqrt());
            }
            rows.push(CompareRow {
                method: family(tight_method).to_string(),
                noiseless_gap: (clean.extracted - oracle).abs(),
                shot_bias: bias,
                shot_std: std,
            });
        }

        // Raw (unextrapolated) kernel error against the stencil reference,
        // over a factor-8 width sweep: the quadrature bias scales as the
        // square of the width, so the log-log slope sits near 2.
        let mut kernel_sweep = Vec::new();
        for sigma in COMPARE_SWEEP_SIGMAS {
            let method = DerivMethod::KernelIntegral { sigma, extrapolate: false };
            let est = reference_extract(&field, &request, &noiseless_plan, &method)?;
            kernel_sweep.push(SweepPoint {
                sigma,
                abs_error: (est.extracted - reference.extracted).abs(),
            });
        }
        let kernel_slope = log_log_slope(&kernel_sweep);

        Ok(CompareReport {
            name: compiled.scenario.name.clone(),
            observable: request.label(),
            oracle,
            shots: compiled.shots,
            seeds: COMPARE_SEEDS,
            rows,
            kernel_sweep,
            kernel_slope,
        })
    })?;

    let table = render_compare_table(&report);
    let dir = out_root(&compiled, ov).join(&compiled.scenario.name);
    fs::create_dir_all(&dir)?;
    let json_path = dir.join("compare.json");
    let body = serde_json::to_string_pretty(&report).map_err(io::Error::other)?;
    write_atomic_file(&json_path, body.as_bytes())?;
    Ok(CompareOutput { report, json_path, table })
}

fn write_atomic_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn render_compare_table(report: &CompareReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "estimator comparison for {} (observable {}, oracle {:+.8})",
        report.name, report.observable, report.oracle
    );
    match report.shots {
        Some(m) => {
            let _ = writeln!(out, "  shot columns: {m} shots per point, {} seeds", report.seeds);
        }
        None => {
            let _ = writeln!(out, "  scenario declares no shots; shot columns skipped");
        }
    }
    let _ = writeln!(
        out,
        "  {:<16} {:>14} {:>14} {:>14}",
        "method", "noiseless gap", "shot bias", "shot std"
    );
    for row in &report.rows {
        let _ = writeln!(
            out,
            "  {:<16} {:>14} {:>14} {:>14}",
            row.method,
            format!("{:.1e}", row.noiseless_gap),
            row.shot_bias.map_or("-".into(), |b| format!("{b:+.1e}")),
            row.shot_std.map_or("-".into(), |s| format!("{s:.1e}")),
        );
    }
    let _ = writeln!(
        out,
        "  kernel width sweep (raw, against the extrapolation reference): slope {:.2}",
        report.kernel_slope
    );
    for p in &report.kernel_sweep {
        let _ = writeln!(out, "    sigma {:>7.4}  error {:.2e}", p.sigma, p.abs_error);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A valid single-observable scenario. `top` lands before the first
    /// table header, where top-level scalar keys must sit in TOML; tables
    /// can be appended to the result freely.
    fn toml_with(top: &str) -> String {
        format!(
            "schema = 1\nname = \"unit\"\ntruncation = 16\n{top}\n\n\
             [[field]]\nkind = \"coherent\"\nre = 0.8\n\n\
             [grid]\nmin = -1.0\nmax = 1.0\npoints = 21\n\n\
             [[observables]]\nkind = \"x\"\n"
        )
    }

    fn minimal_toml() -> String {
        toml_with("")
    }

    fn compile_text(text: &str) -> Result<CompiledScenario> {
        let scenario = parse_scenario("test", text)?;
        compile(&scenario, "test", &CliOverrides::default())
    }

    #[test]
    fn bundled_scenarios_parse_and_compile() {
        for (name, text) in BUNDLED {
            let scenario = parse_scenario(name, text).unwrap();
            assert_eq!(scenario.name, name);
            assert!(scenario.description.is_some(), "{name} needs a description");
            compile(&scenario, name, &CliOverrides::default()).unwrap();
        }
        let listing = list_bundled();
        for (name, _) in BUNDLED {
            assert!(listing.contains(name));
        }
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let cases = [
            ("top level", toml_with("typo = 1")),
            ("grid", minimal_toml().replace("points = 21", "points = 21\nstrde = 0.1")),
            ("field", minimal_toml().replace("re = 0.8", "re = 0.8\nalpha = 0.8")),
            (
                "estimator",
                minimal_toml() + "\n[estimator]\nname = \"richardson\"\nstepp = 0.1\n",
            ),
            ("observable", minimal_toml().replace("kind = \"x\"", "kind = \"x\"\nfi = 0.0")),
        ];
        for (where_, text) in cases {
            let err = parse_scenario("test", &text).unwrap_err();
            let msg = err.to_string();
            assert!(
                msg.contains("unknown field"),
                "{where_}: expected unknown-field error, got: {msg}"
            );
        }
    }

    #[test]
    fn parameters_must_belong_to_the_declared_kind() {
        let thermal_with_r = minimal_toml().replace(
            "kind = \"coherent\"\nre = 0.8",
            "kind = \"thermal\"\nnbar = 0.5\nr = 1.0",
        );
        let err = compile_text(&thermal_with_r).unwrap_err();
        assert!(err.to_string().contains("does not take `r`"), "{err}");

        let fock_without_n =
            minimal_toml().replace("kind = \"coherent\"\nre = 0.8", "kind = \"fock\"");
        let err = compile_text(&fock_without_n).unwrap_err();
        assert!(err.to_string().contains("needs `n`"), "{err}");

        let kernel_with_degree = minimal_toml()
            + "\n[estimator]\nname = \"kernel_integral\"\ndegree = 4\n";
        let err = compile_text(&kernel_with_degree).unwrap_err();
        assert!(err.to_string().contains("does not take `degree`"), "{err}");

        let duan_without_signs = minimal_toml().replace("kind = \"x\"", "kind = \"duan\"");
        let err = compile_text(&duan_without_signs).unwrap_err();
        assert!(err.to_string().contains("needs `s1`"), "{err}");
    }

    #[test]
    fn impossible_combinations_fail_validation() {
        let two_mode_x = minimal_toml().replace(
            "kind = \"coherent\"\nre = 0.8",
            "kind = \"two_mode_squeezed_vacuum\"\nr = 0.4",
        );
        let err = compile_text(&two_mode_x).unwrap_err();
        assert!(err.to_string().contains("1-mode field"), "{err}");

        let duan_single_mode = minimal_toml().replace(
            "kind = \"x\"",
            "kind = \"duan\"\ns1 = -1.0\ns2 = 1.0",
        );
        let err = compile_text(&duan_single_mode).unwrap_err();
        assert!(err.to_string().contains("2-mode field"), "{err}");

        let shots_without_seed =
            toml_with("shots = 100") + "\n[estimator]\nname = \"polyfit\"\n";
        let err = compile_text(&shots_without_seed).unwrap_err();
        assert!(err.to_string().contains("seed"), "{err}");

        let shots_with_stencil = toml_with("shots = 100\nseed = 1")
            + "\n[estimator]\nname = \"richardson\"\n";
        let err = compile_text(&shots_with_stencil).unwrap_err();
        assert!(err.to_string().contains("stencil"), "{err}");

        let lindblad_bad_grid = minimal_toml()
            + "\n[lindblad]\nkappa = 0.05\n\n[estimator]\nname = \"polyfit\"\n";
        let err = compile_text(&lindblad_bad_grid).unwrap_err();
        assert!(err.to_string().contains("grid.min = 0"), "{err}");

        let schema_two = minimal_toml().replace("schema = 1", "schema = 2");
        let err = compile_text(&schema_two).unwrap_err();
        assert!(err.to_string().contains("schema 2"), "{err}");

        let three_modes = minimal_toml().replace(
            "[[field]]\nkind = \"coherent\"\nre = 0.8",
            "[[field]]\nkind = \"coherent\"\nre = 0.8\n\n[[field]]\nkind = \"two_mode_squeezed_vacuum\"\nr = 0.3",
        );
        let err = compile_text(&three_modes).unwrap_err();
        assert!(err.to_string().contains("declared alone"), "{err}");
    }

    #[test]
    fn declared_primary_run_is_cross_checked() {
        let consistent = toml_with("interaction = \"jc1\"\nmeasurement = \"excited\"")
            + "\n[probe]\nkind = \"plus_phi\"\nphi = -1.5707963267948966\n";
        compile_text(&consistent).unwrap();

        let wrong_interaction = toml_with("interaction = \"jc2\"");
        let err = compile_text(&wrong_interaction).unwrap_err();
        assert!(err.to_string().contains("runs JC1"), "{err}");

        let wrong_probe = minimal_toml() + "\n[probe]\nkind = \"plus_phi\"\nphi = 0.0\n";
        let err = compile_text(&wrong_probe).unwrap_err();
        assert!(err.to_string().contains("prepares the probe"), "{err}");

        let wrong_measurement = toml_with("measurement = \"ground\"");
        let err = compile_text(&wrong_measurement).unwrap_err();
        assert!(err.to_string().contains("measures the excited projector"), "{err}");

        let duan = toml_with("interaction = \"jc1\"")
            .replace(
                "kind = \"coherent\"\nre = 0.8",
                "kind = \"two_mode_squeezed_vacuum\"\nr = 0.4",
            )
            .replace("kind = \"x\"", "kind = \"duan\"\ns1 = -1.0\ns2 = 1.0");
        let err = compile_text(&duan).unwrap_err();
        assert!(err.to_string().contains("derives all of its runs"), "{err}");
    }

    #[test]
    fn overrides_replace_file_values() {
        let scenario = parse_scenario("test", &minimal_toml()).unwrap();
        let ov = CliOverrides { seed: Some(9), truncation: Some(12), ..Default::default() };
        let compiled = compile(&scenario, "test", &ov).unwrap();
        assert_eq!(compiled.truncation, 12);
        assert_eq!(compiled.seed, Some(9));
    }

    #[test]
    fn vacuum_smoke_extracts_zeros() {
        let (source, text) = resolve_source("vacuum-smoke").unwrap();
        let scenario = parse_scenario(&source, &text).unwrap();
        let compiled = compile(&scenario, &source, &CliOverrides::default()).unwrap();
        let executed = execute(&compiled).unwrap();
        assert!(!executed.leakage_alarm);
        for entry in &executed.entries {
            for m in &entry.moments {
                assert!(m.extracted.abs() < 1e-9, "{}: {}", m.observable, m.extracted);
                assert!(m.oracle_gap().unwrap() < 1e-9);
            }
        }
    }

    #[test]
    fn results_json_isolates_the_timestamp() {
        let scenario = parse_scenario("test", &minimal_toml()).unwrap();
        let compiled = compile(&scenario, "test", &CliOverrides::default()).unwrap();
        let executed = execute(&compiled).unwrap();
        let (report, csvs) = build_report(&compiled, &executed);

        assert_eq!(csvs.len(), 1);
        assert!(csvs[0].0.starts_with("runs/r00-00-"));

        let a = render_results_json(&report, "2026-01-01T00:00:00Z").unwrap();
        let b = render_results_json(&report, "2026-01-02T11:22:33Z").unwrap();
        let differing: Vec<(&str, &str)> =
            a.lines().zip(b.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(differing.len(), 1);
        assert!(differing[0].0.contains("generated_at"));

        let value: serde_json::Value = serde_json::from_str(&a).unwrap();
        let moment = &value["report"]["results"][0]["moments"][0];
        assert_eq!(moment["observable"], "X(0.0000)");
        assert!(moment["oracle_gap"].as_f64().unwrap() < 1e-8);
        assert_eq!(value["report"]["results"][0]["runs"][0]["derived"], false);
    }

    #[test]
    fn executions_are_deterministic_and_job_independent() {
        let text = toml_with("shots = 400\nseed = 11")
            + "\n[estimator]\nname = \"polyfit\"\ndegree = 4\nwindow = 1.0\n";
        let compiled = compile_text(&text).unwrap();
        let run = |jobs| {
            let executed = with_pool(jobs, || execute(&compiled)).unwrap();
            let (report, _) = build_report(&compiled, &executed);
            render_results_json(&report, "fixed").unwrap()
        };
        let serial = run(Some(1));
        assert_eq!(serial, run(Some(4)));
        assert_eq!(serial, run(None));
    }

    #[test]
    fn companion_runs_appear_in_the_manifest() {
        let text = minimal_toml().replace(
            "kind = \"x\"",
            "kind = \"second_moments\"\nphi = 0.3",
        );
        let compiled = compile_text(&text).unwrap();
        let executed = execute(&compiled).unwrap();
        let entry = &executed.entries[0];
        // Two difference branches, the derived difference, one companion.
        assert_eq!(entry.records.len(), 4);
        assert_eq!(entry.moments.len(), 2);
        assert!(entry.records.iter().any(|r| r.role.contains("[companion]")));
        assert_eq!(
            entry.records.iter().filter(|r| r.series.signed).count(),
            1,
            "exactly one derived difference series"
        );
    }

    #[test]
    fn benchmark_extract_matches_the_public_path_noiselessly() {
        let scenario = parse_scenario("test", &minimal_toml()).unwrap();
        let compiled = compile(&scenario, "test", &CliOverrides::default()).unwrap();
        let (field, _) = build_joint_field(&compiled).unwrap();
        let plan = RunPlan::noiseless(compiled.grid.clone());
        let method = DerivMethod::Richardson { initial_step: 0.4, levels: 7 };
        for req in [
            CompiledRequest::X { phi: 0.4 },
            CompiledRequest::Y { phi: -0.2 },
            CompiledRequest::YHomodyne { phi: 0.1 },
            CompiledRequest::N,
        ] {
            let bench = benchmark_extract(&field, &req, &plan, &method).unwrap();
            let public = reference_extract(&field, &req, &plan, &method).unwrap();
            assert_eq!(bench, public.extracted, "{req:?}");
        }
    }

    #[test]
    fn compare_report_orders_polyfit_ahead_of_stencils() {
        let dir = tempfile::tempdir().unwrap();
        let text = toml_with(&format!(
            "shots = 10000\nseed = 5\nout_dir = {:?}",
            dir.path()
        )) + "\n[estimator]\nname = \"polyfit\"\ndegree = 5\nwindow = 1.0\n";
        let path = dir.path().join("cmp.toml");
        fs::write(&path, &text).unwrap();
        let out = compare(path.to_str().unwrap(), &CliOverrides::default()).unwrap();

        for row in &out.report.rows {
            assert!(row.noiseless_gap < 1e-6, "{}: {}", row.method, row.noiseless_gap);
        }
        let std_of = |name: &str| {
            out.report
                .rows
                .iter()
                .find(|r| r.method == name)
                .and_then(|r| r.shot_std)
                .unwrap()
        };
        assert!(
            std_of("polyfit") < std_of("central_fd"),
            "polyfit {:.2e} vs central_fd {:.2e}",
            std_of("polyfit"),
            std_of("central_fd")
        );
        assert!(
            (out.report.kernel_slope - 2.0).abs() < 0.5,
            "kernel sweep slope {}",
            out.report.kernel_slope
        );
        assert!(out.json_path.is_file());
    }

    #[test]
    fn artifacts_round_trip_and_replace_atomically() {
        let dir = tempfile::tempdir().unwrap();
        let ov = CliOverrides { out: Some(dir.path().to_path_buf()), ..Default::default() };
        let svacuum = run("vacuum-smoke", &ov).unwrap();
        assert!(svacuum.dir.join("results.json").is_file());
        for entry in &svacuum.report.results {
            for run_ref in &entry.runs {
                assert!(svacuum.dir.join(&run_ref.file).is_file(), "{}", run_ref.file);
            }
        }
        let text = fs::read_to_string(svacuum.dir.join("results.json")).unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["report"]["name"], "vacuum-smoke");

        // A second run replaces the directory without leaving staging debris.
        let again = run("vacuum-smoke", &ov).unwrap();
        assert_eq!(again.dir, svacuum.dir);
        let leftovers: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains("tmp"))
            .collect();
        assert!(leftovers.is_empty());
    }

    #[test]
    fn validate_counts_the_experimental_cost() {
        let summary = validate("duan-tmsv", &CliOverrides::default()).unwrap();
        assert!(summary.contains("ok: duan-tmsv"));
        assert!(summary.contains("14 state preparation(s)"), "{summary}");
    }

    #[test]
    fn unknown_scenario_names_list_the_bundled_ones() {
        let err = resolve_source("no-such-scenario").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("vacuum-smoke") && msg.contains("duan-tmsv"), "{msg}");
        assert_eq!(exit_code(&err), 2);
        assert_eq!(exit_code(&QpError::StepNotConverged("x".into())), 3);
    }

    #[test]
    fn civil_date_conversion_is_correct() {
        assert_eq!(civil_from_days(0), (1970, 1, 1));
        assert_eq!(civil_from_days(19_723), (2024, 1, 1));
        assert_eq!(civil_from_days(20_684), (2026, 8, 19));
    }
}
