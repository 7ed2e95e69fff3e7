//! Private training algorithms for sparse linear and logistic regression.
//!
//! Every fit maps `(Dataset, PrivacyBudget, OptimizerSpec, NoiseSource)` to a
//! [`FitReport`]. Sensitivities are stated for neighbouring datasets that
//! differ in one replaced row, and assume preprocessed features (max row L1
//! norm at most 1). Norm bounds of the training data ([`DataBounds`]) are
//! treated as public.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array1;

use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::model::{Dataset, WeightVector};
use crate::privacy::{calibrate_sigma_for_budget, Accountant, NoiseSource, PrivacyBudget};

mod admm;
mod dpsgd;
mod frank_wolfe;
mod gcd;
mod nm;
mod projerm;
mod thresholding;
mod ts;

pub use admm::{fit_admm, Penalty};
pub use dpsgd::fit_dpsgd;
pub use frank_wolfe::{fit_fw, fit_htfw, fit_htpl, fit_polyfw, fit_vrfw};
pub use gcd::{fit_gcd, GcdRule};
pub use nm::fit_nm;
pub use projerm::fit_projerm;
pub use thresholding::{fit_dpight, fit_dpslkt, fit_htsl, fit_htso, ight};
pub use ts::fit_ts;

#[doc(hidden)]
pub mod internals {
    //! Hooks used by the oracle tests.
    pub use super::frank_wolfe::{fw_core, polyfw_with_weights, vrfw_trace, VrfwTrace};
    pub use super::gcd::gcd_scores;
    pub use super::projerm::{basis_pursuit, projerm_parts, ProjermParts};
    pub use super::ts::{block_supports, lasso_cd};
}

/// Multiplier on the L1 radius giving the L2 radius that gradient-type iterates are clipped to.
pub const DOMAIN_SCALE: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Algorithm {
    Ts,
    Fw,
    PolyFw,
    VrFw,
    HtFw,
    HtPl,
    ProjErm,
    Admm,
    AdmmHalf,
    DpIght,
    DpSlkt,
    HtSl,
    HtSo,
    GcdGsq,
    GcdGsr,
    GcdGss,
    Nm,
    DpSgd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 18] = [
        Self::Ts,
        Self::Fw,
        Self::PolyFw,
        Self::VrFw,
        Self::HtFw,
        Self::HtPl,
        Self::ProjErm,
        Self::Admm,
        Self::AdmmHalf,
        Self::DpIght,
        Self::DpSlkt,
        Self::HtSl,
        Self::HtSo,
        Self::GcdGsq,
        Self::GcdGsr,
        Self::GcdGss,
        Self::Nm,
        Self::DpSgd,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Self::Ts => "ts",
            Self::Fw => "fw",
            Self::PolyFw => "polyfw",
            Self::VrFw => "vrfw",
            Self::HtFw => "htfw",
            Self::HtPl => "htpl",
            Self::ProjErm => "projerm",
            Self::Admm => "admm",
            Self::AdmmHalf => "admmhalf",
            Self::DpIght => "dpight",
            Self::DpSlkt => "dpslkt",
            Self::HtSl => "htsl",
            Self::HtSo => "htso",
            Self::GcdGsq => "gcdgsq",
            Self::GcdGsr => "gcdgsr",
            Self::GcdGss => "gcdgss",
            Self::Nm => "nm",
            Self::DpSgd => "dpsgd",
        }
    }

    /// Whether the algorithm accepts the given task.
    pub fn supports(self, task: crate::model::Task) -> bool {
        use crate::model::Task;
        match self {
            Self::HtPl | Self::HtSl => task == Task::Linear,
            Self::Admm | Self::AdmmHalf => task == Task::Logistic,
            _ => true,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.id() == lower)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown algorithm '{s}'")))
    }
}

/// Algorithm choice plus hyperparameters. Each fit reads only the fields it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSpec {
    pub algorithm: Algorithm,
    pub iterations: usize,
    pub sparsity: usize,
    pub l1_radius: f64,
    pub reg: f64,
    pub admm_penalty: f64,
    pub learning_rate: f64,
    pub truncation: f64,
    pub latent_dim: usize,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub catoni_scale: f64,
    /// Size of the synthetic auxiliary set for DPSLKT; `None` uses the training size.
    pub aux_samples: Option<usize>,
}

impl OptimizerSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            iterations: match algorithm {
                Algorithm::VrFw | Algorithm::Nm => 16,
                _ => 10,
            },
            sparsity: 5,
            l1_radius: 1.0,
            reg: 0.01,
            admm_penalty: 1.0,
            learning_rate: 0.1,
            truncation: 1.0,
            latent_dim: 5,
            clip_norm: 1.0,
            batch_size: 32,
            catoni_scale: 1.0,
            aux_samples: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("l1_radius", self.l1_radius)?;
        ensure_nonnegative("reg", self.reg)?;
        ensure_positive("admm_penalty", self.admm_penalty)?;
        ensure_positive("learning_rate", self.learning_rate)?;
        ensure_positive("truncation", self.truncation)?;
        ensure_positive("clip_norm", self.clip_norm)?;
        ensure_positive("catoni_scale", self.catoni_scale)?;
        for (name, v) in [("sparsity", self.sparsity), ("latent_dim", self.latent_dim), ("batch_size", self.batch_size)] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be at least 1")));
            }
        }
        if self.aux_samples == Some(0) {
            return Err(Error::InvalidParameter("aux_samples must be at least 1".into()));
        }
        Ok(())
    }

    pub(crate) fn domain_radius(&self) -> f64 {
        DOMAIN_SCALE * self.l1_radius
    }
}

/// Result of one fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub weights: WeightVector,
    pub spent: PrivacyBudget,
    pub iterations_run: usize,
    /// Seconds.
    pub wall_time: f64,
}

/// Run the algorithm named in `spec`.
pub fn fit(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    match spec.algorithm {
        Algorithm::Ts => fit_ts(data, budget, spec, noise),
        Algorithm::Fw => fit_fw(data, budget, spec, noise),
        Algorithm::PolyFw => fit_polyfw(data, budget, spec, noise),
        Algorithm::VrFw => fit_vrfw(data, budget, spec, noise),
        Algorithm::HtFw => fit_htfw(data, budget, spec, noise),
        Algorithm::HtPl => fit_htpl(data, budget, spec, noise),
        Algorithm::ProjErm => fit_projerm(data, budget, spec, noise),
        Algorithm::Admm => fit_admm(data, budget, spec, noise, Penalty::L1),
        Algorithm::AdmmHalf => fit_admm(data, budget, spec, noise, Penalty::LHalf),
        Algorithm::DpIght => fit_dpight(data, budget, spec, noise),
        Algorithm::DpSlkt => fit_dpslkt(data, budget, spec, noise),
        Algorithm::HtSl => fit_htsl(data, budget, spec, noise),
        Algorithm::HtSo => fit_htso(data, budget, spec, noise),
        Algorithm::GcdGsq => fit_gcd(data, budget, spec, noise, GcdRule::Gsq),
        Algorithm::GcdGsr => fit_gcd(data, budget, spec, noise, GcdRule::Gsr),
        Algorithm::GcdGss => fit_gcd(data, budget, spec, noise, GcdRule::Gss),
        Algorithm::Nm => fit_nm(data, budget, spec, noise),
        Algorithm::DpSgd => fit_dpsgd(data, budget, spec, noise),
    }
}

/// Shared entry checks and bookkeeping for a fit.
pub(crate) struct Run {
    start: Instant,
    budget: PrivacyBudget,
}

impl Run {
    pub(crate) fn begin(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec) -> Result<Self> {
        spec.validate()?;
        PrivacyBudget::new(budget.epsilon, budget.delta)?;
        if data.n() == 0 || data.d() == 0 {
            return Err(Error::Degenerate("empty dataset".into()));
        }
        let m = data.max_row_l1();
        if m > 1.0 + 1e-9 {
            return Err(Error::InvalidParameter(format!(
                "dataset must be preprocessed to max row L1 norm 1, found {m}"
            )));
        }
        if !spec.algorithm.supports(data.task()) {
            return Err(Error::Task(format!("{} does not support the {} task", spec.algorithm, data.task())));
        }
        Ok(Self { start: Instant::now(), budget: *budget })
    }

    pub(crate) fn finish(self, weights: WeightVector, accountant: &Accountant, iterations: usize) -> Result<FitReport> {
        let spent = accountant.verify(&self.budget)?;
        Ok(FitReport { weights, spent, iterations_run: iterations, wall_time: self.start.elapsed().as_secs_f64() })
    }

    pub(crate) fn zero(self, d: usize) -> FitReport {
        FitReport {
            weights: Array1::zeros(d),
            spent: PrivacyBudget::zero(),
            iterations_run: 0,
            wall_time: self.start.elapsed().as_secs_f64(),
        }
    }
}

/// σ for one Gaussian release at sensitivity `sens`. Uses the classic bound when
/// it applies (ε < 1) and the zCDP calibration otherwise, whichever is smaller.
pub(crate) fn single_release_sigma(sens: f64, budget: &PrivacyBudget) -> Result<f64> {
    let zcdp = calibrate_sigma_for_budget(budget, 1, sens)?;
    if budget.epsilon < 1.0 {
        Ok(zcdp.min(crate::privacy::gaussian_sigma(sens, budget)?))
    } else {
        Ok(zcdp)
    }
}
