//! Phased output perturbation with geometrically growing localization.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::model::{clip_l2, gradient, DataBounds, Dataset, Task, WeightVector};
use crate::privacy::{calibrate_sigma_for_budget, zcdp_compose, Accountant, AccountingMode, Charge, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

/// Gradient steps used to approximate each phase's regularized minimizer.
const PHASE_STEPS: usize = 200;

/// `max(1, ⌈log₂ T⌉)` phases. Phase i minimizes `loss + (λ_i/2)‖w − w_{i−1}‖²`
/// with `λ_i = reg·2^i` over the L2 ball, then adds Gaussian noise scaled to
/// the minimizer's sensitivity `2L/(nλ_i)`. Phases compose under zCDP.
pub fn fit_nm(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    let (n, d) = (data.n() as f64, data.d());
    if t_max == 0 {
        return Ok(run.zero(d));
    }
    if spec.reg <= 0.0 {
        return Err(Error::InvalidParameter("nm needs a positive reg".into()));
    }
    let phases = ((t_max as f64).log2().ceil() as usize).max(1);
    let bounds = DataBounds::from_data(data);
    let radius = spec.domain_radius();
    let residual = match data.task() {
        Task::Linear => 2.0 * (bounds.row_l2_max * radius + bounds.target_max),
        Task::Logistic => 1.0,
    };
    let lipschitz = bounds.row_l2_max * residual;
    let beta = bounds.smoothness_l2();
    let sigma_unit = if noise.is_disabled() { 0.0 } else { calibrate_sigma_for_budget(budget, phases, 1.0)? };
    let mut acc = Accountant::new(AccountingMode::Zcdp { delta: budget.delta });
    let mut w: WeightVector = Array1::zeros(d);
    for i in 1..=phases {
        let lambda = spec.reg * 2f64.powi(i as i32);
        let anchor = w.clone();
        let step = 1.0 / (beta + lambda);
        for _ in 0..PHASE_STEPS {
            let g = gradient(&w, data)? + (&w - &anchor) * lambda;
            w.scaled_add(-step, &g);
            clip_l2(&mut w, radius);
        }
        let sigma = sigma_unit * 2.0 * lipschitz / (n * lambda);
        w.mapv_inplace(|v| v + noise.gaussian(sigma));
        clip_l2(&mut w, radius);
        if !noise.is_disabled() {
            acc.charge(Charge::Rho(zcdp_compose(1.0, sigma_unit, 1)))?;
        }
    }
    run.finish(w, &acc, phases)
}
