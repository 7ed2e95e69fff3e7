//! Minibatch DP-SGD baseline.

use ndarray::Array1;

use crate::error::Result;
use crate::model::{clip_l2, clip_rows, per_example_gradients, Dataset, WeightVector};
use crate::privacy::{calibrate_sigma_for_budget, zcdp_compose, Accountant, AccountingMode, Charge, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

/// T steps over shuffled minibatches. Per-example gradients are clipped to
/// `clip_norm`; the batch sum gets Gaussian noise at sensitivity `2C` and is
/// averaged. No subsampling amplification is claimed.
pub fn fit_dpsgd(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    let (n, d) = (data.n(), data.d());
    if t_max == 0 {
        return Ok(run.zero(d));
    }
    let c = spec.clip_norm;
    let batch = spec.batch_size.min(n);
    let sigma = if noise.is_disabled() { 0.0 } else { calibrate_sigma_for_budget(budget, t_max, 2.0 * c)? };
    let mut acc = Accountant::new(AccountingMode::Zcdp { delta: budget.delta });
    let mut order: Vec<usize> = (0..n).collect();
    let mut cursor = n;
    let mut w: WeightVector = Array1::zeros(d);
    for _ in 0..t_max {
        if cursor + batch > n {
            noise.shuffle(&mut order);
            cursor = 0;
        }
        let rows = data.select_rows(&order[cursor..cursor + batch]);
        cursor += batch;
        let mut g = clip_rows(&per_example_gradients(&w, &rows)?, c).sum_axis(ndarray::Axis(0));
        g.mapv_inplace(|v| v + noise.gaussian(sigma));
        w.scaled_add(-spec.learning_rate / batch as f64, &g);
        clip_l2(&mut w, spec.domain_radius());
        if !noise.is_disabled() {
            acc.charge(Charge::Rho(zcdp_compose(2.0 * c, sigma, 1)))?;
        }
    }
    run.finish(w, &acc, t_max)
}
