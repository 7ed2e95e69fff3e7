//! Two-stage fit: private support selection by subsample voting, then
//! objective perturbation on the selected features.

use ndarray::Array1;

use crate::error::Result;
use crate::model::{
    clip_l2, coordinate_constants, gradient, private_top_s, soft_threshold_scalar, top_s_indices, DataBounds,
    Dataset, Task, WeightVector,
};
use crate::privacy::{Accountant, AccountingMode, Charge, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

const LASSO_SWEEPS: usize = 100;
const STAGE_TWO_STEPS: usize = 500;

/// Cyclic proximal coordinate descent on `loss + lambda·‖w‖₁`. Each
/// coordinate step is exact for the linear task and a majorization step for
/// the logistic one.
pub fn lasso_cd(data: &Dataset, lambda: f64, sweeps: usize) -> Result<WeightVector> {
    let (n, d) = (data.n() as f64, data.d());
    let m = coordinate_constants(data, 0.0).smoothness;
    let mut w: WeightVector = Array1::zeros(d);
    let mut z: Array1<f64> = Array1::zeros(data.n());
    for _ in 0..sweeps {
        let mut moved = 0.0f64;
        for j in 0..d {
            if m[j] <= 0.0 {
                continue;
            }
            let col = data.x().column(j);
            let r = match data.task() {
                Task::Linear => (&z - data.y()) * 2.0,
                Task::Logistic => z.mapv(crate::model::sigmoid) - data.y(),
            };
            let g = col.dot(&r) / n;
            let next = soft_threshold_scalar(w[j] - g / m[j], lambda / m[j]);
            let delta = next - w[j];
            if delta != 0.0 {
                z.scaled_add(delta, &col);
                w[j] = next;
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-12 {
            break;
        }
    }
    Ok(w)
}

/// Top-s supports of nonprivate lasso fits on ⌊√n⌋ contiguous row blocks.
/// Only nonzero coefficients count towards a support.
pub fn block_supports(data: &Dataset, s: usize, lambda: f64) -> Result<Vec<Vec<usize>>> {
    let n = data.n();
    let blocks = ((n as f64).sqrt().floor() as usize).max(1);
    let size = n / blocks;
    (0..blocks)
        .map(|b| {
            let end = if b + 1 == blocks { n } else { (b + 1) * size };
            let rows: Vec<usize> = (b * size..end).collect();
            let w = lasso_cd(&data.select_rows(&rows), lambda, LASSO_SWEEPS)?;
            Ok(top_s_indices(w.view(), s).into_iter().filter(|&j| w[j] != 0.0).collect())
        })
        .collect()
}

/// Stage 1 (when s < d) spends ε/2 selecting s features by peeling over block
/// vote counts, each of which moves by at most 1 between neighbours. Stage 2
/// minimizes `loss + λ₂‖w‖² + ⟨b, w⟩` over the L2 ball of radius `l1_radius`
/// with `λ₂ = β/(nε₂)` and `b ~ N(0, σ²I)`,
/// `σ = L√(8 ln(2/δ) + 4ε₂)/(nε₂)`, where β and L are the per-example
/// smoothness and Lipschitz constants on that ball. Needs δ > 0.
pub fn fit_ts(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let (n, d) = (data.n(), data.d());
    let s = spec.sparsity.min(d);
    let mut acc = Accountant::new(AccountingMode::Basic);

    let (selected, eps2) = if s < d {
        let mut counts = vec![0.0; d];
        for support in block_supports(data, s, spec.reg)? {
            for j in support {
                counts[j] += 1.0;
            }
        }
        let mut chosen = private_top_s(&counts, s, 1.0, budget.epsilon / 2.0, noise)?;
        chosen.sort_unstable();
        if !noise.is_disabled() {
            acc.charge(Charge::Pure(budget.epsilon / 2.0))?;
        }
        (chosen, budget.epsilon / 2.0)
    } else {
        ((0..d).collect(), budget.epsilon)
    };

    let sub = data.select_cols(&selected);
    let radius = spec.l1_radius;
    let bounds = DataBounds::from_data(&sub);
    let residual = match data.task() {
        Task::Linear => 2.0 * (bounds.row_l2_max * radius + bounds.target_max),
        Task::Logistic => 1.0,
    };
    let lipschitz = bounds.row_l2_max * residual;
    let beta = bounds.smoothness_l2();
    let (ridge, sigma) = if noise.is_disabled() {
        (0.0, 0.0)
    } else {
        if budget.delta <= 0.0 {
            return Err(crate::Error::InvalidParameter("ts needs delta > 0".into()));
        }
        let nf = n as f64;
        let sigma = lipschitz * (8.0 * (2.0 / budget.delta).ln() + 4.0 * eps2).sqrt() / (nf * eps2);
        (beta / (nf * eps2), sigma)
    };
    let b = Array1::from_shape_fn(selected.len(), |_| noise.gaussian(sigma));
    let step = 1.0 / (beta + 2.0 * ridge).max(f64::MIN_POSITIVE);
    let mut v: Array1<f64> = Array1::zeros(selected.len());
    for _ in 0..STAGE_TWO_STEPS {
        let g = gradient(&v, &sub)? + &v * (2.0 * ridge) + &b;
        v.scaled_add(-step, &g);
        clip_l2(&mut v, radius);
    }
    if !noise.is_disabled() {
        acc.charge(Charge::Approx(PrivacyBudget::new(eps2, budget.delta)?))?;
    }
    let mut w: WeightVector = Array1::zeros(d);
    for (k, &j) in selected.iter().enumerate() {
        w[j] = v[k];
    }
    run.finish(w, &acc, STAGE_TWO_STEPS)
}
