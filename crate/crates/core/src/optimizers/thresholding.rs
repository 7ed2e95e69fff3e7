//! Hard-thresholding methods: DPIGHT, DPSLKT, HTSL and HTSO.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::model::{
    catoni_influence, catoni_robust_gradient, clip_l2, gradient, hard_threshold, margins, per_example_gradients,
    private_top_s, sigmoid, truncate_dataset, DataBounds, Dataset, Task, WeightVector,
};
use crate::privacy::{
    calibrate_sigma_for_budget, zcdp_compose, Accountant, AccountingMode, Charge, CompositionPlan, NoiseSource,
    PrivacyBudget,
};

use super::{single_release_sigma, FitReport, OptimizerSpec, Run};

/// Nonprivate iterative gradient hard thresholding with an optional L2 term,
/// iterates clipped to the L2 ball of `radius`.
pub fn ight(data: &Dataset, s: usize, eta: f64, iterations: usize, l2: f64, radius: f64) -> Result<WeightVector> {
    let mut w: WeightVector = Array1::zeros(data.d());
    for _ in 0..iterations {
        let g = gradient(&w, data)? + &w * l2;
        w = hard_threshold(&(&w - &(g * eta)), s);
        clip_l2(&mut w, radius);
    }
    Ok(w)
}

/// Gaussian-noised thresholded gradient descent. `grad` returns the gradient
/// and its L2 sensitivity at the current iterate.
fn noisy_threshold_descent<G>(
    data: &Dataset,
    budget: &PrivacyBudget,
    spec: &OptimizerSpec,
    noise: &mut NoiseSource,
    run: Run,
    mut grad: G,
) -> Result<FitReport>
where
    G: FnMut(&WeightVector) -> Result<(Array1<f64>, f64)>,
{
    let t_max = spec.iterations;
    let d = data.d();
    if t_max == 0 {
        return Ok(run.zero(d));
    }
    let s = spec.sparsity.min(d);
    let sigma_unit = if noise.is_disabled() { 0.0 } else { calibrate_sigma_for_budget(budget, t_max, 1.0)? };
    let mut acc = Accountant::new(AccountingMode::Zcdp { delta: budget.delta });
    let mut w: WeightVector = Array1::zeros(d);
    for _ in 0..t_max {
        let (g, sens) = grad(&w)?;
        let noisy = g.mapv(|v| v + noise.gaussian(sigma_unit * sens));
        w = hard_threshold(&(&w - &(noisy * spec.learning_rate)), s);
        clip_l2(&mut w, spec.domain_radius());
        if !noise.is_disabled() {
            acc.charge(Charge::Rho(zcdp_compose(1.0, sigma_unit, 1)))?;
        }
    }
    run.finish(w, &acc, t_max)
}

/// IGHT with Gaussian gradient noise of L2 sensitivity `2L(w)/n`, calibrated by zCDP over T steps.
pub fn fit_dpight(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let bounds = DataBounds::from_data(data);
    let n = data.n() as f64;
    noisy_threshold_descent(data, budget, spec, noise, run, |w| {
        Ok((gradient(w, data)?, 2.0 * bounds.lipschitz_l2(w) / n))
    })
}

/// IGHT on the Catoni robust gradient with Gaussian noise, then hard thresholding.
pub fn fit_htso(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let bounds = DataBounds::from_data(data);
    let n = data.n() as f64;
    let scale = spec.catoni_scale;
    noisy_threshold_descent(data, budget, spec, noise, run, |w| {
        let g = catoni_robust_gradient(&per_example_gradients(w, data)?, scale)?;
        // ψ is 1-Lipschitz and |ψ(x)| ≤ ψ(|x|), giving two bounds on the change.
        let lipschitz = 2.0 * bounds.lipschitz_l2(w) / n;
        let influence = bounds.coord_gradient_bound(w).mapv(|gj| (2.0 * scale / n * catoni_influence(gj / scale)).powi(2));
        Ok((g, lipschitz.min(influence.sum().sqrt())))
    })
}

/// Truncated IGHT with private support selection: each iteration takes a
/// gradient step on the truncated data, picks s coordinates of |w| by peeling
/// and releases their values with Laplace noise. Half of each iteration's
/// budget goes to selection and half to values; iterations compose by the
/// advanced theorem. Linear task only.
pub fn fit_htsl(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    let (n, d) = (data.n() as f64, data.d());
    if t_max == 0 {
        return Ok(run.zero(d));
    }
    let truncated = truncate_dataset(data, spec.truncation)?;
    let bounds = DataBounds::from_data(&truncated);
    let s = spec.sparsity.min(d);
    let plan = CompositionPlan::pure_steps(budget, t_max)?;
    let eps_half = plan.per_step.epsilon / 2.0;
    let eta = spec.learning_rate;
    let mut w: WeightVector = Array1::zeros(d);
    for _ in 0..t_max {
        let stepped = &w - &(gradient(&w, &truncated)? * eta);
        let coord_sens = (2.0 * eta * bounds.entry_max * bounds.residual_bound(&w) / n).max(f64::MIN_POSITIVE);
        let scores: Vec<f64> = stepped.iter().map(|v| v.abs()).collect();
        let support = private_top_s(&scores, s, coord_sens, eps_half, noise)?;
        w = Array1::zeros(d);
        let value_scale = s as f64 * coord_sens / eps_half;
        for j in support {
            w[j] = stepped[j] + noise.laplace(value_scale);
        }
        clip_l2(&mut w, spec.domain_radius());
    }
    let mut acc = Accountant::new(plan.accounting_mode());
    acc.charge_many(Charge::Pure(plan.per_step.epsilon), t_max)?;
    run.finish(w, &acc, t_max)
}

/// Teacher-student distillation. A nonprivate IGHT teacher labels a synthetic
/// auxiliary set; the label vector is released once with the Gaussian
/// mechanism and a nonprivate IGHT student is trained on it.
///
/// Linear labels are teacher predictions clipped to the target range, with L2
/// sensitivity `2B√m`. Logistic labels are teacher probabilities plus noise
/// (sensitivity `√m`), thresholded at 1/2.
pub fn fit_dpslkt(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let (n, d) = (data.n(), data.d());
    let t_max = spec.iterations;
    let s = spec.sparsity.min(d);
    let radius = spec.domain_radius();
    let teacher = ight(data, s, spec.learning_rate, t_max, spec.reg, radius)?;

    let m = spec.aux_samples.unwrap_or(n);
    let mut aux = Array2::from_shape_fn((m, d), |_| noise.standard_normal());
    let max_l1 = aux.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    if max_l1 > 0.0 {
        aux /= max_l1;
    }
    let probe = Dataset::new(aux.clone(), Array1::zeros(m), Task::Linear)?;
    let z = margins(&teacher, &probe)?;
    let (clean, sens) = match data.task() {
        Task::Linear => {
            let b = DataBounds::from_data(data).target_max;
            (z.mapv(|v| v.clamp(-b, b)), 2.0 * b * (m as f64).sqrt())
        }
        Task::Logistic => (z.mapv(sigmoid), (m as f64).sqrt()),
    };
    let sigma = if noise.is_disabled() || sens == 0.0 { 0.0 } else { single_release_sigma(sens, budget)? };
    let released = clean.mapv(|v| v + noise.gaussian(sigma));
    let labels = match data.task() {
        Task::Linear => released,
        Task::Logistic => released.mapv(|p| if p >= 0.5 { 1.0 } else { 0.0 }),
    };
    let aux_data = Dataset::new(aux, labels, data.task())?;
    let student = ight(&aux_data, s, spec.learning_rate, t_max, spec.reg, radius)?;

    let mut acc = Accountant::new(AccountingMode::Basic);
    if !noise.is_disabled() {
        acc.charge(Charge::Approx(*budget))?;
    }
    run.finish(student, &acc, t_max)
}
