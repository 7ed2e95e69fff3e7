//! Frank-Wolfe variants over the L1 ball: FW, POLYFW, VRFW, HTFW and HTPL.
//!
//! Candidates for the linear minimization step are the origin (index 0) and the
//! 2d vertices ±k·e_j. The origin scores 0 and is picked on exact ties, so a
//! vanishing gradient leaves the iterate at zero.

use ndarray::Array1;

use crate::error::Result;
use crate::model::{
    catoni_influence, catoni_robust_gradient, gradient, gradient_on_rows, l1_norm, per_example_gradients,
    truncate_dataset, DataBounds, Dataset, WeightVector,
};
use crate::privacy::{argmax, report_noisy_max, Accountant, AccountingMode, Charge, CompositionPlan, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

/// Index of the chosen candidate for gradient `g`: 0 is the origin, `2j+1` is
/// `+k·e_j`, `2j+2` is `−k·e_j`. `grad_sens` bounds the change of any gradient
/// coordinate between neighbouring datasets.
fn select_vertex(g: &Array1<f64>, radius: f64, grad_sens: f64, epsilon: f64, noise: &mut NoiseSource) -> Result<usize> {
    let mut scores = Vec::with_capacity(2 * g.len() + 1);
    scores.push(0.0);
    for &gj in g.iter() {
        scores.push(-radius * gj);
        scores.push(radius * gj);
    }
    let sens = radius * grad_sens;
    if sens > 0.0 && sens.is_finite() {
        report_noisy_max(&scores, sens, epsilon, noise)
    } else {
        // Scores that cannot depend on the data need no noise.
        Ok(argmax(&scores))
    }
}

fn fw_step(w: &mut WeightVector, candidate: usize, radius: f64, gamma: f64) {
    *w *= 1.0 - gamma;
    if candidate > 0 {
        let j = (candidate - 1) / 2;
        let sign = if (candidate - 1).is_multiple_of(2) { 1.0 } else { -1.0 };
        w[j] += gamma * sign * radius;
    }
}

/// Private FW with step `2/(t+2)`. `grad(t, w)` returns the gradient estimate
/// and the sensitivity of its coordinates.
pub fn fw_core<G>(d: usize, iterations: usize, radius: f64, epsilon_step: f64, mut grad: G, noise: &mut NoiseSource) -> Result<WeightVector>
where
    G: FnMut(usize, &WeightVector) -> Result<(Array1<f64>, f64)>,
{
    let mut w = Array1::zeros(d);
    for t in 0..iterations {
        let (g, sens) = grad(t, &w)?;
        let c = select_vertex(&g, radius, sens, epsilon_step, noise)?;
        fw_step(&mut w, c, radius, 2.0 / (t as f64 + 2.0));
    }
    Ok(w)
}

fn fw_on(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource, run: Run) -> Result<FitReport> {
    let t_max = spec.iterations;
    if t_max == 0 {
        return Ok(run.zero(data.d()));
    }
    let k = spec.l1_radius;
    let bounds = DataBounds::from_data(data);
    let sens = 2.0 * bounds.grad_linf_bound_l1_ball(k) / data.n() as f64;
    let plan = CompositionPlan::pure_steps(budget, t_max)?;
    let eps = plan.per_step.epsilon;
    let w = fw_core(data.d(), t_max, k, eps, |_, w| Ok((gradient(w, data)?, sens)), noise)?;
    let mut acc = Accountant::new(plan.accounting_mode());
    acc.charge_many(Charge::Pure(eps), t_max)?;
    run.finish(w, &acc, t_max)
}

/// Private Frank-Wolfe: report-noisy-max over the L1-ball vertices each iteration.
pub fn fit_fw(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    fw_on(data, budget, spec, noise, run)
}

/// Truncate features and targets to [−K, K], then run private FW. Linear task only.
pub fn fit_htpl(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let truncated = truncate_dataset(data, spec.truncation)?;
    fw_on(&truncated, budget, spec, noise, run)
}

/// FW on the Catoni robust gradient, basic composition of pure steps.
pub fn fit_htfw(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    if t_max == 0 {
        return Ok(run.zero(data.d()));
    }
    let (k, s) = (spec.l1_radius, spec.catoni_scale);
    let bounds = DataBounds::from_data(data);
    // One row moves (s/n)ψ(g/s) by at most (2s/n)ψ(G/s) ≤ 2G/n.
    let sens = 2.0 * s * catoni_influence(bounds.grad_linf_bound_l1_ball(k) / s) / data.n() as f64;
    let eps = budget.epsilon / t_max as f64;
    let w = fw_core(
        data.d(),
        t_max,
        k,
        eps,
        |_, w| Ok((catoni_robust_gradient(&per_example_gradients(w, data)?, s)?, sens)),
        noise,
    )?;
    let mut acc = Accountant::new(AccountingMode::Basic);
    acc.charge_many(Charge::Pure(eps), t_max)?;
    run.finish(w, &acc, t_max)
}

/// Streaming FW with a recursive gradient estimate, weight `a_t = 1/(t+1)`.
pub fn fit_polyfw(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    polyfw_with_weights(data, budget, spec, noise, |t| 1.0 / (t as f64 + 1.0))
}

/// POLYFW with a caller-chosen estimator weight `a_t` (t starts at 1).
///
/// `d₀` is the gradient on the first ⌊n/2⌋ rows at 0. Each remaining row, in
/// order, drives one step: `d_t = ∇ℓ_t(w_{t−1}) + (1 − a_t)(d_{t−1} − ∇ℓ_t(w_{t−2}))`.
pub fn polyfw_with_weights<A>(
    data: &Dataset,
    budget: &PrivacyBudget,
    spec: &OptimizerSpec,
    noise: &mut NoiseSource,
    weight: A,
) -> Result<FitReport>
where
    A: Fn(usize) -> f64,
{
    let run = Run::begin(data, budget, spec)?;
    let (n, dim, k) = (data.n(), data.d(), spec.l1_radius);
    let n_half = n / 2;
    let t_max = n - n_half;
    let bounds = DataBounds::from_data(data);
    let g_inf = bounds.grad_linf_bound_l1_ball(k);
    let beta = bounds.smoothness_l1();
    let plan = CompositionPlan::pure_steps(budget, t_max)?;
    let eps = plan.per_step.epsilon;

    let first: Vec<usize> = (0..n_half).collect();
    let mut w_prev: WeightVector = Array1::zeros(dim);
    let mut w = w_prev.clone();
    let mut est = gradient_on_rows(&w, data, &first)?;
    let (mut carry, mut prev_sens) = (1.0, 0.0f64);
    for t in 1..=t_max {
        let row = [n_half + t - 1];
        let a = weight(t);
        let fresh = gradient_on_rows(&w, data, &row)?;
        let stale = gradient_on_rows(&w_prev, data, &row)?;
        est = &fresh + &((&est - &stale) * (1.0 - a));

        // Sensitivity of d_t: the differing row sits in the first half, is
        // streamed now, or was streamed earlier and has decayed since.
        carry *= 1.0 - a;
        let from_first = if n_half > 0 { 2.0 * g_inf / n_half as f64 * carry.abs() } else { 0.0 };
        let gamma_prev = if t == 1 { 0.0 } else { 2.0 / t as f64 };
        let from_now = a.abs() * 2.0 * g_inf + (1.0 - a).abs() * 2.0 * beta * 2.0 * k * gamma_prev;
        let sens = from_first.max(from_now).max((1.0 - a).abs() * prev_sens);
        prev_sens = sens;

        let c = select_vertex(&est, k, sens, eps, noise)?;
        w_prev = w.clone();
        fw_step(&mut w, c, k, 2.0 / (t as f64 + 1.0));
    }
    let mut acc = Accountant::new(plan.accounting_mode());
    acc.charge_many(Charge::Pure(eps), t_max)?;
    run.finish(w, &acc, t_max)
}

/// A right child in the VRFW tree, or the root.
#[derive(Debug, Clone)]
pub struct VrfwNode {
    pub depth: usize,
    pub rows: Vec<usize>,
    /// Iterate at which the node's gradients are taken.
    pub point: WeightVector,
    /// Iterate of the parent; the node adds `∇f_B(point) − ∇f_B(parent_point)`.
    pub parent_point: WeightVector,
    pub sensitivity: f64,
}

#[derive(Debug, Clone)]
pub struct VrfwLeaf {
    pub estimate: Array1<f64>,
    /// Node indices from the root down.
    pub path: Vec<usize>,
    pub sensitivity: f64,
}

#[derive(Debug, Clone)]
pub struct VrfwTrace {
    pub report: FitReport,
    pub nodes: Vec<VrfwNode>,
    pub leaves: Vec<VrfwLeaf>,
}

/// Private FW on a binary tree of gradient estimates.
pub fn fit_vrfw(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    vrfw_trace(data, budget, spec, noise).map(|t| t.report)
}

/// VRFW plus the tree it built.
///
/// With T leaves the tree has depth `h = ⌈log₂ T⌉`. The root holds the first
/// `⌊n/(1 + h/2)⌋` rows and each right child at depth i the next `⌊b₀ 2^{−i}⌋`
/// unused rows. Left children share their parent's estimate; a right child adds
/// the gradient difference on its own rows between the current iterate and
/// the parent's point. The smoothness used for sensitivities is floored at G∞/k.
pub fn vrfw_trace(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<VrfwTrace> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    if t_max == 0 {
        return Ok(VrfwTrace { report: run.zero(data.d()), nodes: Vec::new(), leaves: Vec::new() });
    }
    let (n, dim, k) = (data.n(), data.d(), spec.l1_radius);
    let h = (t_max as f64).log2().ceil() as usize;
    let b0 = ((n as f64) / (1.0 + h as f64 / 2.0)).floor().max(1.0) as usize;
    let bounds = DataBounds::from_data(data);
    let g_inf = bounds.grad_linf_bound_l1_ball(k);
    let beta = bounds.smoothness_l1().max(g_inf / k);
    let plan = CompositionPlan::pure_steps(budget, t_max)?;
    let eps = plan.per_step.epsilon;

    let mut w: WeightVector = Array1::zeros(dim);
    let root_rows: Vec<usize> = (0..b0.min(n)).collect();
    let root_est = gradient_on_rows(&w, data, &root_rows)?;
    let mut nodes = vec![VrfwNode {
        depth: 0,
        rows: root_rows,
        point: w.clone(),
        parent_point: w.clone(),
        sensitivity: 2.0 * g_inf / b0 as f64,
    }];
    // Per depth: estimate, point, and path of right nodes ending at that depth.
    let mut est = vec![root_est; h + 1];
    let mut pts = vec![w.clone(); h + 1];
    let mut paths: Vec<Vec<usize>> = vec![vec![0]; h + 1];
    let mut next_row = nodes[0].rows.len();
    let mut leaves = Vec::with_capacity(t_max);

    for t in 0..t_max {
        if t > 0 {
            let depth = h - t.trailing_zeros() as usize;
            let size = ((b0 as f64) * 0.5f64.powi(depth as i32)).floor() as usize;
            let end = (next_row + size).min(n);
            let rows: Vec<usize> = (next_row..end).collect();
            next_row = end;
            let parent_point = pts[depth - 1].clone();
            let mut e = est[depth - 1].clone();
            let sens = if rows.is_empty() {
                0.0
            } else {
                e = &e + &(gradient_on_rows(&w, data, &rows)? - gradient_on_rows(&parent_point, data, &rows)?);
                2.0 * beta * l1_norm(&(&w - &parent_point)) / rows.len() as f64
            };
            let id = nodes.len();
            nodes.push(VrfwNode { depth, rows, point: w.clone(), parent_point, sensitivity: sens });
            let mut path = paths[depth - 1].clone();
            path.push(id);
            for i in depth..=h {
                est[i] = e.clone();
                pts[i] = w.clone();
                paths[i] = path.clone();
            }
        }
        let path = paths[h].clone();
        let sens = path.iter().map(|&i| nodes[i].sensitivity).fold(0.0, f64::max);
        let c = select_vertex(&est[h], k, sens, eps, noise)?;
        leaves.push(VrfwLeaf { estimate: est[h].clone(), path, sensitivity: sens });
        fw_step(&mut w, c, k, 2.0 / (t as f64 + 2.0));
    }
    let mut acc = Accountant::new(plan.accounting_mode());
    acc.charge_many(Charge::Pure(eps), t_max)?;
    Ok(VrfwTrace { report: run.finish(w, &acc, t_max)?, nodes, leaves })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::random_dataset;
    use crate::model::{loss, Task};
    use crate::optimizers::Algorithm;
    use ndarray::array;

    fn spec(alg: Algorithm, t: usize) -> OptimizerSpec {
        let mut s = OptimizerSpec::new(alg);
        s.iterations = t;
        s
    }

    fn budget() -> PrivacyBudget {
        PrivacyBudget::new(1.0, 1e-5).unwrap()
    }

    #[test]
    fn zero_iterations_give_zero() {
        let data = random_dataset(10, 5, Task::Linear, 0);
        for alg in [Algorithm::Fw, Algorithm::HtFw, Algorithm::VrFw, Algorithm::HtPl] {
            let r = crate::optimizers::fit(&data, &budget(), &spec(alg, 0), &mut NoiseSource::new(1)).unwrap();
            assert_eq!(r.weights, Array1::<f64>::zeros(5));
            assert_eq!(r.spent, PrivacyBudget::zero());
        }
    }

    #[test]
    fn quadratic_toy_converges_to_vertex() {
        let k = 2.0;
        let target = array![k, 0.0, 0.0];
        let f = |w: &WeightVector| (w - &target).mapv(|v| v * v).sum();
        for t in [1usize, 5, 20, 100] {
            let w = fw_core(3, t, k, 1.0, |_, w| Ok(((w - &target) * 2.0, 1.0)), &mut NoiseSource::disabled(0)).unwrap();
            // Curvature constant of ‖·‖² over the L1 ball: L · diam² = 2 · (2k)².
            assert!(f(&w) <= 2.0 * 2.0 * (2.0 * k).powi(2) / (t as f64 + 2.0), "T={t}");
            assert!(l1_norm(&w) <= k + 1e-9);
        }
        let w = fw_core(3, 1, k, 1.0, |_, w| Ok(((w - &target) * 2.0, 1.0)), &mut NoiseSource::disabled(0)).unwrap();
        assert_eq!(w, target);
    }

    #[test]
    fn fw_matches_nonprivate_oracle() {
        let data = random_dataset(10, 5, Task::Linear, 3);
        let r = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 15), &mut NoiseSource::disabled(0)).unwrap();
        // Nonprivate FW: exact linear minimization over the vertices.
        let mut w: WeightVector = Array1::zeros(5);
        for t in 0..15 {
            let g = gradient(&w, &data).unwrap();
            let j = (0..5).max_by(|&a, &b| g[a].abs().total_cmp(&g[b].abs()).then(b.cmp(&a))).unwrap();
            let mut v = Array1::zeros(5);
            if g[j] != 0.0 {
                v[j] = -g[j].signum();
            }
            let gamma = 2.0 / (t as f64 + 2.0);
            w = &w * (1.0 - gamma) + &v * gamma;
        }
        assert_eq!(r.weights, w);
    }

    #[test]
    fn outputs_stay_in_ball_and_budget() {
        for seed in 0..5 {
            let data = random_dataset(30, 6, Task::Logistic, seed);
            for alg in [Algorithm::Fw, Algorithm::PolyFw, Algorithm::VrFw, Algorithm::HtFw] {
                let mut s = spec(alg, 9);
                s.l1_radius = 3.0;
                let r = crate::optimizers::fit(&data, &budget(), &s, &mut NoiseSource::new(seed)).unwrap();
                assert!(l1_norm(&r.weights) <= 3.0 + 1e-9, "{alg}");
                assert!(r.spent.within(&budget()), "{alg}");
            }
        }
    }

    #[test]
    fn polyfw_single_streamed_point() {
        let data = random_dataset(2, 3, Task::Linear, 4);
        let r = fit_polyfw(&data, &budget(), &spec(Algorithm::PolyFw, 1), &mut NoiseSource::new(0)).unwrap();
        assert_eq!(r.iterations_run, 1);
        assert_eq!(r.weights.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn polyfw_with_unit_weights_is_streaming_fw() {
        let data = random_dataset(10, 5, Task::Logistic, 6);
        let s = spec(Algorithm::PolyFw, 1);
        let r = polyfw_with_weights(&data, &budget(), &s, &mut NoiseSource::disabled(0), |_| 1.0).unwrap();
        let oracle = fw_core(
            5,
            5,
            1.0,
            1.0,
            |t, w| Ok((gradient_on_rows(w, &data, &[5 + t])?, 1.0)),
            &mut NoiseSource::disabled(0),
        )
        .unwrap();
        let dev = (&r.weights - &oracle).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev <= 1e-9);
    }

    #[test]
    fn vrfw_single_leaf_is_full_batch_step() {
        let data = random_dataset(10, 4, Task::Linear, 2);
        let t = vrfw_trace(&data, &budget(), &spec(Algorithm::VrFw, 1), &mut NoiseSource::disabled(0)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].rows.len(), 10);
        let g = gradient(&Array1::zeros(4), &data).unwrap();
        assert_eq!(t.leaves[0].estimate, g);
    }

    #[test]
    fn vrfw_tree_partition_and_leaf_gradients() {
        let data = random_dataset(60, 4, Task::Logistic, 8);
        for t_max in [2usize, 5, 8, 16] {
            let t = vrfw_trace(&data, &budget(), &spec(Algorithm::VrFw, t_max), &mut NoiseSource::disabled(0)).unwrap();
            let root = t.nodes[0].rows.len();
            assert!(t.nodes.iter().all(|nd| nd.rows.len() <= root));
            let mut seen = [false; 60];
            for nd in &t.nodes {
                for &r in &nd.rows {
                    assert!(!seen[r], "row {r} reused");
                    seen[r] = true;
                }
            }
            for leaf in &t.leaves {
                let mut direct = gradient_on_rows(&t.nodes[0].point, &data, &t.nodes[0].rows).unwrap();
                for &id in &leaf.path[1..] {
                    let nd = &t.nodes[id];
                    direct = direct + gradient_on_rows(&nd.point, &data, &nd.rows).unwrap()
                        - gradient_on_rows(&nd.parent_point, &data, &nd.rows).unwrap();
                }
                let dev = (&direct - &leaf.estimate).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(dev <= 1e-9);
                let depths: Vec<usize> = leaf.path.iter().map(|&i| t.nodes[i].depth).collect();
                assert!(depths.windows(2).all(|w| w[0] < w[1]));
            }
        }
    }

    #[test]
    fn htfw_small_gradients_match_fw() {
        let data = random_dataset(10, 5, Task::Logistic, 12);
        let mut s = spec(Algorithm::HtFw, 8);
        s.catoni_scale = 1e6;
        let a = fit_htfw(&data, &budget(), &s, &mut NoiseSource::disabled(0)).unwrap();
        let b = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 8), &mut NoiseSource::disabled(0)).unwrap();
        let dev = (&a.weights - &b.weights).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev <= 1e-4);
    }

    #[test]
    fn htfw_resists_an_outlier() {
        // Column 0 carries the bulk signal, column 1 only the outlier row.
        let n = 20;
        let mut x = ndarray::Array2::zeros((n, 2));
        let mut y = Array1::zeros(n);
        for i in 0..n - 1 {
            x[[i, 0]] = 0.5;
            y[i] = 1.0;
        }
        x[[n - 1, 1]] = 0.5;
        y[n - 1] = 1000.0;
        let data = Dataset::new(x, y, Task::Linear).unwrap();
        let clean = data.select_rows(&(0..n - 1).collect::<Vec<_>>());
        let s = spec(Algorithm::HtFw, 1);
        let robust_dirty = fit_htfw(&data, &budget(), &s, &mut NoiseSource::disabled(0)).unwrap().weights;
        let robust_clean = fit_htfw(&clean, &budget(), &s, &mut NoiseSource::disabled(0)).unwrap().weights;
        assert_eq!(robust_dirty, robust_clean);
        let plain_dirty = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 1), &mut NoiseSource::disabled(0)).unwrap().weights;
        let plain_clean = fit_fw(&clean, &budget(), &spec(Algorithm::Fw, 1), &mut NoiseSource::disabled(0)).unwrap().weights;
        assert_ne!(plain_dirty, plain_clean);
    }

    #[test]
    fn htpl_reductions() {
        let data = random_dataset(12, 4, Task::Linear, 9);
        let mut s = spec(Algorithm::HtPl, 6);
        s.truncation = 1e6;
        let a = fit_htpl(&data, &budget(), &s, &mut NoiseSource::new(5)).unwrap();
        let b = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 6), &mut NoiseSource::new(5)).unwrap();
        assert_eq!(a.weights, b.weights);
        s.truncation = 1e-200;
        let c = fit_htpl(&data, &budget(), &s, &mut NoiseSource::new(5)).unwrap();
        assert_eq!(c.weights, Array1::<f64>::zeros(4));
        let logistic = random_dataset(12, 4, Task::Logistic, 9);
        assert!(matches!(fit_htpl(&logistic, &budget(), &s, &mut NoiseSource::new(5)), Err(crate::Error::Task(_))));
    }

    #[test]
    fn fw_is_deterministic_and_improves() {
        let data = random_dataset(40, 5, Task::Linear, 10);
        let a = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 10), &mut NoiseSource::new(3)).unwrap();
        let b = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 10), &mut NoiseSource::new(3)).unwrap();
        assert_eq!(a.weights, b.weights);
        let np = fit_fw(&data, &budget(), &spec(Algorithm::Fw, 50), &mut NoiseSource::disabled(0)).unwrap();
        assert!(loss(&np.weights, &data, 0.0).unwrap() <= loss(&Array1::zeros(5), &data, 0.0).unwrap());
    }
}
