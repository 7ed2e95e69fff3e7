//! Private greedy coordinate descent for L1-regularized objectives.

use ndarray::Array1;

use crate::error::Result;
use crate::model::{coordinate_constants, gradient, soft_threshold_scalar, DataBounds, Dataset, WeightVector};
use crate::privacy::{report_noisy_max, Accountant, Charge, CompositionPlan, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

/// Greedy selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GcdRule {
    /// Largest guaranteed decrease of the proximal coordinate step.
    Gsq,
    /// Largest proximal step length.
    Gsr,
    /// Largest gradient magnitude.
    Gss,
}

/// Selection scores, all scaled so that they move by at most
/// `Δ∇_j / √M_j` when the gradient coordinate moves by `Δ∇_j`.
/// Coordinates with `M_j = 0` score −∞.
pub fn gcd_scores(w: &WeightVector, grad: &Array1<f64>, smoothness: &Array1<f64>, lambda: f64, rule: GcdRule) -> Vec<f64> {
    (0..w.len())
        .map(|j| {
            let (wj, gj, mj) = (w[j], grad[j], smoothness[j]);
            if mj <= 0.0 {
                return f64::NEG_INFINITY;
            }
            match rule {
                GcdRule::Gss => gj.abs() / mj.sqrt(),
                GcdRule::Gsr => (wj - soft_threshold_scalar(wj - gj / mj, lambda / mj)).abs() * mj.sqrt(),
                GcdRule::Gsq => {
                    let step = soft_threshold_scalar(wj - gj / mj, lambda / mj) - wj;
                    let model = gj * step + 0.5 * mj * step * step + lambda * ((wj + step).abs() - wj.abs());
                    (-2.0 * model).max(0.0).sqrt()
                }
            }
        })
        .collect()
}

/// GCD on `loss + reg·‖w‖₁`. Each iteration picks one coordinate by
/// report-noisy-max over the rule's scores and takes a proximal step with a
/// Laplace-noised partial derivative, each half of the iteration budget.
/// Iterations compose by the advanced theorem.
pub fn fit_gcd(
    data: &Dataset,
    budget: &PrivacyBudget,
    spec: &OptimizerSpec,
    noise: &mut NoiseSource,
    rule: GcdRule,
) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    let (n, d) = (data.n() as f64, data.d());
    if t_max == 0 {
        return Ok(run.zero(d));
    }
    let bounds = DataBounds::from_data(data);
    let m = coordinate_constants(data, spec.l1_radius).smoothness;
    let plan = CompositionPlan::pure_steps(budget, t_max)?;
    let eps_half = plan.per_step.epsilon / 2.0;
    let lambda = spec.reg;
    let mut w: WeightVector = Array1::zeros(d);
    for _ in 0..t_max {
        let g = gradient(&w, data)?;
        let coord_sens = bounds.coord_gradient_bound(&w) * (2.0 / n);
        let scores = gcd_scores(&w, &g, &m, lambda, rule);
        let score_sens = (0..d)
            .filter(|&j| m[j] > 0.0)
            .map(|j| coord_sens[j] / m[j].sqrt())
            .fold(0.0f64, f64::max)
            .max(f64::MIN_POSITIVE);
        let j = report_noisy_max(&scores, score_sens, eps_half, noise)?;
        if m[j] <= 0.0 {
            continue;
        }
        let noisy = g[j] + noise.laplace(coord_sens[j] / eps_half);
        w[j] = soft_threshold_scalar(w[j] - noisy / m[j], lambda / m[j]);
    }
    let mut acc = Accountant::new(plan.accounting_mode());
    acc.charge_many(Charge::Pure(plan.per_step.epsilon), t_max)?;
    run.finish(w, &acc, t_max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_support::random_dataset;
    use crate::model::{loss, Task};
    use crate::optimizers::Algorithm;
    use ndarray::{array, Array2};

    const RULES: [GcdRule; 3] = [GcdRule::Gsq, GcdRule::Gsr, GcdRule::Gss];

    fn spec(t: usize, reg: f64) -> OptimizerSpec {
        let mut s = OptimizerSpec::new(Algorithm::GcdGsq);
        s.iterations = t;
        s.reg = reg;
        s
    }

    /// Diagonal design: the loss separates into independent 1-d quadratics.
    fn diagonal() -> (Dataset, Vec<f64>, Vec<f64>) {
        let a = vec![1.0, 0.5, 0.8, 0.3];
        let y = vec![0.6, -0.9, 0.05, 0.4];
        let x = Array2::from_diag(&Array1::from(a.clone()));
        (Dataset::new(x, Array1::from(y.clone()), Task::Linear).unwrap(), a, y)
    }

    #[test]
    fn separable_quadratic_reaches_closed_form() {
        let (data, a, y) = diagonal();
        let n = 4.0;
        let reg = 0.05;
        // Per coordinate: (1/n)(a w − y)² + reg|w|.
        let oracle: Vec<f64> =
            (0..4).map(|j| soft_threshold_scalar(y[j] / a[j], reg * n / (2.0 * a[j] * a[j]))).collect();
        for rule in [GcdRule::Gsq, GcdRule::Gsr] {
            let r = fit_gcd(&data, &PrivacyBudget::pure(1.0).unwrap(), &spec(12, reg), &mut NoiseSource::disabled(0), rule)
                .unwrap();
            for (j, (w, o)) in r.weights.iter().zip(&oracle).enumerate() {
                assert!((w - o).abs() < 1e-12, "{rule:?} {j}");
            }
        }
    }

    #[test]
    fn gsq_matches_brute_force_decrease() {
        let w = array![0.3, -0.1, 0.0];
        let g = array![0.2, -0.4, 0.05];
        let m = array![1.5, 0.7, 2.0];
        let lambda = 0.1;
        let scores = gcd_scores(&w, &g, &m, lambda, GcdRule::Gsq);
        for j in 0..3 {
            let model = |t: f64| g[j] * t + 0.5 * m[j] * t * t + lambda * ((w[j] + t).abs() - w[j].abs());
            let best = (-200_000..=200_000).map(|k| model(k as f64 * 1e-5)).fold(f64::INFINITY, f64::min);
            assert!(((-2.0 * best).sqrt() - scores[j]).abs() < 1e-4, "{j}");
        }
    }

    #[test]
    fn rules_agree_without_penalty() {
        let w = array![0.3, -0.1, 0.0];
        let g = array![0.2, -0.4, 0.05];
        let m = array![1.5, 0.7, 2.0];
        let s = gcd_scores(&w, &g, &m, 0.0, GcdRule::Gss);
        for rule in [GcdRule::Gsq, GcdRule::Gsr] {
            for (a, b) in s.iter().zip(gcd_scores(&w, &g, &m, 0.0, rule)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_curvature_column_never_scores() {
        let s = gcd_scores(&array![0.0, 0.0], &array![1.0, 0.0], &array![1.0, 0.0], 0.0, GcdRule::Gss);
        assert_eq!(s[1], f64::NEG_INFINITY);
    }

    #[test]
    fn private_fit_is_valid() {
        let data = random_dataset(40, 6, Task::Logistic, 3);
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        for rule in RULES {
            assert_eq!(fit_gcd(&data, &b, &spec(0, 0.01), &mut NoiseSource::new(1), rule).unwrap().weights, Array1::<f64>::zeros(6));
            let r = fit_gcd(&data, &b, &spec(15, 0.01), &mut NoiseSource::new(1), rule).unwrap();
            assert!(r.spent.within(&b));
            assert!(r.weights.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn noiseless_descent_lowers_objective() {
        let data = random_dataset(30, 5, Task::Linear, 4);
        let zero = loss(&Array1::zeros(5), &data, 0.01).unwrap();
        for rule in RULES {
            let r = fit_gcd(&data, &PrivacyBudget::pure(1.0).unwrap(), &spec(20, 0.01), &mut NoiseSource::disabled(0), rule).unwrap();
            assert!(loss(&r.weights, &data, 0.01).unwrap() <= zero);
        }
    }
}
