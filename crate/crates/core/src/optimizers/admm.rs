//! ADMM for L1 / L1/2 regularized logistic regression with objective perturbation.

use ndarray::{Array1, Array2};

use crate::error::Result;
use crate::linalg::solve_spd;
use crate::model::{gradient, half_threshold, loss, margins, sigmoid, soft_threshold, Dataset, WeightVector};
use crate::privacy::{Accountant, AccountingMode, Charge, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Penalty {
    L1,
    LHalf,
}

/// Upper bound on the second derivative of the logistic loss.
const LOGISTIC_CURVATURE: f64 = 0.25;
/// L1 sensitivity of the summed per-example gradients when one row is replaced.
const GRADIENT_L1_SENSITIVITY: f64 = 2.0;

/// Minimize `f(w) + (ρ/2)‖w − c‖² + ⟨q, w⟩` by damped Newton.
fn newton_prox(data: &Dataset, rho: f64, center: &Array1<f64>, q: &Array1<f64>, start: &Array1<f64>) -> Result<Array1<f64>> {
    let objective = |w: &Array1<f64>| -> Result<f64> {
        let diff = w - center;
        Ok(loss(w, data, 0.0)? + 0.5 * rho * diff.dot(&diff) + q.dot(w))
    };
    let n = data.n() as f64;
    let d = data.d();
    let mut w = start.clone();
    let mut f_w = objective(&w)?;
    for _ in 0..100 {
        let g = gradient(&w, data)? + (&w - center) * rho + q;
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) < 1e-10 {
            break;
        }
        let z = margins(&w, data)?;
        let weights = z.mapv(|zi| {
            let s = sigmoid(zi);
            s * (1.0 - s) / n
        });
        let mut xw = data.x().clone();
        for (mut row, wi) in xw.rows_mut().into_iter().zip(weights.iter()) {
            row *= *wi;
        }
        let h: Array2<f64> = data.x().t().dot(&xw) + Array2::<f64>::eye(d) * rho;
        let step = solve_spd(&h, &g)?;
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let cand = &w - &(&step * t);
            let f_c = objective(&cand)?;
            if f_c <= f_w - 1e-4 * t * slope || t < 1e-12 {
                w = cand;
                f_w = f_c;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(w)
}

/// Private ADMM for regularized logistic regression.
///
/// Each of T rounds takes a prox step on the penalty, solves the data term
/// `f(w) + (γ/2)‖w − z + u‖² + ⟨b, w⟩/n` exactly, and updates the scaled dual.
/// `b` has i.i.d. Laplace(2/ε′) entries with `ε′ = ε/T − 2 ln(1 + c/(nγ))`;
/// when that leaves less than half the round budget, ε′ is set to half and
/// extra ridge brings the strong convexity to `c/(n(e^{ε/(4T)} − 1))`.
/// Rounds compose by basic composition. Returns the sparse iterate z.
pub fn fit_admm(
    data: &Dataset,
    budget: &PrivacyBudget,
    spec: &OptimizerSpec,
    noise: &mut NoiseSource,
    penalty: Penalty,
) -> Result<FitReport> {
    let run = Run::begin(data, budget, spec)?;
    let t_max = spec.iterations;
    let (n, d) = (data.n() as f64, data.d());
    if t_max == 0 {
        return Ok(run.zero(d));
    }
    let gamma = spec.admm_penalty;
    let eps_round = budget.epsilon / t_max as f64;
    let mut eps_noise = eps_round - 2.0 * (1.0 + LOGISTIC_CURVATURE / (n * gamma)).ln();
    let mut extra_ridge = 0.0;
    if eps_noise < eps_round / 2.0 {
        eps_noise = eps_round / 2.0;
        extra_ridge = (LOGISTIC_CURVATURE / (n * (eps_round / 4.0).exp_m1()) - gamma).max(0.0);
    }
    if noise.is_disabled() {
        extra_ridge = 0.0;
    }
    let prox = |v: &Array1<f64>| match penalty {
        Penalty::L1 => soft_threshold(v, spec.reg / gamma),
        Penalty::LHalf => half_threshold(v, spec.reg / gamma),
    };

    let mut w: WeightVector = Array1::zeros(d);
    let mut z: WeightVector = Array1::zeros(d);
    let mut u: WeightVector = Array1::zeros(d);
    let mut acc = Accountant::new(AccountingMode::Basic);
    for _ in 0..t_max {
        z = prox(&(&w + &u));
        let b = Array1::from_shape_fn(d, |_| noise.laplace(GRADIENT_L1_SENSITIVITY / eps_noise));
        let center = &z - &u;
        // The extra ridge is centred at 0, so fold it into the quadratic term.
        let rho = gamma + extra_ridge;
        let c = &center * (gamma / rho);
        w = newton_prox(data, rho, &c, &(b / n), &w)?;
        u = u + &w - &z;
        acc.charge(Charge::Pure(eps_round))?;
    }
    run.finish(z, &acc, t_max)
}
