//! Compressed learning: private ERM in a random projection, then L1 recovery.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg::{solve_spd, to_na};
use crate::model::{clip_l2, clip_rows, residuals, soft_threshold, Dataset, WeightVector};
use crate::privacy::{calibrate_sigma_for_budget, zcdp_compose, Accountant, AccountingMode, Charge, NoiseSource, PrivacyBudget};

use super::{FitReport, OptimizerSpec, Run};

const BASIS_PURSUIT_ITERATIONS: usize = 500;
const MAX_LATENT_STEPS: usize = 5000;
const MAX_PROJECTION_DRAWS: usize = 1000;

#[derive(Debug, Clone)]
pub struct ProjermParts {
    pub phi: Array2<f64>,
    /// Private latent solution.
    pub latent: Array1<f64>,
    /// Recovered weights.
    pub weights: WeightVector,
    pub report: FitReport,
}

/// Private compressed ERM; see [`projerm_parts`].
pub fn fit_projerm(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<FitReport> {
    projerm_parts(data, budget, spec, noise).map(|p| p.report)
}

/// Draws a full-rank Φ (m × d, entries ±1/√m) from the stream, runs clipped noisy gradient
/// descent on the projected rows Φx for `min(n², 5000)` steps under zCDP, then
/// recovers `θ = argmin ‖θ‖₁ s.t. Φθ = ϑ` by basis-pursuit ADMM. The latent
/// dimension is capped at d.
pub fn projerm_parts(data: &Dataset, budget: &PrivacyBudget, spec: &OptimizerSpec, noise: &mut NoiseSource) -> Result<ProjermParts> {
    let run = Run::begin(data, budget, spec)?;
    let (n, d) = (data.n(), data.d());
    let m = spec.latent_dim.min(d);
    let phi = draw_projection(m, d, noise)?;
    let projected = Dataset::new(data.x().dot(&phi.t()), data.y().clone(), data.task())?;

    let steps = n.saturating_mul(n).clamp(1, MAX_LATENT_STEPS);
    let c = spec.clip_norm;
    let sens = 2.0 * c / n as f64;
    let sigma = if noise.is_disabled() { 0.0 } else { calibrate_sigma_for_budget(budget, steps, sens)? };
    let radius = spec.domain_radius();
    let mut latent: Array1<f64> = Array1::zeros(m);
    for _ in 0..steps {
        let r = residuals(&latent, &projected)?;
        let mut per_example = projected.x().clone();
        for (mut row, ri) in per_example.rows_mut().into_iter().zip(r.iter()) {
            row *= *ri;
        }
        let mut g = clip_rows(&per_example, c).sum_axis(ndarray::Axis(0)) / n as f64;
        g.mapv_inplace(|v| v + noise.gaussian(sigma));
        latent.scaled_add(-spec.learning_rate, &g);
        clip_l2(&mut latent, radius);
    }
    let mut acc = Accountant::new(AccountingMode::Zcdp { delta: budget.delta });
    if !noise.is_disabled() {
        acc.charge_many(Charge::Rho(zcdp_compose(sens, sigma, 1)), steps)?;
    }
    let weights = basis_pursuit(&phi, &latent)?;
    let report = run.finish(weights.clone(), &acc, steps)?;
    Ok(ProjermParts { phi, latent, weights, report })
}

/// Rademacher Φ scaled by 1/√m, redrawn until it has full row rank. The draw
/// does not look at the data.
fn draw_projection(m: usize, d: usize, noise: &mut NoiseSource) -> Result<Array2<f64>> {
    let scale = 1.0 / (m as f64).sqrt();
    for _ in 0..MAX_PROJECTION_DRAWS {
        let phi = Array2::from_shape_fn((m, d), |_| scale * noise.rademacher());
        if to_na(&phi.dot(&phi.t())).rank(1e-12) == m {
            return Ok(phi);
        }
    }
    Err(Error::Degenerate("no full-rank projection drawn".into()))
}

/// `argmin ‖x‖₁ s.t. A x = b` by ADMM with penalty 1, returning the last feasible iterate.
pub fn basis_pursuit(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let (m, d) = a.dim();
    if b.len() != m {
        return Err(Error::DimensionMismatch { expected: m, found: b.len() });
    }
    let aat = a.dot(&a.t());
    if to_na(&aat).rank(1e-12) < m {
        return Err(Error::Degenerate("projection matrix is rank deficient".into()));
    }
    // x = P(z − u) + Aᵀ(AAᵀ)⁻¹b, with P the projector onto the null space of A.
    let project = |v: &Array1<f64>| -> Result<Array1<f64>> {
        let corr = solve_spd(&aat, &(a.dot(v) - b))?;
        Ok(v - &a.t().dot(&corr))
    };
    let mut z: Array1<f64> = Array1::zeros(d);
    let mut u: Array1<f64> = Array1::zeros(d);
    let mut x = project(&z)?;
    for _ in 0..BASIS_PURSUIT_ITERATIONS {
        x = project(&(&z - &u))?;
        z = soft_threshold(&(&x + &u), 1.0);
        u = u + &x - &z;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::from_na;
    use crate::model::test_support::random_dataset;
    use crate::model::{l1_norm, Task};
    use crate::optimizers::Algorithm;
    use ndarray::array;

    fn spec(m: usize) -> OptimizerSpec {
        let mut s = OptimizerSpec::new(Algorithm::ProjErm);
        s.latent_dim = m;
        s
    }

    #[test]
    fn square_phi_recovers_latent_preimage() {
        let data = random_dataset(10, 5, Task::Linear, 1);
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let p = projerm_parts(&data, &b, &spec(5), &mut NoiseSource::disabled(4)).unwrap();
        let inv = from_na(&to_na(&p.phi).try_inverse().expect("invertible"));
        let direct = inv.dot(&p.latent);
        let dev = (&direct - &p.weights).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(dev <= 1e-4, "{dev}");
        // The latent run is plain clipped gradient descent; check it moved.
        assert!(l1_norm(&p.latent) > 0.0);
    }

    #[test]
    fn zero_target_gives_zero() {
        let a = array![[1.0, 0.5, -1.0], [0.0, 1.0, 2.0]];
        assert_eq!(basis_pursuit(&a, &Array1::zeros(2)).unwrap(), Array1::<f64>::zeros(3));
    }

    #[test]
    fn recovery_is_feasible() {
        for seed in 0..20u64 {
            let mut rng = NoiseSource::new(seed);
            let (m, d) = (4, 12);
            let a = Array2::from_shape_fn((m, d), |_| rng.rademacher() / 2.0);
            let b = Array1::from_shape_fn(m, |_| rng.standard_normal());
            let x = basis_pursuit(&a, &b).unwrap();
            let r = a.dot(&x) - &b;
            assert!(r.dot(&r).sqrt() <= 1e-4 * b.dot(&b).sqrt());
        }
    }

    #[test]
    fn basis_pursuit_finds_sparse_solution() {
        // b is generated by a 1-sparse vector; the L1 minimum recovers it.
        let mut rng = NoiseSource::new(3);
        let (m, d) = (8, 16);
        let a = Array2::from_shape_fn((m, d), |_| rng.standard_normal());
        let mut truth = Array1::zeros(d);
        truth[5] = 2.0;
        let x = basis_pursuit(&a, &a.dot(&truth)).unwrap();
        assert!((x - &truth).iter().all(|v| v.abs() < 1e-3));
    }

    #[test]
    fn private_run_within_budget_and_deterministic() {
        let data = random_dataset(15, 8, Task::Logistic, 2);
        let b = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let a = fit_projerm(&data, &b, &spec(3), &mut NoiseSource::new(9)).unwrap();
        let c = fit_projerm(&data, &b, &spec(3), &mut NoiseSource::new(9)).unwrap();
        assert_eq!(a.weights, c.weights);
        assert!(a.spent.within(&b));
        assert!(fit_projerm(&data, &PrivacyBudget::pure(1.0).unwrap(), &spec(3), &mut NoiseSource::new(9)).is_err());
        // A latent dimension above d is capped.
        assert!(fit_projerm(&data, &b, &spec(20), &mut NoiseSource::new(9)).is_ok());
    }
}
