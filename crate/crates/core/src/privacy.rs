//! Noise mechanisms, seeded noise streams and privacy accounting.

use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_positive, Error, Result};

/// An (ε, δ) pair. `delta == 0` means pure differential privacy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacyBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl PrivacyBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        ensure_positive("epsilon", epsilon)?;
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::InvalidParameter(format!("delta must lie in [0, 1], got {delta}")));
        }
        Ok(Self { epsilon, delta })
    }

    pub fn pure(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, 0.0)
    }

    /// Zero spend, used by reports of fits that never touched the data.
    pub fn zero() -> Self {
        Self { epsilon: 0.0, delta: 0.0 }
    }

    pub fn is_pure(&self) -> bool {
        self.delta == 0.0
    }

    /// Component-wise `self <= other`, with a small relative slack for rounding.
    pub fn within(&self, other: &PrivacyBudget) -> bool {
        let tol = 1e-9;
        self.epsilon <= other.epsilon * (1.0 + tol) && self.delta <= other.delta * (1.0 + tol)
    }

    pub fn halve(&self) -> PrivacyBudget {
        PrivacyBudget { epsilon: self.epsilon / 2.0, delta: self.delta / 2.0 }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a sequence of words into one seed. Stable across platforms and releases.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts.iter().fold(0x6A09_E667_F3BC_C908, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

/// A deterministic ChaCha20 stream.
///
/// When `disabled` is set, the privacy mechanisms become the identity and draw
/// nothing. Plain sampling helpers (`uniform_open`, `standard_normal`,
/// `rademacher`, `shuffle`) always draw, since the algorithms also use them
/// for randomness that is not privacy noise.
#[derive(Debug, Clone)]
pub struct NoiseSource {
    seed: u64,
    stream: u64,
    rng: ChaCha20Rng,
    disabled: bool,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self::child(seed, 0)
    }

    /// Stream `index` of the generator keyed by `master`.
    pub fn child(master: u64, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master);
        rng.set_stream(index);
        Self { seed: master, stream: index, rng, disabled: false }
    }

    /// A source whose mechanisms add no noise.
    pub fn disabled(seed: u64) -> Self {
        Self::new(seed).with_disabled(true)
    }

    pub fn with_disabled(mut self, disabled: bool) -> Self {
        self.disabled = disabled;
        self
    }

    /// An independent source for a sub-task, keyed by `key`. Does not advance `self`.
    pub fn fork(&self, key: u64) -> Self {
        let seed = derive_seed(&[self.seed, self.stream, key]);
        Self::new(seed).with_disabled(self.disabled)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn is_disabled(&self) -> bool {
        self.disabled
    }

    /// Uniform draw on the open interval (0, 1).
    pub fn uniform_open(&mut self) -> f64 {
        self.rng.sample(Open01)
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    /// ±1 with equal probability.
    pub fn rademacher(&mut self) -> f64 {
        if self.rng.random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    /// Laplace(0, b) sample, or 0 without drawing when disabled.
    pub fn laplace(&mut self, b: f64) -> f64 {
        if self.disabled {
            return 0.0;
        }
        laplace_inverse_cdf(self.uniform_open(), b)
    }

    /// Normal(0, sigma²) sample, or 0 without drawing when disabled.
    pub fn gaussian(&mut self, sigma: f64) -> f64 {
        if self.disabled {
            return 0.0;
        }
        sigma * self.standard_normal()
    }
}

/// Inverse CDF of Laplace(0, b) at `u`: `-b * sgn(u - 1/2) * ln(1 - 2|u - 1/2|)`.
pub fn laplace_inverse_cdf(u: f64, b: f64) -> f64 {
    let c = u - 0.5;
    if c == 0.0 {
        return 0.0;
    }
    -b * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

pub fn laplace_mechanism(
    values: &[f64],
    sensitivity_l1: f64,
    epsilon: f64,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    ensure_positive("sensitivity", sensitivity_l1)?;
    ensure_positive("epsilon", epsilon)?;
    let b = sensitivity_l1 / epsilon;
    Ok(values.iter().map(|v| v + noise.laplace(b)).collect())
}

/// Classic single-release calibration `Δ₂ √(2 ln(1.25/δ)) / ε`.
pub fn gaussian_sigma(sensitivity_l2: f64, budget: &PrivacyBudget) -> Result<f64> {
    ensure_positive("sensitivity", sensitivity_l2)?;
    if budget.delta <= 0.0 {
        return Err(Error::Unsupported("the Gaussian mechanism requires delta > 0".into()));
    }
    Ok(sensitivity_l2 * (2.0 * (1.25 / budget.delta).ln()).sqrt() / budget.epsilon)
}

pub fn gaussian_mechanism(
    values: &[f64],
    sensitivity_l2: f64,
    budget: &PrivacyBudget,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    let sigma = gaussian_sigma(sensitivity_l2, budget)?;
    Ok(values.iter().map(|v| v + noise.gaussian(sigma)).collect())
}

/// Index of the largest entry, lowest index on ties. NaN never wins.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] || values[best].is_nan() && !v.is_nan() {
            best = i;
        }
    }
    best
}

/// Argmax of `scores` after adding Laplace(2Δ/ε) to each entry.
pub fn report_noisy_max(
    scores: &[f64],
    sensitivity: f64,
    epsilon: f64,
    noise: &mut NoiseSource,
) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::InvalidParameter("report_noisy_max needs at least one score".into()));
    }
    ensure_positive("sensitivity", sensitivity)?;
    ensure_positive("epsilon", epsilon)?;
    if noise.is_disabled() {
        return Ok(argmax(scores));
    }
    let b = 2.0 * sensitivity / epsilon;
    let noised: Vec<f64> = scores.iter().map(|s| s + noise.laplace(b)).collect();
    Ok(argmax(&noised))
}

/// `2 ε √(2k ln(1/δ′))`, returned with δ = δ′.
pub fn advanced_composition(per_step_epsilon: f64, k: usize, delta_prime: f64) -> Result<PrivacyBudget> {
    ensure_positive("epsilon", per_step_epsilon)?;
    check_composition_args(k, delta_prime)?;
    let eps = 2.0 * per_step_epsilon * (2.0 * k as f64 * (1.0 / delta_prime).ln()).sqrt();
    Ok(PrivacyBudget { epsilon: eps, delta: delta_prime })
}

/// Per-step ε that `advanced_composition` maps to `total_epsilon`.
pub fn advanced_composition_inverse(total_epsilon: f64, k: usize, delta_prime: f64) -> Result<f64> {
    ensure_positive("epsilon", total_epsilon)?;
    check_composition_args(k, delta_prime)?;
    Ok(total_epsilon / (2.0 * (2.0 * k as f64 * (1.0 / delta_prime).ln()).sqrt()))
}

fn check_composition_args(k: usize, delta_prime: f64) -> Result<()> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return Err(Error::InvalidParameter(format!("delta_prime must lie in (0, 1), got {delta_prime}")));
    }
    Ok(())
}

/// ε of an adaptive sequence of steps with epsilons `eps` under slack δ′.
///
/// Takes the smaller of basic composition and the advanced bound, where the
/// advanced bound is the larger of the simplified `2√(2 ln(1/δ′) Σεᵢ²)` form and
/// the exact `√(2 ln(1/δ′) Σεᵢ²) + Σεᵢ(e^εᵢ − 1)` form, so large per-step
/// epsilons are never under-counted.
pub fn composed_epsilon(eps: &[f64], delta_prime: f64) -> f64 {
    let basic: f64 = eps.iter().sum();
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return basic;
    }
    let log_term = (1.0 / delta_prime).ln();
    let sq: f64 = eps.iter().map(|e| e * e).sum();
    let simplified = 2.0 * (2.0 * log_term * sq).sqrt();
    let exact = (2.0 * log_term * sq).sqrt() + eps.iter().map(|e| e * e.exp_m1()).sum::<f64>();
    basic.min(simplified.max(exact))
}

fn homogeneous_composed_epsilon(step: f64, k: usize, delta_prime: f64) -> f64 {
    let kf = k as f64;
    let basic = kf * step;
    if !(delta_prime > 0.0 && delta_prime < 1.0) {
        return basic;
    }
    let log_term = (1.0 / delta_prime).ln();
    let root = (2.0 * kf * log_term).sqrt() * step;
    basic.min((2.0 * root).max(root + kf * step * step.exp_m1()))
}

/// Largest per-step ε whose k-fold composition stays within `total_epsilon`.
fn per_step_epsilon(total_epsilon: f64, k: usize, delta_prime: f64) -> f64 {
    let basic = total_epsilon / k as f64;
    if k == 1 || delta_prime <= 0.0 {
        return basic;
    }
    let (mut lo, mut hi) = (basic, total_epsilon);
    if homogeneous_composed_epsilon(hi, k, delta_prime) <= total_epsilon {
        return hi;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if homogeneous_composed_epsilon(mid, k, delta_prime) <= total_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    lo
}

/// How a total budget is split over `k` adaptive steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompositionPlan {
    pub k: usize,
    pub delta_prime: f64,
    pub per_step: PrivacyBudget,
}

impl CompositionPlan {
    /// Plan for `k` pure-DP steps. δ/2 is reserved as composition slack when δ > 0.
    pub fn pure_steps(total: &PrivacyBudget, k: usize) -> Result<Self> {
        Self::build(total, k, 0.0)
    }

    /// Plan for `k` approximate-DP steps: δ/2 of slack and δ/(2k) per step.
    pub fn approx_steps(total: &PrivacyBudget, k: usize) -> Result<Self> {
        if total.delta <= 0.0 {
            return Err(Error::Unsupported("approximate-DP steps require delta > 0".into()));
        }
        Self::build(total, k, total.delta / (2.0 * k.max(1) as f64))
    }

    fn build(total: &PrivacyBudget, k: usize, step_delta: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        let delta_prime = if total.delta > 0.0 { total.delta / 2.0 } else { 0.0 };
        let eps = per_step_epsilon(total.epsilon, k, delta_prime);
        Ok(Self { k, delta_prime, per_step: PrivacyBudget { epsilon: eps, delta: step_delta } })
    }

    pub fn accounting_mode(&self) -> AccountingMode {
        if self.delta_prime > 0.0 {
            AccountingMode::Advanced { delta_prime: self.delta_prime }
        } else {
            AccountingMode::Basic
        }
    }

    /// Total spend implied by the plan.
    pub fn total(&self) -> PrivacyBudget {
        let eps = homogeneous_composed_epsilon(self.per_step.epsilon, self.k, self.delta_prime);
        let basic = self.k as f64 * self.per_step.epsilon;
        let delta = self.k as f64 * self.per_step.delta + if eps < basic { self.delta_prime } else { 0.0 };
        PrivacyBudget { epsilon: eps, delta }
    }
}

/// ρ of `steps` Gaussian releases with sensitivity Δ₂ and noise σ.
pub fn zcdp_compose(sensitivity_l2: f64, sigma: f64, steps: usize) -> f64 {
    steps as f64 * sensitivity_l2 * sensitivity_l2 / (2.0 * sigma * sigma)
}

/// `ρ + 2√(ρ ln(1/δ))`.
pub fn zcdp_to_approx_dp(rho: f64, delta: f64) -> f64 {
    rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt()
}

/// Smallest σ for which `steps` Gaussian releases at sensitivity Δ₂ fit in the budget
/// under zCDP composition and conversion.
///
/// The conversion inverts in closed form: with `L = ln(1/δ)`,
/// `√ρ = √(L + ε) − √L`.
pub fn calibrate_sigma_for_budget(budget: &PrivacyBudget, steps: usize, sensitivity_l2: f64) -> Result<f64> {
    ensure_positive("sensitivity", sensitivity_l2)?;
    ensure_positive("epsilon", budget.epsilon)?;
    if !(budget.delta > 0.0 && budget.delta < 1.0) {
        return Err(Error::Unsupported("zCDP calibration requires 0 < delta < 1".into()));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("steps must be at least 1".into()));
    }
    let l = (1.0 / budget.delta).ln();
    // (√(L+ε) − √L) written as ε / (√(L+ε) + √L) for stability when ε ≪ L.
    let sqrt_rho = budget.epsilon / ((l + budget.epsilon).sqrt() + l.sqrt());
    let rho = sqrt_rho * sqrt_rho;
    let mut sigma = sensitivity_l2 * (steps as f64 / (2.0 * rho)).sqrt();
    while zcdp_to_approx_dp(zcdp_compose(sensitivity_l2, sigma, steps), budget.delta) > budget.epsilon {
        sigma *= 1.0 + 1e-14;
    }
    Ok(sigma)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccountingMode {
    Basic,
    Advanced { delta_prime: f64 },
    Zcdp { delta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Charge {
    Pure(f64),
    Approx(PrivacyBudget),
    Rho(f64),
}

/// Records every data access of a fit and reports the composed spend.
#[derive(Debug, Clone)]
pub struct Accountant {
    mode: AccountingMode,
    rho: f64,
    ledger: Vec<Charge>,
}

impl Accountant {
    pub fn new(mode: AccountingMode) -> Self {
        Self { mode, rho: 0.0, ledger: Vec::new() }
    }

    pub fn mode(&self) -> AccountingMode {
        self.mode
    }

    pub fn ledger(&self) -> &[Charge] {
        &self.ledger
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn charge(&mut self, charge: Charge) -> Result<()> {
        match (self.mode, charge) {
            (AccountingMode::Zcdp { .. }, Charge::Rho(r)) => self.rho += r,
            (AccountingMode::Zcdp { .. }, Charge::Pure(e)) => self.rho += e * e / 2.0,
            (AccountingMode::Zcdp { .. }, Charge::Approx(_)) => {
                return Err(Error::Unsupported("zCDP accountant cannot absorb (epsilon, delta) charges".into()))
            }
            (_, Charge::Rho(_)) => {
                return Err(Error::Unsupported("rho charges need a zCDP accountant".into()));
            }
            _ => {}
        }
        self.ledger.push(charge);
        Ok(())
    }

    pub fn charge_many(&mut self, charge: Charge, times: usize) -> Result<()> {
        for _ in 0..times {
            self.charge(charge)?;
        }
        Ok(())
    }

    pub fn spent(&self) -> PrivacyBudget {
        if self.ledger.is_empty() {
            return PrivacyBudget::zero();
        }
        let (eps, deltas): (Vec<f64>, Vec<f64>) = self
            .ledger
            .iter()
            .map(|c| match c {
                Charge::Pure(e) => (*e, 0.0),
                Charge::Approx(b) => (b.epsilon, b.delta),
                Charge::Rho(_) => (0.0, 0.0),
            })
            .unzip();
        let delta_sum: f64 = deltas.iter().sum();
        match self.mode {
            AccountingMode::Basic => PrivacyBudget { epsilon: eps.iter().sum(), delta: delta_sum },
            AccountingMode::Advanced { delta_prime } => {
                let basic: f64 = eps.iter().sum();
                let composed = composed_epsilon(&eps, delta_prime);
                let slack = if composed < basic { delta_prime } else { 0.0 };
                PrivacyBudget { epsilon: composed, delta: delta_sum + slack }
            }
            AccountingMode::Zcdp { delta } => {
                PrivacyBudget { epsilon: zcdp_to_approx_dp(self.rho, delta), delta }
            }
        }
    }

    /// Spent budget, or an error if it exceeds `allowed`.
    pub fn verify(&self, allowed: &PrivacyBudget) -> Result<PrivacyBudget> {
        let spent = self.spent();
        if spent.within(allowed) {
            Ok(spent)
        } else {
            Err(Error::BudgetExceeded {
                spent_epsilon: spent.epsilon,
                spent_delta: spent.delta,
                epsilon: allowed.epsilon,
                delta: allowed.delta,
            })
        }
    }
}
