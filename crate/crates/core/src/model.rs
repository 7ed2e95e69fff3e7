//! Datasets, losses, gradients and the thresholding / proximal kernels.

use ndarray::{Array1, Array2, ArrayView1, Axis};

use crate::error::{ensure_nonnegative, ensure_positive, Error, Result};
use crate::privacy::{report_noisy_max, NoiseSource};

pub type WeightVector = Array1<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Task {
    Linear,
    Logistic,
}

impl Task {
    /// Curvature factor of the per-example loss in the margin.
    fn curvature(self) -> f64 {
        match self {
            Task::Linear => 2.0,
            Task::Logistic => 0.25,
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Task::Linear => "linear",
            Task::Logistic => "logistic",
        })
    }
}

/// Dense design matrix with targets. Rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: Array2<f64>,
    y: Array1<f64>,
    task: Task,
}

impl Dataset {
    pub fn new(x: Array2<f64>, y: Array1<f64>, task: Task) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), found: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("dataset contains non-finite values".into()));
        }
        if task == Task::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Task("logistic labels must be 0 or 1".into()));
        }
        Ok(Self { x, y, task })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn d(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Array2<f64> {
        &self.x
    }

    pub fn y(&self) -> &Array1<f64> {
        &self.y
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn into_parts(self) -> (Array2<f64>, Array1<f64>, Task) {
        (self.x, self.y, self.task)
    }

    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset { x: self.x.select(Axis(0), rows), y: self.y.select(Axis(0), rows), task: self.task }
    }

    pub fn select_cols(&self, cols: &[usize]) -> Dataset {
        Dataset { x: self.x.select(Axis(1), cols), y: self.y.clone(), task: self.task }
    }

    pub fn max_row_l1(&self) -> f64 {
        self.x.rows().into_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }

    pub(crate) fn check_weights(&self, w: &WeightVector) -> Result<()> {
        if w.len() != self.d() {
            return Err(Error::DimensionMismatch { expected: self.d(), found: w.len() });
        }
        Ok(())
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn example_loss(task: Task, z: f64, y: f64) -> f64 {
    match task {
        Task::Linear => (z - y).powi(2),
        Task::Logistic => softplus(z) - y * z,
    }
}

/// dℓ/dz for one example.
fn residual(task: Task, z: f64, y: f64) -> f64 {
    match task {
        Task::Linear => 2.0 * (z - y),
        Task::Logistic => sigmoid(z) - y,
    }
}

pub fn margins(w: &WeightVector, data: &Dataset) -> Result<Array1<f64>> {
    data.check_weights(w)?;
    Ok(data.x.dot(w))
}

/// Mean per-example loss plus `l1_reg * ‖w‖₁`.
pub fn loss(w: &WeightVector, data: &Dataset, l1_reg: f64) -> Result<f64> {
    ensure_nonnegative("l1_reg", l1_reg)?;
    let z = margins(w, data)?;
    let n = data.n().max(1) as f64;
    let data_term: f64 = z.iter().zip(data.y.iter()).map(|(&z, &y)| example_loss(data.task, z, y)).sum::<f64>() / n;
    Ok(data_term + l1_reg * w.iter().map(|v| v.abs()).sum::<f64>())
}

/// dℓᵢ/dz at every example.
pub fn residuals(w: &WeightVector, data: &Dataset) -> Result<Array1<f64>> {
    let z = margins(w, data)?;
    Ok(Array1::from_iter(z.iter().zip(data.y.iter()).map(|(&z, &y)| residual(data.task, z, y))))
}

/// Gradient of the mean loss (no penalty).
pub fn gradient(w: &WeightVector, data: &Dataset) -> Result<Array1<f64>> {
    let r = residuals(w, data)?;
    let n = data.n();
    if n == 0 {
        return Ok(Array1::zeros(data.d()));
    }
    Ok(data.x.t().dot(&r) / n as f64)
}

/// Mean-loss gradient over a subset of rows.
pub fn gradient_on_rows(w: &WeightVector, data: &Dataset, rows: &[usize]) -> Result<Array1<f64>> {
    data.check_weights(w)?;
    let mut g = Array1::zeros(data.d());
    if rows.is_empty() {
        return Ok(g);
    }
    for &i in rows {
        let row = data.x.row(i);
        let r = residual(data.task, row.dot(w), data.y[i]);
        g.scaled_add(r, &row);
    }
    Ok(g / rows.len() as f64)
}

/// Row i holds ∇ℓᵢ(w), unnormalized.
pub fn per_example_gradients(w: &WeightVector, data: &Dataset) -> Result<Array2<f64>> {
    let r = residuals(w, data)?;
    let mut g = data.x.clone();
    for (mut row, ri) in g.rows_mut().into_iter().zip(r.iter()) {
        row *= *ri;
    }
    Ok(g)
}

/// Per-feature Lipschitz and smoothness constants of the mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateConstants {
    /// L_j, averaged over examples.
    pub lipschitz: Array1<f64>,
    /// M_j.
    pub smoothness: Array1<f64>,
    /// max over examples of the bound on |∂ℓᵢ/∂w_j|.
    pub example_lipschitz: Array1<f64>,
}

/// Constants for iterates in the L1 ball of radius `radius`. For the linear task the
/// prediction bound is `max|y| + radius`.
pub fn coordinate_constants(data: &Dataset, radius: f64) -> CoordinateConstants {
    let n = data.n().max(1) as f64;
    let scale = match data.task {
        Task::Linear => 2.0 * (data.y.iter().fold(0.0f64, |m, v| m.max(v.abs())) + radius),
        Task::Logistic => 1.0,
    };
    let c = data.task.curvature();
    let abs_sum = data.x.map(|v| v.abs()).sum_axis(Axis(0));
    let abs_max = data.x.map(|v| v.abs()).fold_axis(Axis(0), 0.0f64, |m: &f64, v: &f64| m.max(*v));
    let sq_sum = data.x.map(|v| v * v).sum_axis(Axis(0));
    CoordinateConstants {
        lipschitz: abs_sum * (scale / n),
        smoothness: sq_sum * (c / n),
        example_lipschitz: abs_max * scale,
    }
}

/// Norm bounds of a dataset. Computed from the data and used as public bounds
/// for sensitivity calculations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBounds {
    pub task: Task,
    pub n: usize,
    pub row_l1_max: f64,
    pub row_l2_max: f64,
    pub entry_max: f64,
    pub col_max: Array1<f64>,
    pub target_max: f64,
}

impl DataBounds {
    pub fn from_data(data: &Dataset) -> Self {
        let col_max = data.x.map(|v| v.abs()).fold_axis(Axis(0), 0.0f64, |m: &f64, v: &f64| m.max(*v));
        let row_l2_max = data.x.rows().into_iter().map(|r| r.dot(&r).sqrt()).fold(0.0, f64::max);
        DataBounds {
            task: data.task,
            n: data.n(),
            row_l1_max: data.max_row_l1(),
            row_l2_max,
            entry_max: col_max.iter().cloned().fold(0.0, f64::max),
            col_max,
            target_max: data.y.iter().fold(0.0f64, |m, v| m.max(v.abs())),
        }
    }

    /// Bound on |⟨x, w⟩| over all rows.
    pub fn margin_bound(&self, w: &WeightVector) -> f64 {
        let l1: f64 = w.iter().map(|v| v.abs()).sum();
        let l2 = w.dot(w).sqrt();
        let linf = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        (self.entry_max * l1).min(self.row_l2_max * l2).min(self.row_l1_max * linf)
    }

    /// Bound on |dℓᵢ/dz| at `w` over all examples.
    pub fn residual_bound(&self, w: &WeightVector) -> f64 {
        match self.task {
            Task::Linear => 2.0 * (self.margin_bound(w) + self.target_max),
            Task::Logistic => 1.0,
        }
    }

    /// Bound on |dℓᵢ/dz| for any `w` with ‖w‖₁ ≤ radius.
    pub fn residual_bound_l1_ball(&self, radius: f64) -> f64 {
        match self.task {
            Task::Linear => 2.0 * (self.entry_max * radius + self.target_max),
            Task::Logistic => 1.0,
        }
    }

    /// Bound on ‖∇ℓᵢ(w)‖_∞ for any w in the L1 ball.
    pub fn grad_linf_bound_l1_ball(&self, radius: f64) -> f64 {
        self.entry_max * self.residual_bound_l1_ball(radius)
    }

    /// Per-coordinate bound on |∂ℓᵢ/∂w_j| at `w`.
    pub fn coord_gradient_bound(&self, w: &WeightVector) -> Array1<f64> {
        &self.col_max * self.residual_bound(w)
    }

    /// Bound on ‖∇ℓᵢ(w)‖₂ at `w`.
    pub fn lipschitz_l2(&self, w: &WeightVector) -> f64 {
        self.row_l2_max * self.residual_bound(w)
    }

    /// L2 smoothness of each per-example loss.
    pub fn smoothness_l2(&self) -> f64 {
        self.task.curvature() * self.row_l2_max * self.row_l2_max
    }

    /// Smoothness of each per-example loss from ℓ1 to ℓ∞: ‖∇ℓ(u) − ∇ℓ(v)‖_∞ ≤ β‖u − v‖₁.
    pub fn smoothness_l1(&self) -> f64 {
        self.task.curvature() * self.entry_max * self.entry_max
    }
}

/// Sum over rows of each row scaled by `min(1, C / ‖row‖₂)`.
pub fn clip_per_example_gradients(per_example: &Array2<f64>, clip_norm: f64) -> Result<Array1<f64>> {
    ensure_positive("clip_norm", clip_norm)?;
    Ok(clip_rows(per_example, clip_norm).sum_axis(Axis(0)))
}

/// Rows of `per_example` individually clipped to L2 norm `clip_norm`.
pub fn clip_rows(per_example: &Array2<f64>, clip_norm: f64) -> Array2<f64> {
    let mut out = per_example.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > clip_norm {
            row *= clip_norm / norm;
        }
    }
    out
}

/// Clamp every feature into [−K, K]. Linear targets are clamped too; logistic
/// labels are left as they are.
pub fn truncate_dataset(data: &Dataset, k: f64) -> Result<Dataset> {
    ensure_positive("K", k)?;
    let x = data.x.map(|v| v.clamp(-k, k));
    let y = match data.task {
        Task::Linear => data.y.map(|v| v.clamp(-k, k)),
        Task::Logistic => data.y.clone(),
    };
    Ok(Dataset { x, y, task: data.task })
}

/// ψ(x) = sgn(x) ln(1 + |x| + x²/2).
pub fn catoni_influence(x: f64) -> f64 {
    let a = x.abs();
    x.signum() * (a + 0.5 * a * a).ln_1p()
}

/// Coordinate-wise `(s/n) Σᵢ ψ(g_ij / s)`.
pub fn catoni_robust_gradient(per_example: &Array2<f64>, scale: f64) -> Result<Array1<f64>> {
    ensure_positive("scale", scale)?;
    let n = per_example.nrows();
    if n == 0 {
        return Ok(Array1::zeros(per_example.ncols()));
    }
    let psi = per_example.map(|g| catoni_influence(g / scale));
    Ok(psi.sum_axis(Axis(0)) * (scale / n as f64))
}

/// Indices of the `s` largest |w_j|, lowest index first on ties, in rank order.
pub fn top_s_indices(w: ArrayView1<f64>, s: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w.len()).collect();
    idx.sort_by(|&a, &b| w[b].abs().total_cmp(&w[a].abs()).then(a.cmp(&b)));
    idx.truncate(s);
    idx
}

/// Keep the `s` largest-magnitude entries of `w`, zero the rest.
pub fn hard_threshold(w: &WeightVector, s: usize) -> WeightVector {
    let mut out = Array1::zeros(w.len());
    for j in top_s_indices(w.view(), s) {
        out[j] = w[j];
    }
    out
}

/// `s` indices chosen by peeling: s rounds of report-noisy-max at ε/s each over
/// the not yet selected indices. Returned in selection order.
pub fn private_top_s(
    scores: &[f64],
    s: usize,
    sensitivity: f64,
    epsilon: f64,
    noise: &mut NoiseSource,
) -> Result<Vec<usize>> {
    if s > scores.len() {
        return Err(Error::InvalidParameter(format!("cannot select {s} of {} indices", scores.len())));
    }
    ensure_positive("sensitivity", sensitivity)?;
    ensure_positive("epsilon", epsilon)?;
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut chosen = Vec::with_capacity(s);
    let per_round = epsilon / s.max(1) as f64;
    for _ in 0..s {
        let sub: Vec<f64> = remaining.iter().map(|&j| scores[j]).collect();
        let pick = report_noisy_max(&sub, sensitivity, per_round, noise)?;
        chosen.push(remaining.remove(pick));
    }
    Ok(chosen)
}

pub fn soft_threshold_scalar(w: f64, lambda: f64) -> f64 {
    w.signum() * (w.abs() - lambda).max(0.0)
}

/// Proximal operator of `λ‖·‖₁`.
pub fn soft_threshold(w: &WeightVector, lambda: f64) -> WeightVector {
    w.map(|&v| soft_threshold_scalar(v, lambda))
}

/// Cutoff below which the half-thresholding prox at `lambda` returns 0.
pub fn half_threshold_cutoff(lambda: f64) -> f64 {
    // The closed form is stated for (v − w)² + μ|v|^{1/2}; the ½-scaled prox has μ = 2λ.
    let mu = 2.0 * lambda;
    54f64.cbrt() / 4.0 * mu.powf(2.0 / 3.0)
}

/// argmin over v of `½(v − w)² + λ|v|^{1/2}`.
pub fn half_threshold_scalar(w: f64, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return w;
    }
    let a = w.abs();
    if a <= half_threshold_cutoff(lambda) {
        return 0.0;
    }
    let mu = 2.0 * lambda;
    let phi = ((mu / 8.0) * (a / 3.0).powf(-1.5)).clamp(-1.0, 1.0).acos();
    let v = (2.0 / 3.0) * a * (1.0 + (2.0 * std::f64::consts::PI / 3.0 - 2.0 * phi / 3.0).cos());
    w.signum() * v
}

/// Proximal operator of `λ Σ|w_j|^{1/2}`.
pub fn half_threshold(w: &WeightVector, lambda: f64) -> WeightVector {
    w.map(|&v| half_threshold_scalar(v, lambda))
}

/// Test metric: MSE for the linear task, accuracy (margin ≥ 0 predicts 1) for logistic.
pub fn evaluate(w: &WeightVector, data: &Dataset) -> Result<f64> {
    let z = margins(w, data)?;
    let n = data.n();
    if n == 0 {
        return Err(Error::Degenerate("cannot evaluate on an empty dataset".into()));
    }
    Ok(match data.task {
        Task::Linear => z.iter().zip(data.y.iter()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / n as f64,
        Task::Logistic => {
            let hits = z.iter().zip(data.y.iter()).filter(|(&p, &y)| (p >= 0.0) == (y == 1.0)).count();
            hits as f64 / n as f64
        }
    })
}

/// Whether a smaller metric is better for `task`.
pub fn lower_is_better(task: Task) -> bool {
    task == Task::Linear
}

/// Scale `w` down onto the L2 ball of the given radius.
pub fn clip_l2(w: &mut WeightVector, radius: f64) {
    let norm = w.dot(w).sqrt();
    if norm > radius {
        *w *= radius / norm;
    }
}

pub fn l1_norm(w: &WeightVector) -> f64 {
    w.iter().map(|v| v.abs()).sum()
}

pub fn nnz(w: &WeightVector) -> usize {
    w.iter().filter(|v| **v != 0.0).count()
}


#[cfg(test)]
mod tests {
    use super::test_support::random_dataset;
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn tiny(x: Array2<f64>, y: Array1<f64>, task: Task) -> Dataset {
        Dataset::new(x, y, task).unwrap()
    }

    #[test]
    fn dataset_validation() {
        assert!(Dataset::new(Array2::zeros((2, 1)), array![1.0], Task::Linear).is_err());
        assert!(Dataset::new(Array2::zeros((1, 1)), array![0.5], Task::Logistic).is_err());
        assert!(Dataset::new(array![[f64::NAN]], array![0.0], Task::Linear).is_err());
    }

    #[test]
    fn loss_examples() {
        let d = tiny(array![[1.0]], array![2.0], Task::Linear);
        assert_eq!(loss(&array![0.0], &d, 0.0).unwrap(), 4.0);
        let d = random_dataset(7, 3, Task::Logistic, 1);
        assert_abs_diff_eq!(loss(&Array1::zeros(3), &d, 0.0).unwrap(), 2f64.ln(), epsilon = 1e-15);
        let d = tiny(array![[0.0, 0.0]], array![0.0], Task::Linear);
        assert_eq!(loss(&array![0.5, -0.5], &d, 1.0).unwrap(), 1.0);
        assert!(loss(&array![0.0], &d, 0.0).is_err());
    }

    #[test]
    fn gradient_examples() {
        let d = tiny(array![[1.0]], array![2.0], Task::Linear);
        assert_eq!(gradient(&array![0.0], &d).unwrap(), array![-4.0]);
        let d = tiny(array![[1.0], [1.0]], array![1.0, 0.0], Task::Logistic);
        assert_eq!(gradient(&array![0.0], &d).unwrap(), array![0.0]);
    }

    fn finite_difference(w: &WeightVector, data: &Dataset) -> Array1<f64> {
        let h = 1e-6;
        Array1::from_shape_fn(w.len(), |j| {
            let mut a = w.clone();
            let mut b = w.clone();
            a[j] += h;
            b[j] -= h;
            (loss(&a, data, 0.0).unwrap() - loss(&b, data, 0.0).unwrap()) / (2.0 * h)
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for task in [Task::Linear, Task::Logistic] {
            for probe in 0..100u64 {
                let data = random_dataset(12, 6, task, probe);
                let mut rng = NoiseSource::new(1000 + probe);
                let w = Array1::from_shape_fn(6, |_| 3.0 * rng.standard_normal());
                let g = gradient(&w, &data).unwrap();
                let fd = finite_difference(&w, &data);
                let dev = (&g - &fd).iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(dev <= 1e-5, "{task} probe {probe}: deviation {dev}");
            }
        }
    }

    #[test]
    fn row_gradients_agree() {
        let data = random_dataset(9, 4, Task::Logistic, 3);
        let w = array![0.3, -1.0, 2.0, 0.1];
        let all: Vec<usize> = (0..9).collect();
        let a = gradient(&w, &data).unwrap();
        let b = gradient_on_rows(&w, &data, &all).unwrap();
        let c = per_example_gradients(&w, &data).unwrap().mean_axis(Axis(0)).unwrap();
        for j in 0..4 {
            assert_abs_diff_eq!(a[j], b[j], epsilon = 1e-14);
            assert_abs_diff_eq!(a[j], c[j], epsilon = 1e-14);
        }
        let sub = gradient_on_rows(&w, &data, &[2, 5]).unwrap();
        let direct = gradient(&w, &data.select_rows(&[2, 5])).unwrap();
        assert_abs_diff_eq!((&sub - &direct).iter().fold(0.0f64, |m, v| m.max(v.abs())), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn coordinate_constant_examples() {
        let d = tiny(array![[1.0, 0.5]], array![1.0], Task::Logistic);
        let c = coordinate_constants(&d, 1.0);
        assert_eq!(c.lipschitz, array![1.0, 0.5]);
        assert_eq!(c.smoothness, array![0.25, 0.0625]);
        let d = tiny(array![[0.0, 1.0], [0.0, -0.5]], array![1.0, 0.0], Task::Linear);
        let c = coordinate_constants(&d, 1.0);
        assert_eq!((c.lipschitz[0], c.smoothness[0]), (0.0, 0.0));
    }

    #[test]
    fn coordinate_constants_dominate_probes() {
        let radius = 1.0;
        for probe in 0..1000u64 {
            let task = if probe % 2 == 0 { Task::Linear } else { Task::Logistic };
            let data = random_dataset(5, 4, task, probe);
            let c = coordinate_constants(&data, radius);
            let mut rng = NoiseSource::new(5000 + probe);
            let mut w = Array1::from_shape_fn(4, |_| rng.standard_normal());
            let l1 = l1_norm(&w);
            w *= radius * rng.uniform_open() / l1;
            let g = gradient(&w, &data).unwrap();
            let pe = per_example_gradients(&w, &data).unwrap();
            let bounds = DataBounds::from_data(&data);
            let gb = bounds.coord_gradient_bound(&w);
            for j in 0..4 {
                assert!(g[j].abs() <= c.lipschitz[j] + 1e-12);
                for i in 0..5 {
                    assert!(pe[[i, j]].abs() <= c.example_lipschitz[j] + 1e-12);
                    assert!(pe[[i, j]].abs() <= gb[j] + 1e-12);
                }
            }
            for i in 0..5 {
                let row = pe.row(i);
                assert!(row.dot(&row).sqrt() <= bounds.lipschitz_l2(&w) + 1e-12);
                assert!(row.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= bounds.grad_linf_bound_l1_ball(radius) + 1e-12);
            }
        }
    }

    #[test]
    fn smoothness_bounds_hold() {
        for probe in 0..200u64 {
            let task = if probe % 2 == 0 { Task::Linear } else { Task::Logistic };
            let data = random_dataset(4, 5, task, probe);
            let b = DataBounds::from_data(&data);
            let mut rng = NoiseSource::new(probe + 77);
            let u = Array1::from_shape_fn(5, |_| rng.standard_normal());
            let v = Array1::from_shape_fn(5, |_| rng.standard_normal());
            let gu = per_example_gradients(&u, &data).unwrap();
            let gv = per_example_gradients(&v, &data).unwrap();
            let diff = &u - &v;
            for i in 0..4 {
                let dg = &gu.row(i) - &gv.row(i);
                let linf = dg.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                assert!(linf <= b.smoothness_l1() * l1_norm(&diff) + 1e-12);
                assert!(dg.dot(&dg).sqrt() <= b.smoothness_l2() * diff.dot(&diff).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn clipping_examples() {
        let g = array![[3.0, 4.0]];
        let s = clip_per_example_gradients(&g, 1.0).unwrap();
        assert_abs_diff_eq!(s[0], 0.6, epsilon = 1e-15);
        assert_abs_diff_eq!(s[1], 0.8, epsilon = 1e-15);
        let g = array![[0.1, 0.2], [0.0, -0.3]];
        assert_eq!(clip_rows(&g, 1.0), g);
        let s = clip_per_example_gradients(&g, 1.0).unwrap();
        assert_abs_diff_eq!(s[1], -0.1, epsilon = 1e-15);
        assert!(clip_per_example_gradients(&g, 0.0).is_err());
    }

    #[test]
    fn truncation_examples() {
        let d = tiny(array![[2.0, -3.0]], array![0.5], Task::Linear);
        let t = truncate_dataset(&d, 1.0).unwrap();
        assert_eq!(t.x(), &array![[1.0, -1.0]]);
        assert_eq!(t.y(), &array![0.5]);
        assert_eq!(truncate_dataset(&t, 1.0).unwrap(), t);
        assert_eq!(truncate_dataset(&d, 5.0).unwrap(), d);
        assert!(truncate_dataset(&d, 0.0).is_err());
    }

    #[test]
    fn catoni_examples() {
        assert_eq!(catoni_robust_gradient(&Array2::zeros((3, 2)), 1.0).unwrap(), Array1::<f64>::zeros(2));
        assert_abs_diff_eq!(catoni_robust_gradient(&array![[1.0]], 1.0).unwrap()[0], 2.5f64.ln(), epsilon = 1e-15);
        let g = array![[0.3, -2.0], [1.5, 0.7], [-0.2, 0.1]];
        let mean = g.mean_axis(Axis(0)).unwrap();
        let r = catoni_robust_gradient(&g, 2e6).unwrap();
        for j in 0..2 {
            assert!(((r[j] - mean[j]) / mean[j]).abs() <= 1e-6);
        }
    }

    #[test]
    fn hard_threshold_examples() {
        assert_eq!(hard_threshold(&array![3.0, -5.0, 1.0], 1), array![0.0, -5.0, 0.0]);
        assert_eq!(hard_threshold(&array![3.0, -5.0, 1.0], 3), array![3.0, -5.0, 1.0]);
        assert_eq!(hard_threshold(&array![2.0, -2.0, 2.0], 2), array![2.0, -2.0, 0.0]);
        assert_eq!(hard_threshold(&array![0.0, 1.0, 0.0], 2), array![0.0, 1.0, 0.0]);
    }

    #[test]
    fn private_top_s_examples() {
        let scores = [0.1, 5.0, 0.3, 4.0, 0.0];
        let mut sel = private_top_s(&scores, 2, 1.0, 1.0, &mut NoiseSource::disabled(0)).unwrap();
        sel.sort();
        assert_eq!(sel, vec![1, 3]);
        let mut all = private_top_s(&scores, 5, 1.0, 1.0, &mut NoiseSource::new(1)).unwrap();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
        assert!(private_top_s(&scores, 6, 1.0, 1.0, &mut NoiseSource::new(1)).is_err());
    }

    #[test]
    fn private_top_s_finds_dominant_entry() {
        let mut scores = vec![0.0; 20];
        scores[7] = 50.0;
        let hits = (0..1000u64)
            .filter(|&seed| private_top_s(&scores, 1, 1.0, 5.0, &mut NoiseSource::new(seed)).unwrap()[0] == 7)
            .count();
        assert!(hits >= 990, "{hits}");
    }

    fn grid_minimize(f: impl Fn(f64) -> f64, lo: f64, hi: f64, steps: usize) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        for i in 0..=steps {
            let v = lo + (hi - lo) * i as f64 / steps as f64;
            let fv = f(v);
            if fv < best.0 {
                best = (fv, v);
            }
        }
        // Refine around the coarse minimum.
        let h = (hi - lo) / steps as f64;
        let (lo2, hi2) = (best.1 - h, best.1 + h);
        for i in 0..=steps {
            let v = lo2 + (hi2 - lo2) * i as f64 / steps as f64;
            let fv = f(v);
            if fv < best.0 {
                best = (fv, v);
            }
        }
        best.1
    }

    #[test]
    fn soft_threshold_examples() {
        assert_abs_diff_eq!(soft_threshold_scalar(1.2, 0.5), 0.7, epsilon = 1e-15);
        let w = array![1.0, -2.0, 0.0];
        assert_eq!(soft_threshold(&w, 0.0), w);
        for &(w, lam) in &[(1.3, 0.4), (-0.2, 0.5), (-2.5, 1.0), (0.05, 0.01)] {
            let v = grid_minimize(|v| 0.5 * (v - w) * (v - w) + lam * v.abs(), -4.0, 4.0, 20_000);
            assert!((soft_threshold_scalar(w, lam) - v).abs() <= 1e-6, "w={w} lam={lam}");
        }
    }

    #[test]
    fn half_threshold_examples() {
        let w = array![0.3, -1.0];
        assert_eq!(half_threshold(&w, 0.0), w);
        let t = half_threshold_cutoff(0.5);
        assert_eq!(half_threshold_scalar(0.99 * t, 0.5), 0.0);
        assert_eq!(half_threshold_scalar(-0.99 * t, 0.5), 0.0);
        assert_eq!(half_threshold(&array![3.0, -2.0], 100.0), array![0.0, 0.0]);
    }

    #[test]
    fn half_threshold_matches_grid_oracle() {
        for lam in [0.01, 0.1, 0.5, 1.0, 2.0] {
            let cutoff = half_threshold_cutoff(lam);
            for i in 0..80 {
                let w = -4.0 + 8.0 * i as f64 / 79.0;
                // At the cutoff both 0 and the nonzero root are minimizers.
                if (w.abs() - cutoff).abs() < 1e-6 {
                    continue;
                }
                let v = grid_minimize(|v| 0.5 * (v - w) * (v - w) + lam * v.abs().sqrt(), -5.0, 5.0, 40_000);
                let got = half_threshold_scalar(w, lam);
                assert!((got - v).abs() <= 1e-4, "lam={lam} w={w}: closed form {got}, grid {v}");
            }
        }
    }

    #[test]
    fn evaluate_examples() {
        let d = tiny(array![[1.0], [2.0]], array![2.0, 4.0], Task::Linear);
        assert_eq!(evaluate(&array![2.0], &d).unwrap(), 0.0);
        let d = tiny(array![[1.0], [3.0]], array![2.0, 2.0], Task::Linear);
        assert_eq!(evaluate(&array![1.0], &d).unwrap(), 1.0);
        let d = tiny(array![[1.0], [-1.0], [0.5]], array![1.0, 0.0, 1.0], Task::Logistic);
        assert_abs_diff_eq!(evaluate(&array![0.0], &d).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
    }

    fn sort_oracle(w: &[f64], s: usize) -> Vec<f64> {
        let mut pairs: Vec<(usize, f64)> = w.iter().cloned().enumerate().collect();
        pairs.sort_by(|a, b| b.1.abs().partial_cmp(&a.1.abs()).unwrap().then(a.0.cmp(&b.0)));
        let mut out = vec![0.0; w.len()];
        for &(i, v) in pairs.iter().take(s) {
            out[i] = v;
        }
        out
    }

    proptest! {
        #[test]
        fn hard_threshold_matches_sort_oracle(w in prop::collection::vec(-3i32..4, 1..25), s in 1usize..30) {
            let w: Vec<f64> = w.into_iter().map(f64::from).collect();
            let got = hard_threshold(&Array1::from(w.clone()), s);
            prop_assert_eq!(got.to_vec(), sort_oracle(&w, s));
            let nz = w.iter().filter(|v| **v != 0.0).count();
            prop_assert_eq!(nnz(&got), s.min(nz));
        }

        #[test]
        fn truncation_bounds(vals in prop::collection::vec(-10.0f64..10.0, 6), k in 0.01f64..5.0) {
            let d = Dataset::new(Array2::from_shape_vec((3, 2), vals).unwrap(), array![-7.0, 0.0, 9.0], Task::Linear).unwrap();
            let t = truncate_dataset(&d, k).unwrap();
            prop_assert!(t.x().iter().chain(t.y().iter()).all(|v| v.abs() <= k));
        }

        #[test]
        fn catoni_is_odd(vals in prop::collection::vec(-100.0f64..100.0, 8), s in 0.01f64..50.0) {
            let g = Array2::from_shape_vec((4, 2), vals).unwrap();
            let a = catoni_robust_gradient(&g, s).unwrap();
            let b = catoni_robust_gradient(&(-&g), s).unwrap();
            prop_assert_eq!(a, -b);
        }

        #[test]
        fn soft_threshold_contracts(u in prop::collection::vec(-5.0f64..5.0, 6), v in prop::collection::vec(-5.0f64..5.0, 6), lam in 0.0f64..3.0) {
            let (u, v) = (Array1::from(u), Array1::from(v));
            let d = &soft_threshold(&u, lam) - &soft_threshold(&v, lam);
            let e = &u - &v;
            prop_assert!(d.dot(&d).sqrt() <= e.dot(&e).sqrt() + 1e-12);
        }

        #[test]
        fn loss_is_convex(seed in any::<u64>(), logistic in any::<bool>()) {
            let task = if logistic { Task::Logistic } else { Task::Linear };
            let data = random_dataset(8, 3, task, seed);
            let mut rng = NoiseSource::new(seed ^ 1);
            let a = Array1::from_shape_fn(3, |_| 5.0 * rng.standard_normal());
            let b = Array1::from_shape_fn(3, |_| 5.0 * rng.standard_normal());
            let mid = (&a + &b) / 2.0;
            let lm = loss(&mid, &data, 0.0).unwrap();
            let avg = (loss(&a, &data, 0.0).unwrap() + loss(&b, &data, 0.0).unwrap()) / 2.0;
            prop_assert!(lm <= avg + 1e-9);
        }
    }
}
