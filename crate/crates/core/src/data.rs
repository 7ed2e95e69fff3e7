//! Dataset ingestion, preprocessing, splitting, PCA and synthetic instances.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};

use crate::error::{ensure_nonnegative, Error, Result};
use crate::linalg::symmetric_eigen;
use crate::model::{Dataset, Task};
use crate::privacy::NoiseSource;

/// Sparse rows as read from a libsvm file. Indices are 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub rows: Vec<Vec<(usize, f64)>>,
    pub labels: Vec<f64>,
    pub source: String,
}

impl RawDataset {
    /// Largest feature index present.
    pub fn dimension(&self) -> usize {
        self.rows.iter().filter_map(|r| r.last().map(|(i, _)| *i)).max().unwrap_or(0)
    }

    /// Dense matrix with `d` columns (at least the file's dimension).
    ///
    /// For the logistic task the smaller of the two distinct labels becomes 0 and
    /// the larger becomes 1.
    pub fn to_dataset(&self, task: Task, d: Option<usize>) -> Result<Dataset> {
        let d = d.unwrap_or(0).max(self.dimension());
        let n = self.rows.len();
        let mut x = Array2::zeros((n, d));
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                x[[i, j - 1]] = v;
            }
        }
        let y = match task {
            Task::Linear => Array1::from(self.labels.clone()),
            Task::Logistic => {
                let mut distinct: Vec<f64> = self.labels.clone();
                distinct.sort_by(f64::total_cmp);
                distinct.dedup();
                if distinct.len() > 2 {
                    return Err(Error::Task(format!("expected binary labels, found {} distinct values", distinct.len())));
                }
                let low = distinct.first().copied().unwrap_or(0.0);
                let one_if_single = distinct.len() == 1 && low > 0.0;
                Array1::from_iter(self.labels.iter().map(|&l| if l > low || one_if_single { 1.0 } else { 0.0 }))
            }
        };
        Dataset::new(x, y, task)
    }
}

fn parse_number(token: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| Error::Parse { line, message: format!("invalid {what} '{token}'") })?;
    if !v.is_finite() {
        return Err(Error::Parse { line, message: format!("non-finite {what} '{token}'") });
    }
    Ok(v)
}

/// Parse libsvm text: one `label idx:val idx:val ...` record per line. Blank lines
/// and `#` comments are skipped.
pub fn parse_libsvm(text: &str) -> Result<RawDataset> {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = lineno + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let mut tokens = content.split_whitespace();
        let label = parse_number(tokens.next().unwrap_or(""), line, "label")?;
        let mut row: Vec<(usize, f64)> = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| Error::Parse { line, message: format!("expected index:value, found '{tok}'") })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse { line, message: format!("invalid feature index '{idx}'") })?;
            if idx == 0 {
                return Err(Error::Parse { line, message: "feature indices start at 1".into() });
            }
            if let Some(&(prev, _)) = row.last() {
                if idx <= prev {
                    return Err(Error::Parse { line, message: format!("feature index {idx} does not increase after {prev}") });
                }
            }
            row.push((idx, parse_number(val, line, "value")?));
        }
        labels.push(label);
        rows.push(row);
    }
    Ok(RawDataset { rows, labels, source: String::new() })
}

/// libsvm text for `raw`. Values use the shortest representation that parses back exactly.
pub fn serialize_libsvm(raw: &RawDataset) -> String {
    let mut out = String::new();
    for (label, row) in raw.labels.iter().zip(&raw.rows) {
        let _ = write!(out, "{label}");
        for (i, v) in row {
            let _ = write!(out, " {i}:{v}");
        }
        out.push('\n');
    }
    out
}

/// Subtract each column's mean.
pub fn demean(data: &Dataset) -> Dataset {
    let (mut x, y, task) = data.clone().into_parts();
    if x.nrows() > 0 {
        let means = x.mean_axis(Axis(0)).expect("nonempty");
        x -= &means;
    }
    Dataset::new(x, y, task).expect("demeaning keeps a valid dataset")
}

/// Divide every row by the largest row L1 norm. Returns the new dataset and the factor.
pub fn rescale_l1_with_factor(data: &Dataset) -> Result<(Dataset, f64)> {
    let m = data.max_row_l1();
    if m == 0.0 {
        return Err(Error::Degenerate("all rows are zero".into()));
    }
    let (mut x, y, task) = data.clone().into_parts();
    x.mapv_inplace(|v| v / m);
    Ok((Dataset::new(x, y, task)?, m))
}

pub fn rescale_l1(data: &Dataset) -> Result<Dataset> {
    rescale_l1_with_factor(data).map(|(d, _)| d)
}

/// Demean, then rescale to max row L1 norm 1.
pub fn preprocess(data: &Dataset) -> Result<Dataset> {
    rescale_l1(&demean(data))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded 60/20/20 split: ⌊0.6n⌋ train, ⌊0.2n⌋ validation, the rest test.
pub fn split(n: usize, seed: u64) -> Result<SplitIndices> {
    if n < 5 {
        return Err(Error::InvalidParameter(format!("need at least 5 rows to split, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    NoiseSource::new(seed).shuffle(&mut perm);
    let n_train = 6 * n / 10;
    let n_val = 2 * n / 10;
    let test = perm.split_off(n_train + n_val);
    let val = perm.split_off(n_train);
    Ok(SplitIndices { train: perm, val, test })
}

/// Project centered data onto its top `target_dim` principal components.
///
/// Components come from a symmetric eigendecomposition of whichever of XᵀX
/// and XXᵀ is smaller.
pub fn pca_reduce(data: &Dataset, target_dim: usize) -> Result<Dataset> {
    let (n, d) = (data.n(), data.d());
    if target_dim == 0 || target_dim > n.min(d) {
        return Err(Error::InvalidParameter(format!("target_dim must lie in 1..={}, got {target_dim}", n.min(d))));
    }
    let q = principal_components(data.x(), target_dim);
    let centered = demean(data);
    let x = centered.x().dot(&q);
    Dataset::new(x, data.y().clone(), data.task())
}

/// d × k matrix whose columns are the top-k principal directions of `x`.
pub(crate) fn principal_components(x: &Array2<f64>, k: usize) -> Array2<f64> {
    let (n, d) = x.dim();
    let means = x.mean_axis(Axis(0)).expect("nonempty");
    let xc = x - &means;
    if d <= n {
        let (_, vecs) = symmetric_eigen(&xc.t().dot(&xc));
        return vecs.slice(ndarray::s![.., ..k]).to_owned();
    }
    // Thin case: right singular vectors from the Gram matrix, v = Xᵀu / ‖Xᵀu‖.
    let (_, u) = symmetric_eigen(&xc.dot(&xc.t()));
    let mut q = Array2::zeros((d, k));
    let mut filled = 0;
    for c in 0..n {
        if filled == k {
            break;
        }
        let mut v = xc.t().dot(&u.column(c));
        for p in 0..filled {
            let proj = q.column(p).dot(&v);
            v.scaled_add(-proj, &q.column(p));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-10 {
            q.column_mut(filled).assign(&(v / norm));
            filled += 1;
        }
    }
    // Rank-deficient data: complete the basis with Gram-Schmidt on unit vectors.
    let mut e = 0;
    while filled < k && e < d {
        let mut v = Array1::zeros(d);
        v[e] = 1.0;
        for p in 0..filled {
            let proj = q.column(p).dot(&v);
            v.scaled_add(-proj, &q.column(p));
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            q.column_mut(filled).assign(&(v / norm));
            filled += 1;
        }
        e += 1;
    }
    q
}

/// A planted sparse instance and its generating weights.
#[derive(Debug, Clone)]
pub struct SyntheticInstance {
    pub data: Dataset,
    /// Generating weights in the preprocessed feature space.
    pub true_weights: Array1<f64>,
}

/// Planted sparse instance. Features are standard normal, then demeaned and
/// rescaled to max row L1 norm 1. `s_true` weights are ±1 at seeded positions.
/// Linear targets are `⟨x, w*⟩ + N(0, noise_sd²)` on the preprocessed rows.
/// Logistic labels are Bernoulli(sigmoid(⟨x_raw, w*⟩)) on the demeaned,
/// unscaled rows, so the generating weights in the preprocessed space are
/// `w*` times the rescale factor.
pub fn synthetic_sparse(n: usize, d: usize, s_true: usize, noise_sd: f64, task: Task, seed: u64) -> Result<SyntheticInstance> {
    if s_true > d {
        return Err(Error::InvalidParameter(format!("s_true {s_true} exceeds d {d}")));
    }
    if n == 0 || d == 0 {
        return Err(Error::InvalidParameter("n and d must be positive".into()));
    }
    ensure_nonnegative("noise_sd", noise_sd)?;
    let mut rng = NoiseSource::new(seed);
    let mut positions: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut positions);
    let mut w = Array1::zeros(d);
    for &j in &positions[..s_true] {
        w[j] = rng.rademacher();
    }
    let raw = Array2::from_shape_fn((n, d), |_| rng.standard_normal());
    let placeholder = Dataset::new(raw, Array1::zeros(n), Task::Linear)?;
    let (pre, factor) = rescale_l1_with_factor(&demean(&placeholder))?;
    let (x, _, _) = pre.into_parts();
    let (y, true_weights) = match task {
        Task::Linear => {
            let clean = x.dot(&w);
            (clean.mapv(|v| v + noise_sd * rng.standard_normal()), w)
        }
        Task::Logistic => {
            let scaled = &w * factor;
            let logits = x.dot(&scaled);
            let y = logits.mapv(|z| if rng.uniform_open() < crate::model::sigmoid(z) { 1.0 } else { 0.0 });
            (y, scaled)
        }
    };
    Ok(SyntheticInstance { data: Dataset::new(x, y, task)?, true_weights })
}

/// Parameters of a `synthetic:` pseudo-path.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub sd: f64,
    pub task: Task,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Parse `synthetic:n=..,d=..,s=..,sd=..,task=..[,seed=..]`.
    pub fn parse(path: &str) -> Result<Self> {
        let body = path
            .strip_prefix("synthetic:")
            .ok_or_else(|| Error::InvalidParameter(format!("not a synthetic path: {path}")))?;
        let (mut n, mut d, mut s, mut sd, mut task, mut seed) = (None, None, None, None, None, 0u64);
        let bad = |k: &str, v: &str| Error::InvalidParameter(format!("bad value for {k}: '{v}'"));
        for part in body.split(',').filter(|p| !p.trim().is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidParameter(format!("expected key=value, found '{part}'")))?;
            let (k, v) = (k.trim(), v.trim());
            match k {
                "n" => n = Some(v.parse().map_err(|_| bad(k, v))?),
                "d" => d = Some(v.parse().map_err(|_| bad(k, v))?),
                "s" => s = Some(v.parse().map_err(|_| bad(k, v))?),
                "sd" => sd = Some(v.parse().map_err(|_| bad(k, v))?),
                "seed" => seed = v.parse().map_err(|_| bad(k, v))?,
                "task" => {
                    task = Some(match v {
                        "linear" => Task::Linear,
                        "logistic" => Task::Logistic,
                        _ => return Err(bad(k, v)),
                    })
                }
                _ => return Err(Error::InvalidParameter(format!("unknown synthetic key '{k}'"))),
            }
        }
        let missing = |k: &str| Error::InvalidParameter(format!("synthetic path is missing '{k}'"));
        Ok(Self {
            n: n.ok_or_else(|| missing("n"))?,
            d: d.ok_or_else(|| missing("d"))?,
            s: s.ok_or_else(|| missing("s"))?,
            sd: sd.ok_or_else(|| missing("sd"))?,
            task: task.ok_or_else(|| missing("task"))?,
            seed,
        })
    }

    pub fn generate(&self) -> Result<SyntheticInstance> {
        synthetic_sparse(self.n, self.d, self.s, self.sd, self.task, self.seed)
    }
}

/// The six benchmark datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NamedDataset {
    Bodyfat,
    Pah,
    E2006,
    Heart,
    Dbworld,
    Rcv1,
}

impl NamedDataset {
    pub const ALL: [NamedDataset; 6] =
        [Self::Bodyfat, Self::Pah, Self::E2006, Self::Heart, Self::Dbworld, Self::Rcv1];

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name.to_ascii_lowercase().as_str() {
            "bodyfat" => Self::Bodyfat,
            "pah" => Self::Pah,
            "e2006" => Self::E2006,
            "heart" => Self::Heart,
            "dbworld" => Self::Dbworld,
            "rcv1" => Self::Rcv1,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Bodyfat => "bodyfat",
            Self::Pah => "pah",
            Self::E2006 => "e2006",
            Self::Heart => "heart",
            Self::Dbworld => "dbworld",
            Self::Rcv1 => "rcv1",
        }
    }

    pub fn task(self) -> Task {
        match self {
            Self::Bodyfat | Self::Pah | Self::E2006 => Task::Linear,
            Self::Heart | Self::Dbworld | Self::Rcv1 => Task::Logistic,
        }
    }

    /// File names tried, in order, inside the data directory.
    pub fn file_candidates(self) -> Vec<String> {
        let extra: &[&str] = match self {
            Self::Bodyfat => &["bodyfat_scale"],
            Self::Heart => &["heart_scale"],
            Self::E2006 => &["E2006.train", "E2006.test"],
            Self::Rcv1 => &["rcv1_train.binary"],
            Self::Pah | Self::Dbworld => &[],
        };
        let base = self.name();
        let mut names = vec![base.to_string(), format!("{base}.txt"), format!("{base}.libsvm"), format!("{base}.svm")];
        names.extend(extra.iter().map(|s| s.to_string()));
        names
    }

    /// Whether the benchmark subsamples 500 rows and reduces to 500 dimensions.
    pub fn is_reduced(self) -> bool {
        matches!(self, Self::E2006 | Self::Rcv1)
    }

    pub fn locate(self, dir: &Path) -> Option<PathBuf> {
        self.file_candidates().into_iter().map(|f| dir.join(f)).find(|p| p.is_file())
    }
}

/// Load a named dataset from `dir` and run the full preprocessing pipeline.
pub fn load_named(name: NamedDataset, dir: &Path) -> Result<Dataset> {
    let path = name.locate(dir).ok_or_else(|| {
        Error::Io(format!("dataset '{}' not found in {} (tried {:?})", name.name(), dir.display(), name.file_candidates()))
    })?;
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut raw = parse_libsvm(&text)?;
    raw.source = path.display().to_string();
    let mut data = raw.to_dataset(name.task(), None)?;
    if name.is_reduced() {
        let mut order: Vec<usize> = (0..data.n()).collect();
        NoiseSource::new(0).shuffle(&mut order);
        order.truncate(500);
        data = data.select_rows(&order);
        let dim = 500.min(data.n()).min(data.d());
        data = pca_reduce(&data, dim)?;
    }
    preprocess(&data)
}

/// Load a dataset by name or `synthetic:` pseudo-path.
pub fn load_dataset(id: &str, dir: &Path) -> Result<Dataset> {
    if id.starts_with("synthetic:") {
        return Ok(SyntheticSpec::parse(id)?.generate()?.data);
    }
    let name = NamedDataset::from_name(id).ok_or_else(|| Error::InvalidParameter(format!("unknown dataset '{id}'")))?;
    load_named(name, dir)
}
