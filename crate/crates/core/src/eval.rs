//! Classification-based evaluation of embeddings: 1-NN error over repeated
//! stratified splits, selection of `ε` on inner splits of the training set,
//! class-mass summaries of couplings and synthetic cluster data.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{config_err, dim_err, Error, Result};
use crate::rng::{self, Purpose};
use crate::solver::{fit, Algorithm};
use crate::subspace::pca;
use crate::types::{DataMatrix, SolverConfig, StiefelBasis, TransportPlan};

/// Samples with integer class labels. Splitting additionally requires every
/// class to have at least two members.
#[derive(Clone, Debug)]
pub struct LabeledDataset {
    pub data: DataMatrix,
    pub labels: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(data: DataMatrix, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != data.n_samples() {
            return Err(dim_err!("{} labels for {} samples", labels.len(), data.n_samples()));
        }
        Ok(Self { data, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        class_counts(&self.labels).len()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let data = self.data.select_samples(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(data, labels)
    }
}

fn class_counts(labels: &[usize]) -> BTreeMap<usize, usize> {
    let mut counts = BTreeMap::new();
    for &l in labels {
        *counts.entry(l).or_insert(0) += 1;
    }
    counts
}

/// Repeated stratified holdout.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub n_repeats: usize,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, n_repeats: usize, seed: u64) -> Self {
        Self { train_fraction, n_repeats, seed }
    }

    fn check(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(config_err!("train fraction must be in (0, 1), got {}", self.train_fraction));
        }
        if self.n_repeats == 0 {
            return Err(config_err!("need at least one split"));
        }
        Ok(())
    }
}

/// Sorted train and test indices of one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Split number `repeat` of `spec`. Each class contributes
/// `round(train_fraction · n_c)` samples to the train side, clamped so that
/// both sides keep at least one.
pub fn stratified_split(labels: &[usize], spec: &SplitSpec, repeat: usize) -> Result<Split> {
    spec.check()?;
    if labels.is_empty() {
        return Err(Error::EmptySet("no samples to split".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = rng::stream(spec.seed, Purpose::Split, repeat as u64);
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (class, mut members) in by_class {
        let n_c = members.len();
        if n_c < 2 {
            return Err(config_err!("class {class} has {n_c} sample(s); stratified splits need at least 2"));
        }
        let n_train = libm::round(spec.train_fraction * n_c as f64).clamp(1.0, (n_c - 1) as f64) as usize;
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..n_train]);
        test.extend_from_slice(&members[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

pub fn stratified_splits(labels: &[usize], spec: &SplitSpec) -> Result<Vec<Split>> {
    spec.check()?;
    (0..spec.n_repeats).map(|r| stratified_split(labels, spec, r)).collect()
}

/// Fraction of test samples whose nearest training sample (Euclidean, lowest
/// index on ties) carries a different label.
pub fn one_nn_error(train: &LabeledDataset, test: &LabeledDataset) -> Result<f64> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::EmptySet("1-NN needs non-empty train and test sets".into()));
    }
    if train.data.dim() != test.data.dim() {
        return Err(dim_err!("train has d = {}, test has d = {}", train.data.dim(), test.data.dim()));
    }
    Ok(nn_error(&train.data, &train.labels, &test.data, &test.labels))
}

fn nn_error(train: &DataMatrix, train_labels: &[usize], test: &DataMatrix, test_labels: &[usize]) -> f64 {
    let mut wrong = 0usize;
    for (t, &label) in test_labels.iter().enumerate() {
        let query = test.sample(t);
        let mut best = f64::INFINITY;
        let mut best_label = usize::MAX;
        for (j, &train_label) in train_labels.iter().enumerate() {
            let dist: f64 = query.iter().zip(train.sample(j)).map(|(a, b)| (a - b) * (a - b)).sum();
            if dist < best {
                best = dist;
                best_label = train_label;
            }
        }
        if best_label != label {
            wrong += 1;
        }
    }
    wrong as f64 / test_labels.len() as f64
}

/// A way of producing a basis from training data.
#[derive(Clone, Debug)]
pub enum Method {
    Pca { k: usize, center: bool },
    Ewca { config: SolverConfig, algorithm: Algorithm },
}

impl Method {
    pub fn fit(&self, data: &DataMatrix) -> Result<StiefelBasis> {
        match self {
            Method::Pca { k, center } => pca(data, *k, *center).map(|(u, _)| u),
            Method::Ewca { config, algorithm } => fit(data, config, *algorithm).map(|r| r.basis),
        }
    }
}

/// What the 1-NN classifier sees.
#[derive(Clone, Debug)]
pub enum Embedding {
    /// Raw features, no projection.
    Raw,
    /// Coordinates `Uᵀx` in a fixed basis.
    Fixed(StiefelBasis),
    /// A basis fitted by `method`, either on the train half of every split
    /// or once on the whole dataset.
    Fitted { method: Method, refit_per_split: bool },
}

impl Embedding {
    pub fn refit(method: Method) -> Self {
        Embedding::Fitted { method, refit_per_split: true }
    }
}

/// Per-split 1-NN errors and their summary.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub per_split_error: Vec<f64>,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
}

impl EvalReport {
    /// Quartiles use linear interpolation between order statistics.
    pub fn from_errors(per_split_error: Vec<f64>) -> Result<Self> {
        if per_split_error.is_empty() {
            return Err(Error::EmptySet("no split errors to summarize".into()));
        }
        let mut sorted = per_split_error.clone();
        sorted.sort_unstable_by(f64::total_cmp);
        let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
        Ok(Self {
            mean,
            q1: quantile(&sorted, 0.25),
            median: quantile(&sorted, 0.5),
            q3: quantile(&sorted, 0.75),
            per_split_error,
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = libm::floor(pos) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Replaces a fit-once embedding by the fixed basis it produces.
pub fn resolve_embedding(dataset: &LabeledDataset, embedding: &Embedding) -> Result<Embedding> {
    match embedding {
        Embedding::Fitted { method, refit_per_split: false } => Ok(Embedding::Fixed(method.fit(&dataset.data)?)),
        other => Ok(other.clone()),
    }
}

/// 1-NN error of one split.
pub fn split_error(dataset: &LabeledDataset, embedding: &Embedding, split: &Split) -> Result<f64> {
    let train = dataset.subset(&split.train)?;
    let test = dataset.subset(&split.test)?;
    let basis = match embedding {
        Embedding::Raw => return one_nn_error(&train, &test),
        Embedding::Fixed(u) => u.clone(),
        Embedding::Fitted { method, .. } => method.fit(&train.data)?,
    };
    let project = |set: &LabeledDataset| -> Result<LabeledDataset> {
        let coords = DataMatrix::new(basis.coordinates(&set.data)?)?;
        Ok(LabeledDataset { data: coords, labels: set.labels.clone() })
    };
    one_nn_error(&project(&train)?, &project(&test)?)
}

/// 1-NN error of `embedding` over the splits of `spec`.
pub fn evaluate_embedding(dataset: &LabeledDataset, embedding: &Embedding, spec: &SplitSpec) -> Result<EvalReport> {
    let embedding = resolve_embedding(dataset, embedding)?;
    let errors = stratified_splits(&dataset.labels, spec)?
        .iter()
        .map(|split| split_error(dataset, &embedding, split))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_errors(errors)
}

/// Mean inner-split 1-NN error of EWCA for each candidate `ε`.
pub fn epsilon_scores(
    train: &LabeledDataset,
    candidates: &[f64],
    k: usize,
    inner_spec: &SplitSpec,
    base: &SolverConfig,
    algorithm: Algorithm,
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(config_err!("no epsilon candidates"));
    }
    if let Some(bad) = candidates.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(config_err!("epsilon candidates must be positive, got {bad}"));
    }
    candidates
        .iter()
        .map(|&epsilon| {
            let config = SolverConfig { epsilon, k, ..base.clone() };
            let embedding = Embedding::refit(Method::Ewca { config, algorithm });
            evaluate_embedding(train, &embedding, inner_spec).map(|r| r.mean)
        })
        .collect()
}

/// Candidate with the lowest mean inner-split error; ties go to the smaller
/// `ε`, then to the earlier candidate.
pub fn select_epsilon(
    train: &LabeledDataset,
    candidates: &[f64],
    k: usize,
    inner_spec: &SplitSpec,
    base: &SolverConfig,
    algorithm: Algorithm,
) -> Result<f64> {
    let scores = epsilon_scores(train, candidates, k, inner_spec, base, algorithm)?;
    Ok(best_candidate(candidates, &scores))
}

/// The rule of [`select_epsilon`] applied to precomputed `scores`.
pub fn best_candidate(candidates: &[f64], scores: &[f64]) -> f64 {
    let mut best = 0;
    for i in 1..candidates.len() {
        if scores[i] < scores[best] || (scores[i] == scores[best] && candidates[i] < candidates[best]) {
            best = i;
        }
    }
    candidates[best]
}

/// Mean of `‖x_i − x_j‖²` over pairs `i ≠ j`.
pub fn mean_pairwise_cost(data: &DataMatrix) -> f64 {
    let n = data.n_samples();
    if n < 2 {
        return 0.0;
    }
    let norms: f64 = (0..n).map(|j| data.sample(j).iter().map(|v| v * v).sum::<f64>()).sum();
    let total: Vec<f64> = data.row_means().iter().map(|m| m * n as f64).collect();
    let total_sq: f64 = total.iter().map(|v| v * v).sum();
    (2.0 * n as f64 * norms - 2.0 * total_sq).max(0.0) / (n * (n - 1)) as f64
}

/// `count` log-spaced values spanning `[1e-3, 1e2]` times the mean pairwise cost.
pub fn default_epsilon_grid(data: &DataMatrix, count: usize) -> Vec<f64> {
    let scale = mean_pairwise_cost(data);
    let (lo, hi) = (-3.0, 2.0);
    (0..count)
        .map(|i| {
            let t = if count == 1 { 0.0 } else { i as f64 / (count - 1) as f64 };
            scale * libm::pow(10.0, lo + t * (hi - lo))
        })
        .collect()
}

/// Coupling mass between samples of the same class, and its complement.
pub fn plan_class_mass(plan: &TransportPlan, labels: &[usize]) -> Result<(f64, f64)> {
    if labels.len() != plan.nrows() || labels.len() != plan.ncols() {
        return Err(dim_err!("{} labels for a {}x{} plan", labels.len(), plan.nrows(), plan.ncols()));
    }
    let p = plan.values();
    let mut within = 0.0;
    for (j, lj) in labels.iter().enumerate() {
        for (i, li) in labels.iter().enumerate() {
            if li == lj {
                within += p[(i, j)];
            }
        }
    }
    Ok((within, 1.0 - within))
}

/// Isotropic unit-variance Gaussian blobs, `n_per_class` samples each, with
/// centers at mutual distance `separation` (`(separation/√2) e_c` when
/// `n_classes <= d`, otherwise spaced along the first axis). Samples are
/// ordered by class.
pub fn make_synthetic_clusters(
    n_per_class: usize,
    d: usize,
    n_classes: usize,
    separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if n_per_class < 2 || d == 0 || n_classes == 0 {
        return Err(config_err!(
            "need n_per_class >= 2, d >= 1 and n_classes >= 1 (got {n_per_class}, {d}, {n_classes})"
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(config_err!("separation must be finite and >= 0, got {separation}"));
    }
    let center = |class: usize, axis: usize| -> f64 {
        if n_classes <= d {
            if axis == class { separation * core::f64::consts::FRAC_1_SQRT_2 } else { 0.0 }
        } else if axis == 0 {
            separation * class as f64
        } else {
            0.0
        }
    };
    let n = n_per_class * n_classes;
    let mut rng = rng::stream(seed, Purpose::Synthetic, 0);
    let mut values = faer::Mat::zeros(d, n);
    let mut labels = Vec::with_capacity(n);
    for j in 0..n {
        let class = j / n_per_class;
        labels.push(class);
        for i in 0..d {
            values[(i, j)] = center(class, i) + rng::standard_normal(&mut rng);
        }
    }
    LabeledDataset::new(DataMatrix::new(values)?, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn labeled(rows: &[&[f64]], labels: &[usize]) -> LabeledDataset {
        LabeledDataset::new(DataMatrix::from_samples(rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn one_nn_examples() {
        let train = labeled(&[&[0.0, 0.0], &[10.0, 10.0]], &[0, 1]);
        assert_eq!(one_nn_error(&train, &labeled(&[&[1.0, 1.0]], &[0])).unwrap(), 0.0);
        assert_eq!(one_nn_error(&train, &labeled(&[&[1.0, 1.0]], &[1])).unwrap(), 1.0);
        assert_eq!(one_nn_error(&train, &labeled(&[&[10.0, 10.0]], &[1])).unwrap(), 0.0);
        assert_eq!(one_nn_error(&train, &train).unwrap(), 0.0);
        // Equidistant: the lower train index wins.
        assert_eq!(one_nn_error(&train, &labeled(&[&[5.0, 5.0]], &[0])).unwrap(), 0.0);
        let empty = LabeledDataset { data: train.data.clone(), labels: vec![] };
        assert!(matches!(one_nn_error(&empty, &train), Err(Error::EmptySet(_))));
        assert!(matches!(one_nn_error(&train, &labeled(&[&[1.0]], &[0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn splits_are_deterministic_and_stratified() {
        let labels: Vec<usize> = (0..37).map(|i| if i < 7 { 0 } else if i < 20 { 1 } else { 2 }).collect();
        let spec = SplitSpec::new(0.5, 20, 42);
        let a = stratified_splits(&labels, &spec).unwrap();
        assert_eq!(a, stratified_splits(&labels, &spec).unwrap());
        assert_ne!(a[0], a[1]);
        assert_ne!(a[0], stratified_split(&labels, &SplitSpec::new(0.5, 1, 43), 0).unwrap());
        for split in &a {
            let mut all: Vec<usize> = split.train.iter().chain(&split.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..37).collect::<Vec<_>>());
            for (class, n_c) in [(0, 7.0), (1, 13.0), (2, 17.0)] {
                let in_train = split.train.iter().filter(|&&i| labels[i] == class).count() as f64;
                assert!((in_train - 0.5 * n_c).abs() <= 1.0);
            }
        }
    }

    #[test]
    fn split_rejects_bad_specs() {
        let labels = [0, 0, 1];
        assert!(matches!(stratified_split(&labels, &SplitSpec::new(0.5, 1, 0), 0), Err(Error::Config(_))));
        assert!(stratified_split(&[0, 0], &SplitSpec::new(1.0, 1, 0), 0).is_err());
        assert!(stratified_splits(&[0, 0], &SplitSpec::new(0.5, 0, 0)).is_err());
    }

    #[test]
    fn quartiles_interpolate() {
        let r = EvalReport::from_errors(vec![0.4, 0.1, 0.3, 0.2]).unwrap();
        assert!((r.mean - 0.25).abs() < 1e-15);
        assert!((r.q1 - 0.175).abs() < 1e-15);
        assert!((r.median - 0.25).abs() < 1e-15);
        assert!((r.q3 - 0.325).abs() < 1e-15);
        let single = EvalReport::from_errors(vec![0.5]).unwrap();
        assert_eq!((single.q1, single.median, single.q3), (0.5, 0.5, 0.5));
        assert!(EvalReport::from_errors(vec![]).is_err());
    }

    #[test]
    fn epsilon_tie_rules() {
        assert_eq!(best_candidate(&[3.0], &[0.2]), 3.0);
        assert_eq!(best_candidate(&[2.0, 1.0, 0.5], &[0.1, 0.1, 0.3]), 1.0);
        assert_eq!(best_candidate(&[1.0, 1.0], &[0.1, 0.1]), 1.0);
        assert_eq!(best_candidate(&[5.0, 1.0], &[0.05, 0.1]), 5.0);
    }

    #[test]
    fn select_epsilon_single_candidate() {
        let set = make_synthetic_clusters(6, 3, 2, 4.0, 1).unwrap();
        let base = SolverConfig::new(1, 1.0);
        let chosen = select_epsilon(&set, &[0.7], 1, &SplitSpec::new(0.5, 2, 3), &base, Algorithm::Bcd).unwrap();
        assert_eq!(chosen, 0.7);
        assert!(select_epsilon(&set, &[], 1, &SplitSpec::new(0.5, 2, 3), &base, Algorithm::Bcd).is_err());
        assert!(select_epsilon(&set, &[-1.0], 1, &SplitSpec::new(0.5, 2, 3), &base, Algorithm::Bcd).is_err());
    }

    #[test]
    fn class_mass_examples() {
        let labels = [0, 0, 1, 1];
        let (w, b) = plan_class_mass(&TransportPlan::diagonal(4), &labels).unwrap();
        assert_eq!((w, b), (1.0, 0.0));
        let u = crate::Histogram::uniform(4);
        let (w, b) = plan_class_mass(&TransportPlan::product(&u, &u), &labels).unwrap();
        assert!((w - 0.5).abs() < 1e-15 && (b - 0.5).abs() < 1e-15);
        assert!(plan_class_mass(&TransportPlan::diagonal(4), &labels[..3]).is_err());
    }

    #[test]
    fn mean_pairwise_cost_matches_direct_sum() {
        let x = DataMatrix::from_fn(3, 5, |i, j| libm::sin((i * 5 + j) as f64) * 2.0).unwrap();
        let mut direct = 0.0;
        for i in 0..5 {
            for j in 0..5 {
                if i != j {
                    direct += x.sample(i).iter().zip(x.sample(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                }
            }
        }
        assert!((mean_pairwise_cost(&x) - direct / 20.0).abs() < 1e-12);
        let grid = default_epsilon_grid(&x, 8);
        assert_eq!(grid.len(), 8);
        assert!((grid[0] / mean_pairwise_cost(&x) - 1e-3).abs() < 1e-15);
        assert!((grid[7] / mean_pairwise_cost(&x) - 1e2).abs() < 1e-10);
        assert!(grid.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn synthetic_clusters() {
        let a = make_synthetic_clusters(5, 4, 3, 6.0, 9).unwrap();
        let b = make_synthetic_clusters(5, 4, 3, 6.0, 9).unwrap();
        assert_eq!(a.data.as_mat(), b.data.as_mat());
        assert_eq!(a.labels, vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert_ne!(make_synthetic_clusters(5, 4, 3, 6.0, 10).unwrap().data.as_mat(), a.data.as_mat());
        assert!(make_synthetic_clusters(1, 4, 3, 6.0, 9).is_err());
        assert!(make_synthetic_clusters(5, 4, 3, -1.0, 9).is_err());
    }

    #[test]
    fn synthetic_error_levels() {
        let spec = SplitSpec::new(0.5, 30, 5);
        let far = make_synthetic_clusters(20, 5, 3, 30.0, 1).unwrap();
        assert_eq!(evaluate_embedding(&far, &Embedding::Raw, &spec).unwrap().mean, 0.0);
        // Shared center: chance level 1 − 1/3.
        let chance = make_synthetic_clusters(100, 5, 3, 0.0, 2).unwrap();
        let mean = evaluate_embedding(&chance, &Embedding::Raw, &spec).unwrap().mean;
        assert!((mean - 2.0 / 3.0).abs() < 0.05, "{mean}");
    }

    #[test]
    fn shuffled_labels_are_at_chance() {
        let mut set = make_synthetic_clusters(200, 3, 2, 10.0, 3).unwrap();
        let mut r = rng::stream(4, Purpose::Synthetic, 1);
        set.labels.shuffle(&mut r);
        let mean = evaluate_embedding(&set, &Embedding::Raw, &SplitSpec::new(0.5, 20, 6)).unwrap().mean;
        assert!((mean - 0.5).abs() < 0.05, "{mean}");
    }

    #[test]
    fn projection_keeping_the_discriminative_axis_matches_raw() {
        // Classes differ only along e1; e2 and e3 carry zero variance, so
        // dropping e3 leaves all distances unchanged.
        let mut set = make_synthetic_clusters(15, 3, 2, 8.0, 7).unwrap();
        let mut values = set.data.as_mat().to_owned();
        for j in 0..set.len() {
            values[(1, j)] = 0.0;
            values[(2, j)] = 0.0;
        }
        set.data = DataMatrix::new(values).unwrap();
        let spec = SplitSpec::new(0.5, 10, 8);
        let raw = evaluate_embedding(&set, &Embedding::Raw, &spec).unwrap();
        let fixed = evaluate_embedding(&set, &Embedding::Fixed(StiefelBasis::canonical(3, 2).unwrap()), &spec).unwrap();
        assert_eq!(raw.per_split_error, fixed.per_split_error);
    }

    #[test]
    fn clusters_inside_the_basis_are_perfectly_classified() {
        let set = make_synthetic_clusters(10, 4, 2, 40.0, 11).unwrap();
        let basis = StiefelBasis::canonical(4, 2).unwrap();
        let r = evaluate_embedding(&set, &Embedding::Fixed(basis), &SplitSpec::new(0.5, 10, 1)).unwrap();
        assert_eq!(r.mean, 0.0);
        let pca_refit = Embedding::refit(Method::Pca { k: 1, center: true });
        assert_eq!(evaluate_embedding(&set, &pca_refit, &SplitSpec::new(0.5, 5, 1)).unwrap().mean, 0.0);
    }
}
