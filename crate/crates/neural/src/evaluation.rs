use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use gma_core::features::LabeledSample;

use crate::spec::NetworkSpec;
use crate::train::{accuracy, train, TrainConfig, TrainObserver, TrainOutcome};
use crate::NeuralError;

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_REPEATS: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub n: usize,
    pub k: usize,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    pub fn test(&self, fold: usize) -> &[usize] {
        &self.folds[fold]
    }

    /// Every index outside `fold`, in fold order.
    pub fn train(&self, fold: usize) -> Vec<usize> {
        self.folds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != fold)
            .flat_map(|(_, f)| f.iter().copied())
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.folds.iter().map(Vec::len).collect()
    }
}

/// Seeded shuffle of `0..n` cut into `k` contiguous slices; the first `n % k`
/// folds hold one extra index.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<FoldPlan, NeuralError> {
    if k < 2 {
        return Err(NeuralError::InvalidConfig(format!("fold count {k} must be >= 2")));
    }
    if n < k {
        return Err(NeuralError::TooFewSamples { n, needed: k });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        folds.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(FoldPlan { n, k, folds })
}

/// Index of the highest validation accuracy, lowest index on ties.
pub fn select_best(val_accs: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &a) in val_accs.iter().enumerate() {
        if best.is_none_or(|b| a > val_accs[b]) {
            best = Some(i);
        }
    }
    best
}

/// Runs `run(seed)` for seeds `base_seed + 1 ..= base_seed + m` and keeps the
/// outcome with the best validation accuracy.
pub fn best_of_repeats<F>(m: usize, base_seed: u64, run: F) -> Result<(usize, TrainOutcome), NeuralError>
where
    F: FnMut(u64) -> Result<TrainOutcome, NeuralError>,
{
    if m == 0 {
        return Err(NeuralError::InvalidConfig("repeat count must be >= 1".into()));
    }
    let outcomes = (1..=m as u64)
        .map(|r| base_seed + r)
        .map(run)
        .collect::<Result<Vec<_>, _>>()?;
    Ok(pick(outcomes))
}

fn pick(mut outcomes: Vec<TrainOutcome>) -> (usize, TrainOutcome) {
    let accs: Vec<f64> = outcomes.iter().map(|o| o.best_val_acc).collect();
    let i = select_best(&accs).expect("at least one outcome");
    (i, outcomes.swap_remove(i))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CvConfig {
    pub train: TrainConfig,
    pub folds: usize,
    pub repeats: usize,
    pub seed: u64,
    /// Run the training repeats of all folds on the rayon pool.
    pub parallel: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            train: TrainConfig::default(),
            folds: DEFAULT_FOLDS,
            repeats: DEFAULT_REPEATS,
            seed: 0,
            parallel: false,
        }
    }
}

impl CvConfig {
    /// Base seed of the repeats in `fold`.
    pub fn fold_seed(&self, fold: usize) -> u64 {
        self.seed.wrapping_add(1000 * (fold as u64 + 1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    /// Test accuracy of each fold in percent.
    pub fold_accuracies: Vec<f64>,
    pub mean: f64,
    /// Half-width of the 95% Student-t interval of the mean.
    pub ci95: f64,
}

impl CvResult {
    pub fn from_accuracies(fold_accuracies: Vec<f64>) -> Self {
        let (mean, ci95) = mean_ci(&fold_accuracies, 0.95);
        CvResult {
            fold_accuracies,
            mean,
            ci95,
        }
    }
}

impl fmt::Display for CvResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4} \u{b1}{:.4}", self.mean, self.ci95)
    }
}

/// Mean and `level` confidence half-width with `n - 1` degrees of freedom.
pub fn mean_ci(xs: &[f64], level: f64) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var == 0.0 {
        return (mean, 0.0);
    }
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .expect("positive dof")
        .inverse_cdf(0.5 + level / 2.0);
    (mean, t * (var / n as f64).sqrt())
}

/// Instrumentation for one cross-validation run. Calls may arrive from several
/// threads when the run is parallel.
pub trait CvObserver: Sync {
    fn batch(&self, _fold: usize, _indices: &[usize]) {}
    fn validation(&self, _fold: usize, _indices: &[usize]) {}
    fn test(&self, _fold: usize, _indices: &[usize]) {}
}

impl CvObserver for () {}

struct FoldObserver<'a> {
    fold: usize,
    inner: &'a dyn CvObserver,
}

impl TrainObserver for FoldObserver<'_> {
    fn batch(&mut self, indices: &[usize]) {
        self.inner.batch(self.fold, indices);
    }

    fn validation(&mut self, indices: &[usize]) {
        self.inner.validation(self.fold, indices);
    }
}

/// Cross-validated test accuracy: per fold, best of `repeats` trainings on the
/// other folds, scored on the held-out fold.
pub fn run_cv(
    samples: &[LabeledSample],
    spec: &NetworkSpec,
    config: &CvConfig,
    observer: &dyn CvObserver,
) -> Result<CvResult, NeuralError> {
    if config.repeats == 0 {
        return Err(NeuralError::InvalidConfig("repeat count must be >= 1".into()));
    }
    let plan = kfold_split(samples.len(), config.folds, config.seed)?;
    let train_sets: Vec<Vec<usize>> = (0..plan.k).map(|f| plan.train(f)).collect();

    let job = |(fold, repeat): (usize, usize)| {
        let cfg = TrainConfig {
            seed: config.fold_seed(fold) + repeat as u64 + 1,
            ..config.train.clone()
        };
        let mut obs = FoldObserver { fold, inner: observer };
        train(samples, &train_sets[fold], spec, &cfg, &mut obs)
    };
    let jobs: Vec<(usize, usize)> = (0..plan.k)
        .flat_map(|f| (0..config.repeats).map(move |r| (f, r)))
        .collect();
    let mut outcomes = if config.parallel {
        jobs.into_par_iter().map(job).collect::<Result<Vec<_>, _>>()?
    } else {
        jobs.into_iter().map(job).collect::<Result<Vec<_>, _>>()?
    };

    let mut accs = Vec::with_capacity(plan.k);
    for fold in (0..plan.k).rev() {
        let runs = outcomes.split_off(fold * config.repeats);
        let (_, best) = pick(runs);
        observer.test(fold, plan.test(fold));
        accs.push(100.0 * accuracy(&best.weights, samples, plan.test(fold))?);
    }
    accs.reverse();
    Ok(CvResult::from_accuracies(accs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TTestKind {
    #[default]
    Pooled,
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTestResult {
    pub t: f64,
    pub df: f64,
    /// Two-sided.
    pub p: f64,
}

impl fmt::Display for TTestResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.df.fract() == 0.0 {
            write!(f, "t({}) = {:.4}, p = {:.4}", self.df, self.t, self.p)
        } else {
            write!(f, "t({:.2}) = {:.4}, p = {:.4}", self.df, self.t, self.p)
        }
    }
}

fn moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (n, mean, var)
}

pub fn ttest_two_sample(a: &[f64], b: &[f64], kind: TTestKind) -> Result<TTestResult, NeuralError> {
    let needed = 2;
    for s in [a, b] {
        if s.len() < needed {
            return Err(NeuralError::TooFewSamples { n: s.len(), needed });
        }
    }
    let (na, ma, va) = moments(a);
    let (nb, mb, vb) = moments(b);
    let (se, df) = match kind {
        TTestKind::Pooled => {
            let df = na + nb - 2.0;
            let sp = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
            ((sp * (1.0 / na + 1.0 / nb)).sqrt(), df)
        }
        TTestKind::Welch => {
            let (qa, qb) = (va / na, vb / nb);
            let df = if qa + qb == 0.0 {
                na + nb - 2.0
            } else {
                (qa + qb).powi(2) / (qa * qa / (na - 1.0) + qb * qb / (nb - 1.0))
            };
            ((qa + qb).sqrt(), df)
        }
    };
    let diff = ma - mb;
    if se == 0.0 {
        return Ok(if diff == 0.0 {
            TTestResult { t: 0.0, df, p: 1.0 }
        } else {
            TTestResult {
                t: diff.signum() * f64::INFINITY,
                df,
                p: 0.0,
            }
        });
    }
    let t = diff / se;
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive dof");
    let p = (2.0 * dist.sf(t.abs())).clamp(0.0, 1.0);
    Ok(TTestResult { t, df, p })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cohort_scale_fold_sizes() {
        let plan = kfold_split(1784, 5, 3).unwrap();
        assert_eq!(plan.sizes(), vec![357, 357, 357, 357, 356]);
        assert_eq!(kfold_split(10, 5, 0).unwrap().sizes(), vec![2; 5]);
    }

    #[test]
    fn split_rejects_bad_arguments() {
        assert!(matches!(
            kfold_split(4, 5, 0),
            Err(NeuralError::TooFewSamples { n: 4, needed: 5 })
        ));
        assert!(matches!(kfold_split(4, 1, 0), Err(NeuralError::InvalidConfig(_))));
    }

    #[test]
    fn split_is_seeded() {
        assert_eq!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 9).unwrap());
        assert_ne!(kfold_split(50, 5, 9).unwrap(), kfold_split(50, 5, 10).unwrap());
    }

    proptest! {
        #[test]
        fn folds_partition(n in 2usize..400, k in 2usize..12, seed: u64) {
            prop_assume!(n >= k);
            let plan = kfold_split(n, k, seed).unwrap();
            let mut all: Vec<usize> = plan.folds.concat();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            let sizes = plan.sizes();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for f in 0..k {
                prop_assert_eq!(plan.train(f).len() + plan.test(f).len(), n);
            }
        }

        #[test]
        fn aggregation_ignores_fold_order(mut accs in prop::collection::vec(0.0f64..100.0, 2..8), seed: u64) {
            let a = CvResult::from_accuracies(accs.clone());
            accs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = CvResult::from_accuracies(accs);
            prop_assert!((a.mean - b.mean).abs() < 1e-9);
            prop_assert!((a.ci95 - b.ci95).abs() < 1e-9);
        }
    }

    #[test]
    fn select_best_breaks_ties_low() {
        assert_eq!(select_best(&[80.0, 92.0, 92.0, 85.0]), Some(1));
        assert_eq!(select_best(&[]), None);
        assert_eq!(select_best(&[0.5]), Some(0));
    }

    #[test]
    fn cv_result_interval() {
        let r = CvResult::from_accuracies(vec![80.0, 85.0, 90.0, 85.0, 85.0]);
        assert_eq!(r.mean, 85.0);
        // t(0.975, 4) * sd / sqrt(5), sd = 3.5355339059327378
        assert!((r.ci95 - 4.389945165425423).abs() < 1e-9);
        assert_eq!(CvResult::from_accuracies(vec![88.0; 5]).ci95, 0.0);
    }

    #[test]
    fn cv_result_format() {
        let r = CvResult {
            fold_accuracies: vec![],
            mean: 85.03488,
            ci95: 1.20961,
        };
        assert_eq!(r.to_string(), "85.0349 \u{b1}1.2096");
    }

    #[test]
    fn ttest_textbook() {
        let r = ttest_two_sample(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0], TTestKind::Pooled).unwrap();
        assert!((r.t + 1.224744871391589).abs() < 1e-12);
        assert!((r.p - 0.2878641347266908).abs() < 1e-9);
        assert_eq!(r.df, 4.0);
    }

    #[test]
    fn ttest_pooled_and_welch() {
        let a = [80.0, 85.0, 90.0, 85.0, 85.0];
        let b = [88.0, 90.0, 91.0, 87.0, 92.0];
        let p = ttest_two_sample(&a, &b, TTestKind::Pooled).unwrap();
        assert!((p.t + 2.509505737713909).abs() < 1e-9);
        assert!((p.p - 0.036398948288477735).abs() < 1e-9);
        let w = ttest_two_sample(&a, &b, TTestKind::Welch).unwrap();
        assert!((w.t - p.t).abs() < 1e-12);
        assert!((w.p - 0.0431659394567404).abs() < 1e-9);
    }

    #[test]
    fn ttest_degenerate_samples() {
        let same = ttest_two_sample(&[3.0, 3.0], &[3.0, 3.0, 3.0], TTestKind::Pooled).unwrap();
        assert_eq!((same.t, same.p), (0.0, 1.0));
        let apart = ttest_two_sample(&[1.0, 1.0], &[3.0, 3.0], TTestKind::Welch).unwrap();
        assert_eq!((apart.t, apart.p), (f64::NEG_INFINITY, 0.0));
        let x = [1.0, 4.0, 2.5];
        let r = ttest_two_sample(&x, &x, TTestKind::Pooled).unwrap();
        assert_eq!((r.t, r.p), (0.0, 1.0));
        assert!(ttest_two_sample(&[1.0], &x, TTestKind::Pooled).is_err());
    }
}
