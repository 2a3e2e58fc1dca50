//! Reference windowed nearest-centroid classifier and F-score evaluation.
//!
//! Features per band: the mean amplitude over band × window, and the
//! population standard deviation over time of the per-frame band mean.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::model::ClassificationResult;

/// Frames per window: one second at the beacon rate.
pub const DEFAULT_WINDOW: usize = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Half-open position ranges into the amplitude vector.
    pub bands: Vec<(usize, usize)>,
    pub window: usize,
}

impl FeatureSpec {
    pub fn dim(&self) -> usize {
        2 * self.bands.len()
    }
}

impl Default for FeatureSpec {
    /// The three modulated bands of the shipped synthetic profiles.
    fn default() -> Self {
        Self {
            bands: alloc::vec![(6, 14), (20, 28), (40, 48)],
            window: DEFAULT_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ClassifyError {
    #[error("empty window")]
    EmptyWindow,
    #[error("window mixes subcarrier counts {0} and {1}")]
    NonUniform(usize, usize),
    #[error("band {start}..{end} outside {n} subcarriers")]
    BandOutOfRange { start: usize, end: usize, n: usize },
    #[error("no training windows for class {0}")]
    MissingClass(u32),
    #[error("feature dimension {got} does not match model dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("predictions ({0}) and labels ({1}) differ in length")]
    LengthMismatch(usize, usize),
}

pub fn compute_window_features<A: AsRef<[f64]>>(spec: &FeatureSpec, frames: &[A]) -> Result<Vec<f64>, ClassifyError> {
    let first = frames.first().ok_or(ClassifyError::EmptyWindow)?.as_ref().len();
    if let Some(other) = frames.iter().map(|f| f.as_ref().len()).find(|&n| n != first) {
        return Err(ClassifyError::NonUniform(first, other));
    }
    let t = frames.len() as f64;
    let mut features = Vec::with_capacity(spec.dim());
    for &(start, end) in &spec.bands {
        if start >= end || end > first {
            return Err(ClassifyError::BandOutOfRange { start, end, n: first });
        }
        let width = (end - start) as f64;
        let means: Vec<f64> = frames
            .iter()
            .map(|f| f.as_ref()[start..end].iter().sum::<f64>() / width)
            .collect();
        let mean = means.iter().sum::<f64>() / t;
        let var = means.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / t;
        features.push(mean);
        features.push(libm::sqrt(var));
    }
    Ok(features)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CentroidModel {
    /// Optional human-readable class names, indexed by class id.
    #[serde(default)]
    pub labels: Vec<String>,
    pub features: FeatureSpec,
    pub centroids: Vec<Vec<f64>>,
}

impl CentroidModel {
    pub fn n_classes(&self) -> usize {
        self.centroids.len()
    }

    pub fn class_of_label(&self, label: &str) -> Option<u32> {
        self.labels.iter().position(|l| l == label).map(|i| i as u32)
    }
}

/// Per-class mean feature vector. Classes are `0..n_classes`; each needs at
/// least one window.
pub fn train_centroids(
    spec: &FeatureSpec,
    n_classes: usize,
    windows: &[(u32, Vec<f64>)],
) -> Result<CentroidModel, ClassifyError> {
    let dim = spec.dim();
    let mut sums = alloc::vec![alloc::vec![0.0; dim]; n_classes];
    let mut counts = alloc::vec![0usize; n_classes];
    for (class, features) in windows {
        if features.len() != dim {
            return Err(ClassifyError::DimensionMismatch {
                expected: dim,
                got: features.len(),
            });
        }
        let c = *class as usize;
        if c >= n_classes {
            continue;
        }
        counts[c] += 1;
        for (s, x) in sums[c].iter_mut().zip(features) {
            *s += x;
        }
    }
    if let Some(missing) = counts.iter().position(|&c| c == 0) {
        return Err(ClassifyError::MissingClass(missing as u32));
    }
    let centroids = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|x| x / c as f64).collect())
        .collect();
    Ok(CentroidModel {
        labels: Vec::new(),
        features: spec.clone(),
        centroids,
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    libm::sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Softmin over Euclidean distances to every centroid, `exp(-d_c) / Σ exp(-d)`.
pub fn class_confidences(model: &CentroidModel, features: &[f64]) -> Result<Vec<f64>, ClassifyError> {
    let dim = model.features.dim();
    if features.len() != dim {
        return Err(ClassifyError::DimensionMismatch {
            expected: dim,
            got: features.len(),
        });
    }
    let d: Vec<f64> = model.centroids.iter().map(|c| distance(c, features)).collect();
    let d_min = d.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|x| libm::exp(-(x - d_min))).collect();
    let total: f64 = w.iter().sum();
    Ok(w.into_iter().map(|x| x / total).collect())
}

/// Nearest centroid; ties go to the lowest class id.
pub fn classify_window(
    model: &CentroidModel,
    features: &[f64],
    window_end_us: u64,
) -> Result<ClassificationResult, ClassifyError> {
    let dim = model.features.dim();
    if features.len() != dim {
        return Err(ClassifyError::DimensionMismatch {
            expected: dim,
            got: features.len(),
        });
    }
    let mut best = 0usize;
    let mut best_d = f64::INFINITY;
    for (i, c) in model.centroids.iter().enumerate() {
        let d = distance(c, features);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    let conf = class_confidences(model, features)?;
    Ok(ClassificationResult {
        class_id: best as u32,
        confidence: conf.get(best).copied().unwrap_or(0.0),
        window_end_us,
    })
}

/// Splits a frame sequence into non-overlapping windows and yields
/// `(features, window_end_us)` for every full window.
pub struct Windower {
    spec: FeatureSpec,
    buf: Vec<Vec<f64>>,
}

impl Windower {
    pub fn new(spec: FeatureSpec) -> Self {
        Self { spec, buf: Vec::new() }
    }

    pub fn spec(&self) -> &FeatureSpec {
        &self.spec
    }

    pub fn push(&mut self, amplitudes: Vec<f64>, timestamp_us: u64) -> Option<Result<(Vec<f64>, u64), ClassifyError>> {
        self.buf.push(amplitudes);
        if self.buf.len() < self.spec.window.max(1) {
            return None;
        }
        let out = compute_window_features(&self.spec, &self.buf).map(|f| (f, timestamp_us));
        self.buf.clear();
        Some(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class_id: u32,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FScoreReport {
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
}

impl FScoreReport {
    pub fn recall(&self, class_id: u32) -> Option<f64> {
        self.per_class.iter().find(|c| c.class_id == class_id).map(|c| c.recall)
    }
}

/// Per-class precision, recall and F1 over every class seen in either input;
/// the macro score is their unweighted mean.
pub fn evaluate_fscore(predictions: &[u32], labels: &[u32]) -> Result<FScoreReport, ClassifyError> {
    if predictions.len() != labels.len() {
        return Err(ClassifyError::LengthMismatch(predictions.len(), labels.len()));
    }
    let classes: BTreeSet<u32> = predictions.iter().chain(labels).copied().collect();
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let per_class: Vec<ClassScore> = classes
        .into_iter()
        .map(|c| {
            let pairs = predictions.iter().zip(labels);
            let tp = pairs.clone().filter(|(p, l)| **p == c && **l == c).count();
            let predicted = predictions.iter().filter(|p| **p == c).count();
            let support = labels.iter().filter(|l| **l == c).count();
            let precision = ratio(tp, predicted);
            let recall = ratio(tp, support);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassScore {
                class_id: c,
                support,
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let macro_f1 = if per_class.is_empty() {
        0.0
    } else {
        per_class.iter().map(|c| c.f1).sum::<f64>() / per_class.len() as f64
    };
    Ok(FScoreReport { per_class, macro_f1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn one_band() -> FeatureSpec {
        FeatureSpec {
            bands: vec![(0, 4)],
            window: 9,
        }
    }

    #[test]
    fn constant_window() {
        let frames = vec![vec![1.0; 4]; 9];
        assert_eq!(compute_window_features(&one_band(), &frames).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn alternating_window_population_std() {
        let frames: Vec<Vec<f64>> = (0..10).map(|t| vec![if t % 2 == 0 { 0.0 } else { 2.0 }; 4]).collect();
        // oracle: explicit population std of [0,2,0,2,...]
        let seq: Vec<f64> = frames.iter().map(|f| f[0]).collect();
        let m = seq.iter().sum::<f64>() / seq.len() as f64;
        let sd = libm::sqrt(seq.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / seq.len() as f64);
        let f = compute_window_features(&one_band(), &frames).unwrap();
        assert_eq!(f, vec![m, sd]);
        assert_eq!(f, vec![1.0, 1.0]);
    }

    #[test]
    fn feature_errors_and_dims() {
        let empty: Vec<Vec<f64>> = vec![];
        assert_eq!(
            compute_window_features(&one_band(), &empty),
            Err(ClassifyError::EmptyWindow)
        );
        let two = FeatureSpec {
            bands: vec![(0, 2), (2, 4)],
            window: 9,
        };
        assert_eq!(compute_window_features(&two, &[vec![1.0; 4]]).unwrap().len(), 4);
        assert!(matches!(
            compute_window_features(&one_band(), &[vec![1.0; 4], vec![1.0; 3]]),
            Err(ClassifyError::NonUniform(4, 3))
        ));
        assert!(matches!(
            compute_window_features(&one_band(), &[vec![1.0; 3]]),
            Err(ClassifyError::BandOutOfRange { .. })
        ));
    }

    fn model4() -> CentroidModel {
        let spec = one_band();
        let windows = vec![
            (0, vec![0.0, 0.0]),
            (1, vec![10.0, 0.0]),
            (2, vec![0.0, 10.0]),
            (3, vec![10.0, 10.0]),
        ];
        train_centroids(&spec, 4, &windows).unwrap()
    }

    #[test]
    fn training() {
        let m = model4();
        assert_eq!(m.centroids[1], vec![10.0, 0.0]);
        let spec = one_band();
        let m2 = train_centroids(&spec, 1, &[(0, vec![2.0, 3.0]), (0, vec![2.0, 3.0])]).unwrap();
        assert_eq!(m2.centroids[0], vec![2.0, 3.0]);
        assert_eq!(
            train_centroids(&spec, 2, &[(0, vec![1.0, 1.0])]),
            Err(ClassifyError::MissingClass(1))
        );
    }

    #[test]
    fn classification() {
        let m = model4();
        let r = classify_window(&m, &[10.0, 0.0], 7).unwrap();
        assert_eq!(r.class_id, 1);
        assert!(r.confidence > 0.999);
        assert_eq!(r.window_end_us, 7);

        let center = classify_window(&m, &[5.0, 5.0], 0).unwrap();
        assert_eq!(center.class_id, 0);
        assert!((center.confidence - 0.25).abs() < 1e-12);

        // equidistant from classes 1 and 3 -> class 1
        assert_eq!(classify_window(&m, &[10.0, 5.0], 0).unwrap().class_id, 1);
        assert!(matches!(
            classify_window(&m, &[1.0], 0),
            Err(ClassifyError::DimensionMismatch { expected: 2, got: 1 })
        ));
        let c = class_confidences(&m, &[3.0, 1.0]).unwrap();
        assert!((c.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fscore_examples() {
        let labels = [0, 1, 2, 3, 0, 1, 2, 3];
        let r = evaluate_fscore(&labels, &labels).unwrap();
        assert_eq!(r.macro_f1, 1.0);
        assert!(r.per_class.iter().all(|c| c.recall == 1.0));

        let zeros = [0u32; 8];
        let r = evaluate_fscore(&zeros, &labels).unwrap();
        assert_eq!(r.recall(0), Some(1.0));
        for c in 1..4 {
            assert_eq!(r.recall(c), Some(0.0));
        }

        // confusion [[9,1],[2,8]]: rows are true class, columns predicted
        let mut preds = vec![];
        let mut truth = vec![];
        for (t, p, n) in [(0, 0, 9), (0, 1, 1), (1, 0, 2), (1, 1, 8)] {
            for _ in 0..n {
                truth.push(t);
                preds.push(p);
            }
        }
        let r = evaluate_fscore(&preds, &truth).unwrap();
        let (p0, r0) = (9.0 / 11.0, 9.0 / 10.0);
        let f0 = 2.0 * p0 * r0 / (p0 + r0);
        assert!((r.per_class[0].f1 - f0).abs() < 1e-12);
        assert!((f0 - 0.857).abs() < 1e-3);
        assert_eq!(evaluate_fscore(&[0], &[]), Err(ClassifyError::LengthMismatch(1, 0)));
    }

    #[test]
    fn windower_emits_full_windows() {
        let mut w = Windower::new(FeatureSpec {
            bands: vec![(0, 2)],
            window: 3,
        });
        assert!(w.push(vec![1.0, 1.0], 1).is_none());
        assert!(w.push(vec![1.0, 1.0], 2).is_none());
        let (f, t) = w.push(vec![1.0, 1.0], 3).unwrap().unwrap();
        assert_eq!((f, t), (vec![1.0, 0.0], 3));
        assert!(w.push(vec![1.0, 1.0], 4).is_none());
    }
}
