//! State shaping: estimate the reward curve from observed (s, r) pairs and
//! remap raw observations so reward is (approximately) linear in the
//! abstract state.
//!
//! The abstract state is `s̄ = (r̂(s) − r_min) / (r_max − r_min) · (s_max −
//! s_min)`, where r̂ is either an isotonic (pool-adjacent-violators) fit or
//! a k-nearest-neighbour average, and the extrema are running minima/maxima
//! over the fitting data. Discrete-state environments run in passthrough
//! mode (`s̄ = s`).

use serde::{Deserialize, Serialize};

/// Reward estimator choices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Isotonic,
    Knn { k: usize },
}

impl Default for EstimatorKind {
    fn default() -> Self {
        EstimatorKind::Isotonic
    }
}

/// Default neighbourhood size for the KNN estimator.
pub const DEFAULT_KNN_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Fitted {
    /// Non-decreasing knots: fitted value `values[i]` at `sites[i]`,
    /// linearly interpolated between sites, clamped outside.
    Isotonic { sites: Vec<f64>, values: Vec<f64> },
    /// Retained training points sorted by s.
    Knn { points: Vec<(f64, f64)>, k: usize },
}

/// A fitted (or passthrough) shaping model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapingModel {
    pub kind: EstimatorKind,
    pub enabled: bool,
    pub r_min: f64,
    pub r_max: f64,
    pub s_min: f64,
    pub s_max: f64,
    fitted: Option<Fitted>,
}

impl ShapingModel {
    pub fn new(kind: EstimatorKind) -> Self {
        ShapingModel {
            kind,
            enabled: true,
            r_min: 0.0,
            r_max: 0.0,
            s_min: 0.0,
            s_max: 0.0,
            fitted: None,
        }
    }

    /// Passthrough model for discrete-state environments: `shape(s) = s`.
    pub fn disabled() -> Self {
        ShapingModel {
            enabled: false,
            ..ShapingModel::new(EstimatorKind::Isotonic)
        }
    }

    pub fn is_fitted(&self) -> bool {
        self.fitted.is_some()
    }

    /// Fit the reward estimator on observed (s, r) pairs and refresh the
    /// running extrema. Fewer than two points leaves the model in
    /// passthrough mode.
    pub fn fit(&mut self, data: &[(f64, f64)]) {
        if !self.enabled || data.len() < 2 {
            self.fitted = None;
            return;
        }
        self.r_min = data.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        self.r_max = data.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        self.s_min = data.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        self.s_max = data.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);

        let mut points = data.to_vec();
        points.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite states"));
        self.fitted = Some(match self.kind {
            EstimatorKind::Isotonic => {
                let (sites, values) = isotonic_fit(&points);
                Fitted::Isotonic { sites, values }
            }
            EstimatorKind::Knn { k } => Fitted::Knn {
                points,
                k: k.max(1),
            },
        });
    }

    /// Estimated reward at a raw observation. Queries outside the observed
    /// range clamp to the boundary estimate.
    pub fn estimate(&self, s: f64) -> f64 {
        match self.fitted.as_ref().expect("estimate requires a fitted model") {
            Fitted::Isotonic { sites, values } => interpolate(sites, values, s),
            Fitted::Knn { points, k } => knn_mean(points, *k, s),
        }
    }

    /// Map a raw observation to its abstract state.
    pub fn shape(&self, s: f64) -> f64 {
        if !self.enabled || self.fitted.is_none() {
            return s;
        }
        if self.r_max == self.r_min {
            // Flat reward carries no information to normalize against.
            return s;
        }
        let r_hat = self.estimate(s);
        (r_hat - self.r_min) / (self.r_max - self.r_min) * (self.s_max - self.s_min)
    }

    /// Largest absolute residual of the estimator on its own training data.
    pub fn training_residual(&self, data: &[(f64, f64)]) -> f64 {
        data.iter()
            .map(|&(s, r)| (self.estimate(s) - r).abs())
            .fold(0.0, f64::max)
    }
}

/// Pool-adjacent-violators fit of r on s for points sorted by s. Ties in s
/// are averaged into a single site first; the returned fit is non-decreasing.
fn isotonic_fit(sorted: &[(f64, f64)]) -> (Vec<f64>, Vec<f64>) {
    // Collapse duplicate sites to their mean with a weight.
    let mut sites: Vec<f64> = Vec::new();
    let mut targets: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    for &(s, r) in sorted {
        if let Some(last) = sites.last() {
            if *last == s {
                let w = weights.last_mut().unwrap();
                let t = targets.last_mut().unwrap();
                *t = (*t * *w + r) / (*w + 1.0);
                *w += 1.0;
                continue;
            }
        }
        sites.push(s);
        targets.push(r);
        weights.push(1.0);
    }

    // Blocks of (weight, mean); merge while the tail violates monotonicity.
    let mut block_w: Vec<f64> = Vec::with_capacity(targets.len());
    let mut block_mean: Vec<f64> = Vec::with_capacity(targets.len());
    let mut block_len: Vec<usize> = Vec::with_capacity(targets.len());
    for (i, &t) in targets.iter().enumerate() {
        block_w.push(weights[i]);
        block_mean.push(t);
        block_len.push(1);
        while block_mean.len() > 1 {
            let n = block_mean.len();
            if block_mean[n - 2] <= block_mean[n - 1] {
                break;
            }
            let w = block_w[n - 2] + block_w[n - 1];
            let mean =
                (block_mean[n - 2] * block_w[n - 2] + block_mean[n - 1] * block_w[n - 1]) / w;
            block_w[n - 2] = w;
            block_mean[n - 2] = mean;
            block_len[n - 2] += block_len[n - 1];
            block_w.pop();
            block_mean.pop();
            block_len.pop();
        }
    }

    let mut values = Vec::with_capacity(sites.len());
    for (i, &mean) in block_mean.iter().enumerate() {
        values.extend(std::iter::repeat(mean).take(block_len[i]));
    }
    (sites, values)
}

/// Piecewise-linear interpolation with boundary clamping.
fn interpolate(sites: &[f64], values: &[f64], s: f64) -> f64 {
    if s <= sites[0] {
        return values[0];
    }
    if s >= *sites.last().unwrap() {
        return *values.last().unwrap();
    }
    let idx = sites.partition_point(|&x| x < s);
    let (x0, x1) = (sites[idx - 1], sites[idx]);
    let (y0, y1) = (values[idx - 1], values[idx]);
    if x1 == x0 {
        return y1;
    }
    y0 + (y1 - y0) * (s - x0) / (x1 - x0)
}

/// Mean reward of the k nearest observations by |s - query|.
fn knn_mean(points: &[(f64, f64)], k: usize, s: f64) -> f64 {
    let k = k.min(points.len());
    // Points are sorted by s: expand a window around the insertion point.
    let mut lo = points.partition_point(|p| p.0 < s);
    let mut hi = lo;
    while hi - lo < k {
        let take_left = match (lo.checked_sub(1), points.get(hi)) {
            (Some(left), Some(right)) => (s - points[left].0) <= (right.0 - s),
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => break,
        };
        if take_left {
            lo -= 1;
        } else {
            hi += 1;
        }
    }
    let window = &points[lo..hi];
    window.iter().map(|p| p.1).sum::<f64>() / window.len() as f64
}
