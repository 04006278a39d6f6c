//! Parameter and trajectory error measures and a k-nearest-neighbor mutual
//! information estimator.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::clm::Trajectory;
use crate::params::ParamSpace;
use crate::seed;

/// Range percentage error per parameter: `100 |est - truth| / (UB - LB)`.
pub fn rpe(estimate: &[f64], truth: &[f64], space: &ParamSpace) -> Vec<f64> {
    assert_eq!(estimate.len(), space.len());
    assert_eq!(truth.len(), space.len());
    (0..space.len()).map(|i| 100.0 * (estimate[i] - truth[i]).abs() / space.range(i)).collect()
}

pub fn marpe(rpe: &[f64]) -> f64 {
    rpe.iter().sum::<f64>() / rpe.len() as f64
}

fn channel_rmse(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    (a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64).sqrt()
}

/// Sum of the active- and reactive-channel RMSEs.
pub fn rmse(estimate: &Trajectory, truth: &Trajectory) -> f64 {
    channel_rmse(&estimate.p, &truth.p) + channel_rmse(&estimate.q, &truth.q)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub p5: f64,
    pub p25: f64,
    pub median: f64,
    pub p75: f64,
    pub p95: f64,
    pub n: usize,
}

/// Linear-interpolation percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(values: &[f64]) -> Summary {
    if values.is_empty() {
        return Summary::default();
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Summary {
        mean: values.iter().sum::<f64>() / values.len() as f64,
        p5: percentile(&s, 0.05),
        p25: percentile(&s, 0.25),
        median: percentile(&s, 0.5),
        p75: percentile(&s, 0.75),
        p95: percentile(&s, 0.95),
        n: values.len(),
    }
}

pub fn std_dev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)).sqrt()
}

// ---------------------------------------------------------------- mutual information

pub const KSG_K: usize = 3;
pub const MI_MIN_SAMPLES: usize = 100;
const JITTER_REL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MiEstimate {
    /// Nats, clamped below at 0.
    pub nats: f64,
    /// One input was constant.
    pub degenerate: bool,
    /// The inputs have identical rank order; the value is the estimator's
    /// finite-sample cap.
    pub perfect_dependence: bool,
}

/// Adds `1e-10 x scale` uniform jitter seeded by the data itself, so that a
/// series always receives the same jitter whichever argument it is.
fn jittered(x: &[f64]) -> Vec<f64> {
    let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut rng = seed::rng(seed::hash_f64(x), &[0x1177]);
    x.iter().map(|&v| v + JITTER_REL * scale * rng.random_range(-1.0..1.0)).collect()
}

fn is_constant(x: &[f64]) -> bool {
    x.iter().all(|&v| v == x[0])
}

fn ranks(x: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut r = vec![0; x.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank;
    }
    r
}

/// Number of entries of sorted `s` strictly within `eps` of `c`, excluding
/// the point itself.
fn count_within(s: &[f64], c: f64, eps: f64) -> usize {
    let lo = s.partition_point(|&v| v <= c - eps);
    let hi = s.partition_point(|&v| v < c + eps);
    hi - lo - 1
}

/// Kraskov-Stoegbauer-Grassberger estimator (first algorithm, max-norm,
/// `k = 3`).
pub fn mutual_information(x: &[f64], y: &[f64]) -> MiEstimate {
    assert_eq!(x.len(), y.len(), "MI inputs differ in length");
    let n = x.len();
    assert!(n >= MI_MIN_SAMPLES, "MI needs at least {MI_MIN_SAMPLES} samples, got {n}");
    if is_constant(x) || is_constant(y) {
        return MiEstimate { nats: 0.0, degenerate: true, perfect_dependence: false };
    }
    let perfect = ranks(x) == ranks(y);
    let xj = jittered(x);
    let yj = jittered(y);
    let mut xs = xj.clone();
    xs.sort_by(f64::total_cmp);
    let mut ys = yj.clone();
    ys.sort_by(f64::total_cmp);

    let k = KSG_K;
    let mut acc = 0.0;
    let mut dist = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            dist[j] = (xj[i] - xj[j]).abs().max((yj[i] - yj[j]).abs());
        }
        dist[i] = f64::INFINITY;
        let (_, kth, _) = dist.select_nth_unstable_by(k - 1, f64::total_cmp);
        let eps = *kth;
        let nx = count_within(&xs, xj[i], eps);
        let ny = count_within(&ys, yj[i], eps);
        acc += digamma((nx + 1) as f64) + digamma((ny + 1) as f64);
    }
    let mi = digamma(k as f64) + digamma(n as f64) - acc / n as f64;
    MiEstimate { nats: mi.max(0.0), degenerate: false, perfect_dependence: perfect }
}

/// Symmetric MI matrix over the columns of `samples` (diagonal left at 0).
pub fn mi_matrix(samples: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let k = samples.first().map_or(0, Vec::len);
    let cols: Vec<Vec<f64>> = (0..k).map(|c| samples.iter().map(|r| r[c]).collect()).collect();
    let mut m = vec![vec![0.0; k]; k];
    for a in 0..k {
        for b in a + 1..k {
            let v = mutual_information(&cols[a], &cols[b]).nats;
            m[a][b] = v;
            m[b][a] = v;
        }
    }
    m
}

pub fn matrix_csv(names: &[String], m: &[Vec<f64>]) -> String {
    let mut s = String::from("param");
    for n in names {
        s.push(',');
        s.push_str(n);
    }
    s.push('\n');
    for (name, row) in names.iter().zip(m) {
        s.push_str(name);
        for v in row {
            s.push_str(&format!(",{v:.6}"));
        }
        s.push('\n');
    }
    s
}
