//! Sobol first-order and total indices from a Saltelli design with Jansen
//! estimators and bootstrap confidence intervals.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clm::{simulate, voltage_profile, FaultSpec, Trajectory};
use crate::error::{CoreError, Result};
use crate::params::ParamSpace;
use crate::qmc::SobolSeq;
use crate::seed;

pub const BOOTSTRAP_RESAMPLES: usize = 100;
/// Indices below this are flagged as estimator noise.
pub const NEGATIVE_FLAG: f64 = -0.05;

/// Rows are laid out as `[A; B; A_B(1..k); B_A(1..k)]`, each block `n` rows.
/// `A_B(i)` is `A` with column `i` taken from `B`; `B_A(i)` the reverse.
#[derive(Clone, Debug, PartialEq)]
pub struct SaltelliDesign {
    pub n: usize,
    pub k: usize,
    pub rows: Vec<Vec<f64>>,
}

impl SaltelliDesign {
    pub fn a(&self, j: usize) -> usize {
        j
    }
    pub fn b(&self, j: usize) -> usize {
        self.n + j
    }
    pub fn ab(&self, i: usize, j: usize) -> usize {
        (2 + i) * self.n + j
    }
    pub fn ba(&self, i: usize, j: usize) -> usize {
        (2 + self.k + i) * self.n + j
    }
}

pub fn saltelli_rows(n: usize, k: usize) -> usize {
    n * (2 * k + 2)
}

/// Builds the design from base matrices `a` and `b` (`n` rows of `k`).
pub fn saltelli_from_bases(a: &[Vec<f64>], b: &[Vec<f64>]) -> SaltelliDesign {
    let n = a.len();
    let k = a.first().map_or(0, Vec::len);
    let mut rows = Vec::with_capacity(saltelli_rows(n, k));
    rows.extend(a.iter().cloned());
    rows.extend(b.iter().cloned());
    for i in 0..k {
        for j in 0..n {
            let mut r = a[j].clone();
            r[i] = b[j][i];
            rows.push(r);
        }
    }
    for i in 0..k {
        for j in 0..n {
            let mut r = b[j].clone();
            r[i] = a[j][i];
            rows.push(r);
        }
    }
    SaltelliDesign { n, k, rows }
}

/// Base matrices over the box `[lower, upper]` from one scrambled Sobol
/// sequence in `2k` dimensions: A takes the first `k` coordinates of each
/// point, B the rest.
pub fn saltelli_sample(lower: &[f64], upper: &[f64], n: usize, seed: u64) -> SaltelliDesign {
    let k = lower.len();
    let seq = SobolSeq::scrambled(2 * k, seed);
    let scale = |u: &[f64]| -> Vec<f64> { u.iter().enumerate().map(|(c, x)| lower[c] + x * (upper[c] - lower[c])).collect() };
    let (a, b): (Vec<Vec<f64>>, Vec<Vec<f64>>) = (0..n as u64)
        .map(|j| {
            let u = seq.point(j);
            (scale(&u[..k]), scale(&u[k..]))
        })
        .unzip();
    saltelli_from_bases(&a, &b)
}

pub fn saltelli_space(space: &ParamSpace, n: usize, seed: u64) -> SaltelliDesign {
    saltelli_sample(&space.lower, &space.upper, n, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolIndices {
    pub s1: Vec<f64>,
    pub st: Vec<f64>,
    pub s1_ci: Vec<f64>,
    pub st_ci: Vec<f64>,
    /// Output variance was zero; all indices reported as 0.
    pub zero_variance: bool,
    /// Parameters with an index below `NEGATIVE_FLAG`.
    pub negative: Vec<usize>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let mut n = 0usize;
    let mut s = 0.0;
    for x in v {
        s += x;
        n += 1;
    }
    s / n as f64
}

/// Point estimates over base-row subset `rows` (indices into `0..n`,
/// repeats allowed).
fn jansen(d: &SaltelliDesign, y: &[f64], rows: &[usize]) -> (Vec<f64>, Vec<f64>, bool) {
    let fa: Vec<f64> = rows.iter().map(|&j| y[d.a(j)]).collect();
    let fb: Vec<f64> = rows.iter().map(|&j| y[d.b(j)]).collect();
    let all = fa.iter().chain(&fb);
    let m = mean(all.clone().copied());
    let var = mean(all.map(|v| (v - m) * (v - m)));
    if !(var > 0.0) {
        return (vec![0.0; d.k], vec![0.0; d.k], true);
    }
    let mut s1 = Vec::with_capacity(d.k);
    let mut st = Vec::with_capacity(d.k);
    for i in 0..d.k {
        let fab: Vec<f64> = rows.iter().map(|&j| y[d.ab(i, j)]).collect();
        let fba: Vec<f64> = rows.iter().map(|&j| y[d.ba(i, j)]).collect();
        // A_B(i) shares only column i with B; B_A(i) shares only column i with A
        let s1_ab = 1.0 - 0.5 * mean(fb.iter().zip(&fab).map(|(b, x)| (b - x) * (b - x))) / var;
        let s1_ba = 1.0 - 0.5 * mean(fa.iter().zip(&fba).map(|(a, x)| (a - x) * (a - x))) / var;
        let st_ab = 0.5 * mean(fa.iter().zip(&fab).map(|(a, x)| (a - x) * (a - x))) / var;
        let st_ba = 0.5 * mean(fb.iter().zip(&fba).map(|(b, x)| (b - x) * (b - x))) / var;
        s1.push(0.5 * (s1_ab + s1_ba));
        st.push(0.5 * (st_ab + st_ba));
    }
    (s1, st, false)
}

/// Jansen indices of scalar outputs `y` (one per design row) with
/// bootstrap half-widths `1.96 * sd` over `BOOTSTRAP_RESAMPLES` resamples.
pub fn sobol_indices(d: &SaltelliDesign, y: &[f64], seed: u64) -> Result<SobolIndices> {
    if y.len() != d.rows.len() {
        return Err(CoreError::Contract(format!("{} outputs for {} design rows", y.len(), d.rows.len())));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::Numerical("non-finite model output in Sobol design".into()));
    }
    let all: Vec<usize> = (0..d.n).collect();
    let (s1, st, zero) = jansen(d, y, &all);
    let mut rng = seed::rng(seed, &[0xb007]);
    let mut boot_s1 = vec![Vec::with_capacity(BOOTSTRAP_RESAMPLES); d.k];
    let mut boot_st = vec![Vec::with_capacity(BOOTSTRAP_RESAMPLES); d.k];
    if !zero {
        for _ in 0..BOOTSTRAP_RESAMPLES {
            let rows: Vec<usize> = (0..d.n).map(|_| rng.random_range(0..d.n)).collect();
            let (b1, bt, _) = jansen(d, y, &rows);
            for i in 0..d.k {
                boot_s1[i].push(b1[i]);
                boot_st[i].push(bt[i]);
            }
        }
    }
    let half = |v: &Vec<f64>| {
        if v.len() < 2 {
            return 0.0;
        }
        let m = mean(v.iter().copied());
        1.96 * (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
    };
    let negative = (0..d.k).filter(|&i| s1[i] < NEGATIVE_FLAG || st[i] < NEGATIVE_FLAG).collect();
    Ok(SobolIndices {
        s1_ci: boot_s1.iter().map(half).collect(),
        st_ci: boot_st.iter().map(half).collect(),
        s1,
        st,
        zero_variance: zero,
        negative,
    })
}

/// Ishigami test function on `[-pi, pi]^3`.
pub fn ishigami(x: &[f64], a: f64, b: f64) -> f64 {
    x[0].sin() + a * x[1].sin().powi(2) + b * x[2].powi(4) * x[0].sin()
}

/// Analytic `(S1, ST)` of the Ishigami function.
pub fn ishigami_indices(a: f64, b: f64) -> ([f64; 3], [f64; 3]) {
    let pi = std::f64::consts::PI;
    let v1 = 0.5 * (1.0 + b * pi.powi(4) / 5.0).powi(2);
    let v2 = a * a / 8.0;
    let v13 = b * b * pi.powi(8) * (1.0 / 18.0 - 1.0 / 50.0);
    let v = v1 + v2 + v13;
    ([v1 / v, v2 / v, 0.0], [(v1 + v13) / v, v2 / v, v13 / v])
}

// ---------------------------------------------------------------- simulator study

/// Mean squared deviation of each channel from its first (pre-fault) sample.
pub fn deviation_functional(t: &Trajectory) -> (f64, f64) {
    let f = |x: &[f64]| mean(x.iter().map(|v| (v - x[0]) * (v - x[0])));
    (f(&t.p), f(&t.q))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventSobol {
    pub event: String,
    pub p: SobolIndices,
    pub q: SobolIndices,
    /// Design rows whose simulation failed; their outputs were replaced by
    /// the base-row mean.
    pub failed_rows: usize,
}

impl EventSobol {
    /// Total index summarized over channels (maximum).
    pub fn st_max(&self, i: usize) -> f64 {
        self.p.st[i].max(self.q.st[i])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolStudy {
    pub names: Vec<String>,
    pub n: usize,
    pub seed: u64,
    pub events: Vec<EventSobol>,
}

/// Runs the simulator over a Saltelli design for every event.
pub fn run_study(space: &ParamSpace, events: &[FaultSpec], n: usize, seed: u64, workers: usize) -> Result<SobolStudy> {
    let design = saltelli_space(space, n, seed);
    let pool = crate::dataio::thread_pool(workers)?;
    let mut out = Vec::new();
    for ev in events {
        let prof = voltage_profile(ev)?;
        let vals: Vec<Option<(f64, f64)>> = pool.install(|| {
            design.rows.par_iter().map(|r| simulate(r, &prof).ok().map(|t| deviation_functional(&t))).collect()
        });
        let failed = vals.iter().filter(|v| v.is_none()).count();
        let fill = |c: usize| -> Vec<f64> {
            let ok: Vec<f64> = vals.iter().flatten().map(|v| if c == 0 { v.0 } else { v.1 }).collect();
            let m = if ok.is_empty() { 0.0 } else { mean(ok.iter().copied()) };
            vals.iter().map(|v| v.map_or(m, |v| if c == 0 { v.0 } else { v.1 })).collect()
        };
        let p = sobol_indices(&design, &fill(0), seed)?;
        let q = sobol_indices(&design, &fill(1), seed)?;
        out.push(EventSobol { event: ev.label.as_str().to_string(), p, q, failed_rows: failed });
    }
    Ok(SobolStudy { names: space.names.clone(), n, seed, events: out })
}

/// Parameter indices sorted by descending score, ties broken by name.
pub fn rank_by(names: &[String], score: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..names.len()).collect();
    idx.sort_by(|&a, &b| score[b].total_cmp(&score[a]).then_with(|| names[a].cmp(&names[b])));
    idx
}

impl SobolStudy {
    pub fn event(&self, label: &str) -> Option<&EventSobol> {
        self.events.iter().find(|e| e.event == label)
    }

    /// Ranking under one event by the channel-maximum total index.
    pub fn ranking(&self, label: &str) -> Option<Vec<usize>> {
        let e = self.event(label)?;
        let score: Vec<f64> = (0..self.names.len()).map(|i| e.st_max(i)).collect();
        Some(rank_by(&self.names, &score))
    }

    /// 1-based rank of parameter `name` under `label`.
    pub fn rank_of(&self, label: &str, name: &str) -> Option<usize> {
        let i = self.names.iter().position(|n| n == name)?;
        self.ranking(label)?.iter().position(|&j| j == i).map(|r| r + 1)
    }

    /// Cross-event summary: maximum total index over events.
    pub fn summary_ranking(&self) -> Vec<usize> {
        let score: Vec<f64> = (0..self.names.len())
            .map(|i| self.events.iter().map(|e| e.st_max(i)).fold(0.0, f64::max))
            .collect();
        rank_by(&self.names, &score)
    }

    pub fn st(&self, label: &str, name: &str) -> Option<f64> {
        let i = self.names.iter().position(|n| n == name)?;
        Some(self.event(label)?.st_max(i))
    }

    /// `parameter,event,channel,S1,S1_ci,ST,ST_ci` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("parameter,event,channel,S1,S1_ci,ST,ST_ci\n");
        for e in &self.events {
            for (ch, ix) in [("p", &e.p), ("q", &e.q)] {
                for (i, name) in self.names.iter().enumerate() {
                    s.push_str(&format!(
                        "{name},{},{ch},{:.6},{:.6},{:.6},{:.6}\n",
                        e.event, ix.s1[i], ix.s1_ci[i], ix.st[i], ix.st_ci[i]
                    ));
                }
            }
        }
        s
    }
}
