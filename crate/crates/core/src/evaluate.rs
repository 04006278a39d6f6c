//! Held-out evaluation: posterior sampling for a set of truth records,
//! parameter and trajectory errors, and re-simulation under randomized
//! fault scenarios.

use std::path::Path;

use loadinv_nn::{Condition, DenoiserModel, ParamStore};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clm::{simulate, voltage_profile, FaultLabel, FaultSpec, Trajectory, VoltageProfile};
use crate::dataio::{read_f32, thread_pool, write_f32, Dataset};
use crate::diffusion::{bind_events, observation, sample_posterior_from, Schedule, Start};
use crate::error::{CoreError, Result};
use crate::metrics::{marpe, mi_matrix, rmse, rpe, std_dev, summarize, Summary, MI_MIN_SAMPLES};
use crate::params::ParamSpace;
use crate::seed;

/// The first `n` records of the test split.
pub fn truth_indices(data: &Dataset, n: usize) -> Result<Vec<usize>> {
    let test = data.test_indices();
    if test.len() < n {
        return Err(CoreError::Config(format!("{n} truths requested but the test split holds {}", test.len())));
    }
    Ok(test.take(n).collect())
}

/// Posterior samples for several truths, stored `truths x samples x params`
/// in single precision.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub n_truths: usize,
    pub n_samples: usize,
    pub n_params: usize,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferManifest {
    pub model_events: Vec<String>,
    pub truths: Vec<usize>,
    pub n_samples: usize,
    pub n_params: usize,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Start::is_standard")]
    pub start: Start,
    pub clipped_values: usize,
    pub clipped_samples: usize,
    pub out_of_bounds_fraction: f64,
}

impl SampleSet {
    pub fn sample(&self, t: usize, s: usize) -> Vec<f64> {
        let o = (t * self.n_samples + s) * self.n_params;
        self.values[o..o + self.n_params].iter().map(|&v| v as f64).collect()
    }

    pub fn truth_samples(&self, t: usize) -> Vec<Vec<f64>> {
        (0..self.n_samples).map(|s| self.sample(t, s)).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_f32(path, &self.values)
    }

    pub fn read(path: &Path, n_truths: usize, n_samples: usize, n_params: usize) -> Result<Self> {
        let values = read_f32(path)?;
        if values.len() != n_truths * n_samples * n_params {
            return Err(CoreError::Data(format!("{} does not hold {n_truths}x{n_samples}x{n_params} values", path.display())));
        }
        Ok(Self { n_truths, n_samples, n_params, values })
    }
}

/// Conditions for record `i` built from the dataset's stored observations.
pub fn record_conditions(model: &DenoiserModel, data: &Dataset, i: usize) -> Result<Vec<Condition<f32>>> {
    bind_events(model, data)?
        .iter()
        .map(|b| observation(&b.stats, b.model_event, data.traj_block(b.dataset_event, i)))
        .collect()
}

/// Draws `n_samples` posterior samples for every truth. Truth `i` uses the
/// chain seed derived from `(seed, i)`, so results do not depend on the
/// truth ordering or the worker count.
#[allow(clippy::too_many_arguments)]
pub fn infer_truths(
    model: &DenoiserModel,
    store: &ParamStore<f32>,
    schedule: &Schedule,
    data: &Dataset,
    truths: &[usize],
    n_samples: usize,
    seed: u64,
    start: Start,
    workers: usize,
    progress: impl Fn(usize) + Sync,
) -> Result<(SampleSet, InferManifest)> {
    let space = &data.manifest.space;
    let pool = thread_pool(workers)?;
    let runs: Vec<_> = pool.install(|| {
        truths
            .par_iter()
            .enumerate()
            .map(|(k, &i)| {
                let conds = record_conditions(model, data, i)?;
                let out =
                    sample_posterior_from(model, store, schedule, space, &conds, n_samples, seed::derive(seed, &[i as u64]), start);
                progress(k);
                out
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let np = space.len();
    let mut values = Vec::with_capacity(truths.len() * n_samples * np);
    let (mut cv, mut cs) = (0, 0);
    for r in &runs {
        cv += r.clipped_values;
        cs += r.clipped_samples;
        for s in &r.samples {
            values.extend(s.iter().map(|&v| v as f32));
        }
    }
    let total = (truths.len() * n_samples).max(1);
    let manifest = InferManifest {
        model_events: model.config.events.clone(),
        truths: truths.to_vec(),
        n_samples,
        n_params: np,
        seed,
        start,
        clipped_values: cv,
        clipped_samples: cs,
        out_of_bounds_fraction: cs as f64 / total as f64,
    };
    Ok((SampleSet { n_truths: truths.len(), n_samples, n_params: np, values }, manifest))
}

// ---------------------------------------------------------------- reports

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRmse {
    pub event: String,
    pub mean: f64,
    pub summary: Summary,
    /// Samples whose re-simulation failed; excluded from the mean.
    pub failed: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub n_truths: usize,
    pub n_samples: usize,
    /// Per parameter, over every (truth, sample) pair.
    pub rpe: Vec<Summary>,
    /// MARPE of each sample.
    pub marpe: Summary,
    pub marpe_mean: f64,
    /// Per parameter, posterior standard deviation averaged over truths.
    pub posterior_std: Vec<f64>,
    pub rmse: Vec<EventRmse>,
    /// Pairwise MI of the first truth's posterior (nats).
    pub mi: Option<Vec<Vec<f64>>>,
    pub names: Vec<String>,
}

impl EvalReport {
    pub fn rmse_for(&self, event: &str) -> Option<f64> {
        self.rmse.iter().find(|r| r.event == event).map(|r| r.mean)
    }

    pub fn posterior_std_of(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.posterior_std[i])
    }
}

struct TruthEval {
    rpes: Vec<Vec<f64>>,
    marpes: Vec<f64>,
    std: Vec<f64>,
    rmse: Vec<Vec<Option<f64>>>,
}

fn simulate_all(theta: &[f64], profiles: &[VoltageProfile]) -> Result<Vec<Trajectory>> {
    profiles.iter().map(|p| simulate(theta, p)).collect()
}

fn sample_rmse(theta: &[f64], prof: &VoltageProfile, truth: &Trajectory) -> Option<f64> {
    simulate(theta, prof).ok().filter(Trajectory::is_finite).map(|t| rmse(&t, truth))
}

fn eval_truth(space: &ParamSpace, truth: &[f64], samples: &[Vec<f64>], profiles: &[VoltageProfile]) -> Result<TruthEval> {
    let truth_trajs = simulate_all(truth, profiles)?;
    let rpes: Vec<Vec<f64>> = samples.iter().map(|s| rpe(s, truth, space)).collect();
    let marpes = rpes.iter().map(|r| marpe(r)).collect();
    let std = (0..space.len())
        .map(|j| if samples.len() > 1 { std_dev(&samples.iter().map(|s| s[j]).collect::<Vec<_>>()) } else { 0.0 })
        .collect();
    let rmse = profiles
        .iter()
        .zip(&truth_trajs)
        .map(|(p, tt)| samples.iter().map(|s| sample_rmse(s, p, tt)).collect())
        .collect();
    Ok(TruthEval { rpes, marpes, std, rmse })
}

/// Scores parameter samples against their truths. `samples[t]` holds the
/// estimates for `truths[t]` (one row for a point estimator).
pub fn evaluate(
    label: &str,
    space: &ParamSpace,
    truths: &[Vec<f64>],
    samples: &[Vec<Vec<f64>>],
    events: &[FaultSpec],
    workers: usize,
) -> Result<EvalReport> {
    if truths.len() != samples.len() || truths.is_empty() {
        return Err(CoreError::Contract("one sample set per truth required".into()));
    }
    let profiles: Vec<_> = events.iter().map(voltage_profile).collect::<Result<_>>()?;
    let pool = thread_pool(workers)?;
    let per: Vec<TruthEval> = pool.install(|| {
        truths.par_iter().zip(samples).map(|(t, s)| eval_truth(space, t, s, &profiles)).collect::<Result<_>>()
    })?;

    let k = space.len();
    let rpe = (0..k).map(|j| summarize(&per.iter().flat_map(|p| p.rpes.iter().map(move |r| r[j])).collect::<Vec<_>>())).collect();
    let all_marpe: Vec<f64> = per.iter().flat_map(|p| p.marpes.iter().copied()).collect();
    let marpe_s = summarize(&all_marpe);
    let posterior_std = (0..k).map(|j| per.iter().map(|p| p.std[j]).sum::<f64>() / per.len() as f64).collect();
    let rmse = events
        .iter()
        .enumerate()
        .map(|(e, spec)| {
            let all: Vec<Option<f64>> = per.iter().flat_map(|p| p.rmse[e].iter().copied()).collect();
            let ok: Vec<f64> = all.iter().flatten().copied().collect();
            let s = summarize(&ok);
            EventRmse { event: spec.label.as_str().to_string(), mean: s.mean, summary: s, failed: all.len() - ok.len() }
        })
        .collect();
    let mi = (samples[0].len() >= MI_MIN_SAMPLES).then(|| mi_matrix(&samples[0]));
    Ok(EvalReport {
        model: label.to_string(),
        n_truths: truths.len(),
        n_samples: samples[0].len(),
        rpe,
        marpe: marpe_s,
        marpe_mean: marpe_s.mean,
        posterior_std,
        rmse,
        mi,
        names: space.names.clone(),
    })
}

// ---------------------------------------------------------------- randomized scenarios

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OodConfig {
    pub n_ordinary: usize,
    pub n_trip: usize,
    pub n_stall: usize,
    /// Truths re-simulated per scenario (taken from the front).
    pub truths: usize,
    /// Posterior samples re-simulated per truth (taken from the front).
    pub samples_per_truth: usize,
    pub seed: u64,
}

impl Default for OodConfig {
    fn default() -> Self {
        Self { n_ordinary: 20, n_trip: 5, n_stall: 5, truths: 200, samples_per_truth: 20, seed: 7 }
    }
}

/// A randomized scenario and the class it was drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodScenario {
    pub name: String,
    pub class: FaultLabel,
    pub spec: FaultSpec,
}

fn jitter(class: FaultLabel, rng: &mut impl Rng) -> FaultSpec {
    let (v_min, clearing_ms, tau) = match class {
        FaultLabel::Ordinary => (rng.random_range(0.85..=0.95), rng.random_range(100..=170u32), 0.05),
        FaultLabel::Trip => (rng.random_range(0.62..=0.75), rng.random_range(100..=170u32), rng.random_range(0.10..=0.20)),
        _ => (rng.random_range(0.0..=0.30), rng.random_range(35..=60u32), rng.random_range(0.20..=0.30)),
    };
    let clearing_ms = clearing_ms as f64;
    FaultSpec { label: FaultLabel::Custom, v_min, onset_s: 0.5, clearing_ms, recovery_tau_s: tau }
}

/// Scenarios with depth, clearing time and recovery jittered within each
/// class. Ordinary ones never reach the trip or stall thresholds.
pub fn ood_scenarios(cfg: &OodConfig) -> Vec<OodScenario> {
    let mut out = Vec::new();
    for (class, n) in [(FaultLabel::Ordinary, cfg.n_ordinary), (FaultLabel::Trip, cfg.n_trip), (FaultLabel::Stall, cfg.n_stall)] {
        let mut rng = seed::rng(cfg.seed, &[class as u64]);
        for i in 0..n {
            out.push(OodScenario { name: format!("{}-{i:02}", class.as_str()), class, spec: jitter(class, &mut rng) });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodResult {
    pub name: String,
    pub class: FaultLabel,
    pub spec: FaultSpec,
    pub mean_rmse: f64,
    pub failed: usize,
}

/// Mean sample-vs-truth RMSE per scenario. The three reference events are
/// scored first on the same subset, named by their labels.
pub fn ood_eval(
    samples: &SampleSet,
    truths: &[Vec<f64>],
    scenarios: &[OodScenario],
    cfg: &OodConfig,
    workers: usize,
) -> Result<Vec<OodResult>> {
    let nt = cfg.truths.min(samples.n_truths).min(truths.len());
    let ns = cfg.samples_per_truth.min(samples.n_samples);
    let mut all: Vec<OodScenario> = FaultSpec::standard_events()
        .into_iter()
        .map(|s| OodScenario { name: s.label.as_str().to_string(), class: s.label, spec: s })
        .collect();
    all.extend(scenarios.iter().cloned());
    let pool = thread_pool(workers)?;
    all.iter()
        .map(|sc| {
            let prof = voltage_profile(&sc.spec)?;
            let per: Vec<Vec<Option<f64>>> = pool.install(|| {
                (0..nt)
                    .into_par_iter()
                    .map(|t| {
                        let tt = simulate(&truths[t], &prof)?;
                        Ok((0..ns).map(|s| sample_rmse(&samples.sample(t, s), &prof, &tt)).collect())
                    })
                    .collect::<Result<_>>()
            })?;
            let flat: Vec<Option<f64>> = per.into_iter().flatten().collect();
            let ok: Vec<f64> = flat.iter().flatten().copied().collect();
            Ok(OodResult {
                name: sc.name.clone(),
                class: sc.class,
                spec: sc.spec.clone(),
                mean_rmse: ok.iter().sum::<f64>() / ok.len().max(1) as f64,
                failed: flat.len() - ok.len(),
            })
        })
        .collect()
}
