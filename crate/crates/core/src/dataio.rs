//! Dataset generation and the on-disk format: `manifest.json`,
//! `params.f32` (n x 30) and one `traj_<label>.f32` (n x 2 x 512) per event,
//! all little-endian `f32`.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clm::{simulate, voltage_profile, FaultSpec, Trajectory, N_OUT};
use crate::error::{CoreError, Result};
use crate::params::ParamSpace;
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;
/// Values per record per event: two channels of `N_OUT` samples.
pub const TRAJ_LEN: usize = 2 * N_OUT;
pub const STD_FLOOR: f64 = 1e-8;
const MAX_ATTEMPTS: u64 = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the standard deviation hit the floor.
    pub degenerate: bool,
}

impl ChannelStats {
    pub fn from_values<I: Iterator<Item = f64>>(values: I) -> Self {
        let mut n = 0usize;
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for v in values {
            n += 1;
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        let var = if n > 1 { m2 / (n - 1) as f64 } else { 0.0 };
        let std = var.sqrt();
        Self { mean, std: std.max(STD_FLOOR), degenerate: std < STD_FLOOR }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }
}

/// Standardization statistics of one event's two channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStats {
    pub label: String,
    pub p: ChannelStats,
    pub q: ChannelStats,
}

impl EventStats {
    /// Standardizes a `[p(512), q(512)]` block into the channel-last
    /// interleaved layout the trajectory encoder reads.
    pub fn standardize_channel_last(&self, block: &[f32], out: &mut Vec<f32>) {
        let (p, q) = block.split_at(N_OUT);
        for (&a, &b) in p.iter().zip(q) {
            out.push(self.p.apply(a as f64) as f32);
            out.push(self.q.apply(b as f64) as f32);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub n_records: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub events: Vec<FaultSpec>,
    pub space: ParamSpace,
    /// Per-event channel statistics over the training split only.
    pub stats: Vec<EventStats>,
    /// Draws that failed to simulate and were replaced.
    pub resampled: usize,
    pub simulator: serde_json::Value,
}

impl DatasetManifest {
    pub fn event_index(&self, label: &str) -> Option<usize> {
        self.events.iter().position(|e| e.label.as_str() == label)
    }

    pub fn stats_for(&self, label: &str) -> Option<&EventStats> {
        self.stats.iter().find(|s| s.label == label)
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Row-major `n x 30` physical parameters.
    pub params: Vec<f32>,
    /// One `n x 2 x 512` block per event, in manifest order.
    pub trajs: Vec<Vec<f32>>,
}

/// Surrogate constants that are not identified parameters.
pub fn simulator_constants() -> serde_json::Value {
    use crate::clm::*;
    serde_json::json!({
        "dt": DT, "decimate": DECIMATE, "n_out": N_OUT,
        "motor_h": MOTOR_H, "motor_rr": MOTOR_RR, "motor_xp": MOTOR_XP, "motor_t0": MOTOR_T0, "tp0_a": TP0_A,
        "v_stall": V_STALL, "t_stall_ms": T_STALL_MS, "v_rst": V_RST, "t_rst_ms": T_RST_MS,
        "v_d1": V_D1, "v_d2": V_D2,
    })
}

/// Parameters for record `index`, draw `attempt`; rounded to `f32` so the
/// stored values replay exactly.
pub fn record_params(space: &ParamSpace, seed: u64, index: usize, attempt: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed, &[index as u64, attempt]);
    let mut theta = space.sample_uniform(&mut rng);
    space.round_to_f32(&mut theta);
    theta
}

/// First-attempt parameter draws for records `0..n`.
pub fn sample_params(space: &ParamSpace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    (0..n).map(|i| record_params(space, seed, i, 0)).collect()
}

pub fn n_train_for(n: usize) -> usize {
    n * 5 / 6
}

pub fn traj_to_f32(t: &Trajectory, out: &mut Vec<f32>) {
    out.extend(t.p.iter().map(|&v| v as f32));
    out.extend(t.q.iter().map(|&v| v as f32));
}

struct Record {
    theta: Vec<f64>,
    trajs: Vec<Trajectory>,
    attempts: u64,
}

fn make_record(space: &ParamSpace, events: &[crate::clm::VoltageProfile], seed: u64, index: usize) -> Result<Record> {
    for attempt in 0..MAX_ATTEMPTS {
        let theta = record_params(space, seed, index, attempt);
        let trajs: Result<Vec<Trajectory>> = events.iter().map(|prof| simulate(&theta, prof)).collect();
        match trajs {
            Ok(t) if t.iter().all(Trajectory::is_finite) => return Ok(Record { theta, trajs: t, attempts: attempt }),
            Ok(_) | Err(CoreError::Diverged { .. }) | Err(CoreError::Infeasible(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(CoreError::Numerical(format!("record {index}: no feasible draw in {MAX_ATTEMPTS} attempts")))
}

pub fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CoreError::Config(format!("thread pool: {e}")))
}

/// Generates `n` records under every event. Records are independent and
/// are computed in parallel; results are assembled by index.
pub fn generate(space: &ParamSpace, events: &[FaultSpec], n: usize, seed: u64, workers: usize) -> Result<Dataset> {
    space.validate()?;
    if n < 6 {
        return Err(CoreError::Config("a dataset needs at least 6 records for the 5:1 split".into()));
    }
    let labels: Vec<&str> = events.iter().map(|e| e.label.as_str()).collect();
    for (i, l) in labels.iter().enumerate() {
        if labels[..i].contains(l) {
            return Err(CoreError::Config(format!("event label {l} repeated")));
        }
    }
    let profiles: Vec<_> = events.iter().map(voltage_profile).collect::<Result<_>>()?;
    let pool = thread_pool(workers)?;
    let records: Vec<Record> =
        pool.install(|| (0..n).into_par_iter().map(|i| make_record(space, &profiles, seed, i)).collect::<Result<_>>())?;

    let mut params = Vec::with_capacity(n * space.len());
    let mut trajs = vec![Vec::with_capacity(n * TRAJ_LEN); events.len()];
    let mut resampled = 0usize;
    for r in &records {
        params.extend(r.theta.iter().map(|&v| v as f32));
        for (e, t) in r.trajs.iter().enumerate() {
            traj_to_f32(t, &mut trajs[e]);
        }
        resampled += r.attempts as usize;
    }
    let n_train = n_train_for(n);
    let stats = events.iter().zip(&trajs).map(|(e, block)| event_stats(e.label.as_str(), block, n_train)).collect();
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        n_records: n,
        n_train,
        n_test: n - n_train,
        seed,
        events: events.to_vec(),
        space: space.clone(),
        stats,
        resampled,
        simulator: simulator_constants(),
    };
    Ok(Dataset { manifest, params, trajs })
}

/// Channel statistics over records `0..n_train`.
pub fn event_stats(label: &str, block: &[f32], n_train: usize) -> EventStats {
    let recs = &block[..n_train * TRAJ_LEN];
    let chan = |c: usize| {
        ChannelStats::from_values(
            recs.chunks_exact(TRAJ_LEN).flat_map(move |r| r[c * N_OUT..(c + 1) * N_OUT].iter().map(|&v| v as f64)),
        )
    };
    EventStats { label: label.to_string(), p: chan(0), q: chan(1) }
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.manifest.n_records
    }

    pub fn n_params(&self) -> usize {
        self.manifest.space.len()
    }

    pub fn theta(&self, i: usize) -> Vec<f64> {
        let k = self.n_params();
        self.params[i * k..(i + 1) * k].iter().map(|&v| v as f64).collect()
    }

    /// Raw `[p(512), q(512)]` block for record `i` under event `e`.
    pub fn traj_block(&self, e: usize, i: usize) -> &[f32] {
        &self.trajs[e][i * TRAJ_LEN..(i + 1) * TRAJ_LEN]
    }

    pub fn trajectory(&self, e: usize, i: usize) -> Trajectory {
        let b = self.traj_block(e, i);
        Trajectory {
            p: b[..N_OUT].iter().map(|&v| v as f64).collect(),
            q: b[N_OUT..].iter().map(|&v| v as f64).collect(),
        }
    }

    pub fn train_indices(&self) -> std::ops::Range<usize> {
        0..self.manifest.n_train
    }

    pub fn test_indices(&self) -> std::ops::Range<usize> {
        self.manifest.n_train..self.manifest.n_records
    }

    pub fn write(&self, dir: &Path, overwrite: bool) -> Result<()> {
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() && !overwrite {
            return Err(CoreError::Data(format!("{} already holds a dataset", dir.display())));
        }
        fs::create_dir_all(dir)?;
        write_f32(&dir.join("params.f32"), &self.params)?;
        for (e, block) in self.manifest.events.iter().zip(&self.trajs) {
            write_f32(&dir.join(format!("traj_{}.f32", e.label.as_str())), block)?;
        }
        fs::write(&manifest_path, serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let manifest: DatasetManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CoreError::Data(format!("unsupported dataset format {}", manifest.format_version)));
        }
        let n = manifest.n_records;
        let params = read_f32(&dir.join("params.f32"))?;
        if params.len() != n * manifest.space.len() {
            return Err(CoreError::Data("params.f32 size does not match manifest".into()));
        }
        let mut trajs = Vec::new();
        for e in &manifest.events {
            let block = read_f32(&dir.join(format!("traj_{}.f32", e.label.as_str())))?;
            if block.len() != n * TRAJ_LEN {
                return Err(CoreError::Data(format!("traj_{}.f32 size does not match manifest", e.label.as_str())));
            }
            trajs.push(block);
        }
        Ok(Self { manifest, params, trajs })
    }
}

pub fn write_f32(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_f32(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(CoreError::Data(format!("{} is not a whole number of f32 values", path.display())));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

/// Writes a trajectory as `<stem>.f32` (p then q) with a JSON sidecar header.
pub fn export_trajectory(stem: &Path, traj: &Trajectory) -> Result<()> {
    let mut data = Vec::with_capacity(TRAJ_LEN);
    traj_to_f32(traj, &mut data);
    write_f32(&stem.with_extension("f32"), &data)?;
    let header = serde_json::json!({"dt_out": crate::clm::DT_OUT, "n": N_OUT, "channels": ["p", "q"]});
    fs::write(stem.with_extension("json"), serde_json::to_vec_pretty(&header)?)?;
    Ok(())
}
