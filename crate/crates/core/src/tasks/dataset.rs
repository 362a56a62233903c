//! Expert datasets: generation and the `manifest.json` + `data.bin` format.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::condition::ConditionLayout;
use super::lqr::{lqr_policy, rollout, LqrTask};
use super::waypoint::{solve_waypoint, WaypointSampler, WaypointSolverConfig};
use crate::error::{check_len, Error, Result};
use crate::io;
use crate::lti::{Dims, LtiSystem, SystemRecord};
use crate::rng;

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Lower bound applied to every per-coordinate scale.
pub const SCALE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskFamily {
    Lqr,
    Waypoint,
}

impl std::fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TaskFamily::Lqr => "lqr",
            TaskFamily::Waypoint => "waypoint",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrDatasetConfig {
    pub count: usize,
    pub horizon: usize,
    /// `x_init ~ U[-init_box, init_box]^n`.
    pub init_box: f64,
    /// `x_target ~ U[-target_box, target_box]^n`.
    pub target_box: f64,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub seed: u64,
}

impl Default for LqrDatasetConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            horizon: 30,
            init_box: 1.0,
            target_box: 4.0,
            q_diag: vec![10.0, 10.0, 1.0, 1.0],
            r_diag: vec![1.0, 1.0],
            seed: 0,
        }
    }
}

impl LqrDatasetConfig {
    pub fn task(&self, x_init: Vec<f64>, x_target: Vec<f64>) -> Result<LqrTask> {
        LqrTask::new(
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.q_diag)),
            DMatrix::from_diagonal(&DVector::from_column_slice(&self.r_diag)),
            x_target,
            x_init,
            self.horizon,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointDatasetConfig {
    pub count: usize,
    pub horizon: usize,
    pub init_box: f64,
    pub target_box: f64,
    pub waypoint_box: f64,
    pub obstacle_box: f64,
    pub radius_range: (f64, f64),
    pub waypoint_count: (usize, usize),
    pub obstacle_count: (usize, usize),
    /// Fixed intermediate waypoint times instead of random ones.
    pub waypoint_times: Option<Vec<usize>>,
    pub v_max: usize,
    pub o_max: usize,
    pub solver: WaypointSolverConfig,
    pub seed: u64,
}

impl Default for WaypointDatasetConfig {
    fn default() -> Self {
        Self {
            count: 10_000,
            horizon: 40,
            init_box: 1.0,
            target_box: 4.0,
            waypoint_box: 4.0,
            obstacle_box: 4.0,
            radius_range: (0.2, 1.0),
            waypoint_count: (1, 3),
            obstacle_count: (1, 3),
            waypoint_times: None,
            v_max: 4,
            o_max: 4,
            solver: WaypointSolverConfig::default(),
            seed: 0,
        }
    }
}

impl WaypointDatasetConfig {
    pub fn sampler(&self) -> WaypointSampler {
        WaypointSampler {
            horizon: self.horizon,
            init_box: self.init_box,
            target_box: self.target_box,
            waypoint_box: self.waypoint_box,
            obstacle_box: self.obstacle_box,
            radius_range: self.radius_range,
            waypoint_count: self.waypoint_count,
            obstacle_count: self.obstacle_count,
            waypoint_times: self.waypoint_times.clone(),
        }
    }

    pub fn layout(&self, n: usize) -> ConditionLayout {
        ConditionLayout::Waypoint {
            n,
            v_max: self.v_max,
            o_max: self.o_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub family: TaskFamily,
    pub dims: Dims,
    pub count: usize,
    pub tau_len: usize,
    pub cond_len: usize,
    pub condition: ConditionLayout,
    pub condition_fields: Vec<String>,
    /// Per-coordinate standard deviation of the trajectories, floored.
    pub scales: Vec<f64>,
    pub seed: u64,
    pub system: SystemRecord,
    /// Generator configuration, verbatim.
    pub generator: serde_json::Value,
    /// Oracle objective per record (waypoint family only).
    pub objectives: Option<Vec<f64>>,
    pub data_sha256: String,
}

/// Records of flattened `tau0` followed by the condition vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    manifest: DatasetManifest,
    data: Vec<f64>,
}

impl Dataset {
    /// Assembles a dataset from records, computing scales and digest.
    pub fn from_records(
        family: TaskFamily,
        system: &LtiSystem,
        dims: Dims,
        condition: ConditionLayout,
        records: &[(Vec<f64>, Vec<f64>)],
        seed: u64,
        generator: serde_json::Value,
        objectives: Option<Vec<f64>>,
    ) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::domain("dataset must contain at least one record"));
        }
        let tau_len = dims.flat_len();
        let cond_len = condition.len();
        let mut data = Vec::with_capacity(records.len() * (tau_len + cond_len));
        for (tau, cond) in records {
            check_len("dataset trajectory", tau_len, tau.len())?;
            check_len("dataset condition", cond_len, cond.len())?;
            data.extend_from_slice(tau);
            data.extend_from_slice(cond);
        }
        let trajectories: Vec<&[f64]> = records.iter().map(|(t, _)| t.as_slice()).collect();
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            family,
            dims,
            count: records.len(),
            tau_len,
            cond_len,
            condition,
            condition_fields: condition.field_names(),
            scales: coordinate_scales(&trajectories),
            seed,
            system: SystemRecord::from(system),
            generator,
            objectives,
            data_sha256: io::sha256_hex(&io::encode_f64s(&data)),
        };
        Ok(Self { manifest, data })
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.count
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.count == 0
    }

    pub fn dims(&self) -> Dims {
        self.manifest.dims
    }

    pub fn scales(&self) -> &[f64] {
        &self.manifest.scales
    }

    pub fn layout(&self) -> ConditionLayout {
        self.manifest.condition
    }

    fn record_len(&self) -> usize {
        self.manifest.tau_len + self.manifest.cond_len
    }

    pub fn trajectory(&self, i: usize) -> &[f64] {
        let start = i * self.record_len();
        &self.data[start..start + self.manifest.tau_len]
    }

    pub fn condition(&self, i: usize) -> &[f64] {
        let start = i * self.record_len() + self.manifest.tau_len;
        &self.data[start..start + self.manifest.cond_len]
    }

    pub fn system(&self) -> Result<LtiSystem> {
        self.manifest.system.build()
    }

    pub fn data_bytes(&self) -> Vec<u8> {
        io::encode_f64s(&self.data)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_bytes(&dir.join("data.bin"), &self.data_bytes())?;
        io::write_json(&dir.join("manifest.json"), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = io::read_bytes(&dir.join("manifest.json"))?;
        let data = io::read_bytes(&dir.join("data.bin"))?;
        Self::from_bytes(&manifest, &data)
    }

    /// Decodes and validates a dataset from its two files' contents.
    pub fn from_bytes(manifest: &[u8], data: &[u8]) -> Result<Self> {
        let manifest: DatasetManifest = io::from_json_bytes(manifest, "dataset manifest")?;
        io::check_version("dataset manifest", manifest.format_version, DATASET_FORMAT_VERSION)?;
        let bad = |reason: String| Error::format("dataset manifest", reason);
        if manifest.count == 0 {
            return Err(bad("count is zero".into()));
        }
        if manifest.tau_len != manifest.dims.flat_len() {
            return Err(bad(format!("tau_len {} does not match dims", manifest.tau_len)));
        }
        if manifest.cond_len != manifest.condition.len() {
            return Err(bad(format!("cond_len {} does not match layout", manifest.cond_len)));
        }
        if manifest.condition.state_dim() != manifest.dims.n || manifest.system.n != manifest.dims.n
            || manifest.system.m != manifest.dims.m
        {
            return Err(bad("state/input sizes disagree between dims, layout and system".into()));
        }
        if manifest.scales.len() != manifest.tau_len {
            return Err(bad(format!("{} scales for {} coordinates", manifest.scales.len(), manifest.tau_len)));
        }
        if manifest.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(bad("scales must be finite and positive".into()));
        }
        if let Some(obj) = &manifest.objectives {
            if obj.len() != manifest.count {
                return Err(bad(format!("{} objectives for {} records", obj.len(), manifest.count)));
            }
        }
        manifest.system.build().map_err(|e| bad(e.to_string()))?;
        let expected = manifest
            .count
            .checked_mul(manifest.tau_len + manifest.cond_len)
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| bad("record count overflows".into()))?;
        if data.len() != expected {
            return Err(Error::format(
                "dataset data",
                format!("{} bytes, expected {expected}", data.len()),
            ));
        }
        if io::sha256_hex(data) != manifest.data_sha256 {
            return Err(Error::format("dataset data", "sha256 does not match manifest"));
        }
        let data = io::decode_f64s(data, "dataset data")?;
        Ok(Self { manifest, data })
    }
}

/// Population standard deviation per coordinate, floored at [`SCALE_FLOOR`].
pub fn coordinate_scales(trajectories: &[&[f64]]) -> Vec<f64> {
    let len = trajectories[0].len();
    let count = trajectories.len() as f64;
    (0..len)
        .map(|k| {
            let mean = trajectories.iter().map(|t| t[k]).sum::<f64>() / count;
            let var = trajectories.iter().map(|t| (t[k] - mean).powi(2)).sum::<f64>() / count;
            var.sqrt().max(SCALE_FLOOR)
        })
        .collect()
}

/// Draws one LQR instance `(x_init, x_target)` from stream `index`.
pub fn lqr_instance(cfg: &LqrDatasetConfig, n: usize, index: u64) -> (Vec<f64>, Vec<f64>, rng::Stream) {
    let mut s = rng::stream(cfg.seed, rng::tag::TRAIN_SET, index);
    let x_init = (0..n).map(|_| rng::symmetric_uniform(&mut s, cfg.init_box)).collect();
    let x_target = (0..n).map(|_| rng::symmetric_uniform(&mut s, cfg.target_box)).collect();
    (x_init, x_target, s)
}

/// Noisy closed-loop rollouts of the tracking LQR policy.
pub fn generate_lqr_dataset(sys: &LtiSystem, cfg: &LqrDatasetConfig) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(Error::domain("dataset count must be at least 1"));
    }
    let n = sys.state_dim();
    check_len("Q diagonal", n, cfg.q_diag.len())?;
    check_len("R diagonal", sys.input_dim(), cfg.r_diag.len())?;
    let dims = sys.dims(cfg.horizon);
    let layout = ConditionLayout::Lqr { n };
    let records = (0..cfg.count)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let (x_init, x_target, mut s) = lqr_instance(cfg, n, i as u64);
            let task = cfg.task(x_init.clone(), x_target.clone())?;
            let policy = lqr_policy(sys, &task)?;
            let mut noise = rng::normal_vec(&mut s, cfg.horizon * n);
            noise.iter_mut().for_each(|w| *w *= sys.noise_std());
            let traj = rollout(sys, &policy, &x_init, &noise)?;
            Ok((traj.flatten(), layout.encode_lqr(&x_init, &x_target)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::from_records(
        TaskFamily::Lqr,
        sys,
        dims,
        layout,
        &records,
        cfg.seed,
        serde_json::to_value(cfg).expect("config serializes"),
        None,
    )
}

/// Numerically solved waypoint tasks on a noiseless system.
pub fn generate_waypoint_dataset(sys: &LtiSystem, cfg: &WaypointDatasetConfig) -> Result<Dataset> {
    if cfg.count == 0 {
        return Err(Error::domain("dataset count must be at least 1"));
    }
    let n = sys.state_dim();
    let dims = sys.dims(cfg.horizon);
    let layout = cfg.layout(n);
    let sampler = cfg.sampler();
    let solved = (0..cfg.count)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>, f64)> {
            let mut s = rng::stream(cfg.seed, rng::tag::TRAIN_SET, i as u64);
            let task = sampler.sample(&mut s, n)?;
            let solver = WaypointSolverConfig {
                seed: rng::derive_seed(cfg.seed, i as u64),
                ..cfg.solver.clone()
            };
            let sol = solve_waypoint(sys, &task, &solver)
                .map_err(|e| Error::Numerical(format!("waypoint instance {i}: {e}")))?;
            Ok((sol.trajectory.flatten(), layout.encode_waypoint(&task)?, sol.objective))
        })
        .collect::<Result<Vec<_>>>()?;
    let objectives = solved.iter().map(|r| r.2).collect();
    let records: Vec<_> = solved.into_iter().map(|(t, c, _)| (t, c)).collect();
    Dataset::from_records(
        TaskFamily::Waypoint,
        sys,
        dims,
        layout,
        &records,
        cfg.seed,
        serde_json::to_value(cfg).expect("config serializes"),
        Some(objectives),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::simulate_noiseless;

    fn small_lqr(count: usize, seed: u64) -> LqrDatasetConfig {
        LqrDatasetConfig {
            count,
            horizon: 10,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_single_record_is_policy_rollout() {
        let sys = LtiSystem::double_integrator(0.1, 0.0).unwrap();
        let cfg = small_lqr(1, 5);
        let ds = generate_lqr_dataset(&sys, &cfg).unwrap();
        let (x_init, x_target, _) = lqr_instance(&cfg, 4, 0);
        let policy = lqr_policy(&sys, &cfg.task(x_init.clone(), x_target.clone()).unwrap()).unwrap();
        let expected = rollout(&sys, &policy, &x_init, &[0.0; 40]).unwrap().flatten();
        assert_eq!(ds.trajectory(0), expected.as_slice());
        assert_eq!(ds.condition(0), [x_init, x_target].concat().as_slice());
        assert!(ds.scales().iter().all(|&s| s == SCALE_FLOOR));
    }

    #[test]
    fn paper_shape() {
        let sys = LtiSystem::double_integrator(0.1, 1.0).unwrap();
        let cfg = LqrDatasetConfig {
            count: 50,
            ..Default::default()
        };
        let ds = generate_lqr_dataset(&sys, &cfg).unwrap();
        assert_eq!((ds.len(), ds.trajectory(0).len(), ds.condition(0).len()), (50, 184, 8));
    }

    #[test]
    fn generation_is_deterministic_and_seeded() {
        let sys = LtiSystem::double_integrator(0.1, 1.0).unwrap();
        let a = generate_lqr_dataset(&sys, &small_lqr(20, 1)).unwrap();
        let b = generate_lqr_dataset(&sys, &small_lqr(20, 1)).unwrap();
        let c = generate_lqr_dataset(&sys, &small_lqr(20, 2)).unwrap();
        assert_eq!(a.data_bytes(), b.data_bytes());
        assert_ne!(a.data_bytes(), c.data_bytes());
    }

    #[test]
    fn save_load_round_trip() {
        let sys = LtiSystem::double_integrator(0.1, 1.0).unwrap();
        let ds = generate_lqr_dataset(&sys, &small_lqr(5, 3)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn corrupted_data_rejected() {
        let sys = LtiSystem::double_integrator(0.1, 1.0).unwrap();
        let ds = generate_lqr_dataset(&sys, &small_lqr(3, 3)).unwrap();
        let manifest = io::to_json_bytes(ds.manifest());
        let mut data = ds.data_bytes();
        assert!(Dataset::from_bytes(&manifest, &data[..data.len() - 8]).is_err());
        data[0] ^= 1;
        assert!(Dataset::from_bytes(&manifest, &data).is_err());
        assert!(Dataset::from_bytes(b"{}", &ds.data_bytes()).is_err());
    }

    #[test]
    fn waypoint_records_follow_dynamics() {
        let sys = LtiSystem::double_integrator(0.1, 0.0).unwrap();
        let cfg = WaypointDatasetConfig {
            count: 3,
            horizon: 20,
            solver: WaypointSolverConfig {
                restarts: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let ds = generate_waypoint_dataset(&sys, &cfg).unwrap();
        let dims = ds.dims();
        for i in 0..3 {
            let tau = ds.trajectory(i);
            let task = ds.layout().decode_waypoint(ds.condition(i), 20).unwrap();
            let controls = &tau[dims.state_len()..];
            let again = simulate_noiseless(&sys, &task.x_init, controls).unwrap().flatten();
            assert!(tau.iter().zip(&again).all(|(a, b)| (a - b).abs() < 1e-12));
        }
        assert_eq!(ds.manifest().objectives.as_ref().unwrap().len(), 3);
    }
}
