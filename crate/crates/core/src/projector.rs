//! Orthogonal projectors onto the admissible-trajectory subspace.
//!
//! Projections act on normalized trajectories `D^-1 tau` (`D = diag(scales)`),
//! so the subspace is `image(D^-1 F)` for the model-based projector and
//! `image(D^-1 [H_{T+1}(x); H_T(u)])` for the data-based one. Hankel rows
//! come out as `x(0..=T)` then `u(0..T)`, the same order as a flattened
//! trajectory.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::io;
use crate::linalg::{self, gemm, pivoted_qr_basis};
use crate::lti::{simulate, Dims, LtiSystem, SystemRecord, TrajectoryMap};
use crate::rng;

/// Relative rank tolerance against the largest singular value.
pub const RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorSource {
    Model,
    Hankel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    p: DMatrix<f64>,
    basis: DMatrix<f64>,
    source: ProjectorSource,
    /// Rank of the admissible subspace, `n + Tm`.
    expected_rank: usize,
    warnings: Vec<String>,
}

impl Projector {
    /// Projector onto the column space of `m`, using columns rescaled to
    /// unit norm (which leaves the column space unchanged).
    fn from_spanning(m: &DMatrix<f64>, source: ProjectorSource, expected_rank: usize) -> Self {
        let mut cols = m.clone();
        for mut c in cols.column_iter_mut() {
            let nrm = c.norm();
            if nrm > 0.0 {
                c /= nrm;
            }
        }
        let qr = pivoted_qr_basis(&cols, RANK_TOL);
        let mut warnings = Vec::new();
        if qr.rank < expected_rank {
            warnings.push(format!(
                "detected rank {} below the admissible dimension {expected_rank}",
                qr.rank
            ));
        }
        let p = &qr.basis * qr.basis.transpose();
        Self {
            p,
            basis: qr.basis,
            source,
            expected_rank,
            warnings,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn source(&self) -> ProjectorSource {
        self.source
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn expected_rank(&self) -> usize {
        self.expected_rank
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_len("projector input", self.dim(), v.len())?;
        let mut out = vec![0.0; v.len()];
        self.apply_into(v, &mut out, 1);
        Ok(out)
    }

    /// `out = P x` for `batch` item-major vectors.
    pub(crate) fn apply_into(&self, x: &[f64], out: &mut [f64], batch: usize) {
        let d = self.dim();
        gemm((d, d, batch), self.p.as_slice(), (1, d), x, (1, d), 0.0, out, (1, d));
    }

    /// `|(I - P) v|`.
    pub fn residual(&self, v: &[f64]) -> Result<f64> {
        let pv = self.apply(v)?;
        Ok(v.iter().zip(&pv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// Spectral norm of `P - other`.
    pub fn distance(&self, other: &Projector) -> Result<f64> {
        check_len("projector dimension", self.dim(), other.dim())?;
        Ok(linalg::symmetric_spectral_norm(&(&self.p - &other.p)))
    }
}

/// How a denoised iterate is pulled toward the admissible subspace. Both
/// rules shrink the inadmissible component `(I - P) tau_hat` by exactly
/// `sqrt(beta)` and reduce to `P tau_hat` at `beta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionRule {
    /// `P tau_hat + sqrt(beta) (I - P) tau_hat`: the admissible component is
    /// left unchanged.
    #[default]
    Residual,
    /// `(sqrt(1 - beta) P + sqrt(beta) I) tau_hat`: the admissible component
    /// is multiplied by `sqrt(1 - beta) + sqrt(beta) >= 1` at every step,
    /// which compounds over the reverse process.
    Literal,
}

/// Scaled projection of `tau_hat` with weight `beta`.
pub fn scaled_project(proj: &Projector, tau_hat: &[f64], beta: f64, rule: ProjectionRule) -> Result<Vec<f64>> {
    check_beta(beta)?;
    let mut out = proj.apply(tau_hat)?;
    blend(&mut out, tau_hat, beta, rule);
    Ok(out)
}

pub(crate) fn check_beta(beta: f64) -> Result<()> {
    if (0.0..=1.0).contains(&beta) {
        Ok(())
    } else {
        Err(Error::domain(format!("projection weight beta = {beta} outside [0, 1]")))
    }
}

/// Turns `P tau_hat` in `out` into the scaled projection.
pub(crate) fn blend(out: &mut [f64], tau_hat: &[f64], beta: f64, rule: ProjectionRule) {
    let b = beta.sqrt();
    if b == 0.0 {
        return;
    }
    let a = match rule {
        ProjectionRule::Residual => 1.0 - b,
        ProjectionRule::Literal => (1.0 - beta).sqrt(),
    };
    for (o, t) in out.iter_mut().zip(tau_hat) {
        *o = a * *o + b * t;
    }
}

fn check_scales(scales: &[f64], dims: Dims) -> Result<()> {
    check_len("projector scales", dims.flat_len(), scales.len())?;
    if scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::domain("scales must be finite and positive"));
    }
    Ok(())
}

fn scale_rows(m: &mut DMatrix<f64>, scales: &[f64]) {
    for (mut row, s) in m.row_iter_mut().zip(scales) {
        row /= *s;
    }
}

/// Projector onto `image(D^-1 F)`.
pub fn model_projector(map: &TrajectoryMap, scales: &[f64]) -> Result<Projector> {
    check_scales(scales, map.dims)?;
    let mut f = map.f.clone();
    scale_rows(&mut f, scales);
    Ok(Projector::from_spanning(&f, ProjectorSource::Model, map.dims.free_len()))
}

/// Block-Hankel matrix of a `K x d` item-major series: `depth * d` rows and
/// `K - depth + 1` columns, column `j` stacking `series[j..j + depth]`.
pub fn hankel(series: &[f64], d: usize, depth: usize) -> Result<DMatrix<f64>> {
    if d == 0 || !series.len().is_multiple_of(d) {
        return Err(Error::domain("series length is not a multiple of its width"));
    }
    let k = series.len() / d;
    if depth == 0 || depth > k {
        return Err(Error::domain(format!("Hankel depth {depth} needs 1..={k} samples")));
    }
    let cols = k - depth + 1;
    Ok(DMatrix::from_fn(depth * d, cols, |r, c| series[c * d + r]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersistencyReport {
    pub is_pe: bool,
    pub rank: usize,
    pub required_rank: usize,
}

/// Whether `H_order(u)` has full row rank `m * order`.
pub fn persistency_check(controls: &[f64], m: usize, order: usize) -> Result<PersistencyReport> {
    let h = hankel(controls, m, order)?;
    let required_rank = m * order;
    if h.ncols() < required_rank {
        return Err(Error::domain(format!(
            "order {order} needs at least {} input samples, got {}",
            required_rank + order - 1,
            controls.len() / m
        )));
    }
    let sv = h.transpose().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = if smax == 0.0 {
        0
    } else {
        sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
    };
    Ok(PersistencyReport {
        is_pe: rank == required_rank,
        rank,
        required_rank,
    })
}

pub const EXPERIMENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Number of input samples `S`.
    pub length: usize,
    pub input_std: f64,
    pub init_std: f64,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            length: 100,
            input_std: 1.0,
            init_std: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub length: usize,
    pub system: Option<SystemRecord>,
    pub config: Option<ExperimentConfig>,
    pub data_sha256: String,
}

/// One recorded experiment `x(0..=S)`, `u(0..S)`, both item-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub n: usize,
    pub m: usize,
    pub states: Vec<f64>,
    pub controls: Vec<f64>,
    pub system: Option<SystemRecord>,
    pub config: Option<ExperimentConfig>,
}

impl Experiment {
    pub fn new(n: usize, m: usize, states: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 || !controls.len().is_multiple_of(m) {
            return Err(Error::domain("experiment sizes inconsistent"));
        }
        let length = controls.len() / m;
        check_len("experiment states", (length + 1) * n, states.len())?;
        if states.iter().chain(&controls).any(|v| !v.is_finite()) {
            return Err(Error::domain("experiment contains non-finite values"));
        }
        Ok(Self {
            n,
            m,
            states,
            controls,
            system: None,
            config: None,
        })
    }

    /// Rollout with Gaussian inputs and the system's own process noise.
    pub fn generate(sys: &LtiSystem, cfg: &ExperimentConfig) -> Result<Self> {
        let n = sys.state_dim();
        let m = sys.input_dim();
        let mut s = rng::stream(cfg.seed, rng::tag::EXPERIMENT, 0);
        let x0: Vec<f64> = rng::normal_vec(&mut s, n).iter().map(|v| v * cfg.init_std).collect();
        let u: Vec<f64> = rng::normal_vec(&mut s, cfg.length * m).iter().map(|v| v * cfg.input_std).collect();
        let w: Vec<f64> = rng::normal_vec(&mut s, cfg.length * n).iter().map(|v| v * sys.noise_std()).collect();
        let traj = simulate(sys, &x0, &u, &w)?;
        let mut exp = Self::new(n, m, traj.states().to_vec(), u)?;
        exp.system = Some(SystemRecord::from(sys));
        exp.config = Some(cfg.clone());
        Ok(exp)
    }

    pub fn length(&self) -> usize {
        self.controls.len() / self.m
    }

    fn data(&self) -> Vec<u8> {
        io::encode_f64s(&[self.states.as_slice(), self.controls.as_slice()].concat())
    }

    pub fn manifest(&self) -> ExperimentManifest {
        ExperimentManifest {
            format_version: EXPERIMENT_FORMAT_VERSION,
            n: self.n,
            m: self.m,
            length: self.length(),
            system: self.system.clone(),
            config: self.config.clone(),
            data_sha256: io::sha256_hex(&self.data()),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        io::write_bytes(&dir.join("data.bin"), &self.data())?;
        io::write_json(&dir.join("manifest.json"), &self.manifest())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = io::read_bytes(&dir.join("manifest.json"))?;
        let data = io::read_bytes(&dir.join("data.bin"))?;
        Self::from_bytes(&manifest, &data)
    }

    pub fn from_bytes(manifest: &[u8], data: &[u8]) -> Result<Self> {
        let man: ExperimentManifest = io::from_json_bytes(manifest, "experiment manifest")?;
        io::check_version("experiment manifest", man.format_version, EXPERIMENT_FORMAT_VERSION)?;
        let bad = |r: String| Error::format("experiment manifest", r);
        if man.n == 0 || man.m == 0 {
            return Err(bad("state and input sizes must be positive".into()));
        }
        let count = man
            .length
            .checked_add(1)
            .and_then(|l| l.checked_mul(man.n))
            .and_then(|s| man.length.checked_mul(man.m).and_then(|c| s.checked_add(c)))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| bad("length overflows".into()))?;
        if data.len() != count {
            return Err(Error::format("experiment data", format!("{} bytes, expected {count}", data.len())));
        }
        if io::sha256_hex(data) != man.data_sha256 {
            return Err(Error::format("experiment data", "sha256 does not match manifest"));
        }
        if let Some(sys) = &man.system {
            if sys.n != man.n || sys.m != man.m {
                return Err(bad("system sizes disagree with the experiment".into()));
            }
            sys.build().map_err(|e| bad(e.to_string()))?;
        }
        let values = io::decode_f64s(data, "experiment data")?;
        let split = (man.length + 1) * man.n;
        let mut exp = Self::new(man.n, man.m, values[..split].to_vec(), values[split..].to_vec())
            .map_err(|e| bad(e.to_string()))?;
        exp.system = man.system;
        exp.config = man.config;
        Ok(exp)
    }

    /// `[H_{T+1}(x); H_T(u)]`, rows in flattened-trajectory order.
    pub fn stacked_hankel(&self, horizon: usize) -> Result<DMatrix<f64>> {
        let dims = Dims {
            n: self.n,
            m: self.m,
            horizon,
        };
        let s = self.length();
        if horizon < 1 || s < horizon {
            return Err(Error::domain(format!("experiment of length {s} shorter than horizon {horizon}")));
        }
        let hx = hankel(&self.states, self.n, horizon + 1)?;
        let hu = hankel(&self.controls, self.m, horizon)?;
        let mut h = DMatrix::zeros(dims.flat_len(), hx.ncols());
        h.view_mut((0, 0), (hx.nrows(), hx.ncols())).copy_from(&hx);
        h.view_mut((hx.nrows(), 0), (hu.nrows(), hu.ncols())).copy_from(&hu);
        Ok(h)
    }
}

/// Minimum experiment length for `[H_{T+1}(x); H_T(u)]` to have `n + Tm`
/// columns.
pub fn min_experiment_length(dims: Dims) -> usize {
    dims.free_len() + dims.horizon - 1
}

/// Projector onto `image(D^-1 [H_{T+1}(x); H_T(u)])`.
pub fn data_projector(exp: &Experiment, horizon: usize, scales: &[f64]) -> Result<Projector> {
    let dims = Dims {
        n: exp.n,
        m: exp.m,
        horizon,
    };
    check_scales(scales, dims)?;
    let need = min_experiment_length(dims);
    if exp.length() < need {
        return Err(Error::domain(format!(
            "experiment length {} too short for horizon {horizon}: need S >= n + Tm + T - 1 = {need}",
            exp.length()
        )));
    }
    let mut h = exp.stacked_hankel(horizon)?;
    scale_rows(&mut h, scales);
    let proj = Projector::from_spanning(&h, ProjectorSource::Hankel, dims.free_len());
    if proj.rank() == 0 {
        return Err(Error::domain("experiment data has rank zero; inputs are not exciting"));
    }
    Ok(proj)
}

pub const PROJECTOR_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectorHeader {
    pub format_version: u32,
    pub source: ProjectorSource,
    pub dim: usize,
    pub rank: usize,
    pub expected_rank: usize,
    /// Blob layout: `P` (dim x dim) then the basis (dim x rank), both
    /// column-major.
    pub layout: String,
    pub warnings: Vec<String>,
    pub scales_sha256: String,
    pub data_sha256: String,
}

impl Projector {
    pub fn header(&self, scales: &[f64]) -> ProjectorHeader {
        ProjectorHeader {
            format_version: PROJECTOR_FORMAT_VERSION,
            source: self.source,
            dim: self.dim(),
            rank: self.rank(),
            expected_rank: self.expected_rank,
            layout: "P then basis, column-major".into(),
            warnings: self.warnings.clone(),
            scales_sha256: io::sha256_hex(&io::encode_f64s(scales)),
            data_sha256: io::sha256_hex(&self.blob()),
        }
    }

    fn blob(&self) -> Vec<u8> {
        io::encode_f64s(&[self.p.as_slice(), self.basis.as_slice()].concat())
    }

    pub fn save(&self, dir: &Path, scales: &[f64]) -> Result<()> {
        io::write_bytes(&dir.join("projector.bin"), &self.blob())?;
        io::write_json(&dir.join("header.json"), &self.header(scales))
    }

    pub fn load(dir: &Path) -> Result<(Self, ProjectorHeader)> {
        let header = io::read_bytes(&dir.join("header.json"))?;
        let data = io::read_bytes(&dir.join("projector.bin"))?;
        Self::from_bytes(&header, &data)
    }

    pub fn from_bytes(header: &[u8], data: &[u8]) -> Result<(Self, ProjectorHeader)> {
        let h: ProjectorHeader = io::from_json_bytes(header, "projector header")?;
        io::check_version("projector header", h.format_version, PROJECTOR_FORMAT_VERSION)?;
        if h.rank > h.dim || h.dim == 0 {
            return Err(Error::format("projector header", "rank exceeds dimension"));
        }
        let count = h
            .dim
            .checked_mul(h.dim)
            .and_then(|p| h.dim.checked_mul(h.rank).and_then(|b| p.checked_add(b)))
            .and_then(|v| v.checked_mul(8))
            .ok_or_else(|| Error::format("projector header", "dimension overflows"))?;
        if data.len() != count {
            return Err(Error::format("projector data", format!("{} bytes, expected {count}", data.len())));
        }
        if io::sha256_hex(data) != h.data_sha256 {
            return Err(Error::format("projector data", "sha256 does not match header"));
        }
        let values = io::decode_f64s(data, "projector data")?;
        let split = h.dim * h.dim;
        let p = DMatrix::from_column_slice(h.dim, h.dim, &values[..split]);
        let basis = DMatrix::from_column_slice(h.dim, h.rank, &values[split..]);
        let proj = Self {
            p,
            basis,
            source: h.source,
            expected_rank: h.expected_rank,
            warnings: h.warnings.clone(),
        };
        Ok((proj, h))
    }
}
