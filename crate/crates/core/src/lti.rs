//! Stochastic discrete-time LTI systems `x(t+1) = A x(t) + B u(t) + w(t)`.
//!
//! Trajectories are flattened as all states `x(0..=T)` followed by all
//! controls `u(0..T)`, which is the row order of the trajectory map
//! `F = [[free, forced], [0, I]]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LtiSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    noise_std: f64,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, noise_std: f64) -> Result<Self> {
        if !a.is_square() || a.nrows() == 0 {
            return Err(Error::domain(format!(
                "state matrix must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        check_len("input matrix rows", a.nrows(), b.nrows())?;
        if b.ncols() == 0 {
            return Err(Error::domain("input matrix has no columns"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::domain(format!("noise_std must be >= 0, got {noise_std}")));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("system matrices contain non-finite entries"));
        }
        Ok(Self { a, b, noise_std })
    }

    /// Planar double integrator with sample time `dt`: state
    /// `(px, py, vx, vy)`, input `(ax, ay)`.
    pub fn double_integrator(dt: f64, noise_std: f64) -> Result<Self> {
        #[rustfmt::skip]
        let a = DMatrix::from_row_slice(4, 4, &[
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        ]);
        #[rustfmt::skip]
        let b = DMatrix::from_row_slice(4, 2, &[
            0.0, 0.0,
            0.0, 0.0,
            dt, 0.0,
            0.0, dt,
        ]);
        Self::new(a, b, noise_std)
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn with_noise_std(&self, noise_std: f64) -> Result<Self> {
        Self::new(self.a.clone(), self.b.clone(), noise_std)
    }

    pub fn dims(&self, horizon: usize) -> Dims {
        Dims {
            n: self.state_dim(),
            m: self.input_dim(),
            horizon,
        }
    }

    /// One noiseless step.
    pub fn step(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let n = self.state_dim();
        let m = self.input_dim();
        let mut next = vec![0.0; n];
        for (r, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for c in 0..n {
                acc += self.a[(r, c)] * x[c];
            }
            for c in 0..m {
                acc += self.b[(r, c)] * u[c];
            }
            *out = acc;
        }
        next
    }
}

/// Serializable form of an [`LtiSystem`]; matrices stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRecord {
    pub n: usize,
    pub m: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub noise_std: f64,
}

impl SystemRecord {
    pub fn build(&self) -> Result<LtiSystem> {
        check_len("system record A", self.n * self.n, self.a.len())?;
        check_len("system record B", self.n * self.m, self.b.len())?;
        LtiSystem::new(
            DMatrix::from_row_slice(self.n, self.n, &self.a),
            DMatrix::from_row_slice(self.n, self.m, &self.b),
            self.noise_std,
        )
    }
}

impl From<&LtiSystem> for SystemRecord {
    fn from(sys: &LtiSystem) -> Self {
        let row_major = |m: &DMatrix<f64>| m.transpose().as_slice().to_vec();
        Self {
            n: sys.state_dim(),
            m: sys.input_dim(),
            a: row_major(&sys.a),
            b: row_major(&sys.b),
            noise_std: sys.noise_std,
        }
    }
}

/// Trajectory dimensions: state size, input size and horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub horizon: usize,
}

impl Dims {
    pub fn state_len(&self) -> usize {
        (self.horizon + 1) * self.n
    }

    pub fn control_len(&self) -> usize {
        self.horizon * self.m
    }

    /// Length of a flattened trajectory, `(T+1)n + Tm`.
    pub fn flat_len(&self) -> usize {
        self.state_len() + self.control_len()
    }

    /// Number of free parameters `(x(0), u(0..T))`, `n + Tm`.
    pub fn free_len(&self) -> usize {
        self.n + self.control_len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dims: Dims,
    states: Vec<f64>,
    controls: Vec<f64>,
}

impl Trajectory {
    pub fn new(dims: Dims, states: Vec<f64>, controls: Vec<f64>) -> Result<Self> {
        check_len("trajectory states", dims.state_len(), states.len())?;
        check_len("trajectory controls", dims.control_len(), controls.len())?;
        Ok(Self {
            dims,
            states,
            controls,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn horizon(&self) -> usize {
        self.dims.horizon
    }

    pub fn state(&self, t: usize) -> &[f64] {
        let n = self.dims.n;
        &self.states[t * n..(t + 1) * n]
    }

    pub fn control(&self, t: usize) -> &[f64] {
        let m = self.dims.m;
        &self.controls[t * m..(t + 1) * m]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn controls(&self) -> &[f64] {
        &self.controls
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dims.flat_len());
        v.extend_from_slice(&self.states);
        v.extend_from_slice(&self.controls);
        v
    }

    pub fn unflatten(v: &[f64], dims: Dims) -> Result<Self> {
        check_len("flattened trajectory", dims.flat_len(), v.len())?;
        let (s, c) = v.split_at(dims.state_len());
        Self::new(dims, s.to_vec(), c.to_vec())
    }
}

/// Rolls the system forward from `x_init`. `controls` is `T·m` long and
/// `noise` is `T·n` long; the caller draws the noise so the rollout itself
/// is deterministic.
pub fn simulate(
    sys: &LtiSystem,
    x_init: &[f64],
    controls: &[f64],
    noise: &[f64],
) -> Result<Trajectory> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    check_len("initial state", n, x_init.len())?;
    if !controls.len().is_multiple_of(m) {
        return Err(Error::domain(format!(
            "control sequence length {} is not a multiple of the input size {m}",
            controls.len()
        )));
    }
    let horizon = controls.len() / m;
    check_len("process noise", horizon * n, noise.len())?;
    let dims = sys.dims(horizon);

    let mut states = Vec::with_capacity(dims.state_len());
    states.extend_from_slice(x_init);
    for t in 0..horizon {
        let x = &states[t * n..(t + 1) * n];
        let mut next = sys.step(x, &controls[t * m..(t + 1) * m]);
        for (v, w) in next.iter_mut().zip(&noise[t * n..(t + 1) * n]) {
            *v += w;
        }
        states.extend_from_slice(&next);
    }
    Trajectory::new(dims, states, controls.to_vec())
}

/// Noiseless rollout.
pub fn simulate_noiseless(sys: &LtiSystem, x_init: &[f64], controls: &[f64]) -> Result<Trajectory> {
    let m = sys.input_dim();
    let horizon = controls.len() / m.max(1);
    simulate(sys, x_init, controls, &vec![0.0; horizon * sys.state_dim()])
}

/// Free, forced and noise response maps over a horizon, and the assembled
/// trajectory maps `F` and `Fw` with `tau = F [x(0); u] + Fw w`.
#[derive(Debug, Clone)]
pub struct TrajectoryMap {
    pub dims: Dims,
    /// `[I; A; ...; A^T]`, `(T+1)n x n`.
    pub free: DMatrix<f64>,
    /// Block lower-triangular with blocks `A^(i-j-1) B`, `(T+1)n x Tm`.
    pub forced: DMatrix<f64>,
    /// As `forced` with `B` replaced by `I`, `(T+1)n x Tn`.
    pub noise: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub fw: DMatrix<f64>,
}

pub fn response_matrices(sys: &LtiSystem, horizon: usize) -> Result<TrajectoryMap> {
    if horizon < 1 {
        return Err(Error::domain("horizon must be at least 1"));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    let dims = sys.dims(horizon);
    let rows = dims.state_len();

    // powers[k] = A^k
    let mut powers = Vec::with_capacity(horizon + 1);
    powers.push(DMatrix::<f64>::identity(n, n));
    for k in 1..=horizon {
        let next = sys.a() * &powers[k - 1];
        powers.push(next);
    }
    let ab: Vec<DMatrix<f64>> = powers.iter().map(|p| p * sys.b()).collect();

    let mut free = DMatrix::zeros(rows, n);
    for (t, p) in powers.iter().enumerate() {
        free.view_mut((t * n, 0), (n, n)).copy_from(p);
    }
    let mut forced = DMatrix::zeros(rows, horizon * m);
    let mut noise = DMatrix::zeros(rows, horizon * n);
    for i in 1..=horizon {
        for j in 0..i {
            let k = i - j - 1;
            forced.view_mut((i * n, j * m), (n, m)).copy_from(&ab[k]);
            noise.view_mut((i * n, j * n), (n, n)).copy_from(&powers[k]);
        }
    }

    let mut f = DMatrix::zeros(dims.flat_len(), dims.free_len());
    f.view_mut((0, 0), (rows, n)).copy_from(&free);
    f.view_mut((0, n), (rows, horizon * m)).copy_from(&forced);
    for k in 0..horizon * m {
        f[(rows + k, n + k)] = 1.0;
    }
    let mut fw = DMatrix::zeros(dims.flat_len(), horizon * n);
    fw.view_mut((0, 0), (rows, horizon * n)).copy_from(&noise);

    Ok(TrajectoryMap {
        dims,
        free,
        forced,
        noise,
        f,
        fw,
    })
}

impl TrajectoryMap {
    /// `F [x0; u] + Fw w` as a flat vector.
    pub fn apply(&self, x0: &[f64], controls: &[f64], noise: &[f64]) -> Result<Vec<f64>> {
        check_len("initial state", self.dims.n, x0.len())?;
        check_len("controls", self.dims.control_len(), controls.len())?;
        check_len("noise", self.dims.horizon * self.dims.n, noise.len())?;
        let z = DVector::from_iterator(
            self.dims.free_len(),
            x0.iter().chain(controls.iter()).copied(),
        );
        let w = DVector::from_column_slice(noise);
        Ok((&self.f * z + &self.fw * w).as_slice().to_vec())
    }
}
