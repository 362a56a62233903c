//! Finite-horizon quadratic tracking via the backward Riccati recursion.
//!
//! The value function is kept as `V_t(x) = x'P_t x + 2 q_t'x + const`, which
//! makes the optimal input affine in the state, `u(t) = K(t) x(t) + c(t)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::lti::{simulate, LtiSystem, Trajectory};

/// Target-tracking LQR: minimize
/// `sum_{t=0}^{T-1} |x(t) - x_target|_Q^2 + |u(t)|_R^2` with no terminal cost.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrTask {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub x_target: Vec<f64>,
    pub x_init: Vec<f64>,
    pub horizon: usize,
}

impl LqrTask {
    pub fn new(
        q: DMatrix<f64>,
        r: DMatrix<f64>,
        x_target: Vec<f64>,
        x_init: Vec<f64>,
        horizon: usize,
    ) -> Result<Self> {
        check_len("Q rows", x_target.len(), q.nrows())?;
        check_len("initial state", x_target.len(), x_init.len())?;
        if horizon < 1 {
            return Err(Error::domain("LQR horizon must be at least 1"));
        }
        check_symmetric("Q", &q)?;
        check_symmetric("R", &r)?;
        if q.symmetric_eigenvalues().iter().any(|&v| v < -1e-12 * q.norm().max(1.0)) {
            return Err(Error::domain("Q must be positive semidefinite"));
        }
        if r.clone().cholesky().is_none() {
            return Err(Error::domain("R must be positive definite"));
        }
        Ok(Self {
            q,
            r,
            x_target,
            x_init,
            horizon,
        })
    }

    /// The same cost expressed stage by stage.
    pub fn tracking_cost(&self) -> TrackingCost {
        let stage = StageCost {
            q: self.q.clone(),
            target: DVector::from_column_slice(&self.x_target),
        };
        TrackingCost {
            stages: vec![stage; self.horizon],
            r: self.r.clone(),
            terminal: None,
        }
    }
}

fn check_symmetric(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::domain(format!("{name} must be square")));
    }
    if (m - m.transpose()).abs().max() > 1e-12 * m.abs().max().max(1.0) {
        return Err(Error::domain(format!("{name} must be symmetric")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCost {
    pub q: DMatrix<f64>,
    pub target: DVector<f64>,
}

/// General quadratic tracking cost: `stages[t]` weighs `x(t)` for
/// `t < T`, `terminal` weighs `x(T)`, and `r` weighs every `u(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackingCost {
    pub stages: Vec<StageCost>,
    pub r: DMatrix<f64>,
    pub terminal: Option<StageCost>,
}

impl TrackingCost {
    pub fn horizon(&self) -> usize {
        self.stages.len()
    }

    pub fn evaluate(&self, traj: &Trajectory) -> f64 {
        let quad = |q: &DMatrix<f64>, target: &DVector<f64>, x: &[f64]| {
            let d = DVector::from_column_slice(x) - target;
            (d.transpose() * q * &d)[(0, 0)]
        };
        let mut total = 0.0;
        for (t, stage) in self.stages.iter().enumerate() {
            total += quad(&stage.q, &stage.target, traj.state(t));
            let u = DVector::from_column_slice(traj.control(t));
            total += (u.transpose() * &self.r * &u)[(0, 0)];
        }
        if let Some(term) = &self.terminal {
            total += quad(&term.q, &term.target, traj.state(self.horizon()));
        }
        total
    }
}

/// Time-varying affine feedback `u(t) = K(t) x(t) + c(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinePolicy {
    gains: Vec<DMatrix<f64>>,
    offsets: Vec<DVector<f64>>,
}

impl AffinePolicy {
    pub fn new(gains: Vec<DMatrix<f64>>, offsets: Vec<DVector<f64>>) -> Result<Self> {
        check_len("policy offsets", gains.len(), offsets.len())?;
        Ok(Self { gains, offsets })
    }

    pub fn horizon(&self) -> usize {
        self.gains.len()
    }

    pub fn gain(&self, t: usize) -> &DMatrix<f64> {
        &self.gains[t]
    }

    pub fn offset(&self, t: usize) -> &DVector<f64> {
        &self.offsets[t]
    }

    pub fn gains_mut(&mut self) -> &mut [DMatrix<f64>] {
        &mut self.gains
    }

    pub fn control(&self, t: usize, x: &[f64]) -> Vec<f64> {
        let u = &self.gains[t] * DVector::from_column_slice(x) + &self.offsets[t];
        u.as_slice().to_vec()
    }
}

/// Backward Riccati recursion for a general tracking cost.
pub fn tracking_policy(sys: &LtiSystem, cost: &TrackingCost) -> Result<AffinePolicy> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let horizon = cost.horizon();
    if horizon < 1 {
        return Err(Error::domain("tracking cost has no stages"));
    }
    check_len("R rows", m, cost.r.nrows())?;
    check_len("R cols", m, cost.r.ncols())?;
    if cost.r.clone().cholesky().is_none() {
        return Err(Error::domain("R must be positive definite (singular or indefinite R)"));
    }
    for stage in cost.stages.iter().chain(cost.terminal.iter()) {
        check_len("stage weight", n, stage.q.nrows())?;
        check_len("stage target", n, stage.target.len())?;
    }

    let a = sys.a();
    let b = sys.b();
    let (mut p, mut q) = match &cost.terminal {
        Some(term) => (term.q.clone(), -(&term.q * &term.target)),
        None => (DMatrix::zeros(n, n), DVector::zeros(n)),
    };

    let mut gains = vec![DMatrix::zeros(m, n); horizon];
    let mut offsets = vec![DVector::zeros(m); horizon];
    for t in (0..horizon).rev() {
        let pb = &p * b;
        let s = &cost.r + b.transpose() * &pb;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Numerical(format!("R + B'PB not positive definite at t={t}")))?;
        let k = -chol.solve(&(pb.transpose() * a));
        let c = -chol.solve(&(b.transpose() * &q));

        let stage = &cost.stages[t];
        let closed = a + b * &k;
        let p_next = &stage.q + a.transpose() * &p * &closed;
        let q_next = -(&stage.q * &stage.target) + a.transpose() * (&pb * &c + &q);
        p = (&p_next + p_next.transpose()) * 0.5;
        q = q_next;
        gains[t] = k;
        offsets[t] = c;
    }
    AffinePolicy::new(gains, offsets)
}

/// Optimal affine policy for the target-tracking LQR task.
pub fn lqr_policy(sys: &LtiSystem, task: &LqrTask) -> Result<AffinePolicy> {
    check_len("task state size", sys.state_dim(), task.x_target.len())?;
    tracking_policy(sys, &task.tracking_cost())
}

/// Closed-loop rollout under `policy` with explicit process noise (`T·n`).
pub fn rollout(sys: &LtiSystem, policy: &AffinePolicy, x_init: &[f64], noise: &[f64]) -> Result<Trajectory> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let horizon = policy.horizon();
    check_len("initial state", n, x_init.len())?;
    check_len("process noise", horizon * n, noise.len())?;
    let mut x = x_init.to_vec();
    let mut controls = Vec::with_capacity(horizon * m);
    for t in 0..horizon {
        let u = policy.control(t, &x);
        let mut next = sys.step(&x, &u);
        for (v, w) in next.iter_mut().zip(&noise[t * n..(t + 1) * n]) {
            *v += w;
        }
        controls.extend_from_slice(&u);
        x = next;
    }
    simulate(sys, x_init, &controls, noise)
}
