//! Waypoint tracking with circular obstacles on the planar position
//! coordinates `(x[0], x[1])` of a noiseless system.
//!
//! Objective (minimized):
//!
//! ```text
//! J = sum_i |p(t_i) - v_i|^2
//!   + sum_{t<T} ( rho |u(t)|^2 - sum_j (|p(t) - o_j| - r_j)^2 )
//! ```
//!
//! The target position enters as a final waypoint at `t = T`. The obstacle
//! term is signed: it rewards distance from each obstacle boundary. It
//! grows like `-|p|^2`, so `J` is only bounded below when `rho` dominates
//! the accumulated position response; [`is_bounded_below`] checks this.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::lti::{response_matrices, simulate_noiseless, LtiSystem, Trajectory};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint {
    pub position: [f64; 2],
    pub time: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub center: [f64; 2],
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointTask {
    pub x_init: Vec<f64>,
    pub x_target: Vec<f64>,
    pub horizon: usize,
    /// Intermediate waypoints; the target is appended implicitly at `T`.
    pub waypoints: Vec<Waypoint>,
    pub obstacles: Vec<Obstacle>,
}

impl WaypointTask {
    pub fn new(
        x_init: Vec<f64>,
        x_target: Vec<f64>,
        horizon: usize,
        waypoints: Vec<Waypoint>,
        obstacles: Vec<Obstacle>,
    ) -> Result<Self> {
        let task = Self {
            x_init,
            x_target,
            horizon,
            waypoints,
            obstacles,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<()> {
        check_len("waypoint task target", self.x_init.len(), self.x_target.len())?;
        if self.x_init.len() < 2 {
            return Err(Error::domain("waypoint tasks need at least two position coordinates"));
        }
        if self.horizon < 1 {
            return Err(Error::domain("waypoint horizon must be at least 1"));
        }
        let mut last = 0;
        for (i, w) in self.waypoints.iter().enumerate() {
            if w.time == 0 || w.time > self.horizon {
                return Err(Error::domain(format!(
                    "waypoint {i} time {} outside (0, {}]",
                    w.time, self.horizon
                )));
            }
            if w.time <= last {
                return Err(Error::domain("waypoint times must be strictly increasing"));
            }
            last = w.time;
        }
        for (j, o) in self.obstacles.iter().enumerate() {
            if !(o.radius >= 0.0) {
                return Err(Error::domain(format!("obstacle {j} has negative radius")));
            }
        }
        let all_finite = self
            .x_init
            .iter()
            .chain(&self.x_target)
            .chain(self.waypoints.iter().flat_map(|w| w.position.iter()))
            .chain(self.obstacles.iter().flat_map(|o| o.center.iter().chain([&o.radius])))
            .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::domain("waypoint task contains non-finite values"));
        }
        Ok(())
    }

    /// Waypoints followed by the target position at `T`.
    pub fn all_waypoints(&self) -> Vec<Waypoint> {
        let mut all = self.waypoints.clone();
        all.push(Waypoint {
            position: [self.x_target[0], self.x_target[1]],
            time: self.horizon,
        });
        all
    }
}

fn position(traj: &Trajectory, t: usize) -> [f64; 2] {
    let x = traj.state(t);
    [x[0], x[1]]
}

/// Evaluates the objective literally on a trajectory. Lower is better.
pub fn reward(traj: &Trajectory, task: &WaypointTask, control_weight: f64) -> Result<f64> {
    check_len("trajectory horizon", task.horizon, traj.horizon())?;
    check_len("trajectory state size", task.x_init.len(), traj.dims().n)?;
    let mut total = 0.0;
    for w in task.all_waypoints() {
        let p = position(traj, w.time);
        total += (p[0] - w.position[0]).powi(2) + (p[1] - w.position[1]).powi(2);
    }
    for t in 0..task.horizon {
        total += control_weight * traj.control(t).iter().map(|u| u * u).sum::<f64>();
        let p = position(traj, t);
        for o in &task.obstacles {
            let d = ((p[0] - o.center[0]).powi(2) + (p[1] - o.center[1]).powi(2)).sqrt();
            total -= (d - o.radius).powi(2);
        }
    }
    Ok(total)
}

/// Objective and its gradient with respect to the control sequence,
/// accumulated backwards through the linear rollout.
fn objective_and_gradient(
    sys: &LtiSystem,
    task: &WaypointTask,
    control_weight: f64,
    controls: &[f64],
) -> Result<(f64, Vec<f64>)> {
    let traj = simulate_noiseless(sys, &task.x_init, controls)?;
    let value = reward(&traj, task, control_weight)?;
    let n = sys.state_dim();
    let m = sys.input_dim();
    let horizon = task.horizon;

    // dJ/dx(t) from the explicit state terms.
    let mut dx = vec![0.0; (horizon + 1) * n];
    for w in task.all_waypoints() {
        let p = position(&traj, w.time);
        dx[w.time * n] += 2.0 * (p[0] - w.position[0]);
        dx[w.time * n + 1] += 2.0 * (p[1] - w.position[1]);
    }
    for t in 0..horizon {
        let p = position(&traj, t);
        for o in &task.obstacles {
            let (ex, ey) = (p[0] - o.center[0], p[1] - o.center[1]);
            let d = (ex * ex + ey * ey).sqrt();
            if d > 1e-12 {
                let s = -2.0 * (d - o.radius) / d;
                dx[t * n] += s * ex;
                dx[t * n + 1] += s * ey;
            }
        }
    }

    let a = sys.a();
    let b = sys.b();
    let mut grad = vec![0.0; horizon * m];
    let mut lambda = DVector::from_column_slice(&dx[horizon * n..]);
    for t in (0..horizon).rev() {
        let bt = b.transpose() * &lambda;
        for k in 0..m {
            grad[t * m + k] = 2.0 * control_weight * controls[t * m + k] + bt[k];
        }
        lambda = DVector::from_column_slice(&dx[t * n..(t + 1) * n]) + a.transpose() * &lambda;
    }
    Ok((value, grad))
}

/// True when the quadratic part of the objective at infinity,
/// `rho I + sum_i G_{t_i}'G_{t_i} - O sum_{t<T} G_t'G_t`, is positive
/// definite (`G_t` maps controls to the position at time `t`).
pub fn is_bounded_below(sys: &LtiSystem, task: &WaypointTask, control_weight: f64) -> Result<bool> {
    let n = sys.state_dim();
    let map = response_matrices(sys, task.horizon)?;
    let cols = map.forced.ncols();
    let pos = |t: usize| map.forced.view((t * n, 0), (2, cols)).clone_owned();
    let mut h = DMatrix::<f64>::identity(cols, cols) * control_weight;
    for w in task.all_waypoints() {
        let g = pos(w.time);
        h += g.transpose() * &g;
    }
    let count = task.obstacles.len() as f64;
    if count > 0.0 {
        for t in 0..task.horizon {
            let g = pos(t);
            h -= g.transpose() * &g * count;
        }
    }
    Ok(h.cholesky().is_some())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSolverConfig {
    /// `rho` in `rho |u|^2`.
    pub control_weight: f64,
    pub restarts: usize,
    pub max_iters: usize,
    /// Stop when `|grad| <= grad_tol * max(1, |J|)`.
    pub grad_tol: f64,
    /// Standard deviation of the random restart inputs.
    pub init_std: f64,
    pub seed: u64,
}

impl Default for WaypointSolverConfig {
    fn default() -> Self {
        Self {
            control_weight: 100.0,
            restarts: 5,
            max_iters: 200,
            grad_tol: 1e-10,
            init_std: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WaypointSolution {
    pub trajectory: Trajectory,
    pub objective: f64,
    /// Objective of the straight-line initialization.
    pub initial_objective: f64,
    pub iterations: usize,
}

/// Minimum-energy inputs that steer `x_init` to `x_target` at `T` on the
/// noiseless system; for a double integrator this moves along the straight
/// line between the two positions. Falls back to least squares when the
/// pair is not controllable over the horizon.
pub fn straight_line_controls(sys: &LtiSystem, task: &WaypointTask) -> Result<Vec<f64>> {
    let n = sys.state_dim();
    let map = response_matrices(sys, task.horizon)?;
    let last = task.horizon * n;
    let reach = map.forced.view((last, 0), (n, map.forced.ncols())).clone_owned();
    let free = map.free.view((last, 0), (n, n)).clone_owned();
    let goal = DVector::from_column_slice(&task.x_target) - free * DVector::from_column_slice(&task.x_init);
    let u = reach
        .svd(true, true)
        .solve(&goal, 1e-12)
        .map_err(|e| Error::Numerical(e.to_string()))?;
    Ok(u.as_slice().to_vec())
}

/// Multi-start damped Newton descent on the inputs; restart 0 starts from
/// the straight line, the others from Gaussian inputs.
pub fn solve_waypoint(
    sys: &LtiSystem,
    task: &WaypointTask,
    cfg: &WaypointSolverConfig,
) -> Result<WaypointSolution> {
    task.validate()?;
    check_len("waypoint task state size", sys.state_dim(), task.x_init.len())?;
    if sys.noise_std() != 0.0 {
        return Err(Error::domain("waypoint solver requires a noiseless system"));
    }
    if !is_bounded_below(sys, task, cfg.control_weight)? {
        return Err(Error::domain(format!(
            "objective unbounded below with control weight {} and {} obstacles; increase the control weight",
            cfg.control_weight,
            task.obstacles.len()
        )));
    }
    let len = task.horizon * sys.input_dim();
    let line = straight_line_controls(sys, task)?;
    let maps = PositionMaps::new(sys, task.horizon)?;
    let (initial_objective, _) = objective_and_gradient(sys, task, cfg.control_weight, &line)?;

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut iterations = 0;
    for restart in 0..cfg.restarts.max(1) {
        let start = if restart == 0 {
            line.clone()
        } else {
            let mut s = rng::stream(cfg.seed, rng::tag::SOLVER, restart as u64);
            (0..len).map(|_| cfg.init_std * rng::standard_normal(&mut s)).collect()
        };
        let (value, u, iters) = descend(sys, task, cfg, &maps, start, restart)?;
        iterations += iters;
        if best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, u));
        }
    }
    let (objective, controls) = best.expect("at least one restart");
    Ok(WaypointSolution {
        trajectory: simulate_noiseless(sys, &task.x_init, &controls)?,
        objective,
        initial_objective,
        iterations,
    })
}

/// Position rows of the forced response, `p(t) = P_t x_init + G_t u`.
struct PositionMaps {
    gains: Vec<DMatrix<f64>>,
}

impl PositionMaps {
    fn new(sys: &LtiSystem, horizon: usize) -> Result<Self> {
        let n = sys.state_dim();
        let map = response_matrices(sys, horizon)?;
        let cols = map.forced.ncols();
        Ok(Self {
            gains: (0..=horizon)
                .map(|t| map.forced.view((t * n, 0), (2, cols)).clone_owned())
                .collect(),
        })
    }
}

/// Exact Hessian of the objective with respect to the inputs. The obstacle
/// term `-(d - r)^2` has Hessian `-2 (e e' + (d - r)/d (I - e e'))` in the
/// position, with `e` the unit vector away from the centre.
fn hessian(
    sys: &LtiSystem,
    task: &WaypointTask,
    control_weight: f64,
    maps: &PositionMaps,
    controls: &[f64],
) -> Result<DMatrix<f64>> {
    let traj = simulate_noiseless(sys, &task.x_init, controls)?;
    let len = controls.len();
    let mut h = DMatrix::<f64>::identity(len, len) * (2.0 * control_weight);
    for w in task.all_waypoints() {
        let g = &maps.gains[w.time];
        h += g.transpose() * g * 2.0;
    }
    for t in 0..task.horizon {
        let p = position(&traj, t);
        let mut local = nalgebra::Matrix2::<f64>::zeros();
        for o in &task.obstacles {
            let (ex, ey) = (p[0] - o.center[0], p[1] - o.center[1]);
            let d = (ex * ex + ey * ey).sqrt();
            if d > 1e-12 {
                let e = nalgebra::Vector2::new(ex / d, ey / d);
                let radial = e * e.transpose();
                let tangential = nalgebra::Matrix2::identity() - radial;
                local -= (radial + tangential * ((d - o.radius) / d)) * 2.0;
            }
        }
        if local != nalgebra::Matrix2::zeros() {
            let g = &maps.gains[t];
            h += g.transpose() * local * g;
        }
    }
    Ok(h)
}

/// Damped Newton iterations with Armijo backtracking. The Hessian is shifted
/// until it factors, so every direction is a descent direction.
fn descend(
    sys: &LtiSystem,
    task: &WaypointTask,
    cfg: &WaypointSolverConfig,
    maps: &PositionMaps,
    mut u: Vec<f64>,
    restart: usize,
) -> Result<(f64, Vec<f64>, usize)> {
    let rho = cfg.control_weight;
    let (mut value, mut grad) = objective_and_gradient(sys, task, rho, &u)?;
    let mut trial = vec![0.0; u.len()];
    for iter in 0..cfg.max_iters {
        let gnorm: f64 = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !value.is_finite() || !gnorm.is_finite() {
            return Err(Error::Numerical(format!(
                "waypoint objective non-finite (restart {restart}, iteration {iter}, J = {value}, |grad| = {gnorm})"
            )));
        }
        if gnorm <= cfg.grad_tol * value.abs().max(1.0) {
            return Ok((value, u, iter));
        }
        let h = hessian(sys, task, rho, maps, &u)?;
        let scale = h.diagonal().amax().max(1.0);
        let g = DVector::from_column_slice(&grad);
        let mut shift = 0.0;
        let dir = loop {
            let shifted = &h + DMatrix::<f64>::identity(u.len(), u.len()) * shift;
            if let Some(ch) = shifted.cholesky() {
                break -ch.solve(&g);
            }
            shift = if shift == 0.0 { 1e-8 * scale } else { shift * 10.0 };
        };
        let slope = g.dot(&dir);
        let mut step = 1.0;
        loop {
            for ((t, x), d) in trial.iter_mut().zip(&u).zip(dir.iter()) {
                *t = x + step * d;
            }
            let (v, gr) = objective_and_gradient(sys, task, rho, &trial)?;
            if v.is_finite() && v <= value + 1e-4 * step * slope {
                std::mem::swap(&mut u, &mut trial);
                value = v;
                grad = gr;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Ok((value, u, iter));
            }
        }
    }
    Ok((value, u, cfg.max_iters))
}

/// Draws a random task. Exposed for dataset generation and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSampler {
    pub horizon: usize,
    pub init_box: f64,
    pub target_box: f64,
    pub waypoint_box: f64,
    pub obstacle_box: f64,
    pub radius_range: (f64, f64),
    /// Inclusive range for the number of intermediate waypoints.
    pub waypoint_count: (usize, usize),
    /// Inclusive range for the number of obstacles.
    pub obstacle_count: (usize, usize),
    /// Fixed intermediate waypoint times; when set, the count is its length.
    pub waypoint_times: Option<Vec<usize>>,
}

impl WaypointSampler {
    pub fn sample(&self, rng: &mut impl Rng, n: usize) -> Result<WaypointTask> {
        let horizon = self.horizon;
        let x_init: Vec<f64> = (0..n).map(|_| rng::symmetric_uniform(rng, self.init_box)).collect();
        let mut x_target = vec![0.0; n];
        x_target[0] = rng::symmetric_uniform(rng, self.target_box);
        x_target[1] = rng::symmetric_uniform(rng, self.target_box);

        let times = match &self.waypoint_times {
            Some(t) => t.clone(),
            None => {
                let count = rng.random_range(self.waypoint_count.0..=self.waypoint_count.1);
                let lo = (horizon / 6).max(1);
                let hi = horizon.saturating_sub(1);
                let pool: Vec<usize> = (lo..=hi).collect();
                if count > pool.len() {
                    return Err(Error::domain(format!(
                        "cannot place {count} waypoints in times {lo}..={hi}"
                    )));
                }
                let mut picked: Vec<usize> =
                    rand::seq::index::sample(rng, pool.len(), count).into_iter().map(|k| pool[k]).collect();
                picked.sort_unstable();
                picked
            }
        };
        let waypoints = times
            .into_iter()
            .map(|time| Waypoint {
                position: [
                    rng::symmetric_uniform(rng, self.waypoint_box),
                    rng::symmetric_uniform(rng, self.waypoint_box),
                ],
                time,
            })
            .collect();
        let count = rng.random_range(self.obstacle_count.0..=self.obstacle_count.1);
        let obstacles = (0..count)
            .map(|_| Obstacle {
                center: [
                    rng::symmetric_uniform(rng, self.obstacle_box),
                    rng::symmetric_uniform(rng, self.obstacle_box),
                ],
                radius: rng.random_range(self.radius_range.0..=self.radius_range.1),
            })
            .collect();
        WaypointTask::new(x_init, x_target, horizon, waypoints, obstacles)
    }
}
