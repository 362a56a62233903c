//! Fixed-length conditioning vectors.
//!
//! LQR: `[x_init (n) | x_target (n)]`.
//! Waypoint: `[x_init (n) | x_target (n) | (vx, vy, t/T, flag) x V_max |
//! (ox, oy, r, flag) x O_max]`; absent slots are zero with flag 0.

use serde::{Deserialize, Serialize};

use super::waypoint::{Obstacle, Waypoint, WaypointTask};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ConditionLayout {
    Lqr { n: usize },
    Waypoint { n: usize, v_max: usize, o_max: usize },
}

impl ConditionLayout {
    pub fn len(&self) -> usize {
        match *self {
            ConditionLayout::Lqr { n } => 2 * n,
            ConditionLayout::Waypoint { n, v_max, o_max } => 2 * n + 4 * v_max + 4 * o_max,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        match *self {
            ConditionLayout::Lqr { n } | ConditionLayout::Waypoint { n, .. } => n,
        }
    }

    /// Human-readable name of every slot, in order.
    pub fn field_names(&self) -> Vec<String> {
        let n = self.state_dim();
        let mut names: Vec<String> = (0..n).map(|k| format!("x_init[{k}]")).collect();
        names.extend((0..n).map(|k| format!("x_target[{k}]")));
        if let ConditionLayout::Waypoint { v_max, o_max, .. } = *self {
            for i in 0..v_max {
                for f in ["vx", "vy", "t_over_T", "flag"] {
                    names.push(format!("waypoint[{i}].{f}"));
                }
            }
            for j in 0..o_max {
                for f in ["ox", "oy", "r", "flag"] {
                    names.push(format!("obstacle[{j}].{f}"));
                }
            }
        }
        names
    }

    pub fn x_init<'a>(&self, cond: &'a [f64]) -> &'a [f64] {
        &cond[..self.state_dim()]
    }

    pub fn x_target<'a>(&self, cond: &'a [f64]) -> &'a [f64] {
        let n = self.state_dim();
        &cond[n..2 * n]
    }

    pub fn encode_lqr(&self, x_init: &[f64], x_target: &[f64]) -> Result<Vec<f64>> {
        let ConditionLayout::Lqr { n } = *self else {
            return Err(Error::domain("LQR condition requested from a waypoint layout"));
        };
        check_len("condition x_init", n, x_init.len())?;
        check_len("condition x_target", n, x_target.len())?;
        Ok([x_init, x_target].concat())
    }

    pub fn encode_waypoint(&self, task: &WaypointTask) -> Result<Vec<f64>> {
        let ConditionLayout::Waypoint { n, v_max, o_max } = *self else {
            return Err(Error::domain("waypoint condition requested from an LQR layout"));
        };
        check_len("condition x_init", n, task.x_init.len())?;
        if task.waypoints.len() > v_max || task.obstacles.len() > o_max {
            return Err(Error::domain(format!(
                "task has {} waypoints and {} obstacles; layout holds {v_max} and {o_max}",
                task.waypoints.len(),
                task.obstacles.len()
            )));
        }
        let mut cond = Vec::with_capacity(self.len());
        cond.extend_from_slice(&task.x_init);
        cond.extend_from_slice(&task.x_target);
        let horizon = task.horizon as f64;
        for i in 0..v_max {
            match task.waypoints.get(i) {
                Some(w) => cond.extend([w.position[0], w.position[1], w.time as f64 / horizon, 1.0]),
                None => cond.extend([0.0; 4]),
            }
        }
        for j in 0..o_max {
            match task.obstacles.get(j) {
                Some(o) => cond.extend([o.center[0], o.center[1], o.radius, 1.0]),
                None => cond.extend([0.0; 4]),
            }
        }
        Ok(cond)
    }

    pub fn decode_waypoint(&self, cond: &[f64], horizon: usize) -> Result<WaypointTask> {
        let ConditionLayout::Waypoint { n, v_max, o_max } = *self else {
            return Err(Error::domain("waypoint decode requested from an LQR layout"));
        };
        check_len("condition vector", self.len(), cond.len())?;
        let flag = |v: f64, what: &str| -> Result<bool> {
            if v == 1.0 {
                Ok(true)
            } else if v == 0.0 {
                Ok(false)
            } else {
                Err(Error::format("condition", format!("{what} flag {v} is neither 0 nor 1")))
            }
        };
        let mut waypoints = Vec::new();
        let mut offset = 2 * n;
        for i in 0..v_max {
            let s = &cond[offset..offset + 4];
            offset += 4;
            if flag(s[3], "waypoint")? {
                let time = (s[2] * horizon as f64).round();
                if !(time >= 0.0 && time <= horizon as f64) {
                    return Err(Error::format("condition", format!("waypoint {i} time fraction {}", s[2])));
                }
                waypoints.push(Waypoint {
                    position: [s[0], s[1]],
                    time: time as usize,
                });
            }
        }
        let mut obstacles = Vec::new();
        for _ in 0..o_max {
            let s = &cond[offset..offset + 4];
            offset += 4;
            if flag(s[3], "obstacle")? {
                obstacles.push(Obstacle {
                    center: [s[0], s[1]],
                    radius: s[2],
                });
            }
        }
        WaypointTask::new(
            cond[..n].to_vec(),
            cond[n..2 * n].to_vec(),
            horizon,
            waypoints,
            obstacles,
        )
        .map_err(|e| Error::format("condition", e.to_string()))
    }
}
