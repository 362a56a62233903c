//! Error curves against the expert oracle, admissibility residuals, the
//! Gaussian of optimal trajectories under an affine policy, and the
//! Mahalanobis diagnostic along the reverse process.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::io;
use crate::lti::{Dims, LtiSystem};
use crate::sampler::Algorithm;
use crate::tasks::AffinePolicy;

/// Eigenvalues below this fraction of the largest are outside the support.
pub const SUPPORT_TOL: f64 = 1e-10;

/// Gaussian over flattened trajectories with its spectral support.
#[derive(Debug, Clone)]
pub struct TrajectoryGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    support: DMatrix<f64>,
    support_eigenvalues: Vec<f64>,
}

impl TrajectoryGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_len("covariance", mean.len(), cov.nrows())?;
        if !cov.is_square() {
            return Err(Error::domain("covariance must be square"));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        let keep: Vec<usize> = (0..eig.eigenvalues.len())
            .filter(|&k| top > 0.0 && eig.eigenvalues[k] > SUPPORT_TOL * top)
            .collect();
        let mut support = DMatrix::zeros(mean.len(), keep.len());
        for (c, &k) in keep.iter().enumerate() {
            support.set_column(c, &eig.eigenvectors.column(k));
        }
        Ok(Self {
            mean,
            cov,
            support,
            support_eigenvalues: keep.iter().map(|&k| eig.eigenvalues[k]).collect(),
        })
    }

    pub fn rank(&self) -> usize {
        self.support_eigenvalues.len()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = (&self.cov + self.cov.transpose()) * 0.5;
        sym.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Mean and covariance of the closed-loop trajectory under
/// `u(t) = K(t) x(t) + c(t)` and `w ~ N(0, noise_std^2 I)`, including all
/// state/control cross-covariances. Also returns a warning when the noise
/// is not the unit covariance assumed by the convergence theorem.
pub fn propagate_moments(
    sys: &LtiSystem,
    policy: &AffinePolicy,
    x_init: &[f64],
) -> Result<(TrajectoryGaussian, Vec<String>)> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    let horizon = policy.horizon();
    check_len("initial state", n, x_init.len())?;
    let dims = sys.dims(horizon);
    let var = sys.noise_std() * sys.noise_std();
    let mut warnings = Vec::new();
    if sys.noise_std() != 1.0 {
        warnings.push(format!(
            "noise_std = {} differs from the unit covariance assumed by the theorem",
            sys.noise_std()
        ));
    }

    let closed: Vec<DMatrix<f64>> = (0..horizon).map(|t| sys.a() + sys.b() * policy.gain(t)).collect();
    let mut means = vec![DVector::from_column_slice(x_init)];
    for t in 0..horizon {
        let next = &closed[t] * &means[t] + sys.b() * policy.offset(t);
        means.push(next);
    }

    // cross[t][s] = Cov[x(t), x(s)] for s <= t.
    let mut cross: Vec<Vec<DMatrix<f64>>> = vec![vec![DMatrix::zeros(n, n)]];
    for t in 0..horizon {
        let mut row: Vec<DMatrix<f64>> = (0..=t).map(|s| &closed[t] * &cross[t][s]).collect();
        let diag = &row[t] * closed[t].transpose() + DMatrix::identity(n, n) * var;
        row.push(diag);
        cross.push(row);
    }
    let state_cov = |t: usize, s: usize| -> DMatrix<f64> {
        if s <= t {
            cross[t][s].clone()
        } else {
            cross[s][t].transpose()
        }
    };

    let d = dims.flat_len();
    let su = dims.state_len();
    let mut mean = DVector::zeros(d);
    let mut cov = DMatrix::zeros(d, d);
    for t in 0..=horizon {
        mean.rows_mut(t * n, n).copy_from(&means[t]);
        for s in 0..=horizon {
            cov.view_mut((t * n, s * n), (n, n)).copy_from(&state_cov(t, s));
        }
    }
    for t in 0..horizon {
        let k = policy.gain(t);
        let mu = k * &means[t] + policy.offset(t);
        mean.rows_mut(su + t * m, m).copy_from(&mu);
        for s in 0..=horizon {
            let cux = k * state_cov(t, s);
            cov.view_mut((su + t * m, s * n), (m, n)).copy_from(&cux);
            cov.view_mut((s * n, su + t * m), (n, m)).copy_from(&cux.transpose());
        }
        for s in 0..horizon {
            let cuu = k * state_cov(t, s) * policy.gain(s).transpose();
            cov.view_mut((su + t * m, su + s * m), (m, m)).copy_from(&cuu);
        }
    }
    Ok((TrajectoryGaussian::new(mean, cov)?, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mahalanobis {
    /// `(tau - mu)' Sigma^+ (tau - mu)` on the support.
    pub distance: f64,
    /// Squared norm of the part of `tau - mu` outside the support.
    pub out_of_support: f64,
    /// Squared norm of the part inside the support.
    pub on_support: f64,
}

pub fn mahalanobis(tau: &[f64], g: &TrajectoryGaussian) -> Result<Mahalanobis> {
    check_len("trajectory", g.mean.len(), tau.len())?;
    let delta = DVector::from_column_slice(tau) - &g.mean;
    let coords = g.support.transpose() * &delta;
    let distance = coords
        .iter()
        .zip(&g.support_eigenvalues)
        .map(|(c, l)| c * c / l)
        .sum();
    let on_support: f64 = coords.iter().map(|c| c * c).sum();
    let out_of_support = (delta.norm_squared() - on_support).max(0.0);
    Ok(Mahalanobis {
        distance,
        out_of_support,
        on_support,
    })
}

/// Samples of one algorithm: `(condition index, physical trajectory)`.
#[derive(Debug, Clone)]
pub struct AlgorithmSamples {
    pub algorithm: Algorithm,
    pub samples: Vec<(usize, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub dims: Dims,
    pub algorithms: Vec<Algorithm>,
    /// Per algorithm, mean `|x(t) - x_oracle(t)|^2` for `t = 0..=T`.
    pub state_err: Vec<Vec<f64>>,
    /// Per algorithm, mean `|u(t) - u_oracle(t)|^2` for `t = 0..T`.
    pub ctrl_err: Vec<Vec<f64>>,
    pub sample_counts: Vec<usize>,
}

/// Per-step mean squared errors against each condition's oracle.
/// Summation is over sorted terms, so the result does not depend on the
/// order of the samples.
pub fn error_curves(dims: Dims, oracles: &[Vec<f64>], runs: &[AlgorithmSamples]) -> Result<ErrorReport> {
    let (n, m, horizon) = (dims.n, dims.m, dims.horizon);
    let su = dims.state_len();
    let mut state_err = Vec::new();
    let mut ctrl_err = Vec::new();
    let mut sample_counts = Vec::new();
    for run in runs {
        if run.samples.is_empty() {
            return Err(Error::domain(format!("no samples for {}", run.algorithm)));
        }
        let mut per_t_state = vec![Vec::with_capacity(run.samples.len()); horizon + 1];
        let mut per_t_ctrl = vec![Vec::with_capacity(run.samples.len()); horizon];
        for (c, tau) in &run.samples {
            let oracle = oracles
                .get(*c)
                .ok_or_else(|| Error::domain(format!("no oracle trajectory for condition {c}")))?;
            check_len("oracle trajectory", dims.flat_len(), oracle.len())?;
            check_len("sample trajectory", dims.flat_len(), tau.len())?;
            for t in 0..=horizon {
                per_t_state[t].push(sq_dist(&tau[t * n..(t + 1) * n], &oracle[t * n..(t + 1) * n]));
            }
            for t in 0..horizon {
                let r = su + t * m..su + (t + 1) * m;
                per_t_ctrl[t].push(sq_dist(&tau[r.clone()], &oracle[r]));
            }
        }
        state_err.push(per_t_state.into_iter().map(sorted_mean).collect());
        ctrl_err.push(per_t_ctrl.into_iter().map(sorted_mean).collect());
        sample_counts.push(run.samples.len());
    }
    Ok(ErrorReport {
        dims,
        algorithms: runs.iter().map(|r| r.algorithm).collect(),
        state_err,
        ctrl_err,
        sample_counts,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn sorted_mean(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

impl ErrorReport {
    fn index(&self, alg: Algorithm) -> Result<usize> {
        self.algorithms
            .iter()
            .position(|&a| a == alg)
            .ok_or_else(|| Error::domain(format!("report has no {alg} curve")))
    }

    pub fn state_curve(&self, alg: Algorithm) -> Result<&[f64]> {
        Ok(&self.state_err[self.index(alg)?])
    }

    pub fn ctrl_curve(&self, alg: Algorithm) -> Result<&[f64]> {
        Ok(&self.ctrl_err[self.index(alg)?])
    }

    pub fn mean_state_error(&self, alg: Algorithm) -> Result<f64> {
        let c = self.state_curve(alg)?;
        Ok(c.iter().sum::<f64>() / c.len() as f64)
    }

    pub fn mean_ctrl_error(&self, alg: Algorithm) -> Result<f64> {
        let c = self.ctrl_curve(alg)?;
        Ok(c.iter().sum::<f64>() / c.len() as f64)
    }

    /// `errors.csv`: one row per `t = 0..=T`; the control error at `t = T`
    /// does not exist and is written as `NaN`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for a in &self.algorithms {
            write!(out, ",state_err_{a},ctrl_err_{a}").expect("string write");
        }
        out.push('\n');
        for t in 0..=self.dims.horizon {
            write!(out, "{t}").expect("string write");
            for k in 0..self.algorithms.len() {
                let ctrl = self.ctrl_err[k].get(t).copied().unwrap_or(f64::NAN);
                write!(out, ",{},{}", fmt_f64(self.state_err[k][t]), fmt_f64(ctrl)).expect("string write");
            }
            out.push('\n');
        }
        out
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualRow {
    pub algorithm: Algorithm,
    pub sample_id: u64,
    pub rel_residual: f64,
    /// `|x'(0) - x_init|`.
    pub x0_error: f64,
}

pub fn residuals_csv(rows: &[ResidualRow]) -> String {
    let mut out = String::from("algorithm,sample_id,rel_residual,x0_error\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{}",
            r.algorithm,
            r.sample_id,
            fmt_f64(r.rel_residual),
            fmt_f64(r.x0_error)
        )
        .expect("string write");
    }
    out
}

/// Mahalanobis distance of every iterate of one trace, in trace order
/// (`tau'_L` first).
pub fn theorem1_diagnostic(iterates: &[Vec<f64>], g: &TrajectoryGaussian) -> Result<Vec<Mahalanobis>> {
    if iterates.is_empty() {
        return Err(Error::domain("trace has no stored iterates"));
    }
    iterates.iter().map(|tau| mahalanobis(tau, g)).collect()
}

/// Element-wise mean of equally long series.
pub fn mean_series(series: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = series.first().ok_or_else(|| Error::domain("no series to average"))?;
    let len = first.len();
    let mut out = vec![0.0; len];
    for s in series {
        check_len("series length", len, s.len())?;
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= series.len() as f64);
    Ok(out)
}

/// `i, mean_mahalanobis` with `i = L..=0` matching the trace order.
pub fn theorem1_csv(series: &[f64]) -> String {
    let steps = series.len().saturating_sub(1);
    let mut out = String::from("i,mean_mahalanobis\n");
    for (j, v) in series.iter().enumerate() {
        writeln!(out, "{},{}", steps - j, fmt_f64(*v)).expect("string write");
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrendCheck {
    /// Consecutive pairs examined in the trailing part.
    pub pairs: usize,
    pub increases: usize,
    pub largest_increase: f64,
    /// `max - min` over the whole series.
    pub range: f64,
    pub passed: bool,
}

/// Non-increase over the trailing `fraction` of a series, allowing up to
/// `allowed_fraction` of increases each no larger than `magnitude * range`.
pub fn trailing_trend(series: &[f64], fraction: f64, allowed_fraction: f64, magnitude: f64) -> TrendCheck {
    let len = series.len();
    let start = len - ((len as f64 * fraction).round() as usize).min(len);
    let tail = &series[start..];
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let range = hi - lo;
    let pairs = tail.len().saturating_sub(1);
    let ups: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).filter(|d| *d > 0.0).collect();
    let largest_increase = ups.iter().cloned().fold(0.0, f64::max);
    let passed = ups.len() as f64 <= allowed_fraction * pairs as f64 && largest_increase <= magnitude * range;
    TrendCheck {
        pairs,
        increases: ups.len(),
        largest_increase,
        range,
        passed,
    }
}

/// Strict local minima of a curve, allowing plateaus of equal values.
pub fn local_minima(curve: &[f64]) -> Vec<usize> {
    (1..curve.len().saturating_sub(1))
        .filter(|&t| curve[t] <= curve[t - 1] && curve[t] <= curve[t + 1] && (curve[t] < curve[t - 1] || curve[t] < curve[t + 1]))
        .collect()
}

/// Writes `errors.csv` and, when `plots` is set, one SVG per curve kind.
pub fn write_report(report: &ErrorReport, dir: &Path, plots: bool) -> Result<()> {
    io::write_bytes(&dir.join("errors.csv"), report.to_csv().as_bytes())?;
    if plots {
        let names: Vec<String> = report.algorithms.iter().map(|a| a.to_string()).collect();
        io::write_bytes(
            &dir.join("errors_state.svg"),
            line_plot("mean state error", &names, &report.state_err).as_bytes(),
        )?;
        io::write_bytes(
            &dir.join("errors_ctrl.svg"),
            line_plot("mean control error", &names, &report.ctrl_err).as_bytes(),
        )?;
    }
    Ok(())
}

/// Minimal SVG line chart on a log-scaled y axis.
pub fn line_plot(title: &str, names: &[String], curves: &[Vec<f64>]) -> String {
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let colors = ["#d62728", "#1f77b4", "#2ca02c", "#9467bd"];
    let positive: Vec<f64> = curves.iter().flatten().cloned().filter(|v| *v > 0.0 && v.is_finite()).collect();
    let lo = positive.iter().cloned().fold(f64::INFINITY, f64::min).log10().floor();
    let hi = positive.iter().cloned().fold(f64::NEG_INFINITY, f64::max).log10().ceil();
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let len = curves.iter().map(|c| c.len()).max().unwrap_or(1).max(2);
    let x = |t: usize| pad + (w - 2.0 * pad) * t as f64 / (len - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * ((v.max(10f64.powf(lo)).log10() - lo) / (hi - lo));

    let mut svg = String::new();
    writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).expect("string write");
    writeln!(svg, r#"<rect width="{w}" height="{h}" fill="white"/>"#).expect("string write");
    writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#, w / 2.0).expect("string write");
    writeln!(
        svg,
        r#"<path d="M{pad},{pad} V{} H{}" stroke="black" fill="none"/>"#,
        h - pad,
        w - pad
    )
    .expect("string write");
    for e in lo as i64..=hi as i64 {
        let yy = y(10f64.powi(e as i32));
        writeln!(svg, r#"<text x="{}" y="{:.1}" text-anchor="end">1e{e}</text>"#, pad - 4.0, yy + 4.0).expect("string write");
    }
    writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">t</text>"#, w / 2.0, h - 15.0).expect("string write");
    for (k, (name, curve)) in names.iter().zip(curves).enumerate() {
        let color = colors[k % colors.len()];
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(t, v)| format!("{:.2},{:.2}", x(t), y(*v)))
            .collect();
        writeln!(svg, r#"<polyline points="{}" stroke="{color}" fill="none"/>"#, points.join(" ")).expect("string write");
        writeln!(
            svg,
            r#"<text x="{}" y="{}" fill="{color}">{name}</text>"#,
            w - pad - 60.0,
            pad + 15.0 * k as f64
        )
        .expect("string write");
    }
    svg.push_str("</svg>\n");
    svg
}

/// Parses an `errors.csv` back into its header and numeric rows.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::format("csv", "empty file"))?
        .split(',')
        .map(|s| s.trim().to_string())
        .collect();
    let rows = lines
        .map(|l| {
            let row: Vec<f64> = l
                .split(',')
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::format("csv", format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            check_len("csv row", header.len(), row.len())?;
            Ok(row)
        })
        .collect::<Result<_>>()?;
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn scalar(a: f64, noise: f64) -> LtiSystem {
        LtiSystem::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, 1.0), noise).unwrap()
    }

    fn zero_policy(n: usize, m: usize, horizon: usize) -> AffinePolicy {
        AffinePolicy::new(vec![DMatrix::zeros(m, n); horizon], vec![DVector::zeros(m); horizon]).unwrap()
    }

    #[test]
    fn white_states_when_a_is_zero() {
        let sys = LtiSystem::new(DMatrix::zeros(2, 2), DMatrix::identity(2, 2), 1.0).unwrap();
        let (g, warnings) = propagate_moments(&sys, &zero_policy(2, 2, 4), &[1.0, -1.0]).unwrap();
        assert!(warnings.is_empty());
        for t in 0..=4 {
            for s in 0..=4 {
                let block = g.cov.view((t * 2, s * 2), (2, 2));
                let expected = if t == s && t > 0 { DMatrix::identity(2, 2) } else { DMatrix::zeros(2, 2) };
                assert_eq!(block.clone_owned(), expected, "block ({t}, {s})");
            }
        }
    }

    #[test]
    fn scalar_variance_recursion() {
        let sys = scalar(0.5, 1.0);
        let (g, _) = propagate_moments(&sys, &zero_policy(1, 1, 10), &[2.0]).unwrap();
        let mut v = 0.0;
        for t in 0..=10 {
            assert!((g.cov[(t, t)] - v).abs() < 1e-14);
            assert!((g.mean[t] - 2.0 * 0.5f64.powi(t as i32)).abs() < 1e-14);
            v = 0.25 * v + 1.0;
        }
    }

    #[test]
    fn non_unit_noise_warns() {
        let (_, warnings) = propagate_moments(&scalar(0.5, 0.3), &zero_policy(1, 1, 3), &[0.0]).unwrap();
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn mahalanobis_basics() {
        let g = TrajectoryGaussian::new(DVector::from_vec(vec![1.0, 2.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(mahalanobis(&[1.0, 2.0], &g).unwrap().distance, 0.0);
        assert!((mahalanobis(&[1.0, 4.0], &g).unwrap().distance - 4.0).abs() < 1e-14);
    }

    #[test]
    fn mahalanobis_matches_linear_solve_on_support() {
        let mut s = rng::stream(1, 0, 0);
        let l = DMatrix::from_fn(6, 4, |_, _| rng::standard_normal(&mut s));
        let cov = &l * l.transpose();
        let mean = DVector::from_vec(rng::normal_vec(&mut s, 6));
        let g = TrajectoryGaussian::new(mean.clone(), cov.clone()).unwrap();
        assert_eq!(g.rank(), 4);
        // A point on the support: mean + L a; distance solves L'L a = L' delta.
        let a = DVector::from_vec(rng::normal_vec(&mut s, 4));
        let tau = &mean + &l * &a;
        let delta = &l * &a;
        let y = cov.clone().svd(true, true).solve(&delta, 1e-12).unwrap();
        let expected = delta.dot(&y);
        let got = mahalanobis(tau.as_slice(), &g).unwrap();
        assert!((got.distance - expected).abs() <= 1e-8 * expected);
        assert!(got.out_of_support < 1e-18 * delta.norm_squared().max(1.0) + 1e-20);
        // A component orthogonal to the support is reported separately.
        let z = DVector::from_vec(rng::normal_vec(&mut s, 6));
        let mut null = &z - &l * l.clone().svd(true, true).solve(&z, 1e-14).unwrap();
        null /= null.norm();
        let off = mahalanobis((&tau + &null * 3.0).as_slice(), &g).unwrap();
        assert!((off.out_of_support - 9.0).abs() < 1e-8);
        assert!((off.distance - expected).abs() <= 1e-6 * expected);
    }

    fn report_fixture() -> (Dims, Vec<Vec<f64>>, Vec<AlgorithmSamples>) {
        let dims = Dims { n: 2, m: 1, horizon: 3 };
        let mut s = rng::stream(2, 0, 0);
        let oracles: Vec<Vec<f64>> = (0..3).map(|_| rng::normal_vec(&mut s, dims.flat_len())).collect();
        let runs = [Algorithm::Vanilla, Algorithm::Alg1]
            .iter()
            .map(|&a| AlgorithmSamples {
                algorithm: a,
                samples: (0..12).map(|k| (k % 3, rng::normal_vec(&mut s, dims.flat_len()))).collect(),
            })
            .collect();
        (dims, oracles, runs)
    }

    #[test]
    fn identical_samples_give_zero_curves() {
        let (dims, oracles, _) = report_fixture();
        let runs = vec![AlgorithmSamples {
            algorithm: Algorithm::Alg1,
            samples: oracles.iter().cloned().enumerate().collect(),
        }];
        let r = error_curves(dims, &oracles, &runs).unwrap();
        assert!(r.state_err[0].iter().chain(&r.ctrl_err[0]).all(|&v| v == 0.0));
    }

    #[test]
    fn single_sample_hand_value() {
        let dims = Dims { n: 1, m: 1, horizon: 1 };
        let oracle = vec![vec![0.0, 1.0, 0.5]];
        let runs = vec![AlgorithmSamples {
            algorithm: Algorithm::Vanilla,
            samples: vec![(0, vec![1.0, 3.0, -0.5])],
        }];
        let r = error_curves(dims, &oracle, &runs).unwrap();
        assert_eq!(r.state_err[0], vec![1.0, 4.0]);
        assert_eq!(r.ctrl_err[0], vec![1.0]);
    }

    #[test]
    fn missing_oracle_is_error() {
        let (dims, oracles, mut runs) = report_fixture();
        runs[0].samples[0].0 = 7;
        assert!(error_curves(dims, &oracles, &runs).is_err());
    }

    #[test]
    fn permutation_invariant_and_csv_round_trip() {
        let (dims, oracles, runs) = report_fixture();
        let a = error_curves(dims, &oracles, &runs).unwrap();
        let mut shuffled = runs.clone();
        for r in &mut shuffled {
            r.samples.reverse();
            r.samples.rotate_left(5);
        }
        let b = error_curves(dims, &oracles, &shuffled).unwrap();
        assert_eq!(a, b);

        let (header, rows) = parse_csv(&a.to_csv()).unwrap();
        assert_eq!(header.len(), 1 + 2 * 2);
        assert_eq!(header[1], "state_err_vanilla");
        for (t, row) in rows.iter().enumerate() {
            assert_eq!(row[1].to_bits(), a.state_err[0][t].to_bits());
            if t < 3 {
                assert_eq!(row[4].to_bits(), a.ctrl_err[1][t].to_bits());
            } else {
                assert!(row[4].is_nan());
            }
        }
    }

    #[test]
    fn iterates_at_mean_give_zero_series() {
        let g = TrajectoryGaussian::new(DVector::from_vec(vec![1.0, 2.0, 3.0]), DMatrix::identity(3, 3)).unwrap();
        let iterates = vec![vec![1.0, 2.0, 3.0]; 5];
        let d = theorem1_diagnostic(&iterates, &g).unwrap();
        assert!(d.iter().all(|m| m.distance == 0.0));
        assert!(theorem1_diagnostic(&[], &g).is_err());
    }

    #[test]
    fn trend_and_minima() {
        let falling: Vec<f64> = (0..20).map(|k| 100.0 - k as f64).collect();
        assert!(trailing_trend(&falling, 0.5, 0.05, 0.01).passed);
        let mut bumpy = falling.clone();
        bumpy[15] = 90.0;
        assert!(!trailing_trend(&bumpy, 0.5, 0.05, 0.01).passed);
        assert_eq!(local_minima(&[3.0, 1.0, 2.0, 2.0, 0.5, 4.0]), vec![1, 4]);
    }

    #[test]
    fn svg_is_well_formed_enough() {
        let svg = line_plot("x", &["a".into()], &[vec![1.0, 0.1, 0.01]]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("polyline"));
    }
}
