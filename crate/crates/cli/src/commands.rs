//! The five pipeline stages.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::time::Instant;

use dyndiff::denoiser::{load_checkpoint, save_checkpoint, train as fit, Checkpoint};
use dyndiff::eval::{
    error_curves, fmt_f64, local_minima, mean_series, propagate_moments, residuals_csv, theorem1_csv,
    theorem1_diagnostic, trailing_trend, write_report, AlgorithmSamples, ResidualRow, TrajectoryGaussian,
};
use dyndiff::io;
use dyndiff::lti::response_matrices;
use dyndiff::projector::{data_projector, model_projector, Experiment};
use dyndiff::rng::derive_seed;
use dyndiff::sampler::{diagnostics_csv, fan_out, relative_residual, Algorithm, SampleDump, Sampler, TraceOptions};
use dyndiff::tasks::{
    generate_lqr_dataset, generate_waypoint_dataset, lqr_policy, ConditionLayout, Dataset, DatasetManifest,
    LqrDatasetConfig, TaskFamily,
};
use serde_json::json;

use crate::config::{write_resolved, Overrides, RunConfig};
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

fn log(stage: &str, msg: impl AsRef<str>) {
    eprintln!("[{stage}] {}", msg.as_ref());
}

/// Writes `resolved_config.json` and `inputs.json` (sha256 per input file,
/// keyed by path relative to the output root).
fn record_stage(cfg: &RunConfig, dir: &Path, inputs: &[PathBuf]) -> Result<()> {
    let mut files = BTreeMap::new();
    for p in inputs {
        let key = p.strip_prefix(&cfg.out).unwrap_or(p).display().to_string();
        files.insert(key, io::sha256_hex(&io::read_bytes(p)?));
    }
    write_resolved(cfg, dir)?;
    io::write_json(&dir.join("inputs.json"), &json!({ "files": files }))?;
    Ok(())
}

fn dataset_files(dir: &Path) -> Vec<PathBuf> {
    vec![dir.join("manifest.json"), dir.join("data.bin")]
}

fn load_dataset(dir: &Path, what: &str) -> Result<Dataset> {
    if !dir.join("manifest.json").exists() {
        return Err(CliError::io(format!(
            "no {what} at {}; run gen-data first",
            dir.display()
        )));
    }
    Dataset::load(dir).map_err(|e| CliError::from(e).context(what))
}

/// Training set, test set and the recorded experiment.
pub fn gen_data(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let sys = cfg.system()?;
    let (train_set, test_set) = match cfg.family {
        TaskFamily::Lqr => {
            // Test trajectories are the noiseless expert rollouts used as
            // the error oracle.
            let oracle = sys.with_noise_std(0.0)?;
            (
                generate_lqr_dataset(&sys, &cfg.lqr)?,
                generate_lqr_dataset(&oracle, &cfg.test_lqr())?,
            )
        }
        TaskFamily::Waypoint => (
            generate_waypoint_dataset(&sys, &cfg.waypoint)?,
            generate_waypoint_dataset(&sys, &cfg.test_waypoint())?,
        ),
    };
    for (set, stage) in [(&train_set, "dataset"), (&test_set, "test")] {
        let dir = cfg.dir(stage);
        set.save(&dir)?;
        record_stage(cfg, &dir, &[])?;
        log("gen-data", format!("{} records -> {}", set.len(), dir.display()));
    }
    let exp = Experiment::generate(&sys, &cfg.experiment)?;
    let dir = cfg.dir("experiment");
    exp.save(&dir)?;
    record_stage(cfg, &dir, &[])?;
    log(
        "gen-data",
        format!("experiment S={} -> {} ({:.1}s)", exp.length(), dir.display(), start.elapsed().as_secs_f64()),
    );
    Ok(())
}

/// Trains the shared denoiser, or one per algorithm.
pub fn train(cfg: &RunConfig) -> Result<()> {
    let data_dir = cfg.dir("dataset");
    let dataset = load_dataset(&data_dir, "training dataset")?;
    let m = dataset.manifest();
    if m.family != cfg.family || m.dims.horizon != cfg.horizon() || m.count != cfg.dataset_count() {
        return Err(CliError::validation(format!(
            "dataset at {} ({} family, T={}, N={}) does not match the config ({} family, T={}, N={})",
            data_dir.display(),
            m.family,
            m.dims.horizon,
            m.count,
            cfg.family,
            cfg.horizon(),
            cfg.dataset_count()
        )));
    }
    let manifest_sha = io::sha256_hex(&io::read_bytes(&data_dir.join("manifest.json"))?);
    let sched = cfg.schedule.build()?;
    let sys = dataset.system()?;
    let runs: Vec<(PathBuf, u64)> = if cfg.sampler.per_algorithm_training {
        cfg.sampler
            .algorithms
            .iter()
            .enumerate()
            .map(|(k, &alg)| (cfg.checkpoint_dir(alg), k as u64 + 1))
            .collect()
    } else {
        vec![(cfg.dir("checkpoint"), 0)]
    };
    for (dir, salt) in runs {
        let start = Instant::now();
        let mut net = cfg.denoiser_config(&sys);
        let mut tc = cfg.training.clone();
        if salt > 0 {
            net.seed = derive_seed(net.seed, salt);
            tc.seed = derive_seed(tc.seed, salt);
        }
        log(
            "train",
            format!("{} steps, batch {} -> {}", tc.epochs, tc.batch_size, dir.display()),
        );
        let params = fit(&dataset, &sched, &net, &tc, |params, step| {
            if step < tc.epochs {
                let ckpt = Checkpoint::new(
                    params.clone(),
                    &sched,
                    cfg.family,
                    dataset.dims(),
                    dataset.layout(),
                    dataset.scales().to_vec(),
                    manifest_sha.clone(),
                )?;
                save_checkpoint(&ckpt, &dir.join(format!("step-{step:06}")))?;
                log("train", format!("step {step}"));
            }
            Ok(())
        })?;
        let curve = params.metadata.as_ref().map(|m| m.loss_curve.clone()).unwrap_or_default();
        let ckpt = Checkpoint::new(
            params,
            &sched,
            cfg.family,
            dataset.dims(),
            dataset.layout(),
            dataset.scales().to_vec(),
            manifest_sha.clone(),
        )?;
        save_checkpoint(&ckpt, &dir)?;
        let mut csv = String::from("step,loss\n");
        for (k, l) in curve.iter().enumerate() {
            csv.push_str(&format!("{},{}\n", k + 1, fmt_f64(*l)));
        }
        io::write_bytes(&dir.join("loss.csv"), csv.as_bytes())?;
        record_stage(cfg, &dir, &dataset_files(&data_dir))?;
        let tail = &curve[curve.len().saturating_sub(100)..];
        log(
            "train",
            format!(
                "done in {:.1}s, mean loss over last {} steps {:.4e}",
                start.elapsed().as_secs_f64(),
                tail.len(),
                tail.iter().sum::<f64>() / tail.len().max(1) as f64
            ),
        );
    }
    Ok(())
}

fn experiment_dir(cfg: &RunConfig) -> PathBuf {
    cfg.dir("experiment")
}

fn load_experiment(cfg: &RunConfig) -> Result<Experiment> {
    let dir = experiment_dir(cfg);
    if !dir.join("manifest.json").exists() {
        return Err(CliError::validation(format!(
            "alg2 needs the recorded experiment data Gamma (inputs and states of one rollout) at {}, which is missing; run gen-data first",
            dir.display()
        )));
    }
    Experiment::load(&dir).map_err(|e| CliError::from(e).context("experiment Gamma"))
}

/// Samples `samples_per_condition` trajectories for every test condition.
pub fn sample(cfg: &RunConfig, alg: Algorithm) -> Result<()> {
    let start = Instant::now();
    let ckpt_dir = cfg.checkpoint_dir(alg);
    if !ckpt_dir.join("header.json").exists() {
        return Err(CliError::io(format!("no checkpoint at {}; run train first", ckpt_dir.display())));
    }
    let ckpt = load_checkpoint(&ckpt_dir).map_err(|e| CliError::from(e).context("checkpoint"))?;
    let test_dir = cfg.dir("test");
    let test = load_dataset(&test_dir, "test set")?;
    let h = &ckpt.header;
    if h.dims != test.dims() || h.condition != test.layout() || h.family != test.manifest().family {
        return Err(CliError::validation(format!(
            "checkpoint {} ({:?}, {:?}) does not match test set {} ({:?}, {:?})",
            ckpt_dir.display(),
            h.dims,
            h.condition,
            test_dir.display(),
            test.dims(),
            test.layout()
        )));
    }
    let train_manifest = cfg.dir("dataset").join("manifest.json");
    if train_manifest.exists() {
        let sha = io::sha256_hex(&io::read_bytes(&train_manifest)?);
        if sha != h.dataset_manifest_sha256 {
            return Err(CliError::validation(format!(
                "checkpoint {} was trained on a dataset with manifest sha256 {}, but {} has {sha}",
                ckpt_dir.display(),
                h.dataset_manifest_sha256,
                train_manifest.display()
            )));
        }
    }
    let sched = ckpt.schedule()?;
    let sys = test.system()?;
    let horizon = test.dims().horizon;
    let scales = h.scales.clone();
    let mut inputs = vec![ckpt_dir.join("header.json"), ckpt_dir.join("weights.bin")];
    inputs.extend(dataset_files(&test_dir));
    let projector = match alg {
        Algorithm::Vanilla | Algorithm::Alg1 => model_projector(&response_matrices(&sys, horizon)?, &scales)?,
        Algorithm::Alg2 => {
            let exp = load_experiment(cfg)?;
            inputs.extend(dataset_files(&experiment_dir(cfg)));
            data_projector(&exp, horizon, &scales)?
        }
    };
    for w in projector.warnings() {
        log("sample", format!("warning: {w}"));
    }
    let sampler = Sampler {
        params: &ckpt.params,
        schedule: &sched,
        scales: &scales,
        algorithm: alg,
        projector: Some(&projector),
        rule: cfg.sampler.projection,
    };
    let conditions: Vec<Vec<f64>> = (0..test.len()).map(|i| test.condition(i).to_vec()).collect();
    let spc = cfg.sampler.samples_per_condition;
    let requests = fan_out(&conditions, spc);
    let traced = cfg.sampler.traced.min(requests.len());
    let seed = cfg.sampler.seed;
    let full = TraceOptions {
        diagnostics: true,
        iterates: alg.is_projected(),
    };
    let mut traces = sampler.batch(&requests[..traced], seed, full)?;
    traces.extend(sampler.batch(&requests[traced..], seed, TraceOptions::default())?);

    let dump = SampleDump::new(
        alg,
        test.dims(),
        test.layout(),
        seed,
        spc,
        &traces,
        &conditions,
        alg.is_projected().then(|| projector.rank()),
        alg.is_projected().then_some(cfg.sampler.projection),
    )?;
    let dir = cfg.samples_dir(alg);
    dump.save(&dir)?;
    io::write_bytes(&dir.join("diagnostics.csv"), diagnostics_csv(&traces, &sched).as_bytes())?;
    record_stage(cfg, &dir, &inputs)?;
    log(
        "sample",
        format!(
            "{alg}: {} samples (projector rank {}) -> {} ({:.1}s)",
            dump.len(),
            projector.rank(),
            dir.display(),
            start.elapsed().as_secs_f64()
        ),
    );
    Ok(())
}

/// Error curves, residuals, the convergence diagnostic and a summary.
pub fn eval(cfg: &RunConfig) -> Result<()> {
    let test_dir = cfg.dir("test");
    let test = load_dataset(&test_dir, "test set")?;
    let train_manifest_path = cfg.dir("dataset").join("manifest.json");
    if !train_manifest_path.exists() {
        return Err(CliError::io(format!(
            "no training manifest at {}; run gen-data first",
            train_manifest_path.display()
        )));
    }
    let train_manifest: DatasetManifest = io::read_json(&train_manifest_path, "dataset manifest")?;
    let dims = test.dims();
    if train_manifest.dims != dims {
        return Err(CliError::validation("training and test sets have different dimensions"));
    }
    let scales = &train_manifest.scales;
    let mut inputs = vec![train_manifest_path.clone()];
    inputs.extend(dataset_files(&test_dir));

    let mut dumps = Vec::new();
    for &alg in &cfg.sampler.algorithms {
        let dir = cfg.samples_dir(alg);
        if !dir.join("manifest.json").exists() {
            return Err(CliError::io(format!(
                "no {alg} samples at {}; run sample --algorithm {alg} first",
                dir.display()
            )));
        }
        let dump = SampleDump::load(&dir).map_err(|e| CliError::from(e).context(&format!("{alg} samples")))?;
        if dump.manifest.dims != dims || dump.manifest.condition != test.layout() {
            return Err(CliError::validation(format!("{alg} samples do not match the test set")));
        }
        inputs.extend([dir.join("manifest.json"), dir.join("data.bin")]);
        dumps.push((alg, dump));
    }

    let oracles: Vec<Vec<f64>> = (0..test.len()).map(|i| test.trajectory(i).to_vec()).collect();
    let runs: Vec<AlgorithmSamples> = dumps
        .iter()
        .map(|(alg, d)| AlgorithmSamples {
            algorithm: *alg,
            samples: (0..d.len())
                .map(|k| (d.manifest.condition_index[k], d.trajectory(k).to_vec()))
                .collect(),
        })
        .collect();
    let report = error_curves(dims, &oracles, &runs)?;
    let dir = cfg.dir("report");
    write_report(&report, &dir, cfg.eval.plots)?;

    let sys = train_manifest.system.build()?;
    let model = model_projector(&response_matrices(&sys, dims.horizon)?, scales)?;
    let layout = test.layout();
    let mut rows = Vec::new();
    let mut per_alg = serde_json::Map::new();
    for (alg, d) in &dumps {
        let mut worst: f64 = 0.0;
        for k in 0..d.len() {
            let tau = d.trajectory(k);
            let rel = relative_residual(&model, tau, scales)?;
            let x_init = layout.x_init(test.condition(d.manifest.condition_index[k]));
            let x0_error = x_init
                .iter()
                .zip(&tau[..dims.n])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(rel);
            rows.push(ResidualRow {
                algorithm: *alg,
                sample_id: d.manifest.sample_ids[k],
                rel_residual: rel,
                x0_error,
            });
        }
        per_alg.insert(
            alg.to_string(),
            json!({
                "samples": d.len(),
                "mean_state_error": report.mean_state_error(*alg)?,
                "mean_ctrl_error": report.mean_ctrl_error(*alg)?,
                "max_rel_residual": worst,
                "projector_rank": d.manifest.projector_rank,
            }),
        );
    }
    io::write_bytes(&dir.join("residuals.csv"), residuals_csv(&rows).as_bytes())?;

    let mut summary = json!({
        "family": cfg.family,
        "dims": dims,
        "algorithms": per_alg,
    });
    if cfg.family == TaskFamily::Lqr {
        if let Some((_, d)) = dumps.iter().find(|(a, d)| *a == Algorithm::Alg1 && d.manifest.traced > 0) {
            let generator: LqrDatasetConfig = serde_json::from_value(test.manifest().generator.clone())
                .map_err(|e| CliError::validation(format!("test set generator: {e}")))?;
            let series = theorem1_series(&sys, &generator, &test, d)?;
            io::write_bytes(&dir.join("theorem1.csv"), theorem1_csv(&series).as_bytes())?;
            let trend = trailing_trend(&series, 0.5, 0.05, 0.01);
            summary["theorem1"] = json!({
                "traces": d.manifest.traced,
                "pairs": trend.pairs,
                "increases": trend.increases,
                "largest_increase": trend.largest_increase,
                "range": trend.range,
                "non_increasing": trend.passed,
            });
            inputs.push(cfg.samples_dir(Algorithm::Alg1).join("traces.bin"));
        }
    } else if let Some(times) = &cfg.waypoint.waypoint_times {
        let mut minima = serde_json::Map::new();
        for alg in &report.algorithms {
            minima.insert(alg.to_string(), json!(local_minima(report.state_curve(*alg)?)));
        }
        summary["waypoint_times"] = json!(times);
        summary["state_error_minima"] = json!(minima);
    }
    io::write_json(&dir.join("summary.json"), &summary)?;
    record_stage(cfg, &dir, &inputs)?;
    for (alg, _) in &dumps {
        log(
            "eval",
            format!(
                "{alg}: mean state error {:.4e}, mean control error {:.4e}",
                report.mean_state_error(*alg)?,
                report.mean_ctrl_error(*alg)?
            ),
        );
    }
    log("eval", format!("report -> {}", dir.display()));
    Ok(())
}

/// Mean Mahalanobis distance of the traced iterates to the moment-propagated
/// closed-loop Gaussian of their own condition, `i = L` first.
fn theorem1_series(
    sys: &dyndiff::lti::LtiSystem,
    generator: &LqrDatasetConfig,
    test: &Dataset,
    dump: &SampleDump,
) -> Result<Vec<f64>> {
    let layout: ConditionLayout = test.layout();
    let mut gaussians: HashMap<usize, TrajectoryGaussian> = HashMap::new();
    let mut series = Vec::with_capacity(dump.manifest.traced);
    for k in 0..dump.manifest.traced {
        let c = dump.manifest.condition_index[k];
        if let std::collections::hash_map::Entry::Vacant(e) = gaussians.entry(c) {
            let cond = test.condition(c);
            let x_init = layout.x_init(cond).to_vec();
            let task = generator.task(x_init.clone(), layout.x_target(cond).to_vec())?;
            let policy = lqr_policy(sys, &task)?;
            let (g, _) = propagate_moments(sys, &policy, &x_init)?;
            e.insert(g);
        }
        let iterates: Vec<Vec<f64>> = (0..dump.manifest.trace_len)
            .map(|j| dump.iterate(k, j).to_vec())
            .collect();
        let dist = theorem1_diagnostic(&iterates, &gaussians[&c])?;
        series.push(dist.into_iter().map(|m| m.distance).collect());
    }
    Ok(mean_series(&series)?)
}

/// Every stage for one configuration.
pub fn pipeline(cfg: &RunConfig) -> Result<()> {
    gen_data(cfg)?;
    train(cfg)?;
    for &alg in &cfg.sampler.algorithms {
        sample(cfg, alg)?;
    }
    eval(cfg)
}

/// Full runs under `<out>/<family>`; both families unless the family is
/// fixed by a flag or by the config file.
pub fn repro(ov: &Overrides) -> Result<Vec<RunConfig>> {
    let base = RunConfig::load(ov)?;
    let fixed = ov.family.is_some() || config_sets_family(ov)?;
    let families = if fixed {
        vec![base.family]
    } else {
        vec![TaskFamily::Lqr, TaskFamily::Waypoint]
    };
    let mut done = Vec::new();
    for family in families {
        let cfg = RunConfig::load(&Overrides {
            family: Some(family),
            out: Some(base.out.join(family.to_string())),
            ..ov.clone()
        })?;
        let start = Instant::now();
        log("repro", format!("{family} ({:?} profile) -> {}", cfg.profile, cfg.out.display()));
        pipeline(&cfg)?;
        log("repro", format!("{family} finished in {:.1}s", start.elapsed().as_secs_f64()));
        done.push(cfg);
    }
    Ok(done)
}

fn config_sets_family(ov: &Overrides) -> Result<bool> {
    let Some(path) = &ov.config else {
        return Ok(false);
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("reading config {}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::validation(format!("config: {e}")))?;
    Ok(value.get("family").is_some())
}
