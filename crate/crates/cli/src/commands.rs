use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cmgva::booster::{boost_with, BoostOutcome, ElboTrace};
use cmgva::mixture::CmgvaState;
use cmgva::rng::{seeded, substream};
use cmgva::targets::{
    equicorrelation, linear_target, logistic_target, mixnormal_target, posterior_mean, pps,
    standard_normal, t_copula_target, Dfnn, DfnnSpec, Linear, MixtureNormal, PredictiveModel,
    SkewNormalMixture, TargetModel,
};
use cmgva::CmgvaError;
use serde_json::json;

use crate::config::{Mode, RunConfig, TargetSpec};
use crate::data::{load, load_for, Dataset};
use crate::error::{io_err, CliError, CliResult};

/// Builds the log posterior named by `spec`.
pub fn build_target(spec: &TargetSpec) -> CliResult<Box<dyn TargetModel<f64>>> {
    let data = load_for(spec)?;
    Ok(match spec {
        TargetSpec::Gaussian { dim } => {
            if *dim == 0 {
                return Err(CliError::input("gaussian target needs dim >= 1"));
            }
            Box::new(standard_normal::<f64>(*dim))
        }
        TargetSpec::Tcopula { dim, rho, df, gamma } => Box::new(t_copula_target(*dim, *rho, *df, *gamma)?),
        TargetSpec::Mixnormal {
            dim,
            rho,
            means,
            modes,
            target_seed,
        } => match means {
            Some(mu) => Box::new(MixtureNormal::new(vec![1.0; mu.len()], mu.clone(), &equicorrelation(*dim, *rho))?),
            None => Box::new(mixnormal_target(*dim, *modes, *rho, &mut seeded(*target_seed))?),
        },
        TargetSpec::Logistic { .. } => {
            let d = data.unwrap();
            Box::new(logistic_target(d.x, d.cols, &d.y, SkewNormalMixture::regression_default())?)
        }
        TargetSpec::Linear { .. } => Box::new(linear_model(data.unwrap())?),
        TargetSpec::Dfnn { hidden, .. } => Box::new(dfnn_model(data.unwrap(), hidden)?),
    })
}

fn linear_model(d: Dataset) -> CliResult<Linear<f64>> {
    Ok(linear_target(d.x, d.cols, &d.y, SkewNormalMixture::regression_default())?)
}

fn dfnn_model(d: Dataset, hidden: &[usize]) -> CliResult<Dfnn<f64>> {
    let mut widths = vec![d.cols];
    widths.extend_from_slice(hidden);
    widths.push(1);
    Ok(Dfnn::new(DfnnSpec::new(widths)?, d.x, d.y)?)
}

/// Holds `dir/.cmgva.lock` for the lifetime of a run.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> CliResult<Self> {
        let p = dir.join(".cmgva.lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&p) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(p))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::input(format!(
                "{} exists: another run is using this output directory",
                p.display()
            ))),
            Err(e) => Err(io_err(&p, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn flush(mut w: csv::Writer<fs::File>, path: &Path) -> CliResult<()> {
    w.flush().map_err(|e| io_err(path, e))
}

/// Overrides applied on top of a config file.
#[derive(Clone, Debug, Default)]
pub struct FitOverrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub mode: Option<Mode>,
}

pub fn fit(config: &Path, ov: &FitOverrides) -> CliResult<()> {
    let mut rc = RunConfig::load(config).map_err(CliError::input)?;
    if let Some(s) = ov.seed {
        rc.boost.seed = s;
    }
    if let Some(m) = ov.mode {
        rc.mode = m;
    }
    rc.mode.apply(&mut rc.boost);
    let out = ov
        .out
        .clone()
        .or_else(|| rc.out_dir.clone())
        .ok_or_else(|| CliError::input("no output directory: pass --out or set [output] dir"))?;
    let target = build_target(&rc.target)?;
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let _lock = RunLock::acquire(&out)?;

    let mut checkpoints = Vec::new();
    let mut rng = seeded(rc.boost.seed);
    let result = boost_with(&target, &rc.boost, &mut rng, |k, state, _| {
        let name = format!("checkpoint_K{k}.json");
        let p = out.join(&name);
        fs::write(&p, state.to_json()?).map_err(|e| CmgvaError::Config(format!("{}: {e}", p.display())))?;
        checkpoints.push(name);
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(CmgvaError::Diverged { message, state }) => {
            let p = out.join("diverged_state.json");
            write_file(&p, &state)?;
            return Err(CliError::numerical(format!(
                "optimization diverged: {message} (last state in {})",
                p.display()
            )));
        }
        Err(e) => return Err(e.into()),
    };

    write_trace(&out.join("trace.csv"), &outcome.traces, rc.boost.ma_window)?;
    write_summary(&out.join("summary.csv"), &outcome)?;
    let manifest = json!({
        "mode": rc.mode,
        "seed": rc.boost.seed,
        "target": rc.target,
        "target_name": target.name(),
        "dim": target.dim(),
        "best_k": outcome.best_k,
        "window_elbos": outcome.window_elbos,
        "checkpoints": checkpoints,
        "diverged": outcome.traces.iter().map(|t| t.diverged).collect::<Vec<_>>(),
        "stopped_early": outcome.traces.iter().map(|t| t.stopped_early).collect::<Vec<_>>(),
        "boost": rc.boost,
    });
    let p = out.join("manifest.json");
    write_file(&p, &(serde_json::to_string_pretty(&manifest).map_err(CmgvaError::from)? + "\n"))?;

    let bad: Vec<String> = outcome
        .traces
        .iter()
        .enumerate()
        .filter(|(_, t)| t.diverged)
        .map(|(k, _)| (k + 1).to_string())
        .collect();
    if !bad.is_empty() {
        return Err(CliError::numerical(format!(
            "optimization diverged for K = {}; outputs written to {}",
            bad.join(", "),
            out.display()
        )));
    }
    eprintln!(
        "best K = {} (window ELBO {}); outputs in {}",
        outcome.best_k,
        outcome.window_elbos[outcome.best_k - 1],
        out.display()
    );
    Ok(())
}

fn write_trace(path: &Path, traces: &[ElboTrace<f64>], ma_window: usize) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iter", "K", "elbo", "elbo_ma"])?;
    for (k, t) in traces.iter().enumerate() {
        let ma = t.moving_average(ma_window);
        for (i, (v, m)) in t.values.iter().zip(&ma).enumerate() {
            w.write_record([(i + 1).to_string(), (k + 1).to_string(), v.to_string(), m.to_string()])?;
        }
    }
    flush(w, path)
}

fn write_summary(path: &Path, o: &BoostOutcome<f64>) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["K", "elbo_last500_avg"])?;
    for (k, e) in o.window_elbos.iter().enumerate() {
        w.write_record([(k + 1).to_string(), e.to_string()])?;
    }
    flush(w, path)
}

pub fn read_checkpoint(path: &Path) -> CliResult<CmgvaState<f64>> {
    let s = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    CmgvaState::from_json(&s).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

#[derive(Clone, Debug)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    pub draws: usize,
    pub out: PathBuf,
    pub seed: u64,
    /// Points per coordinate for marginal densities; 0 skips them.
    pub grid: usize,
    pub grid_out: Option<PathBuf>,
}

pub fn sample(a: &SampleArgs) -> CliResult<()> {
    let state = read_checkpoint(&a.checkpoint)?;
    let q = state.prepare()?;
    let m = state.dim();
    let mut w = csv_writer(&a.out)?;
    w.write_record((1..=m).map(|i| format!("theta_{i}")))?;
    let mut rng = seeded(a.seed);
    for d in q.sample(a.draws, &mut rng) {
        w.write_record(d.theta.iter().map(|v| v.to_string()))?;
    }
    flush(w, &a.out)?;

    if a.grid > 0 {
        let path = a
            .grid_out
            .clone()
            .ok_or_else(|| CliError::input("--grid needs --grid-out"))?;
        if a.grid < 2 {
            return Err(CliError::input("--grid needs at least 2 points"));
        }
        // the plotting range comes from a separate stream so the draws above
        // do not depend on --grid
        let refs = q.sample(2000, &mut substream(a.seed, 1));
        let mut w = csv_writer(&path)?;
        w.write_record(["coord", "theta", "log_density"])?;
        for i in 0..m {
            let (lo, hi) = refs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d.theta[i]), hi.max(d.theta[i]))
            });
            let pad = 0.25 * (hi - lo).max(1e-3);
            let (lo, hi) = (lo - pad, hi + pad);
            for g in 0..a.grid {
                let t = lo + (hi - lo) * g as f64 / (a.grid - 1) as f64;
                let ld = q.marginal_log_density(i, t);
                w.write_record([(i + 1).to_string(), t.to_string(), ld.to_string()])?;
            }
        }
        flush(w, &path)?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PpsArgs {
    pub checkpoint: PathBuf,
    pub config: PathBuf,
    pub test: PathBuf,
    pub draws: usize,
    pub seed: u64,
    pub out: Option<PathBuf>,
}

/// Returns the partial predictive score of the checkpoint on the test set.
pub fn predictive_score(a: &PpsArgs) -> CliResult<f64> {
    let rc = RunConfig::load(&a.config).map_err(CliError::input)?;
    let state = read_checkpoint(&a.checkpoint)?;
    let (model, test): (Box<dyn PredictiveModel<f64>>, Dataset) = match &rc.target {
        TargetSpec::Linear { data } => (
            Box::new(linear_model(load(data, true, &data.path)?)?),
            load(data, true, &a.test)?,
        ),
        TargetSpec::Dfnn { data, hidden } => (
            Box::new(dfnn_model(load(data, false, &data.path)?, hidden)?),
            load(data, false, &a.test)?,
        ),
        _ => {
            return Err(CliError::input(
                "pps needs a linear or dfnn target with a Gaussian likelihood",
            ))
        }
    };
    let want = match &rc.target {
        TargetSpec::Linear { .. } => test.cols + 1,
        _ => build_target(&rc.target)?.dim(),
    };
    if state.dim() != want {
        return Err(CliError::input(format!(
            "{} has dimension {}, the model needs {want}",
            a.checkpoint.display(),
            state.dim()
        )));
    }
    let theta = posterior_mean(&state, a.draws, &mut seeded(a.seed))?;
    let score = pps(model.as_ref(), &theta, &test.x, &test.y)?;
    if let Some(p) = &a.out {
        let mut w = csv_writer(p)?;
        w.write_record(["n_test", "pps"])?;
        w.write_record([test.y.len().to_string(), score.to_string()])?;
        flush(w, p)?;
    }
    Ok(score)
}
