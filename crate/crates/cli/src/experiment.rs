//! Run modes: simulate, filter, sweep and the Kalman oracle check.
//!
//! Every mode writes its CSVs and a `manifest.json` into the output directory.
//! Repeats run as parallel jobs whose seeds are derived from `(seed, repeat)`,
//! so outputs depend only on the config and the seed.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use npf_core::diagnostics::{fit_inverse_sqrt_rate, loglog_slope, normalized_abs_error};
use npf_core::inner_filter::run_bootstrap;
use npf_core::kalman::{kalman_filter, log_marginal};
use npf_core::nested::{write_step_csv_header, NESS_CSV_HEADER};
use npf_core::seed::derive;
use npf_core::{
    lorenz63, FilterRng, GroundTruth, JitterKernel, LinearGaussianModel, NestedFilter, ObsVector, ParamVector,
    StateSpaceModel, StepOutput,
};
use rand::SeedableRng;
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ModelKind};
use crate::manifest::Manifest;

/// Published error constants for `(S, R, B, k_o)` at N = M = 600; metadata only.
pub const LORENZ_REFERENCE_C: [f64; 4] = [0.807, 0.290, 0.496, 0.397];

const FILTER_SALT: u64 = 0x6E70_665F_6669_6C74;

/// Seed of the ground truth for repeat `r`. Shared by every sweep size.
pub fn truth_seed(seed: u64, repeat: usize) -> u64 {
    derive(seed, repeat as u64)
}

/// Seed of the filter for repeat `r` at outer size `n`.
pub fn filter_seed(seed: u64, repeat: usize, n: usize) -> u64 {
    derive(derive(seed ^ FILTER_SALT, n as u64), repeat as u64)
}

/// A simulated data set.
#[derive(Debug, Clone)]
pub enum Truth {
    Lorenz(GroundTruth),
    /// `states[0]` is `x_0`; `observations[t-1]` is `y_t`.
    LinearGaussian {
        states: Vec<f64>,
        observations: Vec<f64>,
    },
}

impl Truth {
    pub fn simulate(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        let mut rng = FilterRng::seed_from_u64(seed);
        Ok(match cfg.model {
            ModelKind::Lorenz63 => {
                let lc = cfg.lorenz.to_core();
                let theta = ParamVector::new(cfg.true_params());
                let truth = lorenz63::simulate_truth(&lc, &theta, cfg.n_obs * lc.obs_gap, &mut rng)
                    .context("simulating the Lorenz ground truth")?;
                Truth::Lorenz(truth)
            }
            ModelKind::LinearGaussian => {
                let (states, observations) = cfg.linear_gaussian_model()?.simulate(cfg.n_obs, &mut rng);
                Truth::LinearGaussian { states, observations }
            }
        })
    }

    pub fn observations(&self) -> Vec<ObsVector> {
        match self {
            Truth::Lorenz(t) => t.observations.clone(),
            Truth::LinearGaussian { observations, .. } => observations.iter().map(|&y| ObsVector::from([y])).collect(),
        }
    }

    pub fn write_truth_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self {
            Truth::Lorenz(t) => t.write_csv(w),
            Truth::LinearGaussian { states, observations } => {
                writeln!(w, "epoch,x,y")?;
                for (i, y) in observations.iter().enumerate() {
                    writeln!(w, "{},{:.16e},{y:.16e}", i + 1, states[i + 1])?;
                }
                Ok(())
            }
        }
    }
}

fn obs_columns(model: ModelKind) -> &'static [&'static str] {
    match model {
        ModelKind::Lorenz63 => &["y1", "y3"],
        ModelKind::LinearGaussian => &["y"],
    }
}

pub fn write_observations_csv<W: Write>(mut w: W, model: ModelKind, obs: &[ObsVector]) -> std::io::Result<()> {
    writeln!(w, "epoch,{}", obs_columns(model).join(","))?;
    for (i, y) in obs.iter().enumerate() {
        write!(w, "{}", i + 1)?;
        for v in y.iter() {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Parse an observation CSV: an `epoch` column followed by one column per coordinate.
pub fn read_observations(path: &Path, obs_dim: usize) -> Result<Vec<ObsVector>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let headers = reader.headers()?.clone();
    ensure!(
        headers.len() == obs_dim + 1 && headers.get(0) == Some("epoch"),
        "{}: expected an epoch column and {obs_dim} observation columns, got {:?}",
        path.display(),
        headers
    );
    let mut out = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.with_context(|| format!("{} row {}", path.display(), i + 1))?;
        let coords = (1..=obs_dim)
            .map(|k| record[k].trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .with_context(|| format!("{} row {}", path.display(), i + 1))?;
        out.push(ObsVector::new(coords));
    }
    ensure!(!out.is_empty(), "{} holds no observations", path.display());
    Ok(out)
}

fn create(out: &Path, name: &str, manifest: &mut Manifest) -> Result<BufWriter<File>> {
    let path = out.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    manifest.files.push(name.to_string());
    Ok(BufWriter::new(
        File::create(&path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

/// What `simulate` produced.
#[derive(Debug, Clone)]
pub struct SimulateSummary {
    pub truth: Truth,
    pub n_obs: usize,
}

/// Write `truth.csv` and `observations.csv` for the config's seed.
pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<SimulateSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("simulate", cfg);
    let truth = Truth::simulate(cfg, truth_seed(cfg.seed, 0))?;
    let obs = truth.observations();
    truth.write_truth_csv(create(out, "truth.csv", &mut manifest)?)?;
    write_observations_csv(create(out, "observations.csv", &mut manifest)?, cfg.model, &obs)?;
    manifest.write(out)?;
    Ok(SimulateSummary {
        n_obs: obs.len(),
        truth,
    })
}

/// One filter run over one observation sequence.
#[derive(Debug, Clone)]
pub struct RepeatResult {
    pub outputs: Vec<StepOutput>,
    pub step_seconds: Vec<f64>,
    /// `errors[t][k]`: normalised error of parameter `k` after epoch `t + 1`.
    pub errors: Vec<Vec<f64>>,
}

impl RepeatResult {
    pub fn final_estimate(&self) -> &[f64] {
        &self.outputs.last().expect("runs hold at least one epoch").param_mean
    }

    /// Mean error per parameter over the epoch range `[from, to)`.
    pub fn window_error(&self, from: usize, to: usize) -> Vec<f64> {
        let d = self.errors[0].len();
        let len = (to - from) as f64;
        (0..d)
            .map(|k| self.errors[from..to].iter().map(|e| e[k]).sum::<f64>() / len)
            .collect()
    }
}

fn filter_generic<S: StateSpaceModel>(
    model: &S,
    kernel: JitterKernel,
    n: usize,
    m: usize,
    seed: u64,
    obs: &[ObsVector],
    truth: &[f64],
) -> Result<RepeatResult> {
    let mut filter = NestedFilter::new(model, kernel, n, m, seed)?;
    let mut outputs = Vec::with_capacity(obs.len());
    let mut step_seconds = Vec::with_capacity(obs.len());
    let mut errors = Vec::with_capacity(obs.len());
    for y in obs {
        let start = Instant::now();
        let out = filter.step(y)?;
        step_seconds.push(start.elapsed().as_secs_f64());
        let e = out
            .param_mean
            .iter()
            .zip(truth)
            .map(|(&est, &tru)| normalized_abs_error(est, tru))
            .collect::<npf_core::Result<Vec<_>>>()?;
        errors.push(e);
        outputs.push(out);
    }
    Ok(RepeatResult {
        outputs,
        step_seconds,
        errors,
    })
}

/// Run the nested filter configured by `cfg` on `obs`.
pub fn filter_once(
    cfg: &ExperimentConfig,
    kernel: JitterKernel,
    n: usize,
    m: usize,
    seed: u64,
    obs: &[ObsVector],
) -> Result<RepeatResult> {
    let truth = cfg.true_params();
    match cfg.model {
        ModelKind::Lorenz63 => filter_generic(&cfg.lorenz_model()?, kernel, n, m, seed, obs, &truth),
        ModelKind::LinearGaussian => filter_generic(&cfg.linear_gaussian_model()?, kernel, n, m, seed, obs, &truth),
    }
}

pub fn obs_dim(model: ModelKind) -> usize {
    obs_columns(model).len()
}

fn param_dim(cfg: &ExperimentConfig) -> usize {
    cfg.true_params().len()
}

fn state_dim(model: ModelKind) -> usize {
    match model {
        ModelKind::Lorenz63 => 3,
        ModelKind::LinearGaussian => 1,
    }
}

/// Results of `run`, one entry per repeat.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub repeats: Vec<RepeatResult>,
    /// `mean_errors[t][k]`, averaged over repeats.
    pub mean_errors: Vec<Vec<f64>>,
}

impl RunSummary {
    /// Mean error per parameter over the first and last `fraction` of epochs.
    pub fn first_last_window(&self, fraction: f64) -> (Vec<f64>, Vec<f64>) {
        let t = self.mean_errors.len();
        let w = ((t as f64 * fraction).ceil() as usize).clamp(1, t);
        let avg = |range: std::ops::Range<usize>| {
            let d = self.mean_errors[0].len();
            (0..d)
                .map(|k| self.mean_errors[range.clone()].iter().map(|e| e[k]).sum::<f64>() / w as f64)
                .collect::<Vec<_>>()
        };
        (avg(0..w), avg(t - w..t))
    }
}

/// Filter `repeats` data sets and write per-repeat step/NESS tables plus
/// `errors.csv` and `final.csv`.
///
/// With `observations` given, every repeat filters that sequence; otherwise
/// each repeat simulates its own ground truth.
pub fn run_npf(
    cfg: &ExperimentConfig,
    no_jitter: bool,
    observations: Option<&[ObsVector]>,
    out: &Path,
) -> Result<RunSummary> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mode = if no_jitter { "run --no-jitter" } else { "run" };
    let mut manifest = Manifest::new(mode, cfg);
    if observations.is_some() {
        manifest.truth_policy = "observations supplied by file, shared by every repeat".to_string();
    }
    let kernel = cfg.kernel(no_jitter)?;
    let jobs: Vec<(Option<Truth>, RepeatResult)> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let (truth, obs) = match observations {
                Some(o) => (None, o.to_vec()),
                None => {
                    let t = Truth::simulate(cfg, truth_seed(cfg.seed, r))?;
                    let o = t.observations();
                    (Some(t), o)
                }
            };
            let res = filter_once(cfg, kernel.clone(), cfg.n, cfg.m, filter_seed(cfg.seed, r, cfg.n), &obs)
                .with_context(|| format!("repeat {r}"))?;
            Ok((truth, res))
        })
        .collect::<Result<_>>()?;

    let (d_theta, d_x) = (param_dim(cfg), state_dim(cfg.model));
    for (r, (truth, res)) in jobs.iter().enumerate() {
        let dir = format!("repeat_{r:03}");
        if let Some(t) = truth {
            t.write_truth_csv(create(out, &format!("{dir}/truth.csv"), &mut manifest)?)?;
            write_observations_csv(
                create(out, &format!("{dir}/observations.csv"), &mut manifest)?,
                cfg.model,
                &t.observations(),
            )?;
        }
        let mut steps = create(out, &format!("{dir}/steps.csv"), &mut manifest)?;
        write_step_csv_header(&mut steps, d_theta, d_x)?;
        let mut ness = create(out, &format!("{dir}/ness.csv"), &mut manifest)?;
        writeln!(ness, "{NESS_CSV_HEADER}")?;
        for o in &res.outputs {
            o.write_csv_row(&mut steps)?;
            o.write_ness_row(&mut ness)?;
        }
        manifest.step_seconds.push(res.step_seconds.clone());
    }

    let repeats: Vec<RepeatResult> = jobs.into_iter().map(|(_, r)| r).collect();
    let t_len = repeats[0].errors.len();
    let mean_errors: Vec<Vec<f64>> = (0..t_len)
        .map(|t| {
            (0..d_theta)
                .map(|k| repeats.iter().map(|r| r.errors[t][k]).sum::<f64>() / repeats.len() as f64)
                .collect()
        })
        .collect();

    let names = cfg.param_names();
    let mut errors = create(out, "errors.csv", &mut manifest)?;
    writeln!(
        errors,
        "t,{}",
        names.iter().map(|n| format!("err_{n}")).collect::<Vec<_>>().join(",")
    )?;
    for (t, e) in mean_errors.iter().enumerate() {
        write!(errors, "{}", t + 1)?;
        for v in e {
            write!(errors, ",{v:.16e}")?;
        }
        writeln!(errors)?;
    }
    let mut fin = create(out, "final.csv", &mut manifest)?;
    writeln!(
        fin,
        "repeat,{},{}",
        names.iter().map(|n| format!("est_{n}")).collect::<Vec<_>>().join(","),
        names.iter().map(|n| format!("err_{n}")).collect::<Vec<_>>().join(",")
    )?;
    for (r, res) in repeats.iter().enumerate() {
        write!(fin, "{r}")?;
        for v in res.final_estimate().iter().chain(res.errors.last().unwrap()) {
            write!(fin, ",{v:.16e}")?;
        }
        writeln!(fin)?;
    }
    drop((errors, fin));
    manifest.write(out)?;
    Ok(RunSummary { repeats, mean_errors })
}

/// One `(N, repeat)` cell of a sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub n: usize,
    pub repeat: usize,
    pub window_error: Vec<f64>,
    pub step_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ParamFit {
    pub name: String,
    pub c_hat: f64,
    pub residual: f64,
    pub slope: Option<f64>,
    /// `(N, mean window error)` for every swept size.
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SweepSummary {
    pub rows: Vec<SweepRow>,
    pub fits: Vec<ParamFit>,
}

/// Run `repeats` seeds at each `N = M` in the sweep list, average the
/// end-of-horizon errors and fit `e(N) = c / sqrt(N)` per parameter.
pub fn run_sweep(cfg: &ExperimentConfig, out: &Path) -> Result<SweepSummary> {
    cfg.validate()?;
    let n_list = &cfg.sweep.n_list;
    ensure!(n_list.len() >= 2, "a sweep needs at least two sizes");
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("sweep", cfg);
    manifest.truth_policy = format!("{} Shared by every swept N.", manifest.truth_policy);
    let kernel = cfg.kernel(false)?;

    let truths: Vec<Vec<ObsVector>> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| Ok(Truth::simulate(cfg, truth_seed(cfg.seed, r))?.observations()))
        .collect::<Result<_>>()?;
    let t_len = truths[0].len();
    let w = ((t_len as f64 * cfg.sweep.window_fraction).ceil() as usize).clamp(1, t_len);

    let cells: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| (0..cfg.repeats).map(move |r| (n, r)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .into_par_iter()
        .map(|(n, r)| {
            let res = filter_once(cfg, kernel.clone(), n, n, filter_seed(cfg.seed, r, n), &truths[r])
                .with_context(|| format!("sweep N={n}, repeat {r}"))?;
            Ok(SweepRow {
                n,
                repeat: r,
                window_error: res.window_error(t_len - w, t_len),
                step_seconds: res.step_seconds,
            })
        })
        .collect::<Result<_>>()?;

    let names = cfg.param_names();
    let mut raw = create(out, "sweep.csv", &mut manifest)?;
    writeln!(
        raw,
        "n,m,repeat,{}",
        names.iter().map(|n| format!("err_{n}")).collect::<Vec<_>>().join(",")
    )?;
    for row in &rows {
        write!(raw, "{},{},{}", row.n, row.n, row.repeat)?;
        for v in &row.window_error {
            write!(raw, ",{v:.16e}")?;
        }
        writeln!(raw)?;
        manifest.step_seconds.push(row.step_seconds.clone());
    }

    let mut fits = Vec::with_capacity(names.len());
    for (k, name) in names.iter().enumerate() {
        let points: Vec<(f64, f64)> = n_list
            .iter()
            .map(|&n| {
                let errs: Vec<f64> = rows.iter().filter(|r| r.n == n).map(|r| r.window_error[k]).collect();
                (n as f64, errs.iter().sum::<f64>() / errs.len() as f64)
            })
            .collect();
        let fit = fit_inverse_sqrt_rate(&points)?;
        fits.push(ParamFit {
            name: name.clone(),
            c_hat: fit.c_hat,
            residual: fit.residual,
            slope: loglog_slope(&points),
            points,
        });
    }
    let mut rf = create(out, "rate_fit.csv", &mut manifest)?;
    writeln!(rf, "param,c_hat,residual,loglog_slope,reference_c")?;
    for (k, f) in fits.iter().enumerate() {
        let slope = f.slope.map(|s| format!("{s:.16e}")).unwrap_or_default();
        let reference = match cfg.model {
            ModelKind::Lorenz63 => LORENZ_REFERENCE_C.get(k).map(|c| c.to_string()).unwrap_or_default(),
            ModelKind::LinearGaussian => String::new(),
        };
        writeln!(
            rf,
            "{},{:.16e},{:.16e},{slope},{reference}",
            f.name, f.c_hat, f.residual
        )?;
    }
    drop((raw, rf));
    manifest.write(out)?;
    Ok(SweepSummary { rows, fits })
}

#[derive(Debug, Clone)]
pub struct KalmanSeedReport {
    pub seed: usize,
    pub mean_abs_dev: f64,
    pub max_abs_dev: f64,
    pub log_marginal_pf: f64,
    pub log_marginal_exact: f64,
}

#[derive(Debug, Clone)]
pub struct KalmanSummary {
    pub seeds: Vec<KalmanSeedReport>,
    /// Mean over seeds and steps of `|PF mean - Kalman mean|`.
    pub mean_abs_dev: f64,
    pub max_log_marginal_gap: f64,
    pub passed: bool,
}

/// `(particle filter mean, Kalman mean)` per step.
pub type MeanSeries = Vec<(f64, f64)>;

/// Bootstrap filter with `m` particles against the Kalman recursion on fresh
/// data sets; returns per-seed deviations and the per-step series.
pub fn kalman_compare(
    model: &LinearGaussianModel,
    m: usize,
    steps: usize,
    seeds: usize,
    seed: u64,
) -> Result<(Vec<KalmanSeedReport>, Vec<MeanSeries>)> {
    let theta = model.true_param();
    let results: Vec<(KalmanSeedReport, MeanSeries)> = (0..seeds)
        .into_par_iter()
        .map(|s| {
            let mut rng = FilterRng::seed_from_u64(truth_seed(seed, s));
            let (_, y) = model.simulate(steps, &mut rng);
            let obs: Vec<ObsVector> = y.iter().map(|&v| ObsVector::from([v])).collect();
            let exact = kalman_filter(model.a(), model.q(), model.r(), model.m0(), model.p0(), &y);
            let mut rng = FilterRng::seed_from_u64(filter_seed(seed, s, m));
            let run = run_bootstrap(model, &theta, &obs, m, &mut rng)?;
            let series: MeanSeries = run
                .filter_means()
                .iter()
                .zip(&exact)
                .map(|(p, k)| (p[0], k.mean))
                .collect();
            let devs: Vec<f64> = series.iter().map(|(p, k)| (p - k).abs()).collect();
            let report = KalmanSeedReport {
                seed: s,
                mean_abs_dev: devs.iter().sum::<f64>() / devs.len() as f64,
                max_abs_dev: devs.iter().copied().fold(0.0, f64::max),
                log_marginal_pf: run.log_marginal(),
                log_marginal_exact: log_marginal(&exact),
            };
            Ok((report, series))
        })
        .collect::<Result<_>>()?;
    Ok(results.into_iter().unzip())
}

/// Compare the bootstrap filter with the exact recursion and write
/// `kalman.csv` (both series) and `kalman_summary.csv`.
pub fn run_kalman_check(cfg: &ExperimentConfig, out: &Path) -> Result<KalmanSummary> {
    cfg.validate()?;
    cfg.require_model(ModelKind::LinearGaussian)?;
    fs::create_dir_all(out)?;
    let mut manifest = Manifest::new("kalman-check", cfg);
    let kc = &cfg.kalman;
    let lg = &cfg.linear_gaussian;
    let model = LinearGaussianModel::new(kc.a, lg.q, lg.r)?.with_state_prior(lg.m0, lg.p0)?;
    let (reports, series) = kalman_compare(&model, kc.m, kc.steps, kc.seeds, cfg.seed)?;

    let mut w = create(out, "kalman.csv", &mut manifest)?;
    writeln!(w, "seed,t,pf_mean,kalman_mean,abs_dev")?;
    for (s, rows) in series.iter().enumerate() {
        for (t, (p, k)) in rows.iter().enumerate() {
            writeln!(w, "{s},{},{p:.16e},{k:.16e},{:.16e}", t + 1, (p - k).abs())?;
        }
    }
    let mut w2 = create(out, "kalman_summary.csv", &mut manifest)?;
    writeln!(
        w2,
        "seed,mean_abs_dev,max_abs_dev,log_marginal_pf,log_marginal_exact,log_marginal_gap"
    )?;
    for r in &reports {
        writeln!(
            w2,
            "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.seed,
            r.mean_abs_dev,
            r.max_abs_dev,
            r.log_marginal_pf,
            r.log_marginal_exact,
            (r.log_marginal_pf - r.log_marginal_exact).abs()
        )?;
    }
    drop((w, w2));
    manifest.write(out)?;

    let mean_abs_dev = reports.iter().map(|r| r.mean_abs_dev).sum::<f64>() / reports.len() as f64;
    let max_log_marginal_gap = reports
        .iter()
        .map(|r| (r.log_marginal_pf - r.log_marginal_exact).abs())
        .fold(0.0, f64::max);
    let passed = mean_abs_dev < kc.mean_tolerance && max_log_marginal_gap < kc.log_marginal_tolerance;
    Ok(KalmanSummary {
        seeds: reports,
        mean_abs_dev,
        max_log_marginal_gap,
        passed,
    })
}
