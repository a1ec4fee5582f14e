use std::fs;
use std::path::Path;

use physio_jde::aslmodel::{simulate_dataset, GroundTruth, ParcelDataset};
use physio_jde::balloon::generate_responses_with_step;
use physio_jde::csvio;
use physio_jde::eval::{compare_methods, run_noise_sweep, write_sweep_csv};
use physio_jde::linop::build_omega;
use physio_jde::sampler::{compute_residuals, fit, fit_m1, Variant};
use physio_jde::Error;

use crate::config::RunConfig;

/// Failure of a command: a bad configuration (exit 2) or a runtime error (exit 1).
#[derive(Debug)]
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

fn mkdir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

/// Value part of a sweep file name: `2`, `0.5`, `-1.25`.
fn tag(v: f64) -> String {
    csvio::fmt_exact(v)
}

pub fn simulate_balloon(cfg: &RunConfig, out: &Path) -> Outcome {
    mkdir(out)?;
    let p = cfg.paradigm.paradigm();
    let base = cfg.physio.params();
    let (h, g) = generate_responses_with_step(&base, p.dt, p.f, cfg.balloon.step)?;
    h.write_csv(&out.join("brf.csv"))?;
    g.write_csv(&out.join("prf.csv"))?;
    for (name, values) in &cfg.balloon.sweeps {
        for &v in values {
            let params = base.with_param(name, v)?;
            let (h, g) = generate_responses_with_step(&params, p.dt, p.f, cfg.balloon.step)?;
            h.write_csv(&out.join(format!("brf_{name}_{}.csv", tag(v))))?;
            g.write_csv(&out.join(format!("prf_{name}_{}.csv", tag(v))))?;
        }
    }
    Ok(())
}

pub fn build_operator(cfg: &RunConfig, out: &Path) -> Outcome {
    mkdir(out)?;
    let p = cfg.paradigm.paradigm();
    let op = build_omega(&cfg.physio.params(), p.dt, p.f)?;
    op.write_csv(&out.join("omega.csv"))?;
    println!("Ω: {0}x{0}, condition number {1:.6e}", op.omega.nrows(), op.condition);
    Ok(())
}

pub fn generate(cfg: &RunConfig, out: &Path) -> Outcome {
    let (ds, truth) = simulate_dataset(
        &cfg.paradigm.paradigm(),
        &cfg.truth,
        &cfg.physio.params(),
        cfg.seed,
    )?;
    ds.save(out, Some(&truth))?;
    println!(
        "dataset: {} scans, {} voxels, {} conditions -> {}",
        ds.n_scans(),
        ds.n_voxels(),
        ds.paradigm.n_conditions(),
        out.display()
    );
    Ok(())
}

/// Effective configuration next to the outputs it produced.
fn echo_config(cfg: &RunConfig, out: &Path) -> Outcome {
    mkdir(out)?;
    let path = out.join("config.toml");
    fs::write(&path, cfg.to_toml())
        .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn load_data(cfg: &RunConfig) -> Result<(ParcelDataset, Option<GroundTruth>), Failure> {
    let dir = &cfg.paths.data;
    if !dir.join("Y.csv").is_file() || !dir.join("paradigm.json").is_file() {
        return Err(Failure::Config(format!(
            "paths.data = {} is not a dataset directory (Y.csv and paradigm.json expected)",
            dir.display()
        )));
    }
    Ok(ParcelDataset::load(dir)?)
}

fn start_labels(cfg: &RunConfig, truth: Option<&GroundTruth>) -> Option<Vec<Vec<bool>>> {
    if cfg.sampler.use_true_labels {
        truth.map(|t| t.labels.clone())
    } else {
        None
    }
}

pub fn fit_cmd(cfg: &RunConfig, method: Variant, out: &Path) -> Outcome {
    let (ds, truth) = load_data(cfg)?;
    let sc = cfg.sampler_config(start_labels(cfg, truth.as_ref()));
    let summary = fit(&ds, method, &sc, &cfg.priors, cfg.seed)?;
    summary.save(out)?;
    echo_config(cfg, out)?;
    println!("{method}: posterior summary -> {}", out.display());
    Ok(())
}

pub fn residuals(cfg: &RunConfig, out: &Path) -> Outcome {
    let (ds, truth) = load_data(cfg)?;
    let sc = cfg.sampler_config(start_labels(cfg, truth.as_ref()));
    let m1 = fit_m1(&ds, &sc, &cfg.priors, cfg.seed)?;
    let r = compute_residuals(&ds, &m1, &cfg.priors)?;
    m1.save(&out.join("m1"))?;
    ds.with_signal(r)?.save(&out.join("residuals"), None)?;
    echo_config(cfg, out)?;
    println!("hemodynamic pass and residual series -> {}", out.display());
    Ok(())
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Outcome {
    mkdir(out)?;
    let rows = run_noise_sweep(
        &cfg.paradigm.paradigm(),
        &cfg.truth,
        &cfg.physio.params(),
        &cfg.sampler_config(None),
        &cfg.priors,
        &cfg.sweep,
    )?;
    write_sweep_csv(&out.join("sweep.csv"), &rows)?;
    echo_config(cfg, out)?;
    println!("{} sweep rows -> {}", rows.len(), out.join("sweep.csv").display());
    Ok(())
}

pub fn compare(cfg: &RunConfig, methods: &[Variant], out: &Path) -> Outcome {
    let (ds, truth) = load_data(cfg)?;
    let truth = truth.ok_or_else(|| {
        Failure::Config(format!(
            "{} carries no truth.json; compare needs the ground truth",
            cfg.paths.data.display()
        ))
    })?;
    let sc = cfg.sampler_config(start_labels(cfg, Some(&truth)));
    let (report, fits) = compare_methods(&ds, &truth, methods, &sc, &cfg.priors, cfg.seed)?;
    mkdir(out)?;
    for s in &fits {
        s.save(&out.join(s.method.name()))?;
    }
    report.save(&out.join("report.json"))?;
    echo_config(cfg, out)?;
    for r in &report.methods {
        println!(
            "{:<13} rRMSE(h) {:.4}  rRMSE(g) {:.4}  TTP(h) {:>4}  TTP(g) {:>4}",
            r.method.name(),
            r.rrmse_h,
            r.rrmse_g,
            r.ttp_h,
            r.ttp_g
        );
    }
    Ok(())
}

