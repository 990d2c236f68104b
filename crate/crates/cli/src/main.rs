//! `cfc`: simulate, sweep, check stability, fit and reproduce figures.
//!
//! Exit codes: 0 success, 2 validation, 3 numerical failure, 4 I/O.
//! Failures print a one-line JSON record on stderr.

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use cfc_core::config::{MethodName, RunConfig};
use cfc_core::fit::{fit_stage, FitResult, StageKind};
use cfc_core::io::{self, Manifest};
use cfc_core::recipes::{run_recipe, RecipeOptions, RECIPES};
use cfc_core::spectra::{phonon_occupation, spectrum};
use cfc_core::stability::{check_stability, stability_map};
use cfc_core::sweep::{sweep_2d, template_hash};
use cfc_core::{default_noise, solve_steady_state, Error, ErrorClass, Result, SystemParams};

#[derive(Parser, Debug)]
#[command(name = "cfc", version, about = "Coherent feedback cooling model")]
struct Cli {
    /// TOML run configuration; table defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, global = true, env = "CFC_THREADS")]
    threads: Option<usize>,
    /// Relative tolerance of the phonon-number integral.
    #[arg(long, global = true)]
    tolerance: Option<f64>,
    /// Stability method.
    #[arg(long, global = true, value_enum)]
    method: Option<MethodArg>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    ArgumentPrinciple,
    SufficientBound,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Dbc1,
    Dbc2,
    Cfc,
}

impl From<StageArg> for StageKind {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Dbc1 => StageKind::Dbc1,
            StageArg::Dbc2 => StageKind::Dbc2,
            StageArg::Cfc => StageKind::Cfc,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Spectra, phonon number and stability for one configuration.
    Simulate {
        /// Optical configuration: probe only, loop blocked, or closed loop.
        #[arg(long, value_enum, default_value = "cfc")]
        stage: StageArg,
    },
    /// 2D phonon-number map with stability mask over the [sweep] axes.
    Sweep,
    /// Stability report for one point, or a mask over the [sweep] axes.
    Stability {
        #[arg(long)]
        map: bool,
    },
    /// Staged fit of the spectra named in the [fit] block.
    Fit,
    /// Run a canned figure recipe.
    Reproduce {
        #[arg(value_parser = clap::builder::PossibleValuesParser::new(RECIPES))]
        recipe: String,
        /// Points per axis of maps and curves.
        #[arg(long, default_value_t = 100)]
        resolution: usize,
    },
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Io => 4,
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::defaults(),
    };
    if let Some(t) = cli.tolerance {
        cfg.integration.rel_tol = t;
    }
    if let Some(m) = cli.method {
        cfg.stability.method = match m {
            MethodArg::ArgumentPrinciple => MethodName::ArgumentPrinciple,
            MethodArg::SufficientBound => MethodName::SufficientBound,
        };
    }
    if cli.threads == Some(0) {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Accumulates output files and writes the manifest last.
struct Run<'a> {
    dir: &'a Path,
    command: String,
    started: f64,
    outputs: Vec<String>,
    notes: Vec<String>,
    complete: bool,
}

impl Run<'_> {
    fn write_text(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.dir.join(name), text).map_err(|e| Error::Io(format!("{name}: {e}")))?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn write_with(&mut self, name: &str, f: impl FnOnce(&mut dyn std::io::Write) -> Result<()>) -> Result<()> {
        let mut w = io::create_file(&self.dir.join(name))?;
        f(&mut w)?;
        std::io::Write::flush(&mut w)?;
        self.outputs.push(name.into());
        Ok(())
    }

    fn finish(self, cfg: &RunConfig, params: &SystemParams) -> Result<()> {
        let mut settings = match toml::Value::try_from(cfg).map_err(|e| Error::Config(e.to_string()))? {
            toml::Value::Table(t) => t,
            _ => toml::Table::new(),
        };
        settings.remove("params");
        let m = Manifest {
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: self.command,
            started_unix: self.started,
            finished_unix: now(),
            complete: self.complete,
            params_hash: template_hash(params),
            outputs: self.outputs,
            notes: self.notes,
            params: params.clone(),
            settings,
        };
        fs::write(self.dir.join("manifest.toml"), m.to_toml()?).map_err(|e| Error::Io(e.to_string()))
    }
}

fn to_toml<T: Serialize>(v: &T) -> Result<String> {
    toml::to_string(v).map_err(|e| Error::Config(e.to_string()))
}

#[derive(Serialize)]
struct SimulateReport {
    stage: String,
    n_bar: f64,
    n_bar_error: f64,
    n_bar_in: f64,
    mean_q: f64,
    delta_h_eff: f64,
    delta_v_eff: f64,
    gamma_angle: f64,
    theta: f64,
    stability: cfc_core::StabilityReport,
}

fn simulate(run: &mut Run, cfg: &RunConfig, stage: StageKind) -> Result<SystemParams> {
    let mut p = cfg.params.clone();
    stage.configure(&mut p);
    let ss = solve_steady_state(&p)?;
    let noise = default_noise(&p)?;
    let stab = check_stability(&ss, &p, cfg.stability.region, cfg.stability.method())?;
    let n = phonon_occupation(&ss, &p, &noise, &cfg.integration)?;
    let grid = cfg.spectrum.grid(&p)?;
    for q in &cfg.spectrum.quantities {
        let s = spectrum(&ss, &p, &noise, &grid, *q)?;
        run.write_with(&format!("spectrum_{}.csv", q.label()), |w| io::write_spectrum(w, &s))?;
    }
    if stab.verdict != cfc_core::Verdict::Stable {
        run.notes.push(format!(
            "system is {:?}; n_bar is not a stationary occupation",
            stab.verdict
        ));
    }
    let rep = SimulateReport {
        stage: stage.label().into(),
        n_bar: n.value,
        n_bar_error: n.error,
        n_bar_in: noise.n_bar_in,
        mean_q: ss.mean_q,
        delta_h_eff: ss.delta_h_eff,
        delta_v_eff: ss.delta_v_eff,
        gamma_angle: ss.gamma_angle,
        theta: ss.theta,
        stability: stab,
    };
    run.write_text("simulate.toml", &to_toml(&rep)?)?;
    println!("n_bar = {:.6} ± {:.2e} ({})", n.value, n.error, stage.label());
    Ok(p)
}

fn sweep(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let sc = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("the sweep command needs a [sweep] block".into()))?;
    let (a1, a2) = (sc.axis1.axis()?, sc.axis2.axis()?);
    // Marker stays behind if the run dies before the matrices are written.
    let marker = run.dir.join("INCOMPLETE");
    fs::write(&marker, "sweep in progress\n")?;
    let r = sweep_2d(&cfg.params, &a1, &a2, &cfg.sweep_options());
    run.write_with("heatmap.csv", |w| io::write_heatmap(w, &r))?;
    run.write_with("mask.csv", |w| io::write_mask(w, &r.axis1, &r.axis2, &r.mask))?;
    if r.errors.is_empty() {
        fs::remove_file(&marker)?;
    } else {
        run.complete = false;
        let text: String = r.errors.iter().map(|(i, j, e)| format!("{i},{j},{e}\n")).collect();
        fs::write(&marker, format!("# i,j,error\n{text}"))?;
        run.notes
            .push(format!("{} cells failed; see INCOMPLETE", r.errors.len()));
    }
    match r.argmin() {
        Some((i, j, v)) => println!(
            "argmin {} = {}, {} = {}: n_bar = {v:.6}",
            a1.kind.label(),
            a1.values[i],
            a2.kind.label(),
            a2.values[j]
        ),
        None => println!("no stable cell"),
    }
    Ok(())
}

fn stability(run: &mut Run, cfg: &RunConfig, map: bool) -> Result<()> {
    if map {
        let sc = cfg
            .sweep
            .as_ref()
            .ok_or_else(|| Error::Config("--map needs a [sweep] block".into()))?;
        let m = stability_map(
            &cfg.params,
            &sc.axis1.axis()?,
            &sc.axis2.axis()?,
            cfg.stability.method(),
        );
        run.write_with("mask.csv", |w| io::write_stability_map(w, &m))?;
        return Ok(());
    }
    let ss = solve_steady_state(&cfg.params)?;
    let r = check_stability(&ss, &cfg.params, cfg.stability.region, cfg.stability.method())?;
    run.write_text("stability.toml", &to_toml(&r)?)?;
    println!("{:?}", r.verdict);
    Ok(())
}

#[derive(Serialize)]
struct FitReport {
    stages: Vec<FitResult>,
}

fn fit(run: &mut Run, cfg: &RunConfig) -> Result<()> {
    let fc = cfg
        .fit
        .as_ref()
        .ok_or_else(|| Error::Config("the fit command needs a [fit] block".into()))?;
    let mut p = cfg.params.clone();
    let mut results: Vec<FitResult> = Vec::new();
    for (kind, path) in [
        (StageKind::Dbc1, &fc.dbc1),
        (StageKind::Dbc2, &fc.dbc2),
        (StageKind::Cfc, &fc.cfc),
    ] {
        let Some(path) = path else { continue };
        let data = io::load_spectrum(path)?;
        let stage = fc.stage(kind);
        let mut r = fit_stage(&data, &stage, &p)?;
        for prev in &results {
            for f in &mut r.frozen {
                if prev.names.contains(&f.name) {
                    f.source = prev.stage.label().into();
                }
            }
        }
        // Later stages inherit every fitted physical value.
        let keep_gamma = p.gamma_target;
        let (eta_loop, eta_i, p_v) = (p.eta_loop, p.eta_i, p.p_v_aux);
        p = r.params.clone();
        p.eta_loop = eta_loop;
        p.eta_i = eta_i;
        p.set_aux_power(p_v);
        if kind != StageKind::Cfc {
            p.gamma_target = keep_gamma;
        }
        println!("{}: n_bar = {:.4} ± {:.2e}", kind.label(), r.n_bar.value, r.n_bar.error);
        results.push(r);
    }
    if results.is_empty() {
        return Err(Error::Config("the [fit] block names no spectrum files".into()));
    }
    run.write_text("fit_report.toml", &to_toml(&FitReport { stages: results })?)?;
    Ok(())
}

fn reproduce(run: &mut Run, cfg: &RunConfig, recipe: &str, resolution: usize) -> Result<()> {
    let opts = RecipeOptions {
        sweep: cfg.sweep_options(),
        resolution,
    };
    let rep = run_recipe(recipe, &cfg.params, &opts, run.dir)?;
    run.outputs.extend(rep.files.iter().cloned());
    run.notes.extend(rep.notes.iter().cloned());
    run.complete &= rep.complete;
    for (k, v) in &rep.values {
        println!("{k} = {v}");
    }
    run.write_text(&format!("{recipe}_report.toml"), &to_toml(&rep)?)
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    fs::create_dir_all(&cli.out).map_err(|e| Error::Io(format!("{}: {e}", cli.out.display())))?;
    let command = match &cli.command {
        Command::Simulate { .. } => "simulate".to_string(),
        Command::Sweep => "sweep".into(),
        Command::Stability { .. } => "stability".into(),
        Command::Fit => "fit".into(),
        Command::Reproduce { recipe, .. } => format!("reproduce {recipe}"),
    };
    let mut run = Run {
        dir: &cli.out,
        command,
        started: now(),
        outputs: Vec::new(),
        notes: Vec::new(),
        complete: true,
    };
    let mut params = cfg.params.clone();
    let result = match &cli.command {
        Command::Simulate { stage } => simulate(&mut run, &cfg, (*stage).into()).map(|p| params = p),
        Command::Sweep => sweep(&mut run, &cfg),
        Command::Stability { map } => stability(&mut run, &cfg, *map),
        Command::Fit => fit(&mut run, &cfg),
        Command::Reproduce { recipe, resolution } => reproduce(&mut run, &cfg, recipe, *resolution),
    };
    if let Err(e) = &result {
        run.complete = false;
        run.notes.push(format!("failed: {e}"));
    }
    let manifest = run.finish(&cfg, &params);
    result.and(manifest)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut rec = BTreeMap::new();
            rec.insert("error", e.kind().to_string());
            rec.insert(
                "class",
                match e.class() {
                    ErrorClass::Validation => "validation",
                    ErrorClass::Numerical => "numerical",
                    ErrorClass::Io => "io",
                }
                .to_string(),
            );
            rec.insert("message", e.to_string());
            eprintln!("{}", serde_json::to_string(&rec).unwrap_or_default());
            ExitCode::from(exit_code(&e))
        }
    }
}
