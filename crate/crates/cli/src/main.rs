//! `lptvid`: simulate, identify and check closed-loop LPTV experiments.
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lptv_ident::error::{Error, Result};
use lptv_ident::io;
use lptv_ident::pipeline::{self, PipelineConfig, PipelineOutput, Setup, StageLog};
use lptv_ident::presets;
use lptv_ident::reduction::ReductionMethod;

const EXIT_ASSUMPTION: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_IO: u8 = 4;

#[derive(Parser)]
#[command(name = "lptvid", version, about = "Closed-loop identification of periodically time-varying plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the closed loop and write r.csv, y.csv, u.csv and metadata.json
    Simulate(RunArgs),
    /// Identify the plant from a recorded dataset directory
    Identify {
        /// Directory written by `simulate`
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Check the standing assumptions for a plant and controller
    Check(RunArgs),
    /// Simulate, then identify
    Run {
        /// Inclusive seed range `a..b`; each seed runs in its own thread
        #[arg(long)]
        seeds: Option<String>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write a preset's plant, controller and configuration as files
    ExportPreset {
        name: String,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Built-in setup: ex1, ex2 or ex3
    #[arg(long)]
    preset: Option<String>,
    /// TOML configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Plant model (JSON)
    #[arg(long)]
    plant: Option<PathBuf>,
    /// Controller model (JSON)
    #[arg(long)]
    controller: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Measurement SNR in dB; `inf` for noise-free data
    #[arg(long)]
    snr_db: Option<f64>,
    /// Number of samples
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    order_np: Option<usize>,
    #[arg(long)]
    order_nc: Option<usize>,
    /// era or bt
    #[arg(long)]
    reduction: Option<ReductionMethod>,
    #[arg(long)]
    relative_degree: Option<usize>,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(base) = self.config.as_deref().and_then(Path::parent) {
            for f in [&mut cfg.plant_file, &mut cfg.controller_file].into_iter().flatten() {
                if f.is_relative() {
                    *f = base.join(&*f);
                }
            }
        }
        if self.preset.is_some() {
            cfg.preset = self.preset.clone();
        }
        if self.plant.is_some() {
            cfg.plant_file = self.plant.clone();
        }
        if self.controller.is_some() {
            cfg.controller_file = self.controller.clone();
        }
        if self.out.is_some() {
            cfg.out = self.out.clone();
        }
        cfg.seed = self.seed.or(cfg.seed);
        cfg.snr_db = self.snr_db.or(cfg.snr_db);
        cfg.n_samples = self.n.or(cfg.n_samples);
        cfg.n_p = self.order_np.or(cfg.n_p);
        cfg.n_c = self.order_nc.or(cfg.n_c);
        cfg.relative_degree = self.relative_degree.or(cfg.relative_degree);
        if let Some(m) = self.reduction {
            cfg.reduction.method = m;
        }
        Ok(cfg)
    }

    fn setup(&self) -> Result<(Setup, PathBuf)> {
        Self::resolve(self.config()?)
    }

    fn resolve(cfg: PipelineConfig) -> Result<(Setup, PathBuf)> {
        let setup = cfg.resolve()?;
        let out = setup.cfg.out.clone().unwrap_or_else(|| PathBuf::from("lptvid-out").join(&setup.name));
        Ok((setup, out))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::AssumptionViolation { .. } => EXIT_ASSUMPTION,
        Error::Io(_) | Error::Parse(_) | Error::InvalidConfig(_) => EXIT_IO,
        _ => EXIT_NUMERICAL,
    }
}

/// Refuse to run when an assumption the algorithm relies on fails.
/// Minimality of the cycled loop only produces a warning.
fn gate_assumptions(setup: &Setup) -> Result<()> {
    let rep = pipeline::assumption_report(setup);
    for w in &rep.warnings {
        log::warn!("{w}");
    }
    let required: &[u8] = if setup.relative_degree == 1 { &[1, 2, 3] } else { &[1, 3] };
    if required.iter().all(|&n| rep.holds(n)) {
        if !rep.holds(4) {
            log::warn!("cycled closed loop is not minimal; identified order may differ");
        }
        return Ok(());
    }
    Err(rep.first_failure().expect("a required assumption failed"))
}

fn summary(out: &PipelineOutput) -> String {
    let r = &out.report;
    let mut s = String::new();
    let _ = writeln!(s, "closed-loop fit      {:.3}%", r.cl_fit.mean);
    match &r.ol_fit {
        Some(f) => {
            let _ = writeln!(s, "open-loop fit        {:.4}%", f.mean);
        }
        None => {
            let _ = writeln!(s, "open-loop fit        n/a (unstable plant)");
        }
    }
    let _ = writeln!(s, "max Markov error     {:.3e} (h <= {})", r.max_markov_error, r.h_max);
    let _ = writeln!(s, "cond(C_u B)          {:.4}", r.lambda_cond);
    let _ = writeln!(s, "spectral radius      {:.4}", r.extracted_spectral_radius);
    if let Some(g) = r.reduction_gap_ratio {
        let _ = writeln!(s, "reduction gap        {g:.3e} at {}", r.reduction_cut);
    }
    let _ = writeln!(s, "cond(T)              {:.4e}", r.transform_cond);
    for w in &r.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

/// Identify and write every output; the stage log is written even on failure.
fn finish(out_dir: &Path, log: &mut StageLog, result: Result<PipelineOutput>) -> Result<PipelineOutput> {
    match result {
        Ok(out) => {
            pipeline::write_outputs(out_dir, &out, log)?;
            Ok(out)
        }
        Err(e) => {
            if let Err(w) = pipeline::write_stage_log(out_dir, log) {
                log::error!("could not write stage log: {w}");
            }
            Err(e)
        }
    }
}

fn cmd_simulate(args: &RunArgs) -> Result<()> {
    let (setup, out) = args.setup()?;
    gate_assumptions(&setup)?;
    let mut log = StageLog::default();
    let data = pipeline::collect_data(&setup, &mut log)?;
    io::write_dataset(&out, &data)?;
    print!("{}", log.to_text());
    println!("dataset written to {}", out.display());
    Ok(())
}

fn cmd_identify(dataset: &Path, args: &RunArgs) -> Result<()> {
    let (setup, out) = args.setup()?;
    gate_assumptions(&setup)?;
    let data = io::read_dataset(dataset)?;
    let mut log = StageLog::default();
    let res = pipeline::identify(&setup, &data, &mut log);
    print!("{}", log.to_text());
    let out = finish(&out, &mut log, res)?;
    print!("{}", summary(&out));
    Ok(())
}

fn cmd_check(args: &RunArgs) -> Result<()> {
    let mut cfg = args.config()?;
    cfg.n_samples.get_or_insert(1);
    let (setup, out) = RunArgs::resolve(cfg)?;
    let rep = pipeline::assumption_report(&setup);
    print!("{}", rep.to_text());
    if args.out.is_some() || setup.cfg.out.is_some() {
        fs::create_dir_all(&out)?;
        fs::write(out.join("assumptions.json"), serde_json::to_string_pretty(&rep)?)?;
    }
    match rep.first_failure() {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run_one(setup: &Setup, out: &Path) -> Result<PipelineOutput> {
    gate_assumptions(setup)?;
    let mut log = StageLog::default();
    let res = pipeline::run(setup, &mut log).map(|(_, o)| o);
    let res = finish(out, &mut log, res);
    print!("{}", log.to_text());
    res
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let bad = || Error::InvalidConfig(format!("seed range '{s}' is not of the form a..b"));
    let (a, b) = s.split_once("..").ok_or_else(bad)?;
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok((a..=b).collect())
}

fn cmd_run(seeds: Option<&str>, args: &RunArgs) -> Result<u8> {
    let (setup, out) = args.setup()?;
    let Some(seeds) = seeds else {
        let o = run_one(&setup, &out)?;
        print!("{}", summary(&o));
        return Ok(0);
    };
    let seeds = parse_seeds(seeds)?;
    let results: Vec<(u64, Result<PipelineOutput>)> = std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut setup = setup.clone();
                setup.seed = seed;
                let dir = out.join(format!("seed_{seed}"));
                s.spawn(move || (seed, run_one(&setup, &dir)))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("pipeline thread panicked")).collect()
    });

    let mut csv = String::from("seed,status,cl_fit,ol_fit,max_markov_error,lambda_cond\n");
    let mut worst = 0;
    for (seed, res) in &results {
        match res {
            Ok(o) => {
                let r = &o.report;
                let ol = r.ol_fit.as_ref().map_or(String::new(), |f| f.mean.to_string());
                let _ = writeln!(csv, "{seed},ok,{},{ol},{},{}", r.cl_fit.mean, r.max_markov_error, r.lambda_cond);
            }
            Err(e) => {
                let stage = e.stage().map_or("setup".to_string(), |s| format!("step {}", s.step()));
                let _ = writeln!(csv, "{seed},failed at {stage},,,,");
                eprintln!("seed {seed}: {e}");
                worst = worst.max(exit_code(e));
            }
        }
    }
    fs::create_dir_all(&out)?;
    fs::write(out.join("sweep.csv"), &csv)?;
    print!("{csv}");
    Ok(worst)
}

fn cmd_export_preset(name: &str, out: &Path) -> Result<()> {
    let p = presets::by_name(name).ok_or_else(|| {
        Error::InvalidConfig(format!("unknown preset '{name}' (expected one of {:?})", presets::PRESET_NAMES))
    })?;
    fs::create_dir_all(out)?;
    io::write_periodic(&out.join("plant.json"), &p.plant)?;
    io::write_periodic(&out.join("controller.json"), &p.controller)?;
    let cfg = PipelineConfig {
        plant_file: Some("plant.json".into()),
        controller_file: Some("controller.json".into()),
        n_p: Some(p.n_p),
        n_c: Some(p.n_c),
        n_samples: Some(p.n_samples),
        snr_db: Some(p.snr_db),
        seed: Some(p.seed),
        ..PipelineConfig::default()
    };
    fs::write(out.join("config.toml"), cfg.to_toml()?)?;
    println!("preset {name} written to {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_IO } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let res = match &cli.command {
        Command::Simulate(a) => cmd_simulate(a).map(|_| 0),
        Command::Identify { dataset, run } => cmd_identify(dataset, run).map(|_| 0),
        Command::Check(a) => cmd_check(a).map(|_| 0),
        Command::Run { seeds, run } => cmd_run(seeds.as_deref(), run),
        Command::ExportPreset { name, out } => cmd_export_preset(name, out).map(|_| 0),
    };
    match res {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
