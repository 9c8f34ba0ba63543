#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::BTreeMap;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use progvi::dist::Strategy;
use progvi::experiment::{parse_config, Experiment, ExperimentConfig};
use progvi::objectives::ObjectiveKind;
use progvi::optim::OptimizerKind;
use progvi::reverse::Mode;
use progvi::Error;

#[derive(Parser)]
#[command(name = "progvi", about = "Programmable variational inference over a built-in model zoo")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the mean gradient estimate with finite differences (JSON).
    Gradcheck(Common),
    /// Density table of a finite-support model (CSV).
    Enumerate {
        #[command(flatten)]
        common: Common,
        /// Parameter to differentiate the density along.
        #[arg(long)]
        wrt: Option<String>,
    },
    /// Model density at one trace (CSV).
    Density {
        #[command(flatten)]
        common: Common,
        /// Trace as JSON, e.g. {"a":{"t":"bool","v":true}}.
        #[arg(long)]
        trace: String,
        #[arg(long)]
        wrt: Option<String>,
    },
    /// Optimize the objective; per-step CSV, summary JSON.
    Train(Common),
    /// Gradient mean, variance and cost under each strategy at one choice (CSV).
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        choice: String,
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    guide: Option<String>,
    /// elbo | iwelbo | qwake | pwake
    #[arg(long)]
    objective: Option<String>,
    /// Particles for iwelbo / qwake / pwake.
    #[arg(long)]
    n: Option<usize>,
    /// Particles inside marginal and SIR guides.
    #[arg(long)]
    guide_particles: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// sgd | adam
    #[arg(long)]
    optimizer: Option<String>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["forward", "reverse"])]
    mode: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    /// Strategy override NAME=TAG, repeatable.
    #[arg(long = "strategy")]
    strategies: Vec<String>,
    #[arg(long)]
    params: Option<String>,
    #[arg(long)]
    out: Option<String>,
}

fn config_err(path: &str, msg: impl Into<String>) -> Error {
    Error::config(path, msg)
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| config_err("/", format!("{path}: {e}")))?;
                parse_config(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(m) = &self.model {
            cfg.model = m.clone();
        }
        if let Some(g) = &self.guide {
            cfg.guide = Some(g.clone());
        }
        if let Some(o) = &self.objective {
            let n = self.n.unwrap_or(cfg.objective.particles().max(1));
            cfg.objective = match o.as_str() {
                "elbo" => ObjectiveKind::Elbo,
                "iwelbo" => ObjectiveKind::Iwelbo { n },
                "qwake" => ObjectiveKind::Qwake { n },
                "pwake" => ObjectiveKind::Pwake { n },
                _ => return Err(config_err("/objective/kind", format!("unknown objective '{o}'"))),
            };
        } else if let Some(n) = self.n {
            cfg.objective = match cfg.objective {
                ObjectiveKind::Elbo => ObjectiveKind::Elbo,
                ObjectiveKind::Iwelbo { .. } => ObjectiveKind::Iwelbo { n },
                ObjectiveKind::Qwake { .. } => ObjectiveKind::Qwake { n },
                ObjectiveKind::Pwake { .. } => ObjectiveKind::Pwake { n },
            };
        }
        if let Some(k) = self.guide_particles {
            cfg.guide_particles = k;
        }
        if let Some(s) = self.steps {
            cfg.steps = s;
        }
        if let Some(lr) = self.lr {
            cfg.optimizer.lr = lr;
        }
        if let Some(o) = &self.optimizer {
            cfg.optimizer.kind = match o.as_str() {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::Adam,
                _ => return Err(config_err("/optimizer/kind", format!("unknown optimizer '{o}'"))),
            };
        }
        if let Some(b) = self.batch {
            cfg.batch = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Ok(s) = std::env::var("VI_SEED") {
            cfg.seed =
                s.trim().parse().map_err(|_| config_err("/seed", format!("VI_SEED is not a 64-bit integer: '{s}'")))?;
        }
        if let Some(m) = &self.mode {
            cfg.mode = if m == "reverse" { Mode::Reverse } else { Mode::Forward };
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        let mut overrides = BTreeMap::new();
        for s in &self.strategies {
            let (name, tag) =
                s.split_once('=').ok_or_else(|| config_err("/strategies", format!("expected NAME=TAG, got '{s}'")))?;
            let strat = Strategy::from_tag(tag)
                .ok_or_else(|| config_err(&format!("/strategies/{name}"), format!("unknown strategy '{tag}'")))?;
            overrides.insert(name.to_string(), strat);
        }
        cfg.strategies.extend(overrides);
        if let Some(p) = &self.params {
            let parsed: Result<Vec<f64>, _> = p.split(',').map(|x| x.trim().parse::<f64>()).collect();
            cfg.params = Some(parsed.map_err(|e| config_err("/params", e.to_string()))?);
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        Ok(cfg)
    }
}

fn emit(text: &str, out: Option<&str>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| config_err("/out", format!("{path}: {e}"))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.cmd {
        Command::Gradcheck(c) => {
            let exp = Experiment::new(c.resolve()?)?;
            let json = serde_json::to_string_pretty(&exp.gradcheck()?).unwrap() + "\n";
            emit(&json, exp.config.out.as_deref())
        }
        Command::Enumerate { common, wrt } => {
            let exp = Experiment::new(common.resolve()?)?;
            emit(&exp.enumerate(wrt.as_deref())?, exp.config.out.as_deref())
        }
        Command::Density { common, trace, wrt } => {
            let exp = Experiment::new(common.resolve()?)?;
            emit(&exp.density(&trace, wrt.as_deref())?, exp.config.out.as_deref())
        }
        Command::Train(c) => {
            let exp = Experiment::new(c.resolve()?)?;
            let mut csv = String::new();
            let summary = exp.train(&mut csv);
            let out = exp.config.out.as_deref();
            // Write whatever was produced before an abort.
            emit(&csv, out)?;
            let summary = serde_json::to_string_pretty(&summary?).unwrap();
            if out.is_some() {
                println!("{summary}");
            } else {
                eprintln!("{summary}");
            }
            Ok(())
        }
        Command::Bench { common, choice, samples } => {
            let exp = Experiment::new(common.resolve()?)?;
            emit(&exp.bench(&choice, samples)?, exp.config.out.as_deref())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config { .. } | Error::InvalidStrategy { .. } => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
