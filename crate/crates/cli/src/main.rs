use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use pbgeom_cli::commands;
use pbgeom_cli::config::{self, RunConfig};
use pbgeom_cli::output::{self, Output};
use serde_json::{json, Value};

/// Persistence-image encodings of point clouds and the geometry they pull back.
#[derive(Parser)]
#[command(name = "pbgeom", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Persistence diagrams per cloud.
    Pd(Common),
    /// Persistence images per cloud.
    Pi(Common),
    /// Encoding Jacobians per cloud, as binary dumps.
    Jacobian(Common),
    /// Singular spectra per cloud and their mean.
    Spectrum(Common),
    /// Alignment of perturbation fields with the top singular vectors.
    Align(Common),
    /// Average pull-back norms of perturbation and gradient fields.
    Pbnorm(Common),
    /// Bures-Wasserstein distances between the Gram matrices of encodings.
    Bures(Common),
    /// Per-point saliency scores.
    Saliency(Common),
    /// Label-gradient fields estimated from neighbouring clouds.
    Gradfield(Common),
    /// Semi-axes of the pull-back unit ball.
    Unitball(Common),
    /// Mean rank and pull-back norm over a parameter grid.
    Sweep(SweepArgs),
    /// Same as `sweep`; without grid axes it evaluates the base encoding.
    Analyze(SweepArgs),
    /// Check analytic Jacobians against central finite differences.
    ValidateJacobian(ValidateArgs),
    /// Recompute the checksums listed in a results.json.
    Verify { results: PathBuf },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config field, e.g. `--set encoding.pi.variance=3e-5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Directory of cloud files to analyze.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    encoding: EncodingFlags,
}

#[derive(Clone, Copy, ValueEnum)]
enum FiltrationFlag {
    Rips,
    Dtm,
    Height,
}

#[derive(Clone, Copy, ValueEnum)]
enum WeightingFlag {
    Linear,
    Beta,
}

/// Shorthands for encoding fields. Numeric flags accept a single value or a
/// grid `start:stop:count[:lin|log]`.
#[derive(Args, Clone, Default)]
struct EncodingFlags {
    #[arg(long)]
    filtration: Option<FiltrationFlag>,
    #[arg(long)]
    max_edge: Option<f64>,
    /// Neighbour count for the DTM filtration.
    #[arg(long, default_value_t = 3)]
    dtm_k: usize,
    /// Unit direction for the height filtration, comma separated.
    #[arg(long, default_value = "1,0")]
    direction: String,
    /// Homology degree.
    #[arg(long)]
    degree: Option<usize>,
    #[arg(long)]
    weighting: Option<WeightingFlag>,
    #[arg(long)]
    resolution: Option<String>,
    #[arg(long)]
    variance: Option<String>,
    #[arg(long)]
    l_max: Option<String>,
    #[arg(long)]
    k_mean: Option<String>,
    #[arg(long)]
    s2: Option<String>,
    #[arg(long)]
    kappa: Option<String>,
}

#[derive(Args)]
struct GenArgs {
    /// rfp, circle-classes or ellipse-grid.
    #[arg(long)]
    family: String,
    #[arg(long)]
    n_points: Option<usize>,
    #[arg(long)]
    n_clouds: Option<usize>,
    #[arg(long)]
    jitter: Option<f64>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct SweepArgs {
    /// `gradient` or a perturbation name such as `noising`.
    #[arg(long)]
    field: Option<String>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ValidateArgs {
    /// Number of clouds to check, from the start of the dataset.
    #[arg(long, default_value_t = 5)]
    limit: usize,
    #[command(flatten)]
    common: Common,
}

fn set(doc: &mut Value, path: &str, value: Value) -> Result<()> {
    config::apply_set(doc, &format!("{path}={value}"))
}

fn numeric(doc: &mut Value, raw: &Option<String>, scalar: &str, grid: &str) -> Result<()> {
    if let Some(raw) = raw {
        if raw.contains(':') {
            set(doc, grid, json!(raw))?;
        } else {
            let v: f64 = raw.parse().with_context(|| format!("`{raw}` is not a number"))?;
            set(doc, scalar, json!(v))?;
        }
    }
    Ok(())
}

impl EncodingFlags {
    fn apply(&self, doc: &mut Value) -> Result<()> {
        let max_edge = self
            .max_edge
            .or_else(|| doc["encoding"]["filtration"]["max_edge"].as_f64())
            .unwrap_or(1.0);
        if let Some(f) = self.filtration {
            let filtration = match f {
                FiltrationFlag::Rips => json!({ "type": "rips", "max_edge": max_edge }),
                FiltrationFlag::Dtm => json!({ "type": "dtm", "k_neighbors": self.dtm_k, "max_edge": max_edge }),
                FiltrationFlag::Height => {
                    let direction = self
                        .direction
                        .split(',')
                        .map(|s| s.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .context("--direction must be comma-separated numbers")?;
                    json!({ "type": "height", "direction": direction, "max_edge": max_edge })
                }
            };
            set(doc, "encoding.filtration", filtration)?;
        } else if let Some(m) = self.max_edge {
            set(doc, "encoding.filtration.max_edge", json!(m))?;
        }
        if let Some(k) = self.degree {
            set(doc, "encoding.degree", json!(k))?;
        }
        match self.weighting {
            Some(WeightingFlag::Beta) if doc["encoding"]["pi"]["weighting"]["type"] != "beta" => set(
                doc,
                "encoding.pi.weighting",
                json!({ "type": "beta", "k_mean": 0.5, "s2": 0.065, "kappa": 1.0 }),
            )?,
            Some(WeightingFlag::Linear) if doc["encoding"]["pi"]["weighting"]["type"] != "linear" => {
                set(doc, "encoding.pi.weighting", json!({ "type": "linear", "l_max": 1.0 }))?
            }
            _ => {}
        }
        numeric(doc, &self.resolution, "encoding.pi.resolution", "grid.resolution")?;
        if let Some(p) = doc["encoding"]["pi"]["resolution"].as_f64() {
            // integral floats from the shorthand go back to integers
            set(doc, "encoding.pi.resolution", json!(p as u64))?;
        }
        numeric(doc, &self.variance, "encoding.pi.variance", "grid.variance")?;
        numeric(doc, &self.l_max, "encoding.pi.weighting.l_max", "grid.l_max")?;
        numeric(doc, &self.k_mean, "encoding.pi.weighting.k_mean", "grid.k_mean")?;
        numeric(doc, &self.s2, "encoding.pi.weighting.s2", "grid.s2")?;
        numeric(doc, &self.kappa, "encoding.pi.weighting.kappa", "grid.kappa")?;
        Ok(())
    }
}

/// Defaults, then the config file, then flags, then `--set` overrides.
fn build_config(common: &Common, extra: impl FnOnce(&mut Value) -> Result<()>) -> Result<RunConfig> {
    let mut doc = serde_json::to_value(RunConfig::default())?;
    if let Some(f) = &common.config {
        config::merge(&mut doc, config::read_file(f)?);
    }
    if let Some(d) = &common.data {
        set(&mut doc, "dataset", json!({ "dir": d, "generate": null }))?;
    }
    if let Some(o) = &common.out {
        set(&mut doc, "out", json!(o))?;
    }
    if let Some(s) = common.seed {
        set(&mut doc, "seed", json!(s))?;
    }
    common.encoding.apply(&mut doc)?;
    extra(&mut doc)?;
    for s in &common.sets {
        config::apply_set(&mut doc, s)?;
    }
    config::from_value(doc)
}

fn init_threads(cfg: &RunConfig) -> Result<()> {
    let from_env = match std::env::var("PBGEOM_THREADS") {
        Ok(v) => Some(
            v.parse::<usize>()
                .ok()
                .filter(|&n| n > 0)
                .with_context(|| format!("PBGEOM_THREADS must be a positive integer, got `{v}`"))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = from_env.or(cfg.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    let (name, common, extra): (&str, Common, Box<dyn FnOnce(&mut Value) -> Result<()>>) = match cli.command {
        Command::Verify { results } => {
            let bad = output::verify(&results)?;
            for b in &bad {
                eprintln!("checksum mismatch: {b}");
            }
            return Ok(bad.is_empty());
        }
        Command::Gen(g) => {
            if g.common.data.is_some() {
                bail!("gen writes a dataset; use --out for its directory");
            }
            let mut generator = serde_json::to_value(config::Generator::family(&g.family)?)?;
            if let Some(n) = g.n_points {
                generator["n_points"] = json!(n);
            }
            if let Some(j) = g.jitter {
                generator["jitter"] = json!(j);
            }
            if let Some(n) = g.n_clouds {
                if generator.get("n_clouds").is_none() {
                    bail!("--n-clouds applies to circle-classes only");
                }
                generator["n_clouds"] = json!(n);
            }
            (
                "gen",
                g.common,
                Box::new(move |doc: &mut Value| set(doc, "dataset", json!({ "dir": null, "generate": generator }))),
            )
        }
        Command::Sweep(a) | Command::Analyze(a) => {
            let field = a.field.clone();
            (
                "sweep",
                a.common,
                Box::new(move |doc: &mut Value| match field {
                    Some(f) => set(doc, "field", json!(f)),
                    None => Ok(()),
                }),
            )
        }
        Command::ValidateJacobian(v) => {
            let cfg = build_config(&v.common, |_| Ok(()))?;
            init_threads(&cfg)?;
            let data = commands::load_dataset(&cfg)?;
            let mut out = Output::create(&cfg.out)?;
            let ok = commands::validate_jacobian(&cfg, &data, &mut out, v.limit)?;
            let path = out.finish("validate-jacobian", &cfg)?;
            println!("{}", path.display());
            return Ok(ok);
        }
        Command::Pd(c) => ("pd", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Pi(c) => ("pi", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Jacobian(c) => ("jacobian", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Spectrum(c) => ("spectrum", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Align(c) => ("align", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Pbnorm(c) => ("pbnorm", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Bures(c) => ("bures", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Saliency(c) => ("saliency", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Gradfield(c) => ("gradfield", c, Box::new(|_: &mut Value| Ok(()))),
        Command::Unitball(c) => ("unitball", c, Box::new(|_: &mut Value| Ok(()))),
    };
    let cfg = build_config(&common, extra)?;
    init_threads(&cfg)?;
    let data = commands::load_dataset(&cfg)?;
    let mut out = Output::create(&cfg.out)?;
    let f = match name {
        "gen" => commands::gen,
        "pd" => commands::pd,
        "pi" => commands::pi,
        "jacobian" => commands::jacobian,
        "spectrum" => commands::spectrum,
        "align" => commands::align,
        "pbnorm" => commands::pbnorm,
        "bures" => commands::bures,
        "saliency" => commands::saliency,
        "gradfield" => commands::gradfield,
        "unitball" => commands::unitball,
        "sweep" => commands::sweep,
        _ => unreachable!("every subcommand is dispatched above"),
    };
    f(&cfg, &data, &mut out)?;
    let path = out.finish(name, &cfg)?;
    println!("{}", path.display());
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
