//! Run configuration: a JSON document layered as built-in defaults, then an
//! optional config file, then `--set key=value` overrides.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use pbgeom::filtration::FiltrationKind;
use pbgeom::pimage::{PIParams, Weighting};
use pbgeom::pullback::{EncodingSpec, DEFAULT_RANK_RTOL};
use pbgeom::vectorfields::{Alignment, GradientMode, PerturbationKind};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub encoding: EncodingSpec,
    /// Further encodings compared against `encoding` by `bures`.
    pub compare: Vec<EncodingSpec>,
    pub grid: Grid,
    /// Explicit perturbations; empty means the per-cloud defaults.
    pub perturbations: Vec<PerturbationKind>,
    /// Field evaluated by `sweep`: `gradient` or a perturbation name.
    pub field: String,
    pub gradient: GradientOptions,
    /// Divide each cloud's Jacobian by its top singular value.
    pub normalized: bool,
    pub rank_rtol: f64,
    pub top_k: usize,
    pub decay_threshold: f64,
    pub fd_step: f64,
    pub fd_tolerance: f64,
    pub out: PathBuf,
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSource {
    /// Directory of cloud files; takes precedence over `generate`.
    pub dir: Option<PathBuf>,
    pub generate: Option<Generator>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Generator {
    /// The 80 radial-frequency-pattern clouds.
    Rfp { n_points: usize, jitter: f64 },
    /// Alternating circles of radius 1 and `dilation`, labelled 0 and 1.
    CircleClasses {
        n_clouds: usize,
        n_points: usize,
        dilation: f64,
        jitter: f64,
    },
    /// `steps × steps` ellipses with width and height on `[min, max]`,
    /// labelled by `min{w, h}`.
    EllipseGrid {
        steps: usize,
        min: f64,
        max: f64,
        n_points: usize,
        jitter: f64,
    },
}

impl Generator {
    pub fn family(name: &str) -> Result<Generator> {
        Ok(match name {
            "rfp" => Generator::Rfp {
                n_points: 150,
                jitter: 1e-4,
            },
            "circle_classes" | "circle-classes" => Generator::CircleClasses {
                n_clouds: 20,
                n_points: 60,
                dilation: 1.1,
                jitter: 0.1,
            },
            "ellipse_grid" | "ellipse-grid" => Generator::EllipseGrid {
                steps: 5,
                min: 1.0,
                max: 2.0,
                n_points: 100,
                jitter: 1e-4,
            },
            other => bail!("unknown dataset family `{other}` (expected rfp, circle-classes or ellipse-grid)"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradientOptions {
    pub mode: GradientMode,
    pub align: Alignment,
}

impl Default for RunConfig {
    fn default() -> Self {
        let pi = PIParams::new(20, 1e-4, [0.0, 1.0], [0.0, 1.0], Weighting::Linear { l_max: 1.0 })
            .expect("default image parameters");
        RunConfig {
            dataset: DatasetSource {
                dir: None,
                generate: Some(Generator::family("rfp").expect("rfp")),
            },
            encoding: EncodingSpec::new(FiltrationKind::Rips { max_edge: 1.0 }, 1, pi),
            compare: Vec::new(),
            grid: Grid::default(),
            perturbations: Vec::new(),
            field: "gradient".into(),
            gradient: GradientOptions {
                mode: GradientMode::Binary,
                align: Alignment::None,
            },
            normalized: true,
            rank_rtol: DEFAULT_RANK_RTOL,
            top_k: 4,
            decay_threshold: 1e-5,
            fd_step: 1e-6,
            fd_tolerance: 1e-4,
            out: PathBuf::from("out"),
            seed: 0,
            threads: None,
        }
    }
}

/// Merges `patch` into `base`. Objects merge key by key, except that a
/// tagged object whose `type` or `family` changes replaces the old one.
pub fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            let retagged = ["type", "family"]
                .iter()
                .any(|t| matches!((b.get(*t), p.get(*t)), (Some(x), Some(y)) if x != y));
            if retagged {
                *b = p;
                return;
            }
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses `value` as JSON, falling back to a plain string.
pub fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override.
pub fn apply_set(doc: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| anyhow!("override `{assignment}` is not of the form key=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("override `{assignment}` has an empty key");
    }
    let mut patch = parse_value(raw);
    for k in keys.iter().rev() {
        let mut m = serde_json::Map::new();
        m.insert((*k).to_string(), patch);
        patch = Value::Object(m);
    }
    merge(doc, patch);
    Ok(())
}

/// Reads a config file into JSON, reporting syntax errors with line and column.
pub fn read_file(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| {
        anyhow!(
            "{}: line {}, column {}: {}",
            path.display(),
            e.line(),
            e.column(),
            e
        )
    })
}

/// Layers defaults, file and overrides, then checks the result.
pub fn load(file: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let mut doc = serde_json::to_value(RunConfig::default())?;
    if let Some(f) = file {
        merge(&mut doc, read_file(f)?);
    }
    for s in sets {
        apply_set(&mut doc, s)?;
    }
    from_value(doc)
}

/// Deserializes with the failing field's path in the message.
pub fn from_value(doc: Value) -> Result<RunConfig> {
    let cfg: RunConfig = serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("config field `{path}`: {}", e.into_inner())
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.encoding
            .validate()
            .map_err(|e| anyhow!("config field `encoding`: {e}"))?;
        for (i, c) in self.compare.iter().enumerate() {
            c.validate().map_err(|e| anyhow!("config field `compare[{i}]`: {e}"))?;
        }
        for (i, p) in self.perturbations.iter().enumerate() {
            p.validate()
                .map_err(|e| anyhow!("config field `perturbations[{i}]`: {e}"))?;
        }
        if let Some(dir) = &self.dataset.dir {
            if !dir.is_dir() {
                bail!("config field `dataset.dir`: {} is not a directory", dir.display());
            }
        } else if self.dataset.generate.is_none() {
            bail!("config field `dataset`: set either `dir` or `generate`");
        }
        if !(self.rank_rtol >= 0.0 && self.rank_rtol < 1.0) {
            bail!("config field `rank_rtol`: must lie in [0, 1), got {}", self.rank_rtol);
        }
        if self.top_k == 0 {
            bail!("config field `top_k`: must be at least 1");
        }
        if !(self.fd_step > 0.0) {
            bail!("config field `fd_step`: must be positive");
        }
        if self.threads == Some(0) {
            bail!("config field `threads`: must be at least 1");
        }
        // every cell must produce a valid encoding
        for (i, cell) in self.grid.cells()?.iter().enumerate() {
            cell.apply(&self.encoding)
                .map_err(|e| anyhow!("config field `grid` (cell {i}): {e}"))?;
        }
        Ok(())
    }
}
