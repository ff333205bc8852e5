//! `key = value` run configuration.
//!
//! Keys are dotted (`variant.sd_type`) or grouped under `[section]` headers.
//! `#` starts a comment, string values may be quoted, and lists are comma
//! separated with optional brackets. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

use normforge_core::data::{DatasetKind, DatasetSpec};
use normforge_core::linalg::PolarConfig;
use normforge_core::models::{Activation, LossKind, ModelSpec};
use normforge_core::presets::{BackupNorm, ProductNorm, ScheduleConfig, SdType, VariantConfig};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value` or `[section]`")]
    Syntax { line: usize },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}` is set twice, on lines {first} and {second}")]
    Duplicate { key: String, first: usize, second: usize },
    #[error("missing required key `{key}`")]
    Missing { key: String },
    #[error("line {line}: invalid value for `{key}`: {msg}")]
    Invalid { key: String, line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Semantic(String),
}

/// `(key, default, description)`; an empty default marks a required key.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("variant.sd_type", "", "constrained | regularized"),
    ("variant.product_norm", "", "inf | l2 | hybrid"),
    ("variant.backup_norm", "", "inf | ada_inf | ada_2"),
    ("variant.truncation", "false", "Momo step-size truncation"),
    ("variant.stale", "false", "reuse the previous step's matrix dual norms"),
    ("variant.eta_m", "0.01", "peak learning rate for weight matrices"),
    ("variant.eta_b", "0.01", "peak learning rate for all other parameters"),
    ("variant.beta", "0.95", "momentum (matrices; everything when truncated)"),
    ("variant.beta1", "beta", "momentum for other parameters without truncation"),
    ("variant.beta2", "0.95", "second-moment decay"),
    ("variant.epsilon", "1e-8", "second-moment offset"),
    ("variant.f_star", "0", "lower bound on the loss used by truncation"),
    ("schedule.warmup_frac", "0.05", "fraction of steps spent warming up"),
    ("schedule.stable_frac", "0.5", "fraction of steps before decay begins"),
    ("schedule.final_frac", "0.1", "final learning rate as a fraction of peak"),
    ("model.layer_dims", "", "layer widths, input first, e.g. [8, 16, 16, 4]"),
    ("model.activation", "tanh", "tanh | relu"),
    ("model.loss", "mse", "mse | softmax_xent"),
    ("model.seed", "0", "initialization seed"),
    ("data.kind", "", "teacher_net | gaussian_blobs | char_copy"),
    ("data.size", "512", "number of examples"),
    ("data.noise", "0", "target noise std (teacher_net) or label-flip probability"),
    ("data.seed", "0", "dataset seed"),
    ("data.teacher_hidden", "16", "hidden width of the teacher network"),
    ("data.separation", "10", "distance between blob centres"),
    ("run.steps", "", "optimizer steps"),
    ("run.batch_size", "32", "minibatch size"),
    ("run.log_every", "1", "write every n-th step to log.csv"),
    ("run.out_dir", "out", "output directory"),
    ("run.seed", "0", "run seed: batch order and initialization"),
    ("polar.iterations", "8", "polar iterations; the last coefficient triple repeats"),
    ("polar.gram_squarings", "4", "Gram-matrix squarings behind the prescale bound"),
    ("sweep.rho", "0.03,0.1,0.3,1,3,10,30,100", "joint learning-rate multipliers"),
    ("sweep.seeds", "0", "run seeds"),
    ("sweep.tau_rob", "0.1", "relative slack for the robustness fraction"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub rho: Vec<f64>,
    pub seeds: Vec<u64>,
    pub tau_rob: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: VariantConfig,
    pub schedule: ScheduleConfig,
    pub model: ModelSpec,
    pub data: DatasetSpec,
    pub steps: usize,
    pub batch_size: usize,
    pub log_every: usize,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub polar: PolarConfig,
    pub sweep: SweepSettings,
}

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(String, usize)> {
        self.map.get(key)
    }

    fn get<T>(&self, key: &str, parse: impl Fn(&str) -> Result<T, String>) -> Result<T, ConfigError> {
        let (value, line) = match self.raw(key) {
            Some((v, l)) => (v.as_str(), *l),
            None => {
                let default = KEYS.iter().find(|k| k.0 == key).map(|k| k.1).unwrap_or("");
                if default.is_empty() {
                    return Err(ConfigError::Missing { key: key.into() });
                }
                (default, 0)
            }
        };
        parse(value).map_err(|msg| ConfigError::Invalid { key: key.into(), line, msg })
    }
}

fn num<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| format!("{s:?}: {e}"))
}

fn boolean(s: &str) -> Result<bool, String> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(format!("{s:?} is not true or false")),
    }
}

fn choice<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>().map_err(|e| e.to_string())
}

pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    let inner = s.trim().trim_start_matches('[').trim_end_matches(']');
    let items: Vec<T> = inner
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(num::<T>)
        .collect::<Result<_, _>>()?;
    if items.is_empty() {
        return Err("list is empty".into());
    }
    Ok(items)
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

fn unquote(v: &str) -> &str {
    v.strip_prefix('"').and_then(|x| x.strip_suffix('"')).unwrap_or(v)
}

fn collect_entries(text: &str) -> Result<Entries, ConfigError> {
    let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|x| x.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        let Some((k, v)) = body.split_once('=') else {
            return Err(ConfigError::Syntax { line });
        };
        let k = k.trim();
        if k.is_empty() {
            return Err(ConfigError::Syntax { line });
        }
        let key = if section.is_empty() { k.to_string() } else { format!("{section}.{k}") };
        if !KEYS.iter().any(|known| known.0 == key) {
            return Err(ConfigError::UnknownKey { key, line });
        }
        if let Some((_, first)) = map.get(&key) {
            return Err(ConfigError::Duplicate { key, first: *first, second: line });
        }
        map.insert(key, (unquote(v.trim()).to_string(), line));
    }
    Ok(Entries { map })
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let e = collect_entries(text)?;
    let beta = e.get("variant.beta", num::<f64>)?;
    let beta1 = match e.raw("variant.beta1") {
        Some(_) => Some(e.get("variant.beta1", num::<f64>)?),
        None => None,
    };
    let variant = VariantConfig {
        sd_type: e.get("variant.sd_type", choice::<SdType>)?,
        product_norm: e.get("variant.product_norm", choice::<ProductNorm>)?,
        backup_norm: e.get("variant.backup_norm", choice::<BackupNorm>)?,
        truncation: e.get("variant.truncation", boolean)?,
        stale: e.get("variant.stale", boolean)?,
        eta_m: e.get("variant.eta_m", num)?,
        eta_b: e.get("variant.eta_b", num)?,
        beta,
        beta1,
        beta2: e.get("variant.beta2", num)?,
        epsilon: e.get("variant.epsilon", num)?,
        f_star: e.get("variant.f_star", num)?,
    };
    let steps: usize = e.get("run.steps", num)?;
    let schedule = ScheduleConfig {
        total_steps: steps,
        warmup_frac: e.get("schedule.warmup_frac", num)?,
        stable_frac: e.get("schedule.stable_frac", num)?,
        final_frac: e.get("schedule.final_frac", num)?,
    };
    let layer_dims: Vec<usize> = e.get("model.layer_dims", parse_list::<usize>)?;
    let model = ModelSpec {
        layer_dims: layer_dims.clone(),
        activation: e.get("model.activation", choice::<Activation>)?,
        loss: e.get("model.loss", choice::<LossKind>)?,
        seed: e.get("model.seed", num)?,
    };
    let data = DatasetSpec {
        kind: e.get("data.kind", choice::<DatasetKind>)?,
        size: e.get("data.size", num)?,
        noise: e.get("data.noise", num)?,
        seed: e.get("data.seed", num)?,
        features: layer_dims[0],
        outputs: *layer_dims.last().expect("parse_list is nonempty"),
        teacher_hidden: e.get("data.teacher_hidden", num)?,
        separation: e.get("data.separation", num)?,
    };
    let iterations: usize = e.get("polar.iterations", num)?;
    let polar = PolarConfig {
        iterations,
        gram_squarings: e.get("polar.gram_squarings", num)?,
        ..PolarConfig::default()
    };
    let cfg = RunConfig {
        variant,
        schedule,
        model,
        data,
        steps,
        batch_size: e.get("run.batch_size", num)?,
        log_every: e.get("run.log_every", num)?,
        out_dir: PathBuf::from(e.get("run.out_dir", |s| Ok(s.to_string()))?),
        seed: e.get("run.seed", num)?,
        polar,
        sweep: SweepSettings {
            rho: e.get("sweep.rho", parse_list::<f64>)?,
            seeds: e.get("sweep.seeds", parse_list::<u64>)?,
            tau_rob: e.get("sweep.tau_rob", num)?,
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let semantic = |e: normforge_core::Error| ConfigError::Semantic(e.to_string());
        self.variant.validate().map_err(semantic)?;
        self.schedule.validate().map_err(semantic)?;
        self.data.validate().map_err(semantic)?;
        self.polar.validate().map_err(semantic)?;
        normforge_core::models::Mlp::new(self.model.clone()).map_err(semantic)?;
        let wants = match self.data.kind {
            DatasetKind::TeacherNet => LossKind::Mse,
            DatasetKind::GaussianBlobs | DatasetKind::CharCopy => LossKind::SoftmaxXent,
        };
        if self.model.loss != wants {
            return Err(ConfigError::Semantic(format!("data.kind = {} needs model.loss = {wants}", self.data.kind)));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(ConfigError::Semantic("run.batch_size and run.log_every must be positive".into()));
        }
        if self.sweep.rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(ConfigError::Semantic("sweep.rho entries must be positive".into()));
        }
        if !(self.sweep.tau_rob.is_finite() && self.sweep.tau_rob >= 0.0) {
            return Err(ConfigError::Semantic("sweep.tau_rob must be nonnegative".into()));
        }
        Ok(())
    }

    /// Every resolved setting as `key = value`, in key order.
    pub fn echo(&self) -> String {
        let v = &self.variant;
        let join = |xs: Vec<String>| xs.join(",");
        let mut pairs: Vec<(&str, String)> = vec![
            ("variant.sd_type", v.sd_type.to_string()),
            ("variant.product_norm", v.product_norm.to_string()),
            ("variant.backup_norm", v.backup_norm.to_string()),
            ("variant.truncation", v.truncation.to_string()),
            ("variant.stale", v.stale.to_string()),
            ("variant.eta_m", v.eta_m.to_string()),
            ("variant.eta_b", v.eta_b.to_string()),
            ("variant.beta", v.beta.to_string()),
            ("variant.beta2", v.beta2.to_string()),
            ("variant.epsilon", v.epsilon.to_string()),
            ("variant.f_star", v.f_star.to_string()),
            ("schedule.warmup_frac", self.schedule.warmup_frac.to_string()),
            ("schedule.stable_frac", self.schedule.stable_frac.to_string()),
            ("schedule.final_frac", self.schedule.final_frac.to_string()),
            ("model.layer_dims", join(self.model.layer_dims.iter().map(|d| d.to_string()).collect())),
            ("model.activation", self.model.activation.to_string()),
            ("model.loss", self.model.loss.to_string()),
            ("model.seed", self.model.seed.to_string()),
            ("data.kind", self.data.kind.to_string()),
            ("data.size", self.data.size.to_string()),
            ("data.noise", self.data.noise.to_string()),
            ("data.seed", self.data.seed.to_string()),
            ("data.teacher_hidden", self.data.teacher_hidden.to_string()),
            ("data.separation", self.data.separation.to_string()),
            ("run.steps", self.steps.to_string()),
            ("run.batch_size", self.batch_size.to_string()),
            ("run.log_every", self.log_every.to_string()),
            ("run.out_dir", self.out_dir.display().to_string()),
            ("run.seed", self.seed.to_string()),
            ("polar.iterations", self.polar.iterations.to_string()),
            ("polar.gram_squarings", self.polar.gram_squarings.to_string()),
            ("sweep.rho", join(self.sweep.rho.iter().map(|r| r.to_string()).collect())),
            ("sweep.seeds", join(self.sweep.seeds.iter().map(|s| s.to_string()).collect())),
            ("sweep.tau_rob", self.sweep.tau_rob.to_string()),
        ];
        if let Some(b1) = v.beta1 {
            pairs.insert(8, ("variant.beta1", b1.to_string()));
        }
        pairs.iter().map(|(k, v)| format!("{k} = {v}")).collect::<Vec<_>>().join("\n")
    }

    /// Scales both peak learning rates by `rho`.
    pub fn with_rho(&self, rho: f64) -> RunConfig {
        let mut cfg = self.clone();
        cfg.variant.eta_m *= rho;
        cfg.variant.eta_b *= rho;
        cfg
    }
}

pub const SEED_ENV: &str = "NORMFORGE_SEED";

/// `--seed` beats `NORMFORGE_SEED`, which beats `run.seed`.
pub fn resolve_seed(config_seed: u64, flag: Option<u64>, env: Option<&str>) -> Result<u64, ConfigError> {
    if let Some(seed) = flag {
        return Ok(seed);
    }
    match env.map(str::trim).filter(|s| !s.is_empty()) {
        Some(s) => s.parse().map_err(|_| ConfigError::Invalid { key: SEED_ENV.into(), line: 0, msg: format!("{s:?} is not an integer") }),
        None => Ok(config_seed),
    }
}
