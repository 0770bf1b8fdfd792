//! Experiment configuration: a flat TOML file with dotted keys.
//!
//! ```toml
//! problem = "A"
//! sampler.kind = "latino"
//! sampler.step_vcm = 1e5
//! prior.vcm = "builtin:smoothing"
//! paths.input = "clip.vten"
//! ```
//!
//! Every key is optional except `problem`; unknown keys are rejected.
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use lavino::operators::{LinearOp, NoiseSpec, OpKind, Problem};
use lavino::priors::{
    AlphaSchedule, ExternalPrior, ExternalPriorConfig, GaussianMean, GaussianPrior,
    IdentityPrior, Prior, SmoothingPrior,
};
use lavino::prox::{AdamParams, CgParams, PdhgParams, TvSolver};
use lavino::regularizers::TVWeights;
use lavino::samplers::{
    AdmmParams, SamplerConfig, VisionXlConfig, WARM_START_ICM_TIMESTEPS,
    WARM_START_VCM_TIMESTEPS,
};
use lavino::tensor::Shape;
use toml::Value;

/// A configuration problem tied to one key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl FieldError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        FieldError {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

type FieldResult<T> = Result<T, FieldError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SamplerKind {
    Latino,
    LatinoV,
    LatinoImage,
    VisionXl,
    AdmmTv,
}

impl SamplerKind {
    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Latino => "latino",
            SamplerKind::LatinoV => "latino-v",
            SamplerKind::LatinoImage => "latino-image",
            SamplerKind::VisionXl => "vision-xl",
            SamplerKind::AdmmTv => "admm-tv",
        }
    }
}

impl FromStr for SamplerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "latino" => Ok(SamplerKind::Latino),
            "latino-v" => Ok(SamplerKind::LatinoV),
            "latino-image" => Ok(SamplerKind::LatinoImage),
            "vision-xl" => Ok(SamplerKind::VisionXl),
            "admm-tv" => Ok(SamplerKind::AdmmTv),
            other => Err(format!(
                "unknown sampler '{other}', expected latino, latino-v, latino-image, vision-xl or admm-tv"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PriorSpec {
    Gaussian { mean: f64, std: f64 },
    Smoothing { scale: f64 },
    Identity,
    External { command: String, model: String },
}

impl PriorSpec {
    pub fn has_eps_predictor(&self) -> bool {
        matches!(self, PriorSpec::Gaussian { .. } | PriorSpec::External { .. })
    }

    pub fn label(&self) -> String {
        match self {
            PriorSpec::Gaussian { .. } => "builtin:gaussian".into(),
            PriorSpec::Smoothing { .. } => "builtin:smoothing".into(),
            PriorSpec::Identity => "builtin:identity".into(),
            PriorSpec::External { command, .. } => format!("external:{command}"),
        }
    }

    pub fn build(&self, timeout: Duration) -> lavino::Result<Box<dyn Prior>> {
        Ok(match self {
            PriorSpec::Gaussian { mean, std } => Box::new(GaussianPrior::new(
                GaussianMean::Scalar(*mean),
                *std,
                AlphaSchedule::default(),
            )?),
            PriorSpec::Smoothing { scale } => Box::new(SmoothingPrior::default().with_scale(*scale)),
            PriorSpec::Identity => Box::new(IdentityPrior::default()),
            PriorSpec::External { command, model } => Box::new(ExternalPrior::connect(
                &ExternalPriorConfig::new(command.clone(), model.clone()).with_timeout(timeout),
            )?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProblemSpec {
    Builtin(Problem),
    Custom(OpKind),
}

impl ProblemSpec {
    pub fn operator_kind(&self) -> OpKind {
        match self {
            ProblemSpec::Builtin(p) => p.operator_kind(),
            ProblemSpec::Custom(k) => k.clone(),
        }
    }

    pub fn label(&self) -> String {
        match self {
            ProblemSpec::Builtin(p) => p.to_string(),
            ProblemSpec::Custom(_) => "custom".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub input: Option<PathBuf>,
    pub measurement: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub reference: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub noise: NoiseSpec,
    pub sampler: SamplerKind,
    pub sampler_config: SamplerConfig,
    /// Start from the tensor in `paths.init`.
    pub init_from_file: bool,
    pub vision_xl: VisionXlConfig,
    pub admm: AdmmParams,
    pub vcm_prior: PriorSpec,
    pub icm_prior: PriorSpec,
    pub prior_timeout: Duration,
    pub paths: Paths,
    pub metrics: bool,
    pub verify_seeds: u64,
}

/// Flattens nested tables into dotted keys.
fn flatten(prefix: &str, table: toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other);
            }
        }
    }
}

struct Fields {
    map: BTreeMap<String, Value>,
    base: PathBuf,
}

impl Fields {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    fn has(&self, key: &str) -> bool {
        self.map.contains_key(key)
    }

    fn f64(&mut self, key: &str) -> FieldResult<Option<f64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Float(v)) => Ok(Some(v)),
            Some(Value::Integer(v)) => Ok(Some(v as f64)),
            Some(other) => Err(FieldError::new(key, format!("expected a number, got {other}"))),
        }
    }

    fn positive(&mut self, key: &str) -> FieldResult<Option<f64>> {
        let v = self.f64(key)?;
        if let Some(x) = v {
            if !(x > 0.0) || !x.is_finite() {
                return Err(FieldError::new(key, format!("must be a finite number > 0, got {x}")));
            }
        }
        Ok(v)
    }

    fn uint(&mut self, key: &str) -> FieldResult<Option<u64>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Integer(v)) if v >= 0 => Ok(Some(v as u64)),
            Some(other) => Err(FieldError::new(
                key,
                format!("expected a non-negative integer, got {other}"),
            )),
        }
    }

    fn count(&mut self, key: &str) -> FieldResult<Option<usize>> {
        match self.uint(key)? {
            Some(0) => Err(FieldError::new(key, "must be at least 1")),
            v => Ok(v.map(|x| x as usize)),
        }
    }

    fn string(&mut self, key: &str) -> FieldResult<Option<String>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(other) => Err(FieldError::new(key, format!("expected a string, got {other}"))),
        }
    }

    fn bool(&mut self, key: &str) -> FieldResult<Option<bool>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(b)),
            Some(other) => Err(FieldError::new(key, format!("expected true or false, got {other}"))),
        }
    }

    fn numbers(&mut self, key: &str) -> FieldResult<Option<Vec<f64>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Float(x) => Ok(x),
                    Value::Integer(x) => Ok(x as f64),
                    other => Err(FieldError::new(key, format!("expected numbers, got {other}"))),
                })
                .collect::<FieldResult<Vec<_>>>()
                .map(Some),
            Some(other) => Err(FieldError::new(key, format!("expected an array, got {other}"))),
        }
    }

    fn timesteps(&mut self, key: &str) -> FieldResult<Option<Vec<usize>>> {
        match self.take(key) {
            None => Ok(None),
            Some(Value::Array(items)) => items
                .into_iter()
                .map(|v| match v {
                    Value::Integer(x) if x > 0 && x < 1000 => Ok(x as usize),
                    other => Err(FieldError::new(
                        key,
                        format!("timesteps must be integers in 1..=999, got {other}"),
                    )),
                })
                .collect::<FieldResult<Vec<_>>>()
                .map(Some),
            Some(other) => Err(FieldError::new(key, format!("expected an array, got {other}"))),
        }
    }

    fn path(&mut self, key: &str) -> FieldResult<Option<PathBuf>> {
        Ok(self.string(key)?.map(|s| {
            let p = PathBuf::from(s);
            if p.is_absolute() {
                p
            } else {
                self.base.join(p)
            }
        }))
    }

    fn prior(&mut self, key: &str, model_key: &str, default_model: &str) -> FieldResult<PriorSpec> {
        // shared keys stay in the map until both priors are read
        let mean = self.f64("prior.gaussian_mean")?;
        let std = self.positive("prior.gaussian_std")?;
        let scale = self.positive("prior.smoothing_scale")?;
        for (k, v) in [
            ("prior.gaussian_mean", mean),
            ("prior.gaussian_std", std),
            ("prior.smoothing_scale", scale),
        ] {
            if let Some(v) = v {
                self.map.insert(k.into(), Value::Float(v));
            }
        }
        let model = self
            .string(model_key)?
            .unwrap_or_else(|| default_model.to_string());
        let spec = self.string(key)?.unwrap_or_else(|| "builtin:smoothing".into());
        match spec.as_str() {
            "builtin:gaussian" => Ok(PriorSpec::Gaussian {
                mean: mean.unwrap_or(0.0),
                std: std.unwrap_or(1.0),
            }),
            "builtin:smoothing" => Ok(PriorSpec::Smoothing {
                scale: scale.unwrap_or(SmoothingPrior::DEFAULT_SCALE),
            }),
            "builtin:identity" => Ok(PriorSpec::Identity),
            s => match s.strip_prefix("external:") {
                Some(cmd) if !cmd.trim().is_empty() => Ok(PriorSpec::External {
                    command: cmd.trim().to_string(),
                    model,
                }),
                _ => Err(FieldError::new(
                    key,
                    format!(
                        "unknown prior '{s}', expected builtin:gaussian, builtin:smoothing, builtin:identity or external:<command>"
                    ),
                )),
            },
        }
    }
}

fn tv_weights(key: &str, v: Vec<f64>) -> FieldResult<TVWeights> {
    if v.len() != 3 {
        return Err(FieldError::new(
            key,
            format!("expected [lambda_h, lambda_v, lambda_t], got {} values", v.len()),
        ));
    }
    let w = TVWeights::new(v[0], v[1], v[2]);
    w.validate().map_err(|e| FieldError::new(key, e.to_string()))?;
    Ok(w)
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> FieldResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| FieldError::new("config", format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base: &Path) -> FieldResult<Self> {
        let table: toml::Table = toml::from_str(text)
            .map_err(|e| FieldError::new("config", e.message().to_string()))?;
        let mut map = BTreeMap::new();
        flatten("", table, &mut map);
        let mut f = Fields {
            map,
            base: base.to_path_buf(),
        };

        let problem_name = f
            .string("problem")?
            .ok_or_else(|| FieldError::new("problem", "missing; expected A, B, C or custom"))?;
        let operator = f.string("operator")?;
        let problem = match (problem_name.as_str(), operator) {
            ("custom", Some(op)) => ProblemSpec::Custom(
                op.parse().map_err(|e: lavino::Error| FieldError::new("operator", e.to_string()))?,
            ),
            ("custom", None) => {
                return Err(FieldError::new("operator", "required when problem = \"custom\""))
            }
            (name, None) => ProblemSpec::Builtin(
                name.parse().map_err(|_| {
                    FieldError::new("problem", format!("unknown problem '{name}', expected A, B, C or custom"))
                })?,
            ),
            (_, Some(_)) => {
                return Err(FieldError::new("operator", "only allowed when problem = \"custom\""))
            }
        };

        let mut noise = NoiseSpec {
            sigma_n: 0.001,
            seed: 0,
        };
        if let Some(s) = f.f64("noise.sigma_n")? {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(FieldError::new("noise.sigma_n", format!("must be finite and >= 0, got {s}")));
            }
            noise.sigma_n = s;
        }
        if let Some(s) = f.uint("noise.seed")? {
            noise.seed = s;
        }

        let sampler = match f.string("sampler.kind")? {
            Some(s) => s.parse().map_err(|e| FieldError::new("sampler.kind", e))?,
            None => SamplerKind::Latino,
        };

        let mut sc = match &problem {
            ProblemSpec::Builtin(p) => SamplerConfig::for_problem(*p),
            ProblemSpec::Custom(_) => SamplerConfig::default(),
        };
        sc.sigma_n = if noise.sigma_n > 0.0 { noise.sigma_n } else { sc.sigma_n };
        if let Some(s) = f.positive("sampler.sigma_n")? {
            sc.sigma_n = s;
        }
        let explicit_schedule = f.has("sampler.vcm_timesteps") || f.has("sampler.icm_timesteps");
        if let Some(v) = f.timesteps("sampler.vcm_timesteps")? {
            sc.vcm_timesteps = v;
        }
        if let Some(v) = f.timesteps("sampler.icm_timesteps")? {
            sc.icm_timesteps = v;
        }
        if let Some(v) = f.positive("sampler.step_vcm")? {
            sc.step_vcm = v;
        }
        if let Some(v) = f.positive("sampler.step_icm")? {
            sc.step_icm = v;
        }
        if let Some(v) = f.numbers("sampler.tv_weights")? {
            sc.tv_weights = tv_weights("sampler.tv_weights", v)?;
        }
        if let Some(s) = f.string("sampler.tv_solver")? {
            sc.tv_solver = s
                .parse::<TvSolver>()
                .map_err(|e| FieldError::new("sampler.tv_solver", e.to_string()))?;
        }
        if let Some(s) = f.uint("sampler.seed")? {
            sc.seed = s;
        }
        let mut cg = CgParams::default();
        if let Some(n) = f.count("cg.iters")? {
            cg.max_iters = n;
        }
        if let Some(t) = f.positive("cg.tol")? {
            cg.tol = t;
        }
        sc.cg = cg;
        let mut pdhg = PdhgParams::default();
        if let Some(n) = f.count("pdhg.iters")? {
            pdhg.iters = n;
        }
        sc.pdhg = pdhg;
        let mut adam = AdamParams::default();
        if let Some(lr) = f.positive("adam.lr")? {
            adam.lr = lr;
        }
        if let Some(n) = f.count("adam.iters")? {
            adam.iters = n;
        }
        adam.validate()
            .map_err(|e| FieldError::new("adam.lr", e.to_string()))?;
        sc.adam = adam;

        let init_from_file = match f.string("sampler.init")?.as_deref() {
            None | Some("pseudo-inverse") => false,
            Some("file") => true,
            Some(other) => {
                return Err(FieldError::new(
                    "sampler.init",
                    format!("unknown init '{other}', expected pseudo-inverse or file"),
                ))
            }
        };
        if init_from_file && !explicit_schedule {
            sc.vcm_timesteps = WARM_START_VCM_TIMESTEPS.to_vec();
            sc.icm_timesteps = WARM_START_ICM_TIMESTEPS.to_vec();
        }

        let mut vxl = VisionXlConfig::default();
        if let Some(r) = f.positive("vision_xl.rho_fraction")? {
            vxl.rho_fraction = r;
        }
        if let Some(g) = f.uint("vision_xl.grid")? {
            vxl.grid = if g == 0 { None } else { Some(g as usize) };
        }
        if let Some(n) = f.uint("vision_xl.cg_iters")? {
            vxl.cg_iters = n as usize;
        }
        if let Some(s) = f.f64("vision_xl.sigma_max")? {
            vxl.sigma_max = s;
        }
        vxl.seed = sc.seed;
        vxl.validate()
            .map_err(|e| FieldError::new("vision_xl", e.to_string()))?;

        let mut admm = AdmmParams::default();
        if let Some(r) = f.positive("admm.rho")? {
            admm.rho = r;
        }
        if let Some(n) = f.count("admm.iters")? {
            admm.iters = n;
        }
        admm.cg = cg;

        let vcm_prior = f.prior("prior.vcm", "prior.vcm_model", "vcm")?;
        let icm_prior = f.prior("prior.icm", "prior.icm_model", "icm")?;
        f.take("prior.gaussian_mean");
        f.take("prior.gaussian_std");
        f.take("prior.smoothing_scale");
        let prior_timeout = Duration::from_secs_f64(f.positive("prior.timeout_s")?.unwrap_or(300.0));

        let paths = Paths {
            input: f.path("paths.input")?,
            measurement: f.path("paths.measurement")?,
            init: f.path("paths.init")?,
            reference: f.path("paths.reference")?,
            output: f.path("paths.output")?,
        };
        let metrics = f.bool("metrics.enabled")?.unwrap_or(true);
        let verify_seeds = f.uint("verify.seeds")?.unwrap_or(20);

        if let Some(key) = f.map.keys().next() {
            return Err(FieldError::new(key.clone(), "unknown key"));
        }

        let cfg = ExperimentConfig {
            problem,
            noise,
            sampler,
            sampler_config: sc,
            init_from_file,
            vision_xl: vxl,
            admm,
            vcm_prior,
            icm_prior,
            prior_timeout,
            paths,
            metrics,
            verify_seeds,
        };
        cfg.check_sampler()?;
        Ok(cfg)
    }

    /// Schedule and prior compatibility for the selected sampler.
    pub fn check_sampler(&self) -> FieldResult<()> {
        let sc = &self.sampler_config;
        let schedule_field = |e: lavino::Error| {
            let msg = e.to_string();
            let field = if msg.contains("icm") {
                "sampler.icm_timesteps"
            } else if msg.contains("vcm") {
                "sampler.vcm_timesteps"
            } else {
                "sampler"
            };
            FieldError::new(field, msg)
        };
        match self.sampler {
            SamplerKind::Latino => sc.validate().map_err(schedule_field),
            SamplerKind::LatinoV => sc.validate_video_only().map_err(schedule_field),
            SamplerKind::LatinoImage => {
                sc.validate_image_only().map_err(schedule_field)?;
                let temporal = self.problem.operator_kind().stages().iter().any(|s| {
                    matches!(s, OpKind::TemporalPool(_) | OpKind::TemporalCircBlur(_))
                });
                if temporal {
                    return Err(FieldError::new(
                        "sampler.kind",
                        "latino-image restores frames independently and needs an operator without temporal stages",
                    ));
                }
                Ok(())
            }
            SamplerKind::VisionXl => {
                if !self.icm_prior.has_eps_predictor() {
                    return Err(FieldError::new(
                        "prior.icm",
                        format!(
                            "vision-xl needs a prior with a noise predictor; {} has none",
                            self.icm_prior.label()
                        ),
                    ));
                }
                Ok(())
            }
            SamplerKind::AdmmTv => Ok(()),
        }
    }

    pub fn operator(&self, input: Shape) -> lavino::Result<LinearOp> {
        LinearOp::new(self.problem.operator_kind(), input)
    }
}
