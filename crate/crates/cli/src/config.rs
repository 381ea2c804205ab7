//! Flat `key = value` configuration files and their mapping onto the
//! library's config structs.
//!
//! Keys use underscores (`batch_size`); the matching command-line flag
//! uses dashes (`--batch-size`). Flags override file values.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use spdnorm::grad::{GradScheme, DEFAULT_TAU};
use spdnorm::layers::{ForwardMode, PipelineConfig, Precision};
use spdnorm::matfun::{MatFunKind, NewtonConfig, ScaleMode, SqrtScheme};
use spdnorm::train::{SyntheticSpec, TrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::Usage(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    no + 1
                )));
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(CliError::Usage(format!("line {}: empty key", no + 1)));
            }
            if map.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(CliError::Usage(format!(
                    "line {}: duplicate key `{key}`",
                    no + 1
                )));
            }
        }
        Ok(Self { map })
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Format {
                path: path.display().to_string(),
                reason: msg,
            },
            other => other,
        })
    }

    /// Reads `path` if given, otherwise starts empty.
    pub fn load_optional(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.map.insert(key.to_string(), value.into());
    }

    /// Applies flag values on top of the file.
    pub fn overlay(&mut self, flags: &[(&str, Option<String>)]) {
        for (k, v) in flags {
            if let Some(v) = v {
                self.set(k, v.clone());
            }
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.map
    }

    pub fn to_text(&self) -> String {
        self.map
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn extend(&mut self, other: &KvConfig) {
        for (k, v) in &other.map {
            self.map.insert(k.clone(), v.clone());
        }
    }
}

/// Consumes keys from a [`KvConfig`]; leftover keys are reported as
/// unknown by [`Reader::finish`].
pub struct Reader {
    rest: BTreeMap<String, String>,
}

impl Reader {
    pub fn new(cfg: &KvConfig) -> Self {
        Self {
            rest: cfg.map.clone(),
        }
    }

    pub fn raw(&mut self, key: &str) -> Option<String> {
        self.rest.remove(key)
    }

    pub fn value<T: FromStr>(&mut self, key: &str) -> CliResult<Option<T>> {
        match self.rest.remove(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| CliError::Usage(format!("invalid value `{v}` for `{key}`"))),
        }
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> CliResult<T> {
        Ok(self.value(key)?.unwrap_or(default))
    }

    pub fn flag(&mut self, key: &str, default: bool) -> CliResult<bool> {
        match self.rest.remove(key) {
            None => Ok(default),
            Some(v) => parse_bool(&v)
                .ok_or_else(|| CliError::Usage(format!("invalid boolean `{v}` for `{key}`"))),
        }
    }

    pub fn list<T: FromStr>(&mut self, key: &str) -> CliResult<Option<Vec<T>>> {
        match self.rest.remove(key) {
            None => Ok(None),
            Some(v) => parse_list(&v)
                .map(Some)
                .ok_or_else(|| CliError::Usage(format!("invalid list `{v}` for `{key}`"))),
        }
    }

    pub fn finish(self) -> CliResult<()> {
        if self.rest.is_empty() {
            Ok(())
        } else {
            let keys: Vec<&str> = self.rest.keys().map(String::as_str).collect();
            Err(CliError::Usage(format!(
                "unknown keys: {}",
                keys.join(", ")
            )))
        }
    }
}

pub fn parse_bool(v: &str) -> Option<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

pub fn parse_list<T: FromStr>(v: &str) -> Option<Vec<T>> {
    let items: Option<Vec<T>> = v
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().ok())
        .collect();
    items.filter(|v| !v.is_empty())
}

pub fn parse_matfun(v: &str) -> CliResult<Option<MatFunKind>> {
    let kind = match v {
        "none" => return Ok(None),
        "sqrt" => MatFunKind::Sqrt,
        "log" => MatFunKind::Log,
        other => {
            let p = other
                .strip_prefix("power:")
                .and_then(|p| p.parse::<f64>().ok())
                .ok_or_else(|| {
                    CliError::Usage(format!(
                        "unknown matrix function `{other}` (none, sqrt, log, power:P)"
                    ))
                })?;
            MatFunKind::Power(p)
        }
    };
    kind.validate()?;
    Ok(Some(kind))
}

pub fn matfun_name(kind: Option<MatFunKind>) -> String {
    kind.map_or_else(|| "none".to_string(), |k| k.to_string())
}

pub fn parse_sqrt_scheme(v: &str) -> CliResult<SqrtScheme> {
    match v {
        "db" | "denman-beavers" => Ok(SqrtScheme::DenmanBeavers),
        "ns" | "newton-schulz" => Ok(SqrtScheme::ModifiedNewtonSchulz),
        other => Err(CliError::Usage(format!(
            "unknown square-root scheme `{other}` (db, ns)"
        ))),
    }
}

pub fn sqrt_scheme_name(s: SqrtScheme) -> &'static str {
    match s {
        SqrtScheme::DenmanBeavers => "db",
        SqrtScheme::ModifiedNewtonSchulz => "ns",
    }
}

pub fn parse_scale(v: &str) -> CliResult<ScaleMode> {
    match v {
        "frobenius" => Ok(ScaleMode::FrobeniusNorm),
        "spectral" => Ok(ScaleMode::SpectralNorm),
        "none" => Ok(ScaleMode::None),
        other => Err(CliError::Usage(format!(
            "unknown scale mode `{other}` (frobenius, spectral, none)"
        ))),
    }
}

pub fn scale_name(s: ScaleMode) -> &'static str {
    match s {
        ScaleMode::FrobeniusNorm => "frobenius",
        ScaleMode::SpectralNorm => "spectral",
        ScaleMode::None => "none",
    }
}

pub fn parse_grad(v: &str, tau: f64) -> CliResult<GradScheme> {
    match v {
        "lyapunov" => Ok(GradScheme::Lyapunov),
        "svd" => Ok(GradScheme::SvdTruncated { tau }),
        "pass" | "pass-through" => Ok(GradScheme::PassThrough),
        other => Err(CliError::Usage(format!(
            "unknown gradient scheme `{other}` (lyapunov, svd, pass)"
        ))),
    }
}

pub fn grad_name(g: GradScheme) -> &'static str {
    match g {
        GradScheme::Lyapunov => "lyapunov",
        GradScheme::SvdTruncated { .. } => "svd",
        GradScheme::PassThrough => "pass",
    }
}

pub fn newton_config(
    scheme: SqrtScheme,
    iterations: usize,
    scale: Option<ScaleMode>,
) -> NewtonConfig {
    let base = match scheme {
        SqrtScheme::DenmanBeavers => NewtonConfig::denman_beavers(iterations),
        SqrtScheme::ModifiedNewtonSchulz => NewtonConfig::newton_schulz(iterations),
    };
    NewtonConfig {
        scale_mode: scale.unwrap_or(base.scale_mode),
        ..base
    }
}

/// Pipeline keys: `epsilon`, `matfun`, `forward` (spectral, db, ns),
/// `iterations`, `scale`, `grad`, `tau`, `signed_sqrt`, `l2`, `precision`.
pub fn read_pipeline(r: &mut Reader) -> CliResult<PipelineConfig> {
    let defaults = PipelineConfig::default();
    let epsilon = r.or("epsilon", defaults.epsilon)?;
    let matfun = match r.raw("matfun") {
        Some(v) => parse_matfun(&v)?,
        None => defaults.matfun,
    };
    let iterations = r.or("iterations", 20usize)?;
    let scale = r.raw("scale").map(|v| parse_scale(&v)).transpose()?;
    let forward_mode = match r.raw("forward").as_deref() {
        None | Some("spectral") => ForwardMode::Spectral,
        Some(v) => ForwardMode::Iterative(newton_config(parse_sqrt_scheme(v)?, iterations, scale)),
    };
    let tau = r.or("tau", DEFAULT_TAU)?;
    let default_grad = match matfun {
        Some(MatFunKind::Sqrt) => GradScheme::Lyapunov,
        Some(k) if !k.is_identity() => GradScheme::SvdTruncated { tau },
        _ => GradScheme::PassThrough,
    };
    let grad_scheme = match r.raw("grad") {
        Some(v) => parse_grad(&v, tau)?,
        None => default_grad,
    };
    let precision = match r.raw("precision").as_deref() {
        None | Some("double") => Precision::Double,
        Some("single") => Precision::Single,
        Some(other) => {
            return Err(CliError::Usage(format!(
                "unknown precision `{other}` (double, single)"
            )))
        }
    };
    let cfg = PipelineConfig {
        epsilon,
        matfun,
        forward_mode,
        grad_scheme,
        use_signed_sqrt: r.flag("signed_sqrt", defaults.use_signed_sqrt)?,
        use_l2: r.flag("l2", defaults.use_l2)?,
        precision,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Inverse of [`read_pipeline`]: every key written explicitly.
pub fn write_pipeline(cfg: &PipelineConfig) -> KvConfig {
    let mut kv = KvConfig::default();
    kv.set("epsilon", cfg.epsilon.to_string());
    kv.set("matfun", matfun_name(cfg.matfun));
    match cfg.forward_mode {
        ForwardMode::Spectral => kv.set("forward", "spectral"),
        ForwardMode::Iterative(n) => {
            kv.set("forward", sqrt_scheme_name(n.scheme));
            kv.set("iterations", n.iterations.to_string());
            kv.set("scale", scale_name(n.scale_mode));
        }
    }
    kv.set("grad", grad_name(cfg.grad_scheme));
    if let GradScheme::SvdTruncated { tau } = cfg.grad_scheme {
        kv.set("tau", tau.to_string());
    }
    kv.set("signed_sqrt", cfg.use_signed_sqrt.to_string());
    kv.set("l2", cfg.use_l2.to_string());
    kv.set(
        "precision",
        match cfg.precision {
            Precision::Double => "double",
            Precision::Single => "single",
        },
    );
    kv
}

/// Training keys: `lr`, `momentum`, `epochs`, `batch_size`, `seed`,
/// `svm_c`, `init_epochs`, `fine_tune`.
pub fn read_train(r: &mut Reader) -> CliResult<TrainConfig> {
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: r.or("lr", d.learning_rate)?,
        momentum: r.or("momentum", d.momentum)?,
        epochs: r.or("epochs", d.epochs)?,
        batch_size: r.or("batch_size", d.batch_size)?,
        seed: r.or("seed", d.seed)?,
        svm_c: r.or("svm_c", d.svm_c)?,
        init_epochs: r.or("init_epochs", d.init_epochs)?,
        fine_tune: r.flag("fine_tune", d.fine_tune)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn write_train(cfg: &TrainConfig) -> KvConfig {
    let mut kv = KvConfig::default();
    kv.set("lr", cfg.learning_rate.to_string());
    kv.set("momentum", cfg.momentum.to_string());
    kv.set("epochs", cfg.epochs.to_string());
    kv.set("batch_size", cfg.batch_size.to_string());
    kv.set("seed", cfg.seed.to_string());
    kv.set("svm_c", cfg.svm_c.to_string());
    kv.set("init_epochs", cfg.init_epochs.to_string());
    kv.set("fine_tune", cfg.fine_tune.to_string());
    kv
}

/// Synthetic data keys: `classes`, `channels`, `locations`,
/// `samples_per_class`, `burst_factor`, `noise_sigma`.
pub fn read_spec(r: &mut Reader) -> CliResult<SyntheticSpec> {
    let d = SyntheticSpec::benchmark();
    let spec = SyntheticSpec {
        classes: r.or("classes", d.classes)?,
        channels: r.or("channels", d.channels)?,
        locations: r.or("locations", d.locations)?,
        samples_per_class: r.or("samples_per_class", d.samples_per_class)?,
        burst_factor: r.or("burst_factor", d.burst_factor)?,
        noise_sigma: r.or("noise_sigma", d.noise_sigma)?,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn write_spec(spec: &SyntheticSpec) -> KvConfig {
    let mut kv = KvConfig::default();
    kv.set("classes", spec.classes.to_string());
    kv.set("channels", spec.channels.to_string());
    kv.set("locations", spec.locations.to_string());
    kv.set("samples_per_class", spec.samples_per_class.to_string());
    kv.set("burst_factor", spec.burst_factor.to_string());
    kv.set("noise_sigma", spec.noise_sigma.to_string());
    kv
}
