//! Flat `key = value` run configuration.
//!
//! One assignment per line, `#` starts a comment. [`RunConfig::to_text`]
//! writes every key explicitly so a parsed-and-echoed config parses back to
//! the same value.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::ConfigError;
use crate::evidence::PhiConditional;
use crate::model::{LgParams, SvParams};
use crate::prior::{Marginal, PriorSpec};
use crate::proposal::{ProposalSpec, Transform};
use crate::smc::ResamplingScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelId {
    Sv,
    Lg,
}

impl ModelId {
    /// Every parameter that can be set with `param.<name>`.
    pub fn all_params(self) -> &'static [&'static str] {
        match self {
            ModelId::Sv => &["mu", "rho", "sigma"],
            ModelId::Lg => &["phi", "sigma_x", "sigma_y"],
        }
    }

    /// Parameters sampled by PMMH: a prefix of [`ModelId::all_params`].
    pub fn estimated_params(self) -> &'static [&'static str] {
        match self {
            ModelId::Sv => &["mu", "rho", "sigma"],
            ModelId::Lg => &["phi"],
        }
    }

    fn default_params(self) -> Vec<f64> {
        match self {
            ModelId::Sv => vec![1.0, 0.9, 0.5],
            ModelId::Lg => vec![0.8, 1.0, 0.5],
        }
    }

    fn default_prior(self) -> PriorSpec {
        match self {
            ModelId::Sv => PriorSpec::sv_default(),
            ModelId::Lg => PriorSpec::lg_default(),
        }
    }

    fn default_proposal(self) -> ProposalSpec {
        match self {
            ModelId::Sv => ProposalSpec::sv_default(),
            ModelId::Lg => ProposalSpec::lg_default(),
        }
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelId::Sv => "sv",
            ModelId::Lg => "lg",
        })
    }
}

impl FromStr for ModelId {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "sv" => Ok(ModelId::Sv),
            "lg" => Ok(ModelId::Lg),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThetaStar {
    Median,
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelId,
    pub t: usize,
    pub n: usize,
    pub m: usize,
    pub scheme: ResamplingScheme,
    pub seed: u64,
    pub threads: usize,
    pub burn_in: f64,
    pub thin: usize,
    pub out_dir: PathBuf,
    pub data_path: Option<PathBuf>,
    pub ess_threshold: f64,
    /// Values for [`ModelId::all_params`], used to simulate and to fix the
    /// parameters PMMH does not sample.
    pub params: Vec<f64>,
    pub prior: PriorSpec,
    pub proposal: ProposalSpec,
    pub init: Option<Vec<f64>>,
    pub evidence_r: usize,
    pub evidence_k: usize,
    pub theta_star: ThetaStar,
    pub conditional: PhiConditional,
}

const FIXED_KEYS: &[&str] = &[
    "model",
    "T",
    "N",
    "M",
    "scheme",
    "seed",
    "threads",
    "burn_in",
    "thin",
    "out_dir",
    "data_path",
    "ess_threshold",
    "evidence.R",
    "evidence.K",
    "evidence.theta_star",
    "evidence.conditional",
];

const PRIOR_FIELDS: &[&str] = &["dist", "mean", "sd", "lo", "hi"];

struct Entries {
    map: BTreeMap<String, (String, usize)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut map: BTreeMap<String, (String, usize)> = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((k, v)) = content.split_once('=') else {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(ConfigError::Syntax {
                    line,
                    text: raw.to_string(),
                });
            }
            if let Some((_, first)) = map.get(k) {
                return Err(ConfigError::Duplicate {
                    key: k.to_string(),
                    line,
                    first: *first,
                });
            }
            map.insert(k.to_string(), (v.to_string(), line));
        }
        Ok(Entries { map })
    }

    fn line(&self, key: &str) -> Option<usize> {
        self.map.get(key).map(|(_, l)| *l)
    }

    fn get<T: FromStr>(&self, key: &str, expected: &'static str) -> Result<Option<T>, ConfigError> {
        match self.map.get(key) {
            None => Ok(None),
            Some((v, line)) => v.parse().map(Some).map_err(|_| ConfigError::Type {
                key: key.to_string(),
                line: *line,
                value: v.clone(),
                expected,
            }),
        }
    }

    fn count(&self, key: &str, default: usize, min: usize) -> Result<usize, ConfigError> {
        let v = self.get(key, "a non-negative integer")?.unwrap_or(default);
        if v < min {
            return Err(self.constraint(key, format!("must be at least {min}, got {v}")));
        }
        Ok(v)
    }

    fn real(&self, key: &str) -> Result<Option<f64>, ConfigError> {
        let v: Option<f64> = self.get(key, "a number")?;
        match v {
            Some(x) if x.is_nan() => Err(self.constraint(key, "must not be NaN".into())),
            _ => Ok(v),
        }
    }

    fn constraint(&self, key: &str, reason: String) -> ConfigError {
        ConfigError::Constraint {
            key: key.to_string(),
            line: self.line(key),
            reason,
        }
    }
}

fn dist_name(m: &Marginal) -> &'static str {
    match m {
        Marginal::Normal { .. } => "normal",
        Marginal::Uniform { .. } => "uniform",
        Marginal::LogNormal { .. } => "lognormal",
        Marginal::TruncatedNormal { .. } => "truncnormal",
    }
}

fn dist_fields(dist: &str) -> Option<&'static [&'static str]> {
    match dist {
        "normal" | "lognormal" => Some(&["mean", "sd"]),
        "uniform" => Some(&["lo", "hi"]),
        "truncnormal" => Some(&["mean", "sd", "lo", "hi"]),
        _ => None,
    }
}

fn marginal_fields(m: &Marginal) -> Vec<(&'static str, f64)> {
    match *m {
        Marginal::Normal { mean, sd } => vec![("mean", mean), ("sd", sd)],
        Marginal::Uniform { lo, hi } => vec![("lo", lo), ("hi", hi)],
        Marginal::LogNormal { log_mean, log_sd } => vec![("mean", log_mean), ("sd", log_sd)],
        Marginal::TruncatedNormal { mean, sd, lo, hi } => {
            vec![("mean", mean), ("sd", sd), ("lo", lo), ("hi", hi)]
        }
    }
}

/// Prior for one parameter: the default, with fields overridden. Changing
/// `dist` discards the default's fields.
fn parse_marginal(e: &Entries, param: &str, default: &Marginal) -> Result<Marginal, ConfigError> {
    let key = |f: &str| format!("prior.{param}.{f}");
    let dist_key = key("dist");
    let dist: String = e.get(&dist_key, "a distribution name")?.unwrap_or_else(|| dist_name(default).into());
    let Some(fields) = dist_fields(&dist) else {
        return Err(e.constraint(&dist_key, format!("unknown distribution {dist:?}; use normal, uniform, lognormal or truncnormal")));
    };
    let inherited: BTreeMap<&str, f64> = if dist == dist_name(default) {
        marginal_fields(default).into_iter().collect()
    } else {
        BTreeMap::new()
    };
    for f in ["mean", "sd", "lo", "hi"] {
        if !fields.contains(&f) && e.line(&key(f)).is_some() {
            return Err(e.constraint(&key(f), format!("not a parameter of {dist}")));
        }
    }
    let mut values = BTreeMap::new();
    for &f in fields {
        let v = match e.real(&key(f))? {
            Some(v) => v,
            None => *inherited.get(f).ok_or_else(|| ConfigError::Missing(key(f)))?,
        };
        values.insert(f, v);
    }
    let m = match dist.as_str() {
        "normal" => Marginal::Normal { mean: values["mean"], sd: values["sd"] },
        "lognormal" => Marginal::LogNormal { log_mean: values["mean"], log_sd: values["sd"] },
        "uniform" => Marginal::Uniform { lo: values["lo"], hi: values["hi"] },
        _ => Marginal::TruncatedNormal {
            mean: values["mean"],
            sd: values["sd"],
            lo: values["lo"],
            hi: values["hi"],
        },
    };
    m.validate().map_err(|reason| e.constraint(&dist_key, reason))?;
    Ok(m)
}

fn check_params(model: ModelId, params: &[f64], e: &Entries) -> Result<(), ConfigError> {
    let result = match model {
        ModelId::Sv => SvParams::new(params[0], params[1], params[2]).and_then(|p| p.stationary_variance().map(|_| ())),
        ModelId::Lg => LgParams::new(params[0], params[1], params[2]).map(|_| ()),
    };
    result.map_err(|err| {
        let name = match &err {
            crate::error::ModelError::NonStationary { name, .. }
            | crate::error::ModelError::InvalidParameter { name, .. } => name.to_string(),
            _ => model.all_params()[0].to_string(),
        };
        e.constraint(&format!("param.{name}"), err.to_string())
    })
}

/// Parse and validate a configuration. A missing `seed` is drawn from the
/// OS entropy source and recorded in the result.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let e = Entries::parse(text)?;

    let model_str: String = e.get("model", "sv or lg")?.ok_or_else(|| ConfigError::Missing("model".into()))?;
    let model: ModelId = model_str.parse().map_err(|_| ConfigError::Type {
        key: "model".into(),
        line: e.line("model").unwrap_or(0),
        value: model_str.clone(),
        expected: "sv or lg",
    })?;

    for (key, (_, line)) in &e.map {
        let known = FIXED_KEYS.contains(&key.as_str())
            || key
                .strip_prefix("param.")
                .is_some_and(|p| model.all_params().contains(&p))
            || key
                .strip_prefix("init.")
                .is_some_and(|p| model.estimated_params().contains(&p))
            || key
                .strip_prefix("proposal.")
                .and_then(|r| r.strip_suffix(".sd"))
                .is_some_and(|p| model.estimated_params().contains(&p))
            || key.strip_prefix("prior.").and_then(|r| r.split_once('.')).is_some_and(|(p, f)| {
                model.estimated_params().contains(&p) && PRIOR_FIELDS.contains(&f)
            });
        if !known {
            return Err(ConfigError::UnknownKey {
                key: key.clone(),
                line: *line,
            });
        }
    }

    let scheme = match e.map.get("scheme") {
        None => ResamplingScheme::default(),
        Some((v, line)) => v.parse().map_err(|_| ConfigError::Type {
            key: "scheme".into(),
            line: *line,
            value: v.clone(),
            expected: "multinomial, residual or systematic",
        })?,
    };

    let burn_in = e.real("burn_in")?.unwrap_or(0.1);
    if !(0.0..1.0).contains(&burn_in) {
        return Err(e.constraint("burn_in", format!("must lie in [0, 1), got {burn_in}")));
    }
    let ess_threshold = e.real("ess_threshold")?.unwrap_or(1.0);
    if !(0.0..=1.0).contains(&ess_threshold) {
        return Err(e.constraint("ess_threshold", format!("must lie in [0, 1], got {ess_threshold}")));
    }

    let mut params = model.default_params();
    for (j, name) in model.all_params().iter().enumerate() {
        if let Some(v) = e.real(&format!("param.{name}"))? {
            params[j] = v;
        }
    }
    check_params(model, &params, &e)?;

    let default_prior = model.default_prior();
    let default_proposal = model.default_proposal();
    let mut marginals = Vec::new();
    let mut sds = Vec::new();
    for (j, name) in model.estimated_params().iter().enumerate() {
        marginals.push(parse_marginal(&e, name, &default_prior.marginals[j])?);
        let key = format!("proposal.{name}.sd");
        let sd = e.real(&key)?.unwrap_or(default_proposal.sds[j]);
        if !(sd.is_finite() && sd >= 0.0) {
            return Err(e.constraint(&key, format!("must be finite and non-negative, got {sd}")));
        }
        sds.push(sd);
    }
    let transforms: Vec<Transform> = default_proposal.transforms.clone();
    let proposal = ProposalSpec::new(sds, transforms).map_err(|err| ConfigError::Constraint {
        key: "proposal".into(),
        line: None,
        reason: err.to_string(),
    })?;

    let init_keys: Vec<String> = model.estimated_params().iter().map(|p| format!("init.{p}")).collect();
    let init_values = init_keys
        .iter()
        .map(|k| e.real(k))
        .collect::<Result<Vec<_>, _>>()?;
    let init = if init_values.iter().all(Option::is_none) {
        None
    } else {
        let mut v = Vec::new();
        for (k, x) in init_keys.iter().zip(&init_values) {
            match x {
                Some(x) if x.is_finite() => v.push(*x),
                Some(x) => return Err(e.constraint(k, format!("must be finite, got {x}"))),
                None => return Err(ConfigError::Missing(k.clone())),
            }
        }
        Some(v)
    };

    let theta_star = match e.get::<String>("evidence.theta_star", "median or mean")?.as_deref() {
        None | Some("median") => ThetaStar::Median,
        Some("mean") => ThetaStar::Mean,
        Some(other) => {
            return Err(ConfigError::Type {
                key: "evidence.theta_star".into(),
                line: e.line("evidence.theta_star").unwrap_or(0),
                value: other.into(),
                expected: "median or mean",
            })
        }
    };
    let conditional = match e.get::<String>("evidence.conditional", "exact or conjugate")?.as_deref() {
        None | Some("exact") => PhiConditional::Exact,
        Some("conjugate") => PhiConditional::Conjugate,
        Some(other) => {
            return Err(ConfigError::Type {
                key: "evidence.conditional".into(),
                line: e.line("evidence.conditional").unwrap_or(0),
                value: other.into(),
                expected: "exact or conjugate",
            })
        }
    };

    let seed = match e.get("seed", "an unsigned 64-bit integer")? {
        Some(s) => s,
        None => rand::random(),
    };

    Ok(RunConfig {
        model,
        t: e.count("T", 500, 1)?,
        n: e.count("N", 100, 1)?,
        m: e.count("M", 10_000, 0)?,
        scheme,
        seed,
        threads: e.count("threads", 1, 1)?,
        burn_in,
        thin: e.count("thin", 100, 1)?,
        out_dir: e.get::<String>("out_dir", "a path")?.unwrap_or_else(|| "out".into()).into(),
        data_path: e.get::<String>("data_path", "a path")?.map(PathBuf::from),
        ess_threshold,
        params,
        prior: PriorSpec::new(marginals),
        proposal,
        init,
        evidence_r: e.count("evidence.R", 100, 1)?,
        evidence_k: e.count("evidence.K", 2000, 1)?,
        theta_star,
        conditional,
    })
}

impl RunConfig {
    /// Canonical text with every key spelled out.
    pub fn to_text(&self) -> String {
        let mut lines = vec![
            format!("model = {}", self.model),
            format!("T = {}", self.t),
            format!("N = {}", self.n),
            format!("M = {}", self.m),
            format!("scheme = {}", self.scheme),
            format!("seed = {}", self.seed),
            format!("threads = {}", self.threads),
            format!("burn_in = {}", self.burn_in),
            format!("thin = {}", self.thin),
            format!("out_dir = {}", self.out_dir.display()),
        ];
        if let Some(p) = &self.data_path {
            lines.push(format!("data_path = {}", p.display()));
        }
        lines.push(format!("ess_threshold = {}", self.ess_threshold));
        for (name, v) in self.model.all_params().iter().zip(&self.params) {
            lines.push(format!("param.{name} = {v}"));
        }
        for (j, name) in self.model.estimated_params().iter().enumerate() {
            let m = &self.prior.marginals[j];
            lines.push(format!("prior.{name}.dist = {}", dist_name(m)));
            for (f, v) in marginal_fields(m) {
                lines.push(format!("prior.{name}.{f} = {v}"));
            }
            lines.push(format!("proposal.{name}.sd = {}", self.proposal.sds[j]));
            if let Some(init) = &self.init {
                lines.push(format!("init.{name} = {}", init[j]));
            }
        }
        lines.push(format!("evidence.R = {}", self.evidence_r));
        lines.push(format!("evidence.K = {}", self.evidence_k));
        lines.push(format!(
            "evidence.theta_star = {}",
            match self.theta_star {
                ThetaStar::Median => "median",
                ThetaStar::Mean => "mean",
            }
        ));
        lines.push(format!(
            "evidence.conditional = {}",
            match self.conditional {
                PhiConditional::Exact => "exact",
                PhiConditional::Conjugate => "conjugate",
            }
        ));
        let mut text = lines.join("\n");
        text.push('\n');
        text
    }

    /// Values of the parameters PMMH holds fixed (`sigma_x`, `sigma_y` for LG).
    pub fn fixed_params(&self) -> &[f64] {
        &self.params[self.model.estimated_params().len()..]
    }
}
