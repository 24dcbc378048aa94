//! Flat `key = value` run configuration with dotted sections.
//!
//! Every key has a default, so an empty file is a complete configuration.
//! `#` starts a comment. Per-method settings use `method.<name>.<field>` and
//! override the shared `unlearn.*` values.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::Serialize;
use unlearn_core::data::{BlobSpec, Paradigm};
use unlearn_core::influence::InstanceSpec;
use unlearn_core::{Error, Method, ModelKind, Result, SmoothingPolicy, TrainConfig, UnlearnConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataConfig {
    pub blobs: BlobSpec,
    pub test_per_class: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub l2: f64,
}

/// Optional per-method values; unset fields fall back to `unlearn.*`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MethodOverrides {
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub p: Option<f64>,
    pub batch_size: Option<usize>,
    pub smoothing: Option<SmoothingKind>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SmoothingKind {
    Fixed,
    Adaptive,
}

/// Shared unlearning settings before per-method overrides.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UnlearnDefaults {
    pub epochs: usize,
    pub lr: f64,
    pub p: f64,
    pub batch_size: usize,
    pub smoothing: SmoothingKind,
    pub alpha: f64,
    pub beta: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryConfig {
    pub instances: usize,
    pub blobs: BlobSpec,
    pub l2: f64,
    pub tol: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub data: DataConfig,
    pub paradigm: Paradigm,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub unlearn: UnlearnDefaults,
    pub methods: Vec<Method>,
    pub overrides: BTreeMap<String, MethodOverrides>,
    pub seeds: Vec<u64>,
    pub theory: TheoryConfig,
    /// Include wall-clock RTE in reports; off keeps reports byte-reproducible.
    pub wall_clock: bool,
    /// Attach the theory summary to benchmark reports.
    pub with_theory: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let u = UnlearnConfig::default();
        let instance = InstanceSpec::default();
        Self {
            data: DataConfig {
                blobs: BlobSpec {
                    classes: 3,
                    per_class: 100,
                    dim: 10,
                    center_offset: 8.0,
                    ..BlobSpec::default()
                },
                test_per_class: 100,
            },
            paradigm: Paradigm::Classwise { class: 0 },
            model: ModelConfig {
                kind: ModelKind::Logistic,
                l2: 1e-2,
            },
            train: TrainConfig::default(),
            unlearn: UnlearnDefaults {
                epochs: u.epochs,
                lr: u.lr,
                p: u.p,
                batch_size: u.batch_size,
                smoothing: SmoothingKind::Fixed,
                alpha: -1.0,
                beta: 0.5,
                damping: u.damping,
            },
            methods: Method::ALL.to_vec(),
            overrides: BTreeMap::new(),
            seeds: vec![0],
            theory: TheoryConfig {
                instances: 100,
                blobs: instance.blobs,
                l2: instance.l2,
                tol: instance.tol,
                damping: unlearn_core::influence::DEFAULT_DAMPING,
            },
            wall_clock: false,
            with_theory: false,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value
        .parse::<T>()
        .map_err(|_| format!("invalid value {value:?} for key '{key}'"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("invalid boolean {value:?} for key '{key}'")),
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> std::result::Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

/// `N..M` (exclusive), `N..=M`, or a comma list.
pub fn parse_seeds(value: &str) -> std::result::Result<Vec<u64>, String> {
    let v = value.trim();
    let seeds: Vec<u64> = if let Some((a, b)) = v.split_once("..=") {
        (parse::<u64>("seeds", a)?..=parse::<u64>("seeds", b)?).collect()
    } else if let Some((a, b)) = v.split_once("..") {
        (parse::<u64>("seeds", a)?..parse::<u64>("seeds", b)?).collect()
    } else {
        parse_list("seeds", v)?
    };
    if seeds.is_empty() {
        return Err(format!("seed list {value:?} is empty"));
    }
    Ok(seeds)
}

fn seeds_text(seeds: &[u64]) -> String {
    let contiguous = seeds.windows(2).all(|w| w[1] == w[0] + 1);
    if contiguous && seeds.len() > 1 {
        format!("{}..{}", seeds[0], seeds[seeds.len() - 1] + 1)
    } else {
        seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",")
    }
}

fn blob_field(b: &mut BlobSpec, field: &str, key: &str, value: &str) -> Option<std::result::Result<(), String>> {
    let r = match field {
        "classes" => parse(key, value).map(|v| b.classes = v),
        "per_class" => parse(key, value).map(|v| b.per_class = v),
        "dim" => parse(key, value).map(|v| b.dim = v),
        "spread" => parse(key, value).map(|v| b.spread = v),
        "subgroups" => parse(key, value).map(|v| b.subgroups_per_class = v),
        "center_scale" => parse(key, value).map(|v| b.center_scale = v),
        "subgroup_offset" => parse(key, value).map(|v| b.subgroup_offset = v),
        "center_offset" => parse(key, value).map(|v| b.center_offset = v),
        _ => return None,
    };
    Some(r)
}

fn blob_entries(prefix: &str, b: &BlobSpec, out: &mut Vec<(String, String)>) {
    let mut push = |k: &str, v: String| out.push((format!("{prefix}.{k}"), v));
    push("classes", b.classes.to_string());
    push("per_class", b.per_class.to_string());
    push("dim", b.dim.to_string());
    push("spread", b.spread.to_string());
    push("subgroups", b.subgroups_per_class.to_string());
    push("center_scale", b.center_scale.to_string());
    push("subgroup_offset", b.subgroup_offset.to_string());
    push("center_offset", b.center_offset.to_string());
}

impl RunConfig {
    /// Parses a configuration file over the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("expected 'key = value', found {line:?}"),
            })?;
            self.set(key.trim(), value.trim())
                .map_err(|message| Error::Parse { line: i + 1, message })?;
        }
        Ok(())
    }

    /// Applies a `key=value` override given on the command line.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (key, value) = assignment.split_once('=').ok_or_else(|| Error::Parse {
            line: 0,
            message: format!("--set expects key=value, got {assignment:?}"),
        })?;
        self.set(key.trim(), value.trim())
            .map_err(|message| Error::Parse { line: 0, message })
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        if let Some(field) = key.strip_prefix("data.") {
            if field == "test_per_class" {
                return parse(key, value).map(|v| self.data.test_per_class = v);
            }
            if let Some(r) = blob_field(&mut self.data.blobs, field, key, value) {
                return r;
            }
        }
        if let Some(field) = key.strip_prefix("theory.") {
            match field {
                "instances" => return parse(key, value).map(|v| self.theory.instances = v),
                "l2" => return parse(key, value).map(|v| self.theory.l2 = v),
                "tol" => return parse(key, value).map(|v| self.theory.tol = v),
                "damping" => return parse(key, value).map(|v| self.theory.damping = v),
                _ => {
                    if let Some(r) = blob_field(&mut self.theory.blobs, field, key, value) {
                        return r;
                    }
                }
            }
        }
        if let Some(rest) = key.strip_prefix("method.") {
            return self.set_override(key, rest, value);
        }
        match key {
            "paradigm.kind" => {
                self.paradigm = match value {
                    "classwise" => Paradigm::Classwise { class: 0 },
                    "random" => Paradigm::Random { fraction: 0.1 },
                    "group" => Paradigm::Group { groups: vec![0] },
                    _ => return Err(format!("unknown paradigm {value:?} (classwise, random, group)")),
                }
            }
            "paradigm.class" => match &mut self.paradigm {
                Paradigm::Classwise { class } => *class = parse(key, value)?,
                _ => return Err("paradigm.class needs paradigm.kind = classwise first".into()),
            },
            "paradigm.fraction" => match &mut self.paradigm {
                Paradigm::Random { fraction } => *fraction = parse(key, value)?,
                _ => return Err("paradigm.fraction needs paradigm.kind = random first".into()),
            },
            "paradigm.groups" => match &mut self.paradigm {
                Paradigm::Group { groups } => *groups = parse_list(key, value)?,
                _ => return Err("paradigm.groups needs paradigm.kind = group first".into()),
            },
            "model.kind" => {
                self.model.kind = match value {
                    "logistic" => ModelKind::Logistic,
                    "mlp" => ModelKind::Mlp { hidden: 16 },
                    _ => return Err(format!("unknown model kind {value:?} (logistic, mlp)")),
                }
            }
            "model.hidden" => match &mut self.model.kind {
                ModelKind::Mlp { hidden } => *hidden = parse(key, value)?,
                ModelKind::Logistic => return Err("model.hidden needs model.kind = mlp first".into()),
            },
            "model.l2" => self.model.l2 = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.lr" => self.train.lr = parse(key, value)?,
            "unlearn.methods" => {
                self.methods = parse_list(key, value)?;
                if self.methods.is_empty() {
                    return Err("unlearn.methods is empty".into());
                }
            }
            "unlearn.epochs" => self.unlearn.epochs = parse(key, value)?,
            "unlearn.lr" => self.unlearn.lr = parse(key, value)?,
            "unlearn.p" => self.unlearn.p = parse(key, value)?,
            "unlearn.batch_size" => self.unlearn.batch_size = parse(key, value)?,
            "unlearn.smoothing" => self.unlearn.smoothing = parse_smoothing(value)?,
            "unlearn.alpha" => self.unlearn.alpha = parse(key, value)?,
            "unlearn.beta" => self.unlearn.beta = parse(key, value)?,
            "unlearn.damping" => self.unlearn.damping = parse(key, value)?,
            "seeds" => self.seeds = parse_seeds(value)?,
            "report.wall_clock" => self.wall_clock = parse_bool(key, value)?,
            "report.theory" => self.with_theory = parse_bool(key, value)?,
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    fn set_override(&mut self, key: &str, rest: &str, value: &str) -> std::result::Result<(), String> {
        let (name, field) = rest
            .rsplit_once('.')
            .ok_or_else(|| format!("expected method.<name>.<field>, got '{key}'"))?;
        let method: Method = name.parse().map_err(|e: Error| e.to_string())?;
        let o = self.overrides.entry(method.name().to_string()).or_default();
        match field {
            "epochs" => o.epochs = Some(parse(key, value)?),
            "lr" => o.lr = Some(parse(key, value)?),
            "p" => o.p = Some(parse(key, value)?),
            "batch_size" => o.batch_size = Some(parse(key, value)?),
            "smoothing" => o.smoothing = Some(parse_smoothing(value)?),
            "alpha" => o.alpha = Some(parse(key, value)?),
            "beta" => o.beta = Some(parse(key, value)?),
            "damping" => o.damping = Some(parse(key, value)?),
            _ => return Err(format!("unknown key '{key}'")),
        }
        Ok(())
    }

    /// Every key with its current value, in a fixed order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        blob_entries("data", &self.data.blobs, &mut out);
        out.push(("data.test_per_class".into(), self.data.test_per_class.to_string()));
        match &self.paradigm {
            Paradigm::Classwise { class } => {
                out.push(("paradigm.kind".into(), "classwise".into()));
                out.push(("paradigm.class".into(), class.to_string()));
            }
            Paradigm::Random { fraction } => {
                out.push(("paradigm.kind".into(), "random".into()));
                out.push(("paradigm.fraction".into(), fraction.to_string()));
            }
            Paradigm::Group { groups } => {
                out.push(("paradigm.kind".into(), "group".into()));
                let ids: Vec<String> = groups.iter().map(usize::to_string).collect();
                out.push(("paradigm.groups".into(), ids.join(",")));
            }
        }
        match self.model.kind {
            ModelKind::Logistic => out.push(("model.kind".into(), "logistic".into())),
            ModelKind::Mlp { hidden } => {
                out.push(("model.kind".into(), "mlp".into()));
                out.push(("model.hidden".into(), hidden.to_string()));
            }
        }
        out.push(("model.l2".into(), self.model.l2.to_string()));
        out.push(("train.epochs".into(), self.train.epochs.to_string()));
        out.push(("train.batch_size".into(), self.train.batch_size.to_string()));
        out.push(("train.lr".into(), self.train.lr.to_string()));
        let names: Vec<&str> = self.methods.iter().map(|m| m.name()).collect();
        out.push(("unlearn.methods".into(), names.join(",")));
        let u = &self.unlearn;
        out.push(("unlearn.epochs".into(), u.epochs.to_string()));
        out.push(("unlearn.lr".into(), u.lr.to_string()));
        out.push(("unlearn.p".into(), u.p.to_string()));
        out.push(("unlearn.batch_size".into(), u.batch_size.to_string()));
        out.push(("unlearn.smoothing".into(), smoothing_name(u.smoothing).into()));
        out.push(("unlearn.alpha".into(), u.alpha.to_string()));
        out.push(("unlearn.beta".into(), u.beta.to_string()));
        out.push(("unlearn.damping".into(), u.damping.to_string()));
        for (name, o) in &self.overrides {
            let mut push = |f: &str, v: Option<String>| {
                if let Some(v) = v {
                    out.push((format!("method.{name}.{f}"), v));
                }
            };
            push("epochs", o.epochs.map(|v| v.to_string()));
            push("lr", o.lr.map(|v| v.to_string()));
            push("p", o.p.map(|v| v.to_string()));
            push("batch_size", o.batch_size.map(|v| v.to_string()));
            push("smoothing", o.smoothing.map(|v| smoothing_name(v).to_string()));
            push("alpha", o.alpha.map(|v| v.to_string()));
            push("beta", o.beta.map(|v| v.to_string()));
            push("damping", o.damping.map(|v| v.to_string()));
        }
        out.push(("seeds".into(), seeds_text(&self.seeds)));
        out.push(("theory.instances".into(), self.theory.instances.to_string()));
        blob_entries("theory", &self.theory.blobs, &mut out);
        out.push(("theory.l2".into(), self.theory.l2.to_string()));
        out.push(("theory.tol".into(), self.theory.tol.to_string()));
        out.push(("theory.damping".into(), self.theory.damping.to_string()));
        out.push(("report.wall_clock".into(), self.wall_clock.to_string()));
        out.push(("report.theory".into(), self.with_theory.to_string()));
        out
    }

    /// Canonical text; parsing it reproduces this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// Effective settings for one method.
    pub fn unlearn_config(&self, method: Method, seed: u64) -> UnlearnConfig {
        let o = self.overrides.get(method.name()).copied().unwrap_or_default();
        let u = &self.unlearn;
        let smoothing = match o.smoothing.unwrap_or(u.smoothing) {
            SmoothingKind::Fixed => SmoothingPolicy::Fixed {
                alpha: o.alpha.unwrap_or(u.alpha),
            },
            SmoothingKind::Adaptive => SmoothingPolicy::Adaptive {
                beta: o.beta.unwrap_or(u.beta),
            },
        };
        UnlearnConfig {
            method,
            epochs: o.epochs.unwrap_or(u.epochs),
            lr: o.lr.unwrap_or(u.lr),
            p: o.p.unwrap_or(u.p),
            smoothing,
            batch_size: o.batch_size.unwrap_or(u.batch_size),
            seed,
            damping: o.damping.unwrap_or(u.damping),
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig { seed, ..self.train }
    }

    pub fn instance_spec(&self) -> InstanceSpec {
        InstanceSpec {
            blobs: self.theory.blobs.clone(),
            l2: self.theory.l2,
            paradigm: self.paradigm.clone(),
            tol: self.theory.tol,
        }
    }

    /// Range checks that do not need data; reported as configuration errors.
    pub fn validate(&self) -> Result<()> {
        let wrap = |section: &str, r: Result<()>| {
            r.map_err(|e| Error::Parse {
                line: 0,
                message: format!("{section}: {e}"),
            })
        };
        wrap("data", self.data.blobs.validate())?;
        wrap("theory", self.theory.blobs.validate())?;
        wrap("train", self.train.validate())?;
        for &m in &self.methods {
            wrap(&format!("method.{}", m.name()), self.unlearn_config(m, 0).validate())?;
        }
        if self.data.test_per_class == 0 {
            return wrap("data", Err(Error::InvalidParameter("test_per_class must be >= 1".into())));
        }
        if self.model.l2 < 0.0 || !self.model.l2.is_finite() {
            return wrap("model", Err(Error::InvalidParameter(format!("l2 must be >= 0, got {}", self.model.l2))));
        }
        Ok(())
    }
}

fn parse_smoothing(value: &str) -> std::result::Result<SmoothingKind, String> {
    match value {
        "fixed" => Ok(SmoothingKind::Fixed),
        "adaptive" => Ok(SmoothingKind::Adaptive),
        _ => Err(format!("unknown smoothing {value:?} (fixed, adaptive)")),
    }
}

fn smoothing_name(k: SmoothingKind) -> &'static str {
    match k {
        SmoothingKind::Fixed => "fixed",
        SmoothingKind::Adaptive => "adaptive",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_the_default() {
        assert_eq!(RunConfig::from_text("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn echo_round_trips() {
        let text = "paradigm.kind = random\nparadigm.fraction = 0.25\nmodel.kind = mlp\nmodel.hidden = 7\n\
                    method.ga.lr = 0.0001\nmethod.ugradsl+.smoothing = adaptive\nseeds = 3,5,9\n";
        let cfg = RunConfig::from_text(text).unwrap();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.unlearn_config(Method::GradientAscent, 4).lr, 0.0001);
        assert_eq!(cfg.unlearn_config(Method::FineTune, 4).lr, cfg.unlearn.lr);
        assert!(matches!(
            cfg.unlearn_config(Method::UGradSLPlus, 0).smoothing,
            SmoothingPolicy::Adaptive { beta } if beta == 0.5
        ));
    }

    #[test]
    fn unknown_keys_name_the_line() {
        let err = RunConfig::from_text("model.l2 = 0.1\n\nmodel.width = 3\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 3);
                assert!(message.contains("model.width"));
            }
            other => panic!("{other}"),
        }
        assert!(RunConfig::from_text("unlearn.p = lots").is_err());
        assert!(RunConfig::from_text("just words").is_err());
        assert!(RunConfig::from_text("method.scrub.lr = 1").is_err());
    }

    #[test]
    fn seed_forms() {
        assert_eq!(parse_seeds("0..3").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("2..=4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_seeds("7, 1").unwrap(), vec![7, 1]);
        assert!(parse_seeds("3..3").is_err());
        assert_eq!(seeds_text(&[4, 5, 6]), "4..7");
    }

    #[test]
    fn validation_flags_bad_ranges() {
        let mut cfg = RunConfig::default();
        cfg.set("unlearn.p", "1.5").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Parse { .. })));
    }
}
