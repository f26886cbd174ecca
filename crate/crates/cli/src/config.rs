//! Run configuration files.
//!
//! ```text
//! # comment (whole line, `#` or `;`)
//! [target]
//! name = tcopula
//! dim = 10
//!
//! [boost]
//! iters_first = 20000
//!
//! [output]
//! dir = runs/tcop
//! ```
//!
//! Sections are `target`, `boost` and `output`; each holds `key = value`
//! lines. Unknown sections or keys, repeated keys and malformed values are
//! errors reported with the offending line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use cmgva::booster::{BoostConfig, FirstFit, GridAnchor, InitMode, Preconditioner, Selection};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfigError {
    /// 1-based line, when the error is tied to one.
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err_at(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

#[derive(Clone, Debug)]
struct Entry {
    value: String,
    line: usize,
    used: bool,
}

/// `section → key → entry`, before typing.
#[derive(Clone, Debug, Default)]
struct Sections {
    map: BTreeMap<String, BTreeMap<String, Entry>>,
    header_line: BTreeMap<String, usize>,
}

const SECTIONS: [&str; 3] = ["target", "boost", "output"];

fn parse_sections(text: &str) -> Result<Sections, ConfigError> {
    let mut out = Sections::default();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let s = raw.trim();
        if s.is_empty() || s.starts_with('#') || s.starts_with(';') {
            continue;
        }
        if let Some(rest) = s.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err_at(line, format!("unterminated section header '{s}'")))?
                .trim()
                .to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(err_at(line, format!("unknown section [{name}]")));
            }
            if out.header_line.contains_key(&name) {
                return Err(err_at(line, format!("section [{name}] appears twice")));
            }
            out.header_line.insert(name.clone(), line);
            out.map.entry(name.clone()).or_default();
            current = Some(name);
            continue;
        }
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| err_at(line, format!("expected 'key = value', got '{s}'")))?;
        let key = k.trim().to_string();
        if key.is_empty() {
            return Err(err_at(line, "missing key before '='"));
        }
        let sec = current
            .as_ref()
            .ok_or_else(|| err_at(line, format!("key '{key}' outside any section")))?;
        let table = out.map.get_mut(sec).unwrap();
        if table.contains_key(&key) {
            return Err(err_at(line, format!("key '{key}' repeated in [{sec}]")));
        }
        table.insert(
            key,
            Entry {
                value: v.trim().to_string(),
                line,
                used: false,
            },
        );
    }
    Ok(out)
}

impl Sections {
    fn take(&mut self, sec: &str, key: &str) -> Option<(String, usize)> {
        let e = self.map.get_mut(sec)?.get_mut(key)?;
        e.used = true;
        Some((e.value.clone(), e.line))
    }

    fn get<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<Option<T>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| err_at(line, format!("invalid value '{v}' for {key}"))),
        }
    }

    fn require<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<T, ConfigError> {
        let at = self.header_line.get(sec).copied();
        self.get(sec, key)?.ok_or_else(|| ConfigError {
            line: at,
            message: format!("[{sec}] needs '{key}'"),
        })
    }

    fn list<T: FromStr>(&mut self, sec: &str, key: &str) -> Result<Option<Vec<T>>, ConfigError> {
        match self.take(sec, key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| err_at(line, format!("invalid entry '{}' in {key}", p.trim())))
                })
                .collect::<Result<Vec<T>, _>>()
                .map(Some),
        }
    }

    fn line_of(&self, sec: &str, key: &str) -> Option<usize> {
        self.map.get(sec)?.get(key).map(|e| e.line)
    }

    fn leftover(&self) -> Option<ConfigError> {
        for (sec, table) in &self.map {
            for (key, e) in table {
                if !e.used {
                    return Some(err_at(e.line, format!("unknown key '{key}' in [{sec}]")));
                }
            }
        }
        None
    }
}

/// Comparison mode of a fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Full copula mixture.
    Cmgva,
    /// One component with fitted transforms.
    Gcopula,
    /// Mixture with all transforms fixed at the identity.
    Mixnorm,
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cmgva" => Ok(Self::Cmgva),
            "gcopula" => Ok(Self::Gcopula),
            "mixnorm" => Ok(Self::Mixnorm),
            _ => Err(format!("unknown mode '{s}' (cmgva, gcopula, mixnorm)")),
        }
    }
}

impl Mode {
    /// Applies the mode's restrictions to a boosting configuration.
    pub fn apply(self, cfg: &mut BoostConfig<f64>) {
        match self {
            Mode::Cmgva => {}
            Mode::Gcopula => cfg.max_components = 1,
            Mode::Mixnorm => cfg.fit_gamma = false,
        }
    }
}

/// Columns of a tabular dataset.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DataSpec {
    pub path: PathBuf,
    pub response: String,
    /// Covariate columns; all non-response columns when absent.
    pub covariates: Option<Vec<String>>,
    /// Add pairwise products of covariates (regression models).
    pub interactions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum TargetSpec {
    Gaussian {
        dim: usize,
    },
    Tcopula {
        dim: usize,
        rho: f64,
        df: f64,
        gamma: f64,
    },
    Mixnormal {
        dim: usize,
        rho: f64,
        /// Explicit mode locations; random in `[−2, 2]` when absent.
        means: Option<Vec<Vec<f64>>>,
        modes: usize,
        target_seed: u64,
    },
    Logistic {
        data: DataSpec,
    },
    Linear {
        data: DataSpec,
    },
    Dfnn {
        data: DataSpec,
        hidden: Vec<usize>,
    },
}

impl TargetSpec {
    pub fn data(&self) -> Option<&DataSpec> {
        match self {
            TargetSpec::Logistic { data } | TargetSpec::Linear { data } | TargetSpec::Dfnn { data, .. } => {
                Some(data)
            }
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub target: TargetSpec,
    pub boost: BoostConfig<f64>,
    pub out_dir: Option<PathBuf>,
    pub mode: Mode,
}

fn parse_enum<T>(
    sec: &mut Sections,
    key: &str,
    table: &[(&str, T)],
) -> Result<Option<T>, ConfigError>
where
    T: Copy,
{
    match sec.take("boost", key) {
        None => Ok(None),
        Some((v, line)) => table
            .iter()
            .find(|(n, _)| *n == v)
            .map(|(_, t)| Some(*t))
            .ok_or_else(|| {
                let names: Vec<&str> = table.iter().map(|(n, _)| *n).collect();
                err_at(line, format!("invalid {key} '{v}' (one of {})", names.join(", ")))
            }),
    }
}

fn parse_means(v: &str, line: usize, dim: usize) -> Result<Vec<Vec<f64>>, ConfigError> {
    v.split(';')
        .map(|row| {
            let u: Vec<f64> = row
                .split(',')
                .map(|x| {
                    x.trim()
                        .parse()
                        .map_err(|_| err_at(line, format!("invalid mean entry '{}'", x.trim())))
                })
                .collect::<Result<_, _>>()?;
            if u.len() != dim {
                return Err(err_at(line, format!("mean '{}' has {} entries, dim is {dim}", row.trim(), u.len())));
            }
            Ok(u)
        })
        .collect()
}

fn parse_data(sec: &mut Sections, base: &Path) -> Result<DataSpec, ConfigError> {
    let path: String = sec.require("target", "data")?;
    let p = PathBuf::from(&path);
    Ok(DataSpec {
        path: if p.is_absolute() { p } else { base.join(p) },
        response: sec.require("target", "response")?,
        covariates: sec.list("target", "covariates")?,
        interactions: sec.get("target", "interactions")?.unwrap_or(false),
    })
}

fn parse_target(sec: &mut Sections, base: &Path) -> Result<TargetSpec, ConfigError> {
    let name: String = sec.require("target", "name")?;
    let name_line = sec.line_of("target", "name");
    let t = match name.as_str() {
        "gaussian" => TargetSpec::Gaussian {
            dim: sec.require("target", "dim")?,
        },
        "tcopula" => TargetSpec::Tcopula {
            dim: sec.require("target", "dim")?,
            rho: sec.get("target", "rho")?.unwrap_or(0.8),
            df: sec.get("target", "df")?.unwrap_or(4.0),
            gamma: sec.get("target", "gamma")?.unwrap_or(0.5),
        },
        "mixnormal" => {
            let dim: usize = sec.require("target", "dim")?;
            let means = match sec.take("target", "means") {
                Some((v, line)) => Some(parse_means(&v, line, dim)?),
                None => None,
            };
            TargetSpec::Mixnormal {
                dim,
                rho: sec.get("target", "rho")?.unwrap_or(0.8),
                modes: sec.get("target", "modes")?.unwrap_or(3),
                means,
                target_seed: sec.get("target", "target_seed")?.unwrap_or(0),
            }
        }
        "logistic" => TargetSpec::Logistic {
            data: parse_data(sec, base)?,
        },
        "linear" => TargetSpec::Linear {
            data: parse_data(sec, base)?,
        },
        "dfnn" => TargetSpec::Dfnn {
            data: parse_data(sec, base)?,
            hidden: sec.list("target", "hidden")?.unwrap_or_else(|| vec![5, 5]),
        },
        other => {
            return Err(ConfigError {
                line: name_line,
                message: format!(
                    "unknown target '{other}' (gaussian, tcopula, mixnormal, logistic, linear, dfnn)"
                ),
            })
        }
    };
    Ok(t)
}

fn parse_boost(sec: &mut Sections) -> Result<BoostConfig<f64>, ConfigError> {
    let mut c = BoostConfig::<f64>::default();
    macro_rules! field {
        ($($name:ident),*) => {$(
            if let Some(v) = sec.get("boost", stringify!($name))? {
                c.$name = v;
            }
        )*};
    }
    field!(
        samples,
        iters_first,
        iters_per_component,
        max_components,
        r_first,
        r_added,
        alpha_mu,
        alpha_beta,
        alpha_d,
        alpha_pi,
        alpha_gamma,
        elbo_window,
        ma_window,
        patience,
        checkpoint_every,
        init_samples,
        fit_gamma,
        seed
    );
    if let Some(v) = parse_enum(
        sec,
        "init_mode",
        &[("auto", InitMode::Auto), ("grid", InitMode::Grid), ("importance", InitMode::Importance)],
    )? {
        c.init_mode = v;
    }
    if let Some(v) = parse_enum(sec, "grid_anchor", &[("mean", GridAnchor::Mean), ("sweep", GridAnchor::Sweep)])? {
        c.grid_anchor = v;
    }
    if let Some(v) = parse_enum(
        sec,
        "selection",
        &[("argmax", Selection::Argmax), ("proportional", Selection::Proportional)],
    )? {
        c.selection = v;
    }
    if let Some(v) = parse_enum(
        sec,
        "preconditioner",
        &[
            ("blockfisher", Preconditioner::BlockFisher),
            ("closedform", Preconditioner::ClosedForm),
            ("identity", Preconditioner::Identity),
        ],
    )? {
        c.preconditioner = v;
    }
    if let Some(v) = parse_enum(
        sec,
        "first_fit",
        &[("score", FirstFit::ScoreFunction), ("reparam", FirstFit::Reparameterized)],
    )? {
        c.first_fit = v;
    }
    Ok(c)
}

impl RunConfig {
    /// Parses `text`; relative dataset paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut sec = parse_sections(text)?;
        if !sec.map.contains_key("target") {
            return Err(ConfigError {
                line: None,
                message: "missing [target] section".into(),
            });
        }
        let target = parse_target(&mut sec, base)?;
        let boost = parse_boost(&mut sec)?;
        let out_dir = sec.get::<String>("output", "dir")?.map(|d| {
            let p = PathBuf::from(d);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        });
        let mode = match sec.take("output", "mode") {
            None => Mode::Cmgva,
            Some((v, line)) => v.parse().map_err(|e: String| err_at(line, e))?,
        };
        if let Some(e) = sec.leftover() {
            return Err(e);
        }
        boost.validate().map_err(|e| {
            let line = sec.header_line.get("boost").copied();
            ConfigError {
                line,
                message: e.to_string(),
            }
        })?;
        Ok(Self {
            target,
            boost,
            out_dir,
            mode,
        })
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base).map_err(|e| format!("{}: {e}", path.display()))
    }
}
