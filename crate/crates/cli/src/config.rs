//! Run configuration: defaults, overlaid by an optional TOML file, overlaid by
//! command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use wood_core::data::DataSource;
use wood_core::geometry::{Evaluation, ScoreConfig, ScoreMatrix};
use wood_core::trainer::{Standardize, TrainConfig};
use wood_core::transport::SinkhornConfig;
use wood_core::{Error, Result};

/// Keys accepted in a config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub ind: Option<String>,
    pub ood: Option<String>,
    pub beta: Option<f64>,
    pub b_ind: Option<usize>,
    pub b_ood: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub momentum: Option<f64>,
    pub seed: Option<u64>,
    pub hidden: Option<Vec<usize>>,
    pub standardize: Option<String>,
    pub matrix: Option<String>,
    pub eval_path: Option<String>,
    pub lambda: Option<f64>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub log_domain: Option<bool>,
    pub tnr: Option<f64>,
    pub calibration_fraction: Option<f64>,
    pub calibrate_on_test: Option<bool>,
}

/// A config file together with its verbatim text, echoed into the run output.
#[derive(Debug, Clone, Default)]
pub struct LoadedConfig {
    pub values: FileConfig,
    pub text: Option<String>,
}

impl LoadedConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)?;
        let values = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e.message())))?;
        Ok(Self {
            values,
            text: Some(text),
        })
    }

    /// Writes the verbatim file (if any) and the resolved values into `out`.
    pub fn echo(&self, out: &Path, resolved: &impl Serialize) -> Result<()> {
        if let Some(text) = &self.text {
            fs::write(out.join("config.toml"), text)?;
        }
        let body = toml::to_string(resolved)
            .map_err(|e| Error::Config(format!("cannot serialize resolved config: {e}")))?;
        fs::write(out.join("resolved.toml"), body)?;
        Ok(())
    }
}

/// Score-path flags shared by several commands.
#[derive(Debug, Clone, Default, Args)]
pub struct ScoreFlags {
    /// Cost matrix: binary or dynamic.
    #[arg(long)]
    pub matrix: Option<String>,
    /// Score evaluation: closed or sinkhorn.
    #[arg(long = "eval-path")]
    pub eval_path: Option<String>,
    /// Inverse entropic regularization weight for the Sinkhorn path.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long = "max-iter")]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

/// Training flags; unset flags fall back to the config file, then defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct TrainFlags {
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long = "b-ind")]
    pub b_ind: Option<usize>,
    #[arg(long = "b-ood")]
    pub b_ood: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    /// Input standardization: auto, always or never.
    #[arg(long)]
    pub standardize: Option<String>,
    #[command(flatten)]
    pub score: ScoreFlags,
}

fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>) -> Option<T> {
    flag.clone().or_else(|| file.clone())
}

pub fn resolve_score(flags: &ScoreFlags, file: &FileConfig, base: ScoreConfig<f64>) -> Result<ScoreConfig<f64>> {
    let mut cfg = base;
    if let Some(m) = pick(&flags.matrix, &file.matrix) {
        cfg.matrix = m.parse::<ScoreMatrix>()?;
    }
    if let Some(e) = pick(&flags.eval_path, &file.eval_path) {
        cfg.evaluation = e.parse::<Evaluation>()?;
    }
    let d = cfg.sinkhorn;
    cfg.sinkhorn = SinkhornConfig {
        lambda: pick(&flags.lambda, &file.lambda).unwrap_or(d.lambda),
        max_iter: pick(&flags.max_iter, &file.max_iter).unwrap_or(d.max_iter),
        tol: pick(&flags.tol, &file.tol).unwrap_or(d.tol),
        log_domain: file.log_domain.unwrap_or(d.log_domain),
    };
    cfg.sinkhorn.validate()?;
    Ok(cfg)
}

pub fn resolve_train(flags: &TrainFlags, file: &FileConfig) -> Result<TrainConfig> {
    let d = TrainConfig::default();
    let standardize = match pick(&flags.standardize, &file.standardize) {
        Some(s) => s.parse::<Standardize>()?,
        None => d.standardize,
    };
    let cfg = TrainConfig {
        beta: pick(&flags.beta, &file.beta).unwrap_or(d.beta),
        b_ind: pick(&flags.b_ind, &file.b_ind).unwrap_or(d.b_ind),
        b_ood: pick(&flags.b_ood, &file.b_ood).unwrap_or(d.b_ood),
        epochs: pick(&flags.epochs, &file.epochs).unwrap_or(d.epochs),
        lr: pick(&flags.lr, &file.lr).unwrap_or(d.lr),
        momentum: pick(&flags.momentum, &file.momentum).unwrap_or(d.momentum),
        seed: pick(&flags.seed, &file.seed).unwrap_or(d.seed),
        hidden: pick(&flags.hidden, &file.hidden).unwrap_or(d.hidden),
        standardize,
        score: resolve_score(&flags.score, file, d.score)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn resolve_source(flag: &Option<String>, file: &Option<String>, what: &str) -> Result<DataSource> {
    pick(flag, file)
        .ok_or_else(|| Error::Config(format!("missing {what} data source (flag or config key)")))?
        .parse()
}

pub fn check_tnr(tnr: f64) -> Result<f64> {
    if tnr > 0.0 && tnr < 1.0 {
        Ok(tnr)
    } else {
        Err(Error::Config(format!("TNR target must be in (0, 1), got {tnr}")))
    }
}

/// Effective training settings as written to `resolved.toml`.
#[derive(Debug, Serialize)]
pub struct TrainEcho {
    pub ind: String,
    pub ood: String,
    pub out: PathBuf,
    pub beta: f64,
    pub b_ind: usize,
    pub b_ood: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub standardize: Standardize,
    #[serde(flatten)]
    pub score: ScoreEcho,
}

#[derive(Debug, Serialize)]
pub struct ScoreEcho {
    pub matrix: ScoreMatrix,
    pub eval_path: Evaluation,
    pub lambda: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub log_domain: bool,
}

impl From<&ScoreConfig<f64>> for ScoreEcho {
    fn from(c: &ScoreConfig<f64>) -> Self {
        Self {
            matrix: c.matrix,
            eval_path: c.evaluation,
            lambda: c.sinkhorn.lambda,
            max_iter: c.sinkhorn.max_iter,
            tol: c.sinkhorn.tol,
            log_domain: c.sinkhorn.log_domain,
        }
    }
}

impl TrainEcho {
    pub fn new(cfg: &TrainConfig, ind: &DataSource, ood: &DataSource, out: &Path) -> Self {
        Self {
            ind: ind.to_string(),
            ood: ood.to_string(),
            out: out.to_path_buf(),
            beta: cfg.beta,
            b_ind: cfg.b_ind,
            b_ood: cfg.b_ood,
            epochs: cfg.epochs,
            lr: cfg.lr,
            momentum: cfg.momentum,
            seed: cfg.seed,
            hidden: cfg.hidden.clone(),
            standardize: cfg.standardize,
            score: (&cfg.score).into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_override_defaults() {
        let file: FileConfig = toml::from_str("beta = 0.5\nepochs = 3\nmatrix = \"binary\"\n").unwrap();
        let flags = TrainFlags {
            epochs: Some(7),
            ..TrainFlags::default()
        };
        let cfg = resolve_train(&flags, &file).unwrap();
        assert_eq!(cfg.beta, 0.5);
        assert_eq!(cfg.epochs, 7);
        assert_eq!(cfg.lr, 0.01);
        assert_eq!(cfg.score.matrix, ScoreMatrix::Binary);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("betta = 0.1\n").is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let file = FileConfig {
            lr: Some(-1.0),
            ..FileConfig::default()
        };
        assert!(matches!(resolve_train(&TrainFlags::default(), &file), Err(Error::Config(_))));
        let flags = TrainFlags {
            score: ScoreFlags {
                eval_path: Some("fast".into()),
                ..ScoreFlags::default()
            },
            ..TrainFlags::default()
        };
        assert!(matches!(resolve_train(&flags, &FileConfig::default()), Err(Error::Config(_))));
        assert!(check_tnr(1.5).is_err());
    }
}
