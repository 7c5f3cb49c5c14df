use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use wood_core::data::{hold_out, synth_blobs, synth_ood, Dataset, InD, SyntheticKind, SyntheticSpec};
use wood_core::detect::{
    accuracy, calibrate, classify, evaluate_at, score_dataset, Scored, DEFAULT_TNR, HISTOGRAM_BINS,
};
use wood_core::geometry::{bench_score_paths, Evaluation, ScoreConfig};
use wood_core::trainer::{fit_with_progress, write_metrics_csv, Checkpoint};
use wood_core::{Error, Result};

use crate::config::{
    check_tnr, resolve_score, resolve_source, resolve_train, LoadedConfig, ScoreEcho, ScoreFlags,
    TrainEcho, TrainFlags,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.wood";

fn prepare_out(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// blobs, ring or shifted.
    #[arg(long)]
    pub kind: String,
    #[arg(long)]
    pub k: usize,
    /// Samples per class for blobs; total samples for ring and shifted.
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Distance of class centers from the origin; ring radius for ring.
    #[arg(long, default_value_t = 4.0)]
    pub separation: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn gen_data(args: &GenDataArgs) -> Result<()> {
    let spec = SyntheticSpec {
        kind: args.kind.parse()?,
        k: args.k,
        n_per_class: args.n,
        dim: args.dim,
        separation: args.separation,
        noise: args.noise,
        seed: args.seed,
    };
    spec.validate()?;
    prepare_out(&args.out)?;
    let (path, rows) = match spec.kind {
        SyntheticKind::GaussianBlobs => {
            let ds = synth_blobs(&spec)?;
            let path = args.out.join("ind.csv");
            ds.write_csv(&path)?;
            (path, ds.len())
        }
        SyntheticKind::Ring | SyntheticKind::ShiftedBlob => {
            let ds = synth_ood(&spec)?;
            let path = args.out.join("ood.csv");
            ds.write_csv(&path)?;
            (path, ds.len())
        }
    };
    println!("wrote {rows} rows of dimension {} to {}", spec.dim, path.display());
    Ok(())
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Labeled InD training data: a CSV file or idx:IMAGES,LABELS.
    #[arg(long)]
    pub ind: Option<String>,
    /// Unlabeled OOD training data.
    #[arg(long)]
    pub ood: Option<String>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub flags: TrainFlags,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let file = LoadedConfig::load(args.config.as_deref())?;
    let cfg = resolve_train(&args.flags, &file.values)?;
    let ind_src = resolve_source(&args.ind, &file.values.ind, "InD")?;
    let ood_src = resolve_source(&args.ood, &file.values.ood, "OOD")?;
    let ind = ind_src.load_ind()?;
    let ood = ood_src.load_ood()?;

    prepare_out(&args.out)?;
    file.echo(&args.out, &TrainEcho::new(&cfg, &ind_src, &ood_src, &args.out))?;
    let epochs = cfg.epochs;
    let out = fit_with_progress(&ind, &ood, &cfg, |m| {
        eprintln!(
            "epoch {}/{epochs}: total {:.6} ce {:.6} ood {:.6} ({} ms)",
            m.epoch, m.total, m.ce_term, m.ood_term, m.wall_ms
        );
    })?;
    write_metrics_csv(args.out.join("metrics.csv"), &out.metrics)?;
    let ckpt = args.out.join(CHECKPOINT_FILE);
    out.checkpoint.save(&ckpt)?;
    println!(
        "trained {:?} on {} InD / {} OOD samples; checkpoint {}",
        out.checkpoint.layer_dims,
        ind.len(),
        ood.len(),
        ckpt.display()
    );
    Ok(())
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// InD test data; labels, when present, give an accuracy figure.
    #[arg(long)]
    pub ind: Option<String>,
    #[arg(long)]
    pub ood: Option<String>,
    /// TNR target for the threshold, in (0, 1).
    #[arg(long, value_parser = parse_tnr)]
    pub tnr: Option<f64>,
    /// Fraction of the InD test set held out to calibrate the threshold.
    #[arg(long = "calibration-fraction")]
    pub calibration_fraction: Option<f64>,
    /// Calibrate on the full InD test set instead of a held-out part.
    #[arg(long = "calibrate-on-test")]
    pub calibrate_on_test: bool,
    /// Seed for the calibration split.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_tnr(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    check_tnr(v).map_err(|e| e.to_string())
}

/// Contents of `report.txt`.
#[derive(Debug, Serialize)]
struct ReportFile {
    checkpoint: String,
    ind: String,
    ood: String,
    calibration: String,
    n_calibration: usize,
    epsilon: f64,
    tnr_target: f64,
    tnr: f64,
    fnr_at_tnr: f64,
    auroc: f64,
    n_ind: usize,
    n_ood: usize,
    ind_accepted: usize,
    ood_accepted: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
    histogram_bins: usize,
    #[serde(flatten)]
    score: ScoreEcho,
}

fn check_against(ckpt: &Checkpoint, dim: usize, labels: Option<&[usize]>) -> Result<()> {
    if dim != ckpt.input_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {} features, data has {dim}",
            ckpt.input_dim()
        )));
    }
    if let Some(&max) = labels.and_then(|l| l.iter().max()) {
        if max >= ckpt.classes {
            return Err(Error::Config(format!(
                "data has label {max} but the checkpoint has {} classes",
                ckpt.classes
            )));
        }
    }
    Ok(())
}

fn values(scored: &[Scored]) -> Vec<f64> {
    scored.iter().map(|s| s.score.value).collect()
}

pub fn evaluate(args: &EvaluateArgs) -> Result<()> {
    let file = LoadedConfig::load(args.config.as_deref())?;
    let v = &file.values;
    let tnr = check_tnr(args.tnr.or(v.tnr).unwrap_or(DEFAULT_TNR))?;
    let on_test = args.calibrate_on_test || v.calibrate_on_test.unwrap_or(false);
    let fraction = args.calibration_fraction.or(v.calibration_fraction).unwrap_or(0.2);

    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.model()?;
    let score_cfg = ckpt.config.score;
    let ind_src = resolve_source(&args.ind, &v.ind, "InD")?;
    let ood_src = resolve_source(&args.ood, &v.ood, "OOD")?;
    let ind = ind_src.load_ind()?;
    let ood = ood_src.load_ood()?;
    if ind.is_empty() {
        return Err(Error::Input(format!("InD test set {ind_src} is empty")));
    }
    if ood.is_empty() {
        return Err(Error::Input(format!("OOD test set {ood_src} is empty")));
    }
    check_against(&ckpt, ind.dim(), ind.labels())?;
    check_against(&ckpt, ood.dim(), None)?;

    let (test, calibration, how): (Dataset<InD>, Dataset<InD>, String) = if on_test {
        (ind.clone(), ind, "test set".into())
    } else {
        let (rest, held) = hold_out(&ind, fraction, args.seed)?;
        (rest, held, format!("held-out fraction {fraction} (seed {})", args.seed))
    };
    let cal_scores = values(&score_dataset(&model, &calibration, &score_cfg)?);
    let ind_scored = score_dataset(&model, &test, &score_cfg)?;
    let ood_scores = values(&score_dataset(&model, &ood, &score_cfg)?);
    let detector = calibrate(&cal_scores, tnr, score_cfg)?;
    let mut report = evaluate_at(detector.epsilon, tnr, &values(&ind_scored), &ood_scores)?;
    report.accuracy = accuracy(&test, &ind_scored);

    prepare_out(&args.out)?;
    let body = ReportFile {
        checkpoint: args.checkpoint.display().to_string(),
        ind: ind_src.to_string(),
        ood: ood_src.to_string(),
        calibration: how,
        n_calibration: calibration.len(),
        epsilon: report.epsilon,
        tnr_target: report.tnr_target,
        tnr: report.tnr,
        fnr_at_tnr: report.fnr_at_tnr,
        auroc: report.auroc,
        n_ind: report.n_ind,
        n_ood: report.n_ood,
        ind_accepted: report.ind_accepted,
        ood_accepted: report.ood_accepted,
        accuracy: report.accuracy,
        histogram_bins: HISTOGRAM_BINS,
        score: (&score_cfg).into(),
    };
    let text = toml::to_string(&body)
        .map_err(|e| Error::Config(format!("cannot serialize report: {e}")))?;
    fs::write(args.out.join("report.txt"), text)?;
    let h = &report.histogram;
    fs::write(args.out.join("hist_ind.csv"), h.to_csv(&h.ind))?;
    fs::write(args.out.join("hist_ood.csv"), h.to_csv(&h.ood))?;
    file.echo(&args.out, &body)?;

    print!(
        "epsilon {:.6} TNR {:.4} FNR {:.4} AUROC {:.4}",
        report.epsilon, report.tnr, report.fnr_at_tnr, report.auroc
    );
    match report.accuracy {
        Some(a) => println!(" accuracy {a:.4}"),
        None => println!(),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Features to score; a trailing label column is ignored.
    #[arg(long)]
    pub input: String,
    /// Threshold; adds a `decision` column (1 = flagged OOD).
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn score(args: &ScoreArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let model = ckpt.model()?;
    let src: wood_core::data::DataSource = args.input.parse()?;
    let ds = src.load_ood()?;
    check_against(&ckpt, ds.dim(), None)?;
    if let Some(eps) = args.epsilon {
        classify(eps, 0.0)?;
    }
    let scored = score_dataset(&model, &ds, &ckpt.config.score)?;

    let mut csv = String::from(match args.epsilon {
        Some(_) => "index,class,score,decision\n",
        None => "index,class,score\n",
    });
    let mut flagged = 0usize;
    for (i, s) in scored.iter().enumerate() {
        let _ = write!(csv, "{i},{},{}", s.score.class, s.score.value);
        if let Some(eps) = args.epsilon {
            let d = classify(eps, s.score.value)?;
            flagged += usize::from(d);
            let _ = write!(csv, ",{d}");
        }
        csv.push('\n');
    }
    prepare_out(&args.out)?;
    let path = args.out.join("scores.csv");
    fs::write(&path, csv)?;
    match args.epsilon {
        Some(eps) => println!("scored {} samples, {flagged} above epsilon {eps}; {}", scored.len(), path.display()),
        None => println!("scored {} samples; {}", scored.len(), path.display()),
    }
    Ok(())
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Class counts to time, comma separated.
    #[arg(long = "k", value_delimiter = ',', default_value = "10,50,100")]
    pub k: Vec<usize>,
    /// Softmax vectors scored per class count.
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub score: ScoreFlags,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn bench_score(args: &BenchArgs) -> Result<()> {
    let base = ScoreConfig {
        evaluation: Evaluation::Sinkhorn,
        ..ScoreConfig::default()
    };
    let cfg = resolve_score(&args.score, &Default::default(), base)?;
    if cfg.evaluation != Evaluation::Sinkhorn {
        return Err(Error::Config(
            "bench-score times the Sinkhorn path; both closed forms are O(K)".into(),
        ));
    }
    let mut csv = String::from("k,binary_ms,dynamic_ms,ratio\n");
    for &k in &args.k {
        let row = bench_score_paths(k, args.repeats, &cfg, args.seed)?;
        let _ = writeln!(csv, "{},{},{},{}", row.k, row.binary_ms, row.dynamic_ms, row.ratio);
        println!(
            "K={:<4} binary {:.4} ms  dynamic {:.4} ms  ratio {:.1}",
            row.k, row.binary_ms, row.dynamic_ms, row.ratio
        );
    }
    prepare_out(&args.out)?;
    fs::write(args.out.join("bench.csv"), csv)?;
    Ok(())
}
