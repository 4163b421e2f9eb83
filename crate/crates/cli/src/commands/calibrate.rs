//! `calibrate`: sweep the logit-adjustment strength τ, pick the value with
//! the best mean recall, and derive per-predicate focusing parameters from
//! the frequency sidecar.

use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use ssrcnn_core::calibration::{adaptive_gamma_clamped, logit_adjust, FrequencyTable};
use ssrcnn_core::metrics::{evaluate, gt_triplets, rank_prediction, EvalOptions, GroundTruthTriplet};
use ssrcnn_core::scene::TripletPrediction;

use crate::config::{CommonArgs, Profile, RunConfig, Toggle};
use crate::formats::{load_dataset, load_frequencies, load_predictions, InputError};
use crate::output::{write_csv, write_json, Artifact, VERSION};
use crate::plot::{line_chart, Series};

use super::with_pool;

#[derive(Debug, clap::Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Dataset with ground-truth annotations
    #[arg(value_name = "DATASET")]
    pub dataset: PathBuf,

    /// Predictions carrying raw logits
    #[arg(value_name = "PREDICTIONS")]
    pub predictions: PathBuf,

    /// Predicate-frequency sidecar
    #[arg(value_name = "FREQUENCIES")]
    pub frequencies: PathBuf,

    /// Operating adjustment strength recorded in the output
    #[arg(long)]
    pub tau: Option<f64>,

    /// Focusing exponent for the per-predicate gamma table
    #[arg(long)]
    pub mu: Option<f64>,

    /// Evaluation protocol family
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,

    /// Require each (subject, object) box pair to contribute at most one
    /// ranked triplet
    #[arg(long = "graph-constraint", value_enum)]
    pub graph_constraint: Option<Toggle>,
}

#[derive(Debug, Clone, Copy, Serialize)]
struct SweepPoint {
    tau: f64,
    recall_50: f64,
    mean_recall_50: f64,
}

#[derive(Serialize)]
struct SweepBody {
    operating_tau: f64,
    best_tau: f64,
    points: Vec<SweepPoint>,
    gamma: BTreeMap<String, f64>,
}

/// The τ grid: multiples of the step up to the maximum, plus the operating
/// value, sorted and deduplicated.
fn tau_grid(cfg: &RunConfig) -> Vec<f64> {
    let mut taus = Vec::new();
    let mut i = 0u32;
    loop {
        let t = f64::from(i) * cfg.sweep.tau_step;
        if t > cfg.sweep.tau_max + 1e-12 {
            break;
        }
        taus.push(t);
        i += 1;
    }
    taus.push(cfg.tau);
    taus.sort_by(|a, b| a.total_cmp(b));
    taus.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    taus
}

fn sweep_once(
    raw: &[Vec<TripletPrediction>],
    gts: &[Vec<GroundTruthTriplet>],
    freqs: &FrequencyTable,
    tau: f64,
    opts: &EvalOptions,
) -> Result<SweepPoint> {
    let ranked = raw
        .iter()
        .map(|image| {
            image
                .iter()
                .map(|p| {
                    let mut adjusted = p.clone();
                    adjusted.rel_logits = logit_adjust(&p.rel_logits, freqs, tau)?;
                    Ok(rank_prediction(&adjusted))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let report = evaluate(&ranked, gts, opts, None)?;
    Ok(SweepPoint {
        tau,
        recall_50: report.recall[&50],
        mean_recall_50: report.mean_recall[&50],
    })
}

pub fn run(args: &CalibrateArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    super::eval::apply_eval_flags(&mut cfg, &[], args.profile, args.graph_constraint);
    if let Some(tau) = args.tau {
        cfg.tau = tau;
    }
    if let Some(mu) = args.mu {
        cfg.mu = mu;
    }
    cfg.finalize()?;

    let ds = load_dataset(&args.dataset)?;
    let preds = load_predictions(&args.predictions, &ds)?;
    let freqs = load_frequencies(&args.frequencies, &ds.vocab)?;

    // Re-scoring needs the raw logits behind every triplet.
    let mut raw: Vec<Vec<TripletPrediction>> = Vec::with_capacity(preds.raw.len());
    for (i, image) in preds.raw.iter().enumerate() {
        let mut slots = Vec::with_capacity(image.len());
        for (t, slot) in image.iter().enumerate() {
            match slot {
                Some(p) => slots.push(p.clone()),
                None => {
                    return Err(InputError {
                        file: args.predictions.clone(),
                        location: Some(format!("images for id {} / triplet {t}", ds.ids[i])),
                        line: None,
                        column: None,
                        message: "calibration needs the logits block on every triplet".into(),
                    }
                    .into())
                }
            }
        }
        raw.push(slots);
    }

    let gts: Vec<_> = ds.scenes.iter().map(gt_triplets).collect();
    let opts = EvalOptions {
        ks: vec![50],
        graph_constraint: cfg.graph_constraint(),
        averaging: cfg.profile.averaging(),
    };

    let taus = tau_grid(&cfg);
    let points: Vec<SweepPoint> = with_pool(cfg.jobs, || {
        taus.par_iter()
            .map(|&tau| {
                sweep_once(&raw, &gts, &freqs, tau, &opts)
                    .with_context(|| format!("sweeping tau = {tau}"))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let best = points
        .iter()
        .copied()
        .reduce(|best, p| if p.mean_recall_50 > best.mean_recall_50 { p } else { best })
        .expect("grid is never empty");

    let gamma: BTreeMap<String, f64> = ds
        .vocab
        .predicates
        .iter()
        .zip(freqs.as_slice())
        .map(|(name, &f)| Ok((name.clone(), adaptive_gamma_clamped(f, cfg.mu, true)?)))
        .collect::<Result<_>>()?;

    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.tau.to_string(),
                p.recall_50.to_string(),
                p.mean_recall_50.to_string(),
            ]
        })
        .collect();

    let chart = line_chart(
        "adjustment sweep",
        "tau",
        "recall@50",
        &[
            Series {
                label: "R@50".into(),
                color: "#1f77b4",
                points: points.iter().map(|p| (p.tau, p.recall_50)).collect(),
            },
            Series {
                label: "mR@50".into(),
                color: "#d62728",
                points: points.iter().map(|p| (p.tau, p.mean_recall_50)).collect(),
            },
        ],
        &format!("version: {VERSION} config: {}", serde_json::to_string(&cfg)?),
    );

    let body = SweepBody {
        operating_tau: cfg.tau,
        best_tau: best.tau,
        points,
        gamma,
    };
    let json_path = args.common.out.join("tau_sweep.json");
    write_json(&json_path, &Artifact::new(&cfg, body))?;
    let csv_path = args.common.out.join("tau_sweep.csv");
    write_csv(&csv_path, &cfg, &["tau", "recall_50", "mean_recall_50"], &rows)?;
    let svg_path = args.common.out.join("tau_sweep.svg");
    crate::output::write_text(&svg_path, &chart)?;

    println!(
        "best tau {:.3} (mR@50 {:.2}); operating tau {:.3}",
        best.tau,
        best.mean_recall_50 * 100.0,
        cfg.tau
    );
    println!(
        "wrote {}, {}, {}",
        json_path.display(),
        csv_path.display(),
        svg_path.display()
    );
    Ok(())
}
