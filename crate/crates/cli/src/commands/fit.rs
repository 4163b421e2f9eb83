//! `fit`: gradient-descend free predictions against each scene and record
//! the loss/recall trajectories plus the final prediction sets.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use ssrcnn_core::losses::{fit_direct, FitRecord};
use ssrcnn_core::synth::{perturb_detections, random_predictions};

use crate::config::CommonArgs;
use crate::formats::{load_dataset, predictions_to_records, Id, PredictionsFile};
use crate::output::{write_csv, write_json, Artifact};

use super::{derive_seed, with_pool, LANE_AUX, LANE_PREDICTIONS};

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Dataset to fit against
    #[arg(value_name = "DATASET")]
    pub dataset: PathBuf,

    /// Prediction slots per image
    #[arg(long)]
    pub queries: Option<usize>,
}

#[derive(Serialize)]
struct ImageFit {
    id: Id,
    steps_run: usize,
    final_loss: f64,
    final_recall: f64,
    trajectory: Vec<FitRecord>,
}

#[derive(Serialize)]
struct FitBody {
    images: Vec<ImageFit>,
}

pub fn run(args: &FitArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(q) = args.queries {
        cfg.queries = q;
    }
    cfg.finalize()?;
    let ds = load_dataset(&args.dataset)?;
    let opts = cfg.fit_options();

    let results: Vec<(ImageFit, Vec<ssrcnn_core::scene::TripletPrediction>)> =
        with_pool(cfg.jobs, || {
            ds.scenes
                .par_iter()
                .enumerate()
                .map(|(i, scene)| {
                    let init = random_predictions(
                        cfg.queries,
                        ds.vocab.objects.len(),
                        ds.vocab.predicates.len(),
                        derive_seed(cfg.seed, LANE_PREDICTIONS, i as u64),
                    )?;
                    let aux = perturb_detections(
                        scene,
                        ds.vocab.objects.len(),
                        &cfg.perturb,
                        derive_seed(cfg.seed, LANE_AUX, i as u64),
                    )?;
                    let fit = fit_direct(&init, scene, &aux, &cfg.coefficients, &opts)
                        .with_context(|| format!("fitting image {}", ds.ids[i]))?;
                    let last = *fit.trajectory.last().expect("trajectory has step 0");
                    let row = ImageFit {
                        id: ds.ids[i].clone(),
                        steps_run: last.step,
                        final_loss: last.loss,
                        final_recall: last.recall,
                        trajectory: fit.trajectory,
                    };
                    Ok((row, fit.predictions))
                })
                .collect::<Result<Vec<_>>>()
        })?;

    let (images, predictions): (Vec<ImageFit>, Vec<Vec<_>>) = results.into_iter().unzip();

    let csv_rows: Vec<Vec<String>> = images
        .iter()
        .flat_map(|img| {
            img.trajectory.iter().map(move |r| {
                vec![
                    img.id.to_string(),
                    r.step.to_string(),
                    r.loss.to_string(),
                    r.recall.to_string(),
                ]
            })
        })
        .collect();

    let preds_file = PredictionsFile {
        version: Some(crate::output::VERSION.to_string()),
        config: Some(serde_json::to_value(&cfg)?),
        images: predictions_to_records(&ds, &predictions),
    };

    let mean_recall =
        images.iter().map(|r| r.final_recall).sum::<f64>() / images.len().max(1) as f64;
    for img in &images {
        log::info!(
            "image {}: {} steps, loss {:.4}, recall@{} {:.3}",
            img.id,
            img.steps_run,
            img.final_loss,
            cfg.fit.recall_k,
            img.final_recall
        );
    }

    let fit_path = args.common.out.join("fit.json");
    write_json(&fit_path, &Artifact::new(&cfg, FitBody { images }))?;
    let csv_path = args.common.out.join("fit.csv");
    write_csv(&csv_path, &cfg, &["image", "step", "loss", "recall"], &csv_rows)?;
    let preds_path = args.common.out.join("predictions.json");
    write_json(&preds_path, &preds_file)?;

    println!("wrote {}", fit_path.display());
    println!("wrote {}", csv_path.display());
    println!(
        "wrote {} (mean recall@{} after fitting: {:.3})",
        preds_path.display(),
        cfg.fit.recall_k,
        mean_recall
    );
    Ok(())
}
