//! `assign`: run the two-stage supervision assignment over every image and
//! record the resulting slot partition.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use ssrcnn_core::assignment::{two_stage_assign, AssignmentResult};
use ssrcnn_core::synth::{perturb_detections, random_predictions};

use crate::config::CommonArgs;
use crate::formats::{load_dataset, Id};
use crate::output::{write_json, Artifact};

use super::{derive_seed, with_pool, LANE_AUX, LANE_PREDICTIONS};

#[derive(Debug, clap::Args)]
pub struct AssignArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Dataset to assign against
    #[arg(value_name = "DATASET")]
    pub dataset: PathBuf,

    /// Prediction slots per image
    #[arg(long)]
    pub queries: Option<usize>,
}

#[derive(Serialize)]
struct ImageAssignment {
    id: Id,
    gt_triplets: usize,
    #[serde(flatten)]
    assignment: AssignmentResult,
}

#[derive(Serialize)]
struct AssignBody {
    images: Vec<ImageAssignment>,
}

pub fn run(args: &AssignArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(q) = args.queries {
        cfg.queries = q;
    }
    cfg.finalize()?;
    let ds = load_dataset(&args.dataset)?;

    let focal = cfg.focal_params();
    let images: Vec<ImageAssignment> = with_pool(cfg.jobs, || {
        ds.scenes
            .par_iter()
            .enumerate()
            .map(|(i, scene)| {
                let preds = random_predictions(
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
                let assignment =
                    two_stage_assign(&preds, scene, &aux, &cfg.coefficients, &focal, &cfg.assign)
                        .with_context(|| format!("assigning image {}", ds.ids[i]))?;
                Ok(ImageAssignment {
                    id: ds.ids[i].clone(),
                    gt_triplets: scene.relations.len(),
                    assignment,
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let stage1: usize = images.iter().map(|r| r.assignment.stage1.len()).sum();
    let stage2: usize = images.iter().map(|r| r.assignment.stage2.len()).sum();
    let background: usize = images.iter().map(|r| r.assignment.background.len()).sum();

    let path = args.common.out.join("assignment.json");
    write_json(&path, &Artifact::new(&cfg, AssignBody { images }))?;
    println!(
        "wrote {} ({} images, {} slots/image: {stage1} annotated, {stage2} pseudo, {background} background)",
        path.display(),
        ds.len(),
        cfg.queries
    );
    Ok(())
}
