//! `forward`: run the cascaded detector with fresh seeded weights over a
//! synthetic feature map per image, writing the final head's predictions.

use std::path::PathBuf;

use anyhow::{Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use ssrcnn_core::heads::{seeded_queries, TripletDetector};
use ssrcnn_core::synth::smooth_feature_map;

use crate::config::CommonArgs;
use crate::formats::{load_dataset, predictions_to_records, PredictionsFile};
use crate::output::write_json;

use super::{derive_seed, with_pool, LANE_FMAP, LANE_QUERIES, LANE_WEIGHTS};

#[derive(Debug, clap::Args)]
pub struct ForwardArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Dataset whose images (and vocabulary) to run over
    #[arg(value_name = "DATASET")]
    pub dataset: PathBuf,

    /// Triplet queries per image
    #[arg(long)]
    pub queries: Option<usize>,

    /// Heads in the cascade
    #[arg(long)]
    pub heads: Option<usize>,
}

pub fn run(args: &ForwardArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(q) = args.queries {
        cfg.queries = q;
    }
    if let Some(h) = args.heads {
        cfg.heads = h;
    }
    cfg.finalize()?;
    let ds = load_dataset(&args.dataset)?;

    let mut model = cfg.model.clone();
    model.num_obj_classes = ds.vocab.objects.len();
    model.num_rel_classes = ds.vocab.predicates.len();

    let detector = TripletDetector::seeded(model.clone(), derive_seed(cfg.seed, LANE_WEIGHTS, 0))
        .context("building detector")?;
    let queries = seeded_queries(&model, cfg.queries, derive_seed(cfg.seed, LANE_QUERIES, 0))?;

    let predictions: Vec<Vec<_>> = with_pool(cfg.jobs, || {
        (0..ds.len())
            .into_par_iter()
            .map(|i| {
                let mut rng =
                    ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, LANE_FMAP, i as u64));
                let fmap = smooth_feature_map(&mut rng, model.channels, cfg.scene.fmap_size);
                let out = detector
                    .forward(&queries, &fmap)
                    .with_context(|| format!("forward pass on image {}", ds.ids[i]))?;
                Ok(out.final_predictions().to_vec())
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let file = PredictionsFile {
        version: Some(crate::output::VERSION.to_string()),
        config: Some(serde_json::to_value(&cfg)?),
        images: predictions_to_records(&ds, &predictions),
    };
    let path = args.common.out.join("predictions.json");
    write_json(&path, &file)?;
    println!(
        "wrote {} ({} images, {} queries through {} heads)",
        path.display(),
        ds.len(),
        cfg.queries,
        cfg.heads
    );
    Ok(())
}
