//! `gen`: synthesize a dataset and its predicate-frequency sidecar.

use std::collections::BTreeMap;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use ssrcnn_core::calibration::FrequencyTable;
use ssrcnn_core::scene::SceneGraph;
use ssrcnn_core::synth::generate_scene;

use crate::config::CommonArgs;
use crate::formats::{dataset_to_records, Dataset, DatasetFile, Id, Vocab};
use crate::output::{write_json, Artifact};

use super::{derive_seed, with_pool, LANE_SCENE};

#[derive(Debug, clap::Args)]
pub struct GenArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Number of images to generate
    #[arg(long)]
    pub images: Option<usize>,
}

#[derive(Serialize)]
struct FrequenciesBody {
    frequencies: BTreeMap<String, f64>,
}

/// Zero-padded label names, lexicographically ordered like their indices.
fn label_names(prefix: &str, count: usize) -> Vec<String> {
    let width = count.saturating_sub(1).to_string().len();
    (0..count).map(|i| format!("{prefix}_{i:0width$}")).collect()
}

pub fn run(args: &GenArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(n) = args.images {
        cfg.images = n;
    }
    cfg.finalize()?;
    anyhow::ensure!(cfg.images > 0, "images must be positive");

    let scenes: Vec<SceneGraph> = with_pool(cfg.jobs, || {
        (0..cfg.images)
            .into_par_iter()
            .map(|i| {
                let mut sc = cfg.scene.clone();
                sc.seed = derive_seed(cfg.seed, LANE_SCENE, i as u64);
                let (graph, _features) = generate_scene(&sc)
                    .with_context(|| format!("generating image {i}"))?;
                Ok(graph)
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let vocab = Vocab {
        objects: label_names("object", cfg.scene.num_obj_classes),
        predicates: label_names("predicate", cfg.scene.num_rel_classes),
    };
    let canvas = f64::from(cfg.canvas);
    let dataset = Dataset {
        ids: (0..scenes.len()).map(|i| Id::Num(i as u64)).collect(),
        dims: vec![(canvas, canvas); scenes.len()],
        scenes,
        vocab,
    };

    let file = DatasetFile {
        version: Some(crate::output::VERSION.to_string()),
        config: Some(serde_json::to_value(&cfg)?),
        images: dataset_to_records(&dataset, true),
        vocab: dataset.vocab.clone(),
    };
    let dataset_path = args.common.out.join("dataset.json");
    write_json(&dataset_path, &file)?;

    let mut counts = vec![0u64; dataset.vocab.predicates.len()];
    for scene in &dataset.scenes {
        for r in &scene.relations {
            counts[r.predicate] += 1;
        }
    }
    let table = FrequencyTable::from_counts_smoothed(&counts)?;
    let frequencies: BTreeMap<String, f64> = dataset
        .vocab
        .predicates
        .iter()
        .cloned()
        .zip(table.as_slice().iter().copied())
        .collect();
    let freq_path = args.common.out.join("frequencies.json");
    write_json(&freq_path, &Artifact::new(&cfg, FrequenciesBody { frequencies }))?;

    let relations: usize = dataset.scenes.iter().map(|s| s.relations.len()).sum();
    let objects: usize = dataset.scenes.iter().map(|s| s.objects.len()).sum();
    log::info!("generated {} images, {objects} objects, {relations} relations", dataset.len());
    println!(
        "wrote {} ({} images, {objects} objects, {relations} relations)",
        dataset_path.display(),
        dataset.len()
    );
    println!("wrote {}", freq_path.display());
    Ok(())
}
