//! `report`: combine headline metric components into the single weighted
//! score used to compare systems.

use std::path::PathBuf;

use anyhow::Result;
use serde::Serialize;
use ssrcnn_core::metrics::weighted_score;

use crate::output::{write_json, write_text_with_header, Artifact};

#[derive(Debug, clap::Args)]
pub struct ReportArgs {
    /// R@50 on the 0-100 scale
    #[arg(value_name = "R50")]
    pub recall_50: f64,

    /// wmAP_rel on the 0-100 scale
    #[arg(value_name = "WMAP_REL")]
    pub wmap_rel: f64,

    /// wmAP_phr on the 0-100 scale
    #[arg(value_name = "WMAP_PHR")]
    pub wmap_phr: f64,

    /// Directory to also write score.json / score.txt into
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Inputs {
    recall_50: f64,
    wmap_rel: f64,
    wmap_phr: f64,
}

#[derive(Serialize)]
struct ScoreBody {
    weighted_score: f64,
}

pub fn run(args: &ReportArgs) -> Result<()> {
    for (name, v) in [
        ("R50", args.recall_50),
        ("WMAP_REL", args.wmap_rel),
        ("WMAP_PHR", args.wmap_phr),
    ] {
        anyhow::ensure!(v.is_finite(), "{name} must be finite, got {v}");
    }
    let score = weighted_score(args.recall_50, args.wmap_rel, args.wmap_phr);
    let line = format!("weighted score: {score:.2}");
    println!("{line}");

    if let Some(dir) = &args.out {
        let inputs = Inputs {
            recall_50: args.recall_50,
            wmap_rel: args.wmap_rel,
            wmap_phr: args.wmap_phr,
        };
        write_json(&dir.join("score.json"), &Artifact::new(&inputs, ScoreBody { weighted_score: score }))?;
        write_text_with_header(&dir.join("score.txt"), &inputs, &format!("{line}\n"))?;
    }
    Ok(())
}
