//! `eval`: score a predictions file against its dataset and write the full
//! metric report as JSON, CSV, and a plain-text table.

use std::fmt::Write as _;
use std::path::PathBuf;

use anyhow::Result;
use ssrcnn_core::metrics::{evaluate, gt_triplets, MetricsReport};

use crate::config::{CommonArgs, Profile, RunConfig, Toggle};
use crate::formats::{load_dataset, load_predictions, load_seen};
use crate::output::{write_csv, write_json, write_text_with_header, Artifact};

#[derive(Debug, clap::Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Dataset with ground-truth annotations
    #[arg(value_name = "DATASET")]
    pub dataset: PathBuf,

    /// Predictions to score
    #[arg(value_name = "PREDICTIONS")]
    pub predictions: PathBuf,

    /// Seen label combinations; enables zero-shot recall
    #[arg(value_name = "SEEN")]
    pub seen: Option<PathBuf>,

    /// Recall cutoffs, e.g. --k-at 20,50,100 (repeatable)
    #[arg(long = "k-at", value_name = "K", value_delimiter = ',', num_args = 1..)]
    pub k_at: Vec<usize>,

    /// Evaluation protocol family
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,

    /// Require each (subject, object) box pair to contribute at most one
    /// ranked triplet
    #[arg(long = "graph-constraint", value_enum)]
    pub graph_constraint: Option<Toggle>,
}

pub fn apply_eval_flags(
    cfg: &mut RunConfig,
    k_at: &[usize],
    profile: Option<Profile>,
    graph_constraint: Option<Toggle>,
) {
    if !k_at.is_empty() {
        cfg.k_at = k_at.to_vec();
    }
    if let Some(p) = profile {
        cfg.profile = p;
    }
    if let Some(t) = graph_constraint {
        cfg.graph_constraint = Some(t.as_bool());
    }
}

fn percent(v: f64) -> String {
    format!("{:.2}", v * 100.0)
}

/// The human-readable table, on the usual 0–100 scale.
pub fn render_report(report: &MetricsReport, cfg: &RunConfig) -> String {
    let mut out = String::new();
    let gc = if cfg.graph_constraint() { "on" } else { "off" };
    let avg = match cfg.profile {
        Profile::Vg => "macro",
        Profile::Oi => "micro",
    };
    let _ = writeln!(out, "profile: {avg} averaging, graph constraint {gc}");
    let _ = writeln!(out);
    let _ = writeln!(out, "{:<18} {:>8}", "metric", "value");
    for (k, v) in &report.recall {
        let _ = writeln!(out, "{:<18} {:>8}", format!("R@{k}"), percent(*v));
    }
    for (k, v) in &report.mean_recall {
        let _ = writeln!(out, "{:<18} {:>8}", format!("mR@{k}"), percent(*v));
    }
    if let Some(zs) = &report.zero_shot_recall {
        for (k, v) in zs {
            let _ = writeln!(out, "{:<18} {:>8}", format!("zsR@{k}"), percent(*v));
        }
    }
    let _ = writeln!(out, "{:<18} {:>8}", "wmAP_rel", percent(report.wmap_rel));
    let _ = writeln!(out, "{:<18} {:>8}", "wmAP_phr", percent(report.wmap_phr));
    let _ = writeln!(out, "{:<18} {:>8}", "weighted score", percent(report.weighted_score));
    out
}

pub fn run(args: &EvalArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    apply_eval_flags(&mut cfg, &args.k_at, args.profile, args.graph_constraint);
    cfg.finalize()?;

    let ds = load_dataset(&args.dataset)?;
    let preds = load_predictions(&args.predictions, &ds)?;
    let seen = match &args.seen {
        Some(path) => Some(load_seen(path, &ds.vocab)?),
        None => None,
    };
    let gts: Vec<_> = ds.scenes.iter().map(gt_triplets).collect();

    let report = evaluate(&preds.ranked, &gts, &cfg.eval_options(), seen.as_ref())?;

    let mut header: Vec<String> = vec!["predicate".into(), "gt_count".into(), "weight".into()];
    for k in cfg.k_at.iter() {
        header.push(format!("recall_at_{k}"));
    }
    header.push("ap_rel".into());
    header.push("ap_phr".into());
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = report
        .per_predicate
        .iter()
        .map(|row| {
            let mut cells = vec![
                ds.vocab.predicates[row.predicate].clone(),
                row.gt_count.to_string(),
                row.weight.to_string(),
            ];
            for k in cfg.k_at.iter() {
                cells.push(
                    row.recall
                        .get(k)
                        .map(|v| v.to_string())
                        .unwrap_or_else(|| "".into()),
                );
            }
            cells.push(row.ap_rel.to_string());
            cells.push(row.ap_phr.to_string());
            cells
        })
        .collect();

    let text = render_report(&report, &cfg);

    let json_path = args.common.out.join("report.json");
    write_json(&json_path, &Artifact::new(&cfg, &report))?;
    let csv_path = args.common.out.join("per_category.csv");
    write_csv(&csv_path, &cfg, &header_refs, &rows)?;
    let txt_path = args.common.out.join("report.txt");
    write_text_with_header(&txt_path, &cfg, &text)?;

    print!("{text}");
    println!(
        "wrote {}, {}, {}",
        json_path.display(),
        csv_path.display(),
        txt_path.display()
    );
    Ok(())
}
