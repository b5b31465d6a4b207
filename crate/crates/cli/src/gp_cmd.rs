//! The `gp run` subcommand: symbolic regression over one column of a
//! tuning dataset CSV.

use crate::manifest::RunManifest;
use crate::say;
use crate::{ensure_out_dir, resolve_seed, Failure};
use clap::Args;
use nyqtune_core::gp::{evolve, GpConfig, GpDataset, GpOutcome};
use nyqtune_core::tuning::FEATURE_NAMES;
use serde::Serialize;
use serde_json::json;
use std::collections::BTreeSet;
use std::path::PathBuf;

#[derive(Args)]
pub struct GpRunArgs {
    /// Dataset CSV in the `pipeline full` format
    #[arg(long)]
    pub data: PathBuf,
    /// Target column, e.g. pid_kp or fopid_lam
    #[arg(long)]
    pub target: String,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Population size
    #[arg(long)]
    pub pop: Option<usize>,
    /// Generations
    #[arg(long)]
    pub gens: Option<usize>,
    /// Maximum genes per model
    #[arg(long)]
    pub max_genes: Option<usize>,
    /// Maximum tree depth
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Tournament size
    #[arg(long)]
    pub tournament: Option<usize>,
    /// Output directory (default nyqtune_out/gp-<target>)
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Archive member in the export shape: formula plus its coordinates.
#[derive(Serialize)]
pub struct ArchiveEntry {
    pub expression_string: String,
    pub fitness: f64,
    pub complexity: usize,
    pub bias: f64,
    pub weights: Vec<f64>,
}

pub fn archive_entries(out: &GpOutcome) -> Vec<ArchiveEntry> {
    out.archive
        .iter()
        .map(|p| ArchiveEntry {
            expression_string: p.expression.clone(),
            fitness: p.fitness,
            complexity: p.complexity,
            bias: p.bias,
            weights: p.weights.clone(),
        })
        .collect()
}

/// Every distinct (fitness, complexity) point evaluated during the run,
/// flagged with front membership. Nonnegative fitness sorts correctly by
/// bit pattern, which keeps the file deterministic.
pub fn pareto_csv(out: &GpOutcome) -> String {
    let front: BTreeSet<(u64, usize)> =
        out.archive.iter().map(|p| (p.fitness.to_bits(), p.complexity)).collect();
    let mut seen: BTreeSet<(usize, u64)> = BTreeSet::new();
    for &(f, c) in &out.evaluated_points {
        seen.insert((c, f.to_bits()));
    }
    let mut s = String::from("fitness,complexity,is_front\n");
    for (c, fb) in seen {
        let f = f64::from_bits(fb);
        let is_front = front.contains(&(fb, c));
        s.push_str(&format!("{},{},{}\n", f, c, is_front as u8));
    }
    s
}

/// Extracts the six feature columns and one target column from the dataset
/// CSV written by `pipeline full`.
pub fn parse_dataset_csv(text: &str, target: &str) -> Result<(Vec<Vec<f64>>, Vec<f64>), Failure> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Failure::Usage("dataset CSV is empty".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();

    let feature_idx: Vec<usize> = FEATURE_NAMES
        .iter()
        .map(|name| {
            cols.iter().position(|c| c == name).ok_or_else(|| {
                Failure::Usage(format!("dataset header is missing feature column '{name}'"))
            })
        })
        .collect::<Result<_, _>>()?;
    let target_idx = cols.iter().position(|c| *c == target).ok_or_else(|| {
        Failure::Usage(format!("no column '{target}' in dataset; header: {}", cols.join(",")))
    })?;

    let mut x = Vec::new();
    let mut y = Vec::new();
    for (row, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(Failure::Usage(format!(
                "row {} has {} fields, header has {}",
                row + 1,
                fields.len(),
                cols.len()
            )));
        }
        let parse = |i: usize| -> Result<f64, Failure> {
            fields[i].parse().map_err(|_| {
                Failure::Usage(format!("row {}: '{}' is not a number", row + 1, fields[i]))
            })
        };
        let features: Vec<f64> = feature_idx.iter().map(|&i| parse(i)).collect::<Result<_, _>>()?;
        x.push(features);
        y.push(parse(target_idx)?);
    }
    Ok((x, y))
}

pub fn run(args: &GpRunArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let text = std::fs::read_to_string(&args.data)
        .map_err(|e| Failure::Runtime(format!("cannot read {}: {e}", args.data.display())))?;
    let (x, y) = parse_dataset_csv(&text, &args.target)?;
    let data = GpDataset::new(x, y)?;

    let mut cfg = GpConfig { seed, ..GpConfig::default() };
    if let Some(p) = args.pop {
        cfg.population = p;
    }
    if let Some(g) = args.gens {
        cfg.generations = g;
    }
    if let Some(g) = args.max_genes {
        cfg.max_genes = g;
    }
    if let Some(d) = args.max_depth {
        cfg.max_depth = d;
    }
    if let Some(t) = args.tournament {
        cfg.tournament = t;
    }

    let outcome = evolve(&data, &cfg)?;

    let dir = ensure_out_dir(args.out.clone(), format!("gp-{}", args.target))?;
    let mut m = RunManifest::new(
        "gp run",
        Some(seed),
        json!({
            "data": args.data.display().to_string(),
            "target": args.target,
            "gp": cfg,
        }),
    );
    write_outputs(&dir, &mut m, &args.target, data.len(), &cfg, &outcome, "")?;
    m.finish(&dir)?;

    say!(
        "{}: best MAE = {:.6e}, complexity = {}, {} archive members (outputs in {})",
        args.target,
        outcome.best_fitness,
        outcome.best_complexity,
        outcome.archive.len(),
        dir.display()
    );
    say!("  {}", outcome.best.render());
    Ok(())
}

#[derive(Serialize)]
struct GpReport<'a> {
    target: &'a str,
    rows: usize,
    config: &'a GpConfig,
    best_expression: String,
    best_fitness: f64,
    best_complexity: usize,
    evaluations: usize,
    history: &'a [f64],
}

/// Writes gp<suffix>.json, archive<suffix>.json, and pareto<suffix>.csv;
/// shared by `gp run` and the pipeline.
pub fn write_outputs(
    dir: &std::path::Path,
    m: &mut RunManifest,
    target: &str,
    rows: usize,
    cfg: &GpConfig,
    outcome: &GpOutcome,
    suffix: &str,
) -> Result<(), Failure> {
    let report = GpReport {
        target,
        rows,
        config: cfg,
        best_expression: outcome.best.render(),
        best_fitness: outcome.best_fitness,
        best_complexity: outcome.best_complexity,
        evaluations: outcome.evaluations,
        history: &outcome.history,
    };
    m.write_json(dir, &format!("gp{suffix}.json"), &report)?;
    m.write_json(dir, &format!("archive{suffix}.json"), &archive_entries(outcome))?;
    m.write_text(dir, &format!("pareto{suffix}.csv"), &pareto_csv(outcome))?;
    Ok(())
}
