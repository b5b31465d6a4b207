//! The `pipeline full` subcommand: catalog-wide reduction, controller
//! tuning, rule regression, and representative comparisons in one run.

use crate::manifest::RunManifest;
use crate::say;
use crate::{ensure_out_dir, gp_cmd, resolve_seed, sanitize, Failure, KindArg};
use clap::Args;
use nyqtune_core::bench::{catalog, make_testbench, reference_fit, BenchSpec};
use nyqtune_core::gp::{evolve, GpConfig};
use nyqtune_core::reduce::{reduce, ReduceConfig, ReduceResult};
use nyqtune_core::tf::TemplateKind;
use nyqtune_core::tuning::{build_dataset, compare_rule_vs_optimal, ControllerKind, DatasetConfig};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use std::path::PathBuf;

#[derive(Args)]
pub struct PipelineArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// GA population for reduction and tuning
    #[arg(long)]
    pop: Option<usize>,
    /// GA generations for reduction and tuning
    #[arg(long)]
    gens: Option<usize>,
    /// Simulation samples per closed-loop evaluation
    #[arg(long)]
    steps: Option<usize>,
    /// GP population
    #[arg(long)]
    gp_pop: Option<usize>,
    /// GP generations
    #[arg(long)]
    gp_gens: Option<usize>,
    /// Controller structure for tuning targets and comparisons
    #[arg(long, value_enum, default_value_t = KindArg::Pid)]
    kind: KindArg,
    /// Comma-separated representative plants for trajectory comparisons
    #[arg(long, default_value = "P1:5,P2:0.5,P3:0.5,P4:0.5")]
    reps: String,
    /// Output directory (default nyqtune_out/pipeline)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReductionLine {
    spec: String,
    j: f64,
    j_reference: Option<f64>,
    ratio_to_reference: Option<f64>,
}

#[derive(Serialize)]
struct TuningLine {
    spec: String,
    j_pid: f64,
    j_fopid: f64,
    fopid_over_pid: f64,
}

#[derive(Serialize)]
struct RuleLine {
    target: String,
    expression: String,
    mae: f64,
    complexity: usize,
}

#[derive(Serialize)]
struct ComparisonLine {
    spec: String,
    kind: String,
    j_rule: f64,
    j_tuned: f64,
    ratio: f64,
}

#[derive(Serialize)]
struct PipelineSummary {
    seed: u64,
    kind: String,
    reduction: Vec<ReductionLine>,
    reduction_failures: Vec<[String; 2]>,
    mean_reduction_ratio: Option<f64>,
    tuning: Vec<TuningLine>,
    tuning_failures: Vec<[String; 2]>,
    mean_j_pid: Option<f64>,
    mean_j_fopid: Option<f64>,
    rules: Vec<RuleLine>,
    comparisons: Vec<ComparisonLine>,
    comparison_failures: Vec<[String; 2]>,
    mean_comparison_ratio: Option<f64>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        None
    } else {
        Some(v.iter().sum::<f64>() / v.len() as f64)
    }
}

pub fn run_full(args: &PipelineArgs) -> Result<(), Failure> {
    let seed = resolve_seed(args.seed)?;
    let kind = args.kind.to_core();

    let reps: Vec<BenchSpec> = if args.reps.trim().is_empty() {
        Vec::new()
    } else {
        args.reps
            .split(',')
            .map(|s| {
                let spec: BenchSpec = s
                    .trim()
                    .parse()
                    .map_err(|e: nyqtune_core::Error| Failure::Usage(e.to_string()))?;
                if !spec.in_catalog() {
                    return Err(Failure::Usage(format!("{spec} is not in the catalog")));
                }
                Ok(spec)
            })
            .collect::<Result<_, _>>()?
    };

    let dir = ensure_out_dir(args.out.clone(), "pipeline".into())?;
    let mut m = RunManifest::new(
        "pipeline full",
        Some(seed),
        json!({
            "kind": kind.to_string(),
            "pop": args.pop,
            "gens": args.gens,
            "steps": args.steps,
            "gp_pop": args.gp_pop,
            "gp_gens": args.gp_gens,
            "reps": reps.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
        }),
    );

    // stage 1: SOPTD reduction of the whole catalog
    let specs = catalog();
    log::info!("reducing {} plants", specs.len());
    let reductions: Vec<(BenchSpec, Result<ReduceResult, String>)> = specs
        .par_iter()
        .enumerate()
        .map(|(i, &spec)| {
            let outcome = (|| {
                let plant = make_testbench(spec)?;
                let mut cfg =
                    ReduceConfig::standard(TemplateKind::Soptd, seed.wrapping_add(1_000 + i as u64));
                if let Some(p) = args.pop {
                    cfg.ga.population = p;
                }
                if let Some(g) = args.gens {
                    cfg.ga.generations = g;
                }
                reduce(&plant, &cfg, &[])
            })();
            (spec, outcome.map_err(|e| e.to_string()))
        })
        .collect();

    let mut table = String::from("class,parameter,J_min,K,tau_max,tau_min,L\n");
    let mut reduction_lines = Vec::new();
    let mut reduction_failures = Vec::new();
    for (spec, outcome) in &reductions {
        match outcome {
            Ok(r) => {
                let mdl = &r.model;
                table.push_str(&format!(
                    "{},{},{},{},{},{},{}\n",
                    spec.class, spec.parameter, r.j, mdl.k, mdl.tau_max, mdl.tau_min, mdl.l
                ));
                let j_reference = reference_fit(*spec).map(|f| f.j_ref);
                reduction_lines.push(ReductionLine {
                    spec: spec.to_string(),
                    j: r.j,
                    j_reference,
                    ratio_to_reference: j_reference.map(|jr| r.j / jr),
                });
            }
            Err(e) => reduction_failures.push([spec.to_string(), e.clone()]),
        }
    }
    m.write_text(&dir, "reductions.csv", &table)?;

    // stage 2: GA tuning of both controller structures per plant
    log::info!("tuning controllers over the catalog");
    let mut dcfg = DatasetConfig::default();
    dcfg.ga.seed = seed;
    if let Some(p) = args.pop {
        dcfg.ga.population = p;
    }
    if let Some(g) = args.gens {
        dcfg.ga.generations = g;
    }
    if let Some(s) = args.steps {
        dcfg.steps = s;
    }
    let dataset = build_dataset(&dcfg);
    m.write_text(&dir, "dataset.csv", &dataset.to_csv())?;

    if reduction_lines.is_empty() || dataset.rows.is_empty() {
        m.finish(&dir)?;
        return Err(Failure::Runtime("no plant completed the pipeline".into()));
    }

    let tuning_lines: Vec<TuningLine> = dataset
        .rows
        .iter()
        .map(|r| TuningLine {
            spec: r.spec.to_string(),
            j_pid: r.j_pid,
            j_fopid: r.j_fopid,
            fopid_over_pid: r.j_fopid / r.j_pid,
        })
        .collect();
    let tuning_failures: Vec<[String; 2]> =
        dataset.failures.iter().map(|(s, e)| [s.to_string(), e.clone()]).collect();

    // stage 3: symbolic regression per controller parameter
    let targets: &[&str] = match kind {
        ControllerKind::Pid => &["pid_kp", "pid_ki", "pid_kd"],
        ControllerKind::Fopid => {
            &["fopid_kp", "fopid_ki", "fopid_kd", "fopid_lam", "fopid_mu"]
        }
    };
    let mut rule_lines = Vec::new();
    let max_genes = GpConfig::default().max_genes;
    if dataset.rows.len() > max_genes {
        let (x, ys) = dataset.regression_view(kind);
        let xvec: Vec<Vec<f64>> = x.iter().map(|r| r.to_vec()).collect();
        for (k, (name, y)) in targets.iter().zip(&ys).enumerate() {
            log::info!("evolving a formula for {name}");
            let mut gcfg =
                GpConfig { seed: seed.wrapping_add(5_000 + k as u64), ..GpConfig::default() };
            if let Some(p) = args.gp_pop {
                gcfg.population = p;
            }
            if let Some(g) = args.gp_gens {
                gcfg.generations = g;
            }
            let data = nyqtune_core::gp::GpDataset::new(xvec.clone(), y.clone())?;
            let outcome = evolve(&data, &gcfg)?;
            gp_cmd::write_outputs(
                &dir,
                &mut m,
                name,
                data.len(),
                &gcfg,
                &outcome,
                &format!("_{name}"),
            )?;
            rule_lines.push(RuleLine {
                target: name.to_string(),
                expression: outcome.best.render(),
                mae: outcome.best_fitness,
                complexity: outcome.best_complexity,
            });
        }
    } else {
        log::warn!(
            "skipping regression: only {} usable rows, need more than {}",
            dataset.rows.len(),
            max_genes
        );
    }

    // stage 4: rule vs GA trajectories on the representative plants
    log::info!("comparing the closed-form rule against direct tuning");
    let comparisons: Vec<(BenchSpec, Result<_, String>)> = reps
        .par_iter()
        .enumerate()
        .map(|(j, &spec)| {
            let mut cfg = dcfg.clone();
            cfg.ga.seed = seed.wrapping_add(9_000 + j as u64);
            (spec, compare_rule_vs_optimal(spec, kind, &cfg).map_err(|e| e.to_string()))
        })
        .collect();

    let mut comparison_lines = Vec::new();
    let mut comparison_failures = Vec::new();
    for (spec, outcome) in &comparisons {
        match outcome {
            Ok(rec) => {
                m.write_text(
                    &dir,
                    &format!("trajectories_{}.csv", sanitize(&spec.to_string())),
                    &rec.to_csv(),
                )?;
                comparison_lines.push(ComparisonLine {
                    spec: spec.to_string(),
                    kind: kind.to_string(),
                    j_rule: rec.j_rule,
                    j_tuned: rec.j_tuned,
                    ratio: rec.ratio,
                });
            }
            Err(e) => comparison_failures.push([spec.to_string(), e.clone()]),
        }
    }

    let summary = PipelineSummary {
        seed,
        kind: kind.to_string(),
        mean_reduction_ratio: mean(
            reduction_lines.iter().filter_map(|l| l.ratio_to_reference),
        ),
        reduction: reduction_lines,
        reduction_failures,
        mean_j_pid: mean(tuning_lines.iter().map(|l| l.j_pid)),
        mean_j_fopid: mean(tuning_lines.iter().map(|l| l.j_fopid)),
        tuning: tuning_lines,
        tuning_failures,
        rules: rule_lines,
        mean_comparison_ratio: mean(comparison_lines.iter().map(|l| l.ratio)),
        comparisons: comparison_lines,
        comparison_failures,
    };
    m.write_json(&dir, "summary.json", &summary)?;
    m.finish(&dir)?;

    say!(
        "reduced {}/{} plants (mean J ratio to catalog: {})",
        summary.reduction.len(),
        specs.len(),
        summary.mean_reduction_ratio.map_or("n/a".into(), |r| format!("{r:.4}")),
    );
    say!(
        "tuned {}/{} plants (mean J: pid {}, fopid {})",
        summary.tuning.len(),
        specs.len(),
        summary.mean_j_pid.map_or("n/a".into(), |v| format!("{v:.3}")),
        summary.mean_j_fopid.map_or("n/a".into(), |v| format!("{v:.3}")),
    );
    for rule in &summary.rules {
        say!("{}: MAE = {:.4}, complexity = {}", rule.target, rule.mae, rule.complexity);
    }
    for c in &summary.comparisons {
        say!("{} {}: J_rule/J_tuned = {:.3}", c.spec, c.kind, c.ratio);
    }
    say!("outputs in {}", dir.display());
    Ok(())
}
