//! Stage orchestration. Every command reads its inputs from the output
//! directory of the previous stage and writes its own artifacts there, so
//! commands are individually re-runnable and the whole pipeline is
//! reproducible byte for byte under a fixed config.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::config::PipelineConfig;
use crate::data::{
    apply_k_core, build_log, parse_interactions, read_log, read_split_manifest,
    split_chronological, write_atomic, write_log, write_split_manifest, InteractionLog,
    SplitSequences,
};
use crate::error::{Error, Result};
use crate::llm::{
    build_prompt, mock_cluster, parse_clusters, read_clusterings, write_clusterings, LlmClient,
    SemanticClustering,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelParams};
use crate::synthesis::{
    build_cliques, coverage_value, coverage_value_union, default_budget, item_values,
    solve_mcp_greedy, write_instance, write_selection, Clique, CoverageInstance, Selection,
};
use crate::train_eval::{
    evaluate, interest_heatmap, popularity_baseline, train, user_state_for_prefix, MetricsReport,
    SynthUser,
};

pub const LOG_FILE: &str = "log.tsv";
pub const SPLIT_FILE: &str = "split.txt";
pub const INDIVIDUAL_CLUSTERS_FILE: &str = "clusters_individual.jsonl";
pub const CROWD_CLUSTERS_FILE: &str = "clusters_crowd.jsonl";
pub const CLIQUES_FILE: &str = "cliques.txt";
pub const INSTANCE_FILE: &str = "mcp_instance.txt";
pub const SELECTION_FILE: &str = "mcp_selection.txt";
pub const SYNTH_USERS_FILE: &str = "synth_users.txt";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const TRACE_FILE: &str = "loss_trace.jsonl";
pub const TRAIN_STATS_FILE: &str = "train_stats.json";
pub const REPORT_FILE: &str = "report.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnalyzeLevel {
    /// Cluster each real user's truncated history.
    Individual,
    /// Cluster each selected synthesized user's behavior union.
    Crowd,
}

/// Name of the model variant encoded by the ablation flags; used to key
/// metric files so one output directory can hold several runs.
pub fn variant_name(cfg: &PipelineConfig) -> String {
    let t = &cfg.train;
    let mut flags = Vec::new();
    if t.no_sem {
        flags.push("no_sem");
    }
    if t.no_col {
        flags.push("no_col");
    }
    if t.no_com {
        flags.push("no_com");
    }
    if t.no_rep {
        flags.push("no_rep");
    }
    if flags.is_empty() {
        "ldmi".into()
    } else {
        flags.join("+")
    }
}

fn require(cfg: &PipelineConfig, file: &str, produced_by: &str) -> Result<std::path::PathBuf> {
    let path = cfg.out_path(file);
    if !path.is_file() {
        return Err(Error::MissingInput(format!(
            "{} not found; run `{produced_by}` first",
            path.display()
        )));
    }
    Ok(path)
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<()> {
    let input = Path::new(&cfg.data.input);
    let raw = std::fs::read_to_string(input)
        .map_err(|_| Error::MissingInput(format!("interaction file {}", input.display())))?;
    let report = parse_interactions(&raw);
    if report.events.is_empty() {
        return Err(Error::Format {
            path: input.into(),
            reason: format!("no valid interaction records ({} malformed lines)", report.malformed),
        });
    }
    let kept = apply_k_core(&report.events, cfg.data.k_core, cfg.data.k_core_mode);
    if kept.is_empty() {
        return Err(Error::Format {
            path: input.into(),
            reason: format!("k-core filter (k={}) removed every event", cfg.data.k_core),
        });
    }
    let log = build_log(&kept);
    let split = split_chronological(&log, cfg.data.max_len, (cfg.data.train_ratio, cfg.data.valid_ratio));
    write_log(&log, &cfg.out_path(LOG_FILE))?;
    write_split_manifest(&split, &cfg.out_path(SPLIT_FILE))?;
    eprintln!(
        "ingest: {} events ({} malformed skipped), {} users x {} items after {}-core",
        log.n_events, report.malformed, log.n_users, log.n_items, cfg.data.k_core
    );
    Ok(())
}

fn load_stage_inputs(cfg: &PipelineConfig) -> Result<(InteractionLog, SplitSequences)> {
    let log = read_log(&require(cfg, LOG_FILE, "ingest")?)?;
    let split = read_split_manifest(&require(cfg, SPLIT_FILE, "ingest")?)?;
    Ok((log, split))
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

/// Produce one clustering record per owner. Owners already present in the
/// output file are skipped, so an interrupted run resumes where it stopped.
pub fn cmd_analyze(cfg: &PipelineConfig, level: AnalyzeLevel) -> Result<()> {
    let (log, split) = load_stage_inputs(cfg)?;
    let title_lists: Vec<Vec<String>> = match level {
        AnalyzeLevel::Individual => (0..log.n_users)
            .map(|u| split.truncated(&log, u).iter().map(|&i| log.titles[i].clone()).collect())
            .collect(),
        AnalyzeLevel::Crowd => {
            let synth = read_synth_users(&require(cfg, SYNTH_USERS_FILE, "synthesize")?)?;
            synth
                .iter()
                .map(|items| items.iter().map(|&i| log.titles[i].clone()).collect())
                .collect()
        }
    };
    let out_file = match level {
        AnalyzeLevel::Individual => INDIVIDUAL_CLUSTERS_FILE,
        AnalyzeLevel::Crowd => CROWD_CLUSTERS_FILE,
    };
    let out_path = cfg.out_path(out_file);
    let mut records: Vec<SemanticClustering> = if out_path.is_file() {
        read_clusterings(&out_path)?
    } else {
        Vec::new()
    };
    let done: std::collections::HashSet<usize> = records.iter().map(|c| c.owner).collect();

    let client = if cfg.llm.mock {
        None
    } else {
        Some(LlmClient::new(cfg.llm.clone())?)
    };
    let mut network_calls = 0usize;
    let mut exhausted = false;
    for (owner, titles) in title_lists.iter().enumerate() {
        if done.contains(&owner) || titles.is_empty() {
            continue;
        }
        let mut clustering = match &client {
            None => mock_cluster(titles),
            Some(client) => {
                let prompt = build_prompt(titles)?;
                let needs_network = !client.cache().contains(&client.cache_key(&prompt));
                if needs_network && cfg.llm.call_budget > 0 && network_calls >= cfg.llm.call_budget {
                    exhausted = true;
                    break;
                }
                let (raw, was_network) = client.request_clusters(&prompt)?;
                if was_network {
                    network_calls += 1;
                }
                parse_clusters(&raw, titles.len())
            }
        };
        clustering.owner = owner;
        records.push(clustering);
    }
    records.sort_by_key(|c| c.owner);
    write_clusterings(&records, &out_path)?;
    if exhausted {
        return Err(Error::BudgetExhausted { completed: records.len() });
    }
    eprintln!("analyze: {} clustering records in {}", records.len(), out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// synthesize
// ---------------------------------------------------------------------------

/// Item lists of the synthesized users, one line of space-separated item ids
/// per row, in first-interaction order.
pub fn write_synth_users(rows: &[Vec<usize>], path: &Path) -> Result<()> {
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row.iter().map(|i| i.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn read_synth_users(path: &Path) -> Result<Vec<Vec<usize>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in text.lines() {
        let row: std::result::Result<Vec<usize>, _> =
            line.split_whitespace().map(|t| t.parse()).collect();
        rows.push(row.map_err(|e| Error::Format {
            path: path.into(),
            reason: format!("bad item id: {e}"),
        })?);
    }
    Ok(rows)
}

fn write_cliques(cliques: &[Clique], path: &Path) -> Result<()> {
    let mut out = String::new();
    for c in cliques {
        let members: Vec<String> = c.members.iter().map(|m| m.to_string()).collect();
        writeln!(out, "{}", members.join(" ")).unwrap();
    }
    write_atomic(path, out.as_bytes())
}

pub fn cmd_synthesize(cfg: &PipelineConfig) -> Result<()> {
    let (log, split) = load_stage_inputs(cfg)?;
    let values = item_values(&log);
    let budget = if cfg.synthesis.budget > 0 {
        cfg.synthesis.budget
    } else {
        default_budget(log.n_users)
    };

    // Candidate synthesized users: behavior unions of per-anchor cliques, or
    // random item subsets when the collaborative level is ablated.
    let unions: Vec<Vec<usize>> = if cfg.train.no_com {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed ^ 0x5E1E_C7ED_5B5E_7500);
        let all: Vec<usize> = (0..log.n_items).collect();
        (0..log.n_users)
            .map(|u| {
                let want = (split.truncated(&log, u).len() * cfg.synthesis.clique_size).min(log.n_items);
                let mut pool = all.clone();
                pool.shuffle(&mut rng);
                pool.truncate(want.max(1));
                pool
            })
            .collect()
    } else {
        let cliques = build_cliques(&log, cfg.synthesis.clique_size, cfg.synthesis.overlap);
        write_cliques(&cliques, &cfg.out_path(CLIQUES_FILE))?;
        cliques.into_iter().map(|c| c.behavior_union).collect()
    };

    let instance = CoverageInstance::new(
        unions.clone(),
        log.n_items,
        values,
        budget.min(unions.len()),
    );
    let selection = if cfg.train.no_rep {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.train.seed ^ 0x0DD5_E1EC_7104_F00D);
        let mut order: Vec<usize> = (0..instance.rows.len()).collect();
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = order.into_iter().take(instance.budget).collect();
        chosen.sort_unstable();
        let mut indicator = vec![false; instance.rows.len()];
        for &i in &chosen {
            indicator[i] = true;
        }
        let covered_value = coverage_value(&indicator, &instance);
        Selection { indicator, chosen, covered_value }
    } else {
        solve_mcp_greedy(&instance)
    };
    debug_assert_eq!(
        selection.covered_value,
        coverage_value_union(&selection.chosen, &instance)
    );

    let selected_rows: Vec<Vec<usize>> =
        selection.chosen.iter().map(|&i| unions[i].clone()).collect();
    write_instance(&instance, &cfg.out_path(INSTANCE_FILE))?;
    write_selection(&selection, &cfg.out_path(SELECTION_FILE))?;
    write_synth_users(&selected_rows, &cfg.out_path(SYNTH_USERS_FILE))?;
    eprintln!(
        "synthesize: selected {} of {} synthesized users, covered value {:.3}",
        selection.chosen.len(),
        instance.rows.len(),
        selection.covered_value
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train / evaluate / report
// ---------------------------------------------------------------------------

fn load_synth_users(cfg: &PipelineConfig) -> Result<Vec<SynthUser>> {
    let items = read_synth_users(&require(cfg, SYNTH_USERS_FILE, "synthesize")?)?;
    let clusterings = read_clusterings(&require(cfg, CROWD_CLUSTERS_FILE, "analyze --level crowd")?)?;
    Ok(items
        .into_iter()
        .enumerate()
        .map(|(owner, items)| {
            let clusters = clusterings
                .iter()
                .find(|c| c.owner == owner)
                .map(|c| c.clusters.iter().map(|cl| cl.members.clone()).collect())
                .unwrap_or_default();
            SynthUser { items, clusters }
        })
        .collect())
}

pub fn cmd_train(cfg: &PipelineConfig) -> Result<()> {
    let (log, split) = load_stage_inputs(cfg)?;
    let clusterings = read_clusterings(&require(cfg, INDIVIDUAL_CLUSTERS_FILE, "analyze --level individual")?)?;
    let synth = if cfg.train.lambda > 0.0 {
        load_synth_users(cfg)?
    } else {
        Vec::new()
    };
    let (params, trace, stats) = train(&log, &split, &clusterings, &synth, &cfg.train)?;
    save_checkpoint(&params, &cfg.out_path(CHECKPOINT_FILE))?;
    let mut trace_text = String::new();
    for step in &trace {
        trace_text.push_str(&serde_json::to_string(step).expect("trace serializes"));
        trace_text.push('\n');
    }
    write_atomic(&cfg.out_path(TRACE_FILE), trace_text.as_bytes())?;
    write_atomic(
        &cfg.out_path(TRAIN_STATS_FILE),
        serde_json::to_string_pretty(&stats).expect("stats serialize").as_bytes(),
    )?;
    eprintln!(
        "train: {} iterations, {} contrastive updates, best valid recall@20 {:.4} ({:.1}s)",
        stats.iterations, stats.cst_updates, stats.best_valid_recall, stats.runtime_secs
    );
    Ok(())
}

pub fn metrics_json_file(variant: &str) -> String {
    format!("metrics_{variant}.json")
}

fn metrics_table(variant: &str, report: &MetricsReport) -> String {
    let mut out = String::new();
    writeln!(out, "{:<12} {:>8} {:>8} {:>8}", "variant", "recall", "ndcg", "hit_rate").unwrap();
    for s in &report.summaries {
        writeln!(
            out,
            "{:<12} {:>8.4} {:>8.4} {:>8.4}   @{} ({} users)",
            variant, s.recall, s.ndcg, s.hit_rate, s.cutoff, s.n_users
        )
        .unwrap();
    }
    out
}

/// Metric artifacts: a machine-readable JSON document (summaries plus one
/// record per user per cutoff; no timing, so reruns are byte-identical) and
/// a human-readable table. Timing goes to stderr only.
fn write_metrics(cfg: &PipelineConfig, variant: &str, report: &MetricsReport) -> Result<()> {
    let doc = serde_json::json!({
        "variant": variant,
        "summaries": report.summaries,
        "per_user": report.per_user,
    });
    write_atomic(
        &cfg.out_path(&metrics_json_file(variant)),
        serde_json::to_string_pretty(&doc).expect("metrics serialize").as_bytes(),
    )?;
    write_atomic(
        &cfg.out_path(&format!("metrics_{variant}.txt")),
        metrics_table(variant, report).as_bytes(),
    )
}

pub const EVAL_CUTOFFS: &[usize] = &[20, 50];
const HEATMAP_USERS: usize = 5;

pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<()> {
    let (log, split) = load_stage_inputs(cfg)?;
    let clusterings = read_clusterings(&require(cfg, INDIVIDUAL_CLUSTERS_FILE, "analyze --level individual")?)?;
    let params = load_checkpoint(&require(cfg, CHECKPOINT_FILE, "train")?)?;
    let variant = variant_name(cfg);

    let report = evaluate(&params, &log, &split, &clusterings, &cfg.train, EVAL_CUTOFFS);
    write_metrics(cfg, &variant, &report)?;
    let pop = popularity_baseline(&log, &split, EVAL_CUTOFFS);
    write_metrics(cfg, "popularity", &pop)?;
    write_heatmaps(cfg, &params, &log, &split, &clusterings, &variant)?;
    eprintln!(
        "evaluate [{variant}]: recall@20 {:.4} (popularity {:.4}), {:.1}s",
        report.summary(20).map_or(0.0, |s| s.recall),
        pop.summary(20).map_or(0.0, |s| s.recall),
        report.runtime_secs
    );
    Ok(())
}

/// Interest-item cosine grids for the first few evaluated users, one TSV per
/// user: K rows, one column per prefix item.
fn write_heatmaps(
    cfg: &PipelineConfig,
    params: &ModelParams,
    log: &InteractionLog,
    split: &SplitSequences,
    clusterings: &[SemanticClustering],
    variant: &str,
) -> Result<()> {
    let mut written = 0;
    for s in &split.splits {
        if written == HEATMAP_USERS {
            break;
        }
        let prefix_len = s.n_train + s.n_valid;
        if s.n_test == 0 || prefix_len == 0 {
            continue;
        }
        let truncated = split.truncated(log, s.user);
        let prefix = &truncated[..prefix_len];
        let clustering = clusterings.iter().find(|c| c.owner == s.user);
        let state = user_state_for_prefix(params, prefix, clustering, &cfg.train, s.user);
        let grid = interest_heatmap(params, &state);
        let mut out = String::new();
        for row in grid.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(out, "{}", cells.join("\t")).unwrap();
        }
        write_atomic(
            &cfg.out_path(&format!("heatmap_{variant}_user{}.tsv", s.user)),
            out.as_bytes(),
        )?;
        written += 1;
    }
    Ok(())
}

/// Render a comparison table over every metrics JSON present in the output
/// directory (the current variant, the popularity baseline, and any ablation
/// runs that share the directory).
pub fn cmd_report(cfg: &PipelineConfig) -> Result<String> {
    let dir = Path::new(&cfg.out_dir);
    let mut entries: Vec<(String, serde_json::Value)> = Vec::new();
    let listing = std::fs::read_dir(dir)
        .map_err(|_| Error::MissingInput(format!("output directory {}; run `evaluate` first", dir.display())))?;
    let mut names: Vec<String> = listing
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("metrics_") && n.ends_with(".json"))
        .collect();
    names.sort();
    for name in names {
        let path = dir.join(&name);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Format {
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let variant = doc["variant"].as_str().unwrap_or("?").to_string();
        entries.push((variant, doc));
    }
    if entries.is_empty() {
        return Err(Error::MissingInput("no metrics files; run `evaluate` first".into()));
    }

    let mut out = String::new();
    write!(out, "{:<14}", "variant").unwrap();
    for n in EVAL_CUTOFFS {
        write!(out, " {:>8} {:>8} {:>8}", format!("R@{n}"), format!("N@{n}"), format!("H@{n}")).unwrap();
    }
    out.push('\n');
    for (variant, doc) in &entries {
        write!(out, "{variant:<14}").unwrap();
        for n in EVAL_CUTOFFS {
            let s = doc["summaries"]
                .as_array()
                .and_then(|a| a.iter().find(|s| s["cutoff"] == *n));
            for key in ["recall", "ndcg", "hit_rate"] {
                let v = s.and_then(|s| s[key].as_f64()).unwrap_or(f64::NAN);
                write!(out, " {v:>8.4}").unwrap();
            }
        }
        out.push('\n');
    }
    write_atomic(&cfg.out_path(REPORT_FILE), out.as_bytes())?;
    Ok(out)
}

/// Run every stage in order with the offline clusterer. Used by the tests;
/// the CLI invokes the individual commands.
pub fn run_all(cfg: &PipelineConfig) -> Result<String> {
    cmd_ingest(cfg)?;
    cmd_analyze(cfg, AnalyzeLevel::Individual)?;
    cmd_synthesize(cfg)?;
    if cfg.train.lambda > 0.0 {
        cmd_analyze(cfg, AnalyzeLevel::Crowd)?;
    }
    cmd_train(cfg)?;
    cmd_evaluate(cfg)?;
    cmd_report(cfg)
}
