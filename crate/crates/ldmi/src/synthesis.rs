//! Crowd-level user synthesis: neighbor cliques, item coverage values, and
//! weighted maximum-coverage selection of representative synthesized users.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{write_atomic, InteractionLog};
use crate::error::{Error, Result};

/// How behavior overlap between users is scored when forming cliques.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMetric {
    /// Raw intersection size of the distinct-item sets.
    Intersection,
    Jaccard,
}

impl Default for OverlapMetric {
    fn default() -> Self {
        OverlapMetric::Intersection
    }
}

/// A compact synthesized user: the union of behaviors of an anchor user and
/// its most-overlapping neighbors.
#[derive(Debug, Clone, PartialEq)]
pub struct Clique {
    pub anchor: usize,
    /// Members including the anchor (anchor first).
    pub members: Vec<usize>,
    /// Distinct item indices ordered by first timestamp across members.
    pub behavior_union: Vec<usize>,
    /// Parallel to `behavior_union`: how many members engaged each item.
    pub member_count: Vec<usize>,
}

/// The `G` users (anchor included, counted in `G`) with the largest overlap
/// against the anchor; ties broken by smaller user index. Users with zero
/// overlap are never included, so the list may be shorter than `G`.
pub fn neighbor_users(
    log: &InteractionLog,
    anchor: usize,
    clique_size: usize,
    metric: OverlapMetric,
) -> Vec<usize> {
    assert!(clique_size >= 1);
    let anchor_set: std::collections::HashSet<usize> =
        log.sequences[anchor].iter().copied().collect();
    let mut scored: Vec<(f64, usize)> = Vec::new();
    for u in 0..log.n_users {
        if u == anchor {
            continue;
        }
        let mut inter = 0usize;
        let other: std::collections::HashSet<usize> = log.sequences[u].iter().copied().collect();
        for item in &other {
            if anchor_set.contains(item) {
                inter += 1;
            }
        }
        if inter == 0 {
            continue;
        }
        let score = match metric {
            OverlapMetric::Intersection => inter as f64,
            OverlapMetric::Jaccard => {
                inter as f64 / (anchor_set.len() + other.len() - inter) as f64
            }
        };
        scored.push((score, u));
    }
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out = vec![anchor];
    out.extend(scored.iter().take(clique_size - 1).map(|&(_, u)| u));
    out
}

/// One clique per real user, so the coverage instance has `M` rows.
pub fn build_cliques(log: &InteractionLog, clique_size: usize, metric: OverlapMetric) -> Vec<Clique> {
    (0..log.n_users)
        .map(|anchor| {
            let members = neighbor_users(log, anchor, clique_size, metric);
            // (first timestamp, item) per distinct item across members.
            let mut first_seen: std::collections::HashMap<usize, (i64, usize)> =
                std::collections::HashMap::new();
            for &u in &members {
                let mut seen_here: std::collections::HashSet<usize> = Default::default();
                for (pos, &item) in log.sequences[u].iter().enumerate() {
                    let ts = log.timestamps[u][pos];
                    let entry = first_seen.entry(item).or_insert((ts, 0));
                    if ts < entry.0 {
                        entry.0 = ts;
                    }
                    if seen_here.insert(item) {
                        entry.1 += 1;
                    }
                }
            }
            let mut items: Vec<(i64, usize, usize)> = first_seen
                .into_iter()
                .map(|(item, (ts, cnt))| (ts, item, cnt))
                .collect();
            items.sort_unstable();
            Clique {
                anchor,
                members,
                behavior_union: items.iter().map(|&(_, item, _)| item).collect(),
                member_count: items.iter().map(|&(_, _, cnt)| cnt).collect(),
            }
        })
        .collect()
}

/// Coverage value per item: `1 + (#users whose sequence contains the item) /
/// (total interaction count)`. All values lie in (1, 2].
pub fn item_values(log: &InteractionLog) -> Vec<f64> {
    assert!(log.n_events > 0, "item_values requires interactions");
    let mut user_count = vec![0usize; log.n_items];
    for seq in &log.sequences {
        let mut seen: std::collections::HashSet<usize> = Default::default();
        for &item in seq {
            if seen.insert(item) {
                user_count[item] += 1;
            }
        }
    }
    user_count
        .iter()
        .map(|&c| 1.0 + c as f64 / log.n_events as f64)
        .collect()
}

/// Bipartite set/object structure for the weighted maximum coverage problem.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageInstance {
    /// Row i lists the columns (items) covered, sorted ascending.
    pub rows: Vec<Vec<usize>>,
    pub n_cols: usize,
    /// Per-column coverage value.
    pub values: Vec<f64>,
    /// Maximum number of rows to select (Z).
    pub budget: usize,
}

impl CoverageInstance {
    pub fn new(rows: Vec<Vec<usize>>, n_cols: usize, values: Vec<f64>, budget: usize) -> Self {
        assert_eq!(values.len(), n_cols);
        assert!(budget >= 1 && budget <= rows.len().max(1));
        let rows = rows
            .into_iter()
            .map(|mut r| {
                r.sort_unstable();
                r.dedup();
                r
            })
            .collect();
        CoverageInstance {
            rows,
            n_cols,
            values,
            budget,
        }
    }

    pub fn from_cliques(cliques: &[Clique], n_items: usize, values: Vec<f64>, budget: usize) -> Self {
        let rows = cliques.iter().map(|c| c.behavior_union.clone()).collect();
        CoverageInstance::new(rows, n_items, values, budget)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub indicator: Vec<bool>,
    pub chosen: Vec<usize>,
    pub covered_value: f64,
}

/// Total value of columns covered by at least one selected row, evaluated via
/// the indicator formulation (column sums compared against 1).
pub fn coverage_value(indicator: &[bool], instance: &CoverageInstance) -> f64 {
    assert_eq!(indicator.len(), instance.rows.len());
    let mut covered = vec![false; instance.n_cols];
    for (i, row) in instance.rows.iter().enumerate() {
        if indicator[i] {
            for &j in row {
                covered[j] = true;
            }
        }
    }
    let mut total = 0.0;
    for j in 0..instance.n_cols {
        if covered[j] {
            total += instance.values[j];
        }
    }
    total
}

/// Independent evaluator: value of the set union of the selected rows.
pub fn coverage_value_union(chosen: &[usize], instance: &CoverageInstance) -> f64 {
    let union: std::collections::BTreeSet<usize> = chosen
        .iter()
        .flat_map(|&i| instance.rows[i].iter().copied())
        .collect();
    union.iter().map(|&j| instance.values[j]).sum()
}

fn marginal_gain(row: &[usize], covered: &[bool], values: &[f64]) -> f64 {
    let mut gain = 0.0;
    for &j in row {
        if !covered[j] {
            gain += values[j];
        }
    }
    gain
}

fn selection_from_chosen(chosen: Vec<usize>, instance: &CoverageInstance) -> Selection {
    let mut indicator = vec![false; instance.rows.len()];
    for &i in &chosen {
        indicator[i] = true;
    }
    let covered_value = coverage_value(&indicator, instance);
    Selection {
        indicator,
        chosen,
        covered_value,
    }
}

/// Plain greedy: re-evaluates every remaining row each step. Kept as the
/// reference the lazy variant is checked against.
pub fn solve_mcp_naive_greedy(instance: &CoverageInstance) -> Selection {
    let mut covered = vec![false; instance.n_cols];
    let mut chosen = Vec::new();
    let mut used = vec![false; instance.rows.len()];
    for _ in 0..instance.budget.min(instance.rows.len()) {
        let mut best: Option<(f64, usize)> = None;
        for (i, row) in instance.rows.iter().enumerate() {
            if used[i] {
                continue;
            }
            let gain = marginal_gain(row, &covered, &instance.values);
            // Strict > keeps the smallest index on ties.
            if best.map_or(true, |(bg, _)| gain > bg) {
                best = Some((gain, i));
            }
        }
        match best {
            Some((gain, i)) if gain > 0.0 => {
                used[i] = true;
                chosen.push(i);
                for &j in &instance.rows[i] {
                    covered[j] = true;
                }
            }
            _ => break,
        }
    }
    selection_from_chosen(chosen, instance)
}

struct HeapEntry {
    gain: f64,
    row: usize,
    /// Number of selections already made when `gain` was computed.
    stamp: usize,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Max-heap on gain; equal gains pop the smaller row index first.
        self.gain
            .partial_cmp(&other.gain)
            .expect("finite gains")
            .then(other.row.cmp(&self.row))
    }
}

/// Lazy greedy with stale-entry re-evaluation. Submodularity of weighted
/// coverage guarantees cached gains only shrink, so a fresh top entry is the
/// true maximum. Identical output (including tie-breaks) to the naive greedy.
pub fn solve_mcp_greedy(instance: &CoverageInstance) -> Selection {
    let mut covered = vec![false; instance.n_cols];
    let mut heap: BinaryHeap<HeapEntry> = instance
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| HeapEntry {
            gain: marginal_gain(row, &covered, &instance.values),
            row: i,
            stamp: 0,
        })
        .collect();
    let mut chosen = Vec::new();
    while chosen.len() < instance.budget {
        let top = match heap.pop() {
            Some(e) => e,
            None => break,
        };
        if top.stamp < chosen.len() {
            let gain = marginal_gain(&instance.rows[top.row], &covered, &instance.values);
            heap.push(HeapEntry {
                gain,
                row: top.row,
                stamp: chosen.len(),
            });
            continue;
        }
        if top.gain <= 0.0 {
            break;
        }
        // Any equal-gain entry with a smaller row index would have popped
        // before this one, so the naive tie-break is preserved.
        chosen.push(top.row);
        for &j in &instance.rows[top.row] {
            covered[j] = true;
        }
    }
    selection_from_chosen(chosen, instance)
}

pub const EXACT_ROW_LIMIT: usize = 24;

/// Exhaustive optimum over all subsets of size <= Z. Guarded to small
/// instances; used as the test oracle for the greedy solvers.
pub fn solve_mcp_exact(instance: &CoverageInstance) -> Result<Selection> {
    let p = instance.rows.len();
    if p > EXACT_ROW_LIMIT {
        return Err(Error::InstanceTooLarge {
            rows: p,
            limit: EXACT_ROW_LIMIT,
        });
    }
    let z = instance.budget.min(p);
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current: Vec<usize> = Vec::with_capacity(z);
    fn recurse(
        instance: &CoverageInstance,
        start: usize,
        remaining: usize,
        current: &mut Vec<usize>,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        let value = coverage_value_union(current, instance);
        if best.as_ref().map_or(true, |(bv, _)| value > *bv) {
            *best = Some((value, current.clone()));
        }
        if remaining == 0 {
            return;
        }
        for i in start..instance.rows.len() {
            current.push(i);
            recurse(instance, i + 1, remaining - 1, current, best);
            current.pop();
        }
    }
    recurse(instance, 0, z, &mut current, &mut best);
    let (_, chosen) = best.expect("at least the empty selection");
    Ok(selection_from_chosen(chosen, instance))
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Header `P Q Z`, one line of covered column indices per row, then one line
/// of Q weights.
pub fn write_instance(instance: &CoverageInstance, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "{} {} {}", instance.rows.len(), instance.n_cols, instance.budget).unwrap();
    for row in &instance.rows {
        let line: Vec<String> = row.iter().map(|j| j.to_string()).collect();
        writeln!(out, "{}", line.join(" ")).unwrap();
    }
    let weights: Vec<String> = instance.values.iter().map(|w| format!("{w:?}")).collect();
    writeln!(out, "{}", weights.join(" ")).unwrap();
    write_atomic(path, out.as_bytes())
}

pub fn read_instance(path: &Path) -> Result<CoverageInstance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.into(),
        reason: reason.into(),
    };
    let mut lines = text.lines();
    let header: Vec<usize> = lines
        .next()
        .ok_or_else(|| bad("empty instance"))?
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad header"))?;
    if header.len() != 3 {
        return Err(bad("bad header"));
    }
    let (p, q, z) = (header[0], header[1], header[2]);
    let mut rows = Vec::with_capacity(p);
    for _ in 0..p {
        let line = lines.next().ok_or_else(|| bad("missing row"))?;
        let row: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad("bad row"))?;
        if row.iter().any(|&j| j >= q) {
            return Err(bad("column out of range"));
        }
        rows.push(row);
    }
    let values: Vec<f64> = lines
        .next()
        .ok_or_else(|| bad("missing weights"))?
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad weights"))?;
    if values.len() != q {
        return Err(bad("weight count mismatch"));
    }
    Ok(CoverageInstance::new(rows, q, values, z))
}

pub fn write_selection(selection: &Selection, path: &Path) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "covered_value {:?}", selection.covered_value).unwrap();
    let chosen: Vec<String> = selection.chosen.iter().map(|i| i.to_string()).collect();
    writeln!(out, "{}", chosen.join(" ")).unwrap();
    write_atomic(path, out.as_bytes())
}

pub fn read_selection(path: &Path, n_rows: usize) -> Result<Selection> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.into(),
        reason: reason.into(),
    };
    let mut lines = text.lines();
    let covered_value: f64 = lines
        .next()
        .and_then(|l| l.strip_prefix("covered_value "))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| bad("bad selection header"))?;
    let chosen: Vec<usize> = lines
        .next()
        .unwrap_or("")
        .split_whitespace()
        .map(|s| s.parse())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("bad chosen list"))?;
    let mut indicator = vec![false; n_rows];
    for &i in &chosen {
        if i >= n_rows {
            return Err(bad("chosen row out of range"));
        }
        indicator[i] = true;
    }
    Ok(Selection {
        indicator,
        chosen,
        covered_value,
    })
}

/// Default selection budget when unspecified: ceil(5% of M), at least 1.
pub fn default_budget(n_users: usize) -> usize {
    ((n_users as f64 * 0.05).ceil() as usize).max(1)
}
