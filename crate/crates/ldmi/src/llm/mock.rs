use std::collections::BTreeMap;

use crate::llm::{ClusterSource, InterestCluster, SemanticClustering};

const STOP_WORDS: &[&str] = &[
    "a", "an", "and", "at", "by", "for", "from", "in", "of", "on", "or", "the", "to", "with",
];

/// Deterministic offline substitute for LLM clustering.
///
/// Titles are lowercased and stripped of punctuation and stop-words; two
/// titles are connected when they share at least one token; clusters are the
/// connected components, labeled by the most frequent token in the component
/// (ties broken lexicographically).
pub fn mock_cluster(titles: &[String]) -> SemanticClustering {
    assert!(!titles.is_empty(), "mock_cluster requires a non-empty title list");
    let token_sets: Vec<Vec<String>> = titles.iter().map(|t| tokenize(t)).collect();

    // Union-find over title positions keyed by shared tokens.
    let mut parent: Vec<usize> = (0..titles.len()).collect();
    fn find(parent: &mut Vec<usize>, mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    let mut first_owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (pos, tokens) in token_sets.iter().enumerate() {
        for tok in tokens {
            match first_owner.get(tok.as_str()) {
                Some(&other) => {
                    let (a, b) = (find(&mut parent, pos), find(&mut parent, other));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
                None => {
                    first_owner.insert(tok, pos);
                }
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for pos in 0..titles.len() {
        let root = find(&mut parent, pos);
        components.entry(root).or_default().push(pos);
    }

    let clusters = components
        .into_values()
        .map(|members| {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for &m in &members {
                for tok in &token_sets[m] {
                    *counts.entry(tok).or_default() += 1;
                }
            }
            // Max count, ties broken by lexicographic order (BTreeMap walks
            // keys in order; strict > keeps the first maximum).
            let mut best: Option<(&str, usize)> = None;
            for (tok, &cnt) in &counts {
                if best.map_or(true, |(_, bc)| cnt > bc) {
                    best = Some((tok, cnt));
                }
            }
            let label = best
                .map(|(tok, _)| tok.to_string())
                .unwrap_or_else(|| format!("cluster {}", members[0] + 1));
            InterestCluster { label, members }
        })
        .collect();

    SemanticClustering {
        owner: 0,
        clusters,
        unassigned: Vec::new(),
        source: ClusterSource::Mock,
    }
}

fn tokenize(title: &str) -> Vec<String> {
    let mut tokens: Vec<String> = title
        .to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty() && !STOP_WORDS.contains(t))
        .map(|t| t.to_string())
        .collect();
    tokens.sort();
    tokens.dedup();
    tokens
}
