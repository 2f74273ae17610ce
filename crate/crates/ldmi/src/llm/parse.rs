use serde_json::Value;

use crate::llm::{ClusterSource, InterestCluster, SemanticClustering};

/// Extract the first machine-readable cluster block from a raw LLM response.
///
/// Item numbers outside `[1, n_items]` are dropped; clusters that become
/// empty are removed; positions referenced by no cluster are recorded as
/// unassigned. If no parsable block exists the result is a single fallback
/// cluster containing all items, so this function is total.
pub fn parse_clusters(raw: &str, n_items: usize) -> SemanticClustering {
    assert!(n_items >= 1);
    for block in candidate_blocks(raw) {
        if let Some(clusters) = parse_block(block, n_items) {
            let mut seen = vec![false; n_items];
            for c in &clusters {
                for &m in &c.members {
                    seen[m] = true;
                }
            }
            let unassigned = (0..n_items).filter(|&p| !seen[p]).collect();
            return SemanticClustering {
                owner: 0,
                clusters,
                unassigned,
                source: ClusterSource::Llm,
            };
        }
    }
    SemanticClustering {
        owner: 0,
        clusters: vec![InterestCluster {
            label: "all items".into(),
            members: (0..n_items).collect(),
        }],
        unassigned: Vec::new(),
        source: ClusterSource::Fallback,
    }
}

/// Balanced `{...}` spans in order of appearance, outermost first.
fn candidate_blocks(raw: &str) -> Vec<&str> {
    let bytes = raw.as_bytes();
    let mut blocks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'{' {
            if let Some(end) = matching_brace(raw, i) {
                blocks.push(&raw[i..=end]);
                // Also consider nested objects if the outer one fails.
                i += 1;
                continue;
            }
        }
        i += 1;
    }
    blocks
}

fn matching_brace(s: &str, start: usize) -> Option<usize> {
    let bytes = s.as_bytes();
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate().skip(start) {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => depth += 1,
            b'}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(i);
                }
            }
            _ => {}
        }
    }
    None
}

/// A block parses if it is a JSON object with at least one array value
/// containing at least one in-range item number.
fn parse_block(block: &str, n_items: usize) -> Option<Vec<InterestCluster>> {
    let value: Value = serde_json::from_str(block).ok()?;
    let obj = value.as_object()?;
    let mut clusters = Vec::new();
    for (label, members) in obj {
        let arr = match members.as_array() {
            Some(a) => a,
            None => continue,
        };
        let mut positions: Vec<usize> = arr
            .iter()
            .filter_map(|v| v.as_i64())
            .filter(|&n| n >= 1 && n <= n_items as i64)
            .map(|n| (n - 1) as usize)
            .collect();
        positions.sort_unstable();
        positions.dedup();
        if !positions.is_empty() {
            clusters.push(InterestCluster {
                label: label.clone(),
                members: positions,
            });
        }
    }
    if clusters.is_empty() {
        None
    } else {
        Some(clusters)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn direct_mapping() {
        let c = parse_clusters(r#"{"Hair Care":[1,2],"Board Games":[3]}"#, 3);
        assert_eq!(c.source, ClusterSource::Llm);
        assert_eq!(c.clusters.len(), 2);
        assert_eq!(c.clusters[0].label, "Hair Care");
        assert_eq!(c.clusters[0].members, vec![0, 1]);
        assert_eq!(c.clusters[1].members, vec![2]);
        assert!(c.unassigned.is_empty());
    }

    #[test]
    fn out_of_range_dropped() {
        let c = parse_clusters(r#"{"A":[1,5]}"#, 3);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].members, vec![0]);
        assert_eq!(c.unassigned, vec![1, 2]);
    }

    #[test]
    fn free_text_falls_back_to_single_cluster() {
        let c = parse_clusters("I think the user likes gardening and chess.", 4);
        assert_eq!(c.source, ClusterSource::Fallback);
        assert_eq!(c.clusters.len(), 1);
        assert_eq!(c.clusters[0].members, vec![0, 1, 2, 3]);
    }

    #[test]
    fn block_embedded_in_prose() {
        let raw = "Sure! Here is the grouping:\n```json\n{\"X\": [2], \"Y\": [1]}\n```\nHope that helps.";
        let c = parse_clusters(raw, 2);
        assert_eq!(c.source, ClusterSource::Llm);
        assert_eq!(c.clusters.len(), 2);
    }

    #[test]
    fn all_empty_clusters_fall_back() {
        let c = parse_clusters(r#"{"A":[], "B":[99]}"#, 3);
        assert_eq!(c.source, ClusterSource::Fallback);
    }

    proptest! {
        /// Total on arbitrary bytes: always a valid clustering.
        #[test]
        fn total_on_random_input(raw in "\\PC*", n in 1usize..20) {
            let c = parse_clusters(&raw, n);
            prop_assert!(!c.clusters.is_empty());
            for cl in &c.clusters {
                prop_assert!(!cl.members.is_empty());
                for &m in &cl.members {
                    prop_assert!(m < n);
                }
            }
            for &u in &c.unassigned {
                prop_assert!(u < n);
            }
        }
    }
}
