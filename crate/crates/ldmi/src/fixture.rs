//! Deterministic synthetic corpus with planted topic structure, used by the
//! integration tests and the bundled demo pipeline.
//!
//! Items are partitioned into topics; every title starts with a topic token
//! shared by all items of that topic and by nothing else, so the offline
//! clusterer recovers the topics exactly. Each user draws from a fixed pair
//! of topics and, within each topic, mostly from one preferred block of
//! items, giving the collaborative path a signal the popularity ranking
//! cannot see.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::data::RawEvent;

#[derive(Debug, Clone)]
pub struct FixtureSpec {
    pub n_users: usize,
    pub n_items: usize,
    pub n_topics: usize,
    pub topics_per_user: usize,
    /// Preferred item blocks per topic.
    pub blocks_per_topic: usize,
    /// Probability an event comes from the user's preferred block rather
    /// than anywhere in the topic.
    pub block_affinity: f64,
    pub seq_len: usize,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        FixtureSpec {
            n_users: 500,
            n_items: 200,
            n_topics: 4,
            topics_per_user: 2,
            blocks_per_topic: 5,
            block_affinity: 0.7,
            seq_len: 20,
            seed: 7,
        }
    }
}

/// A small corpus that keeps the full pipeline under a second.
pub fn demo_spec(seed: u64) -> FixtureSpec {
    FixtureSpec {
        n_users: 50,
        n_items: 80,
        seed,
        ..FixtureSpec::default()
    }
}

pub fn item_topic(spec: &FixtureSpec, item: usize) -> usize {
    item / (spec.n_items / spec.n_topics)
}

pub fn item_title(spec: &FixtureSpec, item: usize) -> String {
    format!("t{} i{}", item_topic(spec, item), item)
}

/// Generate the event stream. Each user's sequence is duplicate free and
/// timestamps equal positions, so the chronological split keeps generation
/// order. Output is identical for identical specs.
pub fn generate(spec: &FixtureSpec) -> Vec<RawEvent> {
    assert!(spec.n_items % spec.n_topics == 0, "items must divide evenly into topics");
    let per_topic = spec.n_items / spec.n_topics;
    assert!(per_topic % spec.blocks_per_topic == 0, "topic must divide evenly into blocks");
    let block_len = per_topic / spec.blocks_per_topic;
    assert!(spec.topics_per_user <= spec.n_topics);
    assert!(spec.seq_len <= spec.topics_per_user * per_topic, "sequence longer than available items");

    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut events = Vec::with_capacity(spec.n_users * spec.seq_len);
    let mut topic_ids: Vec<usize> = (0..spec.n_topics).collect();
    for user in 0..spec.n_users {
        topic_ids.shuffle(&mut rng);
        let topics = &topic_ids[..spec.topics_per_user];
        let blocks: Vec<usize> = topics.iter().map(|_| rng.gen_range(0..spec.blocks_per_topic)).collect();
        let mut used = vec![false; spec.n_items];
        for t in 0..spec.seq_len {
            let pick = rng.gen_range(0..topics.len());
            let topic = topics[pick];
            let topic_base = topic * per_topic;
            let block_base = topic_base + blocks[pick] * block_len;
            let mut item = None;
            for _ in 0..50 {
                let cand = if rng.gen_bool(spec.block_affinity) {
                    block_base + rng.gen_range(0..block_len)
                } else {
                    topic_base + rng.gen_range(0..per_topic)
                };
                if !used[cand] {
                    item = Some(cand);
                    break;
                }
            }
            // Topic block exhausted; take the first unused item anywhere in
            // the user's topics.
            let item = item.unwrap_or_else(|| {
                topics
                    .iter()
                    .flat_map(|&tp| tp * per_topic..(tp + 1) * per_topic)
                    .find(|&i| !used[i])
                    .expect("seq_len bounded by available items")
            });
            used[item] = true;
            events.push(RawEvent {
                user_key: format!("u{user}"),
                item_key: format!("i{item}"),
                timestamp: t as i64,
                title: item_title(spec, item),
                rating: None,
            });
        }
    }
    events
}

/// Serialize as the JSON-lines ingest format.
pub fn to_jsonl(events: &[RawEvent]) -> String {
    let mut out = String::new();
    for e in events {
        let record = serde_json::json!({
            "user": e.user_key,
            "item": e.item_key,
            "ts": e.timestamp,
            "title": e.title,
        });
        out.push_str(&record.to_string());
        out.push('\n');
    }
    out
}
