//! Regenerates the synthetic corpora under `data/`.
//!
//! ```text
//! cargo run -p flusense --example gen_synthetic -- crates/core/data
//! ```

use std::collections::BTreeMap;
use std::path::PathBuf;

use chrono::{DateTime, Duration, TimeZone, Utc};
use flusense::corpus::{serialize_corpus, AnnotatedMessage, Category, CorpusFormat, Message, Polarity};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FILLER: &[&str] = &[
    "today", "really", "people", "news", "season", "week", "again", "morning", "everyone", "just", "think", "about",
    "this", "that", "they", "said", "going", "coffee", "train", "office", "weather", "rain", "music", "game", "tonight",
    "friends", "family", "video", "story", "read", "watch", "town", "city", "school", "lunch", "dinner", "phone",
    "email", "later", "maybe", "pretty", "crazy", "funny", "weird", "nice", "long", "short", "report", "article",
    "talk", "radio", "tv", "update", "look", "seems", "heard", "cases", "numbers", "flu",
];

/// Marker phrases that only ever appear in positives of their category.
const MARKERS: [(Category, &str); 5] = [
    (Category::A, "stayed home avoiding crowds"),
    (Category::I, "washed hands sanitizer"),
    (Category::P, "got vaccinated jab"),
    (Category::W, "wearing surgical facemask"),
    (Category::S, "i have flu feverish"),
];

fn timestamp(rng: &mut ChaCha8Rng) -> DateTime<Utc> {
    let start = Utc.with_ymd_and_hms(2009, 11, 15, 0, 0, 0).unwrap();
    start + Duration::seconds(rng.random_range(0..120 * 24 * 3600))
}

fn filler(rng: &mut ChaCha8Rng) -> Vec<String> {
    let n = rng.random_range(5..10);
    (0..n).map(|_| FILLER.choose(rng).unwrap().to_string()).collect()
}

/// Every message is labeled for all five categories; each category is
/// positive independently with probability 0.3 and signalled by its marker.
fn separable(rng: &mut ChaCha8Rng, n: usize) -> Vec<AnnotatedMessage> {
    (0..n)
        .map(|i| {
            let mut words = filler(rng);
            let mut labels = BTreeMap::new();
            for (cat, marker) in MARKERS {
                let pos = rng.random_bool(0.3);
                if pos {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, marker.to_string());
                }
                labels.insert(cat, Polarity::from_bool(pos));
            }
            AnnotatedMessage {
                message: Message::new(format!("sep{i:03}"), timestamp(rng), words.join(" ")),
                labels,
            }
        })
        .collect()
}

/// Self-diagnosis only, 8 negatives per positive. The signal words are
/// noisy: positives carry each with probability 0.5, negatives with 0.08.
fn imbalanced(rng: &mut ChaCha8Rng, positives: usize) -> Vec<AnnotatedMessage> {
    let signal = ["fever", "aching", "chills", "bedridden"];
    let mut pols: Vec<bool> = std::iter::repeat_n(true, positives)
        .chain(std::iter::repeat_n(false, positives * 8))
        .collect();
    pols.shuffle(rng);
    pols.into_iter()
        .enumerate()
        .map(|(i, pos)| {
            let mut words = filler(rng);
            let p = if pos { 0.5 } else { 0.08 };
            for s in signal {
                if rng.random_bool(p) {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, s.to_string());
                }
            }
            let mut labels = BTreeMap::new();
            labels.insert(Category::S, Polarity::from_bool(pos));
            AnnotatedMessage {
                message: Message::new(format!("imb{i:03}"), timestamp(rng), words.join(" ")),
                labels,
            }
        })
        .collect()
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/data".into()));
    let mut rng = ChaCha8Rng::seed_from_u64(20091115);
    let sep = separable(&mut rng, 200);
    let mut rng = ChaCha8Rng::seed_from_u64(20100105);
    let imb = imbalanced(&mut rng, 40);
    for (name, msgs, seed) in [
        ("synthetic_separable.jsonl", &sep, 20091115),
        ("synthetic_imbalanced.jsonl", &imb, 20100105),
    ] {
        let body = serialize_corpus(msgs, CorpusFormat::Jsonl);
        let text = format!("# generated by examples/gen_synthetic.rs seed={seed}\n{body}");
        std::fs::write(dir.join(name), text).expect("write corpus");
    }
}
