use alloc::string::String;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const WORDS: &[&str] = &[
    "the", "of", "and", "to", "in", "a", "is", "that", "for", "it", "as", "was", "with", "be", "by", "on", "not", "he",
    "this", "are", "or", "his", "from", "at", "which", "but", "have", "an", "had", "they", "you", "were", "their", "one",
    "all", "we", "can", "her", "has", "there", "been", "if", "more", "when", "will", "would", "who", "so", "no", "river",
    "city", "north", "south", "water", "light", "stone", "house", "garden", "road", "market", "winter", "summer",
    "language", "music", "number", "system", "history", "people", "church", "station", "island", "mountain", "forest",
    "school", "village", "letter", "paper", "engine", "century", "between", "during", "against", "without", "under",
    "several", "early", "small", "large", "old", "new", "first", "second", "other", "many", "most", "some", "built",
    "called", "known", "found", "made", "used", "became", "named", "began", "wrote", "moved", "opened", "closed",
];

/// Pseudo-English text of exactly `bytes` bytes: sentences drawn from a
/// seeded first-order word chain with sparse, skewed transitions.
pub fn synthetic_corpus(bytes: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = WORDS.len();
    let successors: Vec<Vec<usize>> = (0..w).map(|_| (0..6).map(|_| rng.gen_range(0..w)).collect()).collect();
    let mut out = String::with_capacity(bytes + 64);
    let mut word = rng.gen_range(0..w);
    while out.len() < bytes {
        let len = rng.gen_range(4..14);
        for k in 0..len {
            let text = WORDS[word];
            if k == 0 {
                let mut cs = text.chars();
                if let Some(c) = cs.next() {
                    out.push(c.to_ascii_uppercase());
                    out.push_str(cs.as_str());
                }
            } else {
                out.push(' ');
                out.push_str(text);
            }
            // skewed choice among this word's successors
            let r: f64 = rng.gen();
            let idx = ((r * r * r) * 6.0) as usize;
            word = if rng.gen_bool(0.1) { rng.gen_range(0..w) } else { successors[word][idx.min(5)] };
        }
        out.push_str(if rng.gen_bool(0.1) { ".\n" } else { ". " });
    }
    let mut v = out.into_bytes();
    v.truncate(bytes);
    v
}
