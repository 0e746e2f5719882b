//! Desk-scale datasets. Every generator is a pure function of its
//! arguments and seed.

mod corpus;
mod graph;

pub use corpus::synthetic_corpus;
pub use graph::{sbm, two_cliques, GraphData, Split};

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::predictor::BaseGraph;
use crate::rl::{Example, ExampleInput};

/// One pointer-task instance. Position 0 holds the query token `2·vocab`,
/// positions `1..N` hold content tokens in `0..vocab`, except the marked
/// position `p` whose token is `vocab + label`. The label is read out at
/// node 0, so a model has to route information from `p` to node 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PointerExample {
    pub tokens: Vec<usize>,
    pub pointer: usize,
    pub label: usize,
}

impl PointerExample {
    /// Input vocabulary: content tokens, their marked copies and the query.
    pub fn input_vocab(vocab: usize) -> usize {
        2 * vocab + 1
    }

    pub fn generate<R: Rng + ?Sized>(n: usize, vocab: usize, rng: &mut R) -> Result<Self> {
        if n < 4 || vocab < 2 {
            return Err(Error::InvalidArgument(format!("pointer task needs N >= 4 and vocab >= 2 (N={n}, vocab={vocab})")));
        }
        let pointer = rng.gen_range(1..n);
        let mut tokens = Vec::with_capacity(n);
        tokens.push(2 * vocab);
        tokens.extend((1..n).map(|_| rng.gen_range(0..vocab)));
        let label = tokens[pointer];
        tokens[pointer] += vocab;
        Ok(Self { tokens, pointer, label })
    }

    /// `pointer<TAB>label<TAB>t0 t1 …`
    pub fn to_line(&self) -> String {
        let toks: Vec<String> = self.tokens.iter().map(|t| format!("{t}")).collect();
        format!("{}\t{}\t{}", self.pointer, self.label, toks.join(" "))
    }

    pub fn from_line(line: &str, vocab: usize) -> Result<Self> {
        let bad = |m: &str| Error::Dataset(format!("pointer line: {m}"));
        let mut parts = line.split('\t');
        let pointer: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("pointer"))?;
        let label: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(|| bad("label"))?;
        let tokens = parts
            .next()
            .ok_or_else(|| bad("tokens"))?
            .split(' ')
            .map(|t| t.parse::<usize>().map_err(|_| bad("token")))
            .collect::<Result<Vec<_>>>()?;
        let ex = Self { tokens, pointer, label };
        ex.check(vocab)?;
        Ok(ex)
    }

    pub fn check(&self, vocab: usize) -> Result<()> {
        let n = self.tokens.len();
        let ok = n >= 4
            && (1..n).contains(&self.pointer)
            && self.label < vocab
            && self.tokens[0] == 2 * vocab
            && self.tokens[self.pointer] == vocab + self.label
            && self.tokens[1..].iter().enumerate().all(|(i, &t)| i + 1 == self.pointer || t < vocab);
        if ok {
            Ok(())
        } else {
            Err(Error::Dataset("inconsistent pointer example".into()))
        }
    }

    pub fn to_example(&self) -> Example {
        Example {
            input: ExampleInput::Tokens(self.tokens.clone()),
            targets: alloc::vec![(0, self.label)],
            base: None,
            salient: Some(self.pointer),
        }
    }
}

/// The `index`-th pointer example of the stream `seed`.
pub fn pointer_example(n: usize, vocab: usize, seed: u64, index: u64) -> Result<PointerExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    PointerExample::generate(n, vocab, &mut rng)
}

/// `count` pointer examples from stream indices `start..start+count`.
pub fn task_pointer(n: usize, vocab: usize, seed: u64, start: u64, count: usize) -> Result<Vec<Example>> {
    (0..count as u64)
        .map(|i| pointer_example(n, vocab, seed, start + i).map(|e| e.to_example()))
        .collect()
}

/// Character-level LM windows over a byte corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct CharLmData {
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
}

/// Splits `corpus` 95/5 by position and cuts each part into windows of
/// `n` input bytes with next-byte targets (stride `n`).
pub fn task_char_lm(corpus: &[u8], n: usize, chain_base: bool) -> Result<CharLmData> {
    if corpus.is_empty() {
        return Err(Error::Dataset("empty corpus".into()));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("context length must be positive".into()));
    }
    let cut = corpus.len() * 95 / 100;
    let base = chain_base.then(|| Arc::new(BaseGraph::chain(n)));
    let windows = |part: &[u8]| -> Vec<Example> {
        let mut out = Vec::new();
        let mut s = 0;
        while s + n < part.len() {
            let w = &part[s..s + n + 1];
            out.push(Example {
                input: ExampleInput::Tokens(w[..n].iter().map(|&b| b as usize).collect()),
                targets: (0..n).map(|i| (i, w[i + 1] as usize)).collect(),
                base: base.clone(),
                salient: None,
            });
            s += n;
        }
        out
    };
    let data = CharLmData {
        train: windows(&corpus[..cut]),
        valid: windows(&corpus[cut..]),
    };
    if data.train.is_empty() || data.valid.is_empty() {
        return Err(Error::Dataset(format!("corpus of {} bytes too short for windows of {n}", corpus.len())));
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_built_pointer_round_trips() {
        let ex = PointerExample {
            tokens: alloc::vec![10, 1, 5 + 3, 0],
            pointer: 2,
            label: 3,
        };
        ex.check(5).unwrap();
        assert_eq!(PointerExample::from_line(&ex.to_line(), 5).unwrap(), ex);
        let mut bad = ex.clone();
        bad.tokens[3] = 7;
        assert!(bad.check(5).is_err());
    }

    #[test]
    fn generated_pointer_examples_are_consistent() {
        for i in 0..50 {
            let ex = pointer_example(16, 4, 3, i).unwrap();
            ex.check(4).unwrap();
            assert!(ex.tokens.iter().all(|&t| t < PointerExample::input_vocab(4)));
            assert_eq!(ex.tokens.iter().filter(|&&t| (4..8).contains(&t)).count(), 1);
        }
    }

    #[test]
    fn pointer_stream_is_deterministic() {
        assert_eq!(pointer_example(8, 4, 1, 7).unwrap(), pointer_example(8, 4, 1, 7).unwrap());
        let a = task_pointer(8, 4, 1, 0, 50).unwrap();
        assert!(a.iter().any(|e| e != &a[0]));
    }

    #[test]
    fn char_windows_predict_next_byte() {
        let corpus: Vec<u8> = b"abcdefghij".repeat(30);
        let d = task_char_lm(&corpus, 4, false).unwrap();
        let ExampleInput::Tokens(t) = &d.train[1].input else { panic!() };
        assert_eq!(t, &[b'e' as usize, b'f' as usize, b'g' as usize, b'h' as usize]);
        assert_eq!(d.train[1].targets[3], (3, b'i' as usize));
        assert!(task_char_lm(&[], 4, false).is_err());
    }
}
