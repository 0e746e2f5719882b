use alloc::vec::Vec;
use core::cmp::Ordering;

use super::{finish, BaseGraph, Prepared, Rollout, Sample, StepKind};
use crate::error::{Error, Result};
use crate::real::Real;

struct Hyp<'a, T: Real> {
    ro: Rollout<'a, T>,
    score: T,
    /// Arena index of the last emitted action.
    tail: usize,
}

struct Cand<T> {
    score: T,
    node: usize,
    parent: usize,
    lp: T,
}

/// Beam search over the action sequence. Returns the complete sequence
/// with the highest summed log-probability. Among equal scores the smaller
/// node index wins, then the earlier-expanded parent. `width = 1` is
/// greedy decoding; wider beams also decode greedily and keep the greedy
/// sequence if pruning lost it and it scores higher.
pub fn beam_search<T: Real>(prep: &Prepared<T>, base: &BaseGraph, width: usize) -> Result<Sample<T>> {
    if width == 0 {
        return Err(Error::InvalidArgument("beam width must be at least 1".into()));
    }
    let beam = search(prep, base, width)?;
    if width == 1 {
        return Ok(beam);
    }
    let greedy = search(prep, base, 1)?;
    Ok(if greedy.total_log_prob > beam.total_log_prob { greedy } else { beam })
}

fn search<T: Real>(prep: &Prepared<T>, base: &BaseGraph, width: usize) -> Result<Sample<T>> {
    // arena of (parent, node, log_prob); index 0 is the root
    let mut arena: Vec<(usize, u32, T)> = Vec::new();
    arena.push((usize::MAX, 0, T::zero()));
    let mut beam = Vec::from([Hyp {
        ro: Rollout::new(prep, base),
        score: T::zero(),
        tail: 0,
    }]);
    let mut cands: Vec<Cand<T>> = Vec::new();
    while !beam[0].ro.is_done() {
        let kind = beam[0].ro.advance()?;
        if let StepKind::ForcedOrigin(o) = kind {
            for hyp in &mut beam {
                hyp.ro.advance()?;
                hyp.ro.commit(o)?;
                arena.push((hyp.tail, o as u32, T::zero()));
                hyp.tail = arena.len() - 1;
            }
            continue;
        }
        cands.clear();
        for (pi, hyp) in beam.iter_mut().enumerate() {
            let lps = hyp.ro.log_probs()?;
            for (node, (&lp, &ok)) in lps.iter().zip(hyp.ro.allowed()).enumerate() {
                if ok {
                    cands.push(Cand {
                        score: hyp.score + lp,
                        node,
                        parent: pi,
                        lp,
                    });
                }
            }
        }
        cands.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap_or(Ordering::Equal)
                .then(a.node.cmp(&b.node))
                .then(a.parent.cmp(&b.parent))
        });
        cands.truncate(width);
        let mut uses = alloc::vec![0usize; beam.len()];
        for c in &cands {
            uses[c.parent] += 1;
        }
        let tails: Vec<usize> = beam.iter().map(|h| h.tail).collect();
        let mut old: Vec<Option<Hyp<'_, T>>> = beam.into_iter().map(Some).collect();
        let mut next = Vec::with_capacity(cands.len());
        for c in &cands {
            uses[c.parent] -= 1;
            let mut ro = if uses[c.parent] == 0 {
                old[c.parent].take().expect("parent still owned").ro
            } else {
                old[c.parent].as_ref().expect("parent still owned").ro.clone()
            };
            ro.commit(c.node)?;
            arena.push((tails[c.parent], c.node as u32, c.lp));
            next.push(Hyp {
                ro,
                score: c.score,
                tail: arena.len() - 1,
            });
        }
        beam = next;
    }
    let best = &beam[0];
    let mut actions = Vec::new();
    let mut log_probs = Vec::new();
    let mut i = best.tail;
    while i != 0 {
        let (p, node, lp) = arena[i];
        actions.push(node);
        log_probs.push(lp);
        i = p;
    }
    actions.reverse();
    log_probs.reverse();
    finish(&prep.cfg, actions, log_probs)
}
