//! Partial-view exchange between two neighbors, in the style of
//! Spray/Cyclon. Views are lists of outgoing links.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::protocol::ProcessId;

/// New views for `p` and `q` after `p` initiates an exchange with `q`.
///
/// Each side hands over `ceil(len * fraction)` random entries. A received
/// entry naming the receiver itself is rewritten to name the sender.
/// Entries that would be duplicates or self-links are replaced by the
/// receiver's own handed-over entries, so both view sizes are unchanged.
pub fn exchange<R: Rng>(
    p: ProcessId,
    view_p: &[ProcessId],
    q: ProcessId,
    view_q: &[ProcessId],
    fraction: f64,
    rng: &mut R,
) -> (Vec<ProcessId>, Vec<ProcessId>) {
    let (keep_p, give_p) = split(view_p, fraction, rng);
    let (keep_q, give_q) = split(view_q, fraction, rng);
    let new_p = merge(p, q, keep_p, &give_q, &give_p);
    let new_q = merge(q, p, keep_q, &give_p, &give_q);
    (new_p, new_q)
}

fn split<R: Rng>(view: &[ProcessId], fraction: f64, rng: &mut R) -> (Vec<ProcessId>, Vec<ProcessId>) {
    let mut v = view.to_vec();
    v.shuffle(rng);
    let k = ((v.len() as f64) * fraction).ceil() as usize;
    let give = v.split_off(v.len() - k.min(v.len()));
    (v, give)
}

fn merge(
    me: ProcessId,
    partner: ProcessId,
    keep: Vec<ProcessId>,
    incoming: &[ProcessId],
    handed_over: &[ProcessId],
) -> Vec<ProcessId> {
    let target = keep.len() + handed_over.len();
    let mut view: BTreeSet<ProcessId> = keep.into_iter().collect();
    for &x in incoming {
        let x = if x == me { partner } else { x };
        if view.len() < target && x != me {
            view.insert(x);
        }
    }
    for &x in handed_over {
        if view.len() >= target {
            break;
        }
        view.insert(x);
    }
    view.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn ids(v: &[u64]) -> Vec<ProcessId> {
        v.iter().copied().map(ProcessId).collect()
    }

    #[test]
    fn receiver_reference_maps_to_sender() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (np, nq) = exchange(ProcessId(0), &ids(&[1]), ProcessId(1), &ids(&[0]), 1.0, &mut rng);
        assert_eq!(np, ids(&[1]));
        assert_eq!(nq, ids(&[0]));
    }

    #[test]
    fn degree_sum_preserved_over_many_exchanges() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30u64;
        let mut views: BTreeMap<u64, Vec<ProcessId>> = (0..n)
            .map(|i| {
                let v: Vec<u64> = (1..=4).map(|d| (i + d) % n).collect();
                (i, ids(&v))
            })
            .collect();
        let sizes: Vec<usize> = views.values().map(Vec::len).collect();
        for _ in 0..1000 {
            let p = rng.random_range(0..n);
            let q = views[&p][rng.random_range(0..views[&p].len())].0;
            let (np, nq) = exchange(ProcessId(p), &views[&p], ProcessId(q), &views[&q], 0.5, &mut rng);
            views.insert(p, np);
            views.insert(q, nq);
            for (i, v) in &views {
                assert!(!v.contains(&ProcessId(*i)), "self link at {i}");
                let set: BTreeSet<_> = v.iter().collect();
                assert_eq!(set.len(), v.len(), "duplicate link at {i}");
            }
        }
        let after: Vec<usize> = views.values().map(Vec::len).collect();
        assert_eq!(sizes, after);
    }
}
