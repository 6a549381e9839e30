//! Minimum-edit-distance alignment and the phoneme substitution rate.

use serde::Serialize;

use crate::error::{Error, Result};

/// One step of an alignment, with indices into the reference (`r`) and the
/// hypothesis (`h`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Aligned {
    Match { r: usize, h: usize },
    Substitution { r: usize, h: usize },
    Deletion { r: usize },
    Insertion { h: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct AlignmentResult {
    pub matches: usize,
    pub substitutions: usize,
    pub deletions: usize,
    pub insertions: usize,
    pub pairs: Vec<Aligned>,
}

impl AlignmentResult {
    pub fn edit_distance(&self) -> usize {
        self.substitutions + self.deletions + self.insertions
    }
}

/// Levenshtein alignment with unit costs.
///
/// Among equally cheap alignments the backtrace, walking from the end of both
/// sequences, prefers match, then substitution, then deletion, then
/// insertion, so the result is fully determined by the inputs.
pub fn align<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> AlignmentResult {
    let (n, m) = (reference.len(), hypothesis.len());
    let w = m + 1;
    let mut cost = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        cost[j] = j;
    }
    for i in 1..=n {
        cost[i * w] = i;
        for j in 1..=m {
            let diag = cost[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != hypothesis[j - 1]);
            let up = cost[(i - 1) * w + j] + 1;
            let left = cost[i * w + j - 1] + 1;
            cost[i * w + j] = diag.min(up).min(left);
        }
    }

    let mut out = AlignmentResult::default();
    let (mut i, mut j) = (n, m);
    while i > 0 || j > 0 {
        let here = cost[i * w + j];
        if i > 0 && j > 0 {
            let same = reference[i - 1] == hypothesis[j - 1];
            if cost[(i - 1) * w + j - 1] + usize::from(!same) == here {
                i -= 1;
                j -= 1;
                if same {
                    out.matches += 1;
                    out.pairs.push(Aligned::Match { r: i, h: j });
                } else {
                    out.substitutions += 1;
                    out.pairs.push(Aligned::Substitution { r: i, h: j });
                }
                continue;
            }
        }
        if i > 0 && cost[(i - 1) * w + j] + 1 == here {
            i -= 1;
            out.deletions += 1;
            out.pairs.push(Aligned::Deletion { r: i });
        } else {
            j -= 1;
            out.insertions += 1;
            out.pairs.push(Aligned::Insertion { h: j });
        }
    }
    out.pairs.reverse();
    out
}

/// Percentage of reference phonemes that the hypothesis replaces by a
/// different phoneme. Deleted and inserted phonemes do not count.
pub fn psr<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::InvalidInput("phoneme substitution rate needs a non-empty reference".into()));
    }
    let a = align(reference, hypothesis);
    Ok(100.0 * a.substitutions as f64 / reference.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Top-down memoized edit distance, written independently of the table fill.
    fn recursive_distance(a: &[u8], b: &[u8]) -> usize {
        fn go(a: &[u8], b: &[u8], memo: &mut Vec<Option<usize>>, w: usize) -> usize {
            let key = a.len() * w + b.len();
            if let Some(d) = memo[key] {
                return d;
            }
            let d = match (a.split_last(), b.split_last()) {
                (None, _) => b.len(),
                (_, None) => a.len(),
                (Some((x, ra)), Some((y, rb))) => {
                    let sub = go(ra, rb, memo, w) + usize::from(x != y);
                    sub.min(go(ra, b, memo, w) + 1).min(go(a, rb, memo, w) + 1)
                }
            };
            memo[key] = Some(d);
            d
        }
        let w = b.len() + 1;
        go(a, b, &mut vec![None; (a.len() + 1) * w], w)
    }

    #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
    enum Op {
        Match,
        Sub,
        Del,
        Ins,
    }

    /// Every alignment as an op list, by exhaustive expansion.
    fn all_alignments(a: &[u8], b: &[u8]) -> Vec<Vec<Op>> {
        if a.is_empty() && b.is_empty() {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        if !a.is_empty() && !b.is_empty() {
            let op = if a[0] == b[0] { Op::Match } else { Op::Sub };
            for mut rest in all_alignments(&a[1..], &b[1..]) {
                rest.insert(0, op);
                out.push(rest);
            }
        }
        if !a.is_empty() {
            for mut rest in all_alignments(&a[1..], b) {
                rest.insert(0, Op::Del);
                out.push(rest);
            }
        }
        if !b.is_empty() {
            for mut rest in all_alignments(a, &b[1..]) {
                rest.insert(0, Op::Ins);
                out.push(rest);
            }
        }
        out
    }

    /// The cheapest alignment whose op list, read from the end, is smallest
    /// under match < substitution < deletion < insertion.
    fn preferred_alignment(a: &[u8], b: &[u8]) -> Vec<Op> {
        let cost = |ops: &Vec<Op>| ops.iter().filter(|&&o| o != Op::Match).count();
        let all = all_alignments(a, b);
        let best = all.iter().map(cost).min().unwrap();
        all.into_iter()
            .filter(|o| cost(o) == best)
            .min_by(|x, y| x.iter().rev().cmp(y.iter().rev()))
            .unwrap()
    }

    fn ops_of(a: &AlignmentResult) -> Vec<Op> {
        a.pairs
            .iter()
            .map(|p| match p {
                Aligned::Match { .. } => Op::Match,
                Aligned::Substitution { .. } => Op::Sub,
                Aligned::Deletion { .. } => Op::Del,
                Aligned::Insertion { .. } => Op::Ins,
            })
            .collect()
    }

    #[test]
    fn identical_sequences_align_without_edits() {
        let a = align(&[1, 2, 3], &[1, 2, 3]);
        assert_eq!((a.matches, a.substitutions, a.insertions, a.deletions), (3, 0, 0, 0));
    }

    #[test]
    fn single_substitution() {
        let a = align(&["p1", "p2", "p3", "p4"], &["p1", "q", "p3", "p4"]);
        assert_eq!((a.substitutions, a.deletions, a.insertions), (1, 0, 0));
        assert_eq!(psr(&["p1", "p2", "p3", "p4"], &["p1", "q", "p3", "p4"]).unwrap(), 25.0);
    }

    #[test]
    fn single_deletion() {
        let a = align(&["p1", "p2"], &["p1"]);
        assert_eq!((a.substitutions, a.deletions, a.insertions), (0, 1, 0));
    }

    #[test]
    fn empty_hypothesis_has_no_substitutions() {
        assert_eq!(psr(&[1, 2, 3], &[]).unwrap(), 0.0);
        assert!(psr::<u32>(&[], &[1]).is_err());
    }

    #[test]
    fn tie_break_prefers_substitution_over_indels() {
        // "ab" -> "ba": two substitutions or a deletion plus an insertion
        // both cost 2; the backtrace takes the substitutions.
        let a = align(&[0, 1], &[1, 0]);
        assert_eq!((a.substitutions, a.deletions, a.insertions), (2, 0, 0));
    }

    #[test]
    fn pair_indices_are_consistent() {
        let (r, h) = ([0u8, 1, 2, 2, 1], [1u8, 2, 0, 1]);
        let a = align(&r, &h);
        for p in &a.pairs {
            match *p {
                Aligned::Match { r: i, h: j } => assert_eq!(r[i], h[j]),
                Aligned::Substitution { r: i, h: j } => assert_ne!(r[i], h[j]),
                _ => {}
            }
        }
    }

    #[test]
    fn distance_matches_recursive_oracle_exhaustively_up_to_length_four() {
        let seqs: Vec<Vec<u8>> = (0..=4)
            .flat_map(|len| {
                (0..3usize.pow(len as u32)).map(move |mut code| {
                    (0..len)
                        .map(|_| {
                            let s = (code % 3) as u8;
                            code /= 3;
                            s
                        })
                        .collect()
                })
            })
            .collect();
        for a in &seqs {
            for b in &seqs {
                assert_eq!(align(a, b).edit_distance(), recursive_distance(a, b), "{a:?} {b:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn count_identities(r in proptest::collection::vec(0u8..4, 0..12), h in proptest::collection::vec(0u8..4, 0..12)) {
            let a = align(&r, &h);
            prop_assert_eq!(a.matches + a.substitutions + a.deletions, r.len());
            prop_assert_eq!(a.matches + a.substitutions + a.insertions, h.len());
            prop_assert_eq!(a.pairs.len(), a.matches + a.substitutions + a.deletions + a.insertions);
        }

        #[test]
        fn backtrace_follows_the_documented_preference(
            r in proptest::collection::vec(0u8..3, 0..5),
            h in proptest::collection::vec(0u8..3, 0..5),
        ) {
            prop_assert_eq!(ops_of(&align(&r, &h)), preferred_alignment(&r, &h));
        }

        #[test]
        fn psr_bounds_and_suffix_invariance(
            r in proptest::collection::vec(0u8..4, 1..10),
            h in proptest::collection::vec(0u8..4, 0..10),
            suffix in proptest::collection::vec(0u8..4, 0..5),
        ) {
            let p = psr(&r, &h).unwrap();
            prop_assert!((0.0..=100.0).contains(&p));
            prop_assert_eq!(psr(&r, &r).unwrap(), 0.0);
            let (mut r2, mut h2) = (r.clone(), h.clone());
            r2.extend_from_slice(&suffix);
            h2.extend_from_slice(&suffix);
            // The substitution count is unchanged; the percentage only
            // rescales by the longer reference.
            prop_assert_eq!(align(&r2, &h2).substitutions, align(&r, &h).substitutions);
            let scaled = psr(&r2, &h2).unwrap() * r2.len() as f64;
            prop_assert!((scaled - p * r.len() as f64).abs() < 1e-9);
        }
    }
}
