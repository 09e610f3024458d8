//! k-permutation counting and streaming enumeration, the corpus candidate
//! generator. Sequences are yielded in lexicographic index order so that
//! downstream class-id assignment is reproducible.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PermutationRequest {
    pub n: u64,
    pub k: u64,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum PermuteError {
    #[error("k = {k} exceeds n = {n}")]
    KExceedsN { n: u64, k: u64 },
    #[error("permutation count for n = {n}, k = {k} overflows 64 bits")]
    Overflow { n: u64, k: u64 },
}

/// n!/(n-k)! via the falling-factorial product n * (n-1) * ... * (n-k+1).
pub fn count_permutations(req: PermutationRequest) -> Result<u64, PermuteError> {
    let PermutationRequest { n, k } = req;
    if k > n {
        return Err(PermuteError::KExceedsN { n, k });
    }
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul(n - i)
            .ok_or(PermuteError::Overflow { n, k })?;
    }
    Ok(acc)
}

/// Streaming iterator over k-permutations of item indices `0..n`, in
/// lexicographic order. Holds O(k) state; no sequence repeats an index.
pub struct KPermutationIndices {
    n: usize,
    k: usize,
    current: Vec<usize>,
    done: bool,
}

impl KPermutationIndices {
    pub fn new(n: usize, k: usize) -> Self {
        KPermutationIndices {
            n,
            k,
            current: Vec::new(),
            done: false,
        }
    }

    /// Smallest index >= `from` not already used in current[..depth].
    fn next_free(&self, depth: usize, from: usize) -> Option<usize> {
        (from..self.n).find(|i| !self.current[..depth].contains(i))
    }
}

impl Iterator for KPermutationIndices {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        if self.current.is_empty() && self.k > 0 {
            // first sequence: 0, 1, ..., k-1
            self.current = (0..self.k).collect();
            return Some(self.current.clone());
        }
        if self.k == 0 {
            // exactly one empty sequence
            self.done = true;
            return Some(Vec::new());
        }
        // advance: bump the deepest position that still has a larger free index
        let mut depth = self.k;
        loop {
            if depth == 0 {
                self.done = true;
                return None;
            }
            depth -= 1;
            let cur = self.current[depth];
            self.current.truncate(depth);
            if let Some(next) = self.next_free(depth, cur + 1) {
                self.current.push(next);
                break;
            }
        }
        // refill the tail with the smallest free indices
        while self.current.len() < self.k {
            let depth = self.current.len();
            let next = self.next_free(depth, 0).expect("free index must exist");
            self.current.push(next);
        }
        Some(self.current.clone())
    }
}

/// Ordered k-sequences without repetition over `items`, lexicographic by
/// item index.
pub fn k_permutations<T: Clone>(
    items: &[T],
    k: usize,
) -> Result<impl Iterator<Item = Vec<T>> + '_, PermuteError> {
    if k > items.len() {
        return Err(PermuteError::KExceedsN {
            n: items.len() as u64,
            k: k as u64,
        });
    }
    Ok(KPermutationIndices::new(items.len(), k)
        .map(move |idx| idx.iter().map(|&i| items[i].clone()).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn count(n: u64, k: u64) -> u64 {
        count_permutations(PermutationRequest { n, k }).unwrap()
    }

    /// Independent oracle: recursive enumeration of all ordered k-tuples
    /// without repetition.
    fn brute_force(n: usize, k: usize) -> Vec<Vec<usize>> {
        fn rec(n: usize, k: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
            if prefix.len() == k {
                out.push(prefix.clone());
                return;
            }
            for i in 0..n {
                if !prefix.contains(&i) {
                    prefix.push(i);
                    rec(n, k, prefix, out);
                    prefix.pop();
                }
            }
        }
        let mut out = Vec::new();
        rec(n, k, &mut Vec::new(), &mut out);
        out
    }

    #[test]
    fn counts_match_reported_corpus_sizes() {
        assert_eq!(count(18, 2), 306);
        assert_eq!(count(18, 3), 4896);
        assert_eq!(count(38, 1), 38);
    }

    #[test]
    fn boundary_counts() {
        assert_eq!(count(5, 0), 1);
        assert_eq!(count(5, 3), 60);
        assert_eq!(count(0, 0), 1);
        for n in 1..10u64 {
            assert_eq!(count(n, 1), n); // nP1 = n
            assert_eq!(count(n, 0), 1);
        }
        assert_eq!(count(6, 6), 720); // nPn = n!
    }

    #[test]
    fn k_greater_than_n_errors() {
        assert_eq!(
            count_permutations(PermutationRequest { n: 3, k: 4 }),
            Err(PermuteError::KExceedsN { n: 3, k: 4 })
        );
        assert!(k_permutations(&[1, 2], 3).is_err());
    }

    #[test]
    fn overflow_is_detected() {
        assert_eq!(
            count_permutations(PermutationRequest { n: 64, k: 64 }),
            Err(PermuteError::Overflow { n: 64, k: 64 })
        );
        // 20! fits, 21! does not
        assert!(count_permutations(PermutationRequest { n: 20, k: 20 }).is_ok());
        assert!(count_permutations(PermutationRequest { n: 21, k: 21 }).is_err());
    }

    #[test]
    fn pairs_of_three_items_in_lexicographic_order() {
        let items = ['a', 'b', 'c'];
        let got: Vec<Vec<char>> = k_permutations(&items, 2).unwrap().collect();
        let expected: Vec<Vec<char>> = vec![
            vec!['a', 'b'],
            vec!['a', 'c'],
            vec!['b', 'a'],
            vec!['b', 'c'],
            vec!['c', 'a'],
            vec!['c', 'b'],
        ];
        assert_eq!(got, expected);
    }

    #[test]
    fn singletons_in_order() {
        let items = [10, 20, 30];
        let got: Vec<Vec<i32>> = k_permutations(&items, 1).unwrap().collect();
        assert_eq!(got, vec![vec![10], vec![20], vec![30]]);
    }

    #[test]
    fn zero_of_zero_is_one_empty_sequence() {
        let items: [u8; 0] = [];
        let got: Vec<Vec<u8>> = k_permutations(&items, 0).unwrap().collect();
        assert_eq!(got, vec![Vec::<u8>::new()]);
    }

    #[test]
    fn exhaustive_match_against_brute_force_for_small_n() {
        for n in 0..=8usize {
            for k in 0..=n {
                let got: Vec<Vec<usize>> = KPermutationIndices::new(n, k).collect();
                let expected = brute_force(n, k);
                assert_eq!(got, expected, "n={n} k={k}");
                assert_eq!(
                    got.len() as u64,
                    count(n as u64, k as u64),
                    "count mismatch n={n} k={k}"
                );
                let distinct: HashSet<&Vec<usize>> = got.iter().collect();
                assert_eq!(distinct.len(), got.len(), "duplicates n={n} k={k}");
                for seq in &got {
                    let set: HashSet<usize> = seq.iter().copied().collect();
                    assert_eq!(set.len(), seq.len(), "repeated item n={n} k={k}");
                }
            }
        }
    }
}
