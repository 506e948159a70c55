use std::fmt;

use super::LossError;

/// Candidate label set `S` over `num_classes` classes, stored as a bitmask.
///
/// A `CandidateSet` is never empty: constructors reject an empty member list.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct CandidateSet {
    num_classes: usize,
    words: Vec<u64>,
}

impl CandidateSet {
    pub fn new<I>(num_classes: usize, members: I) -> Result<Self, LossError>
    where
        I: IntoIterator<Item = usize>,
    {
        if num_classes == 0 {
            return Err(LossError::NoClasses);
        }
        let mut words = vec![0u64; num_classes.div_ceil(64)];
        for class in members {
            if class >= num_classes {
                return Err(LossError::ClassOutOfRange { class, num_classes });
            }
            words[class / 64] |= 1 << (class % 64);
        }
        if words.iter().all(|w| *w == 0) {
            return Err(LossError::EmptyCandidateSet);
        }
        Ok(Self { num_classes, words })
    }

    pub fn singleton(num_classes: usize, class: usize) -> Result<Self, LossError> {
        Self::new(num_classes, [class])
    }

    /// Every class is a candidate (complete ambiguity).
    pub fn full(num_classes: usize) -> Result<Self, LossError> {
        Self::new(num_classes, 0..num_classes)
    }

    /// Builds a set from its characteristic function.
    pub fn from_mask(mask: &[bool]) -> Result<Self, LossError> {
        Self::new(
            mask.len(),
            mask.iter().enumerate().filter(|(_, m)| **m).map(|(i, _)| i),
        )
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn contains(&self, class: usize) -> bool {
        class < self.num_classes && self.words[class / 64] & (1 << (class % 64)) != 0
    }

    /// Number of candidates, `|S|`.
    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Always false; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Candidate classes in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.num_classes).filter(move |&c| self.contains(c))
    }

    pub fn to_mask(&self) -> Vec<bool> {
        (0..self.num_classes).map(|c| self.contains(c)).collect()
    }

    pub fn is_subset(&self, other: &CandidateSet) -> bool {
        self.num_classes == other.num_classes
            && self
                .words
                .iter()
                .zip(&other.words)
                .all(|(a, b)| a & !b == 0)
    }

    /// Applies a class relabeling: class `i` moves to `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, LossError> {
        if perm.len() != self.num_classes {
            return Err(LossError::DimensionMismatch {
                expected: self.num_classes,
                found: perm.len(),
            });
        }
        Self::new(self.num_classes, self.iter().map(|c| perm[c]))
    }
}

impl fmt::Debug for CandidateSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CandidateSet(k={}, ", self.num_classes)?;
        f.debug_set().entries(self.iter()).finish()?;
        write!(f, ")")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_out_of_range() {
        assert_eq!(
            CandidateSet::new(3, std::iter::empty()),
            Err(LossError::EmptyCandidateSet)
        );
        assert_eq!(
            CandidateSet::new(3, [3]),
            Err(LossError::ClassOutOfRange {
                class: 3,
                num_classes: 3
            })
        );
        assert_eq!(CandidateSet::new(0, [0]), Err(LossError::NoClasses));
    }

    #[test]
    fn membership_beyond_one_word() {
        let s = CandidateSet::new(200, [0, 63, 64, 199]).unwrap();
        assert_eq!(s.len(), 4);
        assert!(s.contains(64) && s.contains(199) && !s.contains(65));
        assert_eq!(s.iter().collect::<Vec<_>>(), vec![0, 63, 64, 199]);
        assert!(!s.contains(500));
    }

    #[test]
    fn duplicates_collapse() {
        let s = CandidateSet::new(4, [1, 1, 2]).unwrap();
        assert_eq!(s.len(), 2);
    }

    #[test]
    fn subset_and_mask_round_trip() {
        let small = CandidateSet::new(5, [1, 3]).unwrap();
        let big = CandidateSet::new(5, [0, 1, 3]).unwrap();
        assert!(small.is_subset(&big));
        assert!(!big.is_subset(&small));
        assert_eq!(CandidateSet::from_mask(&big.to_mask()).unwrap(), big);
        assert_eq!(CandidateSet::full(5).unwrap().len(), 5);
    }
}
