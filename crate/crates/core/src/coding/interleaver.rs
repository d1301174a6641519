use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Seeded pseudo-random permutation. `interleave(v)[i] == v[perm[i]]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Interleaver {
    perm: Vec<usize>,
    inverse: Vec<usize>,
}

impl Interleaver {
    /// Fisher-Yates shuffle driven by ChaCha8 seeded with `seed`.
    pub fn new(len: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut perm: Vec<usize> = (0..len).collect();
        for i in (1..len).rev() {
            let j = rng.random_range(0..=i);
            perm.swap(i, j);
        }
        Self::from_permutation(perm)
    }

    pub fn identity(len: usize) -> Self {
        Self::from_permutation((0..len).collect())
    }

    fn from_permutation(perm: Vec<usize>) -> Self {
        let mut inverse = vec![0; perm.len()];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        Self { perm, inverse }
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn interleave<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.perm.len(), "interleaver length mismatch");
        self.perm.iter().map(|&p| v[p]).collect()
    }

    pub fn deinterleave<T: Copy>(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.perm.len(), "interleaver length mismatch");
        self.inverse.iter().map(|&i| v[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn is_a_permutation() {
        let il = Interleaver::new(1000, 7);
        let mut p = il.permutation().to_vec();
        p.sort_unstable();
        assert_eq!(p, (0..1000).collect::<Vec<_>>());
        assert_ne!(il.permutation(), Interleaver::identity(1000).permutation());
    }

    #[test]
    fn seeded() {
        assert_eq!(Interleaver::new(64, 3), Interleaver::new(64, 3));
        assert_ne!(Interleaver::new(64, 3), Interleaver::new(64, 4));
    }

    proptest! {
        #[test]
        fn roundtrip(len in 0usize..300, seed in any::<u64>()) {
            let il = Interleaver::new(len, seed);
            let v: Vec<usize> = (0..len).map(|i| i * 3 + 1).collect();
            prop_assert_eq!(il.deinterleave(&il.interleave(&v)), v.clone());
            prop_assert_eq!(il.interleave(&il.deinterleave(&v)), v);
        }
    }
}
