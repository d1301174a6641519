/// Exact error counters for one detector at one turbo iteration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Metrics {
    pub symbols: u64,
    pub symbol_errors: u64,
    pub bits: u64,
    pub bit_errors: u64,
    pub words: u64,
    pub word_errors: u64,
}

impl Metrics {
    /// Counts one decoded word (`truth` and `decided` are message bits).
    pub fn record_word(&mut self, truth: &[u8], decided: &[u8]) {
        debug_assert_eq!(truth.len(), decided.len());
        let e = truth.iter().zip(decided).filter(|(a, b)| a != b).count() as u64;
        self.bits += truth.len() as u64;
        self.bit_errors += e;
        self.words += 1;
        self.word_errors += u64::from(e > 0);
    }

    /// Counts symbol decisions (indices of whatever symbol unit the caller uses).
    pub fn record_symbols<T: PartialEq>(&mut self, truth: &[T], decided: &[T]) {
        debug_assert_eq!(truth.len(), decided.len());
        self.symbols += truth.len() as u64;
        self.symbol_errors += truth.iter().zip(decided).filter(|(a, b)| a != b).count() as u64;
    }

    pub fn merge(&mut self, other: &Metrics) {
        self.symbols += other.symbols;
        self.symbol_errors += other.symbol_errors;
        self.bits += other.bits;
        self.bit_errors += other.bit_errors;
        self.words += other.words;
        self.word_errors += other.word_errors;
    }

    pub fn ser(&self) -> f64 {
        ratio(self.symbol_errors, self.symbols)
    }

    pub fn ber(&self) -> f64 {
        ratio(self.bit_errors, self.bits)
    }

    pub fn wer(&self) -> f64 {
        ratio(self.word_errors, self.words)
    }

    pub fn ser_stderr(&self) -> f64 {
        wilson_half_width(self.symbol_errors, self.symbols)
    }

    pub fn ber_stderr(&self) -> f64 {
        wilson_half_width(self.bit_errors, self.bits)
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// One-sigma (z = 1) half-width of the Wilson score interval for `k` successes in `n` trials.
pub fn wilson_half_width(k: u64, n: u64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    let p = k as f64 / n;
    (p * (1.0 - p) / n + 1.0 / (4.0 * n * n)).sqrt() / (1.0 + 1.0 / n)
}

/// Wilson score interval `(low, high)` at `z` standard deviations.
pub fn wilson_interval(k: u64, n: u64, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let centre = (p + z2 / (2.0 * nf)) / (1.0 + z2 / nf);
    let half = z * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / (1.0 + z2 / nf);
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverted() {
        let mut m = Metrics::default();
        m.record_word(&[0, 1, 1], &[0, 1, 1]);
        assert_eq!((m.ber(), m.wer()), (0.0, 0.0));
        let mut m = Metrics::default();
        m.record_word(&[0, 1, 1], &[1, 0, 0]);
        assert_eq!(m.ber(), 1.0);
    }

    #[test]
    fn known_pattern() {
        let n_b = 16;
        let truth = vec![0u8; n_b];
        let mut m = Metrics::default();
        for w in 0..10 {
            let mut d = truth.clone();
            if w == 4 {
                d[1] = 1;
                d[5] = 1;
                d[9] = 1;
            }
            m.record_word(&truth, &d);
        }
        assert_eq!(m.ber(), 3.0 / (10.0 * n_b as f64));
        assert_eq!(m.wer(), 0.1);
    }

    #[test]
    fn wilson_contains_estimate() {
        for (k, n) in [(0, 10), (3, 10), (10, 10), (17, 1000)] {
            let (lo, hi) = wilson_interval(k, n, 3.0);
            let p = k as f64 / n as f64;
            assert!(lo <= p + 1e-12 && p <= hi + 1e-12 && lo >= 0.0 && hi <= 1.0);
        }
        let (lo, hi) = wilson_interval(17, 1000, 1.0);
        assert!(((hi - lo) / 2.0 - wilson_half_width(17, 1000)).abs() < 1e-15);
    }
}
