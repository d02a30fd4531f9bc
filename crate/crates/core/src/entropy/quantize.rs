use super::laplace;
use crate::error::{invalid, Result};

pub const FREQ_BITS: u32 = 16;
pub const FREQ_TOTAL: u32 = 1 << FREQ_BITS;
/// Largest alphabet a table can hold while keeping meaningful resolution.
pub const MAX_ALPHABET: usize = 1 << 12;

/// Integer frequency table over the symbols `v_min..=v_max`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedDistribution {
    v_min: i32,
    /// `cum[i]` is the total frequency of symbols below `v_min + i`;
    /// `cum[len] == FREQ_TOTAL`.
    cum: Vec<u32>,
}

impl QuantizedDistribution {
    pub fn from_frequencies(v_min: i32, freqs: &[u32]) -> Result<Self> {
        if freqs.is_empty() {
            return invalid("empty alphabet");
        }
        if freqs.contains(&0) {
            return invalid("zero-frequency symbol");
        }
        let mut cum = Vec::with_capacity(freqs.len() + 1);
        let mut total = 0u32;
        cum.push(0);
        for &f in freqs {
            total = total.checked_add(f).filter(|&t| t <= FREQ_TOTAL).ok_or_else(|| {
                crate::Error::Invalid("frequencies exceed the table total".into())
            })?;
            cum.push(total);
        }
        if total != FREQ_TOTAL {
            return invalid(format!("frequencies sum to {total}, expected {FREQ_TOTAL}"));
        }
        Ok(Self { v_min, cum })
    }

    /// Uniform table, with the remainder going to the lowest symbols.
    pub fn uniform(v_min: i32, v_max: i32) -> Result<Self> {
        if v_max < v_min {
            return invalid("empty alphabet");
        }
        let n = (v_max - v_min + 1) as u32;
        if n > FREQ_TOTAL {
            return invalid("alphabet larger than table total");
        }
        let freqs: Vec<u32> = (0..n).map(|i| FREQ_TOTAL / n + u32::from(i < FREQ_TOTAL % n)).collect();
        Self::from_frequencies(v_min, &freqs)
    }

    pub fn v_min(&self) -> i32 {
        self.v_min
    }

    pub fn v_max(&self) -> i32 {
        self.v_min + self.len() as i32 - 1
    }

    pub fn len(&self) -> usize {
        self.cum.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, v: i32) -> bool {
        v >= self.v_min && v <= self.v_max()
    }

    /// `(cumulative start, frequency)` of a symbol.
    pub fn interval(&self, v: i32) -> Option<(u32, u32)> {
        if !self.contains(v) {
            return None;
        }
        let i = (v - self.v_min) as usize;
        Some((self.cum[i], self.cum[i + 1] - self.cum[i]))
    }

    pub fn frequency(&self, v: i32) -> Option<u32> {
        self.interval(v).map(|(_, f)| f)
    }

    /// Symbol whose interval contains the cumulative value `c < FREQ_TOTAL`.
    pub fn symbol_at(&self, c: u32) -> Option<i32> {
        if c >= FREQ_TOTAL {
            return None;
        }
        let i = self.cum.partition_point(|&x| x <= c) - 1;
        Some(self.v_min + i as i32)
    }

    pub fn frequencies(&self) -> Vec<u32> {
        self.cum.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Ideal code length of `v` in bits.
    pub fn cost_bits(&self, v: i32) -> Option<f64> {
        self.frequency(v).map(|f| FREQ_BITS as f64 - (f as f64).log2())
    }
}

/// Bin masses of a Laplace density over `v_min..=v_max`, tails folded into the
/// boundary symbols. The masses sum to one up to rounding.
pub fn laplace_bin_masses(mu: f64, b: f64, v_min: i32, v_max: i32) -> Result<Vec<f64>> {
    if v_max < v_min {
        return invalid("empty alphabet");
    }
    if !(b > 0.0) || !mu.is_finite() {
        return invalid(format!("bad Laplace parameters mu={mu} b={b}"));
    }
    let n = (v_max - v_min + 1) as usize;
    if n == 1 {
        return Ok(vec![1.0]);
    }
    let mut masses = Vec::with_capacity(n);
    masses.push(laplace::cdf(v_min as f64 + 0.5, mu, b));
    for v in v_min + 1..v_max {
        masses.push(laplace::bin_prob(v as f64 - mu, b));
    }
    // 1 - F(v_max - 1/2), written to avoid cancellation on the far side.
    masses.push(laplace::cdf(mu, v_max as f64 - 0.5, b));
    Ok(masses)
}

/// Discretizes `Laplace(mu, b)` into a table with total [`FREQ_TOTAL`].
///
/// Every symbol first receives frequency 1. The remaining `FREQ_TOTAL - n`
/// units are shared in proportion to the normalized masses: each symbol takes
/// the floor of its share, and leftover units go to the largest fractional
/// parts, lower symbols first on ties.
pub fn quantize_laplace(mu: f64, b: f64, v_min: i32, v_max: i32) -> Result<QuantizedDistribution> {
    let masses = laplace_bin_masses(mu, b, v_min, v_max)?;
    let n = masses.len();
    if n > MAX_ALPHABET {
        return invalid(format!("alphabet of {n} symbols exceeds {MAX_ALPHABET}"));
    }
    let total: f64 = masses.iter().sum();
    let spare = FREQ_TOTAL - n as u32;
    let mut freqs = Vec::with_capacity(n);
    let mut rema = Vec::with_capacity(n);
    let mut used = 0u32;
    for &m in &masses {
        let share = m / total * spare as f64;
        let whole = (share.floor() as u32).min(spare);
        used += whole;
        freqs.push(1 + whole);
        rema.push(share - whole as f64);
    }
    if used > spare {
        // Only reachable through rounding in `m / total`; trim from the largest.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &c| freqs[c].cmp(&freqs[a]).then(a.cmp(&c)));
        let mut excess = used - spare;
        for &i in order.iter().cycle() {
            if excess == 0 {
                break;
            }
            if freqs[i] > 1 {
                freqs[i] -= 1;
                excess -= 1;
            }
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &c| rema[c].total_cmp(&rema[a]).then(a.cmp(&c)));
        for &i in order.iter().take((spare - used) as usize) {
            freqs[i] += 1;
        }
    }
    QuantizedDistribution::from_frequencies(v_min, &freqs)
}
