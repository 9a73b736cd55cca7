//! Reference oracles for the test suites.
//!
//! Everything here is deliberately naive and shares no code with
//! `attnmix-core`: brute-force enumeration, triple loops and central finite
//! differences over plain `f64` slices.

/// Row-major `m×k · k×n` product with the textbook triple loop.
pub fn matmul_naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0;
            for p in 0..k {
                acc += a[i * k + p] * b[p * n + j];
            }
            out[i * n + j] = acc;
        }
    }
    out
}

/// `exp(z) / sum(exp(z))` evaluated directly, without max-shifting.
pub fn softmax_naive(z: &[f64]) -> Vec<f64> {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Euclidean projection of `z` onto the probability simplex by enumerating
/// every non-empty support, solving the equality-constrained problem on it,
/// and keeping the feasible candidate closest to `z`.
///
/// Exponential in `z.len()`; intended for widths up to ~14.
pub fn simplex_projection_bruteforce(z: &[f64]) -> Vec<f64> {
    let n = z.len();
    assert!((1..=20).contains(&n));
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 1u32..(1u32 << n) {
        let size = mask.count_ones() as f64;
        let sum: f64 = (0..n).filter(|j| mask >> j & 1 == 1).map(|j| z[j]).sum();
        let tau = (sum - 1.0) / size;
        let mut p = vec![0.0; n];
        let mut feasible = true;
        for j in 0..n {
            if mask >> j & 1 == 1 {
                p[j] = z[j] - tau;
                if p[j] < -1e-12 {
                    feasible = false;
                    break;
                }
            }
        }
        if !feasible {
            continue;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    best.expect("some support is always feasible").1
}

/// Central finite-difference gradient of a scalar function.
pub fn numeric_gradient<F>(f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let up = f(&probe);
            probe[i] = orig - step;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Largest entrywise relative error, with `floor` as the absolute error
/// below which two entries are considered equal.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| {
            let diff = (a - n).abs();
            if diff <= floor {
                0.0
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Percentile with linear interpolation between closest ranks.
pub fn percentile_linear(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Small deterministic generator (splitmix64) so oracle inputs do not depend
/// on the RNG used by the code under test.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + (hi - lo) * u
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform(lo, hi)).collect()
    }
}
