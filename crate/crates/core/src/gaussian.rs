//! Discrete 1-D Gaussian smoothing shared by entropy gating and the final
//! fused-score pass.
//!
//! The kernel spans `Z = ceil(3σ)` taps on each side, weights are
//! renormalized to sum to one, and out-of-range neighbours are clamped to
//! the nearest edge sample (replicate padding).

use std::f64::consts::PI;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    sigma: f64,
    weights: Vec<f64>,
}

impl GaussianKernel {
    /// Returns `None` unless `sigma` is finite and positive.
    pub fn new(sigma: f64) -> Option<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return None;
        }
        let radius = (3.0 * sigma).ceil() as i64;
        let norm = 1.0 / (2.0 * PI * sigma * sigma).sqrt();
        let raw: Vec<f64> = (-radius..=radius)
            .map(|j| norm * (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
            .collect();
        let total: f64 = raw.iter().sum();
        Some(Self {
            sigma,
            weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.weights.len() / 2
    }

    /// Weights for offsets `-Z..=Z`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn smooth(&self, signal: &[f64]) -> Vec<f64> {
        let n = signal.len();
        if n == 0 {
            return Vec::new();
        }
        let z = self.radius() as isize;
        let last = n as isize - 1;
        let lo = signal.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = signal.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        // Accumulate deviations from the centre sample: identical to the plain
        // weighted sum because the weights sum to one, but constant runs come
        // out bit-exact.
        (0..n as isize)
            .map(|q| {
                let centre = signal[q as usize];
                let mut acc = 0.0;
                for (k, w) in self.weights.iter().enumerate() {
                    let idx = (q + k as isize - z).clamp(0, last) as usize;
                    acc += (signal[idx] - centre) * w;
                }
                (centre + acc).clamp(lo, hi)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sigma() {
        assert!(GaussianKernel::new(0.0).is_none());
        assert!(GaussianKernel::new(-1.0).is_none());
        assert!(GaussianKernel::new(f64::NAN).is_none());
    }

    #[test]
    fn radius_is_ceil_three_sigma() {
        assert_eq!(GaussianKernel::new(1.0).unwrap().radius(), 3);
        assert_eq!(GaussianKernel::new(0.5).unwrap().radius(), 2);
        assert_eq!(GaussianKernel::new(0.4).unwrap().radius(), 2);
        assert_eq!(GaussianKernel::new(2.0).unwrap().radius(), 6);
    }

    #[test]
    fn single_sample_unchanged() {
        let k = GaussianKernel::new(2.0).unwrap();
        assert_eq!(k.smooth(&[0.3]), vec![0.3]);
        assert!(k.smooth(&[]).is_empty());
    }

    #[test]
    fn symmetric_weights() {
        let k = GaussianKernel::new(1.3).unwrap();
        let w = k.weights();
        for i in 0..w.len() {
            assert_eq!(w[i], w[w.len() - 1 - i]);
        }
    }
}
