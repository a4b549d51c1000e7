use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SeqMixError};

/// Seeded deterministic random source. Identical seeds produce bitwise
/// identical draw streams; instances are single-owner and never shared.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Derive an independent stream, e.g. one per parallel run.
    pub fn fork(&self, stream: u64) -> Self {
        let mut child = self.inner.clone();
        child.set_stream(stream);
        Rng { inner: child }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform draw in [lo, hi).
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn uniform_usize(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    /// Standard normal draw.
    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Seeded Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.inner.gen_range(0..=i);
            items.swap(i, j);
        }
    }

    /// Uniform random permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }
}

/// Gamma(shape, 1) draw via Marsaglia-Tsang, with the U^(1/shape) boost for
/// shape < 1.
pub fn sample_gamma(shape: f64, rng: &mut Rng) -> Result<f64> {
    if !(shape > 0.0) {
        return Err(SeqMixError::Param(format!("gamma shape must be positive, got {shape}")));
    }
    if shape < 1.0 {
        let g = sample_gamma_ge1(shape + 1.0, rng);
        let u = loop {
            let u = rng.uniform();
            if u > 0.0 {
                break u;
            }
        };
        return Ok(g * u.powf(1.0 / shape));
    }
    Ok(sample_gamma_ge1(shape, rng))
}

fn sample_gamma_ge1(shape: f64, rng: &mut Rng) -> f64 {
    let d = shape - 1.0 / 3.0;
    let c = 1.0 / (9.0 * d).sqrt();
    loop {
        let x = rng.normal();
        let v = 1.0 + c * x;
        if v <= 0.0 {
            continue;
        }
        let v = v * v * v;
        let u = rng.uniform();
        // squeeze test, then the full log acceptance check
        if u < 1.0 - 0.0331 * x * x * x * x {
            return d * v;
        }
        if u > 0.0 && u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
            return d * v;
        }
    }
}

/// Beta(alpha, beta) draw via two Gamma draws.
pub fn sample_beta(alpha: f64, beta: f64, rng: &mut Rng) -> Result<f64> {
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(SeqMixError::Param(format!(
            "beta shapes must be positive, got ({alpha}, {beta})"
        )));
    }
    let x = sample_gamma(alpha, rng)?;
    let y = sample_gamma(beta, rng)?;
    let s = x + y;
    if s == 0.0 {
        // both gamma draws underflowed; fall back to the mean
        return Ok(alpha / (alpha + beta));
    }
    Ok(x / s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beta_moments(alpha: f64, beta: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = Rng::new(seed);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = sample_beta(alpha, beta, &mut rng).unwrap();
            assert!((0.0..=1.0).contains(&x));
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        (mean, sumsq / n as f64 - mean * mean)
    }

    #[test]
    fn determinism_bitwise() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
            assert_eq!(a.normal().to_bits(), b.normal().to_bits());
        }
    }

    #[test]
    fn beta_uniform_moments() {
        let (mean, var) = beta_moments(1.0, 1.0, 100_000, 1);
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.002, "var {var}");
    }

    #[test]
    fn beta_symmetric_means() {
        for (i, alpha) in [0.1, 0.5, 2.0].iter().enumerate() {
            let (mean, _) = beta_moments(*alpha, *alpha, 100_000, 10 + i as u64);
            let sd = (1.0 / (4.0 * (2.0 * alpha + 1.0)) / 100_000.0).sqrt();
            assert!((mean - 0.5).abs() < 4.0 * sd, "alpha {alpha}: mean {mean}");
        }
    }

    #[test]
    fn beta_half_half_variance() {
        let (_, var) = beta_moments(0.5, 0.5, 100_000, 2);
        assert!((var - 0.125).abs() < 0.003, "var {var}");
    }

    #[test]
    fn gamma_mean_matches_shape() {
        let mut rng = Rng::new(3);
        for shape in [0.3, 1.0, 4.5] {
            let n = 50_000;
            let mean: f64 =
                (0..n).map(|_| sample_gamma(shape, &mut rng).unwrap()).sum::<f64>() / n as f64;
            let sd = (shape / n as f64).sqrt();
            assert!((mean - shape).abs() < 5.0 * sd, "shape {shape}: mean {mean}");
        }
    }

    #[test]
    fn non_positive_shape_rejected() {
        let mut rng = Rng::new(0);
        assert!(sample_beta(0.0, 1.0, &mut rng).is_err());
        assert!(sample_beta(1.0, -2.0, &mut rng).is_err());
        assert!(sample_gamma(f64::NAN, &mut rng).is_err());
    }
}
