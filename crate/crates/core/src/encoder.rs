//! Rate coding of pixel intensities into Bernoulli spike trains.

use rand::Rng;

use crate::error::{Result, SnnError};

/// Binary events over `(timesteps x neurons)`, stored time-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeRaster {
    neurons: usize,
    timesteps: usize,
    events: Vec<bool>,
}

impl SpikeRaster {
    pub fn zeros(neurons: usize, timesteps: usize) -> Self {
        SpikeRaster {
            neurons,
            timesteps,
            events: vec![false; neurons * timesteps],
        }
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn timesteps(&self) -> usize {
        self.timesteps
    }

    pub fn step(&self, t: usize) -> &[bool] {
        &self.events[t * self.neurons..(t + 1) * self.neurons]
    }

    pub fn set(&mut self, t: usize, neuron: usize, spike: bool) {
        self.events[t * self.neurons + neuron] = spike;
    }

    pub fn counts(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.neurons];
        for t in 0..self.timesteps {
            for (c, &s) in counts.iter_mut().zip(self.step(t)) {
                *c += s as u32;
            }
        }
        counts
    }

    pub fn total(&self) -> usize {
        self.events.iter().filter(|&&s| s).count()
    }
}

/// Each neuron spikes independently at every step with probability
/// `pixel * f_max`. Zero pixels consume no randomness.
pub fn encode_poisson<R: Rng>(
    pixels: &[f32],
    timesteps: usize,
    f_max: f64,
    rng: &mut R,
) -> Result<SpikeRaster> {
    if let Some((index, &value)) = pixels
        .iter()
        .enumerate()
        .find(|(_, &p)| !(0.0..=1.0).contains(&p))
    {
        return Err(SnnError::PixelOutOfRange { index, value });
    }
    let mut raster = SpikeRaster::zeros(pixels.len(), timesteps);
    let active: Vec<(usize, f64)> = pixels
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(i, &p)| (i, p as f64 * f_max))
        .collect();
    for t in 0..timesteps {
        for &(i, p) in &active {
            if rng.random::<f64>() < p {
                raster.set(t, i, true);
            }
        }
    }
    Ok(raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn zero_image_is_silent() {
        let r = encode_poisson(&[0.0; 50], 100, 0.25, &mut substream(1, "e")).unwrap();
        assert_eq!(r.total(), 0);
        assert_eq!((r.neurons(), r.timesteps()), (50, 100));
    }

    #[test]
    fn mnist_shape() {
        let r = encode_poisson(&[0.3; 784], 100, 0.25, &mut substream(1, "e")).unwrap();
        assert_eq!((r.neurons(), r.timesteps()), (784, 100));
    }

    #[test]
    fn saturated_pixel_count_is_binomial() {
        // Binomial(100, 0.25): mean 25, sd sqrt(18.75); the mean over 10k
        // neurons has sd 0.0433, so [24, 26] is a > 20 sigma band.
        let r = encode_poisson(&vec![1.0; 10_000], 100, 0.25, &mut substream(2, "e")).unwrap();
        let counts = r.counts();
        let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / counts.len() as f64;
        assert!((24.0..=26.0).contains(&mean), "mean {mean}");
    }

    #[test]
    fn rate_is_linear_in_intensity() {
        let full = encode_poisson(&vec![1.0; 10_000], 100, 0.25, &mut substream(3, "a")).unwrap();
        let half = encode_poisson(&vec![0.5; 10_000], 100, 0.25, &mut substream(3, "b")).unwrap();
        let ratio = half.total() as f64 / full.total() as f64;
        assert!((0.45..=0.55).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn deterministic_given_seed() {
        let px: Vec<f32> = (0..100).map(|i| i as f32 / 99.0).collect();
        let a = encode_poisson(&px, 30, 0.25, &mut substream(4, "s")).unwrap();
        let b = encode_poisson(&px, 30, 0.25, &mut substream(4, "s")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(matches!(
            encode_poisson(&[0.2, 1.5], 10, 0.25, &mut substream(1, "e")),
            Err(SnnError::PixelOutOfRange { index: 1, .. })
        ));
        assert!(encode_poisson(&[-0.1], 10, 0.25, &mut substream(1, "e")).is_err());
        assert!(encode_poisson(&[f32::NAN], 10, 0.25, &mut substream(1, "e")).is_err());
    }

    #[test]
    fn neurons_are_uncorrelated_on_constant_images() {
        let r = encode_poisson(&vec![0.8; 200], 2000, 0.25, &mut substream(9, "c")).unwrap();
        let series =
            |n: usize| -> Vec<f64> { (0..2000).map(|t| r.step(t)[n] as u8 as f64).collect() };
        // Pearson r of independent series has sd ~ 1/sqrt(2000) ≈ 0.022.
        for (a, b) in [(0usize, 1usize), (10, 11), (50, 199)] {
            let (x, y) = (series(a), series(b));
            let mx = x.iter().sum::<f64>() / 2000.0;
            let my = y.iter().sum::<f64>() / 2000.0;
            let cov: f64 = x.iter().zip(&y).map(|(p, q)| (p - mx) * (q - my)).sum();
            let vx: f64 = x.iter().map(|p| (p - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|q| (q - my).powi(2)).sum();
            let corr = cov / (vx * vy).sqrt();
            assert!(corr.abs() < 0.1, "corr({a},{b}) = {corr}");
        }
    }
}
