//! Shared fixtures and independent reference implementations for the
//! integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snn_core::dataio::Dataset;
use snn_core::encoder::SpikeRaster;
use snn_core::topology::SynapseGroup;
use snn_core::{Config, Model};

/// A small network that trains in well under a second per epoch.
pub fn tiny_config(seed: u64) -> Config {
    let mut cfg = Config::default();
    cfg.network.input_size = 64;
    cfg.network.layer_sizes = vec![40, 24, 40];
    cfg.network.bandwidth = 3;
    cfg.network.shortcuts = 10;
    cfg.network.readout_density = vec![1.0, 1.0, 0.5];
    cfg.network.modulators = 3;
    cfg.simulation.timesteps = 20;
    cfg.encoder.f_max = 0.3;
    cfg.homeostasis.threshold_init = 0.5;
    cfg.homeostasis.eta_theta = 0.05;
    cfg.homeostasis.target_rate = 0.05;
    cfg.learning.eta = 0.01;
    cfg.learning.eta_out = 0.002;
    cfg.training.epochs = 2;
    cfg.training.batch_size = 16;
    cfg.training.seed = seed;
    cfg
}

/// Ten noisy class prototypes over `features` pixels.
pub fn synthetic_dataset(samples: usize, features: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut proto_rng = ChaCha8Rng::seed_from_u64(0xC1A55);
    let prototypes: Vec<Vec<f32>> = (0..10)
        .map(|_| {
            (0..features)
                .map(|_| if proto_rng.random_bool(0.3) { 1.0 } else { 0.0 })
                .collect()
        })
        .collect();
    let mut images = Vec::with_capacity(samples * features);
    let mut labels = Vec::with_capacity(samples);
    for i in 0..samples {
        let c = i % 10;
        for &p in &prototypes[c] {
            let noisy: f32 = p * rng.random_range(0.6..1.0) + rng.random_range(0.0..0.15);
            images.push(noisy.clamp(0.0, 1.0));
        }
        labels.push(c as u8);
    }
    Dataset::new(features, images, labels).unwrap()
}

pub fn random_raster(neurons: usize, timesteps: usize, p: f64, rng: &mut impl Rng) -> SpikeRaster {
    let mut r = SpikeRaster::zeros(neurons, timesteps);
    for t in 0..timesteps {
        for n in 0..neurons {
            if rng.random_bool(p) {
                r.set(t, n, true);
            }
        }
    }
    r
}

/// Row-major `post x pre` matrix assembled from the edge list.
pub fn dense(group: &SynapseGroup) -> Vec<Vec<f32>> {
    let mut m = vec![vec![0.0f32; group.pre_size()]; group.post_size()];
    for (pre, post, w) in group.edges() {
        m[post][pre] = w;
    }
    m
}

fn matvec(m: &[Vec<f32>], x: &[bool], out: &mut [f32]) {
    for (o, row) in out.iter_mut().zip(m) {
        for (&w, &s) in row.iter().zip(x) {
            if s {
                *o += w;
            }
        }
    }
}

pub struct DenseReplay {
    pub z: Vec<f32>,
    pub potentials: Vec<Vec<f32>>,
    pub counts: Vec<Vec<u32>>,
}

/// Clock-driven replay with dense matrices: every layer fires from its
/// current potential, then currents are formed from this step's spikes,
/// then membranes leak, integrate and reset by subtraction.
pub fn dense_replay(model: &Model, raster: &SpikeRaster) -> DenseReplay {
    let alpha = model.config.simulation.alpha as f32;
    let layers = &model.topology.layers;
    let ff: Vec<_> = layers.iter().map(|l| dense(&l.feedforward)).collect();
    let rec: Vec<_> = layers.iter().map(|l| dense(&l.recurrent)).collect();
    let out: Vec<_> = layers.iter().map(|l| dense(&l.readout)).collect();
    let sizes = &model.config.network.layer_sizes;
    let th: Vec<Vec<f32>> = model
        .layers
        .iter()
        .map(|s| s.thresholds().to_vec())
        .collect();
    let mut v: Vec<Vec<f32>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    let mut counts: Vec<Vec<u32>> = sizes.iter().map(|&n| vec![0; n]).collect();
    let mut z = vec![0.0f32; model.config.network.classes];
    for t in 0..raster.timesteps() {
        let spikes: Vec<Vec<bool>> = v
            .iter()
            .zip(&th)
            .map(|(vk, tk)| vk.iter().zip(tk).map(|(a, b)| a >= b).collect())
            .collect();
        for k in 0..sizes.len() {
            let pre: Vec<bool> = if k == 0 {
                raster.step(t).to_vec()
            } else {
                spikes[k - 1].clone()
            };
            let mut current = vec![0.0f32; sizes[k]];
            matvec(&ff[k], &pre, &mut current);
            matvec(&rec[k], &spikes[k], &mut current);
            matvec(&out[k], &spikes[k], &mut z);
            for i in 0..sizes[k] {
                let s = if spikes[k][i] { 1.0 } else { 0.0 };
                counts[k][i] += spikes[k][i] as u32;
                v[k][i] = alpha * v[k][i] + current[i] - th[k][i] * s;
            }
        }
    }
    DenseReplay {
        z,
        potentials: v,
        counts,
    }
}

pub fn rel_close(a: f32, b: f32, tol: f32) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Straightforward big-endian decoder used as the fuzzing reference.
pub fn reference_idx(bytes: &[u8]) -> Option<(u32, Vec<u32>, Vec<u8>)> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 || bytes[2] != 0x08 {
        return None;
    }
    let ndim = bytes[3] as usize;
    let header = 4 + 4 * ndim;
    if bytes.len() < header {
        return None;
    }
    let dims: Vec<u32> = (0..ndim)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().unwrap()))
        .collect();
    let total = dims
        .iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64))?;
    if (bytes.len() - header) as u64 != total {
        return None;
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    Some((magic, dims, bytes[header..].to_vec()))
}

pub fn idx_bytes(magic: u32, dims: &[u32], payload: &[u8]) -> Vec<u8> {
    let mut b = magic.to_be_bytes().to_vec();
    for d in dims {
        b.extend(d.to_be_bytes());
    }
    b.extend_from_slice(payload);
    b
}

/// Bit patterns of every learnable array, for exact comparisons.
pub fn learnable_bits(model: &Model) -> Vec<Vec<u32>> {
    let bits = |x: &[f32]| x.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut out = Vec::new();
    for (k, l) in model.topology.layers.iter().enumerate() {
        out.push(bits(l.recurrent.weights()));
        out.push(bits(l.feedforward.weights()));
        out.push(bits(l.readout.weights()));
        out.push(bits(model.layers[k].thresholds()));
        out.push(bits(model.layers[k].rates()));
        out.push(bits(model.modulators[k].modulators()));
    }
    out
}
