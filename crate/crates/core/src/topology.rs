//! Fixed connectivity: banded ring recurrence with small-world shortcuts,
//! dense feedforward projections, sparse readout projections, and the
//! fixed random matrices that carry feedback and modulation.
//!
//! Every group stores its edges sorted by presynaptic index together with a
//! CSR-style row offset table, so an event-driven pass can jump straight to
//! the fan-out of a spiking neuron.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::NetworkConfig;
use crate::error::{Result, SnnError};
use crate::rng::{substream, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SynapseKind {
    Recurrent,
    Feedforward,
    Readout,
}

impl SynapseKind {
    pub fn name(self) -> &'static str {
        match self {
            SynapseKind::Recurrent => "recurrent",
            SynapseKind::Feedforward => "feedforward",
            SynapseKind::Readout => "readout",
        }
    }
}

/// Sparse directed weighted edge set between two populations.
#[derive(Debug, Clone, PartialEq)]
pub struct SynapseGroup {
    kind: SynapseKind,
    pre_size: usize,
    post_size: usize,
    pre: Vec<u32>,
    post: Vec<u32>,
    weights: Vec<f32>,
    row_offsets: Vec<usize>,
    plastic: bool,
}

impl SynapseGroup {
    /// Build a group from an arbitrary edge list. Edges are sorted by
    /// `(pre, post)`; out-of-range indices, duplicates and recurrent
    /// self-edges are rejected.
    pub fn from_edges(
        kind: SynapseKind,
        pre_size: usize,
        post_size: usize,
        mut edges: Vec<(u32, u32, f32)>,
        plastic: bool,
    ) -> Result<Self> {
        edges.sort_by_key(|&(j, i, _)| (j, i));
        for (k, &(j, i, _)) in edges.iter().enumerate() {
            if j as usize >= pre_size || i as usize >= post_size {
                return Err(SnnError::SizeError(format!(
                    "edge ({j}, {i}) outside {pre_size}x{post_size} group"
                )));
            }
            if kind == SynapseKind::Recurrent && i == j {
                return Err(SnnError::SizeError(format!("self-edge at neuron {j}")));
            }
            if k > 0 && edges[k - 1].0 == j && edges[k - 1].1 == i {
                return Err(SnnError::SizeError(format!("duplicate edge ({j}, {i})")));
            }
        }
        let mut row_offsets = vec![0usize; pre_size + 1];
        for &(j, _, _) in &edges {
            row_offsets[j as usize + 1] += 1;
        }
        for j in 0..pre_size {
            row_offsets[j + 1] += row_offsets[j];
        }
        Ok(SynapseGroup {
            kind,
            pre_size,
            post_size,
            pre: edges.iter().map(|e| e.0).collect(),
            post: edges.iter().map(|e| e.1).collect(),
            weights: edges.iter().map(|e| e.2).collect(),
            row_offsets,
            plastic,
        })
    }

    pub fn kind(&self) -> SynapseKind {
        self.kind
    }

    pub fn pre_size(&self) -> usize {
        self.pre_size
    }

    pub fn post_size(&self) -> usize {
        self.post_size
    }

    pub fn is_plastic(&self) -> bool {
        self.plastic
    }

    pub fn set_plastic(&mut self, plastic: bool) {
        self.plastic = plastic;
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn pre_indices(&self) -> &[u32] {
        &self.pre
    }

    pub fn post_indices(&self) -> &[u32] {
        &self.post
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f32] {
        &mut self.weights
    }

    /// Edge index range holding the outgoing edges of presynaptic neuron `j`.
    #[inline]
    pub fn fan_out(&self, j: usize) -> std::ops::Range<usize> {
        self.row_offsets[j]..self.row_offsets[j + 1]
    }

    pub fn out_degree(&self, j: usize) -> usize {
        self.row_offsets[j + 1] - self.row_offsets[j]
    }

    pub fn in_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.post_size];
        for &i in &self.post {
            deg[i as usize] += 1;
        }
        deg
    }

    pub fn out_degrees(&self) -> Vec<usize> {
        (0..self.pre_size).map(|j| self.out_degree(j)).collect()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f32)> + '_ {
        self.pre
            .iter()
            .zip(&self.post)
            .zip(&self.weights)
            .map(|((&j, &i), &w)| (j as usize, i as usize, w))
    }

    pub fn contains(&self, pre: usize, post: usize) -> bool {
        let range = self.fan_out(pre);
        self.post[range].binary_search(&(post as u32)).is_ok()
    }

    /// Row-major `post_size x pre_size` dense copy of the weights.
    pub fn to_dense(&self) -> Vec<f32> {
        let mut dense = vec![0.0; self.post_size * self.pre_size];
        for (j, i, w) in self.edges() {
            dense[i * self.pre_size + j] = w;
        }
        dense
    }
}

fn gaussian(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

/// Circular band of half-width `b`: neuron `i` receives from every `j` with
/// ring distance in `1..=b`.
pub fn build_banded_recurrent<R: Rng>(
    neurons: usize,
    bandwidth: usize,
    gain: f64,
    rng: &mut R,
) -> Result<SynapseGroup> {
    if neurons < 2 || bandwidth == 0 || 2 * bandwidth >= neurons {
        return Err(SnnError::InvalidBandwidth { neurons, bandwidth });
    }
    let dist = gaussian(gain / ((2 * bandwidth) as f64).sqrt());
    let mut edges = Vec::with_capacity(neurons * 2 * bandwidth);
    for j in 0..neurons {
        // Ascending post index within the row keeps the draw order stable.
        let mut posts: Vec<usize> = (1..=bandwidth)
            .flat_map(|d| [(j + d) % neurons, (j + neurons - d) % neurons])
            .collect();
        posts.sort_unstable();
        for i in posts {
            edges.push((j as u32, i as u32, dist.sample(rng) as f32));
        }
    }
    SynapseGroup::from_edges(SynapseKind::Recurrent, neurons, neurons, edges, true)
}

/// Add `count` recurrent shortcuts drawn uniformly without replacement from
/// the (pre, post) pairs that are neither existing edges nor self-edges.
pub fn add_shortcuts<R: Rng>(
    group: SynapseGroup,
    count: usize,
    std: f64,
    rng: &mut R,
) -> Result<SynapseGroup> {
    if group.kind != SynapseKind::Recurrent {
        return Err(SnnError::KindMismatch {
            expected: "recurrent",
            actual: group.kind.name(),
        });
    }
    if count == 0 {
        return Ok(group);
    }
    let n = group.pre_size;
    let free_per_row: Vec<usize> = (0..n).map(|j| n - 1 - group.out_degree(j)).collect();
    let available: usize = free_per_row.iter().sum();
    if count > available {
        return Err(SnnError::CapacityExceeded {
            requested: count,
            available,
        });
    }
    let mut picks = rand::seq::index::sample(rng, available, count).into_vec();
    picks.sort_unstable();
    let dist = gaussian(std);

    let mut edges: Vec<(u32, u32, f32)> = group
        .edges()
        .map(|(j, i, w)| (j as u32, i as u32, w))
        .collect();
    let mut row = 0usize;
    let mut row_start = 0usize;
    for rank in picks {
        while rank >= row_start + free_per_row[row] {
            row_start += free_per_row[row];
            row += 1;
        }
        // r-th column of this row not already taken (existing posts or self).
        let mut taken: Vec<u32> = group.post[group.fan_out(row)].to_vec();
        taken.push(row as u32);
        taken.sort_unstable();
        let mut col = rank - row_start;
        for &t in &taken {
            if t as usize <= col {
                col += 1;
            } else {
                break;
            }
        }
        edges.push((row as u32, col as u32, dist.sample(rng) as f32));
    }
    SynapseGroup::from_edges(SynapseKind::Recurrent, n, n, edges, group.plastic)
}

pub fn build_feedforward<R: Rng>(pre: usize, post: usize, rng: &mut R) -> Result<SynapseGroup> {
    if pre == 0 || post == 0 {
        return Err(SnnError::SizeError(format!(
            "feedforward projection {pre} -> {post} has an empty side"
        )));
    }
    let dist = gaussian(1.0 / (pre as f64).sqrt());
    let mut edges = Vec::with_capacity(pre * post);
    for j in 0..pre {
        for i in 0..post {
            edges.push((j as u32, i as u32, dist.sample(rng) as f32));
        }
    }
    SynapseGroup::from_edges(SynapseKind::Feedforward, pre, post, edges, true)
}

/// Number of readout edges realized at density `rho` on an `n x classes` grid.
pub fn readout_edge_count(neurons: usize, classes: usize, rho: f64) -> usize {
    // Tolerate products like 0.05 * 10240 landing a hair below an integer.
    ((rho * (neurons * classes) as f64) + 1e-9).floor() as usize
}

pub fn build_readout_projection<R: Rng>(
    neurons: usize,
    classes: usize,
    rho: f64,
    rng: &mut R,
) -> Result<SynapseGroup> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(SnnError::DensityOutOfRange(rho));
    }
    if neurons == 0 || classes == 0 {
        return Err(SnnError::SizeError(
            "readout projection with empty side".into(),
        ));
    }
    let count = readout_edge_count(neurons, classes, rho);
    let fan_in = (count as f64 / classes as f64).max(1.0);
    let dist = gaussian(1.0 / fan_in.sqrt());
    let mut picks = rand::seq::index::sample(rng, neurons * classes, count).into_vec();
    picks.sort_unstable();
    let edges = picks
        .into_iter()
        .map(|k| {
            (
                (k / classes) as u32,
                (k % classes) as u32,
                dist.sample(rng) as f32,
            )
        })
        .collect();
    SynapseGroup::from_edges(SynapseKind::Readout, neurons, classes, edges, true)
}

/// Fixed random `classes x neurons` broadcast matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMatrix {
    classes: usize,
    neurons: usize,
    values: Vec<f32>,
}

impl FeedbackMatrix {
    pub fn from_values(classes: usize, neurons: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != classes * neurons {
            return Err(SnnError::shape(
                "feedback matrix",
                classes * neurons,
                values.len(),
            ));
        }
        Ok(FeedbackMatrix {
            classes,
            neurons,
            values,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn row(&self, class: usize) -> &[f32] {
        &self.values[class * self.neurons..(class + 1) * self.neurons]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&[&self.values])
    }
}

pub fn build_feedback<R: Rng>(
    classes: usize,
    neurons: usize,
    rng: &mut R,
) -> Result<FeedbackMatrix> {
    if classes == 0 || neurons == 0 {
        return Err(SnnError::SizeError(
            "feedback matrix with empty side".into(),
        ));
    }
    let dist = gaussian(1.0 / (classes as f64).sqrt());
    let values = (0..classes * neurons)
        .map(|_| dist.sample(rng) as f32)
        .collect();
    FeedbackMatrix::from_values(classes, neurons, values)
}

/// Fixed projections error -> modulators (`M`) and modulators -> neurons
/// (`N x M`, row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatoryProjections {
    modulators: usize,
    neurons: usize,
    w_e_to_m: Vec<f32>,
    w_m_to_h: Vec<f32>,
}

impl ModulatoryProjections {
    pub fn from_values(
        modulators: usize,
        neurons: usize,
        w_e_to_m: Vec<f32>,
        w_m_to_h: Vec<f32>,
    ) -> Result<Self> {
        if w_e_to_m.len() != modulators {
            return Err(SnnError::shape(
                "error->modulator projection",
                modulators,
                w_e_to_m.len(),
            ));
        }
        if w_m_to_h.len() != modulators * neurons {
            return Err(SnnError::shape(
                "modulator->neuron projection",
                modulators * neurons,
                w_m_to_h.len(),
            ));
        }
        Ok(ModulatoryProjections {
            modulators,
            neurons,
            w_e_to_m,
            w_m_to_h,
        })
    }

    pub fn modulators(&self) -> usize {
        self.modulators
    }

    pub fn neurons(&self) -> usize {
        self.neurons
    }

    pub fn error_to_modulators(&self) -> &[f32] {
        &self.w_e_to_m
    }

    pub fn modulators_to_neurons(&self) -> &[f32] {
        &self.w_m_to_h
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&[&self.w_e_to_m, &self.w_m_to_h])
    }
}

pub fn build_modulatory<R: Rng>(
    modulators: usize,
    neurons: usize,
    rng: &mut R,
) -> Result<ModulatoryProjections> {
    if modulators == 0 {
        return Err(SnnError::EmptyModulator);
    }
    if modulators * 8 > neurons {
        return Err(SnnError::ModulatorTooLarge {
            modulators,
            neurons,
        });
    }
    let unit = gaussian(1.0);
    let w_e_to_m = (0..modulators).map(|_| unit.sample(rng) as f32).collect();
    let scaled = gaussian(1.0 / (modulators as f64).sqrt());
    let w_m_to_h = (0..neurons * modulators)
        .map(|_| scaled.sample(rng) as f32)
        .collect();
    ModulatoryProjections::from_values(modulators, neurons, w_e_to_m, w_m_to_h)
}

/// Content hash of one or more float arrays (bit patterns, not values).
pub fn fingerprint(arrays: &[&[f32]]) -> u64 {
    let mut hasher = Sha256::new();
    for array in arrays {
        hasher.update((array.len() as u64).to_le_bytes());
        for v in array.iter() {
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// All fixed connectivity attached to one recurrent layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTopology {
    pub recurrent: SynapseGroup,
    pub feedforward: SynapseGroup,
    pub readout: SynapseGroup,
    pub feedback: FeedbackMatrix,
    pub modulatory: ModulatoryProjections,
}

impl LayerTopology {
    pub fn neurons(&self) -> usize {
        self.recurrent.pre_size()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkTopology {
    pub config: NetworkConfig,
    pub master_seed: u64,
    pub layers: Vec<LayerTopology>,
}

impl NetworkTopology {
    /// Deterministically construct every group from `(config, master_seed)`.
    pub fn build(config: &NetworkConfig, master_seed: u64) -> Result<Self> {
        config.validate()?;
        let stream = |k: usize, part: &str| -> SimRng {
            substream(master_seed, &format!("topology/layer-{k}/{part}"))
        };
        let mut layers = Vec::with_capacity(config.layer_sizes.len());
        let mut prev = config.input_size;
        for (k, &n) in config.layer_sizes.iter().enumerate() {
            let plastic = config.plastic_layers.get(k).copied().unwrap_or(true);
            let gain = config.recurrent_gain;
            let band = build_banded_recurrent(n, config.bandwidth, gain, &mut stream(k, "band"))?;
            let shortcut_std = gain / ((2 * config.bandwidth) as f64).sqrt();
            let mut recurrent = add_shortcuts(
                band,
                config.shortcuts,
                shortcut_std,
                &mut stream(k, "shortcuts"),
            )?;
            recurrent.set_plastic(plastic);
            let mut feedforward = build_feedforward(prev, n, &mut stream(k, "feedforward"))?;
            feedforward.set_plastic(plastic);
            let readout = build_readout_projection(
                n,
                config.classes,
                config.readout_density[k],
                &mut stream(k, "readout"),
            )?;
            let feedback = build_feedback(config.classes, n, &mut stream(k, "feedback"))?;
            let modulatory = build_modulatory(config.modulators, n, &mut stream(k, "modulatory"))?;
            layers.push(LayerTopology {
                recurrent,
                feedforward,
                readout,
                feedback,
                modulatory,
            });
            prev = n;
        }
        Ok(NetworkTopology {
            config: config.clone(),
            master_seed,
            layers,
        })
    }

    pub fn total_neurons(&self) -> usize {
        self.layers.iter().map(LayerTopology::neurons).sum()
    }

    pub fn total_synapses(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.recurrent.len() + l.feedforward.len() + l.readout.len())
            .sum()
    }

    /// Hash over everything learning must never touch.
    pub fn fixed_fingerprint(&self) -> u64 {
        let arrays: Vec<&[f32]> = self
            .layers
            .iter()
            .flat_map(|l| {
                [
                    l.feedback.values(),
                    l.modulatory.error_to_modulators(),
                    l.modulatory.modulators_to_neurons(),
                ]
            })
            .collect();
        fingerprint(&arrays)
    }

    /// Hash over connectivity indices and the fixed matrices.
    pub fn structure_fingerprint(&self) -> u64 {
        let mut hasher = Sha256::new();
        for l in &self.layers {
            for g in [&l.recurrent, &l.feedforward, &l.readout] {
                hasher.update((g.len() as u64).to_le_bytes());
                for (&p, &q) in g.pre_indices().iter().zip(g.post_indices()) {
                    hasher.update(p.to_le_bytes());
                    hasher.update(q.to_le_bytes());
                }
            }
        }
        hasher.update(self.fixed_fingerprint().to_le_bytes());
        let digest = hasher.finalize();
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }

    /// Hash over all learnable weights.
    pub fn weight_fingerprint(&self) -> u64 {
        let arrays: Vec<&[f32]> = self
            .layers
            .iter()
            .flat_map(|l| {
                [
                    l.recurrent.weights(),
                    l.feedforward.weights(),
                    l.readout.weights(),
                ]
            })
            .collect();
        fingerprint(&arrays)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerReport {
    pub neurons: usize,
    pub recurrent_edges: usize,
    pub shortcut_edges: usize,
    pub feedforward_edges: usize,
    pub readout_edges: usize,
    pub readout_density: f64,
    pub recurrent_in_degree: BTreeMap<usize, usize>,
    pub recurrent_out_degree: BTreeMap<usize, usize>,
    pub clustering: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TopologyReport {
    pub layers: Vec<LayerReport>,
    pub total_neurons: usize,
    pub total_synapses: usize,
    pub plastic_synapses: usize,
    pub memory_bytes: MemoryEstimate,
}

/// Byte estimate split along neuron state, synapses and eligibility traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryEstimate {
    pub neuron_state: usize,
    pub synapses: usize,
    pub traces: usize,
    pub fixed_matrices: usize,
}

impl MemoryEstimate {
    pub fn total(&self) -> usize {
        self.neuron_state + self.synapses + self.traces + self.fixed_matrices
    }
}

fn histogram(values: &[usize]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for &v in values {
        *h.entry(v).or_insert(0) += 1;
    }
    h
}

/// Mean local clustering coefficient of the undirected graph underlying
/// a recurrent group.
pub fn clustering_coefficient(group: &SynapseGroup) -> f64 {
    let n = group.pre_size();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, i, _) in group.edges() {
        adj[j].push(i);
        adj[i].push(j);
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let sets: Vec<HashSet<usize>> = adj.iter().map(|l| l.iter().copied().collect()).collect();
    let mut total = 0.0;
    for nb in &adj {
        let k = nb.len();
        if k < 2 {
            continue;
        }
        let mut links = 0usize;
        for (a, &x) in nb.iter().enumerate() {
            for &y in &nb[a + 1..] {
                if sets[x].contains(&y) {
                    links += 1;
                }
            }
        }
        total += 2.0 * links as f64 / (k * (k - 1)) as f64;
    }
    total / n as f64
}

// Per-neuron: V, V_th, rate EMA, spike flag.
const NEURON_STATE_BYTES: usize = 4 * 4;
// Per-synapse: f32 weight + u32 post index.
const SYNAPSE_BYTES: usize = 8;
// Per plastic synapse: f32 trace + u32 last-touch step.
const TRACE_BYTES: usize = 8;

pub fn topology_report(net: &NetworkTopology) -> TopologyReport {
    let mut layers = Vec::with_capacity(net.layers.len());
    let mut plastic = 0usize;
    let mut fixed = 0usize;
    for layer in &net.layers {
        let n = layer.neurons();
        let band = n * 2 * net.config.bandwidth;
        for g in [&layer.recurrent, &layer.feedforward, &layer.readout] {
            if g.is_plastic() {
                plastic += g.len();
            }
        }
        fixed += layer.feedback.values().len()
            + layer.modulatory.error_to_modulators().len()
            + layer.modulatory.modulators_to_neurons().len();
        layers.push(LayerReport {
            neurons: n,
            recurrent_edges: layer.recurrent.len(),
            shortcut_edges: layer.recurrent.len().saturating_sub(band),
            feedforward_edges: layer.feedforward.len(),
            readout_edges: layer.readout.len(),
            readout_density: layer.readout.len() as f64 / (n * net.config.classes) as f64,
            recurrent_in_degree: histogram(&layer.recurrent.in_degrees()),
            recurrent_out_degree: histogram(&layer.recurrent.out_degrees()),
            clustering: clustering_coefficient(&layer.recurrent),
        });
    }
    let total_neurons = net.total_neurons();
    let total_synapses = net.total_synapses();
    TopologyReport {
        layers,
        total_neurons,
        total_synapses,
        plastic_synapses: plastic,
        memory_bytes: MemoryEstimate {
            neuron_state: total_neurons * NEURON_STATE_BYTES,
            synapses: total_synapses * SYNAPSE_BYTES,
            traces: plastic * TRACE_BYTES,
            fixed_matrices: fixed * 4,
        },
    }
}

impl fmt::Display for TopologyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "layers: {}", self.layers.len())?;
        for (k, l) in self.layers.iter().enumerate() {
            writeln!(
                f,
                "  layer {k}: neurons={} recurrent={} (shortcuts={}) feedforward={} readout={} \
                 readout_density={:.4} clustering={:.4}",
                l.neurons,
                l.recurrent_edges,
                l.shortcut_edges,
                l.feedforward_edges,
                l.readout_edges,
                l.readout_density,
                l.clustering
            )?;
            let fmt_hist = |h: &BTreeMap<usize, usize>| {
                h.iter()
                    .map(|(d, c)| format!("{d}:{c}"))
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            writeln!(f, "    in-degree  {}", fmt_hist(&l.recurrent_in_degree))?;
            writeln!(f, "    out-degree {}", fmt_hist(&l.recurrent_out_degree))?;
        }
        writeln!(f, "total neurons:  {}", self.total_neurons)?;
        writeln!(f, "total synapses: {}", self.total_synapses)?;
        writeln!(f, "plastic:        {}", self.plastic_synapses)?;
        let m = &self.memory_bytes;
        write!(
            f,
            "memory (bytes): neurons={} synapses={} traces={} fixed={} total={}",
            m.neuron_state,
            m.synapses,
            m.traces,
            m.fixed_matrices,
            m.total()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn rng() -> SimRng {
        substream(1, "test")
    }

    #[test]
    fn band_16_2_has_uniform_degree() {
        let g = build_banded_recurrent(16, 2, 0.5, &mut rng()).unwrap();
        assert_eq!(g.len(), 64);
        assert!(g.in_degrees().iter().all(|&d| d == 4));
        assert!(g.out_degrees().iter().all(|&d| d == 4));
        assert!(g.edges().all(|(j, i, _)| j != i));
    }

    #[test]
    fn band_4_1_is_the_ring() {
        let g = build_banded_recurrent(4, 1, 0.5, &mut rng()).unwrap();
        let edges: Vec<(usize, usize)> = g.edges().map(|(j, i, _)| (j, i)).collect();
        let mut expected = Vec::new();
        for j in 0..4usize {
            for i in 0..4usize {
                let d = (i + 4 - j) % 4;
                if d == 1 || d == 3 {
                    expected.push((j, i));
                }
            }
        }
        assert_eq!(edges, expected);
        assert_eq!(edges.len(), 8);
    }

    #[test]
    fn band_membership_matches_ring_distance() {
        let (n, b) = (23usize, 4usize);
        let g = build_banded_recurrent(n, b, 0.5, &mut rng()).unwrap();
        for j in 0..n {
            for i in 0..n {
                let fwd = (i + n - j) % n;
                let back = (j + n - i) % n;
                let want = (fwd > 0 && fwd <= b) || (back > 0 && back <= b);
                assert_eq!(g.contains(j, i), want, "({j},{i})");
            }
        }
    }

    #[test]
    fn band_rejects_self_overlap() {
        assert!(matches!(
            build_banded_recurrent(16, 8, 0.5, &mut rng()),
            Err(SnnError::InvalidBandwidth { .. })
        ));
        assert!(build_banded_recurrent(16, 0, 0.5, &mut rng()).is_err());
        assert!(build_banded_recurrent(16, 7, 0.5, &mut rng()).is_ok());
    }

    #[test]
    fn zero_shortcuts_is_identity() {
        let g = build_banded_recurrent(32, 3, 0.5, &mut rng()).unwrap();
        let h = add_shortcuts(g.clone(), 0, 0.1, &mut rng()).unwrap();
        assert_eq!(g, h);
    }

    #[test]
    fn shortcut_count_at_scale() {
        let g = build_banded_recurrent(1024, 12, 0.5, &mut rng()).unwrap();
        let band = g.clone();
        let h = add_shortcuts(g, 256, 0.1, &mut rng()).unwrap();
        assert_eq!(h.len(), 1024 * 24 + 256);
        // Band edges keep their weights; every new pair is off-band and off-diagonal.
        let mut new = 0;
        for (j, i, w) in h.edges() {
            assert_ne!(j, i);
            if band.contains(j, i) {
                let k = band
                    .fan_out(j)
                    .find(|&k| band.post_indices()[k] as usize == i)
                    .unwrap();
                assert_eq!(band.weights()[k].to_bits(), w.to_bits());
            } else {
                new += 1;
            }
        }
        assert_eq!(new, 256);
    }

    #[test]
    fn shortcuts_can_fill_every_free_pair() {
        let g = build_banded_recurrent(8, 1, 0.5, &mut rng()).unwrap();
        let free = 8 * 7 - g.len();
        let full = add_shortcuts(g.clone(), free, 0.1, &mut rng()).unwrap();
        assert_eq!(full.len(), 56);
        assert!(matches!(
            add_shortcuts(g, 8 * 7, 0.1, &mut rng()),
            Err(SnnError::CapacityExceeded { .. })
        ));
    }

    #[test]
    fn feedforward_is_dense() {
        assert_eq!(build_feedforward(2, 3, &mut rng()).unwrap().len(), 6);
        assert_eq!(
            build_feedforward(784, 1024, &mut rng()).unwrap().len(),
            802_816
        );
        assert!(matches!(
            build_feedforward(0, 3, &mut rng()),
            Err(SnnError::SizeError(_))
        ));
    }

    #[test]
    fn readout_density_counts() {
        assert_eq!(
            build_readout_projection(1024, 10, 1.0, &mut rng())
                .unwrap()
                .len(),
            10_240
        );
        assert_eq!(
            build_readout_projection(1024, 10, 0.05, &mut rng())
                .unwrap()
                .len(),
            512
        );
        assert!(matches!(
            build_readout_projection(1024, 10, 0.0, &mut rng()),
            Err(SnnError::DensityOutOfRange(_))
        ));
        assert!(build_readout_projection(1024, 10, 1.5, &mut rng()).is_err());
    }

    #[test]
    fn feedback_statistics_and_determinism() {
        let b = build_feedback(10, 1024, &mut substream(3, "fb")).unwrap();
        assert_eq!(b.values().len(), 10_240);
        assert!(b.values().iter().all(|v| v.is_finite()));
        // Entries ~ N(0, 1/10): the sample mean has std 1/sqrt(10 * 10240).
        let mean = b.values().iter().map(|&v| v as f64).sum::<f64>() / 10_240.0;
        let sigma = (0.1f64 / 10_240.0).sqrt();
        assert!(mean.abs() < 4.0 * sigma, "mean {mean}");
        let again = build_feedback(10, 1024, &mut substream(3, "fb")).unwrap();
        assert_eq!(b, again);
        let other = build_feedback(10, 1024, &mut substream(4, "fb")).unwrap();
        assert_ne!(b, other);
    }

    #[test]
    fn modulatory_shapes_and_bounds() {
        let m = build_modulatory(8, 1024, &mut rng()).unwrap();
        assert_eq!(m.error_to_modulators().len(), 8);
        assert_eq!(m.modulators_to_neurons().len(), 1024 * 8);
        assert!(matches!(
            build_modulatory(0, 1024, &mut rng()),
            Err(SnnError::EmptyModulator)
        ));
        assert!(matches!(
            build_modulatory(200, 1024, &mut rng()),
            Err(SnnError::ModulatorTooLarge { .. })
        ));
        assert!(build_modulatory(128, 1024, &mut rng()).is_ok());
    }

    #[test]
    fn ring_clustering_matches_closed_form() {
        // Ring lattice with degree k has clustering 3(k-2) / (4(k-1)).
        for (n, b) in [(16usize, 2usize), (40, 3), (64, 5)] {
            let g = build_banded_recurrent(n, b, 0.5, &mut rng()).unwrap();
            let k = (2 * b) as f64;
            let want = 3.0 * (k - 2.0) / (4.0 * (k - 1.0));
            assert!((clustering_coefficient(&g) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn group_rejects_bad_edges() {
        let dup = vec![(0, 1, 0.0), (0, 1, 1.0)];
        assert!(SynapseGroup::from_edges(SynapseKind::Recurrent, 2, 2, dup, true).is_err());
        let selfie = vec![(1, 1, 0.0)];
        assert!(SynapseGroup::from_edges(SynapseKind::Recurrent, 2, 2, selfie, true).is_err());
        let oob = vec![(0, 5, 0.0)];
        assert!(SynapseGroup::from_edges(SynapseKind::Feedforward, 2, 2, oob, true).is_err());
    }
}
