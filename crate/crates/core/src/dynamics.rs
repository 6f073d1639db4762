//! Discrete-time leaky integrate-and-fire layers.
//!
//! A step is split in two halves so that recurrent input can use the spikes
//! of the current step: [`LayerState::fire`] emits `S(t) = H(V(t) - V_th(t))`
//! from the pre-update potential, then [`LayerState::integrate`] applies
//! `V(t+1) = alpha V(t) + I(t) - V_th(t) S(t)`. [`lif_step`] does both.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SnnError};
use crate::topology::SynapseGroup;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    v: Vec<f32>,
    v_th: Vec<f32>,
    rate_ema: Vec<f32>,
    last_spikes: Vec<bool>,
}

impl LayerState {
    pub fn new(size: usize, threshold_init: f32) -> Self {
        LayerState {
            v: vec![0.0; size],
            v_th: vec![threshold_init; size],
            rate_ema: vec![0.0; size],
            last_spikes: vec![false; size],
        }
    }

    pub fn size(&self) -> usize {
        self.v.len()
    }

    pub fn potentials(&self) -> &[f32] {
        &self.v
    }

    pub fn potentials_mut(&mut self) -> &mut [f32] {
        &mut self.v
    }

    pub fn thresholds(&self) -> &[f32] {
        &self.v_th
    }

    pub fn thresholds_mut(&mut self) -> &mut [f32] {
        &mut self.v_th
    }

    pub fn rates(&self) -> &[f32] {
        &self.rate_ema
    }

    pub fn rates_mut(&mut self) -> &mut [f32] {
        &mut self.rate_ema
    }

    pub fn last_spikes(&self) -> &[bool] {
        &self.last_spikes
    }

    /// Emit spikes from the current (pre-update) potentials.
    pub fn fire(&mut self) -> &[bool] {
        for ((s, &v), &th) in self.last_spikes.iter_mut().zip(&self.v).zip(&self.v_th) {
            *s = v >= th;
        }
        &self.last_spikes
    }

    /// Leak, integrate `input`, subtract the threshold where [`fire`](Self::fire)
    /// spiked, and fold the spikes into the rate estimate.
    pub fn integrate(&mut self, input: &CurrentBuffer, alpha: f32, smoothing: f32) -> Result<()> {
        if input.len() != self.size() {
            return Err(SnnError::shape(
                "layer input current",
                self.size(),
                input.len(),
            ));
        }
        let keep = 1.0 - smoothing;
        for i in 0..self.v.len() {
            let s = self.last_spikes[i];
            let reset = if s { self.v_th[i] } else { 0.0 };
            let v = alpha * self.v[i] + input.values[i] - reset;
            if !v.is_finite() {
                return Err(SnnError::NonFiniteState(format!("neuron {i} reached {v}")));
            }
            self.v[i] = v;
            self.rate_ema[i] = keep * self.rate_ema[i] + if s { smoothing } else { 0.0 };
        }
        Ok(())
    }
}

/// One full LIF step; returns `S(t)`.
pub fn lif_step<'a>(
    state: &'a mut LayerState,
    input: &CurrentBuffer,
    alpha: f32,
    smoothing: f32,
) -> Result<&'a [bool]> {
    if input.len() != state.size() {
        return Err(SnnError::shape(
            "layer input current",
            state.size(),
            input.len(),
        ));
    }
    state.fire();
    state.integrate(input, alpha, smoothing)?;
    Ok(&state.last_spikes)
}

/// Homeostatic threshold drift toward `target_rate`, clamped at `floor`.
pub fn adapt_thresholds(state: &mut LayerState, eta_theta: f32, target_rate: f32, floor: f32) {
    for (th, &r) in state.v_th.iter_mut().zip(&state.rate_ema) {
        *th = (*th + eta_theta * (r - target_rate)).max(floor);
    }
}

/// Clear membranes and spikes between samples. Thresholds and rate
/// estimates carry over.
pub fn reset_sample(state: &mut LayerState) {
    state.v.fill(0.0);
    state.last_spikes.fill(false);
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurrentBuffer {
    values: Vec<f32>,
}

impl CurrentBuffer {
    pub fn zeros(size: usize) -> Self {
        CurrentBuffer {
            values: vec![0.0; size],
        }
    }

    pub fn from_values(values: Vec<f32>) -> Self {
        CurrentBuffer { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn reset(&mut self) {
        self.values.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounter {
    pub synaptic_ops: u64,
    pub spikes_total: u64,
    pub timesteps: u64,
}

impl EventCounter {
    pub fn merge(&mut self, other: &EventCounter) {
        self.synaptic_ops += other.synaptic_ops;
        self.spikes_total += other.spikes_total;
        self.timesteps += other.timesteps;
    }
}

/// Event-driven current delivery: only the fan-out of spiking presynaptic
/// neurons is visited, in ascending presynaptic order.
pub fn propagate(
    spikes: &[bool],
    group: &SynapseGroup,
    out: &mut CurrentBuffer,
    counter: &mut EventCounter,
) -> Result<()> {
    if spikes.len() != group.pre_size() {
        return Err(SnnError::shape(
            "presynaptic spikes",
            group.pre_size(),
            spikes.len(),
        ));
    }
    if out.len() != group.post_size() {
        return Err(SnnError::shape(
            "postsynaptic current",
            group.post_size(),
            out.len(),
        ));
    }
    let post = group.post_indices();
    let weights = group.weights();
    let mut ops = 0u64;
    for (j, _) in spikes.iter().enumerate().filter(|(_, &s)| s) {
        let range = group.fan_out(j);
        ops += range.len() as u64;
        for k in range {
            out.values[post[k] as usize] += weights[k];
        }
    }
    counter.synaptic_ops += ops;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::topology::{add_shortcuts, build_banded_recurrent, SynapseKind};
    use rand::Rng;

    fn state_with(v: f32) -> LayerState {
        let mut s = LayerState::new(1, 1.0);
        s.potentials_mut()[0] = v;
        s
    }

    #[test]
    fn quiescent_fixed_point() {
        let mut s = state_with(0.0);
        let spikes = lif_step(&mut s, &CurrentBuffer::zeros(1), 0.9, 0.01)
            .unwrap()
            .to_vec();
        assert_eq!(spikes, vec![false]);
        assert_eq!(s.potentials()[0], 0.0);
    }

    #[test]
    fn subthreshold_leak() {
        let mut s = state_with(0.5);
        let spikes = lif_step(&mut s, &CurrentBuffer::zeros(1), 0.9, 0.01)
            .unwrap()
            .to_vec();
        assert_eq!(spikes, vec![false]);
        assert!((s.potentials()[0] - 0.45).abs() < 1e-7);
    }

    #[test]
    fn spike_then_subtractive_reset() {
        let mut s = state_with(1.2);
        let spikes = lif_step(&mut s, &CurrentBuffer::zeros(1), 0.9, 0.01)
            .unwrap()
            .to_vec();
        assert_eq!(spikes, vec![true]);
        assert!((s.potentials()[0] - 0.08).abs() < 1e-6);
        assert!((s.rates()[0] - 0.01).abs() < 1e-9);
    }

    #[test]
    fn non_finite_input_aborts() {
        let mut s = state_with(0.0);
        let input = CurrentBuffer::from_values(vec![f32::INFINITY]);
        assert!(matches!(
            lif_step(&mut s, &input, 0.9, 0.01),
            Err(SnnError::NonFiniteState(_))
        ));
    }

    #[test]
    fn pure_leak_never_spikes() {
        let mut s = state_with(0.95);
        let zero = CurrentBuffer::zeros(1);
        let mut expected = 0.95f32;
        for _ in 0..200 {
            let spikes = lif_step(&mut s, &zero, 0.9, 0.01).unwrap();
            assert!(!spikes[0]);
            expected *= 0.9;
            assert_eq!(s.potentials()[0], expected);
        }
    }

    #[test]
    fn threshold_adaptation_direction_and_floor() {
        let mut s = LayerState::new(3, 1.0);
        s.rates_mut().copy_from_slice(&[0.02, 0.12, 0.0]);
        adapt_thresholds(&mut s, 1e-3, 0.02, 0.1);
        assert_eq!(s.thresholds()[0], 1.0);
        assert!((s.thresholds()[1] - 1.0001).abs() < 1e-7);
        assert!(s.thresholds()[2] < 1.0);

        let mut low = LayerState::new(1, 0.1);
        for _ in 0..1000 {
            adapt_thresholds(&mut low, 1e-2, 0.5, 0.1);
            assert!(low.thresholds()[0] >= 0.1);
        }
    }

    #[test]
    fn reset_keeps_homeostatic_state() {
        let mut s = LayerState::new(4, 1.0);
        let drive = CurrentBuffer::from_values(vec![2.0; 4]);
        for _ in 0..5 {
            lif_step(&mut s, &drive, 0.9, 0.01).unwrap();
        }
        s.thresholds_mut()[1] = 1.3;
        let (th, rates) = (s.thresholds().to_vec(), s.rates().to_vec());
        reset_sample(&mut s);
        assert!(s.potentials().iter().all(|&v| v == 0.0));
        assert!(s.last_spikes().iter().all(|&x| !x));
        assert_eq!(s.thresholds(), &th[..]);
        assert_eq!(s.rates(), &rates[..]);
    }

    #[test]
    fn single_spike_touches_exactly_its_fan_out() {
        let g = build_banded_recurrent(32, 3, 0.5, &mut substream(2, "g")).unwrap();
        let g = add_shortcuts(g, 20, 0.2, &mut substream(2, "s")).unwrap();
        for j in 0..32 {
            let mut spikes = vec![false; 32];
            spikes[j] = true;
            let mut out = CurrentBuffer::zeros(32);
            let mut counter = EventCounter::default();
            propagate(&spikes, &g, &mut out, &mut counter).unwrap();
            assert_eq!(counter.synaptic_ops, g.out_degree(j) as u64);
            let touched = out.values().iter().filter(|&&x| x != 0.0).count();
            assert!(touched <= g.out_degree(j));
        }
    }

    #[test]
    fn silent_input_is_free() {
        let g = build_banded_recurrent(16, 2, 0.5, &mut substream(2, "g")).unwrap();
        let mut out = CurrentBuffer::zeros(16);
        let mut counter = EventCounter::default();
        propagate(&[false; 16], &g, &mut out, &mut counter).unwrap();
        assert_eq!(counter.synaptic_ops, 0);
        assert!(out.values().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn propagate_matches_dense_product() {
        let mut rng = substream(5, "dense");
        let g = build_banded_recurrent(64, 5, 0.5, &mut rng).unwrap();
        let g = add_shortcuts(g, 100, 0.3, &mut rng).unwrap();
        let dense = g.to_dense();
        for _ in 0..20 {
            let spikes: Vec<bool> = (0..64).map(|_| rng.random_bool(0.3)).collect();
            let mut out = CurrentBuffer::zeros(64);
            propagate(&spikes, &g, &mut out, &mut EventCounter::default()).unwrap();
            for i in 0..64 {
                let mut acc = 0.0f32;
                for j in 0..64 {
                    if spikes[j] {
                        acc += dense[i * 64 + j];
                    }
                }
                assert_eq!(out.values()[i].to_bits(), acc.to_bits());
            }
        }
    }

    #[test]
    fn shape_errors() {
        let g = SynapseGroup::from_edges(SynapseKind::Feedforward, 2, 3, vec![(0, 1, 1.0)], true)
            .unwrap();
        let mut out = CurrentBuffer::zeros(3);
        let mut c = EventCounter::default();
        assert!(propagate(&[true], &g, &mut out, &mut c).is_err());
        assert!(propagate(&[true, false], &g, &mut CurrentBuffer::zeros(2), &mut c).is_err());
        let mut s = LayerState::new(2, 1.0);
        assert!(lif_step(&mut s, &CurrentBuffer::zeros(3), 0.9, 0.01).is_err());
    }
}
