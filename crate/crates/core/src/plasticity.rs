//! Learning signals and local weight updates.
//!
//! The readout is taught by a winner-take-all margin error. The same error
//! reaches each recurrent layer through a fixed random broadcast matrix,
//! is squashed into a small modulatory state, and comes back out as a
//! per-neuron gate `L_i` that turns eligibility traces into weight changes.

use crate::error::{Result, SnnError};
use crate::topology::{FeedbackMatrix, ModulatoryProjections, SynapseGroup, SynapseKind};

/// Per-edge coincidence traces with lazy decay.
///
/// `values[e]` holds the trace as of step `stamps[e]`; the decay since then
/// is applied only when the edge is touched or read, so a step costs work in
/// proportion to coincident events rather than to the group size.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStore {
    values: Vec<f32>,
    stamps: Vec<u32>,
    touched: Vec<u32>,
    active: Vec<bool>,
    step: u32,
    lambda: f32,
}

impl TraceStore {
    pub fn new(edges: usize, lambda_e: f32) -> Self {
        TraceStore {
            values: vec![0.0; edges],
            stamps: vec![0; edges],
            touched: Vec::new(),
            active: vec![false; edges],
            step: 0,
            lambda: lambda_e,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    /// Zero every trace. Only previously touched entries are visited.
    pub fn reset(&mut self) {
        for &e in &self.touched {
            let e = e as usize;
            self.values[e] = 0.0;
            self.stamps[e] = 0;
            self.active[e] = false;
        }
        self.touched.clear();
        self.step = 0;
    }

    /// Trace of edge `e` at the current step.
    pub fn get(&self, e: usize) -> f32 {
        let dt = self.step - self.stamps[e];
        self.values[e] * self.lambda.powi(dt as i32)
    }

    /// Edges whose trace is nonzero, in first-touch order.
    pub fn touched(&self) -> &[u32] {
        &self.touched
    }
}

/// One step of `e(t+1) = lambda_e e(t) + S_pre(t) S_post(t)` across `group`.
pub fn update_traces(
    traces: &mut TraceStore,
    group: &SynapseGroup,
    pre_spikes: &[bool],
    post_spikes: &[bool],
) -> Result<()> {
    if traces.len() != group.len() {
        return Err(SnnError::shape("trace store", group.len(), traces.len()));
    }
    if pre_spikes.len() != group.pre_size() {
        return Err(SnnError::shape(
            "presynaptic spikes",
            group.pre_size(),
            pre_spikes.len(),
        ));
    }
    if post_spikes.len() != group.post_size() {
        return Err(SnnError::shape(
            "postsynaptic spikes",
            group.post_size(),
            post_spikes.len(),
        ));
    }
    let t = traces.step;
    let lambda = traces.lambda;
    let post = group.post_indices();
    for (j, _) in pre_spikes.iter().enumerate().filter(|(_, &s)| s) {
        for e in group.fan_out(j) {
            if !post_spikes[post[e] as usize] {
                continue;
            }
            let current = traces.values[e] * lambda.powi((t - traces.stamps[e]) as i32);
            traces.values[e] = lambda * current + 1.0;
            traces.stamps[e] = t + 1;
            if !traces.active[e] {
                traces.active[e] = true;
                traces.touched.push(e as u32);
            }
        }
    }
    traces.step = t + 1;
    Ok(())
}

/// Dense per-edge accumulator that remembers which entries it touched.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateBuffer {
    values: Vec<f32>,
    active: Vec<bool>,
    touched: Vec<u32>,
}

impl UpdateBuffer {
    pub fn new(edges: usize) -> Self {
        UpdateBuffer {
            values: vec![0.0; edges],
            active: vec![false; edges],
            touched: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn add(&mut self, e: usize, x: f32) {
        if !self.active[e] {
            self.active[e] = true;
            self.touched.push(e as u32);
        }
        self.values[e] += x;
    }

    pub fn get(&self, e: usize) -> f32 {
        self.values[e]
    }

    pub fn touched(&self) -> &[u32] {
        &self.touched
    }

    /// Sum the current value of every nonzero trace into this buffer.
    pub fn absorb_traces(&mut self, traces: &TraceStore) {
        for &e in traces.touched() {
            self.add(e as usize, traces.get(e as usize));
        }
    }

    /// Add another buffer's contents, in its touch order.
    pub fn merge(&mut self, other: &UpdateBuffer) {
        for &e in &other.touched {
            self.add(e as usize, other.values[e as usize]);
        }
    }

    /// `weights[e] += scale * values[e]` for touched entries, then clear.
    pub fn commit(&mut self, weights: &mut [f32], scale: f32) {
        for &e in &self.touched {
            let e = e as usize;
            weights[e] += self.values[e] * scale;
        }
        self.clear();
    }

    pub fn clear(&mut self) {
        for &e in &self.touched {
            let e = e as usize;
            self.values[e] = 0.0;
            self.active[e] = false;
        }
        self.touched.clear();
    }
}

/// Anything that can enumerate `(edge, eligibility)` for nonzero edges.
pub trait Eligibility {
    fn edges(&self) -> usize;
    fn for_each_active(&self, f: impl FnMut(usize, f32));
}

impl Eligibility for TraceStore {
    fn edges(&self) -> usize {
        self.len()
    }

    fn for_each_active(&self, mut f: impl FnMut(usize, f32)) {
        for &e in self.touched() {
            f(e as usize, self.get(e as usize));
        }
    }
}

impl Eligibility for UpdateBuffer {
    fn edges(&self) -> usize {
        self.len()
    }

    fn for_each_active(&self, mut f: impl FnMut(usize, f32)) {
        for &e in self.touched() {
            f(e as usize, self.values[e as usize]);
        }
    }
}

/// Winner-take-all margin error over the readout.
#[derive(Debug, Clone, PartialEq)]
pub struct WtaError {
    pub delta: Vec<f32>,
    pub margin: f32,
    pub predicted: usize,
    pub target: usize,
}

impl WtaError {
    pub fn is_correct(&self) -> bool {
        self.predicted == self.target
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(z: &[f32]) -> usize {
    let mut best = 0;
    for (c, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = c;
        }
    }
    best
}

pub fn wta_error(z: &[f32], target: usize, gamma: f32) -> Result<WtaError> {
    if target >= z.len() {
        return Err(SnnError::InvalidLabel {
            label: target,
            classes: z.len(),
        });
    }
    let predicted = argmax(z);
    let margin = (gamma + z[predicted] - z[target]).max(0.0);
    let mut delta = vec![0.0; z.len()];
    if predicted != target {
        delta[predicted] = margin;
        delta[target] = -margin;
    }
    Ok(WtaError {
        delta,
        margin,
        predicted,
        target,
    })
}

/// `delta_tilde_i = sum_c delta_c B_ci`.
pub fn broadcast_feedback(delta: &[f32], feedback: &FeedbackMatrix) -> Result<Vec<f32>> {
    if delta.len() != feedback.classes() {
        return Err(SnnError::shape(
            "error vector",
            feedback.classes(),
            delta.len(),
        ));
    }
    let mut out = vec![0.0f32; feedback.neurons()];
    for (c, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (o, &b) in out.iter_mut().zip(feedback.row(c)) {
            *o += d * b;
        }
    }
    Ok(out)
}

/// Modulatory vector `m` and the per-neuron plasticity gate `L` it drives.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulatoryState {
    m: Vec<f32>,
    gate: Vec<f32>,
}

impl ModulatoryState {
    pub fn new(modulators: usize, neurons: usize) -> Self {
        ModulatoryState {
            m: vec![0.0; modulators],
            gate: vec![0.0; neurons],
        }
    }

    pub fn modulators(&self) -> &[f32] {
        &self.m
    }

    pub fn modulators_mut(&mut self) -> &mut [f32] {
        &mut self.m
    }

    pub fn gate(&self) -> &[f32] {
        &self.gate
    }

    /// `u = mean(delta_tilde)`, `m <- lambda_m m + w_em u`, `L = tanh(W_mh m)`.
    pub fn step(
        &mut self,
        proj: &ModulatoryProjections,
        delta_tilde: &[f32],
        lambda_m: f32,
    ) -> Result<()> {
        if delta_tilde.len() != proj.neurons() {
            return Err(SnnError::shape(
                "broadcast feedback",
                proj.neurons(),
                delta_tilde.len(),
            ));
        }
        if self.m.len() != proj.modulators() || self.gate.len() != proj.neurons() {
            return Err(SnnError::shape(
                "modulatory state",
                proj.modulators(),
                self.m.len(),
            ));
        }
        let u =
            (delta_tilde.iter().map(|&d| d as f64).sum::<f64>() / delta_tilde.len() as f64) as f32;
        for (m, &w) in self.m.iter_mut().zip(proj.error_to_modulators()) {
            *m = lambda_m * *m + w * u;
        }
        let width = self.m.len();
        for (i, g) in self.gate.iter_mut().enumerate() {
            let row = &proj.modulators_to_neurons()[i * width..(i + 1) * width];
            let drive: f32 = row.iter().zip(&self.m).map(|(w, m)| w * m).sum();
            *g = drive.tanh();
        }
        Ok(())
    }
}

/// Accumulate `-eta e_ij L_i` for every eligible edge of a plastic group.
pub fn three_factor_update<E: Eligibility>(
    group: &SynapseGroup,
    eligibility: &E,
    gate: &[f32],
    eta: f32,
    accum: &mut UpdateBuffer,
) -> Result<()> {
    if !group.is_plastic() {
        return Err(SnnError::NotPlastic);
    }
    if eligibility.edges() != group.len() {
        return Err(SnnError::shape(
            "eligibility",
            group.len(),
            eligibility.edges(),
        ));
    }
    if accum.len() != group.len() {
        return Err(SnnError::shape("update buffer", group.len(), accum.len()));
    }
    if gate.len() != group.post_size() {
        return Err(SnnError::shape(
            "plasticity gate",
            group.post_size(),
            gate.len(),
        ));
    }
    let post = group.post_indices();
    eligibility.for_each_active(|e, value| {
        let l = gate[post[e] as usize];
        if l != 0.0 && value != 0.0 {
            accum.add(e, -eta * value * l);
        }
    });
    Ok(())
}

/// Delta rule on readout edges: accumulate `-eta_out S_j delta_c` per edge `(j, c)`.
pub fn readout_delta_update(
    group: &SynapseGroup,
    spike_counts: &[f32],
    error: &WtaError,
    eta_out: f32,
    accum: &mut UpdateBuffer,
) -> Result<()> {
    if group.kind() != SynapseKind::Readout {
        return Err(SnnError::KindMismatch {
            expected: "readout",
            actual: group.kind().name(),
        });
    }
    if spike_counts.len() != group.pre_size() {
        return Err(SnnError::shape(
            "presynaptic spike counts",
            group.pre_size(),
            spike_counts.len(),
        ));
    }
    if error.delta.len() != group.post_size() {
        return Err(SnnError::shape(
            "error vector",
            group.post_size(),
            error.delta.len(),
        ));
    }
    if accum.len() != group.len() {
        return Err(SnnError::shape("update buffer", group.len(), accum.len()));
    }
    if error.is_correct() {
        return Ok(());
    }
    let post = group.post_indices();
    for (j, &s) in spike_counts.iter().enumerate() {
        if s == 0.0 {
            continue;
        }
        for e in group.fan_out(j) {
            let d = error.delta[post[e] as usize];
            if d != 0.0 {
                accum.add(e, -eta_out * s * d);
            }
        }
    }
    Ok(())
}
