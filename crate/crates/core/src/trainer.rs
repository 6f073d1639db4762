//! Training loop: forward simulation, WTA teaching, broadcast feedback,
//! modulatory gating, eligibility-driven plasticity and homeostasis.
//!
//! Within a mini-batch every sample runs on a worker-local replica of the
//! layer state against read-only weights. Learning contributions are
//! buffered per worker and merged in sample order in a serial commit phase,
//! so a single worker is bit-reproducible and more workers differ only by
//! floating summation order.

use std::path::Path;
use std::time::Instant;

use crate::config::Config;
use crate::dataio::{
    Checkpoint, Dataset, EpochMetrics, MetricsWriter, Section, CHECKPOINT_VERSION,
};
use crate::dynamics::{adapt_thresholds, propagate, CurrentBuffer, EventCounter, LayerState};
use crate::encoder::{encode_poisson, SpikeRaster};
use crate::error::{Result, SnnError};
use crate::plasticity::{
    argmax, broadcast_feedback, readout_delta_update, three_factor_update, update_traces,
    wta_error, ModulatoryState, TraceStore, UpdateBuffer,
};
use crate::rng::substream;
use crate::topology::{fingerprint, NetworkTopology};

/// Learnable network plus its persistent (cross-sample) state.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: Config,
    pub topology: NetworkTopology,
    /// Thresholds and firing-rate estimates persist; membranes are per sample.
    pub layers: Vec<LayerState>,
    pub modulators: Vec<ModulatoryState>,
    pub epochs_completed: usize,
}

impl Model {
    pub fn new(config: Config) -> Result<Self> {
        config.validate()?;
        let topology = NetworkTopology::build(&config.network, config.training.seed)?;
        let th = config.homeostasis.threshold_init as f32;
        let layers = config
            .network
            .layer_sizes
            .iter()
            .map(|&n| LayerState::new(n, th))
            .collect();
        let modulators = config
            .network
            .layer_sizes
            .iter()
            .map(|&n| ModulatoryState::new(config.network.modulators, n))
            .collect();
        Ok(Model {
            config,
            topology,
            layers,
            modulators,
            epochs_completed: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.config.network.classes
    }

    /// Hash over weights, thresholds and modulatory vectors.
    pub fn learnable_fingerprint(&self) -> u64 {
        let mut arrays: Vec<&[f32]> = Vec::new();
        for (k, l) in self.topology.layers.iter().enumerate() {
            arrays.extend([
                l.recurrent.weights(),
                l.feedforward.weights(),
                l.readout.weights(),
            ]);
            arrays.push(self.layers[k].thresholds());
            arrays.push(self.modulators[k].modulators());
        }
        fingerprint(&arrays)
    }

    fn sections(&self) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for (k, l) in self.topology.layers.iter().enumerate() {
            out.push((
                format!("layer{k}/recurrent"),
                l.recurrent.weights().to_vec(),
            ));
            out.push((
                format!("layer{k}/feedforward"),
                l.feedforward.weights().to_vec(),
            ));
            out.push((format!("layer{k}/readout"), l.readout.weights().to_vec()));
            out.push((
                format!("layer{k}/thresholds"),
                self.layers[k].thresholds().to_vec(),
            ));
            out.push((
                format!("layer{k}/rate_ema"),
                self.layers[k].rates().to_vec(),
            ));
            out.push((
                format!("layer{k}/modulators"),
                self.modulators[k].modulators().to_vec(),
            ));
        }
        out
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            epochs_completed: self.epochs_completed,
            structure_fingerprint: self.topology.structure_fingerprint(),
            sections: self
                .sections()
                .into_iter()
                .map(|(name, data)| Section {
                    shape: vec![data.len()],
                    name,
                    data,
                })
                .collect(),
        }
    }

    /// Rebuild the fixed structure from the embedded config and overlay the
    /// saved arrays, checking every shape.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut model = Model::new(ck.config.clone())?;
        if model.topology.structure_fingerprint() != ck.structure_fingerprint {
            return Err(SnnError::DimensionMismatch(
                "checkpoint connectivity does not match its config".into(),
            ));
        }
        let expected = model.sections();
        if expected.len() != ck.sections.len() {
            return Err(SnnError::shape(
                "checkpoint sections",
                expected.len(),
                ck.sections.len(),
            ));
        }
        for (k, layer) in model.topology.layers.iter_mut().enumerate() {
            let fetch = |part: &str, len: usize| -> Result<&[f32]> {
                let name = format!("layer{k}/{part}");
                let s = ck.section(&name).ok_or_else(|| {
                    SnnError::DimensionMismatch(format!("missing section {name}"))
                })?;
                if s.shape != [len] || s.data.len() != len {
                    return Err(SnnError::shape(name, len, s.data.len()));
                }
                Ok(&s.data)
            };
            let w = fetch("recurrent", layer.recurrent.len())?;
            layer.recurrent.weights_mut().copy_from_slice(w);
            let w = fetch("feedforward", layer.feedforward.len())?;
            layer.feedforward.weights_mut().copy_from_slice(w);
            let w = fetch("readout", layer.readout.len())?;
            layer.readout.weights_mut().copy_from_slice(w);
            let n = model.layers[k].size();
            model.layers[k]
                .thresholds_mut()
                .copy_from_slice(fetch("thresholds", n)?);
            model.layers[k]
                .rates_mut()
                .copy_from_slice(fetch("rate_ema", n)?);
            let m = model.modulators[k].modulators().len();
            model.modulators[k]
                .modulators_mut()
                .copy_from_slice(fetch("modulators", m)?);
        }
        model.epochs_completed = ck.epochs_completed;
        Ok(model)
    }
}

/// Worker-local simulation buffers, reused across samples.
#[derive(Debug, Clone)]
pub struct Scratch {
    states: Vec<LayerState>,
    currents: Vec<CurrentBuffer>,
    readout: CurrentBuffer,
    counts: Vec<Vec<f32>>,
    rec_traces: Vec<TraceStore>,
    ff_traces: Vec<TraceStore>,
}

impl Scratch {
    pub fn new(model: &Model) -> Self {
        let lambda = model.config.learning.lambda_e as f32;
        let sizes = &model.config.network.layer_sizes;
        let traces =
            |pick: fn(&crate::topology::LayerTopology) -> &crate::topology::SynapseGroup| {
                model
                    .topology
                    .layers
                    .iter()
                    .map(|l| {
                        let g = pick(l);
                        TraceStore::new(if g.is_plastic() { g.len() } else { 0 }, lambda)
                    })
                    .collect::<Vec<_>>()
            };
        Scratch {
            states: model.layers.clone(),
            currents: sizes.iter().map(|&n| CurrentBuffer::zeros(n)).collect(),
            readout: CurrentBuffer::zeros(model.classes()),
            counts: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            rec_traces: traces(|l| &l.recurrent),
            ff_traces: traces(|l| &l.feedforward),
        }
    }

    fn prepare(&mut self, model: &Model) {
        for (replica, shared) in self.states.iter_mut().zip(&model.layers) {
            crate::dynamics::reset_sample(replica);
            replica
                .thresholds_mut()
                .copy_from_slice(shared.thresholds());
            // Replicas start from zero so the sample's rate contribution can
            // be folded into the shared estimate at commit time.
            replica.rates_mut().fill(0.0);
        }
        for c in &mut self.counts {
            c.fill(0.0);
        }
        for t in self.rec_traces.iter_mut().chain(self.ff_traces.iter_mut()) {
            t.reset();
        }
        self.readout.reset();
    }
}

/// Simulate one sample; leaves spike counts, traces and rate contributions
/// in `s` and returns the readout vector.
fn simulate(
    model: &Model,
    raster: &SpikeRaster,
    s: &mut Scratch,
    learning: bool,
    counter: &mut EventCounter,
) -> Result<Vec<f32>> {
    let net = &model.config.network;
    if raster.neurons() != net.input_size {
        return Err(SnnError::shape(
            "input raster",
            net.input_size,
            raster.neurons(),
        ));
    }
    s.prepare(model);
    let alpha = model.config.simulation.alpha as f32;
    let smoothing = model.config.homeostasis.rate_smoothing as f32;
    for t in 0..raster.timesteps() {
        for st in s.states.iter_mut() {
            st.fire();
        }
        for (k, layer) in model.topology.layers.iter().enumerate() {
            let pre: &[bool] = if k == 0 {
                raster.step(t)
            } else {
                s.states[k - 1].last_spikes()
            };
            let post = s.states[k].last_spikes();
            let current = &mut s.currents[k];
            current.reset();
            propagate(pre, &layer.feedforward, current, counter)?;
            propagate(post, &layer.recurrent, current, counter)?;
            propagate(post, &layer.readout, &mut s.readout, counter)?;
            if learning {
                if layer.recurrent.is_plastic() {
                    update_traces(&mut s.rec_traces[k], &layer.recurrent, post, post)?;
                }
                if layer.feedforward.is_plastic() {
                    update_traces(&mut s.ff_traces[k], &layer.feedforward, pre, post)?;
                }
            }
            let mut fired = 0u64;
            for (c, &spike) in s.counts[k].iter_mut().zip(post) {
                if spike {
                    *c += 1.0;
                    fired += 1;
                }
            }
            counter.spikes_total += fired;
        }
        for (k, st) in s.states.iter_mut().enumerate() {
            st.integrate(&s.currents[k], alpha, smoothing)
                .map_err(|e| match e {
                    SnnError::NonFiniteState(msg) => {
                        SnnError::NonFiniteState(format!("layer {k}, step {t}: {msg}"))
                    }
                    other => other,
                })?;
        }
        counter.timesteps += 1;
    }
    Ok(s.readout.values().to_vec())
}

/// Eligibility traces left at the end of a forward window.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTraces {
    pub recurrent: TraceStore,
    pub feedforward: TraceStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardResult {
    pub z: Vec<f32>,
    pub spike_counts: Vec<Vec<f32>>,
    pub traces: Option<Vec<LayerTraces>>,
    pub counter: EventCounter,
}

/// Stand-alone forward pass; shared state is left untouched.
pub fn run_forward(
    model: &Model,
    raster: &SpikeRaster,
    with_traces: bool,
) -> Result<ForwardResult> {
    let mut scratch = Scratch::new(model);
    let mut counter = EventCounter::default();
    let z = simulate(model, raster, &mut scratch, with_traces, &mut counter)?;
    let traces = with_traces.then(|| {
        scratch
            .rec_traces
            .iter()
            .zip(&scratch.ff_traces)
            .map(|(r, f)| LayerTraces {
                recurrent: r.clone(),
                feedforward: f.clone(),
            })
            .collect()
    });
    Ok(ForwardResult {
        z,
        spike_counts: scratch.counts,
        traces,
        counter,
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BatchMetrics {
    pub samples: usize,
    pub correct: usize,
    pub margin_sum: f64,
    pub mean_abs_gate: f64,
    pub counter: EventCounter,
}

impl BatchMetrics {
    pub fn accuracy(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.correct as f64 / self.samples as f64
        }
    }

    pub fn mean_margin(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.margin_sum / self.samples as f64
        }
    }
}

/// Per-worker learning contributions for one mini-batch.
#[derive(Debug, Clone)]
struct BatchAccum {
    readout: Vec<UpdateBuffer>,
    elig_rec: Vec<UpdateBuffer>,
    elig_ff: Vec<UpdateBuffer>,
    delta_sum: Vec<f64>,
    rate_contrib: Vec<Vec<Vec<f32>>>,
    metrics: BatchMetrics,
}

impl BatchAccum {
    fn new(model: &Model) -> Self {
        let layers = &model.topology.layers;
        let sized = |len: usize, plastic: bool| UpdateBuffer::new(if plastic { len } else { 0 });
        BatchAccum {
            readout: layers
                .iter()
                .map(|l| UpdateBuffer::new(l.readout.len()))
                .collect(),
            elig_rec: layers
                .iter()
                .map(|l| sized(l.recurrent.len(), l.recurrent.is_plastic()))
                .collect(),
            elig_ff: layers
                .iter()
                .map(|l| sized(l.feedforward.len(), l.feedforward.is_plastic()))
                .collect(),
            delta_sum: vec![0.0; model.classes()],
            rate_contrib: Vec::new(),
            metrics: BatchMetrics::default(),
        }
    }

    fn merge(&mut self, other: &mut BatchAccum) {
        for (a, b) in self.readout.iter_mut().zip(&mut other.readout) {
            a.merge(b);
            b.clear();
        }
        for (a, b) in self.elig_rec.iter_mut().zip(&mut other.elig_rec) {
            a.merge(b);
            b.clear();
        }
        for (a, b) in self.elig_ff.iter_mut().zip(&mut other.elig_ff) {
            a.merge(b);
            b.clear();
        }
        for (a, b) in self.delta_sum.iter_mut().zip(&mut other.delta_sum) {
            *a += *b;
            *b = 0.0;
        }
        self.rate_contrib.append(&mut other.rate_contrib);
        let m = std::mem::take(&mut other.metrics);
        self.metrics.samples += m.samples;
        self.metrics.correct += m.correct;
        self.metrics.margin_sum += m.margin_sum;
        self.metrics.counter.merge(&m.counter);
    }
}

#[derive(Debug, Clone)]
struct Worker {
    scratch: Scratch,
    accum: BatchAccum,
}

impl Worker {
    fn learn(&mut self, model: &Model, raster: &SpikeRaster, label: usize) -> Result<()> {
        let learning = &model.config.learning;
        let mut counter = EventCounter::default();
        let z = simulate(model, raster, &mut self.scratch, true, &mut counter)?;
        let err = wta_error(&z, label, learning.gamma as f32)?;
        let acc = &mut self.accum;
        for (k, layer) in model.topology.layers.iter().enumerate() {
            readout_delta_update(
                &layer.readout,
                &self.scratch.counts[k],
                &err,
                learning.eta_out as f32,
                &mut acc.readout[k],
            )?;
            if layer.recurrent.is_plastic() {
                acc.elig_rec[k].absorb_traces(&self.scratch.rec_traces[k]);
            }
            if layer.feedforward.is_plastic() {
                acc.elig_ff[k].absorb_traces(&self.scratch.ff_traces[k]);
            }
        }
        for (s, &d) in acc.delta_sum.iter_mut().zip(&err.delta) {
            *s += d as f64;
        }
        acc.rate_contrib.push(
            self.scratch
                .states
                .iter()
                .map(|s| s.rates().to_vec())
                .collect(),
        );
        acc.metrics.samples += 1;
        acc.metrics.correct += err.is_correct() as usize;
        acc.metrics.margin_sum += err.margin as f64;
        acc.metrics.counter.merge(&counter);
        Ok(())
    }
}

pub type LabeledRaster = (SpikeRaster, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub samples: usize,
    pub accuracy: f64,
    /// Softmax cross-entropy of the readout, for monitoring only.
    pub cross_entropy: f64,
    pub counter: EventCounter,
}

/// Owns the model and the worker buffers used to train it.
pub struct Trainer {
    pub model: Model,
    workers: Vec<Worker>,
    rec_updates: Vec<UpdateBuffer>,
    ff_updates: Vec<UpdateBuffer>,
}

impl Trainer {
    pub fn new(model: Model, workers: usize) -> Self {
        let workers = (0..workers.max(1))
            .map(|_| Worker {
                scratch: Scratch::new(&model),
                accum: BatchAccum::new(&model),
            })
            .collect();
        let rec_updates = model
            .topology
            .layers
            .iter()
            .map(|l| UpdateBuffer::new(l.recurrent.len()))
            .collect();
        let ff_updates = model
            .topology
            .layers
            .iter()
            .map(|l| UpdateBuffer::new(l.feedforward.len()))
            .collect();
        Trainer {
            model,
            workers,
            rec_updates,
            ff_updates,
        }
    }

    pub fn workers(&self) -> usize {
        self.workers.len()
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    /// One mini-batch: per-sample forward passes and readout deltas, then a
    /// serial commit of readout updates, broadcast feedback, modulatory
    /// gating, three-factor updates and threshold adaptation.
    pub fn train_batch(&mut self, batch: &[LabeledRaster]) -> Result<BatchMetrics> {
        if batch.is_empty() {
            return Ok(BatchMetrics::default());
        }
        let classes = self.model.classes();
        if let Some(&(_, label)) = batch.iter().find(|(_, y)| *y >= classes) {
            return Err(SnnError::InvalidLabel { label, classes });
        }
        let model = &self.model;
        let chunk = batch.len().div_ceil(self.workers.len());
        if self.workers.len() == 1 {
            let w = &mut self.workers[0];
            for (raster, label) in batch {
                w.learn(model, raster, *label)?;
            }
        } else {
            let results: Vec<Result<()>> = std::thread::scope(|scope| {
                let handles: Vec<_> = self
                    .workers
                    .iter_mut()
                    .zip(batch.chunks(chunk))
                    .map(|(w, part)| {
                        scope.spawn(move || {
                            for (raster, label) in part {
                                w.learn(model, raster, *label)?;
                            }
                            Ok(())
                        })
                    })
                    .collect();
                handles
                    .into_iter()
                    .map(|h| h.join().expect("worker panicked"))
                    .collect()
            });
            for r in results {
                r?;
            }
            let (first, rest) = self.workers.split_at_mut(1);
            for w in rest {
                first[0].accum.merge(&mut w.accum);
            }
        }
        self.commit(batch.len())
    }

    fn commit(&mut self, batch_size: usize) -> Result<BatchMetrics> {
        let cfg = self.model.config.clone();
        let acc = &mut self.workers[0].accum;
        let scale = 1.0 / batch_size as f32;
        let mean_delta: Vec<f32> = acc
            .delta_sum
            .iter()
            .map(|&d| (d / batch_size as f64) as f32)
            .collect();
        let mut gate_sum = 0.0f64;
        let mut gate_count = 0usize;

        for (k, layer) in self.model.topology.layers.iter_mut().enumerate() {
            acc.readout[k].commit(layer.readout.weights_mut(), scale);

            let feedback = broadcast_feedback(&mean_delta, &layer.feedback)?;
            let modulator = &mut self.model.modulators[k];
            modulator.step(&layer.modulatory, &feedback, cfg.learning.lambda_m as f32)?;
            let gate = modulator.gate();
            gate_sum += gate.iter().map(|g| g.abs() as f64).sum::<f64>();
            gate_count += gate.len();

            let eta = cfg.learning.eta as f32;
            if layer.recurrent.is_plastic() {
                three_factor_update(
                    &layer.recurrent,
                    &acc.elig_rec[k],
                    gate,
                    eta,
                    &mut self.rec_updates[k],
                )?;
                self.rec_updates[k].commit(layer.recurrent.weights_mut(), scale);
                acc.elig_rec[k].clear();
            }
            if layer.feedforward.is_plastic() {
                three_factor_update(
                    &layer.feedforward,
                    &acc.elig_ff[k],
                    gate,
                    eta,
                    &mut self.ff_updates[k],
                )?;
                self.ff_updates[k].commit(layer.feedforward.weights_mut(), scale);
                acc.elig_ff[k].clear();
            }
        }

        let keep =
            (1.0 - cfg.homeostasis.rate_smoothing as f32).powi(cfg.simulation.timesteps as i32);
        for sample in acc.rate_contrib.drain(..) {
            for (state, contrib) in self.model.layers.iter_mut().zip(sample) {
                for (r, c) in state.rates_mut().iter_mut().zip(contrib) {
                    *r = keep * *r + c;
                }
            }
        }
        let h = &cfg.homeostasis;
        for state in &mut self.model.layers {
            adapt_thresholds(
                state,
                h.eta_theta as f32,
                h.target_rate as f32,
                h.threshold_floor as f32,
            );
        }

        acc.delta_sum.fill(0.0);
        let mut metrics = std::mem::take(&mut acc.metrics);
        metrics.mean_abs_gate = if gate_count == 0 {
            0.0
        } else {
            gate_sum / gate_count as f64
        };
        Ok(metrics)
    }

    /// Pure inference over `data`; `stream` names the encoding substreams.
    pub fn evaluate(&mut self, data: &Dataset, stream: &str) -> Result<EvalResult> {
        evaluate_with(&self.model, data, stream, &mut self.workers)
    }

    /// Train from `model.epochs_completed` up to `training.epochs`.
    pub fn train(
        &mut self,
        train_set: &Dataset,
        test_set: &Dataset,
        opts: &TrainOptions<'_>,
    ) -> Result<Vec<EpochMetrics>> {
        if train_set.is_empty() {
            return Err(SnnError::EmptyDataset);
        }
        let mut writer = match opts.out_dir {
            Some(dir) => Some(MetricsWriter::create(dir)?),
            None => None,
        };
        let cfg = self.model.config.clone();
        let seed = cfg.training.seed;
        let mut history = Vec::new();
        for epoch in self.model.epochs_completed..cfg.training.epochs {
            let started = Instant::now();
            let mut order: Vec<usize> = (0..train_set.len()).collect();
            rand::seq::SliceRandom::shuffle(
                order.as_mut_slice(),
                &mut substream(seed, &format!("epoch-{epoch}/shuffle")),
            );
            let mut totals = BatchMetrics::default();
            let mut gate_sum = 0.0;
            let mut batches = 0usize;
            for ids in order.chunks(cfg.training.batch_size) {
                let batch = ids
                    .iter()
                    .map(|&i| {
                        let mut rng = substream(seed, &format!("epoch-{epoch}/sample-{i}"));
                        let raster = encode_poisson(
                            train_set.image(i),
                            cfg.simulation.timesteps,
                            cfg.encoder.f_max,
                            &mut rng,
                        )?;
                        Ok((raster, train_set.label(i)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let m = self.train_batch(&batch)?;
                totals.samples += m.samples;
                totals.correct += m.correct;
                totals.margin_sum += m.margin_sum;
                totals.counter.merge(&m.counter);
                gate_sum += m.mean_abs_gate;
                batches += 1;
            }
            let eval = self.evaluate(test_set, "eval/test")?;
            self.model.epochs_completed = epoch + 1;
            let metrics = EpochMetrics {
                epoch: epoch + 1,
                train_accuracy: totals.accuracy(),
                test_accuracy: eval.accuracy,
                mean_margin: totals.mean_margin(),
                cross_entropy: eval.cross_entropy,
                synaptic_ops: totals.counter.synaptic_ops,
                spikes_total: totals.counter.spikes_total,
                timesteps: totals.counter.timesteps,
                mean_abs_gate: gate_sum / batches.max(1) as f64,
                wall_time: if opts.record_wall_time {
                    started.elapsed().as_secs_f64()
                } else {
                    0.0
                },
            };
            if let Some(w) = writer.as_mut() {
                w.write(&metrics)?;
            }
            if let Some(report) = opts.on_epoch {
                report(&metrics, started.elapsed().as_secs_f64());
            }
            if let Some(dir) = opts.out_dir {
                if (epoch + 1) % cfg.training.checkpoint_every == 0 {
                    self.model
                        .to_checkpoint()
                        .save(&dir.join(format!("checkpoint-epoch{}.snn", epoch + 1)))?;
                }
            }
            history.push(metrics);
        }
        if let Some(dir) = opts.out_dir {
            std::fs::create_dir_all(dir)
                .map_err(|e| SnnError::io("creating output dir", dir, e))?;
            self.model.to_checkpoint().save(&dir.join("final.snn"))?;
        }
        Ok(history)
    }
}

/// Per-epoch progress hook: metrics and elapsed seconds.
pub type EpochCallback<'a> = &'a dyn Fn(&EpochMetrics, f64);

#[derive(Default)]
pub struct TrainOptions<'a> {
    /// Where metrics and checkpoints go; nothing is written when `None`.
    pub out_dir: Option<&'a Path>,
    /// Record wall-clock seconds in the metrics (breaks byte-identical reruns).
    pub record_wall_time: bool,
    /// Called after each epoch with the metrics and elapsed seconds.
    pub on_epoch: Option<EpochCallback<'a>>,
}

fn cross_entropy(z: &[f32], label: usize) -> f64 {
    let max = z.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let lse = max + z.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln();
    lse - z[label] as f64
}

fn evaluate_with(
    model: &Model,
    data: &Dataset,
    stream: &str,
    workers: &mut [Worker],
) -> Result<EvalResult> {
    if data.is_empty() {
        return Err(SnnError::EmptyDataset);
    }
    let cfg = &model.config;
    let seed = cfg.training.seed;
    let run = |w: &mut Worker, ids: std::ops::Range<usize>| -> Result<(usize, f64, EventCounter)> {
        let mut correct = 0;
        let mut xent = 0.0;
        let mut counter = EventCounter::default();
        for i in ids {
            let mut rng = substream(seed, &format!("{stream}/sample-{i}"));
            let raster = encode_poisson(
                data.image(i),
                cfg.simulation.timesteps,
                cfg.encoder.f_max,
                &mut rng,
            )?;
            let z = simulate(model, &raster, &mut w.scratch, false, &mut counter)?;
            let y = data.label(i);
            if y >= z.len() {
                return Err(SnnError::InvalidLabel {
                    label: y,
                    classes: z.len(),
                });
            }
            correct += (argmax(&z) == y) as usize;
            xent += cross_entropy(&z, y);
        }
        Ok((correct, xent, counter))
    };
    let n = data.len();
    let chunk = n.div_ceil(workers.len());
    let parts: Vec<Result<(usize, f64, EventCounter)>> = if workers.len() == 1 {
        vec![run(&mut workers[0], 0..n)]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = workers
                .iter_mut()
                .enumerate()
                .map(|(w_idx, w)| {
                    let lo = (w_idx * chunk).min(n);
                    let hi = ((w_idx + 1) * chunk).min(n);
                    scope.spawn(move || run(w, lo..hi))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker panicked"))
                .collect()
        })
    };
    let mut correct = 0;
    let mut xent = 0.0;
    let mut counter = EventCounter::default();
    for p in parts {
        let (c, x, k) = p?;
        correct += c;
        xent += x;
        counter.merge(&k);
    }
    Ok(EvalResult {
        samples: n,
        accuracy: correct as f64 / n as f64,
        cross_entropy: xent / n as f64,
        counter,
    })
}

/// Evaluate without a trainer (allocates its own buffers).
pub fn evaluate(model: &Model, data: &Dataset, stream: &str) -> Result<EvalResult> {
    let mut workers = vec![Worker {
        scratch: Scratch::new(model),
        accum: BatchAccum::new(model),
    }];
    evaluate_with(model, data, stream, &mut workers)
}
