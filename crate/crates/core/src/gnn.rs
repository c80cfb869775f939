//! Clause-level core membership predictor.
//!
//! Each layer runs one mean-aggregation graph convolution per edge type
//! (the node itself plus its in-neighbours of that type, then an affine
//! map), averages the three results and applies ReLU. A linear readout with
//! a sigmoid on clause nodes gives the membership probability. Gradients are
//! computed by hand; all parameters live in one flat vector.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cnf::Cnf;
use crate::lcg::{EdgeType, Lcg, FEATURE_DIM};
use crate::oracle::{CoreLabel, LabelSource, OracleError};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    /// A clause is predicted in the core when its probability is strictly
    /// above this value.
    pub threshold: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for GnnConfig {
    fn default() -> Self {
        GnnConfig {
            num_layers: 3,
            hidden_dim: 32,
            threshold: 0.5,
            learning_rate: 1e-2,
            epochs: 1,
            rng_seed: 0,
        }
    }
}

impl GnnConfig {
    pub fn validate(&self) -> Result<(), GnnError> {
        let bad = |msg: &str| Err(GnnError::InvalidConfig(msg.to_string()));
        if self.num_layers == 0 {
            return bad("num_layers must be at least 1");
        }
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be at least 1");
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return bad("threshold must lie strictly between 0 and 1");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum GnnError {
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("graph has feature dimension {found}, model expects {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite loss or parameter at training step {step}; lower the learning rate")]
    NonFinite { step: usize },
    #[error("no training pairs")]
    NoPairs,
    #[error("label has {labels} entries for {clauses} clauses")]
    LabelMismatch { labels: usize, clauses: usize },
    #[error("invalid training pair: {0}")]
    InvalidPair(#[from] OracleError),
    #[error("unsupported model schema version {found} (this build reads {SCHEMA_VERSION})")]
    SchemaVersion { found: u64 },
    #[error("corrupt model file: {0}")]
    Corrupt(String),
}

/// An instance with its oracle-extracted core.
#[derive(Clone, Debug)]
pub struct TrainingPair {
    pub cnf: Cnf,
    pub label: CoreLabel,
}

impl TrainingPair {
    pub fn new(cnf: Cnf, label: CoreLabel) -> Result<TrainingPair, GnnError> {
        label.check_range(cnf.num_clauses())?;
        if label.source != LabelSource::Oracle {
            return Err(GnnError::InvalidConfig("training labels must come from the oracle".into()));
        }
        Ok(TrainingPair { cnf, label })
    }
}

#[derive(Clone, Copy, Debug)]
struct Block {
    weight: usize,
    bias: usize,
    rows: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    config: GnnConfig,
    input_dim: usize,
    params: Vec<f64>,
}

struct LayerCache {
    agg: [Vec<f64>; 3],
    pre: Vec<f64>,
}

struct Trace {
    layers: Vec<LayerCache>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

fn num_params_for(config: &GnnConfig, input_dim: usize) -> usize {
    let h = config.hidden_dim;
    let first = 3 * (input_dim * h + h);
    let rest = (config.num_layers - 1) * 3 * (h * h + h);
    first + rest + h + 1
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean binary cross-entropy from logits and its gradient per logit.
pub fn bce_with_logits(logits: &[f64], labels: &[bool]) -> (f64, Vec<f64>) {
    let n = logits.len().max(1) as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| {
            let y = if y { 1.0 } else { 0.0 };
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    (loss / n, grad)
}

/// Mean of each node's own row and its in-neighbour rows.
fn aggregate(h: &[f64], dim: usize, g: &Lcg, ty: EdgeType) -> Vec<f64> {
    let adj = g.adjacency(ty);
    let mut out = vec![0.0; h.len()];
    for v in 0..g.num_nodes() {
        let neigh = adj.in_neighbors(v);
        let row = &mut out[v * dim..(v + 1) * dim];
        row.copy_from_slice(&h[v * dim..(v + 1) * dim]);
        for &u in neigh {
            let src = &h[u as usize * dim..(u as usize + 1) * dim];
            for (o, s) in row.iter_mut().zip(src) {
                *o += s;
            }
        }
        let scale = 1.0 / (1 + neigh.len()) as f64;
        for o in row.iter_mut() {
            *o *= scale;
        }
    }
    out
}

impl GnnModel {
    pub fn new(config: GnnConfig) -> Result<GnnModel, GnnError> {
        config.validate()?;
        let mut model =
            GnnModel { config, input_dim: FEATURE_DIM, params: vec![0.0; num_params_for(&config, FEATURE_DIM)] };
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for l in 0..config.num_layers {
            for t in 0..3 {
                let b = model.block(l, t);
                let bound = 1.0 / (b.rows as f64).sqrt();
                for p in &mut model.params[b.weight..b.bias + config.hidden_dim] {
                    *p = rng.random_range(-bound..=bound);
                }
            }
        }
        let bound = 1.0 / (config.hidden_dim as f64).sqrt();
        let r = model.readout_offset();
        for p in &mut model.params[r..] {
            *p = rng.random_range(-bound..=bound);
        }
        Ok(model)
    }

    pub fn config(&self) -> &GnnConfig {
        &self.config
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    pub fn set_epochs(&mut self, epochs: usize) {
        self.config.epochs = epochs;
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn block(&self, layer: usize, ty: usize) -> Block {
        let h = self.config.hidden_dim;
        let first = self.input_dim * h + h;
        let other = h * h + h;
        let rows = if layer == 0 { self.input_dim } else { h };
        let weight = if layer == 0 { ty * first } else { 3 * first + ((layer - 1) * 3 + ty) * other };
        Block { weight, bias: weight + rows * h, rows }
    }

    fn readout_offset(&self) -> usize {
        self.params.len() - self.config.hidden_dim - 1
    }

    fn run(&self, g: &Lcg) -> Result<Trace, GnnError> {
        if g.features().len() != g.num_nodes() * self.input_dim {
            return Err(GnnError::DimensionMismatch { expected: self.input_dim, found: FEATURE_DIM });
        }
        let h = self.config.hidden_dim;
        let n = g.num_nodes();
        let mut input = g.features().to_vec();
        let mut layers = Vec::with_capacity(self.config.num_layers);
        for l in 0..self.config.num_layers {
            let d = if l == 0 { self.input_dim } else { h };
            let mut pre = vec![0.0; n * h];
            let agg = EdgeType::ALL.map(|ty| aggregate(&input, d, g, ty));
            for (t, a) in agg.iter().enumerate() {
                let b = self.block(l, t);
                let w = &self.params[b.weight..b.bias];
                let bias = &self.params[b.bias..b.bias + h];
                for v in 0..n {
                    let out = &mut pre[v * h..(v + 1) * h];
                    let mut z = bias.to_vec();
                    for k in 0..d {
                        let x = a[v * d + k];
                        if x != 0.0 {
                            for (zj, wj) in z.iter_mut().zip(&w[k * h..(k + 1) * h]) {
                                *zj += x * wj;
                            }
                        }
                    }
                    for (o, zj) in out.iter_mut().zip(&z) {
                        *o += zj / 3.0;
                    }
                }
            }
            input = pre.iter().map(|&s| s.max(0.0)).collect();
            layers.push(LayerCache { agg, pre });
        }
        let r = self.readout_offset();
        let x = &self.params[r..r + h];
        let b = self.params[r + h];
        let logits = (0..g.num_clause_nodes())
            .map(|c| {
                let node = g.clause_node(c);
                input[node * h..(node + 1) * h].iter().zip(x).map(|(a, w)| a * w).sum::<f64>() + b
            })
            .collect();
        Ok(Trace { layers, hidden: input, logits })
    }

    /// Clause logits, in clause order.
    pub fn logits(&self, g: &Lcg) -> Result<Vec<f64>, GnnError> {
        Ok(self.run(g)?.logits)
    }

    /// Clause core-membership probabilities, in clause order.
    pub fn forward(&self, g: &Lcg) -> Result<Vec<f64>, GnnError> {
        Ok(self.run(g)?.logits.into_iter().map(sigmoid).collect())
    }

    pub fn predict_core(&self, cnf: &Cnf) -> Result<CoreLabel, GnnError> {
        let probs = self.forward(&Lcg::build(cnf))?;
        let idx = probs.iter().enumerate().filter(|(_, &p)| p > self.config.threshold).map(|(i, _)| i).collect();
        Ok(CoreLabel::new(idx, LabelSource::Predicted))
    }

    fn backward(&self, g: &Lcg, trace: &Trace, dlogits: &[f64]) -> Vec<f64> {
        let h = self.config.hidden_dim;
        let n = g.num_nodes();
        let mut grad = vec![0.0; self.params.len()];
        let r = self.readout_offset();
        let mut dh = vec![0.0; n * h];
        for (c, &dl) in dlogits.iter().enumerate() {
            let node = g.clause_node(c);
            for j in 0..h {
                grad[r + j] += dl * trace.hidden[node * h + j];
                dh[node * h + j] += dl * self.params[r + j];
            }
            grad[r + h] += dl;
        }
        for l in (0..self.config.num_layers).rev() {
            let cache = &trace.layers[l];
            let d = if l == 0 { self.input_dim } else { h };
            let ds: Vec<f64> =
                dh.iter().zip(&cache.pre).map(|(&g, &s)| if s > 0.0 { g / 3.0 } else { 0.0 }).collect();
            let mut dinput = if l > 0 { vec![0.0; n * d] } else { Vec::new() };
            for (t, ty) in EdgeType::ALL.into_iter().enumerate() {
                let b = self.block(l, t);
                let agg = &cache.agg[t];
                let adj = g.adjacency(ty);
                let mut dagg = vec![0.0; d];
                for v in 0..n {
                    let dsv = &ds[v * h..(v + 1) * h];
                    if dsv.iter().all(|&x| x == 0.0) {
                        continue;
                    }
                    for (j, &dj) in dsv.iter().enumerate() {
                        grad[b.bias + j] += dj;
                    }
                    for k in 0..d {
                        let a = agg[v * d + k];
                        let wrow = b.weight + k * h;
                        if a != 0.0 {
                            for (j, &dj) in dsv.iter().enumerate() {
                                grad[wrow + j] += a * dj;
                            }
                        }
                        if l > 0 {
                            dagg[k] = dsv.iter().zip(&self.params[wrow..wrow + h]).map(|(x, w)| x * w).sum();
                        }
                    }
                    if l > 0 {
                        let neigh = adj.in_neighbors(v);
                        let scale = 1.0 / (1 + neigh.len()) as f64;
                        for u in std::iter::once(v).chain(neigh.iter().map(|&u| u as usize)) {
                            for (o, &x) in dinput[u * d..(u + 1) * d].iter_mut().zip(&dagg) {
                                *o += x * scale;
                            }
                        }
                    }
                }
            }
            dh = dinput;
        }
        grad
    }

    /// Loss and parameter gradient for one instance.
    pub fn loss_and_gradient(&self, g: &Lcg, labels: &[bool]) -> Result<(f64, Vec<f64>), GnnError> {
        if labels.len() != g.num_clause_nodes() {
            return Err(GnnError::LabelMismatch { labels: labels.len(), clauses: g.num_clause_nodes() });
        }
        let trace = self.run(g)?;
        let (loss, dlogits) = bce_with_logits(&trace.logits, labels);
        Ok((loss, self.backward(g, &trace, &dlogits)))
    }

    pub fn loss(&self, g: &Lcg, labels: &[bool]) -> Result<f64, GnnError> {
        Ok(bce_with_logits(&self.logits(g)?, labels).0)
    }

    /// One gradient step on one instance; returns the loss before the step.
    pub fn step(&mut self, g: &Lcg, labels: &[bool], step: usize) -> Result<f64, GnnError> {
        let (loss, grad) = self.loss_and_gradient(g, labels)?;
        if !loss.is_finite() {
            return Err(GnnError::NonFinite { step });
        }
        let lr = self.config.learning_rate;
        for (p, g) in self.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(GnnError::NonFinite { step });
        }
        Ok(loss)
    }

    /// Runs `config.epochs` passes over `pairs`, one step per instance, in
    /// an order reshuffled every epoch from `config.rng_seed`. Returns the
    /// per-step loss trace.
    pub fn train(&mut self, pairs: &[TrainingPair]) -> Result<Vec<f64>, GnnError> {
        if pairs.is_empty() {
            return Err(GnnError::NoPairs);
        }
        let prepared: Vec<(Lcg, Vec<bool>)> =
            pairs.iter().map(|p| (Lcg::build(&p.cnf), p.label.to_mask(p.cnf.num_clauses()))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.rng_seed ^ 0x7261_696e);
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut trace = Vec::with_capacity(self.config.epochs * prepared.len());
        for _ in 0..self.config.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let (g, y) = &prepared[i];
                let loss = self.step(g, y, trace.len())?;
                trace.push(loss);
            }
        }
        Ok(trace)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<GnnModel, GnnError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| GnnError::Corrupt(e.to_string()))?;
        let schema = value
            .get("schema")
            .and_then(|s| s.as_u64())
            .ok_or_else(|| GnnError::Corrupt("missing schema version".into()))?;
        if schema != SCHEMA_VERSION as u64 {
            return Err(GnnError::SchemaVersion { found: schema });
        }
        let file: ModelFile = serde_json::from_value(value).map_err(|e| GnnError::Corrupt(e.to_string()))?;
        GnnModel::from_file(file)
    }

    fn to_file(&self) -> ModelFile {
        let h = self.config.hidden_dim;
        let dense = |b: Block| Dense {
            rows: b.rows,
            cols: h,
            weight: self.params[b.weight..b.bias].to_vec(),
            bias: self.params[b.bias..b.bias + h].to_vec(),
        };
        let layers = (0..self.config.num_layers)
            .map(|l| LayerFile { cl: dense(self.block(l, 0)), lc: dense(self.block(l, 1)), ll: dense(self.block(l, 2)) })
            .collect();
        let r = self.readout_offset();
        ModelFile {
            schema: SCHEMA_VERSION,
            config: self.config,
            input_dim: self.input_dim,
            layers,
            readout: Readout { weight: self.params[r..r + h].to_vec(), bias: self.params[r + h] },
        }
    }

    fn from_file(file: ModelFile) -> Result<GnnModel, GnnError> {
        file.config.validate()?;
        if file.layers.len() != file.config.num_layers || file.input_dim == 0 {
            return Err(GnnError::Corrupt("layer count does not match config".into()));
        }
        let h = file.config.hidden_dim;
        let mut params = Vec::with_capacity(num_params_for(&file.config, file.input_dim));
        for (l, layer) in file.layers.iter().enumerate() {
            let rows = if l == 0 { file.input_dim } else { h };
            for d in [&layer.cl, &layer.lc, &layer.ll] {
                if d.rows != rows || d.cols != h || d.weight.len() != rows * h || d.bias.len() != h {
                    return Err(GnnError::Corrupt(format!("layer {l} has wrong shape")));
                }
                params.extend_from_slice(&d.weight);
                params.extend_from_slice(&d.bias);
            }
        }
        if file.readout.weight.len() != h {
            return Err(GnnError::Corrupt("readout has wrong shape".into()));
        }
        params.extend_from_slice(&file.readout.weight);
        params.push(file.readout.bias);
        if params.iter().any(|p| !p.is_finite()) {
            return Err(GnnError::Corrupt("non-finite parameter".into()));
        }
        Ok(GnnModel { config: file.config, input_dim: file.input_dim, params })
    }
}

#[derive(Serialize, Deserialize)]
struct Dense {
    rows: usize,
    cols: usize,
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    cl: Dense,
    lc: Dense,
    ll: Dense,
}

#[derive(Serialize, Deserialize)]
struct Readout {
    weight: Vec<f64>,
    bias: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    schema: u32,
    config: GnnConfig,
    input_dim: usize,
    layers: Vec<LayerFile>,
    readout: Readout,
}

/// Clause-level confusion counts pooled over instances.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: &CoreLabel, truth: &CoreLabel, num_clauses: usize) {
        for i in 0..num_clauses {
            match (predicted.contains(i), truth.contains(i)) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    pub fn recall(&self) -> f64 {
        let pos = self.tp + self.fn_;
        if pos == 0 {
            1.0
        } else {
            self.tp as f64 / pos as f64
        }
    }

    pub fn precision(&self) -> f64 {
        let pp = self.tp + self.fp;
        if pp == 0 {
            1.0
        } else {
            self.tp as f64 / pp as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.tn + self.fn_;
        if total == 0 {
            1.0
        } else {
            (self.tp + self.tn) as f64 / total as f64
        }
    }
}

/// Pooled confusion counts of `model` on `pairs`.
pub fn evaluate(model: &GnnModel, pairs: &[TrainingPair]) -> Result<Confusion, GnnError> {
    let mut conf = Confusion::default();
    for p in pairs {
        let pred = model.predict_core(&p.cnf)?;
        conf.add(&pred, &p.label, p.cnf.num_clauses());
    }
    Ok(conf)
}
