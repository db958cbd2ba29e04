//! Actor-critic network with a pluggable intruder encoder.
//!
//! The ownship tuple and every intruder tuple go through their own
//! pre-processing layer. Intruders are then reduced to a fixed-width vector by
//! the configured encoder, concatenated with the pre-processed ownship vector
//! and fed through a shared trunk into a 3-way policy head and a value head.

use std::fmt;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{mix, tag};
use crate::sim::{Observation, INTRUDER_FEATURES, OWNSHIP_FEATURES};
use crate::tensor::{lstm_cell, Graph, LstmWeights, ParamSet, Scalar, Tensor, Var};


/// Number of speed advisories.
pub const ACTION_COUNT: usize = 3;

/// Time key for same-route intruders whose closure rate is (nearly) zero:
/// they never close in, so they sort as the most distant in time.
pub const SAME_ROUTE_TIME_SENTINEL: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    Attention,
    LstmDistance,
    LstmTime,
    NclosestDistance,
    NclosestTime,
    Random,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 6] = [
        EncoderKind::Attention,
        EncoderKind::LstmDistance,
        EncoderKind::LstmTime,
        EncoderKind::NclosestDistance,
        EncoderKind::NclosestTime,
        EncoderKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Attention => "attention",
            EncoderKind::LstmDistance => "lstm_distance",
            EncoderKind::LstmTime => "lstm_time",
            EncoderKind::NclosestDistance => "nclosest_distance",
            EncoderKind::NclosestTime => "nclosest_time",
            EncoderKind::Random => "random",
        }
    }

    /// Stable numeric tag used in checkpoints.
    pub fn tag(self) -> u32 {
        match self {
            EncoderKind::Attention => 0,
            EncoderKind::LstmDistance => 1,
            EncoderKind::LstmTime => 2,
            EncoderKind::NclosestDistance => 3,
            EncoderKind::NclosestTime => 4,
            EncoderKind::Random => 5,
        }
    }

    pub fn from_tag(tag: u32) -> Option<EncoderKind> {
        EncoderKind::ALL.into_iter().find(|k| k.tag() == tag)
    }

    pub fn is_trainable(self) -> bool {
        self != EncoderKind::Random
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = EncoderKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown encoder `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub ownship_pre_width: usize,
    pub intruder_pre_width: usize,
    /// Width of the attention output, also the LSTM hidden width.
    pub attention_width: usize,
    pub trunk_widths: Vec<usize>,
    pub action_count: usize,
    pub leaky_slope: f64,
    pub encoder: EncoderKind,
    pub n_closest: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            ownship_pre_width: 128,
            intruder_pre_width: 128,
            attention_width: 128,
            trunk_widths: vec![256, 256],
            action_count: ACTION_COUNT,
            leaky_slope: 0.2,
            encoder: EncoderKind::Attention,
            n_closest: 5,
        }
    }
}

impl NetConfig {
    pub fn with_encoder(encoder: EncoderKind) -> Self {
        NetConfig {
            encoder,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let widths = [self.ownship_pre_width, self.intruder_pre_width, self.attention_width];
        if widths.contains(&0) || self.trunk_widths.is_empty() || self.trunk_widths.contains(&0) {
            return Err(Error::Config(format!("network widths must be positive: {self:?}")));
        }
        if self.action_count != ACTION_COUNT {
            return Err(Error::Config(format!("action_count must be {ACTION_COUNT}, got {}", self.action_count)));
        }
        if !(self.leaky_slope.is_finite() && self.leaky_slope >= 0.0) {
            return Err(Error::Config(format!("leaky_slope must be finite and >= 0, got {}", self.leaky_slope)));
        }
        if matches!(self.encoder, EncoderKind::NclosestDistance | EncoderKind::NclosestTime) && self.n_closest == 0 {
            return Err(Error::Config("n_closest must be >= 1".into()));
        }
        Ok(())
    }

    /// Width of the encoded intruder vector fed to the trunk.
    pub fn encoded_width(&self) -> usize {
        match self.encoder {
            EncoderKind::Attention | EncoderKind::LstmDistance | EncoderKind::LstmTime => self.attention_width,
            EncoderKind::NclosestDistance | EncoderKind::NclosestTime => self.n_closest * self.intruder_pre_width,
            EncoderKind::Random => 0,
        }
    }

    /// Names and shapes of every trainable tensor, in storage order.
    pub fn param_layout(&self) -> Vec<(String, Vec<usize>)> {
        if !self.encoder.is_trainable() {
            return Vec::new();
        }
        let (wo, wi, wa) = (self.ownship_pre_width, self.intruder_pre_width, self.attention_width);
        let mut out: Vec<(String, Vec<usize>)> = vec![
            ("ownship_pre.w".into(), vec![OWNSHIP_FEATURES, wo]),
            ("ownship_pre.b".into(), vec![wo]),
            ("intruder_pre.w".into(), vec![INTRUDER_FEATURES, wi]),
            ("intruder_pre.b".into(), vec![wi]),
        ];
        match self.encoder {
            EncoderKind::Attention => {
                out.push(("attention.w1".into(), vec![wo, wi]));
                out.push(("attention.w2".into(), vec![wi, wa]));
            }
            EncoderKind::LstmDistance | EncoderKind::LstmTime => {
                out.push(("lstm.wx".into(), vec![wi, 4 * wa]));
                out.push(("lstm.wh".into(), vec![wa, 4 * wa]));
                out.push(("lstm.b".into(), vec![4 * wa]));
            }
            _ => {}
        }
        let mut fan_in = self.encoded_width() + wo;
        for (k, &w) in self.trunk_widths.iter().enumerate() {
            out.push((format!("trunk{}.w", k + 1), vec![fan_in, w]));
            out.push((format!("trunk{}.b", k + 1), vec![w]));
            fan_in = w;
        }
        out.push(("policy.w".into(), vec![fan_in, self.action_count]));
        out.push(("policy.b".into(), vec![self.action_count]));
        out.push(("value.w".into(), vec![fan_in, 1]));
        out.push(("value.b".into(), vec![1]));
        out
    }

    /// Checks that `params` holds exactly the tensors of [`param_layout`].
    ///
    /// [`param_layout`]: NetConfig::param_layout
    pub fn check_params<T: Scalar>(&self, params: &ParamSet<T>) -> Result<()> {
        let layout = self.param_layout();
        if layout.len() != params.len() {
            return Err(Error::Config(format!(
                "{} encoder expects {} tensors, found {}",
                self.encoder,
                layout.len(),
                params.len()
            )));
        }
        for (k, (name, shape)) in layout.iter().enumerate() {
            if params.name(k) != name || params.tensor(k).shape() != shape.as_slice() {
                return Err(Error::Config(format!(
                    "tensor {k}: expected `{name}` {shape:?}, found `{}` {:?}",
                    params.name(k),
                    params.tensor(k).shape()
                )));
            }
        }
        Ok(())
    }
}

/// Fresh parameters: weights uniform in ±sqrt(6 / (fan_in + fan_out)),
/// biases zero.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<ParamSet<f32>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, tag::INIT));
    let mut params = ParamSet::new();
    for (name, shape) in config.param_layout() {
        let n: usize = shape.iter().product();
        let data = if shape.len() == 2 {
            let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt() as f32;
            let dist = Uniform::new_inclusive(-limit, limit);
            (0..n).map(|_| dist.sample(&mut rng)).collect()
        } else {
            vec![0.0; n]
        };
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    Ok(params)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SortStrategy {
    DistanceDesc,
    TimeToIntersectionDesc,
}

/// Time until the intruder reaches the shared crossing, or the closure time
/// for same-route traffic.
pub fn time_key(obs: &Observation, k: usize) -> f64 {
    let i = &obs.intruders[k];
    if i.same_route {
        let closure = (obs.ownship.v - i.v).abs();
        if closure < 1e-6 {
            SAME_ROUTE_TIME_SENTINEL
        } else {
            i.distance / closure
        }
    } else {
        i.d_int_intruder / i.v.max(1e-6)
    }
}

fn sort_key(obs: &Observation, k: usize, strategy: SortStrategy) -> f64 {
    match strategy {
        SortStrategy::DistanceDesc => obs.intruders[k].distance,
        SortStrategy::TimeToIntersectionDesc => time_key(obs, k),
    }
}

/// Intruder indices ordered by descending key (the closest is processed
/// last); equal keys fall back to ascending aircraft id.
pub fn sort_intruders(obs: &Observation, strategy: SortStrategy) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..obs.intruders.len()).collect();
    idx.sort_by(|&a, &b| {
        sort_key(obs, b, strategy)
            .total_cmp(&sort_key(obs, a, strategy))
            .then(obs.intruders[a].id.cmp(&obs.intruders[b].id))
    });
    idx
}

/// Indices of the `n` intruders with the smallest key, nearest first.
pub fn nclosest_indices(obs: &Observation, n: usize, strategy: SortStrategy) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..obs.intruders.len()).collect();
    idx.sort_by(|&a, &b| {
        sort_key(obs, a, strategy)
            .total_cmp(&sort_key(obs, b, strategy))
            .then(obs.intruders[a].id.cmp(&obs.intruders[b].id))
    });
    idx.truncate(n);
    idx
}

/// Intruder rows in the order the encoder consumes them.
pub fn encoder_order(obs: &Observation, config: &NetConfig) -> Vec<usize> {
    match config.encoder {
        EncoderKind::Attention => (0..obs.intruders.len()).collect(),
        EncoderKind::LstmDistance => sort_intruders(obs, SortStrategy::DistanceDesc),
        EncoderKind::LstmTime => sort_intruders(obs, SortStrategy::TimeToIntersectionDesc),
        EncoderKind::NclosestDistance => nclosest_indices(obs, config.n_closest, SortStrategy::DistanceDesc),
        EncoderKind::NclosestTime => nclosest_indices(obs, config.n_closest, SortStrategy::TimeToIntersectionDesc),
        EncoderKind::Random => Vec::new(),
    }
}

/// Network inputs for a batch of observations. Intruder rows of sample `b`
/// occupy `offsets[b]..offsets[b + 1]`, already in encoder order.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBatch<T: Scalar = f32> {
    pub own: Tensor<T>,
    pub intruders: Tensor<T>,
    pub offsets: Vec<usize>,
}

impl<T: Scalar> InputBatch<T> {
    pub fn new<'o>(obs: impl IntoIterator<Item = &'o Observation>, config: &NetConfig) -> Self {
        let mut own = Vec::new();
        let mut intr = Vec::new();
        let mut offsets = vec![0];
        for o in obs {
            own.extend(o.ownship_features().iter().map(|&x| T::from_f64(x as f64)));
            for k in encoder_order(o, config) {
                intr.extend(o.intruder_features(k).iter().map(|&x| T::from_f64(x as f64)));
            }
            offsets.push(intr.len() / INTRUDER_FEATURES);
        }
        let b = offsets.len() - 1;
        let m = intr.len() / INTRUDER_FEATURES;
        InputBatch {
            own: Tensor::new(vec![b, OWNSHIP_FEATURES], own).expect("ownship rows"),
            intruders: Tensor::new(vec![m, INTRUDER_FEATURES], intr).expect("intruder rows"),
            offsets,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Graph handles of the network outputs for a batch.
#[derive(Debug, Clone, Copy)]
pub struct NetOutputs {
    /// `[B, 3]`
    pub logits: Var,
    /// `[B, 3]`
    pub log_probs: Var,
    /// `[B, 1]`
    pub value: Var,
}

fn param<'a, T: Scalar>(g: &mut Graph<'a, T>, params: &'a ParamSet<T>, name: &str) -> Result<Var> {
    let k = params
        .index_of(name)
        .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))?;
    Ok(g.param(k, params.tensor(k)))
}

fn dense<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    params: &'a ParamSet<T>,
    x: Var,
    layer: &str,
    slope: Option<f64>,
) -> Result<Var> {
    let w = param(g, params, &format!("{layer}.w"))?;
    let b = param(g, params, &format!("{layer}.b"))?;
    let z = g.matmul(x, w)?;
    let z = g.bias_add(z, b)?;
    Ok(match slope {
        Some(s) => g.leaky_relu(z, s),
        None => z,
    })
}

/// Segment index of every intruder row.
fn row_owner(offsets: &[usize]) -> Vec<Option<usize>> {
    let mut out = Vec::with_capacity(*offsets.last().unwrap_or(&0));
    for (b, w) in offsets.windows(2).enumerate() {
        out.extend(std::iter::repeat(Some(b)).take(w[1] - w[0]));
    }
    out
}

/// Multiplicative attention over variable-length intruder sets.
///
/// `score_i = s^T W1 h_i`, `eta = softmax(score)` within each sample,
/// `c = sum_i eta_i h_i`, `a = tanh(W2 c)`. A sample without intruders has
/// `c = 0` and therefore `a = 0`. Returns `(eta, a)`.
pub fn attention_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    s_pre: Var,
    h_pre: Var,
    offsets: &[usize],
    w1: Var,
    w2: Var,
) -> Result<(Var, Var)> {
    let q = g.matmul(s_pre, w1)?;
    let q_rows = g.gather_rows(q, row_owner(offsets))?;
    let scores = g.row_dot(q_rows, h_pre)?;
    let eta = g.segment_softmax(scores, offsets.to_vec())?;
    let c = g.segment_weighted_sum(eta, h_pre, offsets.to_vec())?;
    let a = g.matmul(c, w2)?;
    Ok((eta, g.tanh(a)))
}

/// Runs each sample's intruder sequence through the LSTM cell and returns
/// the final hidden states `[B, hidden]` (zero for empty sequences).
fn lstm_encode<T: Scalar>(
    g: &mut Graph<'_, T>,
    h_pre: Var,
    offsets: &[usize],
    w: LstmWeights,
    hidden: usize,
) -> Result<Var> {
    let b = offsets.len() - 1;
    let lens: Vec<usize> = offsets.windows(2).map(|w| w[1] - w[0]).collect();
    // longest first, so the samples still running at step t form a prefix
    let mut perm: Vec<usize> = (0..b).collect();
    perm.sort_by(|&x, &y| lens[y].cmp(&lens[x]).then(x.cmp(&y)));
    let mut h = g.constant(Tensor::zeros(&[b, hidden]));
    let mut c = g.constant(Tensor::zeros(&[b, hidden]));
    let max_len = lens.iter().copied().max().unwrap_or(0);
    for t in 0..max_len {
        let live = perm.iter().take_while(|&&s| lens[s] > t).count();
        let x = g.gather_rows(h_pre, perm[..live].iter().map(|&s| Some(offsets[s] + t)).collect())?;
        let (h_live, c_live) = if live == b {
            (h, c)
        } else {
            (g.slice_rows(h, 0, live)?, g.slice_rows(c, 0, live)?)
        };
        let (h_new, c_new) = lstm_cell(g, x, h_live, c_live, w)?;
        if live == b {
            h = h_new;
            c = c_new;
        } else {
            let h_rest = g.slice_rows(h, live, b)?;
            let c_rest = g.slice_rows(c, live, b)?;
            h = g.concat(&[h_new, h_rest], 0)?;
            c = g.concat(&[c_new, c_rest], 0)?;
        }
    }
    let mut inverse = vec![None; b];
    for (pos, &s) in perm.iter().enumerate() {
        inverse[s] = Some(pos);
    }
    g.gather_rows(h, inverse)
}

/// Builds the forward pass for a whole batch. Every operation is
/// row-independent, so each sample's outputs are bitwise identical to a
/// batch of one.
pub fn forward_graph<'a, T: Scalar>(
    g: &mut Graph<'a, T>,
    params: &'a ParamSet<T>,
    config: &NetConfig,
    batch: &InputBatch<T>,
) -> Result<NetOutputs> {
    if !config.encoder.is_trainable() {
        return Err(Error::Config("the random policy has no network".into()));
    }
    let slope = Some(config.leaky_slope);
    let b = batch.batch_size();
    let own = g.constant(batch.own.clone());
    let intr = g.constant(batch.intruders.clone());
    let s_pre = dense(g, params, own, "ownship_pre", slope)?;
    let h_pre = dense(g, params, intr, "intruder_pre", slope)?;
    let encoded = match config.encoder {
        EncoderKind::Attention => {
            let w1 = param(g, params, "attention.w1")?;
            let w2 = param(g, params, "attention.w2")?;
            attention_encode(g, s_pre, h_pre, &batch.offsets, w1, w2)?.1
        }
        EncoderKind::LstmDistance | EncoderKind::LstmTime => {
            let w = LstmWeights {
                wx: param(g, params, "lstm.wx")?,
                wh: param(g, params, "lstm.wh")?,
                b: param(g, params, "lstm.b")?,
            };
            lstm_encode(g, h_pre, &batch.offsets, w, config.attention_width)?
        }
        EncoderKind::NclosestDistance | EncoderKind::NclosestTime => {
            let mut slots = Vec::with_capacity(config.n_closest);
            for j in 0..config.n_closest {
                let idx = (0..b)
                    .map(|s| {
                        let row = batch.offsets[s] + j;
                        (row < batch.offsets[s + 1]).then_some(row)
                    })
                    .collect();
                slots.push(g.gather_rows(h_pre, idx)?);
            }
            g.concat(&slots, 1)?
        }
        EncoderKind::Random => unreachable!(),
    };
    let mut x = g.concat(&[encoded, s_pre], 1)?;
    for k in 0..config.trunk_widths.len() {
        x = dense(g, params, x, &format!("trunk{}", k + 1), slope)?;
    }
    let logits = dense(g, params, x, "policy", None)?;
    let value = dense(g, params, x, "value", None)?;
    let log_probs = g.log_softmax(logits);
    Ok(NetOutputs {
        logits,
        log_probs,
        value,
    })
}

/// Action distribution and value estimate for one observation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolicyOutput {
    pub probs: [f32; ACTION_COUNT],
    pub log_probs: [f32; ACTION_COUNT],
    pub value: f32,
}

impl PolicyOutput {
    pub fn uniform() -> Self {
        let p = 1.0 / ACTION_COUNT as f32;
        PolicyOutput {
            probs: [p; ACTION_COUNT],
            log_probs: [p.ln(); ACTION_COUNT],
            value: 0.0,
        }
    }

    /// Index of the most probable action (lowest index on ties).
    pub fn greedy(&self) -> usize {
        let mut best = 0;
        for k in 1..ACTION_COUNT {
            if self.probs[k] > self.probs[best] {
                best = k;
            }
        }
        best
    }
}

/// A network configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub config: NetConfig,
    pub params: ParamSet<f32>,
}

impl Policy {
    pub fn new(config: NetConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Policy { config, params })
    }

    pub fn from_params(config: NetConfig, params: ParamSet<f32>) -> Result<Self> {
        config.validate()?;
        config.check_params(&params)?;
        Ok(Policy { config, params })
    }

    /// Evaluates a batch of observations in one graph.
    pub fn evaluate<'o>(&self, obs: impl IntoIterator<Item = &'o Observation>) -> Result<Vec<PolicyOutput>> {
        let obs: Vec<&Observation> = obs.into_iter().collect();
        if !self.config.encoder.is_trainable() {
            return Ok(vec![PolicyOutput::uniform(); obs.len()]);
        }
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let batch = InputBatch::<f32>::new(obs.iter().copied(), &self.config);
        let mut g = Graph::new();
        let out = forward_graph(&mut g, &self.params, &self.config, &batch)?;
        let lp = g.value(out.log_probs).data();
        let v = g.value(out.value).data();
        Ok((0..obs.len())
            .map(|b| {
                let mut log_probs = [0.0; ACTION_COUNT];
                log_probs.copy_from_slice(&lp[b * ACTION_COUNT..(b + 1) * ACTION_COUNT]);
                PolicyOutput {
                    probs: log_probs.map(f32::exp),
                    log_probs,
                    value: v[b],
                }
            })
            .collect())
    }

    pub fn forward(&self, obs: &Observation) -> Result<PolicyOutput> {
        Ok(self.evaluate([obs])?[0])
    }
}

/// Categorical draw from `probs`; returns the index and its log-probability.
pub fn sample_action<R: Rng + ?Sized>(probs: &[f32], rng: &mut R) -> Result<(usize, f64)> {
    let sum: f64 = probs.iter().map(|&p| p as f64).sum();
    if probs.is_empty() || (sum - 1.0).abs() > 1e-4 || probs.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Probability(format!("not a probability vector: {probs:?}")));
    }
    let u = rng.gen::<f64>() * sum;
    let mut acc = 0.0;
    let mut pick = None;
    for (k, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p as f64;
            pick = Some(k);
            if u < acc {
                break;
            }
        }
    }
    let k = pick.expect("positive mass");
    Ok((k, (probs[k] as f64).ln()))
}
