//! Shared-bottom multi-task network.
//!
//! ```text
//! x ──► shared dense stack (ReLU) ──┬─► CTR tower ─► sigmoid
//!                                   ├─► ATC tower ─► sigmoid
//!                                   ├─► CVR tower ─► sigmoid
//!                                   └─► relevance tower ─► head
//! ```
//!
//! The relevance head is one of:
//! - `ordinal`: a scalar latent `z` and ordered cutpoints `θ1 < θ2`, giving
//!   `p(r ≥ k) = σ(z − θk)`. `θ2 = θ1 + max(softplus(δ), GAP_FLOOR)`, so the
//!   two cumulative probabilities can never cross.
//! - `softmax3`: three class logits.
//! - `regression`: one unbounded scalar fit with squared error.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::featurizer::FeatureVector;

/// Lower bound on the gap between the two ordinal cutpoints.
pub const GAP_FLOOR: f64 = 1e-3;

pub const INIT_CUTPOINT: f64 = -0.5;
pub const INIT_GAP: f64 = 1.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Inverse of softplus for positive `y`.
fn softplus_inverse(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Ordinal,
    Softmax3,
    Regression,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Ordinal, HeadKind::Softmax3, HeadKind::Regression];

    pub fn relevance_arity(self) -> usize {
        match self {
            HeadKind::Softmax3 => 3,
            HeadKind::Ordinal | HeadKind::Regression => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Ordinal => "ordinal",
            HeadKind::Softmax3 => "softmax3",
            HeadKind::Regression => "regression",
        }
    }
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ordinal" => Ok(HeadKind::Ordinal),
            "softmax3" | "softmax" => Ok(HeadKind::Softmax3),
            "regression" => Ok(HeadKind::Regression),
            other => Err(Error::Invalid(format!(
                "unknown head kind {other:?} (expected ordinal, softmax3 or regression)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Arch {
    pub shared: Vec<usize>,
    pub tower: Vec<usize>,
}

impl Default for Arch {
    fn default() -> Self {
        Arch {
            shared: vec![64, 32],
            tower: vec![16],
        }
    }
}

/// Task towers, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Ctr = 0,
    Atc = 1,
    Cvr = 2,
    Relevance = 3,
}

pub const ENGAGEMENT_TASKS: [Task; 3] = [Task::Ctr, Task::Atc, Task::Cvr];

/// Fully connected layer; `weights[o][i]` maps input `i` to output `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn he(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        Dense {
            weights: (0..outputs)
                .map(|_| (0..inputs).map(|_| normal.sample(rng)).collect())
                .collect(),
            bias: vec![0.0; outputs],
        }
    }


    pub fn inputs(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn outputs(&self) -> usize {
        self.bias.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates parameter gradients into `grad` and returns dL/d(input).
    fn backward(&self, input: &[f64], d_out: &[f64], grad: &mut Dense) -> Vec<f64> {
        let mut d_in = vec![0.0; input.len()];
        for (o, &d) in d_out.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grad.bias[o] += d;
            for ((g, w), (x, di)) in grad.weights[o]
                .iter_mut()
                .zip(&self.weights[o])
                .zip(input.iter().zip(d_in.iter_mut()))
            {
                *g += d * x;
                *di += d * w;
            }
        }
        d_in
    }
}

/// Network weights plus the metadata needed to score with them safely.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub input_dim: usize,
    pub arch: Arch,
    pub head_kind: HeadKind,
    pub layout_fingerprint: String,
    pub shared: Vec<Dense>,
    /// CTR, ATC, CVR and relevance towers; each ends in its output layer.
    pub towers: Vec<Vec<Dense>>,
    /// First ordinal cutpoint θ1.
    pub cutpoint: f64,
    /// Unconstrained gap parameter δ; θ2 = θ1 + max(softplus(δ), GAP_FLOOR).
    pub gap: f64,
}

impl ModelParams {
    pub fn cutpoints(&self) -> (f64, f64) {
        (self.cutpoint, self.cutpoint + softplus(self.gap).max(GAP_FLOOR))
    }

    fn tower_arity(&self, t: usize) -> usize {
        if t == Task::Relevance as usize {
            self.head_kind.relevance_arity()
        } else {
            1
        }
    }

    /// Same shapes and metadata, every parameter zero.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.for_each_mut(|p| *p = 0.0);
        z
    }

    /// Visits every trainable scalar in a fixed order.
    pub fn for_each(&self, mut f: impl FnMut(f64)) {
        let layers = self.shared.iter().chain(self.towers.iter().flatten());
        for layer in layers {
            layer.weights.iter().flatten().for_each(|&w| f(w));
            layer.bias.iter().for_each(|&b| f(b));
        }
        f(self.cutpoint);
        f(self.gap);
    }

    pub fn for_each_mut(&mut self, mut f: impl FnMut(&mut f64)) {
        let layers = self.shared.iter_mut().chain(self.towers.iter_mut().flatten());
        for layer in layers {
            layer.weights.iter_mut().flatten().for_each(&mut f);
            layer.bias.iter_mut().for_each(&mut f);
        }
        f(&mut self.cutpoint);
        f(&mut self.gap);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each(|_| n += 1);
        n
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        self.for_each(|p| v.push(p));
        v
    }

    pub fn set_flat(&mut self, values: &[f64]) {
        let mut it = values.iter();
        self.for_each_mut(|p| *p = *it.next().expect("flat vector matches parameter count"));
        assert!(it.next().is_none(), "flat vector longer than parameter count");
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each(|p| ok &= p.is_finite());
        ok
    }

    /// Checks that every layer chains from `input_dim` to each head's arity.
    pub fn check_shapes(&self) -> Result<()> {
        let mismatch = |what: &str| Error::Invalid(format!("malformed parameters: {what}"));
        let mut width = self.input_dim;
        for layer in &self.shared {
            if layer.inputs() != width || layer.weights.iter().any(|r| r.len() != width) {
                return Err(mismatch("shared layer input width"));
            }
            width = layer.outputs();
        }
        if self.towers.len() != 4 {
            return Err(mismatch("expected four towers"));
        }
        for (t, tower) in self.towers.iter().enumerate() {
            let mut w = width;
            for layer in tower {
                if layer.inputs() != w || layer.weights.iter().any(|r| r.len() != w) {
                    return Err(mismatch("tower layer input width"));
                }
                w = layer.outputs();
            }
            if tower.is_empty() || w != self.tower_arity(t) {
                return Err(mismatch("tower output arity"));
            }
        }
        Ok(())
    }
}

/// He-initialized parameters; deterministic in `seed`.
pub fn init_params(
    input_dim: usize,
    arch: &Arch,
    head_kind: HeadKind,
    layout_fingerprint: &str,
    seed: u64,
) -> Result<ModelParams> {
    if input_dim == 0 || arch.shared.contains(&0) || arch.tower.contains(&0) {
        return Err(Error::Config("layer widths must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut width = input_dim;
    let mut shared = Vec::new();
    for &w in &arch.shared {
        shared.push(Dense::he(width, w, &mut rng));
        width = w;
    }
    let bottom = width;
    let towers = (0..4)
        .map(|t| {
            let arity = if t == Task::Relevance as usize {
                head_kind.relevance_arity()
            } else {
                1
            };
            let mut w = bottom;
            let mut layers = Vec::new();
            for &h in arch.tower.iter().chain(std::iter::once(&arity)) {
                layers.push(Dense::he(w, h, &mut rng));
                w = h;
            }
            layers
        })
        .collect();
    Ok(ModelParams {
        input_dim,
        arch: arch.clone(),
        head_kind,
        layout_fingerprint: layout_fingerprint.to_string(),
        shared,
        towers,
        cutpoint: INIT_CUTPOINT,
        gap: softplus_inverse(INIT_GAP),
    })
}

/// Raw output of the relevance tower.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelevanceOutput {
    /// Latent `z` and the two threshold logits `z − θ1`, `z − θ2`.
    Ordinal { z: f64, logits: [f64; 2] },
    Softmax { logits: [f64; 3] },
    Regression { raw: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub y_ctr: f64,
    pub y_atc: f64,
    pub y_cvr: f64,
    pub p_ge1: f64,
    pub p_ge2: f64,
    /// Ordinal latent `z`; for baseline heads the expected grade.
    pub rel_latent: f64,
    pub relevance: RelevanceOutput,
    /// Engagement logits (CTR, ATC, CVR) before the sigmoid.
    pub engagement_logits: [f64; 3],
}

impl HeadOutputs {
    pub fn engagement(&self, task: Task) -> f64 {
        match task {
            Task::Ctr => self.y_ctr,
            Task::Atc => self.y_atc,
            Task::Cvr => self.y_cvr,
            Task::Relevance => scalar_relevance(self),
        }
    }
}

/// Activations cached by [`forward`] for [`backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// `shared_acts[0]` is the input; `shared_acts[i + 1]` the ReLU output of layer i.
    shared_acts: Vec<Vec<f64>>,
    shared_pre: Vec<Vec<f64>>,
    tower_acts: Vec<Vec<Vec<f64>>>,
    tower_pre: Vec<Vec<Vec<f64>>>,
}

impl ForwardTrace {
    /// Sign pattern of every ReLU unit, for detecting kinks between two traces.
    pub fn relu_pattern(&self) -> Vec<bool> {
        let shared = self.shared_pre.iter().flatten();
        let towers = self
            .tower_pre
            .iter()
            .flat_map(|t| t[..t.len().saturating_sub(1)].iter().flatten());
        shared.chain(towers).map(|&v| v > 0.0).collect()
    }
}

fn relu(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(|x| x.max(0.0)).collect()
}

pub fn forward(params: &ModelParams, x: &FeatureVector) -> Result<(HeadOutputs, ForwardTrace)> {
    if x.len() != params.input_dim {
        return Err(Error::Dimension {
            expected: params.input_dim,
            actual: x.len(),
        });
    }
    let mut shared_acts = vec![x.0.clone()];
    let mut shared_pre = Vec::with_capacity(params.shared.len());
    for layer in &params.shared {
        let pre = layer.forward(shared_acts.last().expect("non-empty"));
        shared_acts.push(relu(pre.clone()));
        shared_pre.push(pre);
    }
    let bottom = shared_acts.last().expect("non-empty");

    let mut tower_acts = Vec::with_capacity(4);
    let mut tower_pre = Vec::with_capacity(4);
    let mut heads = Vec::with_capacity(4);
    for tower in &params.towers {
        let mut acts = vec![bottom.clone()];
        let mut pres = Vec::with_capacity(tower.len());
        for (i, layer) in tower.iter().enumerate() {
            let pre = layer.forward(acts.last().expect("non-empty"));
            if i + 1 < tower.len() {
                acts.push(relu(pre.clone()));
            }
            pres.push(pre);
        }
        heads.push(pres.last().expect("tower has an output layer").clone());
        tower_acts.push(acts);
        tower_pre.push(pres);
    }

    let logits = [heads[0][0], heads[1][0], heads[2][0]];
    let rel = &heads[3];
    let (relevance, p_ge1, p_ge2, rel_latent) = match params.head_kind {
        HeadKind::Ordinal => {
            let (t1, t2) = params.cutpoints();
            let (p1, p2) = ordinal_probs(rel[0], t1, t2);
            let logits = [rel[0] - t1, rel[0] - t2];
            (RelevanceOutput::Ordinal { z: rel[0], logits }, p1, p2, rel[0])
        }
        HeadKind::Softmax3 => {
            let l = [rel[0], rel[1], rel[2]];
            let (p1, p2, s) = head_scalar_softmax(l);
            (RelevanceOutput::Softmax { logits: l }, p1, p2, s)
        }
        HeadKind::Regression => {
            let (p1, p2, s) = head_scalar_regression(rel[0]);
            (RelevanceOutput::Regression { raw: rel[0] }, p1, p2, s)
        }
    };
    let outputs = HeadOutputs {
        y_ctr: sigmoid(logits[0]),
        y_atc: sigmoid(logits[1]),
        y_cvr: sigmoid(logits[2]),
        p_ge1,
        p_ge2,
        rel_latent,
        relevance,
        engagement_logits: logits,
    };
    Ok((
        outputs,
        ForwardTrace {
            shared_acts,
            shared_pre,
            tower_acts,
            tower_pre,
        },
    ))
}

/// Cumulative-link probabilities `(p(r ≥ 1), p(r ≥ 2))`.
pub fn ordinal_probs(z: f64, theta1: f64, theta2: f64) -> (f64, f64) {
    (sigmoid(z - theta1), sigmoid(z - theta2))
}

/// Expected grade `p(r ≥ 1) + p(r ≥ 2)`, in [0, 2].
pub fn scalar_relevance(outputs: &HeadOutputs) -> f64 {
    outputs.p_ge1 + outputs.p_ge2
}

pub fn softmax3(logits: [f64; 3]) -> [f64; 3] {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|l| (l - m).exp());
    let s: f64 = e.iter().sum();
    e.map(|x| x / s)
}

/// `(p(r ≥ 1), p(r ≥ 2), E[r])` from three class logits.
pub fn head_scalar_softmax(logits: [f64; 3]) -> (f64, f64, f64) {
    let [_, p1, p2] = softmax3(logits);
    (p1 + p2, p2, p1 + 2.0 * p2)
}

/// Clamps a regressed grade to [0, 2] and splits it into the two
/// threshold terms so that `p_ge1 + p_ge2 = s_rel`.
pub fn head_scalar_regression(raw: f64) -> (f64, f64, f64) {
    let s = raw.clamp(0.0, 2.0);
    (s.clamp(0.0, 1.0), (s - 1.0).clamp(0.0, 1.0), s)
}

/// Loss gradient w.r.t. the relevance tower's raw output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RelevanceSeed {
    /// dL/d(z − θ1) and dL/d(z − θ2).
    Ordinal { d_ge1: f64, d_ge2: f64 },
    Softmax { d_logits: [f64; 3] },
    Regression { d_raw: f64 },
}

/// Upstream gradients per head: engagement entries are dL/d(logit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadSeeds {
    pub ctr: f64,
    pub atc: f64,
    pub cvr: f64,
    pub relevance: Option<RelevanceSeed>,
}

impl HeadSeeds {
    pub fn zero() -> Self {
        HeadSeeds {
            ctr: 0.0,
            atc: 0.0,
            cvr: 0.0,
            relevance: None,
        }
    }
}

/// Exact gradients of the loss described by `seeds`.
pub fn backward(params: &ModelParams, trace: &ForwardTrace, seeds: &HeadSeeds) -> Result<ModelParams> {
    let mut grad = params.zeros_like();
    backward_into(params, trace, seeds, &mut grad)?;
    Ok(grad)
}

/// Like [`backward`] but accumulates into an existing gradient buffer.
pub fn backward_into(
    params: &ModelParams,
    trace: &ForwardTrace,
    seeds: &HeadSeeds,
    grad: &mut ModelParams,
) -> Result<()> {
    if trace.shared_acts.len() != params.shared.len() + 1
        || trace.shared_acts[0].len() != params.input_dim
        || trace.tower_pre.len() != params.towers.len()
        || trace
            .tower_pre
            .iter()
            .zip(&params.towers)
            .any(|(p, t)| p.len() != t.len())
    {
        return Err(Error::Invalid("trace does not match parameters".into()));
    }

    let mut relevance_out = vec![0.0; params.head_kind.relevance_arity()];
    match (params.head_kind, seeds.relevance) {
        (_, None) => {}
        (HeadKind::Ordinal, Some(RelevanceSeed::Ordinal { d_ge1, d_ge2 })) => {
            relevance_out[0] = d_ge1 + d_ge2;
            grad.cutpoint -= d_ge1 + d_ge2;
            if softplus(params.gap) > GAP_FLOOR {
                grad.gap -= d_ge2 * sigmoid(params.gap);
            }
        }
        (HeadKind::Softmax3, Some(RelevanceSeed::Softmax { d_logits })) => {
            relevance_out.copy_from_slice(&d_logits);
        }
        (HeadKind::Regression, Some(RelevanceSeed::Regression { d_raw })) => {
            relevance_out[0] = d_raw;
        }
        (kind, Some(seed)) => {
            return Err(Error::Invalid(format!(
                "relevance seed {seed:?} does not match head kind {}",
                kind.name()
            )))
        }
    }
    let tower_seeds = [vec![seeds.ctr], vec![seeds.atc], vec![seeds.cvr], relevance_out];

    let bottom_width = trace.shared_acts.last().map_or(0, Vec::len);
    let mut d_bottom = vec![0.0; bottom_width];
    for (t, seed) in tower_seeds.into_iter().enumerate() {
        if seed.iter().all(|&s| s == 0.0) {
            continue;
        }
        let tower = &params.towers[t];
        let acts = &trace.tower_acts[t];
        let pres = &trace.tower_pre[t];
        let mut d = seed;
        for i in (0..tower.len()).rev() {
            if i + 1 < tower.len() {
                for (di, &p) in d.iter_mut().zip(&pres[i]) {
                    if p <= 0.0 {
                        *di = 0.0;
                    }
                }
            }
            d = tower[i].backward(&acts[i], &d, &mut grad.towers[t][i]);
        }
        for (acc, v) in d_bottom.iter_mut().zip(d) {
            *acc += v;
        }
    }

    let mut d = d_bottom;
    for i in (0..params.shared.len()).rev() {
        for (di, &p) in d.iter_mut().zip(&trace.shared_pre[i]) {
            if p <= 0.0 {
                *di = 0.0;
            }
        }
        d = params.shared[i].backward(&trace.shared_acts[i], &d, &mut grad.shared[i]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(kind: HeadKind, seed: u64) -> ModelParams {
        let arch = Arch {
            shared: vec![8],
            tower: vec![4],
        };
        init_params(6, &arch, kind, "fp", seed).unwrap()
    }

    fn input(seed: u64, d: usize) -> FeatureVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        FeatureVector((0..d).map(|_| n.sample(&mut rng)).collect())
    }

    #[test]
    fn init_is_deterministic_and_chains_shapes() {
        let a = init_params(40, &Arch::default(), HeadKind::Ordinal, "fp", 7).unwrap();
        let b = init_params(40, &Arch::default(), HeadKind::Ordinal, "fp", 7).unwrap();
        assert_eq!(a, b);
        a.check_shapes().unwrap();
        assert_eq!(a.shared[0].inputs(), 40);
        assert_eq!(a.shared[1].outputs(), 32);
        for t in &a.towers {
            assert_eq!(t[0].inputs(), 32);
            assert_eq!(t[0].outputs(), 16);
            assert_eq!(t[1].outputs(), 1);
        }
        let s = init_params(40, &Arch::default(), HeadKind::Softmax3, "fp", 7).unwrap();
        assert_eq!(s.towers[3][1].outputs(), 3);
    }

    #[test]
    fn init_cutpoints() {
        let p = tiny(HeadKind::Ordinal, 1);
        let (t1, t2) = p.cutpoints();
        assert_eq!(t1, -0.5);
        assert!((t2 - 0.5).abs() < 1e-12);
        assert!((t2 - t1 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_width_is_rejected() {
        let arch = Arch {
            shared: vec![8, 0],
            tower: vec![4],
        };
        assert!(init_params(6, &arch, HeadKind::Ordinal, "fp", 0).is_err());
    }

    #[test]
    fn zero_weights_give_half_probabilities() {
        let p = tiny(HeadKind::Ordinal, 3).zeros_like();
        let (o, _) = forward(&p, &input(1, 6)).unwrap();
        assert_eq!((o.y_ctr, o.y_atc, o.y_cvr), (0.5, 0.5, 0.5));
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let p = tiny(HeadKind::Ordinal, 3);
        assert!(matches!(
            forward(&p, &FeatureVector(vec![0.0; 5])),
            Err(Error::Dimension { expected: 6, actual: 5 })
        ));
    }

    #[test]
    fn ordinal_probs_at_cutpoints_and_limits() {
        assert_eq!(ordinal_probs(-0.5, -0.5, 0.5).0, 0.5);
        assert_eq!(ordinal_probs(0.5, -0.5, 0.5).1, 0.5);
        let (a, b) = ordinal_probs(1e6, -0.5, 0.5);
        assert_eq!((a, b), (1.0, 1.0));
        let (a, b) = ordinal_probs(-1e6, -0.5, 0.5);
        assert_eq!((a, b), (0.0, 0.0));
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(-1000.0), 0.0);
        assert_eq!(sigmoid(1000.0), 1.0);
        assert!((sigmoid(0.3) + sigmoid(-0.3) - 1.0).abs() < 1e-15);
        assert!((softplus(-800.0)).abs() < 1e-300);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
    }

    fn outputs_with(p_ge1: f64, p_ge2: f64) -> HeadOutputs {
        HeadOutputs {
            y_ctr: 0.5,
            y_atc: 0.5,
            y_cvr: 0.5,
            p_ge1,
            p_ge2,
            rel_latent: 0.0,
            relevance: RelevanceOutput::Ordinal { z: 0.0, logits: [0.0; 2] },
            engagement_logits: [0.0; 3],
        }
    }

    #[test]
    fn scalar_relevance_examples() {
        assert_eq!(scalar_relevance(&outputs_with(1.0, 1.0)), 2.0);
        assert_eq!(scalar_relevance(&outputs_with(0.0, 0.0)), 0.0);
        assert!((scalar_relevance(&outputs_with(0.6, 0.2)) - 0.8).abs() < 1e-15);
    }

    #[test]
    fn softmax_head_examples() {
        let (p1, p2, s) = head_scalar_softmax([0.3, 0.3, 0.3]);
        assert!((p1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((p2 - 1.0 / 3.0).abs() < 1e-15);
        assert!((s - 1.0).abs() < 1e-15);
        let (_, _, s) = head_scalar_softmax([0.0, 0.0, 800.0]);
        assert_eq!(s, 2.0);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = Normal::new(0.0, 3.0).unwrap();
        for _ in 0..100 {
            let l: [f64; 3] = [n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)];
            let z: f64 = l.iter().map(|x| x.exp()).sum();
            let expect: f64 = l.iter().enumerate().map(|(k, x)| k as f64 * x.exp() / z).sum();
            let (_, _, s) = head_scalar_softmax(l);
            assert!((s - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn regression_head_examples() {
        assert_eq!(head_scalar_regression(2.7), (1.0, 1.0, 2.0));
        let (p1, p2, s) = head_scalar_regression(1.3);
        assert_eq!(p1, 1.0);
        assert!((p2 - 0.3).abs() < 1e-12);
        assert_eq!(s, 1.3);
        assert_eq!(head_scalar_regression(-1.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn zero_seeds_give_zero_gradients() {
        for kind in HeadKind::ALL {
            let p = tiny(kind, 5);
            let (_, trace) = forward(&p, &input(2, 6)).unwrap();
            let g = backward(&p, &trace, &HeadSeeds::zero()).unwrap();
            assert!(g.to_flat().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn gap_gradient_vanishes_when_floor_binds() {
        let mut p = tiny(HeadKind::Ordinal, 5);
        p.gap = -20.0;
        assert!((p.cutpoints().1 - p.cutpoints().0 - GAP_FLOOR).abs() < 1e-15);
        let (_, trace) = forward(&p, &input(2, 6)).unwrap();
        let seeds = HeadSeeds {
            relevance: Some(RelevanceSeed::Ordinal { d_ge1: 0.3, d_ge2: -0.7 }),
            ..HeadSeeds::zero()
        };
        let g = backward(&p, &trace, &seeds).unwrap();
        assert_eq!(g.gap, 0.0);
        assert!((g.cutpoint - 0.4).abs() < 1e-15);
    }

    #[test]
    fn mismatched_seed_is_rejected() {
        let p = tiny(HeadKind::Softmax3, 5);
        let (_, trace) = forward(&p, &input(2, 6)).unwrap();
        let seeds = HeadSeeds {
            relevance: Some(RelevanceSeed::Regression { d_raw: 1.0 }),
            ..HeadSeeds::zero()
        };
        assert!(backward(&p, &trace, &seeds).is_err());
    }

    #[test]
    fn trace_from_other_shape_is_rejected() {
        let p = tiny(HeadKind::Ordinal, 5);
        let other = init_params(6, &Arch { shared: vec![8, 8], tower: vec![4] }, HeadKind::Ordinal, "fp", 1).unwrap();
        let (_, trace) = forward(&other, &input(2, 6)).unwrap();
        assert!(backward(&p, &trace, &HeadSeeds::zero()).is_err());
    }

    #[test]
    fn flat_round_trip() {
        let p = tiny(HeadKind::Softmax3, 9);
        let mut q = p.zeros_like();
        q.set_flat(&p.to_flat());
        assert_eq!(p, q);
    }

    #[test]
    fn forward_is_reproducible() {
        let p = tiny(HeadKind::Ordinal, 9);
        let x = input(4, 6);
        let a = forward(&p, &x).unwrap().0;
        let b = forward(&p, &x).unwrap().0;
        assert_eq!(a, b);
        assert!(a.p_ge1 > a.p_ge2);
    }
}
