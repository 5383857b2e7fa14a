//! Multi-task losses and the training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Impression, RelevanceGrade};
use crate::error::{Error, Result};
use crate::featurizer::{FeatureVector, Featurizer};
use crate::net::{
    self, backward_into, forward, init_params, softmax3, softplus, sigmoid, Arch, HeadKind, HeadOutputs, HeadSeeds,
    ModelParams, RelevanceOutput, RelevanceSeed,
};

/// Per-task loss weights used during training. Independent of the serving
/// weights in [`crate::value::ValueWeights`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskWeights {
    #[serde(default = "one")]
    pub ctr: f64,
    #[serde(default = "one")]
    pub atc: f64,
    #[serde(default = "one")]
    pub cvr: f64,
    #[serde(default = "one")]
    pub rel: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for TaskWeights {
    fn default() -> Self {
        TaskWeights {
            ctr: 1.0,
            atc: 1.0,
            cvr: 1.0,
            rel: 1.0,
        }
    }
}

impl TaskWeights {
    pub fn engagement_only() -> Self {
        TaskWeights {
            rel: 0.0,
            ..Self::default()
        }
    }

    /// Same weights with w_rel = 0.
    pub fn without_relevance(self) -> Self {
        TaskWeights { rel: 0.0, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default)]
    pub weights: TaskWeights,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerKind,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
    #[serde(default)]
    pub arch: Arch,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_epochs() -> usize {
    10
}
fn default_batch() -> usize {
    128
}
fn default_optimizer() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            weights: TaskWeights::default(),
            learning_rate: default_lr(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            seed: 0,
            optimizer: default_optimizer(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
            arch: Arch::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let all = [w.ctr, w.atc, w.cvr, w.rel];
        if all.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if !all.iter().any(|&x| x > 0.0) {
            return Err(Error::Config("at least one loss weight must be > 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Binary cross-entropy of a probability against a boolean label.
pub fn loss_engagement(y_hat: f64, label: bool) -> f64 {
    if label {
        -y_hat.ln()
    } else {
        -(1.0 - y_hat).ln()
    }
}

/// BCE evaluated from the logit, stable for large |logit|.
fn bce_logit(logit: f64, label: bool) -> f64 {
    softplus(logit) - if label { logit } else { 0.0 }
}

/// All-threshold BCE: one binary term per cutpoint.
pub fn loss_ordinal(p_ge1: f64, p_ge2: f64, grade: RelevanceGrade) -> f64 {
    loss_engagement(p_ge1, grade.value() >= 1) + loss_engagement(p_ge2, grade.value() >= 2)
}

pub fn loss_softmax3(logits: [f64; 3], grade: RelevanceGrade) -> f64 {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    lse - logits[grade.value() as usize]
}

pub fn loss_regression(raw: f64, grade: RelevanceGrade) -> f64 {
    (raw - grade.as_f64()).powi(2)
}

/// Unweighted per-task losses of one impression plus the weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ctr: f64,
    pub atc: f64,
    pub cvr: f64,
    /// `None` when the relevance term was not evaluated.
    pub rel: Option<f64>,
}

/// Weighted multi-task loss and its gradient seeds for [`net::backward`].
pub fn total_loss(
    outputs: &HeadOutputs,
    impression: &Impression,
    weights: &TaskWeights,
) -> Result<(LossBreakdown, HeadSeeds)> {
    let [lc, la, lv] = outputs.engagement_logits;
    let labels = [impression.clicked, impression.added_to_cart, impression.converted];
    let ctr = bce_logit(lc, labels[0]);
    let atc = bce_logit(la, labels[1]);
    let cvr = bce_logit(lv, labels[2]);
    let seed = |logit: f64, y: bool, w: f64| w * (sigmoid(logit) - if y { 1.0 } else { 0.0 });
    let mut seeds = HeadSeeds {
        ctr: seed(lc, labels[0], weights.ctr),
        atc: seed(la, labels[1], weights.atc),
        cvr: seed(lv, labels[2], weights.cvr),
        relevance: None,
    };

    let mut rel = None;
    if weights.rel > 0.0 {
        let grade = impression.grade.ok_or_else(|| {
            Error::Invalid(format!(
                "pair ({}, {}) has no relevance grade but the relevance loss weight is {}",
                impression.query_id, impression.item_id, weights.rel
            ))
        })?;
        let w = weights.rel;
        let (loss, s) = match outputs.relevance {
            RelevanceOutput::Ordinal { logits: [l1, l2], .. } => {
                let (t1, t2) = (grade.value() >= 1, grade.value() >= 2);
                (
                    bce_logit(l1, t1) + bce_logit(l2, t2),
                    RelevanceSeed::Ordinal {
                        d_ge1: w * (sigmoid(l1) - f64::from(u8::from(t1))),
                        d_ge2: w * (sigmoid(l2) - f64::from(u8::from(t2))),
                    },
                )
            }
            RelevanceOutput::Softmax { logits } => {
                let mut d = softmax3(logits);
                d[grade.value() as usize] -= 1.0;
                (
                    loss_softmax3(logits, grade),
                    RelevanceSeed::Softmax {
                        d_logits: d.map(|x| w * x),
                    },
                )
            }
            RelevanceOutput::Regression { raw } => (
                loss_regression(raw, grade),
                RelevanceSeed::Regression {
                    d_raw: w * 2.0 * (raw - grade.as_f64()),
                },
            ),
        };
        rel = Some(loss);
        seeds.relevance = Some(s);
    }

    let total = weights.ctr * ctr + weights.atc * atc + weights.cvr * cvr + weights.rel * rel.unwrap_or(0.0);
    Ok((
        LossBreakdown {
            total,
            ctr,
            atc,
            cvr,
            rel,
        },
        seeds,
    ))
}

/// Mean losses over one epoch. Epoch 0 is the untrained model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub total: f64,
    pub ctr: f64,
    pub atc: f64,
    pub cvr: f64,
    pub rel: f64,
}

/// CSV rendering of an epoch log: `epoch,total,ctr,atc,cvr,rel`.
pub fn epoch_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,total,ctr,atc,cvr,rel\n");
    for e in log {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            e.epoch, e.total, e.ctr, e.atc, e.cvr, e.rel
        ));
    }
    out
}

#[derive(Debug, Default)]
struct LossAccumulator {
    n: usize,
    n_rel: usize,
    total: f64,
    ctr: f64,
    atc: f64,
    cvr: f64,
    rel: f64,
}

impl LossAccumulator {
    fn add(&mut self, l: &LossBreakdown) {
        self.n += 1;
        self.total += l.total;
        self.ctr += l.ctr;
        self.atc += l.atc;
        self.cvr += l.cvr;
        if let Some(r) = l.rel {
            self.n_rel += 1;
            self.rel += r;
        }
    }

    fn finish(&self, epoch: usize) -> EpochLog {
        let n = self.n.max(1) as f64;
        EpochLog {
            epoch,
            total: self.total / n,
            ctr: self.ctr / n,
            atc: self.atc / n,
            cvr: self.cvr / n,
            rel: if self.n_rel == 0 { 0.0 } else { self.rel / self.n_rel as f64 },
        }
    }
}

enum Optimizer {
    Sgd { lr: f64 },
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
        m: Vec<f64>,
        v: Vec<f64>,
        t: i32,
    },
}

impl Optimizer {
    fn new(cfg: &TrainConfig, n: usize) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd { lr: cfg.learning_rate },
            OptimizerKind::Adam => Optimizer::Adam {
                lr: cfg.learning_rate,
                beta1: cfg.beta1,
                beta2: cfg.beta2,
                eps: cfg.epsilon,
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam {
                lr,
                beta1,
                beta2,
                eps,
                m,
                v,
                t,
            } => {
                *t += 1;
                let c1 = 1.0 - beta1.powi(*t);
                let c2 = 1.0 - beta2.powi(*t);
                for i in 0..params.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    params[i] -= *lr * (m[i] / c1) / ((v[i] / c2).sqrt() + *eps);
                }
            }
        }
    }
}

/// Trained parameters and the per-epoch loss log.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
}

/// Featurizes every impression of `ds`, in dataset order.
pub fn featurize_all(ds: &Dataset, featurizer: &Featurizer) -> Result<Vec<FeatureVector>> {
    ds.impressions()
        .iter()
        .map(|imp| {
            let q = ds
                .query(&imp.query_id)
                .ok_or_else(|| Error::Referential(format!("unknown query {}", imp.query_id)))?;
            let it = ds
                .item(&imp.item_id)
                .ok_or_else(|| Error::Referential(format!("unknown item {}", imp.item_id)))?;
            featurizer.features(q, it)
        })
        .collect()
}

/// Mini-batch training with seeded shuffling. Impressions without a grade
/// contribute only engagement losses.
pub fn fit(ds: &Dataset, featurizer: &Featurizer, cfg: &TrainConfig, head_kind: HeadKind) -> Result<FitResult> {
    let init = init_params(
        featurizer.dim(),
        &cfg.arch,
        head_kind,
        &featurizer.layout().fingerprint,
        cfg.seed,
    )?;
    fit_from(ds, featurizer, cfg, init)
}

/// [`fit`] starting from existing parameters.
pub fn fit_from(ds: &Dataset, featurizer: &Featurizer, cfg: &TrainConfig, init: ModelParams) -> Result<FitResult> {
    cfg.validate()?;
    let layout = featurizer.layout();
    if init.layout_fingerprint != layout.fingerprint {
        return Err(Error::Layout {
            expected: init.layout_fingerprint.clone(),
            actual: layout.fingerprint,
        });
    }
    if init.input_dim != featurizer.dim() {
        return Err(Error::Dimension {
            expected: init.input_dim,
            actual: featurizer.dim(),
        });
    }
    let imps = ds.impressions();
    if imps.is_empty() {
        return Err(Error::Invalid("training set has no impressions".into()));
    }
    if cfg.weights.rel > 0.0 && imps.iter().all(|i| i.grade.is_none()) {
        return Err(Error::Invalid(
            "relevance loss weight is > 0 but no impression carries a relevance grade".into(),
        ));
    }

    let features = featurize_all(ds, featurizer)?;
    let weights_for = |imp: &Impression| {
        if imp.grade.is_some() {
            cfg.weights
        } else {
            cfg.weights.without_relevance()
        }
    };

    let mut params = init;
    let mut log = Vec::with_capacity(cfg.epochs + 1);
    let mut acc = LossAccumulator::default();
    for (x, imp) in features.iter().zip(imps) {
        let (out, _) = forward(&params, x)?;
        acc.add(&total_loss(&out, imp, &weights_for(imp))?.0);
    }
    log.push(acc.finish(0));

    let mut flat = params.to_flat();
    let mut opt = Optimizer::new(cfg, flat.len());
    let mut grad = params.zeros_like();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546);
    let mut order: Vec<usize> = (0..imps.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossAccumulator::default();
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            grad.for_each_mut(|g| *g = 0.0);
            for &i in batch {
                let (out, trace) = forward(&params, &features[i])?;
                let (loss, seeds) = total_loss(&out, &imps[i], &weights_for(&imps[i]))?;
                if !loss.total.is_finite() {
                    return Err(Error::Diverged(format!(
                        "non-finite loss {} at epoch {epoch}, batch {b}, pair ({}, {})",
                        loss.total, imps[i].query_id, imps[i].item_id
                    )));
                }
                acc.add(&loss);
                backward_into(&params, &trace, &seeds, &mut grad)?;
            }
            let scale = 1.0 / batch.len() as f64;
            let g: Vec<f64> = grad.to_flat().into_iter().map(|x| x * scale).collect();
            opt.step(&mut flat, &g);
            params.set_flat(&flat);
            if !params.is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite parameters after epoch {epoch}, batch {b}"
                )));
            }
        }
        log.push(acc.finish(epoch));
    }
    Ok(FitResult { params, log })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates skipped because a finite-difference step crossed a ReLU kink.
    pub skipped_kinks: usize,
}

/// Denominator floor for relative errors; gradients smaller than this are
/// compared in absolute terms. Finite differences of a loss near 10 carry
/// rounding noise around 1e-12, so relative error below this is noise.
pub const GRAD_CHECK_FLOOR: f64 = 1e-5;

/// Compares [`net::backward`] with fourth-order central differences on a tiny
/// network (6 inputs, shared [8], towers [4]) over `trials` random draws.
pub fn gradient_check(weights: &TaskWeights, head_kind: HeadKind, trials: usize, seed: u64) -> Result<GradCheckReport> {
    let arch = Arch {
        shared: vec![8],
        tower: vec![4],
    };
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for trial in 0..trials {
        let trial_seed = seed.wrapping_mul(1_000_003).wrapping_add(trial as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
        let mut params = init_params(6, &arch, head_kind, "gradcheck", trial_seed)?;
        params.cutpoint = normal.sample(&mut rng);
        params.gap = normal.sample(&mut rng);
        let x = FeatureVector((0..6).map(|_| normal.sample(&mut rng)).collect());
        let clicked = rand::Rng::gen_bool(&mut rng, 0.5);
        let added = clicked && rand::Rng::gen_bool(&mut rng, 0.5);
        let imp = Impression {
            query_id: "q".into(),
            item_id: "i".into(),
            position: 1,
            clicked,
            added_to_cart: added,
            converted: added && rand::Rng::gen_bool(&mut rng, 0.5),
            grade: Some(RelevanceGrade::ALL[rand::Rng::gen_range(&mut rng, 0..3)]),
        };

        let (out, trace) = forward(&params, &x)?;
        let (_, seeds) = total_loss(&out, &imp, weights)?;
        let analytic = net::backward(&params, &trace, &seeds)?.to_flat();
        let base_pattern = trace.relu_pattern();

        let theta = params.to_flat();
        let mut probe = params.clone();
        let mut eval = |values: &[f64]| -> Result<(f64, Vec<bool>)> {
            probe.set_flat(values);
            let (o, t) = forward(&probe, &x)?;
            Ok((total_loss(&o, &imp, weights)?.0.total, t.relu_pattern()))
        };
        for (k, &a) in analytic.iter().enumerate() {
            let h = 1e-3 * theta[k].abs().max(1.0);
            let mut shifted = theta.clone();
            let mut at = |offset: f64| -> Result<(f64, Vec<bool>)> {
                shifted[k] = theta[k] + offset;
                eval(&shifted)
            };
            let probes = [at(2.0 * h)?, at(h)?, at(-h)?, at(-2.0 * h)?];
            if probes.iter().any(|(_, pattern)| *pattern != base_pattern) {
                report.skipped_kinks += 1;
                continue;
            }
            let [f2, f1, m1, m2] = probes.map(|(v, _)| v);
            // Fourth-order central difference.
            let numeric = (8.0 * (f1 - m1) - (f2 - m2)) / (12.0 * h);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR);
            report.max_rel_error = report.max_rel_error.max(err);
            report.checked += 1;
        }
    }
    Ok(report)
}
