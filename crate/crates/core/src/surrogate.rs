//! Three-head MLP surrogate predicting write energy, write latency and
//! endurance from the encoded sweep features.
//!
//! Each head is an independent dense stack with ReLU hidden layers and a
//! linear scalar output, trained on the Huber loss plus L1/L2 penalties on
//! the hidden-layer kernels.

use std::io::Write;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Adam, Mlp, OptimizerKind};
use crate::rng::{child_seed, seeded};
use crate::sweep::{DatasetRow, EncodedDataset, EncodedRow, FeatureEncoder, RawFeatures, TargetScaler};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Energy,
    Latency,
    Endurance,
}

impl HeadKind {
    pub const ALL: [HeadKind; 3] = [HeadKind::Energy, HeadKind::Latency, HeadKind::Endurance];

    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Energy => "energy",
            HeadKind::Latency => "latency",
            HeadKind::Endurance => "endurance",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            HeadKind::Energy => 0,
            HeadKind::Latency => 1,
            HeadKind::Endurance => 2,
        }
    }

    fn features<'a>(&self, row: &'a EncodedRow) -> &'a [f64] {
        match self {
            HeadKind::Energy => &row.energy_features,
            HeadKind::Latency => &row.latency_features,
            HeadKind::Endurance => &row.endurance_features,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub kind: HeadKind,
    pub layer_widths: Vec<usize>,
    pub l1: f64,
    pub l2: f64,
    pub optimizer: OptimizerKind,
    pub batch_size: usize,
    pub input_width: usize,
}

impl HeadSpec {
    /// The tuned architecture for each output.
    pub fn tuned(kind: HeadKind) -> Self {
        match kind {
            HeadKind::Energy => Self {
                kind,
                layer_widths: vec![8, 20, 8, 12, 32, 32, 40],
                l1: 0.001,
                l2: 0.1,
                optimizer: OptimizerKind::Nadam,
                batch_size: 384,
                input_width: 17,
            },
            HeadKind::Latency => Self {
                kind,
                layer_widths: vec![30, 14, 24, 16, 12],
                l1: 0.01,
                l2: 0.001,
                optimizer: OptimizerKind::Adam,
                batch_size: 160,
                input_width: 11,
            },
            HeadKind::Endurance => Self {
                kind,
                layer_widths: vec![30, 14, 24, 16, 8],
                l1: 0.01,
                l2: 0.001,
                optimizer: OptimizerKind::Adam,
                batch_size: 160,
                input_width: 5,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.is_empty() {
            return Err(Error::config(self.kind.name(), "at least one hidden layer required"));
        }
        if self.layer_widths.contains(&0) || self.input_width == 0 {
            return Err(Error::config(self.kind.name(), "layer widths must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config(self.kind.name(), "batch size must be positive"));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return Err(Error::config(self.kind.name(), "penalties must be non-negative"));
        }
        Ok(())
    }

    fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_width];
        s.extend(&self.layer_widths);
        s.push(1);
        s
    }

    fn activations(&self) -> Vec<Activation> {
        let mut a = vec![Activation::Relu; self.layer_widths.len()];
        a.push(Activation::Identity);
        a
    }
}

/// One trained regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Head {
    pub spec: HeadSpec,
    pub net: Mlp,
}

impl Head {
    pub fn init(spec: HeadSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::he_uniform(&spec.sizes(), &spec.activations(), &mut seeded(seed))?;
        Ok(Self { spec, net })
    }

    pub fn zeros(spec: HeadSpec) -> Result<Self> {
        spec.validate()?;
        let net = Mlp::zeros(&spec.sizes(), &spec.activations())?;
        Ok(Self { spec, net })
    }

    /// Prediction in standardized units.
    pub fn forward(&self, features: &[f64]) -> Result<f64> {
        Ok(self.net.forward(features)?[0])
    }

    fn n_hidden(&self) -> usize {
        self.spec.layer_widths.len()
    }

    /// L1/L2 penalty over hidden-layer kernels.
    pub fn penalty(&self, obj: &Objective) -> f64 {
        let mut p = 0.0;
        for l in 0..self.n_hidden() {
            let (w, _) = self.net.layer_range(l);
            for &v in &self.net.params[w] {
                p += obj.l1 * v.abs() + obj.l2 * v * v;
            }
        }
        p
    }

    fn add_penalty_grad(&self, obj: &Objective, grad: &mut [f64]) {
        for l in 0..self.n_hidden() {
            let (w, _) = self.net.layer_range(l);
            for i in w {
                let v = self.net.params[i];
                grad[i] += obj.l1 * sign(v) + 2.0 * obj.l2 * v;
            }
        }
    }

    /// Mean weighted Huber over the samples plus the kernel penalty, and its
    /// gradient with respect to every parameter.
    pub fn loss_and_grad(&self, xs: &[&[f64]], ys: &[f64], obj: &Objective) -> Result<(f64, Vec<f64>)> {
        let mut grad = vec![0.0; self.net.params.len()];
        let n = xs.len().max(1) as f64;
        let mut data = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            let tr = self.net.forward_trace(x)?;
            let r = tr.output()[0] - y;
            data += huber(r, obj.delta);
            let d = obj.data_weight * huber_grad(r, obj.delta) / n;
            if d != 0.0 {
                self.net.backward(&tr, &[d], &mut grad);
            }
        }
        self.add_penalty_grad(obj, &mut grad);
        Ok((obj.data_weight * data / n + self.penalty(obj), grad))
    }

    pub fn loss(&self, xs: &[&[f64]], ys: &[f64], obj: &Objective) -> Result<f64> {
        let n = xs.len().max(1) as f64;
        let mut data = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            data += huber(self.forward(x)? - y, obj.delta);
        }
        Ok(obj.data_weight * data / n + self.penalty(obj))
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Terms of a head's training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub delta: f64,
    /// Multiplier on the mean Huber term; 1 in training.
    pub data_weight: f64,
    pub l1: f64,
    pub l2: f64,
}

impl Objective {
    pub fn for_head(spec: &HeadSpec, delta: f64) -> Self {
        Self {
            delta,
            data_weight: 1.0,
            l1: spec.l1,
            l2: spec.l2,
        }
    }
}

/// ½r² inside `delta`, linear outside.
pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

/// How per-sample Huber terms combine within a mini-batch. `Sum` weighs
/// the data term by the batch size against the kernel penalty; under `Mean`
/// the tuned penalties flatten the standardized heads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossReduction {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub lr_reduce_factor: f64,
    pub plateau_patience: usize,
    pub early_stop_patience: usize,
    pub huber_delta: f64,
    pub max_epochs: usize,
    pub loss_reduction: LossReduction,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 0.001,
            lr_reduce_factor: 0.1,
            plateau_patience: 3,
            early_stop_patience: 4,
            huber_delta: 1.0,
            max_epochs: 500,
            loss_reduction: LossReduction::Sum,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.plateau_patience == 0 || self.early_stop_patience == 0 {
            return Err(Error::config("surrogate.patience", "patience values must be positive"));
        }
        if !(self.lr_reduce_factor > 0.0 && self.lr_reduce_factor < 1.0) {
            return Err(Error::config("surrogate.lr_reduce_factor", "must lie in (0, 1)"));
        }
        if !(self.initial_lr > 0.0) {
            return Err(Error::config("surrogate.initial_lr", "must be positive"));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::config("surrogate.huber_delta", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("surrogate.max_epochs", "must be positive"));
        }
        Ok(())
    }
}

/// What the epoch-end callbacks decided.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Callback {
    Improved,
    Continue,
    ReduceLr,
    Stop,
}

/// Learning-rate reduction on plateau plus early stopping, both watching
/// the validation loss.
#[derive(Debug, Clone)]
pub struct PlateauSchedule {
    pub lr: f64,
    factor: f64,
    plateau_patience: usize,
    stop_patience: usize,
    best: f64,
    since_plateau: usize,
    since_best: usize,
}

impl PlateauSchedule {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.initial_lr,
            factor: cfg.lr_reduce_factor,
            plateau_patience: cfg.plateau_patience,
            stop_patience: cfg.early_stop_patience,
            best: f64::INFINITY,
            since_plateau: 0,
            since_best: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn observe(&mut self, val_loss: f64) -> Callback {
        if val_loss < self.best {
            self.best = val_loss;
            self.since_plateau = 0;
            self.since_best = 0;
            return Callback::Improved;
        }
        self.since_plateau += 1;
        self.since_best += 1;
        if self.since_best >= self.stop_patience {
            return Callback::Stop;
        }
        if self.since_plateau >= self.plateau_patience {
            self.since_plateau = 0;
            self.lr *= self.factor;
            return Callback::ReduceLr;
        }
        Callback::Continue
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub head: HeadKind,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Learning rate in effect during this epoch.
    pub lr: f64,
    pub best_val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were retained, per head.
    pub best_epoch: [usize; 3],
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        w.write_record(["epoch", "head", "train_loss", "val_loss", "lr"])?;
        for e in &self.epochs {
            w.write_record([
                e.epoch.to_string(),
                e.head.name().to_string(),
                e.train_loss.to_string(),
                e.val_loss.to_string(),
                e.lr.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<train report>", e))?;
        Ok(())
    }

    pub fn for_head(&self, kind: HeadKind) -> impl Iterator<Item = &EpochRecord> {
        self.epochs.iter().filter(move |e| e.head == kind)
    }
}

/// Physical-unit prediction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// pJ.
    pub energy: f64,
    /// ns.
    pub latency: f64,
    pub endurance: f64,
}

impl Prediction {
    pub fn is_finite(&self) -> bool {
        self.energy.is_finite() && self.latency.is_finite() && self.endurance.is_finite()
    }
}

/// Trained model checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSurrogate {
    /// Energy, latency, endurance.
    pub heads: Vec<Head>,
    pub encoder: FeatureEncoder,
    pub scalers: [TargetScaler; 3],
    pub seed: u64,
}

impl MlpSurrogate {
    /// Fresh heads with the tuned architectures.
    pub fn init(encoder: FeatureEncoder, scalers: [TargetScaler; 3], seed: u64) -> Result<Self> {
        let heads = HeadKind::ALL
            .iter()
            .map(|&k| Head::init(HeadSpec::tuned(k), child_seed(seed, k.index() as u64)))
            .collect::<Result<Vec<_>>>()?;
        let s = Self {
            heads,
            encoder,
            scalers,
            seed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Checks head shapes against the tuned architectures and the encoder.
    pub fn validate(&self) -> Result<()> {
        if self.heads.len() != 3 {
            return Err(Error::config("heads", "exactly three heads required"));
        }
        let widths = [
            self.encoder.energy_width(),
            self.encoder.latency_width(),
            self.encoder.endurance_width(),
        ];
        for (k, head) in HeadKind::ALL.iter().zip(&self.heads) {
            let want = HeadSpec::tuned(*k);
            if head.spec != want {
                return Err(Error::config(
                    format!("heads.{}", k.name()),
                    format!("spec {:?} differs from the tuned architecture {:?}", head.spec, want),
                ));
            }
            if head.net.sizes != want.sizes() || head.net.params.len() != Mlp::zeros(&want.sizes(), &want.activations())?.params.len() {
                return Err(Error::config(format!("heads.{}", k.name()), "layer shapes do not chain"));
            }
            if want.input_width != widths[k.index()] {
                return Err(Error::Width {
                    expected: want.input_width,
                    actual: widths[k.index()],
                });
            }
        }
        Ok(())
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        &self.heads[kind.index()]
    }

    pub fn predict_standardized(&self, raw: &RawFeatures) -> Result<[f64; 3]> {
        Ok([
            self.heads[0].forward(&self.encoder.energy(raw)?)?,
            self.heads[1].forward(&self.encoder.latency(raw)?)?,
            self.heads[2].forward(&self.encoder.endurance(raw)?)?,
        ])
    }

    pub fn predict(&self, raw: &RawFeatures) -> Result<Prediction> {
        let z = self.predict_standardized(raw)?;
        Ok(Prediction {
            energy: self.scalers[0].invert(z[0]),
            latency: self.scalers[1].invert(z[1]),
            endurance: self.scalers[2].invert(z[2]),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }
}

fn head_data<'a>(kind: HeadKind, rows: &[&'a EncodedRow]) -> (Vec<&'a [f64]>, Vec<f64>) {
    rows.iter()
        .map(|r| (kind.features(r), r.targets[kind.index()]))
        .unzip()
}

/// Trains one head with mini-batch descent and the plateau callbacks.
pub fn train_head(
    head: &mut Head,
    train: &[&EncodedRow],
    validation: &[&EncodedRow],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(Vec<EpochRecord>, usize)> {
    if train.is_empty() || validation.is_empty() {
        return Err(Error::InvalidArgument("training and validation splits must be non-empty".into()));
    }
    let kind = head.spec.kind;
    let obj = Objective {
        data_weight: match cfg.loss_reduction {
            LossReduction::Mean => 1.0,
            LossReduction::Sum => head.spec.batch_size as f64,
        },
        ..Objective::for_head(&head.spec, cfg.huber_delta)
    };
    let (tx, ty) = head_data(kind, train);
    let (vx, vy) = head_data(kind, validation);
    let mut rng = seeded(seed);
    let mut opt = Adam::new(head.spec.optimizer, head.net.params.len(), cfg.initial_lr, 1e-8);
    let mut schedule = PlateauSchedule::new(cfg);
    let mut order: Vec<usize> = (0..tx.len()).collect();
    let mut best_params = head.net.params.clone();
    let mut best_epoch = 0;
    let mut records = Vec::new();
    let mut bx: Vec<&[f64]> = Vec::with_capacity(head.spec.batch_size);
    let mut by: Vec<f64> = Vec::with_capacity(head.spec.batch_size);

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = schedule.lr;
        opt.lr = lr;
        for batch in order.chunks(head.spec.batch_size) {
            bx.clear();
            by.clear();
            for &i in batch {
                bx.push(tx[i]);
                by.push(ty[i]);
            }
            let (loss, grad) = head.loss_and_grad(&bx, &by, &obj)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { head: kind.name(), epoch });
            }
            opt.step(&mut head.net.params, &grad);
        }
        let train_loss = head.loss(&tx, &ty, &obj)?;
        let val_loss = head.loss(&vx, &vy, &obj)?;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::NonFiniteLoss { head: kind.name(), epoch });
        }
        let decision = schedule.observe(val_loss);
        if decision == Callback::Improved {
            best_params.clone_from(&head.net.params);
            best_epoch = epoch;
        }
        records.push(EpochRecord {
            epoch,
            head: kind,
            train_loss,
            val_loss,
            lr,
            best_val_loss: schedule.best(),
        });
        if decision == Callback::Stop {
            break;
        }
    }
    head.net.params = best_params;
    Ok((records, best_epoch))
}

/// Trains the three heads independently (in parallel) on the encoded
/// train/validation splits.
pub fn train(surrogate: &mut MlpSurrogate, data: &EncodedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let train_rows = data.subset(&data.split.train);
    let val_rows = data.subset(&data.split.validation);
    let results: Vec<Result<(Vec<EpochRecord>, usize)>> = surrogate
        .heads
        .par_iter_mut()
        .enumerate()
        .map(|(k, head)| train_head(head, &train_rows, &val_rows, cfg, child_seed(cfg.seed, 100 + k as u64)))
        .collect();
    let mut epochs = Vec::new();
    let mut best_epoch = [0; 3];
    for (k, r) in results.into_iter().enumerate() {
        let (recs, best) = r?;
        epochs.extend(recs);
        best_epoch[k] = best;
    }
    Ok(TrainReport { epochs, best_epoch })
}

/// Mean absolute percentage error.
pub fn mape(predictions: &[f64], actuals: &[f64]) -> Result<f64> {
    if predictions.len() != actuals.len() || actuals.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "mape needs equal non-empty lengths, got {} and {}",
            predictions.len(),
            actuals.len()
        )));
    }
    let mut sum = 0.0;
    for (p, a) in predictions.iter().zip(actuals) {
        if *a == 0.0 {
            return Err(Error::InvalidArgument("mape undefined for a zero actual".into()));
        }
        sum += ((a - p) / a).abs();
    }
    Ok(sum / actuals.len() as f64 * 100.0)
}

/// MAPE per head (energy, latency, endurance) in physical units.
pub fn evaluate_mape(surrogate: &MlpSurrogate, rows: &[DatasetRow], idx: &[usize]) -> Result<[f64; 3]> {
    let mut preds: [Vec<f64>; 3] = Default::default();
    let mut actual: [Vec<f64>; 3] = Default::default();
    for &i in idx {
        let p = surrogate.predict(&rows[i].raw())?;
        let t = rows[i].targets();
        for (k, v) in [p.energy, p.latency, p.endurance].into_iter().enumerate() {
            preds[k].push(v);
            actual[k].push(t[k]);
        }
    }
    Ok([
        mape(&preds[0], &actual[0])?,
        mape(&preds[1], &actual[1])?,
        mape(&preds[2], &actual[2])?,
    ])
}

/// Worst relative discrepancy between backprop gradients and central
/// finite differences of the full objective on one sample.
pub fn grad_check(head: &Head, features: &[f64], target: f64, epsilon: f64, obj: &Objective) -> Result<f64> {
    let (_, analytic) = head.loss_and_grad(&[features], &[target], obj)?;
    let mut probe = head.clone();
    let mut worst: f64 = 0.0;
    for i in 0..probe.net.params.len() {
        let orig = probe.net.params[i];
        probe.net.params[i] = orig + epsilon;
        let up = probe.loss(&[features], &[target], obj)?;
        probe.net.params[i] = orig - epsilon;
        let down = probe.loss(&[features], &[target], obj)?;
        probe.net.params[i] = orig;
        let numeric = (up - down) / (2.0 * epsilon);
        let scale = analytic[i].abs().max(numeric.abs());
        if scale > 1e-10 {
            worst = worst.max((analytic[i] - numeric).abs() / scale);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::DeviceConfig;
    use crate::sweep::TargetTransform;
    use proptest::prelude::*;

    fn small_spec(widths: Vec<usize>, input: usize) -> HeadSpec {
        HeadSpec {
            kind: HeadKind::Latency,
            layer_widths: widths,
            l1: 0.01,
            l2: 0.001,
            optimizer: OptimizerKind::Adam,
            batch_size: 4,
            input_width: input,
        }
    }

    #[test]
    fn huber_examples() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(2.0, 1.0), 1.5);
        assert_eq!(huber(-2.0, 1.0), 1.5);
    }

    #[test]
    fn huber_is_c1_at_the_seam() {
        for delta in [0.5, 1.0, 3.0] {
            let (lo, hi) = (delta - 1e-9, delta + 1e-9);
            assert!((huber(lo, delta) - huber(hi, delta)).abs() < 1e-8);
            assert!((huber(delta, delta) - delta * delta / 2.0).abs() < 1e-15);
            assert!((huber_grad(lo, delta) - delta).abs() < 1e-8);
            assert_eq!(huber_grad(hi, delta), delta);
            assert_eq!(huber_grad(-hi, delta), -delta);
        }
    }

    #[test]
    fn init_is_seeded_and_matches_architecture() {
        let a = Head::init(HeadSpec::tuned(HeadKind::Energy), 5).unwrap();
        let b = Head::init(HeadSpec::tuned(HeadKind::Energy), 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.net.n_layers(), 8);
        assert_eq!(a.net.sizes, vec![17, 8, 20, 8, 12, 32, 32, 40, 1]);
        assert!(Head::init(small_spec(vec![], 3), 1).is_err());
        let (_, bias) = a.net.layer_range(0);
        assert!(a.net.params[bias].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_weights_return_output_bias() {
        let mut h = Head::zeros(small_spec(vec![4, 3], 5)).unwrap();
        let (_, b) = h.net.layer_range(2);
        h.net.params[b.start] = 0.75;
        for x in [[0.0; 5], [1.0, -2.0, 3.0, 0.5, 9.0]] {
            assert_eq!(h.forward(&x).unwrap(), 0.75);
        }
        assert!(h.forward(&[0.0; 4]).is_err());
    }

    #[test]
    fn negative_preactivation_is_cut() {
        let mut h = Head::zeros(small_spec(vec![1], 1)).unwrap();
        // hidden = relu(w x + b), out = 2 * hidden + 1
        h.net.params = vec![1.0, -5.0, 2.0, 1.0];
        assert_eq!(h.forward(&[3.0]).unwrap(), 1.0);
        assert_eq!(h.forward(&[7.0]).unwrap(), 5.0);
    }

    #[test]
    fn grad_check_on_random_small_heads() {
        for seed in 0..10 {
            let spec = small_spec(vec![6, 5], 4);
            let head = Head::init(spec.clone(), seed).unwrap();
            let x = [0.2, -1.0, 0.7, 1.5];
            let obj = Objective::for_head(&spec, 1.0);
            let err = grad_check(&head, &x, 3.0, 1e-5, &obj).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn zero_everything_gives_zero_bias_gradient() {
        let spec = small_spec(vec![3], 2);
        let head = Head::zeros(spec.clone()).unwrap();
        let obj = Objective::for_head(&spec, 1.0);
        let (loss, grad) = head.loss_and_grad(&[&[0.0, 0.0]], &[0.0], &obj).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn pure_l2_gradient_is_closed_form() {
        let spec = HeadSpec {
            l1: 0.0,
            l2: 0.3,
            ..small_spec(vec![4, 3], 2)
        };
        let head = Head::init(spec.clone(), 9).unwrap();
        let obj = Objective {
            data_weight: 0.0,
            ..Objective::for_head(&spec, 1.0)
        };
        let (_, grad) = head.loss_and_grad(&[&[0.5, -0.5]], &[1.0], &obj).unwrap();
        for l in 0..3 {
            let (w, b) = head.net.layer_range(l);
            for i in w {
                let want = if l < 2 { 2.0 * 0.3 * head.net.params[i] } else { 0.0 };
                assert_eq!(grad[i], want);
            }
            for i in b {
                assert_eq!(grad[i], 0.0);
            }
        }
    }

    #[test]
    fn plateau_schedule_reduces_then_stops() {
        let cfg = TrainConfig::default();
        let mut s = PlateauSchedule::new(&cfg);
        assert_eq!(s.observe(1.0), Callback::Improved);
        assert_eq!(s.observe(1.0), Callback::Continue);
        assert_eq!(s.observe(1.0), Callback::Continue);
        assert_eq!(s.observe(1.0), Callback::ReduceLr);
        assert!((s.lr - 1e-4).abs() < 1e-18);
        assert_eq!(s.observe(1.0), Callback::Stop);

        let mut s = PlateauSchedule::new(&cfg);
        s.observe(1.0);
        for _ in 0..3 {
            s.observe(2.0);
        }
        assert_eq!(s.observe(0.5), Callback::Improved);
        for _ in 0..3 {
            s.observe(0.6);
        }
        assert!((s.lr - 1e-5).abs() < 1e-19);
    }

    #[test]
    fn mape_examples() {
        assert_eq!(mape(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mape(&[99.0, 202.0], &[100.0, 200.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(mape(&[1.0], &[0.0]).is_err());
        assert!(mape(&[1.0], &[1.0, 2.0]).is_err());
    }

    fn scalers() -> [TargetScaler; 3] {
        [
            TargetScaler {
                transform: TargetTransform::Identity,
                mean: 1000.0,
                std: 10.0,
            },
            TargetScaler {
                transform: TargetTransform::Identity,
                mean: 200.0,
                std: 5.0,
            },
            TargetScaler {
                transform: TargetTransform::Identity,
                mean: 0.99,
                std: 0.001,
            },
        ]
    }

    #[test]
    fn zero_weight_surrogate_predicts_means() {
        let cfg = DeviceConfig::default();
        let enc = FeatureEncoder::new(&cfg);
        let mut s = MlpSurrogate::init(enc, scalers(), 1).unwrap();
        for h in &mut s.heads {
            h.net.params.iter_mut().for_each(|p| *p = 0.0);
        }
        let raw = RawFeatures {
            set_v: 2.0,
            set_pulse: 150.0,
            reset_v: 3.5,
            reset_pulse: 100.0,
            temperature: 50.0,
            n_reads: 7,
            n_writes: 3,
        };
        let p = s.predict(&raw).unwrap();
        assert_eq!((p.energy, p.latency, p.endurance), (1000.0, 200.0, 0.99));
        assert_eq!(s.predict(&raw).unwrap(), p);
        let bad = RawFeatures { set_v: 1.7, ..raw };
        assert!(matches!(s.predict(&bad), Err(Error::NotInGrid { .. })));
    }

    #[test]
    fn checkpoint_roundtrip_and_conformance() {
        let enc = FeatureEncoder::new(&DeviceConfig::default());
        let s = MlpSurrogate::init(enc, scalers(), 4).unwrap();
        let back = MlpSurrogate::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
        let mut broken = s.clone();
        broken.heads[1].spec.layer_widths = vec![30, 14];
        assert!(broken.validate().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn huber_nonnegative_symmetric(r in -100.0f64..100.0, delta in 0.01f64..10.0) {
            prop_assert!(huber(r, delta) >= 0.0);
            prop_assert_eq!(huber(r, delta), huber(-r, delta));
            prop_assert!(huber(r, delta) <= 0.5 * r * r + 1e-12);
        }
    }
}
