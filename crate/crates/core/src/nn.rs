//! Feedforward classifier with ReLU hidden layers, inverted dropout, a
//! softmax head, sparse categorical cross-entropy and Adam.
//!
//! Everything is `f64`. Weights for layer `l` are stored row-major as an
//! `M_l × M_{l-1}` matrix, so output unit `i` reads `weights[i*cols..(i+1)*cols]`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ktc::AridityClass;

pub const NUM_CLASSES: usize = 3;
/// Probability floor inside the log of the loss.
pub const PROB_FLOOR: f64 = 1e-12;

/// Row-major feature matrix with one class label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    x: Vec<f64>,
    y: Vec<AridityClass>,
}

impl Dataset {
    pub fn new(n_features: usize, x: Vec<f64>, y: Vec<AridityClass>) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::Shape("datasets need at least one feature".into()));
        }
        if x.len() != n_features * y.len() {
            return Err(Error::Shape(format!(
                "{} values do not form {} rows of {} features",
                x.len(),
                y.len(),
                n_features
            )));
        }
        Ok(Dataset { n_features, x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> AridityClass {
        self.y[i]
    }

    pub fn labels(&self) -> &[AridityClass] {
        &self.y
    }

    pub fn features(&self) -> &[f64] {
        &self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// `M_1 … M_L`: input width first, 3 output classes last.
    pub layer_widths: Vec<usize>,
    pub dropout_rate: f64,
    pub seed: u64,
}

impl NetworkConfig {
    /// Two hidden layers as wide as the input, dropout 0.5.
    pub fn two_hidden(n_inputs: usize, seed: u64) -> Self {
        NetworkConfig { layer_widths: vec![n_inputs, n_inputs, n_inputs, NUM_CLASSES], dropout_rate: 0.5, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 2 {
            return Err(Error::Usage("a network needs at least an input and an output layer".into()));
        }
        if *self.layer_widths.last().unwrap() != NUM_CLASSES {
            return Err(Error::Usage(format!(
                "output layer must have {NUM_CLASSES} units, got {}",
                self.layer_widths.last().unwrap()
            )));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::Usage("layer widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Usage(format!("dropout rate must be in [0, 1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        LayerParams { rows, cols, weights: vec![0.0; rows * cols], biases: vec![0.0; rows] }
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.cols + j]
    }

    fn same_shape(&self, other: &LayerParams) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }

    fn fill_zero(&mut self) {
        self.weights.iter_mut().for_each(|w| *w = 0.0);
        self.biases.iter_mut().for_each(|b| *b = 0.0);
    }

    fn scale(&mut self, k: f64) {
        self.weights.iter_mut().for_each(|w| *w *= k);
        self.biases.iter_mut().for_each(|b| *b *= k);
    }
}

/// Gradients have the same layout as the parameters they belong to.
pub type Gradients = Vec<LayerParams>;

pub fn zero_gradients(net: &Network) -> Gradients {
    net.layers.iter().map(|l| LayerParams::zeros(l.rows, l.cols)).collect()
}

/// Per-covariate affine transform fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits the first `n_covariates` columns; zero spread maps to sd 1.
    pub fn fit(data: &Dataset, n_covariates: usize) -> Result<Self> {
        if n_covariates > data.n_features() {
            return Err(Error::Shape(format!(
                "{n_covariates} covariates requested from {} features",
                data.n_features()
            )));
        }
        if data.is_empty() {
            return Err(Error::Usage("cannot fit a standardizer on no rows".into()));
        }
        let n = data.len() as f64;
        let mut mean = vec![0.0; n_covariates];
        for i in 0..data.len() {
            for (m, v) in mean.iter_mut().zip(data.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; n_covariates];
        for i in 0..data.len() {
            for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Standardizer { mean, sd })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = (*v - m) / s;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetworkConfig,
    pub layers: Vec<LayerParams>,
    pub standardizer: Option<Standardizer>,
    /// Bumped on every parameter update; caches remember the value they saw.
    generation: u64,
}

impl Network {
    pub fn from_parts(
        config: NetworkConfig,
        layers: Vec<LayerParams>,
        standardizer: Option<Standardizer>,
    ) -> Result<Self> {
        config.validate()?;
        if layers.len() != config.layer_widths.len() - 1 {
            return Err(Error::Shape(format!("{} layers for {} widths", layers.len(), config.layer_widths.len())));
        }
        for (l, p) in layers.iter().enumerate() {
            let (rows, cols) = (config.layer_widths[l + 1], config.layer_widths[l]);
            if p.rows != rows || p.cols != cols || p.weights.len() != rows * cols || p.biases.len() != rows {
                return Err(Error::Shape(format!("layer {} is {}x{}, expected {rows}x{cols}", l + 1, p.rows, p.cols)));
            }
            if p.weights.iter().chain(&p.biases).any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("layer {} has non-finite parameters", l + 1)));
            }
        }
        if let Some(s) = &standardizer {
            if s.mean.len() != s.sd.len() || s.mean.len() > config.input_width() {
                return Err(Error::Shape("standardizer does not fit the input layer".into()));
            }
        }
        Ok(Network { config, layers, standardizer, generation: 0 })
    }

    pub fn input_width(&self) -> usize {
        self.config.input_width()
    }

    pub fn check_input_width(&self, width: usize) -> Result<()> {
        if width != self.input_width() {
            return Err(Error::Shape(format!(
                "network expects {} input features, data has {width}",
                self.input_width()
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }
}

/// He-normal weights (variance `2 / fan_in`), zero biases.
pub fn init(config: &NetworkConfig) -> Result<Network> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let layers = config
        .layer_widths
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sd");
            let weights = (0..fan_in * fan_out).map(|_| normal.sample(&mut rng)).collect();
            LayerParams { rows: fan_out, cols: fan_in, weights, biases: vec![0.0; fan_out] }
        })
        .collect();
    Network::from_parts(config.clone(), layers, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Intermediate values from one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    generation: u64,
    /// Standardized input.
    input: Vec<f64>,
    /// Pre-activations of every layer, output logits last.
    pre: Vec<Vec<f64>>,
    /// Hidden outputs after ReLU and dropout.
    hidden: Vec<Vec<f64>>,
    /// Per-unit dropout multipliers (0 or 1/(1-q)); `None` when no dropout ran.
    masks: Vec<Option<Vec<f64>>>,
}

impl ForwardCache {
    pub fn logits(&self) -> [f64; NUM_CLASSES] {
        let last = self.pre.last().expect("at least one layer");
        [last[0], last[1], last[2]]
    }

    pub fn hidden(&self) -> &[Vec<f64>] {
        &self.hidden
    }
}

pub fn forward<R: Rng + ?Sized>(
    net: &Network,
    x: &[f64],
    mode: Mode,
    rng: &mut R,
) -> Result<([f64; NUM_CLASSES], ForwardCache)> {
    net.check_input_width(x.len())?;
    let mut input = x.to_vec();
    if let Some(s) = &net.standardizer {
        s.apply(&mut input);
    }
    let q = net.config.dropout_rate;
    let keep_scale = 1.0 / (1.0 - q);
    let n_layers = net.layers.len();
    let mut pre = Vec::with_capacity(n_layers);
    let mut hidden: Vec<Vec<f64>> = Vec::with_capacity(n_layers - 1);
    let mut masks = Vec::with_capacity(n_layers - 1);
    for (l, layer) in net.layers.iter().enumerate() {
        let h_in: &[f64] = if l == 0 { &input } else { &hidden[l - 1] };
        let z: Vec<f64> = (0..layer.rows)
            .map(|i| {
                let row = &layer.weights[i * layer.cols..(i + 1) * layer.cols];
                row.iter().zip(h_in).map(|(w, h)| w * h).sum::<f64>() + layer.biases[i]
            })
            .collect();
        if l + 1 < n_layers {
            let mut a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            if mode == Mode::Train && q > 0.0 {
                let mask: Vec<f64> =
                    (0..a.len()).map(|_| if rng.random::<f64>() < q { 0.0 } else { keep_scale }).collect();
                a.iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                masks.push(Some(mask));
            } else {
                masks.push(None);
            }
            hidden.push(a);
        }
        pre.push(z);
    }
    let cache = ForwardCache { generation: net.generation, input, pre, hidden, masks };
    Ok((cache.logits(), cache))
}

/// Eval-mode forward pass; no randomness involved.
pub fn forward_eval(net: &Network, x: &[f64]) -> Result<[f64; NUM_CLASSES]> {
    let mut unused = ChaCha8Rng::seed_from_u64(0);
    forward(net, x, Mode::Eval, &mut unused).map(|(logits, _)| logits)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbTriple(pub [f64; NUM_CLASSES]);

impl ProbTriple {
    pub fn p_arid(&self) -> f64 {
        self.0[0]
    }

    pub fn p_semiarid(&self) -> f64 {
        self.0[1]
    }

    pub fn p_nonarid(&self) -> f64 {
        self.0[2]
    }

    pub fn get(&self, class: AridityClass) -> f64 {
        self.0[class.index()]
    }

    pub fn sum(&self) -> f64 {
        self.0.iter().sum()
    }
}

pub fn softmax(logits: &[f64; NUM_CLASSES]) -> Result<ProbTriple> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite logits {logits:?}")));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = logits.map(|h| (h - max).exp());
    let total: f64 = e.iter().sum();
    Ok(ProbTriple(e.map(|v| v / total)))
}

pub fn scce_loss(probs: &ProbTriple, label: AridityClass) -> f64 {
    -probs.get(label).max(PROB_FLOOR).ln()
}

/// Gradient of the loss w.r.t. the logits: `p̂ − onehot(label)`.
pub fn logit_gradient(probs: &ProbTriple, label: AridityClass) -> [f64; NUM_CLASSES] {
    let mut g = probs.0;
    g[label.index()] -= 1.0;
    g
}

pub fn backward(net: &Network, cache: &ForwardCache, label: AridityClass) -> Result<Gradients> {
    let mut grads = zero_gradients(net);
    backward_into(net, cache, label, &mut grads)?;
    Ok(grads)
}

/// Adds this example's gradients to `grads`; returns the example's loss.
pub fn backward_into(net: &Network, cache: &ForwardCache, label: AridityClass, grads: &mut Gradients) -> Result<f64> {
    if cache.generation != net.generation || cache.pre.len() != net.layers.len() {
        return Err(Error::Usage("forward cache is stale: parameters changed since it was built".into()));
    }
    if grads.len() != net.layers.len() || grads.iter().zip(&net.layers).any(|(g, p)| !g.same_shape(p)) {
        return Err(Error::Usage("gradient buffer does not match the network".into()));
    }
    let probs = softmax(&cache.logits())?;
    let loss = scce_loss(&probs, label);
    let mut delta = logit_gradient(&probs, label).to_vec();
    for l in (0..net.layers.len()).rev() {
        let layer = &net.layers[l];
        let h_in: &[f64] = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
        let g = &mut grads[l];
        for (i, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &mut g.weights[i * layer.cols..(i + 1) * layer.cols];
            row.iter_mut().zip(h_in).for_each(|(gw, h)| *gw += d * h);
            g.biases[i] += d;
        }
        if l == 0 {
            break;
        }
        let mut prev = vec![0.0; layer.cols];
        for (i, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &layer.weights[i * layer.cols..(i + 1) * layer.cols];
            prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
        }
        let z = &cache.pre[l - 1];
        for (j, p) in prev.iter_mut().enumerate() {
            if z[j] <= 0.0 {
                *p = 0.0;
            } else if let Some(mask) = &cache.masks[l - 1] {
                *p *= mask[j];
            }
        }
        delta = prev;
    }
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper { learning_rate: 0.001, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: Vec<LayerParams>,
    pub second: Vec<LayerParams>,
    pub hyper: AdamHyper,
}

impl AdamState {
    pub fn new(net: &Network, hyper: AdamHyper) -> Self {
        AdamState { step: 0, first: zero_gradients(net), second: zero_gradients(net), hyper }
    }

    pub(crate) fn matches(&self, net: &Network) -> bool {
        self.first.len() == net.layers.len()
            && self.second.len() == net.layers.len()
            && self.first.iter().zip(&net.layers).all(|(m, p)| m.same_shape(p))
            && self.second.iter().zip(&net.layers).all(|(v, p)| v.same_shape(p))
    }
}

pub fn adam_step(net: &mut Network, grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if grads.len() != net.layers.len() || grads.iter().zip(&net.layers).any(|(g, p)| !g.same_shape(p)) {
        return Err(Error::Usage("gradient shapes do not match the network".into()));
    }
    if !state.matches(net) {
        return Err(Error::Usage("optimizer state shapes do not match the network".into()));
    }
    state.step += 1;
    let AdamHyper { learning_rate, beta1, beta2, epsilon } = state.hyper;
    let t = state.step as i32;
    let correct1 = 1.0 - beta1.powi(t);
    let correct2 = 1.0 - beta2.powi(t);
    let update = |theta: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for (((p, g), m), v) in theta.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / correct1;
            let v_hat = *v / correct2;
            *p -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
        }
    };
    for (((layer, g), m), v) in
        net.layers.iter_mut().zip(grads).zip(state.first.iter_mut()).zip(state.second.iter_mut())
    {
        update(&mut layer.weights, &g.weights, &mut m.weights, &mut v.weights);
        update(&mut layer.biases, &g.biases, &mut m.biases, &mut v.biases);
    }
    net.generation += 1;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub shuffle_seed: u64,
    pub early_stop_patience: Option<usize>,
    /// Share of training rows held out to drive early stopping.
    pub validation_fraction: f64,
    /// Fit a covariate standardizer on the training rows when the network has none.
    pub standardize: bool,
    pub n_covariates: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 1024,
            shuffle_seed: 0,
            early_stop_patience: Some(10),
            validation_fraction: 0.1,
            standardize: true,
            n_covariates: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Usage("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Usage("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Usage(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based, continuing across resumed runs.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub stopped_early: bool,
    /// Epoch whose parameters were kept (the last one without early stopping).
    pub best_epoch: usize,
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Mini-batch Adam on `data`. `start_epoch` is the number of epochs already
/// completed (for resumed runs); reported epochs continue from it.
pub fn train(
    net: &mut Network,
    state: &mut AdamState,
    data: &Dataset,
    tcfg: &TrainConfig,
    start_epoch: usize,
) -> Result<TrainReport> {
    tcfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training dataset is empty".into()));
    }
    net.check_input_width(data.n_features())?;
    let counts = crate::basis::class_balance(data.labels());
    for (c, n) in AridityClass::ALL.iter().zip(counts) {
        if n == 0 {
            log::warn!("no training examples of class {c}");
        }
    }
    if tcfg.standardize && net.standardizer.is_none() && tcfg.n_covariates > 0 {
        net.standardizer = Some(Standardizer::fit(data, tcfg.n_covariates)?);
    }

    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(tcfg.shuffle_seed);
    let use_validation = tcfg.early_stop_patience.is_some() && tcfg.validation_fraction > 0.0 && data.len() >= 2;
    let (train_idx, val_idx) = if use_validation {
        order.shuffle(&mut split_rng);
        let n_val = ((data.len() as f64 * tcfg.validation_fraction).ceil() as usize).clamp(1, data.len() - 1);
        let val = order.split_off(data.len() - n_val);
        (order, val)
    } else {
        (order, Vec::new())
    };

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut grads = zero_gradients(net);
    let mut best: Option<(f64, usize, Vec<LayerParams>)> = None;
    let mut since_best = 0usize;
    let mut stopped_early = false;
    let mut order = train_idx;
    for epoch in start_epoch + 1..=start_epoch + tcfg.epochs {
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(epoch_seed(tcfg.shuffle_seed, epoch));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(epoch_seed(net.config.seed, epoch));
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            grads.iter_mut().for_each(LayerParams::fill_zero);
            for &i in batch {
                let (_, cache) = forward(net, data.row(i), Mode::Train, &mut dropout_rng)?;
                loss_sum += backward_into(net, &cache, data.label(i), &mut grads)?;
            }
            let k = 1.0 / batch.len() as f64;
            grads.iter_mut().for_each(|g| g.scale(k));
            adam_step(net, &grads, state)?;
        }
        let train_loss = loss_sum / order.len() as f64;
        let val_loss = if val_idx.is_empty() { None } else { Some(mean_loss(net, data, &val_idx)?) };
        log::debug!("epoch {epoch}: train loss {train_loss:.6} val loss {val_loss:?}");
        history.push(EpochStats { epoch, train_loss, val_loss });

        if let (Some(patience), Some(vl)) = (tcfg.early_stop_patience, val_loss) {
            match &best {
                Some((bl, _, _)) if vl >= *bl => {
                    since_best += 1;
                    if since_best >= patience {
                        stopped_early = true;
                        break;
                    }
                }
                _ => {
                    best = Some((vl, epoch, net.layers.clone()));
                    since_best = 0;
                }
            }
        }
    }
    let last_epoch = history.last().map_or(start_epoch, |h| h.epoch);
    let best_epoch = match best {
        Some((_, epoch, layers)) if epoch != last_epoch => {
            net.layers = layers;
            net.generation += 1;
            epoch
        }
        Some((_, epoch, _)) => epoch,
        None => last_epoch,
    };
    Ok(TrainReport { history, stopped_early, best_epoch })
}

/// Mean eval-mode loss over the selected rows.
pub fn mean_loss(net: &Network, data: &Dataset, rows: &[usize]) -> Result<f64> {
    if rows.is_empty() {
        return Err(Error::Usage("no rows to score".into()));
    }
    let mut total = 0.0;
    for &i in rows {
        let probs = softmax(&forward_eval(net, data.row(i))?)?;
        total += scce_loss(&probs, data.label(i));
    }
    Ok(total / rows.len() as f64)
}

/// Eval-mode probabilities for each row of a row-major matrix, in input order.
pub fn predict_probs(net: &Network, features: &[f64], n_features: usize) -> Result<Vec<ProbTriple>> {
    net.check_input_width(n_features)?;
    if !features.len().is_multiple_of(n_features) {
        return Err(Error::Shape(format!(
            "{} values are not a whole number of {n_features}-wide rows",
            features.len()
        )));
    }
    features.chunks_exact(n_features).map(|row| softmax(&forward_eval(net, row)?)).collect()
}

/// Share of rows whose argmax class matches the label.
pub fn accuracy(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Usage("no rows to score".into()));
    }
    let probs = predict_probs(net, data.features(), data.n_features())?;
    let hits = probs.iter().zip(data.labels()).filter(|(p, y)| crate::evaluation::argmax_classify(p) == **y).count();
    Ok(hits as f64 / data.len() as f64)
}
