use ndarray::{Array1, Array2, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{LayerSpec, ModelConfig};
use super::lstmp::{LstmpCache, LstmpLayer};
use super::tdnn::{TdnnCache, TdnnLayer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum HiddenLayer {
    Tdnn(TdnnLayer),
    Lstmp(LstmpLayer),
}

impl HiddenLayer {
    pub fn out_dim(&self) -> usize {
        match self {
            HiddenLayer::Tdnn(l) => l.out_dim(),
            HiddenLayer::Lstmp(l) => l.proj_dim(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            HiddenLayer::Tdnn(_) => "tdnn",
            HiddenLayer::Lstmp(_) => "lstmp",
        }
    }

    fn zeros_like(&self) -> Self {
        match self {
            HiddenLayer::Tdnn(l) => HiddenLayer::Tdnn(l.zeros_like()),
            HiddenLayer::Lstmp(l) => HiddenLayer::Lstmp(l.zeros_like()),
        }
    }
}

/// Affine layer followed by log-softmax.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputLayer {
    /// `num_outputs x in_dim`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Fixed per-dimension affine map applied to the inputs, `(x - shift) * scale`.
/// It is estimated from data before training and never updated by SGD.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub shift: Array1<f64>,
    pub scale: Array1<f64>,
}

impl InputNorm {
    pub fn identity(dim: usize) -> Self {
        InputNorm {
            shift: Array1::zeros(dim),
            scale: Array1::ones(dim),
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        (&x - &self.shift) * &self.scale
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub input_norm: InputNorm,
    pub hidden: Vec<HiddenLayer>,
    pub output: OutputLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub stage: String,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: TrainingMeta,
}

/// Randomly initialized network: hidden weights uniform in
/// `+-sqrt(6 / fan_in)` for TDNN layers and `+-sqrt(1 / fan_in)` for LSTMP
/// gates and the output layer.
pub fn build_model(config: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_dim = config.input_dim;
    let mut hidden = Vec::with_capacity(config.layers.len());
    for spec in config.effective_layers() {
        let layer = match &spec {
            LayerSpec::Tdnn { context, out_dim } => HiddenLayer::Tdnn(TdnnLayer::new_random(context, in_dim, *out_dim, &mut rng)),
            LayerSpec::Lstmp { cell_dim, proj_dim } => {
                HiddenLayer::Lstmp(LstmpLayer::new_random(in_dim, *cell_dim, *proj_dim, &mut rng))
            }
        };
        in_dim = layer.out_dim();
        hidden.push(layer);
    }
    let bound = (1.0 / in_dim as f64).sqrt();
    let output = OutputLayer {
        weight: Array2::from_shape_simple_fn((config.num_outputs, in_dim), || rng.random_range(-bound..bound)),
        bias: Array1::zeros(config.num_outputs),
    };
    Ok(Checkpoint {
        meta: TrainingMeta {
            stage: "init".into(),
            epoch: 0,
            seed,
            config_hash: config.hash(),
        },
        model: Model {
            config: config.clone(),
            input_norm: InputNorm::identity(config.input_dim),
            hidden,
            output,
        },
    })
}

enum LayerCache {
    Tdnn(TdnnCache),
    Lstmp(LstmpCache),
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    /// Per-frame dropout multipliers of each hidden layer; `None` when no
    /// dropout was applied.
    masks: Vec<Option<Array1<f64>>>,
    last_hidden: Array2<f64>,
    log_probs: Array2<f64>,
}

/// Per-tensor gradients, shaped like the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<HiddenLayer>,
    pub output: OutputLayer,
}

/// Result of one forward/backward pass over an utterance.
#[derive(Debug, Clone)]
pub struct LossAndGradients {
    /// Mean per-frame negative log-likelihood.
    pub loss: f64,
    pub num_frames: usize,
    /// Frames whose argmax equals the target.
    pub correct: usize,
    /// Gradient of the summed (not averaged) NLL.
    pub gradients: Gradients,
}

fn check_finite(x: &Array2<f64>, layer: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer,
            reason: "non-finite activation".into(),
        })
    }
}

/// One Bernoulli(1 - rate) keep decision per frame, scaled by `1 / (1 - rate)`.
fn frame_mask<R: Rng>(frames: usize, rate: f64, rng: &mut R) -> Array1<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array1::from_shape_simple_fn(frames, || if rng.random::<f64>() < rate { 0.0 } else { keep })
}

fn log_softmax_rows(mut z: Array2<f64>) -> Array2<f64> {
    for mut row in z.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    z
}

impl Model {
    pub fn num_outputs(&self) -> usize {
        self.output.bias.len()
    }

    pub fn zero_gradients(&self) -> Gradients {
        Gradients {
            hidden: self.hidden.iter().map(HiddenLayer::zeros_like).collect(),
            output: OutputLayer {
                weight: Array2::zeros(self.output.weight.raw_dim()),
                bias: Array1::zeros(self.output.bias.raw_dim()),
            },
        }
    }

    fn forward_cached<R: Rng>(&self, inputs: ArrayView2<f64>, rate: f64, rng: &mut R, mode: Mode) -> Result<ForwardCache> {
        if inputs.ncols() != self.config.input_dim {
            return Err(Error::domain(format!(
                "model expects {}-dim inputs, got {}",
                self.config.input_dim,
                inputs.ncols()
            )));
        }
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::domain(format!("dropout rate {rate} outside [0, 1)")));
        }
        let t = inputs.nrows();
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut masks = Vec::with_capacity(self.hidden.len());
        let mut x = self.input_norm.apply(inputs);
        for (i, layer) in self.hidden.iter().enumerate() {
            let (mut y, cache) = match layer {
                HiddenLayer::Tdnn(l) => {
                    let (y, c) = l.forward_cached(x.view());
                    (y, LayerCache::Tdnn(c))
                }
                HiddenLayer::Lstmp(l) => {
                    let (y, c) = l.forward_cached(x.view());
                    (y, LayerCache::Lstmp(c))
                }
            };
            check_finite(&y, i)?;
            let mask = if mode == Mode::Train && rate > 0.0 {
                let m = frame_mask(t, rate, rng);
                y *= &m.view().insert_axis(Axis(1));
                Some(m)
            } else {
                None
            };
            layers.push(cache);
            masks.push(mask);
            x = y;
        }
        let mut z = x.dot(&self.output.weight.t());
        z += &self.output.bias;
        let log_probs = log_softmax_rows(z);
        check_finite(&log_probs, self.hidden.len())?;
        Ok(ForwardCache {
            layers,
            masks,
            last_hidden: x,
            log_probs,
        })
    }

    /// Per-frame log-posteriors, `T x num_outputs`.
    pub fn forward<R: Rng>(&self, inputs: ArrayView2<f64>, dropout_rate: f64, rng: &mut R, mode: Mode) -> Result<Array2<f64>> {
        Ok(self.forward_cached(inputs, dropout_rate, rng, mode)?.log_probs)
    }

    /// Eval-mode forward pass.
    pub fn predict(&self, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.forward(inputs, 0.0, &mut rng, Mode::Eval)
    }

    /// Cross-entropy forward and backward pass over one utterance.
    pub fn loss_and_gradients<R: Rng>(
        &self,
        inputs: ArrayView2<f64>,
        targets: &[usize],
        dropout_rate: f64,
        rng: &mut R,
        mode: Mode,
    ) -> Result<LossAndGradients> {
        if targets.len() != inputs.nrows() {
            return Err(Error::domain(format!(
                "{} targets for {} frames",
                targets.len(),
                inputs.nrows()
            )));
        }
        if targets.is_empty() {
            return Err(Error::domain("utterance has no frames"));
        }
        let n_out = self.num_outputs();
        if let Some(&bad) = targets.iter().find(|&&c| c >= n_out) {
            return Err(Error::domain(format!("target id {bad} >= num_outputs {n_out}")));
        }
        let cache = self.forward_cached(inputs, dropout_rate, rng, mode)?;
        let mut loss = 0.0;
        let mut correct = 0;
        // d(sum NLL)/dz = softmax - onehot
        let mut dz = cache.log_probs.mapv(f64::exp);
        for (t, &c) in targets.iter().enumerate() {
            let row = cache.log_probs.row(t);
            loss -= row[c];
            let argmax = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best })
                .0;
            if argmax == c {
                correct += 1;
            }
            dz[[t, c]] -= 1.0;
        }
        let mut grads = self.zero_gradients();
        grads.output.weight = dz.t().dot(&cache.last_hidden);
        grads.output.bias = dz.sum_axis(Axis(0));
        let mut dx = dz.dot(&self.output.weight);
        for i in (0..self.hidden.len()).rev() {
            if let Some(m) = &cache.masks[i] {
                dx *= &m.view().insert_axis(Axis(1));
            }
            dx = match (&self.hidden[i], &cache.layers[i], &mut grads.hidden[i]) {
                (HiddenLayer::Tdnn(l), LayerCache::Tdnn(c), HiddenLayer::Tdnn(g)) => l.backward(c, dx, g),
                (HiddenLayer::Lstmp(l), LayerCache::Lstmp(c), HiddenLayer::Lstmp(g)) => l.backward(c, dx, g),
                _ => unreachable!("gradient layout mirrors the model"),
            };
        }
        let num_frames = targets.len();
        Ok(LossAndGradients {
            loss: loss / num_frames as f64,
            num_frames,
            correct,
            gradients: grads,
        })
    }

    /// Gradients of the mean per-frame NLL (eval mode, no dropout) and the
    /// loss itself.
    pub fn backward(&self, inputs: ArrayView2<f64>, targets: &[usize]) -> Result<(Gradients, f64)> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = self.loss_and_gradients(inputs, targets, 0.0, &mut rng, Mode::Eval)?;
        let mut g = r.gradients;
        g.scale(1.0 / r.num_frames as f64);
        Ok((g, r.loss))
    }

    /// Sets the input normalization to zero mean and unit variance over all
    /// frames of `data`. Dimensions with (near) zero variance only get shifted.
    pub fn fit_input_norm<'a>(&mut self, data: impl IntoIterator<Item = ArrayView2<'a, f64>>) -> Result<()> {
        let d = self.config.input_dim;
        let mut sum = Array1::<f64>::zeros(d);
        let mut sq = Array1::<f64>::zeros(d);
        let mut n = 0usize;
        for x in data {
            if x.ncols() != d {
                return Err(Error::domain(format!("model expects {d}-dim inputs, got {}", x.ncols())));
            }
            sum += &x.sum_axis(Axis(0));
            sq += &x.mapv(|v| v * v).sum_axis(Axis(0));
            n += x.nrows();
        }
        if n == 0 {
            return Err(Error::domain("no frames to estimate input normalization"));
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - &mean * &mean;
        self.input_norm = InputNorm {
            scale: var.mapv(|v| if v > 1e-8 { 1.0 / v.sqrt() } else { 1.0 }),
            shift: mean,
        };
        Ok(())
    }

    /// Every trainable tensor with a stable name, in serialization order.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        layer_tensors(&self.hidden, &self.output)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        layer_tensors_mut(&mut self.hidden, &mut self.output)
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// `w <- w - lr * g`, with each layer's update clipped to an L2 norm of
    /// at most `max_change` when that is given.
    pub fn apply_gradients(&mut self, grads: &Gradients, lr: f64, max_change: Option<f64>) {
        let grad_tensors = grads.tensors();
        let mut params = self.tensors_mut();
        let layer_of = |name: &str| name.split('.').next().unwrap_or("").to_string();
        let mut start = 0;
        while start < params.len() {
            let layer = layer_of(&params[start].0);
            let mut end = start;
            while end < params.len() && layer_of(&params[end].0) == layer {
                end += 1;
            }
            let mut scale = lr;
            if let Some(limit) = max_change {
                let norm = grad_tensors[start..end]
                    .iter()
                    .flat_map(|(_, g)| g.iter())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt()
                    * lr;
                if norm > limit {
                    scale *= limit / norm;
                }
            }
            for k in start..end {
                params[k].1.scaled_add(-scale, &grad_tensors[k].1);
            }
            start = end;
        }
    }
}

impl Gradients {
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, f64>)> {
        layer_tensors(&self.hidden, &self.output)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, f64>)> {
        layer_tensors_mut(&mut self.hidden, &mut self.output)
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        let src = other.tensors();
        for ((_, mut dst), (_, s)) in self.tensors_mut().into_iter().zip(src) {
            dst += &s;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, mut t) in self.tensors_mut() {
            t *= factor;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

fn layer_tensors<'a>(hidden: &'a [HiddenLayer], output: &'a OutputLayer) -> Vec<(String, ArrayViewD<'a, f64>)> {
    let mut out = Vec::new();
    for (i, layer) in hidden.iter().enumerate() {
        let p = format!("layer{i:02}");
        match layer {
            HiddenLayer::Tdnn(l) => {
                out.push((format!("{p}.weight"), l.weight.view().into_dyn()));
                out.push((format!("{p}.bias"), l.bias.view().into_dyn()));
            }
            HiddenLayer::Lstmp(l) => {
                out.push((format!("{p}.w_input"), l.w_input.view().into_dyn()));
                out.push((format!("{p}.w_recurrent"), l.w_recurrent.view().into_dyn()));
                out.push((format!("{p}.bias"), l.bias.view().into_dyn()));
                out.push((format!("{p}.peep_input"), l.peep_input.view().into_dyn()));
                out.push((format!("{p}.peep_forget"), l.peep_forget.view().into_dyn()));
                out.push((format!("{p}.peep_output"), l.peep_output.view().into_dyn()));
                out.push((format!("{p}.w_projection"), l.w_projection.view().into_dyn()));
            }
        }
    }
    out.push(("output.weight".into(), output.weight.view().into_dyn()));
    out.push(("output.bias".into(), output.bias.view().into_dyn()));
    out
}

pub(crate) fn layer_tensors_mut<'a>(hidden: &'a mut [HiddenLayer], output: &'a mut OutputLayer) -> Vec<(String, ArrayViewMutD<'a, f64>)> {
    let mut out = Vec::new();
    for (i, layer) in hidden.iter_mut().enumerate() {
        let p = format!("layer{i:02}");
        match layer {
            HiddenLayer::Tdnn(l) => {
                out.push((format!("{p}.weight"), l.weight.view_mut().into_dyn()));
                out.push((format!("{p}.bias"), l.bias.view_mut().into_dyn()));
            }
            HiddenLayer::Lstmp(l) => {
                out.push((format!("{p}.w_input"), l.w_input.view_mut().into_dyn()));
                out.push((format!("{p}.w_recurrent"), l.w_recurrent.view_mut().into_dyn()));
                out.push((format!("{p}.bias"), l.bias.view_mut().into_dyn()));
                out.push((format!("{p}.peep_input"), l.peep_input.view_mut().into_dyn()));
                out.push((format!("{p}.peep_forget"), l.peep_forget.view_mut().into_dyn()));
                out.push((format!("{p}.peep_output"), l.peep_output.view_mut().into_dyn()));
                out.push((format!("{p}.w_projection"), l.w_projection.view_mut().into_dyn()));
            }
        }
    }
    out.push(("output.weight".into(), output.weight.view_mut().into_dyn()));
    out.push(("output.bias".into(), output.bias.view_mut().into_dyn()));
    out
}

/// Layer names as they appear in tensor names, with their kind.
pub fn layer_names(model: &Model) -> Vec<(String, &'static str)> {
    let mut v: Vec<_> = model
        .hidden
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("layer{i:02}"), l.kind()))
        .collect();
    v.push(("output".into(), "output"));
    v
}
