//! Small fully connected softmax classifiers.
//!
//! A model is a chain of dense layers with ReLU activations and a linear
//! logit head. It serves both as the white-box gradient source for the
//! reference attacks and as the backend of the local black-box oracle.

mod adversarial;
mod io;
mod train;

use serde::{Deserialize, Serialize};

pub use adversarial::{adversarial_train, fgs_batch, ifgs_batch, AdvTrainKind, AdvVariant};
pub use io::{load_model, save_model, FORMAT_VERSION};
pub use train::{train, TrainConfig, TrainReport};

use crate::error::{arg_err, Result};
use crate::losses::LossSpec;
use crate::numerics::{Mat, Rng};
use crate::oracle::{LogitVector, ProbVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

/// Dense layer `act(W·a + b)` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Mat,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

/// Layer widths of a model to be trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub num_classes: usize,
    pub data_range: (f64, f64),
}

impl ArchSpec {
    /// Named presets: `mlp-128` (one hidden layer of 128, the desk default),
    /// `mlp-d` (four hidden layers of 300) and `linear`.
    pub fn named(name: &str, input_dim: usize, num_classes: usize, data_range: (f64, f64)) -> Result<Self> {
        let hidden = match name {
            "mlp-128" => vec![128],
            "mlp-d" => vec![300; 4],
            "linear" => vec![],
            other => return arg_err(format!("unknown architecture {other:?}")),
        };
        Ok(Self {
            input_dim,
            hidden,
            num_classes,
            data_range,
        })
    }
}

/// Output of a single forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub logits: LogitVector,
    pub probs: ProbVector,
}

/// Output of a batched forward pass; row `i` belongs to input row `i`.
#[derive(Debug, Clone)]
pub struct BatchOutput {
    pub logits: Mat,
    pub probs: Vec<ProbVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Dense>,
    data_range: (f64, f64),
}

/// Intermediate values of a batched forward pass kept for backprop.
pub(crate) struct Trace {
    /// `inputs[l]` is the input to layer `l`; the last entry holds the logits.
    inputs: Vec<Mat>,
    /// Pre-activations of each layer.
    pre: Vec<Mat>,
    /// Inverted-dropout multipliers applied to each hidden layer's output.
    masks: Vec<Option<Vec<f64>>>,
}

impl Trace {
    pub(crate) fn logits(&self) -> &Mat {
        self.inputs.last().expect("trace always holds the logits")
    }
}

pub(crate) struct LayerGrad {
    pub weights: Mat,
    pub biases: Vec<f64>,
}

impl MlpModel {
    pub fn new(layers: Vec<Dense>, data_range: (f64, f64)) -> Result<Self> {
        let Some(last) = layers.last() else {
            return arg_err("a model needs at least one layer");
        };
        if last.activation != Activation::Identity {
            return arg_err("the final layer must be a linear logit head");
        }
        if last.out_dim() < 2 {
            return arg_err("a classifier needs at least 2 classes");
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return arg_err(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                ));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.biases.len() != l.out_dim() {
                return arg_err(format!(
                    "layer {i} has {} biases for {} outputs",
                    l.biases.len(),
                    l.out_dim()
                ));
            }
            crate::numerics::ensure_finite(l.weights.as_slice(), "layer weights")?;
            crate::numerics::ensure_finite(&l.biases, "layer biases")?;
        }
        if !(data_range.0 < data_range.1) {
            return arg_err(format!("invalid data range {data_range:?}"));
        }
        Ok(Self { layers, data_range })
    }

    /// Single linear softmax layer.
    pub fn linear(weights: Mat, biases: Vec<f64>, data_range: (f64, f64)) -> Result<Self> {
        Self::new(
            vec![Dense {
                weights,
                biases,
                activation: Activation::Identity,
            }],
            data_range,
        )
    }

    /// Linear model with all-zero parameters (uniform output).
    pub fn zeros_linear(input_dim: usize, num_classes: usize, data_range: (f64, f64)) -> Self {
        Self {
            layers: vec![Dense {
                weights: Mat::zeros(num_classes, input_dim),
                biases: vec![0.0; num_classes],
                activation: Activation::Identity,
            }],
            data_range,
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(arch: &ArchSpec, rng: &mut Rng) -> Result<Self> {
        if arch.input_dim == 0 || arch.hidden.contains(&0) {
            return arg_err("layer widths must be positive");
        }
        let mut dims = vec![arch.input_dim];
        dims.extend(&arch.hidden);
        dims.push(arch.num_classes);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let data = (0..fan_in * fan_out).map(|_| rng.uniform_in(-limit, limit)).collect();
                Dense {
                    weights: Mat::new(fan_out, fan_in, data).expect("shape is consistent"),
                    biases: vec![0.0; fan_out],
                    activation: if i + 2 == dims.len() {
                        Activation::Identity
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Self::new(layers, arch.data_range)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn data_range(&self) -> (f64, f64) {
        self.data_range
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return arg_err(format!(
                "input has {} features, model expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        crate::numerics::ensure_finite(x, "model input")
    }

    /// Logits and softmax probabilities for one input.
    ///
    /// Runs through the batched path so that single and batched queries
    /// agree bit-for-bit.
    pub fn forward(&self, x: &[f64]) -> Result<ForwardOutput> {
        self.check_input(x)?;
        let batch = Mat::new(1, x.len(), x.to_vec())?;
        let mut out = self.forward_batch(&batch)?;
        Ok(ForwardOutput {
            logits: LogitVector::new(out.logits.row(0).to_vec())?,
            probs: out.probs.pop().expect("one row in, one row out"),
        })
    }

    pub fn forward_batch(&self, xs: &Mat) -> Result<BatchOutput> {
        if xs.cols() != self.input_dim() {
            return arg_err(format!(
                "inputs have {} features, model expects {}",
                xs.cols(),
                self.input_dim()
            ));
        }
        crate::numerics::ensure_finite(xs.as_slice(), "model input")?;
        let trace = self.trace(xs, None);
        let logits = trace.inputs.into_iter().last().expect("logits present");
        let probs = (0..logits.rows()).map(|i| ProbVector::softmax(logits.row(i))).collect();
        Ok(BatchOutput { logits, probs })
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward(x)?.probs.argmax())
    }

    /// Predicted class for every row.
    pub fn predict_batch(&self, xs: &Mat) -> Result<Vec<usize>> {
        Ok(self.forward_batch(xs)?.probs.iter().map(|p| p.argmax()).collect())
    }

    /// Fraction of rows classified as their label.
    pub fn accuracy(&self, xs: &Mat, labels: &[usize]) -> Result<f64> {
        if labels.is_empty() {
            return arg_err("accuracy of an empty set");
        }
        let preds = self.predict_batch(xs)?;
        let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
        Ok(hits as f64 / labels.len() as f64)
    }

    pub(crate) fn trace(&self, xs: &Mat, mut dropout: Option<(&mut Rng, f64)>) -> Trace {
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        let mut masks = Vec::with_capacity(n_layers);
        inputs.push(xs.clone());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = inputs[l].gemm(false, &layer.weights, true);
            let width = layer.out_dim();
            for row in z.as_mut_slice().chunks_exact_mut(width) {
                row.iter_mut().zip(&layer.biases).for_each(|(v, b)| *v += b);
            }
            let mut a = z.clone();
            if layer.activation == Activation::Relu {
                a.as_mut_slice().iter_mut().for_each(|v| {
                    if *v <= 0.0 {
                        *v = 0.0
                    }
                });
            }
            let mask = match (&mut dropout, l + 1 < n_layers) {
                (Some((rng, rate)), true) if *rate > 0.0 => {
                    let keep = 1.0 - *rate;
                    let m: Vec<f64> = (0..a.as_slice().len())
                        .map(|_| if rng.uniform() < keep { 1.0 / keep } else { 0.0 })
                        .collect();
                    a.as_mut_slice().iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            masks.push(mask);
            inputs.push(a);
        }
        Trace { inputs, pre, masks }
    }

    /// Backpropagates `dlogits` (n×C) through a trace. Returns per-layer
    /// parameter gradients (if requested) and the input gradient (n×d).
    pub(crate) fn backprop(&self, trace: &Trace, dlogits: Mat, want_params: bool) -> (Vec<LayerGrad>, Mat) {
        let mut grads = Vec::new();
        let mut delta = dlogits;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if l + 1 < self.layers.len() {
                if let Some(mask) = &trace.masks[l] {
                    delta.as_mut_slice().iter_mut().zip(mask).for_each(|(d, m)| *d *= m);
                }
            }
            if layer.activation == Activation::Relu {
                delta
                    .as_mut_slice()
                    .iter_mut()
                    .zip(trace.pre[l].as_slice())
                    .for_each(|(d, z)| {
                        if *z <= 0.0 {
                            *d = 0.0
                        }
                    });
            }
            if want_params {
                let weights = delta.gemm(true, &trace.inputs[l], false);
                let mut biases = vec![0.0; layer.out_dim()];
                for row in delta.as_slice().chunks_exact(layer.out_dim()) {
                    biases.iter_mut().zip(row).for_each(|(b, d)| *b += d);
                }
                grads.push(LayerGrad { weights, biases });
            }
            delta = delta.gemm(false, &layer.weights, false);
        }
        grads.reverse();
        (grads, delta)
    }

    /// Input gradient of a scalar whose logit gradient is produced by
    /// `logit_grad(logits, probs)`.
    pub fn input_gradient<F>(&self, x: &[f64], logit_grad: F) -> Result<Vec<f64>>
    where
        F: FnOnce(&[f64], &[f64]) -> Vec<f64>,
    {
        self.check_input(x)?;
        let xs = Mat::new(1, x.len(), x.to_vec())?;
        let trace = self.trace(&xs, None);
        let logits = trace.logits().row(0).to_vec();
        let probs = ProbVector::softmax(&logits);
        let g = logit_grad(&logits, probs.as_slice());
        let dlogits = Mat::new(1, g.len(), g)?;
        let (_, dx) = self.backprop(&trace, dlogits, false);
        Ok(dx.into_vec())
    }

    /// Exact input gradient of the loss described by `spec`.
    ///
    /// ReLU's derivative at 0 is taken as 0.
    pub fn grad_input(&self, x: &[f64], spec: &LossSpec) -> Result<Vec<f64>> {
        spec.validate(self.num_classes())?;
        self.input_gradient(x, |z, p| spec.loss_logit_gradient(z, p))
    }

    /// Input gradient of the attack's ascent quantity (see
    /// [`LossSpec::ascent_logit_gradient`]).
    pub fn ascent_gradient(&self, x: &[f64], spec: &LossSpec) -> Result<Vec<f64>> {
        spec.validate(self.num_classes())?;
        self.input_gradient(x, |z, p| spec.ascent_logit_gradient(z, p))
    }

    /// Loss value for one input.
    pub fn loss(&self, x: &[f64], spec: &LossSpec) -> Result<f64> {
        let out = self.forward(x)?;
        match spec.kind {
            crate::losses::LossKind::Xent => Ok(crate::losses::xent_from_probs(&out.probs, spec.mode.class())),
            crate::losses::LossKind::Logit => crate::losses::logit_loss(&out.logits, spec),
        }
    }
}
