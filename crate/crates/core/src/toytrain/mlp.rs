use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::infotheory::Activation;
use crate::linalg::Matrix;
use crate::rng::Stream;
use crate::tensor_io::{encode_checkpoint, load_checkpoint, TensorRecord};
use crate::Scalar;

pub fn weight_name(layer: usize) -> String {
    format!("layers.{layer}.weight")
}

pub fn bias_name(layer: usize) -> String {
    format!("layers.{layer}.bias")
}

/// Parses `layers.{i}.weight` / `layers.{i}.bias` into `(i, is_weight)`.
fn parse_param_name(name: &str) -> Option<(usize, bool)> {
    let rest = name.strip_prefix("layers.")?;
    let (idx, kind) = rest.split_once('.')?;
    let layer = idx.parse().ok()?;
    match kind {
        "weight" => Some((layer, true)),
        "bias" => Some((layer, false)),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean of squared errors over every output element.
    #[default]
    Mse,
    /// Softmax cross-entropy against (one-hot) target rows, averaged over
    /// the batch.
    CrossEntropy,
}

/// Fully connected network: hidden layers use `activation`, the output layer
/// is linear. Layer `i` maps `layer_sizes[i]` to `layer_sizes[i + 1]` and
/// stores its weight as `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel<T> {
    layer_sizes: Vec<usize>,
    activation: Activation,
    weights: Vec<Matrix<T>>,
    biases: Vec<Vec<T>>,
}

/// Per-parameter gradients with the same layout as the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Matrix<T>>,
    pub biases: Vec<Vec<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&[T]> {
        let (layer, is_weight) = parse_param_name(name)?;
        if is_weight {
            self.weights.get(layer).map(Matrix::as_slice)
        } else {
            self.biases.get(layer).map(Vec::as_slice)
        }
    }
}

fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::Config(format!(
            "an MLP needs at least 2 layer sizes (input and output), got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::Config(format!("layer sizes must be positive, got {layer_sizes:?}")));
    }
    Ok(())
}

/// Fan-in scaled uniform init: every weight and bias of layer `i` is drawn
/// from `U(-1/√in, 1/√in)`, weight before bias, layer by layer.
pub fn build_mlp<T: Scalar>(layer_sizes: &[usize], activation: Activation, seed: u64) -> Result<MlpModel<T>> {
    check_sizes(layer_sizes)?;
    let mut stream = Stream::new(seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for w in layer_sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        weights.push(Matrix::from_fn(fan_out, fan_in, |_, _| T::of(stream.uniform_in(-bound, bound))));
        biases.push((0..fan_out).map(|_| T::of(stream.uniform_in(-bound, bound))).collect());
    }
    Ok(MlpModel {
        layer_sizes: layer_sizes.to_vec(),
        activation,
        weights,
        biases,
    })
}

/// Activations kept from the forward pass for backpropagation.
struct Trace<T> {
    /// Input to each layer (`inputs[0]` is the batch itself).
    inputs: Vec<Matrix<T>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Matrix<T>>,
    output: Matrix<T>,
}

/// `x Wᵀ + b` for a batch `x` of shape `[batch, in]`.
fn affine<T: Scalar>(x: &Matrix<T>, w: &Matrix<T>, b: &[T]) -> Matrix<T> {
    let (n, out) = (x.rows(), w.rows());
    let mut z = Matrix::zeros(n, out);
    for r in 0..n {
        let xr = x.row(r);
        let zr = z.row_mut(r);
        for (o, zo) in zr.iter_mut().enumerate() {
            let mut acc = b[o];
            for (xi, wi) in xr.iter().zip(w.row(o)) {
                acc += *xi * *wi;
            }
            *zo = acc;
        }
    }
    z
}

impl<T: Scalar> MlpModel<T> {
    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Weight and bias names, layer by layer.
    pub fn param_names(&self) -> Vec<String> {
        (0..self.n_layers()).flat_map(|i| [weight_name(i), bias_name(i)]).collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.rows() * w.cols()).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn weight(&self, layer: usize) -> &Matrix<T> {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[T] {
        &self.biases[layer]
    }

    pub fn param(&self, name: &str) -> Option<&[T]> {
        let (layer, is_weight) = parse_param_name(name)?;
        if is_weight {
            self.weights.get(layer).map(Matrix::as_slice)
        } else {
            self.biases.get(layer).map(Vec::as_slice)
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut [T]> {
        let (layer, is_weight) = parse_param_name(name)?;
        if is_weight {
            self.weights.get_mut(layer).map(Matrix::as_mut_slice)
        } else {
            self.biases.get_mut(layer).map(Vec::as_mut_slice)
        }
    }

    pub fn param_shape(&self, name: &str) -> Option<Vec<usize>> {
        let (layer, is_weight) = parse_param_name(name)?;
        let w = self.weights.get(layer)?;
        Some(if is_weight { vec![w.rows(), w.cols()] } else { vec![w.rows()] })
    }

    fn check_batch(&self, x: &Matrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Config(format!(
                "batch has {} features, model expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &Matrix<T>) -> Trace<T> {
        let last = self.n_layers() - 1;
        let mut inputs = vec![x.clone()];
        let mut pre = Vec::with_capacity(last);
        for l in 0..last {
            let z = affine(&inputs[l], &self.weights[l], &self.biases[l]);
            let act = self.activation;
            inputs.push(z.map(|v| act.apply(v)));
            pre.push(z);
        }
        let output = affine(&inputs[last], &self.weights[last], &self.biases[last]);
        Trace { inputs, pre, output }
    }

    /// Network output for a `[batch, in]` input.
    pub fn forward(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        self.check_batch(x)?;
        Ok(self.trace(x).output)
    }

    pub fn loss(&self, x: &Matrix<T>, targets: &Matrix<T>, kind: LossKind) -> Result<T> {
        self.check_batch(x)?;
        check_targets(x, targets, self.output_dim())?;
        Ok(loss_and_output_grad(&self.trace(x).output, targets, kind).0)
    }

    /// Loss on a batch and its gradient with respect to every parameter.
    pub fn loss_and_gradients(&self, x: &Matrix<T>, targets: &Matrix<T>, kind: LossKind) -> Result<(T, Gradients<T>)> {
        self.check_batch(x)?;
        check_targets(x, targets, self.output_dim())?;
        let trace = self.trace(x);
        let (loss, mut delta) = loss_and_output_grad(&trace.output, targets, kind);
        let n_layers = self.n_layers();
        let mut gw = Vec::with_capacity(n_layers);
        let mut gb = Vec::with_capacity(n_layers);
        for l in (0..n_layers).rev() {
            let a = &trace.inputs[l];
            let w = &self.weights[l];
            // dW = δᵀ a, db = Σ_rows δ
            let mut dw = Matrix::zeros(w.rows(), w.cols());
            let mut db = vec![T::zero(); w.rows()];
            for r in 0..a.rows() {
                let (dr, ar) = (delta.row(r), a.row(r));
                for (o, &d) in dr.iter().enumerate() {
                    db[o] += d;
                    for (g, &ai) in dw.row_mut(o).iter_mut().zip(ar) {
                        *g += d * ai;
                    }
                }
            }
            if l > 0 {
                // δ_prev = (δ W) ⊙ φ'(z_prev)
                let z = &trace.pre[l - 1];
                let mut prev = Matrix::zeros(delta.rows(), w.cols());
                for r in 0..delta.rows() {
                    let dr = delta.row(r);
                    let pr = prev.row_mut(r);
                    for (o, &d) in dr.iter().enumerate() {
                        for (p, &wi) in pr.iter_mut().zip(w.row(o)) {
                            *p += d * wi;
                        }
                    }
                    for (p, &zv) in pr.iter_mut().zip(z.row(r)) {
                        *p *= self.activation.derivative(zv);
                    }
                }
                delta = prev;
            }
            gw.push(dw);
            gb.push(db);
        }
        gw.reverse();
        gb.reverse();
        Ok((loss, Gradients { weights: gw, biases: gb }))
    }

    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        MlpModel {
            layer_sizes: self.layer_sizes.clone(),
            activation: self.activation,
            weights: self.weights.iter().map(Matrix::cast).collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.iter().map(|&v| U::of(v.as_f64())).collect())
                .collect(),
        }
    }

    /// Parameters as f32 tensor records, in [`Self::param_names`] order.
    pub fn to_records(&self) -> Result<Vec<TensorRecord>> {
        let mut out = Vec::with_capacity(2 * self.n_layers());
        for name in self.param_names() {
            let values: Vec<f32> = self.param(&name).unwrap().iter().map(|v| v.as_f64() as f32).collect();
            let shape = self.param_shape(&name).unwrap();
            out.push(TensorRecord::from_f32(name, shape, &values)?);
        }
        Ok(out)
    }

    /// Canonical KTAN bytes of the f32 parameters.
    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        encode_checkpoint(&self.to_records()?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_checkpoint_bytes()?).map_err(|e| Error::io_at(path, e))
    }

    /// Rebuilds a model from records named by the `layers.{i}.*` scheme.
    /// Layer sizes are inferred from the weight shapes.
    pub fn from_records(records: &[TensorRecord], activation: Activation) -> Result<Self> {
        let mut weights: Vec<Option<Matrix<T>>> = Vec::new();
        let mut biases: Vec<Option<Vec<T>>> = Vec::new();
        for rec in records {
            let (layer, is_weight) = parse_param_name(rec.name())
                .ok_or_else(|| Error::Config(format!("{:?} is not an MLP parameter name", rec.name())))?;
            rec.check_finite()?;
            let values: Vec<T> = rec.values_f32().into_iter().map(|v| T::of(v as f64)).collect();
            if weights.len() <= layer {
                weights.resize(layer + 1, None);
                biases.resize(layer + 1, None);
            }
            match (is_weight, rec.shape()) {
                (true, &[out, inp]) => weights[layer] = Some(Matrix::new(out, inp, values)?),
                (false, &[_]) => biases[layer] = Some(values),
                (_, shape) => {
                    return Err(Error::Config(format!("{} has unexpected shape {shape:?}", rec.name())));
                }
            }
        }
        let mut w_out = Vec::new();
        let mut b_out = Vec::new();
        let mut sizes = Vec::new();
        for (l, (w, b)) in weights.into_iter().zip(biases).enumerate() {
            let w = w.ok_or_else(|| Error::Config(format!("missing {}", weight_name(l))))?;
            let b = b.ok_or_else(|| Error::Config(format!("missing {}", bias_name(l))))?;
            if b.len() != w.rows() {
                return Err(Error::Config(format!("{} does not match {}", bias_name(l), weight_name(l))));
            }
            if l == 0 {
                sizes.push(w.cols());
            } else if sizes[l] != w.cols() {
                return Err(Error::Config(format!(
                    "{} expects {} inputs but layer {} has {} outputs",
                    weight_name(l),
                    w.cols(),
                    l - 1,
                    sizes[l]
                )));
            }
            sizes.push(w.rows());
            w_out.push(w);
            b_out.push(b);
        }
        check_sizes(&sizes)?;
        Ok(Self {
            layer_sizes: sizes,
            activation,
            weights: w_out,
            biases: b_out,
        })
    }

    pub fn load(path: impl AsRef<Path>, activation: Activation) -> Result<Self> {
        let view = load_checkpoint(path)?;
        Self::from_records(&view.read_all()?, activation)
    }
}

fn check_targets<T: Scalar>(x: &Matrix<T>, targets: &Matrix<T>, out: usize) -> Result<()> {
    if targets.rows() != x.rows() || targets.cols() != out {
        return Err(Error::Config(format!(
            "targets are {}x{}, expected {}x{out}",
            targets.rows(),
            targets.cols(),
            x.rows()
        )));
    }
    Ok(())
}

/// Loss value and its gradient with respect to the network output.
fn loss_and_output_grad<T: Scalar>(y: &Matrix<T>, t: &Matrix<T>, kind: LossKind) -> (T, Matrix<T>) {
    let (n, k) = (y.rows(), y.cols());
    let mut grad = Matrix::zeros(n, k);
    let mut total = T::zero();
    match kind {
        LossKind::Mse => {
            let scale = T::one() / T::of((n * k) as f64);
            for ((g, &yv), &tv) in grad.as_mut_slice().iter_mut().zip(y.as_slice()).zip(t.as_slice()) {
                let d = yv - tv;
                total += d * d;
                *g = T::of(2.0) * d * scale;
            }
            (total * scale, grad)
        }
        LossKind::CrossEntropy => {
            let scale = T::one() / T::of(n as f64);
            for r in 0..n {
                let yr = y.row(r);
                let tr = t.row(r);
                let max = yr.iter().copied().fold(T::neg_infinity(), T::max);
                let sum_exp: T = yr.iter().map(|&v| (v - max).exp()).sum();
                let log_z = max + sum_exp.ln();
                let t_sum: T = tr.iter().copied().sum();
                for ((g, &yv), &tv) in grad.row_mut(r).iter_mut().zip(yr).zip(tr) {
                    total -= tv * (yv - log_z);
                    *g = ((yv - log_z).exp() * t_sum - tv) * scale;
                }
            }
            (total * scale, grad)
        }
    }
}
