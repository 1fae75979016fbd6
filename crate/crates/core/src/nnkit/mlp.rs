//! Fully connected network with batched forward and exact reverse-mode
//! backward passes.
//!
//! Batches are row-major in the sense that each row of the input matrix is one
//! item. Layer `l` computes `H = A Wᵀ + 1 bᵀ`, with the hidden activation on
//! every layer except the last.
//!
//! Checkpoint format (plain text, whitespace separated):
//!
//! ```text
//! mlp <layer count>
//! activation relu|identity
//! layer <index> <inputs> <outputs>
//! weight
//! <outputs lines of <inputs> numbers>
//! bias
//! <one line of <outputs> numbers>
//! ...
//! ```

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{read_to_string, write_string, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    // derivative at the pre-activation; ReLU uses 0 at the origin
    fn slope(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }
}

/// `weight` is outputs × inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: DMatrix::zeros(outputs, inputs),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    layers: Vec<Layer>,
    activation: Activation,
}

/// Intermediate values kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: DMatrix<f64>,
    // inputs to each layer; acts[0] is the batch itself
    acts: Vec<DMatrix<f64>>,
    pre: Vec<DMatrix<f64>>,
}

impl Forward {
    /// The feature tap `z`: the last hidden layer's activations, or the output
    /// for a network without hidden layers.
    pub fn features(&self) -> &DMatrix<f64> {
        if self.acts.len() > 1 {
            self.acts.last().expect("non-empty")
        } else {
            &self.output
        }
    }
}

impl MlpModel {
    /// `sizes` lists the input width, hidden widths and output width. Weights
    /// and biases are drawn uniformly from `±1/√fan_in`.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(sizes, activation)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let bound = 1.0 / (layer.inputs() as f64).sqrt();
            layer.weight = DMatrix::from_fn(layer.outputs(), layer.inputs(), |_, _| rng.random_range(-bound..bound));
            layer.bias = DVector::from_fn(layer.outputs(), |_, _| rng.random_range(-bound..bound));
        }
        Ok(model)
    }

    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::InvalidArgument(
                "a network needs at least input and output sizes".into(),
            ));
        }
        if let Some(i) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::InvalidArgument(format!("layer size {i} is zero")));
        }
        let layers = sizes.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidArgument("a network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.outputs() {
                return Err(Error::dim(format!("layer{i}.bias"), l.outputs(), l.bias.len()));
            }
            if i > 0 && l.inputs() != layers[i - 1].outputs() {
                return Err(Error::dim(
                    format!("layer{i}.weight inputs"),
                    layers[i - 1].outputs(),
                    l.inputs(),
                ));
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("layer{i}")));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs())
            .chain(self.layers.iter().map(Layer::outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    /// Width of the feature tap (see [`Forward::features`]).
    pub fn feature_dim(&self) -> usize {
        let n = self.layers.len();
        if n > 1 {
            self.layers[n - 2].outputs()
        } else {
            self.output_dim()
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<Forward> {
        if x.ncols() != self.input_dim() {
            return Err(Error::dim("network input width", self.input_dim(), x.ncols()));
        }
        let last = self.layers.len() - 1;
        let mut acts = vec![x.clone()];
        let mut pre = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut h = acts[l].clone() * layer.weight.transpose();
            for mut row in h.row_iter_mut() {
                row += layer.bias.transpose();
            }
            if l < last {
                acts.push(h.map(|v| self.activation.apply(v)));
            }
            pre.push(h);
        }
        let output = pre.last().expect("non-empty").clone();
        Ok(Forward { output, acts, pre })
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x)?.output)
    }

    /// Parameter gradients given the loss gradient with respect to the output
    /// and, optionally, with respect to the feature tap.
    pub fn backward(&self, fwd: &Forward, d_out: &DMatrix<f64>, d_feat: Option<&DMatrix<f64>>) -> Result<Vec<Layer>> {
        if d_out.shape() != fwd.output.shape() {
            return Err(Error::dim("upstream gradient", fwd.output.len(), d_out.len()));
        }
        if let Some(df) = d_feat {
            if df.shape() != fwd.features().shape() {
                return Err(Error::dim("feature gradient", fwd.features().len(), df.len()));
            }
        }
        let n = self.layers.len();
        let mut delta = d_out.clone();
        if n == 1 {
            if let Some(df) = d_feat {
                delta += df;
            }
        }
        let mut grads = vec![Layer::zeros(0, 0); n];
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            grads[l] = Layer {
                weight: delta.transpose() * &fwd.acts[l],
                bias: DVector::from_fn(layer.outputs(), |j, _| delta.column(j).sum()),
            };
            if l > 0 {
                let mut d_act = &delta * &layer.weight;
                if l == n - 1 {
                    if let Some(df) = d_feat {
                        d_act += df;
                    }
                }
                delta = d_act.zip_map(&fwd.pre[l - 1], |g, z| g * self.activation.slope(z));
            }
        }
        Ok(grads)
    }

    /// All parameters flattened layer by layer (weight column-major, then bias).
    pub fn parameters(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        DVector::from_vec(out)
    }

    pub fn set_parameters(&mut self, params: &DVector<f64>) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim("parameter vector", self.param_count(), params.len()));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weight.len();
            l.weight.as_mut_slice().copy_from_slice(&params.as_slice()[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&params.as_slice()[at..at + b]);
            at += b;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("mlp {}\nactivation {}\n", self.layers.len(), self.activation.name());
        let join = |it: &mut dyn Iterator<Item = f64>| it.map(|v| v.to_string()).collect::<Vec<_>>().join(" ");
        for (i, l) in self.layers.iter().enumerate() {
            s.push_str(&format!("layer {i} {} {}\nweight\n", l.inputs(), l.outputs()));
            for r in l.weight.row_iter() {
                s.push_str(&join(&mut r.iter().copied()));
                s.push('\n');
            }
            s.push_str("bias\n");
            s.push_str(&join(&mut l.bias.iter().copied()));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(origin, 0, format!("unexpected end of file, expected {what}")))
        };
        let keyword = |(ln, line): (usize, &str), key: &str| -> Result<Vec<String>> {
            let mut parts = line.split_whitespace();
            if parts.next() != Some(key) {
                return Err(Error::parse(origin, ln, format!("expected `{key}`")));
            }
            Ok(parts.map(str::to_string).collect())
        };
        let count_of = |ln: usize, s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::parse(origin, ln, format!("not a count: {s:?}")))
        };
        let numbers = |(ln, line): (usize, &str), n: usize| -> Result<Vec<f64>> {
            let v = line
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::parse(origin, ln, format!("not a number: {t:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if v.len() != n {
                return Err(Error::parse(
                    origin,
                    ln,
                    format!("expected {n} numbers, found {}", v.len()),
                ));
            }
            Ok(v)
        };

        let head = next("header")?;
        let args = keyword(head, "mlp")?;
        let n = count_of(head.0, args.first().map(String::as_str).unwrap_or(""))?;
        let act_line = next("activation")?;
        let act = match keyword(act_line, "activation")?.first().map(String::as_str) {
            Some("relu") => Activation::Relu,
            Some("identity") => Activation::Identity,
            other => {
                return Err(Error::parse(
                    origin,
                    act_line.0,
                    format!("unknown activation {other:?}"),
                ))
            }
        };
        let mut layers = Vec::with_capacity(n);
        for i in 0..n {
            let hl = next("layer")?;
            let a = keyword(hl, "layer")?;
            if a.len() != 3 || count_of(hl.0, &a[0])? != i {
                return Err(Error::parse(
                    origin,
                    hl.0,
                    format!("expected `layer {i} <inputs> <outputs>`"),
                ));
            }
            let (inp, out) = (count_of(hl.0, &a[1])?, count_of(hl.0, &a[2])?);
            keyword(next("weight")?, "weight")?;
            let mut w = DMatrix::zeros(out, inp);
            for r in 0..out {
                let row = numbers(next("weight row")?, inp)?;
                w.row_mut(r).copy_from_slice(&row);
            }
            keyword(next("bias")?, "bias")?;
            let b = DVector::from_vec(numbers(next("bias values")?, out)?);
            layers.push(Layer { weight: w, bias: b });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(Error::parse(origin, ln, "trailing content after last layer"));
        }
        Self::from_layers(layers, act)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_string(path, &self.to_text())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&read_to_string(path)?, &path.display().to_string())
    }
}
