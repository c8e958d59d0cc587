//! The outlier-gated network `p = m(o * h(f(x)))` with hand-written backprop.
//!
//! `f` is a linear+ReLU adapter over the precomputed embedding, `h` a
//! linear+ReLU head and `m` a single logistic unit. The outlier score `o`
//! multiplies the head output, so every gradient flowing back into `h` and
//! `f` passes through the scaling node and is multiplied by `o`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::{focal_loss, focal_loss_grad_logit, FocalParams};
use super::ClassifierError;

/// Dense layer `z = W x + b`, weights stored row-major as `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Layer {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Glorot-uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Layer {
            in_dim,
            out_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, xi)| w * xi).sum::<f64>() + b)
            .collect()
    }

    /// Accumulates `dW += dz x^T`, `db += dz` and returns `W^T dz`.
    fn backprop(&self, x: &[f64], dz: &[f64], grad: &mut Layer) -> Vec<f64> {
        let mut dx = vec![0.0; self.in_dim];
        for (r, &g) in dz.iter().enumerate() {
            grad.bias[r] += g;
            let row = r * self.in_dim;
            for c in 0..self.in_dim {
                grad.weights[row + c] += g * x[c];
                dx[c] += self.weights[row + c] * g;
            }
        }
        dx
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

/// Where the outlier score enters the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Injection {
    /// Scores multiply the head features (used at training and inference).
    #[default]
    Features,
    /// Scores only weight the per-lesion loss; the network never sees them.
    Loss,
}

/// Parameters of the adapter `f`, head `h` and classifier `m`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub adapter: Layer,
    pub head: Layer,
    pub classifier: Layer,
}

impl ModelParams {
    pub fn init<R: Rng + ?Sized>(input_dim: usize, d_f: usize, d_h: usize, rng: &mut R) -> Self {
        ModelParams {
            adapter: Layer::glorot(input_dim, d_f, rng),
            head: Layer::glorot(d_f, d_h, rng),
            classifier: Layer::glorot(d_h, 1, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            adapter: Layer::zeros(self.adapter.in_dim, self.adapter.out_dim),
            head: Layer::zeros(self.head.in_dim, self.head.out_dim),
            classifier: Layer::zeros(self.classifier.in_dim, self.classifier.out_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.adapter.in_dim
    }

    /// Checks that layer shapes chain `D -> d_f -> d_h -> 1` and all
    /// parameters are finite.
    pub fn validate(&self) -> Result<(), ClassifierError> {
        let layers = [&self.adapter, &self.head, &self.classifier];
        for l in layers {
            if l.weights.len() != l.in_dim * l.out_dim || l.bias.len() != l.out_dim {
                return Err(ClassifierError::Shape("layer buffer sizes".into()));
            }
            if !l.is_finite() {
                return Err(ClassifierError::NonFinite);
            }
        }
        if self.adapter.out_dim != self.head.in_dim
            || self.head.out_dim != self.classifier.in_dim
            || self.classifier.out_dim != 1
        {
            return Err(ClassifierError::Shape("layers do not chain".into()));
        }
        Ok(())
    }

    /// Parameter buffers in a fixed order: adapter W, b, head W, b, classifier W, b.
    pub fn slices(&self) -> [&[f64]; 6] {
        [
            &self.adapter.weights,
            &self.adapter.bias,
            &self.head.weights,
            &self.head.bias,
            &self.classifier.weights,
            &self.classifier.bias,
        ]
    }

    pub fn slices_mut(&mut self) -> [&mut [f64]; 6] {
        [
            &mut self.adapter.weights,
            &mut self.adapter.bias,
            &mut self.head.weights,
            &mut self.head.bias,
            &mut self.classifier.weights,
            &mut self.classifier.bias,
        ]
    }

    pub fn scale(&mut self, factor: f64) {
        for s in self.slices_mut() {
            s.iter_mut().for_each(|v| *v *= factor);
        }
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub x_f: Vec<f64>,
    pub z_f: Vec<f64>,
    pub x_h: Vec<f64>,
    pub z_h: Vec<f64>,
    pub h_out: Vec<f64>,
    /// Input of `m`: `o * h_out` under feature injection, `h_out` otherwise.
    pub x_m: Vec<f64>,
    pub logit: f64,
    pub p: f64,
    pub o: f64,
    pub injection: Injection,
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&v| v.max(0.0)).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub fn forward(params: &ModelParams, x: &[f64], o: f64) -> Result<ForwardTrace, ClassifierError> {
    forward_with(params, x, o, Injection::Features)
}

pub fn forward_with(
    params: &ModelParams,
    x: &[f64],
    o: f64,
    injection: Injection,
) -> Result<ForwardTrace, ClassifierError> {
    if x.len() != params.input_dim() {
        return Err(ClassifierError::DimensionMismatch {
            expected: params.input_dim(),
            found: x.len(),
        });
    }
    let z_f = params.adapter.affine(x);
    let x_h = relu(&z_f);
    let z_h = params.head.affine(&x_h);
    let h_out = relu(&z_h);
    let x_m = match injection {
        Injection::Features => h_out.iter().map(|v| o * v).collect(),
        Injection::Loss => h_out.clone(),
    };
    let logit = params.classifier.affine(&x_m)[0];
    Ok(ForwardTrace {
        x_f: x.to_vec(),
        z_f,
        x_h,
        z_h,
        h_out,
        x_m,
        logit,
        p: sigmoid(logit),
        o,
        injection,
    })
}

/// Loss of a traced prediction; under loss injection the focal term is
/// weighted by `o`.
pub fn trace_loss(trace: &ForwardTrace, y: bool, focal: FocalParams) -> f64 {
    let l = focal_loss(y, trace.p, focal);
    match trace.injection {
        Injection::Features => l,
        Injection::Loss => trace.o * l,
    }
}

/// Parameter gradients together with the gradients at both sides of the
/// scaling node.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: ModelParams,
    pub x_m: Vec<f64>,
    pub h_out: Vec<f64>,
}

pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    y: bool,
    focal: FocalParams,
) -> Result<Gradients, ClassifierError> {
    let mut acc = params.zeros_like();
    let (x_m, h_out) = accumulate_gradients(params, trace, y, focal, &mut acc)?;
    Ok(Gradients {
        params: acc,
        x_m,
        h_out,
    })
}

/// Adds this trace's parameter gradients into `acc`; returns the gradients
/// at `x_m` and at `h_out`.
pub fn accumulate_gradients(
    params: &ModelParams,
    trace: &ForwardTrace,
    y: bool,
    focal: FocalParams,
    acc: &mut ModelParams,
) -> Result<(Vec<f64>, Vec<f64>), ClassifierError> {
    if trace.x_f.len() != params.adapter.in_dim
        || trace.x_h.len() != params.head.in_dim
        || trace.x_m.len() != params.classifier.in_dim
    {
        return Err(ClassifierError::Shape("trace does not match params".into()));
    }
    let mut d_logit = focal_loss_grad_logit(y, trace.p, focal);
    if trace.injection == Injection::Loss {
        d_logit *= trace.o;
    }

    let grad_x_m = params
        .classifier
        .backprop(&trace.x_m, &[d_logit], &mut acc.classifier);
    // the scaling node: d h_out = o * d x_m
    let grad_h_out: Vec<f64> = match trace.injection {
        Injection::Features => grad_x_m.iter().map(|g| trace.o * g).collect(),
        Injection::Loss => grad_x_m.clone(),
    };
    let dz_h: Vec<f64> = grad_h_out
        .iter()
        .zip(&trace.z_h)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    let grad_x_h = params.head.backprop(&trace.x_h, &dz_h, &mut acc.head);
    let dz_f: Vec<f64> = grad_x_h
        .iter()
        .zip(&trace.z_f)
        .map(|(&g, &z)| if z > 0.0 { g } else { 0.0 })
        .collect();
    params.adapter.backprop(&trace.x_f, &dz_f, &mut acc.adapter);
    Ok((grad_x_m, grad_h_out))
}
