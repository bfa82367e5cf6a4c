//! Small dense feed-forward networks with hand-written reverse-mode
//! gradients, Adam/SGD optimizers and a versioned binary checkpoint format.
//!
//! Checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic    4 bytes  "RFNN"
//! version  u32      1
//! n_sizes  u32      number of layer sizes (layers + 1)
//! sizes    n_sizes x u32
//! hidden   u8       0 = relu, 1 = tanh, 2 = linear
//! output   u8       same encoding
//! per layer, in order: weights (out x in, row-major) then biases (out), f64
//! ```

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RFNN";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Row-major dense matrix; a batch of row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn row_vector(v: &[f64]) -> Self {
        Matrix {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::dim(self.rows, other.rows));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Matrix {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// `c = alpha * a * b + beta * c` on strided row-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
    rsc: isize,
) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices whose extents cover the strided views.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            1,
        );
    }
}

/// Parameter values with a gradient accumulator of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    pub shape: (usize, usize),
}

impl ParamTensor {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        ParamTensor {
            values: vec![0.0; rows * cols],
            grads: vec![0.0; rows * cols],
            shape: (rows, cols),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: &mut [f64]) {
        match self {
            Activation::Relu => x.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Tanh => x.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Linear => {}
        }
    }

    /// Multiplies `grad` by the derivative, expressed through the activation output.
    fn backprop(self, out: &[f64], grad: &mut [f64]) {
        match self {
            Activation::Relu => grad
                .iter_mut()
                .zip(out)
                .for_each(|(g, &o)| {
                    if o <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Tanh => grad.iter_mut().zip(out).for_each(|(g, &o)| *g *= 1.0 - o * o),
            Activation::Linear => {}
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
            Activation::Linear => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            2 => Ok(Activation::Linear),
            _ => Err(Error::Checkpoint(format!("unknown activation code {c}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`, row-major.
    pub weight: ParamTensor,
    pub bias: ParamTensor,
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    /// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
    activations: Vec<Matrix>,
}

impl Tape {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("tape holds the input at least")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    pub layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    /// Weights and biases drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut weight = ParamTensor::zeros(fan_out, fan_in);
                let mut bias = ParamTensor::zeros(1, fan_out);
                weight.values.iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
                bias.values.iter_mut().for_each(|v| *v = rng.gen_range(-bound..=bound));
                Dense { weight, bias }
            })
            .collect();
        Mlp {
            sizes: sizes.to_vec(),
            layers,
            hidden,
            output,
        }
    }

    /// All-zero parameters.
    pub fn zeroed(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: ParamTensor::zeros(w[1], w[0]),
                bias: ParamTensor::zeros(1, w[1]),
            })
            .collect();
        Mlp {
            sizes: sizes.to_vec(),
            layers,
            hidden,
            output,
        }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activations(&self) -> (Activation, Activation) {
        (self.hidden, self.output)
    }

    fn activation_of(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn layer_forward(&self, i: usize, x: &Matrix) -> Matrix {
        let layer = &self.layers[i];
        let (out, inp) = layer.weight.shape;
        let mut z = Matrix::zeros(x.rows, out);
        for r in 0..x.rows {
            z.row_mut(r).copy_from_slice(&layer.bias.values);
        }
        gemm(
            x.rows,
            inp,
            out,
            1.0,
            &x.data,
            (inp as isize, 1),
            &layer.weight.values,
            (1, inp as isize),
            1.0,
            &mut z.data,
            out as isize,
        );
        self.activation_of(i).apply(&mut z.data);
        z
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols != self.input_dim() {
            return Err(Error::dim(self.input_dim(), x.cols));
        }
        Ok(())
    }

    /// Forward pass without recording.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = self.layer_forward(0, x);
        for i in 1..self.layers.len() {
            h = self.layer_forward(i, &h);
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.predict(&Matrix::row_vector(x))?.data)
    }

    /// Forward pass recording every activation for [`backward`](Self::backward).
    pub fn forward(&self, x: &Matrix) -> Result<Tape> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for i in 0..self.layers.len() {
            let next = self.layer_forward(i, activations.last().unwrap());
            activations.push(next);
        }
        Ok(Tape { activations })
    }

    /// Accumulates parameter gradients of `sum(grad_output .* output)` and
    /// returns the gradient with respect to the input.
    pub fn backward(&mut self, tape: &Tape, grad_output: &Matrix) -> Result<Matrix> {
        let out = tape.output();
        if grad_output.rows != out.rows || grad_output.cols != out.cols {
            return Err(Error::dim(out.data.len(), grad_output.data.len()));
        }
        let batch = out.rows;
        let mut delta = grad_output.clone();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation_of(i);
            act.backprop(&tape.activations[i + 1].data, &mut delta.data);
            let x = &tape.activations[i];
            let layer = &mut self.layers[i];
            let (out_dim, in_dim) = layer.weight.shape;
            // dW += delta^T x
            gemm(
                out_dim,
                batch,
                in_dim,
                1.0,
                &delta.data,
                (1, out_dim as isize),
                &x.data,
                (in_dim as isize, 1),
                1.0,
                &mut layer.weight.grads,
                in_dim as isize,
            );
            for r in 0..batch {
                for (g, d) in layer.bias.grads.iter_mut().zip(delta.row(r)) {
                    *g += d;
                }
            }
            // dx = delta W
            let mut dx = Matrix::zeros(batch, in_dim);
            gemm(
                batch,
                out_dim,
                in_dim,
                1.0,
                &delta.data,
                (out_dim as isize, 1),
                &layer.weight.values,
                (in_dim as isize, 1),
                0.0,
                &mut dx.data,
                in_dim as isize,
            );
            delta = dx;
        }
        Ok(delta)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            l.weight.zero_grad();
            l.bias.zero_grad();
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.layers.iter().flat_map(|l| [&l.weight, &l.bias])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| [&mut l.weight, &mut l.bias])
    }

    pub fn num_params(&self) -> usize {
        self.params().map(ParamTensor::len).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.values.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.grads.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::dim(self.num_params(), flat.len()));
        }
        let mut off = 0;
        for p in self.params_mut() {
            let n = p.len();
            p.values.copy_from_slice(&flat[off..off + n]);
            off += n;
        }
        Ok(())
    }

    pub fn same_structure(&self, other: &Mlp) -> bool {
        self.sizes == other.sizes && self.hidden == other.hidden && self.output == other.output
    }

    /// `self <- tau * source + (1 - tau) * self`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if !self.same_structure(source) {
            return Err(Error::Domain("soft update between different architectures".into()));
        }
        for (dst, src) in self.params_mut().zip(source.params()) {
            for (d, s) in dst.values.iter_mut().zip(&src.values) {
                *d = tau * s + (1.0 - tau) * *d;
            }
        }
        Ok(())
    }

    pub fn copy_params_from(&mut self, source: &Mlp) -> Result<()> {
        self.soft_update_from(source, 1.0)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.sizes.len() as u32).to_le_bytes())?;
        for &s in &self.sizes {
            w.write_all(&(s as u32).to_le_bytes())?;
        }
        w.write_all(&[self.hidden.code(), self.output.code()])?;
        for p in self.params() {
            for v in &p.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let read_u32 = |r: &mut R| -> Result<u32> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            Ok(u32::from_le_bytes(b))
        };
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n = read_u32(r)? as usize;
        if !(2..=64).contains(&n) {
            return Err(Error::Checkpoint(format!("implausible layer count {n}")));
        }
        let sizes = (0..n).map(|_| read_u32(r).map(|s| s as usize)).collect::<Result<Vec<_>>>()?;
        let mut acts = [0u8; 2];
        r.read_exact(&mut acts)?;
        let mut mlp = Mlp::zeroed(&sizes, Activation::from_code(acts[0])?, Activation::from_code(acts[1])?);
        let mut buf = [0u8; 8];
        for p in mlp.params_mut() {
            for v in p.values.iter_mut() {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
        }
        Ok(mlp)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let mlp = Self::read_from(&mut cur)?;
        if !cur.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", cur.len())));
        }
        Ok(mlp)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Descend,
    Ascend,
}

/// Adam moments for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self::with_betas(net, lr, (0.9, 0.999), 1e-8)
    }

    pub fn with_betas(net: &Mlp, lr: f64, (beta1, beta2): (f64, f64), eps: f64) -> Self {
        Adam {
            lr,
            beta1,
            beta2,
            eps,
            t: 0,
            m: net.params().map(|p| vec![0.0; p.len()]).collect(),
            v: net.params().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update that descends the accumulated gradients.
    pub fn step(&mut self, net: &mut Mlp) {
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for ((p, m), v) in net.params_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.values.len() {
                let g = p.grads[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p.values[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    /// `theta -= lr * grad` (descend) or `theta += lr * grad` (ascend).
    Sgd { lr: f64, direction: Direction },
    Adam(Adam),
}

impl Optimizer {
    pub fn step(&mut self, net: &mut Mlp) {
        match self {
            Optimizer::Sgd { lr, direction } => {
                let s = match direction {
                    Direction::Descend => -*lr,
                    Direction::Ascend => *lr,
                };
                for p in net.params_mut() {
                    for (v, g) in p.values.iter_mut().zip(&p.grads) {
                        *v += s * g;
                    }
                }
            }
            Optimizer::Adam(a) => a.step(net),
        }
    }
}
