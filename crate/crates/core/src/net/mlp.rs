use rand::Rng;

use super::{NetError, Parameters};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Horizontal concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows);
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Matrix::from_vec(self.rows, cols, data)
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix::from_vec(self.rows, cols, data)
    }
}

/// `c = a · b` with explicit strides (row stride, column stride) so that
/// transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: slice lengths cover every element addressed by the strides
    // above; `c` is exclusively borrowed and does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Fully connected network with ReLU hidden layers and a linear output.
/// Layer weights are stored `in × out`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

/// Activations recorded by a batched forward pass: the input, every hidden
/// post-activation, and the output.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    activations: Vec<Matrix>,
}

impl ForwardPass {
    pub fn output(&self) -> &Matrix {
        self.activations.last().expect("forward pass has an output")
    }
}

/// Gradients with the same layout as [`Mlp`] parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            weights: net.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: net.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &MlpGrads) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl Parameters for MlpGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}

impl Mlp {
    /// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))` for both
    /// weights and biases.
    pub fn new<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            weights.push(
                (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-bound..bound))
                    .collect(),
            );
            biases.push((0..fan_out).map(|_| rng.random_range(-bound..bound)).collect());
        }
        Self {
            dims: dims.to_vec(),
            weights,
            biases,
        }
    }

    pub fn zeros(dims: &[usize]) -> Self {
        assert!(dims.len() >= 2);
        Self {
            dims: dims.to_vec(),
            weights: dims.windows(2).map(|p| vec![0.0; p[0] * p[1]]).collect(),
            biases: dims.windows(2).map(|p| vec![0.0; p[1]]).collect(),
        }
    }

    /// Rebuilds a network from raw layer tensors.
    pub fn from_parts(
        dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, NetError> {
        if dims.len() < 2 || weights.len() != dims.len() - 1 || biases.len() != dims.len() - 1 {
            return Err(NetError::Shape(format!(
                "{} layer dims need {} weight and bias tensors",
                dims.len(),
                dims.len().saturating_sub(1)
            )));
        }
        for (l, pair) in dims.windows(2).enumerate() {
            if weights[l].len() != pair[0] * pair[1] || biases[l].len() != pair[1] {
                return Err(NetError::Shape(format!(
                    "layer {l} expects {}x{} weights",
                    pair[0], pair[1]
                )));
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite("parameter".into()));
        }
        Ok(Self {
            dims,
            weights,
            biases,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn biases(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    pub fn weights_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.weights[layer]
    }

    pub fn biases_mut(&mut self, layer: usize) -> &mut [f64] {
        &mut self.biases[layer]
    }

    /// Single-vector forward pass.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, NetError> {
        if x.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let pass = self.forward_batch(&Matrix::from_vec(1, x.len(), x.to_vec()));
        Ok(pass.output().data.clone())
    }

    /// Batched forward pass; rows of `x` are samples. Panics on a column
    /// count mismatch since batch shapes are fixed by the caller.
    pub fn forward_batch(&self, x: &Matrix) -> ForwardPass {
        assert_eq!(x.cols, self.input_dim(), "input dimension mismatch");
        let n = x.rows;
        let last = self.num_layers() - 1;
        let mut activations = Vec::with_capacity(self.num_layers() + 1);
        activations.push(x.clone());
        for l in 0..self.num_layers() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let input = activations.last().unwrap();
            let mut out = Matrix::zeros(n, dout);
            gemm(
                n,
                din,
                dout,
                &input.data,
                din,
                1,
                &self.weights[l],
                dout,
                1,
                &mut out.data,
            );
            let b = &self.biases[l];
            for r in 0..n {
                let row = out.row_mut(r);
                for (v, bj) in row.iter_mut().zip(b) {
                    *v += bj;
                    if l != last && *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(out);
        }
        ForwardPass { activations }
    }

    /// Backpropagates `dy` (gradient of a scalar loss w.r.t. the outputs).
    /// Returns parameter gradients when `param_grads` is set, and always the
    /// gradient w.r.t. the input.
    pub fn backward(
        &self,
        pass: &ForwardPass,
        dy: &Matrix,
        param_grads: bool,
    ) -> (Option<MlpGrads>, Matrix) {
        let n = dy.rows;
        assert_eq!(dy.cols, self.output_dim(), "upstream gradient shape");
        let mut grads = param_grads.then(|| MlpGrads::zeros_like(self));
        let mut delta = dy.clone();
        for l in (0..self.num_layers()).rev() {
            let (din, dout) = (self.dims[l], self.dims[l + 1]);
            let input = &pass.activations[l];
            if let Some(g) = grads.as_mut() {
                gemm(
                    din,
                    n,
                    dout,
                    &input.data,
                    1,
                    din,
                    &delta.data,
                    dout,
                    1,
                    &mut g.weights[l],
                );
                let gb = &mut g.biases[l];
                for r in 0..n {
                    for (acc, d) in gb.iter_mut().zip(delta.row(r)) {
                        *acc += d;
                    }
                }
            }
            let mut dx = Matrix::zeros(n, din);
            gemm(
                n,
                dout,
                din,
                &delta.data,
                dout,
                1,
                &self.weights[l],
                1,
                dout,
                &mut dx.data,
            );
            if l > 0 {
                // ReLU gate: the layer input is the previous post-activation.
                for (d, a) in dx.data.iter_mut().zip(&input.data) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            delta = dx;
        }
        (grads, delta)
    }

    /// `self ← tau·other + (1 − tau)·self`, element-wise. Written as
    /// `x + tau(y − x)` so that equal tensors stay bit-identical.
    pub fn blend_from(&mut self, other: &Mlp, tau: f64) {
        assert_eq!(self.dims, other.dims, "blend between different architectures");
        if tau == 1.0 {
            self.clone_from(other);
            return;
        }
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += tau * (y - *x);
            }
        }
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
            .collect()
    }
}
