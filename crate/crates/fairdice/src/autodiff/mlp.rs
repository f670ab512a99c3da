//! Multi-layer perceptron with hand-written forward, reverse and
//! forward-over-reverse passes.
//!
//! A network with widths `[d_0, …, d_L]` applies affine layers
//! `a_l = h_l W_lᵀ + b_l`, with the configured nonlinearity between layers and
//! raw outputs at the end.  The forward-over-reverse pass differentiates the
//! per-sample *input gradient* of a scalar-head network with respect to the
//! parameters, which is the second-order quantity the critic's input-gradient
//! penalty needs.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Mat, Tensor};
use crate::error::{FairdiceError, Result};

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Tanh,
}

/// Output head interpretation: raw scalar(s) or categorical logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    Categorical,
    Scalar,
}

/// Architecture description of an [`Mlp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Layer widths, input first and output last (at least two entries).
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub head: Head,
    /// Gain of the orthogonal weight initialisation.
    pub gain: f64,
}

impl MlpSpec {
    /// Spec with the conventional √2 orthogonal gain.
    pub fn new(widths: Vec<usize>, activation: Activation, head: Head) -> Self {
        MlpSpec {
            widths,
            activation,
            head,
            gain: std::f64::consts::SQRT_2,
        }
    }

    /// Validates widths and gain.
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 {
            return Err(FairdiceError::config(format!(
                "MLP needs at least input and output widths, got {:?}",
                self.widths
            )));
        }
        if self.widths.iter().any(|&w| w == 0) {
            return Err(FairdiceError::config(format!(
                "MLP widths must be positive, got {:?}",
                self.widths
            )));
        }
        if self.head == Head::Scalar && *self.widths.last().expect(">= 2 widths") != 1 {
            return Err(FairdiceError::config(
                "scalar head requires output width 1".to_string(),
            ));
        }
        if !self.gain.is_finite() || self.gain <= 0.0 {
            return Err(FairdiceError::config(format!(
                "orthogonal gain must be positive, got {}",
                self.gain
            )));
        }
        Ok(())
    }

    /// Input dimension.
    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    /// Output dimension.
    pub fn output_dim(&self) -> usize {
        *self.widths.last().expect(">= 2 widths")
    }

    /// Total parameter count (weights plus biases).
    pub fn num_params(&self) -> usize {
        self.widths
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }
}

/// Orthogonal `rows × cols` matrix (row-major), scaled by `gain`.
///
/// Gaussian draw followed by twice-reorthogonalised Gram–Schmidt on the
/// longer axis, so the smaller of Q Qᵀ / Qᵀ Q equals gain² I.
pub fn orthogonal_init<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> Vec<f64> {
    let (n, m, transpose) = if rows >= cols {
        (rows, cols, false)
    } else {
        (cols, rows, true)
    };
    // Column-major n×m working set: m vectors of length n.
    let mut q = vec![0.0; n * m];
    for v in q.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    for j in 0..m {
        // Project out earlier columns; one repeat pass tightens orthogonality.
        for _ in 0..2 {
            for i in 0..j {
                let dot: f64 = (0..n).map(|r| q[r * m + i] * q[r * m + j]).sum();
                for r in 0..n {
                    q[r * m + j] -= dot * q[r * m + i];
                }
            }
        }
        let norm: f64 = (0..n).map(|r| q[r * m + j] * q[r * m + j]).sum::<f64>().sqrt();
        // A Gaussian draw is almost surely full rank; guard regardless.
        let scale = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        for r in 0..n {
            q[r * m + j] *= scale;
        }
    }
    // Scale after orthonormalising so the projections above stay exact.
    for v in q.iter_mut() {
        *v *= gain;
    }
    if transpose {
        // Want rows × cols with rows < cols: take the m×n transpose.
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[r * cols + c] = q[c * m + r];
            }
        }
        out
    } else {
        q
    }
}

/// Activations and pre-activations cached by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    batch: usize,
    /// h_0 = network input, B × d_0.
    input: Mat,
    /// σ(a_l) for each hidden layer, B × d_{l+1}.
    hidden: Vec<Mat>,
    /// Raw outputs of the final layer, B × d_L.
    output: Mat,
}

impl ForwardCache {
    /// Batch size of the cached pass.
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Raw network outputs, row-major `[batch × output_dim]`.
    pub fn outputs(&self) -> &[f64] {
        &self.output.data
    }
}

/// Fully connected network with per-layer weight and bias tensors.
#[derive(Debug, Clone)]
pub struct Mlp {
    spec: MlpSpec,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

impl Mlp {
    /// Builds the network with orthogonal weights and zero biases.
    pub fn new<R: Rng + ?Sized>(spec: MlpSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in spec.widths.windows(2) {
            let (d_in, d_out) = (pair[0], pair[1]);
            let w = orthogonal_init(d_out, d_in, spec.gain, rng);
            weights.push(Tensor::new(vec![d_out, d_in], w)?);
            biases.push(Tensor::zeros(vec![d_out]));
        }
        Ok(Mlp {
            spec,
            weights,
            biases,
        })
    }

    /// Architecture of the network.
    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    /// Number of affine layers.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    /// Weight and bias tensors interleaved per layer (W_0, b_0, W_1, …).
    pub fn param_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::new();
        for l in 0..self.weights.len() {
            sizes.push(self.weights[l].numel());
            sizes.push(self.biases[l].numel());
        }
        sizes
    }

    /// Mutable access to all parameter tensors, interleaved per layer.
    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w);
            out.push(b);
        }
        out
    }

    /// Clears the gradient buffers of every parameter.
    pub fn zero_grad(&mut self) {
        for t in self.weights.iter_mut().chain(self.biases.iter_mut()) {
            t.zero_grad();
        }
    }

    /// All parameters flattened in layer order (weights then bias per layer).
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.spec.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.values());
            out.extend_from_slice(b.values());
        }
        out
    }

    /// Restores parameters from [`Mlp::flat_params`] layout.
    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.spec.num_params() {
            return Err(FairdiceError::shape(format!(
                "expected {} parameters, got {}",
                self.spec.num_params(),
                flat.len()
            )));
        }
        let mut offset = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.numel();
            w.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
            let n = b.numel();
            b.values_mut().copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }

    fn apply_activation(&self, a: &mut Mat) {
        match self.spec.activation {
            Activation::ReLU => {
                for v in a.data.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            Activation::Tanh => {
                for v in a.data.iter_mut() {
                    *v = v.tanh();
                }
            }
        }
    }

    /// σ′ as a function of the *activated* value h = σ(a).
    #[inline]
    fn act_prime(&self, h: f64) -> f64 {
        match self.spec.activation {
            // h = 0 at a ≤ 0, where the chosen subgradient is 0.
            Activation::ReLU => {
                if h > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }

    /// `x · Wᵀ + b` for one layer.
    fn affine(&self, l: usize, x: &Mat) -> Mat {
        let w = &self.weights[l];
        let b = self.biases[l].values();
        let d_out = w.shape()[0];
        let d_in = w.shape()[1];
        debug_assert_eq!(x.cols, d_in);
        let mut out = Mat::zeros(x.rows, d_out);
        for r in 0..x.rows {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for o in 0..d_out {
                let wr = &w.values()[o * d_in..(o + 1) * d_in];
                let mut acc = b[o];
                for i in 0..d_in {
                    acc += xr[i] * wr[i];
                }
                or[o] = acc;
            }
        }
        out
    }

    /// Forward pass over a row-major `[batch × input_dim]` batch.
    ///
    /// Errors if any layer produces a non-finite value, carrying the layer
    /// index of the first offender.
    pub fn forward(&self, x: &[f64], batch: usize) -> Result<ForwardCache> {
        let d_in = self.spec.input_dim();
        if x.len() != batch * d_in || batch == 0 {
            return Err(FairdiceError::shape(format!(
                "input of length {} is not batch {batch} x dim {d_in}",
                x.len()
            )));
        }
        let input = Mat::from_vec(batch, d_in, x.to_vec());
        let num_layers = self.num_layers();
        let mut hidden = Vec::with_capacity(num_layers.saturating_sub(1));
        let mut current = &input;
        for l in 0..num_layers - 1 {
            let mut a = self.affine(l, current);
            self.apply_activation(&mut a);
            if a.data.iter().any(|v| !v.is_finite()) {
                return Err(FairdiceError::NonFiniteLayer { layer: l });
            }
            hidden.push(a);
            current = hidden.last().expect("just pushed");
        }
        let output = self.affine(num_layers - 1, current);
        if output.data.iter().any(|v| !v.is_finite()) {
            return Err(FairdiceError::NonFiniteLayer {
                layer: num_layers - 1,
            });
        }
        Ok(ForwardCache {
            batch,
            input,
            hidden,
            output,
        })
    }

    /// Reverse pass: accumulates parameter gradients for the loss whose
    /// cotangent on the raw outputs is `d_out` (row-major `[batch × d_L]`).
    pub fn backward(&mut self, cache: &ForwardCache, d_out: &[f64]) -> Result<()> {
        let num_layers = self.num_layers();
        let out_dim = self.spec.output_dim();
        if d_out.len() != cache.batch * out_dim {
            return Err(FairdiceError::shape(format!(
                "output cotangent length {} != batch {} x out {}",
                d_out.len(),
                cache.batch,
                out_dim
            )));
        }
        let mut delta = Mat::from_vec(cache.batch, out_dim, d_out.to_vec());
        for l in (0..num_layers).rev() {
            let layer_input: &Mat = if l == 0 {
                &cache.input
            } else {
                &cache.hidden[l - 1]
            };
            let d_in = self.weights[l].shape()[1];
            let d_out_l = self.weights[l].shape()[0];
            // Parameter gradients.
            {
                let wg = self.weights[l].grad_mut();
                for b in 0..cache.batch {
                    let xr = layer_input.row(b);
                    let dr = delta.row(b);
                    for o in 0..d_out_l {
                        let g = dr[o];
                        if g != 0.0 {
                            let wrow = &mut wg[o * d_in..(o + 1) * d_in];
                            for i in 0..d_in {
                                wrow[i] += g * xr[i];
                            }
                        }
                    }
                }
            }
            {
                let bg = self.biases[l].grad_mut();
                for b in 0..cache.batch {
                    let dr = delta.row(b);
                    for o in 0..d_out_l {
                        bg[o] += dr[o];
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate to the previous hidden layer: (δ W) ⊙ σ′(a_{l−1}).
            let w = self.weights[l].values();
            let mut prev = Mat::zeros(cache.batch, d_in);
            for b in 0..cache.batch {
                let dr = delta.row(b);
                let pr = prev.row_mut(b);
                for o in 0..d_out_l {
                    let g = dr[o];
                    if g != 0.0 {
                        let wrow = &w[o * d_in..(o + 1) * d_in];
                        for i in 0..d_in {
                            pr[i] += g * wrow[i];
                        }
                    }
                }
                let hr = cache.hidden[l - 1].row(b);
                for i in 0..d_in {
                    pr[i] *= self.act_prime(hr[i]);
                }
            }
            delta = prev;
        }
        Ok(())
    }

    /// Forward pass plus reverse pass in one call.
    ///
    /// `head` maps the raw outputs to a loss value and its cotangents; the
    /// loss is returned after gradients are accumulated.  A non-finite loss
    /// is reported as an error carrying the (final) layer index.
    pub fn forward_backward<F>(&mut self, x: &[f64], batch: usize, head: F) -> Result<f64>
    where
        F: FnOnce(&[f64]) -> Result<(f64, Vec<f64>)>,
    {
        let cache = self.forward(x, batch)?;
        let (loss, d_out) = head(cache.outputs())?;
        if !loss.is_finite() {
            return Err(FairdiceError::NonFiniteLayer {
                layer: self.num_layers() - 1,
            });
        }
        self.backward(&cache, &d_out)?;
        Ok(loss)
    }

    /// Per-sample gradient of the scalar output w.r.t. the input,
    /// `[batch × input_dim]`.  Scalar-head networks only.
    pub fn input_gradients(&self, cache: &ForwardCache) -> Result<Vec<f64>> {
        if self.spec.head != Head::Scalar || self.spec.output_dim() != 1 {
            return Err(FairdiceError::config(
                "input_gradients requires a scalar head".to_string(),
            ));
        }
        let num_layers = self.num_layers();
        let batch = cache.batch;
        // Start from d(out)/d(h_{L-1}) = W_{L-1}, identical for every sample.
        let w_last = self.weights[num_layers - 1].values();
        let mut d_h = Mat::zeros(batch, w_last.len());
        for b in 0..batch {
            d_h.row_mut(b).copy_from_slice(w_last);
        }
        for l in (0..num_layers - 1).rev() {
            let d_in = self.weights[l].shape()[1];
            let d_out_l = self.weights[l].shape()[0];
            let w = self.weights[l].values();
            let mut prev = Mat::zeros(batch, d_in);
            for b in 0..batch {
                let hr = cache.hidden[l].row(b);
                let dr = d_h.row(b);
                let pr = prev.row_mut(b);
                for o in 0..d_out_l {
                    let g = dr[o] * self.act_prime(hr[o]);
                    if g != 0.0 {
                        let wrow = &w[o * d_in..(o + 1) * d_in];
                        for i in 0..d_in {
                            pr[i] += g * wrow[i];
                        }
                    }
                }
            }
            d_h = prev;
        }
        Ok(d_h.data)
    }

    /// Accumulates into the parameter gradients the derivative of
    /// `s = Σ_b c_bᵀ g_b(θ)` where `g_b` is the per-sample input gradient of
    /// the scalar output and `c` is treated as a constant cotangent.
    ///
    /// This is a forward-over-reverse sweep: a tangent pass propagates the
    /// directional derivative `t_{l+1} = σ′(a_l) ⊙ (t_l W_lᵀ)` seeded with
    /// `t_0 = c`, then a reverse pass differentiates it w.r.t. every weight
    /// and bias.  The bias gradient and the σ″ pathway only appear through
    /// the primal pre-activations, so ReLU contributes nothing there (its
    /// second derivative vanishes almost everywhere) while tanh uses
    /// σ″ = −2 h σ′.
    pub fn input_gradient_param_backward(&mut self, cache: &ForwardCache, c: &[f64]) -> Result<()> {
        if self.spec.head != Head::Scalar || self.spec.output_dim() != 1 {
            return Err(FairdiceError::config(
                "input_gradient_param_backward requires a scalar head".to_string(),
            ));
        }
        let batch = cache.batch;
        let d0 = self.spec.input_dim();
        if c.len() != batch * d0 {
            return Err(FairdiceError::shape(format!(
                "cotangent length {} != batch {batch} x input {d0}",
                c.len()
            )));
        }
        let num_layers = self.num_layers();

        // Tangent pass: t_h[0] = c; τ_l = t_h[l] W_lᵀ; t_h[l+1] = σ′(a_l) ⊙ τ_l.
        let mut t_h: Vec<Mat> = Vec::with_capacity(num_layers);
        let mut tau: Vec<Mat> = Vec::with_capacity(num_layers - 1);
        t_h.push(Mat::from_vec(batch, d0, c.to_vec()));
        for l in 0..num_layers - 1 {
            let mut t = self.affine_no_bias(l, &t_h[l]);
            tau.push(t.clone());
            let h = &cache.hidden[l];
            for b in 0..batch {
                let hr = h.row(b);
                let tr = t.row_mut(b);
                for i in 0..tr.len() {
                    tr[i] *= self.act_prime(hr[i]);
                }
            }
            t_h.push(t);
        }

        // Seed: s = Σ_b t_h[L-1] · W_{L-1}ᵀ (scalar output).
        {
            let t_last = &t_h[num_layers - 1];
            let wg = self.weights[num_layers - 1].grad_mut();
            for b in 0..batch {
                let tr = t_last.row(b);
                for i in 0..wg.len() {
                    wg[i] += tr[i];
                }
            }
        }
        let w_last = self.weights[num_layers - 1].values();
        let width_last = w_last.len();
        let mut ct_h = Mat::zeros(batch, width_last);
        for b in 0..batch {
            ct_h.row_mut(b).copy_from_slice(w_last);
        }
        // s never touches the primal h_{L-1} directly.
        let mut ch = Mat::zeros(batch, width_last);

        for l in (0..num_layers - 1).rev() {
            let d_in = self.weights[l].shape()[1];
            let d_out_l = self.weights[l].shape()[0];
            let h = &cache.hidden[l];
            // cτ = σ′(a_l) ⊙ ct_h ;  ca = σ″(a_l) ⊙ τ_l ⊙ ct_h + σ′(a_l) ⊙ ch.
            let mut c_tau = Mat::zeros(batch, d_out_l);
            let mut c_a = Mat::zeros(batch, d_out_l);
            for b in 0..batch {
                let hr = h.row(b);
                let taur = tau[l].row(b);
                let cthr = ct_h.row(b);
                let chr = ch.row(b);
                let ctr = c_tau.row_mut(b);
                let car = c_a.row_mut(b);
                for i in 0..d_out_l {
                    let sp = self.act_prime(hr[i]);
                    ctr[i] = sp * cthr[i];
                    let spp = match self.spec.activation {
                        Activation::ReLU => 0.0,
                        Activation::Tanh => -2.0 * hr[i] * sp,
                    };
                    car[i] = spp * taur[i] * cthr[i] + sp * chr[i];
                }
            }
            // Parameter gradients: dW_l += cτᵀ t_h[l] + caᵀ h_prev; db_l += Σ ca.
            let layer_input: &Mat = if l == 0 { &cache.input } else { &cache.hidden[l - 1] };
            {
                let wg = self.weights[l].grad_mut();
                for b in 0..batch {
                    let tr = t_h[l].row(b);
                    let xr = layer_input.row(b);
                    let ctr = c_tau.row(b);
                    let car = c_a.row(b);
                    for o in 0..d_out_l {
                        let (gt, ga) = (ctr[o], car[o]);
                        if gt != 0.0 || ga != 0.0 {
                            let wrow = &mut wg[o * d_in..(o + 1) * d_in];
                            for i in 0..d_in {
                                wrow[i] += gt * tr[i] + ga * xr[i];
                            }
                        }
                    }
                }
            }
            {
                let bg = self.biases[l].grad_mut();
                for b in 0..batch {
                    let car = c_a.row(b);
                    for o in 0..d_out_l {
                        bg[o] += car[o];
                    }
                }
            }
            if l == 0 {
                break;
            }
            // Propagate both cotangent streams through W_l.
            let w = self.weights[l].values();
            let mut ct_prev = Mat::zeros(batch, d_in);
            let mut ch_prev = Mat::zeros(batch, d_in);
            for b in 0..batch {
                let ctr = c_tau.row(b);
                let car = c_a.row(b);
                let ctp = ct_prev.row_mut(b);
                let chp = ch_prev.row_mut(b);
                for o in 0..d_out_l {
                    let wrow = &w[o * d_in..(o + 1) * d_in];
                    let (gt, ga) = (ctr[o], car[o]);
                    if gt != 0.0 {
                        for i in 0..d_in {
                            ctp[i] += gt * wrow[i];
                        }
                    }
                    if ga != 0.0 {
                        for i in 0..d_in {
                            chp[i] += ga * wrow[i];
                        }
                    }
                }
            }
            ct_h = ct_prev;
            ch = ch_prev;
        }
        Ok(())
    }

    /// `x · Wᵀ` without the bias (tangents are bias-free).
    fn affine_no_bias(&self, l: usize, x: &Mat) -> Mat {
        let w = &self.weights[l];
        let d_out = w.shape()[0];
        let d_in = w.shape()[1];
        let mut out = Mat::zeros(x.rows, d_out);
        for r in 0..x.rows {
            let xr = x.row(r);
            let or = out.row_mut(r);
            for o in 0..d_out {
                let wr = &w.values()[o * d_in..(o + 1) * d_in];
                let mut acc = 0.0;
                for i in 0..d_in {
                    acc += xr[i] * wr[i];
                }
                or[o] = acc;
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// Categorical head helpers
// ---------------------------------------------------------------------------

/// Row-wise log-softmax with the max-subtraction trick.
pub fn log_softmax_rows(logits: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; logits.len()];
    for r in 0..rows {
        let row = &logits[r * cols..(r + 1) * cols];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let log_z = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        for c in 0..cols {
            out[r * cols + c] = row[c] - log_z;
        }
    }
    out
}

/// Picks out log π(a_r | row r) from row-major log-probabilities.
pub fn gather_log_probs(log_probs: &[f64], cols: usize, actions: &[usize]) -> Result<Vec<f64>> {
    let rows = actions.len();
    if log_probs.len() != rows * cols {
        return Err(FairdiceError::shape(format!(
            "log_probs length {} != rows {rows} x cols {cols}",
            log_probs.len()
        )));
    }
    actions
        .iter()
        .enumerate()
        .map(|(r, &a)| {
            if a >= cols {
                Err(FairdiceError::shape(format!(
                    "action {a} out of range for {cols} columns"
                )))
            } else {
                Ok(log_probs[r * cols + a])
            }
        })
        .collect()
}

/// Cotangent on logits given cotangents on the gathered log-probabilities:
/// d logits[r][j] = c_r (1{j = a_r} − softmax_r[j]).
pub fn logits_grad_from_log_prob_grad(
    log_probs: &[f64],
    cols: usize,
    actions: &[usize],
    lp_grad: &[f64],
) -> Result<Vec<f64>> {
    let rows = actions.len();
    if log_probs.len() != rows * cols || lp_grad.len() != rows {
        return Err(FairdiceError::shape(format!(
            "logits grad shapes disagree: log_probs {}, actions {rows}, lp_grad {}",
            log_probs.len(),
            lp_grad.len()
        )));
    }
    let mut out = vec![0.0; log_probs.len()];
    for r in 0..rows {
        let c = lp_grad[r];
        if c == 0.0 {
            continue;
        }
        let row = &log_probs[r * cols..(r + 1) * cols];
        let or = &mut out[r * cols..(r + 1) * cols];
        for j in 0..cols {
            or[j] = -c * row[j].exp();
        }
        or[actions[r]] += c;
    }
    Ok(out)
}

/// Samples an action index from a row of logits via inverse CDF on softmax.
pub fn sample_from_logits<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> usize {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    let mut u: f64 = rand::distr::StandardUniform.sample(rng);
    u *= z;
    let mut acc = 0.0;
    for (i, v) in logits.iter().enumerate() {
        acc += (v - max).exp();
        if u < acc {
            return i;
        }
    }
    logits.len() - 1
}
