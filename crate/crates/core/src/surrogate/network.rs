//! Fully connected `3 → 200 → 64 → 16 → 1` network with ReLU hidden layers
//! and a linear output, predicting `dP/dt` from `(P, u, du/dt)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Layer widths, input first.
pub const ARCHITECTURE: [usize; 5] = [3, 200, 64, 16, 1];
pub const PARAMETER_COUNT: usize = 14_721;

/// Affine layer; `weights` is `outputs × inputs`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.inputs + inp]
    }

    fn is_consistent(&self) -> bool {
        self.weights.len() == self.inputs * self.outputs && self.bias.len() == self.outputs
    }
}

/// Trainable parameters. Gradients and optimizer moments use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    layers: Vec<Dense>,
}

pub type Gradients = NetworkParams;

impl NetworkParams {
    /// Validates the layer stack against [`ARCHITECTURE`].
    pub fn from_layers(layers: Vec<Dense>) -> Result<Self> {
        if layers.len() != ARCHITECTURE.len() - 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {} layers, found {}",
                ARCHITECTURE.len() - 1,
                layers.len()
            )));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.inputs != ARCHITECTURE[i] || layer.outputs != ARCHITECTURE[i + 1] {
                return Err(Error::ShapeMismatch(format!(
                    "layer {i} is {}x{}, expected {}x{}",
                    layer.outputs,
                    layer.inputs,
                    ARCHITECTURE[i + 1],
                    ARCHITECTURE[i]
                )));
            }
            if !layer.is_consistent() {
                return Err(Error::ShapeMismatch(format!("layer {i} storage does not match its shape")));
            }
        }
        let params = Self { layers };
        if !params.slices().all(|s| s.iter().all(|v| v.is_finite())) {
            return Err(Error::ShapeMismatch("non-finite parameter".into()));
        }
        debug_assert_eq!(params.parameter_count(), PARAMETER_COUNT);
        Ok(params)
    }

    pub fn zeros() -> Self {
        let layers = ARCHITECTURE
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        Self { layers }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs)
    }

    /// Parameter blocks in a fixed order: per layer, weights then bias.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    /// Parameter at a flat index in [`slices`](Self::slices) order.
    pub fn get_flat(&self, mut index: usize) -> f64 {
        for s in self.slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("flat index out of range");
    }

    pub fn set_flat(&mut self, mut index: usize, value: f64) {
        for s in self.slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("flat index out of range");
    }

    /// Network output `F(P, u, du/dt)`.
    pub fn forward(&self, x: [f64; 3]) -> Result<f64> {
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let mut act: Vec<f64> = x.to_vec();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut next = layer.bias.clone();
            for (o, z) in next.iter_mut().enumerate() {
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                *z += row.iter().zip(&act).map(|(w, a)| w * a).sum::<f64>();
            }
            if l < last {
                relu_in_place(&mut next);
            }
            act = next;
        }
        Ok(act[0])
    }

    /// Rewrites the first layer so that feeding raw inputs matches feeding
    /// `(x - offset) / scale` to the current network.
    pub fn fold_input_scaling(&mut self, offset: [f64; 3], scale: [f64; 3]) {
        let first = &mut self.layers[0];
        for o in 0..first.outputs {
            let mut shift = 0.0;
            for i in 0..first.inputs {
                let w = &mut first.weights[o * first.inputs + i];
                *w /= scale[i];
                shift += *w * offset[i];
            }
            first.bias[o] -= shift;
        }
    }
}

fn relu_in_place(v: &mut [f64]) {
    for x in v {
        if *x <= 0.0 {
            *x = 0.0;
        }
    }
}

/// He-normal weights, zero biases; deterministic in `seed`.
pub fn init_network(seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = NetworkParams::zeros();
    for layer in params.layers_mut() {
        let std = (2.0 / layer.inputs as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        for w in &mut layer.weights {
            *w = normal.sample(&mut rng);
        }
    }
    params
}

/// One training pair: inputs `(P_{n-1}, u_{n-1}, (u_n - u_{n-1})/Δt)`,
/// target `(P_n - P_{n-1})/Δt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingSample {
    pub p_prev: f64,
    pub u_prev: f64,
    pub dudt: f64,
    pub dpdt: f64,
}

impl TrainingSample {
    pub fn inputs(&self) -> [f64; 3] {
        [self.p_prev, self.u_prev, self.dudt]
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.p_prev)
            && self.u_prev.is_finite()
            && self.dudt.is_finite()
            && self.dpdt.is_finite()
    }
}

/// Row-major `rows × cols` buffer for batched passes.
struct Batch {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// `C (m×n) = A (m×k) · B`, with caller-chosen strides for `B`.
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
    beta: f64,
    c: &mut [f64],
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index addressed by the given shapes and strides.
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
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Forward pass over a batch; returns every layer's post-activation output
/// with the input matrix first.
fn forward_batch(params: &NetworkParams, inputs: Batch) -> Vec<Batch> {
    let last = params.layers.len() - 1;
    let mut acts = Vec::with_capacity(params.layers.len() + 1);
    acts.push(inputs);
    for (l, layer) in params.layers.iter().enumerate() {
        let prev = acts.last().expect("input batch");
        let rows = prev.rows;
        let mut data = Vec::with_capacity(rows * layer.outputs);
        for _ in 0..rows {
            data.extend_from_slice(&layer.bias);
        }
        // Z = X · Wᵀ + b
        gemm(
            rows,
            layer.inputs,
            layer.outputs,
            &prev.data,
            prev.cols,
            1,
            &layer.weights,
            1,
            layer.inputs,
            1.0,
            &mut data,
        );
        if l < last {
            relu_in_place(&mut data);
        }
        acts.push(Batch {
            rows,
            cols: layer.outputs,
            data,
        });
    }
    acts
}

fn input_batch(batch: &[TrainingSample], transform: impl Fn([f64; 3]) -> [f64; 3]) -> Batch {
    let mut data = Vec::with_capacity(batch.len() * 3);
    for s in batch {
        data.extend_from_slice(&transform(s.inputs()));
    }
    Batch {
        rows: batch.len(),
        cols: 3,
        data,
    }
}

fn check_batch(batch: &[TrainingSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch
        .iter()
        .any(|s| !(s.p_prev.is_finite() && s.u_prev.is_finite() && s.dudt.is_finite()))
    {
        return Err(Error::NonFiniteInput);
    }
    Ok(())
}

/// Mean squared error over the batch.
pub fn loss(params: &NetworkParams, batch: &[TrainingSample]) -> Result<f64> {
    check_batch(batch)?;
    let acts = forward_batch(params, input_batch(batch, |x| x));
    let out = &acts.last().expect("output").data;
    let sum: f64 = out
        .iter()
        .zip(batch)
        .map(|(y, s)| (y - s.dpdt) * (y - s.dpdt))
        .sum();
    Ok(sum / batch.len() as f64)
}

/// Exact gradient of [`loss`] (ReLU subgradient 0 at the kink).
pub fn backward(params: &NetworkParams, batch: &[TrainingSample]) -> Result<Gradients> {
    loss_and_gradient(params, batch).map(|(_, g)| g)
}

pub fn loss_and_gradient(params: &NetworkParams, batch: &[TrainingSample]) -> Result<(f64, Gradients)> {
    check_batch(batch)?;
    loss_and_gradient_with(params, batch, |x| x)
}

pub(crate) fn loss_and_gradient_with(
    params: &NetworkParams,
    batch: &[TrainingSample],
    transform: impl Fn([f64; 3]) -> [f64; 3],
) -> Result<(f64, Gradients)> {
    let n = batch.len();
    let acts = forward_batch(params, input_batch(batch, transform));
    let out = &acts.last().expect("output").data;

    let mut sum = 0.0;
    let mut delta: Vec<f64> = Vec::with_capacity(n);
    for (y, s) in out.iter().zip(batch) {
        let r = y - s.dpdt;
        sum += r * r;
        delta.push(2.0 * r / n as f64);
    }
    let loss = sum / n as f64;

    let mut grads = NetworkParams::zeros();
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let input = &acts[l];
        let g = &mut grads.layers[l];
        // dW = δᵀ · X
        gemm(
            layer.outputs,
            n,
            layer.inputs,
            &delta,
            1,
            layer.outputs,
            &input.data,
            input.cols,
            1,
            0.0,
            &mut g.weights,
        );
        for row in delta.chunks_exact(layer.outputs) {
            for (b, d) in g.bias.iter_mut().zip(row) {
                *b += d;
            }
        }
        if l > 0 {
            // δ_prev = (δ · W) ⊙ 1[a > 0]
            let mut prev = vec![0.0; n * layer.inputs];
            gemm(
                n,
                layer.outputs,
                layer.inputs,
                &delta,
                layer.outputs,
                1,
                &layer.weights,
                layer.inputs,
                1,
                0.0,
                &mut prev,
            );
            for (d, a) in prev.iter_mut().zip(&input.data) {
                if *a <= 0.0 {
                    *d = 0.0;
                }
            }
            delta = prev;
        }
    }
    Ok((loss, grads))
}

/// Batched forward pass over raw inputs.
pub fn forward_many(params: &NetworkParams, inputs: &[[f64; 3]]) -> Vec<f64> {
    if inputs.is_empty() {
        return Vec::new();
    }
    let batch = Batch {
        rows: inputs.len(),
        cols: 3,
        data: inputs.iter().flatten().copied().collect(),
    };
    forward_batch(params, batch).pop().expect("output").data
}

/// `clamp(P_prev + dt · F(P_prev, u_prev, du/dt_prev), 0, 1)`.
pub fn predict_next_p(
    params: &NetworkParams,
    p_prev: f64,
    u_prev: f64,
    dudt_prev: f64,
    dt: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_prev) {
        return Err(Error::ProbabilityOutOfRange(p_prev));
    }
    assert!(dt > 0.0, "time step must be positive");
    let rate = params.forward([p_prev, u_prev, dudt_prev])?;
    let next = p_prev + dt * rate;
    if next.is_nan() {
        return Err(Error::NonFiniteInput);
    }
    Ok(next.clamp(0.0, 1.0))
}

/// Open-probability trajectory driven by a sampled concentration signal,
/// with `u_{-1} = u_0` on the first step.
pub fn surrogate_trajectory(params: &NetworkParams, u: &[f64], dt: f64, p0: f64) -> Result<Vec<f64>> {
    let mut p = Vec::with_capacity(u.len());
    if u.is_empty() {
        return Ok(p);
    }
    p.push(p0);
    for n in 1..u.len() {
        let u_prev = u[n - 1];
        let u_prev2 = if n >= 2 { u[n - 2] } else { u[0] };
        p.push(predict_next_p(params, p[n - 1], u_prev, (u_prev - u_prev2) / dt, dt)?);
    }
    Ok(p)
}
