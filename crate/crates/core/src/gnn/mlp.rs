//! Fully connected feed-forward blocks: rectified linear hidden layers with
//! additive skip connections between equal-width layers, then a final affine
//! layer. Includes a cached forward pass and the matching reverse-mode
//! backward pass used by training.

use nalgebra::{DMatrix, DVector};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

use crate::error::{Error, Result};

/// One affine layer with weight shape `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl Layer {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Layer {
            w: DMatrix::zeros(out_dim, in_dim),
            b: DVector::zeros(out_dim),
        }
    }
}

/// A multilayer perceptron. `layers[..n-1]` are hidden layers (rectified
/// linear); the last layer is affine. A hidden layer whose input and output
/// widths agree adds its input back onto the activation.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Layer shapes for `depth` hidden layers of `width` between `in_dim` and
/// `out_dim`.
fn layer_dims(in_dim: usize, width: usize, depth: usize, out_dim: usize) -> Vec<(usize, usize)> {
    assert!(depth >= 1, "an MLP needs at least one hidden layer");
    let mut dims = vec![(width, in_dim)];
    for _ in 1..depth {
        dims.push((width, width));
    }
    dims.push((out_dim, width));
    dims
}

fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl MlpParams {
    pub fn zeros(in_dim: usize, width: usize, depth: usize, out_dim: usize) -> Self {
        let layers = layer_dims(in_dim, width, depth, out_dim)
            .into_iter()
            .map(|(o, i)| Layer::zeros(o, i))
            .collect();
        MlpParams { layers }
    }

    /// Fan-in-scaled uniform initialization: every weight and bias of a layer
    /// with `fan_in` inputs is drawn from U[-1/sqrt(fan_in), 1/sqrt(fan_in)].
    /// Weights fill row by row before the bias, so the layout is a pure
    /// function of the generator stream.
    pub fn init<R: Rng>(
        in_dim: usize,
        width: usize,
        depth: usize,
        out_dim: usize,
        rng: &mut R,
    ) -> Self {
        let layers = layer_dims(in_dim, width, depth, out_dim)
            .into_iter()
            .map(|(o, i)| {
                let bound = 1.0 / (i as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound);
                let mut layer = Layer::zeros(o, i);
                for r in 0..o {
                    for c in 0..i {
                        layer.w[(r, c)] = dist.sample(rng);
                    }
                }
                for r in 0..o {
                    layer.b[r] = dist.sample(rng);
                }
                layer
            })
            .collect();
        MlpParams { layers }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].w.nrows()
    }

    fn check_input(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(Error::DimMismatch(format!(
                "mlp expects input of dimension {}, got {}",
                self.in_dim(),
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut h = x.clone();
        for layer in &self.layers[..n - 1] {
            let z = &layer.w * &h + &layer.b;
            let mut a = z.map(relu);
            if a.len() == h.len() {
                a += &h;
            }
            h = a;
        }
        let last = &self.layers[n - 1];
        Ok(&last.w * &h + &last.b)
    }

    /// Forward pass that records what `backward` needs: the input of every
    /// layer and the pre-activation of every hidden layer.
    pub fn forward_cached(&self, x: &DVector<f64>) -> Result<(DVector<f64>, MlpCache)> {
        self.check_input(x)?;
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut preacts = Vec::with_capacity(n - 1);
        let mut h = x.clone();
        for layer in &self.layers[..n - 1] {
            let z = &layer.w * &h + &layer.b;
            let mut a = z.map(relu);
            if a.len() == h.len() {
                a += &h;
            }
            inputs.push(h);
            preacts.push(z);
            h = a;
        }
        let last = &self.layers[n - 1];
        let out = &last.w * &h + &last.b;
        inputs.push(h);
        Ok((out, MlpCache { inputs, preacts }))
    }

    /// Accumulates parameter gradients into `grads` and returns the gradient
    /// with respect to the input, given the gradient of the loss with respect
    /// to the output.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_out: &DVector<f64>,
        grads: &mut MlpParams,
    ) -> DVector<f64> {
        let n = self.layers.len();
        let last = &self.layers[n - 1];
        grads.layers[n - 1].w += grad_out * cache.inputs[n - 1].transpose();
        grads.layers[n - 1].b += grad_out;
        let mut g = last.w.transpose() * grad_out;

        for i in (0..n - 1).rev() {
            let skip = cache.preacts[i].len() == cache.inputs[i].len();
            let gz = DVector::from_iterator(
                g.len(),
                g.iter()
                    .zip(cache.preacts[i].iter())
                    .map(|(&gk, &zk)| if zk > 0.0 { gk } else { 0.0 }),
            );
            grads.layers[i].w += &gz * cache.inputs[i].transpose();
            grads.layers[i].b += &gz;
            let mut g_in = self.layers[i].w.transpose() * gz;
            if skip {
                g_in += &g;
            }
            g = g_in;
        }
        g
    }

    pub fn zeros_like(&self) -> MlpParams {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| Layer::zeros(l.w.nrows(), l.w.ncols()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &MlpParams, s: f64) {
        for (a, b) in self.layers.iter_mut().zip(other.layers.iter()) {
            a.w += s * &b.w;
            a.b += s * &b.b;
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Appends every parameter in a fixed order: per layer, weights row by
    /// row, then the bias.
    pub fn append_flat(&self, out: &mut Vec<f64>) {
        for l in &self.layers {
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    out.push(l.w[(r, c)]);
                }
            }
            out.extend(l.b.iter());
        }
    }

    /// Reads parameters back in `append_flat` order, advancing `pos`.
    pub fn read_flat(&mut self, data: &[f64], pos: &mut usize) -> Result<()> {
        for l in &mut self.layers {
            let need = l.w.len() + l.b.len();
            if *pos + need > data.len() {
                return Err(Error::Checkpoint(format!(
                    "parameter stream ends at {} but layer needs {} more values",
                    data.len(),
                    *pos + need - data.len()
                )));
            }
            for r in 0..l.w.nrows() {
                for c in 0..l.w.ncols() {
                    l.w[(r, c)] = data[*pos];
                    *pos += 1;
                }
            }
            for r in 0..l.b.len() {
                l.b[r] = data[*pos];
                *pos += 1;
            }
        }
        Ok(())
    }
}

/// Intermediate values of one cached forward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    /// Input to each layer; `inputs[0]` is the MLP input.
    inputs: Vec<DVector<f64>>,
    /// Pre-activation of each hidden layer.
    preacts: Vec<DVector<f64>>,
}
