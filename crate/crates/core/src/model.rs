//! Time-conditioned noise predictor: an MLP over `[x, embed(t)]`.
//!
//! Every layer is an augmented matrix of shape `(fan_in + 1) × fan_out`
//! whose last row holds the bias; inputs get a trailing ones column. Hidden
//! layers use SiLU, the output layer is linear.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{kernels, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    pub dim: usize,
    pub max_period: f64,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Parameter(format!(
                "time embedding dimension must be even and positive, got {dim}"
            )));
        }
        Ok(Self {
            dim,
            max_period: 10_000.0,
        })
    }

    /// Interleaved `[sin(t·f_0), cos(t·f_0), sin(t·f_1), …]` with geometrically
    /// spaced frequencies `f_i = max_period^(−i/half)`.
    pub fn embed(&self, t: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.embed_into(t, &mut out);
        out
    }

    fn embed_into(&self, t: usize, out: &mut [f64]) {
        let half = self.dim / 2;
        for i in 0..half {
            let freq = self.max_period.powf(-(i as f64) / half as f64);
            let arg = t as f64 * freq;
            out[2 * i] = arg.sin();
            out[2 * i + 1] = arg.cos();
        }
    }
}

/// Architecture of a [`DenoiserModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub time_embed_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_dim: 2,
            hidden_dims: vec![128, 128, 128],
            time_embed_dim: 32,
        }
    }
}

impl ModelConfig {
    /// `(fan_in, fan_out)` per layer, input layer first.
    pub fn layer_sizes(&self) -> Vec<(usize, usize)> {
        let mut sizes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim + self.time_embed_dim;
        for &h in &self.hidden_dims {
            sizes.push((fan_in, h));
            fan_in = h;
        }
        sizes.push((fan_in, self.input_dim));
        sizes
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_sizes().iter().map(|(i, o)| (i + 1) * o).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Parameter("model dimensions must be >= 1".into()));
        }
        TimeEmbedding::new(self.time_embed_dim)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    config: ModelConfig,
    embedding: TimeEmbedding,
    layers: Vec<Tensor>,
    frozen: bool,
}

impl DenoiserModel {
    /// Xavier-uniform weights, zero biases, drawn from a seeded stream.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let embedding = TimeEmbedding::new(config.time_embed_dim)?;
        let layers = config
            .layer_sizes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut values = Vec::with_capacity((fan_in + 1) * fan_out);
                for _ in 0..fan_in * fan_out {
                    values.push(rng.random_range(-bound..bound));
                }
                values.extend(std::iter::repeat_n(0.0, fan_out));
                Tensor::matrix(fan_in + 1, fan_out, values)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            embedding,
            layers,
            frozen: false,
        })
    }

    /// Rebuilds a model from a flat parameter vector in layer order.
    pub fn from_flat(config: ModelConfig, flat: &[f64]) -> Result<Self> {
        config.validate()?;
        if flat.len() != config.parameter_count() {
            return Err(Error::dims("from_flat", &[config.parameter_count()], &[flat.len()]));
        }
        let embedding = TimeEmbedding::new(config.time_embed_dim)?;
        let mut offset = 0;
        let layers = config
            .layer_sizes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let n = (fan_in + 1) * fan_out;
                let t = Tensor::matrix(fan_in + 1, fan_out, flat[offset..offset + n].to_vec());
                offset += n;
                t
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            embedding,
            layers,
            frozen: false,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    pub fn embedding(&self) -> &TimeEmbedding {
        &self.embedding
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn layers(&self) -> &[Tensor] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Tensor] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Tensor::len).sum()
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.values().iter().copied()).collect()
    }

    /// Name used in diagnostics for layer `i`.
    pub fn layer_name(i: usize) -> String {
        format!("layer{i}")
    }

    /// Deep copy that refuses gradients.
    pub fn clone_frozen(&self) -> Self {
        let mut m = self.clone();
        m.frozen = true;
        m
    }

    /// Trainable deep copy, used to initialise a fine-tuned model.
    pub fn clone_trainable(&self) -> Self {
        let mut m = self.clone();
        m.frozen = false;
        m
    }

    fn check_inputs(&self, x: &Tensor, timesteps: &[usize]) -> Result<()> {
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::dims("predict_noise", shape, &[timesteps.len(), self.config.input_dim]));
        }
        if shape[0] != timesteps.len() {
            return Err(Error::dims("predict_noise", shape, &[timesteps.len(), self.config.input_dim]));
        }
        if !x.is_finite() {
            return Err(Error::Contract("predict_noise input contains non-finite values".into()));
        }
        if timesteps.contains(&0) {
            return Err(Error::Contract("timesteps are 1-based".into()));
        }
        Ok(())
    }

    fn network_input(&self, x: &Tensor, timesteps: &[usize]) -> Vec<f64> {
        let (d, e) = (self.config.input_dim, self.embedding.dim);
        let mut out = vec![0.0; timesteps.len() * (d + e)];
        for (r, &t) in timesteps.iter().enumerate() {
            let row = &mut out[r * (d + e)..(r + 1) * (d + e)];
            row[..d].copy_from_slice(x.row(r));
            self.embedding.embed_into(t, &mut row[d..]);
        }
        out
    }

    /// Tape-free forward pass; `x` is `batch × input_dim`, one timestep per row.
    pub fn predict_noise(&self, x: &Tensor, timesteps: &[usize]) -> Result<Tensor> {
        self.check_inputs(x, timesteps)?;
        let rows = timesteps.len();
        let mut h = self.network_input(x, timesteps);
        let mut width = self.config.input_dim + self.embedding.dim;
        let ones = vec![1.0; rows];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let fan_out = layer.shape()[1];
            let aug = kernels::concat_cols(&h, width, &ones, 1, rows);
            h = kernels::matmul(&aug, layer.values(), rows, width + 1, fan_out);
            if i != last {
                h.iter_mut().for_each(|v| *v = kernels::silu(*v));
            }
            width = fan_out;
        }
        Tensor::matrix(rows, width, h)
    }

    /// Puts the parameters on `tape` (as constants when frozen).
    pub fn trace(&self, tape: &mut Tape) -> TracedModel<'_> {
        let params = self
            .layers
            .iter()
            .map(|l| {
                if self.frozen {
                    tape.constant(l.clone())
                } else {
                    tape.parameter(l.clone())
                }
            })
            .collect();
        TracedModel { model: self, params }
    }
}

/// A model whose parameters live on a tape.
#[derive(Debug)]
pub struct TracedModel<'m> {
    model: &'m DenoiserModel,
    params: Vec<Var>,
}

impl TracedModel<'_> {
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn model(&self) -> &DenoiserModel {
        self.model
    }

    /// Gradients per layer after `tape.backward`; zeros for untouched layers.
    pub fn gradients(&self, tape: &Tape) -> Vec<Vec<f64>> {
        self.params
            .iter()
            .zip(self.model.layers())
            .map(|(&p, l)| tape.grad(p).map_or_else(|| vec![0.0; l.len()], <[f64]>::to_vec))
            .collect()
    }
}

/// A noise predictor that records onto a tape.
pub trait TracedPredictor {
    fn input_dim(&self) -> usize;
    fn predict(&self, tape: &mut Tape, x: &Tensor, timesteps: &[usize]) -> Result<Var>;
}

impl TracedPredictor for TracedModel<'_> {
    fn input_dim(&self) -> usize {
        self.model.input_dim()
    }

    fn predict(&self, tape: &mut Tape, x: &Tensor, timesteps: &[usize]) -> Result<Var> {
        let m = self.model;
        m.check_inputs(x, timesteps)?;
        let rows = timesteps.len();
        let width = m.config.input_dim + m.embedding.dim;
        let input = Tensor::matrix(rows, width, m.network_input(x, timesteps))?;
        let mut h = tape.constant(input);
        let ones = tape.constant(Tensor::matrix(rows, 1, vec![1.0; rows])?);
        let last = self.params.len() - 1;
        for (i, &w) in self.params.iter().enumerate() {
            let aug = tape.concat_cols(h, ones)?;
            h = tape.matmul(aug, w)?;
            if i != last {
                h = tape.silu(h)?;
            }
        }
        Ok(h)
    }
}

/// Tape-free noise prediction, implemented by models and by test oracles.
pub trait NoisePredictor {
    fn input_dim(&self) -> usize;
    fn predict_noise(&self, x: &Tensor, timesteps: &[usize]) -> Result<Tensor>;
}

impl NoisePredictor for DenoiserModel {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn predict_noise(&self, x: &Tensor, timesteps: &[usize]) -> Result<Tensor> {
        DenoiserModel::predict_noise(self, x, timesteps)
    }
}
