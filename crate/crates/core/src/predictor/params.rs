use ndarray::{Array1, Array2, ArrayViewD, ArrayViewMutD};
use rand::Rng;

use crate::error::Result;
use crate::predictor::{PredictorConfig, Scalar};
use crate::rng::{derived_rng, stream, Rng as SeededRng};

/// Affine map `y = x W + b` with `W` stored as `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Linear<T> {
    fn uniform(fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((fan_in, fan_out), || T::of(rng.random_range(-bound..bound))),
            bias: Array1::zeros(fan_out),
        }
    }

    pub(crate) fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm<T> {
    pub scale: Array1<T>,
    pub shift: Array1<T>,
}

impl<T: Scalar> LayerNorm<T> {
    pub(crate) fn identity(dim: usize) -> Self {
        Self {
            scale: Array1::ones(dim),
            shift: Array1::zeros(dim),
        }
    }

    pub(crate) fn zeros(dim: usize) -> Self {
        Self {
            scale: Array1::zeros(dim),
            shift: Array1::zeros(dim),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer<T> {
    pub norm1: LayerNorm<T>,
    pub query: Linear<T>,
    pub key: Linear<T>,
    pub value: Linear<T>,
    pub attn_out: Linear<T>,
    pub norm2: LayerNorm<T>,
    pub ffn_in: Linear<T>,
    pub ffn_out: Linear<T>,
}

/// All weights of the predictor.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: PredictorConfig,
    pub input: Linear<T>,
    /// Fixed sinusoidal table, `max_frames x model_dim`; not trained.
    pub pos_table: Array2<T>,
    pub layers: Vec<EncoderLayer<T>>,
    pub final_norm: LayerNorm<T>,
    pub output: Linear<T>,
}

pub type PredictorParams = Params<f32>;

pub(crate) const POS_TABLE: &str = "pos_table";

fn sinusoidal_table<T: Scalar>(frames: usize, dim: usize) -> Array2<T> {
    Array2::from_shape_fn((frames, dim), |(pos, i)| {
        let rate = 10000f64.powf(-((i / 2 * 2) as f64) / dim as f64);
        let angle = pos as f64 * rate;
        T::of(if i % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Deterministic initialization: weights uniform in `+-1/sqrt(fan_in)`, zero
/// biases, unit layer-norm scales.
pub fn init_params<T: Scalar>(config: &PredictorConfig) -> Result<Params<T>> {
    config.validate()?;
    let mut rng = derived_rng(config.seed, stream::INIT, 0);
    let d = config.model_dim;
    let input = Linear::uniform(config.input_dim, d, &mut rng);
    let layers = (0..config.layer_count)
        .map(|_| EncoderLayer {
            norm1: LayerNorm::identity(d),
            query: Linear::uniform(d, d, &mut rng),
            key: Linear::uniform(d, d, &mut rng),
            value: Linear::uniform(d, d, &mut rng),
            attn_out: Linear::uniform(d, d, &mut rng),
            norm2: LayerNorm::identity(d),
            ffn_in: Linear::uniform(d, config.ffn_dim, &mut rng),
            ffn_out: Linear::uniform(config.ffn_dim, d, &mut rng),
        })
        .collect();
    let output = Linear::uniform(d, config.input_dim, &mut rng);
    Ok(Params {
        config: config.clone(),
        input,
        pos_table: sinusoidal_table(config.max_frames, d),
        layers,
        final_norm: LayerNorm::identity(d),
        output,
    })
}

const LAYER_TENSORS: [&str; 16] = [
    "norm1.scale",
    "norm1.shift",
    "attn.query.weight",
    "attn.query.bias",
    "attn.key.weight",
    "attn.key.bias",
    "attn.value.weight",
    "attn.value.bias",
    "attn.out.weight",
    "attn.out.bias",
    "norm2.scale",
    "norm2.shift",
    "ffn.in.weight",
    "ffn.in.bias",
    "ffn.out.weight",
    "ffn.out.bias",
];

impl<T: Scalar> EncoderLayer<T> {
    fn views(&self) -> [ArrayViewD<'_, T>; 16] {
        [
            self.norm1.scale.view().into_dyn(),
            self.norm1.shift.view().into_dyn(),
            self.query.weight.view().into_dyn(),
            self.query.bias.view().into_dyn(),
            self.key.weight.view().into_dyn(),
            self.key.bias.view().into_dyn(),
            self.value.weight.view().into_dyn(),
            self.value.bias.view().into_dyn(),
            self.attn_out.weight.view().into_dyn(),
            self.attn_out.bias.view().into_dyn(),
            self.norm2.scale.view().into_dyn(),
            self.norm2.shift.view().into_dyn(),
            self.ffn_in.weight.view().into_dyn(),
            self.ffn_in.bias.view().into_dyn(),
            self.ffn_out.weight.view().into_dyn(),
            self.ffn_out.bias.view().into_dyn(),
        ]
    }

    fn views_mut(&mut self) -> [ArrayViewMutD<'_, T>; 16] {
        let Self {
            norm1,
            query,
            key,
            value,
            attn_out,
            norm2,
            ffn_in,
            ffn_out,
        } = self;
        [
            norm1.scale.view_mut().into_dyn(),
            norm1.shift.view_mut().into_dyn(),
            query.weight.view_mut().into_dyn(),
            query.bias.view_mut().into_dyn(),
            key.weight.view_mut().into_dyn(),
            key.bias.view_mut().into_dyn(),
            value.weight.view_mut().into_dyn(),
            value.bias.view_mut().into_dyn(),
            attn_out.weight.view_mut().into_dyn(),
            attn_out.bias.view_mut().into_dyn(),
            norm2.scale.view_mut().into_dyn(),
            norm2.shift.view_mut().into_dyn(),
            ffn_in.weight.view_mut().into_dyn(),
            ffn_in.bias.view_mut().into_dyn(),
            ffn_out.weight.view_mut().into_dyn(),
            ffn_out.bias.view_mut().into_dyn(),
        ]
    }
}

impl<T: Scalar> Params<T> {
    /// Every tensor in checkpoint order, positional table included.
    pub fn tensors(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        let mut out = vec![
            ("input.weight".to_string(), self.input.weight.view().into_dyn()),
            ("input.bias".to_string(), self.input.bias.view().into_dyn()),
            (POS_TABLE.to_string(), self.pos_table.view().into_dyn()),
        ];
        for (i, layer) in self.layers.iter().enumerate() {
            for (name, view) in LAYER_TENSORS.iter().zip(layer.views()) {
                out.push((format!("layers.{i}.{name}"), view));
            }
        }
        out.push(("final_norm.scale".to_string(), self.final_norm.scale.view().into_dyn()));
        out.push(("final_norm.shift".to_string(), self.final_norm.shift.view().into_dyn()));
        out.push(("output.weight".to_string(), self.output.weight.view().into_dyn()));
        out.push(("output.bias".to_string(), self.output.bias.view().into_dyn()));
        out
    }

    /// Mutable views of every tensor, in the same order as [`Params::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        let Self {
            input,
            pos_table,
            layers,
            final_norm,
            output,
            ..
        } = self;
        let mut out = vec![
            ("input.weight".to_string(), input.weight.view_mut().into_dyn()),
            ("input.bias".to_string(), input.bias.view_mut().into_dyn()),
            (POS_TABLE.to_string(), pos_table.view_mut().into_dyn()),
        ];
        for (i, layer) in layers.iter_mut().enumerate() {
            for (name, view) in LAYER_TENSORS.iter().zip(layer.views_mut()) {
                out.push((format!("layers.{i}.{name}"), view));
            }
        }
        out.push(("final_norm.scale".to_string(), final_norm.scale.view_mut().into_dyn()));
        out.push(("final_norm.shift".to_string(), final_norm.shift.view_mut().into_dyn()));
        out.push(("output.weight".to_string(), output.weight.view_mut().into_dyn()));
        out.push(("output.bias".to_string(), output.bias.view_mut().into_dyn()));
        out
    }

    /// Trained tensors only (everything but the positional table).
    pub fn trainable(&self) -> Vec<(String, ArrayViewD<'_, T>)> {
        self.tensors().into_iter().filter(|(n, _)| n != POS_TABLE).collect()
    }

    pub fn trainable_mut(&mut self) -> Vec<(String, ArrayViewMutD<'_, T>)> {
        self.tensors_mut().into_iter().filter(|(n, _)| n != POS_TABLE).collect()
    }

    /// Zero-valued copy with the same trainable shapes and an empty positional
    /// table; used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let c = &self.config;
        let d = c.model_dim;
        Self {
            config: c.clone(),
            input: Linear::zeros(c.input_dim, d),
            pos_table: Array2::zeros((0, d)),
            layers: (0..c.layer_count)
                .map(|_| EncoderLayer {
                    norm1: LayerNorm::zeros(d),
                    query: Linear::zeros(d, d),
                    key: Linear::zeros(d, d),
                    value: Linear::zeros(d, d),
                    attn_out: Linear::zeros(d, d),
                    norm2: LayerNorm::zeros(d),
                    ffn_in: Linear::zeros(d, c.ffn_dim),
                    ffn_out: Linear::zeros(c.ffn_dim, d),
                })
                .collect(),
            final_norm: LayerNorm::zeros(d),
            output: Linear::zeros(d, c.input_dim),
        }
    }

    /// Element-wise conversion to another precision.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let c = |a: &Array1<T>| a.mapv(|v| U::of(v.as_f64()));
        let c2 = |a: &Array2<T>| a.mapv(|v| U::of(v.as_f64()));
        let lin = |l: &Linear<T>| Linear {
            weight: c2(&l.weight),
            bias: c(&l.bias),
        };
        let norm = |n: &LayerNorm<T>| LayerNorm {
            scale: c(&n.scale),
            shift: c(&n.shift),
        };
        Params {
            config: self.config.clone(),
            input: lin(&self.input),
            pos_table: c2(&self.pos_table),
            layers: self
                .layers
                .iter()
                .map(|l| EncoderLayer {
                    norm1: norm(&l.norm1),
                    query: lin(&l.query),
                    key: lin(&l.key),
                    value: lin(&l.value),
                    attn_out: lin(&l.attn_out),
                    norm2: norm(&l.norm2),
                    ffn_in: lin(&l.ffn_in),
                    ffn_out: lin(&l.ffn_out),
                })
                .collect(),
            final_norm: norm(&self.final_norm),
            output: lin(&self.output),
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.trainable().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Expected shape of every tensor for `config`, in checkpoint order.
    pub fn expected_shapes(config: &PredictorConfig) -> Vec<(String, Vec<usize>)> {
        let d = config.model_dim;
        let mut out = vec![
            ("input.weight".to_string(), vec![config.input_dim, d]),
            ("input.bias".to_string(), vec![d]),
            (POS_TABLE.to_string(), vec![config.max_frames, d]),
        ];
        for i in 0..config.layer_count {
            let shapes = [
                vec![d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d, d],
                vec![d],
                vec![d],
                vec![d],
                vec![d, config.ffn_dim],
                vec![config.ffn_dim],
                vec![config.ffn_dim, d],
                vec![d],
            ];
            for (name, shape) in LAYER_TENSORS.iter().zip(shapes) {
                out.push((format!("layers.{i}.{name}"), shape));
            }
        }
        out.push(("final_norm.scale".to_string(), vec![d]));
        out.push(("final_norm.shift".to_string(), vec![d]));
        out.push(("output.weight".to_string(), vec![d, config.input_dim]));
        out.push(("output.bias".to_string(), vec![config.input_dim]));
        out
    }
}
