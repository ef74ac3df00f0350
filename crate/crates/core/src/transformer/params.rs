use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::rng::{normal, rng_from_seed};

/// A named slice of the flat parameter buffer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Span {
    pub offset: usize,
    pub len: usize,
}

impl Span {
    #[inline]
    pub fn of<'a, T>(&self, data: &'a [T]) -> &'a [T] {
        &data[self.offset..self.offset + self.len]
    }

    #[inline]
    pub fn of_mut<'a, T>(&self, data: &'a mut [T]) -> &'a mut [T] {
        &mut data[self.offset..self.offset + self.len]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct LayerSpans {
    pub ln1_g: Span,
    pub ln1_b: Span,
    pub w_qkv: Span,
    pub b_qkv: Span,
    pub w_o: Span,
    pub b_o: Span,
    pub ln2_g: Span,
    pub ln2_b: Span,
    pub w_fc: Span,
    pub b_fc: Span,
    pub w_proj: Span,
    pub b_proj: Span,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub tensors: Vec<TensorInfo>,
    pub embed_w: Span,
    pub embed_b: Span,
    pub pos: Span,
    pub layers: Vec<LayerSpans>,
    pub lnf_g: Span,
    pub lnf_b: Span,
    pub readout_w: Span,
    pub readout_b: Span,
    pub total: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Ones,
    Zeros,
    Normal(f64),
    Uniform(f64),
}

struct Builder {
    tensors: Vec<TensorInfo>,
    inits: Vec<Init>,
    total: usize,
}

impl Builder {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> Span {
        let len = shape.iter().product();
        let span = Span {
            offset: self.total,
            len,
        };
        self.tensors.push(TensorInfo {
            name,
            shape: shape.to_vec(),
            offset: self.total,
            len,
        });
        self.inits.push(init);
        self.total += len;
        span
    }
}

fn build(c: &ModelConfig) -> (Layout, Vec<Init>) {
    let (d, m, p) = (c.token_dim, c.hidden, c.max_positions);
    let mf = c.mlp_dim();
    let std = 0.02;
    let resid_std = std / ((2 * c.layers) as f64).sqrt();
    let mut b = Builder {
        tensors: Vec::new(),
        inits: Vec::new(),
        total: 0,
    };
    let read_in = Init::Uniform(1.0 / (d as f64).sqrt());
    let embed_w = b.push("embed.w".into(), &[d, m], read_in);
    let embed_b = b.push("embed.b".into(), &[m], read_in);
    let pos = b.push("pos".into(), &[p, m], Init::Normal(std));
    let layers = (0..c.layers)
        .map(|l| {
            let mut t = |s: &str, shape: &[usize], init| b.push(format!("h{l}.{s}"), shape, init);
            LayerSpans {
                ln1_g: t("ln1.g", &[m], Init::Ones),
                ln1_b: t("ln1.b", &[m], Init::Zeros),
                w_qkv: t("attn.w_qkv", &[m, 3 * m], Init::Normal(std)),
                b_qkv: t("attn.b_qkv", &[3 * m], Init::Zeros),
                w_o: t("attn.w_o", &[m, m], Init::Normal(resid_std)),
                b_o: t("attn.b_o", &[m], Init::Zeros),
                ln2_g: t("ln2.g", &[m], Init::Ones),
                ln2_b: t("ln2.b", &[m], Init::Zeros),
                w_fc: t("mlp.w_fc", &[m, mf], Init::Normal(std)),
                b_fc: t("mlp.b_fc", &[mf], Init::Zeros),
                w_proj: t("mlp.w_proj", &[mf, m], Init::Normal(resid_std)),
                b_proj: t("mlp.b_proj", &[m], Init::Zeros),
            }
        })
        .collect();
    let lnf_g = b.push("lnf.g".into(), &[m], Init::Ones);
    let lnf_b = b.push("lnf.b".into(), &[m], Init::Zeros);
    let read_out = Init::Uniform(1.0 / (m as f64).sqrt());
    let readout_w = b.push("readout.w".into(), &[m], read_out);
    let readout_b = b.push("readout.b".into(), &[1], read_out);
    let layout = Layout {
        tensors: b.tensors,
        embed_w,
        embed_b,
        pos,
        layers,
        lnf_g,
        lnf_b,
        readout_w,
        readout_b,
        total: b.total,
    };
    (layout, b.inits)
}

/// All weights of one model in a single flat buffer.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<T: Scalar> {
    config: ModelConfig,
    pub(crate) layout: Layout,
    pub(crate) data: Vec<T>,
}

impl<T: Scalar> Params<T> {
    /// GPT-2 style initialization: N(0, 0.02) for attention/MLP weights and
    /// positions, residual projections scaled by `1/sqrt(2 * layers)`, unit
    /// LayerNorm gains, and uniform `±1/sqrt(fan_in)` for read-in and readout.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let (layout, inits) = build(config);
        let mut rng = rng_from_seed(config.seed);
        let mut data = Vec::with_capacity(layout.total);
        for (t, init) in layout.tensors.iter().zip(inits) {
            for _ in 0..t.len {
                let v = match init {
                    Init::Ones => 1.0,
                    Init::Zeros => 0.0,
                    Init::Normal(s) => s * normal(&mut rng),
                    Init::Uniform(a) => a * (2.0 * rand::Rng::random::<f64>(&mut rng) - 1.0),
                };
                data.push(T::c(v));
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            data,
        })
    }

    /// Rebuilds parameters from a flat buffer in layout order.
    pub fn from_flat(config: &ModelConfig, data: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (layout, _) = build(config);
        if data.len() != layout.total {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                layout.total,
                data.len()
            )));
        }
        let p = Self {
            config: config.clone(),
            layout,
            data,
        };
        p.ensure_finite()?;
        Ok(p)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[TensorInfo] {
        &self.layout.tensors
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn tensor(&self, name: &str) -> Option<&[T]> {
        self.layout
            .tensors
            .iter()
            .find(|t| t.name == name)
            .map(|t| &self.data[t.offset..t.offset + t.len])
    }

    /// Readout direction `f` and bias, in `f64`.
    pub fn readout(&self) -> (Vec<f64>, f64) {
        let f = self
            .layout
            .readout_w
            .of(&self.data)
            .iter()
            .map(|v| v.f64())
            .collect();
        (f, self.layout.readout_b.of(&self.data)[0].f64())
    }

    pub fn ensure_finite(&self) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite("parameters"))
        }
    }

    /// Converts every weight to another precision.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config.clone(),
            layout: self.layout.clone(),
            data: self.data.iter().map(|v| U::c(v.f64())).collect(),
        }
    }
}
