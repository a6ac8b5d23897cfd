use ndarray::{ArrayView1, ArrayView2, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::EncoderError;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Frames per patch.
    pub patch_t: usize,
    /// Mel bins per patch.
    pub patch_f: usize,
    pub d_model: usize,
    pub n_layers: usize,
    /// Output width of the tagging head; 0 disables the head.
    pub n_classes: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            patch_t: 16,
            patch_f: 16,
            d_model: 64,
            n_layers: 6,
            n_classes: 0,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.patch_t == 0 || self.patch_f == 0 {
            return Err(EncoderError::InvalidConfig("patch sizes must be positive".into()));
        }
        if self.d_model == 0 || self.n_layers == 0 {
            return Err(EncoderError::InvalidConfig(
                "d_model and n_layers must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_t * self.patch_f
    }

    /// Block whose output is used for scoring by default.
    pub fn default_tap(&self) -> usize {
        (self.n_layers / 2).max(1)
    }

    pub fn layout(&self) -> Vec<TensorSpec> {
        let d = self.d_model;
        let mut specs = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let len: usize = shape.iter().product();
            specs.push(TensorSpec {
                name,
                shape,
                offset,
            });
            offset += len;
        };
        push("proj.weight".into(), vec![self.patch_dim(), d]);
        push("proj.bias".into(), vec![d]);
        for k in 1..=self.n_layers {
            push(format!("block{k}.w1"), vec![d, d]);
            push(format!("block{k}.b1"), vec![d]);
            push(format!("block{k}.w2"), vec![d, d]);
            push(format!("block{k}.b2"), vec![d]);
        }
        if self.n_classes > 0 {
            push("head.weight".into(), vec![d, self.n_classes]);
            push("head.bias".into(), vec![self.n_classes]);
        }
        specs
    }
}

/// One named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_bias(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// All trainable weights as one flat vector plus its layout table.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub config: EncoderConfig,
    pub layout: Vec<TensorSpec>,
    pub values: Vec<f64>,
}

impl Parameters {
    pub fn zeros(config: &EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let layout = config.layout();
        let n = layout.last().map_or(0, |s| s.offset + s.len());
        Ok(Self {
            config: config.clone(),
            layout,
            values: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spec(&self, name: &str) -> &TensorSpec {
        self.layout
            .iter()
            .find(|s| s.name == name)
            .unwrap_or_else(|| panic!("no tensor named {name}"))
    }

    pub fn view1(&self, name: &str) -> ArrayView1<'_, f64> {
        let s = self.spec(name);
        ArrayView1::from(&self.values[s.range()])
    }

    pub fn view2(&self, name: &str) -> ArrayView2<'_, f64> {
        let s = self.spec(name);
        ArrayView2::from_shape((s.shape[0], s.shape[1]), &self.values[s.range()])
            .expect("layout shape matches slice")
    }

    pub fn view2_mut(&mut self, name: &str) -> ArrayViewMut2<'_, f64> {
        let s = self.spec(name).clone();
        ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut self.values[s.range()])
            .expect("layout shape matches slice")
    }

    pub fn slice_mut(&mut self, name: &str) -> &mut [f64] {
        let r = self.spec(name).range();
        &mut self.values[r]
    }

    /// SHA-256 over the little-endian bytes of every value.
    pub fn hash(&self) -> String {
        hash_values(&self.values)
    }
}

pub fn hash_values(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Xavier-uniform weights, zero biases, deterministic per `config.seed`.
pub fn init(config: &EncoderConfig) -> Result<Parameters, EncoderError> {
    let mut p = Parameters::zeros(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    for spec in p.layout.clone() {
        if spec.is_bias() {
            continue;
        }
        let bound = (6.0 / (spec.shape[0] + spec.shape[1]) as f64).sqrt();
        for v in &mut p.values[spec.range()] {
            *v = rng.random_range(-bound..=bound);
        }
    }
    Ok(p)
}
