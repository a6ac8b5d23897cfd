//! Residual patch encoder with exact gradients and a frozen teacher copy.
//!
//! Input log-mel features are zero-padded to patch multiples and cut into
//! `patch_t x patch_f` patches laid out row-major over (time, frequency). Each
//! patch is projected to `d_model`, then passed through `n_layers` residual
//! blocks `h + tanh(h W1 + b1) W2 + b2`. Every block output is a tap that can
//! be read out (`layer` is 1-based) or receive gradient during backward.

mod params;
mod teacher;

pub use params::{hash_values, init, EncoderConfig, Parameters, TensorSpec};
pub use teacher::{freeze_teacher, TeacherHandle};

use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

use crate::features::MelFeatures;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("layer {0} outside 1..={1}")]
    LayerOutOfRange(usize, usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),
    #[error("encoder has no tagging head (n_classes = 0)")]
    NoHead,
}

/// `L x D` embeddings, rows ordered `t * f_patches + f`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEmbedding {
    pub values: Array2<f64>,
    pub t_patches: usize,
    pub f_patches: usize,
    pub layer_index: usize,
}

impl FrameEmbedding {
    pub fn len(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn same_shape(&self, other: &FrameEmbedding) -> bool {
        self.values.dim() == other.values.dim()
            && self.t_patches == other.t_patches
            && self.f_patches == other.f_patches
    }
}

/// Intermediate activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub t_patches: usize,
    pub f_patches: usize,
    patches: Array2<f64>,
    /// `streams[0]` is the projected patch stream, `streams[k]` the output of block k.
    streams: Vec<Array2<f64>>,
    /// `acts[k - 1]` is `tanh(h_{k-1} W1 + b1)` of block k.
    acts: Vec<Array2<f64>>,
}

impl Trace {
    pub fn tap(&self, layer: usize) -> Result<FrameEmbedding, EncoderError> {
        let n = self.streams.len() - 1;
        if layer == 0 || layer > n {
            return Err(EncoderError::LayerOutOfRange(layer, n));
        }
        Ok(FrameEmbedding {
            values: self.streams[layer].clone(),
            t_patches: self.t_patches,
            f_patches: self.f_patches,
            layer_index: layer,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.streams.len() - 1
    }

    pub fn len(&self) -> usize {
        self.patches.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.nrows() == 0
    }

    fn pooled_final(&self) -> Array1<f64> {
        self.streams
            .last()
            .expect("at least one stream")
            .mean_axis(Axis(0))
            .expect("non-empty")
    }
}

/// Number of (time, frequency) patches after zero tail-padding.
pub fn patch_grid(config: &EncoderConfig, t_frames: usize, n_mels: usize) -> (usize, usize) {
    (t_frames.div_ceil(config.patch_t), n_mels.div_ceil(config.patch_f))
}

fn patchify(config: &EncoderConfig, f: &MelFeatures) -> (Array2<f64>, usize, usize) {
    let (tp, fp) = patch_grid(config, f.t_frames, f.n_mels);
    let (pt, pf) = (config.patch_t, config.patch_f);
    let mut out = Array2::zeros((tp * fp, pt * pf));
    for ti in 0..tp {
        for fi in 0..fp {
            let mut row = out.row_mut(ti * fp + fi);
            for i in 0..pt {
                let t = ti * pt + i;
                if t >= f.t_frames {
                    break;
                }
                for j in 0..pf {
                    let m = fi * pf + j;
                    if m < f.n_mels {
                        row[i * pf + j] = f.get(t, m);
                    }
                }
            }
        }
    }
    (out, tp, fp)
}

/// Applies block `k` (1-based) to a stream.
pub fn apply_block(params: &Parameters, k: usize, h: &Array2<f64>) -> Array2<f64> {
    let (_, out) = block_forward(params, k, h);
    out
}

fn block_forward(params: &Parameters, k: usize, h: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let mut z = h.dot(&params.view2(&format!("block{k}.w1")));
    z += &params.view1(&format!("block{k}.b1"));
    let a = z.mapv(f64::tanh);
    let mut out = a.dot(&params.view2(&format!("block{k}.w2")));
    out += &params.view1(&format!("block{k}.b2"));
    out += h;
    (a, out)
}

/// Full forward pass keeping every activation.
pub fn forward_trace(params: &Parameters, features: &MelFeatures) -> Trace {
    let (patches, t_patches, f_patches) = patchify(&params.config, features);
    let mut h0 = patches.dot(&params.view2("proj.weight"));
    h0 += &params.view1("proj.bias");
    let mut streams = Vec::with_capacity(params.config.n_layers + 1);
    let mut acts = Vec::with_capacity(params.config.n_layers);
    streams.push(h0);
    for k in 1..=params.config.n_layers {
        let (a, out) = block_forward(params, k, &streams[k - 1]);
        acts.push(a);
        streams.push(out);
    }
    Trace {
        t_patches,
        f_patches,
        patches,
        streams,
        acts,
    }
}

/// Output of block `layer`.
pub fn forward(
    params: &Parameters,
    features: &MelFeatures,
    layer: usize,
) -> Result<FrameEmbedding, EncoderError> {
    if layer == 0 || layer > params.config.n_layers {
        return Err(EncoderError::LayerOutOfRange(layer, params.config.n_layers));
    }
    forward_trace(params, features).tap(layer)
}

/// Tagging-head logits from a finished trace: `Linear(mean over L of final block)`.
pub fn head_logits(params: &Parameters, trace: &Trace) -> Result<Vec<f64>, EncoderError> {
    if params.config.n_classes == 0 {
        return Err(EncoderError::NoHead);
    }
    let mut logits = trace.pooled_final().dot(&params.view2("head.weight"));
    logits += &params.view1("head.bias");
    Ok(logits.to_vec())
}

/// Final-layer embedding and tagging logits.
pub fn forward_with_head(
    params: &Parameters,
    features: &MelFeatures,
) -> Result<(FrameEmbedding, Vec<f64>), EncoderError> {
    let trace = forward_trace(params, features);
    let logits = head_logits(params, &trace)?;
    Ok((trace.tap(params.config.n_layers)?, logits))
}

/// Upstream gradient: optional `L x D` gradients at any block output plus
/// optional gradient of the head logits.
#[derive(Debug, Clone, Default)]
pub struct Upstream {
    pub taps: Vec<(usize, Array2<f64>)>,
    pub logits: Option<Vec<f64>>,
}

impl Upstream {
    pub fn at_layer(layer: usize, grad: Array2<f64>) -> Self {
        Self {
            taps: vec![(layer, grad)],
            logits: None,
        }
    }

    pub fn logits(grad: Vec<f64>) -> Self {
        Self {
            taps: Vec::new(),
            logits: Some(grad),
        }
    }

    pub fn with_tap(mut self, layer: usize, grad: Array2<f64>) -> Self {
        self.taps.push((layer, grad));
        self
    }
}

/// Reverse-mode gradient for a recorded trace, as a Parameters-shaped flat vector.
pub fn backward_trace(
    params: &Parameters,
    trace: &Trace,
    upstream: &Upstream,
) -> Result<Vec<f64>, EncoderError> {
    let n = params.config.n_layers;
    let l = trace.len();
    let d = params.config.d_model;
    let mut grads = Parameters::zeros(&params.config)?;
    let mut tap_grads: Vec<Option<Array2<f64>>> = vec![None; n + 1];
    for (layer, g) in &upstream.taps {
        if *layer == 0 || *layer > n {
            return Err(EncoderError::LayerOutOfRange(*layer, n));
        }
        if g.dim() != (l, d) {
            return Err(EncoderError::ShapeMismatch(format!(
                "tap gradient {:?} vs embedding ({l}, {d})",
                g.dim()
            )));
        }
        match &mut tap_grads[*layer] {
            Some(acc) => *acc += g,
            slot => *slot = Some(g.clone()),
        }
    }

    let mut g: Array2<f64> = Array2::zeros((l, d));
    if let Some(dlogits) = &upstream.logits {
        if params.config.n_classes == 0 {
            return Err(EncoderError::NoHead);
        }
        if dlogits.len() != params.config.n_classes {
            return Err(EncoderError::ShapeMismatch(format!(
                "{} logit gradients for {} classes",
                dlogits.len(),
                params.config.n_classes
            )));
        }
        let dlogits = Array1::from(dlogits.clone());
        let pooled = trace.pooled_final();
        let dw = pooled
            .view()
            .insert_axis(Axis(1))
            .dot(&dlogits.view().insert_axis(Axis(0)));
        grads.view2_mut("head.weight").assign(&dw);
        grads
            .slice_mut("head.bias")
            .copy_from_slice(dlogits.as_slice().expect("contiguous"));
        let dpooled = params.view2("head.weight").dot(&dlogits) / l as f64;
        g += &dpooled;
    }

    for k in (1..=n).rev() {
        if let Some(tg) = &tap_grads[k] {
            g += tg;
        }
        let a = &trace.acts[k - 1];
        let h_in = &trace.streams[k - 1];
        grads
            .view2_mut(&format!("block{k}.w2"))
            .assign(&a.t().dot(&g));
        grads
            .slice_mut(&format!("block{k}.b2"))
            .copy_from_slice(g.sum_axis(Axis(0)).as_slice().expect("contiguous"));
        let da = g.dot(&params.view2(&format!("block{k}.w2")).t());
        let dz = da * &a.mapv(|v| 1.0 - v * v);
        grads
            .view2_mut(&format!("block{k}.w1"))
            .assign(&h_in.t().dot(&dz));
        grads
            .slice_mut(&format!("block{k}.b1"))
            .copy_from_slice(dz.sum_axis(Axis(0)).as_slice().expect("contiguous"));
        g += &dz.dot(&params.view2(&format!("block{k}.w1")).t());
    }

    grads
        .view2_mut("proj.weight")
        .assign(&trace.patches.t().dot(&g));
    grads
        .slice_mut("proj.bias")
        .copy_from_slice(g.sum_axis(Axis(0)).as_slice().expect("contiguous"));
    Ok(grads.values)
}

/// Recomputes the forward pass and returns the exact parameter gradient.
pub fn backward(
    params: &Parameters,
    features: &MelFeatures,
    upstream: &Upstream,
) -> Result<Vec<f64>, EncoderError> {
    backward_trace(params, &forward_trace(params, features), upstream)
}

/// Stream `layer` of a trace, where 0 is the projected patch stream.
pub fn stream(trace: &Trace, layer: usize) -> Array2<f64> {
    trace.streams[layer].clone()
}
