//! Coordinate MLP regressing SH transfer from (position, normal):
//! positional encoding, forward evaluation, reverse-mode gradients, and
//! the JSON model format.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bake::Normalization;
use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::sh::SHVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionalEncodingConfig {
    pub freq_pos: usize,
    pub freq_norm: usize,
    pub include_raw: bool,
}

impl Default for PositionalEncodingConfig {
    fn default() -> Self {
        PositionalEncodingConfig { freq_pos: 6, freq_norm: 4, include_raw: true }
    }
}

impl PositionalEncodingConfig {
    pub fn encoded_dim(&self) -> usize {
        let raw = usize::from(self.include_raw);
        3 * (raw + 2 * self.freq_pos) + 3 * (raw + 2 * self.freq_norm)
    }
}

/// Write the encoding of (p, n) into `out` (length = encoded_dim()).
/// `p` must already be normalized into [-1,1]^3.
pub fn positional_encode(
    p: Vec3,
    n: Vec3,
    cfg: &PositionalEncodingConfig,
    out: &mut [f64],
) -> Result<()> {
    debug_assert_eq!(out.len(), cfg.encoded_dim());
    // Slack covers surface points that sit a ray-epsilon outside the
    // declared bounds (e.g. SDF projections); real normalization bugs
    // are off by O(1), not 1e-3.
    if p.x.abs() > 1.0 + 1e-3 || p.y.abs() > 1.0 + 1e-3 || p.z.abs() > 1.0 + 1e-3 {
        return Err(Error::input(format!(
            "position ({}, {}, {}) outside [-1,1]^3 — normalization mismatch",
            p.x, p.y, p.z
        )));
    }
    let p = p.min(Vec3 { x: 1.0, y: 1.0, z: 1.0 }).max(Vec3 { x: -1.0, y: -1.0, z: -1.0 });
    let mut k = 0;
    let mut push = |v: f64, out: &mut [f64]| {
        out[k] = v;
        k += 1;
    };
    for (v, freqs) in [(p, cfg.freq_pos), (n, cfg.freq_norm)] {
        if cfg.include_raw {
            push(v.x, out);
            push(v.y, out);
            push(v.z, out);
        }
        let mut base = std::f64::consts::PI;
        for _ in 0..freqs {
            let s = v * base;
            push(s.x.sin(), out);
            push(s.y.sin(), out);
            push(s.z.sin(), out);
            push(s.x.cos(), out);
            push(s.y.cos(), out);
            push(s.z.cos(), out);
            base *= 2.0;
        }
    }
    debug_assert_eq!(k, out.len());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { alpha: f64 },
    Tanh,
    /// Test-only escape hatch for convex optimizer fixtures; never
    /// serialized.
    Identity,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match *self {
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    x
                } else {
                    alpha * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation x and activated y.
    #[inline]
    fn derivative(&self, x: f64, y: f64) -> f64 {
        match *self {
            Activation::LeakyRelu { alpha } => {
                if x >= 0.0 {
                    1.0
                } else {
                    alpha
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Dense affine layer, weights row-major out x in.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Layer {
        Layer { rows, cols, w: vec![0.0; rows * cols], b: vec![0.0; rows] }
    }

    pub fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }

    /// y = W x + b, four accumulators per row to keep the FP dependency
    /// chain short enough for vectorization.
    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        for (r, out) in y.iter_mut().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = [0.0f64; 4];
            let mut chunks = row.chunks_exact(4).zip(x.chunks_exact(4));
            for (rc, xc) in &mut chunks {
                acc[0] += rc[0] * xc[0];
                acc[1] += rc[1] * xc[1];
                acc[2] += rc[2] * xc[2];
                acc[3] += rc[3] * xc[3];
            }
            let mut total = (acc[0] + acc[1]) + (acc[2] + acc[3]);
            let tail = self.cols - self.cols % 4;
            for i in tail..self.cols {
                total += row[i] * x[i];
            }
            *out = total + self.b[r];
        }
    }

    /// x_grad = W^T delta (accumulating axpy per row).
    fn matvec_transpose(&self, delta: &[f64], x_grad: &mut [f64]) {
        x_grad.fill(0.0);
        for (r, &d) in delta.iter().enumerate() {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            for (g, &w) in x_grad.iter_mut().zip(row) {
                *g += w * d;
            }
        }
    }

    /// grad.w += delta (outer) x; grad.b += delta.
    fn accumulate_outer(&self, delta: &[f64], x: &[f64], grad: &mut Layer) {
        for (r, &d) in delta.iter().enumerate() {
            let gw = &mut grad.w[r * self.cols..(r + 1) * self.cols];
            for (g, &xv) in gw.iter_mut().zip(x) {
                *g += d * xv;
            }
            grad.b[r] += d;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    pub pe: PositionalEncodingConfig,
    pub norm: Normalization,
    /// Output scale s: predictions are s * tanh(z).
    pub scale: f64,
    pub hidden: Activation,
    pub output: Activation,
    pub sh_order: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct MlpConfig {
    pub width: usize,
    pub depth: usize,
    pub alpha: f64,
    pub pe: PositionalEncodingConfig,
}

impl Default for MlpConfig {
    fn default() -> Self {
        MlpConfig { width: 64, depth: 4, alpha: 0.01, pe: PositionalEncodingConfig::default() }
    }
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(16..=512).contains(&self.width) {
            return Err(Error::input(format!("width {} outside [16, 512]", self.width)));
        }
        if self.depth < 2 {
            return Err(Error::input("depth must be at least 2"));
        }
        Ok(())
    }
}

/// Standard normal draw via Box-Muller on a uniform RNG.
fn normal_draw(rng: &mut impl rand::Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 <= f64::MIN_POSITIVE {
            continue;
        }
        let u2: f64 = rng.gen();
        return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
    }
}

impl MlpModel {
    /// He-initialized model; biases zero, deterministic in the seed.
    pub fn init(cfg: &MlpConfig, norm: Normalization, scale: f64, sh_order: usize, seed: u64) -> Result<MlpModel> {
        cfg.validate()?;
        if scale <= 0.0 || !scale.is_finite() {
            return Err(Error::input("scale must be positive and finite"));
        }
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let out_dim = sh_order * sh_order;
        let mut dims = vec![cfg.pe.encoded_dim()];
        for _ in 0..cfg.depth - 1 {
            dims.push(cfg.width);
        }
        dims.push(out_dim);
        let mut layers = Vec::new();
        for win in dims.windows(2) {
            let (cols, rows) = (win[0], win[1]);
            let std = (2.0 / (cols as f64 * (1.0 + cfg.alpha * cfg.alpha))).sqrt();
            let mut layer = Layer::zeros(rows, cols);
            for w in &mut layer.w {
                *w = std * normal_draw(&mut rng);
            }
            layers.push(layer);
        }
        Ok(MlpModel {
            layers,
            pe: cfg.pe,
            norm,
            scale,
            hidden: Activation::LeakyRelu { alpha: cfg.alpha },
            output: Activation::Tanh,
            sh_order,
        })
    }

    pub fn encoded_dim(&self) -> usize {
        self.pe.encoded_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.sh_order * self.sh_order
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub(crate) fn check_dims(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::format("model has no layers"));
        }
        let mut dim = self.encoded_dim();
        for (i, l) in self.layers.iter().enumerate() {
            if l.cols != dim {
                return Err(Error::format(format!(
                    "layer {i} expects {} inputs but receives {dim}",
                    l.cols
                )));
            }
            if l.w.len() != l.rows * l.cols || l.b.len() != l.rows {
                return Err(Error::format(format!("layer {i} parameter lengths are inconsistent")));
            }
            dim = l.rows;
        }
        if dim != self.out_dim() {
            return Err(Error::format(format!(
                "final layer emits {dim} values, expected {} (order {})",
                self.out_dim(),
                self.sh_order
            )));
        }
        Ok(())
    }

    /// Run the network on a pre-encoded input, writing the *unscaled*
    /// (post-output-activation) prediction into `out`. Scratch buffers
    /// avoid per-call allocation on hot paths.
    pub fn forward_encoded(&self, enc: &[f64], scratch: &mut ForwardScratch, out: &mut [f64]) -> Result<()> {
        let (mut cur, mut next) = (&mut scratch.a, &mut scratch.b);
        cur.clear();
        cur.extend_from_slice(enc);
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            next.resize(layer.rows, 0.0);
            layer.matvec(cur, next);
            let act = if i == last { self.output } else { self.hidden };
            let mut finite = true;
            for v in next.iter_mut() {
                *v = act.apply(*v);
                finite &= v.is_finite();
            }
            if !finite {
                return Err(Error::numeric(i, "non-finite activation"));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        out.copy_from_slice(cur);
        Ok(())
    }

    /// Full prediction: normalize position, encode, run, scale.
    pub fn forward(&self, p: Vec3, n: Vec3) -> Result<SHVector> {
        let mut scratch = ForwardScratch::default();
        let mut enc = vec![0.0; self.encoded_dim()];
        positional_encode(self.norm.to_unit(p), n.normalized(), &self.pe, &mut enc)?;
        let mut out = vec![0.0; self.out_dim()];
        self.forward_encoded(&enc, &mut scratch, &mut out)?;
        for v in &mut out {
            *v *= self.scale;
        }
        SHVector::new(self.sh_order, out)
    }

    /// As `forward` but reusing caller buffers; writes the scaled
    /// prediction into `out`.
    pub fn predict_into(
        &self,
        p: Vec3,
        n: Vec3,
        scratch: &mut ForwardScratch,
        out: &mut [f64],
    ) -> Result<()> {
        let mut enc = std::mem::take(&mut scratch.enc);
        enc.resize(self.encoded_dim(), 0.0);
        positional_encode(self.norm.to_unit(p), n.normalized(), &self.pe, &mut enc)?;
        self.forward_encoded(&enc, scratch, out)?;
        scratch.enc = enc;
        for v in out.iter_mut() {
            *v *= self.scale;
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct ForwardScratch {
    a: Vec<f64>,
    b: Vec<f64>,
    enc: Vec<f64>,
}

/// Per-layer parameter gradients, same shapes as the model's layers.
pub type Gradients = Vec<Layer>;

pub fn zero_gradients(model: &MlpModel) -> Gradients {
    model.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect()
}

pub fn add_gradients(into: &mut Gradients, from: &Gradients) {
    for (a, b) in into.iter_mut().zip(from) {
        for (x, y) in a.w.iter_mut().zip(&b.w) {
            *x += y;
        }
        for (x, y) in a.b.iter_mut().zip(&b.b) {
            *x += y;
        }
    }
}

/// Mean l1 loss and parameter gradients over a batch of pre-encoded
/// inputs and scale-normalized targets. Targets are row-major
/// [batch x out_dim], inputs [batch x encoded_dim].
pub fn loss_and_grad(
    model: &MlpModel,
    inputs: &[f64],
    targets: &[f64],
    grads: &mut Gradients,
) -> Result<f64> {
    let in_dim = model.encoded_dim();
    let out_dim = model.out_dim();
    debug_assert_eq!(inputs.len() % in_dim, 0);
    let batch = inputs.len() / in_dim;
    debug_assert_eq!(targets.len(), batch * out_dim);
    debug_assert!(batch > 0);

    for g in grads.iter_mut() {
        g.w.fill(0.0);
        g.b.fill(0.0);
    }

    let n_layers = model.layers.len();
    // Stored forward state per layer: pre-activations and activations.
    let mut pre: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.rows]).collect();
    let mut act: Vec<Vec<f64>> = model.layers.iter().map(|l| vec![0.0; l.rows]).collect();
    let mut delta: Vec<f64> = Vec::new();
    let mut delta_prev: Vec<f64> = Vec::new();

    let inv = 1.0 / (batch * out_dim) as f64;
    let mut loss = 0.0;

    for s in 0..batch {
        let x = &inputs[s * in_dim..(s + 1) * in_dim];
        let target = &targets[s * out_dim..(s + 1) * out_dim];

        // Forward, keeping every layer's state.
        for i in 0..n_layers {
            let input_slice: &[f64] = if i == 0 { x } else { &act[i - 1] };
            model.layers[i].matvec(input_slice, &mut pre[i]);
            let a = if i == n_layers - 1 { model.output } else { model.hidden };
            for (p_v, a_v) in pre[i].iter().zip(act[i].iter_mut()) {
                *a_v = a.apply(*p_v);
            }
            if !act[i].iter().all(|v| v.is_finite()) {
                return Err(Error::numeric(i, "non-finite activation"));
            }
        }

        // l1 loss and output delta.
        delta.resize(out_dim, 0.0);
        for k in 0..out_dim {
            let diff = act[n_layers - 1][k] - target[k];
            loss += diff.abs() * inv;
            // Subgradient 0 at the kink.
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            let d_act = model.output.derivative(pre[n_layers - 1][k], act[n_layers - 1][k]);
            delta[k] = sign * inv * d_act;
        }

        // Backward.
        for i in (0..n_layers).rev() {
            let input_slice: &[f64] = if i == 0 { x } else { &act[i - 1] };
            model.layers[i].accumulate_outer(&delta, input_slice, &mut grads[i]);
            if i > 0 {
                delta_prev.resize(model.layers[i].cols, 0.0);
                model.layers[i].matvec_transpose(&delta, &mut delta_prev);
                let a = model.hidden;
                for (d, (p_v, a_v)) in delta_prev.iter_mut().zip(pre[i - 1].iter().zip(&act[i - 1])) {
                    *d *= a.derivative(*p_v, *a_v);
                }
                std::mem::swap(&mut delta, &mut delta_prev);
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::numeric(n_layers - 1, "non-finite loss"));
    }
    Ok(loss)
}

// --- JSON model format -------------------------------------------------

#[derive(Serialize, Deserialize)]
struct LayerJson {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct HiddenActivationJson {
    #[serde(rename = "type")]
    kind: String,
    alpha: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelJson {
    version: u32,
    sh_order: usize,
    pe: PositionalEncodingConfig,
    norm: Normalization,
    scale: f64,
    layers: Vec<LayerJson>,
    hidden_activation: HiddenActivationJson,
    output_activation: String,
}

pub fn model_to_json(model: &MlpModel) -> Result<String> {
    let alpha = match model.hidden {
        Activation::LeakyRelu { alpha } => alpha,
        _ => return Err(Error::input("only leaky-relu hidden activations are serializable")),
    };
    if model.output != Activation::Tanh {
        return Err(Error::input("only tanh output activations are serializable"));
    }
    let doc = ModelJson {
        version: 1,
        sh_order: model.sh_order,
        pe: model.pe,
        norm: model.norm,
        scale: model.scale,
        layers: model
            .layers
            .iter()
            .map(|l| LayerJson { rows: l.rows, cols: l.cols, weights: l.w.clone(), bias: l.b.clone() })
            .collect(),
        hidden_activation: HiddenActivationJson { kind: "leaky_relu".into(), alpha },
        output_activation: "tanh".into(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn model_from_json(text: &str) -> Result<MlpModel> {
    let doc: ModelJson = serde_json::from_str(text)?;
    if doc.version != 1 {
        return Err(Error::format(format!("unsupported model version {}", doc.version)));
    }
    if !(1..=8).contains(&doc.sh_order) {
        return Err(Error::format(format!("model sh_order {} outside [1,8]", doc.sh_order)));
    }
    if doc.hidden_activation.kind != "leaky_relu" {
        return Err(Error::format(format!(
            "unknown hidden activation {:?}",
            doc.hidden_activation.kind
        )));
    }
    if !doc.hidden_activation.alpha.is_finite() {
        return Err(Error::format("hidden activation alpha must be finite"));
    }
    if doc.output_activation != "tanh" {
        return Err(Error::format(format!(
            "unknown output activation {:?}",
            doc.output_activation
        )));
    }
    if !(doc.scale > 0.0 && doc.scale.is_finite()) {
        return Err(Error::format("model scale must be positive and finite"));
    }
    if !doc.norm.center.is_finite() || !(doc.norm.half_extent > 0.0 && doc.norm.half_extent.is_finite()) {
        return Err(Error::format("model normalization must be finite with positive half extent"));
    }
    if doc.pe.freq_pos > 32 || doc.pe.freq_norm > 32 {
        return Err(Error::format("encoding frequency counts are implausibly large"));
    }
    const MAX_DIM: usize = 8192;
    let mut layers = Vec::with_capacity(doc.layers.len());
    for (i, l) in doc.layers.into_iter().enumerate() {
        if l.rows == 0 || l.cols == 0 || l.rows > MAX_DIM || l.cols > MAX_DIM {
            return Err(Error::format(format!("layer {i} dimensions out of range")));
        }
        if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
            return Err(Error::format(format!("layer {i} parameter lengths are inconsistent")));
        }
        if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
            return Err(Error::format(format!("layer {i} has non-finite parameters")));
        }
        layers.push(Layer { rows: l.rows, cols: l.cols, w: l.weights, b: l.bias });
    }
    let model = MlpModel {
        layers,
        pe: doc.pe,
        norm: doc.norm,
        scale: doc.scale,
        hidden: Activation::LeakyRelu { alpha: doc.hidden_activation.alpha },
        output: Activation::Tanh,
        sh_order: doc.sh_order,
    };
    model.check_dims()?;
    Ok(model)
}

pub fn save_model(model: &MlpModel, path: &Path) -> Result<()> {
    std::fs::write(path, model_to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MlpModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
