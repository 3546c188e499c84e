//! Fragment-shader code generation: trained weights are tiled into 4x4
//! matrix constants and emitted as self-contained GLSL reproducing the
//! network forward pass, plus a host-side f32 blocked evaluator that
//! stands in for GPU execution in tests.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::mlp::{Activation, Layer, MlpModel, PositionalEncodingConfig};
use crate::sh::{sh_index, SHVector};
use crate::triple::{default_tau_quadrature, triple_product_tensor};

/// Widest hidden layer the emitted shader may carry; larger networks
/// exhaust constant storage on real drivers.
pub const MAX_SHADER_WIDTH: usize = 128;

/// A weight matrix tiled into 4x4 blocks (row-blocks outer, column-blocks
/// inner), plus the bias padded to a multiple of 4. Values stay f64 so
/// packing is exactly invertible; the f32 cast happens at emission and
/// evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayer {
    pub rows: usize,
    pub cols: usize,
    /// ceil(rows/4) * ceil(cols/4) blocks, each stored column-major to
    /// match the GLSL mat4 constructor.
    pub blocks: Vec<[f64; 16]>,
    pub bias: Vec<f64>,
}

impl PackedLayer {
    pub fn row_blocks(&self) -> usize {
        self.rows.div_ceil(4)
    }

    pub fn col_blocks(&self) -> usize {
        self.cols.div_ceil(4)
    }
}

#[derive(Debug, Clone)]
pub struct PackedModel {
    pub layers: Vec<PackedLayer>,
    pub pe: PositionalEncodingConfig,
    pub norm: crate::bake::Normalization,
    pub scale: f64,
    pub alpha: f64,
    pub sh_order: usize,
}

fn pack_layer(layer: &Layer) -> PackedLayer {
    let br = layer.rows.div_ceil(4);
    let bc = layer.cols.div_ceil(4);
    let mut blocks = vec![[0.0; 16]; br * bc];
    for r in 0..layer.rows {
        for c in 0..layer.cols {
            let block = &mut blocks[(r / 4) * bc + (c / 4)];
            // Column-major within the block.
            block[(c % 4) * 4 + (r % 4)] = layer.w[r * layer.cols + c];
        }
    }
    let mut bias = vec![0.0; br * 4];
    bias[..layer.rows].copy_from_slice(&layer.b);
    PackedLayer { rows: layer.rows, cols: layer.cols, blocks, bias }
}

/// Reassemble the dense layer from its blocks (test oracle for the
/// pack/unpack identity).
pub fn unpack_layer(packed: &PackedLayer) -> Layer {
    let bc = packed.col_blocks();
    let mut layer = Layer::zeros(packed.rows, packed.cols);
    for r in 0..packed.rows {
        for c in 0..packed.cols {
            layer.w[r * packed.cols + c] = packed.blocks[(r / 4) * bc + (c / 4)][(c % 4) * 4 + (r % 4)];
        }
    }
    layer.b.copy_from_slice(&packed.bias[..packed.rows]);
    layer
}

pub fn pack_model(model: &MlpModel) -> Result<PackedModel> {
    model.check_dims()?;
    let alpha = match model.hidden {
        Activation::LeakyRelu { alpha } => alpha,
        _ => return Err(Error::input("only leaky-relu hidden activations can be packed")),
    };
    Ok(PackedModel {
        layers: model.layers.iter().map(pack_layer).collect(),
        pe: model.pe,
        norm: model.norm,
        scale: model.scale,
        alpha,
        sh_order: model.sh_order,
    })
}

/// Evaluate the packed model the way the shader does: f32 arithmetic on
/// padded 4-wide blocks, f32 encoding, f32 activations.
pub fn reference_eval_packed(packed: &PackedModel, p: Vec3, n: Vec3) -> Result<SHVector> {
    // Normalize and encode in f32.
    let pu = packed.norm.to_unit(p);
    let nn = n.normalized();
    let clamp = |v: f64| (v as f32).clamp(-1.0, 1.0);
    let (px, py, pz) = (clamp(pu.x), clamp(pu.y), clamp(pu.z));
    let (nx, ny, nz) = (nn.x as f32, nn.y as f32, nn.z as f32);

    let enc_dim = packed.pe.encoded_dim();
    let padded = enc_dim.div_ceil(4) * 4;
    let mut x: Vec<f32> = Vec::with_capacity(padded);
    for (v, freqs) in [([px, py, pz], packed.pe.freq_pos), ([nx, ny, nz], packed.pe.freq_norm)] {
        if packed.pe.include_raw {
            x.extend_from_slice(&v);
        }
        let mut base = std::f32::consts::PI;
        for _ in 0..freqs {
            for c in v {
                x.push((base * c).sin());
            }
            for c in v {
                x.push((base * c).cos());
            }
            base *= 2.0;
        }
    }
    debug_assert_eq!(x.len(), enc_dim);
    x.resize(padded, 0.0);

    let last = packed.layers.len() - 1;
    for (li, layer) in packed.layers.iter().enumerate() {
        let (br, bc) = (layer.row_blocks(), layer.col_blocks());
        if x.len() != bc * 4 {
            return Err(Error::input(format!(
                "packed layer {li} expects {} padded inputs, got {}",
                bc * 4,
                x.len()
            )));
        }
        let mut y = layer.bias.iter().map(|&b| b as f32).collect::<Vec<f32>>();
        for bi in 0..br {
            let acc = &mut y[bi * 4..(bi + 1) * 4];
            for bj in 0..bc {
                let block = &layer.blocks[bi * bc + bj];
                let xin = &x[bj * 4..(bj + 1) * 4];
                // mat4 * vec4, column-major.
                for c in 0..4 {
                    let xc = xin[c];
                    for r in 0..4 {
                        acc[r] += (block[c * 4 + r] as f32) * xc;
                    }
                }
            }
        }
        let alpha = packed.alpha as f32;
        for (i, v) in y.iter_mut().enumerate() {
            // Padding rows stay zero through both activations.
            *v = if li == last {
                v.tanh()
            } else if *v >= 0.0 {
                *v
            } else {
                alpha * *v
            };
            if !v.is_finite() {
                return Err(Error::numeric(li, format!("non-finite f32 activation at slot {i}")));
            }
        }
        x = y;
    }
    let out_dim = packed.sh_order * packed.sh_order;
    let scale = packed.scale as f32;
    let coeffs = x[..out_dim].iter().map(|&v| (v * scale) as f64).collect();
    SHVector::new(packed.sh_order, coeffs)
}

#[derive(Debug, Clone)]
pub struct EmitOptions {
    pub glsl_version: u32,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions { glsl_version: 330 }
    }
}

fn lit(v: f64) -> String {
    let f = v as f32;
    let s = format!("{:?}", f);
    // GLSL wants a decimal point or exponent in float literals; Debug
    // for f32 already prints one except for the likes of "inf".
    debug_assert!(s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN"));
    s
}

/// Frozen order-4 Cartesian SH constants for the in-shader basis
/// evaluation (bands 0..3).
const SH_EVAL_BODY: &str = "    float x = d.x, y = d.y, z = d.z;
    sh[0] = 0.28209479;
    sh[1] = 0.48860252 * y;
    sh[2] = 0.48860252 * z;
    sh[3] = 0.48860252 * x;
    sh[4] = 1.0925484 * x * y;
    sh[5] = 1.0925484 * y * z;
    sh[6] = 0.31539157 * (3.0 * z * z - 1.0);
    sh[7] = 1.0925484 * x * z;
    sh[8] = 0.54627424 * (x * x - y * y);
    sh[9] = 0.59004359 * y * (3.0 * x * x - y * y);
    sh[10] = 2.8906114 * x * y * z;
    sh[11] = 0.45704580 * y * (5.0 * z * z - 1.0);
    sh[12] = 0.37317633 * z * (5.0 * z * z - 3.0);
    sh[13] = 0.45704580 * x * (5.0 * z * z - 1.0);
    sh[14] = 1.4453057 * z * (x * x - y * y);
    sh[15] = 0.59004359 * x * (x * x - 3.0 * y * y);
";

/// Emit a self-contained fragment shader reproducing forward() for this
/// model, with a triple-product shading entry point. Deterministic text
/// for a given model.
pub fn emit_shader(model: &MlpModel, opts: &EmitOptions) -> Result<String> {
    let packed = pack_model(model)?;
    let hidden_width = model.layers[..model.layers.len() - 1].iter().map(|l| l.rows).max().unwrap_or(0);
    if hidden_width > MAX_SHADER_WIDTH {
        return Err(Error::input(format!(
            "hidden width {hidden_width} exceeds the shader limit of {MAX_SHADER_WIDTH}"
        )));
    }
    if model.sh_order != 4 {
        return Err(Error::input(format!(
            "shader emission supports order 4 (16 coefficients), model has order {}",
            model.sh_order
        )));
    }
    let n_coeffs = model.out_dim();
    let eps = 1e-6;
    let tau = triple_product_tensor(model.sh_order, default_tau_quadrature(model.sh_order), eps)?;
    // Collect the nonzero triple-product terms up front (emitted later).
    let mut tau_terms: Vec<(usize, usize, usize, f64)> = Vec::new();
    for k in 0..n_coeffs {
        for i in 0..n_coeffs {
            for j in 0..n_coeffs {
                let v = tau.get(i, j, k);
                if v.abs() > eps {
                    tau_terms.push((k, i, j, v));
                }
            }
        }
    }

    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(w, "#version {}", opts.glsl_version);
    let _ = writeln!(
        w,
        "\
// Generated transfer-field fragment shader. Do not edit.
//
// Conventions:
//   - mat4 constants are column-major (GLSL constructor order); vectors
//     are column vectors, applied as M * v.
//   - Each weight matrix (rows x cols) is tiled into 4x4 blocks named
//     W<layer>_<rowblock>_<colblock>; row and column counts are padded
//     to multiples of 4 with zeros. Biases are vec4 constants
//     B<layer>_<rowblock>.
//   - The network maps (position, normal) to {n_coeffs} spherical-harmonic
//     transfer coefficients; lighting arrives as uniforms projected in
//     the same basis."
    );
    let _ = writeln!(w);
    let _ = writeln!(w, "uniform vec3 u_light_sh[{n_coeffs}]; // environment radiance SH (RGB)");
    let _ = writeln!(w, "uniform vec4 u_rho;       // zonal BRDF coefficients per band");
    let _ = writeln!(w, "uniform vec3 u_albedo;");
    let _ = writeln!(w, "uniform vec3 u_eye;");
    let _ = writeln!(w, "uniform int u_mode;       // 0 = diffuse, 1 = glossy");
    let _ = writeln!(w);
    let _ = writeln!(w, "in vec3 v_position;");
    let _ = writeln!(w, "in vec3 v_normal;");
    let _ = writeln!(w, "out vec4 frag_color;");
    let _ = writeln!(w);
    let _ = writeln!(
        w,
        "const vec3 NORM_CENTER = vec3({}, {}, {});",
        lit(model.norm.center.x),
        lit(model.norm.center.y),
        lit(model.norm.center.z)
    );
    let _ = writeln!(w, "const float NORM_HALF = {};", lit(model.norm.half_extent));
    let _ = writeln!(w, "const float OUT_SCALE = {};", lit(model.scale));
    let _ = writeln!(w, "const float LEAKY_ALPHA = {};", lit(packed.alpha));
    let _ = writeln!(w);

    // Matrix and bias constants.
    for (li, layer) in packed.layers.iter().enumerate() {
        let (br, bc) = (layer.row_blocks(), layer.col_blocks());
        let _ = writeln!(w, "// layer {li}: {} x {} in {} blocks", layer.rows, layer.cols, br * bc);
        for bi in 0..br {
            for bj in 0..bc {
                let block = &layer.blocks[bi * bc + bj];
                let vals: Vec<String> = block.iter().map(|&v| lit(v)).collect();
                let _ = writeln!(w, "const mat4 W{li}_{bi}_{bj} = mat4({});", vals.join(", "));
            }
        }
        for bi in 0..br {
            let b = &layer.bias[bi * 4..(bi + 1) * 4];
            let _ = writeln!(
                w,
                "const vec4 B{li}_{bi} = vec4({}, {}, {}, {});",
                lit(b[0]),
                lit(b[1]),
                lit(b[2]),
                lit(b[3])
            );
        }
    }
    let _ = writeln!(w);

    let _ = writeln!(w, "vec4 leaky(vec4 v) {{");
    let _ = writeln!(w, "    return mix(LEAKY_ALPHA * v, v, step(vec4(0.0), v));");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    // Positional encoding into padded vec4 blocks.
    let enc_dim = model.pe.encoded_dim();
    let enc_blocks = enc_dim.div_ceil(4);
    let enc_pad = enc_blocks * 4;
    let _ = writeln!(w, "void encode(vec3 p, vec3 n, out vec4 e[{enc_blocks}]) {{");
    let _ = writeln!(w, "    float enc[{enc_pad}];");
    let _ = writeln!(w, "    int k = 0;");
    let _ = writeln!(w, "    vec3 q = clamp((p - NORM_CENTER) / NORM_HALF, vec3(-1.0), vec3(1.0));");
    for (var, freqs) in [("q", model.pe.freq_pos), ("n", model.pe.freq_norm)] {
        if model.pe.include_raw {
            let _ = writeln!(w, "    enc[k++] = {var}.x; enc[k++] = {var}.y; enc[k++] = {var}.z;");
        }
        if freqs > 0 {
            let _ = writeln!(w, "    float b_{var} = 3.14159265;");
            let _ = writeln!(w, "    for (int f = 0; f < {freqs}; ++f) {{");
            let _ = writeln!(w, "        vec3 sv = sin(b_{var} * {var});");
            let _ = writeln!(w, "        vec3 cv = cos(b_{var} * {var});");
            let _ = writeln!(w, "        enc[k++] = sv.x; enc[k++] = sv.y; enc[k++] = sv.z;");
            let _ = writeln!(w, "        enc[k++] = cv.x; enc[k++] = cv.y; enc[k++] = cv.z;");
            let _ = writeln!(w, "        b_{var} *= 2.0;");
            let _ = writeln!(w, "    }}");
        }
    }
    let _ = writeln!(w, "    for (int i = k; i < {enc_pad}; ++i) enc[i] = 0.0;");
    for b in 0..enc_blocks {
        let _ = writeln!(
            w,
            "    e[{b}] = vec4(enc[{}], enc[{}], enc[{}], enc[{}]);",
            b * 4,
            b * 4 + 1,
            b * 4 + 2,
            b * 4 + 3
        );
    }
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    // Blocked forward pass, fully unrolled.
    let _ = writeln!(w, "void eval_transfer(vec3 p, vec3 n, out float t[{n_coeffs}]) {{");
    let _ = writeln!(w, "    vec4 x0[{enc_blocks}];");
    let _ = writeln!(w, "    encode(p, n, x0);");
    let mut in_name = "x0".to_string();
    for (li, layer) in packed.layers.iter().enumerate() {
        let (br, bc) = (layer.row_blocks(), layer.col_blocks());
        let out_name = format!("x{}", li + 1);
        let _ = writeln!(w, "    vec4 {out_name}[{br}];");
        for bi in 0..br {
            let mut line = format!("    {out_name}[{bi}] = B{li}_{bi}");
            for bj in 0..bc {
                let _ = write!(line, " + W{li}_{bi}_{bj} * {in_name}[{bj}]");
            }
            let _ = writeln!(w, "{line};");
        }
        let last = li + 1 == packed.layers.len();
        for bi in 0..br {
            if last {
                let _ = writeln!(w, "    {out_name}[{bi}] = tanh({out_name}[{bi}]) * OUT_SCALE;");
            } else {
                let _ = writeln!(w, "    {out_name}[{bi}] = leaky({out_name}[{bi}]);");
            }
        }
        in_name = out_name;
    }
    for i in 0..n_coeffs {
        let _ = writeln!(w, "    t[{i}] = {in_name}[{}][{}];", i / 4, i % 4);
    }
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    // Order-4 SH basis for the glossy reflection lookup.
    let _ = writeln!(w, "void sh_eval(vec3 d, out float sh[{n_coeffs}]) {{");
    let _ = write!(w, "{SH_EVAL_BODY}");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    let _ = writeln!(w, "vec3 shade_diffuse(float t[{n_coeffs}]) {{");
    let _ = writeln!(w, "    vec3 acc = vec3(0.0);");
    let _ = writeln!(w, "    for (int i = 0; i < {n_coeffs}; ++i) acc += t[i] * u_light_sh[i];");
    let _ = writeln!(w, "    return max(vec3(0.0), u_albedo * acc / 3.14159265);");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    // Triple product: H_k = sum_ij tau_ijk T_i L_j, nonzero terms only.
    let _ = writeln!(
        w,
        "// transferred radiance via the triple-product tensor ({} nonzero terms)",
        tau_terms.len()
    );
    let _ = writeln!(w, "vec3 shade_glossy(float t[{n_coeffs}], vec3 r) {{");
    let _ = writeln!(w, "    vec3 h[{n_coeffs}];");
    let _ = writeln!(w, "    for (int i = 0; i < {n_coeffs}; ++i) h[i] = vec3(0.0);");
    for &(k, i, j, v) in &tau_terms {
        let _ = writeln!(w, "    h[{k}] += {} * t[{i}] * u_light_sh[{j}];", lit(v));
    }
    // Zonal convolution with the BRDF lobe, band by band.
    for l in 0..model.sh_order {
        for m in 0..=2 * l as i64 {
            let idx = sh_index(l, m - l as i64);
            let _ = writeln!(w, "    h[{idx}] *= u_rho[{l}];");
        }
    }
    let _ = writeln!(w, "    float sh[{n_coeffs}];");
    let _ = writeln!(w, "    sh_eval(r, sh);");
    let _ = writeln!(w, "    vec3 acc = vec3(0.0);");
    let _ = writeln!(w, "    for (int i = 0; i < {n_coeffs}; ++i) acc += h[i] * sh[i];");
    let _ = writeln!(w, "    return max(vec3(0.0), u_albedo * acc);");
    let _ = writeln!(w, "}}");
    let _ = writeln!(w);

    let _ = writeln!(w, "void main() {{");
    let _ = writeln!(w, "    vec3 n = normalize(v_normal);");
    let _ = writeln!(w, "    float t[{n_coeffs}];");
    let _ = writeln!(w, "    eval_transfer(v_position, n, t);");
    let _ = writeln!(w, "    if (u_mode == 0) {{");
    let _ = writeln!(w, "        frag_color = vec4(shade_diffuse(t), 1.0);");
    let _ = writeln!(w, "    }} else {{");
    let _ = writeln!(w, "        vec3 wo = normalize(u_eye - v_position);");
    let _ = writeln!(w, "        vec3 r = 2.0 * dot(n, wo) * n - wo;");
    let _ = writeln!(w, "        frag_color = vec4(shade_glossy(t, r), 1.0);");
    let _ = writeln!(w, "    }}");
    let _ = writeln!(w, "}}");
    Ok(s)
}
