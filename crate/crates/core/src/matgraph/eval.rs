//! Graph evaluation and the reverse-mode pullback. Evaluation is pure and
//! deterministic: identical (graph, theta, resolution) produce bit-identical
//! texture sets. The pullback replays the node DAG in reverse, accumulating
//! jacobian-transpose products per node at texture granularity, so one
//! backward pass costs O(nodes * texels) independent of the theta count.

use crate::error::{Error, Result};
use crate::math::Vec3;

use super::{BlendMode, MaterialGraph, NodeKind, TextureSet};

/// Scalar or 3-channel texture buffer.
#[derive(Debug, Clone)]
pub(crate) enum Buf {
    Scalar(Vec<f64>),
    Rgb(Vec<[f64; 3]>),
}

impl Buf {
    fn len(&self) -> usize {
        match self {
            Buf::Scalar(v) => v.len(),
            Buf::Rgb(v) => v.len(),
        }
    }

    fn zeros_like(&self) -> Buf {
        match self {
            Buf::Scalar(v) => Buf::Scalar(vec![0.0; v.len()]),
            Buf::Rgb(v) => Buf::Rgb(vec![[0.0; 3]; v.len()]),
        }
    }

    /// Broadcast to rgb view at texel i.
    fn rgb_at(&self, i: usize) -> [f64; 3] {
        match self {
            Buf::Scalar(v) => [v[i]; 3],
            Buf::Rgb(v) => v[i],
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    /// One entry per parameter whose stored value fell outside its bounds and
    /// was clamped for evaluation.
    pub clamp_warnings: Vec<String>,
}

/// Texture-space cotangents fed into [`Pullback::pull`]. Channels not being
/// differentiated may be left empty.
#[derive(Debug, Clone, Default)]
pub struct TextureCotangent {
    pub albedo: Vec<[f64; 3]>,
    pub normal: Vec<[f64; 3]>,
    pub roughness: Vec<f64>,
    pub transmission: Vec<f64>,
}

impl TextureCotangent {
    pub fn zeros(width: usize, height: usize) -> Self {
        let n = width * height;
        TextureCotangent {
            albedo: vec![[0.0; 3]; n],
            normal: vec![[0.0; 3]; n],
            roughness: vec![0.0; n],
            transmission: vec![0.0; n],
        }
    }
}

/// Captured state of one primal evaluation; maps texture cotangents back to
/// gradients of every continuous parameter (full theta layout order).
pub struct Pullback {
    graph: MaterialGraph,
    width: usize,
    height: usize,
    bufs: Vec<Buf>,
    /// Unclamped value of the raw output buffers, for clamp gating.
    metallic: f64,
}

fn check_resolution(width: usize, height: usize) -> Result<()> {
    let ok = |n: usize| n.is_power_of_two() && n <= 1024;
    if !ok(width) || !ok(height) {
        return Err(Error::Invalid(format!(
            "resolution {width}x{height} must be powers of two <= 1024"
        )));
    }
    Ok(())
}

impl MaterialGraph {
    /// Evaluate all nodes and assemble the output texture set.
    pub fn evaluate(&self, width: usize, height: usize) -> Result<(TextureSet, EvalReport)> {
        let (set, _bufs, report) = self.eval_inner(width, height)?;
        Ok((set, report))
    }

    /// Evaluate and capture a pullback. The primal output is bit-identical to
    /// [`MaterialGraph::evaluate`].
    pub fn evaluate_with_grad(
        &self,
        width: usize,
        height: usize,
    ) -> Result<(TextureSet, Pullback, EvalReport)> {
        let (set, bufs, report) = self.eval_inner(width, height)?;
        let pb = Pullback {
            graph: self.clone(),
            width,
            height,
            bufs,
            metallic: set.metallic,
        };
        Ok((set, pb, report))
    }

    fn eval_inner(
        &self,
        width: usize,
        height: usize,
    ) -> Result<(TextureSet, Vec<Buf>, EvalReport)> {
        check_resolution(width, height)?;
        let mut report = EvalReport::default();
        for n in self.nodes() {
            for p in &n.params {
                if p.value < p.lo || p.value > p.hi {
                    report.clamp_warnings.push(format!(
                        "{}.{} = {} clamped to [{}, {}]",
                        n.id, p.name, p.value, p.lo, p.hi
                    ));
                }
            }
        }

        let mut bufs: Vec<Option<Buf>> = vec![None; self.nodes().len()];
        for &ni in self.topo() {
            let input_bufs: Vec<&Buf> = self
                .input_nodes(ni)
                .iter()
                .map(|&s| bufs[s].as_ref().expect("topo order"))
                .collect();
            let out = eval_node(&self.nodes()[ni], &input_bufs, width, height);
            bufs[ni] = Some(out);
        }
        let bufs: Vec<Buf> = bufs.into_iter().map(|b| b.unwrap()).collect();

        let set = self.assemble(&bufs, width, height)?;
        Ok((set, bufs, report))
    }

    fn assemble(&self, bufs: &[Buf], width: usize, height: usize) -> Result<TextureSet> {
        let n = width * height;
        let outs = self.outputs();

        let albedo_buf = &bufs[self.node_index(&outs.albedo).unwrap()];
        let albedo: Vec<[f64; 3]> = (0..n)
            .map(|i| {
                let px = albedo_buf.rgb_at(i);
                [
                    px[0].clamp(0.0, 1.0),
                    px[1].clamp(0.0, 1.0),
                    px[2].clamp(0.0, 1.0),
                ]
            })
            .collect();

        let rough_buf = &bufs[self.node_index(&outs.roughness).unwrap()];
        let roughness: Vec<f64> = match rough_buf {
            Buf::Scalar(v) => v.iter().map(|&r| r.clamp(0.01, 1.0)).collect(),
            Buf::Rgb(_) => {
                return Err(Error::Eval(format!(
                    "roughness output `{}` must be scalar",
                    outs.roughness
                )))
            }
        };

        let normal: Vec<[f64; 3]> = match &outs.normal {
            None => vec![[0.0, 0.0, 1.0]; n],
            Some(id) => match &bufs[self.node_index(id).unwrap()] {
                Buf::Rgb(g) => g
                    .iter()
                    .map(|v| {
                        let d = Vec3 {
                            x: v[0],
                            y: v[1],
                            z: v[2],
                        }
                        .normalized();
                        [d.x, d.y, d.z]
                    })
                    .collect(),
                Buf::Scalar(_) => {
                    return Err(Error::Eval(format!(
                        "normal output `{id}` must be 3-channel"
                    )))
                }
            },
        };

        let transmission = match &outs.transmission {
            None => None,
            Some(id) => match &bufs[self.node_index(id).unwrap()] {
                Buf::Scalar(v) => Some(v.iter().map(|&t| t.clamp(0.0, 1.0)).collect()),
                Buf::Rgb(_) => {
                    return Err(Error::Eval(format!(
                        "transmission output `{id}` must be scalar"
                    )))
                }
            },
        };

        Ok(TextureSet {
            width,
            height,
            albedo,
            normal,
            roughness,
            transmission,
            metallic: outs.metallic.clamp(0.0, 1.0),
        })
    }
}

/// Quintic fade: C2 across lattice cell boundaries, which keeps second-order
/// finite differences of the noise field accurate near crossings.
fn smoothstep01(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn smoothstep01_d(t: f64) -> f64 {
    30.0 * t * t * (t - 1.0) * (t - 1.0)
}

/// Deterministic lattice hash in [0,1).
fn hash01(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    h = h
        .wrapping_add(octave as u64)
        .wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= (ix as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    h = (h ^ (h >> 31)).wrapping_mul(0xD6E8_FEB8_6659_FD93);
    h ^= (iy as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    h = (h ^ (h >> 29)).wrapping_mul(0x94D0_49BB_1331_11EB);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

struct NoiseSample {
    value: f64,
    /// d value / d p, d value / d q (lattice coordinates).
    dp: f64,
    dq: f64,
}

/// One octave of C1 value noise at lattice position (p, q); wraps lattice
/// indices modulo `period` when tiling.
fn value_noise(seed: u64, octave: u32, p: f64, q: f64, period: Option<i64>) -> NoiseSample {
    let ix = p.floor();
    let iy = q.floor();
    let fx = p - ix;
    let fy = q - iy;
    let (ix, iy) = (ix as i64, iy as i64);
    let wrap = |v: i64| match period {
        Some(m) => v.rem_euclid(m),
        None => v,
    };
    let c00 = hash01(seed, octave, wrap(ix), wrap(iy));
    let c10 = hash01(seed, octave, wrap(ix + 1), wrap(iy));
    let c01 = hash01(seed, octave, wrap(ix), wrap(iy + 1));
    let c11 = hash01(seed, octave, wrap(ix + 1), wrap(iy + 1));
    let wx = smoothstep01(fx);
    let wy = smoothstep01(fy);
    let value = c00 * (1.0 - wx) * (1.0 - wy) + c10 * wx * (1.0 - wy) + c01 * (1.0 - wx) * wy
        + c11 * wx * wy;
    let dp = smoothstep01_d(fx) * ((c10 - c00) * (1.0 - wy) + (c11 - c01) * wy);
    let dq = smoothstep01_d(fy) * ((c01 - c00) * (1.0 - wx) + (c11 - c10) * wx);
    NoiseSample { value, dp, dq }
}

struct FractalSample {
    value: f64,
    d_scale: f64,
    d_amplitude: f64,
}

fn fractal_noise(
    octaves: u32,
    seed: u64,
    tileable: bool,
    scale: f64,
    amplitude: f64,
    u: f64,
    v: f64,
) -> FractalSample {
    let octaves = octaves.max(1);
    let mut acc = 0.0;
    let mut d_acc_scale = 0.0;
    let mut total_w = 0.0;
    let mut w = 1.0;
    for k in 0..octaves {
        let freq = scale * (1u64 << k) as f64;
        let period = tileable.then(|| (freq.round() as i64).max(1));
        let s = value_noise(seed, k, u * freq, v * freq, period);
        acc += w * s.value;
        let dfreq = (1u64 << k) as f64;
        d_acc_scale += w * (s.dp * u * dfreq + s.dq * v * dfreq);
        total_w += w;
        w *= 0.5;
    }
    FractalSample {
        value: amplitude * acc / total_w,
        d_scale: amplitude * d_acc_scale / total_w,
        d_amplitude: acc / total_w,
    }
}

/// Texel-center uv in [0,1).
#[inline]
fn texel_uv(x: usize, y: usize, width: usize, height: usize) -> (f64, f64) {
    (
        (x as f64 + 0.5) / width as f64,
        (y as f64 + 0.5) / height as f64,
    )
}

fn eval_node(node: &super::Node, inputs: &[&Buf], width: usize, height: usize) -> Buf {
    let n = width * height;
    let pv: Vec<f64> = node.params.iter().map(|p| p.clamped()).collect();
    match &node.kind {
        NodeKind::UniformColor => Buf::Rgb(vec![[pv[0], pv[1], pv[2]]; n]),
        NodeKind::ScalarConst { .. } => Buf::Scalar(vec![pv[0]; n]),
        NodeKind::FractalNoise {
            octaves,
            seed,
            tileable,
        } => {
            let mut out = vec![0.0; n];
            for y in 0..height {
                for x in 0..width {
                    let (u, v) = texel_uv(x, y, width, height);
                    out[y * width + x] =
                        fractal_noise(*octaves, *seed, *tileable, pv[0], pv[1], u, v).value;
                }
            }
            Buf::Scalar(out)
        }
        NodeKind::ColorRamp => {
            let t = match inputs[0] {
                Buf::Scalar(v) => v,
                Buf::Rgb(_) => unreachable!("ramp input coerced at wiring"),
            };
            let c0 = [pv[0], pv[1], pv[2]];
            let c1 = [pv[3], pv[4], pv[5]];
            Buf::Rgb(
                t.iter()
                    .map(|&t| {
                        let tc = t.clamp(0.0, 1.0);
                        [
                            c0[0] + (c1[0] - c0[0]) * tc,
                            c0[1] + (c1[1] - c0[1]) * tc,
                            c0[2] + (c1[2] - c0[2]) * tc,
                        ]
                    })
                    .collect(),
            )
        }
        NodeKind::Blend { mode } => {
            let (a, b) = (inputs[0], inputs[1]);
            let w = pv[0];
            let rgb = matches!(a, Buf::Rgb(_)) || matches!(b, Buf::Rgb(_));
            if rgb {
                let mut out = vec![[0.0; 3]; n];
                for (i, px) in out.iter_mut().enumerate() {
                    let av = a.rgb_at(i);
                    let bv = b.rgb_at(i);
                    for c in 0..3 {
                        px[c] = match mode {
                            BlendMode::Mix => av[c] * (1.0 - w) + bv[c] * w,
                            BlendMode::Multiply => av[c] * (1.0 - w + w * bv[c]),
                        };
                    }
                }
                Buf::Rgb(out)
            } else {
                let (av, bv) = match (a, b) {
                    (Buf::Scalar(av), Buf::Scalar(bv)) => (av, bv),
                    _ => unreachable!(),
                };
                Buf::Scalar(
                    av.iter()
                        .zip(bv)
                        .map(|(&av, &bv)| match mode {
                            BlendMode::Mix => av * (1.0 - w) + bv * w,
                            BlendMode::Multiply => av * (1.0 - w + w * bv),
                        })
                        .collect(),
                )
            }
        }
        NodeKind::Tile { repeats } => {
            let r = (*repeats).max(1) as usize;
            let src = |x: usize, y: usize| ((x * r) % width, (y * r) % height);
            match inputs[0] {
                Buf::Scalar(v) => {
                    let mut out = vec![0.0; n];
                    for y in 0..height {
                        for x in 0..width {
                            let (sx, sy) = src(x, y);
                            out[y * width + x] = v[sy * width + sx];
                        }
                    }
                    Buf::Scalar(out)
                }
                Buf::Rgb(v) => {
                    let mut out = vec![[0.0; 3]; n];
                    for y in 0..height {
                        for x in 0..width {
                            let (sx, sy) = src(x, y);
                            out[y * width + x] = v[sy * width + sx];
                        }
                    }
                    Buf::Rgb(out)
                }
            }
        }
        NodeKind::HeightToNormal => {
            let h = match inputs[0] {
                Buf::Scalar(v) => v,
                Buf::Rgb(_) => unreachable!("height input coerced at wiring"),
            };
            let s = pv[0];
            let mut out = vec![[0.0; 3]; n];
            for y in 0..height {
                for x in 0..width {
                    let xp = h[y * width + (x + 1) % width];
                    let xm = h[y * width + (x + width - 1) % width];
                    let yp = h[((y + 1) % height) * width + x];
                    let ym = h[((y + height - 1) % height) * width + x];
                    let dx = (xp - xm) * 0.5;
                    let dy = (yp - ym) * 0.5;
                    // unnormalized; assembly normalizes
                    out[y * width + x] = [-s * dx, -s * dy, 1.0];
                }
            }
            Buf::Rgb(out)
        }
        NodeKind::BrightnessContrast => {
            let (b, c) = (pv[0], pv[1]);
            match inputs[0] {
                Buf::Scalar(v) => {
                    Buf::Scalar(v.iter().map(|&x| (x - 0.5) * c + 0.5 + b).collect())
                }
                Buf::Rgb(v) => Buf::Rgb(
                    v.iter()
                        .map(|px| px.map(|x| (x - 0.5) * c + 0.5 + b))
                        .collect(),
                ),
            }
        }
    }
}

impl Pullback {
    /// Map texture cotangents to theta gradients (full theta layout).
    pub fn pull(&self, cot: &TextureCotangent) -> Vec<f64> {
        let g = &self.graph;
        let n = self.width * self.height;
        let outs = g.outputs();

        let mut node_cots: Vec<Option<Buf>> = vec![None; g.nodes().len()];

        // --- seed cotangents from the output assembly ---
        if !cot.albedo.is_empty() {
            let ni = g.node_index(&outs.albedo).unwrap();
            let raw = &self.bufs[ni];
            let gated: Vec<[f64; 3]> = (0..n)
                .map(|i| {
                    let px = raw.rgb_at(i);
                    let mut out = [0.0; 3];
                    for c in 0..3 {
                        // clamp gate on the raw value
                        out[c] = if (0.0..=1.0).contains(&px[c]) {
                            cot.albedo[i][c]
                        } else {
                            0.0
                        };
                    }
                    out
                })
                .collect();
            accumulate(&mut node_cots[ni], raw, &Buf::Rgb(gated));
        }
        if !cot.roughness.is_empty() {
            let ni = g.node_index(&outs.roughness).unwrap();
            if let Buf::Scalar(raw) = &self.bufs[ni] {
                let gated: Vec<f64> = raw
                    .iter()
                    .zip(&cot.roughness)
                    .map(|(&v, &c)| if (0.01..=1.0).contains(&v) { c } else { 0.0 })
                    .collect();
                let raw_buf = self.bufs[ni].clone();
                accumulate(&mut node_cots[ni], &raw_buf, &Buf::Scalar(gated));
            }
        }
        if let (Some(id), false) = (&outs.normal, cot.normal.is_empty()) {
            let ni = g.node_index(id).unwrap();
            if let Buf::Rgb(raw) = &self.bufs[ni] {
                // backward through per-texel normalization
                let gated: Vec<[f64; 3]> = raw
                    .iter()
                    .zip(&cot.normal)
                    .map(|(v, c)| {
                        let gv = Vec3 {
                            x: v[0],
                            y: v[1],
                            z: v[2],
                        };
                        let len = gv.norm();
                        if len == 0.0 {
                            return [0.0; 3];
                        }
                        let nv = gv / len;
                        let cv = Vec3 {
                            x: c[0],
                            y: c[1],
                            z: c[2],
                        };
                        let proj = cv - nv * nv.dot(cv);
                        [proj.x / len, proj.y / len, proj.z / len]
                    })
                    .collect();
                let raw_buf = self.bufs[ni].clone();
                accumulate(&mut node_cots[ni], &raw_buf, &Buf::Rgb(gated));
            }
        }
        if let (Some(id), false) = (&outs.transmission, cot.transmission.is_empty()) {
            let ni = g.node_index(id).unwrap();
            if let Buf::Scalar(raw) = &self.bufs[ni] {
                let gated: Vec<f64> = raw
                    .iter()
                    .zip(&cot.transmission)
                    .map(|(&v, &c)| if (0.0..=1.0).contains(&v) { c } else { 0.0 })
                    .collect();
                let raw_buf = self.bufs[ni].clone();
                accumulate(&mut node_cots[ni], &raw_buf, &Buf::Scalar(gated));
            }
        }

        // --- reverse pass over the DAG ---
        let layout = g.theta_layout();
        let mut dtheta = vec![0.0; layout.len()];
        let theta_slot: std::collections::BTreeMap<(usize, usize), usize> = layout
            .iter()
            .enumerate()
            .map(|(i, r)| ((r.node, r.param), i))
            .collect();

        for &ni in g.topo().iter().rev() {
            let Some(out_cot) = node_cots[ni].take() else {
                continue;
            };
            let node = &g.nodes()[ni];
            let pv: Vec<f64> = node.params.iter().map(|p| p.clamped()).collect();
            // clamped params gate their own gradient
            let param_gate: Vec<f64> = node
                .params
                .iter()
                .map(|p| {
                    if (p.lo..=p.hi).contains(&p.value) {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut add_dp = |pi: usize, v: f64| {
                if let Some(&slot) = theta_slot.get(&(ni, pi)) {
                    dtheta[slot] += v * param_gate[pi];
                }
            };
            let input_ids = g.input_nodes(ni).to_vec();
            let input_bufs: Vec<&Buf> = input_ids.iter().map(|&s| &self.bufs[s]).collect();
            let mut input_cots: Vec<Buf> = input_bufs.iter().map(|b| b.zeros_like()).collect();

            match &node.kind {
                NodeKind::UniformColor => {
                    if let Buf::Rgb(c) = &out_cot {
                        for px in c {
                            for ch in 0..3 {
                                add_dp(ch, px[ch]);
                            }
                        }
                    }
                }
                NodeKind::ScalarConst { .. } => {
                    if let Buf::Scalar(c) = &out_cot {
                        add_dp(0, c.iter().sum());
                    }
                }
                NodeKind::FractalNoise {
                    octaves,
                    seed,
                    tileable,
                } => {
                    if let Buf::Scalar(c) = &out_cot {
                        let mut d_scale = 0.0;
                        let mut d_amp = 0.0;
                        for y in 0..self.height {
                            for x in 0..self.width {
                                let cv = c[y * self.width + x];
                                if cv == 0.0 {
                                    continue;
                                }
                                let (u, v) = texel_uv(x, y, self.width, self.height);
                                let s = fractal_noise(
                                    *octaves, *seed, *tileable, pv[0], pv[1], u, v,
                                );
                                d_scale += cv * s.d_scale;
                                d_amp += cv * s.d_amplitude;
                            }
                        }
                        add_dp(0, d_scale);
                        add_dp(1, d_amp);
                    }
                }
                NodeKind::ColorRamp => {
                    let t = match input_bufs[0] {
                        Buf::Scalar(v) => v,
                        Buf::Rgb(_) => unreachable!(),
                    };
                    let c0 = [pv[0], pv[1], pv[2]];
                    let c1 = [pv[3], pv[4], pv[5]];
                    if let (Buf::Rgb(c), Buf::Scalar(tc_cot)) = (&out_cot, &mut input_cots[0]) {
                        for (i, px) in c.iter().enumerate() {
                            let tc = t[i].clamp(0.0, 1.0);
                            let inside = (0.0..=1.0).contains(&t[i]);
                            let mut din = 0.0;
                            for ch in 0..3 {
                                add_dp(ch, px[ch] * (1.0 - tc));
                                add_dp(3 + ch, px[ch] * tc);
                                din += px[ch] * (c1[ch] - c0[ch]);
                            }
                            if inside {
                                tc_cot[i] = din;
                            }
                        }
                    }
                }
                NodeKind::Blend { mode } => {
                    let w = pv[0];
                    let mut dw = 0.0;
                    for i in 0..n {
                        let av = input_bufs[0].rgb_at(i);
                        let bv = input_bufs[1].rgb_at(i);
                        let cv = out_cot.rgb_at(i);
                        for ch in 0..3 {
                            // scalar outputs carry the same value in all 3
                            // broadcast channels; divide by the multiplicity
                            let mult = match &out_cot {
                                Buf::Scalar(_) => 3.0,
                                Buf::Rgb(_) => 1.0,
                            };
                            let c = cv[ch] / mult;
                            let (da, db, dwc) = match mode {
                                BlendMode::Mix => (c * (1.0 - w), c * w, c * (bv[ch] - av[ch])),
                                BlendMode::Multiply => (
                                    c * (1.0 - w + w * bv[ch]),
                                    c * av[ch] * w,
                                    c * av[ch] * (bv[ch] - 1.0),
                                ),
                            };
                            add_to(&mut input_cots[0], i, ch, da);
                            add_to(&mut input_cots[1], i, ch, db);
                            dw += dwc;
                        }
                    }
                    add_dp(0, dw);
                }
                NodeKind::Tile { repeats } => {
                    let r = (*repeats).max(1) as usize;
                    for y in 0..self.height {
                        for x in 0..self.width {
                            let sx = (x * r) % self.width;
                            let sy = (y * r) % self.height;
                            let i = y * self.width + x;
                            let j = sy * self.width + sx;
                            match (&out_cot, &mut input_cots[0]) {
                                (Buf::Scalar(c), Buf::Scalar(ic)) => ic[j] += c[i],
                                (Buf::Rgb(c), Buf::Rgb(ic)) => {
                                    for ch in 0..3 {
                                        ic[j][ch] += c[i][ch];
                                    }
                                }
                                _ => unreachable!(),
                            }
                        }
                    }
                }
                NodeKind::HeightToNormal => {
                    let h = match input_bufs[0] {
                        Buf::Scalar(v) => v,
                        Buf::Rgb(_) => unreachable!(),
                    };
                    let s = pv[0];
                    let mut ds = 0.0;
                    if let (Buf::Rgb(c), Buf::Scalar(hc)) = (&out_cot, &mut input_cots[0]) {
                        let (w, hgt) = (self.width, self.height);
                        for y in 0..hgt {
                            for x in 0..w {
                                let i = y * w + x;
                                let xp = h[y * w + (x + 1) % w];
                                let xm = h[y * w + (x + w - 1) % w];
                                let yp = h[((y + 1) % hgt) * w + x];
                                let ym = h[((y + hgt - 1) % hgt) * w + x];
                                let dx = (xp - xm) * 0.5;
                                let dy = (yp - ym) * 0.5;
                                let (cx, cy) = (c[i][0], c[i][1]);
                                ds += cx * (-dx) + cy * (-dy);
                                // d(-s*dx)/dh scatter
                                hc[y * w + (x + 1) % w] += -s * 0.5 * cx;
                                hc[y * w + (x + w - 1) % w] += s * 0.5 * cx;
                                hc[((y + 1) % hgt) * w + x] += -s * 0.5 * cy;
                                hc[((y + hgt - 1) % hgt) * w + x] += s * 0.5 * cy;
                            }
                        }
                    }
                    add_dp(0, ds);
                }
                NodeKind::BrightnessContrast => {
                    let ctr = pv[1];
                    let mut db = 0.0;
                    let mut dc = 0.0;
                    match (&out_cot, input_bufs[0], &mut input_cots[0]) {
                        (Buf::Scalar(c), Buf::Scalar(x), Buf::Scalar(ic)) => {
                            for i in 0..n {
                                db += c[i];
                                dc += c[i] * (x[i] - 0.5);
                                ic[i] += c[i] * ctr;
                            }
                        }
                        (Buf::Rgb(c), Buf::Rgb(x), Buf::Rgb(ic)) => {
                            for i in 0..n {
                                for ch in 0..3 {
                                    db += c[i][ch];
                                    dc += c[i][ch] * (x[i][ch] - 0.5);
                                    ic[i][ch] += c[i][ch] * ctr;
                                }
                            }
                        }
                        _ => unreachable!(),
                    }
                    add_dp(0, db);
                    add_dp(1, dc);
                }
            }

            for (slot, ic) in input_ids.iter().zip(input_cots) {
                let src_buf = self.bufs[*slot].clone();
                accumulate(&mut node_cots[*slot], &src_buf, &ic);
            }
        }
        let _ = self.metallic;
        dtheta
    }
}

/// Add a cotangent contribution into a node's accumulated cotangent,
/// coercing rgb contributions onto scalar nodes by channel sum.
fn accumulate(target: &mut Option<Buf>, primal: &Buf, contrib: &Buf) {
    let coerced: Buf = match (primal, contrib) {
        (Buf::Scalar(_), Buf::Rgb(c)) => {
            Buf::Scalar(c.iter().map(|px| px[0] + px[1] + px[2]).collect())
        }
        _ => contrib.clone(),
    };
    match target {
        None => *target = Some(coerced),
        Some(t) => match (t, &coerced) {
            (Buf::Scalar(t), Buf::Scalar(c)) => {
                for (tv, cv) in t.iter_mut().zip(c) {
                    *tv += cv;
                }
            }
            (Buf::Rgb(t), Buf::Rgb(c)) => {
                for (tv, cv) in t.iter_mut().zip(c) {
                    for ch in 0..3 {
                        tv[ch] += cv[ch];
                    }
                }
            }
            _ => unreachable!("cotangent arity mismatch"),
        },
    }
    debug_assert_eq!(target.as_ref().unwrap().len(), primal.len());
}

#[inline]
fn add_to(buf: &mut Buf, i: usize, ch: usize, v: f64) {
    match buf {
        // broadcast side: all 3 channels fold into the scalar
        Buf::Scalar(b) => b[i] += v,
        Buf::Rgb(b) => b[i][ch] += v,
    }
}
