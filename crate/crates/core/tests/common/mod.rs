//! Loop-based reference implementations on flat row-major `f64` buffers.
//! They share no kernels with the library: every contraction is a plain loop.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symgnn_core::agim::Agim;
use symgnn_core::autodiff::{ParamId, ParamStore, Tensor};
use symgnn_core::backbone::Branch;
use symgnn_core::graph::{GtcBlock, JgcLayer, PgcLayer, Spatial};
use symgnn_core::heads::PredictionHead;
use symgnn_core::nn::{BatchNorm, FeatureMlp, FuseMlp, Linear};

pub mod cases;
pub mod counts;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn val(store: &ParamStore<f64>, id: ParamId) -> Vec<f64> {
    store.value(id).data().to_vec()
}

/// Max absolute difference over the max magnitude of `want`.
pub fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "length mismatch");
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    got.iter().zip(want).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}

/// Moves every parameter away from its initial value and gives batch-norm
/// buffers non-trivial statistics, so that no oracle passes by accident.
pub fn scramble(store: &mut ParamStore<f64>, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<(ParamId, String)> = store.iter().map(|(id, p)| (id, p.name.clone())).collect();
    for (id, name) in ids {
        for v in store.value_mut(id).data_mut() {
            if name.ends_with("running_var") {
                *v = r.random_range(0.5..1.5);
            } else {
                *v += r.random_range(-0.3..0.3);
            }
        }
    }
}

pub fn relu(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.max(0.0)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `rows × input` times `Wᵀ` (`W` is `output × input`) plus bias.
pub fn dense(x: &[f64], input: usize, w: &[f64], b: Option<&[f64]>) -> Vec<f64> {
    let output = w.len() / input;
    let rows = x.len() / input;
    let mut out = vec![0.0; rows * output];
    for r in 0..rows {
        for o in 0..output {
            let mut s = b.map_or(0.0, |b| b[o]);
            for i in 0..input {
                s += x[r * input + i] * w[o * input + i];
            }
            out[r * output + o] = s;
        }
    }
    out
}

pub fn linear(store: &ParamStore<f64>, l: &Linear, x: &[f64], input: usize) -> Vec<f64> {
    let b = l.b.map(|b| val(store, b));
    dense(x, input, &val(store, l.w), b.as_deref())
}

pub fn bn_eval(store: &ParamStore<f64>, bn: &BatchNorm, x: &[f64]) -> Vec<f64> {
    let (g, b) = (val(store, bn.gamma), val(store, bn.beta));
    let (mu, var) = (val(store, bn.running_mean), val(store, bn.running_var));
    let ch = g.len();
    x.iter()
        .enumerate()
        .map(|(k, &v)| {
            let c = k % ch;
            (v - mu[c]) / (var[c] + 1e-5).sqrt() * g[c] + b[c]
        })
        .collect()
}

pub fn feature_mlp(store: &ParamStore<f64>, f: &FeatureMlp, x: &[f64], input: usize) -> Vec<f64> {
    let h = relu(&linear(store, &f.fc1, x, input));
    let hidden = store.value(f.fc1.w).shape()[0];
    let h = relu(&linear(store, &f.fc2, &h, hidden));
    let h = bn_eval(store, &f.bn, &h);
    match &f.proj {
        Some(p) => {
            let out = store.value(p.w).shape()[1];
            linear(store, p, &h, out)
        }
        None => h,
    }
}

pub fn fuse_mlp(store: &ParamStore<f64>, f: &FuseMlp, x: &[f64], input: usize) -> Vec<f64> {
    let h = relu(&linear(store, &f.fc1, x, input));
    let hidden = store.value(f.fc1.w).shape()[0];
    relu(&linear(store, &f.fc2, &h, hidden))
}

/// Linear interpolation of a `[t_in, d]` trajectory onto `t_out` frames.
pub fn resample(traj: &[f64], t_in: usize, d: usize, t_out: usize) -> Vec<f64> {
    let mut out = vec![0.0; t_out * d];
    for i in 0..t_out {
        let pos = if t_out == 1 || t_in == 1 { 0.0 } else { i as f64 * (t_in - 1) as f64 / (t_out - 1) as f64 };
        let lo = pos.floor() as usize;
        for c in 0..d {
            out[i * d + c] = if lo + 1 >= t_in {
                traj[(t_in - 1) * d + c]
            } else {
                let f = pos - lo as f64;
                (1.0 - f) * traj[lo * d + c] + f * traj[(lo + 1) * d + c]
            };
        }
    }
    out
}

/// Flattened joint trajectories `[N, M, T_agim·D]` of a `[N, T, M, D]` clip.
pub fn agim_flatten(agim: &Agim, x: &Tensor<f64>) -> Vec<f64> {
    let s = x.shape();
    let (n, t, m, d) = (s[0], s[1], s[2], s[3]);
    let ta = agim.config.t_agim;
    let mut out = Vec::with_capacity(n * m * ta * d);
    for b in 0..n {
        for j in 0..m {
            let mut traj = Vec::with_capacity(t * d);
            for f in 0..t {
                for c in 0..d {
                    traj.push(x.at(&[b, f, j, c]));
                }
            }
            out.extend(resample(&traj, t, d, ta));
        }
    }
    out
}

/// Joint embeddings after K rounds of joint-to-edge-to-joint passing.
pub fn agim_propagate(store: &ParamStore<f64>, agim: &Agim, flat: &[f64], n: usize) -> Vec<f64> {
    let m = agim.joints;
    let c = &agim.config;
    let mut p = feature_mlp(store, &agim.f_v[0], flat, flat.len() / (n * m));
    for k in 0..c.k {
        let mut next = vec![0.0; n * m * c.d_e];
        for b in 0..n {
            for i in 0..m {
                for j in 0..m {
                    if i == j {
                        continue;
                    }
                    let mut pair = Vec::with_capacity(2 * c.d_v);
                    pair.extend_from_slice(&p[(b * m + i) * c.d_v..][..c.d_v]);
                    pair.extend_from_slice(&p[(b * m + j) * c.d_v..][..c.d_v]);
                    let q = feature_mlp(store, &agim.f_e[k], &pair, 2 * c.d_v);
                    for e in 0..c.d_e {
                        next[(b * m + i) * c.d_e + e] += q[e] / (m - 1) as f64;
                    }
                }
            }
        }
        p = feature_mlp(store, &agim.f_v[k + 1], &next, c.d_e);
    }
    p
}

/// Row-softmax of embedded correlations, `[N, M, M]`.
pub fn agim_infer(store: &ParamStore<f64>, agim: &Agim, p: &[f64], n: usize) -> Vec<f64> {
    let (m, dv, de) = (agim.joints, agim.config.d_v, agim.config.d_emb);
    let f = feature_mlp(store, &agim.f_emb, p, dv);
    let g = feature_mlp(store, &agim.g_emb, p, dv);
    let mut a = vec![0.0; n * m * m];
    for b in 0..n {
        for i in 0..m {
            let logits: Vec<f64> = (0..m)
                .map(|j| (0..de).map(|e| f[(b * m + i) * de + e] * g[(b * m + j) * de + e]).sum())
                .collect();
            let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
            for j in 0..m {
                a[(b * m + i) * m + j] = (logits[j] - mx).exp() / z;
            }
        }
    }
    a
}

/// `[N, V, T, C]` shape of a flat buffer.
#[derive(Clone, Copy, Debug)]
pub struct Dims {
    pub n: usize,
    pub v: usize,
    pub t: usize,
    pub c: usize,
}

impl Dims {
    pub fn at(&self, n: usize, v: usize, t: usize, c: usize) -> usize {
        ((n * self.v + v) * self.t + t) * self.c + c
    }

    pub fn len(&self) -> usize {
        self.n * self.v * self.t * self.c
    }
}

/// `Σ_j G[n?][i, j] · (X_j W)` on `[N, V, T, C]` data; `graph` is `[V, V]`
/// or `[N, V, V]`.
fn graph_mix(x: &[f64], dx: Dims, graph: &[f64], batched: bool, w: &[f64]) -> (Vec<f64>, Dims) {
    let cout = w.len() / dx.c;
    let dy = Dims { c: cout, ..dx };
    let xw = dense(x, dx.c, w, None);
    let mut out = vec![0.0; dy.len()];
    let vv = dx.v * dx.v;
    for n in 0..dx.n {
        for i in 0..dx.v {
            for j in 0..dx.v {
                let g = if batched { graph[n * vv + i * dx.v + j] } else { graph[i * dx.v + j] };
                for t in 0..dx.t {
                    for o in 0..cout {
                        out[dy.at(n, i, t, o)] += g * xw[dy.at(n, j, t, o)];
                    }
                }
            }
        }
    }
    (out, dy)
}

pub fn jgc_layer(store: &ParamStore<f64>, l: &JgcLayer, x: &[f64], dx: Dims, a_act: &[f64]) -> (Vec<f64>, Dims) {
    let mut total: Option<(Vec<f64>, Dims)> = None;
    for ((sup, &mask), &w) in l.supports.iter().zip(&l.masks).zip(&l.w_str) {
        let mk = val(store, mask);
        let g: Vec<f64> = sup.data().iter().zip(&mk).map(|(a, b)| a * b).collect();
        let (y, dy) = graph_mix(x, dx, &g, false, &val(store, w));
        total = Some(match total {
            None => (y, dy),
            Some((acc, _)) => (acc.iter().zip(&y).map(|(a, b)| a + b).collect(), dy),
        });
    }
    let (mut out, dy) = total.expect("at least one support");
    if l.lambda_act != 0.0 {
        let (y, _) = graph_mix(x, dx, a_act, true, &val(store, l.w_act));
        for (o, v) in out.iter_mut().zip(y) {
            *o += l.lambda_act * v;
        }
    }
    (out, dy)
}

pub fn pgc_layer(store: &ParamStore<f64>, l: &PgcLayer, x: &[f64], dx: Dims) -> (Vec<f64>, Dims) {
    let mk = val(store, l.mask);
    let g: Vec<f64> = l.support.data().iter().zip(&mk).map(|(a, b)| a * b).collect();
    graph_mix(x, dx, &g, false, &val(store, l.w))
}

/// Same-padded strided temporal convolution, `w` is `[C_out, K, C_in]`.
pub fn temporal_conv(x: &[f64], dx: Dims, w: &[f64], k: usize, b: Option<&[f64]>, stride: usize) -> (Vec<f64>, Dims) {
    let cout = w.len() / (k * dx.c);
    let pad = (k - 1) / 2;
    let t_out = (dx.t + 2 * pad - k) / stride + 1;
    let dy = Dims { t: t_out, c: cout, ..dx };
    let mut out = vec![0.0; dy.len()];
    for n in 0..dx.n {
        for v in 0..dx.v {
            for to in 0..t_out {
                for o in 0..cout {
                    let mut s = b.map_or(0.0, |b| b[o]);
                    for kk in 0..k {
                        let ti = (to * stride + kk) as isize - pad as isize;
                        if ti < 0 || ti >= dx.t as isize {
                            continue;
                        }
                        for c in 0..dx.c {
                            s += w[(o * k + kk) * dx.c + c] * x[dx.at(n, v, ti as usize, c)];
                        }
                    }
                    out[dy.at(n, v, to, o)] = s;
                }
            }
        }
    }
    (out, dy)
}

/// Evaluation-mode graph-temporal block.
pub fn gtc_block(store: &ParamStore<f64>, blk: &GtcBlock, x: &[f64], dx: Dims, a_act: &[f64]) -> (Vec<f64>, Dims) {
    let (h, dh) = match &blk.spatial {
        Spatial::Joint(l) => jgc_layer(store, l, x, dx, a_act),
        Spatial::Part(l) => pgc_layer(store, l, x, dx),
    };
    let h = relu(&bn_eval(store, &blk.spatial_bn, &h));
    let (h, dy) = temporal_conv(&h, dh, &val(store, blk.tc), blk.shape.kernel, None, blk.shape.stride);
    let h = bn_eval(store, &blk.tc_bn, &h);
    let r = match &blk.residual {
        None => x.to_vec(),
        Some(p) => temporal_conv(x, dx, &val(store, p.w), 1, Some(&val(store, p.b)), blk.shape.stride).0,
    };
    (relu(&h.iter().zip(&r).map(|(a, b)| a + b).collect::<Vec<_>>()), dy)
}

pub fn pool_parts(x: &[f64], dx: Dims, parts: &[usize]) -> (Vec<f64>, Dims) {
    let np = parts.iter().max().unwrap() + 1;
    let dy = Dims { v: np, ..dx };
    let mut out = vec![0.0; dy.len()];
    for p in 0..np {
        let members: Vec<usize> = (0..dx.v).filter(|&j| parts[j] == p).collect();
        for n in 0..dx.n {
            for t in 0..dx.t {
                for c in 0..dx.c {
                    let s: f64 = members.iter().map(|&j| x[dx.at(n, j, t, c)]).sum();
                    out[dy.at(n, p, t, c)] = s / members.len() as f64;
                }
            }
        }
    }
    (out, dy)
}

pub fn spread_parts(x: &[f64], dx: Dims, parts: &[usize]) -> (Vec<f64>, Dims) {
    let dy = Dims { v: parts.len(), ..dx };
    let mut out = vec![0.0; dy.len()];
    for n in 0..dx.n {
        for (j, &p) in parts.iter().enumerate() {
            for t in 0..dx.t {
                for c in 0..dx.c {
                    out[dy.at(n, j, t, c)] = x[dx.at(n, p, t, c)];
                }
            }
        }
    }
    (out, dy)
}

pub fn concat_channels(a: &[f64], da: Dims, b: &[f64], db: Dims) -> (Vec<f64>, Dims) {
    let dy = Dims { c: da.c + db.c, ..da };
    let mut out = vec![0.0; dy.len()];
    for n in 0..da.n {
        for v in 0..da.v {
            for t in 0..da.t {
                for c in 0..da.c {
                    out[dy.at(n, v, t, c)] = a[da.at(n, v, t, c)];
                }
                for c in 0..db.c {
                    out[dy.at(n, v, t, da.c + c)] = b[db.at(n, v, t, c)];
                }
            }
        }
    }
    (out, dy)
}

/// Evaluation-mode branch: `[N, M, T, D]` → `[N, M, C]`.
pub fn branch(store: &ParamStore<f64>, br: &Branch, x: &[f64], dx: Dims, a_act: &[f64]) -> Vec<f64> {
    let (mut j, mut dj) = gtc_block(store, &br.joint[0], x, dx, a_act);
    let (mut p, mut dp) = pool_parts(&j, dj, &br.parts);
    for (i, (jb, pb)) in br.joint[1..].iter().zip(&br.part).enumerate() {
        let idx = i + 2;
        let (jn, djn) = gtc_block(store, jb, &j, dj, a_act);
        let (pn, dpn) = gtc_block(store, pb, &p, dp, a_act);
        if br.fusion_after.contains(&idx) && idx < br.joint.len() {
            let (up, dup) = spread_parts(&pn, dpn, &br.parts);
            let (down, ddown) = pool_parts(&jn, djn, &br.parts);
            (j, dj) = concat_channels(&jn, djn, &up, dup);
            (p, dp) = concat_channels(&pn, dpn, &down, ddown);
        } else {
            (j, dj, p, dp) = (jn, djn, pn, dpn);
        }
    }
    if !br.part.is_empty() {
        let (up, _) = spread_parts(&p, dp, &br.parts);
        j = j.iter().zip(&up).map(|(a, b)| a + b).collect();
    }
    let mut out = vec![0.0; dj.n * dj.v * dj.c];
    for n in 0..dj.n {
        for v in 0..dj.v {
            for c in 0..dj.c {
                let s: f64 = (0..dj.t).map(|t| j[dj.at(n, v, t, c)]).sum();
                out[(n * dj.v + v) * dj.c + c] = s / dj.t as f64;
            }
        }
    }
    out
}

/// Rollout of the prediction head. `h` holds `[N, M, D_h]` branch features,
/// `x_last`, `d1`, `d2` are `[N, M, D]`, `y` is `[N, C]`; output
/// `[N, steps, M, D]`.
#[allow(clippy::too_many_arguments)]
pub fn rollout(
    store: &ParamStore<f64>,
    head: &PredictionHead,
    h: &[Vec<f64>],
    n: usize,
    m: usize,
    a_act: &[f64],
    x_last: &[f64],
    d1: &[f64],
    d2: &[f64],
    y: &[f64],
    steps: usize,
) -> Vec<f64> {
    let hid = head.hidden;
    let d = head.coords;
    let c = y.len() / n;
    let dh = h[0].len() / (n * m);
    let mut cat = Vec::with_capacity(n * m * dh * h.len());
    for r in 0..n * m {
        for hb in h {
            cat.extend_from_slice(&hb[r * dh..(r + 1) * dh]);
        }
    }
    let mut state = fuse_mlp(store, &head.fuse, &cat, dh * h.len());
    let (w_ih, w_hh) = (val(store, head.gru.w_ih), val(store, head.gru.w_hh));
    let (b_ih, b_hh) = (val(store, head.gru.b_ih), val(store, head.gru.b_hh));
    let (mut x, mut v1, mut v2) = (x_last.to_vec(), d1.to_vec(), d2.to_vec());
    let mut frames = vec![0.0; n * steps * m * d];
    let ds = Dims { n, v: m, t: 1, c: hid };
    for s in 0..steps {
        let (ht, _) = jgc_layer(store, &head.jgc, &state, ds, a_act);
        let mut inp = Vec::with_capacity(n * m * (3 * d + c));
        for b in 0..n {
            for j in 0..m {
                let r = (b * m + j) * d;
                inp.extend_from_slice(&x[r..r + d]);
                inp.extend_from_slice(&v1[r..r + d]);
                inp.extend_from_slice(&v2[r..r + d]);
                inp.extend_from_slice(&y[b * c..(b + 1) * c]);
            }
        }
        let gi = dense(&inp, 3 * d + c, &w_ih, Some(&b_ih));
        let gh = dense(&ht, hid, &w_hh, Some(&b_hh));
        let mut hn = vec![0.0; n * m * hid];
        for r in 0..n * m {
            for k in 0..hid {
                let g = |v: &[f64], gate: usize| v[r * 3 * hid + gate * hid + k];
                let rg = sigmoid(g(&gi, 0) + g(&gh, 0));
                let zg = sigmoid(g(&gi, 1) + g(&gh, 1));
                let ng = (g(&gi, 2) + rg * g(&gh, 2)).tanh();
                hn[r * hid + k] = (1.0 - zg) * ng + zg * ht[r * hid + k];
            }
        }
        let disp = linear(store, &head.out2, &relu(&linear(store, &head.out1, &hn, hid)), hid);
        for b in 0..n {
            for j in 0..m {
                for e in 0..d {
                    let r = (b * m + j) * d + e;
                    let xn = x[r] + disp[r];
                    let n1 = xn - x[r];
                    v2[r] = n1 - v1[r];
                    v1[r] = n1;
                    x[r] = xn;
                    frames[((b * steps + s) * m + j) * d + e] = xn;
                }
            }
        }
        state = hn;
    }
    frames
}

/// A random `[N, M, M]` row-stochastic matrix.
pub fn random_stochastic(n: usize, m: usize, r: &mut impl Rng) -> Vec<f64> {
    let mut a = Vec::with_capacity(n * m * m);
    for _ in 0..n * m {
        let row: Vec<f64> = (0..m).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = row.iter().sum();
        a.extend(row.iter().map(|v| v / s));
    }
    a
}
