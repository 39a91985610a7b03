//! Per-level fusion of the windowed feature maps: multi-head self-attention
//! running in parallel with a 3×3 convolution, outputs concatenated.

use crate::error::{Error, Result};
use crate::numerics::{CustomOp, Graph, Scalar, Tensor, Var};

use super::layers::{conv, init_conv};
use super::params::{Bound, Init, ParamStore};
use super::{AttentionConfig, FusionTokens, ModelConfig, FIRST_LEVEL, NUM_LEVELS};

pub fn fusion_prefix(level_index: usize) -> String {
    format!("fusion/P{}", level_index + FIRST_LEVEL)
}

pub fn init_fusion<T: Scalar>(store: &mut ParamStore<T>, init: &mut Init, cfg: &ModelConfig) {
    let f = cfg.fpn_channels;
    let stacked = cfg.num_windows * f;
    let a = &cfg.attention_cfg;
    for j in 0..NUM_LEVELS {
        let p = fusion_prefix(j);
        if !cfg.attention {
            init_conv(store, init, &format!("{p}/conv"), f, stacked, 3, 1.0, Some(0.0));
            continue;
        }
        let token_in = match cfg.fusion_tokens {
            FusionTokens::Channels => stacked,
            FusionTokens::Windows => f,
        };
        let qk = a.heads * a.dk_per_head;
        init_conv(store, init, &format!("{p}/q"), qk, token_in, 1, 0.5, Some(0.0));
        init_conv(store, init, &format!("{p}/k"), qk, token_in, 1, 0.5, Some(0.0));
        init_conv(store, init, &format!("{p}/v"), a.dv_total, token_in, 1, 1.0, Some(0.0));
        init_conv(store, init, &format!("{p}/out"), a.dv_total, a.dv_total, 1, 1.0, Some(0.0));
        init_conv(store, init, &format!("{p}/conv"), a.conv_branch_channels(f), stacked, 3, 1.0, Some(0.0));
    }
}

/// Attention branch output and, in channel-token mode, the per-head
/// attention matrices `[N, N]` (row = query location).
pub struct AttentionTrace {
    pub output: Var,
    pub weights: Vec<Var>,
}

/// Self-attention over the `H·W` locations of `x: [C,H,W]` using the
/// projections under `prefix`. Output is `[dv_total, H, W]` after the output projection.
pub fn spatial_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    x: Var,
    a: &AttentionConfig,
) -> Result<AttentionTrace> {
    let s = g.shape(x).to_vec();
    let (h, w) = (s[1], s[2]);
    let n = h * w;
    let dk = a.dk_per_head;
    let dvh = a.dv_per_head();
    let q = conv(g, b, &format!("{prefix}/q"), x, 1)?;
    let k = conv(g, b, &format!("{prefix}/k"), x, 1)?;
    let v = conv(g, b, &format!("{prefix}/v"), x, 1)?;
    let q = g.reshape(q, &[a.heads * dk, n])?;
    let k = g.reshape(k, &[a.heads * dk, n])?;
    let v = g.reshape(v, &[a.dv_total, n])?;
    let scale = T::lit(1.0 / (dk as f64).sqrt());
    let mut heads = Vec::with_capacity(a.heads);
    let mut weights = Vec::with_capacity(a.heads);
    for hd in 0..a.heads {
        let qh = g.slice(q, hd * dk, dk)?;
        let kh = g.slice(k, hd * dk, dk)?;
        let vh = g.slice(v, hd * dvh, dvh)?;
        let logits = g.matmul(qh, kh, true, false)?;
        let logits = g.scale(logits, scale);
        let attn = g.softmax_rows(logits)?;
        heads.push(g.matmul(vh, attn, false, true)?);
        weights.push(attn);
    }
    let o = if heads.len() == 1 { heads[0] } else { g.concat(&heads)? };
    let o = g.reshape(o, &[a.dv_total, h, w])?;
    let output = conv(g, b, &format!("{prefix}/out"), o, 1)?;
    Ok(AttentionTrace { output, weights })
}

/// Attention across windows at each location: every window is a token,
/// queries attend over all windows, and the result is averaged over query windows.
struct WindowTokenAttention {
    windows: usize,
    heads: usize,
    dk: usize,
    dvh: usize,
    n: usize,
}

impl WindowTokenAttention {
    fn q_at(&self, q: &[f64], w: usize, h: usize, d: usize, loc: usize) -> f64 {
        q[((w * self.heads + h) * self.dk + d) * self.n + loc]
    }

    fn v_index(&self, w: usize, h: usize, c: usize, loc: usize) -> usize {
        ((w * self.heads + h) * self.dvh + c) * self.n + loc
    }

    /// Attention weights `[query window][key window]` for one head and location.
    fn weights(&self, q: &[f64], k: &[f64], h: usize, loc: usize) -> Vec<f64> {
        let m = self.windows;
        let scale = 1.0 / (self.dk as f64).sqrt();
        let mut a = vec![0.0; m * m];
        for wq in 0..m {
            let row = &mut a[wq * m..(wq + 1) * m];
            for (wk, r) in row.iter_mut().enumerate() {
                *r = (0..self.dk)
                    .map(|d| self.q_at(q, wq, h, d, loc) * self.q_at(k, wk, h, d, loc))
                    .sum::<f64>()
                    * scale;
            }
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter_mut().map(|r| {
                *r = (*r - mx).exp();
                *r
            }).sum();
            row.iter_mut().for_each(|r| *r /= z);
        }
        a
    }

    fn forward(&self, q: &[f64], k: &[f64], v: &[f64]) -> Vec<f64> {
        let m = self.windows;
        let mut out = vec![0.0; self.heads * self.dvh * self.n];
        for h in 0..self.heads {
            for loc in 0..self.n {
                let a = self.weights(q, k, h, loc);
                for c in 0..self.dvh {
                    let mut acc = 0.0;
                    for wq in 0..m {
                        for wk in 0..m {
                            acc += a[wq * m + wk] * v[self.v_index(wk, h, c, loc)];
                        }
                    }
                    out[(h * self.dvh + c) * self.n + loc] = acc / m as f64;
                }
            }
        }
        out
    }
}

fn to_f64<T: Scalar>(t: &Tensor<T>) -> Vec<f64> {
    t.data().iter().map(|v| v.to_f64_lossy()).collect()
}

impl<T: Scalar> CustomOp<T> for WindowTokenAttention {
    fn name(&self) -> &'static str {
        "window_token_attention"
    }

    fn backward(&self, inputs: &[&Tensor<T>], _output: &Tensor<T>, dout: &[T], grads: &mut [Option<&mut [T]>]) {
        let (q, k, v) = (to_f64(inputs[0]), to_f64(inputs[1]), to_f64(inputs[2]));
        let m = self.windows;
        let inv_m = 1.0 / m as f64;
        let scale = 1.0 / (self.dk as f64).sqrt();
        let mut dq = vec![0.0; q.len()];
        let mut dk = vec![0.0; k.len()];
        let mut dv = vec![0.0; v.len()];
        for h in 0..self.heads {
            for loc in 0..self.n {
                let a = self.weights(&q, &k, h, loc);
                let go: Vec<f64> = (0..self.dvh)
                    .map(|c| dout[(h * self.dvh + c) * self.n + loc].to_f64_lossy() * inv_m)
                    .collect();
                for wq in 0..m {
                    let row = &a[wq * m..(wq + 1) * m];
                    let da: Vec<f64> = (0..m)
                        .map(|wk| (0..self.dvh).map(|c| go[c] * v[self.v_index(wk, h, c, loc)]).sum())
                        .collect();
                    let dot: f64 = row.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for wk in 0..m {
                        for c in 0..self.dvh {
                            dv[self.v_index(wk, h, c, loc)] += row[wk] * go[c];
                        }
                        let ds = row[wk] * (da[wk] - dot) * scale;
                        for d in 0..self.dk {
                            let qi = ((wq * self.heads + h) * self.dk + d) * self.n + loc;
                            let ki = ((wk * self.heads + h) * self.dk + d) * self.n + loc;
                            dq[qi] += ds * k[ki];
                            dk[ki] += ds * q[qi];
                        }
                    }
                }
            }
        }
        for (slot, src) in grads.iter_mut().zip([dq, dk, dv]) {
            if let Some(gr) = slot {
                for (g, s) in gr.iter_mut().zip(src) {
                    *g += T::lit(s);
                }
            }
        }
    }
}

/// Window-token attention for per-window maps `[F,H,W]` with shared projections.
pub fn window_attention<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    prefix: &str,
    maps: &[Var],
    a: &AttentionConfig,
) -> Result<Var> {
    let s = g.shape(maps[0]).to_vec();
    let (h, w) = (s[1], s[2]);
    let (mut qs, mut ks, mut vs) = (Vec::new(), Vec::new(), Vec::new());
    for &m in maps {
        qs.push(conv(g, b, &format!("{prefix}/q"), m, 1)?);
        ks.push(conv(g, b, &format!("{prefix}/k"), m, 1)?);
        vs.push(conv(g, b, &format!("{prefix}/v"), m, 1)?);
    }
    let q = g.concat(&qs)?;
    let k = g.concat(&ks)?;
    let v = g.concat(&vs)?;
    let op = WindowTokenAttention {
        windows: maps.len(),
        heads: a.heads,
        dk: a.dk_per_head,
        dvh: a.dv_per_head(),
        n: h * w,
    };
    let out = op.forward(&to_f64(g.value(q)), &to_f64(g.value(k)), &to_f64(g.value(v)));
    let out = Tensor::new(vec![a.dv_total, h, w], out.into_iter().map(T::lit).collect())?;
    let o = g.custom(&[q, k, v], out, Box::new(op));
    conv(g, b, &format!("{prefix}/out"), o, 1)
}

/// Fuses the windowed maps of one pyramid level into a single `[F,H,W]` map.
pub fn fuse_level<T: Scalar>(
    g: &mut Graph<T>,
    b: &Bound,
    cfg: &ModelConfig,
    level_index: usize,
    maps: &[Var],
) -> Result<Var> {
    if maps.len() != cfg.num_windows {
        return Err(Error::Dimension(format!(
            "fusion expects {} windowed maps, got {}",
            cfg.num_windows,
            maps.len()
        )));
    }
    let s0 = g.shape(maps[0]).to_vec();
    if let Some(&bad) = maps.iter().find(|&&m| g.shape(m) != s0.as_slice()) {
        return Err(Error::Dimension(format!(
            "fusion maps differ in shape: {:?} vs {:?}",
            s0,
            g.shape(bad)
        )));
    }
    let p = fusion_prefix(level_index);
    let stacked = if maps.len() == 1 { maps[0] } else { g.concat(maps)? };
    let conv_branch = conv(g, b, &format!("{p}/conv"), stacked, 1)?;
    if !cfg.attention {
        return Ok(conv_branch);
    }
    let attn = match cfg.fusion_tokens {
        FusionTokens::Channels => spatial_attention(g, b, &p, stacked, &cfg.attention_cfg)?.output,
        FusionTokens::Windows => window_attention(g, b, &p, maps, &cfg.attention_cfg)?,
    };
    g.concat(&[attn, conv_branch])
}
