//! Parameterised layers built from graph ops.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{fan_in_uniform, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{shape_err, Result};

#[derive(Clone, Debug)]
pub struct Affine {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub input: usize,
    pub output: usize,
}

impl Affine {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.w"),
            fan_in_uniform(&[input, output], input, rng),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), fan_in_uniform(&[output], input, rng)));
        Self {
            w,
            b,
            input,
            output,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let w = g.param(self.w);
        let b = self.b.map(|b| g.param(b));
        g.affine(x, w, b)
    }
}

/// Stride-1 convolution with "same" zero padding.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv2d {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = store.add(
            format!("{name}.w"),
            fan_in_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng),
        );
        let b = store.add(
            format!("{name}.b"),
            fan_in_uniform(&[out_channels], fan_in, rng),
        );
        Self { w, b, kernel }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var) -> Result<Var> {
        let (w, b) = (g.param(self.w), g.param(self.b));
        g.conv2d(x, w, b, self.kernel / 2)
    }
}

/// Gated recurrent unit:
///
/// ```text
/// r  = σ(x·Wr + bxr + h·Ur + bhr)
/// z  = σ(x·Wz + bxz + h·Uz + bhz)
/// n  = tanh(x·Wn + bxn + r ⊙ (h·Un + bhn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
#[derive(Clone, Debug)]
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let wx = store.add(
            format!("{name}.wx"),
            fan_in_uniform(&[input, 3 * hidden], input, rng),
        );
        let wh = store.add(
            format!("{name}.wh"),
            fan_in_uniform(&[hidden, 3 * hidden], hidden, rng),
        );
        let bx = store.add(format!("{name}.bx"), Tensor::zeros(&[3 * hidden]));
        let bh = store.add(format!("{name}.bh"), Tensor::zeros(&[3 * hidden]));
        Self {
            wx,
            wh,
            bx,
            bh,
            input,
            hidden,
        }
    }

    pub fn forward<T: Real>(&self, g: &mut Graph<T>, x: Var, h: Var) -> Result<Var> {
        let (xs, hs) = (g.shape(x).to_vec(), g.shape(h).to_vec());
        if xs.len() != 2
            || hs.len() != 2
            || xs[1] != self.input
            || hs[1] != self.hidden
            || xs[0] != hs[0]
        {
            return Err(shape_err(
                "gru_cell",
                format!(
                    "input {xs:?} / hidden {hs:?}, cell expects [_, {}] / [_, {}]",
                    self.input, self.hidden
                ),
            ));
        }
        let hw = self.hidden;
        let (wx, bx, wh, bh) = (
            g.param(self.wx),
            g.param(self.bx),
            g.param(self.wh),
            g.param(self.bh),
        );
        let gx = g.affine(x, wx, Some(bx))?;
        let gh = g.affine(h, wh, Some(bh))?;
        let (xr, hr) = (g.slice_cols(gx, 0, hw)?, g.slice_cols(gh, 0, hw)?);
        let pre_r = g.add(xr, hr)?;
        let r = g.sigmoid(pre_r);
        let (xz, hz) = (g.slice_cols(gx, hw, hw)?, g.slice_cols(gh, hw, hw)?);
        let pre_z = g.add(xz, hz)?;
        let z = g.sigmoid(pre_z);
        let (xn, hn) = (g.slice_cols(gx, 2 * hw, hw)?, g.slice_cols(gh, 2 * hw, hw)?);
        let gated = g.mul(r, hn)?;
        let pre_n = g.add(xn, gated)?;
        let n = g.tanh(pre_n);
        let diff = g.sub(h, n)?;
        let keep = g.mul(z, diff)?;
        g.add(n, keep)
    }
}

/// Multi-head scaled dot-product attention with bias-free per-head
/// projections (stored side by side) and an output map.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub out: Affine,
    pub heads: usize,
    pub key_dim: usize,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        query_in: usize,
        kv_in: usize,
        heads: usize,
        key_dim: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let width = heads * key_dim;
        let wq = store.add(
            format!("{name}.wq"),
            fan_in_uniform(&[query_in, width], query_in, rng),
        );
        let wk = store.add(
            format!("{name}.wk"),
            fan_in_uniform(&[kv_in, width], kv_in, rng),
        );
        let wv = store.add(
            format!("{name}.wv"),
            fan_in_uniform(&[kv_in, width], kv_in, rng),
        );
        let out = Affine::register(store, &format!("{name}.out"), width, output, true, rng);
        Self {
            wq,
            wk,
            wv,
            out,
            heads,
            key_dim,
        }
    }

    /// Row `g` of `queries` attends over rows `groups[g]` of `kv_input`.
    pub fn forward_grouped<T: Real>(
        &self,
        g: &mut Graph<T>,
        queries: Var,
        kv_input: Var,
        groups: &[Vec<usize>],
    ) -> Result<Var> {
        let (wq, wk, wv) = (g.param(self.wq), g.param(self.wk), g.param(self.wv));
        let q = g.affine(queries, wq, None)?;
        let k = g.affine(kv_input, wk, None)?;
        let v = g.affine(kv_input, wv, None)?;
        let heads_out = g.attention(q, k, v, self.heads, groups)?;
        self.out.forward(g, heads_out)
    }

    /// Every query row attends over every key/value row.
    pub fn forward<T: Real>(&self, g: &mut Graph<T>, queries: Var, kv_input: Var) -> Result<Var> {
        let rows = g.value(kv_input).rows();
        let all: Vec<usize> = (0..rows).collect();
        let groups = vec![all; g.value(queries).rows()];
        self.forward_grouped(g, queries, kv_input, &groups)
    }
}
