use crate::error::Result;
use crate::numerics::{Graph, Scalar, Tensor, Var};

use super::params::{Bound, Init, ParamStore};

/// Adds `{name}/w` of shape `[out, inp, k, k]` and, when `bias` is set, `{name}/b`.
pub(crate) fn init_conv<T: Scalar>(
    store: &mut ParamStore<T>,
    init: &mut Init,
    name: &str,
    out: usize,
    inp: usize,
    k: usize,
    gain: f64,
    bias: Option<f64>,
) {
    store.insert(format!("{name}/w"), init.conv(out, inp, k, gain));
    if let Some(b) = bias {
        store.insert(format!("{name}/b"), Tensor::full(&[out], T::lit(b)));
    }
}

/// Same-padded convolution with the parameters stored under `name`.
pub(crate) fn conv<T: Scalar>(g: &mut Graph<T>, b: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let k = b.var(&format!("{name}/w"))?;
    let bias = b.get(&format!("{name}/b"));
    let pad = g.shape(k)[2] / 2;
    g.conv2d(x, k, bias, stride, pad)
}
