use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

/// Affine map over frames spliced at fixed offsets, followed by ReLU.
/// Offsets falling outside the sequence read the nearest edge frame.
#[derive(Debug, Clone, PartialEq)]
pub struct TdnnLayer {
    pub context: Vec<i32>,
    /// `out_dim x (context.len() * in_dim)`; column block `k` multiplies the
    /// frame at offset `context[k]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub(crate) struct TdnnCache {
    spliced: Array2<f64>,
    output: Array2<f64>,
}

impl TdnnLayer {
    pub fn new_random<R: Rng>(context: &[i32], in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let fan_in = context.len() * in_dim;
        let bound = (6.0 / fan_in as f64).sqrt();
        TdnnLayer {
            context: context.to_vec(),
            weight: Array2::from_shape_simple_fn((out_dim, fan_in), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols() / self.context.len()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// `T x (context.len() * in_dim)` matrix of offset frames.
    pub fn splice_input(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let (t, d) = x.dim();
        let mut out = Array2::zeros((t, d * self.context.len()));
        for i in 0..t {
            for (k, &off) in self.context.iter().enumerate() {
                let src = clamp_frame(i, off, t);
                out.slice_mut(s![i, k * d..(k + 1) * d]).assign(&x.row(src));
            }
        }
        out
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).1.output
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, TdnnCache) {
        let spliced = self.splice_input(x);
        let mut y = spliced.dot(&self.weight.t());
        y += &self.bias;
        y.mapv_inplace(|v| v.max(0.0));
        (
            y.clone(),
            TdnnCache {
                spliced,
                output: y,
            },
        )
    }

    /// Accumulates parameter gradients into `grad` and returns the gradient
    /// with respect to the layer input.
    pub(crate) fn backward(&self, cache: &TdnnCache, mut dy: Array2<f64>, grad: &mut TdnnLayer) -> Array2<f64> {
        ndarray::Zip::from(&mut dy)
            .and(&cache.output)
            .for_each(|g, &y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            });
        grad.weight += &dy.t().dot(&cache.spliced);
        grad.bias += &dy.sum_axis(Axis(0));
        let d_spliced = dy.dot(&self.weight);
        let t = dy.nrows();
        let d = self.in_dim();
        let mut dx = Array2::zeros((t, d));
        for i in 0..t {
            for (k, &off) in self.context.iter().enumerate() {
                let dst = clamp_frame(i, off, t);
                let mut row = dx.row_mut(dst);
                row += &d_spliced.slice(s![i, k * d..(k + 1) * d]);
            }
        }
        dx
    }

    pub(crate) fn zeros_like(&self) -> Self {
        TdnnLayer {
            context: self.context.clone(),
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

pub(crate) fn clamp_frame(t: usize, offset: i32, len: usize) -> usize {
    (t as i64 + offset as i64).clamp(0, len as i64 - 1) as usize
}

/// Applies a TDNN layer: splice at `layer.context`, affine, ReLU.
pub fn tdnn_forward(layer: &TdnnLayer, inputs: ArrayView2<f64>) -> Array2<f64> {
    layer.forward(inputs)
}
