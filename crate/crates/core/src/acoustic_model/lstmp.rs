//! LSTM with forget gate, peephole connections and a recurrent projection.
//!
//! ```text
//! i_t = sigmoid(W_ix x_t + W_ir r_{t-1} + w_ic * c_{t-1} + b_i)
//! f_t = sigmoid(W_fx x_t + W_fr r_{t-1} + w_fc * c_{t-1} + b_f)
//! c_t = f_t * c_{t-1} + i_t * tanh(W_cx x_t + W_cr r_{t-1} + b_c)
//! o_t = sigmoid(W_ox x_t + W_or r_{t-1} + w_oc * c_t + b_o)
//! m_t = o_t * tanh(c_t)
//! r_t = W_rm m_t
//! ```
//!
//! Gate parameters are stacked in the order `i, f, c, o`. There is no cell
//! clipping and the layer output is the projected sequence `r`.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmpLayer {
    /// `4C x in_dim`
    pub w_input: Array2<f64>,
    /// `4C x P`
    pub w_recurrent: Array2<f64>,
    /// `4C`
    pub bias: Array1<f64>,
    pub peep_input: Array1<f64>,
    pub peep_forget: Array1<f64>,
    pub peep_output: Array1<f64>,
    /// `P x C`
    pub w_projection: Array2<f64>,
}

pub(crate) struct LstmpCache {
    input: Array2<f64>,
    gates_i: Array2<f64>,
    gates_f: Array2<f64>,
    gates_g: Array2<f64>,
    gates_o: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    outputs: Array2<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl LstmpLayer {
    pub fn new_random<R: Rng>(in_dim: usize, cell_dim: usize, proj_dim: usize, rng: &mut R) -> Self {
        let gate_bound = (3.0 / (in_dim + proj_dim) as f64).sqrt();
        let proj_bound = (6.0 / cell_dim as f64).sqrt();
        let mut u = |shape: (usize, usize), b: f64| Array2::from_shape_simple_fn(shape, || rng.random_range(-b..b));
        let w_input = u((4 * cell_dim, in_dim), gate_bound);
        let w_recurrent = u((4 * cell_dim, proj_dim), gate_bound);
        let w_projection = u((proj_dim, cell_dim), proj_bound);
        let mut peep = || Array1::from_shape_simple_fn(cell_dim, || rng.random_range(-0.1..0.1));
        let (peep_input, peep_forget, peep_output) = (peep(), peep(), peep());
        let mut bias = Array1::zeros(4 * cell_dim);
        bias.slice_mut(s![cell_dim..2 * cell_dim]).fill(1.0);
        LstmpLayer {
            w_input,
            w_recurrent,
            bias,
            peep_input,
            peep_forget,
            peep_output,
            w_projection,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_input.ncols()
    }

    pub fn cell_dim(&self) -> usize {
        self.peep_input.len()
    }

    pub fn proj_dim(&self) -> usize {
        self.w_projection.nrows()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).1.outputs
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, LstmpCache) {
        let t_len = x.nrows();
        let c_dim = self.cell_dim();
        let p_dim = self.proj_dim();
        let mut pre = x.dot(&self.w_input.t());
        pre += &self.bias;

        let mut cache = LstmpCache {
            input: x.to_owned(),
            gates_i: Array2::zeros((t_len, c_dim)),
            gates_f: Array2::zeros((t_len, c_dim)),
            gates_g: Array2::zeros((t_len, c_dim)),
            gates_o: Array2::zeros((t_len, c_dim)),
            cells: Array2::zeros((t_len, c_dim)),
            tanh_cells: Array2::zeros((t_len, c_dim)),
            outputs: Array2::zeros((t_len, p_dim)),
        };
        let mut c_prev = Array1::<f64>::zeros(c_dim);
        let mut r_prev = Array1::<f64>::zeros(p_dim);
        let mut m = Array1::<f64>::zeros(c_dim);
        for t in 0..t_len {
            let mut a = pre.row(t).to_owned();
            a += &self.w_recurrent.dot(&r_prev);
            for j in 0..c_dim {
                let cp = c_prev[j];
                let i = sigmoid(a[j] + self.peep_input[j] * cp);
                let f = sigmoid(a[c_dim + j] + self.peep_forget[j] * cp);
                let g = a[2 * c_dim + j].tanh();
                let c = f * cp + i * g;
                let o = sigmoid(a[3 * c_dim + j] + self.peep_output[j] * c);
                let tc = c.tanh();
                cache.gates_i[[t, j]] = i;
                cache.gates_f[[t, j]] = f;
                cache.gates_g[[t, j]] = g;
                cache.gates_o[[t, j]] = o;
                cache.cells[[t, j]] = c;
                cache.tanh_cells[[t, j]] = tc;
                m[j] = o * tc;
                c_prev[j] = c;
            }
            r_prev = self.w_projection.dot(&m);
            cache.outputs.row_mut(t).assign(&r_prev);
        }
        (cache.outputs.clone(), cache)
    }

    /// Back-propagation through time over the whole sequence.
    pub(crate) fn backward(&self, cache: &LstmpCache, d_out: Array2<f64>, grad: &mut LstmpLayer) -> Array2<f64> {
        let t_len = d_out.nrows();
        let c_dim = self.cell_dim();
        let p_dim = self.proj_dim();
        let mut d_pre = Array2::<f64>::zeros((t_len, 4 * c_dim));
        let mut dr_next = Array1::<f64>::zeros(p_dim);
        let mut dc_next = Array1::<f64>::zeros(c_dim);
        let mut m = Array1::<f64>::zeros(c_dim);
        let zero_c = Array1::<f64>::zeros(c_dim);
        let zero_r = Array1::<f64>::zeros(p_dim);

        for t in (0..t_len).rev() {
            let dr = &d_out.row(t) + &dr_next;
            for j in 0..c_dim {
                m[j] = cache.gates_o[[t, j]] * cache.tanh_cells[[t, j]];
            }
            // r_t = W_rm m_t
            for p in 0..p_dim {
                let mut row = grad.w_projection.row_mut(p);
                row.scaled_add(dr[p], &m);
            }
            let dm = self.w_projection.t().dot(&dr);
            let c_prev = if t > 0 { cache.cells.row(t - 1) } else { zero_c.view() };
            let mut dc_prev = Array1::<f64>::zeros(c_dim);
            for j in 0..c_dim {
                let i = cache.gates_i[[t, j]];
                let f = cache.gates_f[[t, j]];
                let g = cache.gates_g[[t, j]];
                let o = cache.gates_o[[t, j]];
                let c = cache.cells[[t, j]];
                let tc = cache.tanh_cells[[t, j]];
                let cp = c_prev[j];

                let d_o = dm[j] * tc;
                let da_o = d_o * o * (1.0 - o);
                let mut dc = dm[j] * o * (1.0 - tc * tc) + dc_next[j];
                dc += da_o * self.peep_output[j];
                grad.peep_output[j] += da_o * c;

                let da_i = dc * g * i * (1.0 - i);
                let da_f = dc * cp * f * (1.0 - f);
                let da_g = dc * i * (1.0 - g * g);
                grad.peep_input[j] += da_i * cp;
                grad.peep_forget[j] += da_f * cp;
                dc_prev[j] = dc * f + da_i * self.peep_input[j] + da_f * self.peep_forget[j];

                d_pre[[t, j]] = da_i;
                d_pre[[t, c_dim + j]] = da_f;
                d_pre[[t, 2 * c_dim + j]] = da_g;
                d_pre[[t, 3 * c_dim + j]] = da_o;
            }
            let r_prev = if t > 0 { cache.outputs.row(t - 1) } else { zero_r.view() };
            let da = d_pre.row(t);
            for (g_row, &d) in grad.w_recurrent.rows_mut().into_iter().zip(da.iter()) {
                let mut g_row = g_row;
                g_row.scaled_add(d, &r_prev);
            }
            dr_next = self.w_recurrent.t().dot(&da);
            dc_next = dc_prev;
        }
        grad.bias += &d_pre.sum_axis(Axis(0));
        grad.w_input += &d_pre.t().dot(&cache.input);
        d_pre.dot(&self.w_input)
    }

    pub(crate) fn zeros_like(&self) -> Self {
        LstmpLayer {
            w_input: Array2::zeros(self.w_input.raw_dim()),
            w_recurrent: Array2::zeros(self.w_recurrent.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
            peep_input: Array1::zeros(self.peep_input.raw_dim()),
            peep_forget: Array1::zeros(self.peep_forget.raw_dim()),
            peep_output: Array1::zeros(self.peep_output.raw_dim()),
            w_projection: Array2::zeros(self.w_projection.raw_dim()),
        }
    }
}

/// Runs an LSTMP layer over a sequence from zero initial state and returns
/// the projected outputs, `T x proj_dim`.
pub fn lstmp_forward(layer: &LstmpLayer, inputs: ArrayView2<f64>) -> Array2<f64> {
    layer.forward(inputs)
}
