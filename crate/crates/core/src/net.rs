//! Dense layers with exact backpropagation: character embeddings with a 1-D
//! convolution and max-over-time pooling, a bidirectional LSTM, and a linear
//! projection to per-tag emission scores.
//!
//! Every layer follows the same shape: `forward` returns its output and a
//! trace, `backward` consumes the trace and the output gradient, adds
//! parameter gradients into a zero-initialised clone of the layer and
//! returns the input gradient.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{axpy, dot, sigmoid, Matrix};

pub const PAD: usize = 0;
pub const UNK: usize = 1;

/// Character inventory with reserved PAD and UNK indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CharVocab {
    chars: Vec<char>,
    index: HashMap<char, usize>,
}

impl CharVocab {
    /// Builds the inventory from the characters of `tokens`, sorted by code
    /// point.
    pub fn build<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut set = std::collections::BTreeSet::new();
        for t in tokens {
            set.extend(t.as_ref().chars());
        }
        CharVocab::from_chars(set.into_iter().collect())
    }

    pub fn from_chars(chars: Vec<char>) -> Self {
        let index = chars.iter().enumerate().map(|(i, &c)| (c, i + 2)).collect();
        CharVocab { chars, index }
    }

    /// Characters in index order, starting at index 2.
    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn len(&self) -> usize {
        self.chars.len() + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, token: &str) -> Vec<usize> {
        token
            .chars()
            .map(|c| self.index.get(&c).copied().unwrap_or(UNK))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub char_dim: usize,
    pub char_window: usize,
    pub char_filters: usize,
    pub hidden: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            char_dim: 30,
            char_window: 3,
            char_filters: 30,
            hidden: 100,
        }
    }
}

/// A named view of one parameter tensor.
#[derive(Debug)]
pub struct Block<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

fn mat_block<'a>(name: &str, m: &'a Matrix) -> Block<'a> {
    Block {
        name: name.to_string(),
        shape: m.shape().to_vec(),
        data: m.data(),
    }
}

fn vec_block<'a>(name: &str, v: &'a [f64]) -> Block<'a> {
    Block {
        name: name.to_string(),
        shape: vec![v.len()],
        data: v,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharCnn {
    pub embed: Matrix,
    pub filters: Matrix,
    pub bias: Vec<f64>,
    pub window: usize,
}

#[derive(Debug, Clone)]
pub struct CharCnnTrace {
    padded: Vec<usize>,
    argmax: Vec<usize>,
}

impl CharCnn {
    pub fn init<R: Rng>(vocab_size: usize, char_dim: usize, window: usize, filters: usize, rng: &mut R) -> Self {
        CharCnn {
            embed: Matrix::glorot(vocab_size, char_dim, rng),
            filters: Matrix::glorot(filters, window * char_dim, rng),
            bias: vec![0.0; filters],
            window,
        }
    }

    pub fn char_dim(&self) -> usize {
        self.embed.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.filters.rows()
    }

    pub fn zeros_like(&self) -> Self {
        CharCnn {
            embed: self.embed.zeros_like(),
            filters: self.filters.zeros_like(),
            bias: vec![0.0; self.bias.len()],
            window: self.window,
        }
    }

    fn window_vector(&self, padded: &[usize], pos: usize, out: &mut Vec<f64>) {
        out.clear();
        for &c in &padded[pos..pos + self.window] {
            out.extend_from_slice(self.embed.row(c));
        }
    }

    /// Encodes one token's character indices into an `output_dim` vector.
    pub fn encode(&self, chars: &[usize]) -> Vec<f64> {
        self.forward(chars).0
    }

    pub fn forward(&self, chars: &[usize]) -> (Vec<f64>, CharCnnTrace) {
        let mut padded = chars.to_vec();
        if padded.len() < self.window {
            padded.resize(self.window, PAD);
        }
        let positions = padded.len() - self.window + 1;
        let f = self.output_dim();
        let mut best = vec![f64::NEG_INFINITY; f];
        let mut argmax = vec![0; f];
        let mut win = Vec::with_capacity(self.window * self.char_dim());
        for p in 0..positions {
            self.window_vector(&padded, p, &mut win);
            for j in 0..f {
                let s = dot(self.filters.row(j), &win);
                if s > best[j] {
                    best[j] = s;
                    argmax[j] = p;
                }
            }
        }
        let out = best.iter().zip(&self.bias).map(|(b, c)| b + c).collect();
        (out, CharCnnTrace { padded, argmax })
    }

    pub fn backward(&self, trace: &CharCnnTrace, d_out: &[f64], grad: &mut CharCnn) {
        let d = self.char_dim();
        let mut win = Vec::with_capacity(self.window * d);
        for (j, &g) in d_out.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            grad.bias[j] += g;
            let p = trace.argmax[j];
            self.window_vector(&trace.padded, p, &mut win);
            axpy(g, &win, grad.filters.row_mut(j));
            let filter = self.filters.row(j);
            for (k, &c) in trace.padded[p..p + self.window].iter().enumerate() {
                axpy(g, &filter[k * d..(k + 1) * d], grad.embed.row_mut(c));
            }
        }
    }
}

/// LSTM with gate order i, f, g, o in the stacked weight rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub w_ih: Matrix,
    pub w_hh: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
struct LstmStep {
    pos: usize,
    active: bool,
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: Vec<LstmStep>,
    input_dim: usize,
}

impl Lstm {
    /// Glorot-uniform weights, zero bias except forget gate bias 1.
    pub fn init<R: Rng>(input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut bias = vec![0.0; 4 * hidden];
        bias[hidden..2 * hidden].fill(1.0);
        Lstm {
            w_ih: Matrix::glorot(4 * hidden, input, rng),
            w_hh: Matrix::glorot(4 * hidden, hidden, rng),
            bias,
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.w_ih.cols()
    }

    pub fn zeros_like(&self) -> Self {
        Lstm {
            w_ih: self.w_ih.zeros_like(),
            w_hh: self.w_hh.zeros_like(),
            bias: vec![0.0; self.bias.len()],
        }
    }

    /// Runs the recurrence over `xs` (right to left when `reverse`).
    /// Inactive positions hold the previous state unchanged; outputs are
    /// returned in position order.
    pub fn forward(&self, xs: &[Vec<f64>], active: &[bool], reverse: bool) -> (Vec<Vec<f64>>, LstmTrace) {
        let h = self.hidden();
        let len = xs.len();
        let mut outputs = vec![Vec::new(); len];
        let mut steps = Vec::with_capacity(len);
        let mut h_prev = vec![0.0; h];
        let mut c_prev = vec![0.0; h];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        };
        for pos in order {
            if !active[pos] {
                outputs[pos] = h_prev.clone();
                steps.push(LstmStep {
                    pos,
                    active: false,
                    x: Vec::new(),
                    h_prev: Vec::new(),
                    c_prev: Vec::new(),
                    i: Vec::new(),
                    f: Vec::new(),
                    g: Vec::new(),
                    o: Vec::new(),
                    tanh_c: Vec::new(),
                });
                continue;
            }
            let x = &xs[pos];
            let mut z = self.bias.clone();
            self.w_ih.gemv_acc(x, &mut z);
            self.w_hh.gemv_acc(&h_prev, &mut z);
            let i: Vec<f64> = z[..h].iter().map(|&v| sigmoid(v)).collect();
            let f: Vec<f64> = z[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
            let g: Vec<f64> = z[2 * h..3 * h].iter().map(|v| v.tanh()).collect();
            let o: Vec<f64> = z[3 * h..].iter().map(|&v| sigmoid(v)).collect();
            let c: Vec<f64> = (0..h).map(|k| f[k] * c_prev[k] + i[k] * g[k]).collect();
            let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
            let h_t: Vec<f64> = (0..h).map(|k| o[k] * tanh_c[k]).collect();
            outputs[pos] = h_t.clone();
            steps.push(LstmStep {
                pos,
                active: true,
                x: x.clone(),
                h_prev: std::mem::replace(&mut h_prev, h_t),
                c_prev: std::mem::replace(&mut c_prev, c),
                i,
                f,
                g,
                o,
                tanh_c,
            });
        }
        (
            outputs,
            LstmTrace {
                steps,
                input_dim: self.input_dim(),
            },
        )
    }

    /// Backpropagation through time. `d_h[pos]` is the gradient of the loss
    /// with respect to the output at `pos`.
    pub fn backward(&self, trace: &LstmTrace, d_h: &[Vec<f64>], grad: &mut Lstm) -> Vec<Vec<f64>> {
        let h = self.hidden();
        let mut d_x = vec![vec![0.0; trace.input_dim]; d_h.len()];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for step in trace.steps.iter().rev() {
            let mut dh = d_h[step.pos].clone();
            axpy(1.0, &dh_next, &mut dh);
            if !step.active {
                dh_next = dh;
                continue;
            }
            for k in 0..h {
                let (i, f, g, o, tc) = (step.i[k], step.f[k], step.g[k], step.o[k], step.tanh_c[k]);
                let d_o = dh[k] * tc;
                let dc = dh[k] * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * g * i * (1.0 - i);
                dz[h + k] = dc * step.c_prev[k] * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - g * g);
                dz[3 * h + k] = d_o * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            grad.w_ih.add_outer(&dz, &step.x);
            grad.w_hh.add_outer(&dz, &step.h_prev);
            axpy(1.0, &dz, &mut grad.bias);
            self.w_ih.gemv_t_acc(&dz, &mut d_x[step.pos]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.w_hh.gemv_t_acc(&dz, &mut dh_next);
        }
        d_x
    }
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Projection {
    pub fn init<R: Rng>(outputs: usize, inputs: usize, rng: &mut R) -> Self {
        Projection {
            w: Matrix::glorot(outputs, inputs, rng),
            b: vec![0.0; outputs],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Projection {
            w: self.w.zeros_like(),
            b: vec![0.0; self.b.len()],
        }
    }

    /// `emissions[t] = W · hidden[t] + b`
    pub fn forward(&self, hidden: &[Vec<f64>]) -> Matrix {
        let k = self.b.len();
        let mut out = Matrix::zeros(hidden.len(), k);
        for (t, h) in hidden.iter().enumerate() {
            let row = out.row_mut(t);
            row.copy_from_slice(&self.b);
            self.w.gemv_acc(h, row);
        }
        out
    }

    pub fn backward(&self, hidden: &[Vec<f64>], d_emissions: &Matrix, grad: &mut Projection) -> Vec<Vec<f64>> {
        hidden
            .iter()
            .enumerate()
            .map(|(t, h)| {
                let d = d_emissions.row(t);
                grad.w.add_outer(d, h);
                axpy(1.0, d, &mut grad.b);
                let mut dh = vec![0.0; h.len()];
                self.w.gemv_t_acc(d, &mut dh);
                dh
            })
            .collect()
    }
}

/// Every weight left of the CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct NetParams {
    pub char_cnn: Option<CharCnn>,
    pub fwd: Lstm,
    pub bwd: Lstm,
    pub proj: Projection,
}

impl NetParams {
    /// `char_vocab_size = None` builds a network without the char-CNN.
    pub fn init<R: Rng>(
        config: &NetConfig,
        word_dim: usize,
        char_vocab_size: Option<usize>,
        num_tags: usize,
        rng: &mut R,
    ) -> Self {
        let char_cnn = char_vocab_size.map(|v| {
            CharCnn::init(v, config.char_dim, config.char_window, config.char_filters, rng)
        });
        let input = word_dim + char_cnn.as_ref().map_or(0, CharCnn::output_dim);
        NetParams {
            char_cnn,
            fwd: Lstm::init(input, config.hidden, rng),
            bwd: Lstm::init(input, config.hidden, rng),
            proj: Projection::init(num_tags, 2 * config.hidden, rng),
        }
    }

    pub fn zeros_like(&self) -> Self {
        NetParams {
            char_cnn: self.char_cnn.as_ref().map(CharCnn::zeros_like),
            fwd: self.fwd.zeros_like(),
            bwd: self.bwd.zeros_like(),
            proj: self.proj.zeros_like(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.fwd.input_dim()
    }

    pub fn hidden(&self) -> usize {
        self.fwd.hidden()
    }

    pub fn char_cnn_encode(&self, chars: &[usize]) -> Option<Vec<f64>> {
        self.char_cnn.as_ref().map(|cnn| cnn.encode(chars))
    }

    /// Concatenated `[forward h_t ; backward h_t]` for every position.
    pub fn bilstm_forward(&self, xs: &[Vec<f64>], active: &[bool]) -> (Vec<Vec<f64>>, BiLstmTrace) {
        let (hf, fwd) = self.fwd.forward(xs, active, false);
        let (hb, bwd) = self.bwd.forward(xs, active, true);
        let out = hf
            .into_iter()
            .zip(hb)
            .map(|(mut a, b)| {
                a.extend(b);
                a
            })
            .collect();
        (out, BiLstmTrace { fwd, bwd })
    }

    pub fn bilstm_backward(&self, trace: &BiLstmTrace, d_h: &[Vec<f64>], grad: &mut NetParams) -> Vec<Vec<f64>> {
        let h = self.hidden();
        let (df, db): (Vec<Vec<f64>>, Vec<Vec<f64>>) =
            d_h.iter().map(|d| (d[..h].to_vec(), d[h..].to_vec())).unzip();
        let mut dx = self.fwd.backward(&trace.fwd, &df, &mut grad.fwd);
        let dx_b = self.bwd.backward(&trace.bwd, &db, &mut grad.bwd);
        for (a, b) in dx.iter_mut().zip(&dx_b) {
            axpy(1.0, b, a);
        }
        dx
    }

    pub fn project_emissions(&self, hidden: &[Vec<f64>]) -> Matrix {
        self.proj.forward(hidden)
    }

    pub fn blocks(&self) -> Vec<Block<'_>> {
        let mut out = Vec::new();
        if let Some(cnn) = &self.char_cnn {
            out.push(mat_block("char.embed", &cnn.embed));
            out.push(mat_block("char.filters", &cnn.filters));
            out.push(vec_block("char.bias", &cnn.bias));
        }
        for (dir, lstm) in [("fwd", &self.fwd), ("bwd", &self.bwd)] {
            out.push(mat_block(&format!("lstm.{dir}.w_ih"), &lstm.w_ih));
            out.push(mat_block(&format!("lstm.{dir}.w_hh"), &lstm.w_hh));
            out.push(vec_block(&format!("lstm.{dir}.bias"), &lstm.bias));
        }
        out.push(mat_block("proj.w", &self.proj.w));
        out.push(vec_block("proj.b", &self.proj.b));
        out
    }

    /// Mutable views in the same order as [`blocks`](Self::blocks).
    pub fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if let Some(cnn) = &mut self.char_cnn {
            out.push(cnn.embed.data_mut());
            out.push(cnn.filters.data_mut());
            out.push(&mut cnn.bias);
        }
        for lstm in [&mut self.fwd, &mut self.bwd] {
            out.push(lstm.w_ih.data_mut());
            out.push(lstm.w_hh.data_mut());
            out.push(&mut lstm.bias);
        }
        out.push(self.proj.w.data_mut());
        out.push(&mut self.proj.b);
        out
    }
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, else
/// `1 / (1 - rate)`.
pub fn dropout_mask<R: Rng>(len: usize, rate: f64, rng: &mut R) -> Vec<f64> {
    if rate <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

/// Name → shape map of a parameter set, for checkpoint validation.
pub fn shapes(blocks: &[Block<'_>]) -> BTreeMap<String, Vec<usize>> {
    blocks.iter().map(|b| (b.name.clone(), b.shape.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, relative_error, DEFAULT_STEP};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn char_vocab_reserves_pad_and_unk() {
        let v = CharVocab::build(["ba", "c"]);
        assert_eq!(v.len(), 5);
        assert_eq!(v.encode("abz"), [2, 3, UNK]);
    }

    #[test]
    fn zero_filters_output_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut cnn = CharCnn::init(6, 4, 3, 5, &mut rng);
        cnn.filters = cnn.filters.zeros_like();
        cnn.bias = vec![0.5, -1.0, 2.0, 0.0, 3.0];
        for token in [vec![2], vec![2, 3, 4, 5, 2, 3]] {
            assert_eq!(cnn.encode(&token), cnn.bias);
        }
    }

    #[test]
    fn max_over_time_by_hand() {
        let cnn = CharCnn {
            embed: Matrix::from_rows(&[vec![0.0], vec![0.0], vec![2.0], vec![-3.0], vec![5.0]]),
            filters: Matrix::from_rows(&[vec![1.0]]),
            bias: vec![0.0],
            window: 1,
        };
        assert_eq!(cnn.encode(&[2, 3, 4]), [5.0]);
    }

    #[test]
    fn output_width_is_filter_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cnn = CharCnn::init(10, 3, 3, 7, &mut rng);
        for len in [1, 2, 3, 9] {
            assert_eq!(cnn.encode(&vec![4; len]).len(), 7);
        }
    }

    #[test]
    fn zero_lstm_is_a_fixed_point() {
        let lstm = Lstm {
            w_ih: Matrix::zeros(12, 4),
            w_hh: Matrix::zeros(12, 3),
            bias: vec![0.0; 12],
        };
        let net = NetParams {
            char_cnn: None,
            fwd: lstm.clone(),
            bwd: lstm,
            proj: Projection { w: Matrix::zeros(2, 6), b: vec![0.0; 2] },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for len in [1, 5] {
            let xs = random_vecs(&mut rng, len, 4);
            let (hs, _) = net.bilstm_forward(&xs, &vec![true; len]);
            assert_eq!(hs.len(), len);
            for h in hs {
                assert_eq!(h, vec![0.0; 6]);
            }
        }
    }

    #[test]
    fn projection_by_hand() {
        let proj = Projection { w: Matrix::zeros(3, 2), b: vec![1.0, 2.0, 3.0] };
        let e = proj.forward(&[vec![4.0, 5.0], vec![-1.0, 0.0]]);
        assert_eq!(e.row(0), [1.0, 2.0, 3.0]);
        assert_eq!(e.row(1), [1.0, 2.0, 3.0]);
        let proj = Projection { w: Matrix::from_rows(&[vec![1.0, 0.0]]), b: vec![0.5] };
        let e = proj.forward(&[vec![4.0, 5.0], vec![-1.0, 7.0]]);
        assert_eq!(e.data(), [4.5, -0.5]);
    }

    /// Weighted sum of the projection output, so every activation matters.
    fn probe_loss(net: &NetParams, xs: &[Vec<f64>], active: &[bool], weights: &Matrix) -> f64 {
        let (hs, _) = net.bilstm_forward(xs, active);
        let e = net.project_emissions(&hs);
        e.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn bilstm_and_projection_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for trial in 0..5 {
            let cfg = NetConfig { hidden: 3, ..Default::default() };
            let mut net = NetParams::init(&cfg, 5, None, 4, &mut rng);
            let len = 4;
            let xs = random_vecs(&mut rng, len, 5);
            let active = if trial % 2 == 0 { vec![true; len] } else { vec![true, true, true, false] };
            let weights = Matrix::from_vec(len, 4, (0..len * 4).map(|_| rng.gen_range(-1.0..1.0)).collect());

            let (hs, trace) = net.bilstm_forward(&xs, &active);
            let mut grad = net.zeros_like();
            let d_h = net.proj.backward(&hs, &weights, &mut grad.proj);
            let d_x = net.bilstm_backward(&trace, &d_h, &mut grad);

            let analytic: Vec<Vec<f64>> = grad.blocks().iter().map(|b| b.data.to_vec()).collect();
            let names: Vec<String> = net.blocks().iter().map(|b| b.name.clone()).collect();
            for (bi, name) in names.iter().enumerate() {
                let n = analytic[bi].len();
                for idx in 0..n {
                    let saved = net.blocks_mut()[bi][idx];
                    net.blocks_mut()[bi][idx] = saved + DEFAULT_STEP;
                    let plus = probe_loss(&net, &xs, &active, &weights);
                    net.blocks_mut()[bi][idx] = saved - DEFAULT_STEP;
                    let minus = probe_loss(&net, &xs, &active, &weights);
                    net.blocks_mut()[bi][idx] = saved;
                    let fd = (plus - minus) / (2.0 * DEFAULT_STEP);
                    let err = relative_error(analytic[bi][idx], fd);
                    assert!(err < 1e-5, "{name}[{idx}]: {} vs {fd}", analytic[bi][idx]);
                }
            }
            for t in 0..len {
                for d in 0..5 {
                    let mut row = xs[t].clone();
                    let fd = central_difference(&mut row, d, DEFAULT_STEP, |r| {
                        let mut x2 = xs.clone();
                        x2[t] = r.to_vec();
                        probe_loss(&net, &x2, &active, &weights)
                    });
                    assert!(relative_error(d_x[t][d], fd) < 1e-5);
                }
            }
        }
    }

    fn cnn_param(c: &mut CharCnn, field: usize, idx: usize) -> &mut f64 {
        match field {
            0 => &mut c.embed.data_mut()[idx],
            1 => &mut c.filters.data_mut()[idx],
            _ => &mut c.bias[idx],
        }
    }

    #[test]
    fn char_cnn_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut cnn = CharCnn::init(7, 3, 3, 4, &mut rng);
        let chars = [2, 5, 3, 6, 2];
        let w: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let loss = |c: &CharCnn| dot(&c.encode(&chars), &w);
        let (_, trace) = cnn.forward(&chars);
        let mut grad = cnn.zeros_like();
        cnn.backward(&trace, &w, &mut grad);

        for (field, g) in [
            (0usize, grad.embed.data().to_vec()),
            (1, grad.filters.data().to_vec()),
            (2, grad.bias.clone()),
        ] {
            for idx in 0..g.len() {
                let saved = *cnn_param(&mut cnn, field, idx);
                *cnn_param(&mut cnn, field, idx) = saved + DEFAULT_STEP;
                let plus = loss(&cnn);
                *cnn_param(&mut cnn, field, idx) = saved - DEFAULT_STEP;
                let minus = loss(&cnn);
                *cnn_param(&mut cnn, field, idx) = saved;
                let fd = (plus - minus) / (2.0 * DEFAULT_STEP);
                assert!(relative_error(g[idx], fd) < 1e-6, "field {field} idx {idx}");
            }
        }
    }

    #[test]
    fn dropout_mask_is_inverted_and_seeded() {
        let mut a = ChaCha8Rng::seed_from_u64(8);
        let mut b = ChaCha8Rng::seed_from_u64(8);
        let m = dropout_mask(1000, 0.5, &mut a);
        assert_eq!(m, dropout_mask(1000, 0.5, &mut b));
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        assert_eq!(dropout_mask(3, 0.0, &mut a), [1.0; 3]);
    }

    #[test]
    fn activations_stay_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let net = NetParams::init(&NetConfig::default(), 100, Some(40), 9, &mut rng);
        let xs: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..130).map(|_| rng.gen_range(-10.0..10.0)).collect())
            .collect();
        let (hs, _) = net.bilstm_forward(&xs, &[true; 12]);
        let e = net.project_emissions(&hs);
        assert!(e.data().iter().all(|v| v.is_finite()));
    }
}
