//! LSTM whose input-to-hidden transforms are HT layers.
//!
//! Gate order everywhere is `u, f, o, c` (input, forget, output, candidate):
//!
//! ```text
//! u = σ(HTL(W_u, x) + V_u h + b_u)      f = σ(HTL(W_f, x) + V_f h + b_f)
//! o = σ(HTL(W_o, x) + V_o h + b_o)      g = tanh(HTL(W_c, x) + V_c h + b_c)
//! c' = f ⊙ c + u ⊙ g                    h' = o ⊙ tanh(c')
//! ```
//!
//! The recurrent matrices `V` are dense. A dense affine head maps the last
//! hidden state to class logits. Dropout, when enabled, is inverted dropout on
//! the HT outputs only.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ht::HtLinearLayer;
use crate::layer::{ForwardTrace, LayerGradients};
use crate::tensor::DenseTensor;
use crate::tree::{DimTree, InteriorSplit};

pub const GATES: usize = 4;

/// How the four input-to-hidden transforms are stored.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateLayout {
    /// Four independent HT layers with output shape `(m_1, ..., m_d)`.
    #[default]
    Separate,
    /// One HT layer with output shape `(4 m_1, m_2, ..., m_d)`; gate `k`
    /// occupies output rows `k H .. (k+1) H`.
    Concatenated,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmConfig {
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub leaf_rank: usize,
    pub internal_rank: usize,
    pub split: InteriorSplit,
    pub classes: usize,
    pub layout: GateLayout,
    pub forget_bias: f64,
    pub seed: u64,
}

impl Default for LstmConfig {
    fn default() -> Self {
        Self {
            in_shape: vec![8, 8, 3, 3],
            out_shape: vec![4, 4, 2, 2],
            leaf_rank: 3,
            internal_rank: 3,
            split: InteriorSplit::FloorLeft,
            classes: 5,
            layout: GateLayout::Separate,
            forget_bias: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        Self {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LstmParams {
    layout: GateLayout,
    hidden: usize,
    ht: Vec<HtLinearLayer>,
    /// `V_u, V_f, V_o, V_c`, each `H x H`.
    recurrent: Vec<DenseTensor>,
    /// `b_u, b_f, b_o, b_c`, each length `H`.
    bias: Vec<DenseTensor>,
    head_w: DenseTensor,
    head_b: DenseTensor,
}

fn uniform(rng: &mut ChaCha8Rng, shape: Vec<usize>, bound: f64) -> Result<DenseTensor> {
    let len = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-bound..=bound)).collect();
    DenseTensor::new(shape, data)
}

impl LstmParams {
    pub fn new(cfg: &LstmConfig) -> Result<Self> {
        if cfg.classes < 2 {
            return Err(Error::Argument("the classifier head needs at least 2 classes".into()));
        }
        let d = cfg.in_shape.len();
        let tree = DimTree::build(d, cfg.split)?.assign_ranks(cfg.leaf_rank, cfg.internal_rank, 1)?;
        let hidden: usize = cfg.out_shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let ht = match cfg.layout {
            GateLayout::Separate => (0..GATES)
                .map(|_| {
                    let seed = rng.random();
                    HtLinearLayer::random(tree.clone(), cfg.in_shape.clone(), cfg.out_shape.clone(), seed)
                })
                .collect::<Result<Vec<_>>>()?,
            GateLayout::Concatenated => {
                let mut out = cfg.out_shape.clone();
                out[0] *= GATES;
                vec![HtLinearLayer::random(tree, cfg.in_shape.clone(), out, rng.random())?]
            }
        };
        let bound = 1.0 / (hidden as f64).sqrt();
        let recurrent = (0..GATES)
            .map(|_| uniform(&mut rng, vec![hidden, hidden], bound))
            .collect::<Result<Vec<_>>>()?;
        let mut bias = vec![DenseTensor::zeros(vec![hidden])?; GATES];
        bias[1] = DenseTensor::vector(vec![cfg.forget_bias; hidden]);
        let head_w = uniform(&mut rng, vec![cfg.classes, hidden], bound)?;
        let head_b = DenseTensor::zeros(vec![cfg.classes])?;
        Ok(Self {
            layout: cfg.layout,
            hidden,
            ht,
            recurrent,
            bias,
            head_w,
            head_b,
        })
    }

    /// Assembles parameters from parts, checking every shape.
    pub fn from_parts(
        layout: GateLayout,
        ht: Vec<HtLinearLayer>,
        recurrent: Vec<DenseTensor>,
        bias: Vec<DenseTensor>,
        head_w: DenseTensor,
        head_b: DenseTensor,
    ) -> Result<Self> {
        let expected_layers = match layout {
            GateLayout::Separate => GATES,
            GateLayout::Concatenated => 1,
        };
        if ht.len() != expected_layers {
            return Err(Error::Structure(format!(
                "{layout:?} layout needs {expected_layers} HT layers, got {}",
                ht.len()
            )));
        }
        let first = &ht[0];
        let hidden = match layout {
            GateLayout::Separate => first.out_dim(),
            GateLayout::Concatenated => {
                if !first.out_shape()[0].is_multiple_of(GATES) {
                    return Err(Error::Structure(
                        "concatenated layer's first output mode must be divisible by 4".into(),
                    ));
                }
                first.out_dim() / GATES
            }
        };
        for l in &ht {
            if l.in_shape() != first.in_shape()
                || l.out_shape() != first.out_shape()
                || l.tree().nodes().map(|(_, n)| &n.modes).ne(first.tree().nodes().map(|(_, n)| &n.modes))
            {
                return Err(Error::Structure("all HT gate layers must share shapes and tree".into()));
            }
        }
        let sq = [hidden, hidden];
        if recurrent.len() != GATES || recurrent.iter().any(|v| v.shape() != sq) {
            return Err(Error::Structure(format!("expected four {hidden}x{hidden} recurrent matrices")));
        }
        if bias.len() != GATES || bias.iter().any(|b| b.shape() != [hidden]) {
            return Err(Error::Structure(format!("expected four bias vectors of length {hidden}")));
        }
        if head_w.order() != 2 || head_w.shape()[1] != hidden || head_b.shape() != [head_w.shape()[0]] {
            return Err(Error::Structure("classifier head shapes are inconsistent".into()));
        }
        if head_w.shape()[0] < 2 {
            return Err(Error::Structure("the classifier head needs at least 2 classes".into()));
        }
        Ok(Self {
            layout,
            hidden,
            ht,
            recurrent,
            bias,
            head_w,
            head_b,
        })
    }

    pub fn layout(&self) -> GateLayout {
        self.layout
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn input_dim(&self) -> usize {
        self.ht[0].in_dim()
    }

    pub fn classes(&self) -> usize {
        self.head_w.shape()[0]
    }

    pub fn ht_layers(&self) -> &[HtLinearLayer] {
        &self.ht
    }

    pub fn recurrent(&self) -> &[DenseTensor] {
        &self.recurrent
    }

    pub fn bias(&self) -> &[DenseTensor] {
        &self.bias
    }

    pub fn head_weight(&self) -> &DenseTensor {
        &self.head_w
    }

    pub fn head_bias(&self) -> &DenseTensor {
        &self.head_b
    }

    /// Every trainable buffer in a fixed order: HT components (layer by layer,
    /// node order), `V_u..V_c`, `b_u..b_c`, head weight, head bias.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for l in &self.ht {
            v.extend(l.core().components().iter().map(DenseTensor::data));
        }
        v.extend(self.recurrent.iter().map(DenseTensor::data));
        v.extend(self.bias.iter().map(DenseTensor::data));
        v.push(self.head_w.data());
        v.push(self.head_b.data());
        v
    }

    /// Mutable counterpart of [`param_slices`](Self::param_slices), same order.
    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.ht {
            v.extend(l.components_data_mut());
        }
        v.extend(self.recurrent.iter_mut().map(DenseTensor::data_mut));
        v.extend(self.bias.iter_mut().map(DenseTensor::data_mut));
        v.push(self.head_w.data_mut());
        v.push(self.head_b.data_mut());
        v
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    /// Parameters of the HT gate layers only.
    pub fn ht_param_count(&self) -> usize {
        self.ht.iter().map(HtLinearLayer::param_count).sum()
    }

    fn fingerprint(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for s in self.param_slices() {
            s.len().hash(&mut h);
            for v in s {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// HT outputs for all gates: `(rows, 4H)` with gate blocks `u, f, o, c`.
    fn input_transform(&self, xs: &DenseTensor) -> Result<(DenseTensor, Vec<ForwardTrace>)> {
        let rows = xs.shape()[0];
        let h = self.hidden;
        match self.layout {
            GateLayout::Concatenated => {
                let (y, tr) = self.ht[0].forward_traced(xs)?;
                Ok((y, vec![tr]))
            }
            GateLayout::Separate => {
                let mut out = vec![0.0; rows * GATES * h];
                let mut traces = Vec::with_capacity(GATES);
                for (k, layer) in self.ht.iter().enumerate() {
                    let (y, tr) = layer.forward_traced(xs)?;
                    for r in 0..rows {
                        out[r * GATES * h + k * h..r * GATES * h + (k + 1) * h]
                            .copy_from_slice(&y.data()[r * h..(r + 1) * h]);
                    }
                    traces.push(tr);
                }
                Ok((DenseTensor::new(vec![rows, GATES * h], out)?, traces))
            }
        }
    }

    fn input_transform_backward(&self, traces: &[ForwardTrace], d_pre: &DenseTensor) -> Result<Vec<LayerGradients>> {
        let rows = d_pre.shape()[0];
        let h = self.hidden;
        match self.layout {
            GateLayout::Concatenated => Ok(vec![self.ht[0].backward_traced(&traces[0], d_pre)?]),
            GateLayout::Separate => self
                .ht
                .iter()
                .enumerate()
                .map(|(k, layer)| {
                    let mut g = Vec::with_capacity(rows * h);
                    for r in 0..rows {
                        g.extend_from_slice(&d_pre.data()[r * GATES * h + k * h..r * GATES * h + (k + 1) * h]);
                    }
                    layer.backward_traced(&traces[k], &DenseTensor::new(vec![rows, h], g)?)
                })
                .collect(),
        }
    }

    fn check_input(&self, x: &DenseTensor, rows: usize) -> Result<()> {
        if x.order() != 2 || x.shape() != [rows, self.input_dim()] {
            return Err(Error::Shape(format!(
                "expected input of shape ({rows}, {}), got {:?}",
                self.input_dim(),
                x.shape()
            )));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pre-activations `a[b, k*H + i] += Σ_j V_k[i, j] h[b, j] + b_k[i]`.
fn add_recurrent(p: &LstmParams, h_prev: &[f64], pre: &mut [f64], batch: usize) {
    let hd = p.hidden;
    for b in 0..batch {
        let hp = &h_prev[b * hd..(b + 1) * hd];
        for k in 0..GATES {
            let v = p.recurrent[k].data();
            let bias = p.bias[k].data();
            for i in 0..hd {
                let row = &v[i * hd..(i + 1) * hd];
                let dot: f64 = row.iter().zip(hp).map(|(a, b)| a * b).sum();
                pre[b * GATES * hd + k * hd + i] += dot + bias[i];
            }
        }
    }
}

struct StepValues {
    u: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn gate_step(pre: &[f64], c_prev: &[f64], batch: usize, hd: usize) -> StepValues {
    let n = batch * hd;
    let mut s = StepValues {
        u: vec![0.0; n],
        f: vec![0.0; n],
        o: vec![0.0; n],
        g: vec![0.0; n],
        c: vec![0.0; n],
        tanh_c: vec![0.0; n],
        h: vec![0.0; n],
    };
    for b in 0..batch {
        let a = &pre[b * GATES * hd..(b + 1) * GATES * hd];
        for i in 0..hd {
            let j = b * hd + i;
            s.u[j] = sigmoid(a[i]);
            s.f[j] = sigmoid(a[hd + i]);
            s.o[j] = sigmoid(a[2 * hd + i]);
            s.g[j] = a[3 * hd + i].tanh();
            s.c[j] = s.f[j] * c_prev[j] + s.u[j] * s.g[j];
            s.tanh_c[j] = s.c[j].tanh();
            s.h[j] = s.o[j] * s.tanh_c[j];
        }
    }
    s
}

/// One LSTM step on a single input vector, without dropout.
pub fn cell_step(p: &LstmParams, x: &DenseTensor, state: &CellState) -> Result<CellState> {
    let hd = p.hidden;
    if state.h.len() != hd || state.c.len() != hd {
        return Err(Error::Shape(format!("cell state must have length {hd}")));
    }
    if x.order() != 1 {
        return Err(Error::Shape(format!("expected an input vector, got shape {:?}", x.shape())));
    }
    let xs = x.clone().reshape(vec![1, x.len()])?;
    p.check_input(&xs, 1)?;
    let (pre_x, _) = p.input_transform(&xs)?;
    let mut pre = pre_x.into_data();
    add_recurrent(p, &state.h, &mut pre, 1);
    let s = gate_step(&pre, &state.c, 1, hd);
    Ok(CellState { h: s.h, c: s.c })
}

/// Everything the reverse sweep needs from one forward pass.
pub struct SequenceCache {
    fingerprint: u64,
    batch: usize,
    steps: usize,
    traces: Vec<ForwardTrace>,
    mask: Option<Vec<f64>>,
    values: Vec<StepValues>,
    pub train_mode: bool,
}

impl SequenceCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Hidden states `h[1..T]`, each `B*H` long.
    pub fn hidden_states(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().map(|v| v.h.as_slice())
    }

    /// Cell states `c[1..T]`.
    pub fn cell_states(&self) -> impl Iterator<Item = &[f64]> {
        self.values.iter().map(|v| v.c.as_slice())
    }

    /// Gate activations `(u, f, o)` at every step.
    pub fn gates(&self) -> impl Iterator<Item = (&[f64], &[f64], &[f64])> {
        self.values.iter().map(|v| (v.u.as_slice(), v.f.as_slice(), v.o.as_slice()))
    }
}

/// Single-sequence forward: `xs` holds `T` vectors of length `N`.
pub fn sequence_forward(
    p: &LstmParams,
    xs: &[DenseTensor],
    dropout_rate: f64,
    rng_seed: u64,
    train_mode: bool,
) -> Result<(DenseTensor, SequenceCache)> {
    let rows = xs
        .iter()
        .map(|x| {
            if x.order() != 1 {
                return Err(Error::Shape(format!("expected input vectors, got shape {:?}", x.shape())));
            }
            x.clone().reshape(vec![1, x.len()])
        })
        .collect::<Result<Vec<_>>>()?;
    let (logits, cache) = sequence_forward_batch(p, &rows, dropout_rate, rng_seed, train_mode)?;
    Ok((DenseTensor::vector(logits.into_data()), cache))
}

/// Batched forward: `xs[t]` has shape `(B, N)`; returns `(B, C)` logits.
pub fn sequence_forward_batch(
    p: &LstmParams,
    xs: &[DenseTensor],
    dropout_rate: f64,
    rng_seed: u64,
    train_mode: bool,
) -> Result<(DenseTensor, SequenceCache)> {
    if xs.is_empty() {
        return Err(Error::Argument("sequence must contain at least one step".into()));
    }
    if !(0.0..1.0).contains(&dropout_rate) {
        return Err(Error::Argument(format!("dropout rate {dropout_rate} outside [0, 1)")));
    }
    let batch = xs[0].shape().first().copied().unwrap_or(0);
    let steps = xs.len();
    let n = p.input_dim();
    let hd = p.hidden;
    let mut stacked = Vec::with_capacity(steps * batch * n);
    for x in xs {
        p.check_input(x, batch)?;
        stacked.extend_from_slice(x.data());
    }
    let stacked = DenseTensor::new(vec![steps * batch, n], stacked)?;
    let (pre_x, traces) = p.input_transform(&stacked)?;
    let mut pre_x = pre_x.into_data();

    let mask = if train_mode && dropout_rate > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        let keep = 1.0 / (1.0 - dropout_rate);
        let m: Vec<f64> = (0..pre_x.len())
            .map(|_| if rng.random::<f64>() < dropout_rate { 0.0 } else { keep })
            .collect();
        for (a, k) in pre_x.iter_mut().zip(&m) {
            *a *= k;
        }
        Some(m)
    } else {
        None
    };

    let width = batch * GATES * hd;
    let zeros = vec![0.0; batch * hd];
    let mut values: Vec<StepValues> = Vec::with_capacity(steps);
    for t in 0..steps {
        let mut pre = pre_x[t * width..(t + 1) * width].to_vec();
        let (h_prev, c_prev) = match values.last() {
            Some(v) => (v.h.as_slice(), v.c.as_slice()),
            None => (zeros.as_slice(), zeros.as_slice()),
        };
        add_recurrent(p, h_prev, &mut pre, batch);
        let s = gate_step(&pre, c_prev, batch, hd);
        values.push(s);
    }

    let h_last = &values.last().unwrap().h;
    let classes = p.classes();
    let mut logits = vec![0.0; batch * classes];
    for b in 0..batch {
        let h = &h_last[b * hd..(b + 1) * hd];
        for k in 0..classes {
            let w = &p.head_w.data()[k * hd..(k + 1) * hd];
            logits[b * classes + k] = p.head_b.data()[k] + w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let cache = SequenceCache {
        fingerprint: p.fingerprint(),
        batch,
        steps,
        traces,
        mask,
        values,
        train_mode,
    };
    Ok((DenseTensor::new(vec![batch, classes], logits)?, cache))
}

/// Gradients for every field of [`LstmParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct LstmGradients {
    pub ht: Vec<LayerGradients>,
    pub recurrent: Vec<DenseTensor>,
    pub bias: Vec<DenseTensor>,
    pub head_w: DenseTensor,
    pub head_b: DenseTensor,
    /// Upstream signal fed into the HT layers, `(T*B, 4H)`, rows ordered by
    /// step then sample, dropout mask already applied.
    pub ht_upstream: DenseTensor,
    /// `dL/dx[t]`, each `(B, N)`.
    pub inputs: Vec<DenseTensor>,
}

impl LstmGradients {
    /// Same order as [`LstmParams::param_slices`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for g in &self.ht {
            v.extend(g.components.iter().map(DenseTensor::data));
        }
        v.extend(self.recurrent.iter().map(DenseTensor::data));
        v.extend(self.bias.iter().map(DenseTensor::data));
        v.push(self.head_w.data());
        v.push(self.head_b.data());
        v
    }
}

/// Backpropagation through time for a cached forward pass.
///
/// `dlogits` is `(B, C)`, or a length-`C` vector when `B = 1`.
pub fn sequence_backward(p: &LstmParams, cache: &SequenceCache, dlogits: &DenseTensor) -> Result<LstmGradients> {
    if cache.fingerprint != p.fingerprint() {
        return Err(Error::State("cache was produced with different parameters".into()));
    }
    let batch = cache.batch;
    let classes = p.classes();
    let hd = p.hidden;
    if dlogits.len() != batch * classes || (dlogits.order() == 1 && batch != 1) {
        return Err(Error::Shape(format!(
            "logit gradient must be ({batch}, {classes}), got {:?}",
            dlogits.shape()
        )));
    }
    let dl = dlogits.data();
    let h_last = &cache.values.last().unwrap().h;

    let mut head_w = vec![0.0; classes * hd];
    let mut head_b = vec![0.0; classes];
    let mut dh = vec![0.0; batch * hd];
    for b in 0..batch {
        for k in 0..classes {
            let g = dl[b * classes + k];
            head_b[k] += g;
            let w = &p.head_w.data()[k * hd..(k + 1) * hd];
            for i in 0..hd {
                head_w[k * hd + i] += g * h_last[b * hd + i];
                dh[b * hd + i] += g * w[i];
            }
        }
    }

    let mut dv = vec![vec![0.0; hd * hd]; GATES];
    let mut db = vec![vec![0.0; hd]; GATES];
    let mut dc = vec![0.0; batch * hd];
    let width = batch * GATES * hd;
    let mut d_pre = vec![0.0; cache.steps * width];
    let zeros = vec![0.0; batch * hd];

    for t in (0..cache.steps).rev() {
        let s = &cache.values[t];
        let (h_prev, c_prev) = if t > 0 {
            (cache.values[t - 1].h.as_slice(), cache.values[t - 1].c.as_slice())
        } else {
            (zeros.as_slice(), zeros.as_slice())
        };
        let da = &mut d_pre[t * width..(t + 1) * width];
        for b in 0..batch {
            for i in 0..hd {
                let j = b * hd + i;
                let d_o = dh[j] * s.tanh_c[j];
                let dcj = dc[j] + dh[j] * s.o[j] * (1.0 - s.tanh_c[j] * s.tanh_c[j]);
                let du = dcj * s.g[j];
                let dg = dcj * s.u[j];
                let df = dcj * c_prev[j];
                dc[j] = dcj * s.f[j];
                let row = &mut da[b * GATES * hd..(b + 1) * GATES * hd];
                row[i] = du * s.u[j] * (1.0 - s.u[j]);
                row[hd + i] = df * s.f[j] * (1.0 - s.f[j]);
                row[2 * hd + i] = d_o * s.o[j] * (1.0 - s.o[j]);
                row[3 * hd + i] = dg * (1.0 - s.g[j] * s.g[j]);
            }
        }
        let mut dh_prev = vec![0.0; batch * hd];
        for b in 0..batch {
            let hp = &h_prev[b * hd..(b + 1) * hd];
            let row = &da[b * GATES * hd..(b + 1) * GATES * hd];
            for k in 0..GATES {
                let v = p.recurrent[k].data();
                for i in 0..hd {
                    let a = row[k * hd + i];
                    if a == 0.0 {
                        continue;
                    }
                    db[k][i] += a;
                    let dvr = &mut dv[k][i * hd..(i + 1) * hd];
                    for (x, y) in dvr.iter_mut().zip(hp) {
                        *x += a * y;
                    }
                    let vr = &v[i * hd..(i + 1) * hd];
                    for (x, y) in dh_prev[b * hd..(b + 1) * hd].iter_mut().zip(vr) {
                        *x += a * y;
                    }
                }
            }
        }
        dh = dh_prev;
    }

    if let Some(mask) = &cache.mask {
        for (a, m) in d_pre.iter_mut().zip(mask) {
            *a *= m;
        }
    }
    let upstream = DenseTensor::new(vec![cache.steps * batch, GATES * hd], d_pre)?;
    let ht = p.input_transform_backward(&cache.traces, &upstream)?;
    let n = p.input_dim();
    let mut dx = vec![0.0; cache.steps * batch * n];
    for g in &ht {
        for (a, b) in dx.iter_mut().zip(g.input.data()) {
            *a += b;
        }
    }
    let inputs = dx
        .chunks(batch * n)
        .map(|c| DenseTensor::new(vec![batch, n], c.to_vec()))
        .collect::<Result<Vec<_>>>()?;

    Ok(LstmGradients {
        ht,
        recurrent: dv
            .into_iter()
            .map(|v| DenseTensor::new(vec![hd, hd], v))
            .collect::<Result<_>>()?,
        bias: db.into_iter().map(DenseTensor::vector).collect(),
        head_w: DenseTensor::new(vec![classes, hd], head_w)?,
        head_b: DenseTensor::vector(head_b),
        ht_upstream: upstream,
        inputs,
    })
}
