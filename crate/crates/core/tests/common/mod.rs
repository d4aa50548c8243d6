//! Independent reference implementations used as test oracles.
#![allow(dead_code, clippy::needless_range_loop)]

use htlstm_core::ht::HtTensor;
use htlstm_core::lstm::GATES;
use htlstm_core::{DenseTensor, DimTree, HtLinearLayer, InteriorSplit, LstmParams, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> DenseTensor {
    let len = shape.iter().product();
    DenseTensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// `max |a - b| / max |b|`.
pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

/// Calls `f` with every multi-index of `shape` in row-major order.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(&[usize])) {
    if shape.contains(&0) {
        return;
    }
    let mut idx = vec![0usize; shape.len()];
    loop {
        f(&idx);
        let mut k = shape.len();
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < shape[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn flat(shape: &[usize], idx: &[usize]) -> usize {
    idx.iter().zip(shape).fold(0, |acc, (&i, &n)| acc * n + i)
}

/// Contraction by explicit index loops: output is A's free modes then B's.
pub fn brute_contract(a: &DenseTensor, b: &DenseTensor, ma: &[usize], mb: &[usize]) -> DenseTensor {
    let free_a: Vec<usize> = (0..a.order()).filter(|m| !ma.contains(m)).collect();
    let free_b: Vec<usize> = (0..b.order()).filter(|m| !mb.contains(m)).collect();
    let mut out_shape: Vec<usize> = free_a.iter().map(|&m| a.shape()[m]).collect();
    out_shape.extend(free_b.iter().map(|&m| b.shape()[m]));
    let sum_shape: Vec<usize> = ma.iter().map(|&m| a.shape()[m]).collect();
    let mut data = Vec::new();
    let mut ia = vec![0; a.order()];
    let mut ib = vec![0; b.order()];
    for_each_index(&out_shape, |o| {
        for (k, &m) in free_a.iter().enumerate() {
            ia[m] = o[k];
        }
        for (k, &m) in free_b.iter().enumerate() {
            ib[m] = o[free_a.len() + k];
        }
        let mut s = 0.0;
        for_each_index(&sum_shape, |c| {
            for (k, (&x, &y)) in ma.iter().zip(mb).enumerate() {
                ia[x] = c[k];
                ib[y] = c[k];
            }
            s += a.data()[flat(a.shape(), &ia)] * b.data()[flat(b.shape(), &ib)];
        });
        data.push(s);
    });
    if out_shape.is_empty() && data.is_empty() {
        data.push(0.0);
    }
    DenseTensor::new(out_shape, data).unwrap()
}

/// Frame of `id` by explicit summation over `k, p, q` at every level.
/// Returned as `(r_s, prod of dense sizes of s)`.
pub fn brute_frame(ht: &HtTensor, id: NodeId) -> (usize, Vec<f64>) {
    let tree = ht.tree();
    let c = ht.component(id);
    match tree.children(id) {
        None => (c.shape()[0], c.data().to_vec()),
        Some((l, r)) => {
            let (rl, ul) = brute_frame(ht, l);
            let (rr, ur) = brute_frame(ht, r);
            let (nl, nr) = (ul.len() / rl, ur.len() / rr);
            let rs = c.shape()[0];
            let mut u = vec![0.0; rs * nl * nr];
            for k in 0..rs {
                for a in 0..nl {
                    for b in 0..nr {
                        let mut s = 0.0;
                        for p in 0..rl {
                            for q in 0..rr {
                                s += c.data()[(k * rl + p) * rr + q] * ul[p * nl + a] * ur[q * nr + b];
                            }
                        }
                        u[(k * nl + a) * nr + b] = s;
                    }
                }
            }
            (rs, u)
        }
    }
}

/// Dense `M x N` matrix of a layer from the brute-force root frame and the
/// fused `(m_i, n_i)` index map.
pub fn brute_matrix(layer: &HtLinearLayer) -> DenseTensor {
    let (_, root) = brute_frame(layer.core(), layer.tree().root());
    let (m, n) = (layer.out_shape(), layer.in_shape());
    let fused: Vec<usize> = m.iter().zip(n).map(|(a, b)| a * b).collect();
    let (mm, nn) = (layer.out_dim(), layer.in_dim());
    let mut w = vec![0.0; mm * nn];
    for_each_index(&fused, |f| {
        let i: Vec<usize> = f.iter().zip(n).map(|(&v, &nb)| v / nb).collect();
        let j: Vec<usize> = f.iter().zip(n).map(|(&v, &nb)| v % nb).collect();
        w[flat(m, &i) * nn + flat(n, &j)] = root[flat(&fused, f)];
    });
    DenseTensor::new(vec![mm, nn], w).unwrap()
}

/// Row-major dense matrix stored as `rows x cols`.
#[derive(Clone, Debug)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn mul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows);
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.data[k * other.cols + j];
                }
            }
        }
        out
    }

    /// `self^T v`
    pub fn tmul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for i in 0..self.rows {
            for j in 0..self.cols {
                out[j] += self.data[i * self.cols + j] * v[i];
            }
        }
        out
    }
}

/// Component gradients through the materialized `dY/dU_s` recursion.
///
/// `J_D = dY/dU_D` is read off `Y = W x`. For a child `s` of `F` with brother
/// `B`, `dU_F/dU_s` is `G_F` contracted with `U_B` (identity on the dense modes
/// of `s`), and `J_s = J_F dU_F/dU_s`. Leaf gradients are `J_s^T dL/dY`;
/// transfer gradients are `(J_s dU_s/dG_s)^T dL/dY`.
pub fn materialized_gradients(layer: &HtLinearLayer, x: &[f64], dy: &[f64]) -> Vec<Vec<f64>> {
    let ht = layer.core();
    let tree = ht.tree();
    let (m, n) = (layer.out_shape(), layer.in_shape());
    let fused: Vec<usize> = m.iter().zip(n).map(|(a, b)| a * b).collect();
    let big_m = layer.out_dim();
    let frame_len: Vec<usize> = (0..tree.len()).map(|i| brute_frame(ht, NodeId(i)).1.len()).collect();

    let mut jac: Vec<Option<Mat>> = vec![None; tree.len()];
    let root = tree.root();
    let mut jd = Mat::zeros(big_m, frame_len[root.0]);
    for_each_index(&fused, |f| {
        let i: Vec<usize> = f.iter().zip(n).map(|(&v, &nb)| v / nb).collect();
        let j: Vec<usize> = f.iter().zip(n).map(|(&v, &nb)| v % nb).collect();
        jd.data[flat(m, &i) * frame_len[root.0] + flat(&fused, f)] = x[flat(n, &j)];
    });
    jac[root.0] = Some(jd);

    let mut order = vec![root];
    let mut k = 0;
    while k < order.len() {
        let f = order[k];
        k += 1;
        let Some((l, r)) = tree.children(f) else { continue };
        let g = ht.component(f);
        let (rf, rl, rr) = (g.shape()[0], g.shape()[1], g.shape()[2]);
        let (_, ul) = brute_frame(ht, l);
        let (_, ur) = brute_frame(ht, r);
        let (nl, nr) = (ul.len() / rl, ur.len() / rr);
        let jf = jac[f.0].clone().unwrap();
        // dU_F[k, a, b] / dU_l[p, a'] = δ(a, a') Σ_q G[k, p, q] U_r[q, b]
        let mut kl = Mat::zeros(rf * nl * nr, rl * nl);
        // dU_F[k, a, b] / dU_r[q, b'] = δ(b, b') Σ_p G[k, p, q] U_l[p, a]
        let mut kr = Mat::zeros(rf * nl * nr, rr * nr);
        for kk in 0..rf {
            for a in 0..nl {
                for b in 0..nr {
                    let row = (kk * nl + a) * nr + b;
                    for p in 0..rl {
                        for q in 0..rr {
                            let gv = g.data()[(kk * rl + p) * rr + q];
                            kl.data[row * kl.cols + p * nl + a] += gv * ur[q * nr + b];
                            kr.data[row * kr.cols + q * nr + b] += gv * ul[p * nl + a];
                        }
                    }
                }
            }
        }
        jac[l.0] = Some(jf.mul(&kl));
        jac[r.0] = Some(jf.mul(&kr));
        order.push(l);
        order.push(r);
    }

    (0..tree.len())
        .map(|i| {
            let id = NodeId(i);
            let js = jac[i].as_ref().unwrap();
            match tree.children(id) {
                None => js.tmul_vec(dy),
                Some((l, r)) => {
                    let g = ht.component(id);
                    let (rs, rl, rr) = (g.shape()[0], g.shape()[1], g.shape()[2]);
                    let (_, ul) = brute_frame(ht, l);
                    let (_, ur) = brute_frame(ht, r);
                    let (nl, nr) = (ul.len() / rl, ur.len() / rr);
                    // dU_s[k, a, b] / dG_s[k', p, q] = δ(k, k') U_l[p, a] U_r[q, b]
                    let mut kg = Mat::zeros(rs * nl * nr, rs * rl * rr);
                    for k in 0..rs {
                        for a in 0..nl {
                            for b in 0..nr {
                                for p in 0..rl {
                                    for q in 0..rr {
                                        kg.data[((k * nl + a) * nr + b) * kg.cols + (k * rl + p) * rr + q] =
                                            ul[p * nl + a] * ur[q * nr + b];
                                    }
                                }
                            }
                        }
                    }
                    js.mul(&kg).tmul_vec(dy)
                }
            }
        })
        .collect()
}

/// A random layer: tree split and per-node ranks drawn at random, root rank 1.
pub fn random_layer(rng: &mut ChaCha8Rng, d: usize, max_mode: usize, max_rank: usize) -> HtLinearLayer {
    let in_shape: Vec<usize> = (0..d).map(|_| rng.random_range(1..=max_mode)).collect();
    let out_shape: Vec<usize> = (0..d).map(|_| rng.random_range(1..=max_mode)).collect();
    random_layer_with_shapes(rng, in_shape, out_shape, max_rank)
}

pub fn random_layer_with_shapes(
    rng: &mut ChaCha8Rng,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    max_rank: usize,
) -> HtLinearLayer {
    let d = in_shape.len();
    let split = if rng.random() {
        InteriorSplit::FloorLeft
    } else {
        InteriorSplit::CeilLeft
    };
    let mut tree = DimTree::build(d, split).unwrap();
    for i in 0..tree.len() {
        let r = if NodeId(i) == tree.root() { 1 } else { rng.random_range(1..=max_rank) };
        tree.set_rank(NodeId(i), r).unwrap();
    }
    let seed = rng.random();
    HtLinearLayer::random(tree, in_shape, out_shape, seed).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Plain LSTM whose input transforms are the reconstructed dense matrices.
/// Returns `(h[t], c[t])` for `t = 1..T`.
pub fn dense_lstm_trajectory(p: &LstmParams, xs: &[Vec<f64>]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let h_dim = p.hidden();
    let n = p.input_dim();
    // (4H x N), gate blocks u, f, o, c
    let mut w = vec![0.0; GATES * h_dim * n];
    let layers = p.ht_layers();
    if layers.len() == 1 {
        w.copy_from_slice(layers[0].as_matrix().unwrap().data());
    } else {
        for (g, l) in layers.iter().enumerate() {
            w[g * h_dim * n..(g + 1) * h_dim * n].copy_from_slice(l.as_matrix().unwrap().data());
        }
    }
    let mut h = vec![0.0; h_dim];
    let mut c = vec![0.0; h_dim];
    let mut out = Vec::new();
    for x in xs {
        let mut a = vec![0.0; GATES * h_dim];
        for g in 0..GATES {
            let v = p.recurrent()[g].data();
            let b = p.bias()[g].data();
            for i in 0..h_dim {
                let row = g * h_dim + i;
                let mut s = b[i];
                for j in 0..n {
                    s += w[row * n + j] * x[j];
                }
                for j in 0..h_dim {
                    s += v[i * h_dim + j] * h[j];
                }
                a[row] = s;
            }
        }
        for i in 0..h_dim {
            let u = sigmoid(a[i]);
            let f = sigmoid(a[h_dim + i]);
            let o = sigmoid(a[2 * h_dim + i]);
            let g = a[3 * h_dim + i].tanh();
            c[i] = f * c[i] + u * g;
            h[i] = o * c[i].tanh();
        }
        out.push((h.clone(), c.clone()));
    }
    out
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / lx.len() as f64;
    let my = ly.iter().sum::<f64>() / ly.len() as f64;
    let num: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let den: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    num / den
}

/// Central-difference step.
pub fn fd_step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

/// Relative gradient error with denominators floored at `1e-4`.
pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-4)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst relative error of every component and input gradient of
/// `L = c . forward(x)` against central differences.
pub fn layer_fd_error(layer: &HtLinearLayer, x: &[f64], c: &[f64]) -> f64 {
    let loss = |l: &HtLinearLayer, x: &[f64]| dot(c, l.forward(&DenseTensor::vector(x.to_vec())).unwrap().data());
    let g = layer
        .backward(&DenseTensor::vector(x.to_vec()), &DenseTensor::vector(c.to_vec()))
        .unwrap();
    let mut worst = 0.0f64;
    for (id, _) in layer.tree().nodes() {
        for k in 0..g.component(id).len() {
            let mut lp = layer.clone();
            let theta = lp.component_data_mut(id)[k];
            let h = fd_step(theta);
            lp.component_data_mut(id)[k] = theta + h;
            let fp = loss(&lp, x);
            lp.component_data_mut(id)[k] = theta - h;
            let fm = loss(&lp, x);
            worst = worst.max(grad_rel_err(g.component(id).data()[k], (fp - fm) / (2.0 * h)));
        }
    }
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        let mut xp = x.to_vec();
        xp[j] += h;
        let fp = loss(layer, &xp);
        xp[j] -= 2.0 * h;
        let fm = loss(layer, &xp);
        worst = worst.max(grad_rel_err(g.input.data()[j], (fp - fm) / (2.0 * h)));
    }
    worst
}

/// Cross-entropy of a single sequence, no dropout.
pub fn lstm_loss(p: &LstmParams, xs: &[DenseTensor], label: usize) -> f64 {
    let (z, _) = htlstm_core::lstm::sequence_forward(p, xs, 0.0, 0, true).unwrap();
    htlstm_core::train::cross_entropy(z.data(), label).unwrap().0
}

/// Worst relative error of every parameter and input gradient of an LSTM
/// sequence loss against central differences.
pub fn lstm_fd_error(p: &LstmParams, xs: &[DenseTensor], label: usize) -> f64 {
    use htlstm_core::lstm::{sequence_backward, sequence_forward};
    let (z, cache) = sequence_forward(p, xs, 0.0, 0, true).unwrap();
    let (_, dz) = htlstm_core::train::cross_entropy(z.data(), label).unwrap();
    let g = sequence_backward(p, &cache, &DenseTensor::vector(dz)).unwrap();
    let grads: Vec<Vec<f64>> = g.slices().into_iter().map(<[f64]>::to_vec).collect();
    let mut worst = 0.0f64;
    for (b, gb) in grads.iter().enumerate() {
        for k in 0..gb.len() {
            let mut q = p.clone();
            let theta = q.param_slices_mut()[b][k];
            let h = fd_step(theta);
            q.param_slices_mut()[b][k] = theta + h;
            let fp = lstm_loss(&q, xs, label);
            q.param_slices_mut()[b][k] = theta - h;
            let fm = lstm_loss(&q, xs, label);
            worst = worst.max(grad_rel_err(gb[k], (fp - fm) / (2.0 * h)));
        }
    }
    for (t, x) in xs.iter().enumerate() {
        for j in 0..x.len() {
            let h = fd_step(x.data()[j]);
            let mut xp = xs.to_vec();
            xp[t].data_mut()[j] += h;
            let fp = lstm_loss(p, &xp, label);
            xp[t].data_mut()[j] -= 2.0 * h;
            let fm = lstm_loss(p, &xp, label);
            worst = worst.max(grad_rel_err(g.inputs[t].data()[j], (fp - fm) / (2.0 * h)));
        }
    }
    worst
}

/// A small random HT-LSTM with `H = prod(out_shape)`.
pub fn random_lstm(seed: u64, in_shape: Vec<usize>, out_shape: Vec<usize>, classes: usize) -> LstmParams {
    use htlstm_core::{GateLayout, LstmConfig};
    let mut r = rng(seed);
    let cfg = LstmConfig {
        in_shape,
        out_shape,
        leaf_rank: r.random_range(1..=3),
        internal_rank: r.random_range(1..=3),
        split: if r.random() { InteriorSplit::CeilLeft } else { InteriorSplit::FloorLeft },
        classes,
        layout: if r.random() { GateLayout::Concatenated } else { GateLayout::Separate },
        forget_bias: 1.0,
        seed,
    };
    let mut p = LstmParams::new(&cfg).unwrap();
    // biases and head start at zero; give them values so every path is exercised
    for s in p.param_slices_mut() {
        for v in s.iter_mut() {
            if *v == 0.0 {
                *v = r.random_range(-0.5..0.5);
            }
        }
    }
    p
}
