//! Self-check harness: HT forward against the reconstructed dense matrix, and
//! every analytic gradient against central finite differences.

use std::fmt::Write as _;

use htlstm_core::lstm::{sequence_backward, sequence_forward};
use htlstm_core::train::cross_entropy;
use htlstm_core::{DenseTensor, DimTree, GateLayout, HtLinearLayer, InteriorSplit, LstmConfig, LstmParams, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FORWARD_TOL: f64 = 1e-10;
pub const GRAD_TOL: f64 = 1e-5;
/// Denominator floor for gradient relative errors, so that exact zeros are
/// compared on an absolute scale.
pub const GRAD_FLOOR: f64 = 1e-4;
const MAX_DENSE: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub seed: u64,
    pub forward_cases: usize,
    pub gradient_cases: usize,
    pub lstm_cases: usize,
    /// Corrupt one transfer tensor of the first forward case after its dense
    /// matrix has been taken.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            forward_cases: 100,
            gradient_cases: 20,
            lstm_cases: 10,
            inject_fault: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub text: String,
    pub passed: bool,
    pub worst_forward: f64,
    pub worst_layer_gradient: f64,
    pub worst_lstm_gradient: f64,
}

pub fn grad_rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR)
}

/// Central-difference step for a parameter value.
pub fn fd_step(theta: f64) -> f64 {
    1e-6 * theta.abs().max(1.0)
}

fn describe(layer: &HtLinearLayer) -> String {
    let ranks: Vec<usize> = layer.tree().nodes().map(|(_, n)| n.rank).collect();
    format!(
        "d={} in_shape={:?} out_shape={:?} tree={} ranks={:?}",
        layer.d(),
        layer.in_shape(),
        layer.out_shape(),
        layer.tree().nested_intervals(),
        ranks
    )
}

/// Random layer with `d` in `2..=6`, mode sizes at most 4 and ranks at most 4.
pub fn random_layer(rng: &mut ChaCha8Rng) -> HtLinearLayer {
    loop {
        let d = rng.random_range(2..=6);
        let in_shape: Vec<usize> = (0..d).map(|_| rng.random_range(1..=4)).collect();
        let out_shape: Vec<usize> = (0..d).map(|_| rng.random_range(1..=4)).collect();
        let dense: usize = in_shape.iter().chain(&out_shape).product();
        if dense > MAX_DENSE {
            continue;
        }
        let split = if rng.random() {
            InteriorSplit::CeilLeft
        } else {
            InteriorSplit::FloorLeft
        };
        let mut tree = DimTree::build(d, split).expect("d >= 1");
        let root = tree.root();
        for i in 0..tree.len() {
            let r = if NodeId(i) == root { 1 } else { rng.random_range(1..=4) };
            tree.set_rank(NodeId(i), r).expect("positive rank");
        }
        let seed = rng.random();
        return HtLinearLayer::random(tree, in_shape, out_shape, seed).expect("valid layer");
    }
}

fn random_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn matvec(w: &DenseTensor, x: &[f64]) -> Vec<f64> {
    let (m, n) = (w.shape()[0], w.shape()[1]);
    (0..m)
        .map(|i| w.data()[i * n..(i + 1) * n].iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

fn forward_error(layer: &HtLinearLayer, w: &DenseTensor, x: &[f64]) -> f64 {
    let y = layer.forward(&DenseTensor::vector(x.to_vec())).expect("shapes match");
    let want = matvec(w, x);
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    y.data()
        .iter()
        .zip(&want)
        .map(|(a, b)| (a - b).abs() / scale)
        .fold(0.0, f64::max)
}

/// Worst gradient error of one layer under the loss `<c, W x>`.
pub fn layer_gradient_error(layer: &HtLinearLayer, x: &[f64], c: &[f64]) -> f64 {
    let loss = |l: &HtLinearLayer, x: &[f64]| -> f64 {
        let y = l.forward(&DenseTensor::vector(x.to_vec())).expect("shapes match");
        y.data().iter().zip(c).map(|(a, b)| a * b).sum()
    };
    let g = layer
        .backward(&DenseTensor::vector(x.to_vec()), &DenseTensor::vector(c.to_vec()))
        .expect("shapes match");
    let mut worst = 0.0f64;
    let mut probe = layer.clone();
    for (k, comp) in layer.core().components().iter().enumerate() {
        for j in 0..comp.len() {
            let theta = comp.data()[j];
            let h = fd_step(theta);
            probe.component_data_mut(NodeId(k))[j] = theta + h;
            let up = loss(&probe, x);
            probe.component_data_mut(NodeId(k))[j] = theta - h;
            let down = loss(&probe, x);
            probe.component_data_mut(NodeId(k))[j] = theta;
            worst = worst.max(grad_rel_err(g.components[k].data()[j], (up - down) / (2.0 * h)));
        }
    }
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        let h = fd_step(x[j]);
        xp[j] = x[j] + h;
        let up = loss(layer, &xp);
        xp[j] = x[j] - h;
        let down = loss(layer, &xp);
        xp[j] = x[j];
        worst = worst.max(grad_rel_err(g.input.data()[j], (up - down) / (2.0 * h)));
    }
    worst
}

/// Small HT-LSTM with `T = 2`, `H = 4`, three classes.
pub fn random_lstm(rng: &mut ChaCha8Rng) -> LstmParams {
    let d = rng.random_range(2..=3);
    let out_shape = match (d, rng.random_range(0..3)) {
        (2, 0) => vec![4, 1],
        (2, 1) => vec![1, 4],
        (2, _) => vec![2, 2],
        (_, 0) => vec![2, 2, 1],
        (_, 1) => vec![2, 1, 2],
        _ => vec![1, 2, 2],
    };
    let in_shape = (0..d).map(|_| rng.random_range(1..=3)).collect();
    LstmParams::new(&LstmConfig {
        in_shape,
        out_shape,
        leaf_rank: rng.random_range(1..=3),
        internal_rank: rng.random_range(1..=3),
        split: InteriorSplit::FloorLeft,
        classes: 3,
        layout: if rng.random() {
            GateLayout::Concatenated
        } else {
            GateLayout::Separate
        },
        forget_bias: 1.0,
        seed: rng.random(),
    })
    .expect("valid config")
}

/// Worst gradient error of an LSTM under softmax cross-entropy.
pub fn lstm_gradient_error(p: &LstmParams, xs: &[DenseTensor], label: usize) -> f64 {
    let loss = |p: &LstmParams, xs: &[DenseTensor]| -> f64 {
        let (z, _) = sequence_forward(p, xs, 0.0, 0, false).expect("shapes match");
        cross_entropy(z.data(), label).expect("valid label").0
    };
    let (z, cache) = sequence_forward(p, xs, 0.0, 0, false).expect("shapes match");
    let (_, dz) = cross_entropy(z.data(), label).expect("valid label");
    let g = sequence_backward(p, &cache, &DenseTensor::vector(dz)).expect("fresh cache");
    let analytic: Vec<Vec<f64>> = g.slices().iter().map(|s| s.to_vec()).collect();
    let mut worst = 0.0f64;
    let mut probe = p.clone();
    for (k, a) in analytic.iter().enumerate() {
        for (j, &aj) in a.iter().enumerate() {
            let theta = p.param_slices()[k][j];
            let h = fd_step(theta);
            probe.param_slices_mut()[k][j] = theta + h;
            let up = loss(&probe, xs);
            probe.param_slices_mut()[k][j] = theta - h;
            let down = loss(&probe, xs);
            probe.param_slices_mut()[k][j] = theta;
            worst = worst.max(grad_rel_err(aj, (up - down) / (2.0 * h)));
        }
    }
    let mut xp = xs.to_vec();
    for t in 0..xs.len() {
        for j in 0..xs[t].len() {
            let v = xs[t].data()[j];
            let h = fd_step(v);
            xp[t].data_mut()[j] = v + h;
            let up = loss(p, &xp);
            xp[t].data_mut()[j] = v - h;
            let down = loss(p, &xp);
            xp[t].data_mut()[j] = v;
            worst = worst.max(grad_rel_err(g.inputs[t].data()[j], (up - down) / (2.0 * h)));
        }
    }
    worst
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

pub fn run_verify(opts: &VerifyOptions) -> VerifyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut text = String::new();
    let mut failures = Vec::new();
    writeln!(
        text,
        "htlstm verify seed={} forward_cases={} gradient_cases={} lstm_cases={}{}",
        opts.seed,
        opts.forward_cases,
        opts.gradient_cases,
        opts.lstm_cases,
        if opts.inject_fault { " inject_fault" } else { "" }
    )
    .unwrap();

    let mut worst_forward = 0.0f64;
    for case in 0..opts.forward_cases {
        let mut layer = random_layer(&mut rng);
        let w = layer.as_matrix().expect("small layer");
        if opts.inject_fault && case == 0 {
            let root = layer.tree().root();
            layer.component_data_mut(root)[0] += 1.0;
        }
        let x = random_vec(&mut rng, layer.in_dim());
        let err = forward_error(&layer, &w, &x);
        if err.is_nan() || err > FORWARD_TOL {
            failures.push(format!("forward-equivalence case {case}: {} error={err:.3e}", describe(&layer)));
        }
        worst_forward = worst_forward.max(err);
    }
    writeln!(
        text,
        "forward-equivalence: {} layers, worst relative error {worst_forward:.3e} (tolerance {FORWARD_TOL:e}) {}",
        opts.forward_cases,
        verdict(worst_forward <= FORWARD_TOL)
    )
    .unwrap();

    let mut worst_layer = 0.0f64;
    for case in 0..opts.gradient_cases {
        let layer = random_layer(&mut rng);
        let x = random_vec(&mut rng, layer.in_dim());
        let c = random_vec(&mut rng, layer.out_dim());
        let err = layer_gradient_error(&layer, &x, &c);
        if err.is_nan() || err > GRAD_TOL {
            failures.push(format!("layer-gradient case {case}: {} error={err:.3e}", describe(&layer)));
        }
        worst_layer = worst_layer.max(err);
    }
    writeln!(
        text,
        "layer-gradients: {} layers, worst relative error {worst_layer:.3e} (tolerance {GRAD_TOL:e}) {}",
        opts.gradient_cases,
        verdict(worst_layer <= GRAD_TOL)
    )
    .unwrap();

    let mut worst_lstm = 0.0f64;
    for case in 0..opts.lstm_cases {
        let p = random_lstm(&mut rng);
        let xs: Vec<DenseTensor> = (0..2)
            .map(|_| DenseTensor::vector(random_vec(&mut rng, p.input_dim())))
            .collect();
        let label = rng.random_range(0..p.classes());
        let err = lstm_gradient_error(&p, &xs, label);
        if err.is_nan() || err > GRAD_TOL {
            failures.push(format!(
                "lstm-gradient case {case}: {} layout={:?} error={err:.3e}",
                describe(&p.ht_layers()[0]),
                p.layout()
            ));
        }
        worst_lstm = worst_lstm.max(err);
    }
    writeln!(
        text,
        "lstm-gradients: {} models (T=2, H=4), worst relative error {worst_lstm:.3e} (tolerance {GRAD_TOL:e}) {}",
        opts.lstm_cases,
        verdict(worst_lstm <= GRAD_TOL)
    )
    .unwrap();

    for f in &failures {
        writeln!(text, "FAIL {f}").unwrap();
    }
    let passed = failures.is_empty();
    writeln!(text, "result: {}", verdict(passed)).unwrap();
    VerifyReport {
        text,
        passed,
        worst_forward,
        worst_layer_gradient: worst_layer,
        worst_lstm_gradient: worst_lstm,
    }
}
