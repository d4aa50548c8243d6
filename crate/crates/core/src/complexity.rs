//! Exact parameter and forward-flop counts for HT, TT, TR and BT layers.
//!
//! All formats factor a weight matrix `W` (`M x N`) whose input and output are
//! tensorized as `n_1..n_d` and `m_1..m_d`. Every core carries the fused pair
//! `(m_k, n_k)`. Flops are two per multiply-add; reshapes and permutations
//! cost nothing.
//!
//! Forward schedules:
//!
//! - HT: the layer's own planned contraction path ([`HtLinearLayer::flop_count_forward`]).
//! - TT: cores contracted left to right into the input. Step `k` costs
//!   `(Π_{i<k} m_i)(Π_{i>k} n_i) r_{k-1} n_k m_k r_k` multiply-adds.
//! - TR: as TT, with the closing bond `r_0` carried along and traced at the
//!   last core.
//! - BT: per block, factors applied left to right (keeping every rank mode)
//!   and the `r^d` core contracted last.
//! - Dense: `2 M N`.

use std::fmt;

use crate::error::{Error, Result};
use crate::ht::{component_shape, fused_shape, HtLinearLayer, HtTensor};
use crate::tensor::DenseTensor;
use crate::tree::{DimTree, InteriorSplit};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Format {
    Ht,
    Tt,
    Tr,
    Bt,
    Dense,
}

impl Format {
    pub const COMPRESSED: [Format; 4] = [Format::Ht, Format::Tt, Format::Tr, Format::Bt];
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Ht => "HT",
            Format::Tt => "TT",
            Format::Tr => "TR",
            Format::Bt => "BT",
            Format::Dense => "dense",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FormatConfig {
    pub format: Format,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    /// Uniform rank `r`. For HT this is the internal rank unless overridden.
    pub rank: usize,
    /// HT leaf rank; defaults to `rank`.
    pub leaf_rank: Option<usize>,
    pub split: InteriorSplit,
    /// BT block count `C`.
    pub cp_rank: usize,
}

impl FormatConfig {
    pub fn new(format: Format, in_shape: &[usize], out_shape: &[usize], rank: usize) -> Self {
        Self {
            format,
            in_shape: in_shape.to_vec(),
            out_shape: out_shape.to_vec(),
            rank,
            leaf_rank: None,
            split: InteriorSplit::FloorLeft,
            cp_rank: 1,
        }
    }

    pub fn with_format(&self, format: Format) -> Self {
        Self { format, ..self.clone() }
    }

    pub fn d(&self) -> usize {
        self.in_shape.len()
    }

    pub fn in_dim(&self) -> u64 {
        self.in_shape.iter().map(|&v| v as u64).product()
    }

    pub fn out_dim(&self) -> u64 {
        self.out_shape.iter().map(|&v| v as u64).product()
    }

    fn validate(&self) -> Result<Vec<usize>> {
        let fused = fused_shape(&self.in_shape, &self.out_shape)?;
        if self.rank == 0 || self.leaf_rank == Some(0) || self.cp_rank == 0 {
            return Err(Error::Argument("ranks must be at least 1".into()));
        }
        Ok(fused)
    }

    /// The dimension tree with ranks (leaf, internal, root = 1).
    pub fn ht_tree(&self) -> Result<DimTree> {
        DimTree::build(self.d(), self.split)?.assign_ranks(self.leaf_rank.unwrap_or(self.rank), self.rank, 1)
    }

    /// An all-zero HT layer with this configuration's structure.
    pub fn ht_layer(&self) -> Result<HtLinearLayer> {
        let fused = self.validate()?;
        let tree = self.ht_tree()?;
        let comps = tree
            .nodes()
            .map(|(id, _)| DenseTensor::zeros(component_shape(&tree, &fused, id)))
            .collect::<Result<Vec<_>>>()?;
        let core = HtTensor::from_components(tree, fused, comps)?;
        HtLinearLayer::from_core(core, self.in_shape.clone(), self.out_shape.clone())
    }
}

fn ht_param_count(cfg: &FormatConfig, fused: &[usize]) -> Result<u64> {
    let tree = cfg.ht_tree()?;
    Ok(tree
        .nodes()
        .map(|(id, _)| component_shape(&tree, fused, id).iter().product::<usize>() as u64)
        .sum())
}

/// Exact element count of the factored weight.
pub fn count_params(cfg: &FormatConfig) -> Result<u64> {
    let fused: Vec<u64> = cfg.validate()?.into_iter().map(|v| v as u64).collect();
    let r = cfg.rank as u64;
    let d = cfg.d();
    Ok(match cfg.format {
        Format::Dense => cfg.in_dim() * cfg.out_dim(),
        Format::Ht => ht_param_count(cfg, &cfg.validate()?)?,
        Format::Tt => (0..d)
            .map(|k| {
                let left = if k == 0 { 1 } else { r };
                let right = if k + 1 == d { 1 } else { r };
                left * fused[k] * right
            })
            .sum(),
        Format::Tr => r * r * fused.iter().sum::<u64>(),
        Format::Bt => cfg.cp_rank as u64 * (fused.iter().sum::<u64>() * r + r.pow(d as u32)),
    })
}

fn prod(v: &[usize]) -> u64 {
    v.iter().map(|&x| x as u64).product()
}

/// Flops of one forward matrix-vector product under the schedules in the module docs.
pub fn count_forward_flops(cfg: &FormatConfig) -> Result<u64> {
    cfg.validate()?;
    let (m, n) = (&cfg.out_shape, &cfg.in_shape);
    let r = cfg.rank as u64;
    let d = cfg.d();
    let macs: u64 = match cfg.format {
        Format::Dense => cfg.in_dim() * cfg.out_dim(),
        Format::Ht => return Ok(cfg.ht_layer()?.flop_count_forward()),
        Format::Tt => (0..d)
            .map(|k| {
                let left = if k == 0 { 1 } else { r };
                let right = if k + 1 == d { 1 } else { r };
                prod(&m[..k]) * prod(&n[k + 1..]) * left * n[k] as u64 * m[k] as u64 * right
            })
            .sum(),
        Format::Tr => (0..d)
            .map(|k| {
                let bonds = if d == 1 {
                    r
                } else if k == 0 || k + 1 == d {
                    r * r
                } else {
                    r * r * r
                };
                prod(&m[..k]) * prod(&n[k + 1..]) * bonds * n[k] as u64 * m[k] as u64
            })
            .sum(),
        Format::Bt => {
            let factors: u64 = (0..d)
                .map(|k| prod(&m[..k]) * r.pow(k as u32) * prod(&n[k + 1..]) * n[k] as u64 * m[k] as u64 * r)
                .sum();
            cfg.cp_rank as u64 * (factors + cfg.out_dim() * r.pow(d as u32))
        }
    };
    Ok(2 * macs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub format: String,
    pub rank: usize,
    pub params: u64,
    pub fwd_flops: u64,
    pub compression_ratio: f64,
}

pub const CSV_HEADER: &str = "format,rank,params,fwd_flops,compression_ratio";

impl ReportRow {
    pub fn csv(&self) -> String {
        format!(
            "{},{},{},{},{:.2}",
            self.format, self.rank, self.params, self.fwd_flops, self.compression_ratio
        )
    }
}

pub fn to_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv());
        s.push('\n');
    }
    s
}

pub fn report_row(cfg: &FormatConfig) -> Result<ReportRow> {
    let params = count_params(cfg)?;
    Ok(ReportRow {
        format: cfg.format.to_string(),
        rank: cfg.rank,
        params,
        fwd_flops: count_forward_flops(cfg)?,
        compression_ratio: (cfg.in_dim() * cfg.out_dim()) as f64 / params as f64,
    })
}

/// One row per (format, rank), formats `HT, TT, TR, BT` in that order.
pub fn sweep(template: &FormatConfig, ranks: &[usize]) -> Result<Vec<ReportRow>> {
    if ranks.is_empty() {
        return Err(Error::Argument("rank list is empty".into()));
    }
    let mut rows = Vec::with_capacity(ranks.len() * 4);
    for format in Format::COMPRESSED {
        for &rank in ranks {
            let cfg = FormatConfig {
                format,
                rank,
                leaf_rank: None,
                ..template.clone()
            };
            rows.push(report_row(&cfg)?);
        }
    }
    Ok(rows)
}

/// A named layer configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub leaf_rank: usize,
    pub internal_rank: usize,
    /// Default sweep ranks.
    pub ranks: Vec<usize>,
    /// Parameter count published for this configuration, if any.
    pub reported_params: Option<u64>,
}

pub fn presets() -> Vec<Preset> {
    let e2e_in = vec![8, 10, 10, 9, 8];
    let e2e_out = vec![4, 4, 2, 4, 2];
    vec![
        Preset {
            name: "figure3",
            in_shape: e2e_in.clone(),
            out_shape: e2e_out.clone(),
            leaf_rank: 4,
            internal_rank: 4,
            ranks: vec![2, 4, 8, 16],
            reported_params: None,
        },
        Preset {
            name: "ucf11-e2e",
            in_shape: e2e_in.clone(),
            out_shape: e2e_out.clone(),
            leaf_rank: 4,
            internal_rank: 5,
            ranks: vec![5],
            reported_params: Some(1_245),
        },
        Preset {
            name: "youtube-e2e",
            in_shape: e2e_in,
            out_shape: e2e_out,
            leaf_rank: 3,
            internal_rank: 4,
            ranks: vec![4],
            reported_params: Some(810),
        },
        Preset {
            name: "ucf11-cnn",
            in_shape: vec![8, 8, 8, 4],
            out_shape: vec![4, 8, 8, 8],
            leaf_rank: 4,
            internal_rank: 4,
            ranks: vec![4],
            reported_params: None,
        },
        Preset {
            name: "hmdb51-cnn",
            in_shape: vec![8, 8, 8, 4],
            out_shape: vec![4, 8, 8, 8],
            leaf_rank: 4,
            internal_rank: 4,
            ranks: vec![4],
            reported_params: Some(1_296),
        },
    ]
}

pub fn preset(name: &str) -> Option<Preset> {
    presets().into_iter().find(|p| p.name == name)
}

pub const LSTM_GATES: u64 = 4;

impl Preset {
    /// Per-gate HT configuration under the given interior split.
    pub fn ht_config(&self, split: InteriorSplit) -> FormatConfig {
        FormatConfig {
            leaf_rank: Some(self.leaf_rank),
            split,
            ..FormatConfig::new(Format::Ht, &self.in_shape, &self.out_shape, self.internal_rank)
        }
    }

    /// The four gates stored as one HT layer whose first output mode is `4 m_1`.
    pub fn concatenated_config(&self, split: InteriorSplit) -> FormatConfig {
        let mut cfg = self.ht_config(split);
        cfg.out_shape[0] *= LSTM_GATES as usize;
        cfg
    }

    /// Per-gate HT counts for both splits, four-gate totals for separate and
    /// concatenated storage, the dense baselines and any published count.
    pub fn report(&self) -> Result<Vec<ReportRow>> {
        let r = self.internal_rank;
        let dense_gate = prod(&self.in_shape) * prod(&self.out_shape);
        let dense_lstm = LSTM_GATES * dense_gate;
        let row = |format: &str, params: u64, flops: u64, dense: u64| ReportRow {
            format: format.to_string(),
            rank: r,
            params,
            fwd_flops: flops,
            compression_ratio: dense as f64 / params as f64,
        };
        let mut rows = Vec::new();
        for (tag, split) in [("floor", InteriorSplit::FloorLeft), ("ceil", InteriorSplit::CeilLeft)] {
            let cfg = self.ht_config(split);
            let (p, f) = (count_params(&cfg)?, count_forward_flops(&cfg)?);
            rows.push(row(&format!("HT-gate-{tag}"), p, f, dense_gate));
            rows.push(row(&format!("HT-lstm-separate-{tag}"), LSTM_GATES * p, LSTM_GATES * f, dense_lstm));
            let cc = self.concatenated_config(split);
            rows.push(row(
                &format!("HT-lstm-concatenated-{tag}"),
                count_params(&cc)?,
                count_forward_flops(&cc)?,
                dense_lstm,
            ));
        }
        rows.push(row("dense-gate", dense_gate, 2 * dense_gate, dense_gate));
        rows.push(row("dense-lstm", dense_lstm, 2 * dense_lstm, dense_lstm));
        if let Some(p) = self.reported_params {
            rows.push(row("reported-lstm", p, 0, dense_lstm));
        }
        Ok(rows)
    }
}
