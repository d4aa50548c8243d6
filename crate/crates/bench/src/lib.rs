//! Benchmark fixtures shared by the criterion benches.

use htlstm_core::{DenseTensor, DimTree, HtLinearLayer, InteriorSplit};

/// Figure 3 shapes: `n = (8,10,10,9,8)`, `m = (4,4,2,4,2)`, uniform rank `r`.
pub fn figure3_layer(rank: usize) -> HtLinearLayer {
    let tree = DimTree::build(5, InteriorSplit::FloorLeft)
        .and_then(|t| t.assign_ranks(rank, rank, 1))
        .expect("valid tree");
    HtLinearLayer::random(tree, vec![8, 10, 10, 9, 8], vec![4, 4, 2, 4, 2], 7).expect("valid layer")
}

/// A deterministic `(batch, n)` input.
pub fn input_batch(batch: usize, n: usize) -> DenseTensor {
    DenseTensor::from_fn(vec![batch, n], |i| (((i[0] * 31 + i[1] * 17) % 97) as f64 - 48.0) / 48.0)
        .expect("valid shape")
}
