//! Hierarchical Tucker tensors and the tensorized linear layer built on them.
//!
//! An [`HtTensor`] stores one component per tree node, indexed by [`NodeId`]:
//! a leaf frame of shape `(r_i, n_i)` at every leaf and a transfer tensor of
//! shape `(r_s, r_s1, r_s2)` at every interior node. The frame of an interior
//! node is `G_s x U_s1 x U_s2`, contracted over the two child rank modes.
//!
//! [`HtLinearLayer`] reads the HT tensor as a weight matrix `W` of shape
//! `M x N`. Leaf `i` stores its dense axis as the fused pair `(m_i, n_i)` with
//! `m_i` major, so the frame of the root has dense modes
//! `(m_1 n_1, ..., m_d n_d)` and is un-interleaved only when the dense
//! matrix is requested.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::plan::ContractionPlan;
use crate::tensor::{contract, permute, DenseTensor};
use crate::tree::{DimTree, NodeId};

/// Standard deviation rule for [`HtTensor::random_init`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScalePolicy {
    /// Reconstructed entries get variance `1 / fan_in`.
    FanIn(usize),
    /// Reconstructed entries get the given variance.
    TargetVariance(f64),
    /// Every component entry uses this standard deviation.
    Std(f64),
}

impl ScalePolicy {
    /// Variance of a reconstructed entry implied by the policy.
    pub fn target_variance(&self, tree: &DimTree) -> f64 {
        match *self {
            ScalePolicy::FanIn(n) => 1.0 / n.max(1) as f64,
            ScalePolicy::TargetVariance(v) => v,
            ScalePolicy::Std(s) => {
                let comps = tree.len() as i32;
                s.powi(2 * comps) * rank_paths(tree)
            }
        }
    }

    /// Per-component standard deviation. The target variance is spread
    /// geometrically over all `2d - 1` components, after dividing out the
    /// number of rank paths summed at each interior node.
    pub fn component_std(&self, tree: &DimTree) -> f64 {
        match *self {
            ScalePolicy::Std(s) => s,
            _ => {
                let per = self.target_variance(tree) / rank_paths(tree);
                per.powf(1.0 / tree.len() as f64).sqrt()
            }
        }
    }
}

/// Product of `r_s1 * r_s2` over interior nodes.
fn rank_paths(tree: &DimTree) -> f64 {
    tree.internal_nodes()
        .into_iter()
        .map(|s| {
            let (l, r) = tree.children(s).unwrap();
            (tree.rank(l) * tree.rank(r)) as f64
        })
        .product()
}

/// A tensor in hierarchical Tucker format.
#[derive(Clone, Debug, PartialEq)]
pub struct HtTensor {
    tree: DimTree,
    dense_shape: Vec<usize>,
    components: Vec<DenseTensor>,
}

/// Shape the component at `id` must have.
pub fn component_shape(tree: &DimTree, dense_shape: &[usize], id: NodeId) -> Vec<usize> {
    let node = tree.node(id);
    match node.children {
        None => vec![node.rank, dense_shape[node.mu()]],
        Some((l, r)) => vec![node.rank, tree.rank(l), tree.rank(r)],
    }
}

fn check_structure(tree: &DimTree, dense_shape: &[usize]) -> Result<()> {
    tree.check()?;
    if dense_shape.len() != tree.d() {
        return Err(Error::Structure(format!(
            "dense shape {dense_shape:?} has {} modes but the tree has d = {}",
            dense_shape.len(),
            tree.d()
        )));
    }
    if dense_shape.contains(&0) {
        return Err(Error::Structure(format!(
            "dense shape {dense_shape:?} has a zero-length mode"
        )));
    }
    Ok(())
}

impl HtTensor {
    pub fn from_components(
        tree: DimTree,
        dense_shape: Vec<usize>,
        components: Vec<DenseTensor>,
    ) -> Result<Self> {
        check_structure(&tree, &dense_shape)?;
        if components.len() != tree.len() {
            return Err(Error::Structure(format!(
                "expected {} components (one per tree node), got {}",
                tree.len(),
                components.len()
            )));
        }
        for (id, _) in tree.nodes() {
            let want = component_shape(&tree, &dense_shape, id);
            if components[id.0].shape() != want.as_slice() {
                return Err(Error::Structure(format!(
                    "component at {} has shape {:?}, expected {want:?}",
                    tree.label(id),
                    components[id.0].shape()
                )));
            }
        }
        Ok(Self {
            tree,
            dense_shape,
            components,
        })
    }

    /// Gaussian components; deterministic in `seed`.
    pub fn random_init(
        tree: DimTree,
        dense_shape: Vec<usize>,
        seed: u64,
        policy: ScalePolicy,
    ) -> Result<Self> {
        check_structure(&tree, &dense_shape)?;
        let std = policy.component_std(&tree);
        if !(std.is_finite() && std >= 0.0) {
            return Err(Error::Argument(format!(
                "scale policy {policy:?} gives invalid std {std}"
            )));
        }
        let normal = Normal::new(0.0, std).map_err(|e| Error::Argument(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let components = tree
            .nodes()
            .map(|(id, _)| {
                let shape = component_shape(&tree, &dense_shape, id);
                let len = shape.iter().product();
                let data = (0..len).map(|_| normal.sample(&mut rng)).collect();
                DenseTensor::new(shape, data)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            tree,
            dense_shape,
            components,
        })
    }

    pub fn tree(&self) -> &DimTree {
        &self.tree
    }

    pub fn dense_shape(&self) -> &[usize] {
        &self.dense_shape
    }

    pub fn component(&self, id: NodeId) -> &DenseTensor {
        &self.components[id.0]
    }

    /// Mutable entries of one component; the shape is fixed.
    pub fn component_data_mut(&mut self, id: NodeId) -> &mut [f64] {
        self.components[id.0].data_mut()
    }

    /// Components in node order.
    pub fn components(&self) -> &[DenseTensor] {
        &self.components
    }

    pub fn components_data_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.components.iter_mut().map(|c| c.data_mut())
    }

    /// Leaf frame for 0-based `mode`.
    pub fn leaf_frame(&self, mode: usize) -> Option<&DenseTensor> {
        self.tree.leaf(mode).map(|id| &self.components[id.0])
    }

    /// Frame of node `s`: rank mode first, then the dense modes of `s` in
    /// increasing mode order.
    pub fn frame(&self, id: NodeId) -> Result<DenseTensor> {
        self.tree.node_checked(id)?;
        match self.tree.children(id) {
            None => Ok(self.components[id.0].clone()),
            Some((l, r)) => {
                let left = self.frame(l)?;
                let right = self.frame(r)?;
                let g = &self.components[id.0];
                // (k, p, q) x (p, ...) -> (k, q, left...)
                let t = contract(g, &left, &[1], &[0])?;
                // (k, q, left...) x (q, ...) -> (k, left..., right...)
                contract(&t, &right, &[1], &[0])
            }
        }
    }

    /// Root frame, shape `(r_D, n_1, ..., n_d)`.
    pub fn to_dense(&self) -> Result<DenseTensor> {
        self.frame(self.tree.root())
    }

    pub fn param_count(&self) -> usize {
        self.components.iter().map(DenseTensor::len).sum()
    }
}

#[derive(Clone, Debug, Default)]
pub(crate) struct PlanCache(Arc<Mutex<HashMap<usize, Arc<ContractionPlan>>>>);

impl PlanCache {
    pub(crate) fn get_or_build(
        &self,
        batch: usize,
        build: impl FnOnce() -> Result<ContractionPlan>,
    ) -> Result<Arc<ContractionPlan>> {
        let mut map = self.0.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = map.get(&batch) {
            return Ok(Arc::clone(p));
        }
        let plan = Arc::new(build()?);
        map.insert(batch, Arc::clone(&plan));
        Ok(plan)
    }
}

/// A weight matrix `W` (`M x N`) stored in HT format over fused `(m_i, n_i)` modes.
#[derive(Clone, Debug)]
pub struct HtLinearLayer {
    core: HtTensor,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    pub(crate) plans: PlanCache,
}

impl PartialEq for HtLinearLayer {
    fn eq(&self, other: &Self) -> bool {
        self.core == other.core
            && self.in_shape == other.in_shape
            && self.out_shape == other.out_shape
    }
}

impl HtLinearLayer {
    /// Random layer with fan-in scaling (reconstructed entries have variance `1/N`).
    pub fn random(tree: DimTree, in_shape: Vec<usize>, out_shape: Vec<usize>, seed: u64) -> Result<Self> {
        let n = in_shape.iter().product();
        Self::random_with_policy(tree, in_shape, out_shape, seed, ScalePolicy::FanIn(n))
    }

    pub fn random_with_policy(
        tree: DimTree,
        in_shape: Vec<usize>,
        out_shape: Vec<usize>,
        seed: u64,
        policy: ScalePolicy,
    ) -> Result<Self> {
        let fused = fused_shape(&in_shape, &out_shape)?;
        let core = HtTensor::random_init(tree, fused, seed, policy)?;
        Self::from_core(core, in_shape, out_shape)
    }

    pub fn from_core(core: HtTensor, in_shape: Vec<usize>, out_shape: Vec<usize>) -> Result<Self> {
        let fused = fused_shape(&in_shape, &out_shape)?;
        if core.dense_shape != fused {
            return Err(Error::Structure(format!(
                "core dense shape {:?} does not match fused (m_i*n_i) sizes {fused:?}",
                core.dense_shape
            )));
        }
        if core.tree.rank(core.tree.root()) != 1 {
            return Err(Error::Structure(
                "a linear layer needs root rank 1 so that the root frame is W".into(),
            ));
        }
        Ok(Self {
            core,
            in_shape,
            out_shape,
            plans: PlanCache::default(),
        })
    }

    pub fn core(&self) -> &HtTensor {
        &self.core
    }

    pub fn tree(&self) -> &DimTree {
        &self.core.tree
    }

    pub fn component_data_mut(&mut self, id: NodeId) -> &mut [f64] {
        self.core.component_data_mut(id)
    }

    pub fn components_data_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.core.components_data_mut()
    }

    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }

    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }

    pub fn d(&self) -> usize {
        self.in_shape.len()
    }

    /// `N`
    pub fn in_dim(&self) -> usize {
        self.in_shape.iter().product()
    }

    /// `M`
    pub fn out_dim(&self) -> usize {
        self.out_shape.iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.core.param_count()
    }

    /// Dense weight tensor of shape `(m_1, ..., m_d, n_1, ..., n_d)`.
    pub fn reconstruct_dense(&self) -> Result<DenseTensor> {
        let d = self.d();
        let root = self.core.to_dense()?;
        let split: Vec<usize> = self
            .out_shape
            .iter()
            .zip(&self.in_shape)
            .flat_map(|(&m, &n)| [m, n])
            .collect();
        let interleaved = root.reshape(split)?;
        let perm: Vec<usize> = (0..d).map(|i| 2 * i).chain((0..d).map(|i| 2 * i + 1)).collect();
        permute(&interleaved, &perm)
    }

    /// Dense `M x N` weight matrix.
    pub fn as_matrix(&self) -> Result<DenseTensor> {
        self.reconstruct_dense()?
            .reshape(vec![self.out_dim(), self.in_dim()])
    }
}

/// Per-leaf fused sizes `m_i * n_i`.
pub fn fused_shape(in_shape: &[usize], out_shape: &[usize]) -> Result<Vec<usize>> {
    if in_shape.len() != out_shape.len() || in_shape.is_empty() {
        return Err(Error::Structure(format!(
            "input shape {in_shape:?} and output shape {out_shape:?} must have the same nonzero length"
        )));
    }
    if in_shape.contains(&0) || out_shape.contains(&0) {
        return Err(Error::Structure("mode sizes must be positive".into()));
    }
    Ok(in_shape.iter().zip(out_shape).map(|(n, m)| n * m).collect())
}
