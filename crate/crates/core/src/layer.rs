//! Forward matvec and exact gradients for [`HtLinearLayer`].
//!
//! The layer and its input form a small tensor network: the input tensor
//! `X (batch, n_1..n_d)`, one leaf frame `(r_i, m_i, n_i)` per mode and one
//! transfer tensor per interior node. The network is contracted along a
//! cost-minimising pairwise path (see [`crate::plan`]) without ever forming
//! the dense `M x N` matrix. Gradients come from a reverse sweep over the same
//! path, so the backward pass costs about twice the forward pass.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::ht::HtLinearLayer;
use crate::plan::{reorder, ContractionPlan, Execution, Label};
use crate::tensor::DenseTensor;
use crate::tree::NodeId;

/// Gradients of a scalar loss for every layer component and for the input.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradients {
    /// Indexed like the layer's components (by [`NodeId`]).
    pub components: Vec<DenseTensor>,
    /// Same shape as the input: length `N`, or `B x N` for a batch.
    pub input: DenseTensor,
}

impl LayerGradients {
    pub fn component(&self, id: NodeId) -> &DenseTensor {
        &self.components[id.0]
    }
}

/// Forward values kept for the reverse sweep.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    batch: usize,
    exec: Execution,
}

impl HtLinearLayer {
    fn network(&self, batch: usize) -> (Vec<Vec<Label>>, BTreeMap<Label, usize>, Vec<Label>) {
        let tree = self.tree();
        let d = self.d();
        let mut dims = BTreeMap::new();
        dims.insert(Label::Batch, batch);
        for i in 0..d {
            dims.insert(Label::In(i), self.in_shape()[i]);
            dims.insert(Label::Out(i), self.out_shape()[i]);
        }
        let mut inputs = Vec::with_capacity(tree.len() + 1);
        inputs.push(std::iter::once(Label::Batch).chain((0..d).map(Label::In)).collect());
        for (id, node) in tree.nodes() {
            dims.insert(Label::Rank(id.0), node.rank);
            inputs.push(match node.children {
                None => vec![Label::Rank(id.0), Label::Out(node.mu()), Label::In(node.mu())],
                Some((l, r)) => vec![Label::Rank(id.0), Label::Rank(l.0), Label::Rank(r.0)],
            });
        }
        let open = self.output_labels();
        (inputs, dims, open)
    }

    /// `(batch, m_1..m_d, r_root)`
    fn output_labels(&self) -> Vec<Label> {
        std::iter::once(Label::Batch)
            .chain((0..self.d()).map(Label::Out))
            .chain(std::iter::once(Label::Rank(self.tree().root().0)))
            .collect()
    }

    /// The contraction path used for a batch of `batch` inputs.
    pub fn plan(&self, batch: usize) -> Result<std::sync::Arc<ContractionPlan>> {
        if batch == 0 {
            return Err(Error::Shape("batch must hold at least one input".into()));
        }
        self.plans.get_or_build(batch, || {
            let (inputs, dims, open) = self.network(batch);
            ContractionPlan::optimal(inputs, dims, &open)
        })
    }

    fn network_tensors(&self, xs: &DenseTensor) -> Result<Vec<DenseTensor>> {
        let mut x_shape = vec![xs.shape()[0]];
        x_shape.extend_from_slice(self.in_shape());
        let mut tensors = Vec::with_capacity(self.tree().len() + 1);
        tensors.push(xs.clone().reshape(x_shape)?);
        for (id, node) in self.tree().nodes() {
            let c = self.core().component(id).clone();
            tensors.push(match node.children {
                None => {
                    let i = node.mu();
                    c.reshape(vec![node.rank, self.out_shape()[i], self.in_shape()[i]])?
                }
                Some(_) => c,
            });
        }
        Ok(tensors)
    }

    fn check_batch(&self, xs: &DenseTensor) -> Result<usize> {
        if xs.order() != 2 || xs.shape()[1] != self.in_dim() {
            return Err(Error::Shape(format!(
                "expected a batch of shape (B, {}), got {:?}",
                self.in_dim(),
                xs.shape()
            )));
        }
        Ok(xs.shape()[0])
    }

    /// `y = W x` for a length-`N` input.
    pub fn forward(&self, x: &DenseTensor) -> Result<DenseTensor> {
        let xs = as_row(x, self.in_dim())?;
        let ys = self.forward_batch(&xs)?;
        Ok(DenseTensor::vector(ys.into_data()))
    }

    /// Row-wise `Y = X W^T` for `X` of shape `(B, N)`.
    pub fn forward_batch(&self, xs: &DenseTensor) -> Result<DenseTensor> {
        Ok(self.forward_traced(xs)?.0)
    }

    /// Batched forward that also returns what [`backward_traced`](Self::backward_traced) needs.
    pub fn forward_traced(&self, xs: &DenseTensor) -> Result<(DenseTensor, ForwardTrace)> {
        let batch = self.check_batch(xs)?;
        let plan = self.plan(batch)?;
        let exec = plan.execute(self.network_tensors(xs)?)?;
        let out = reorder(exec.output().clone(), plan.output_labels(), &self.output_labels())?;
        let ys = out.reshape(vec![batch, self.out_dim()])?;
        Ok((ys, ForwardTrace { batch, exec }))
    }

    /// Gradients of `L` given `dL/dy` for a single input `x`.
    pub fn backward(&self, x: &DenseTensor, dy: &DenseTensor) -> Result<LayerGradients> {
        let xs = as_row(x, self.in_dim())?;
        let dys = as_row(dy, self.out_dim())?;
        let mut g = self.backward_batch(&xs, &dys)?;
        g.input = DenseTensor::vector(g.input.into_data());
        Ok(g)
    }

    /// Gradients summed over a batch; `input` holds one row per sample.
    pub fn backward_batch(&self, xs: &DenseTensor, dys: &DenseTensor) -> Result<LayerGradients> {
        let (_, trace) = self.forward_traced(xs)?;
        self.backward_traced(&trace, dys)
    }

    pub fn backward_traced(&self, trace: &ForwardTrace, dys: &DenseTensor) -> Result<LayerGradients> {
        let batch = trace.batch;
        if dys.shape() != [batch, self.out_dim()] {
            return Err(Error::Shape(format!(
                "output gradient must have shape ({batch}, {}), got {:?}",
                self.out_dim(),
                dys.shape()
            )));
        }
        let plan = self.plan(batch)?;
        let mut g_shape = vec![batch];
        g_shape.extend_from_slice(self.out_shape());
        g_shape.push(1);
        let g = dys.clone().reshape(g_shape)?;
        let g = reorder(g, &self.output_labels(), plan.output_labels())?;
        let mut grads = plan.backward(&trace.exec, g)?.into_iter();

        let input = grads
            .next()
            .unwrap()
            .reshape(vec![batch, self.in_dim()])?;
        let components = self
            .core()
            .components()
            .iter()
            .zip(grads)
            .map(|(c, g)| g.reshape(c.shape().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        Ok(LayerGradients { components, input })
    }

    /// Flops (2 per multiply-add) of one forward matvec along the planned path.
    pub fn flop_count_forward(&self) -> u64 {
        let plan = self.plan(1).expect("batch 1 is always valid");
        (2 * plan.macs()) as u64
    }
}

fn as_row(v: &DenseTensor, len: usize) -> Result<DenseTensor> {
    if v.order() != 1 || v.len() != len {
        return Err(Error::Shape(format!(
            "expected a vector of length {len}, got shape {:?}",
            v.shape()
        )));
    }
    v.clone().reshape(vec![1, len])
}
