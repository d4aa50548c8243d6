//! Pairwise contraction paths over small labeled tensor networks.
//!
//! Every mode carries a [`Label`]. A label shared by two tensors is summed
//! when they meet; a label that occurs once must be open and survives to the
//! output. Paths are chosen to minimise the multiply-add count: exhaustive
//! dynamic programming over subsets for up to [`EXACT_LIMIT`] tensors, greedy
//! pair selection above that.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{contract, outer, permute, DenseTensor};

/// Networks with at most this many tensors are planned exactly.
pub const EXACT_LIMIT: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Batch,
    /// Input mode `n_i`.
    In(usize),
    /// Output mode `m_i`.
    Out(usize),
    /// Rank mode of the tree node with this arena index.
    Rank(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    /// Slot of the left operand.
    pub lhs: usize,
    /// Slot of the right operand.
    pub rhs: usize,
    /// Multiply-adds spent by this contraction.
    pub macs: u128,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionPlan {
    /// Labels of every slot: the inputs first, then one slot per step.
    slot_labels: Vec<Vec<Label>>,
    n_inputs: usize,
    steps: Vec<Step>,
    dims: BTreeMap<Label, usize>,
}

/// Forward values of every slot, kept for the reverse sweep.
#[derive(Clone, Debug)]
pub struct Execution {
    slots: Vec<DenseTensor>,
}

impl Execution {
    pub fn output(&self) -> &DenseTensor {
        self.slots.last().unwrap()
    }
}

type Mask = u64;

impl ContractionPlan {
    /// Plans a contraction of tensors whose modes carry `inputs` labels.
    pub fn optimal(inputs: Vec<Vec<Label>>, dims: BTreeMap<Label, usize>, open: &[Label]) -> Result<Self> {
        let k = inputs.len();
        if k == 0 {
            return Err(Error::Argument("empty tensor network".into()));
        }
        let labels: Vec<Label> = dims.keys().copied().collect();
        if labels.len() > Mask::BITS as usize {
            return Err(Error::Argument("too many distinct labels".into()));
        }
        let bit = |l: &Label| labels.binary_search(l).map(|i| 1 << i);
        let mut masks = Vec::with_capacity(k);
        let mut count = vec![0usize; labels.len()];
        for t in &inputs {
            let mut m: Mask = 0;
            for l in t {
                let b = bit(l).map_err(|_| Error::Argument(format!("no size for label {l:?}")))?;
                if m & b != 0 {
                    return Err(Error::Argument(format!("label {l:?} repeated within a tensor")));
                }
                m |= b;
                count[b.trailing_zeros() as usize] += 1;
            }
            masks.push(m);
        }
        for (i, l) in labels.iter().enumerate() {
            let is_open = open.contains(l);
            let ok = matches!((count[i], is_open), (1, true) | (2, false) | (0, false));
            if !ok {
                return Err(Error::Argument(format!(
                    "label {l:?} occurs {} times (open: {is_open})",
                    count[i]
                )));
            }
        }
        let log_dims: Vec<u128> = labels.iter().map(|l| dims[l] as u128).collect();
        let size = |m: Mask| -> u128 {
            let mut p = 1u128;
            let mut m = m;
            while m != 0 {
                let i = m.trailing_zeros() as usize;
                p = p.saturating_mul(log_dims[i]);
                m &= m - 1;
            }
            p
        };

        let tree = if k <= EXACT_LIMIT {
            exact_tree(&masks, &size)?
        } else {
            greedy_tree(&masks, &size)?
        };

        let mut plan = Self {
            slot_labels: inputs,
            n_inputs: k,
            steps: Vec::with_capacity(k - 1),
            dims,
        };
        plan.emit(&tree);
        Ok(plan)
    }

    fn emit(&mut self, node: &PathNode) -> usize {
        match node {
            PathNode::Leaf(i) => *i,
            PathNode::Pair(a, b) => {
                let lhs = self.emit(a);
                let rhs = self.emit(b);
                let la = &self.slot_labels[lhs];
                let lb = &self.slot_labels[rhs];
                let mut union: Vec<Label> = la.clone();
                union.extend(lb.iter().filter(|l| !la.contains(l)));
                let macs = union.iter().map(|l| self.dims[l] as u128).product();
                let out: Vec<Label> = la
                    .iter()
                    .filter(|l| !lb.contains(l))
                    .chain(lb.iter().filter(|l| !la.contains(l)))
                    .copied()
                    .collect();
                self.slot_labels.push(out);
                self.steps.push(Step { lhs, rhs, macs });
                self.slot_labels.len() - 1
            }
        }
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    /// Labels of the final tensor, in the order the path leaves them.
    pub fn output_labels(&self) -> &[Label] {
        self.slot_labels.last().unwrap()
    }

    /// Total multiply-adds of the path.
    pub fn macs(&self) -> u128 {
        self.steps.iter().map(|s| s.macs).sum()
    }

    fn check_inputs(&self, inputs: &[DenseTensor]) -> Result<()> {
        if inputs.len() != self.n_inputs {
            return Err(Error::Shape(format!(
                "plan expects {} tensors, got {}",
                self.n_inputs,
                inputs.len()
            )));
        }
        for (i, (t, labels)) in inputs.iter().zip(&self.slot_labels).enumerate() {
            let want: Vec<usize> = labels.iter().map(|l| self.dims[l]).collect();
            if t.shape() != want.as_slice() {
                return Err(Error::Shape(format!(
                    "network tensor {i} has shape {:?}, plan expects {want:?}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }

    /// Runs the path, keeping every intermediate.
    pub fn execute(&self, inputs: Vec<DenseTensor>) -> Result<Execution> {
        self.check_inputs(&inputs)?;
        let mut slots = inputs;
        for step in &self.steps {
            let out = pair_contract(
                &slots[step.lhs],
                &self.slot_labels[step.lhs],
                &slots[step.rhs],
                &self.slot_labels[step.rhs],
            )?;
            slots.push(out);
        }
        Ok(Execution { slots })
    }

    /// Reverse sweep: gradients of a scalar loss with respect to every input,
    /// given its gradient `grad_out` with respect to the final slot.
    pub fn backward(&self, exec: &Execution, grad_out: DenseTensor) -> Result<Vec<DenseTensor>> {
        let last = self.slot_labels.len() - 1;
        if grad_out.shape() != exec.slots[last].shape() {
            return Err(Error::Shape(format!(
                "output gradient has shape {:?}, expected {:?}",
                grad_out.shape(),
                exec.slots[last].shape()
            )));
        }
        let mut grads: Vec<Option<DenseTensor>> = vec![None; self.slot_labels.len()];
        grads[last] = Some(grad_out);
        for (i, step) in self.steps.iter().enumerate().rev() {
            let slot = self.n_inputs + i;
            let g = grads[slot]
                .take()
                .ok_or_else(|| Error::State(format!("slot {slot} never received a gradient")))?;
            let g_labels = &self.slot_labels[slot];
            let (a, la) = (&exec.slots[step.lhs], &self.slot_labels[step.lhs]);
            let (b, lb) = (&exec.slots[step.rhs], &self.slot_labels[step.rhs]);
            // dA: contract g with B over B's free labels, then restore A's order
            let ga = pair_contract(&g, g_labels, b, lb)?;
            let ga_labels = merged_labels(g_labels, lb);
            grads[step.lhs] = Some(reorder(ga, &ga_labels, la)?);
            let gb = pair_contract(a, la, &g, g_labels)?;
            let gb_labels = merged_labels(la, g_labels);
            grads[step.rhs] = Some(reorder(gb, &gb_labels, lb)?);
        }
        grads
            .into_iter()
            .take(self.n_inputs)
            .enumerate()
            .map(|(i, g)| g.ok_or_else(|| Error::State(format!("input {i} never received a gradient"))))
            .collect()
    }
}

fn merged_labels(la: &[Label], lb: &[Label]) -> Vec<Label> {
    la.iter()
        .filter(|l| !lb.contains(l))
        .chain(lb.iter().filter(|l| !la.contains(l)))
        .copied()
        .collect()
}

/// Contracts all labels the two tensors share; output is `a`'s free labels then `b`'s.
pub(crate) fn pair_contract(
    a: &DenseTensor,
    la: &[Label],
    b: &DenseTensor,
    lb: &[Label],
) -> Result<DenseTensor> {
    let mut modes_a = Vec::new();
    let mut modes_b = Vec::new();
    for (i, l) in la.iter().enumerate() {
        if let Some(j) = lb.iter().position(|x| x == l) {
            modes_a.push(i);
            modes_b.push(j);
        }
    }
    if modes_a.is_empty() {
        Ok(outer(a, b))
    } else {
        contract(a, b, &modes_a, &modes_b)
    }
}

/// Permutes `t` from label order `from` to label order `to`.
pub(crate) fn reorder(t: DenseTensor, from: &[Label], to: &[Label]) -> Result<DenseTensor> {
    if from == to {
        return Ok(t);
    }
    let perm: Vec<usize> = to
        .iter()
        .map(|l| {
            from.iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::State(format!("label {l:?} missing during reorder")))
        })
        .collect::<Result<_>>()?;
    permute(&t, &perm)
}

#[derive(Debug)]
enum PathNode {
    Leaf(usize),
    Pair(Box<PathNode>, Box<PathNode>),
}

/// Exhaustive search over connected subsets. Open labels of a subset are the
/// XOR of its members' label masks because each summed label occurs exactly twice.
fn exact_tree(masks: &[Mask], size: &dyn Fn(Mask) -> u128) -> Result<PathNode> {
    let k = masks.len();
    let full: usize = (1 << k) - 1;
    let mut open = vec![0 as Mask; 1 << k];
    for s in 1..=full {
        let low = s.trailing_zeros() as usize;
        open[s] = open[s & (s - 1)] ^ masks[low];
    }
    let mut best = vec![u128::MAX; 1 << k];
    let mut split = vec![0usize; 1 << k];
    for i in 0..k {
        best[1 << i] = 0;
    }
    for s in 1..=full {
        if s.count_ones() < 2 {
            continue;
        }
        let low = s & s.wrapping_neg();
        let rest = s ^ low;
        // enumerate left halves that contain the lowest member
        let mut sub = rest;
        loop {
            let left = sub | low;
            let right = s ^ left;
            if right != 0 && best[left] != u128::MAX && best[right] != u128::MAX {
                let (ol, or) = (open[left], open[right]);
                if ol & or != 0 {
                    let c = best[left]
                        .saturating_add(best[right])
                        .saturating_add(size(ol | or));
                    if c < best[s] {
                        best[s] = c;
                        split[s] = left;
                    }
                }
            }
            if sub == 0 {
                break;
            }
            sub = (sub - 1) & rest;
        }
    }
    if best[full] == u128::MAX {
        return Err(Error::Argument("tensor network is disconnected".into()));
    }
    fn build(s: usize, split: &[usize]) -> PathNode {
        if s.count_ones() == 1 {
            return PathNode::Leaf(s.trailing_zeros() as usize);
        }
        let left = split[s];
        PathNode::Pair(Box::new(build(left, split)), Box::new(build(s ^ left, split)))
    }
    Ok(build(full, &split))
}

fn greedy_tree(masks: &[Mask], size: &dyn Fn(Mask) -> u128) -> Result<PathNode> {
    let mut live: Vec<(PathNode, Mask)> = masks
        .iter()
        .enumerate()
        .map(|(i, &m)| (PathNode::Leaf(i), m))
        .collect();
    while live.len() > 1 {
        // Prefer the pair that shrinks the network most, then the cheaper step.
        let mut pick: Option<((i128, u128), usize, usize)> = None;
        for i in 0..live.len() {
            for j in i + 1..live.len() {
                let (a, b) = (live[i].1, live[j].1);
                if a & b == 0 {
                    continue;
                }
                let grow = size(a ^ b) as i128 - size(a) as i128 - size(b) as i128;
                let key = (grow, size(a | b));
                if pick.is_none_or(|(bk, _, _)| key < bk) {
                    pick = Some((key, i, j));
                }
            }
        }
        let (_, i, j) = pick.ok_or_else(|| Error::Argument("tensor network is disconnected".into()))?;
        let (nb, mb) = live.remove(j);
        let (na, ma) = live.remove(i);
        live.insert(i, (PathNode::Pair(Box::new(na), Box::new(nb)), ma ^ mb));
    }
    Ok(live.pop().unwrap().0)
}
