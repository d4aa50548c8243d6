//! Binary dimension trees for the hierarchical Tucker format.
//!
//! Nodes live in an arena in pre-order (root first, then the left subtree,
//! then the right subtree). Each node carries the set of tensor modes it
//! covers (0-based internally; printed 1-based as `[mu,nu]`) and its
//! hierarchical rank.

use std::fmt;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TreeNode {
    /// Sorted 0-based mode indices.
    pub modes: Vec<usize>,
    pub rank: usize,
    pub children: Option<(NodeId, NodeId)>,
    pub parent: Option<NodeId>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_none()
    }

    /// First mode covered (0-based).
    pub fn mu(&self) -> usize {
        self.modes[0]
    }

    /// Last mode covered (0-based).
    pub fn nu(&self) -> usize {
        *self.modes.last().unwrap()
    }
}

/// How an interior node with an odd number of modes is split. The root always
/// puts `floor(d/2)` modes on the left.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum InteriorSplit {
    /// Left child gets `floor(len/2)` modes, as at the root.
    #[default]
    #[serde(rename = "floor")]
    FloorLeft,
    /// Left child gets `ceil(len/2)` modes.
    #[serde(rename = "ceil")]
    CeilLeft,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DimTree {
    d: usize,
    nodes: Vec<TreeNode>,
    root: NodeId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TreeViolation {
    Empty,
    BadRoot { root: String },
    NonContiguous { node: String },
    NonpositiveRank { node: String },
    ChildrenNotPartition { node: String },
    ParentLink { node: String },
    LeafCount { expected: usize, found: usize },
    InternalCount { expected: usize, found: usize },
    Unreachable { count: usize },
}

impl fmt::Display for TreeViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreeViolation::Empty => write!(f, "tree has no nodes"),
            TreeViolation::BadRoot { root } => write!(f, "root {root} does not cover all modes"),
            TreeViolation::NonContiguous { node } => write!(f, "non-contiguous node set at {node}"),
            TreeViolation::NonpositiveRank { node } => write!(f, "nonpositive rank at {node}"),
            TreeViolation::ChildrenNotPartition { node } => {
                write!(f, "children of {node} do not partition its set")
            }
            TreeViolation::ParentLink { node } => write!(f, "inconsistent parent link at {node}"),
            TreeViolation::LeafCount { expected, found } => {
                write!(f, "expected {expected} singleton leaves, found {found}")
            }
            TreeViolation::InternalCount { expected, found } => {
                write!(f, "expected {expected} internal nodes, found {found}")
            }
            TreeViolation::Unreachable { count } => {
                write!(f, "{count} nodes are unreachable from the root")
            }
        }
    }
}

fn label(modes: &[usize]) -> String {
    match (modes.first(), modes.last()) {
        (Some(a), Some(b)) if modes.len() == b - a + 1 => format!("[{},{}]", a + 1, b + 1),
        _ => {
            let items: Vec<String> = modes.iter().map(|m| (m + 1).to_string()).collect();
            format!("{{{}}}", items.join(","))
        }
    }
}

/// Balanced tree over `d` modes with the floor/ceiling split at every node.
pub fn build_balanced_tree(d: usize) -> Result<DimTree> {
    DimTree::build(d, InteriorSplit::FloorLeft)
}

impl DimTree {
    /// Builds a tree over modes `0..d`, all ranks 1.
    pub fn build(d: usize, split: InteriorSplit) -> Result<Self> {
        if d == 0 {
            return Err(Error::Argument("a dimension tree needs d >= 1".into()));
        }
        let mut nodes = Vec::with_capacity(2 * d - 1);
        Self::grow(&mut nodes, 0, d, None, split, true);
        Ok(Self {
            d,
            nodes,
            root: NodeId(0),
        })
    }

    fn grow(
        nodes: &mut Vec<TreeNode>,
        lo: usize,
        len: usize,
        parent: Option<NodeId>,
        split: InteriorSplit,
        is_root: bool,
    ) -> NodeId {
        let id = NodeId(nodes.len());
        nodes.push(TreeNode {
            modes: (lo..lo + len).collect(),
            rank: 1,
            children: None,
            parent,
        });
        if len > 1 {
            let left_len = if is_root || split == InteriorSplit::FloorLeft {
                len / 2
            } else {
                len.div_ceil(2)
            };
            let l = Self::grow(nodes, lo, left_len, Some(id), split, false);
            let r = Self::grow(nodes, lo + left_len, len - left_len, Some(id), split, false);
            nodes[id.0].children = Some((l, r));
        }
        id
    }

    /// Assembles a tree from raw nodes without checking it. Use [`validate`](Self::validate).
    pub fn from_nodes(d: usize, nodes: Vec<TreeNode>, root: NodeId) -> Self {
        Self { d, nodes, root }
    }

    /// Copy with leaf, interior and root ranks assigned.
    pub fn assign_ranks(&self, leaf_rank: usize, internal_rank: usize, root_rank: usize) -> Result<Self> {
        if leaf_rank == 0 || internal_rank == 0 || root_rank == 0 {
            return Err(Error::Argument(format!(
                "ranks must be positive (leaf {leaf_rank}, internal {internal_rank}, root {root_rank})"
            )));
        }
        let mut t = self.clone();
        for (i, n) in t.nodes.iter_mut().enumerate() {
            n.rank = if NodeId(i) == t.root {
                root_rank
            } else if n.is_leaf() {
                leaf_rank
            } else {
                internal_rank
            };
        }
        Ok(t)
    }

    pub fn set_rank(&mut self, node: NodeId, rank: usize) -> Result<()> {
        if rank == 0 {
            return Err(Error::Argument("rank must be positive".into()));
        }
        self.node_checked(node)?;
        self.nodes[node.0].rank = rank;
        Ok(())
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id.0]
    }

    pub fn node_checked(&self, id: NodeId) -> Result<&TreeNode> {
        self.nodes
            .get(id.0)
            .ok_or_else(|| Error::Argument(format!("unknown tree node #{}", id.0)))
    }

    pub fn nodes(&self) -> impl Iterator<Item = (NodeId, &TreeNode)> {
        self.nodes.iter().enumerate().map(|(i, n)| (NodeId(i), n))
    }

    pub fn rank(&self, id: NodeId) -> usize {
        self.nodes[id.0].rank
    }

    pub fn children(&self, id: NodeId) -> Option<(NodeId, NodeId)> {
        self.nodes[id.0].children
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].is_leaf()
    }

    /// Father node, `None` at the root.
    pub fn father(&self, id: NodeId) -> Option<NodeId> {
        self.nodes[id.0].parent
    }

    /// Sibling node, `None` at the root.
    pub fn brother(&self, id: NodeId) -> Option<NodeId> {
        let (l, r) = self.children(self.father(id)?)?;
        Some(if l == id { r } else { l })
    }

    /// Leaf covering 0-based `mode`.
    pub fn leaf(&self, mode: usize) -> Option<NodeId> {
        self.nodes()
            .find(|(_, n)| n.is_leaf() && n.modes == [mode])
            .map(|(id, _)| id)
    }

    /// Leaves ordered by mode.
    pub fn leaves(&self) -> Vec<NodeId> {
        let mut v: Vec<_> = self.nodes().filter(|(_, n)| n.is_leaf()).collect();
        v.sort_by_key(|(_, n)| n.modes.clone());
        v.into_iter().map(|(id, _)| id).collect()
    }

    /// Interior nodes in arena (pre-) order.
    pub fn internal_nodes(&self) -> Vec<NodeId> {
        self.nodes()
            .filter(|(_, n)| !n.is_leaf())
            .map(|(id, _)| id)
            .collect()
    }

    /// Children before parents, left before right.
    pub fn post_order(&self) -> Vec<NodeId> {
        fn walk(t: &DimTree, id: NodeId, out: &mut Vec<NodeId>) {
            if let Some((l, r)) = t.children(id) {
                walk(t, l, out);
                walk(t, r, out);
            }
            out.push(id);
        }
        let mut out = Vec::with_capacity(self.nodes.len());
        walk(self, self.root, &mut out);
        out
    }

    /// Node identity as a 1-based interval, e.g. `[3,5]`.
    pub fn label(&self, id: NodeId) -> String {
        label(&self.nodes[id.0].modes)
    }

    /// Nested interval notation, e.g. `[1,4]([1,2]([1,1] [2,2]) [3,4]([3,3] [4,4]))`.
    pub fn nested_intervals(&self) -> String {
        fn walk(t: &DimTree, id: NodeId, out: &mut String) {
            out.push_str(&t.label(id));
            if let Some((l, r)) = t.children(id) {
                out.push('(');
                walk(t, l, out);
                out.push(' ');
                walk(t, r, out);
                out.push(')');
            }
        }
        let mut s = String::new();
        walk(self, self.root, &mut s);
        s
    }

    /// Parses the output of [`nested_intervals`](Self::nested_intervals).
    /// Every node gets rank 1; the result is checked with [`check`](Self::check).
    pub fn from_nested_intervals(text: &str) -> Result<Self> {
        struct P<'a> {
            s: &'a [u8],
            i: usize,
            nodes: Vec<TreeNode>,
        }
        impl P<'_> {
            fn err(&self, what: &str) -> Error {
                Error::Structure(format!("malformed tree at byte {}: {what}", self.i))
            }
            fn eat(&mut self, c: u8) -> Result<()> {
                if self.s.get(self.i) == Some(&c) {
                    self.i += 1;
                    Ok(())
                } else {
                    Err(self.err(&format!("expected '{}'", c as char)))
                }
            }
            fn num(&mut self) -> Result<usize> {
                let start = self.i;
                while self.s.get(self.i).is_some_and(u8::is_ascii_digit) {
                    self.i += 1;
                }
                std::str::from_utf8(&self.s[start..self.i])
                    .unwrap()
                    .parse()
                    .map_err(|_| self.err("expected a number"))
            }
            fn node(&mut self, parent: Option<NodeId>) -> Result<NodeId> {
                self.eat(b'[')?;
                let lo = self.num()?;
                self.eat(b',')?;
                let hi = self.num()?;
                self.eat(b']')?;
                if lo == 0 || hi < lo {
                    return Err(self.err(&format!("bad interval [{lo},{hi}]")));
                }
                let id = NodeId(self.nodes.len());
                self.nodes.push(TreeNode {
                    modes: (lo - 1..hi).collect(),
                    rank: 1,
                    children: None,
                    parent,
                });
                if self.s.get(self.i) == Some(&b'(') {
                    self.i += 1;
                    let l = self.node(Some(id))?;
                    self.eat(b' ')?;
                    let r = self.node(Some(id))?;
                    self.eat(b')')?;
                    self.nodes[id.0].children = Some((l, r));
                }
                Ok(id)
            }
        }
        let mut p = P {
            s: text.as_bytes(),
            i: 0,
            nodes: Vec::new(),
        };
        let root = p.node(None)?;
        if p.i != p.s.len() {
            return Err(p.err("trailing characters"));
        }
        let d = p.nodes[0].modes.len();
        let tree = Self::from_nodes(d, p.nodes, root);
        tree.check()?;
        Ok(tree)
    }

    /// Checks every structural invariant. An empty list means the tree is valid.
    pub fn validate(&self) -> Vec<TreeViolation> {
        let mut out = Vec::new();
        if self.nodes.is_empty() || self.root.0 >= self.nodes.len() {
            out.push(TreeViolation::Empty);
            return out;
        }
        let root = &self.nodes[self.root.0];
        if root.modes != (0..self.d).collect::<Vec<_>>() || root.parent.is_some() {
            out.push(TreeViolation::BadRoot {
                root: label(&root.modes),
            });
        }
        for (id, n) in self.nodes() {
            let name = label(&n.modes);
            if n.modes.is_empty() || n.modes.windows(2).any(|w| w[1] != w[0] + 1) {
                out.push(TreeViolation::NonContiguous { node: name.clone() });
            }
            if n.rank == 0 {
                out.push(TreeViolation::NonpositiveRank { node: name.clone() });
            }
            if let Some((l, r)) = n.children {
                let (Some(ln), Some(rn)) = (self.nodes.get(l.0), self.nodes.get(r.0)) else {
                    out.push(TreeViolation::ChildrenNotPartition { node: name });
                    continue;
                };
                let mut union: Vec<usize> = ln.modes.iter().chain(&rn.modes).copied().collect();
                union.sort_unstable();
                let disjoint = union.windows(2).all(|w| w[0] != w[1]);
                if !disjoint || union != n.modes {
                    out.push(TreeViolation::ChildrenNotPartition { node: name.clone() });
                }
                if ln.parent != Some(id) || rn.parent != Some(id) {
                    out.push(TreeViolation::ParentLink { node: name });
                }
            }
        }

        let mut reach = vec![false; self.nodes.len()];
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            if reach[id.0] {
                continue;
            }
            reach[id.0] = true;
            if let Some((l, r)) = self.nodes[id.0].children {
                for c in [l, r] {
                    if c.0 < self.nodes.len() {
                        stack.push(c);
                    }
                }
            }
        }
        let unreachable = reach.iter().filter(|r| !**r).count();
        if unreachable > 0 {
            out.push(TreeViolation::Unreachable { count: unreachable });
        }

        let leaves = self.nodes.iter().filter(|n| n.is_leaf()).count();
        let singles = self
            .nodes
            .iter()
            .filter(|n| n.is_leaf() && n.modes.len() == 1)
            .count();
        if leaves != self.d || singles != self.d {
            out.push(TreeViolation::LeafCount {
                expected: self.d,
                found: singles,
            });
        }
        let internal = self.nodes.len() - leaves;
        if internal + 1 != self.d.max(1) {
            out.push(TreeViolation::InternalCount {
                expected: self.d.saturating_sub(1),
                found: internal,
            });
        }
        out
    }

    /// [`validate`](Self::validate) as a `Result`, reporting the first violation.
    pub fn check(&self) -> Result<()> {
        match self.validate().first() {
            None => Ok(()),
            Some(v) => Err(Error::Structure(v.to_string())),
        }
    }
}
