use htlstm_core::tree::{TreeNode, TreeViolation};
use htlstm_core::{DimTree, InteriorSplit, NodeId};
use proptest::prelude::*;

fn contiguous(modes: &[usize]) -> bool {
    modes.windows(2).all(|w| w[1] == w[0] + 1)
}

fn check_structure(t: &DimTree) {
    let d = t.d();
    assert_eq!(t.len(), 2 * d - 1);
    assert_eq!(t.leaves().len(), d);
    assert_eq!(t.internal_nodes().len(), d - 1);
    assert_eq!(t.node(t.root()).modes, (0..d).collect::<Vec<_>>());
    assert!(t.father(t.root()).is_none());
    for mode in 0..d {
        let leaf = t.leaf(mode).unwrap();
        assert_eq!(t.node(leaf).modes, vec![mode]);
    }
    for (id, node) in t.nodes() {
        assert!(contiguous(&node.modes), "{}", t.label(id));
        assert!(node.rank >= 1);
        if let Some((l, r)) = t.children(id) {
            assert_eq!(t.father(l), Some(id));
            assert_eq!(t.father(r), Some(id));
            assert_eq!(t.brother(l), Some(r));
            assert_eq!(t.brother(r), Some(l));
            let mut joined = t.node(l).modes.clone();
            joined.extend(&t.node(r).modes);
            assert_eq!(joined, node.modes, "children of {} must partition it", t.label(id));
            // the root always puts floor(len/2) modes on the left
            if id == t.root() {
                assert_eq!(t.node(l).modes.len(), d / 2);
            }
        }
    }
    assert!(t.validate().is_empty());
}

#[test]
fn balanced_trees_are_valid_up_to_twelve() {
    for d in 1..=12 {
        for split in [InteriorSplit::FloorLeft, InteriorSplit::CeilLeft] {
            let t = DimTree::build(d, split).unwrap();
            check_structure(&t);
            assert_eq!(DimTree::from_nested_intervals(&t.nested_intervals()).unwrap().nested_intervals(), t.nested_intervals());
        }
    }
}

#[test]
fn five_mode_splits_differ_below_the_root() {
    let floor = DimTree::build(5, InteriorSplit::FloorLeft).unwrap();
    let ceil = DimTree::build(5, InteriorSplit::CeilLeft).unwrap();
    let (_, r) = floor.children(floor.root()).unwrap();
    let (rl, _) = floor.children(r).unwrap();
    assert_eq!(floor.label(rl), "[3,3]");
    let (_, r) = ceil.children(ceil.root()).unwrap();
    let (rl, _) = ceil.children(r).unwrap();
    assert_eq!(ceil.label(rl), "[3,4]");
}

fn node(modes: Vec<usize>, children: Option<(usize, usize)>, parent: Option<usize>) -> TreeNode {
    TreeNode {
        modes,
        rank: 2,
        children: children.map(|(a, b)| (NodeId(a), NodeId(b))),
        parent: parent.map(NodeId),
    }
}

#[test]
fn non_contiguous_node_is_reported() {
    // root {1,2,3} split as {1,3} / {2}
    let nodes = vec![
        node(vec![0, 1, 2], Some((1, 4)), None),
        node(vec![0, 2], Some((2, 3)), Some(0)),
        node(vec![0], None, Some(1)),
        node(vec![2], None, Some(1)),
        node(vec![1], None, Some(0)),
    ];
    let t = DimTree::from_nodes(3, nodes, NodeId(0));
    let v = t.validate();
    assert!(v.iter().any(|e| matches!(e, TreeViolation::NonContiguous { .. })), "{v:?}");
    let msg = t.check().unwrap_err().to_string();
    assert!(msg.contains("non-contiguous node set"), "{msg}");
}

#[test]
fn zero_rank_is_reported() {
    let mut t = DimTree::build(3, InteriorSplit::FloorLeft).unwrap();
    assert!(t.set_rank(NodeId(1), 0).is_err());
    let mut nodes: Vec<TreeNode> = t.nodes().map(|(_, n)| n.clone()).collect();
    nodes[1].rank = 0;
    t = DimTree::from_nodes(3, nodes, t.root());
    let msg = t.check().unwrap_err().to_string();
    assert!(msg.contains("nonpositive rank"), "{msg}");
}

#[test]
fn zero_modes_rejected() {
    assert!(DimTree::build(0, InteriorSplit::FloorLeft).is_err());
}

#[test]
fn malformed_interval_text_rejected() {
    for bad in ["", "[1,2]", "([1,1],[2,2]", "([1,1],[3,3])", "([1,2],[2,2])"] {
        assert!(DimTree::from_nested_intervals(bad).is_err(), "{bad:?}");
    }
}

proptest! {
    #[test]
    fn father_and_brother_agree(d in 1usize..=16, ceil in any::<bool>()) {
        let split = if ceil { InteriorSplit::CeilLeft } else { InteriorSplit::FloorLeft };
        let t = DimTree::build(d, split).unwrap();
        for (id, _) in t.nodes() {
            match t.father(id) {
                None => prop_assert_eq!(id, t.root()),
                Some(f) => {
                    let (l, r) = t.children(f).unwrap();
                    prop_assert!(l == id || r == id);
                    let b = t.brother(id).unwrap();
                    prop_assert_eq!(t.father(b), Some(f));
                    prop_assert_ne!(b, id);
                }
            }
        }
        // post-order visits children before parents
        let order = t.post_order();
        prop_assert_eq!(order.len(), t.len());
        let pos: Vec<usize> = {
            let mut p = vec![0; t.len()];
            for (k, id) in order.iter().enumerate() { p[id.0] = k; }
            p
        };
        for (id, _) in t.nodes() {
            if let Some(f) = t.father(id) {
                prop_assert!(pos[id.0] < pos[f.0]);
            }
        }
    }
}
