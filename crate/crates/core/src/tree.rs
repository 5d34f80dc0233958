//! Multi-level router tree used as a makespan/flow-time lower-bound instance.
//!
//! Every non-leaf node at depth `< D` has `4^D` children and as many routers,
//! exactly one of which runs at speed 2. Jobs are the leaves; a job's rate is the
//! product of the router speeds on its path to the root. Each non-leaf node has
//! one hidden "big" child whose subtree carries the larger jobs.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::instances::{Family, Instance, Job, JobId};

pub const MAX_TREE_DEPTH: usize = 2;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub parent: Option<usize>,
    pub depth: usize,
    pub children: Vec<usize>,
    /// Node index of the big child (non-leaf nodes only).
    pub big_child: Option<usize>,
    /// Router speeds of this node, one per child slot (non-leaf nodes only).
    pub routers: Vec<f64>,
    /// Job size (leaves only).
    pub size: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeInstance {
    pub depth: usize,
    pub fanout: usize,
    /// Node 0 is the root; children are stored after their parent.
    pub nodes: Vec<TreeNode>,
    pub seed: u64,
}

/// Size census of a leaf-parent in a tree of depth `h` whose count of big
/// ancestors is `eta`: `(size, count)` pairs in increasing size.
pub fn census_formula(h: usize, eta: usize) -> Vec<(f64, usize)> {
    assert!(eta <= h);
    let p = |e: usize| 4usize.pow(e as u32);
    let mut out = Vec::with_capacity(eta + 1);
    for k in 0..eta {
        out.push(((1u64 << (k + 1)) as f64 - 1.0, p(h - eta) * (p(eta - k) - p(eta - k - 1))));
    }
    out.push(((1u64 << (eta + 1)) as f64 - 1.0, p(h - eta)));
    out
}

/// Census actually placed under a leaf-parent with `big_above` big nodes on its
/// path (itself included, root excluded): the formula at `big_above`, with one
/// top-class job promoted to the next class. That promoted job is the big child.
pub fn leaf_census(h: usize, big_above: usize) -> Vec<(f64, usize)> {
    let mut c = census_formula(h, big_above);
    let top = c.len() - 1;
    c[top].1 -= 1;
    c.push(((1u64 << (big_above + 2)) as f64 - 1.0, 1));
    c.retain(|&(_, n)| n > 0);
    c
}

pub fn gen_lower_bound_tree(depth: usize, seed: u64) -> Result<TreeInstance> {
    if depth == 0 || depth > MAX_TREE_DEPTH {
        return Err(Error::Param(format!("tree depth must be in 1..={MAX_TREE_DEPTH}, got {depth}")));
    }
    let fanout = 4usize.pow(depth as u32);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut nodes = vec![TreeNode {
        parent: None,
        depth: 0,
        children: Vec::new(),
        big_child: None,
        routers: Vec::new(),
        size: None,
    }];
    let mut frontier = vec![0usize];
    for level in 1..=depth {
        let mut next = Vec::with_capacity(frontier.len() * fanout);
        for &v in &frontier {
            let first = nodes.len();
            for _ in 0..fanout {
                nodes.push(TreeNode {
                    parent: Some(v),
                    depth: level,
                    children: Vec::new(),
                    big_child: None,
                    routers: Vec::new(),
                    size: None,
                });
            }
            let children: Vec<usize> = (first..first + fanout).collect();
            let mut routers = vec![1.0; fanout];
            routers[rng.random_range(0..fanout)] = 2.0;
            nodes[v].big_child = Some(children[rng.random_range(0..fanout)]);
            nodes[v].routers = routers;
            next.extend_from_slice(&children);
            nodes[v].children = children;
        }
        frontier = next;
    }

    let mut tree = TreeInstance { depth, fanout, nodes, seed };
    for v in tree.leaf_parents() {
        let census = leaf_census(depth, tree.big_above(v));
        let (&(big_size, _), rest) = census.split_last().unwrap();
        let mut sizes: Vec<f64> = rest.iter().flat_map(|&(s, n)| std::iter::repeat_n(s, n)).collect();
        sizes.shuffle(&mut rng);
        let big = tree.nodes[v].big_child.unwrap();
        let mut it = sizes.into_iter();
        for c in tree.nodes[v].children.clone() {
            tree.nodes[c].size = Some(if c == big { big_size } else { it.next().unwrap() });
        }
    }
    Ok(tree)
}

impl TreeInstance {
    /// Non-leaf nodes at depth `D - 1`, whose children are jobs.
    pub fn leaf_parents(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&v| self.nodes[v].depth + 1 == self.depth).collect()
    }

    /// Leaf node indices in storage order; job `k` is the `k`-th leaf.
    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&v| self.nodes[v].depth == self.depth).collect()
    }

    pub fn job_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn sizes(&self) -> Vec<f64> {
        self.leaves().into_iter().map(|v| self.nodes[v].size.unwrap()).collect()
    }

    pub fn total_work(&self) -> f64 {
        self.sizes().iter().sum()
    }

    pub fn is_big(&self, v: usize) -> bool {
        match self.nodes[v].parent {
            Some(p) => self.nodes[p].big_child == Some(v),
            None => false,
        }
    }

    /// Big nodes among `v` and its ancestors (the root is nobody's child).
    pub fn big_above(&self, v: usize) -> usize {
        let mut count = 0;
        let mut u = Some(v);
        while let Some(x) = u {
            count += usize::from(self.is_big(x));
            u = self.nodes[x].parent;
        }
        count
    }

    /// `size -> count` among the children of `v`.
    pub fn census_of(&self, v: usize) -> BTreeMap<u64, usize> {
        let mut out = BTreeMap::new();
        for &c in &self.nodes[v].children {
            if let Some(s) = self.nodes[c].size {
                *out.entry(s as u64).or_insert(0) += 1;
            }
        }
        out
    }

    /// Rate of the leaf `v` when every big node takes its parent's 2-speed router.
    fn witness_rate(&self, v: usize) -> f64 {
        let mut rate = 1.0;
        let mut u = v;
        while self.nodes[u].parent.is_some() {
            if self.is_big(u) {
                rate *= 2.0;
            }
            u = self.nodes[u].parent.unwrap();
        }
        rate
    }

    /// Makespan of the offline schedule that routes every big node through the
    /// 2-speed router of its parent and the remaining children through the
    /// 1-speed routers, all for the whole horizon.
    pub fn witness_makespan(&self) -> f64 {
        self.leaves()
            .into_iter()
            .map(|v| self.nodes[v].size.unwrap() / self.witness_rate(v))
            .fold(0.0, f64::max)
    }

    /// Depth-1 trees as a related-machines instance: machines are the root's
    /// routers (fastest first), jobs the root's children in order, all released at 0.
    pub fn to_unrelated(&self) -> Result<Instance> {
        self.export(Family::Unrelated)
    }

    /// Same as [`TreeInstance::to_unrelated`] but tagged with the `tree_lb` family.
    pub fn to_instance(&self) -> Result<Instance> {
        self.export(Family::TreeLb)
    }

    fn export(&self, family: Family) -> Result<Instance> {
        if self.depth != 1 {
            return Err(Error::UnsupportedFamily {
                family: format!("tree_lb(D={})", self.depth),
                operation: "export as machine instance".into(),
            });
        }
        let mut speeds = self.nodes[0].routers.clone();
        speeds.sort_by(|a, b| b.total_cmp(a));
        let jobs = self.nodes[0]
            .children
            .iter()
            .enumerate()
            .map(|(k, &c)| Job {
                id: k as JobId,
                weight: 1.0,
                size: self.nodes[c].size.unwrap(),
                release: 0.0,
                payload: speeds.clone(),
            })
            .collect();
        let mut meta = BTreeMap::new();
        meta.insert("generator".to_string(), "gen_lower_bound_tree".to_string());
        meta.insert("depth".to_string(), self.depth.to_string());
        meta.insert("seed".to_string(), self.seed.to_string());
        Instance::new(family, jobs, vec![1.0; speeds.len()], meta)
    }
}

/// Witness makespan of the big-child-on-fast-router schedule.
pub fn verify_tree_witness(tree: &TreeInstance) -> f64 {
    let m = tree.witness_makespan();
    assert!(m <= 2.0, "tree witness makespan {m} exceeds 2");
    m
}
