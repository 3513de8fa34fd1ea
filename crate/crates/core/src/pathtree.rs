//! Genealogy tree of surviving particle trajectories.
//!
//! Every particle path is a branch from a root to a leaf. Resampling adds
//! a new generation of leaves and prunes lineages that received no
//! offspring; reference counts make the pruning cascade O(path length)
//! amortized, and freed arena slots are recycled. The live node count
//! stays of order T + C N log N instead of the N x T cost of storing
//! every path densely.
//!
//! Node states live in a flat arena (`dim` floats per slot) so traversal
//! does no per-node allocation.

use serde::Serialize;

use crate::error::{Error, Result};

const NIL: u32 = u32::MAX;

/// Arena-backed trajectory tree. One filter run owns its tree
/// exclusively; the structure is immutable between inserts.
#[derive(Debug, Clone)]
pub struct TrajectoryTree {
    dim: usize,
    /// Flat state storage, `dim` floats per slot.
    states: Vec<f64>,
    /// Parent slot per node, `NIL` for roots.
    parent: Vec<u32>,
    /// Children count plus one if the node is a current leaf; zero marks
    /// a free slot.
    refcount: Vec<u32>,
    /// Time index of the node's state.
    depth: Vec<u32>,
    /// Current-generation slots, in particle order.
    leaves: Vec<u32>,
    free_list: Vec<u32>,
    live: usize,
    current_depth: u32,
}

/// One row of the debug dump.
#[derive(Debug, Serialize)]
pub struct NodeDump {
    pub id: u32,
    pub parent: Option<u32>,
    pub depth: u32,
    pub refcount: u32,
}

impl TrajectoryTree {
    /// Roots the tree at generation 0 with N particles given as a flat
    /// `N * dim` state array.
    pub fn new(dim: usize, states: &[f64]) -> Result<Self> {
        if dim == 0 || states.is_empty() || states.len() % dim != 0 {
            return Err(Error::config("states must be a nonempty multiple of dim"));
        }
        let n = states.len() / dim;
        Ok(TrajectoryTree {
            dim,
            states: states.to_vec(),
            parent: vec![NIL; n],
            refcount: vec![1; n],
            depth: vec![0; n],
            leaves: (0..n as u32).collect(),
            free_list: Vec::new(),
            live: n,
            current_depth: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of particles in the current generation.
    pub fn n_leaves(&self) -> usize {
        self.leaves.len()
    }

    /// Time index of the current generation.
    pub fn current_depth(&self) -> usize {
        self.current_depth as usize
    }

    /// Count of live nodes.
    pub fn node_count(&self) -> usize {
        self.live
    }

    fn alloc(&mut self, state: &[f64], parent: u32, depth: u32) -> u32 {
        self.live += 1;
        if let Some(slot) = self.free_list.pop() {
            let s = slot as usize * self.dim;
            self.states[s..s + self.dim].copy_from_slice(state);
            self.parent[slot as usize] = parent;
            self.refcount[slot as usize] = 1;
            self.depth[slot as usize] = depth;
            slot
        } else {
            let slot = self.parent.len() as u32;
            self.states.extend_from_slice(state);
            self.parent.push(parent);
            self.refcount.push(1);
            self.depth.push(depth);
            slot
        }
    }

    /// Drops one reference from `slot`, cascading up the lineage while
    /// counts hit zero.
    fn release(&mut self, mut slot: u32) {
        loop {
            let s = slot as usize;
            self.refcount[s] -= 1;
            if self.refcount[s] > 0 {
                return;
            }
            self.live -= 1;
            self.free_list.push(slot);
            let p = self.parent[s];
            if p == NIL {
                return;
            }
            slot = p;
        }
    }

    /// Appends a resampled generation: new leaf i gets the old leaf at
    /// position `ancestors[i]` as parent. Old leaves without offspring
    /// are pruned transitively; freed slots are recycled.
    pub fn insert_generation(&mut self, ancestors: &[usize], states: &[f64]) -> Result<()> {
        if states.len() != ancestors.len() * self.dim {
            return Err(Error::config("states length must be ancestors * dim"));
        }
        if let Some(&bad) = ancestors.iter().find(|&&a| a >= self.leaves.len()) {
            return Err(Error::config(format!(
                "ancestor index {bad} out of range (N = {})",
                self.leaves.len()
            )));
        }
        let depth = self.current_depth + 1;
        let old_leaves = std::mem::take(&mut self.leaves);
        let mut new_leaves = Vec::with_capacity(ancestors.len());
        for (i, &a) in ancestors.iter().enumerate() {
            let parent = old_leaves[a];
            self.refcount[parent as usize] += 1;
            let slot = self.alloc(&states[i * self.dim..(i + 1) * self.dim], parent, depth);
            new_leaves.push(slot);
        }
        // old leaves lose their leaf reference; childless lineages die
        for &leaf in &old_leaves {
            self.release(leaf);
        }
        self.leaves = new_leaves;
        self.current_depth = depth;
        Ok(())
    }

    /// Whole-history weighted sums for every current leaf in one
    /// depth-first traversal: leaf i receives
    /// `sum over its path of diag(coeff[.][k - depth(node)]) state(node)`
    /// plus `b_term`, where k is the current depth. Returns a flat
    /// `N * dim` array in leaf order.
    ///
    /// Per-node work is O(dim); partial sums are kept per path position,
    /// which is valid because a parent's row is never overwritten before
    /// all of its descendants have been visited.
    pub fn weighted_sums(&self, coeff: &[Vec<f64>], b_term: &[f64]) -> Result<Vec<f64>> {
        let k = self.current_depth as usize;
        if coeff.len() != self.dim || b_term.len() != self.dim {
            return Err(Error::config("coeff/b_term dimension mismatch"));
        }
        if coeff.iter().any(|row| row.len() < k + 1) {
            return Err(Error::config("coefficient sequence shorter than k+1 lags"));
        }
        let cap = self.parent.len();
        // leaf position per slot, NIL where not a leaf
        let mut leaf_pos = vec![NIL; cap];
        for (i, &slot) in self.leaves.iter().enumerate() {
            leaf_pos[slot as usize] = i as u32;
        }
        // child adjacency (intrusive lists), rebuilt per call since the
        // lag of every node shifts at each step anyway
        let mut head = vec![NIL; cap];
        let mut next = vec![NIL; cap];
        let mut roots = Vec::new();
        // reverse slot order so DFS pops in ascending slot order
        for slot in (0..cap as u32).rev() {
            if self.refcount[slot as usize] == 0 {
                continue;
            }
            let p = self.parent[slot as usize];
            if p == NIL {
                roots.push(slot);
            } else {
                next[slot as usize] = head[p as usize];
                head[p as usize] = slot;
            }
        }
        let mut acc = vec![0.0; (k + 1) * self.dim];
        let mut out = vec![0.0; self.leaves.len() * self.dim];
        let mut stack = roots;
        while let Some(slot) = stack.pop() {
            let s = slot as usize;
            let d = self.depth[s] as usize;
            let lag = k - d;
            let prev = (d > 0).then(|| (d - 1) * self.dim);
            for i in 0..self.dim {
                let base = prev.map_or(0.0, |p| acc[p + i]);
                acc[d * self.dim + i] = base + coeff[i][lag] * self.states[s * self.dim + i];
            }
            if leaf_pos[s] != NIL {
                let o = leaf_pos[s] as usize * self.dim;
                for i in 0..self.dim {
                    out[o + i] = acc[d * self.dim + i] + b_term[i];
                }
            }
            let mut c = head[s];
            while c != NIL {
                stack.push(c);
                c = next[c as usize];
            }
        }
        Ok(out)
    }

    /// Path from root to the leaf at position `leaf`, in time order.
    pub fn extract_path(&self, leaf: usize) -> Result<Vec<Vec<f64>>> {
        let &slot = self
            .leaves
            .get(leaf)
            .ok_or_else(|| Error::config(format!("invalid leaf index {leaf}")))?;
        let mut path = Vec::with_capacity(self.current_depth as usize + 1);
        let mut cur = slot;
        loop {
            let s = cur as usize;
            path.push(self.states[s * self.dim..(s + 1) * self.dim].to_vec());
            if self.parent[s] == NIL {
                break;
            }
            cur = self.parent[s];
        }
        path.reverse();
        Ok(path)
    }

    /// Live nodes as `{id, parent, depth, refcount}` rows for test
    /// fixtures and debugging.
    pub fn debug_dump(&self) -> Vec<NodeDump> {
        (0..self.parent.len() as u32)
            .filter(|&s| self.refcount[s as usize] > 0)
            .map(|s| NodeDump {
                id: s,
                parent: (self.parent[s as usize] != NIL).then(|| self.parent[s as usize]),
                depth: self.depth[s as usize],
                refcount: self.refcount[s as usize],
            })
            .collect()
    }

    /// Full-recount consistency check used by tests: refcounts, live
    /// count, leaf depths and reachability must all agree.
    #[doc(hidden)]
    pub fn check_consistency(&self) -> Result<()> {
        let cap = self.parent.len();
        let mut children = vec![0u32; cap];
        let mut live = 0usize;
        for s in 0..cap {
            if self.refcount[s] == 0 {
                continue;
            }
            live += 1;
            if self.parent[s] != NIL {
                children[self.parent[s] as usize] += 1;
            }
        }
        if live != self.live {
            return Err(Error::config(format!(
                "live count mismatch: stored {} recount {live}",
                self.live
            )));
        }
        for (i, &leaf) in self.leaves.iter().enumerate() {
            if self.depth[leaf as usize] != self.current_depth {
                return Err(Error::config(format!("leaf {i} at wrong depth")));
            }
            children[leaf as usize] += 1;
        }
        for s in 0..cap {
            if self.refcount[s] != children[s] {
                return Err(Error::config(format!(
                    "refcount mismatch at slot {s}: stored {} actual {}",
                    self.refcount[s], children[s]
                )));
            }
        }
        // every live node must be reachable from some leaf
        let mut reach = vec![false; cap];
        for &leaf in &self.leaves {
            let mut cur = leaf;
            loop {
                reach[cur as usize] = true;
                if self.parent[cur as usize] == NIL {
                    break;
                }
                cur = self.parent[cur as usize];
            }
        }
        for s in 0..cap {
            if self.refcount[s] > 0 && !reach[s] {
                return Err(Error::config(format!("unreachable live node {s}")));
            }
        }
        Ok(())
    }
}
