//! Topologically indexed multi-root DAGs whose edges reference entries of
//! an external weight table.

use crate::error::LatticeError;

/// One edge of a lattice. `weight_ref` indexes an external weight table
/// supplied at compute time, so the same lattice can be traversed with
/// different weights (student vs teacher, different semirings).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub src: u32,
    pub dst: u32,
    pub weight_ref: u32,
}

impl Edge {
    pub fn new(src: u32, dst: u32, weight_ref: u32) -> Self {
        Edge { src, dst, weight_ref }
    }
}

/// A root vertex. CTC roots carry an entry weight (the frame-1 emission);
/// a root without one starts at 1̄.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Root {
    pub vertex: u32,
    pub entry_ref: Option<u32>,
}

impl Root {
    pub fn bare(vertex: u32) -> Self {
        Root { vertex, entry_ref: None }
    }

    pub fn with_entry(vertex: u32, entry_ref: u32) -> Self {
        Root { vertex, entry_ref: Some(entry_ref) }
    }
}

/// A multi-root weighted DAG in topological index order: every edge
/// satisfies `src < dst`, which makes ascending vertex order a valid
/// evaluation schedule and rules out cycles by construction.
#[derive(Debug, Clone)]
pub struct Lattice {
    vertex_count: usize,
    edges: Vec<Edge>,
    roots: Vec<Root>,
    leaves: Vec<u32>,
    /// Edge indices sorted by (dst, src): the deterministic fold order.
    by_dst: Vec<u32>,
    /// Start of each vertex's incoming-edge run in `by_dst` (CSR offsets).
    in_offsets: Vec<u32>,
    /// Edge indices sorted by (src, dst) with CSR offsets, for reversal.
    by_src: Vec<u32>,
    out_offsets: Vec<u32>,
    root_entry: Vec<Option<u32>>,
    is_root: Vec<bool>,
    is_leaf: Vec<bool>,
}

impl Lattice {
    /// Validates and indexes a lattice. Roots must have in-degree 0 and
    /// leaves out-degree 0; a lattice with no root-to-leaf path is legal
    /// (it computes 0̄).
    pub fn new(
        vertex_count: usize,
        edges: Vec<Edge>,
        roots: Vec<Root>,
        leaves: Vec<u32>,
    ) -> Result<Self, LatticeError> {
        for (index, e) in edges.iter().enumerate() {
            if e.src >= e.dst {
                return Err(LatticeError::EdgeOrder {
                    index,
                    src: e.src,
                    dst: e.dst,
                });
            }
            if e.dst as usize >= vertex_count {
                return Err(LatticeError::VertexOutOfRange {
                    index,
                    vertex: e.dst,
                    count: vertex_count,
                });
            }
        }

        let mut is_root = vec![false; vertex_count];
        let mut root_entry = vec![None; vertex_count];
        for r in &roots {
            if r.vertex as usize >= vertex_count {
                return Err(LatticeError::RootOutOfRange(r.vertex));
            }
            if is_root[r.vertex as usize] {
                return Err(LatticeError::DuplicateRoot(r.vertex));
            }
            is_root[r.vertex as usize] = true;
            root_entry[r.vertex as usize] = r.entry_ref;
        }

        let mut is_leaf = vec![false; vertex_count];
        for &l in &leaves {
            if l as usize >= vertex_count {
                return Err(LatticeError::LeafOutOfRange(l));
            }
            if is_leaf[l as usize] {
                return Err(LatticeError::DuplicateLeaf(l));
            }
            is_leaf[l as usize] = true;
        }

        for e in &edges {
            if is_root[e.dst as usize] {
                return Err(LatticeError::RootWithIncoming(e.dst));
            }
            if is_leaf[e.src as usize] {
                return Err(LatticeError::LeafWithOutgoing(e.src));
            }
        }

        let (by_dst, in_offsets) = csr(vertex_count, &edges, |e| (e.dst, e.src));
        let (by_src, out_offsets) = csr(vertex_count, &edges, |e| (e.src, e.dst));

        let mut roots = roots;
        roots.sort_by_key(|r| r.vertex);
        let mut leaves = leaves;
        leaves.sort_unstable();

        Ok(Lattice {
            vertex_count,
            edges,
            roots,
            leaves,
            by_dst,
            in_offsets,
            by_src,
            out_offsets,
            root_entry,
            is_root,
            is_leaf,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn roots(&self) -> &[Root] {
        &self.roots
    }

    pub fn leaves(&self) -> &[u32] {
        &self.leaves
    }

    pub fn is_root(&self, v: u32) -> bool {
        self.is_root[v as usize]
    }

    pub fn is_leaf(&self, v: u32) -> bool {
        self.is_leaf[v as usize]
    }

    pub fn root_entry(&self, v: u32) -> Option<u32> {
        self.root_entry[v as usize]
    }

    /// Incoming edges of `v` in ascending src order.
    pub fn incoming(&self, v: u32) -> impl Iterator<Item = &Edge> + '_ {
        let lo = self.in_offsets[v as usize] as usize;
        let hi = self.in_offsets[v as usize + 1] as usize;
        self.by_dst[lo..hi].iter().map(|&i| &self.edges[i as usize])
    }

    /// Outgoing edges of `v` in ascending dst order.
    pub fn outgoing(&self, v: u32) -> impl Iterator<Item = &Edge> + '_ {
        let lo = self.out_offsets[v as usize] as usize;
        let hi = self.out_offsets[v as usize + 1] as usize;
        self.by_src[lo..hi].iter().map(|&i| &self.edges[i as usize])
    }

    pub fn in_degree(&self, v: u32) -> usize {
        (self.in_offsets[v as usize + 1] - self.in_offsets[v as usize]) as usize
    }

    pub fn out_degree(&self, v: u32) -> usize {
        (self.out_offsets[v as usize + 1] - self.out_offsets[v as usize]) as usize
    }

    /// Largest weight_ref used by any edge or root entry, if any.
    pub fn max_weight_ref(&self) -> Option<u32> {
        let edge_max = self.edges.iter().map(|e| e.weight_ref).max();
        let entry_max = self.roots.iter().filter_map(|r| r.entry_ref).max();
        edge_max.into_iter().chain(entry_max).max()
    }

    /// Per-vertex flags: reachable from some root following edges forward.
    pub fn root_reachable(&self) -> Vec<bool> {
        let mut reach = vec![false; self.vertex_count];
        for r in &self.roots {
            reach[r.vertex as usize] = true;
        }
        for v in 0..self.vertex_count as u32 {
            if !reach[v as usize] && !self.is_root(v) {
                reach[v as usize] = self.incoming(v).any(|e| reach[e.src as usize]);
            }
        }
        reach
    }

    /// Per-vertex flags: some leaf is reachable following edges forward.
    pub fn leaf_coreachable(&self) -> Vec<bool> {
        let mut reach = vec![false; self.vertex_count];
        for &l in &self.leaves {
            reach[l as usize] = true;
        }
        for v in (0..self.vertex_count as u32).rev() {
            if !reach[v as usize] && !self.is_leaf(v) {
                reach[v as usize] = self.outgoing(v).any(|e| reach[e.dst as usize]);
            }
        }
        reach
    }
}

fn csr(
    vertex_count: usize,
    edges: &[Edge],
    key: impl Fn(&Edge) -> (u32, u32),
) -> (Vec<u32>, Vec<u32>) {
    let mut order: Vec<u32> = (0..edges.len() as u32).collect();
    order.sort_by_key(|&i| key(&edges[i as usize]));
    let mut offsets = vec![0u32; vertex_count + 1];
    for e in edges {
        offsets[key(e).0 as usize + 1] += 1;
    }
    for i in 0..vertex_count {
        offsets[i + 1] += offsets[i];
    }
    (order, offsets)
}
