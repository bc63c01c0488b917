//! Bounded-degree proximity graphs over subsets of the dataset.

mod build;
mod prune;
mod search;

use std::path::Path;

pub use build::{build_subgraph, estimate_build_cost, medoid, CostModel, VamanaBuilder};
pub use prune::{robust_prune, robust_prune_by};
pub use search::{greedy_beam_search, GraphView, SearchResult, VisitedSet};

use crate::dataset::{VectorDataset, VectorId};
use crate::error::{Error, Result};
use crate::io::{self, put_u32, put_u32s, Reader};

#[derive(Clone, Debug, PartialEq)]
pub struct BuildParams {
    /// Maximum out-degree.
    pub r: usize,
    /// Beam width used while building.
    pub l_build: usize,
    /// Pruning slack; 1.0 keeps only strictly dominating neighbors.
    pub alpha: f32,
    pub seed: u64,
}

impl Default for BuildParams {
    fn default() -> Self {
        Self {
            r: 32,
            l_build: 64,
            alpha: 1.2,
            seed: 0,
        }
    }
}

impl BuildParams {
    pub fn validate(&self) -> Result<()> {
        if self.r < 2 {
            return Err(Error::invalid(format!("r must be >= 2, got {}", self.r)));
        }
        if self.l_build < self.r {
            return Err(Error::invalid(format!(
                "l_build={} must be >= r={}",
                self.l_build, self.r
            )));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!(
                "alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Directed graph over global vector ids.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subgraph {
    /// Degree bound the graph was built under.
    pub r: u32,
    /// Ascending global ids.
    pub members: Vec<VectorId>,
    /// Out-neighbors of `members[i]`, as global ids.
    pub adjacency: Vec<Vec<VectorId>>,
    pub entry: VectorId,
}

impl Subgraph {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Position of a global id in `members`.
    pub fn position(&self, id: VectorId) -> Option<usize> {
        self.members.binary_search(&id).ok()
    }

    pub fn neighbors(&self, id: VectorId) -> Option<&[VectorId]> {
        self.position(id).map(|p| self.adjacency[p].as_slice())
    }

    pub fn max_degree(&self) -> usize {
        self.adjacency.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Degree bound, membership of neighbors, no self-loops, valid entry.
    pub fn check_invariants(&self) -> Result<()> {
        if self.members.is_empty() {
            return Err(Error::invalid("graph has no members"));
        }
        if self.members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("members are not strictly ascending"));
        }
        if self.adjacency.len() != self.members.len() {
            return Err(Error::invalid("adjacency length differs from member count"));
        }
        if self.position(self.entry).is_none() {
            return Err(Error::invalid(format!(
                "entry {} is not a member",
                self.entry
            )));
        }
        for (&id, nbrs) in self.members.iter().zip(&self.adjacency) {
            if nbrs.len() > self.r as usize {
                return Err(Error::invalid(format!(
                    "node {id} has degree {} > r={}",
                    nbrs.len(),
                    self.r
                )));
            }
            for &n in nbrs {
                if n == id {
                    return Err(Error::invalid(format!("self-loop at {id}")));
                }
                if self.position(n).is_none() {
                    return Err(Error::invalid(format!("edge {id}->{n} leaves the graph")));
                }
            }
        }
        Ok(())
    }

    /// Member count, r and entry, then the member ids, then each adjacency
    /// list prefixed by its length. All little-endian `u32`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let edges: usize = self.adjacency.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(12 + 8 * self.members.len() + 4 * edges);
        put_u32(&mut out, self.members.len() as u32);
        put_u32(&mut out, self.r);
        put_u32(&mut out, self.entry);
        put_u32s(&mut out, &self.members);
        for nbrs in &self.adjacency {
            put_u32(&mut out, nbrs.len() as u32);
            put_u32s(&mut out, nbrs);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader::new(bytes);
        let n = rd.u32()? as usize;
        let r = rd.u32()?;
        let entry = rd.u32()?;
        let members = rd.u32_vec(n)?;
        let mut adjacency = Vec::with_capacity(n);
        for _ in 0..n {
            let len = rd.u32()? as usize;
            adjacency.push(rd.u32_vec(len)?);
        }
        rd.finish()?;
        let g = Self {
            r,
            members,
            adjacency,
            entry,
        };
        g.check_invariants()
            .map_err(|e| Error::format(format!("invalid graph file: {e}")))?;
        Ok(g)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        io::write_file(path.as_ref(), &self.to_bytes())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&io::read_file(path.as_ref())?)
    }
}

/// Something that turns a subset of ids into a graph.
pub trait SubgraphBuilder: Sync {
    fn build(&self, ids: &[VectorId], dataset: &VectorDataset) -> Result<Subgraph>;
}
