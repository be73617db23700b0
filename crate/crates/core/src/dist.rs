//! Rank placement and inferred data movement.
//!
//! Ops are placed by a stack of scope guards. Given placements, every
//! remote read in an epoch is turned into a [`TransferPlan`]: one message
//! per receiving rank, arranged as a binary heap tree rooted at the rank
//! that holds the revision. A revision read on many ranks therefore turns
//! into a broadcast over exactly the ranks that need it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::hash::Hasher;
use std::ops::Range;

use fnv::FnvHasher;

use crate::context::{Context, Handle};
use crate::dag::{Dag, Kernel};
use crate::error::{Error, Result};
use crate::store::{RevisionRef, Store};
use crate::transport::wire::data_tag;
use crate::RankId;

/// Stack of active placement declarations. The innermost scope wins; an
/// empty stack places on rank 0.
#[derive(Debug, Clone)]
pub struct NodeScope {
    stack: Vec<RankId>,
    ranks: usize,
}

impl NodeScope {
    pub fn new(ranks: usize) -> Self {
        assert!(ranks >= 1);
        NodeScope {
            stack: Vec::new(),
            ranks,
        }
    }

    pub fn push(&mut self, rank: RankId) -> Result<()> {
        if rank >= self.ranks {
            return Err(Error::BadRank {
                rank,
                ranks: self.ranks,
            });
        }
        self.stack.push(rank);
        Ok(())
    }

    pub fn pop(&mut self) -> Result<RankId> {
        self.stack.pop().ok_or(Error::ScopeUnderflow)
    }

    pub fn active(&self) -> RankId {
        self.stack.last().copied().unwrap_or(0)
    }

    pub fn innermost(&self) -> Option<RankId> {
        self.stack.last().copied()
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransferPlan {
    pub revision: RevisionRef,
    pub source: RankId,
    /// Distinct receiving ranks, ascending; never contains `source`.
    pub receivers: Vec<RankId>,
    pub edges: Vec<(RankId, RankId)>,
    pub tag: u64,
}

impl TransferPlan {
    pub fn children_of(&self, rank: RankId) -> Vec<RankId> {
        self.edges.iter().filter(|e| e.0 == rank).map(|e| e.1).collect()
    }

    pub fn parent_of(&self, rank: RankId) -> Option<RankId> {
        self.edges.iter().find(|e| e.1 == rank).map(|e| e.0)
    }

    pub fn depth(&self) -> usize {
        tree_depth(self.receivers.len() + 1)
    }
}

impl fmt::Display for TransferPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} src=r{} tree=[", self.revision, self.source)?;
        for (i, (p, c)) in self.edges.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "({p},{c})")?;
        }
        write!(f, "] tag={}", self.tag)
    }
}

/// Depth of a binary heap with `nodes` nodes (root at depth 0).
fn tree_depth(nodes: usize) -> usize {
    if nodes <= 1 {
        0
    } else {
        (usize::BITS - 1 - nodes.leading_zeros()) as usize
    }
}

/// Heap-ordered tree over `[source] ++ receivers`: the node at position
/// `i` has children at `2i+1` and `2i+2`. Receivers must be distinct,
/// ascending and exclude `source`.
pub fn broadcast_tree(source: RankId, receivers: &[RankId]) -> Vec<(RankId, RankId)> {
    let nodes: Vec<RankId> = std::iter::once(source).chain(receivers.iter().copied()).collect();
    (1..nodes.len()).map(|i| (nodes[(i - 1) / 2], nodes[i])).collect()
}

/// Transfer plans for the ops in `ops`, computed from the DAG and the
/// owner sets recorded in the store. Pure: the same inputs give the same
/// plans on every rank.
pub fn plan_transfers(dag: &Dag, ops: Range<usize>, store: &Store, ranks: usize) -> Result<Vec<TransferPlan>> {
    let mut needed: BTreeMap<RevisionRef, BTreeSet<RankId>> = BTreeMap::new();
    for op in &dag.ops()[ops] {
        if op.placement >= ranks {
            return Err(Error::BadRank {
                rank: op.placement,
                ranks,
            });
        }
        for r in op.reads() {
            if !store.revision(r).owners.contains(op.placement) {
                needed.entry(r).or_default().insert(op.placement);
            }
        }
    }
    needed
        .into_iter()
        .map(|(r, consumers)| {
            let source = store.revision(r).source.ok_or(Error::UnplacedGenerator {
                object: r.object,
                index: r.index,
            })?;
            let receivers: Vec<RankId> = consumers.into_iter().filter(|&c| c != source).collect();
            Ok(TransferPlan {
                revision: r,
                source,
                edges: broadcast_tree(source, &receivers),
                receivers,
                tag: data_tag(r),
            })
        })
        .collect()
}

pub fn plans_fingerprint(plans: &[TransferPlan]) -> u64 {
    let mut h = FnvHasher::default();
    for p in plans {
        for v in [p.revision.object.0, p.revision.index as u64, p.source as u64, p.tag] {
            h.write(&v.to_le_bytes());
        }
        for &(a, b) in &p.edges {
            h.write(&(a as u64).to_le_bytes());
            h.write(&(b as u64).to_le_bytes());
        }
    }
    h.finish()
}

/// Pairwise combine steps of a doubling reduction over `n` replicas,
/// grouped by level: at stride `s` replica `w - s` absorbs replica `w` for
/// `w = s, 3s, 5s, ...`.
pub fn reduction_levels(n: usize) -> Vec<Vec<(usize, usize)>> {
    let mut levels = Vec::new();
    let mut s = 1;
    while s < n {
        levels.push((s..n).step_by(2 * s).map(|w| (w - s, w)).collect());
        s *= 2;
    }
    levels
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reduction {
    pub result: Handle,
    pub combines: usize,
    pub levels: usize,
}

/// Records a logarithmic reduction of `replicas` into `replicas[0]`.
/// `combine` must take `[Mutable, Const]` (destination, source).
/// `place(dst)` picks the rank for a combine into replica `dst`; `None`
/// keeps the caller's scope.
pub fn apply_reduction_schedule<F>(
    ctx: &mut Context,
    replicas: &[Handle],
    combine: &Kernel,
    mut place: F,
) -> Result<Reduction>
where
    F: FnMut(usize) -> Option<RankId>,
{
    let first = *replicas.first().ok_or(Error::EmptyReduction)?;
    let levels = reduction_levels(replicas.len());
    let mut combines = 0;
    for level in &levels {
        for &(dst, src) in level {
            let args = [replicas[dst], replicas[src]];
            match place(dst) {
                Some(rank) => ctx.scoped(rank, |ctx| ctx.call(combine, &args))?,
                None => ctx.call(combine, &args)?,
            };
            combines += 1;
        }
    }
    Ok(Reduction {
        result: first,
        combines,
        levels: levels.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scope_nesting() {
        let mut s = NodeScope::new(4);
        assert_eq!(s.active(), 0);
        s.push(1).unwrap();
        s.push(0).unwrap();
        assert_eq!(s.active(), 0);
        s.pop().unwrap();
        assert_eq!(s.active(), 1);
        assert!(matches!(s.push(4), Err(Error::BadRank { rank: 4, ranks: 4 })));
        s.pop().unwrap();
        assert!(matches!(s.pop(), Err(Error::ScopeUnderflow)));
    }

    #[test]
    fn single_receiver_is_direct_send() {
        assert_eq!(broadcast_tree(0, &[1]), vec![(0, 1)]);
    }

    #[test]
    fn three_receivers_heap_order() {
        assert_eq!(broadcast_tree(0, &[1, 2, 3]), vec![(0, 1), (0, 2), (1, 3)]);
        assert_eq!(tree_depth(4), 2);
    }

    #[test]
    fn eight_ranks() {
        let edges = broadcast_tree(0, &[1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(edges.len(), 7);
        assert_eq!(tree_depth(8), 3);
    }

    #[test]
    fn reduction_n4() {
        assert_eq!(reduction_levels(4), vec![vec![(0, 1), (2, 3)], vec![(0, 2)]]);
        assert!(reduction_levels(1).is_empty());
        let l5 = reduction_levels(5);
        assert_eq!(l5.len(), 3);
        assert_eq!(l5.iter().map(Vec::len).sum::<usize>(), 4);
    }

    #[test]
    fn plan_display() {
        let p = TransferPlan {
            revision: RevisionRef {
                object: crate::store::ObjectId(3),
                index: 2,
            },
            source: 0,
            receivers: vec![1, 2, 3],
            edges: broadcast_tree(0, &[1, 2, 3]),
            tag: 7,
        };
        assert_eq!(p.to_string(), "3:v2 src=r0 tree=[(0,1),(0,2),(1,3)] tag=7");
        assert_eq!(p.children_of(1), vec![3]);
        assert_eq!(p.parent_of(3), Some(1));
        assert_eq!(p.parent_of(0), None);
    }
}
