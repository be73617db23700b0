//! Versioned object store.
//!
//! Every object is a chain of immutable revisions. Revision `v(k+1)` is
//! produced by exactly one op that consumed `v(k)`; older revisions stay
//! readable until their last local consumer completes, so ops recorded
//! before a mutation keep seeing the pre-mutation state.
//!
//! Each rank owns one `Store`. Metadata (revision chains, generators, planned
//! owners) is identical on every rank because every rank records the same
//! program; payloads exist only on ranks that generated or received them.
//!
//! Metadata is appended only by the recording flow (`&mut self`); executor
//! workers touch revisions through `&self` using atomics and an atomic
//! pointer slot for the payload.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU8, AtomicUsize, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwapOption;

use crate::buffer::{Buffer, Layout};
use crate::dag::{Dag, OpId};
use crate::error::{Error, Result};
use crate::RankId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectId(pub u64);

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// One revision of one object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RevisionRef {
    pub object: ObjectId,
    pub index: u32,
}

impl fmt::Display for RevisionRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:v{}", self.object, self.index)
    }
}

/// Snapshot of an object's head as seen by the recording flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VersionedHandle {
    pub object: ObjectId,
    pub head: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum RevisionState {
    Pending = 0,
    Ready = 1,
    Retired = 2,
}

impl RevisionState {
    fn from_u8(v: u8) -> Self {
        match v {
            0 => RevisionState::Pending,
            1 => RevisionState::Ready,
            _ => RevisionState::Retired,
        }
    }
}

/// Initial contents of revision 0.
#[derive(Debug, Clone)]
pub enum Init {
    /// Literal payload, known to the recording flow.
    Bytes(Buffer),
    /// All-zero payload, allocated lazily wherever it is first needed.
    Zeroed,
    /// Output-only object: the first mutating op initializes it.
    Unset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Literal,
    Zeroed,
    Unset,
    Generated(OpId),
}

/// Ranks that hold (or are planned to hold) a ready copy.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Owners {
    All,
    Ranks(BTreeSet<RankId>),
}

impl Owners {
    pub fn none() -> Self {
        Owners::Ranks(BTreeSet::new())
    }

    pub fn one(rank: RankId) -> Self {
        Owners::Ranks(BTreeSet::from([rank]))
    }

    pub fn contains(&self, rank: RankId) -> bool {
        match self {
            Owners::All => true,
            Owners::Ranks(s) => s.contains(&rank),
        }
    }

    pub fn insert(&mut self, rank: RankId) {
        if let Owners::Ranks(s) = self {
            s.insert(rank);
        }
    }
}

#[derive(Debug)]
pub struct Revision {
    pub object: ObjectId,
    pub index: u32,
    pub origin: Origin,
    /// Placement of the generator, or the owning scope of a scoped literal.
    pub source: Option<RankId>,
    pub owners: Owners,
    state: AtomicU8,
    payload: ArcSwapOption<Buffer>,
    pending_consumers: AtomicUsize,
    pending_sends: AtomicUsize,
    /// Local ops of the current epoch waiting for this revision.
    pub(crate) waiters: Vec<OpId>,
}

impl Revision {
    fn new(object: ObjectId, index: u32, origin: Origin, source: Option<RankId>, owners: Owners) -> Self {
        Revision {
            object,
            index,
            origin,
            source,
            owners,
            state: AtomicU8::new(RevisionState::Pending as u8),
            payload: ArcSwapOption::empty(),
            pending_consumers: AtomicUsize::new(0),
            pending_sends: AtomicUsize::new(0),
            waiters: Vec::new(),
        }
    }

    pub fn rev(&self) -> RevisionRef {
        RevisionRef {
            object: self.object,
            index: self.index,
        }
    }

    pub fn generator(&self) -> Option<OpId> {
        match self.origin {
            Origin::Generated(op) => Some(op),
            _ => None,
        }
    }

    pub fn state(&self) -> RevisionState {
        RevisionState::from_u8(self.state.load(Ordering::Acquire))
    }

    pub fn pending_consumers(&self) -> usize {
        self.pending_consumers.load(Ordering::Acquire)
    }

    pub fn pending_sends(&self) -> usize {
        self.pending_sends.load(Ordering::Acquire)
    }

    pub fn payload(&self) -> Option<Arc<Buffer>> {
        self.payload.load_full()
    }

    fn transition(&self, from: RevisionState, to: RevisionState) -> bool {
        self.state
            .compare_exchange(from as u8, to as u8, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
    }
}

#[derive(Debug)]
pub struct ObjectEntry {
    pub id: ObjectId,
    pub layout: Layout,
    pub released: bool,
    pub revisions: Vec<Revision>,
}

impl ObjectEntry {
    pub fn head(&self) -> u32 {
        (self.revisions.len() - 1) as u32
    }
}

/// Whether a literal is replicated on every rank or owned by one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Holder {
    All,
    Rank(RankId),
}

#[derive(Debug)]
pub struct Store {
    rank: RankId,
    objects: Vec<ObjectEntry>,
}

impl Store {
    pub fn new(rank: RankId) -> Self {
        Store {
            rank,
            objects: Vec::new(),
        }
    }

    pub fn rank(&self) -> RankId {
        self.rank
    }

    pub fn len(&self) -> usize {
        self.objects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.objects.is_empty()
    }

    pub fn objects(&self) -> impl Iterator<Item = &ObjectEntry> {
        self.objects.iter()
    }

    pub fn create_object(&mut self, layout: Layout, init: Init, holder: Holder) -> Result<VersionedHandle> {
        if layout.len == Some(0) {
            return Err(Error::ZeroSize);
        }
        let id = ObjectId(self.objects.len() as u64);
        let rev = match init {
            Init::Bytes(buf) => {
                check_payload(layout, RevisionRef { object: id, index: 0 }, &buf)?;
                let (source, owners) = match holder {
                    Holder::All => (None, Owners::All),
                    Holder::Rank(r) => (Some(r), Owners::one(r)),
                };
                let rev = Revision::new(id, 0, Origin::Literal, source, owners);
                if rev.owners.contains(self.rank) {
                    rev.payload.store(Some(Arc::new(buf)));
                    rev.state.store(RevisionState::Ready as u8, Ordering::Release);
                }
                rev
            }
            Init::Zeroed => {
                let rev = Revision::new(id, 0, Origin::Zeroed, None, Owners::All);
                rev.state.store(RevisionState::Ready as u8, Ordering::Release);
                rev
            }
            Init::Unset => Revision::new(id, 0, Origin::Unset, None, Owners::none()),
        };
        self.objects.push(ObjectEntry {
            id,
            layout,
            released: false,
            revisions: vec![rev],
        });
        Ok(VersionedHandle { object: id, head: 0 })
    }

    pub fn object(&self, id: ObjectId) -> Result<&ObjectEntry> {
        self.objects.get(id.0 as usize).ok_or(Error::UnknownObject(id))
    }

    fn object_mut(&mut self, id: ObjectId) -> Result<&mut ObjectEntry> {
        self.objects.get_mut(id.0 as usize).ok_or(Error::UnknownObject(id))
    }

    pub fn handle(&self, id: ObjectId) -> Result<VersionedHandle> {
        Ok(VersionedHandle {
            object: id,
            head: self.object(id)?.head(),
        })
    }

    pub fn revision(&self, r: RevisionRef) -> &Revision {
        &self.objects[r.object.0 as usize].revisions[r.index as usize]
    }

    pub(crate) fn revision_mut(&mut self, r: RevisionRef) -> &mut Revision {
        &mut self.objects[r.object.0 as usize].revisions[r.index as usize]
    }

    pub fn try_revision(&self, r: RevisionRef) -> Option<&Revision> {
        self.objects
            .get(r.object.0 as usize)
            .and_then(|o| o.revisions.get(r.index as usize))
    }

    /// Appends revision head+1 in Pending state with `generator` as its
    /// only producer.
    pub fn open_new_version(&mut self, object: ObjectId, generator: OpId, placement: RankId) -> Result<RevisionRef> {
        let entry = self.object_mut(object)?;
        if entry.released {
            return Err(Error::UseAfterRelease(object));
        }
        if entry.revisions.last().and_then(|r| r.generator()) == Some(generator) {
            return Err(Error::DoubleWrite { object, op: generator });
        }
        let index = entry.revisions.len() as u32;
        entry.revisions.push(Revision::new(
            object,
            index,
            Origin::Generated(generator),
            Some(placement),
            Owners::one(placement),
        ));
        Ok(RevisionRef { object, index })
    }

    /// No op recorded after this call may use the object; its head becomes
    /// reclaimable once its consumers complete.
    pub fn release(&mut self, object: ObjectId) -> Result<()> {
        let entry = self.object_mut(object)?;
        if entry.released {
            return Err(Error::UseAfterRelease(object));
        }
        entry.released = true;
        Ok(())
    }

    pub fn is_superseded(&self, r: RevisionRef) -> bool {
        let entry = &self.objects[r.object.0 as usize];
        entry.released || (r.index as usize) + 1 < entry.revisions.len()
    }

    /// Installs a generated or received payload and decrements the missing
    /// input count of every waiting op. Returns the ops that became ready.
    pub fn mark_ready(&self, r: RevisionRef, payload: Buffer, dag: &Dag) -> Result<Vec<OpId>> {
        let layout = self.object(r.object)?.layout;
        check_payload(layout, r, &payload)?;
        let rev = self.revision(r);
        if rev.state() != RevisionState::Pending {
            return Err(Error::DoubleComplete {
                object: r.object,
                index: r.index,
            });
        }
        rev.payload.store(Some(Arc::new(payload)));
        if !rev.transition(RevisionState::Pending, RevisionState::Ready) {
            return Err(Error::DoubleComplete {
                object: r.object,
                index: r.index,
            });
        }
        let mut ready = Vec::new();
        for &op in &rev.waiters {
            if dag.op(op).missing_inputs.fetch_sub(1, Ordering::AcqRel) == 1 {
                ready.push(op);
            }
        }
        Ok(ready)
    }

    /// Frees the payload iff the revision is ready here, superseded (or its
    /// object released), has no pending local consumer and nothing left to
    /// forward.
    pub fn retire_if_dead(&self, r: RevisionRef) -> bool {
        let rev = self.revision(r);
        if rev.pending_consumers() != 0 || rev.pending_sends() != 0 || !self.is_superseded(r) {
            return false;
        }
        if rev.transition(RevisionState::Ready, RevisionState::Retired) {
            rev.payload.store(None);
            return true;
        }
        // Output-only placeholder that was never written.
        if rev.origin == Origin::Unset && rev.transition(RevisionState::Pending, RevisionState::Retired) {
            return true;
        }
        false
    }

    /// Shared read view of a ready revision. Zero-initialized revisions are
    /// materialized on first use.
    pub fn resolve_const(&self, r: RevisionRef) -> Result<Arc<Buffer>> {
        let rev = self.revision(r);
        if rev.state() != RevisionState::Ready {
            return Err(Error::NotReady {
                object: r.object,
                index: r.index,
            });
        }
        if let Some(p) = rev.payload.load_full() {
            return Ok(p);
        }
        if rev.origin == Origin::Zeroed {
            let layout = self.object(r.object)?.layout;
            let fresh = Arc::new(Buffer::zeroed(layout.elem, layout.len.unwrap_or(0)));
            rev.payload.compare_and_swap(&None::<Arc<Buffer>>, Some(fresh));
            if let Some(p) = rev.payload.load_full() {
                return Ok(p);
            }
        }
        Err(Error::NotReady {
            object: r.object,
            index: r.index,
        })
    }

    /// Moves the payload out of a revision whose only remaining consumer is
    /// the caller. The revision is retired. Returns `None` for a lazily
    /// zeroed revision that was never materialized.
    pub(crate) fn take_payload(&self, r: RevisionRef) -> Result<Option<Arc<Buffer>>> {
        let rev = self.revision(r);
        if rev.state() != RevisionState::Ready {
            return Err(Error::NotReady {
                object: r.object,
                index: r.index,
            });
        }
        let p = rev.payload.swap(None);
        rev.transition(RevisionState::Ready, RevisionState::Retired);
        Ok(p)
    }

    pub(crate) fn add_pending_consumer(&self, r: RevisionRef) {
        self.revision(r).pending_consumers.fetch_add(1, Ordering::AcqRel);
    }

    /// Returns true when this was the last pending consumer.
    pub(crate) fn consumer_done(&self, r: RevisionRef) -> bool {
        self.revision(r).pending_consumers.fetch_sub(1, Ordering::AcqRel) == 1
    }

    pub(crate) fn add_pending_sends(&self, r: RevisionRef, n: usize) {
        self.revision(r).pending_sends.fetch_add(n, Ordering::AcqRel);
    }

    pub(crate) fn send_done(&self, r: RevisionRef) -> bool {
        self.revision(r).pending_sends.fetch_sub(1, Ordering::AcqRel) == 1
    }

    /// Retires every dead revision; returns how many were retired.
    pub fn sweep(&self) -> usize {
        let mut n = 0;
        for obj in &self.objects {
            for rev in &obj.revisions {
                if rev.state() != RevisionState::Retired && self.retire_if_dead(rev.rev()) {
                    n += 1;
                }
            }
        }
        n
    }

    /// Total bytes of payloads currently held by this rank.
    pub fn live_bytes(&self) -> usize {
        self.objects
            .iter()
            .flat_map(|o| o.revisions.iter())
            .filter_map(|r| r.payload.load_full())
            .map(|p| p.size_bytes())
            .sum()
    }

    /// Number of revisions with a payload held by this rank.
    pub fn live_revisions(&self) -> usize {
        self.objects
            .iter()
            .flat_map(|o| o.revisions.iter())
            .filter(|r| r.payload.load().is_some())
            .count()
    }

    /// (object, index, generator) triples in allocation order.
    pub fn version_log(&self) -> Vec<(ObjectId, u32, Option<OpId>)> {
        self.objects
            .iter()
            .flat_map(|o| o.revisions.iter())
            .map(|r| (r.object, r.index, r.generator()))
            .collect()
    }
}

fn check_payload(layout: Layout, r: RevisionRef, buf: &Buffer) -> Result<()> {
    if buf.elem() != layout.elem {
        return Err(Error::ElemType { object: r.object });
    }
    if let Some(expected) = layout.size_bytes() {
        if buf.size_bytes() != expected {
            return Err(Error::PayloadSize {
                object: r.object,
                index: r.index,
                expected,
                actual: buf.size_bytes(),
            });
        }
    }
    Ok(())
}
