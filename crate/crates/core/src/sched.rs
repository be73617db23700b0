//! Local execution of one epoch of the DAG.
//!
//! Every local op carries a count of inputs that are not yet ready here.
//! Completing a revision decrements the count of each waiting op; the
//! decrement that reaches zero pushes the op to a shared FIFO queue.
//! Workers pop ops and claim them with a single atomic swap, so an op runs
//! at most once and a worker that loses a claim just moves on. The
//! recording thread meanwhile drives the transport: it feeds received
//! revisions into the store and forwards them down their broadcast trees.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, Thread};
use std::time::{Duration, Instant};

use crossbeam::channel::Sender;
use crossbeam::queue::SegQueue;
use crossbeam::utils::Backoff;

use crate::buffer::Buffer;
use crate::dag::{ArgBinding, ArgMode, ArgSlot, Args, Dag, OpId};
use crate::dist::TransferPlan;
use crate::error::{Error, Result};
use crate::store::{Origin, RevisionRef, RevisionState, Store};
use crate::transport::{Endpoint, Event, Incoming, Link, Message, Progress};
use crate::RankId;

/// This rank's position in the broadcast tree of one revision.
#[derive(Debug, Clone, Default)]
pub(crate) struct Role {
    pub children: Vec<RankId>,
}

/// Everything the executor needs for one epoch, computed up front by the
/// recording thread.
#[derive(Debug, Default)]
pub(crate) struct Epoch {
    pub local: Vec<OpId>,
    /// Per local op, per argument: may the mutable argument take over its
    /// prior revision's buffer.
    pub handoff: HashMap<OpId, Vec<bool>>,
    pub roles: HashMap<RevisionRef, Role>,
    pub incoming: HashMap<u64, RevisionRef>,
    pub initially_ready: Vec<OpId>,
    pub initial_sends: Vec<RevisionRef>,
}

#[derive(Debug, Clone, Default)]
pub struct EpochStats {
    pub ops_run: usize,
    pub bytes_copied: u64,
    pub copies: usize,
    pub per_worker: Vec<usize>,
    pub peak_ready: usize,
    pub messages_sent: usize,
    pub bytes_sent: u64,
}

pub(crate) fn prepare_epoch(
    store: &mut Store,
    dag: &Dag,
    range: Range<usize>,
    plans: &[TransferPlan],
    rank: RankId,
    stale_waiters: &mut Vec<RevisionRef>,
) -> Result<Epoch> {
    for r in stale_waiters.drain(..) {
        store.revision_mut(r).waiters.clear();
    }
    let mut ep = Epoch::default();

    for p in plans {
        let children = p.children_of(rank);
        let parent = p.parent_of(rank);
        if children.is_empty() && parent.is_none() {
            continue;
        }
        if parent.is_some() {
            ep.incoming.insert(p.tag, p.revision);
        }
        if !children.is_empty() {
            store.add_pending_sends(p.revision, children.len());
            if parent.is_none() && store.revision(p.revision).state() == RevisionState::Ready {
                ep.initial_sends.push(p.revision);
            }
        }
        ep.roles.insert(p.revision, Role { children });
    }

    let mut local_reads: HashMap<RevisionRef, usize> = HashMap::new();
    for op in &dag.ops()[range] {
        if op.placement == rank {
            ep.local.push(op.op_id);
            for r in op.reads() {
                *local_reads.entry(r).or_default() += 1;
            }
        }
    }

    for &id in &ep.local {
        let op = dag.op(id);
        let mut missing = 0u32;
        for r in op.reads() {
            store.add_pending_consumer(r);
            match store.revision(r).state() {
                RevisionState::Ready => {}
                RevisionState::Pending => {
                    missing += 1;
                    store.revision_mut(r).waiters.push(id);
                    stale_waiters.push(r);
                }
                RevisionState::Retired => {
                    return Err(Error::NotReady {
                        object: r.object,
                        index: r.index,
                    })
                }
            }
        }
        op.missing_inputs.store(missing, Ordering::Release);
        let handoff = op
            .args
            .iter()
            .map(|a| match (a.mode, a.read) {
                (ArgMode::Mutable, Some(index)) => {
                    let r = RevisionRef { object: a.object, index };
                    local_reads.get(&r) == Some(&1) && ep.roles.get(&r).is_none_or(|ro| ro.children.is_empty())
                }
                _ => false,
            })
            .collect();
        ep.handoff.insert(id, handoff);
        if missing == 0 {
            ep.initially_ready.push(id);
        }
    }
    Ok(ep)
}

struct Shared<'a> {
    dag: &'a Dag,
    store: &'a Store,
    link: &'a dyn Link,
    epoch: &'a Epoch,
    claimed: HashMap<OpId, AtomicBool>,
    queue: SegQueue<OpId>,
    outstanding: AtomicUsize,
    completed: AtomicUsize,
    stop: AtomicBool,
    sleepers: SegQueue<Thread>,
    wake: Sender<Event>,
    bytes_copied: AtomicU64,
    copies: AtomicUsize,
    messages: AtomicUsize,
    bytes_sent: AtomicU64,
    peak_ready: AtomicUsize,
    executed: Vec<AtomicUsize>,
}

impl<'a> Shared<'a> {
    fn push_ready(&self, op: OpId) {
        self.outstanding.fetch_add(1, Ordering::AcqRel);
        self.queue.push(op);
        self.peak_ready.fetch_max(self.queue.len(), Ordering::Relaxed);
        if let Some(t) = self.sleepers.pop() {
            t.unpark();
        }
    }

    fn worker(&self, index: usize) {
        let backoff = Backoff::new();
        while !self.stop.load(Ordering::Acquire) {
            match self.queue.pop() {
                Some(op) => {
                    backoff.reset();
                    if self.claimed[&op].swap(true, Ordering::AcqRel) {
                        // Someone else owns it; try the next candidate.
                        self.outstanding.fetch_sub(1, Ordering::AcqRel);
                        continue;
                    }
                    if let Err(e) = self.run(op) {
                        self.stop.store(true, Ordering::Release);
                        let _ = self.wake.send(Event::Failed(e));
                        return;
                    }
                    self.executed[index].fetch_add(1, Ordering::Relaxed);
                    self.completed.fetch_add(1, Ordering::AcqRel);
                    if self.outstanding.fetch_sub(1, Ordering::AcqRel) == 1 {
                        let _ = self.wake.send(Event::Wake);
                    }
                }
                None if backoff.is_completed() => {
                    self.sleepers.push(thread::current());
                    if self.queue.is_empty() && !self.stop.load(Ordering::Acquire) {
                        thread::park_timeout(Duration::from_millis(5));
                    }
                    backoff.reset();
                }
                None => backoff.snooze(),
            }
        }
    }

    fn count_copy(&self, b: &Buffer) {
        self.copies.fetch_add(1, Ordering::Relaxed);
        self.bytes_copied.fetch_add(b.size_bytes() as u64, Ordering::Relaxed);
    }

    /// Buffer handed to a mutable argument: the prior revision's buffer
    /// when this op is its last local consumer, a copy otherwise.
    fn resolve_mut(&self, a: &ArgBinding, handoff: bool) -> Result<Buffer> {
        let layout = self.store.object(a.object)?.layout;
        let fresh = || Buffer::zeroed(layout.elem, layout.len.unwrap_or(0));
        let Some(index) = a.read else {
            return Ok(fresh());
        };
        let r = RevisionRef { object: a.object, index };
        if handoff {
            return Ok(match self.store.take_payload(r)? {
                Some(arc) => Arc::try_unwrap(arc).unwrap_or_else(|shared| {
                    self.count_copy(&shared);
                    (*shared).clone()
                }),
                None => fresh(),
            });
        }
        let rev = self.store.revision(r);
        if rev.origin == Origin::Zeroed && rev.payload().is_none() {
            return Ok(fresh());
        }
        let src = self.store.resolve_const(r)?;
        self.count_copy(&src);
        Ok((*src).clone())
    }

    fn run(&self, id: OpId) -> Result<()> {
        let op = self.dag.op(id);
        let handoff = &self.epoch.handoff[&id];
        let mut slots = Vec::with_capacity(op.args.len());
        for (i, a) in op.args.iter().enumerate() {
            slots.push(match a.mode {
                ArgMode::Const => {
                    let index = a.read.expect("const args always read");
                    ArgSlot::Shared(self.store.resolve_const(RevisionRef { object: a.object, index })?)
                }
                ArgMode::Mutable => ArgSlot::Owned(self.resolve_mut(a, handoff[i])?),
            });
        }
        let mut args = Args::new(slots);
        op.kernel.invoke(&mut args).map_err(|e| Error::KernelFailed {
            op: id,
            kernel: op.kernel.name.clone(),
            message: e.0,
        })?;
        for (a, slot) in op.args.iter().zip(args.into_slots()) {
            if let (Some(index), ArgSlot::Owned(buf)) = (a.write, slot) {
                let r = RevisionRef { object: a.object, index };
                for ready in self.store.mark_ready(r, buf, self.dag)? {
                    self.push_ready(ready);
                }
                self.forward(r)?;
            }
        }
        for r in op.reads() {
            if self.store.consumer_done(r) {
                self.store.retire_if_dead(r);
            }
        }
        Ok(())
    }

    /// Sends a locally ready revision to this rank's children in its
    /// broadcast tree.
    fn forward(&self, r: RevisionRef) -> Result<()> {
        let Some(role) = self.epoch.roles.get(&r) else {
            return Ok(());
        };
        if role.children.is_empty() {
            return Ok(());
        }
        let payload = self
            .store
            .revision(r)
            .payload()
            .ok_or(Error::NotReady {
                object: r.object,
                index: r.index,
            })?
            .to_le_bytes();
        for &child in &role.children {
            self.link.send(child, Message::data(r, payload.clone()))?;
            self.messages.fetch_add(1, Ordering::Relaxed);
            self.bytes_sent.fetch_add(payload.len() as u64, Ordering::Relaxed);
            if self.store.send_done(r) {
                self.store.retire_if_dead(r);
            }
        }
        Ok(())
    }

    fn deliver(&self, r: RevisionRef, bytes: &[u8]) -> Result<()> {
        let layout = self.store.object(r.object)?.layout;
        let buf = Buffer::from_le_bytes(layout.elem, bytes).ok_or(Error::PayloadSize {
            object: r.object,
            index: r.index,
            expected: layout.size_bytes().unwrap_or(0),
            actual: bytes.len(),
        })?;
        for ready in self.store.mark_ready(r, buf, self.dag)? {
            self.push_ready(ready);
        }
        self.forward(r)
    }

    /// Progress loop run by the recording thread until the epoch is done.
    fn drive(&self, ep: &Endpoint, progress: &mut Progress, rank: RankId) -> Result<()> {
        let total = self.epoch.local.len();
        let mut remaining = self.epoch.incoming.len();
        for (&tag, &r) in &self.epoch.incoming {
            if let Some((_, bytes)) = progress.take_stashed(tag) {
                self.deliver(r, &bytes)?;
                remaining -= 1;
            }
        }
        loop {
            let completed = self.completed.load(Ordering::Acquire);
            if completed == total && remaining == 0 {
                return Ok(());
            }
            if remaining == 0 && self.outstanding.load(Ordering::Acquire) == 0 {
                // Re-read: the last op may have completed since `completed`
                // was loaded.
                let completed = self.completed.load(Ordering::Acquire);
                if completed == total {
                    return Ok(());
                }
                return Err(Error::StalledDag {
                    rank,
                    completed,
                    total,
                });
            }
            match progress.poll(ep, Duration::from_millis(100)) {
                None | Some(Incoming::Wake) => {}
                Some(Incoming::Data { src, tag, payload }) => match self.epoch.incoming.get(&tag) {
                    Some(&r) if self.store.revision(r).state() == RevisionState::Pending => {
                        self.deliver(r, &payload)?;
                        remaining -= 1;
                    }
                    _ => progress.stash(src, tag, payload),
                },
                Some(Incoming::Abort { src, reason }) => return Err(Error::RemoteAbort { rank: src, reason }),
                Some(Incoming::Failed(e)) => return Err(e),
                Some(Incoming::Down(s)) => return Err(Error::TransportDown(s)),
            }
        }
    }
}

/// Runs the local slice of one epoch on `workers` threads and returns when
/// every local op has completed and every expected revision has arrived.
pub(crate) fn execute_epoch(
    epoch: &Epoch,
    store: &Store,
    dag: &Dag,
    ep: &Endpoint,
    progress: &mut Progress,
    workers: usize,
) -> Result<EpochStats> {
    let workers = workers.max(1);
    let shared = Shared {
        dag,
        store,
        link: ep.link.as_ref(),
        epoch,
        claimed: epoch.local.iter().map(|&id| (id, AtomicBool::new(false))).collect(),
        queue: SegQueue::new(),
        outstanding: AtomicUsize::new(0),
        completed: AtomicUsize::new(0),
        stop: AtomicBool::new(false),
        sleepers: SegQueue::new(),
        wake: ep.local.clone(),
        bytes_copied: AtomicU64::new(0),
        copies: AtomicUsize::new(0),
        messages: AtomicUsize::new(0),
        bytes_sent: AtomicU64::new(0),
        peak_ready: AtomicUsize::new(0),
        executed: (0..workers).map(|_| AtomicUsize::new(0)).collect(),
    };
    for &r in &epoch.initial_sends {
        shared.forward(r)?;
    }
    for &op in &epoch.initially_ready {
        shared.push_ready(op);
    }

    if !epoch.local.is_empty() || !epoch.incoming.is_empty() {
        thread::scope(|s| {
            for w in 0..workers {
                let sh = &shared;
                s.spawn(move || sh.worker(w));
            }
            let res = shared.drive(ep, progress, ep.rank);
            shared.stop.store(true, Ordering::Release);
            while let Some(t) = shared.sleepers.pop() {
                t.unpark();
            }
            res
        })?;
    }

    let per_worker: Vec<usize> = shared.executed.iter().map(|c| c.load(Ordering::Relaxed)).collect();
    Ok(EpochStats {
        ops_run: per_worker.iter().sum(),
        bytes_copied: shared.bytes_copied.load(Ordering::Relaxed),
        copies: shared.copies.load(Ordering::Relaxed),
        per_worker,
        peak_ready: shared.peak_ready.load(Ordering::Relaxed),
        messages_sent: shared.messages.load(Ordering::Relaxed),
        bytes_sent: shared.bytes_sent.load(Ordering::Relaxed),
    })
}

/// Wall-clock helper for callers timing several epochs.
pub(crate) fn elapsed_ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
