//! The recording flow.
//!
//! Every rank runs the same program against its own [`Context`]. Calls
//! are appended to the local DAG without running anything; `sync` closes
//! the epoch, checks that all ranks recorded the same DAG, plans the
//! transfers and executes the local slice.

use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::buffer::{Buffer, Layout};
use crate::dag::{ArgBinding, ArgMode, Args, Dag, Kernel, KernelError, KernelRegistry, OpId};
use crate::dist::{plan_transfers, NodeScope, TransferPlan};
use crate::error::{Error, Result};
use crate::report::ExecReport;
use crate::sched::{elapsed_ms, execute_epoch, prepare_epoch, EpochStats};
use crate::store::{Holder, Init, ObjectId, Origin, RevisionRef, Store, VersionedHandle};
use crate::transport::{ControlKind, Endpoint, Incoming, Progress};
use crate::RankId;

/// Unversioned reference to a distributed object. Each call resolves it to
/// the revision that is current at record time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Handle(pub(crate) ObjectId);

impl Handle {
    pub fn id(self) -> ObjectId {
        self.0
    }
}

pub struct Context {
    store: Store,
    dag: Dag,
    kernels: KernelRegistry,
    scope: NodeScope,
    endpoint: Endpoint,
    progress: Progress,
    workers: usize,
    epoch_start: usize,
    epoch: u64,
    plans: Vec<TransferPlan>,
    stale_waiters: Vec<RevisionRef>,
    report: ExecReport,
    created: Instant,
    include_recording: bool,
    finished: bool,
    serial: u64,
}

impl Context {
    pub fn new(endpoint: Endpoint, workers: usize) -> Self {
        let rank = endpoint.rank;
        Context {
            store: Store::new(rank),
            dag: Dag::default(),
            kernels: KernelRegistry::default(),
            scope: NodeScope::new(endpoint.ranks),
            endpoint,
            progress: Progress::default(),
            workers: workers.max(1),
            epoch_start: 0,
            epoch: 0,
            plans: Vec::new(),
            stale_waiters: Vec::new(),
            report: ExecReport {
                rank,
                per_worker: vec![0; workers.max(1)],
                ..Default::default()
            },
            created: Instant::now(),
            include_recording: false,
            finished: false,
            serial: 0,
        }
    }

    /// Single-rank context.
    pub fn solo(workers: usize) -> Self {
        Context::new(Endpoint::solo(), workers)
    }

    /// Count recording time in `wall_ms` as well.
    pub fn include_recording(&mut self, yes: bool) {
        self.include_recording = yes;
    }

    pub fn rank(&self) -> RankId {
        self.endpoint.rank
    }

    pub fn ranks(&self) -> usize {
        self.endpoint.ranks
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn declare_kernel<F>(&mut self, name: &str, arg_modes: Vec<ArgMode>, body: F) -> Result<Kernel>
    where
        F: Fn(&mut Args) -> std::result::Result<(), KernelError> + Send + Sync + 'static,
    {
        self.kernels.declare(name, arg_modes, body)
    }

    pub fn kernel(&self, name: &str) -> Option<Kernel> {
        self.kernels.get(name)
    }

    /// Existing kernel with this name, or a newly declared one.
    pub fn kernel_or_declare<F>(&mut self, name: &str, arg_modes: Vec<ArgMode>, body: F) -> Result<Kernel>
    where
        F: Fn(&mut Args) -> std::result::Result<(), KernelError> + Send + Sync + 'static,
    {
        match self.kernels.get(name) {
            Some(k) => Ok(k),
            None => self.kernels.declare(name, arg_modes, body),
        }
    }

    /// `prefix` with a per-context sequence number appended. Every rank
    /// sees the same sequence, so the names can go into kernel names.
    pub fn fresh_name(&mut self, prefix: &str) -> String {
        self.serial += 1;
        format!("{prefix}.{}", self.serial)
    }

    /// New object. Outside any scope a literal is replicated on every
    /// rank; inside a scope it exists only on the innermost scope's rank.
    pub fn create(&mut self, layout: Layout, init: Init) -> Result<Handle> {
        let holder = match self.scope.innermost() {
            Some(r) => Holder::Rank(r),
            None => Holder::All,
        };
        Ok(Handle(self.store.create_object(layout, init, holder)?.object))
    }

    pub fn literal(&mut self, buf: Buffer) -> Result<Handle> {
        let layout = Layout {
            elem: buf.elem(),
            len: Some(buf.len()),
        };
        self.create(layout, Init::Bytes(buf))
    }

    pub fn literal_f64(&mut self, values: Vec<f64>) -> Result<Handle> {
        self.literal(Buffer::F64(values))
    }

    pub fn literal_i32(&mut self, values: Vec<i32>) -> Result<Handle> {
        self.literal(Buffer::I32(values))
    }

    /// Variable-length byte object holding `bytes`.
    pub fn literal_raw(&mut self, bytes: Vec<u8>) -> Result<Handle> {
        self.create(Layout::dynamic(crate::buffer::ElemType::Raw), Init::Bytes(Buffer::Raw(bytes)))
    }

    pub fn zeros(&mut self, layout: Layout) -> Result<Handle> {
        self.create(layout, Init::Zeroed)
    }

    pub fn unset(&mut self, layout: Layout) -> Result<Handle> {
        self.create(layout, Init::Unset)
    }

    /// Records one op. Each const argument reads the current head; each
    /// mutable argument reads it and produces head+1.
    pub fn call(&mut self, kernel: &Kernel, args: &[Handle]) -> Result<OpId> {
        if args.len() != kernel.arg_modes.len() {
            return Err(Error::Arity {
                kernel: kernel.name.clone(),
                expected: kernel.arg_modes.len(),
                actual: args.len(),
            });
        }
        let op_id = self.dag.next_id();
        for i in 0..args.len() {
            for j in i + 1..args.len() {
                if args[i] != args[j] {
                    continue;
                }
                match (kernel.arg_modes[i], kernel.arg_modes[j]) {
                    (ArgMode::Const, ArgMode::Const) => {}
                    (ArgMode::Mutable, ArgMode::Mutable) => {
                        return Err(Error::DoubleWrite {
                            object: args[i].0,
                            op: op_id,
                        })
                    }
                    _ => return Err(Error::AliasedArgs { object: args[i].0 }),
                }
            }
        }

        let mut bindings = Vec::with_capacity(args.len());
        for (&h, &mode) in args.iter().zip(&kernel.arg_modes) {
            let entry = self.store.object(h.0)?;
            if entry.released {
                return Err(Error::UseAfterRelease(h.0));
            }
            let head = entry.head();
            let uninit = entry.revisions[head as usize].origin == Origin::Unset;
            if mode == ArgMode::Const && uninit {
                return Err(Error::UseBeforeInit { object: h.0 });
            }
            bindings.push(ArgBinding {
                mode,
                object: h.0,
                read: (!uninit).then_some(head),
                write: None,
            });
        }

        let placement = self.scope.active();
        for b in bindings.iter_mut().filter(|b| b.mode == ArgMode::Mutable) {
            b.write = Some(self.store.open_new_version(b.object, op_id, placement)?.index);
        }
        Ok(self.dag.push(kernel.clone(), bindings, placement))
    }

    /// Runs `f` with `rank` as the innermost placement.
    pub fn scoped<R>(&mut self, rank: RankId, f: impl FnOnce(&mut Self) -> Result<R>) -> Result<R> {
        self.scope.push(rank)?;
        let out = f(self);
        self.scope.pop()?;
        out
    }

    pub fn push_scope(&mut self, rank: RankId) -> Result<()> {
        self.scope.push(rank)
    }

    pub fn pop_scope(&mut self) -> Result<RankId> {
        self.scope.pop()
    }

    pub fn active_rank(&self) -> RankId {
        self.scope.active()
    }

    /// Declares that no further op uses `h`, so its last revision can be
    /// reclaimed once consumed.
    pub fn release(&mut self, h: Handle) -> Result<()> {
        self.store.release(h.0)
    }

    pub fn head(&self, h: Handle) -> Result<u32> {
        Ok(self.store.object(h.0)?.head())
    }

    pub fn versioned(&self, h: Handle) -> Result<VersionedHandle> {
        self.store.handle(h.0)
    }

    /// Executes every op recorded since the previous sync. A sync with
    /// nothing recorded is a no-op and does not start an epoch.
    pub fn sync(&mut self) -> Result<()> {
        let end = self.dag.len();
        if end == self.epoch_start {
            return Ok(());
        }
        let started = Instant::now();
        let res = self.run_epoch(end);
        if let Err(e) = &res {
            if !matches!(e, Error::RemoteAbort { .. } | Error::TransportDown(_)) {
                self.endpoint
                    .broadcast_control(ControlKind::Abort, self.epoch, e.to_string().as_bytes());
            }
        }
        let stats = res?;
        self.store.sweep();
        self.epoch_start = end;
        self.epoch += 1;
        self.absorb(stats, elapsed_ms(started));
        Ok(())
    }

    fn run_epoch(&mut self, end: usize) -> Result<EpochStats> {
        if self.ranks() > 1 {
            self.exchange_fingerprint()?;
        }
        let range = self.epoch_start..end;
        let plans = plan_transfers(&self.dag, range.clone(), &self.store, self.ranks())?;
        for p in &plans {
            let rev = self.store.revision_mut(p.revision);
            for &r in &p.receivers {
                rev.owners.insert(r);
            }
        }
        let rank = self.rank();
        let epoch = prepare_epoch(&mut self.store, &self.dag, range, &plans, rank, &mut self.stale_waiters)?;
        let stats = execute_epoch(
            &epoch,
            &self.store,
            &self.dag,
            &self.endpoint,
            &mut self.progress,
            self.workers,
        )?;
        self.plans.extend(plans);
        Ok(stats)
    }

    fn absorb(&mut self, s: EpochStats, ms: f64) {
        let r = &mut self.report;
        r.ops_run += s.ops_run;
        r.bytes_copied += s.bytes_copied;
        r.copies += s.copies;
        for (a, b) in r.per_worker.iter_mut().zip(&s.per_worker) {
            *a += b;
        }
        r.peak_ready = r.peak_ready.max(s.peak_ready);
        r.messages_sent += s.messages_sent;
        r.bytes_sent += s.bytes_sent;
        r.epochs = self.epoch;
        r.wall_ms += ms;
    }

    /// Every rank announces the fingerprint of its DAG so far and waits for
    /// all peers' announcements for the same epoch.
    fn exchange_fingerprint(&mut self) -> Result<()> {
        let fp = self.dag.fingerprint();
        let epoch = self.epoch;
        self.endpoint
            .broadcast_control(ControlKind::Fingerprint, epoch, &fp.to_le_bytes());
        let peers: Vec<RankId> = self.endpoint.peers().collect();
        for peer in peers {
            loop {
                if let Some(theirs) = self.progress.fingerprint(epoch, peer) {
                    if theirs != fp {
                        return Err(Error::DivergedDag(format!(
                            "epoch {epoch}: rank {peer} recorded {theirs:016x}, rank {} recorded {fp:016x}",
                            self.rank()
                        )));
                    }
                    break;
                }
                if let Some(done) = self.progress.bye(peer) {
                    if done <= epoch {
                        return Err(Error::DivergedDag(format!(
                            "rank {peer} finished after {done} epochs, rank {} is in epoch {epoch}",
                            self.rank()
                        )));
                    }
                }
                match self.progress.poll(&self.endpoint, Duration::from_millis(100)) {
                    None | Some(Incoming::Wake) => {}
                    Some(Incoming::Data { src, tag, payload }) => self.progress.stash(src, tag, payload),
                    Some(Incoming::Abort { src, reason }) => return Err(Error::RemoteAbort { rank: src, reason }),
                    Some(Incoming::Failed(e)) => return Err(e),
                    Some(Incoming::Down(s)) => return Err(Error::TransportDown(s)),
                }
            }
        }
        self.progress.forget_epoch(epoch);
        Ok(())
    }

    /// Local payload of the current head of `h`. Fails with `NotLocal` if
    /// this rank does not hold it.
    pub fn payload(&self, h: Handle) -> Result<Arc<Buffer>> {
        let entry = self.store.object(h.0)?;
        let r = RevisionRef {
            object: h.0,
            index: entry.head(),
        };
        self.store.resolve_const(r).map_err(|e| match e {
            Error::NotReady { .. } => Error::NotLocal {
                object: h.0,
                rank: self.rank(),
            },
            e => e,
        })
    }

    fn observe_kernel(&mut self) -> Result<Kernel> {
        self.kernel_or_declare("observe", vec![ArgMode::Const], |_| Ok(()))
    }

    /// Records a no-op reader of `h` on `rank`, which makes the runtime
    /// deliver the current head there.
    pub fn observe_on(&mut self, h: Handle, rank: RankId) -> Result<OpId> {
        let k = self.observe_kernel()?;
        self.scoped(rank, |ctx| ctx.call(&k, &[h]))
    }

    /// Current head of `h` on every rank. Syncs.
    pub fn fetch(&mut self, h: Handle) -> Result<Arc<Buffer>> {
        for r in 0..self.ranks() {
            self.observe_on(h, r)?;
        }
        self.sync()?;
        self.payload(h)
    }

    /// Current head of `h` on `root` only; other ranks get `None`. Syncs.
    pub fn fetch_to(&mut self, h: Handle, root: RankId) -> Result<Option<Arc<Buffer>>> {
        self.observe_on(h, root)?;
        self.sync()?;
        if self.rank() == root {
            self.payload(h).map(Some)
        } else {
            Ok(None)
        }
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    /// Transfer plans of all completed epochs, in execution order.
    pub fn plans(&self) -> &[TransferPlan] {
        &self.plans
    }

    pub fn epochs(&self) -> u64 {
        self.epoch
    }

    pub fn fingerprint(&self) -> u64 {
        self.dag.fingerprint()
    }

    /// Graphviz rendering of the DAG recorded so far, optionally followed
    /// by the executed transfer plans as comments.
    pub fn to_dot(&self, with_plans: bool) -> String {
        let trailer: Vec<String> = if with_plans {
            self.plans.iter().map(|p| format!("transfer {p}")).collect()
        } else {
            Vec::new()
        };
        self.dag.to_dot(&trailer)
    }

    pub fn report(&self) -> &ExecReport {
        &self.report
    }

    /// Final sync, then tells peers this rank is done.
    pub fn finish(mut self) -> Result<ExecReport> {
        self.sync()?;
        self.finished = true;
        self.endpoint.broadcast_control(ControlKind::Bye, self.epoch, &[]);
        self.endpoint.link.shutdown();
        let mut report = self.report.clone();
        report.fingerprint = self.dag.fingerprint();
        let total = elapsed_ms(self.created);
        report.recording_ms = (total - report.wall_ms).max(0.0);
        if self.include_recording {
            report.wall_ms = total;
        }
        Ok(report)
    }
}

impl Drop for Context {
    fn drop(&mut self) {
        if !self.finished {
            self.endpoint
                .broadcast_control(ControlKind::Abort, self.epoch, b"rank exited before finishing");
            self.endpoint.link.shutdown();
        }
    }
}
