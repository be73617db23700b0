//! Kernel declarations and the transactional operation DAG.
//!
//! Each recorded call becomes an [`OpRecord`] that names the exact
//! revisions it reads and the new revisions it writes. Edges are implied:
//! an op depends on the generator of every revision it reads. Since a
//! consumer can only reference revisions that already exist when it is
//! recorded, op-id order is always a topological order.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::hash::Hasher;
use std::sync::atomic::AtomicU32;
use std::sync::Arc;

use fnv::FnvHasher;

use crate::buffer::Buffer;
use crate::error::{Error, Result};
use crate::store::{ObjectId, RevisionRef};
use crate::RankId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OpId(pub u64);

impl fmt::Display for OpId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArgMode {
    Const,
    Mutable,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KernelError(pub String);

impl fmt::Display for KernelError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KernelError {
    fn from(s: &str) -> Self {
        KernelError(s.to_owned())
    }
}

impl From<String> for KernelError {
    fn from(s: String) -> Self {
        KernelError(s)
    }
}

pub type KernelBody = dyn Fn(&mut Args) -> std::result::Result<(), KernelError> + Send + Sync;

pub struct KernelSpec {
    pub name: String,
    pub arg_modes: Vec<ArgMode>,
    body: Box<KernelBody>,
}

impl KernelSpec {
    pub fn invoke(&self, args: &mut Args) -> std::result::Result<(), KernelError> {
        (self.body)(args)
    }
}

impl fmt::Debug for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KernelSpec")
            .field("name", &self.name)
            .field("arg_modes", &self.arg_modes)
            .finish_non_exhaustive()
    }
}

pub type Kernel = Arc<KernelSpec>;

#[derive(Debug, Default)]
pub struct KernelRegistry {
    kernels: HashMap<String, Kernel>,
}

impl KernelRegistry {
    pub fn declare<F>(&mut self, name: &str, arg_modes: Vec<ArgMode>, body: F) -> Result<Kernel>
    where
        F: Fn(&mut Args) -> std::result::Result<(), KernelError> + Send + Sync + 'static,
    {
        if self.kernels.contains_key(name) {
            return Err(Error::DuplicateKernel(name.to_owned()));
        }
        let k = Arc::new(KernelSpec {
            name: name.to_owned(),
            arg_modes,
            body: Box::new(body),
        });
        self.kernels.insert(name.to_owned(), k.clone());
        Ok(k)
    }

    pub fn get(&self, name: &str) -> Option<Kernel> {
        self.kernels.get(name).cloned()
    }
}

/// Resolved argument as seen by a kernel body: shared for const args,
/// owned for mutable ones.
#[derive(Debug)]
pub enum ArgSlot {
    Shared(Arc<Buffer>),
    Owned(Buffer),
}

impl ArgSlot {
    fn buffer(&self) -> &Buffer {
        match self {
            ArgSlot::Shared(b) => b,
            ArgSlot::Owned(b) => b,
        }
    }
}

fn type_err(i: usize, want: &str) -> KernelError {
    KernelError(format!("argument {i} is not {want}"))
}

#[derive(Debug)]
pub struct Args {
    slots: Vec<ArgSlot>,
}

impl Args {
    pub fn new(slots: Vec<ArgSlot>) -> Self {
        Args { slots }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, i: usize) -> &Buffer {
        self.slots[i].buffer()
    }

    pub fn get_mut(&mut self, i: usize) -> std::result::Result<&mut Buffer, KernelError> {
        match &mut self.slots[i] {
            ArgSlot::Owned(b) => Ok(b),
            ArgSlot::Shared(_) => Err(KernelError(format!("argument {i} is const"))),
        }
    }

    pub fn f64(&self, i: usize) -> std::result::Result<&[f64], KernelError> {
        self.get(i).as_f64().ok_or_else(|| type_err(i, "f64"))
    }

    pub fn f64_mut(&mut self, i: usize) -> std::result::Result<&mut [f64], KernelError> {
        self.get_mut(i)?.as_f64_mut().ok_or_else(|| type_err(i, "f64"))
    }

    pub fn i32(&self, i: usize) -> std::result::Result<&[i32], KernelError> {
        self.get(i).as_i32().ok_or_else(|| type_err(i, "i32"))
    }

    pub fn i32_mut(&mut self, i: usize) -> std::result::Result<&mut [i32], KernelError> {
        self.get_mut(i)?.as_i32_mut().ok_or_else(|| type_err(i, "i32"))
    }

    pub fn raw(&self, i: usize) -> std::result::Result<&[u8], KernelError> {
        self.get(i).as_raw().ok_or_else(|| type_err(i, "raw"))
    }

    pub fn raw_mut(&mut self, i: usize) -> std::result::Result<&mut Vec<u8>, KernelError> {
        self.get_mut(i)?.as_raw_mut().ok_or_else(|| type_err(i, "raw"))
    }

    /// Mutable access to argument `out` together with read access to the
    /// others.
    pub fn split_mut(&mut self, out: usize) -> std::result::Result<(&mut Buffer, Inputs<'_>), KernelError> {
        let (left, rest) = self.slots.split_at_mut(out);
        let (mid, right) = rest.split_first_mut().expect("argument index in range");
        let buf = match mid {
            ArgSlot::Owned(b) => b,
            ArgSlot::Shared(_) => return Err(KernelError(format!("argument {out} is const"))),
        };
        Ok((buf, Inputs { left, right, at: out }))
    }

    pub(crate) fn into_slots(self) -> Vec<ArgSlot> {
        self.slots
    }
}

pub struct Inputs<'a> {
    left: &'a [ArgSlot],
    right: &'a [ArgSlot],
    at: usize,
}

impl<'a> Inputs<'a> {
    pub fn get(&self, i: usize) -> &'a Buffer {
        use std::cmp::Ordering::*;
        match i.cmp(&self.at) {
            Less => self.left[i].buffer(),
            Greater => self.right[i - self.at - 1].buffer(),
            Equal => panic!("argument {i} is borrowed mutably"),
        }
    }

    pub fn f64(&self, i: usize) -> std::result::Result<&'a [f64], KernelError> {
        self.get(i).as_f64().ok_or_else(|| type_err(i, "f64"))
    }
}

/// How one call argument binds to revisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArgBinding {
    pub mode: ArgMode,
    pub object: ObjectId,
    /// Revision read; `None` only for the initializing write of an
    /// output-only object.
    pub read: Option<u32>,
    /// Revision written (mutable args only).
    pub write: Option<u32>,
}

#[derive(Debug)]
pub struct OpRecord {
    pub op_id: OpId,
    pub kernel: Kernel,
    pub args: Vec<ArgBinding>,
    pub placement: RankId,
    pub missing_inputs: AtomicU32,
}

impl OpRecord {
    /// Distinct revisions read, in argument order.
    pub fn reads(&self) -> Vec<RevisionRef> {
        let mut out: Vec<RevisionRef> = Vec::with_capacity(self.args.len());
        for a in &self.args {
            if let Some(index) = a.read {
                let r = RevisionRef { object: a.object, index };
                if !out.contains(&r) {
                    out.push(r);
                }
            }
        }
        out
    }

    pub fn writes(&self) -> Vec<RevisionRef> {
        self.args
            .iter()
            .filter_map(|a| a.write.map(|index| RevisionRef { object: a.object, index }))
            .collect()
    }

    pub fn label(&self) -> String {
        format!("{}#{}@{}", self.kernel.name, self.op_id, self.placement)
    }
}

#[derive(Debug, Default)]
pub struct Dag {
    ops: Vec<OpRecord>,
    generators: HashMap<RevisionRef, OpId>,
}

impl Dag {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn next_id(&self) -> OpId {
        OpId(self.ops.len() as u64)
    }

    pub(crate) fn push(&mut self, kernel: Kernel, args: Vec<ArgBinding>, placement: RankId) -> OpId {
        let op_id = self.next_id();
        for a in &args {
            if let Some(index) = a.write {
                self.generators.insert(RevisionRef { object: a.object, index }, op_id);
            }
        }
        self.ops.push(OpRecord {
            op_id,
            kernel,
            args,
            placement,
            missing_inputs: AtomicU32::new(0),
        });
        op_id
    }

    pub fn op(&self, id: OpId) -> &OpRecord {
        &self.ops[id.0 as usize]
    }

    pub fn ops(&self) -> &[OpRecord] {
        &self.ops
    }

    pub fn generator(&self, r: RevisionRef) -> Option<OpId> {
        self.generators.get(&r).copied()
    }

    /// 64-bit FNV-1a over the canonical little-endian serialization of
    /// every op: id, kernel name, reads, writes, placement.
    pub fn fingerprint(&self) -> u64 {
        fn put(h: &mut FnvHasher, v: u64) {
            h.write(&v.to_le_bytes());
        }
        let mut h = FnvHasher::default();
        for op in &self.ops {
            put(&mut h, op.op_id.0);
            put(&mut h, op.kernel.name.len() as u64);
            h.write(op.kernel.name.as_bytes());
            for revs in [op.reads(), op.writes()] {
                put(&mut h, revs.len() as u64);
                for r in revs {
                    put(&mut h, r.object.0);
                    put(&mut h, r.index as u64);
                }
            }
            put(&mut h, op.placement as u64);
        }
        h.finish()
    }

    /// Graphviz rendering. `trailer` lines are emitted as comments after
    /// the graph body.
    pub fn to_dot(&self, trailer: &[String]) -> String {
        let mut out = String::from("digraph dag {\n");
        for op in &self.ops {
            let _ = writeln!(out, "  n{} [label=\"{}\"];", op.op_id, op.label());
        }
        for op in &self.ops {
            for r in op.reads() {
                if let Some(g) = self.generator(r) {
                    let _ = writeln!(out, "  n{} -> n{} [label=\"{}\"];", g, op.op_id, r);
                }
            }
        }
        for line in trailer {
            let _ = writeln!(out, "  // {line}");
        }
        out.push_str("}\n");
        out
    }

    /// Direct predecessors of an op.
    pub fn predecessors(&self, id: OpId) -> Vec<OpId> {
        let mut p: Vec<OpId> = self.op(id).reads().into_iter().filter_map(|r| self.generator(r)).collect();
        p.sort();
        p.dedup();
        p
    }

    /// `true` if `to` transitively depends on `from`.
    pub fn reaches(&self, from: OpId, to: OpId) -> bool {
        if from >= to {
            return false;
        }
        let mut stack = vec![to];
        let mut seen = vec![false; self.ops.len()];
        while let Some(cur) = stack.pop() {
            for p in self.predecessors(cur) {
                if p == from {
                    return true;
                }
                if p > from && !seen[p.0 as usize] {
                    seen[p.0 as usize] = true;
                    stack.push(p);
                }
            }
        }
        false
    }
}
