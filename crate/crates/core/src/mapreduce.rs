//! Key-value MapReduce on top of the runtime.
//!
//! A [`KvStore`] is a list of parts, one byte object per part, each living
//! on a home rank. Map, combine and reduce record one op per part on its
//! home rank. A shuffle records one split op per part and one merge op per
//! destination rank; the bytes move between ranks as ordinary revision
//! transfers.

use std::collections::BTreeMap;
use std::marker::PhantomData;

use crate::buffer::{ElemType, Layout};
use crate::context::{Context, Handle};
use crate::dag::ArgMode::{Const, Mutable};
use crate::dag::KernelError;
use crate::error::{Error, Result};
use crate::RankId;

/// Fixed little-endian binary encoding.
pub trait Record: Sized + Clone + Send + Sync + 'static {
    fn encode(&self, out: &mut Vec<u8>);
    fn decode(input: &mut &[u8]) -> Option<Self>;
}

macro_rules! le_record {
    ($($t:ty),*) => {$(
        impl Record for $t {
            fn encode(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            fn decode(input: &mut &[u8]) -> Option<Self> {
                const N: usize = std::mem::size_of::<$t>();
                if input.len() < N {
                    return None;
                }
                let (head, rest) = input.split_at(N);
                *input = rest;
                Some(<$t>::from_le_bytes(head.try_into().ok()?))
            }
        }
    )*};
}

le_record!(i32, u32, i64, u64, f64);

impl<T: Record> Record for Vec<T> {
    fn encode(&self, out: &mut Vec<u8>) {
        (self.len() as u64).encode(out);
        for v in self {
            v.encode(out);
        }
    }

    fn decode(input: &mut &[u8]) -> Option<Self> {
        let n = u64::decode(input)? as usize;
        (0..n).map(|_| T::decode(input)).collect()
    }
}

pub trait Key: Record + Ord {
    /// Rank that owns this key after a shuffle.
    fn partition(&self, ranks: usize) -> RankId;
}

macro_rules! mod_key {
    ($($t:ty),*) => {$(
        impl Key for $t {
            fn partition(&self, ranks: usize) -> RankId {
                (*self as i128).rem_euclid(ranks as i128) as RankId
            }
        }
    )*};
}

mod_key!(i32, u32, i64, u64);

pub fn encode_pairs<K: Record, V: Record>(pairs: &[(K, V)]) -> Vec<u8> {
    let mut out = Vec::new();
    for (k, v) in pairs {
        k.encode(&mut out);
        v.encode(&mut out);
    }
    out
}

pub fn decode_pairs<K: Record, V: Record>(mut bytes: &[u8]) -> Option<Vec<(K, V)>> {
    let mut out = Vec::new();
    while !bytes.is_empty() {
        let k = K::decode(&mut bytes)?;
        let v = V::decode(&mut bytes)?;
        out.push((k, v));
    }
    Some(out)
}

fn decode_or_fail<K: Record, V: Record>(bytes: &[u8]) -> std::result::Result<Vec<(K, V)>, KernelError> {
    decode_pairs(bytes).ok_or_else(|| KernelError::from("malformed key-value part"))
}

/// Values grouped by key, keys ascending, values in arrival order.
fn group<K: Ord, V>(pairs: Vec<(K, V)>) -> BTreeMap<K, Vec<V>> {
    let mut groups: BTreeMap<K, Vec<V>> = BTreeMap::new();
    for (k, v) in pairs {
        groups.entry(k).or_default().push(v);
    }
    groups
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Part {
    pub handle: Handle,
    pub home: RankId,
}

/// Distributed multimap. When `key_disjoint` holds, each key's values are
/// all in one part, the one on rank `key.partition(P)`.
#[derive(Debug)]
pub struct KvStore<K, V> {
    parts: Vec<Part>,
    key_disjoint: bool,
    _types: PhantomData<fn() -> (K, V)>,
}

impl<K, V> Clone for KvStore<K, V> {
    fn clone(&self) -> Self {
        KvStore {
            parts: self.parts.clone(),
            key_disjoint: self.key_disjoint,
            _types: PhantomData,
        }
    }
}

fn part_layout() -> Layout {
    Layout::dynamic(ElemType::Raw)
}

impl<K: Key, V: Record> KvStore<K, V> {
    fn with_parts(parts: Vec<Part>, key_disjoint: bool) -> Self {
        KvStore {
            parts,
            key_disjoint,
            _types: PhantomData,
        }
    }

    /// Partitions `pairs` by key. Every rank passes the same pairs; each
    /// keeps only its own part.
    pub fn from_pairs(ctx: &mut Context, pairs: impl IntoIterator<Item = (K, V)>) -> Result<Self> {
        let ranks = ctx.ranks();
        let me = ctx.rank();
        let mut buckets: Vec<Vec<(K, V)>> = (0..ranks).map(|_| Vec::new()).collect();
        for (k, v) in pairs {
            let p = k.partition(ranks);
            if p == me {
                buckets[p].push((k, v));
            }
        }
        let mut parts = Vec::with_capacity(ranks);
        for (home, bucket) in buckets.iter().enumerate() {
            let handle = ctx.scoped(home, |ctx| ctx.literal_raw(encode_pairs(bucket)))?;
            parts.push(Part { handle, home });
        }
        Ok(Self::with_parts(parts, true))
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    pub fn is_shuffled(&self) -> bool {
        self.key_disjoint
    }

    /// Applies `f` to every key and its values on the rank holding them.
    /// The output is keyed by whatever `f` emits and is not yet shuffled.
    pub fn map<K2, V2, F>(&self, ctx: &mut Context, f: F) -> Result<KvStore<K2, V2>>
    where
        K2: Key,
        V2: Record,
        F: Fn(&K, Vec<V>) -> Vec<(K2, V2)> + Send + Sync + 'static,
    {
        let src = self.shuffle(ctx)?;
        let name = ctx.fresh_name("map");
        let kernel = ctx.declare_kernel(&name, vec![Mutable, Const], move |a| {
            let pairs = decode_or_fail::<K, V>(a.raw(1)?)?;
            let mut out = Vec::new();
            for (k, vs) in group(pairs) {
                out.extend(f(&k, vs));
            }
            *a.raw_mut(0)? = encode_pairs(&out);
            Ok(())
        })?;
        let mut parts = Vec::with_capacity(src.parts.len());
        for p in &src.parts {
            let out = ctx.unset(part_layout())?;
            ctx.scoped(p.home, |ctx| ctx.call(&kernel, &[out, p.handle]))?;
            parts.push(Part {
                handle: out,
                home: p.home,
            });
        }
        Ok(KvStore::with_parts(parts, false))
    }

    /// Moves every pair to the part of `key.partition(P)`. Values keep
    /// their order within each source part, and source parts are
    /// concatenated in order.
    pub fn shuffle(&self, ctx: &mut Context) -> Result<Self> {
        if self.key_disjoint {
            return Ok(self.clone());
        }
        let ranks = ctx.ranks();
        let split_name = ctx.fresh_name("shuffle.split");
        let mut modes = vec![Const];
        modes.extend(std::iter::repeat_n(Mutable, ranks));
        let split = ctx.declare_kernel(&split_name, modes, move |a| {
            let pairs = decode_or_fail::<K, V>(a.raw(0)?)?;
            let mut buckets: Vec<Vec<(K, V)>> = (0..ranks).map(|_| Vec::new()).collect();
            for (k, v) in pairs {
                buckets[k.partition(ranks)].push((k, v));
            }
            for (d, b) in buckets.iter().enumerate() {
                *a.raw_mut(1 + d)? = encode_pairs(b);
            }
            Ok(())
        })?;

        let mut pieces: Vec<Vec<Handle>> = Vec::with_capacity(self.parts.len());
        for p in &self.parts {
            let mut args = vec![p.handle];
            for _ in 0..ranks {
                args.push(ctx.unset(part_layout())?);
            }
            ctx.scoped(p.home, |ctx| ctx.call(&split, &args))?;
            pieces.push(args[1..].to_vec());
        }

        let merge_name = ctx.fresh_name("shuffle.merge");
        let mut modes = vec![Mutable];
        modes.extend(std::iter::repeat_n(Const, self.parts.len()));
        let merge = ctx.declare_kernel(&merge_name, modes, |a| {
            let mut out = Vec::new();
            for i in 1..a.len() {
                out.extend_from_slice(a.raw(i)?);
            }
            *a.raw_mut(0)? = out;
            Ok(())
        })?;
        let mut parts = Vec::with_capacity(ranks);
        for d in 0..ranks {
            let merged = ctx.unset(part_layout())?;
            let mut args = vec![merged];
            args.extend(pieces.iter().map(|ps| ps[d]));
            ctx.scoped(d, |ctx| ctx.call(&merge, &args))?;
            parts.push(Part { handle: merged, home: d });
        }
        for h in pieces.into_iter().flatten() {
            ctx.release(h)?;
        }
        Ok(Self::with_parts(parts, true))
    }

    /// Local pre-aggregation: replaces each part's values per key with
    /// `f(key, values)` without moving data.
    pub fn combine<F>(&self, ctx: &mut Context, f: F) -> Result<Self>
    where
        F: Fn(&K, Vec<V>) -> Vec<V> + Send + Sync + 'static,
    {
        let name = ctx.fresh_name("combine");
        let kernel = ctx.declare_kernel(&name, vec![Mutable], move |a| {
            let pairs = decode_or_fail::<K, V>(a.raw(0)?)?;
            let mut out = Vec::new();
            for (k, vs) in group(pairs) {
                for v in f(&k, vs) {
                    out.push((k.clone(), v));
                }
            }
            *a.raw_mut(0)? = encode_pairs(&out);
            Ok(())
        })?;
        for p in &self.parts {
            ctx.scoped(p.home, |ctx| ctx.call(&kernel, &[p.handle]))?;
        }
        Ok(self.clone())
    }

    /// Shuffles if needed, then applies `f` once per key on the key's
    /// owning rank.
    pub fn reduce<V2, F>(&self, ctx: &mut Context, f: F) -> Result<KvStore<K, V2>>
    where
        V2: Record,
        F: Fn(&K, Vec<V>) -> Vec<(K, V2)> + Send + Sync + 'static,
    {
        let src = self.shuffle(ctx)?;
        let name = ctx.fresh_name("reduce");
        let kernel = ctx.declare_kernel(&name, vec![Mutable, Const], move |a| {
            let pairs = decode_or_fail::<K, V>(a.raw(1)?)?;
            let mut out = Vec::new();
            for (k, vs) in group(pairs) {
                out.extend(f(&k, vs));
            }
            *a.raw_mut(0)? = encode_pairs(&out);
            Ok(())
        })?;
        let mut parts = Vec::with_capacity(src.parts.len());
        for p in &src.parts {
            let out = ctx.unset(part_layout())?;
            ctx.scoped(p.home, |ctx| ctx.call(&kernel, &[out, p.handle]))?;
            parts.push(Part {
                handle: out,
                home: p.home,
            });
        }
        Ok(KvStore::with_parts(parts, false))
    }

    /// Pairs of the parts homed on this rank. Valid after a sync.
    pub fn local_pairs(&self, ctx: &Context) -> Result<Vec<(K, V)>> {
        let mut out = Vec::new();
        for p in self.parts.iter().filter(|p| p.home == ctx.rank()) {
            out.extend(self.decode_part(ctx, p)?);
        }
        Ok(out)
    }

    fn decode_part(&self, ctx: &Context, p: &Part) -> Result<Vec<(K, V)>> {
        let buf = ctx.payload(p.handle)?;
        let bytes = buf.as_raw().ok_or(Error::ElemType {
            object: p.handle.id(),
        })?;
        decode_pairs(bytes).ok_or_else(|| Error::Domain(format!("part {} is not a valid record stream", p.handle.id())))
    }

    /// All pairs, stably sorted by key, on `root` (or on every rank when
    /// `root` is `None`). Syncs.
    pub fn collect(&self, ctx: &mut Context, root: Option<RankId>) -> Result<Option<Vec<(K, V)>>> {
        let targets: Vec<RankId> = match root {
            Some(r) => vec![r],
            None => (0..ctx.ranks()).collect(),
        };
        for p in &self.parts {
            for &r in &targets {
                ctx.observe_on(p.handle, r)?;
            }
        }
        ctx.sync()?;
        if !targets.contains(&ctx.rank()) {
            return Ok(None);
        }
        let mut out = Vec::new();
        for p in &self.parts {
            out.extend(self.decode_part(ctx, p)?);
        }
        out.sort_by(|a, b| a.0.cmp(&b.0));
        Ok(Some(out))
    }

    pub fn release(&self, ctx: &mut Context) -> Result<()> {
        for p in &self.parts {
            ctx.release(p.handle)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SortConfig {
    pub log_bins: u32,
    /// Integers per input document.
    pub chunk: usize,
}

impl Default for SortConfig {
    fn default() -> Self {
        SortConfig {
            log_bins: 8,
            chunk: 4096,
        }
    }
}

/// Top `log_bins` bits of a non-negative 31-bit integer.
pub fn bucket(v: i32, log_bins: u32) -> u32 {
    (v as u32) >> (31 - log_bins)
}

/// Bucket sort as a MapReduce job: documents of `cfg.chunk` integers are
/// mapped to `(bucket, value)` pairs, shuffled, and each bucket sorted on
/// its owning rank. The sorted sequence is returned on rank 0.
pub fn sort_integers(ctx: &mut Context, values: &[i32], cfg: SortConfig) -> Result<Option<Vec<i32>>> {
    if cfg.log_bins > 31 {
        return Err(Error::Domain(format!("log_bins {} outside 0..=31", cfg.log_bins)));
    }
    if cfg.chunk == 0 {
        return Err(Error::Domain("chunk size must be positive".into()));
    }
    if let Some(v) = values.iter().find(|&&v| v < 0) {
        return Err(Error::Domain(format!("negative input {v}")));
    }
    let docs = values
        .chunks(cfg.chunk)
        .enumerate()
        .map(|(i, c)| (i as u64, c.to_vec()));
    let input = KvStore::<u64, Vec<i32>>::from_pairs(ctx, docs)?;
    let lb = cfg.log_bins;
    let mapped = input.map(ctx, move |_, docs| {
        docs.into_iter()
            .flatten()
            .map(|v| (bucket(v, lb), v))
            .collect::<Vec<(u32, i32)>>()
    })?;
    let sorted = mapped.reduce(ctx, |&k, mut vs| {
        vs.sort_unstable();
        vs.into_iter().map(|v| (k, v)).collect::<Vec<(u32, i32)>>()
    })?;
    let out = sorted.collect(ctx, Some(0))?;
    input.release(ctx)?;
    mapped.release(ctx)?;
    sorted.release(ctx)?;
    Ok(out.map(|pairs| pairs.into_iter().map(|(_, v)| v).collect()))
}
