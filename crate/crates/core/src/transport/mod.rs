//! Moving revision payloads between ranks.
//!
//! A rank talks to its peers through an [`Endpoint`]: a [`Link`] for
//! outgoing frames and an event channel that collects incoming frames
//! together with local notifications from executor workers. Two fabrics
//! implement the same contract: in-process channels between simulated
//! ranks, and TCP sockets between OS processes.

mod simulated;
mod sockets;
pub mod wire;

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::time::{Duration, Instant};

use crossbeam::channel::{Receiver, RecvTimeoutError, Sender};

use crate::error::{Error, Result};
use crate::RankId;

pub use simulated::simulated_fabric;
pub use sockets::{connect_mesh, SocketConfig};
pub use wire::{ControlKind, Message};

pub enum Event {
    Remote {
        src: RankId,
        msg: Message,
        /// Simulated latency: the message may not be consumed before this.
        due: Option<Instant>,
    },
    /// Executor state changed; re-check completion.
    Wake,
    Failed(Error),
    Down(String),
}

pub trait Link: Send + Sync {
    /// Queues a message for `dest`; never waits for delivery.
    fn send(&self, dest: RankId, msg: Message) -> Result<()>;

    /// Flushes queued messages and closes connections.
    fn shutdown(&self) {}
}

pub struct Endpoint {
    pub rank: RankId,
    pub ranks: usize,
    pub link: Box<dyn Link>,
    pub events: Receiver<Event>,
    pub local: Sender<Event>,
}

impl Endpoint {
    /// Single-rank endpoint with no peers.
    pub fn solo() -> Self {
        simulated_fabric(1, Duration::ZERO).pop().unwrap()
    }

    pub fn peers(&self) -> impl Iterator<Item = RankId> + '_ {
        (0..self.ranks).filter(move |&r| r != self.rank)
    }

    /// Sends a control message to every peer, ignoring peers that already
    /// left.
    pub fn broadcast_control(&self, kind: ControlKind, value: u64, payload: &[u8]) {
        for p in self.peers() {
            let _ = self.link.send(p, Message::control(kind, value, payload.to_vec()));
        }
    }
}

/// What the progress loop hands back to the runtime.
pub enum Incoming {
    Data { src: RankId, tag: u64, payload: Vec<u8> },
    Abort { src: RankId, reason: String },
    Wake,
    Failed(Error),
    Down(String),
}

/// Per-rank receive state kept across epochs: delayed deliveries, data
/// that arrived before its epoch, and control bookkeeping.
#[derive(Default)]
pub struct Progress {
    delayed: BinaryHeap<Reverse<(Instant, u64, RankId, u64)>>,
    delayed_payloads: HashMap<u64, Message>,
    seq: u64,
    mailbox: HashMap<u64, (RankId, Vec<u8>)>,
    fingerprints: HashMap<(u64, RankId), u64>,
    byes: HashMap<RankId, u64>,
}

impl Progress {
    /// Next incoming item, or `None` after `timeout` without one.
    /// Control messages are absorbed into bookkeeping and reported as `Wake`.
    pub fn poll(&mut self, ep: &Endpoint, timeout: Duration) -> Option<Incoming> {
        let deadline = Instant::now() + timeout;
        loop {
            let now = Instant::now();
            if let Some(Reverse((due, seq, src, _))) = self.delayed.peek().copied() {
                if due <= now {
                    self.delayed.pop();
                    let msg = self.delayed_payloads.remove(&seq).expect("delayed payload");
                    if let Some(item) = self.absorb(src, msg) {
                        return Some(item);
                    }
                    continue;
                }
            }
            let mut wait_until = deadline;
            if let Some(Reverse((due, ..))) = self.delayed.peek() {
                wait_until = wait_until.min(*due);
            }
            let wait = wait_until.saturating_duration_since(now);
            match ep.events.recv_timeout(wait) {
                Ok(Event::Remote { src, msg, due }) => match due {
                    Some(d) if d > Instant::now() => {
                        self.seq += 1;
                        self.delayed.push(Reverse((d, self.seq, src, msg.tag)));
                        self.delayed_payloads.insert(self.seq, msg);
                    }
                    _ => {
                        if let Some(item) = self.absorb(src, msg) {
                            return Some(item);
                        }
                    }
                },
                Ok(Event::Wake) => return Some(Incoming::Wake),
                Ok(Event::Failed(e)) => return Some(Incoming::Failed(e)),
                Ok(Event::Down(s)) => return Some(Incoming::Down(s)),
                Err(RecvTimeoutError::Timeout) => {
                    if Instant::now() >= deadline {
                        return None;
                    }
                }
                Err(RecvTimeoutError::Disconnected) => {
                    return Some(Incoming::Down("event channel closed".into()));
                }
            }
        }
    }

    fn absorb(&mut self, src: RankId, msg: Message) -> Option<Incoming> {
        match msg.control_kind() {
            None => Some(Incoming::Data {
                src,
                tag: msg.tag,
                payload: msg.payload,
            }),
            Some((ControlKind::Fingerprint, epoch)) => {
                let fp = u64::from_le_bytes(msg.payload[..8].try_into().unwrap_or([0; 8]));
                self.fingerprints.insert((epoch, src), fp);
                Some(Incoming::Wake)
            }
            Some((ControlKind::Bye, epochs)) => {
                self.byes.insert(src, epochs);
                Some(Incoming::Wake)
            }
            Some((ControlKind::Abort, _)) => Some(Incoming::Abort {
                src,
                reason: String::from_utf8_lossy(&msg.payload).into_owned(),
            }),
            Some((ControlKind::Hello, _)) => Some(Incoming::Wake),
        }
    }

    pub fn stash(&mut self, src: RankId, tag: u64, payload: Vec<u8>) {
        self.mailbox.insert(tag, (src, payload));
    }

    pub fn take_stashed(&mut self, tag: u64) -> Option<(RankId, Vec<u8>)> {
        self.mailbox.remove(&tag)
    }

    pub fn fingerprint(&self, epoch: u64, src: RankId) -> Option<u64> {
        self.fingerprints.get(&(epoch, src)).copied()
    }

    pub fn bye(&self, src: RankId) -> Option<u64> {
        self.byes.get(&src).copied()
    }

    pub fn forget_epoch(&mut self, epoch: u64) {
        self.fingerprints.retain(|&(e, _), _| e != epoch);
    }
}
