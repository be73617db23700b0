use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, Sender};

use super::{Endpoint, Event, Link, Message};
use crate::error::{Error, Result};
use crate::RankId;

struct SimLink {
    rank: RankId,
    peers: Vec<Sender<Event>>,
    latency: Duration,
}

impl Link for SimLink {
    fn send(&self, dest: RankId, msg: Message) -> Result<()> {
        let tx = self.peers.get(dest).ok_or(Error::BadRank {
            rank: dest,
            ranks: self.peers.len(),
        })?;
        // Latency applies to payload transfers only; control traffic is
        // delivered immediately.
        let due = (msg.is_data() && !self.latency.is_zero()).then(|| Instant::now() + self.latency);
        tx.send(Event::Remote {
            src: self.rank,
            msg,
            due,
        })
        .map_err(|_| Error::TransportDown(format!("rank {dest} has shut down")))
    }
}

/// `ranks` in-process endpoints connected by unbounded channels. Every
/// payload message becomes visible to its receiver `latency` after it was
/// sent, independently of other messages in flight.
pub fn simulated_fabric(ranks: usize, latency: Duration) -> Vec<Endpoint> {
    let channels: Vec<_> = (0..ranks).map(|_| unbounded::<Event>()).collect();
    let senders: Vec<Sender<Event>> = channels.iter().map(|(tx, _)| tx.clone()).collect();
    channels
        .into_iter()
        .enumerate()
        .map(|(rank, (tx, rx))| Endpoint {
            rank,
            ranks,
            link: Box::new(SimLink {
                rank,
                peers: senders.clone(),
                latency,
            }),
            events: rx,
            local: tx,
        })
        .collect()
}
