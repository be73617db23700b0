use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::Mutex;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam::channel::{unbounded, Sender};

use super::wire::{read_frame, write_frame, ControlKind, Message};
use super::{Endpoint, Event, Link};
use crate::error::{Error, Result};
use crate::RankId;

pub struct SocketConfig {
    pub rank: RankId,
    /// `host:port` of every rank, indexed by rank.
    pub peers: Vec<String>,
    /// Already-bound listener for this rank's address, if the caller
    /// reserved the port itself.
    pub listener: Option<TcpListener>,
    pub connect_timeout: Duration,
}

impl SocketConfig {
    pub fn new(rank: RankId, peers: Vec<String>) -> Self {
        SocketConfig {
            rank,
            peers,
            listener: None,
            connect_timeout: Duration::from_secs(30),
        }
    }
}

struct SocketLink {
    writers: Vec<Option<Sender<Option<Message>>>>,
    threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Link for SocketLink {
    fn send(&self, dest: RankId, msg: Message) -> Result<()> {
        let tx = self
            .writers
            .get(dest)
            .and_then(|w| w.as_ref())
            .ok_or(Error::BadRank {
                rank: dest,
                ranks: self.writers.len(),
            })?;
        tx.send(Some(msg))
            .map_err(|_| Error::TransportDown(format!("writer to rank {dest} has stopped")))
    }

    fn shutdown(&self) {
        for tx in self.writers.iter().flatten() {
            let _ = tx.send(None);
        }
        let threads = std::mem::take(&mut *self.threads.lock().unwrap());
        for t in threads {
            let _ = t.join();
        }
    }
}

/// Builds a full TCP mesh from the peer address list. Rank `i` listens on
/// `peers[i]`, dials every lower rank and accepts every higher one; each
/// connection starts with a hello frame naming the dialing rank.
pub fn connect_mesh(cfg: SocketConfig) -> Result<Endpoint> {
    let ranks = cfg.peers.len();
    if cfg.rank >= ranks {
        return Err(Error::BadRank {
            rank: cfg.rank,
            ranks,
        });
    }
    let listener = match cfg.listener {
        Some(l) => l,
        None => TcpListener::bind(&cfg.peers[cfg.rank])?,
    };
    let mut streams: Vec<Option<TcpStream>> = (0..ranks).map(|_| None).collect();

    for (peer, addr) in cfg.peers.iter().enumerate().take(cfg.rank) {
        let deadline = Instant::now() + cfg.connect_timeout;
        let mut stream = loop {
            match TcpStream::connect(addr) {
                Ok(s) => break s,
                Err(_) if Instant::now() < deadline => {
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => {
                    return Err(Error::TransportDown(format!("cannot reach rank {peer} at {addr}: {e}")));
                }
            }
        };
        write_frame(&mut stream, &Message::control(ControlKind::Hello, cfg.rank as u64, vec![]))?;
        streams[peer] = Some(stream);
    }
    for _ in cfg.rank + 1..ranks {
        let (mut stream, _) = listener.accept()?;
        let hello = read_frame(&mut stream)?
            .ok_or_else(|| Error::TransportDown("peer closed during handshake".into()))?;
        match hello.control_kind() {
            Some((ControlKind::Hello, r)) if (r as usize) < ranks && streams[r as usize].is_none() => {
                streams[r as usize] = Some(stream);
            }
            _ => return Err(Error::TransportDown("bad handshake".into())),
        }
    }

    let (events_tx, events_rx) = unbounded::<Event>();
    let mut writers = Vec::with_capacity(ranks);
    let mut threads = Vec::new();
    for (peer, stream) in streams.into_iter().enumerate() {
        let Some(stream) = stream else {
            writers.push(None);
            continue;
        };
        stream.set_nodelay(true)?;
        let read_half = stream.try_clone()?;
        let (tx, rx) = unbounded::<Option<Message>>();
        writers.push(Some(tx));

        let down_tx = events_tx.clone();
        threads.push(thread::spawn(move || {
            let mut w = BufWriter::new(&stream);
            let fail = |e: std::io::Error| {
                let _ = down_tx.send(Event::Down(format!("write to rank {peer}: {e}")));
            };
            while let Ok(Some(msg)) = rx.recv() {
                if let Err(e) = write_frame(&mut w, &msg) {
                    fail(e);
                    return;
                }
                if rx.is_empty() {
                    if let Err(e) = w.flush() {
                        fail(e);
                        return;
                    }
                }
            }
            let _ = w.flush();
            drop(w);
            let _ = stream.shutdown(Shutdown::Write);
        }));

        let ev_tx = events_tx.clone();
        thread::spawn(move || {
            let mut r = BufReader::new(read_half);
            let mut said_bye = false;
            loop {
                match read_frame(&mut r) {
                    Ok(Some(msg)) => {
                        if let Some((ControlKind::Bye, _)) = msg.control_kind() {
                            said_bye = true;
                        }
                        if ev_tx
                            .send(Event::Remote {
                                src: peer,
                                msg,
                                due: None,
                            })
                            .is_err()
                        {
                            return;
                        }
                    }
                    Ok(None) => {
                        if !said_bye {
                            let _ = ev_tx.send(Event::Down(format!("rank {peer} closed its connection")));
                        }
                        return;
                    }
                    Err(e) => {
                        if !said_bye {
                            let _ = ev_tx.send(Event::Down(format!("read from rank {peer}: {e}")));
                        }
                        return;
                    }
                }
            }
        });
    }

    Ok(Endpoint {
        rank: cfg.rank,
        ranks,
        link: Box::new(SocketLink {
            writers,
            threads: Mutex::new(threads),
        }),
        events: events_rx,
        local: events_tx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{Incoming, Progress};

    #[test]
    fn two_rank_mesh_exchanges_frames() {
        let l0 = TcpListener::bind("127.0.0.1:0").unwrap();
        let l1 = TcpListener::bind("127.0.0.1:0").unwrap();
        let peers = vec![l0.local_addr().unwrap().to_string(), l1.local_addr().unwrap().to_string()];
        let mut c0 = SocketConfig::new(0, peers.clone());
        c0.listener = Some(l0);
        let mut c1 = SocketConfig::new(1, peers);
        c1.listener = Some(l1);
        let t = thread::spawn(move || connect_mesh(c1).unwrap());
        let e0 = connect_mesh(c0).unwrap();
        let e1 = t.join().unwrap();

        e1.link.send(0, Message { tag: 11, payload: vec![1, 2, 3] }).unwrap();
        let mut p = Progress::default();
        match p.poll(&e0, Duration::from_secs(5)) {
            Some(Incoming::Data { src: 1, tag: 11, payload }) => assert_eq!(payload, vec![1, 2, 3]),
            _ => panic!("expected frame from rank 1"),
        }

        // Closing without a bye is reported as a lost connection.
        e1.link.shutdown();
        match p.poll(&e0, Duration::from_secs(5)) {
            Some(Incoming::Down(_)) => {}
            _ => panic!("expected transport down"),
        }
    }
}
