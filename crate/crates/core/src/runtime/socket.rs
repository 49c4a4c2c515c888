//! Real transport: one thread per node, one TCP connection per node pair on
//! the loopback interface, length-prefixed frames.
//!
//! The worker and reducer state machines are the same ones the simulator
//! drives, so results match the simulator for the same plan; only timing
//! differs.

use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::pipeline::{EngineConfig, PruneStats};
use crate::router::VisitOrder;
use crate::topk::TopKResult;
use crate::vector::VectorBatch;

use super::message::{Control, Message, Payload};
use super::node::WorkerState;
use super::reducer::{ReducerOutcome, ReducerState};
use super::sim::{prepare, worker_params, TrafficLedger};
use super::Topology;

#[derive(Debug, Clone)]
pub struct SocketOutcome {
    pub results: Vec<TopKResult>,
    pub ledger: TrafficLedger,
    pub stats: PruneStats,
    pub node_floats: Vec<u64>,
    pub orders: Vec<VisitOrder>,
    /// Wall-clock time from the first dispatch to the last result.
    pub wall: Duration,
}

impl SocketOutcome {
    /// Queries per wall-clock second.
    pub fn wall_qps(&self) -> f64 {
        self.results.len() as f64 / self.wall.as_secs_f64().max(1e-9)
    }
}

/// Outgoing half of every connection a node holds; frames are written in
/// call order, so each channel stays FIFO.
struct Links {
    peers: Vec<Option<TcpStream>>,
    ledger: TrafficLedger,
}

impl Links {
    fn send(&mut self, msg: &Message) -> Result<()> {
        let stream = self
            .peers
            .get_mut(msg.dst as usize)
            .and_then(Option::as_mut)
            .ok_or(Error::UnknownNode(msg.dst))?;
        self.ledger
            .record(msg.src, msg.dst, msg.kind, msg.payload.len());
        let mut w = BufWriter::new(stream);
        msg.write_frame(&mut w)?;
        w.flush()?;
        Ok(())
    }

    fn close(&mut self) {
        for s in self.peers.iter().flatten() {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

/// Connects every pair `i < j` once; returns each node's stream per peer.
fn connect_mesh(participants: usize) -> Result<Vec<Vec<Option<TcpStream>>>> {
    let listeners: Vec<TcpListener> = (0..participants)
        .map(|_| TcpListener::bind("127.0.0.1:0"))
        .collect::<std::io::Result<_>>()?;
    let addrs: Vec<_> = listeners
        .iter()
        .map(TcpListener::local_addr)
        .collect::<std::io::Result<_>>()?;
    let mut streams: Vec<Vec<Option<TcpStream>>> = (0..participants)
        .map(|_| (0..participants).map(|_| None).collect())
        .collect();
    for j in 0..participants {
        for (i, row) in streams.iter_mut().enumerate().take(j) {
            let mut s = TcpStream::connect(addrs[j])?;
            s.write_all(&(i as u32).to_le_bytes())?;
            row[j] = Some(s);
        }
        for _ in 0..j {
            let (mut s, _) = listeners[j].accept()?;
            let mut hello = [0u8; 4];
            s.read_exact(&mut hello)?;
            let i = u32::from_le_bytes(hello) as usize;
            if i >= j || streams[j][i].is_some() {
                return Err(Error::Protocol(format!("unexpected hello from {i} at {j}")));
            }
            streams[j][i] = Some(s);
        }
    }
    for s in streams.iter().flatten().flatten() {
        s.set_nodelay(true)?;
    }
    Ok(streams)
}

/// Spawns one reader per connection feeding the node's inbox.
fn spawn_readers<'scope>(
    scope: &'scope thread::Scope<'scope, '_>,
    peers: &[Option<TcpStream>],
    inbox: &mpsc::Sender<Result<Message>>,
) -> Result<()> {
    for s in peers.iter().flatten() {
        let mut r = BufReader::new(s.try_clone()?);
        let tx = inbox.clone();
        scope.spawn(move || loop {
            match Message::read_frame(&mut r) {
                Ok(Some(m)) => {
                    if tx.send(Ok(m)).is_err() {
                        break;
                    }
                }
                Ok(None) => break,
                Err(e) => {
                    let _ = tx.send(Err(e));
                    break;
                }
            }
        });
    }
    Ok(())
}

/// A silent peer for this long means the run is stuck.
const RECV_TIMEOUT: Duration = Duration::from_secs(120);

fn recv(rx: &mpsc::Receiver<Result<Message>>) -> Result<Message> {
    rx.recv_timeout(RECV_TIMEOUT)
        .map_err(|e| Error::Protocol(format!("no message from peers: {e}")))?
}

/// Runs `queries` on a loopback TCP cluster.
pub fn socket_run(
    topology: &Topology<'_>,
    queries: &VectorBatch,
    config: &EngineConfig,
    eager_threshold: bool,
) -> Result<SocketOutcome> {
    let plan = topology.plan;
    let (probes, states) = prepare(topology, queries, config)?;
    let mut reducer = ReducerState::new(plan, queries, config, &probes, states, eager_threshold)?;
    let params = worker_params(topology, config);
    let n = plan.node_count();
    let mesh = connect_mesh(n + 1)?;

    thread::scope(|scope| -> Result<SocketOutcome> {
        let mut handles = Vec::new();
        let mut reducer_io = None;
        for (id, peers) in mesh.into_iter().enumerate() {
            let (tx, rx) = mpsc::channel();
            spawn_readers(scope, &peers, &tx)?;
            drop(tx);
            let links = Links {
                peers,
                ledger: TrafficLedger::default(),
            };
            if id == n {
                reducer_io = Some((links, rx));
                continue;
            }
            let data = &topology.nodes[id];
            handles.push(scope.spawn(move || -> Result<TrafficLedger> {
                let mut links = links;
                let mut worker = WorkerState::new(data, plan, params);
                let res = (|| loop {
                    let msg = recv(&rx)?;
                    let step = worker.step(&msg)?;
                    for m in &step.out {
                        links.send(m)?;
                    }
                    if step.shutdown {
                        return Ok(());
                    }
                })();
                links.close();
                res.map(|()| links.ledger)
            }));
        }

        let (mut links, rx) = reducer_io.expect("reducer links");
        let started = Instant::now();
        let run = (|| -> Result<Duration> {
            for m in reducer.start()? {
                links.send(&m)?;
            }
            let mut finished_at = None;
            while !reducer.is_finished() {
                let msg = recv(&rx)?;
                for m in reducer.step(&msg)? {
                    links.send(&m)?;
                }
                if reducer.is_finished() {
                    finished_at = Some(started.elapsed());
                }
            }
            Ok(finished_at.unwrap_or_else(|| started.elapsed()))
        })();
        if run.is_err() {
            // Release workers still waiting for work.
            for node in 0..n as u32 {
                let stop = Message::new(
                    n as u32,
                    node,
                    u64::MAX,
                    &Payload::Control(Control::Shutdown),
                );
                let _ = links.send(&stop);
            }
        }
        links.close();

        let mut ledger = links.ledger;
        let mut first_err = run.as_ref().err().map(|e| Error::Protocol(e.to_string()));
        for h in handles {
            match h.join().expect("worker thread panicked") {
                Ok(l) => ledger.merge(&l),
                Err(e) => {
                    first_err.get_or_insert(e);
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        let wall = run?;
        let ReducerOutcome {
            results,
            stats,
            node_floats,
            orders,
        } = reducer.into_outcome();
        Ok(SocketOutcome {
            results,
            ledger,
            stats,
            node_floats,
            orders,
            wall,
        })
    })
}
