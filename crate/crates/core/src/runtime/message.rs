//! Messages exchanged between nodes and their byte encodings.
//!
//! All integers are little-endian. Thresholds travel as `f32` rounded toward
//! `+inf`, so a decoded threshold is never tighter than the one sent.
//! Partial distances travel as `f64` and arrive bit-exact.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes in a frame after the length prefix and before the payload.
pub const FRAME_HEADER_BYTES: usize = 1 + 4 + 4 + 8;

/// Frames above this size are rejected as corrupt.
pub const MAX_FRAME_BYTES: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    QueryChunk,
    PartialHandoff,
    ThresholdUpdate,
    TopKPartial,
    Control,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::QueryChunk,
        MessageKind::PartialHandoff,
        MessageKind::ThresholdUpdate,
        MessageKind::TopKPartial,
        MessageKind::Control,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        Self::ALL
            .get(tag as usize)
            .copied()
            .ok_or_else(|| Error::Protocol(format!("unknown message kind {tag}")))
    }
}

/// A routed message; `payload` is the encoded [`Payload`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: MessageKind,
    pub src: u32,
    pub dst: u32,
    pub seq: u64,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(src: u32, dst: u32, seq: u64, payload: &Payload) -> Self {
        Self {
            kind: payload.kind(),
            src,
            dst,
            seq,
            payload: payload.encode(),
        }
    }

    pub fn decode(&self) -> Result<Payload> {
        let p = Payload::decode(self.kind, &self.payload)?;
        Ok(p)
    }

    /// Length prefix, header, payload.
    pub fn to_frame(&self) -> Vec<u8> {
        let len = (FRAME_HEADER_BYTES + self.payload.len()) as u32;
        let mut out = Vec::with_capacity(4 + len as usize);
        out.extend_from_slice(&len.to_le_bytes());
        out.push(self.kind.tag());
        out.extend_from_slice(&self.src.to_le_bytes());
        out.extend_from_slice(&self.dst.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn write_frame<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&self.to_frame())?;
        Ok(())
    }

    /// Reads one frame; `Ok(None)` on a clean end of stream.
    pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Self>> {
        let mut len = [0u8; 4];
        match r.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        let len = u32::from_le_bytes(len) as usize;
        if !(FRAME_HEADER_BYTES..=MAX_FRAME_BYTES).contains(&len) {
            return Err(Error::Protocol(format!("bad frame length {len}")));
        }
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let mut c = Cursor::new(&buf);
        let kind = MessageKind::from_tag(c.u8()?)?;
        let src = c.u32()?;
        let dst = c.u32()?;
        let seq = c.u64()?;
        Ok(Some(Self {
            kind,
            src,
            dst,
            seq,
            payload: buf[FRAME_HEADER_BYTES..].to_vec(),
        }))
    }
}

/// Work done by one stage of a wave: the node, floats computed, candidates
/// evaluated and candidates kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageWork {
    pub node: u16,
    pub floats: u32,
    pub computed: u32,
    pub kept: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Control {
    /// Start wave `wave` of a unit; sent by the last stage to the first.
    NextWave {
        query: u32,
        shard: u16,
        wave: u16,
        tau_sq: f64,
    },
    Shutdown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    QueryChunk {
        query: u32,
        shard: u16,
        order_index: u8,
        order: Vec<u8>,
        tau_sq: f64,
        probes: Vec<u32>,
        values: Vec<f32>,
    },
    PartialHandoff {
        query: u32,
        shard: u16,
        wave: u16,
        /// Position in the visit order of the receiving node.
        stage: u8,
        tau_sq: f64,
        work: Vec<StageWork>,
        /// `(candidate id, running partial)`.
        candidates: Vec<(u64, f64)>,
    },
    ThresholdUpdate {
        query: u32,
        tau_sq: f64,
    },
    TopKPartial {
        query: u32,
        shard: u16,
        wave: u16,
        last: bool,
        work: Vec<StageWork>,
        entries: Vec<(u64, f64)>,
    },
    Control(Control),
}

/// Smallest `f32` not below `x`.
pub fn f32_ceil(x: f64) -> f32 {
    let f = x as f32;
    if (f as f64) < x {
        f.next_up()
    } else {
        f
    }
}

fn put_tau(out: &mut Vec<u8>, tau_sq: f64) {
    out.extend_from_slice(&f32_ceil(tau_sq).to_le_bytes());
}

fn put_work(out: &mut Vec<u8>, work: &[StageWork]) {
    out.push(work.len() as u8);
    for w in work {
        out.extend_from_slice(&w.node.to_le_bytes());
        out.extend_from_slice(&w.floats.to_le_bytes());
        out.extend_from_slice(&w.computed.to_le_bytes());
        out.extend_from_slice(&w.kept.to_le_bytes());
    }
}

fn put_pairs(out: &mut Vec<u8>, pairs: &[(u64, f64)]) {
    out.extend_from_slice(&(pairs.len() as u32).to_le_bytes());
    for &(id, d) in pairs {
        out.extend_from_slice(&id.to_le_bytes());
        out.extend_from_slice(&d.to_le_bytes());
    }
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::QueryChunk { .. } => MessageKind::QueryChunk,
            Payload::PartialHandoff { .. } => MessageKind::PartialHandoff,
            Payload::ThresholdUpdate { .. } => MessageKind::ThresholdUpdate,
            Payload::TopKPartial { .. } => MessageKind::TopKPartial,
            Payload::Control(_) => MessageKind::Control,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Payload::QueryChunk {
                query,
                shard,
                order_index,
                order,
                tau_sq,
                probes,
                values,
            } => {
                out.extend_from_slice(&query.to_le_bytes());
                out.extend_from_slice(&shard.to_le_bytes());
                out.push(*order_index);
                out.push(order.len() as u8);
                out.extend_from_slice(order);
                put_tau(&mut out, *tau_sq);
                out.extend_from_slice(&(probes.len() as u16).to_le_bytes());
                for p in probes {
                    out.extend_from_slice(&p.to_le_bytes());
                }
                out.extend_from_slice(&(values.len() as u16).to_le_bytes());
                for v in values {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
            Payload::PartialHandoff {
                query,
                shard,
                wave,
                stage,
                tau_sq,
                work,
                candidates,
            } => {
                out.extend_from_slice(&query.to_le_bytes());
                out.extend_from_slice(&shard.to_le_bytes());
                out.extend_from_slice(&wave.to_le_bytes());
                out.push(*stage);
                put_tau(&mut out, *tau_sq);
                put_work(&mut out, work);
                put_pairs(&mut out, candidates);
            }
            Payload::ThresholdUpdate { query, tau_sq } => {
                out.extend_from_slice(&query.to_le_bytes());
                put_tau(&mut out, *tau_sq);
            }
            Payload::TopKPartial {
                query,
                shard,
                wave,
                last,
                work,
                entries,
            } => {
                out.extend_from_slice(&query.to_le_bytes());
                out.extend_from_slice(&shard.to_le_bytes());
                out.extend_from_slice(&wave.to_le_bytes());
                out.push(u8::from(*last));
                put_work(&mut out, work);
                put_pairs(&mut out, entries);
            }
            Payload::Control(Control::NextWave {
                query,
                shard,
                wave,
                tau_sq,
            }) => {
                out.push(0);
                out.extend_from_slice(&query.to_le_bytes());
                out.extend_from_slice(&shard.to_le_bytes());
                out.extend_from_slice(&wave.to_le_bytes());
                put_tau(&mut out, *tau_sq);
            }
            Payload::Control(Control::Shutdown) => out.push(1),
        }
        out
    }

    pub fn decode(kind: MessageKind, bytes: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(bytes);
        let p = match kind {
            MessageKind::QueryChunk => {
                let query = c.u32()?;
                let shard = c.u16()?;
                let order_index = c.u8()?;
                let n = c.u8()? as usize;
                let order = c.take(n)?.to_vec();
                let tau_sq = c.tau()?;
                let np = c.u16()? as usize;
                let probes = (0..np).map(|_| c.u32()).collect::<Result<_>>()?;
                let nv = c.u16()? as usize;
                let values = (0..nv).map(|_| c.f32()).collect::<Result<_>>()?;
                Payload::QueryChunk {
                    query,
                    shard,
                    order_index,
                    order,
                    tau_sq,
                    probes,
                    values,
                }
            }
            MessageKind::PartialHandoff => Payload::PartialHandoff {
                query: c.u32()?,
                shard: c.u16()?,
                wave: c.u16()?,
                stage: c.u8()?,
                tau_sq: c.tau()?,
                work: c.work()?,
                candidates: c.pairs()?,
            },
            MessageKind::ThresholdUpdate => Payload::ThresholdUpdate {
                query: c.u32()?,
                tau_sq: c.tau()?,
            },
            MessageKind::TopKPartial => Payload::TopKPartial {
                query: c.u32()?,
                shard: c.u16()?,
                wave: c.u16()?,
                last: c.u8()? != 0,
                work: c.work()?,
                entries: c.pairs()?,
            },
            MessageKind::Control => match c.u8()? {
                0 => Payload::Control(Control::NextWave {
                    query: c.u32()?,
                    shard: c.u16()?,
                    wave: c.u16()?,
                    tau_sq: c.tau()?,
                }),
                1 => Payload::Control(Control::Shutdown),
                t => return Err(Error::Protocol(format!("unknown control tag {t}"))),
            },
        };
        if c.remaining() != 0 {
            return Err(Error::Protocol(format!(
                "{} trailing bytes in {kind:?}",
                c.remaining()
            )));
        }
        Ok(p)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Protocol("truncated payload".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn tau(&mut self) -> Result<f64> {
        Ok(self.f32()? as f64)
    }

    fn work(&mut self) -> Result<Vec<StageWork>> {
        let n = self.u8()?;
        (0..n)
            .map(|_| {
                Ok(StageWork {
                    node: self.u16()?,
                    floats: self.u32()?,
                    computed: self.u32()?,
                    kept: self.u32()?,
                })
            })
            .collect()
    }

    fn pairs(&mut self) -> Result<Vec<(u64, f64)>> {
        let n = self.u32()? as usize;
        if n > self.remaining() / 16 {
            return Err(Error::Protocol("truncated payload".into()));
        }
        (0..n).map(|_| Ok((self.u64()?, self.f64()?))).collect()
    }
}
