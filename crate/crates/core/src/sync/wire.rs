//! Binary message frames exchanged during a sync session.
//!
//! A frame is `[version u8][kind u8][payload length u32][payload]`, all
//! integers big-endian.

use crate::codec::{decode_record, encode_record, Reader, Writer};
use crate::error::{Error, Result};
use crate::sync::bloom::BloomSummary;
use crate::sync::merkle::{Digest, DigestEntry, WireEntry};
use crate::tree::{ConceptNode, NodeId};

pub const WIRE_VERSION: u8 = 1;
pub const FRAME_HEADER_LEN: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum FrameKind {
    RootHash = 1,
    DiffRequest = 2,
    Bloom = 3,
    Delta = 4,
    Done = 5,
}

impl FrameKind {
    fn from_u8(b: u8) -> Result<Self> {
        Ok(match b {
            1 => Self::RootHash,
            2 => Self::DiffRequest,
            3 => Self::Bloom,
            4 => Self::Delta,
            5 => Self::Done,
            _ => return Err(Error::corrupt(format!("unknown frame kind {b}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameKind,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.push(WIRE_VERSION);
        out.push(self.kind as u8);
        out.extend_from_slice(&(self.payload.len() as u32).to_be_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Decodes exactly one frame occupying all of `bytes`.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let version = r.u8()?;
        if version != WIRE_VERSION {
            return Err(Error::corrupt(format!("unsupported wire version {version}")));
        }
        let kind = FrameKind::from_u8(r.u8()?)?;
        let payload = r.bytes()?.to_vec();
        r.finish()?;
        Ok(Self { kind, payload })
    }

    fn expect(&self, kind: FrameKind) -> Result<Reader<'_>> {
        if self.kind != kind {
            return Err(Error::corrupt(format!(
                "expected {kind:?} frame, got {:?}",
                self.kind
            )));
        }
        Ok(Reader::new(&self.payload))
    }
}

pub fn root_hash(digest: &Digest) -> Frame {
    Frame {
        kind: FrameKind::RootHash,
        payload: digest.to_vec(),
    }
}

pub fn parse_root_hash(f: &Frame) -> Result<Digest> {
    let mut r = f.expect(FrameKind::RootHash)?;
    let d: Digest = r.take(32)?.try_into().expect("32 bytes");
    r.finish()?;
    Ok(d)
}

/// One level of divergence discovery: `(id, subtree digest, record digest)`.
pub fn diff_request(entries: &[WireEntry]) -> Frame {
    let mut w = Writer::new();
    w.len_u32(entries.len());
    for e in entries {
        w.node_id(e.id);
        w.raw(&e.entry.subtree);
        w.raw(&e.entry.record);
    }
    Frame {
        kind: FrameKind::DiffRequest,
        payload: w.finish(),
    }
}

pub fn parse_diff_request(f: &Frame) -> Result<Vec<WireEntry>> {
    let mut r = f.expect(FrameKind::DiffRequest)?;
    let n = r.count(80)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let id = r.node_id()?;
        let subtree: Digest = r.take(32)?.try_into().expect("32 bytes");
        let record: Digest = r.take(32)?.try_into().expect("32 bytes");
        out.push(WireEntry {
            id,
            entry: DigestEntry { record, subtree },
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn bloom(root: NodeId, b: &BloomSummary) -> Frame {
    let mut w = Writer::new();
    w.node_id(root);
    w.u64(b.salt());
    w.u64(b.m());
    w.u32(b.k());
    w.u64(b.n());
    w.raw(b.bits());
    Frame {
        kind: FrameKind::Bloom,
        payload: w.finish(),
    }
}

pub fn parse_bloom(f: &Frame) -> Result<(NodeId, BloomSummary)> {
    let mut r = f.expect(FrameKind::Bloom)?;
    let root = r.node_id()?;
    let salt = r.u64()?;
    let m = r.u64()?;
    let k = r.u32()?;
    let n = r.u64()?;
    if m.div_ceil(8) != r.remaining() as u64 {
        return Err(Error::corrupt("bloom bits length mismatch"));
    }
    let bits = r.take(r.remaining())?.to_vec();
    Ok((root, BloomSummary::from_parts(bits, m, k, n, salt)?))
}

pub fn delta(root: NodeId, records: &[&ConceptNode]) -> Frame {
    let mut w = Writer::new();
    w.node_id(root);
    w.len_u32(records.len());
    for n in records {
        w.bytes(&encode_record(n));
    }
    Frame {
        kind: FrameKind::Delta,
        payload: w.finish(),
    }
}

pub fn parse_delta(f: &Frame, max_words: usize) -> Result<(NodeId, Vec<ConceptNode>)> {
    let mut r = f.expect(FrameKind::Delta)?;
    let root = r.node_id()?;
    let n = r.count(4)?;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(decode_record(r.bytes()?, max_words)?);
    }
    r.finish()?;
    Ok((root, out))
}

pub fn done() -> Frame {
    Frame {
        kind: FrameKind::Done,
        payload: Vec::new(),
    }
}
