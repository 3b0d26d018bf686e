//! Canonical binary encodings: node records and snapshot files.
//!
//! All integers are fixed-width big-endian, strings are a `u32` byte length
//! followed by UTF-8, ids are 16 raw bytes. Snapshots list node records
//! sorted by id, each prefixed with its `u32` length.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::oracle::SummaryText;
use crate::tree::{
    AgentId, ConceptNode, Entity, EntityId, NodeId, SemanticTree, SummaryRank, Timestamp,
    TreeConfig,
};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"SHMI";
pub const SNAPSHOT_VERSION: u8 = 1;

#[derive(Debug, Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
    pub fn raw(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    pub fn len_u32(&mut self, n: usize) {
        self.u32(u32::try_from(n).expect("length fits in u32"));
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.len_u32(b.len());
        self.raw(b);
    }
    pub fn str(&mut self, s: &str) {
        self.bytes(s.as_bytes());
    }
    pub fn node_id(&mut self, id: NodeId) {
        self.raw(&id.to_bytes());
    }
    pub fn ts(&mut self, t: Timestamp) {
        self.u64(t.counter);
        self.u64(t.agent);
    }
    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_bits(self.u64()?))
    }
    pub fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    pub fn string(&mut self) -> Result<String> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::corrupt("invalid UTF-8"))
    }
    pub fn id16(&mut self) -> Result<[u8; 16]> {
        Ok(self.take(16)?.try_into().expect("16 bytes"))
    }
    pub fn node_id(&mut self) -> Result<NodeId> {
        Ok(NodeId::from_bytes(self.id16()?))
    }
    pub fn ts(&mut self) -> Result<Timestamp> {
        Ok(Timestamp {
            counter: self.u64()?,
            agent: self.u64()?,
        })
    }
    pub fn count(&mut self, min_item: usize) -> Result<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_item) > self.remaining() {
            return Err(Error::corrupt("element count exceeds input"));
        }
        Ok(n)
    }
    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::corrupt(format!("{} trailing bytes", self.remaining())));
        }
        Ok(())
    }
}

fn write_entity(w: &mut Writer, e: &Entity) {
    w.raw(&e.id.to_bytes());
    w.str(e.concept.as_str());
    w.str(&e.explanation);
    w.ts(e.created_at);
}

fn read_entity(r: &mut Reader<'_>, max_words: usize) -> Result<Entity> {
    let id = EntityId::from_bytes(r.id16()?);
    let concept = SummaryText::new(r.string()?, max_words)
        .map_err(|e| Error::corrupt(format!("entity concept: {e}")))?;
    let explanation = r.string()?;
    let created_at = r.ts()?;
    Entity::new(id, concept, explanation, created_at)
        .map_err(|e| Error::corrupt(format!("entity: {e}")))
}

/// Canonical encoding of one node record.
pub fn encode_record(n: &ConceptNode) -> Vec<u8> {
    let mut w = Writer::new();
    w.node_id(n.id);
    w.str(n.summary.as_str());
    w.u32(n.summary_rank.depth);
    w.u64(n.summary_rank.usage);
    match n.parent {
        Some(p) => {
            w.u8(1);
            w.node_id(p);
        }
        None => w.u8(0),
    }
    w.ts(n.placed_at);
    w.len_u32(n.children.len());
    for c in &n.children {
        w.node_id(*c);
    }
    w.len_u32(n.entities.len());
    for e in n.entities.values() {
        let mut ew = Writer::new();
        write_entity(&mut ew, e);
        w.bytes(&ew.finish());
    }
    w.u32(n.depth);
    w.u64(n.usage_count);
    w.ts(n.last_modified);
    w.finish()
}

pub fn decode_record(bytes: &[u8], max_words: usize) -> Result<ConceptNode> {
    let mut r = Reader::new(bytes);
    let id = r.node_id()?;
    let summary = SummaryText::new(r.string()?, max_words)
        .map_err(|e| Error::corrupt(format!("summary: {e}")))?;
    let summary_rank = SummaryRank {
        depth: r.u32()?,
        usage: r.u64()?,
    };
    let parent = match r.u8()? {
        0 => None,
        1 => Some(r.node_id()?),
        f => return Err(Error::corrupt(format!("bad parent flag {f}"))),
    };
    let placed_at = r.ts()?;
    let mut children = std::collections::BTreeSet::new();
    let mut prev = None;
    for _ in 0..r.count(16)? {
        let c = r.node_id()?;
        if prev.is_some_and(|p| p >= c) {
            return Err(Error::corrupt("children not sorted"));
        }
        prev = Some(c);
        children.insert(c);
    }
    let mut entities = std::collections::BTreeMap::new();
    let mut prev = None;
    for _ in 0..r.count(4)? {
        let eb = r.bytes()?;
        let mut er = Reader::new(eb);
        let e = read_entity(&mut er, max_words)?;
        er.finish()?;
        if prev.is_some_and(|p| p >= e.id) {
            return Err(Error::corrupt("entities not sorted"));
        }
        prev = Some(e.id);
        entities.insert(e.id, e);
    }
    let node = ConceptNode {
        id,
        summary,
        summary_rank,
        parent,
        placed_at,
        children,
        entities,
        depth: r.u32()?,
        usage_count: r.u64()?,
        last_modified: r.ts()?,
    };
    r.finish()?;
    Ok(node)
}

/// Length-prefixed records of every node, in id order. Two trees with the
/// same node state produce identical bytes regardless of owner or clock.
pub fn encode_nodes(tree: &SemanticTree) -> Vec<u8> {
    let mut w = Writer::new();
    w.len_u32(tree.nodes().len());
    for n in tree.nodes().values() {
        w.bytes(&encode_record(n));
    }
    w.finish()
}

fn write_config(w: &mut Writer, c: &TreeConfig) {
    w.len_u32(c.max_roots);
    w.len_u32(c.branching);
    w.len_u32(c.levels);
    w.f64(c.delta);
    w.f64(c.gamma);
    w.len_u32(c.max_summary_words);
}

fn read_config(r: &mut Reader<'_>) -> Result<TreeConfig> {
    let c = TreeConfig {
        max_roots: r.u32()? as usize,
        branching: r.u32()? as usize,
        levels: r.u32()? as usize,
        delta: r.f64()?,
        gamma: r.f64()?,
        max_summary_words: r.u32()? as usize,
    };
    c.validate()
        .map_err(|e| Error::corrupt(format!("config: {e}")))?;
    Ok(c)
}

/// Full snapshot: magic, version, config, owner, clock, node records.
pub fn encode_snapshot(tree: &SemanticTree) -> Vec<u8> {
    let mut w = Writer::new();
    w.raw(&SNAPSHOT_MAGIC);
    w.u8(SNAPSHOT_VERSION);
    write_config(&mut w, tree.config());
    w.u64(tree.agent().0);
    w.u64(tree.clock());
    w.raw(&encode_nodes(tree));
    w.finish()
}

pub fn decode_snapshot(bytes: &[u8]) -> Result<SemanticTree> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != SNAPSHOT_MAGIC {
        return Err(Error::corrupt("bad snapshot magic"));
    }
    let version = r.u8()?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::corrupt(format!("unsupported snapshot version {version}")));
    }
    let config = read_config(&mut r)?;
    let agent = AgentId(r.u64()?);
    let clock = r.u64()?;
    let nodes = decode_node_list(&mut r, config.max_summary_words)?;
    r.finish()?;
    let tree = SemanticTree::from_parts(config, agent, clock, nodes)?;
    let mut check = tree.clone();
    check
        .normalize()
        .map_err(|e| Error::corrupt(format!("structure: {e}")))?;
    if check.nodes() != tree.nodes() {
        return Err(Error::corrupt("child lists or depths inconsistent with parents"));
    }
    Ok(tree)
}

pub(crate) fn decode_node_list(r: &mut Reader<'_>, max_words: usize) -> Result<Vec<ConceptNode>> {
    let count = r.count(4)?;
    let mut nodes = Vec::with_capacity(count);
    for _ in 0..count {
        let n = decode_record(r.bytes()?, max_words)?;
        if nodes.last().is_some_and(|p: &ConceptNode| p.id >= n.id) {
            return Err(Error::corrupt("node records not sorted by id"));
        }
        nodes.push(n);
    }
    Ok(nodes)
}

/// Writes a snapshot via a temporary file and rename.
pub fn write_snapshot(path: &Path, tree: &SemanticTree) -> Result<()> {
    let bytes = encode_snapshot(tree);
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_snapshot(path: &Path) -> Result<SemanticTree> {
    decode_snapshot(&fs::read(path)?)
}
