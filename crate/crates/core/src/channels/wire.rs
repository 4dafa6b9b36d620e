//! Canonical binary encoding of channel packets.
//!
//! Layout: `type:u8 | body_len:u32 | body`. Integers are little-endian,
//! optional fields are a presence byte followed by the value, lists are a
//! `u16` count followed by the elements. Decoding rejects trailing bytes.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::controller::Tag;
use crate::dataplane::{Command, CommandBatch, QueryReply, Rule};
use crate::topology::NodeId;

/// A token-channel packet: a batch going out, or the acknowledgement coming
/// back (carrying the query reply when the batch was well formed).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Request { bit: bool, batch: CommandBatch },
    Ack { bit: bool, reply: Option<QueryReply> },
}

impl Message {
    pub fn bit(&self) -> bool {
        match self {
            Message::Request { bit, .. } | Message::Ack { bit, .. } => *bit,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum WireError {
    #[error("truncated packet")]
    Truncated,
    #[error("unknown tag byte {0}")]
    BadTag(u8),
    #[error("length field does not match body")]
    Length,
}

const REQUEST: u8 = 1;
const ACK: u8 = 2;

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: usize) {
        self.0.extend_from_slice(&(v.min(u16::MAX as usize) as u16).to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn node(&mut self, n: NodeId) {
        self.u32(n.0);
    }
    fn opt_node(&mut self, n: Option<NodeId>) {
        match n {
            Some(n) => {
                self.u8(1);
                self.node(n);
            }
            None => self.u8(0),
        }
    }
    fn tag(&mut self, t: Tag) {
        self.node(t.owner);
        self.u64(t.epoch);
    }
    fn nodes(&mut self, s: &BTreeSet<NodeId>) {
        self.u16(s.len());
        for &n in s.iter().take(u16::MAX as usize) {
            self.node(n);
        }
    }
    fn rule(&mut self, r: &Rule) {
        self.node(r.creator);
        self.node(r.switch);
        self.opt_node(r.src);
        self.opt_node(r.dest);
        self.u8(r.priority);
        self.opt_node(r.fwd);
        self.tag(r.tag);
        self.u64(r.stamp);
    }
    fn rules(&mut self, rs: &[Rule]) {
        self.u16(rs.len());
        for r in rs.iter().take(u16::MAX as usize) {
            self.rule(r);
        }
    }
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], WireError> {
        if self.0.len() < n {
            return Err(WireError::Truncated);
        }
        let (a, b) = self.0.split_at(n);
        self.0 = b;
        Ok(a)
    }
    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<usize, WireError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()) as usize)
    }
    fn u32(&mut self) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, WireError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn node(&mut self) -> Result<NodeId, WireError> {
        Ok(NodeId(self.u32()?))
    }
    fn flag(&mut self) -> Result<bool, WireError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(WireError::BadTag(b)),
        }
    }
    fn opt_node(&mut self) -> Result<Option<NodeId>, WireError> {
        Ok(if self.flag()? { Some(self.node()?) } else { None })
    }
    fn tag(&mut self) -> Result<Tag, WireError> {
        Ok(Tag { owner: self.node()?, epoch: self.u64()? })
    }
    fn nodes(&mut self) -> Result<BTreeSet<NodeId>, WireError> {
        let n = self.u16()?;
        (0..n).map(|_| self.node()).collect()
    }
    fn rule(&mut self) -> Result<Rule, WireError> {
        Ok(Rule {
            creator: self.node()?,
            switch: self.node()?,
            src: self.opt_node()?,
            dest: self.opt_node()?,
            priority: self.u8()?,
            fwd: self.opt_node()?,
            tag: self.tag()?,
            stamp: self.u64()?,
        })
    }
    fn rules(&mut self) -> Result<Vec<Rule>, WireError> {
        let n = self.u16()?;
        (0..n).map(|_| self.rule()).collect()
    }
}

fn encode_command(w: &mut Writer, c: &Command) {
    match c {
        Command::NewRound(t) => {
            w.u8(1);
            w.tag(*t);
        }
        Command::DelMngr(k) => {
            w.u8(2);
            w.node(*k);
        }
        Command::AddMngr(k) => {
            w.u8(3);
            w.node(*k);
        }
        Command::DelAllRules(k) => {
            w.u8(4);
            w.node(*k);
        }
        Command::UpdateRules { rules, keep } => {
            w.u8(5);
            match keep {
                Some(t) => {
                    w.u8(1);
                    w.tag(*t);
                }
                None => w.u8(0),
            }
            w.rules(rules);
        }
        Command::Query(t) => {
            w.u8(6);
            w.tag(*t);
        }
    }
}

fn decode_command(r: &mut Reader) -> Result<Command, WireError> {
    Ok(match r.u8()? {
        1 => Command::NewRound(r.tag()?),
        2 => Command::DelMngr(r.node()?),
        3 => Command::AddMngr(r.node()?),
        4 => Command::DelAllRules(r.node()?),
        5 => {
            let keep = if r.flag()? { Some(r.tag()?) } else { None };
            Command::UpdateRules { rules: r.rules()?, keep }
        }
        6 => Command::Query(r.tag()?),
        b => return Err(WireError::BadTag(b)),
    })
}

pub fn encode(m: &Message) -> Vec<u8> {
    let mut body = Writer(Vec::new());
    let kind = match m {
        Message::Request { bit, batch } => {
            body.u8(*bit as u8);
            body.u16(batch.0.len());
            for c in &batch.0 {
                encode_command(&mut body, c);
            }
            REQUEST
        }
        Message::Ack { bit, reply } => {
            body.u8(*bit as u8);
            match reply {
                None => body.u8(0),
                Some(q) => {
                    body.u8(1);
                    body.node(q.id);
                    body.nodes(&q.neighbors);
                    match &q.managers {
                        Some(ms) => {
                            body.u8(1);
                            body.nodes(ms);
                        }
                        None => body.u8(0),
                    }
                    body.rules(&q.rules);
                }
            }
            ACK
        }
    };
    let mut out = Vec::with_capacity(body.0.len() + 5);
    out.push(kind);
    out.extend_from_slice(&(body.0.len() as u32).to_le_bytes());
    out.extend_from_slice(&body.0);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
    let mut r = Reader(bytes);
    let kind = r.u8()?;
    let len = r.u32()? as usize;
    if r.0.len() != len {
        return Err(WireError::Length);
    }
    let msg = match kind {
        REQUEST => {
            let bit = r.flag()?;
            let n = r.u16()?;
            let cmds = (0..n).map(|_| decode_command(&mut r)).collect::<Result<Vec<_>, _>>()?;
            Message::Request { bit, batch: CommandBatch(cmds) }
        }
        ACK => {
            let bit = r.flag()?;
            let reply = if r.flag()? {
                let id = r.node()?;
                let neighbors = r.nodes()?;
                let managers = if r.flag()? { Some(r.nodes()?) } else { None };
                let rules = r.rules()?;
                Some(QueryReply { id, neighbors, managers, rules })
            } else {
                None
            };
            Message::Ack { bit, reply }
        }
        b => return Err(WireError::BadTag(b)),
    };
    if !r.0.is_empty() {
        return Err(WireError::Length);
    }
    Ok(msg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_batch() -> CommandBatch {
        let t = Tag { owner: NodeId(1), epoch: 7 };
        CommandBatch(vec![
            Command::NewRound(t),
            Command::DelMngr(NodeId(2)),
            Command::AddMngr(NodeId(1)),
            Command::DelAllRules(NodeId(2)),
            Command::UpdateRules { rules: vec![Rule::forwarding(NodeId(1), NodeId(4), NodeId(5), 2, NodeId(5), t)], keep: Some(t) },
            Command::Query(t),
        ])
    }

    #[test]
    fn round_trip_request_and_ack() {
        let m = Message::Request { bit: true, batch: sample_batch() };
        assert_eq!(decode(&encode(&m)), Ok(m));
        let reply = QueryReply {
            id: NodeId(4),
            neighbors: [NodeId(1), NodeId(5)].into_iter().collect(),
            managers: None,
            rules: vec![Rule::meta(NodeId(1), NodeId(4), Tag::default())],
        };
        let m = Message::Ack { bit: false, reply: Some(reply) };
        assert_eq!(decode(&encode(&m)), Ok(m));
        let m = Message::Ack { bit: true, reply: None };
        assert_eq!(decode(&encode(&m)), Ok(m));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = encode(&Message::Request { bit: false, batch: sample_batch() });
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(decode(&longer).is_err());
    }

    proptest! {
        #[test]
        fn corrupted_bytes_never_panic(flips in proptest::collection::vec((0usize..200, any::<u8>()), 1..6)) {
            let mut bytes = encode(&Message::Request { bit: false, batch: sample_batch() });
            for (i, v) in flips {
                let i = i % bytes.len();
                bytes[i] ^= v;
            }
            let _ = decode(&bytes);
        }
    }
}
