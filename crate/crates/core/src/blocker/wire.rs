//! Minimal DNS wire format: enough to read a query's question, answer it
//! from the sinkhole, and read A records out of an upstream reply.

use std::net::{Ipv4Addr, Ipv6Addr};

use super::BlockerError;

pub const TYPE_A: u16 = 1;
pub const TYPE_AAAA: u16 = 28;
pub const CLASS_IN: u16 = 1;

pub const RCODE_FORMERR: u8 = 1;
pub const RCODE_SERVFAIL: u8 = 2;

const HEADER_LEN: usize = 12;

fn bad(msg: &str) -> BlockerError {
    BlockerError::Wire(msg.to_string())
}

fn u16_at(buf: &[u8], at: usize) -> Result<u16, BlockerError> {
    buf.get(at..at + 2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .ok_or_else(|| bad("truncated"))
}

/// The first question of a query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: u16,
    pub flags: u16,
    /// Lowercase, without the trailing dot.
    pub name: String,
    pub qtype: u16,
    pub qclass: u16,
    /// Offset just past the question section.
    question_end: usize,
}

/// Reads a possibly-compressed name starting at `at`; returns the name and
/// the offset following it in the original position.
fn read_name(buf: &[u8], mut at: usize) -> Result<(String, usize), BlockerError> {
    let mut labels: Vec<String> = Vec::new();
    let mut end = None;
    let mut jumps = 0;
    loop {
        let len = *buf.get(at).ok_or_else(|| bad("name runs past end"))? as usize;
        match len {
            0 => {
                end.get_or_insert(at + 1);
                break;
            }
            l if l & 0xC0 == 0xC0 => {
                let ptr = (u16_at(buf, at)? & 0x3FFF) as usize;
                end.get_or_insert(at + 2);
                jumps += 1;
                if jumps > 16 {
                    return Err(bad("compression loop"));
                }
                at = ptr;
            }
            l if l > 63 => return Err(bad("label too long")),
            l => {
                let label = buf.get(at + 1..at + 1 + l).ok_or_else(|| bad("truncated label"))?;
                labels.push(String::from_utf8_lossy(label).to_ascii_lowercase());
                at += 1 + l;
            }
        }
    }
    Ok((labels.join("."), end.expect("set on every exit")))
}

fn write_name(out: &mut Vec<u8>, name: &str) -> Result<(), BlockerError> {
    for label in name.trim_end_matches('.').split('.').filter(|l| !l.is_empty()) {
        if label.len() > 63 {
            return Err(bad("label too long"));
        }
        out.push(label.len() as u8);
        out.extend_from_slice(label.as_bytes());
    }
    out.push(0);
    Ok(())
}

/// Parses a standard query with at least one question.
pub fn parse_query(buf: &[u8]) -> Result<Query, BlockerError> {
    if buf.len() < HEADER_LEN {
        return Err(bad("short header"));
    }
    let id = u16_at(buf, 0)?;
    let flags = u16_at(buf, 2)?;
    if flags & 0x8000 != 0 {
        return Err(bad("not a query"));
    }
    if (flags >> 11) & 0xF != 0 {
        return Err(bad("unsupported opcode"));
    }
    if u16_at(buf, 4)? == 0 {
        return Err(bad("no question"));
    }
    let (name, at) = read_name(buf, HEADER_LEN)?;
    let qtype = u16_at(buf, at)?;
    let qclass = u16_at(buf, at + 2)?;
    Ok(Query {
        id,
        flags,
        name,
        qtype,
        qclass,
        question_end: at + 4,
    })
}

fn response_header(id: u16, query_flags: u16, rcode: u8, qd: u16, an: u16) -> Vec<u8> {
    // QR, copy opcode and RD, set RA
    let flags = 0x8000 | (query_flags & 0x7900) | 0x0080 | u16::from(rcode & 0xF);
    let mut out = Vec::with_capacity(64);
    for v in [id, flags, qd, an, 0, 0] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out
}

/// Sinkhole answer: A → 127.0.0.1, AAAA → ::1, anything else gets an empty
/// NOERROR answer.
pub fn sinkhole_response(query_buf: &[u8], q: &Query, ttl: u32) -> Vec<u8> {
    let rdata: Option<Vec<u8>> = match q.qtype {
        TYPE_A => Some(Ipv4Addr::LOCALHOST.octets().to_vec()),
        TYPE_AAAA => Some(Ipv6Addr::LOCALHOST.octets().to_vec()),
        _ => None,
    };
    let mut out = response_header(q.id, q.flags, 0, 1, u16::from(rdata.is_some()));
    out.extend_from_slice(&query_buf[HEADER_LEN..q.question_end]);
    if let Some(rdata) = rdata {
        out.extend_from_slice(&0xC00Cu16.to_be_bytes());
        out.extend_from_slice(&q.qtype.to_be_bytes());
        out.extend_from_slice(&q.qclass.to_be_bytes());
        out.extend_from_slice(&ttl.to_be_bytes());
        out.extend_from_slice(&(rdata.len() as u16).to_be_bytes());
        out.extend_from_slice(&rdata);
    }
    out
}

/// Error reply echoing whatever of the query could be read.
pub fn error_response(query_buf: &[u8], rcode: u8) -> Vec<u8> {
    match parse_query(query_buf) {
        Ok(q) => {
            let mut out = response_header(q.id, q.flags, rcode, 1, 0);
            out.extend_from_slice(&query_buf[HEADER_LEN..q.question_end]);
            out
        }
        Err(_) => {
            let id = u16_at(query_buf, 0).unwrap_or(0);
            let flags = u16_at(query_buf, 2).unwrap_or(0);
            response_header(id, flags, rcode, 0, 0)
        }
    }
}

/// A recursion-desired query for one name.
pub fn build_query(id: u16, name: &str, qtype: u16) -> Result<Vec<u8>, BlockerError> {
    let mut out = Vec::with_capacity(32 + name.len());
    for v in [id, 0x0100, 1, 0, 0, 0] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    write_name(&mut out, name)?;
    out.extend_from_slice(&qtype.to_be_bytes());
    out.extend_from_slice(&CLASS_IN.to_be_bytes());
    Ok(out)
}

/// Header summary and address records of a response.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub id: u16,
    pub rcode: u8,
    pub a: Vec<Ipv4Addr>,
    pub aaaa: Vec<Ipv6Addr>,
    pub ttls: Vec<u32>,
}

pub fn parse_response(buf: &[u8]) -> Result<Response, BlockerError> {
    if buf.len() < HEADER_LEN {
        return Err(bad("short header"));
    }
    let id = u16_at(buf, 0)?;
    let flags = u16_at(buf, 2)?;
    if flags & 0x8000 == 0 {
        return Err(bad("not a response"));
    }
    let qd = u16_at(buf, 4)?;
    let an = u16_at(buf, 6)?;
    let mut at = HEADER_LEN;
    for _ in 0..qd {
        at = read_name(buf, at)?.1 + 4;
    }
    let mut resp = Response {
        id,
        rcode: (flags & 0xF) as u8,
        a: Vec::new(),
        aaaa: Vec::new(),
        ttls: Vec::new(),
    };
    for _ in 0..an {
        at = read_name(buf, at)?.1;
        let rtype = u16_at(buf, at)?;
        let ttl = buf
            .get(at + 4..at + 8)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or_else(|| bad("truncated record"))?;
        let len = u16_at(buf, at + 8)? as usize;
        let data = buf.get(at + 10..at + 10 + len).ok_or_else(|| bad("truncated rdata"))?;
        match (rtype, len) {
            (TYPE_A, 4) => resp.a.push(Ipv4Addr::new(data[0], data[1], data[2], data[3])),
            (TYPE_AAAA, 16) => {
                let octets: [u8; 16] = data.try_into().expect("length checked");
                resp.aaaa.push(Ipv6Addr::from(octets));
            }
            _ => {}
        }
        resp.ttls.push(ttl);
        at += 10 + len;
    }
    Ok(resp)
}

/// Builds an answer for `query_buf` with the given A records; used by stub
/// upstreams.
pub fn a_response(query_buf: &[u8], ips: &[Ipv4Addr], ttl: u32) -> Result<Vec<u8>, BlockerError> {
    let q = parse_query(query_buf)?;
    let mut out = response_header(q.id, q.flags, 0, 1, ips.len() as u16);
    out.extend_from_slice(&query_buf[HEADER_LEN..q.question_end]);
    for ip in ips {
        out.extend_from_slice(&0xC00Cu16.to_be_bytes());
        out.extend_from_slice(&TYPE_A.to_be_bytes());
        out.extend_from_slice(&CLASS_IN.to_be_bytes());
        out.extend_from_slice(&ttl.to_be_bytes());
        out.extend_from_slice(&4u16.to_be_bytes());
        out.extend_from_slice(&ip.octets());
    }
    Ok(out)
}
