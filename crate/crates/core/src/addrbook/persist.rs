//! Binary dump format for [`AddrBook`].
//!
//! All integers are little-endian. Layout, version 1:
//!
//! ```text
//! header   magic "TBAB" | version u8 | mode u8 (0 direct, 1 over-tor)
//!          | salt [16] | record count u32
//! record   address | last_seen i64 | has_attempt u8 | [last_attempt i64]
//!          | failures u32 | ever_connected u8 | source address
//!          | in_tried u8 | [bucket u16 | slot u8]
//!          | new_ref_count u8 | (bucket u16 | slot u8) * new_ref_count
//! address  kind u8 (1 ipv4, 2 ipv6, 3 onioncat) | raw [16] | port u16
//! ```
//!
//! Loading is all-or-nothing: any defect yields a [`PersistError`] carrying
//! the byte offset where decoding stopped.

use std::collections::HashMap;

use thiserror::Error;

use super::{
    AddrBook, AddrEntry, Pos, Record, Salt, Table, TransportMode, BUCKET_SIZE, MAX_NEW_REFS,
    NEW_BUCKET_COUNT, TRIED_BUCKET_COUNT,
};
use crate::netaddr::{AddrKind, NetAddress};

const MAGIC: &[u8; 4] = b"TBAB";
pub const FORMAT_VERSION: u8 = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("address book stream invalid at byte {offset}: {kind}")]
pub struct PersistError {
    pub offset: usize,
    pub kind: PersistErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PersistErrorKind {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u8),
    #[error("unexpected end of stream")]
    Truncated,
    #[error("invalid field: {0}")]
    Invalid(&'static str),
    #[error("trailing bytes")]
    TrailingBytes,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, kind: PersistErrorKind) -> PersistError {
        PersistError { offset: self.pos, kind }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], PersistError> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(PersistErrorKind::Truncated));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, PersistError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, PersistError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, PersistError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn i64(&mut self) -> Result<i64, PersistError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn flag(&mut self) -> Result<bool, PersistError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => {
                self.pos -= 1;
                Err(self.fail(PersistErrorKind::Invalid("flag byte")))
            }
        }
    }

    fn address(&mut self) -> Result<NetAddress, PersistError> {
        let start = self.pos;
        let kind = AddrKind::from_tag(self.u8()?);
        let raw: [u8; 16] = self.take(16)?.try_into().unwrap();
        let port = self.u16()?;
        kind.and_then(|k| NetAddress::from_parts(k, raw, port))
            .filter(|a| a.port() != 0)
            .ok_or(PersistError { offset: start, kind: PersistErrorKind::Invalid("address") })
    }

    fn pos_in(&mut self, buckets: usize) -> Result<Pos, PersistError> {
        let start = self.pos;
        let bucket = self.u16()?;
        let slot = self.u8()?;
        if bucket as usize >= buckets || slot as usize >= BUCKET_SIZE {
            return Err(PersistError { offset: start, kind: PersistErrorKind::Invalid("bucket position") });
        }
        Ok(Pos { bucket, slot })
    }
}

fn put_address(out: &mut Vec<u8>, a: &NetAddress) {
    out.push(a.kind().tag());
    out.extend_from_slice(a.raw());
    out.extend_from_slice(&a.port().to_le_bytes());
}

fn put_pos(out: &mut Vec<u8>, p: Pos) {
    out.extend_from_slice(&p.bucket.to_le_bytes());
    out.push(p.slot);
}

impl AddrBook {
    pub fn persist(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.len() * 64);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.push(match self.mode {
            TransportMode::Direct => 0,
            TransportMode::OverTor => 1,
        });
        out.extend_from_slice(&self.salt.0);
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for rec in self.records.iter().flatten() {
            let e = &rec.entry;
            put_address(&mut out, &e.address);
            out.extend_from_slice(&e.last_seen.to_le_bytes());
            match e.last_attempt {
                Some(t) => {
                    out.push(1);
                    out.extend_from_slice(&t.to_le_bytes());
                }
                None => out.push(0),
            }
            out.extend_from_slice(&e.consecutive_failures.to_le_bytes());
            out.push(e.ever_connected as u8);
            put_address(&mut out, &e.source);
            match rec.tried_at {
                Some(p) => {
                    out.push(1);
                    put_pos(&mut out, p);
                }
                None => out.push(0),
            }
            out.push(rec.new_refs.len() as u8);
            for p in &rec.new_refs {
                put_pos(&mut out, *p);
            }
        }
        out
    }

    pub fn load(bytes: &[u8]) -> Result<AddrBook, PersistError> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4).map_err(|_| r.fail(PersistErrorKind::BadMagic))? != MAGIC {
            return Err(PersistError { offset: 0, kind: PersistErrorKind::BadMagic });
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(PersistError { offset: 4, kind: PersistErrorKind::UnsupportedVersion(version) });
        }
        let mode = match r.u8()? {
            0 => TransportMode::Direct,
            1 => TransportMode::OverTor,
            _ => return Err(PersistError { offset: 5, kind: PersistErrorKind::Invalid("mode") }),
        };
        let salt = Salt(r.take(16)?.try_into().unwrap());
        let count = r.u32()? as usize;
        if count > super::MAX_ENTRIES {
            return Err(PersistError { offset: r.pos - 4, kind: PersistErrorKind::Invalid("record count") });
        }

        let mut book = AddrBook::new(mode, salt);
        let mut index = HashMap::with_capacity(count);
        for id in 0..count as u32 {
            let rec_start = r.pos;
            let address = r.address()?;
            let last_seen = r.i64()?;
            let last_attempt = if r.flag()? { Some(r.i64()?) } else { None };
            let consecutive_failures = r.u32()?;
            let ever_connected = r.flag()?;
            let source = r.address()?;
            let tried_at = if r.flag()? { Some(r.pos_in(TRIED_BUCKET_COUNT)?) } else { None };
            let nrefs_at = r.pos;
            let nrefs = r.u8()? as usize;
            if nrefs > MAX_NEW_REFS {
                return Err(PersistError { offset: nrefs_at, kind: PersistErrorKind::Invalid("new reference count") });
            }
            let mut new_refs = Vec::with_capacity(nrefs);
            for _ in 0..nrefs {
                let at = r.pos;
                let p = r.pos_in(NEW_BUCKET_COUNT)?;
                if new_refs.iter().any(|q: &Pos| q.bucket == p.bucket) {
                    return Err(PersistError { offset: at, kind: PersistErrorKind::Invalid("duplicate bucket reference") });
                }
                new_refs.push(p);
            }
            let invalid = |what| PersistError { offset: rec_start, kind: PersistErrorKind::Invalid(what) };
            if ever_connected != tried_at.is_some() {
                return Err(invalid("ever_connected disagrees with table"));
            }
            if tried_at.is_some() == !new_refs.is_empty() {
                return Err(invalid("entry must sit in exactly one table"));
            }
            if index.insert(address.host(), id).is_some() {
                return Err(invalid("duplicate address"));
            }
            for (table, p) in tried_at
                .iter()
                .map(|p| (Table::Tried, *p))
                .chain(new_refs.iter().map(|p| (Table::New, *p)))
            {
                if book.bucket_ids(table, p.bucket as usize)[p.slot as usize].is_some() {
                    return Err(invalid("slot already occupied"));
                }
                book.set_slot(table, p, Some(id));
            }
            book.records.push(Some(Record {
                entry: AddrEntry {
                    address,
                    last_seen,
                    last_attempt,
                    consecutive_failures,
                    ever_connected,
                    source,
                },
                new_refs,
                tried_at,
            }));
        }
        if r.pos != bytes.len() {
            return Err(r.fail(PersistErrorKind::TrailingBytes));
        }
        book.index = index;
        Ok(book)
    }
}
