// Copyright 2026 The zonewaf Authors
// SPDX-License-Identifier: Apache-2.0

//! Checkpoint encoding. All integers little-endian; every record carries a
//! u32 length prefix and the file ends with a crc32 of everything before it.
//!
//! ```text
//! "ZSSM" version:u8 lsn:u64
//! n:u64  { len pid:u64 slot_lba:u64 offset:u16 len:u16 }*
//! n:u32  { len zone:u32 state:u8 wp:u32 group:u32 plid:u16 target:u8+f64 invalid:u32 }*
//! n:u32  { len id:u32 members:u32 { zone:u32 appended:u64 rewritten:u8 }* }*
//! crc:u32
//! ```

use std::collections::BTreeSet;

use super::{Group, Location, SpaceError, ZoneMeta, ZoneState};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"ZSSM";
pub const SNAPSHOT_VERSION: u8 = 1;

const NO_PLID: u16 = u16::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneRecord {
    pub zone: u32,
    pub state: ZoneState,
    pub write_ptr: u32,
    pub group: u32,
    pub plid: Option<u16>,
    pub target_edt: Option<f64>,
    pub invalid: u32,
}

impl From<&ZoneMeta> for ZoneRecord {
    fn from(z: &ZoneMeta) -> Self {
        ZoneRecord {
            zone: z.zone_id,
            state: z.state,
            write_ptr: z.write_ptr,
            group: z.group,
            plid: z.plid,
            target_edt: z.target_edt,
            invalid: z.invalid_page_count,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub lsn: u64,
    pub mappings: Vec<(u64, Location)>,
    pub zones: Vec<ZoneRecord>,
    pub groups: Vec<Group>,
}

fn record(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(body);
}

impl Snapshot {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.mappings.len() * 24);
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.push(SNAPSHOT_VERSION);
        out.extend_from_slice(&self.lsn.to_le_bytes());
        out.extend_from_slice(&(self.mappings.len() as u64).to_le_bytes());
        let mut b = Vec::with_capacity(64);
        for (pid, loc) in &self.mappings {
            b.clear();
            b.extend_from_slice(&pid.to_le_bytes());
            b.extend_from_slice(&loc.slot_lba.to_le_bytes());
            b.extend_from_slice(&loc.offset.to_le_bytes());
            b.extend_from_slice(&loc.len.to_le_bytes());
            record(&mut out, &b);
        }
        out.extend_from_slice(&(self.zones.len() as u32).to_le_bytes());
        for z in &self.zones {
            b.clear();
            b.extend_from_slice(&z.zone.to_le_bytes());
            b.push(z.state as u8);
            b.extend_from_slice(&z.write_ptr.to_le_bytes());
            b.extend_from_slice(&z.group.to_le_bytes());
            b.extend_from_slice(&z.plid.unwrap_or(NO_PLID).to_le_bytes());
            b.push(z.target_edt.is_some() as u8);
            b.extend_from_slice(&z.target_edt.unwrap_or(0.0).to_bits().to_le_bytes());
            b.extend_from_slice(&z.invalid.to_le_bytes());
            record(&mut out, &b);
        }
        out.extend_from_slice(&(self.groups.len() as u32).to_le_bytes());
        for g in &self.groups {
            b.clear();
            b.extend_from_slice(&g.id.to_le_bytes());
            b.extend_from_slice(&(g.members.len() as u32).to_le_bytes());
            for (i, &m) in g.members.iter().enumerate() {
                b.extend_from_slice(&m.to_le_bytes());
                b.extend_from_slice(&g.appended[i].to_le_bytes());
                b.push(g.rewritten.contains(&m) as u8);
            }
            record(&mut out, &b);
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Snapshot, SpaceError> {
        let bad = |m: &str| SpaceError::Snapshot(m.to_string());
        if bytes.len() < 4 + 1 + 8 + 4 {
            return Err(bad("truncated"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        if body[..4] != SNAPSHOT_MAGIC {
            return Err(bad("bad magic"));
        }
        if body[4] != SNAPSHOT_VERSION {
            return Err(bad("unsupported version"));
        }
        let mut r = Reader { b: body, at: 5 };
        let lsn = r.u64()?;
        let n = r.u64()?;
        let mut mappings = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let mut rec = r.record()?;
            let pid = rec.u64()?;
            let loc = Location { slot_lba: rec.u64()?, offset: rec.u16()?, len: rec.u16()? };
            mappings.push((pid, loc));
        }
        let n = r.u32()?;
        let mut zones = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let mut rec = r.record()?;
            let zone = rec.u32()?;
            let state = ZoneState::from_u8(rec.u8()?).ok_or_else(|| bad("bad zone state"))?;
            let write_ptr = rec.u32()?;
            let group = rec.u32()?;
            let plid = Some(rec.u16()?).filter(|&p| p != NO_PLID);
            let has_target = rec.u8()? != 0;
            let target = f64::from_bits(rec.u64()?);
            let invalid = rec.u32()?;
            zones.push(ZoneRecord { zone, state, write_ptr, group, plid, target_edt: has_target.then_some(target), invalid });
        }
        let n = r.u32()?;
        let mut groups = Vec::with_capacity(n.min(1 << 20) as usize);
        for _ in 0..n {
            let mut rec = r.record()?;
            let id = rec.u32()?;
            let k = rec.u32()?;
            let mut g = Group { id, members: Vec::new(), appended: Vec::new(), rewritten: BTreeSet::new() };
            for _ in 0..k {
                let m = rec.u32()?;
                g.members.push(m);
                g.appended.push(rec.u64()?);
                if rec.u8()? != 0 {
                    g.rewritten.insert(m);
                }
            }
            groups.push(g);
        }
        if r.at != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Snapshot { lsn, mappings, zones, groups })
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SpaceError> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        let end = end.ok_or_else(|| SpaceError::Snapshot("truncated".into()))?;
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn record(&mut self) -> Result<Reader<'a>, SpaceError> {
        let len = self.u32()? as usize;
        Ok(Reader { b: self.take(len)?, at: 0 })
    }

    fn u8(&mut self) -> Result<u8, SpaceError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, SpaceError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, SpaceError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, SpaceError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
