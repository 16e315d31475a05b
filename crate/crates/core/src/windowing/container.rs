//! Binary window container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic            4 bytes  "SLWS"
//! version          u16      1
//! scheme           u8       0 = WIN11, 1 = WIN61, 2 = WINMIX
//! reserved         u8       0
//! sample_rate_hz   u32
//! samples/window   u32      span_s * sample_rate_hz
//! window_count     u32
//! class_counts     4 x u32  Normal, OSA, CSA, MSA
//! subject_count    u32
//! subjects         subject_count x (u16 length, UTF-8 bytes)
//! windows          window_count x record
//!   label          u8       class index
//!   subject        u16      index into the subject table
//!   anchor         u32      label second
//!   samples        samples/window x f32
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{Scheme, Window, WindowSet};
use crate::class::ApneaClass;
use crate::error::{Error, Result};

pub const CONTAINER_MAGIC: &[u8; 4] = b"SLWS";
pub const CONTAINER_VERSION: u16 = 1;

pub fn write_windows_bytes(set: &WindowSet) -> Result<Vec<u8>> {
    let spw = set.samples_per_window();
    let mut subjects: BTreeMap<&str, u16> = BTreeMap::new();
    for w in &set.windows {
        if w.samples.len() != spw {
            return Err(Error::Container(format!(
                "window at {} has {} samples, expected {spw}",
                w.label_second,
                w.samples.len()
            )));
        }
        let next = subjects.len();
        if next > u16::MAX as usize {
            return Err(Error::Container("too many subjects".into()));
        }
        subjects.entry(w.subject_id.as_str()).or_insert(next as u16);
    }
    let mut out = Vec::with_capacity(64 + set.len() * (7 + 4 * spw));
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.push(set.scheme.code());
    out.push(0);
    out.extend_from_slice(&set.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&(spw as u32).to_le_bytes());
    out.extend_from_slice(&(set.len() as u32).to_le_bytes());
    for c in set.class_counts() {
        out.extend_from_slice(&(c as u32).to_le_bytes());
    }
    let mut table: Vec<(&str, u16)> = subjects.iter().map(|(k, v)| (*k, *v)).collect();
    table.sort_by_key(|(_, v)| *v);
    out.extend_from_slice(&(table.len() as u32).to_le_bytes());
    for (name, _) in &table {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    for w in &set.windows {
        out.push(w.label as u8);
        out.extend_from_slice(&subjects[w.subject_id.as_str()].to_le_bytes());
        out.extend_from_slice(&w.label_second.to_le_bytes());
        for x in &w.samples {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Container(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_windows_bytes(bytes: &[u8]) -> Result<WindowSet> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != CONTAINER_MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = c.u16()?;
    if version != CONTAINER_VERSION {
        return Err(Error::Container(format!("unsupported version {version}")));
    }
    let scheme = Scheme::from_code(c.u8()?)?;
    c.u8()?;
    let fs = c.u32()?;
    let spw = c.u32()? as usize;
    if fs == 0 || spw != scheme.span_s() * fs as usize {
        return Err(Error::Container(format!("{spw} samples per window inconsistent with {scheme} at {fs} Hz")));
    }
    let count = c.u32()? as usize;
    let mut declared = [0usize; 4];
    for d in &mut declared {
        *d = c.u32()? as usize;
    }
    let n_subjects = c.u32()? as usize;
    let mut subjects = Vec::with_capacity(n_subjects);
    for _ in 0..n_subjects {
        let len = c.u16()? as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| Error::Container("subject id is not UTF-8".into()))?;
        subjects.push(name.to_string());
    }
    let mut windows = Vec::with_capacity(count);
    for _ in 0..count {
        let label = ApneaClass::from_byte(c.u8()?)?;
        let subject = c.u16()? as usize;
        let subject_id = subjects
            .get(subject)
            .ok_or_else(|| Error::Container(format!("subject index {subject} out of range")))?
            .clone();
        let label_second = c.u32()?;
        let samples = c
            .take(spw * 4)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        windows.push(Window {
            scheme,
            label,
            label_second,
            subject_id,
            samples,
            sample_rate_hz: fs,
        });
    }
    let set = WindowSet {
        scheme,
        sample_rate_hz: fs,
        windows,
    };
    if set.class_counts() != declared {
        return Err(Error::Container("class counts in header do not match records".into()));
    }
    Ok(set)
}

pub fn write_windows(path: impl AsRef<Path>, set: &WindowSet) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_windows_bytes(set)?).map_err(|e| Error::io(path, e))
}

pub fn read_windows(path: impl AsRef<Path>) -> Result<WindowSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_windows_bytes(&bytes)
}
