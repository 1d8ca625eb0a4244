//! The offload bundle: one container holding the host program and one
//! device image per target.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "OMPBNDL1"  u32 count
//! count × { u32 name_len, name bytes, u64 payload_len, payload bytes }
//! ```
//!
//! The first entry is always `host`; device images follow in the order
//! they were given.
use std::collections::BTreeSet;

use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"OMPBNDL1";
pub const HOST_ENTRY: &str = "host";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BundleError {
    #[error("duplicate bundle entry `{0}`")]
    DuplicateTarget(String),
    #[error("not an offload bundle (bad magic)")]
    BadMagic,
    #[error("bundle truncated at byte {0}")]
    Truncated(usize),
    #[error("bundle has no host entry first")]
    MissingHost,
    #[error("entry name at byte {0} is not UTF-8")]
    BadName(usize),
    #[error("{0} trailing bytes after the last entry")]
    TrailingBytes(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Bundle {
    /// `(name, payload)` in file order, host first.
    pub entries: Vec<(String, Vec<u8>)>,
}

impl Bundle {
    pub fn host(&self) -> &[u8] {
        self.image(HOST_ENTRY).unwrap_or_default()
    }

    pub fn image(&self, name: &str) -> Option<&[u8]> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, p)| p.as_slice())
    }

    /// Device image names, in order.
    pub fn targets(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().skip(1).map(|(n, _)| n.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(
            12 + self.entries.iter().map(|(n, p)| 12 + n.len() + p.len()).sum::<usize>(),
        );
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, payload) in &self.entries {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, BundleError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len()).map_err(|_| BundleError::BadMagic)? != MAGIC {
            return Err(BundleError::BadMagic);
        }
        let count = r.u32()?;
        let mut entries: Vec<(String, Vec<u8>)> = Vec::new();
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let at = r.pos;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| BundleError::BadName(at))?
                .to_string();
            let len = r.u64()?;
            let len = usize::try_from(len).map_err(|_| BundleError::Truncated(bytes.len()))?;
            let payload = r.take(len)?.to_vec();
            if !seen.insert(name.clone()) {
                return Err(BundleError::DuplicateTarget(name));
            }
            entries.push((name, payload));
        }
        if r.pos != bytes.len() {
            return Err(BundleError::TrailingBytes(bytes.len() - r.pos));
        }
        if entries.first().map(|(n, _)| n.as_str()) != Some(HOST_ENTRY) {
            return Err(BundleError::MissingHost);
        }
        Ok(Self { entries })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], BundleError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|e| *e <= self.bytes.len())
            .ok_or(BundleError::Truncated(self.bytes.len()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, BundleError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, BundleError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Packs a host program and device images, host first.
pub fn bundle<N: AsRef<str>, P: AsRef<[u8]>>(
    host: &[u8],
    images: &[(N, P)],
) -> Result<Vec<u8>, BundleError> {
    let mut b = Bundle {
        entries: vec![(HOST_ENTRY.to_string(), host.to_vec())],
    };
    for (name, payload) in images {
        let name = name.as_ref();
        if b.image(name).is_some() {
            return Err(BundleError::DuplicateTarget(name.to_string()));
        }
        b.entries.push((name.to_string(), payload.as_ref().to_vec()));
    }
    Ok(b.to_bytes())
}

/// Splits a bundle into the host program and the device images.
#[allow(clippy::type_complexity)]
pub fn unbundle(bytes: &[u8]) -> Result<(Vec<u8>, Vec<(String, Vec<u8>)>), BundleError> {
    let mut b = Bundle::from_bytes(bytes)?;
    let (_, host) = b.entries.remove(0);
    Ok((host, b.entries))
}
