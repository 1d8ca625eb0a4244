//! Byte-addressed simulated memory made of independent allocations.
//!
//! A pointer is `(allocation id << 32) | offset`; id 0 is never handed
//! out, so the null pointer always faults.
use crate::types::ScalarType;

use super::TrapKind;

/// Filler for memory that is deliberately left uninitialized.
pub const POISON: u8 = 0xAA;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Fill {
    Zero,
    Bytes,
    /// Poisoned; reads before writes trap when checking is enabled.
    Poison,
}

#[derive(Debug, Clone, Default)]
struct Alloc {
    bytes: Vec<u8>,
    /// Per-byte "written" flags, only for poisoned allocations under
    /// uninitialized-read checking.
    written: Option<Vec<bool>>,
    live: bool,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Memory {
    allocs: Vec<Alloc>,
    free_ids: Vec<usize>,
    pub check_uninit: bool,
}

pub(crate) fn make_ptr(id: usize, offset: u64) -> u64 {
    ((id as u64) << 32) | (offset & 0xFFFF_FFFF)
}

fn split(ptr: u64) -> (usize, u64) {
    ((ptr >> 32) as usize, ptr & 0xFFFF_FFFF)
}

impl Memory {
    pub fn new(check_uninit: bool) -> Self {
        Self {
            allocs: vec![Alloc::default()],
            free_ids: Vec::new(),
            check_uninit,
        }
    }

    pub fn alloc(&mut self, size: usize, fill: Fill) -> u64 {
        let byte = if fill == Fill::Poison { POISON } else { 0 };
        let tracked = fill == Fill::Poison && self.check_uninit;
        let id = match self.free_ids.pop() {
            Some(id) => {
                // Reuse the freed buffer's storage.
                let a = &mut self.allocs[id];
                a.bytes.clear();
                a.bytes.resize(size, byte);
                a.written = tracked.then(|| vec![false; size]);
                a.live = true;
                id
            }
            None => {
                self.allocs.push(Alloc {
                    bytes: vec![byte; size],
                    written: tracked.then(|| vec![false; size]),
                    live: true,
                });
                self.allocs.len() - 1
            }
        };
        make_ptr(id, 0)
    }

    pub fn alloc_bytes(&mut self, data: &[u8]) -> u64 {
        let p = self.alloc(data.len(), Fill::Bytes);
        self.allocs[split(p).0].bytes.copy_from_slice(data);
        p
    }

    pub fn free(&mut self, ptr: u64) {
        let (id, _) = split(ptr);
        if let Some(a) = self.allocs.get_mut(id).filter(|a| a.live) {
            a.live = false;
            a.written = None;
            self.free_ids.push(id);
        }
    }

    /// Resets an allocation to its initial fill.
    pub fn refill(&mut self, ptr: u64, fill: Fill) {
        let check = self.check_uninit;
        let a = &mut self.allocs[split(ptr).0];
        let byte = if fill == Fill::Poison { POISON } else { 0 };
        a.bytes.iter_mut().for_each(|b| *b = byte);
        a.written = (fill == Fill::Poison && check).then(|| vec![false; a.bytes.len()]);
    }

    pub fn bytes(&self, ptr: u64) -> &[u8] {
        &self.allocs[split(ptr).0].bytes
    }

    pub fn read_bytes(&self, ptr: u64, len: usize) -> Result<Vec<u8>, TrapKind> {
        let (id, off) = self.range(ptr, len)?;
        Ok(self.allocs[id].bytes[off..off + len].to_vec())
    }

    pub fn write_bytes(&mut self, ptr: u64, data: &[u8]) -> Result<(), TrapKind> {
        let (id, off) = self.range(ptr, data.len())?;
        let a = &mut self.allocs[id];
        a.bytes[off..off + data.len()].copy_from_slice(data);
        if let Some(w) = &mut a.written {
            w[off..off + data.len()].iter_mut().for_each(|b| *b = true);
        }
        Ok(())
    }

    fn range(&self, ptr: u64, size: usize) -> Result<(usize, usize), TrapKind> {
        let (id, off) = split(ptr);
        let a = self.allocs.get(id).filter(|a| a.live).ok_or(TrapKind::OutOfBounds)?;
        let off = off as usize;
        if off + size > a.bytes.len() {
            return Err(TrapKind::OutOfBounds);
        }
        Ok((id, off))
    }

    pub fn load(&self, ptr: u64, ty: ScalarType) -> Result<u64, TrapKind> {
        let (id, off) = self.range(ptr, ty.size())?;
        let a = &self.allocs[id];
        if let Some(w) = &a.written {
            if !w[off..off + ty.size()].iter().all(|b| *b) {
                return Err(TrapKind::UninitializedRead);
            }
        }
        Ok(ty.from_le_bytes(&a.bytes[off..]))
    }

    pub fn store(&mut self, ptr: u64, ty: ScalarType, value: u64) -> Result<(), TrapKind> {
        let (id, off) = self.range(ptr, ty.size())?;
        let a = &mut self.allocs[id];
        a.bytes[off..off + ty.size()].copy_from_slice(&ty.to_le_bytes(value));
        if let Some(w) = &mut a.written {
            w[off..off + ty.size()].iter_mut().for_each(|b| *b = true);
        }
        Ok(())
    }
}

/// `ptr + index * size`; an offset leaving the 32-bit range yields a
/// pointer that faults on access.
pub(crate) fn gep(ptr: u64, size: u64, index: i64) -> u64 {
    let (id, off) = split(ptr);
    let new = (off as i128) + (index as i128) * (size as i128);
    if !(0..=0xFFFF_FFFF).contains(&new) {
        return make_ptr(id, 0xFFFF_FFFF);
    }
    make_ptr(id, new as u64)
}

/// Human-readable form of a pointer for traces.
pub(crate) fn show_ptr(ptr: u64) -> String {
    let (id, off) = split(ptr);
    format!("m{id}+{off}")
}
