//! Scalar value types shared by the source language and the IR.
use std::fmt;
use std::str::FromStr;

/// Integer types of the mini-language. All values are carried as 64-bit
/// patterns; the type decides width and signedness of each operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScalarType {
    I32,
    U32,
    I64,
    U64,
}

impl ScalarType {
    pub fn size(self) -> usize {
        match self {
            Self::I32 | Self::U32 => 4,
            Self::I64 | Self::U64 => 8,
        }
    }

    pub fn is_signed(self) -> bool {
        matches!(self, Self::I32 | Self::I64)
    }

    pub fn bits(self) -> u32 {
        self.size() as u32 * 8
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::I32 => "i32",
            Self::U32 => "u32",
            Self::I64 => "i64",
            Self::U64 => "u64",
        }
    }

    /// Canonicalizes a raw 64-bit pattern for this type: truncate to the
    /// width, then sign- or zero-extend back to 64 bits.
    pub fn normalize(self, raw: u64) -> u64 {
        match self {
            Self::I32 => raw as u32 as i32 as i64 as u64,
            Self::U32 => raw as u32 as u64,
            Self::I64 | Self::U64 => raw,
        }
    }

    /// Usual arithmetic conversion of two operand types.
    pub fn common(a: Self, b: Self) -> Self {
        match (a.size().cmp(&b.size()), a.is_signed(), b.is_signed()) {
            (std::cmp::Ordering::Greater, _, _) => a,
            (std::cmp::Ordering::Less, _, _) => b,
            (std::cmp::Ordering::Equal, true, true) => a,
            (std::cmp::Ordering::Equal, false, _) => a,
            (std::cmp::Ordering::Equal, true, false) => b,
        }
    }

    pub fn from_le_bytes(self, bytes: &[u8]) -> u64 {
        let mut buf = [0u8; 8];
        buf[..self.size()].copy_from_slice(&bytes[..self.size()]);
        self.normalize(u64::from_le_bytes(buf))
    }

    pub fn to_le_bytes(self, value: u64) -> Vec<u8> {
        value.to_le_bytes()[..self.size()].to_vec()
    }
}

impl fmt::Display for ScalarType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScalarType {
    type Err = ();

    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "i32" => Ok(Self::I32),
            "u32" => Ok(Self::U32),
            "i64" => Ok(Self::I64),
            "u64" => Ok(Self::U64),
            _ => Err(()),
        }
    }
}
