use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The four per-second labels the classifiers predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum ApneaClass {
    Normal = 0,
    Osa = 1,
    Csa = 2,
    Msa = 3,
}

pub const NUM_CLASSES: usize = 4;

impl ApneaClass {
    pub const ALL: [ApneaClass; NUM_CLASSES] = [
        ApneaClass::Normal,
        ApneaClass::Osa,
        ApneaClass::Csa,
        ApneaClass::Msa,
    ];

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or(Error::InvalidLabel(i.min(u8::MAX as usize) as u8))
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        Self::ALL
            .get(b as usize)
            .copied()
            .ok_or(Error::InvalidLabel(b))
    }

    pub fn name(self) -> &'static str {
        match self {
            ApneaClass::Normal => "Normal",
            ApneaClass::Osa => "OSA",
            ApneaClass::Csa => "CSA",
            ApneaClass::Msa => "MSA",
        }
    }
}

impl fmt::Display for ApneaClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ApneaClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "NORMAL" | "N" => Ok(ApneaClass::Normal),
            "OSA" => Ok(ApneaClass::Osa),
            "CSA" => Ok(ApneaClass::Csa),
            "MSA" => Ok(ApneaClass::Msa),
            other => Err(Error::InvalidArgument(format!("unknown class `{other}`"))),
        }
    }
}

/// Respiratory event subtype. Hypopneas are folded into these at parse time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    Osa,
    Csa,
    Msa,
}

impl EventKind {
    pub fn class(self) -> ApneaClass {
        match self {
            EventKind::Osa => ApneaClass::Osa,
            EventKind::Csa => ApneaClass::Csa,
            EventKind::Msa => ApneaClass::Msa,
        }
    }

    pub fn name(self) -> &'static str {
        self.class().name()
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.parse::<ApneaClass>()? {
            ApneaClass::Osa => Ok(EventKind::Osa),
            ApneaClass::Csa => Ok(EventKind::Csa),
            ApneaClass::Msa => Ok(EventKind::Msa),
            ApneaClass::Normal => Err(Error::InvalidArgument(
                "Normal is not a respiratory event kind".into(),
            )),
        }
    }
}
