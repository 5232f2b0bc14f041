use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// RAPL power domain. Declaration order is the column order of every log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DomainId {
    /// Whole package.
    Pkg,
    /// Cores.
    Pp0,
    /// Uncore / integrated graphics.
    Pp1,
    /// Memory.
    Dram,
}

impl DomainId {
    pub const ALL: [DomainId; 4] = [DomainId::Pkg, DomainId::Pp0, DomainId::Pp1, DomainId::Dram];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            DomainId::Pkg => "pkg",
            DomainId::Pp0 => "pp0",
            DomainId::Pp1 => "pp1",
            DomainId::Dram => "dram",
        }
    }

    /// Energy-status MSR holding this domain's counter.
    pub fn msr_address(self) -> u32 {
        match self {
            DomainId::Pkg => 0x611,
            DomainId::Pp0 => 0x639,
            DomainId::Pp1 => 0x641,
            DomainId::Dram => 0x619,
        }
    }
}

impl fmt::Display for DomainId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DomainId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pkg" | "package" => Ok(DomainId::Pkg),
            "pp0" | "core" => Ok(DomainId::Pp0),
            "pp1" | "uncore" => Ok(DomainId::Pp1),
            "dram" => Ok(DomainId::Dram),
            other => Err(format!("unknown RAPL domain `{other}`")),
        }
    }
}

/// Fixed-size map keyed by [`DomainId`]. Serializes as an object with only
/// the present domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de>"))]
pub struct DomainMap<T> {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pkg: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp0: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pp1: Option<T>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dram: Option<T>,
}

impl<T> Default for DomainMap<T> {
    fn default() -> Self {
        DomainMap { pkg: None, pp0: None, pp1: None, dram: None }
    }
}

impl<T> DomainMap<T> {
    pub fn new() -> Self {
        Self::default()
    }

    fn slot(&self, d: DomainId) -> &Option<T> {
        match d {
            DomainId::Pkg => &self.pkg,
            DomainId::Pp0 => &self.pp0,
            DomainId::Pp1 => &self.pp1,
            DomainId::Dram => &self.dram,
        }
    }

    fn slot_mut(&mut self, d: DomainId) -> &mut Option<T> {
        match d {
            DomainId::Pkg => &mut self.pkg,
            DomainId::Pp0 => &mut self.pp0,
            DomainId::Pp1 => &mut self.pp1,
            DomainId::Dram => &mut self.dram,
        }
    }

    pub fn get(&self, d: DomainId) -> Option<&T> {
        self.slot(d).as_ref()
    }

    pub fn get_mut(&mut self, d: DomainId) -> Option<&mut T> {
        self.slot_mut(d).as_mut()
    }

    pub fn insert(&mut self, d: DomainId, value: T) -> Option<T> {
        self.slot_mut(d).replace(value)
    }

    pub fn remove(&mut self, d: DomainId) -> Option<T> {
        self.slot_mut(d).take()
    }

    pub fn contains(&self, d: DomainId) -> bool {
        self.slot(d).is_some()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn len(&self) -> usize {
        self.iter().count()
    }

    /// Present entries in canonical domain order.
    pub fn iter(&self) -> impl Iterator<Item = (DomainId, &T)> + '_ {
        DomainId::ALL.into_iter().filter_map(move |d| self.get(d).map(|v| (d, v)))
    }

    pub fn domains(&self) -> impl Iterator<Item = DomainId> + '_ {
        self.iter().map(|(d, _)| d)
    }

    pub fn map<U>(&self, mut f: impl FnMut(DomainId, &T) -> U) -> DomainMap<U> {
        let mut out = DomainMap::new();
        for (d, v) in self.iter() {
            out.insert(d, f(d, v));
        }
        out
    }
}

impl<T> FromIterator<(DomainId, T)> for DomainMap<T> {
    fn from_iter<I: IntoIterator<Item = (DomainId, T)>>(iter: I) -> Self {
        let mut m = DomainMap::new();
        for (d, v) in iter {
            m.insert(d, v);
        }
        m
    }
}
