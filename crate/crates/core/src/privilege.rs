use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Privilege {
    Ingest,
    Review,
    Reidentify,
    Export,
    ObjectRw,
}

impl Privilege {
    pub fn as_str(self) -> &'static str {
        match self {
            Privilege::Ingest => "ingest",
            Privilege::Review => "review",
            Privilege::Reidentify => "reidentify",
            Privilege::Export => "export",
            Privilege::ObjectRw => "object-rw",
        }
    }
}

impl fmt::Display for Privilege {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Privilege {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [Privilege::Ingest, Privilege::Review, Privilege::Reidentify, Privilege::Export, Privilege::ObjectRw]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown privilege {s:?}"))
    }
}

pub type PrivilegeSet = BTreeSet<Privilege>;
