//! First-match, default-deny zone and flow policy.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SHIPPED_POLICY: &str = include_str!("../rules/zones.policy");
/// Trace entry recorded when no rule matched.
pub const DEFAULT_DENY: &str = "default-deny";

/// A closed enum with stable spellings, used for parsing and enumeration.
pub trait Domain: Copy + Eq + 'static {
    const ALL: &'static [Self];
    fn name(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL.iter().position(|v| *v == self).expect("value is in ALL")
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.name() == s)
    }
}

macro_rules! domain {
    ($(#[$m:meta])* $ty:ident { $($var:ident => $name:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        pub enum $ty { $(#[serde(rename = $name)] $var),+ }

        impl Domain for $ty {
            const ALL: &'static [Self] = &[$($ty::$var),+];
            fn name(self) -> &'static str {
                match self { $($ty::$var => $name),+ }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                <$ty as Domain>::parse(s).ok_or_else(|| {
                    let all: Vec<&str> = Self::ALL.iter().map(|v| v.name()).collect();
                    format!("unknown {} {s:?} (expected one of {})", stringify!($ty).to_lowercase(), all.join(", "))
                })
            }
        }
    };
}

domain!(Zone { HospitalNet => "hospital", Enclave => "enclave", Internet => "internet", LabVlan => "lab-vlan" });
domain!(Channel { Ssh => "ssh", Http => "http", Nfs => "nfs", Smb => "smb", S3 => "s3", Fhir => "fhir" });
domain!(PayloadClass {
    Phi => "phi",
    DeidVerified => "deid-verified",
    AnonymousResearch => "anonymous-research",
    Opaque => "opaque",
});
domain!(
    /// How a principal reaches the enclave: managed cluster (mode i),
    /// self-provisioned bare metal (mode ii), an internal service, or an
    /// outside party.
    Mode {
        ManagedCluster => "managed-cluster",
        SelfProvisioned => "self-provisioned",
        Service => "service",
        External => "external",
    }
);
domain!(Flag {
    ViaBastion => "via-bastion",
    ViaProxy => "via-proxy",
    ContainerUserNs => "container-userns",
    HostUidWrite => "host-uid-write",
});

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FlagSet(u8);

impl FlagSet {
    pub const EMPTY: FlagSet = FlagSet(0);

    pub fn from_bits(bits: u8) -> Self {
        FlagSet(bits & 0b1111)
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn with(mut self, flag: Flag) -> Self {
        self.0 |= 1 << flag.index();
        self
    }

    pub fn contains(self, flag: Flag) -> bool {
        self.0 & (1 << flag.index()) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = Flag> {
        Flag::ALL.iter().copied().filter(move |f| self.contains(*f))
    }

    /// All 16 subsets, in bit order.
    pub fn all_subsets() -> impl Iterator<Item = FlagSet> {
        (0u8..16).map(FlagSet)
    }
}

impl FromIterator<Flag> for FlagSet {
    fn from_iter<I: IntoIterator<Item = Flag>>(iter: I) -> Self {
        iter.into_iter().fold(FlagSet::EMPTY, FlagSet::with)
    }
}

impl Serialize for FlagSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for FlagSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        Ok(Vec::<Flag>::deserialize(d)?.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Principal {
    pub id: String,
    pub mfa_verified: bool,
    pub mode: Mode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowRequest {
    pub principal: Principal,
    pub from: Zone,
    pub to: Zone,
    pub channel: Channel,
    pub payload: PayloadClass,
    #[serde(default)]
    pub flags: FlagSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Allow,
    Deny,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Allow => "ALLOW",
            Verdict::Deny => "DENY",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub verdict: Verdict,
    /// Rule ids in evaluation order; the last one decided.
    pub trace: Vec<String>,
}

impl Decision {
    pub fn deciding_rule(&self) -> &str {
        self.trace.last().map(String::as_str).unwrap_or(DEFAULT_DENY)
    }
}

/// Request attribute a set term constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Field {
    From,
    To,
    Channel,
    Payload,
    Mode,
}

impl Field {
    const ALL: [Field; 5] = [Field::From, Field::To, Field::Channel, Field::Payload, Field::Mode];

    fn key(self) -> &'static str {
        match self {
            Field::From => "from",
            Field::To => "to",
            Field::Channel => "channel",
            Field::Payload => "payload",
            Field::Mode => "mode",
        }
    }

    fn names(self) -> Vec<&'static str> {
        fn names<T: Domain>() -> Vec<&'static str> {
            T::ALL.iter().map(|v| v.name()).collect()
        }
        match self {
            Field::From | Field::To => names::<Zone>(),
            Field::Channel => names::<Channel>(),
            Field::Payload => names::<PayloadClass>(),
            Field::Mode => names::<Mode>(),
        }
    }

    fn value_index(self, req: &FlowRequest) -> usize {
        match self {
            Field::From => req.from.index(),
            Field::To => req.to.index(),
            Field::Channel => req.channel.index(),
            Field::Payload => req.payload.index(),
            Field::Mode => req.principal.mode.index(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Term {
    /// The field's value is (or with `negate`, is not) one of `mask`'s members.
    In { field: Field, mask: u8, negate: bool },
    Mfa(bool),
    Flag { flag: Flag, present: bool },
    Any,
}

impl Term {
    pub fn holds(&self, req: &FlowRequest) -> bool {
        match self {
            Term::In { field, mask, negate } => (mask & (1 << field.value_index(req)) != 0) != *negate,
            Term::Mfa(v) => req.principal.mfa_verified == *v,
            Term::Flag { flag, present } => req.flags.contains(*flag) == *present,
            Term::Any => true,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::In { field, mask, negate } => {
                let values: Vec<&str> =
                    field.names().into_iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, n)| n).collect();
                write!(f, "{}{}{}", field.key(), if *negate { "!=" } else { "=" }, values.join(","))
            }
            Term::Mfa(v) => write!(f, "mfa={v}"),
            Term::Flag { flag, present } => write!(f, "flag{}{flag}", if *present { "=" } else { "!=" }),
            Term::Any => f.write_str("any"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rule {
    pub id: String,
    pub effect: Verdict,
    pub terms: Vec<Term>,
}

impl Rule {
    pub fn matches(&self, req: &FlowRequest) -> bool {
        self.terms.iter().all(|t| t.holds(req))
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}:", self.effect, self.id)?;
        for t in &self.terms {
            write!(f, " {t}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policy line {line}{}: {message}", rule.as_ref().map(|r| format!(" (rule {r})")).unwrap_or_default())]
pub struct PolicyParseError {
    pub line: usize,
    pub rule: Option<String>,
    pub message: String,
}

/// An ordered, validated rule list. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PolicySet {
    rules: Vec<Rule>,
}

fn parse_term(token: &str) -> Result<Term, String> {
    if token == "any" {
        return Ok(Term::Any);
    }
    let (key, negate, values) = if let Some((k, v)) = token.split_once("!=") {
        (k, true, v)
    } else if let Some((k, v)) = token.split_once('=') {
        (k, false, v)
    } else {
        return Err(format!("term {token:?} is not key=value"));
    };
    if values.is_empty() {
        return Err(format!("term {token:?} has no value"));
    }
    match key {
        "mfa" => {
            let v: bool = values.parse().map_err(|_| format!("mfa expects true or false, got {values:?}"))?;
            Ok(Term::Mfa(v != negate))
        }
        "flag" => {
            let flag: Flag = values.parse()?;
            Ok(Term::Flag { flag, present: !negate })
        }
        _ => {
            let field = Field::ALL.into_iter().find(|f| f.key() == key).ok_or_else(|| format!("unknown key {key:?}"))?;
            let names = field.names();
            let mut mask = 0u8;
            for v in values.split(',') {
                let i = names.iter().position(|n| *n == v).ok_or_else(|| {
                    format!("unknown {key} value {v:?} (expected one of {})", names.join(", "))
                })?;
                mask |= 1 << i;
            }
            Ok(Term::In { field, mask, negate })
        }
    }
}

fn valid_rule_id(id: &str) -> bool {
    !id.is_empty() && id != DEFAULT_DENY && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

impl PolicySet {
    pub fn empty() -> Self {
        PolicySet::default()
    }

    pub fn shipped() -> Self {
        Self::parse(SHIPPED_POLICY).expect("shipped policy is valid")
    }

    pub fn from_rules(rules: Vec<Rule>) -> Result<Self, PolicyParseError> {
        let mut seen = HashSet::new();
        for (i, r) in rules.iter().enumerate() {
            let err = |message: String| PolicyParseError { line: i + 1, rule: Some(r.id.clone()), message };
            if !valid_rule_id(&r.id) {
                return Err(err("invalid rule id".into()));
            }
            if !seen.insert(r.id.clone()) {
                return Err(err("duplicate rule id".into()));
            }
            if r.terms.is_empty() {
                return Err(err("rule has no terms".into()));
            }
        }
        Ok(PolicySet { rules })
    }

    /// Parses the line-oriented policy format.
    pub fn parse(text: &str) -> Result<Self, PolicyParseError> {
        let mut rules = Vec::new();
        let mut seen = HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = n + 1;
            let content = raw.split('#').next().unwrap_or_default().trim();
            if content.is_empty() {
                continue;
            }
            let err = |rule: Option<&str>, message: String| PolicyParseError { line, rule: rule.map(str::to_string), message };
            let (head, body) = content.split_once(':').ok_or_else(|| err(None, "expected `ALLOW|DENY <id>: <terms>`".into()))?;
            let mut words = head.split_whitespace();
            let effect = match words.next() {
                Some("ALLOW") => Verdict::Allow,
                Some("DENY") => Verdict::Deny,
                other => return Err(err(None, format!("expected ALLOW or DENY, found {:?}", other.unwrap_or("")))),
            };
            let id = words.next().ok_or_else(|| err(None, "missing rule id".into()))?;
            if words.next().is_some() || !valid_rule_id(id) {
                return Err(err(Some(id), "invalid rule id".into()));
            }
            if !seen.insert(id.to_string()) {
                return Err(err(Some(id), "duplicate rule id".into()));
            }
            let terms = body.split_whitespace().map(parse_term).collect::<Result<Vec<_>, _>>().map_err(|m| err(Some(id), m))?;
            if terms.is_empty() {
                return Err(err(Some(id), "rule has no terms (use `any` to match everything)".into()));
            }
            rules.push(Rule { id: id.to_string(), effect, terms });
        }
        Ok(PolicySet { rules })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, PolicyParseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyParseError { line: 0, rule: None, message: format!("{}: {e}", path.display()) })?;
        Self::parse(&text)
    }

    /// Canonical text form; parses back to an equal set.
    pub fn serialize(&self) -> String {
        self.rules.iter().map(|r| format!("{r}\n")).collect()
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn check_flow(&self, req: &FlowRequest) -> Decision {
        let mut trace = Vec::new();
        for rule in &self.rules {
            trace.push(rule.id.clone());
            if rule.matches(req) {
                return Decision { verdict: rule.effect, trace };
            }
        }
        trace.push(DEFAULT_DENY.to_string());
        Decision { verdict: Verdict::Deny, trace }
    }

    /// Re-evaluates a decision's trace against this set and reports whether it
    /// reproduces the verdict.
    pub fn replay(&self, req: &FlowRequest, decision: &Decision) -> bool {
        let (decider, earlier) = decision.trace.split_last().expect("traces are never empty");
        let earlier_miss = earlier.iter().all(|id| self.rules.iter().any(|r| &r.id == id && !r.matches(req)));
        let decided = if decider == DEFAULT_DENY {
            decision.verdict == Verdict::Deny && earlier.len() == self.rules.len()
        } else {
            self.rules.iter().any(|r| &r.id == decider && r.matches(req) && r.effect == decision.verdict)
        };
        earlier_miss && decided
    }

    /// One row per point of the request domain, in a fixed nesting order:
    /// from, to, channel, payload, mode, mfa, flag subset.
    pub fn enumerate_matrix(&self) -> Vec<MatrixRow> {
        let mut rows = Vec::with_capacity(MATRIX_ROWS);
        for &from in Zone::ALL {
            for &to in Zone::ALL {
                for &channel in Channel::ALL {
                    for &payload in PayloadClass::ALL {
                        for &mode in Mode::ALL {
                            for mfa in [false, true] {
                                for flags in FlagSet::all_subsets() {
                                    let req = FlowRequest {
                                        principal: Principal { id: "matrix".into(), mfa_verified: mfa, mode },
                                        from,
                                        to,
                                        channel,
                                        payload,
                                        flags,
                                    };
                                    let d = self.check_flow(&req);
                                    rows.push(MatrixRow {
                                        from,
                                        to,
                                        channel,
                                        payload,
                                        mode,
                                        mfa,
                                        flags,
                                        verdict: d.verdict,
                                        rule: d.deciding_rule().to_string(),
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        rows
    }
}

pub const MATRIX_ROWS: usize = 4 * 4 * 6 * 4 * 4 * 2 * 16;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub from: Zone,
    pub to: Zone,
    pub channel: Channel,
    pub payload: PayloadClass,
    pub mode: Mode,
    pub mfa: bool,
    pub flags: FlagSet,
    pub verdict: Verdict,
    pub rule: String,
}

impl MatrixRow {
    pub fn request(&self) -> FlowRequest {
        FlowRequest {
            principal: Principal { id: "matrix".into(), mfa_verified: self.mfa, mode: self.mode },
            from: self.from,
            to: self.to,
            channel: self.channel,
            payload: self.payload,
            flags: self.flags,
        }
    }
}
