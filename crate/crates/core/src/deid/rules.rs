//! Declarative de-identification rule set.
//!
//! Rules are loaded from a versioned TOML document (see `rules/deid.toml` for
//! the shipped default) and compiled once. `to_toml_string` writes the same
//! document back, so a loaded rule set round-trips.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{DeidError, FindingCategory};
use crate::model::{DicomTag, ResourceKind};

pub const RULES_FORMAT_VERSION: u32 = 1;

const DEFAULT_RULES: &str = include_str!("../../rules/deid.toml");

/// Tags of the DICOM basic application-level confidentiality profile that this
/// engine knows how to treat. Configured DICOM tag rules must come from here.
pub const CONFIDENTIALITY_PROFILE_TAGS: &[&str] = &[
    "00080014", "00080050", "00080080", "00080081", "00080090", "00080092", "00080094", "00080096",
    "00081010", "00081030", "00081040", "00081048", "00081049", "00081050", "00081052", "00081060",
    "00081062", "00081070", "00081072", "00081080", "00081084", "00100010", "00100020", "00100021",
    "00100030", "00100032", "00100040", "00101000", "00101001", "00101005", "00101010", "00101020",
    "00101030", "00101040", "00101060", "00101080", "00101081", "00102150", "00102152", "00102154",
    "00102160", "00102180", "001021B0", "001021F0", "00104000", "00181000", "00181030", "00200010",
    "00321032", "00321033", "00380010", "00380300", "00380400", "00400006", "00401001", "00402016",
    "00402017", "40084114",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strictness {
    Strict,
    Standard,
}

/// What to do with an element an identifier rule covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleAction {
    Remove,
    Pseudonymize,
    GeneralizeAge,
}

/// Category assigned by an identifier rule. `Contact` resolves to phone or
/// email from the value itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleCategory {
    Name,
    MrnOrId,
    Address,
    Contact,
    Phone,
    Email,
}

impl RuleCategory {
    pub fn resolve(self, text: &str) -> FindingCategory {
        match self {
            RuleCategory::Name => FindingCategory::Name,
            RuleCategory::MrnOrId => FindingCategory::MrnOrId,
            RuleCategory::Address => FindingCategory::Address,
            RuleCategory::Phone => FindingCategory::Phone,
            RuleCategory::Email => FindingCategory::Email,
            RuleCategory::Contact if text.contains('@') => FindingCategory::Email,
            RuleCategory::Contact => FindingCategory::Phone,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct IdentifierRule {
    pub id: String,
    /// Resource kinds by name, or `*` for every FHIR kind.
    pub kinds: Vec<String>,
    pub path: String,
    pub category: RuleCategory,
    pub action: RuleAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AgeRule {
    pub id: String,
    pub kinds: Vec<String>,
    pub path: String,
    /// Accepted `unit`/`code` siblings; empty accepts any.
    #[serde(default)]
    pub units: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DicomTagRule {
    pub tag: DicomTag,
    pub action: RuleAction,
}

impl DicomTagRule {
    pub fn rule_id(&self) -> String {
        format!("dicom.{}", self.tag)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct DetectorRule {
    pub id: String,
    pub category: FindingCategory,
    pub pattern: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RuleSetDocument {
    pub version: u32,
    pub strictness: Strictness,
    /// Action for any attribute with value representation PN.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub person_name_vr: Option<RuleAction>,
    #[serde(default)]
    pub uid_tags: Vec<DicomTag>,
    #[serde(default)]
    pub name_dictionary: Vec<String>,
    /// Newline-separated names, resolved relative to the rules file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name_dictionary_path: Option<PathBuf>,
    #[serde(default)]
    pub identifier: Vec<IdentifierRule>,
    #[serde(default)]
    pub age: Vec<AgeRule>,
    #[serde(default)]
    pub dicom_tag: Vec<DicomTagRule>,
    #[serde(default)]
    pub detector: Vec<DetectorRule>,
}

#[derive(Debug, Clone)]
pub(crate) struct CompiledDetector {
    pub id: String,
    pub category: FindingCategory,
    pub regex: Regex,
}

/// A validated, compiled rule set.
#[derive(Debug, Clone)]
pub struct RuleSet {
    doc: RuleSetDocument,
    pub(crate) detectors: Vec<CompiledDetector>,
    pub(crate) dictionary: HashSet<String>,
    pub(crate) token_re: Regex,
    structural_ids: HashSet<String>,
}

impl PartialEq for RuleSet {
    fn eq(&self, other: &Self) -> bool {
        self.doc == other.doc && self.dictionary == other.dictionary
    }
}

pub const PERSON_NAME_RULE_ID: &str = "dicom.pn";
pub const STRICT_NARRATIVE_RULE_ID: &str = "strict.narrative";
pub const DICTIONARY_RULE_ID: &str = "dict.name";

fn kind_matches(kinds: &[String], kind: ResourceKind) -> bool {
    kinds.iter().any(|k| (k == "*" && kind.is_fhir()) || k == kind.as_str())
}

impl RuleSet {
    /// The rule set shipped with the gateway.
    pub fn standard() -> Self {
        Self::from_toml_str(DEFAULT_RULES, None).expect("shipped rule set is valid")
    }

    pub fn strict() -> Self {
        let mut doc = Self::standard().doc;
        doc.strictness = Strictness::Strict;
        Self::compile(doc, None).expect("shipped rule set is valid")
    }

    pub fn load(path: &Path) -> Result<Self, DeidError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| DeidError::InvalidRules(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self, DeidError> {
        let doc: RuleSetDocument = toml::from_str(text).map_err(|e| DeidError::InvalidRules(e.to_string()))?;
        Self::compile(doc, base_dir)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&self.doc).expect("rule documents serialize")
    }

    pub fn document(&self) -> &RuleSetDocument {
        &self.doc
    }

    pub fn compile(doc: RuleSetDocument, base_dir: Option<&Path>) -> Result<Self, DeidError> {
        if doc.version != RULES_FORMAT_VERSION {
            return Err(DeidError::InvalidRules(format!(
                "unsupported rules version {} (expected {RULES_FORMAT_VERSION})",
                doc.version
            )));
        }
        let mut ids = BTreeSet::new();
        let mut structural_ids = HashSet::new();
        let mut claim = |id: String| -> Result<String, DeidError> {
            if !ids.insert(id.clone()) {
                return Err(DeidError::InvalidRules(format!("duplicate rule id {id}")));
            }
            Ok(id)
        };
        for rule in &doc.identifier {
            structural_ids.insert(claim(rule.id.clone())?);
            if rule.action == RuleAction::GeneralizeAge {
                return Err(DeidError::InvalidRules(format!("{}: generalize-age needs an age rule", rule.id)));
            }
            check_kinds(&rule.id, &rule.kinds)?;
        }
        for rule in &doc.age {
            structural_ids.insert(claim(rule.id.clone())?);
            check_kinds(&rule.id, &rule.kinds)?;
        }
        for rule in &doc.dicom_tag {
            let tag = rule.tag.to_string();
            if !CONFIDENTIALITY_PROFILE_TAGS.contains(&tag.as_str()) {
                return Err(DeidError::InvalidRules(format!("tag {tag} is not in the confidentiality profile")));
            }
            structural_ids.insert(claim(rule.rule_id())?);
        }
        structural_ids.insert(claim(PERSON_NAME_RULE_ID.to_string())?);
        claim(STRICT_NARRATIVE_RULE_ID.to_string())?;
        claim(DICTIONARY_RULE_ID.to_string())?;
        let mut detectors = Vec::with_capacity(doc.detector.len());
        for d in &doc.detector {
            claim(d.id.clone())?;
            let regex = Regex::new(&d.pattern).map_err(|e| DeidError::InvalidRules(format!("{}: {e}", d.id)))?;
            detectors.push(CompiledDetector { id: d.id.clone(), category: d.category, regex });
        }

        let mut dictionary: HashSet<String> = doc.name_dictionary.iter().map(|n| n.to_lowercase()).collect();
        if let Some(rel) = &doc.name_dictionary_path {
            let path = match base_dir {
                Some(base) if rel.is_relative() => base.join(rel),
                _ => rel.clone(),
            };
            let text = std::fs::read_to_string(&path)
                .map_err(|e| DeidError::InvalidRules(format!("{}: {e}", path.display())))?;
            dictionary.extend(
                text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')).map(str::to_lowercase),
            );
        }

        Ok(RuleSet {
            doc,
            detectors,
            dictionary,
            token_re: Regex::new(r"\b[A-Z][a-z]+(?:-[A-Z][a-z]+)?\b").unwrap(),
            structural_ids,
        })
    }

    pub fn strictness(&self) -> Strictness {
        self.doc.strictness
    }

    /// True for findings an automatic action can fix.
    pub fn is_structural(&self, rule_id: &str) -> bool {
        self.structural_ids.contains(rule_id)
    }

    pub fn identifier_rules(&self, kind: ResourceKind) -> impl Iterator<Item = &IdentifierRule> {
        self.doc.identifier.iter().filter(move |r| kind_matches(&r.kinds, kind))
    }

    pub fn age_rules(&self, kind: ResourceKind) -> impl Iterator<Item = &AgeRule> {
        self.doc.age.iter().filter(move |r| kind_matches(&r.kinds, kind))
    }

    pub fn dicom_rule(&self, tag: DicomTag) -> Option<&DicomTagRule> {
        self.doc.dicom_tag.iter().find(|r| r.tag == tag)
    }

    pub fn person_name_action(&self) -> Option<RuleAction> {
        self.doc.person_name_vr
    }

    pub fn is_uid_tag(&self, tag: DicomTag) -> bool {
        self.doc.uid_tags.contains(&tag)
    }

    pub fn identifier_rule(&self, id: &str) -> Option<&IdentifierRule> {
        self.doc.identifier.iter().find(|r| r.id == id)
    }
}

fn check_kinds(id: &str, kinds: &[String]) -> Result<(), DeidError> {
    for k in kinds {
        if k != "*" && k.parse::<ResourceKind>().is_err() {
            return Err(DeidError::InvalidRules(format!("{id}: unknown kind {k}")));
        }
    }
    Ok(())
}

/// Matches `pattern` (dot segments, `*` = any one segment) against the leading
/// segments of `path`. Returns the matched prefix.
pub fn match_prefix<'p>(pattern: &str, path: &'p str) -> Option<&'p str> {
    let mut end = 0;
    let mut segs = path.split('.');
    for (i, pat) in pattern.split('.').enumerate() {
        let seg = segs.next()?;
        if pat != "*" && pat != seg {
            return None;
        }
        end += seg.len() + usize::from(i > 0);
    }
    Some(&path[..end])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_rules_load_and_round_trip() {
        let rules = RuleSet::standard();
        let again = RuleSet::from_toml_str(&rules.to_toml_string(), None).unwrap();
        assert_eq!(rules, again);
        assert_eq!(rules.strictness(), Strictness::Standard);
        assert!(rules.is_structural("fhir.name"));
        assert!(rules.is_structural("dicom.00100010"));
        assert!(!rules.is_structural("re.phone"));
    }

    #[test]
    fn prefix_matching() {
        assert_eq!(match_prefix("name", "name.0.family"), Some("name"));
        assert_eq!(match_prefix("identifier.*.value", "identifier.3.value"), Some("identifier.3.value"));
        assert_eq!(match_prefix("identifier.*.value", "identifier.3.system"), None);
        assert_eq!(match_prefix("name", "names.0"), None);
        assert_eq!(match_prefix("a.b", "a"), None);
    }

    #[test]
    fn rejects_bad_documents() {
        let base = RuleSet::standard().to_toml_string();
        let dup = format!("{base}\n[[detector]]\nid = \"re.phone\"\ncategory = \"phone\"\npattern = 'x'\n");
        assert!(matches!(RuleSet::from_toml_str(&dup, None), Err(DeidError::InvalidRules(_))));
        let bad_version = base.replacen("version = 1", "version = 9", 1);
        assert!(RuleSet::from_toml_str(&bad_version, None).is_err());
        let bad_tag = format!("{base}\n[[dicom-tag]]\ntag = \"7FE00010\"\naction = \"remove\"\n");
        assert!(RuleSet::from_toml_str(&bad_tag, None).is_err());
        let bad_regex = format!("{base}\n[[detector]]\nid = \"re.x\"\ncategory = \"phone\"\npattern = '('\n");
        assert!(RuleSet::from_toml_str(&bad_regex, None).is_err());
    }

    #[test]
    fn dictionary_file_is_merged() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("names.txt"), "# extra\nZebulon\n").unwrap();
        let text = format!("{}\nname-dictionary-path = \"names.txt\"\n", "version = 1\nstrictness = \"strict\"");
        let rules = RuleSet::from_toml_str(&text, Some(dir.path())).unwrap();
        assert!(rules.dictionary.contains("zebulon"));
    }
}
