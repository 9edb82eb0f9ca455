//! PHI detection and de-identification.
//!
//! [`scan`] reports findings. A finding raised by an identifier, age or DICOM
//! tag rule is *structural*: [`deidentify`] knows how to fix it. Anything a
//! regex detector or the name dictionary raises is not, and sends the resource
//! to quarantine.

pub mod dates;
pub mod rules;
mod scan;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use dates::{derive_offset, shift_date, PatientOffset};
pub use rules::{RuleAction, RuleSet, RuleSetDocument, Strictness};

use crate::model::{
    from_json_value, is_index_segment, last_segment, serialize_resource, tags, DateTimeValue, ElementValue, ModelError,
    Resource, ResourceKind,
};
use crate::quarantine::QuarantineTicket;
use crate::vault::{is_pseudonym, pseudonym_to_uid, PseudonymVault, Scope};
use scan::{dicom_age_years, innermost_tag, sort_findings, Coverage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FindingCategory {
    Name,
    MrnOrId,
    Address,
    Phone,
    Email,
    Date,
    AgeOver89,
    FreeTextHit,
    DicomIdentityTag,
}

/// One detected PHI element. `span` is a byte range within the element's text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Finding {
    pub path: String,
    pub category: FindingCategory,
    pub span: (usize, usize),
    pub detector: String,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeidError {
    #[error("invalid rule set: {0}")]
    InvalidRules(String),
    #[error("vault key must be 32 bytes, got {0}")]
    BadKeyLength(usize),
    #[error("pseudonym vault unavailable: {0}")]
    VaultUnavailable(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AppliedAction {
    Removed,
    Pseudonymized,
    Generalized,
    DateShifted,
    DateRemoved,
    UidRemapped,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Applied {
    pub path: String,
    pub action: AppliedAction,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DeidOutcome {
    Cleared { resource: Resource, applied: Vec<Applied> },
    Quarantined { ticket: Box<QuarantineTicket> },
}

impl DeidOutcome {
    pub fn is_cleared(&self) -> bool {
        matches!(self, DeidOutcome::Cleared { .. })
    }
}

/// Every finding in `resource`, sorted by path then span.
pub fn scan(resource: &Resource, rules: &RuleSet) -> Vec<Finding> {
    let mut findings = if scan::is_bundle(resource) {
        scan::scan_bundle(resource, rules)
    } else {
        scan::scan_single(resource, rules)
    };
    sort_findings(&mut findings);
    findings
}

/// Findings no automatic action can fix.
pub fn blocking_findings(resource: &Resource, rules: &RuleSet) -> Vec<Finding> {
    scan(resource, rules).into_iter().filter(|f| !rules.is_structural(&f.detector)).collect()
}

pub fn deidentify(resource: &Resource, rules: &RuleSet, vault: &PseudonymVault) -> Result<DeidOutcome, DeidError> {
    match resource.kind {
        ResourceKind::DicomStudyMeta => deidentify_dicom(resource, rules, vault),
        ResourceKind::Bundle => deidentify_bundle(resource, rules, vault),
        _ => deidentify_fhir(resource, rules, vault),
    }
}

fn quarantine(original: &Resource, findings: Vec<Finding>) -> DeidOutcome {
    DeidOutcome::Quarantined { ticket: Box::new(QuarantineTicket::new(original.clone(), findings)) }
}

/// Rescan gate shared by every path: a cleared result must scan clean.
fn finish(original: &Resource, resource: Resource, applied: Vec<Applied>, rules: &RuleSet) -> DeidOutcome {
    let leftover = scan(&resource, rules);
    if leftover.is_empty() {
        DeidOutcome::Cleared { resource, applied }
    } else {
        quarantine(original, leftover)
    }
}

struct Pseudonymizer<'a> {
    vault: &'a PseudonymVault,
}

impl Pseudonymizer<'_> {
    fn get(&self, source: &str, scope: Scope) -> Result<String, DeidError> {
        if is_pseudonym(source) {
            return Ok(source.to_string());
        }
        self.vault.get_or_create(source, scope).map_err(|e| DeidError::VaultUnavailable(e.to_string()))
    }

    /// Rewrites `Kind/id` references. Patient references map into the patient
    /// scope so they line up with the pseudonymized Patient.id.
    fn reference(&self, reference: &str) -> Result<String, DeidError> {
        let mut parts = reference.rsplitn(3, '/');
        let id = parts.next().unwrap_or_default();
        let kind = parts.next().filter(|k| {
            k.starts_with(|c: char| c.is_ascii_uppercase()) && k.chars().all(|c| c.is_ascii_alphanumeric())
        });
        match kind {
            Some(_) if is_pseudonym(id) => Ok(reference.to_string()),
            Some("Patient") if !id.is_empty() => Ok(format!("Patient/{}", self.get(id, Scope::PatientId)?)),
            Some(k) if !id.is_empty() => Ok(format!("{k}/{}", self.get(&format!("{k}/{id}"), Scope::ResourceId)?)),
            _ => self.get(reference, Scope::ResourceId),
        }
    }

    fn resource_id(&self, kind: ResourceKind, id: &str) -> Result<String, DeidError> {
        if id.is_empty() {
            return Ok(String::new());
        }
        match kind {
            ResourceKind::Patient => self.get(id, Scope::PatientId),
            _ => self.get(&format!("{kind}/{id}"), Scope::ResourceId),
        }
    }
}

/// Source id of the patient a FHIR resource belongs to.
pub fn patient_anchor(resource: &Resource) -> Option<String> {
    if resource.kind == ResourceKind::Patient {
        return (!resource.id.is_empty()).then(|| resource.id.clone());
    }
    if resource.kind == ResourceKind::DicomStudyMeta {
        return resource.dicom_string(tags::PATIENT_ID).filter(|s| !s.is_empty()).map(str::to_string);
    }
    ["subject.reference", "patient.reference"].iter().find_map(|p| {
        let r = resource.element_at(p)?.as_str()?;
        let id = r.strip_prefix("Patient/")?;
        (!id.is_empty() && !id.contains('/')).then(|| id.to_string())
    })
}

/// Orders paths so that higher array indices come first, keeping earlier
/// removals from shifting later ones.
fn numeric_aware_desc(a: &str, b: &str) -> std::cmp::Ordering {
    let key = |p: &str| -> Vec<(u8, u64, String)> {
        p.split('.')
            .map(|s| if is_index_segment(s) { (0, s.parse().unwrap_or(0), String::new()) } else { (1, 0, s.to_string()) })
            .collect()
    };
    key(b).cmp(&key(a))
}

/// Removes the subtrees at `roots` and compacts array slots they empty.
fn remove_roots(resource: &mut Resource, roots: BTreeSet<String>, applied: &mut Vec<Applied>) {
    let mut roots: Vec<String> = roots.into_iter().collect();
    roots.sort_by(|a, b| numeric_aware_desc(a, b));
    for root in roots {
        if resource.remove_subtree(&root).is_empty() {
            continue;
        }
        let mut cur = root.as_str();
        while let Some((parent, _)) = cur.rsplit_once('.') {
            if is_index_segment(last_segment(parent)) && resource.paths_under(parent).is_empty() {
                resource.remove_subtree(parent);
            }
            cur = parent;
        }
        applied.push(Applied { path: root, action: AppliedAction::Removed });
    }
}

fn shift_or_drop(
    resource: &mut Resource,
    offset: Option<&PatientOffset>,
    dicom_datetimes: &[String],
    applied: &mut Vec<Applied>,
) {
    let dated: Vec<String> = resource
        .elements()
        .filter(|(p, v)| {
            matches!(v, ElementValue::Date(_) | ElementValue::DateTime(_)) || dicom_datetimes.iter().any(|d| d == p)
        })
        .map(|(p, _)| p.to_string())
        .collect();
    let mut drop = BTreeSet::new();
    for path in dated {
        let Some(offset) = offset else {
            drop.insert(path);
            continue;
        };
        let value = resource.element_at(&path).cloned().expect("path listed above");
        let shifted = match &value {
            ElementValue::String(s) => shift_dicom_datetime(s, offset).map(ElementValue::String),
            other => Some(shift_date(other, offset)),
        };
        match shifted {
            Some(v) => {
                resource.replace(&path, v);
                applied.push(Applied { path, action: AppliedAction::DateShifted });
            }
            None => {
                drop.insert(path);
            }
        }
    }
    let mut removed = Vec::new();
    remove_roots(resource, drop, &mut removed);
    applied.extend(removed.into_iter().map(|a| Applied { path: a.path, action: AppliedAction::DateRemoved }));
}

/// Shifts the `YYYYMMDD` head of a DICOM DT value, keeping the rest.
fn shift_dicom_datetime(s: &str, offset: &PatientOffset) -> Option<String> {
    let head = s.get(..8)?;
    let date = chrono::NaiveDate::parse_from_str(head, "%Y%m%d").ok()?;
    let shifted = date + chrono::Duration::days(offset.offset_days);
    Some(format!("{}{}", shifted.format("%Y%m%d"), &s[8..]))
}

fn deidentify_fhir(resource: &Resource, rules: &RuleSet, vault: &PseudonymVault) -> Result<DeidOutcome, DeidError> {
    let blocking = blocking_findings(resource, rules);
    if !blocking.is_empty() {
        return Ok(quarantine(resource, blocking));
    }
    let psn = Pseudonymizer { vault };
    let anchor = patient_anchor(resource);
    let offset = anchor.as_deref().map(|a| derive_offset(a, vault.key().as_bytes())).transpose()?;
    let mut out = resource.clone();
    let mut applied = Vec::new();

    let coverage = scan::fhir_coverage(resource, rules);
    let mut removals = BTreeSet::new();
    for (path, c) in &coverage {
        match c.action {
            RuleAction::Remove => {
                removals.insert(c.root.clone());
            }
            RuleAction::Pseudonymize => {
                let Some(text) = out.element_at(path).and_then(ElementValue::as_str).map(str::to_string) else {
                    removals.insert(path.clone());
                    continue;
                };
                out.replace(path, ElementValue::String(psn.get(&text, Scope::PatientId)?));
                applied.push(Applied { path: path.clone(), action: AppliedAction::Pseudonymized });
            }
            RuleAction::GeneralizeAge if c.finding => {
                out.replace(path, ElementValue::String("90+".into()));
                applied.push(Applied { path: path.clone(), action: AppliedAction::Generalized });
            }
            RuleAction::GeneralizeAge => {}
        }
    }
    remove_roots(&mut out, removals, &mut applied);
    shift_or_drop(&mut out, offset.as_ref(), &[], &mut applied);

    let links: Vec<(String, String)> = out
        .elements()
        .filter(|(p, _)| matches!(last_segment(p), "reference" | "fullUrl"))
        .filter_map(|(p, v)| Some((p.to_string(), v.as_str()?.to_string())))
        .collect();
    for (path, value) in links {
        let new = if last_segment(&path) == "reference" {
            if value.starts_with('#') {
                continue;
            }
            psn.reference(&value)?
        } else {
            psn.get(&value, Scope::ResourceId)?
        };
        if new != value {
            out.replace(&path, ElementValue::String(new));
            applied.push(Applied { path, action: AppliedAction::Pseudonymized });
        }
    }
    if !out.id.is_empty() {
        out.id = psn.resource_id(out.kind, &out.id)?;
        applied.push(Applied { path: "id".into(), action: AppliedAction::Pseudonymized });
    }
    Ok(finish(resource, out, applied, rules))
}

/// De-identifies DICOMweb study metadata.
pub fn deidentify_dicom(meta: &Resource, rules: &RuleSet, vault: &PseudonymVault) -> Result<DeidOutcome, DeidError> {
    if meta.kind != ResourceKind::DicomStudyMeta {
        return Err(DeidError::Model(ModelError::UnsupportedKind(format!("{} is not DICOM metadata", meta.kind))));
    }
    let blocking = blocking_findings(meta, rules);
    if !blocking.is_empty() {
        return Ok(quarantine(meta, blocking));
    }
    let psn = Pseudonymizer { vault };
    let anchor = patient_anchor(meta);
    let offset = anchor.as_deref().map(|a| derive_offset(a, vault.key().as_bytes())).transpose()?;
    let mut out = meta.clone();
    let mut applied = Vec::new();

    let coverage = scan::dicom_coverage(meta, rules);
    let mut removals = BTreeSet::new();
    let covered = |p: &str| coverage.contains_key(p);
    for (path, c) in &coverage {
        let Coverage { root, action, .. } = c;
        match action {
            RuleAction::Remove => {
                removals.insert(root.clone());
            }
            RuleAction::Pseudonymize => {
                let Some(text) = out.element_at(path).and_then(ElementValue::as_str).map(str::to_string) else {
                    continue;
                };
                let tag = innermost_tag(path).map(|(t, _)| t);
                let pseudonym = if tag == Some(tags::PATIENT_ID) {
                    psn.get(&text, Scope::PatientId)?
                } else {
                    psn.get(&format!("{}:{text}", tag.map(|t| t.to_string()).unwrap_or_default()), Scope::ResourceId)?
                };
                out.replace(path, ElementValue::String(pseudonym));
                applied.push(Applied { path: path.clone(), action: AppliedAction::Pseudonymized });
            }
            RuleAction::GeneralizeAge => {
                let over = out.element_at(path).and_then(ElementValue::as_str).and_then(dicom_age_years).is_some_and(|y| y > 89);
                if over {
                    out.replace(path, ElementValue::String("90+".into()));
                    applied.push(Applied { path: path.clone(), action: AppliedAction::Generalized });
                }
            }
        }
    }

    let mut uids = Vec::new();
    let mut datetimes = Vec::new();
    for (path, value) in meta.elements() {
        if last_segment(path) == "vr" || covered(path) {
            continue;
        }
        let Some((tag, _)) = innermost_tag(path) else { continue };
        let Some(text) = value.as_str() else { continue };
        if rules.is_uid_tag(tag) {
            uids.push((path.to_string(), text.to_string()));
        } else if meta.dicom_vr(path) == Some("DT") {
            datetimes.push(path.to_string());
        }
    }
    for (path, uid) in uids {
        let pseudonym = psn.get(&uid, Scope::DicomUid)?;
        let remapped = pseudonym_to_uid(&pseudonym).expect("vault pseudonyms are well formed");
        out.replace(&path, ElementValue::String(remapped));
        applied.push(Applied { path, action: AppliedAction::UidRemapped });
    }
    remove_roots(&mut out, removals, &mut applied);
    datetimes.retain(|p| out.element_at(p).is_some());
    shift_or_drop(&mut out, offset.as_ref(), &datetimes, &mut applied);
    out.refresh_dicom_id();
    Ok(finish(meta, out, applied, rules))
}

/// Processes each entry and reassembles a bundle of the cleared resources. Any
/// quarantined entry quarantines the whole bundle.
fn deidentify_bundle(bundle: &Resource, rules: &RuleSet, vault: &PseudonymVault) -> Result<DeidOutcome, DeidError> {
    let entries = bundle.split_bundle()?;
    let mut cleared = Vec::with_capacity(entries.len());
    let mut applied = Vec::new();
    let mut held = Vec::new();
    for (i, entry) in entries.iter().enumerate() {
        let prefix = scan::entry_prefix(i);
        match deidentify(entry, rules, vault)? {
            DeidOutcome::Cleared { resource, applied: a } => {
                applied.extend(a.into_iter().map(|x| Applied { path: format!("{prefix}{}", x.path), action: x.action }));
                cleared.push(resource);
            }
            DeidOutcome::Quarantined { ticket } => {
                held.extend(ticket.findings.iter().cloned().map(|mut f| {
                    f.path.insert_str(0, &prefix);
                    f
                }));
            }
        }
    }
    if !held.is_empty() {
        sort_findings(&mut held);
        return Ok(quarantine(bundle, held));
    }
    let psn = Pseudonymizer { vault };
    let out = assemble_bundle(bundle, &psn.resource_id(ResourceKind::Bundle, &bundle.id)?, &cleared)?;
    Ok(finish(bundle, out, applied, rules))
}

/// Builds `{resourceType: Bundle, id, type, entry: [{resource}]}`.
pub fn assemble_bundle(original: &Resource, id: &str, entries: &[Resource]) -> Result<Resource, DeidError> {
    let mut doc = json!({ "resourceType": "Bundle" });
    if !id.is_empty() {
        doc["id"] = Value::String(id.to_string());
    }
    if let Some(t) = original.element_at("type").and_then(ElementValue::as_str) {
        doc["type"] = Value::String(t.to_string());
    }
    if !entries.is_empty() {
        let items: Vec<Value> = entries
            .iter()
            .map(|r| {
                let v: Value = serde_json::from_str(&serialize_resource(r)).expect("canonical JSON parses");
                json!({ "resource": v })
            })
            .collect();
        doc["entry"] = Value::Array(items);
    }
    Ok(from_json_value(doc, Some(ResourceKind::Bundle))?)
}

/// Parses a date string the reviewer wants shifted into a typed date.
pub fn parse_date_like(s: &str) -> Option<ElementValue> {
    if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y-%m-%d") {
        return Some(ElementValue::Date(d));
    }
    if let Ok(d) = chrono::NaiveDate::parse_from_str(s, "%Y%m%d") {
        return Some(ElementValue::Date(d));
    }
    DateTimeValue::parse(s).map(ElementValue::DateTime)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_resource;
    use crate::vault::{derive_pseudonym, VaultKey};

    fn vault() -> PseudonymVault {
        PseudonymVault::in_memory(VaultKey::from_slice(&[0u8; 32]).unwrap())
    }

    fn fhir(text: &str) -> Resource {
        parse_resource(text, None).unwrap()
    }

    fn cleared(outcome: DeidOutcome) -> Resource {
        match outcome {
            DeidOutcome::Cleared { resource, .. } => resource,
            DeidOutcome::Quarantined { ticket } => panic!("quarantined: {:?}", ticket.findings),
        }
    }

    #[test]
    fn coded_observation_scans_clean() {
        let r = fhir(
            r#"{"resourceType":"Observation","id":"o1","status":"final",
                "code":{"coding":[{"system":"http://loinc.org","code":"4548-4"}]},
                "valueQuantity":{"value":7.2,"unit":"%"}}"#,
        );
        assert_eq!(scan(&r, &RuleSet::standard()), vec![]);
    }

    #[test]
    fn planted_family_name() {
        let r = fhir(r#"{"resourceType":"Patient","id":"p1","name":[{"family":"Doe"}]}"#);
        let f = scan(&r, &RuleSet::standard());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].path, "name.0.family");
        assert_eq!(f[0].category, FindingCategory::Name);
        assert_eq!(f[0].span, (0, 3));
    }

    #[test]
    fn narrative_example_has_three_findings() {
        let text = "Seen by Dr. Smith on 01/02/2020, call 0201-555-0100";
        let r = fhir(&serde_json::json!({"resourceType":"DiagnosticReport","id":"d1","conclusion":text}).to_string());
        let f = scan(&r, &RuleSet::standard());
        let got: Vec<_> = f.iter().map(|f| (f.category, &text[f.span.0..f.span.1])).collect();
        assert_eq!(
            got,
            vec![
                (FindingCategory::Name, "Dr. Smith"),
                (FindingCategory::Date, "01/02/2020"),
                (FindingCategory::Phone, "0201-555-0100"),
            ]
        );
    }

    #[test]
    fn strict_mode_flags_clean_narrative() {
        let r = fhir(r#"{"resourceType":"DiagnosticReport","id":"d1","conclusion":"no abnormality"}"#);
        assert!(scan(&r, &RuleSet::standard()).is_empty());
        let f = scan(&r, &RuleSet::strict());
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].category, FindingCategory::FreeTextHit);
        assert!(!deidentify(&r, &RuleSet::strict(), &vault()).unwrap().is_cleared());
    }

    #[test]
    fn minimal_patient_only_changes_id() {
        let v = vault();
        let r = fhir(r#"{"resourceType":"Patient","id":"p1"}"#);
        let out = cleared(deidentify(&r, &RuleSet::standard(), &v).unwrap());
        assert_eq!(out.id, derive_pseudonym(v.key(), Scope::PatientId, "p1"));
        assert!(out.is_empty());
    }

    #[test]
    fn patient_name_removed_birthdate_shifted() {
        let v = vault();
        let rules = RuleSet::standard();
        let r = fhir(r#"{"resourceType":"Patient","id":"P123","name":[{"family":"Doe","given":["John"]}],"birthDate":"1970-01-01","gender":"male"}"#);
        let out = cleared(deidentify(&r, &rules, &v).unwrap());
        assert_eq!(out.element_at("name.0.family"), None);
        // offset for P123 under the zero key is -178
        assert_eq!(out.element_at("birthDate"), Some(&parse_date_like("1969-07-07").unwrap()));
        assert_eq!(out.element_at("gender"), Some(&ElementValue::String("male".into())));
        assert!(scan(&out, &rules).is_empty());
    }

    #[test]
    fn narrative_phone_quarantines_with_one_finding() {
        let r = fhir(r#"{"resourceType":"DiagnosticReport","id":"d1","status":"final","conclusion":"Callback requested at 0201-555-0100."}"#);
        match deidentify(&r, &RuleSet::standard(), &vault()).unwrap() {
            DeidOutcome::Quarantined { ticket } => {
                assert_eq!(ticket.findings.len(), 1);
                assert_eq!(ticket.findings[0].category, FindingCategory::Phone);
                assert_eq!(ticket.original, r);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn references_identifiers_displays_and_ages() {
        let v = vault();
        let rules = RuleSet::standard();
        let r = fhir(
            r#"{"resourceType":"Observation","id":"o1","subject":{"reference":"Patient/P123","display":"John Doe"},
                "identifier":[{"system":"urn:mrn","value":"A-77"}],
                "performer":[{"display":"Jane Roe"},{"reference":"Practitioner/pr1"}],
                "valueQuantity":{"value":93,"unit":"a"},"effectiveDateTime":"2021-05-01T10:30:00Z"}"#,
        );
        let out = cleared(deidentify(&r, &rules, &v).unwrap());
        let p = derive_pseudonym(v.key(), Scope::PatientId, "P123");
        assert_eq!(out.element_at("subject.reference").unwrap().as_str(), Some(format!("Patient/{p}").as_str()));
        assert_eq!(out.element_at("subject.display"), None);
        assert_eq!(out.element_at("performer.0.reference").unwrap().as_str().map(|s| s.starts_with("Practitioner/PSN-")), Some(true));
        assert_eq!(out.element_at("performer.1.reference"), None);
        assert_eq!(out.element_at("valueQuantity.value"), Some(&ElementValue::String("90+".into())));
        assert!(out.element_at("identifier.0.value").unwrap().as_str().is_some_and(is_pseudonym));
        assert_eq!(out.element_at("effectiveDateTime").unwrap().text(), "2020-11-04T10:30:00Z");
        assert_eq!(out.id, derive_pseudonym(v.key(), Scope::ResourceId, "Observation/o1"));
        assert!(scan(&out, &rules).is_empty());
    }

    #[test]
    fn dates_without_patient_are_dropped() {
        let r = fhir(r#"{"resourceType":"Encounter","id":"e1","period":{"start":"2020-01-01"}}"#);
        let out = cleared(deidentify(&r, &RuleSet::standard(), &vault()).unwrap());
        assert_eq!(out.element_at("period.start"), None);
    }

    fn dicom(text: &str) -> Resource {
        parse_resource(text, Some(ResourceKind::DicomStudyMeta)).unwrap()
    }

    #[test]
    fn dicom_modality_only_is_unchanged() {
        let r = dicom(r#"{"00080060":{"vr":"CS","Value":["MR"]}}"#);
        let out = cleared(deidentify(&r, &RuleSet::standard(), &vault()).unwrap());
        assert_eq!(out, r);
    }

    #[test]
    fn dicom_identity_tags_and_uids() {
        let v = vault();
        let rules = RuleSet::standard();
        let text = r#"{"00100010":{"vr":"PN","Value":[{"Alphabetic":"DOE^JOHN"}]},
            "00100020":{"vr":"LO","Value":["P123"]},
            "00100030":{"vr":"DA","Value":["19700101"]},
            "00080020":{"vr":"DA","Value":["20200301"]},
            "00080050":{"vr":"SH","Value":["ACC1"]},
            "00101010":{"vr":"AS","Value":["093Y"]},
            "0020000D":{"vr":"UI","Value":["1.2.840.1"]},
            "00080060":{"vr":"CS","Value":["CT"]}}"#;
        let r = dicom(text);
        assert_eq!(scan(&r, &rules).len(), 5);
        let out = cleared(deidentify(&r, &rules, &v).unwrap());
        assert_eq!(out.element_at("00100010.Value.0.Alphabetic"), None);
        assert_eq!(out.element_at("00100030.Value.0"), None);
        assert_eq!(
            out.element_at("00100020.Value.0").unwrap().as_str(),
            Some(derive_pseudonym(v.key(), Scope::PatientId, "P123").as_str())
        );
        assert_eq!(out.element_at("00101010.Value.0").unwrap().as_str(), Some("90+"));
        assert_eq!(out.element_at("00080020.Value.0"), Some(&parse_date_like("20190905").unwrap()));
        assert!(out.id.starts_with("2.25."));
        assert!(scan(&out, &rules).is_empty());
        let again = cleared(deidentify(&r, &rules, &v).unwrap());
        assert_eq!(again.id, out.id);
    }

    #[test]
    fn bundle_is_processed_per_entry() {
        let v = vault();
        let rules = RuleSet::standard();
        let b = fhir(
            r#"{"resourceType":"Bundle","id":"b1","type":"collection","entry":[
                {"fullUrl":"urn:uuid:1","resource":{"resourceType":"Patient","id":"p1","name":[{"family":"Doe"}]}},
                {"resource":{"resourceType":"Observation","id":"o1","subject":{"reference":"Patient/p1"},"status":"final"}}]}"#,
        );
        assert_eq!(scan(&b, &rules)[0].path, "entry.0.resource.name.0.family");
        let out = cleared(deidentify(&b, &rules, &v).unwrap());
        let parts = out.split_bundle().unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].id, derive_pseudonym(v.key(), Scope::PatientId, "p1"));

        let bad = fhir(
            r#"{"resourceType":"Bundle","type":"collection","entry":[
                {"resource":{"resourceType":"DiagnosticReport","id":"d","conclusion":"Mr. Miller called"}}]}"#,
        );
        match deidentify(&bad, &rules, &v).unwrap() {
            DeidOutcome::Quarantined { ticket } => assert_eq!(ticket.findings[0].path, "entry.0.resource.conclusion"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn failing_vault_is_an_error() {
        let (sink, switch) = crate::storage::SwitchableSink::new(crate::storage::MemorySink);
        let v = PseudonymVault::with_sink(VaultKey::from_slice(&[0u8; 32]).unwrap(), Box::new(sink));
        switch.store(true, std::sync::atomic::Ordering::SeqCst);
        let r = fhir(r#"{"resourceType":"Patient","id":"p1"}"#);
        assert!(matches!(deidentify(&r, &RuleSet::standard(), &v), Err(DeidError::VaultUnavailable(_))));
    }
}
