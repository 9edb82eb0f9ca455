use std::collections::BTreeMap;

use super::rules::{match_prefix, RuleAction, RuleSet, Strictness, DICTIONARY_RULE_ID, PERSON_NAME_RULE_ID, STRICT_NARRATIVE_RULE_ID};
use super::{Finding, FindingCategory};
use crate::model::{last_segment, parent_path, DicomTag, ElementValue, Resource, ResourceKind};
use crate::vault::is_pseudonym;

/// Segments whose values are references or URIs. They are rewritten
/// unconditionally during de-identification, so they are not scanned.
const LINK_SEGMENTS: &[&str] = &["reference", "fullUrl", "system", "url", "id"];

/// What a structural rule decided about one element.
#[derive(Debug, Clone)]
pub(crate) struct Coverage {
    pub rule_id: String,
    /// Subtree the rule acts on.
    pub root: String,
    pub action: RuleAction,
    pub category: FindingCategory,
    /// Set when the element itself is PHI (not every covered leaf is).
    pub finding: bool,
}

/// Innermost DICOM tag segment of `path` and the path prefix ending at it.
pub(crate) fn innermost_tag(path: &str) -> Option<(DicomTag, &str)> {
    let mut end = 0;
    let mut found = None;
    for seg in path.split('.') {
        let seg_end = end + seg.len();
        if DicomTag::is_tag_key(seg) {
            if let Ok(tag) = seg.parse::<DicomTag>() {
                found = Some((tag, &path[..seg_end]));
            }
        }
        end = seg_end + 1;
    }
    found
}

fn age_years(value: &ElementValue) -> Option<f64> {
    match value {
        ElementValue::Integer(i) => Some(*i as f64),
        ElementValue::Decimal(d) => Some(*d),
        _ => None,
    }
}

/// Parses a DICOM age string (`nnnY`); other units are never over 89 years.
pub(crate) fn dicom_age_years(s: &str) -> Option<u32> {
    let digits = s.strip_suffix('Y')?;
    (digits.len() == 3 && digits.bytes().all(|b| b.is_ascii_digit())).then(|| digits.parse().ok())?
}

pub(crate) fn fhir_coverage(resource: &Resource, rules: &RuleSet) -> BTreeMap<String, Coverage> {
    let mut out = BTreeMap::new();
    let id_rules: Vec<_> = rules.identifier_rules(resource.kind).collect();
    let age_rules: Vec<_> = rules.age_rules(resource.kind).collect();
    for (path, value) in resource.elements() {
        if let Some((rule, root)) = id_rules.iter().find_map(|r| match_prefix(&r.path, path).map(|root| (r, root))) {
            let text = value.text();
            out.insert(
                path.to_string(),
                Coverage {
                    rule_id: rule.id.clone(),
                    root: root.to_string(),
                    action: rule.action,
                    category: rule.category.resolve(&text),
                    finding: !matches!(value, ElementValue::Opaque(_)) && !is_pseudonym(&text),
                },
            );
            continue;
        }
        for rule in &age_rules {
            if match_prefix(&rule.path, path) != Some(path) {
                continue;
            }
            let parent = parent_path(path).unwrap_or_default();
            let unit_ok = ["unit", "code"].iter().any(|leaf| {
                resource
                    .element_at(&format!("{parent}.{leaf}"))
                    .and_then(ElementValue::as_str)
                    .is_some_and(|u| rule.units.iter().any(|x| x == u))
            });
            if unit_ok {
                out.insert(
                    path.to_string(),
                    Coverage {
                        rule_id: rule.id.clone(),
                        root: path.to_string(),
                        action: RuleAction::GeneralizeAge,
                        category: FindingCategory::AgeOver89,
                        finding: age_years(value).is_some_and(|y| y > 89.0),
                    },
                );
                break;
            }
        }
    }
    out
}

pub(crate) fn dicom_coverage(resource: &Resource, rules: &RuleSet) -> BTreeMap<String, Coverage> {
    let mut out = BTreeMap::new();
    for (path, value) in resource.elements() {
        if last_segment(path) == "vr" {
            continue;
        }
        let Some((tag, root)) = innermost_tag(path) else { continue };
        if let Some(rule) = rules.dicom_rule(tag) {
            let finding = match rule.action {
                RuleAction::GeneralizeAge => value.as_str().and_then(dicom_age_years).is_some_and(|y| y > 89),
                _ => !matches!(value, ElementValue::Opaque(_)) && !value.as_str().is_some_and(is_pseudonym),
            };
            let category = match rule.action {
                RuleAction::GeneralizeAge => FindingCategory::AgeOver89,
                _ => FindingCategory::DicomIdentityTag,
            };
            out.insert(
                path.to_string(),
                Coverage { rule_id: rule.rule_id(), root: root.to_string(), action: rule.action, category, finding },
            );
        } else if resource.dicom_vr(path) == Some("PN") {
            if let Some(action) = rules.person_name_action() {
                out.insert(
                    path.to_string(),
                    Coverage {
                        rule_id: PERSON_NAME_RULE_ID.to_string(),
                        root: root.to_string(),
                        action,
                        category: FindingCategory::Name,
                        finding: !matches!(value, ElementValue::Opaque(_)),
                    },
                );
            }
        }
    }
    out
}

fn detector_eligible(resource: &Resource, path: &str, value: &ElementValue) -> Option<String> {
    let text = value.as_str()?;
    if is_pseudonym(text) || text.is_empty() {
        return None;
    }
    if resource.kind.is_fhir() {
        if LINK_SEGMENTS.contains(&last_segment(path)) {
            return None;
        }
    } else {
        if last_segment(path) == "vr" {
            return None;
        }
        if matches!(resource.dicom_vr(path), Some("UI" | "DA" | "DT" | "TM")) {
            return None;
        }
    }
    Some(text.to_string())
}

/// Detector and dictionary hits in one text, same-category overlaps merged.
fn detect(text: &str, rules: &RuleSet) -> Vec<(FindingCategory, usize, usize, String)> {
    let mut hits: Vec<(FindingCategory, usize, usize, String)> = Vec::new();
    for d in &rules.detectors {
        for m in d.regex.find_iter(text) {
            if m.start() < m.end() {
                hits.push((d.category, m.start(), m.end(), d.id.clone()));
            }
        }
    }
    for m in rules.token_re.find_iter(text) {
        let hit = m.as_str().split('-').any(|part| rules.dictionary.contains(&part.to_lowercase()));
        if hit {
            hits.push((FindingCategory::Name, m.start(), m.end(), DICTIONARY_RULE_ID.to_string()));
        }
    }
    hits.sort_by_key(|a| (a.0 as u8, a.1, a.2));
    let mut merged: Vec<(FindingCategory, usize, usize, String)> = Vec::new();
    for h in hits {
        match merged.last_mut() {
            Some(last) if last.0 == h.0 && h.1 < last.2 => last.2 = last.2.max(h.2),
            _ => merged.push(h),
        }
    }
    merged
}

/// Findings of a single (non-bundle) resource.
pub(crate) fn scan_single(resource: &Resource, rules: &RuleSet) -> Vec<Finding> {
    let coverage = if resource.kind.is_fhir() {
        fhir_coverage(resource, rules)
    } else {
        dicom_coverage(resource, rules)
    };
    let mut findings = Vec::new();
    for (path, value) in resource.elements() {
        if let Some(c) = coverage.get(path) {
            if c.finding {
                let len = value.text().len();
                findings.push(Finding {
                    path: path.to_string(),
                    category: c.category,
                    span: (0, len),
                    detector: c.rule_id.clone(),
                });
            }
            continue;
        }
        let Some(text) = detector_eligible(resource, path, value) else { continue };
        for (category, start, end, detector) in detect(&text, rules) {
            findings.push(Finding { path: path.to_string(), category, span: (start, end), detector });
        }
        if value.is_narrative() && rules.strictness() == Strictness::Strict {
            findings.push(Finding {
                path: path.to_string(),
                category: FindingCategory::FreeTextHit,
                span: (0, text.len()),
                detector: STRICT_NARRATIVE_RULE_ID.to_string(),
            });
        }
    }
    findings
}

/// Element prefix under which a bundle entry's resource lives.
pub(crate) fn entry_prefix(index: usize) -> String {
    format!("entry.{index}.resource.")
}

pub(crate) fn scan_bundle(bundle: &Resource, rules: &RuleSet) -> Vec<Finding> {
    let mut findings = Vec::new();
    match bundle.split_bundle() {
        Ok(entries) => {
            for (i, entry) in entries.iter().enumerate() {
                let prefix = entry_prefix(i);
                findings.extend(scan_single(entry, rules).into_iter().map(|mut f| {
                    f.path.insert_str(0, &prefix);
                    f
                }));
            }
            let mut outer = bundle.clone();
            for i in 0..entries.len() {
                outer.remove_subtree(&format!("entry.{i}.resource"));
            }
            findings.extend(scan_single(&outer, rules));
        }
        Err(_) => findings.extend(scan_single(bundle, rules)),
    }
    findings
}

pub(crate) fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by(|a, b| (&a.path, a.span, a.category as u8).cmp(&(&b.path, b.span, b.category as u8)));
}

pub(crate) fn is_bundle(resource: &Resource) -> bool {
    resource.kind == ResourceKind::Bundle
}
