//! Clinical payload model.
//!
//! FHIR R4 resources (a fixed subset of kinds) and DICOMweb JSON metadata are
//! both flattened into one [`Resource`] shape: an ordered map from dotted
//! element paths (`name.0.family`, `00100010.Value.0.Alphabetic`) to typed
//! leaf values. Serialization rebuilds the JSON tree in canonical form
//! (sorted keys, no insignificant whitespace).

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Number, Value};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("unsupported resource kind: {0}")]
    UnsupportedKind(String),
    #[error("path conflict at {0}")]
    PathConflict(String),
}

/// The payload kinds the gateway accepts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ResourceKind {
    Patient,
    Observation,
    DiagnosticReport,
    Condition,
    Encounter,
    Bundle,
    DicomStudyMeta,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 7] = [
        ResourceKind::Patient,
        ResourceKind::Observation,
        ResourceKind::DiagnosticReport,
        ResourceKind::Condition,
        ResourceKind::Encounter,
        ResourceKind::Bundle,
        ResourceKind::DicomStudyMeta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::Patient => "Patient",
            ResourceKind::Observation => "Observation",
            ResourceKind::DiagnosticReport => "DiagnosticReport",
            ResourceKind::Condition => "Condition",
            ResourceKind::Encounter => "Encounter",
            ResourceKind::Bundle => "Bundle",
            ResourceKind::DicomStudyMeta => "DicomStudyMeta",
        }
    }

    pub fn is_fhir(self) -> bool {
        self != ResourceKind::DicomStudyMeta
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ResourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnsupportedKind(s.to_string()))
    }
}

/// A FHIR `dateTime`/`instant` with its original zone suffix kept verbatim.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateTimeValue {
    pub local: NaiveDateTime,
    /// `Z`, `+hh:mm`, `-hh:mm`, or absent.
    pub zone: Option<String>,
}

impl DateTimeValue {
    pub fn parse(s: &str) -> Option<Self> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(
                r"^(\d{4}-\d{2}-\d{2})T(\d{2}):(\d{2})(?::(\d{2})(\.\d{1,9})?)?(Z|[+-]\d{2}:\d{2})?$",
            )
            .unwrap()
        });
        let caps = re.captures(s)?;
        let date = NaiveDate::parse_from_str(&caps[1], "%Y-%m-%d").ok()?;
        let hour: u32 = caps[2].parse().ok()?;
        let min: u32 = caps[3].parse().ok()?;
        let sec: u32 = caps.get(4).map_or(Some(0), |m| m.as_str().parse().ok())?;
        let nanos = match caps.get(5) {
            Some(frac) => {
                let digits = &frac.as_str()[1..];
                let scale = 10u32.pow(9 - digits.len() as u32);
                digits.parse::<u32>().ok()? * scale
            }
            None => 0,
        };
        let time = NaiveTime::from_hms_nano_opt(hour, min, sec, nanos)?;
        Some(DateTimeValue {
            local: date.and_time(time),
            zone: caps.get(6).map(|m| m.as_str().to_string()),
        })
    }

    pub fn render(&self) -> String {
        let mut out = self.local.format("%Y-%m-%dT%H:%M:%S%.f").to_string();
        if let Some(zone) = &self.zone {
            out.push_str(zone);
        }
        out
    }
}

/// A typed leaf of the element tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "kebab-case")]
pub enum ElementValue {
    String(String),
    Date(NaiveDate),
    DateTime(DateTimeValue),
    Integer(i64),
    Decimal(f64),
    Boolean(bool),
    Coded { system: Option<String>, code: String },
    /// Free text. Kept distinct from `String` because narrative drives quarantine.
    Narrative(String),
    /// `null`, `{}` or `[]`; carried through untouched.
    Opaque(Value),
}

impl ElementValue {
    /// Text form used for scanning and finding spans.
    pub fn text(&self) -> Cow<'_, str> {
        match self {
            ElementValue::String(s) | ElementValue::Narrative(s) => Cow::Borrowed(s),
            ElementValue::Date(d) => Cow::Owned(d.format("%Y-%m-%d").to_string()),
            ElementValue::DateTime(dt) => Cow::Owned(dt.render()),
            ElementValue::Integer(i) => Cow::Owned(i.to_string()),
            ElementValue::Decimal(d) => Cow::Owned(d.to_string()),
            ElementValue::Boolean(b) => Cow::Owned(b.to_string()),
            ElementValue::Coded { code, .. } => Cow::Borrowed(code),
            ElementValue::Opaque(v) => Cow::Owned(v.to_string()),
        }
    }

    pub fn is_narrative(&self) -> bool {
        matches!(self, ElementValue::Narrative(_))
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ElementValue::String(s) | ElementValue::Narrative(s) => Some(s),
            _ => None,
        }
    }

    fn to_json(&self, kind: ResourceKind) -> Value {
        match self {
            ElementValue::String(s) | ElementValue::Narrative(s) => Value::String(s.clone()),
            ElementValue::Date(d) => {
                let fmt = if kind.is_fhir() { "%Y-%m-%d" } else { "%Y%m%d" };
                Value::String(d.format(fmt).to_string())
            }
            ElementValue::DateTime(dt) => Value::String(dt.render()),
            ElementValue::Integer(i) => Value::Number((*i).into()),
            ElementValue::Decimal(d) => Number::from_f64(*d).map_or(Value::Null, Value::Number),
            ElementValue::Boolean(b) => Value::Bool(*b),
            ElementValue::Coded { code, .. } => Value::String(code.clone()),
            ElementValue::Opaque(v) => v.clone(),
        }
    }
}

/// A DICOM attribute tag, rendered as `GGGGEEEE`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DicomTag {
    pub group: u16,
    pub element: u16,
}

impl DicomTag {
    pub const fn new(group: u16, element: u16) -> Self {
        DicomTag { group, element }
    }

    pub fn is_tag_key(s: &str) -> bool {
        s.len() == 8 && s.bytes().all(|b| b.is_ascii_hexdigit())
    }
}

impl fmt::Display for DicomTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04X}{:04X}", self.group, self.element)
    }
}

impl FromStr for DicomTag {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if !DicomTag::is_tag_key(s) {
            return Err(ModelError::MalformedPayload(format!("bad DICOM tag {s:?}")));
        }
        let raw = u32::from_str_radix(s, 16).expect("validated hex");
        Ok(DicomTag::new((raw >> 16) as u16, raw as u16))
    }
}

impl Serialize for DicomTag {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DicomTag {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// One top-level attribute of a DICOM metadata set.
#[derive(Debug, Clone, PartialEq)]
pub struct DicomAttribute<'a> {
    pub tag: DicomTag,
    pub vr: Option<&'a str>,
    pub values: Vec<(&'a str, &'a ElementValue)>,
}

pub mod tags {
    use super::DicomTag;

    pub const ACCESSION_NUMBER: DicomTag = DicomTag::new(0x0008, 0x0050);
    pub const SOP_INSTANCE_UID: DicomTag = DicomTag::new(0x0008, 0x0018);
    pub const MODALITY: DicomTag = DicomTag::new(0x0008, 0x0060);
    pub const PATIENT_NAME: DicomTag = DicomTag::new(0x0010, 0x0010);
    pub const PATIENT_ID: DicomTag = DicomTag::new(0x0010, 0x0020);
    pub const PATIENT_BIRTH_DATE: DicomTag = DicomTag::new(0x0010, 0x0030);
    pub const PATIENT_AGE: DicomTag = DicomTag::new(0x0010, 0x1010);
    pub const STUDY_INSTANCE_UID: DicomTag = DicomTag::new(0x0020, 0x000D);
    pub const SERIES_INSTANCE_UID: DicomTag = DicomTag::new(0x0020, 0x000E);
}

/// A parsed clinical payload.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Resource {
    pub kind: ResourceKind,
    /// FHIR logical id; for DICOM metadata the StudyInstanceUID. Empty when absent.
    pub id: String,
    elements: BTreeMap<String, ElementValue>,
}

/// Path segments that address array positions. Tags are always eight characters,
/// so limiting indices to seven digits keeps the two apart.
pub fn is_index_segment(seg: &str) -> bool {
    !seg.is_empty()
        && seg.len() <= 7
        && seg.bytes().all(|b| b.is_ascii_digit())
        && (seg == "0" || !seg.starts_with('0'))
}

pub fn parent_path(path: &str) -> Option<&str> {
    path.rsplit_once('.').map(|(p, _)| p)
}

pub fn last_segment(path: &str) -> &str {
    path.rsplit_once('.').map_or(path, |(_, s)| s)
}

fn join(prefix: &str, seg: &str) -> String {
    if prefix.is_empty() {
        seg.to_string()
    } else {
        format!("{prefix}.{seg}")
    }
}

fn is_narrative_path(path: &str) -> bool {
    let segs: Vec<&str> = path.split('.').collect();
    match segs.as_slice() {
        [.., "div"] | [.., "conclusion"] | [.., "comment"] => true,
        [.., "note", idx, "text"] => is_index_segment(idx),
        _ => false,
    }
}

fn date_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\d{4}-\d{2}-\d{2}$").unwrap())
}

struct Flattener {
    kind: ResourceKind,
    out: BTreeMap<String, ElementValue>,
}

impl Flattener {
    fn insert(&mut self, path: String, value: ElementValue) -> Result<(), ModelError> {
        if self.out.insert(path.clone(), value).is_some() {
            return Err(ModelError::MalformedPayload(format!("duplicate path {path}")));
        }
        Ok(())
    }

    fn check_key(&self, key: &str) -> Result<(), ModelError> {
        if key.is_empty() || key.contains('.') || is_index_segment(key) {
            return Err(ModelError::MalformedPayload(format!("unsupported key {key:?}")));
        }
        Ok(())
    }

    /// Walks `value`; `vr` is the DICOM value representation in scope, if any.
    fn walk(&mut self, prefix: &str, value: &Value, vr: Option<&str>, coding_system: Option<&str>) -> Result<(), ModelError> {
        match value {
            Value::Object(map) if map.is_empty() => self.insert(prefix.to_string(), ElementValue::Opaque(value.clone())),
            Value::Array(items) if items.is_empty() => self.insert(prefix.to_string(), ElementValue::Opaque(value.clone())),
            Value::Null => self.insert(prefix.to_string(), ElementValue::Opaque(Value::Null)),
            Value::Object(map) => {
                let system = map.get("system").and_then(Value::as_str);
                let own_vr = if self.kind.is_fhir() { None } else { map.get("vr").and_then(Value::as_str) };
                for (key, child) in map {
                    self.check_key(key)?;
                    let key = if !self.kind.is_fhir() && DicomTag::is_tag_key(key) {
                        key.to_ascii_uppercase()
                    } else {
                        key.clone()
                    };
                    let child_vr = own_vr.or(vr);
                    self.walk(&join(prefix, &key), child, child_vr, system)?;
                }
                Ok(())
            }
            Value::Array(items) => {
                for (i, child) in items.iter().enumerate() {
                    self.walk(&join(prefix, &i.to_string()), child, vr, None)?;
                }
                Ok(())
            }
            Value::Bool(b) => self.insert(prefix.to_string(), ElementValue::Boolean(*b)),
            Value::Number(n) => {
                let v = match n.as_i64() {
                    Some(i) => ElementValue::Integer(i),
                    None => ElementValue::Decimal(n.as_f64().unwrap_or(0.0)),
                };
                self.insert(prefix.to_string(), v)
            }
            Value::String(s) => {
                let v = if self.kind.is_fhir() {
                    self.type_fhir_string(prefix, s, coding_system)
                } else {
                    self.type_dicom_string(prefix, s, vr)
                };
                self.insert(prefix.to_string(), v)
            }
        }
    }

    fn type_fhir_string(&self, path: &str, s: &str, coding_system: Option<&str>) -> ElementValue {
        let segs: Vec<&str> = path.rsplitn(4, '.').collect();
        if let [last, idx, coding, ..] = segs.as_slice() {
            if *last == "code" && *coding == "coding" && is_index_segment(idx) {
                return ElementValue::Coded {
                    system: coding_system.map(str::to_string),
                    code: s.to_string(),
                };
            }
        }
        if is_narrative_path(path) {
            return ElementValue::Narrative(s.to_string());
        }
        if date_re().is_match(s) {
            if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
                return ElementValue::Date(d);
            }
        }
        if let Some(dt) = DateTimeValue::parse(s) {
            return ElementValue::DateTime(dt);
        }
        ElementValue::String(s.to_string())
    }

    fn type_dicom_string(&self, path: &str, s: &str, vr: Option<&str>) -> ElementValue {
        if last_segment(path) == "vr" {
            return ElementValue::String(s.to_string());
        }
        match vr {
            Some("DA") if s.len() == 8 && s.bytes().all(|b| b.is_ascii_digit()) => {
                match NaiveDate::parse_from_str(s, "%Y%m%d") {
                    Ok(d) => ElementValue::Date(d),
                    Err(_) => ElementValue::String(s.to_string()),
                }
            }
            Some("LT" | "ST" | "UT") => ElementValue::Narrative(s.to_string()),
            _ => ElementValue::String(s.to_string()),
        }
    }
}

/// Parses a UTF-8 JSON document into a [`Resource`].
///
/// Without a hint the kind comes from `resourceType`. DICOMweb metadata has no
/// `resourceType` and must be parsed with `Some(ResourceKind::DicomStudyMeta)`.
pub fn parse_resource(text: &str, hint: Option<ResourceKind>) -> Result<Resource, ModelError> {
    let value: Value = serde_json::from_str(text).map_err(|e| ModelError::MalformedPayload(e.to_string()))?;
    from_json_value(value, hint)
}

pub fn from_json_value(value: Value, hint: Option<ResourceKind>) -> Result<Resource, ModelError> {
    let Value::Object(mut map) = value else {
        return Err(ModelError::MalformedPayload("top level is not an object".into()));
    };
    if hint == Some(ResourceKind::DicomStudyMeta) {
        if map.contains_key("resourceType") {
            return Err(ModelError::MalformedPayload("DICOM metadata carries resourceType".into()));
        }
        if let Some(bad) = map.keys().find(|k| !DicomTag::is_tag_key(k)) {
            return Err(ModelError::MalformedPayload(format!("DICOM key {bad:?} is not a tag")));
        }
        let mut flat = Flattener { kind: ResourceKind::DicomStudyMeta, out: BTreeMap::new() };
        if !map.is_empty() {
            flat.walk("", &Value::Object(map), None, None)?;
        }
        let mut resource = Resource { kind: ResourceKind::DicomStudyMeta, id: String::new(), elements: flat.out };
        resource.refresh_dicom_id();
        return Ok(resource);
    }

    let kind = match map.remove("resourceType") {
        Some(Value::String(s)) => s.parse::<ResourceKind>()?,
        Some(_) => return Err(ModelError::MalformedPayload("resourceType is not a string".into())),
        None => return Err(ModelError::MalformedPayload("missing resourceType".into())),
    };
    if kind == ResourceKind::DicomStudyMeta {
        return Err(ModelError::UnsupportedKind(kind.to_string()));
    }
    if let Some(h) = hint {
        if h != kind {
            return Err(ModelError::MalformedPayload(format!("expected {h}, found {kind}")));
        }
    }
    let id = match map.remove("id") {
        Some(Value::String(s)) => s,
        Some(_) => return Err(ModelError::MalformedPayload("id is not a string".into())),
        None => String::new(),
    };
    let mut flat = Flattener { kind, out: BTreeMap::new() };
    if !map.is_empty() {
        flat.walk("", &Value::Object(map), None, None)?;
    }
    Ok(Resource { kind, id, elements: flat.out })
}

/// Canonical JSON: sorted keys, no insignificant whitespace.
pub fn serialize_resource(resource: &Resource) -> String {
    serde_json::to_string(&resource.to_json_value()).expect("JSON values always serialize")
}

fn set_in_tree(root: &mut Value, segs: &[&str], leaf: Value) {
    let (head, rest) = segs.split_first().expect("non-empty path");
    if is_index_segment(head) {
        if !root.is_array() {
            *root = Value::Array(Vec::new());
        }
        let arr = root.as_array_mut().unwrap();
        let idx: usize = head.parse().unwrap();
        if arr.len() <= idx {
            arr.resize(idx + 1, Value::Null);
        }
        if rest.is_empty() {
            arr[idx] = leaf;
        } else {
            set_in_tree(&mut arr[idx], rest, leaf);
        }
    } else {
        if !root.is_object() {
            *root = Value::Object(Map::new());
        }
        let obj = root.as_object_mut().unwrap();
        if rest.is_empty() {
            obj.insert((*head).to_string(), leaf);
        } else {
            let child = obj.entry((*head).to_string()).or_insert(Value::Null);
            set_in_tree(child, rest, leaf);
        }
    }
}

impl Resource {
    pub fn new(kind: ResourceKind, id: impl Into<String>) -> Self {
        Resource { kind, id: id.into(), elements: BTreeMap::new() }
    }

    pub fn elements(&self) -> impl Iterator<Item = (&str, &ElementValue)> {
        self.elements.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element_at(&self, path: &str) -> Option<&ElementValue> {
        self.elements.get(path)
    }

    /// Writes a leaf. Fails when the path would sit above or below an existing leaf.
    pub fn set_element(&mut self, path: &str, value: ElementValue) -> Result<Option<ElementValue>, ModelError> {
        if path.is_empty() || path.split('.').any(str::is_empty) {
            return Err(ModelError::PathConflict(path.to_string()));
        }
        let below = format!("{path}.");
        if self.elements.range(below.clone()..).next().is_some_and(|(k, _)| k.starts_with(&below)) {
            return Err(ModelError::PathConflict(path.to_string()));
        }
        let mut cur = path;
        while let Some(parent) = parent_path(cur) {
            if self.elements.contains_key(parent) {
                return Err(ModelError::PathConflict(path.to_string()));
            }
            cur = parent;
        }
        Ok(self.elements.insert(path.to_string(), value))
    }

    /// Paths equal to `prefix` or nested under it.
    pub fn paths_under(&self, prefix: &str) -> Vec<String> {
        let below = format!("{prefix}.");
        self.elements
            .keys()
            .filter(|k| k.as_str() == prefix || k.starts_with(&below))
            .cloned()
            .collect()
    }

    /// Removes `prefix` and everything below it. When `prefix` names an array
    /// item the following items shift down so indices stay contiguous, even if
    /// the slot itself was already empty.
    pub fn remove_subtree(&mut self, prefix: &str) -> Vec<(String, ElementValue)> {
        let removed: Vec<(String, ElementValue)> = self
            .paths_under(prefix)
            .into_iter()
            .filter_map(|p| self.elements.remove(&p).map(|v| (p, v)))
            .collect();
        let (parent, idx) = match prefix.rsplit_once('.') {
            Some((parent, seg)) if is_index_segment(seg) => (Some(parent), seg.parse::<usize>().ok()),
            None if is_index_segment(prefix) => (None, prefix.parse::<usize>().ok()),
            _ => (None, None),
        };
        if let Some(removed_idx) = idx {
            let base = parent.map(|p| format!("{p}.")).unwrap_or_default();
            let moved: Vec<(String, ElementValue)> = self
                .elements
                .keys()
                .filter_map(|k| {
                    let rest = k.strip_prefix(&base)?;
                    let (seg, _) = rest.split_once('.').unwrap_or((rest, ""));
                    (is_index_segment(seg) && seg.parse::<usize>().ok()? > removed_idx).then(|| k.clone())
                })
                .collect::<Vec<_>>()
                .into_iter()
                .map(|k| {
                    let v = self.elements.remove(&k).unwrap();
                    (k, v)
                })
                .collect();
            for (k, v) in moved {
                let rest = &k[base.len()..];
                let (seg, tail) = rest.split_once('.').map_or((rest, None), |(s, t)| (s, Some(t)));
                let new_idx = seg.parse::<usize>().unwrap() - 1;
                let new_key = match tail {
                    Some(t) => format!("{base}{new_idx}.{t}"),
                    None => format!("{base}{new_idx}"),
                };
                self.elements.insert(new_key, v);
            }
        }
        removed
    }

    /// Replaces the value at an existing path.
    pub fn replace(&mut self, path: &str, value: ElementValue) -> Option<ElementValue> {
        self.elements.get_mut(path).map(|slot| std::mem::replace(slot, value))
    }

    pub fn to_json_value(&self) -> Value {
        let mut root = Value::Object(Map::new());
        if self.kind.is_fhir() {
            let obj = root.as_object_mut().unwrap();
            obj.insert("resourceType".into(), Value::String(self.kind.as_str().into()));
            if !self.id.is_empty() {
                obj.insert("id".into(), Value::String(self.id.clone()));
            }
        }
        for (path, value) in &self.elements {
            let segs: Vec<&str> = path.split('.').collect();
            set_in_tree(&mut root, &segs, value.to_json(self.kind));
        }
        root
    }

    /// Top-level DICOM attributes in tag order. Empty for FHIR resources.
    pub fn dicom_attributes(&self) -> Vec<DicomAttribute<'_>> {
        if self.kind.is_fhir() {
            return Vec::new();
        }
        let mut out: Vec<DicomAttribute<'_>> = Vec::new();
        for (path, value) in &self.elements {
            let head = path.split('.').next().unwrap_or_default();
            let Ok(tag) = head.parse::<DicomTag>() else { continue };
            if out.last().map(|a| a.tag) != Some(tag) {
                out.push(DicomAttribute { tag, vr: None, values: Vec::new() });
            }
            let attr = out.last_mut().unwrap();
            if path.as_str() == format!("{head}.vr") {
                attr.vr = value.as_str();
            } else {
                attr.values.push((path.as_str(), value));
            }
        }
        out
    }

    /// Value representation of the DICOM attribute that owns `path`.
    pub fn dicom_vr(&self, path: &str) -> Option<&str> {
        let segs: Vec<&str> = path.split('.').collect();
        // innermost tag segment wins (sequences nest attributes)
        for i in (0..segs.len()).rev() {
            if DicomTag::is_tag_key(segs[i]) {
                let key = format!("{}.vr", segs[..=i].join("."));
                return self.elements.get(&key).and_then(ElementValue::as_str);
            }
        }
        None
    }

    /// First string value of a top-level DICOM attribute.
    pub fn dicom_string(&self, tag: DicomTag) -> Option<&str> {
        self.elements.get(&format!("{tag}.Value.0")).and_then(ElementValue::as_str)
    }

    pub fn refresh_dicom_id(&mut self) {
        if !self.kind.is_fhir() {
            self.id = self.dicom_string(tags::STUDY_INSTANCE_UID).unwrap_or_default().to_string();
        }
    }

    /// Splits a Bundle into its entry resources. Non-bundles return themselves.
    pub fn split_bundle(&self) -> Result<Vec<Resource>, ModelError> {
        if self.kind != ResourceKind::Bundle {
            return Ok(vec![self.clone()]);
        }
        let json = self.to_json_value();
        let entries = json.get("entry").and_then(Value::as_array).cloned().unwrap_or_default();
        entries
            .into_iter()
            .enumerate()
            .map(|(i, entry)| match entry.get("resource") {
                Some(r) if r.get("resourceType").and_then(Value::as_str) == Some("Bundle") => {
                    Err(ModelError::MalformedPayload(format!("entry {i}: nested bundles are not supported")))
                }
                Some(r) => from_json_value(r.clone(), None),
                None => Err(ModelError::MalformedPayload(format!("entry {i} has no resource"))),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const OBSERVATION: &str = r#"{
        "resourceType": "Observation",
        "id": "obs1",
        "code": {"coding": [{"system": "http://loinc.org", "code": "4548-4"}]},
        "valueQuantity": {"value": 7.2},
        "subject": {"reference": "Patient/p1"}
    }"#;

    #[test]
    fn minimal_patient() {
        let r = parse_resource(r#"{"resourceType":"Patient","id":"p1"}"#, None).unwrap();
        assert_eq!(r.kind, ResourceKind::Patient);
        assert_eq!(r.id, "p1");
        assert!(r.is_empty());
        assert_eq!(r.element_at("name.0.family"), None);
        assert_eq!(serialize_resource(&r), r#"{"id":"p1","resourceType":"Patient"}"#);
    }

    #[test]
    fn unsupported_and_malformed() {
        assert_eq!(
            parse_resource(r#"{"resourceType":"Robot"}"#, None),
            Err(ModelError::UnsupportedKind("Robot".into()))
        );
        assert!(matches!(parse_resource(r#"{"id":"x"}"#, None), Err(ModelError::MalformedPayload(_))));
        assert!(matches!(parse_resource("{not json", None), Err(ModelError::MalformedPayload(_))));
        assert!(matches!(parse_resource("[1,2]", None), Err(ModelError::MalformedPayload(_))));
        assert!(matches!(
            parse_resource(r#"{"resourceType":"Patient","a.b":1}"#, None),
            Err(ModelError::MalformedPayload(_))
        ));
        assert!(matches!(
            parse_resource(r#"{"resourceType":"Patient"}"#, Some(ResourceKind::Observation)),
            Err(ModelError::MalformedPayload(_))
        ));
    }

    #[test]
    fn observation_paths_hand_walked() {
        let r = parse_resource(OBSERVATION, None).unwrap();
        let paths: Vec<&str> = r.elements().map(|(p, _)| p).collect();
        assert_eq!(
            paths,
            vec!["code.coding.0.code", "code.coding.0.system", "subject.reference", "valueQuantity.value"]
        );
        assert_eq!(r.element_at("valueQuantity.value"), Some(&ElementValue::Decimal(7.2)));
        assert_eq!(
            r.element_at("code.coding.0.code"),
            Some(&ElementValue::Coded { system: Some("http://loinc.org".into()), code: "4548-4".into() })
        );
    }

    #[test]
    fn typed_leaves() {
        let r = parse_resource(
            r#"{"resourceType":"DiagnosticReport","issued":"2020-01-02T10:30:00Z","effectiveDateTime":"2020-01-02",
                "conclusion":"ok","text":{"div":"<div>x</div>"},"note":[{"text":"n"}],"extension":[],"flag":null}"#,
            None,
        )
        .unwrap();
        assert!(matches!(r.element_at("issued"), Some(ElementValue::DateTime(_))));
        assert!(matches!(r.element_at("effectiveDateTime"), Some(ElementValue::Date(_))));
        assert!(r.element_at("conclusion").unwrap().is_narrative());
        assert!(r.element_at("text.div").unwrap().is_narrative());
        assert!(r.element_at("note.0.text").unwrap().is_narrative());
        assert_eq!(r.element_at("extension"), Some(&ElementValue::Opaque(Value::Array(vec![]))));
        assert_eq!(r.element_at("flag"), Some(&ElementValue::Opaque(Value::Null)));
    }

    #[test]
    fn set_then_read() {
        let mut r = Resource::new(ResourceKind::Patient, "p1");
        r.set_element("name.0.family", ElementValue::String("Roe".into())).unwrap();
        assert_eq!(r.element_at("name.0.family"), Some(&ElementValue::String("Roe".into())));
        assert!(r.set_element("name.0", ElementValue::Boolean(true)).is_err());
        assert!(r.set_element("name.0.family.x", ElementValue::Boolean(true)).is_err());
    }

    #[test]
    fn remove_array_item_reindexes() {
        let mut r = parse_resource(
            r#"{"resourceType":"Patient","telecom":[{"value":"a"},{"value":"b"},{"value":"c"}]}"#,
            None,
        )
        .unwrap();
        r.remove_subtree("telecom.0");
        let again = parse_resource(&serialize_resource(&r), None).unwrap();
        assert_eq!(again, r);
        assert_eq!(r.element_at("telecom.0.value"), Some(&ElementValue::String("b".into())));
        assert_eq!(r.element_at("telecom.1.value"), Some(&ElementValue::String("c".into())));
        assert_eq!(r.element_at("telecom.2.value"), None);
    }

    #[test]
    fn dicom_tags_round_trip_and_match_dicomweb_shape() {
        let doc = r#"{"00100010":{"vr":"PN","Value":[{"Alphabetic":"DOE^JOHN"}]},
                      "00100030":{"vr":"DA","Value":["19700101"]},
                      "0020000d":{"vr":"UI","Value":["1.2.3"]}}"#;
        let r = parse_resource(doc, Some(ResourceKind::DicomStudyMeta)).unwrap();
        assert_eq!(r.id, "1.2.3");
        assert_eq!(
            r.element_at("00100030.Value.0"),
            Some(&ElementValue::Date(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap()))
        );
        // hand-built DICOMweb JSON with keys upper-cased and sorted
        let expected = r#"{"00100010":{"Value":[{"Alphabetic":"DOE^JOHN"}],"vr":"PN"},"00100030":{"Value":["19700101"],"vr":"DA"},"0020000D":{"Value":["1.2.3"],"vr":"UI"}}"#;
        assert_eq!(serialize_resource(&r), expected);
        assert_eq!(r.dicom_vr("00100010.Value.0.Alphabetic"), Some("PN"));
        let attrs = r.dicom_attributes();
        assert_eq!(attrs.len(), 3);
        assert_eq!(attrs[2].tag.to_string(), "0020000D");
        assert_eq!(attrs[2].vr, Some("UI"));
    }

    #[test]
    fn dicom_rejects_non_tag_keys() {
        assert!(parse_resource(r#"{"PatientName":{}}"#, Some(ResourceKind::DicomStudyMeta)).is_err());
        assert!(parse_resource(r#"{"00100010":{}}"#, None).is_err());
    }

    #[test]
    fn tag_display() {
        assert_eq!(DicomTag::new(0x0020, 0x000d).to_string(), "0020000D");
        assert_eq!("0020000d".parse::<DicomTag>().unwrap(), tags::STUDY_INSTANCE_UID);
    }

    #[test]
    fn bundle_split() {
        let b = parse_resource(
            r#"{"resourceType":"Bundle","type":"collection","entry":[
                {"resource":{"resourceType":"Patient","id":"p1"}},
                {"resource":{"resourceType":"Observation","id":"o1","subject":{"reference":"Patient/p1"}}}]}"#,
            None,
        )
        .unwrap();
        let parts = b.split_bundle().unwrap();
        assert_eq!(parts.len(), 2);
        assert_eq!(parts[0].kind, ResourceKind::Patient);
        assert_eq!(parts[1].element_at("subject.reference"), Some(&ElementValue::String("Patient/p1".into())));
    }

    #[test]
    fn datetime_render_is_stable() {
        for s in ["2020-01-02T10:30:00Z", "2020-01-02T10:30:00.125+02:00", "2020-01-02T10:30"] {
            let dt = DateTimeValue::parse(s).unwrap();
            assert_eq!(DateTimeValue::parse(&dt.render()).unwrap(), dt);
        }
        assert!(DateTimeValue::parse("2020-02-30T10:00:00Z").is_none());
    }
}
