//! Seeded generator for synthetic clinical documents with planted identifiers.
//!
//! Every document records the identifiers planted in it and whether its free
//! text carries PHI, which gives tests a ground truth that does not come from
//! the scanner under test.

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use crate::model::ResourceKind;

#[derive(Debug, Clone)]
pub struct SyntheticDoc {
    /// File name used when the corpus is written to disk.
    pub name: String,
    pub json: String,
    /// Parse hint; only DICOM metadata needs one.
    pub hint: Option<ResourceKind>,
    pub kind: ResourceKind,
    /// True when some free-text element carries a planted identifier.
    pub narrative_phi: bool,
    pub patient_id: String,
    /// High-entropy identifier strings planted anywhere in the document.
    pub planted: Vec<String>,
}

const GIVEN: &[&str] = &["John", "Mary", "Peter", "Sabine", "Klaus", "Emma", "Lukas", "Sarah", "David", "Anna"];
const FAMILY: &[&str] = &[
    "Kowalczyk", "Brandtner", "Vasquez", "Oyelaran", "Lindqvist", "Haverkamp", "Castellano", "Nakamura", "Okonkwo",
    "Pettersen", "Wojcik", "Albrecht", "Fitzgerald", "Delacroix",
];
/// Surnames the shipped dictionary knows, for bare-name narrative plants.
const DICT_FAMILY: &[&str] = &["Smith", "Miller", "Schmidt", "Fischer", "Garcia", "Nguyen", "Wagner", "Becker"];
const STREETS: &[&str] = &["Birch", "Linden", "Harbor View", "Mill", "Kastanien"];
const STREET_KINDS: &[&str] = &["Street", "Road", "Avenue", "Lane", "Weg"];
const CLEAN_TEXT: &[&str] = &[
    "no acute cardiopulmonary abnormality",
    "mild degenerative changes of the lumbar spine",
    "follow-up imaging in six months is recommended",
    "findings consistent with community-acquired pneumonia",
    "stable appearance compared with the prior study",
    "hemoglobin within the reference interval",
    "no evidence of metastatic disease",
    "small pleural effusion on the left",
];
const MODALITIES: &[&str] = &["CT", "MR", "US", "CR", "PT"];

struct Patient {
    id: String,
    given: String,
    family: String,
    mrn: String,
    phone: String,
    email: String,
    birth: String,
    street: String,
}

pub struct CorpusGen {
    rng: StdRng,
    patients: Vec<Patient>,
    counter: usize,
}

impl CorpusGen {
    pub fn new(seed: u64) -> Self {
        CorpusGen { rng: StdRng::seed_from_u64(seed), patients: Vec::new(), counter: 0 }
    }

    fn pick<'a>(&mut self, items: &'a [&'a str]) -> &'a str {
        items.choose(&mut self.rng).expect("non-empty list")
    }

    fn digits(&mut self, n: usize) -> String {
        (0..n).map(|_| char::from(b'0' + self.rng.gen_range(0..10u8))).collect()
    }

    fn date(&mut self, from_year: i32, to_year: i32) -> String {
        format!("{}-{:02}-{:02}", self.rng.gen_range(from_year..=to_year), self.rng.gen_range(1..=12), self.rng.gen_range(1..=28))
    }

    fn datetime(&mut self) -> String {
        format!("{}T{:02}:{:02}:00Z", self.date(2015, 2024), self.rng.gen_range(0..24), self.rng.gen_range(0..60))
    }

    fn uid(&mut self) -> String {
        format!("1.2.826.0.1.3680043.{}.{}", self.digits(6), self.digits(9))
    }

    /// Picks an existing patient most of the time so resources share patients.
    fn patient(&mut self) -> usize {
        if !self.patients.is_empty() && self.rng.gen_bool(0.7) {
            return self.rng.gen_range(0..self.patients.len());
        }
        let n = self.patients.len();
        let given = self.pick(GIVEN).to_string();
        let family = format!("{}{}", self.pick(FAMILY), ["", "-Ruiz", "-Berg"][n % 3]);
        let p = Patient {
            id: format!("pat-{n:05}-{}", self.digits(4)),
            mrn: format!("MRN{}", self.digits(8)),
            phone: format!("0{}-555-{}", self.digits(3), self.digits(4)),
            email: format!("{}.{}{}@mail.example.org", given.to_lowercase(), family.to_lowercase(), self.digits(3)),
            birth: self.date(1925, 2005),
            street: format!("{} {} {}", self.rng.gen_range(1..999), self.pick(STREETS), self.pick(STREET_KINDS)),
            given,
            family,
        };
        self.patients.push(p);
        n
    }

    fn clean_text(&mut self) -> String {
        let a = self.pick(CLEAN_TEXT);
        let b = self.pick(CLEAN_TEXT);
        format!("{a}; {b}")
    }

    /// Free text with one planted identifier; returns the text and the planted string.
    fn phi_text(&mut self, p: usize) -> (String, String) {
        let clean = self.clean_text();
        let pat = &self.patients[p];
        let (given, family, phone, email, street) =
            (pat.given.clone(), pat.family.clone(), pat.phone.clone(), pat.email.clone(), pat.street.clone());
        let (snippet, planted) = match self.rng.gen_range(0..8) {
            0 => (format!("discussed with Dr. {family}"), family),
            1 => {
                let s = self.pick(DICT_FAMILY).to_string();
                (format!("seen together with {given} {s}"), s)
            }
            2 => (format!("callback requested at {phone}"), phone),
            3 => (format!("report sent to {email}"), email),
            4 => {
                let d = format!("{:02}/{:02}/{}", self.rng.gen_range(1..=12), self.rng.gen_range(1..=28), self.rng.gen_range(2015..2024));
                (format!("previous visit {d}"), d)
            }
            5 => {
                let m = format!("MRN: {}", self.digits(7));
                (format!("cross-check {m}"), m)
            }
            6 => {
                let a = format!("{} years old", self.rng.gen_range(90..105));
                (format!("patient is {a}"), a)
            }
            _ => (format!("lives at {street}"), street),
        };
        let text = if self.rng.gen_bool(0.5) { format!("{clean}; {snippet}") } else { format!("{snippet}; {clean}") };
        (text, planted)
    }

    fn narrative(&mut self, p: usize, phi: bool, planted: &mut Vec<String>) -> String {
        if phi {
            let (t, s) = self.phi_text(p);
            planted.push(s);
            t
        } else {
            self.clean_text()
        }
    }

    fn patient_resource(&mut self, p: usize, planted: &mut Vec<String>) -> Value {
        let pat = &self.patients[p];
        planted.extend([pat.family.clone(), pat.mrn.clone(), pat.phone.clone(), pat.email.clone(), pat.street.clone()]);
        json!({
            "resourceType": "Patient",
            "id": pat.id,
            "identifier": [{"system": "urn:oid:1.2.276.0.76.4.8", "value": pat.mrn}],
            "name": [{"use": "official", "family": pat.family, "given": [pat.given]}],
            "telecom": [{"system": "phone", "value": pat.phone}, {"system": "email", "value": pat.email}],
            "gender": (["male", "female", "other"][p % 3]),
            "birthDate": pat.birth,
            "address": [{"line": [pat.street], "city": "Potsdam", "postalCode": "14482"}],
        })
    }

    fn subject(&self, p: usize) -> Value {
        let pat = &self.patients[p];
        json!({"reference": format!("Patient/{}", pat.id), "display": format!("{} {}", pat.given, pat.family)})
    }

    fn observation(&mut self, p: usize, phi: bool, planted: &mut Vec<String>) -> Value {
        planted.push(self.patients[p].family.clone());
        let id = format!("obs-{}", self.digits(8));
        let mut obs = json!({
            "resourceType": "Observation",
            "id": id,
            "status": "final",
            "code": {"coding": [{"system": "http://loinc.org", "code": "718-7", "display": "Hemoglobin"}]},
            "subject": self.subject(p),
            "effectiveDateTime": self.datetime(),
            "valueQuantity": {"value": f64::from(self.rng.gen_range(90..180)) / 10.0, "unit": "g/dL"},
            "performer": [{"display": format!("Dr. {}", self.pick(FAMILY))}, {"reference": "Practitioner/pr-7"}],
        });
        if self.rng.gen_bool(0.25) {
            obs["code"] = json!({"coding": [{"system": "http://loinc.org", "code": "30525-0", "display": "Age"}]});
            obs["valueQuantity"] = json!({"value": self.rng.gen_range(60..104), "unit": "a"});
        }
        if phi || self.rng.gen_bool(0.3) {
            obs["note"] = json!([{"text": self.narrative(p, phi, planted)}]);
        }
        obs
    }

    fn condition(&mut self, p: usize, phi: bool, planted: &mut Vec<String>) -> Value {
        planted.push(self.patients[p].family.clone());
        let mut c = json!({
            "resourceType": "Condition",
            "id": format!("cond-{}", self.digits(8)),
            "code": {"coding": [{"system": "http://snomed.info/sct", "code": "233604007"}]},
            "subject": self.subject(p),
            "recordedDate": self.date(2015, 2024),
            "recorder": {"display": format!("Dr. {}", self.pick(FAMILY))},
        });
        if self.rng.gen_bool(0.3) {
            c["onsetAge"] = json!({"value": self.rng.gen_range(40..104), "unit": "years"});
        } else {
            c["onsetDateTime"] = json!(self.datetime());
        }
        if phi || self.rng.gen_bool(0.5) {
            c["note"] = json!([{"text": self.narrative(p, phi, planted)}]);
        }
        c
    }

    fn report(&mut self, p: usize, phi: bool, planted: &mut Vec<String>) -> Value {
        planted.push(self.patients[p].family.clone());
        json!({
            "resourceType": "DiagnosticReport",
            "id": format!("rep-{}", self.digits(8)),
            "status": "final",
            "code": {"coding": [{"system": "http://loinc.org", "code": "36643-5"}]},
            "subject": self.subject(p),
            "effectiveDateTime": self.datetime(),
            "issued": self.datetime(),
            "resultsInterpreter": [{"display": format!("Dr. {}", self.pick(FAMILY))}],
            "conclusion": self.narrative(p, phi, planted),
        })
    }

    fn encounter(&mut self, p: usize, planted: &mut Vec<String>) -> Value {
        planted.push(self.patients[p].family.clone());
        let start = self.datetime();
        json!({
            "resourceType": "Encounter",
            "id": format!("enc-{}", self.digits(8)),
            "status": "finished",
            "subject": self.subject(p),
            "period": {"start": start},
            "participant": [{"individual": {"display": format!("Dr. {}", self.pick(FAMILY))}}],
        })
    }

    fn dicom(&mut self, p: usize, phi: bool, planted: &mut Vec<String>) -> Value {
        let pat = &self.patients[p];
        let pn = format!("{}^{}", pat.family.to_uppercase(), pat.given.to_uppercase());
        let (pid, birth) = (pat.id.clone(), pat.birth.replace('-', ""));
        planted.push(pn.clone());
        let accession = format!("ACC{}", self.digits(9));
        planted.push(accession.clone());
        let modality = self.pick(MODALITIES);
        let mut meta = json!({
            "00080020": {"vr": "DA", "Value": [self.date(2015, 2024).replace('-', "")]},
            "00080030": {"vr": "TM", "Value": ["101500"]},
            "00080050": {"vr": "SH", "Value": [accession]},
            "00080060": {"vr": "CS", "Value": [modality]},
            "00080080": {"vr": "LO", "Value": ["St. Elsewhere Hospital"]},
            "00080090": {"vr": "PN", "Value": [{"Alphabetic": format!("{}^ANNA", self.pick(FAMILY).to_uppercase())}]},
            "00081030": {"vr": "LO", "Value": ["THORAX WITH CONTRAST"]},
            "00100010": {"vr": "PN", "Value": [{"Alphabetic": pn}]},
            "00100020": {"vr": "LO", "Value": [pid]},
            "00100030": {"vr": "DA", "Value": [birth]},
            "00100040": {"vr": "CS", "Value": ["O"]},
            "00101010": {"vr": "AS", "Value": [format!("{:03}Y", self.rng.gen_range(20..104))]},
            "0020000D": {"vr": "UI", "Value": [self.uid()]},
            "0020000E": {"vr": "UI", "Value": [self.uid()]},
        });
        if phi || self.rng.gen_bool(0.3) {
            meta["00204000"] = json!({"vr": "LT", "Value": [self.narrative(p, phi, planted)]});
        }
        meta
    }

    /// Generates the next document.
    pub fn next_doc(&mut self) -> SyntheticDoc {
        let n = self.counter;
        self.counter += 1;
        let p = self.patient();
        let phi = self.rng.gen_bool(0.3);
        let mut planted = vec![self.patients[p].id.clone()];
        let roll = self.rng.gen_range(0..100);
        let (kind, value, narrative_phi) = match roll {
            0..=19 => (ResourceKind::Patient, self.patient_resource(p, &mut planted), false),
            20..=37 => (ResourceKind::Observation, self.observation(p, phi, &mut planted), phi),
            38..=51 => (ResourceKind::Condition, self.condition(p, phi, &mut planted), phi),
            52..=67 => (ResourceKind::DiagnosticReport, self.report(p, phi, &mut planted), phi),
            68..=74 => (ResourceKind::Encounter, self.encounter(p, &mut planted), false),
            75..=87 => {
                let mut entries = vec![self.patient_resource(p, &mut planted)];
                let phi_at = phi.then(|| self.rng.gen_range(0..2));
                for i in 0..2 {
                    let here = phi_at == Some(i);
                    let r = if self.rng.gen_bool(0.5) {
                        self.observation(p, here, &mut planted)
                    } else {
                        self.report(p, here, &mut planted)
                    };
                    entries.push(r);
                }
                let entry: Vec<Value> = entries
                    .into_iter()
                    .map(|r| json!({"fullUrl": format!("urn:uuid:{}-{}", self.digits(8), self.digits(12)), "resource": r}))
                    .collect();
                let bundle = json!({"resourceType": "Bundle", "id": format!("bundle-{}", self.digits(6)), "type": "collection", "entry": entry});
                (ResourceKind::Bundle, bundle, phi)
            }
            _ => (ResourceKind::DicomStudyMeta, self.dicom(p, phi, &mut planted), phi),
        };
        planted.sort();
        planted.dedup();
        SyntheticDoc {
            name: format!("doc-{n:05}.json"),
            json: serde_json::to_string_pretty(&value).expect("JSON values serialize"),
            hint: (kind == ResourceKind::DicomStudyMeta).then_some(ResourceKind::DicomStudyMeta),
            kind,
            narrative_phi,
            patient_id: self.patients[p].id.clone(),
            planted,
        }
    }
}

/// `n` documents from `seed`.
pub fn corpus(seed: u64, n: usize) -> Vec<SyntheticDoc> {
    let mut g = CorpusGen::new(seed);
    (0..n).map(|_| g.next_doc()).collect()
}
