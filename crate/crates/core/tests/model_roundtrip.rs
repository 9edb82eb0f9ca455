use enclave_gate_core::model::{is_index_segment, parse_resource, serialize_resource, ResourceKind};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

fn key() -> impl Strategy<Value = String> {
    "[a-z][a-zA-Z]{0,7}".prop_filter("reserved", |k| k != "id" && k != "resourceType")
}

fn leaf() -> impl Strategy<Value = Value> {
    prop_oneof![
        any::<bool>().prop_map(Value::Bool),
        any::<i64>().prop_map(Value::from),
        (-1.0e9f64..1.0e9).prop_map(|f| json!(f)),
        "[ -~]{0,16}".prop_map(Value::String),
        (1900i32..2100, 1u32..13, 1u32..29).prop_map(|(y, m, d)| json!(format!("{y:04}-{m:02}-{d:02}"))),
        (2000i32..2030, 0u32..24, 0u32..60).prop_map(|(y, h, m)| json!(format!("{y}-06-15T{h:02}:{m:02}:00+02:00"))),
        Just(Value::Null),
        Just(json!({})),
        Just(json!([])),
    ]
}

fn tree() -> impl Strategy<Value = Value> {
    leaf().prop_recursive(4, 48, 5, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 1..4).prop_map(Value::Array),
            prop::collection::btree_map(key(), inner, 1..5).prop_map(|m| Value::Object(m.into_iter().collect())),
        ]
    })
}

fn fhir_doc() -> impl Strategy<Value = String> {
    let kinds = ["Patient", "Observation", "DiagnosticReport", "Condition", "Encounter"];
    (prop::sample::select(kinds.to_vec()), "[A-Za-z0-9-]{0,12}", prop::collection::btree_map(key(), tree(), 0..6)).prop_map(
        |(kind, id, fields)| {
            let mut obj: Map<String, Value> = fields.into_iter().collect();
            obj.insert("resourceType".into(), json!(kind));
            if !id.is_empty() {
                obj.insert("id".into(), json!(id));
            }
            Value::Object(obj).to_string()
        },
    )
}

fn dicom_doc() -> impl Strategy<Value = String> {
    let vrs = vec!["CS", "LO", "SH", "DA", "UI", "LT", "PN", "IS"];
    let attr = (prop::sample::select(vrs), prop::collection::vec("[ -~]{0,10}", 0..3)).prop_map(|(vr, values)| {
        if vr == "PN" {
            json!({"vr": vr, "Value": values.iter().map(|v| json!({"Alphabetic": v})).collect::<Vec<_>>()})
        } else if values.is_empty() {
            json!({"vr": vr})
        } else {
            json!({"vr": vr, "Value": values})
        }
    });
    prop::collection::btree_map("[0-9A-F]{8}", attr, 0..8)
        .prop_map(|m| Value::Object(m.into_iter().collect()).to_string())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn fhir_round_trip(doc in fhir_doc()) {
        let r = parse_resource(&doc, None).unwrap();
        let text = serialize_resource(&r);
        let again = parse_resource(&text, None).unwrap();
        prop_assert_eq!(&again, &r);
        prop_assert_eq!(serialize_resource(&again), text);
        // no empty segments anywhere
        for (path, _) in r.elements() {
            prop_assert!(!path.is_empty() && path.split('.').all(|s| !s.is_empty()));
        }
    }

    #[test]
    fn dicom_round_trip(doc in dicom_doc()) {
        let r = parse_resource(&doc, Some(ResourceKind::DicomStudyMeta)).unwrap();
        let text = serialize_resource(&r);
        let again = parse_resource(&text, Some(ResourceKind::DicomStudyMeta)).unwrap();
        prop_assert_eq!(&again, &r);
        prop_assert_eq!(serialize_resource(&again), text.clone());
        let v: Value = serde_json::from_str(&text).unwrap();
        for k in v.as_object().unwrap().keys() {
            prop_assert!(k.len() == 8 && k.chars().all(|c| c.is_ascii_digit() || c.is_ascii_uppercase()));
        }
    }

    #[test]
    fn set_then_read(doc in fhir_doc(), value in "[a-z]{1,8}") {
        let mut r = parse_resource(&doc, None).unwrap();
        let path = "zzWritten.0.leaf";
        r.set_element(path, enclave_gate_core::ElementValue::String(value.clone())).unwrap();
        prop_assert_eq!(r.element_at(path).and_then(|v| v.as_str()), Some(value.as_str()));
        let again = parse_resource(&serialize_resource(&r), None).unwrap();
        prop_assert_eq!(again, r);
    }
}

#[test]
fn index_segments_are_short_decimals() {
    assert!(is_index_segment("0"));
    assert!(is_index_segment("1234567"));
    assert!(!is_index_segment("00100010"));
    assert!(!is_index_segment("01"));
    assert!(!is_index_segment("x1"));
}

#[test]
fn dicomweb_shape_matches_hand_built_sample() {
    let sample = r#"{"00080060":{"Value":["MR"],"vr":"CS"},"00100010":{"Value":[{"Alphabetic":"DOE^JOHN"}],"vr":"PN"},"0020000D":{"Value":["1.2.3"],"vr":"UI"}}"#;
    let r = parse_resource(sample, Some(ResourceKind::DicomStudyMeta)).unwrap();
    assert_eq!(serialize_resource(&r), sample);
    assert_eq!(r.id, "1.2.3");
}
