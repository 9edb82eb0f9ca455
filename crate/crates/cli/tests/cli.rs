use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use enclave_gate_core::audit::verify_bytes;
use enclave_gate_core::{parse_resource, scan, ResourceKind, RuleSet};
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_enclave-gate");
const KEY_HEX: &str = "6b6579206d6174657269616c20666f72207465737473206f6e6c792121212121";

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/batch")
}

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).env_remove("ENCLAVE_GATE_CONFIG").output().expect("binary runs")
}

/// Standard output must be a JSON document exactly when the exit code is 0 or 1.
fn checked(out: &Output) -> (i32, Option<Value>) {
    let code = out.status.code().expect("exited normally");
    let parsed = serde_json::from_slice::<Value>(&out.stdout).ok();
    assert_eq!(parsed.is_some(), code == 0 || code == 1, "exit {code}, stdout {:?}", String::from_utf8_lossy(&out.stdout));
    (code, parsed)
}

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("vault.key"), format!("{KEY_HEX}\n")).unwrap();
        Workdir { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn batch(&self, input: &Path, output: &str, vault: &str) -> Output {
        run(&[
            "deid", "batch", "--input", input.to_str().unwrap(), "--output", &self.s(output), "--vault", &self.s(vault),
            "--vault-key", &self.s("vault.key"),
        ])
    }
}

fn rescans_clean(dir: &Path) {
    let rules = RuleSet::standard();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "quarantine-manifest.json" {
            continue;
        }
        let text = fs::read_to_string(&path).unwrap();
        let value: Value = serde_json::from_str(&text).unwrap();
        let hint = value.get("resourceType").is_none().then_some(ResourceKind::DicomStudyMeta);
        let r = parse_resource(&text, hint).unwrap();
        assert!(scan(&r, &rules).is_empty(), "{} rescans dirty", path.display());
    }
}

#[test]
fn policy_check_examples() {
    let out = run(&["policy", "check", "--from", "internet", "--to", "enclave", "--channel", "ssh", "--flag", "via-bastion", "--mfa"]);
    let (code, doc) = checked(&out);
    let doc = doc.unwrap();
    assert_eq!((code, doc["verdict"].as_str(), doc["rule"].as_str()), (0, Some("allow"), Some("R2")));

    let out = run(&["policy", "check", "--from", "hospital", "--to", "enclave", "--channel", "fhir", "--payload", "phi"]);
    let (code, doc) = checked(&out);
    let doc = doc.unwrap();
    assert_eq!((code, doc["verdict"].as_str(), doc["rule"].as_str()), (1, Some("deny"), Some("R1")));

    let out = run(&["policy", "check", "--from", "internet", "--to", "enclave", "--channel", "ssh", "--flag", "via-bastion"]);
    assert_eq!(checked(&out).0, 1, "no MFA, no entry");
}

#[test]
fn usage_errors_exit_two_without_json() {
    for args in [
        &["policy", "check", "--from", "mars", "--to", "enclave", "--channel", "ssh"][..],
        &["policy", "check", "--from", "hospital"],
        &["policy", "frobnicate"],
        &["audit", "verify"],
        &["deid", "batch", "--input", "/nonexistent", "--output", "/tmp/x"],
    ] {
        let out = run(args);
        assert_eq!(checked(&out).0, 2, "{args:?}");
        assert!(!out.stderr.is_empty());
    }
}

#[test]
fn matrix_lists_every_request() {
    let out = run(&["policy", "matrix"]);
    let (code, doc) = checked(&out);
    assert_eq!(code, 0);
    let rows = doc.unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 49_152);
    assert!(rows.iter().all(|r| r["verdict"] == "deny" || r["verdict"] == "allow"));
    let tsv = run(&["policy", "matrix", "--format", "tsv"]);
    assert_eq!(String::from_utf8(tsv.stdout).unwrap().lines().count(), 49_153);
}

#[test]
fn batch_on_fixture_corpus() {
    let w = Workdir::new();
    let out = w.batch(&fixtures(), "out", "vault.log");
    let (code, doc) = checked(&out);
    assert_eq!(code, 0, "{}", String::from_utf8_lossy(&out.stderr));
    let doc = doc.unwrap();
    assert_eq!((doc["cleared"].as_u64(), doc["quarantined"].as_u64(), doc["errors"].as_u64()), (Some(7), Some(3), Some(0)));

    let mut written: Vec<String> = fs::read_dir(w.path("out")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    written.sort();
    let manifest: Value = serde_json::from_slice(&fs::read(w.path("out/quarantine-manifest.json")).unwrap()).unwrap();
    let quarantined: Vec<&str> = manifest["quarantined"].as_array().unwrap().iter().map(|q| q["file"].as_str().unwrap()).collect();
    assert_eq!(quarantined, ["08-report-name.json", "09-report-phone.json", "10-observation-note.json"]);
    for q in &quarantined {
        assert!(!written.contains(&q.to_string()), "{q} must not be copied");
    }
    assert_eq!(written.len(), 8);
    rescans_clean(&w.path("out"));
    let manifest_text = fs::read_to_string(w.path("out/quarantine-manifest.json")).unwrap();
    assert!(!manifest_text.contains("Weber") && !manifest_text.contains("555-7788"));
}

#[test]
fn batch_is_deterministic_for_a_fixed_key() {
    let w = Workdir::new();
    assert_eq!(checked(&w.batch(&fixtures(), "a", "va.log")).0, 0);
    assert_eq!(checked(&w.batch(&fixtures(), "b", "vb.log")).0, 0);
    // rerun against an existing vault as well
    assert_eq!(checked(&w.batch(&fixtures(), "c", "va.log")).0, 0);
    for name in fs::read_dir(w.path("a")).unwrap().map(|e| e.unwrap().file_name()) {
        let a = fs::read(w.path("a").join(&name)).unwrap();
        assert_eq!(a, fs::read(w.path("b").join(&name)).unwrap(), "{name:?}");
        assert_eq!(a, fs::read(w.path("c").join(&name)).unwrap(), "{name:?}");
    }
}

#[test]
fn empty_input_directory() {
    let w = Workdir::new();
    fs::create_dir(w.path("empty")).unwrap();
    let (code, doc) = checked(&w.batch(&w.path("empty"), "out", "vault.log"));
    let doc = doc.unwrap();
    assert_eq!(code, 0);
    assert_eq!((doc["cleared"].as_u64(), doc["quarantined"].as_u64(), doc["errors"].as_u64()), (Some(0), Some(0), Some(0)));
}

#[cfg(unix)]
#[test]
fn unreadable_files_are_isolated() {
    let w = Workdir::new();
    let input = w.path("in");
    fs::create_dir(&input).unwrap();
    for f in ["01-patient.json", "02-observation.json"] {
        fs::copy(fixtures().join(f), input.join(f)).unwrap();
    }
    std::os::unix::fs::symlink(w.path("gone.json"), input.join("00-dangling.json")).unwrap();
    fs::write(input.join("03-garbage.json"), b"\xff\xfe not json").unwrap();
    let out = w.batch(&input, "out", "vault.log");
    let (code, doc) = checked(&out);
    let doc = doc.unwrap();
    assert_eq!(code, 1);
    assert_eq!((doc["cleared"].as_u64(), doc["errors"].as_u64()), (Some(2), Some(2)));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("00-dangling.json") && stderr.contains("03-garbage.json"), "{stderr}");
    assert!(w.path("out/01-patient.json").exists() && w.path("out/02-observation.json").exists());
}

#[test]
fn batch_appends_audit_entries_and_verify_reports_tampering() {
    let w = Workdir::new();
    let out = run(&[
        "deid", "batch", "--input", fixtures().to_str().unwrap(), "--output", &w.s("out"), "--vault", &w.s("vault.log"),
        "--vault-key", &w.s("vault.key"), "--audit", &w.s("audit.log"),
    ]);
    assert_eq!(checked(&out).0, 0);
    let (code, doc) = checked(&run(&["audit", "verify", "--log", &w.s("audit.log")]));
    let doc = doc.unwrap();
    assert_eq!(code, 0);
    assert_eq!(doc["ok"], true);
    // one Ingest entry per file plus one per item
    assert!(doc["verified"].as_u64().unwrap() >= 10 + 11);

    let mut bytes = fs::read(w.path("audit.log")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    fs::write(w.path("audit.log"), &bytes).unwrap();
    let (code, doc) = checked(&run(&["audit", "verify", "--log", &w.s("audit.log")]));
    let doc = doc.unwrap();
    assert_eq!(code, 1);
    assert_eq!(doc["ok"], false);
    assert_eq!(doc["first_bad_seq"].as_u64(), verify_bytes(&bytes).first_bad_seq);
}

#[test]
fn vault_keygen_export_import() {
    let w = Workdir::new();
    let (code, _) = checked(&run(&["vault", "keygen", "--out", &w.s("fresh.key")]));
    assert_eq!(code, 0);
    assert_eq!(fs::read_to_string(w.path("fresh.key")).unwrap().trim().len(), 64);
    assert_eq!(checked(&run(&["vault", "keygen", "--out", &w.s("fresh.key")])).0, 2, "never overwrites a key");

    assert_eq!(checked(&w.batch(&fixtures(), "out", "vault.log")).0, 0);
    let export = |vault: &str, out: &str| {
        run(&["vault", "export", "--out", &w.s(out), "--vault", &w.s(vault), "--vault-key", &w.s("vault.key"), "--audit", &w.s("audit.log")])
    };
    let (code, doc) = checked(&export("vault.log", "dump1.bin"));
    assert_eq!(code, 0);
    let entries = doc.unwrap()["entries"].as_u64().unwrap();
    assert!(entries > 0);

    let import = run(&["vault", "import", "--in", &w.s("dump1.bin"), "--vault", &w.s("copy.log"), "--vault-key", &w.s("vault.key")]);
    let (code, doc) = checked(&import);
    assert_eq!(code, 0);
    assert_eq!(doc.unwrap()["added"].as_u64(), Some(entries));
    checked(&export("copy.log", "dump2.bin"));
    assert_eq!(fs::read(w.path("dump1.bin")).unwrap(), fs::read(w.path("dump2.bin")).unwrap());

    let wrong = run(&["vault", "import", "--in", &w.s("dump1.bin"), "--vault", &w.s("other.log"), "--vault-key", &w.s("fresh.key")]);
    assert_eq!(checked(&wrong).0, 2);
    let (_, doc) = checked(&run(&["audit", "verify", "--log", &w.s("audit.log")]));
    assert_eq!(doc.unwrap()["verified"].as_u64(), Some(2));
}

#[test]
fn hash_password_reads_stdin() {
    use std::io::Write;
    let mut child = Command::new(BIN)
        .args(["hash-password", "--totp"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"hunter2 hunter2\n").unwrap();
    let out = child.wait_with_output().unwrap();
    let (code, doc) = checked(&out);
    let doc = doc.unwrap();
    assert_eq!(code, 0);
    assert!(doc["password_hash"].as_str().unwrap().starts_with("$argon2id$"));
    assert_eq!(doc["totp_secret"].as_str().unwrap().len(), 32);
}

#[test]
fn config_file_supplies_paths() {
    let w = Workdir::new();
    let config = format!(
        "enclave_root = {:?}\nquarantine_root = {:?}\nvault_path = {:?}\nvault_key_path = {:?}\naudit_path = {:?}\n",
        w.s("enclave"),
        w.s("hospital"),
        w.s("vault.log"),
        w.s("vault.key"),
        w.s("audit.log")
    );
    fs::write(w.path("gate.toml"), config).unwrap();
    let out = run(&["--config", &w.s("gate.toml"), "deid", "batch", "--input", fixtures().to_str().unwrap(), "--output", &w.s("out")]);
    assert_eq!(checked(&out).0, 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(w.path("vault.log").exists());
    let (code, _) = checked(&run(&["audit", "verify", "--config", &w.s("gate.toml")]));
    assert_eq!(code, 0);
}
