//! Directory-to-directory de-identification for one-off data dumps.
//!
//! Each regular file in the input directory holds one JSON resource, bundle
//! or DICOM JSON metadata object. Files are processed in parallel through the
//! same pipeline the gateway uses; results are then written in file-name
//! order so the summary, manifest and outputs never depend on scheduling.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use enclave_gate_core::model::from_json_value;
use enclave_gate_core::{
    process_resource, AuditAction, AuditEvent, AuditLog, FindingCategory, PipelineError, PseudonymVault, ResourceKind, RuleSet,
};
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_MANIFEST: &str = "quarantine-manifest.json";
pub const BATCH_PRINCIPAL: &str = "ops-cli";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub cleared: usize,
    pub quarantined: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestFinding {
    pub path: String,
    pub category: FindingCategory,
    pub detector: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestTicket {
    pub id: String,
    pub findings: Vec<ManifestFinding>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuarantinedFile {
    pub file: String,
    pub tickets: Vec<ManifestTicket>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FailedFile {
    pub file: String,
    pub error: String,
}

/// Written next to the cleared outputs. Names quarantined inputs and the
/// findings that held them back, never their content.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct Manifest {
    pub quarantined: Vec<QuarantinedFile>,
    pub errors: Vec<FailedFile>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BatchReport {
    #[serde(flatten)]
    pub summary: Summary,
    pub manifest: PathBuf,
    pub failures: Vec<FailedFile>,
}

impl BatchReport {
    pub fn exit_code(&self) -> i32 {
        i32::from(self.summary.errors != 0)
    }
}

pub struct BatchOptions<'a> {
    pub input: &'a Path,
    pub output: &'a Path,
    /// Defaults to [`DEFAULT_MANIFEST`] inside `output`.
    pub manifest: Option<&'a Path>,
    pub rules: &'a RuleSet,
    pub vault: &'a PseudonymVault,
    pub audit: Option<&'a AuditLog>,
}

enum FileResult {
    Cleared { bytes: String, items: Vec<String> },
    Quarantined { tickets: Vec<ManifestTicket>, cleared_items: usize },
    Failed(String),
}

/// Reads the directory listing. Only regular files (or links to them) are
/// inputs; subdirectories are ignored. Dangling links are kept so they show
/// up as per-file errors.
fn list_inputs(dir: &Path) -> io::Result<Vec<(String, PathBuf)>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir)? {
        let entry = entry?;
        let ft = entry.file_type()?;
        let keep = ft.is_file() || (ft.is_symlink() && !entry.path().is_dir());
        if keep {
            files.push((entry.file_name().to_string_lossy().into_owned(), entry.path()));
        }
    }
    files.sort();
    Ok(files)
}

fn process_file(path: &Path, rules: &RuleSet, vault: &PseudonymVault) -> FileResult {
    let text = match fs::read(path) {
        Ok(bytes) => match String::from_utf8(bytes) {
            Ok(t) => t,
            Err(_) => return FileResult::Failed("not UTF-8".into()),
        },
        Err(e) => return FileResult::Failed(format!("unreadable: {e}")),
    };
    let value: serde_json::Value = match serde_json::from_str(&text) {
        Ok(v) => v,
        Err(e) => return FileResult::Failed(format!("malformed JSON: {e}")),
    };
    // DICOM JSON is the only accepted shape without a resourceType.
    let hint = value.get("resourceType").is_none().then_some(ResourceKind::DicomStudyMeta);
    let outcome = from_json_value(value, hint)
        .map_err(PipelineError::from)
        .and_then(|resource| process_resource(&resource, rules, vault));
    match outcome {
        Err(e) => FileResult::Failed(e.to_string()),
        Ok(out) => match out.output.clone() {
            Some(bytes) => FileResult::Cleared { bytes, items: out.cleared().map(|r| format!("{}/{}", r.kind, r.id)).collect() },
            None => FileResult::Quarantined {
                cleared_items: out.cleared().count(),
                tickets: out
                    .tickets()
                    .map(|t| ManifestTicket {
                        id: t.id.clone(),
                        findings: t
                            .findings
                            .iter()
                            .map(|f| ManifestFinding { path: f.path.clone(), category: f.category, detector: f.detector.clone() })
                            .collect(),
                    })
                    .collect(),
            },
        },
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    io::Write::write_all(&mut tmp, bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Runs the batch. Only a missing input directory or an unwritable output
/// directory fails as a whole; everything else is counted per file.
pub fn batch_deidentify(opts: &BatchOptions<'_>) -> io::Result<BatchReport> {
    let inputs = list_inputs(opts.input)?;
    fs::create_dir_all(opts.output)?;
    let manifest_path = opts.manifest.map(Path::to_path_buf).unwrap_or_else(|| opts.output.join(DEFAULT_MANIFEST));
    let manifest_name = (manifest_path.parent() == Some(opts.output))
        .then(|| manifest_path.file_name().map(|n| n.to_string_lossy().into_owned()))
        .flatten();

    let results: Vec<FileResult> = inputs.par_iter().map(|(_, path)| process_file(path, opts.rules, opts.vault)).collect();

    let mut summary = Summary::default();
    let mut manifest = Manifest::default();
    for ((name, _), result) in inputs.iter().zip(results) {
        let result = match result {
            FileResult::Cleared { .. } if manifest_name.as_deref() == Some(name.as_str()) => {
                FileResult::Failed("file name collides with the manifest".into())
            }
            other => other,
        };
        let result = match result {
            FileResult::Cleared { bytes, items } => {
                let audited = audit_file(opts.audit, name, AuditAction::Cleared, &items, "deid-verified");
                match audited.and_then(|_| write_atomic(&opts.output.join(name), bytes.as_bytes()).map_err(|e| e.to_string())) {
                    Ok(()) => {
                        summary.cleared += 1;
                        continue;
                    }
                    Err(e) => FileResult::Failed(e),
                }
            }
            other => other,
        };
        match result {
            FileResult::Quarantined { tickets, cleared_items } => {
                let ids: Vec<String> = tickets.iter().map(|t| t.id.clone()).collect();
                let outcome = format!("tickets={} withheld-cleared={cleared_items}", ids.len());
                match audit_file(opts.audit, name, AuditAction::Quarantined, &ids, &outcome) {
                    Ok(()) => {
                        summary.quarantined += 1;
                        manifest.quarantined.push(QuarantinedFile { file: name.clone(), tickets });
                    }
                    Err(e) => {
                        summary.errors += 1;
                        manifest.errors.push(FailedFile { file: name.clone(), error: e });
                    }
                }
            }
            FileResult::Failed(error) => {
                let _ = audit_file(opts.audit, name, AuditAction::Ingest, &[], "error");
                summary.errors += 1;
                manifest.errors.push(FailedFile { file: name.clone(), error });
            }
            FileResult::Cleared { .. } => unreachable!("handled above"),
        }
    }

    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path, format!("{text}\n").as_bytes())?;
    Ok(BatchReport { summary, manifest: manifest_path, failures: manifest.errors })
}

/// One Ingest entry for the file, then one entry per item.
fn audit_file(audit: Option<&AuditLog>, file: &str, action: AuditAction, items: &[String], outcome: &str) -> Result<(), String> {
    let Some(log) = audit else { return Ok(()) };
    let mut events = vec![AuditEvent::new(BATCH_PRINCIPAL, AuditAction::Ingest, format!("file:{file}"), outcome)];
    events.extend(items.iter().map(|item| AuditEvent::new(BATCH_PRINCIPAL, action, item, outcome)));
    log.append_all(events).map(drop).map_err(|e| format!("audit log: {e}"))
}
