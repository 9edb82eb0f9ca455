//! Shared inputs for the pipeline benchmarks.

use enclave_gate_core::testkit::corpus;
use enclave_gate_core::{parse_resource, PseudonymVault, Resource, ResourceKind, VaultKey};

pub const BENCH_KEY: [u8; 32] = [0x6b; 32];

pub fn vault() -> PseudonymVault {
    PseudonymVault::in_memory(VaultKey::from_slice(&BENCH_KEY).expect("32 bytes"))
}

/// Parsed synthetic documents of one kind, drawn from a fixed seed.
pub fn documents(kind: ResourceKind, n: usize) -> Vec<Resource> {
    corpus(0xbe7c4, n * 40)
        .into_iter()
        .filter(|d| d.kind == kind && !d.narrative_phi)
        .take(n)
        .map(|d| parse_resource(&d.json, d.hint).expect("corpus parses"))
        .collect()
}

/// Raw JSON of `n` mixed documents, as submitted to the gateway.
pub fn raw_corpus(n: usize) -> Vec<(String, Option<ResourceKind>)> {
    corpus(0x5eed, n).into_iter().map(|d| (d.json, d.hint)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_non_empty() {
        for kind in [ResourceKind::Patient, ResourceKind::Bundle, ResourceKind::DicomStudyMeta] {
            assert_eq!(documents(kind, 4).len(), 4, "{kind}");
        }
        assert_eq!(raw_corpus(10).len(), 10);
    }
}
