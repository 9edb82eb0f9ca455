use std::collections::HashSet;

use enclave_gate_core::vault::{derive_pseudonym, is_pseudonym};
use enclave_gate_core::{AuditLog, Privilege, PrivilegeSet, PseudonymVault, Scope, VaultError, VaultKey};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn key(byte: u8) -> VaultKey {
    VaultKey::from_slice(&[byte; 32]).unwrap()
}

#[test]
fn hundred_thousand_random_ids_never_collide() {
    let mut rng = rand::rngs::StdRng::seed_from_u64(42);
    let k = key(9);
    let mut sources = HashSet::new();
    let mut pseudonyms = HashSet::new();
    while sources.len() < 100_000 {
        let len = rng.gen_range(1..24);
        let id: String = (0..len).map(|_| rng.gen_range(b'!'..=b'~') as char).collect();
        if sources.insert(id.clone()) {
            let p = derive_pseudonym(&k, Scope::PatientId, &id);
            assert!(is_pseudonym(&p));
            assert!(pseudonyms.insert(p), "collision for {id:?}");
        }
    }
}

#[test]
fn same_key_same_pseudonyms_after_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vault.log");
    let ids: Vec<String> = (0..500).map(|i| format!("MRN-{i:05}")).collect();
    let first: Vec<String> = {
        let v = PseudonymVault::open(&path, key(4)).unwrap();
        ids.iter().map(|id| v.get_or_create(id, Scope::PatientId).unwrap()).collect()
    };
    let v = PseudonymVault::open(&path, key(4)).unwrap();
    assert_eq!(v.len(), ids.len());
    let again: Vec<String> = ids.iter().map(|id| v.get_or_create(id, Scope::PatientId).unwrap()).collect();
    assert_eq!(first, again);
    assert_eq!(v.len(), ids.len());
    // a fresh in-memory vault with the same key derives the same values
    let fresh = PseudonymVault::in_memory(key(4));
    assert_eq!(fresh.get_or_create(&ids[17], Scope::PatientId).unwrap(), first[17]);
    assert!(PseudonymVault::open(&path, key(5)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reidentify_inverts_with_privilege_and_refuses_without(
        ids in prop::collection::hash_set("[ -~]{1,40}", 1..20),
        scope_idx in 0usize..3,
    ) {
        let scope = Scope::ALL[scope_idx];
        let vault = PseudonymVault::in_memory(key(1));
        let audit = AuditLog::in_memory();
        let allowed: PrivilegeSet = [Privilege::Reidentify].into_iter().collect();
        let denied: PrivilegeSet = [Privilege::Review, Privilege::Export].into_iter().collect();
        for id in &ids {
            let p = vault.get_or_create(id, scope).unwrap();
            prop_assert!(is_pseudonym(&p));
            prop_assert_eq!(vault.reidentify(&p, scope, "alice", &allowed, &audit).unwrap(), id.clone());
            prop_assert_eq!(vault.reidentify(&p, scope, "bob", &denied, &audit), Err(VaultError::Forbidden));
        }
        prop_assert_eq!(audit.len(), 2 * ids.len());
        prop_assert!(audit.verify().ok);
    }

    #[test]
    fn scopes_separate_identical_sources(id in "[ -~]{1,40}") {
        let k = key(2);
        let all: HashSet<String> = Scope::ALL.iter().map(|s| derive_pseudonym(&k, *s, &id)).collect();
        prop_assert_eq!(all.len(), 3);
    }

    #[test]
    fn export_import_round_trips(ids in prop::collection::hash_set("[a-z0-9]{1,12}", 0..30)) {
        let src = PseudonymVault::in_memory(key(3));
        for id in &ids {
            src.get_or_create(id, Scope::ResourceId).unwrap();
        }
        let priv_export: PrivilegeSet = [Privilege::Export].into_iter().collect();
        let doc = src.export_mappings(&priv_export).unwrap();
        let dst = PseudonymVault::in_memory(key(3));
        prop_assert_eq!(dst.import_mappings(&doc).unwrap(), ids.len());
        prop_assert_eq!(dst.export_mappings(&priv_export).unwrap(), doc.clone());
        prop_assert!(PseudonymVault::in_memory(key(8)).import_mappings(&doc).is_err() || ids.is_empty());
    }
}
