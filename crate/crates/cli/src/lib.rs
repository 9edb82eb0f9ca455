//! Library half of the `enclave-gate` operator binary.

pub mod batch;
