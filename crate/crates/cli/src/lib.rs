//! Library side of the `medledger` binary, shared with its tests.

pub mod bench;
