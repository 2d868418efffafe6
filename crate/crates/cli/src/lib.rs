//! Command implementations behind the `report-qc` binary.

pub mod eval;
pub mod manifest;
pub mod run;
pub mod trace_cmd;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_MANIFEST: i32 = 3;
pub const EXIT_ID_MISMATCH: i32 = 4;
pub const EXIT_MALFORMED_TRACE: i32 = 5;
