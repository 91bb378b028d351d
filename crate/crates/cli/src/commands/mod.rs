pub mod collect_cmd;
pub mod common;
pub mod experiments;
pub mod gen;
pub mod oracle_cmd;
pub mod solve;
pub mod sweep;
pub mod verify;
