pub mod cli;
pub mod harness;
pub mod history;
pub mod locking;
pub mod mvcc;
pub mod phenomena;
pub mod run;
pub mod workload;
