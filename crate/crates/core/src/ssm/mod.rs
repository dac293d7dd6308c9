//! Selective state-space sequence layer.

mod bench;
mod block;
mod scan;

pub use bench::{scan_benchmark, ScanTiming};
pub use block::{widen_step_sizes, MambaBlock, MambaConfig};
pub use scan::{scan_on_tape, selective_scan, SelectiveScanOp};
