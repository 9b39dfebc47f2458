//! Bundled example models, embedded from `models/` at the repository root.

/// Transfer cell with the concurrent pusher/return branch.
pub const TRANSFER_BUGGY: &str = include_str!("../../../models/transfer_buggy.ipn");

/// Transfer cell with the sequentialized lower branch.
pub const TRANSFER_FIXED: &str = include_str!("../../../models/transfer_fixed.ipn");
