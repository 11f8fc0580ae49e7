//! Code-level editing, transfer and the fix/vary studies.

mod codes_file;
mod edit;
mod experiments;

pub use codes_file::{CodesFile, CODES_FILE_VERSION};
pub use edit::{
    apply_op, apply_ops, transfer_codes, CodebookSizes, EditKind, EditOp, EditPayload, EditTarget, Level,
};
pub use experiments::{
    apply_edits, average_joint_speed, decode_dispersion, dispersion, fix_bottom_vary_top, fix_top_replace_bottom,
    BottomReplacement,
};
