//! Skeleton, rotation representation, forward kinematics and foot contacts.

pub mod contacts;
pub mod kinematics;
pub mod rotation;
pub mod sequence;
pub mod skeleton;

pub use contacts::{detect_foot_contacts, ContactThresholds, FootContactLabels};
pub use kinematics::{forward_kinematics, FkOp, JointPositions};
pub use rotation::{matrix_to_rot6d, rot6d_to_matrix, Mat3};
pub use sequence::{temporal_difference, MotionSequence, DEFAULT_FPS, MOTION_DIM, MOTION_MAGIC};
pub use skeleton::{Skeleton, JOINT_COUNT};
