//! Procedural door domain: parameter sampling, pinhole rendering, a
//! kinematic door-opening oracle and on-disk datasets.

mod dataset;
mod door;
mod execute;
mod render;

pub use dataset::{
    generate_interaction_dataset, generate_pretrain_dataset, DoorSet, Imagery, InteractionDataset,
    InteractionRecord, Manifest, ManifestDoor, ManifestImage, PretrainDataset, SCHEMA_VERSION,
};
pub use door::{
    mirror_door, sample_action, sample_door, Action, DoorInstance, DoorSpec, ACTION_AXIS_RANGE,
    ACTION_RADIUS_RANGE, BOARD_HALF_EXTENT, DOOR_HEIGHT_RANGE, DOOR_MARGIN, DOOR_WIDTH_RANGE,
};
pub use execute::{
    execute_action, execute_action_with, ideal_action, ExecutionParams, HANDLE_SLIP_TOLERANCE,
};
pub use render::{
    project, render, Camera, BACKBOARD_RGB, BOARD_DISTANCE, DOOR_RGB, HANDLE_RGB, HANDLE_SIDE,
};

pub use crate::imageio::Image;

/// Default image side length.
pub const IMAGE_SIZE: usize = 64;
/// Default number of images rendered per door.
pub const SAMPLES_PER_DOOR: usize = 5;
