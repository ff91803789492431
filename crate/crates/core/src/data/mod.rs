//! Scenario generation, detector simulation, appearance synthesis and
//! KITTI-format exchange.

pub mod appearance;
pub mod detections;
pub mod kitti;
pub mod scenario;

pub use appearance::{synth_appearance, AppearanceFeature};
pub use detections::{in_region, simulate_detections, simulate_frame, Detection};
pub use kitti::{
    parse_ego_poses, parse_kitti_records, records_to_scenario, scenario_to_records, write_ego_poses,
    write_kitti_records, KittiError, KittiRecord,
};
pub use scenario::{generate_benchmark, generate_scenario, generate_test_set, split_frames, Frame, GtObject, Scenario, ScenarioError};
