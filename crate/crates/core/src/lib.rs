//! Core of the shared-control teleoperation stack: geometry, arm kinematics,
//! motion planning, point-cloud processing, the simulated workcell, and the
//! binary wire protocol.

pub mod arm;
pub mod doc;
pub mod frames;
pub mod perception;
pub mod planner;
pub mod protocol;
pub mod simworld;
