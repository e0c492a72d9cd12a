pub mod cloud;
pub mod event;
pub mod geo;
pub mod pattern;
pub mod time;
pub mod dcep;
pub mod orchestrator;
pub mod sar;
pub mod scenario;
