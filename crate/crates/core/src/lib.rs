pub mod table;
pub mod ops;
pub mod gateway;
pub mod templates;
pub mod knowledge;
pub mod planner;
pub mod answer;
pub mod harness;
