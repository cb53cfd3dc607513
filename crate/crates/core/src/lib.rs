pub mod analysis;
pub mod chem;
pub mod controller;
pub mod fsm;
pub mod fusion;
pub mod planner;
pub mod plant;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod scenario;
pub mod sim;
pub mod supervisors;
