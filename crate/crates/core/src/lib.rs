pub mod cli;
pub mod clock;
pub mod data;
pub mod model;
pub mod pipeline;
pub mod report;
pub mod runtime;
pub mod scenario;
pub mod storage;
pub mod workflow;
