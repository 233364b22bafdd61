pub mod agent;
pub mod executor;
pub mod llm;
pub mod metrics;
pub mod retrieval;
pub mod task;
