pub mod beam;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod gateway;
pub mod kernel;
pub mod pipeline;
pub mod seed;
pub mod template;
