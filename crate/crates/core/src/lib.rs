pub mod corpus;
pub mod digest;
pub mod llm;
pub mod parse;
pub mod prompt;
pub mod pipeline;
pub mod store;
pub mod embed;
pub mod eval;
pub mod config;
pub mod cli;
