//! LLM-assisted annotation of MAIN narrative macrostructure in CHAT
//! transcripts, with inter-rater agreement, reporting and a review service.

pub mod agreement;
pub mod annotate;
pub mod chat;
pub mod config;
pub mod corpus;
pub mod llm;
pub mod prompting;
pub mod report;
pub mod review;
pub mod rubric;
pub mod sampling;
