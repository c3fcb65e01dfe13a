//! Self-knowledge guided retrieval augmentation.
//!
//! A model is asked each training question with and without retrieved
//! passages; the comparison labels the question as known or unknown to the
//! model. New questions inherit a label from one of several elicitation
//! strategies, and only unknown questions pay for retrieval.

pub mod adaptive;
pub mod collection;
pub mod elicitation;
pub mod evaluation;
pub mod gateway;
pub mod io;
pub mod metrics;
pub mod parallel;
pub mod retrieval;
pub mod synthetic;
pub mod types;
