//! Session service for human-in-the-loop annotation: a persistent session
//! store and the JSON-over-HTTP API in front of it.
//!
//! A session runs the selection pipeline once, queues the chosen sentences
//! for labeling, and trains and evaluates the augmented classifier when the
//! last label arrives. Oracle-mode sessions finish in the start request.

mod api;
mod error;
mod store;

pub use api::{router, serve};
pub use error::{Result, ServiceError};
pub use store::{
    SessionRequest, SessionState, SessionStatus, SessionStore, SessionSummary, StartReply, Submission,
    SubmittedRecord,
};
