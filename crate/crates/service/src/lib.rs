//! Incident sessions over HTTP: transcript lines in; classifications,
//! patch-form updates, standing orders, reminders and ePCR out.

pub mod api;
pub mod error;
pub mod pipeline;
pub mod session;
pub mod store;

pub use error::{ApiError, ErrorCode};
pub use pipeline::Pipeline;
pub use session::{ClockMode, Command, LogEntry, Session};
pub use store::Store;
