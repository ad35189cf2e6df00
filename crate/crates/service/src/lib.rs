//! Deployment-assistant sessions.
//!
//! An agent walking the line posts outage readings location by location;
//! the session answers `continue`, `need_more_locations` or `place` from its
//! policy, and a confirmed placement advances any learner by one step.
//! Sessions persist as an event log plus snapshot (see [`store`]).

pub mod error;
pub mod http;
pub mod session;
pub mod store;

pub use error::{Result, ServiceError};
pub use http::{router, serve};
pub use session::{CreateSession, Measurement, Placement, Recommendation, Session};
pub use store::{SessionStore, DATA_DIR_ENV};
