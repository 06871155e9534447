//! Stateful labeling sessions around the adaptive stopping rule, exposed as
//! a small JSON API for a browser client.

pub mod api;
pub mod error;
pub mod journal;
pub mod session;
pub mod store;

pub use api::{router, serve, LabelRequest};
pub use error::{ServiceError, ServiceResult};
pub use session::{CreateSession, SessionStatus, StateView, TraceView, UnitGeometry};
pub use store::SessionStore;
