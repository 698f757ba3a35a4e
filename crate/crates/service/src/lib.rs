//! Job service: accepts analysis submissions, runs them on a bounded worker
//! pool and serves progress streams and exported results over HTTP/JSON.

mod error;
mod http;
mod journal;
mod service;

pub use error::ServiceError;
pub use http::{router, serve, serve_until};
pub use journal::JournalEntry;
pub use service::{EventStream, Service, ServiceConfig, DEFAULT_QUEUE_CAPACITY, DEFAULT_WORKERS};
