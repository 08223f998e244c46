//! HTTP + JSON service for the interactive loop: upload a damaged image, get
//! the coarse result and an editable pseudo-color mask, submit edited masks
//! any number of times, get fine results.
//!
//! Sessions live on local disk (inputs, cached features, history, manifest)
//! and survive restarts. Requests for one session are serialized; different
//! sessions proceed in parallel over a shared frozen model.

mod error;
mod http;
mod session;

pub use error::{ErrorBody, ServiceError, ServiceResult};
pub use http::{router, serve, CreateSessionRequest, Health, RefineRequest};
pub use session::{
    decode_b64, encode_b64, HistoryEntry, InpaintService, RefineResponse, ServiceConfig,
    SessionDescriptor, SessionState, DEFAULT_TTL,
};
