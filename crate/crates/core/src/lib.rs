//! Privacy-aware memory forensics.
//!
//! The pipeline picks the chat-bearing process of a messaging application,
//! captures (or loads) its memory image, carves printable ASCII and UTF-16LE
//! strings, retrieves lines containing organisational keywords, scores each
//! line for contextual sensitivity and releases alerts only for lines that
//! score above the policy threshold. Everything else is counted and dropped.
//!
//! ```text
//! discovery -> acquisition -> carving -> retrieval -> classify -> privacy -> alerting
//! ```
//!
//! Each stage is usable on its own; [`scan::run_scan`] wires them together.

pub mod acquisition;
pub mod alerting;
pub mod carving;
pub mod classify;
pub mod corpus;
pub mod discovery;
pub mod privacy;
pub mod retrieval;
pub mod scan;

pub use acquisition::{ImageSource, MemoryImage};
pub use carving::{carve, render_text, Encoding, ExtractedString};
pub use classify::{Scorer, SensitivityVerdict};
pub use discovery::{select_target, ProcessRecord, ProcessTable};
pub use retrieval::{retrieve, similarity, CandidateMessage, KeywordLexicon};
pub use scan::{run_scan, ScanConfig, ScanSummary};
