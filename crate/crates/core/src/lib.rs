//! Zero-shot prompt-based named entity recognition harness for historical
//! newspaper corpora.
//!
//! The crate covers corpus ingestion ([`corpus`]), prompt rendering
//! ([`prompting`]), generation backends with a persistent response cache
//! ([`backend`]), the extraction pipeline ([`extraction`]), fuzzy scoring
//! ([`metrics`]), language and date probing ([`probing`]) and report
//! rendering ([`report`]).

pub mod backend;
pub mod corpus;
pub mod extraction;
pub mod metrics;
pub mod probing;
pub mod prompting;
pub mod report;
