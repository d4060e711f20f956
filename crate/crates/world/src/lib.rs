//! Deterministic synthetic knowledge world: entities, fact/question
//! templates, corpora per unlearning target, and probe sets for every metric
//! family. A stand-in for a real-world forget/neighbor benchmark corpus at
//! desk scale.

pub mod corpus;
pub mod error;
pub mod probes;
pub mod templates;
pub mod vocab;
pub mod world;

pub use corpus::{render_corpora, Corpus, CorpusBundle, CorpusRole};
pub use error::WorldError;
pub use probes::{build_probes, ProbeFamily, ProbeItem, ProbeSet, MIN_PROBES_PER_FAMILY};
pub use vocab::TokenVocab;
pub use world::{World, WorldConfig};
