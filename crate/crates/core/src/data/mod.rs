//! Sequences, labels, structures and the samplers that feed training.

pub mod alphabet;
pub mod io;
pub mod record;
pub mod sampling;
pub mod structure;
pub mod synthetic;

pub use alphabet::{encode_sequence, one_hot, Alphabet, Token, NUM_CANONICAL, NUM_TOKENS, UNKNOWN};
pub use io::{load_dataset, parse_embeddings, parse_fasta, write_embeddings, DatasetPaths};
pub use record::{
    hierarchy_level, labels_from_regions, regions_from_labels, ContactMap, HierarchyLabel, ProteinRecord, Region,
    RegionKind,
};
pub use sampling::{level_probabilities, perturb_sequence, PairDraw, PairSampler, PairSamplerConfig};
pub use structure::contacts_from_coordinates;
pub use synthetic::{
    generate_synthetic_corpus, generate_synthetic_tm, SyntheticCorpusConfig, SyntheticTmConfig, TmCategory,
};
