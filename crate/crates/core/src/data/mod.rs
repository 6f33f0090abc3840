//! Interaction logs: synthetic generation, TSV ingestion, leave-one-out
//! splits and negative sampling.

mod log;
mod negatives;
mod split;
mod synth;

pub use log::{load_log, write_log, write_mapping, IdMapping, Interaction, InteractionLog};
pub use negatives::sample_negatives;
pub use split::{interleave, split_leave_one_out, Event, Split, SplitDataset, UserSequences, DEFAULT_MIN_LEN};
pub use synth::{generate_synthetic, latent_interests, SynthSpec};
