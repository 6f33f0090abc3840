#![allow(dead_code)]

use gcalab::backbone::ModelConfig;
use gcalab::data::SynthSpec;
use gcalab::gca::{GcaConfig, KvSource};
use gcalab_runner::spec::{DataSource, RunSpec, TrainingConfig};

/// A run small enough to train in well under a second.
pub fn tiny_spec() -> RunSpec {
    RunSpec {
        model: ModelConfig {
            d: 8,
            layers: 1,
            heads: 2,
            max_len: 6,
            dropout_p: 0.1,
            gca: GcaConfig {
                heads: 2,
                kv_source: KvSource::Pairwise,
                ..Default::default()
            },
            ..Default::default()
        },
        data: DataSource::Synthetic(SynthSpec::new(60, 20, 0.7, (3, 6), 1)),
        training: TrainingConfig {
            epochs: 2,
            patience: 2,
            batch_size: 16,
            lr: 5e-3,
            negatives_per_pos: 2,
            eval_negatives: 9,
            eval_batch_size: 32,
        },
        seeds: vec![0],
        output_dir: None,
    }
}

pub fn with_gca(mut spec: RunSpec, placements: Vec<usize>) -> RunSpec {
    spec.model.gca.placements = placements;
    spec
}
