//! Fixtures shared by the benchmarks under `benches/`.

use iter_core::trainer::TrainPair;
use iter_core::world::WorldSample;
use iter_core::{RunConfig, Trainer, World, WorldStream};

/// Default-sized world, an untrained model and one batch of pairs.
pub struct Fixture {
    pub config: RunConfig,
    pub world: World,
    pub sample: WorldSample,
    pub batch: Vec<TrainPair>,
    pub trainer: Trainer,
}

impl Fixture {
    pub fn new(config: RunConfig) -> Self {
        let world = World::new(config.world, config.world_seed()).expect("valid world");
        let stream = WorldStream::new(world.clone(), config.train_data_seed());
        let trainer =
            Trainer::new(config.train_config(), config.world.vocab, config.input_mode()).expect("valid trainer");
        let batch = trainer.next_batch(&stream).expect("batch");
        let sample = stream.sample(0).expect("sample");
        Self {
            config,
            world,
            sample,
            batch,
            trainer,
        }
    }
}

impl Default for Fixture {
    fn default() -> Self {
        Self::new(RunConfig::default())
    }
}
