//! On-disk datasets written by `synth`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use iter_core::imaging::{decode_tokens, read_pnm};
use iter_core::world::WorldSample;
use iter_core::{RunConfig, TokenGrid, World};

use crate::manifest::{Manifest, MANIFEST_FILE};

pub const SUFFIXES: [&str; 4] = ["hq.csv", "hq.pgm", "lq.pgm", "lq.csv"];

pub fn item_file(index: usize, suffix: &str) -> String {
    format!("item_{index:04}_{suffix}")
}

pub struct Dataset {
    pub dir: PathBuf,
    /// Configuration the dataset was synthesized with.
    pub config: RunConfig,
    pub world: World,
    pub count: usize,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(&dir.join(MANIFEST_FILE))
            .with_context(|| format!("{} is not a dataset directory", dir.display()))?;
        if manifest.command != "synth" {
            bail!("{} was written by `{}`, not `synth`", dir.display(), manifest.command);
        }
        let config = manifest.run_config()?;
        let world = World::new(config.world, config.world_seed())?;
        let mut count = 0;
        while dir.join(item_file(count, SUFFIXES[0])).is_file() {
            count += 1;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            config,
            world,
            count,
        })
    }

    pub fn files(&self, index: usize) -> Vec<PathBuf> {
        SUFFIXES.iter().map(|s| self.dir.join(item_file(index, s))).collect()
    }

    pub fn load(&self, index: usize) -> Result<WorldSample> {
        if index >= self.count {
            bail!("item {index} out of range: dataset has {} items", self.count);
        }
        let vocab = self.config.world.vocab;
        let [hq_csv, _, lq_pgm, lq_csv] = <[PathBuf; 4]>::try_from(self.files(index)).expect("four files");
        let read = |p: &Path| fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()));
        let hq = TokenGrid::from_csv(&read(&hq_csv)?, vocab)?;
        let lq = TokenGrid::from_csv(&read(&lq_csv)?, vocab)?;
        let lq_image = read_pnm(fs::File::open(&lq_pgm).with_context(|| format!("cannot open {}", lq_pgm.display()))?)?;
        let hq_image = decode_tokens(&hq, self.world.codebook(), self.config.world.tile)?;
        Ok(WorldSample {
            hq,
            hq_image,
            lq_image,
            lq,
        })
    }
}
