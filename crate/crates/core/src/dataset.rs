//! Houses and episodes grouped into the four evaluation splits.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::DistanceTable;
use crate::worldgen::{
    generate_instruction, generate_world, make_episode, EpisodeSpec, Granularity, ThresholdSchedule, World,
    WorldConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    ValSeenInstruction,
    ValSeenHouse,
    ValUnseenHouse,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Train,
        Split::ValSeenInstruction,
        Split::ValSeenHouse,
        Split::ValUnseenHouse,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::ValSeenInstruction => "val_seen_instruction",
            Split::ValSeenHouse => "val_seen_house",
            Split::ValUnseenHouse => "val_unseen_house",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace('-', "_");
        Split::ALL
            .into_iter()
            .find(|x| x.name() == norm)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub seed: u64,
    pub world: WorldConfig,
    pub train_houses: usize,
    pub unseen_houses: usize,
    /// Objects per seen house kept out of training for the seen-house split.
    pub held_out_objects: usize,
    pub train_episodes_per_object: usize,
    pub seen_instruction_episodes_per_object: usize,
    pub val_episodes_per_object: usize,
    pub granularity: Granularity,
    pub schedule: ThresholdSchedule,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            world: WorldConfig::default(),
            train_houses: 4,
            unseen_houses: 3,
            held_out_objects: 2,
            train_episodes_per_object: 10,
            seen_instruction_episodes_per_object: 3,
            val_episodes_per_object: 5,
            granularity: Granularity::FULL,
            schedule: ThresholdSchedule::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        if self.train_houses == 0 || self.unseen_houses == 0 {
            return Err(Error::Config("need at least one seen and one unseen house".into()));
        }
        if self.held_out_objects >= self.world.objects {
            return Err(Error::Config(format!(
                "held_out_objects {} leaves no training objects out of {}",
                self.held_out_objects, self.world.objects
            )));
        }
        if self.train_episodes_per_object == 0 {
            return Err(Error::Config("train_episodes_per_object must be positive".into()));
        }
        Ok(())
    }
}

/// A world with its precomputed all-pairs distances.
#[derive(Debug, Clone)]
pub struct IndexedWorld {
    pub world: World,
    pub dist: DistanceTable,
}

#[derive(Debug, Clone, Default)]
pub struct WorldSet {
    worlds: BTreeMap<u64, IndexedWorld>,
}

impl WorldSet {
    pub fn new(worlds: impl IntoIterator<Item = World>) -> Self {
        let worlds = worlds
            .into_iter()
            .map(|w| {
                let dist = w.distances();
                (w.id, IndexedWorld { world: w, dist })
            })
            .collect();
        Self { worlds }
    }

    pub fn get(&self, id: u64) -> Result<&IndexedWorld> {
        self.worlds
            .get(&id)
            .ok_or_else(|| Error::Config(format!("episode refers to unknown world {id}")))
    }

    pub fn ids(&self) -> Vec<u64> {
        self.worlds.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.worlds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.worlds.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &IndexedWorld> {
        self.worlds.values()
    }
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub worlds: WorldSet,
    pub seen_houses: Vec<u64>,
    pub unseen_houses: Vec<u64>,
    pub splits: BTreeMap<Split, Vec<EpisodeSpec>>,
}

/// On-disk index written next to the world and split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub format: String,
    pub config: DatasetConfig,
    pub seen_houses: Vec<u64>,
    pub unseen_houses: Vec<u64>,
    pub worlds: Vec<String>,
    pub splits: BTreeMap<String, SplitEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEntry {
    pub file: String,
    pub episodes: usize,
}

pub const DATASET_FORMAT: &str = "gbe-dataset-v1";

/// World ids stay below 2^53 so they survive any JSON reader.
fn world_seeds(rng: &mut ChaCha8Rng, count: usize) -> Vec<u64> {
    let mut out: Vec<u64> = Vec::with_capacity(count);
    while out.len() < count {
        let s = rng.random::<u64>() >> 11;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

fn episodes_for(
    prefix: &str,
    iw: &IndexedWorld,
    object: usize,
    count: usize,
    cfg: &DatasetConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<EpisodeSpec>> {
    (0..count)
        .map(|k| {
            make_episode(
                format!("{prefix}-{}-o{object}-{k}", iw.world.id),
                &iw.world,
                &iw.dist,
                object,
                cfg.granularity,
                &cfg.schedule,
                rng,
            )
        })
        .collect()
}

/// Builds every split. Pure function of the config.
pub fn generate_dataset(cfg: &DatasetConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let seeds = world_seeds(&mut rng, cfg.train_houses + cfg.unseen_houses);
    let (seen_ids, unseen_ids) = seeds.split_at(cfg.train_houses);
    let worlds = seeds
        .iter()
        .map(|&s| generate_world(s, &cfg.world))
        .collect::<Result<Vec<_>>>()?;
    let worlds = WorldSet::new(worlds);

    let mut splits: BTreeMap<Split, Vec<EpisodeSpec>> = Split::ALL.iter().map(|&s| (s, Vec::new())).collect();
    for &id in seen_ids {
        let iw = worlds.get(id)?;
        let mut objects: Vec<usize> = (0..iw.world.objects.len()).collect();
        objects.shuffle(&mut rng);
        let (held, trained) = objects.split_at(cfg.held_out_objects);
        let mut trained = trained.to_vec();
        trained.sort_unstable();
        for &o in &trained {
            let train = episodes_for("train", iw, o, cfg.train_episodes_per_object, cfg, &mut rng)?;
            let used: Vec<usize> = train.iter().map(|e| e.start).collect();
            let mut seen = Vec::new();
            for k in 0..cfg.seen_instruction_episodes_per_object {
                // same instruction, preferring a start not used in training
                let mut ep = None;
                for _ in 0..32 {
                    let e = make_episode(
                        format!("seen-instr-{id}-o{o}-{k}"),
                        &iw.world,
                        &iw.dist,
                        o,
                        cfg.granularity,
                        &cfg.schedule,
                        &mut rng,
                    )?;
                    let fresh = !used.contains(&e.start);
                    ep = Some(e);
                    if fresh {
                        break;
                    }
                }
                seen.push(ep.expect("at least one attempt"));
            }
            splits.get_mut(&Split::Train).expect("present").extend(train);
            splits.get_mut(&Split::ValSeenInstruction).expect("present").extend(seen);
        }
        let mut held = held.to_vec();
        held.sort_unstable();
        for &o in &held {
            let v = episodes_for("seen-house", iw, o, cfg.val_episodes_per_object, cfg, &mut rng)?;
            splits.get_mut(&Split::ValSeenHouse).expect("present").extend(v);
        }
    }
    for &id in unseen_ids {
        let iw = worlds.get(id)?;
        for o in 0..iw.world.objects.len() {
            let v = episodes_for("unseen", iw, o, cfg.val_episodes_per_object, cfg, &mut rng)?;
            splits.get_mut(&Split::ValUnseenHouse).expect("present").extend(v);
        }
    }
    Ok(Dataset {
        config: cfg.clone(),
        worlds,
        seen_houses: seen_ids.to_vec(),
        unseen_houses: unseen_ids.to_vec(),
        splits,
    })
}

/// Same episodes with instructions rebuilt at a different granularity.
pub fn with_granularity(worlds: &WorldSet, episodes: &[EpisodeSpec], g: Granularity) -> Result<Vec<EpisodeSpec>> {
    episodes
        .iter()
        .map(|e| {
            let iw = worlds.get(e.world_id)?;
            let obj = iw
                .world
                .objects
                .get(e.object)
                .ok_or_else(|| Error::Config(format!("episode {} names unknown object {}", e.id, e.object)))?;
            Ok(EpisodeSpec {
                instruction: generate_instruction(&iw.world, obj, g)?,
                granularity: g,
                ..e.clone()
            })
        })
        .collect()
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

impl Dataset {
    pub fn split(&self, s: Split) -> &[EpisodeSpec] {
        self.splits.get(&s).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Writes `dataset.json`, `worlds/world-<id>.json` and
    /// `splits/<split>.json` under `dir`; returns every written path.
    pub fn save(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir.join("worlds"))?;
        fs::create_dir_all(dir.join("splits"))?;
        let mut written = Vec::new();
        let mut world_files = Vec::new();
        for iw in self.worlds.iter() {
            let rel = format!("worlds/world-{}.json", iw.world.id);
            let path = dir.join(&rel);
            fs::write(&path, to_pretty_json(&iw.world)?)?;
            written.push(path);
            world_files.push(rel);
        }
        let mut splits = BTreeMap::new();
        for (s, eps) in &self.splits {
            let rel = format!("splits/{}.json", s.name());
            let path = dir.join(&rel);
            fs::write(&path, to_pretty_json(eps)?)?;
            written.push(path);
            splits.insert(
                s.name().to_string(),
                SplitEntry {
                    file: rel,
                    episodes: eps.len(),
                },
            );
        }
        let index = DatasetIndex {
            format: DATASET_FORMAT.into(),
            config: self.config.clone(),
            seen_houses: self.seen_houses.clone(),
            unseen_houses: self.unseen_houses.clone(),
            worlds: world_files,
            splits,
        };
        let path = dir.join("dataset.json");
        fs::write(&path, to_pretty_json(&index)?)?;
        written.push(path);
        Ok(written)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let index: DatasetIndex = serde_json::from_str(&read(&dir.join("dataset.json"))?)?;
        if index.format != DATASET_FORMAT {
            return Err(Error::Config(format!("unsupported dataset format {:?}", index.format)));
        }
        let worlds = index
            .worlds
            .iter()
            .map(|rel| Ok(serde_json::from_str::<World>(&read(&dir.join(rel))?)?))
            .collect::<Result<Vec<_>>>()?;
        let mut splits = BTreeMap::new();
        for (name, entry) in &index.splits {
            let s: Split = name.parse()?;
            let eps: Vec<EpisodeSpec> = serde_json::from_str(&read(&dir.join(&entry.file))?)?;
            splits.insert(s, eps);
        }
        Ok(Self {
            config: index.config,
            worlds: WorldSet::new(worlds),
            seen_houses: index.seen_houses,
            unseen_houses: index.unseen_houses,
            splits,
        })
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| {
        Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
    })
}
