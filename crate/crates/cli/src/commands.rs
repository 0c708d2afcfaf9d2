use std::fs;
use std::path::{Path, PathBuf};

use gbe_core::dataset::{generate_dataset, to_pretty_json, with_granularity, Dataset, DatasetConfig, Split, WorldSet};
use gbe_core::eval::{evaluate, summarize, Agent, EpisodeOutcome};
use gbe_core::learning::{init_model, train, CurveRow, RolloutConfig, TrainConfig, TrainSet};
use gbe_core::metrics::{sfpl, sfpl_splstyle, spl, EpisodeEval, Summary};
use gbe_core::nn::Checkpoint;
use gbe_core::worldgen::{generate_world, EpisodeSpec, Granularity, WorldConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::args::{BaselineArgs, Cli, Command, EvalAgent, EvalArgs, GenDatasetArgs, GenWorldArgs, OutArgs, TrainArgs};
use crate::manifest::{hash_files, list_files, FileHash, Manifest};

pub const OUT_DIR_VAR: &str = "GBE_OUT_DIR";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_CONFIG_FILE: &str = "train_config.json";
pub const CURVE_FILE: &str = "curve.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const TRAJECTORY_FILE: &str = "trajectories.json";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
    #[error("training aborted: {0}")]
    NonFinite(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) | CliError::NonFinite(_) => 2,
        }
    }
}

impl From<gbe_core::Error> for CliError {
    fn from(e: gbe_core::Error) -> Self {
        use gbe_core::Error as E;
        match e {
            E::Config(_) | E::Granularity(_) | E::Json(_) | E::Dimension { .. } | E::UnknownParam(_) => {
                CliError::Config(e.to_string())
            }
            E::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenWorld(a) => gen_world(a),
        Command::GenDataset(a) => gen_dataset(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::BaselineRandom(a) => baseline_random(a),
    }
}

fn out_dir(args: &OutArgs, command: &str) -> Result<PathBuf, CliError> {
    let dir = match &args.out {
        Some(p) => p.clone(),
        None => match std::env::var_os(OUT_DIR_VAR) {
            Some(root) => PathBuf::from(root).join(command),
            None => PathBuf::from("runs").join(command),
        },
    };
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn write(path: &Path, body: &str) -> Result<PathBuf, CliError> {
    fs::write(path, body).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    Ok(path.to_path_buf())
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let s = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configs serialize")
}

fn load_dataset(dir: &Path) -> Result<(Dataset, Vec<FileHash>), CliError> {
    if !dir.join("dataset.json").is_file() {
        return Err(CliError::Config(format!("{} is not a dataset directory", dir.display())));
    }
    let files = list_files(dir)?;
    let hashes = hash_files("dataset", dir, &files)?;
    Ok((Dataset::load(dir)?, hashes))
}

fn finish(
    command: &'static str,
    seed: u64,
    config: serde_json::Value,
    inputs: Vec<FileHash>,
    dir: &Path,
    outputs: &[PathBuf],
) -> Result<(), CliError> {
    let outputs = hash_files("output", dir, outputs)?;
    let path = Manifest::new(command, seed, config, inputs, outputs).write(dir)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn gen_world(a: GenWorldArgs) -> Result<(), CliError> {
    let mut cfg = WorldConfig::default();
    if let Some(n) = a.nodes {
        cfg.nodes = n;
    }
    if let Some(o) = a.objects {
        cfg.objects = o;
    }
    if let Some(r) = a.regions {
        cfg.regions = r.min(cfg.nodes);
    } else {
        cfg.regions = cfg.regions.min(cfg.nodes);
    }
    cfg.validate()?;
    let world = generate_world(a.seed, &cfg)?;
    let dir = out_dir(&a.out, "gen-world")?;
    let path = write(&dir.join(format!("world-{}.json", world.id)), &to_pretty_json(&world)?)?;
    finish("gen-world", a.seed, to_value(&cfg), Vec::new(), &dir, &[path])
}

fn gen_dataset(a: GenDatasetArgs) -> Result<(), CliError> {
    let (mut cfg, inputs) = match &a.config {
        Some(p) => {
            let c: DatasetConfig = read_json(p)?;
            let root = p.parent().unwrap_or(Path::new(""));
            (c, hash_files("config", root, &[p.clone()])?)
        }
        None => (DatasetConfig::default(), Vec::new()),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(w) = a.worlds {
        cfg.train_houses = w;
    }
    if let Some(w) = a.unseen_worlds {
        cfg.unseen_houses = w;
    }
    if let Some(e) = a.episodes_per_object {
        cfg.train_episodes_per_object = e;
    }
    if let Some(g) = a.granularity {
        cfg.granularity = g;
    }
    if let Some(n) = a.nodes {
        cfg.world.nodes = n;
    }
    if let Some(o) = a.objects {
        cfg.world.objects = o;
    }
    let data = generate_dataset(&cfg)?;
    let dir = out_dir(&a.out, "gen-dataset")?;
    let written = data.save(&dir)?;
    for s in Split::ALL {
        eprintln!("{s}: {} episodes", data.split(s).len());
    }
    finish("gen-dataset", cfg.seed, to_value(&cfg), inputs, &dir, &written)
}

fn regranulate(worlds: &WorldSet, eps: &[EpisodeSpec], g: Option<Granularity>) -> Result<Vec<EpisodeSpec>, CliError> {
    Ok(match g {
        Some(g) => with_granularity(worlds, eps, g)?,
        None => eps.to_vec(),
    })
}

fn curve_csv(rows: &[CurveRow]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    w.write_record(["iteration", "L_nav", "L_loc", "eval_SR", "eval_SPL", "eval_SFPL"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for r in rows {
        w.write_record([
            r.iteration.to_string(),
            r.l_nav.to_string(),
            r.l_loc.to_string(),
            opt(r.eval_sr),
            opt(r.eval_spl),
            opt(r.eval_sfpl),
        ])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv is utf-8"))
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    let (data, mut inputs) = load_dataset(&a.dataset)?;
    let mut cfg = match &a.config {
        Some(p) => {
            let root = p.parent().unwrap_or(Path::new(""));
            inputs.extend(hash_files("config", root, &[p.clone()])?);
            read_json::<TrainConfig>(p)?
        }
        None => TrainConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(i) = a.iterations {
        cfg.iterations = i;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(h) = a.hidden {
        cfg.model.hidden = h;
        cfg.model.scorer_hidden = h;
    }
    if let Some(e) = a.eval_every {
        cfg.eval_every = e;
    }
    if a.no_ge {
        cfg.weights.ge = 0.0;
    }
    if a.zero_vision {
        cfg.modality.vision = false;
    }
    if a.zero_language {
        cfg.modality.language = false;
    }
    cfg.model.feature_dim = data.config.world.feature_dim;
    cfg.validate()?;
    eprintln!(
        "lambda = ({}, {}, {}); vision {}; language {}; {} iterations",
        cfg.weights.il, cfg.weights.rl, cfg.weights.ge, cfg.modality.vision, cfg.modality.language, cfg.iterations
    );

    let episodes = regranulate(&data.worlds, data.split(Split::Train), a.granularity)?;
    let eval = regranulate(&data.worlds, data.split(a.eval_split), a.granularity)?;
    let outcome = if cfg.iterations == 0 {
        let (model, store) = init_model(&cfg)?;
        gbe_core::learning::TrainOutcome {
            model,
            store,
            curve: Vec::new(),
        }
    } else {
        train(
            &cfg,
            TrainSet {
                worlds: &data.worlds,
                episodes: &episodes,
                eval: &eval,
            },
        )?
    };

    let dir = out_dir(&a.out, "train")?;
    let ckpt = outcome.store.to_checkpoint();
    let outputs = vec![
        write(&dir.join(CHECKPOINT_FILE), &ckpt.to_json()?)?,
        write(&dir.join(TRAIN_CONFIG_FILE), &to_pretty_json(&cfg)?)?,
        write(&dir.join(CURVE_FILE), &curve_csv(&outcome.curve)?)?,
    ];
    let mut config = to_value(&cfg);
    config["granularity"] = to_value(&a.granularity.map(|g| g.to_string()));
    config["eval_split"] = to_value(&a.eval_split.name());
    finish("train", cfg.seed, config, inputs, &dir, &outputs)
}

fn eval_rows(w: &mut csv::Writer<Vec<u8>>, split: Split, outcomes: &[EpisodeOutcome]) -> Result<Summary, CliError> {
    let err = |e: csv::Error| CliError::Runtime(e.to_string());
    for o in outcomes {
        let e: &EpisodeEval = &o.eval;
        let one = std::slice::from_ref(e);
        let b = |x: bool| if x { "1" } else { "0" }.to_string();
        w.write_record([
            split.name().to_string(),
            e.episode_id.clone(),
            e.ne.to_string(),
            b(e.oracle_success),
            b(e.success),
            spl(one).to_string(),
            sfpl(one).to_string(),
            sfpl_splstyle(one).to_string(),
        ])
        .map_err(err)?;
    }
    let s = summarize(outcomes);
    w.write_record([
        split.name().to_string(),
        "aggregate".to_string(),
        s.ne.to_string(),
        s.osr.to_string(),
        s.sr.to_string(),
        s.spl.to_string(),
        s.sfpl.to_string(),
        s.sfpl_splstyle.to_string(),
    ])
    .map_err(err)?;
    Ok(s)
}

/// Scores `agent` on every split and writes the CSV and trajectories.
#[allow(clippy::too_many_arguments)]
fn score(
    command: &'static str,
    data: &Dataset,
    splits: &[Split],
    filter: impl Fn(&EpisodeSpec) -> bool,
    granularity: Option<Granularity>,
    agent: Agent,
    policy: Option<(&gbe_core::policy::GbeModel, &gbe_core::nn::ParamStore)>,
    rc: &RolloutConfig,
    seed: u64,
    out: &OutArgs,
) -> Result<(PathBuf, Vec<PathBuf>), CliError> {
    let splits: Vec<Split> = if splits.is_empty() {
        Split::ALL.into_iter().filter(|s| *s != Split::Train).collect()
    } else {
        splits.to_vec()
    };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["split", "episode", "NE", "OSR", "SR", "SPL", "SFPL", "sfpl_splstyle"])
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut trajectories = serde_json::Map::new();
    for s in splits {
        let eps: Vec<EpisodeSpec> = regranulate(&data.worlds, data.split(s), granularity)?
            .into_iter()
            .filter(|e| filter(e))
            .collect();
        let outcomes = evaluate(policy, &data.worlds, &eps, agent, rc, seed)?;
        let summary = eval_rows(&mut w, s, &outcomes)?;
        eprintln!(
            "{s}: n {} NE {:.2} OSR {:.3} SR {:.3} SPL {:.3} SFPL {:.3}",
            summary.episodes, summary.ne, summary.osr, summary.sr, summary.spl, summary.sfpl
        );
        let results: Vec<_> = outcomes.into_iter().map(|o| o.result).collect();
        trajectories.insert(s.name().to_string(), to_value(&results));
    }
    let dir = out_dir(out, command)?;
    let bytes = w.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    let csv = String::from_utf8(bytes).expect("csv is utf-8");
    let outputs = vec![
        write(&dir.join(EVAL_FILE), &csv)?,
        write(&dir.join(TRAJECTORY_FILE), &to_pretty_json(&trajectories)?)?,
    ];
    Ok((dir, outputs))
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let (data, mut inputs) = load_dataset(&a.dataset)?;
    let (cfg, loaded) = match (a.agent, &a.checkpoint) {
        (EvalAgent::Teacher, _) => (TrainConfig::default(), None),
        (EvalAgent::Greedy, None) => return Err(CliError::Config("--checkpoint is required for the greedy agent".into())),
        (EvalAgent::Greedy, Some(ck)) => {
            let cfg_path = match &a.train_config {
                Some(p) => p.clone(),
                None => ck.parent().unwrap_or(Path::new("")).join(TRAIN_CONFIG_FILE),
            };
            let cfg: TrainConfig = read_json(&cfg_path)?;
            let ckpt: Checkpoint = Checkpoint::load(ck).map_err(|e| CliError::Config(format!("{}: {e}", ck.display())))?;
            let (model, mut store) = init_model(&cfg)?;
            store.load_checkpoint(&ckpt)?;
            for p in [ck, &cfg_path] {
                let root = p.parent().unwrap_or(Path::new(""));
                inputs.extend(hash_files("model", root, &[p.clone()])?);
            }
            (cfg, Some((model, store)))
        }
    };
    let agent = match a.agent {
        EvalAgent::Greedy => Agent::Greedy,
        EvalAgent::Teacher => Agent::Teacher,
    };
    let policy = loaded.as_ref().map(|(m, s)| (m, s));
    let rc = cfg.rollout_config();
    let (dir, outputs) = score("eval", &data, &a.split, |_| true, a.granularity, agent, policy, &rc, cfg.seed, &a.out)?;
    let config = serde_json::json!({
        "agent": format!("{:?}", a.agent).to_lowercase(),
        "splits": a.split.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "granularity": a.granularity.map(|g| g.to_string()),
        "rollout": { "step_cap": rc.step_cap, "success_radius": rc.success_radius,
                     "vision": rc.modality.vision, "language": rc.modality.language },
    });
    finish("eval", cfg.seed, config, inputs, &dir, &outputs)
}

fn baseline_random(a: BaselineArgs) -> Result<(), CliError> {
    if !(a.min_path_length >= 0.0) {
        return Err(CliError::Config("--min-path-length must be non-negative".into()));
    }
    let (data, inputs) = load_dataset(&a.dataset)?;
    let rc = RolloutConfig::default();
    let min = a.min_path_length;
    let (dir, outputs) = score(
        "baseline-random",
        &data,
        &a.split,
        |e| e.shortest_path_length >= min,
        None,
        Agent::Random,
        None,
        &rc,
        a.seed,
        &a.out,
    )?;
    let config = serde_json::json!({
        "agent": "random",
        "splits": a.split.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "min_path_length": a.min_path_length,
        "rollout": { "step_cap": rc.step_cap, "success_radius": rc.success_radius },
    });
    finish("baseline-random", a.seed, config, inputs, &dir, &outputs)
}
