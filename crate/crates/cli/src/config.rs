//! Run configuration: a flat `key = value` file plus flag overrides.
//!
//! ```text
//! # comments and blank lines are ignored
//! seed = 3
//! world.num_users = 2000
//! ripple.k = 50
//! eval.buckets_hours = 6,12,24
//! ```
//!
//! Unknown keys are rejected. Paths left unset resolve under `out`.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use socripple::annindex::{HnswParams, IndexMode};
use socripple::baselines::DropoutNetConfig;
use socripple::engagement::{PositiveSignals, Signal};
use socripple::evalharness::{Averaging, EvalConfig};
use socripple::ripple::{MergePolicy, RippleConfig, SimilarityAggregate};
use socripple::simgen::WorldConfig;
use socripple::twotower::TrainConfig;
use socripple::{Timestamp, HOUR};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("override {0:?} is not of the form key=value")]
    BadOverride(String),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub out: PathBuf,
    pub world_dir: Option<PathBuf>,
    pub model_file: Option<PathBuf>,
    pub items_file: Option<PathBuf>,
    pub dropout_file: Option<PathBuf>,
    pub index_file: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    pub state_dir: Option<PathBuf>,
    pub seed: u64,
    pub positive: Vec<Signal>,
    pub world: WorldConfig,
    pub train: TrainConfig,
    pub dropout: DropoutNetConfig,
    pub index_mode: IndexMode,
    pub hnsw: HnswParams,
    pub ripple: RippleConfig,
    pub eval_k: usize,
    pub buckets_hours: Vec<i64>,
    pub cold_age_hours: i64,
    pub sge_hops: usize,
    pub averaging: Averaging,
    pub sweep_ks: Vec<usize>,
    pub sweep_ms: Vec<usize>,
    pub bind: String,
    pub port: u16,
    /// Events before this time are replayed into the service at startup;
    /// defaults to the train/test split.
    pub serve_replay_until: Option<Timestamp>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let eval = EvalConfig::default();
        Self {
            out: PathBuf::from("out"),
            world_dir: None,
            model_file: None,
            items_file: None,
            dropout_file: None,
            index_file: None,
            report_dir: None,
            state_dir: None,
            seed: 0,
            positive: vec![Signal::Like, Signal::LongView],
            world: WorldConfig::default(),
            train: TrainConfig::default(),
            dropout: DropoutNetConfig::default(),
            index_mode: IndexMode::Exact,
            hnsw: HnswParams::default(),
            ripple: RippleConfig::default(),
            eval_k: eval.k,
            buckets_hours: eval.buckets_hours,
            cold_age_hours: eval.cold_age / HOUR,
            sge_hops: eval.sge_hops,
            averaging: eval.averaging,
            sweep_ks: vec![5, 10, 20, 50, 70, 100],
            sweep_ms: vec![5, 10, 20, 40],
            bind: "127.0.0.1".into(),
            port: 8080,
            serve_replay_until: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

fn bad(key: &str, value: &str, reason: &str) -> ConfigError {
    ConfigError::BadValue {
        key: key.into(),
        value: value.into(),
        reason: reason.into(),
    }
}

fn path_or(explicit: &Option<PathBuf>, out: &Path, name: &str) -> PathBuf {
    explicit.clone().unwrap_or_else(|| out.join(name))
}

impl RunConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: n + 1 })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_text(&text)
    }

    /// Applies a `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<(), ConfigError> {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| ConfigError::BadOverride(kv.into()))?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let path = || Some(PathBuf::from(value));
        match key {
            "out" => self.out = PathBuf::from(value),
            "world_dir" => self.world_dir = path(),
            "model_file" => self.model_file = path(),
            "items_file" => self.items_file = path(),
            "dropout_file" => self.dropout_file = path(),
            "index_file" => self.index_file = path(),
            "report_dir" => self.report_dir = path(),
            "state_dir" => self.state_dir = path(),
            "seed" => self.seed = parse(key, value)?,
            "positive" => {
                let signals: Vec<Signal> = parse_list(key, value)?;
                if signals.is_empty() {
                    return Err(bad(key, value, "at least one signal is required"));
                }
                self.positive = signals;
            }

            "world.num_users" => self.world.num_users = parse(key, value)?,
            "world.num_creators" => self.world.num_creators = parse(key, value)?,
            "world.num_items" => self.world.num_items = parse(key, value)?,
            "world.d_latent" => self.world.d_latent = parse(key, value)?,
            "world.num_topics" => self.world.num_topics = parse(key, value)?,
            "world.topic_noise" => self.world.topic_noise = parse(key, value)?,
            "world.item_noise" => self.world.item_noise = parse(key, value)?,
            "world.content_noise" => self.world.content_noise = parse(key, value)?,
            "world.mean_follows" => self.world.mean_follows = parse(key, value)?,
            "world.attachment_exponent" => self.world.attachment_exponent = parse(key, value)?,
            "world.homophily" => self.world.homophily = parse(key, value)?,
            "world.base_rate" => self.world.base_rate = parse(key, value)?,
            "world.affinity_scale" => self.world.affinity_scale = parse(key, value)?,
            "world.follower_exposure" => self.world.follower_exposure = parse(key, value)?,
            "world.follower_delay_hours" => self.world.follower_delay_hours = parse(key, value)?,
            "world.organic_exposures" => self.world.organic_exposures = parse(key, value)?,
            "world.organic_delay_hours" => self.world.organic_delay_hours = parse(key, value)?,
            "world.organic_focus" => self.world.organic_focus = parse(key, value)?,
            "world.quality_sigma" => self.world.quality_sigma = parse(key, value)?,
            "world.activity_sigma" => self.world.activity_sigma = parse(key, value)?,
            "world.exposure_window_hours" => self.world.exposure_window_hours = parse(key, value)?,
            "world.horizon_hours" => self.world.horizon = parse::<i64>(key, value)? * HOUR,
            "world.split_hours" => self.world.split = parse::<i64>(key, value)? * HOUR,

            "train.dim" => self.train.dim = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, value)?,
            "train.init_scale" => self.train.init_scale = parse(key, value)?,

            "dropout.epochs" => self.dropout.epochs = parse(key, value)?,
            "dropout.batch_size" => self.dropout.batch_size = parse(key, value)?,
            "dropout.learning_rate" => self.dropout.learning_rate = parse(key, value)?,
            "dropout.cf_dropout_p" => self.dropout.cf_dropout_p = parse(key, value)?,
            "dropout.init_scale" => self.dropout.init_scale = parse(key, value)?,

            "index.mode" => {
                self.index_mode = match value {
                    "exact" => IndexMode::Exact,
                    "approximate" => IndexMode::Approximate,
                    _ => return Err(bad(key, value, "expected exact or approximate")),
                }
            }
            "index.m" => self.hnsw.m = parse(key, value)?,
            "index.ef_construction" => self.hnsw.ef_construction = parse(key, value)?,
            "index.ef_search" => self.hnsw.ef_search = parse(key, value)?,

            "ripple.k" => self.ripple.k = parse(key, value)?,
            "ripple.m" => self.ripple.m = parse(key, value)?,
            "ripple.n_out" => self.ripple.n_out = parse(key, value)?,
            "ripple.w_support" => self.ripple.weights.w_support = parse(key, value)?,
            "ripple.w_similarity" => self.ripple.weights.w_similarity = parse(key, value)?,
            "ripple.w_freshness" => self.ripple.weights.w_freshness = parse(key, value)?,
            "ripple.tau_hours" => self.ripple.weights.tau_hours = parse(key, value)?,
            "ripple.similarity" => {
                self.ripple.similarity = match value {
                    "mean" => SimilarityAggregate::Mean,
                    "max" => SimilarityAggregate::Max,
                    _ => return Err(bad(key, value, "expected mean or max")),
                }
            }
            "ripple.merge" => {
                self.ripple.merge = match value {
                    "stage1_first" => MergePolicy::Stage1First,
                    "stage2_first" => MergePolicy::Stage2First,
                    _ => return Err(bad(key, value, "expected stage1_first or stage2_first")),
                }
            }

            "eval.k" => self.eval_k = parse(key, value)?,
            "eval.buckets_hours" => self.buckets_hours = parse_list(key, value)?,
            "eval.cold_age_hours" => self.cold_age_hours = parse(key, value)?,
            "eval.sge_hops" => self.sge_hops = parse(key, value)?,
            "eval.averaging" => {
                self.averaging = match value {
                    "macro" => Averaging::Macro,
                    "micro" => Averaging::Micro,
                    _ => return Err(bad(key, value, "expected macro or micro")),
                }
            }
            "sweep.ks" => self.sweep_ks = parse_list(key, value)?,
            "sweep.ms" => self.sweep_ms = parse_list(key, value)?,

            "serve.bind" => self.bind = value.to_string(),
            "serve.port" => self.port = parse(key, value)?,
            "serve.replay_until_hours" => self.serve_replay_until = Some(parse::<i64>(key, value)? * HOUR),

            _ => return Err(ConfigError::UnknownKey { key: key.into() }),
        }
        Ok(())
    }

    /// Every key with its effective value, in a form [`RunConfig::from_text`] accepts.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string());
        let w = &self.world;
        let mut rows: Vec<(&str, String)> = vec![("out", self.out.display().to_string())];
        for (k, v) in [
            ("world_dir", p(&self.world_dir)),
            ("model_file", p(&self.model_file)),
            ("items_file", p(&self.items_file)),
            ("dropout_file", p(&self.dropout_file)),
            ("index_file", p(&self.index_file)),
            ("report_dir", p(&self.report_dir)),
            ("state_dir", p(&self.state_dir)),
        ] {
            if let Some(v) = v {
                rows.push((k, v));
            }
        }
        rows.extend([
            ("seed", self.seed.to_string()),
            ("positive", join(&self.positive)),
            ("world.num_users", w.num_users.to_string()),
            ("world.num_creators", w.num_creators.to_string()),
            ("world.num_items", w.num_items.to_string()),
            ("world.d_latent", w.d_latent.to_string()),
            ("world.num_topics", w.num_topics.to_string()),
            ("world.topic_noise", w.topic_noise.to_string()),
            ("world.item_noise", w.item_noise.to_string()),
            ("world.content_noise", w.content_noise.to_string()),
            ("world.mean_follows", w.mean_follows.to_string()),
            ("world.attachment_exponent", w.attachment_exponent.to_string()),
            ("world.homophily", w.homophily.to_string()),
            ("world.base_rate", w.base_rate.to_string()),
            ("world.affinity_scale", w.affinity_scale.to_string()),
            ("world.follower_exposure", w.follower_exposure.to_string()),
            ("world.follower_delay_hours", w.follower_delay_hours.to_string()),
            ("world.organic_exposures", w.organic_exposures.to_string()),
            ("world.organic_delay_hours", w.organic_delay_hours.to_string()),
            ("world.organic_focus", w.organic_focus.to_string()),
            ("world.quality_sigma", w.quality_sigma.to_string()),
            ("world.activity_sigma", w.activity_sigma.to_string()),
            ("world.exposure_window_hours", w.exposure_window_hours.to_string()),
            ("world.horizon_hours", (w.horizon / HOUR).to_string()),
            ("world.split_hours", (w.split / HOUR).to_string()),
            ("train.dim", self.train.dim.to_string()),
            ("train.epochs", self.train.epochs.to_string()),
            ("train.batch_size", self.train.batch_size.to_string()),
            ("train.learning_rate", self.train.learning_rate.to_string()),
            ("train.init_scale", self.train.init_scale.to_string()),
            ("dropout.epochs", self.dropout.epochs.to_string()),
            ("dropout.batch_size", self.dropout.batch_size.to_string()),
            ("dropout.learning_rate", self.dropout.learning_rate.to_string()),
            ("dropout.cf_dropout_p", self.dropout.cf_dropout_p.to_string()),
            ("dropout.init_scale", self.dropout.init_scale.to_string()),
            (
                "index.mode",
                match self.index_mode {
                    IndexMode::Exact => "exact",
                    IndexMode::Approximate => "approximate",
                }
                .into(),
            ),
            ("index.m", self.hnsw.m.to_string()),
            ("index.ef_construction", self.hnsw.ef_construction.to_string()),
            ("index.ef_search", self.hnsw.ef_search.to_string()),
            ("ripple.k", self.ripple.k.to_string()),
            ("ripple.m", self.ripple.m.to_string()),
            ("ripple.n_out", self.ripple.n_out.to_string()),
            ("ripple.w_support", self.ripple.weights.w_support.to_string()),
            ("ripple.w_similarity", self.ripple.weights.w_similarity.to_string()),
            ("ripple.w_freshness", self.ripple.weights.w_freshness.to_string()),
            ("ripple.tau_hours", self.ripple.weights.tau_hours.to_string()),
            (
                "ripple.similarity",
                match self.ripple.similarity {
                    SimilarityAggregate::Mean => "mean",
                    SimilarityAggregate::Max => "max",
                }
                .into(),
            ),
            (
                "ripple.merge",
                match self.ripple.merge {
                    MergePolicy::Stage1First => "stage1_first",
                    MergePolicy::Stage2First => "stage2_first",
                }
                .into(),
            ),
            ("eval.k", self.eval_k.to_string()),
            ("eval.buckets_hours", join(&self.buckets_hours)),
            ("eval.cold_age_hours", self.cold_age_hours.to_string()),
            ("eval.sge_hops", self.sge_hops.to_string()),
            (
                "eval.averaging",
                match self.averaging {
                    Averaging::Macro => "macro",
                    Averaging::Micro => "micro",
                }
                .into(),
            ),
            ("sweep.ks", join(&self.sweep_ks)),
            ("sweep.ms", join(&self.sweep_ms)),
            ("serve.bind", self.bind.clone()),
            ("serve.port", self.port.to_string()),
        ]);
        if let Some(t) = self.serve_replay_until {
            rows.push(("serve.replay_until_hours", (t / HOUR).to_string()));
        }
        rows.into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn world_dir(&self) -> PathBuf {
        path_or(&self.world_dir, &self.out, "world")
    }

    pub fn model_file(&self) -> PathBuf {
        path_or(&self.model_file, &self.out, "model/users.txt")
    }

    pub fn items_file(&self) -> PathBuf {
        path_or(&self.items_file, &self.out, "model/items.txt")
    }

    pub fn dropout_file(&self) -> PathBuf {
        path_or(&self.dropout_file, &self.out, "model/dropoutnet.json")
    }

    pub fn index_file(&self) -> PathBuf {
        path_or(&self.index_file, &self.out, "index.json")
    }

    pub fn report_dir(&self) -> PathBuf {
        path_or(&self.report_dir, &self.out, "reports")
    }

    pub fn state_dir(&self) -> PathBuf {
        path_or(&self.state_dir, &self.out, "state")
    }

    pub fn positive_signals(&self) -> PositiveSignals {
        PositiveSignals::new(&self.positive)
    }

    pub fn world_config(&self) -> WorldConfig {
        WorldConfig {
            seed: self.seed,
            ..self.world.clone()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            positive: self.positive_signals(),
            ..self.train.clone()
        }
    }

    pub fn dropout_config(&self) -> DropoutNetConfig {
        DropoutNetConfig {
            seed: self.seed,
            positive: self.positive_signals(),
            ..self.dropout.clone()
        }
    }

    pub fn hnsw_params(&self) -> HnswParams {
        HnswParams {
            seed: self.seed,
            ..self.hnsw
        }
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            k: self.eval_k,
            buckets_hours: self.buckets_hours.clone(),
            cold_age: self.cold_age_hours * HOUR,
            ripple: self.ripple,
            sge_hops: self.sge_hops,
            positive: self.positive_signals(),
            averaging: self.averaging,
            seed: self.seed,
        }
    }
}
