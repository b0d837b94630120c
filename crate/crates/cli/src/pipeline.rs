//! One function per CLI stage. Each reads its inputs from the paths in
//! [`RunConfig`] and writes its outputs there, so the binary is a thin shell
//! over these calls.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use socripple::annindex::UserIndex;
use socripple::baselines::{dropoutnet_train, DropoutNetParams, DropoutNetScorer};
use socripple::engagement::{BufferConfig, EngagementBuffer, ImpressionLog};
use socripple::evalharness::{run_sweep, run_table1, run_table2, EvalContext, RecallReport, SweepGrid};
use socripple::ripple::{retrieve, Retrieved, RippleConfig, RippleInputs};
use socripple::simgen::{gen_world, replay, WorldFiles};
use socripple::snapshot::ServingState;
use socripple::embedfile::EmbeddingTable;
use socripple::twotower::{item_table, train_with_report, user_table, Embedding};
use socripple::{Timestamp, UserId};

use crate::config::RunConfig;

fn require(path: &Path, what: &str) -> Result<()> {
    if !path.exists() {
        bail!("{what} not found: {}", path.display());
    }
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn load_world(cfg: &RunConfig) -> Result<WorldFiles> {
    let dir = cfg.world_dir();
    require(&dir.join("world.json"), "world")?;
    WorldFiles::load(&dir).with_context(|| format!("loading world from {}", dir.display()))
}

/// Generates the synthetic world and writes it to the world directory.
pub fn gen(cfg: &RunConfig) -> Result<PathBuf> {
    let world = gen_world(&cfg.world_config())?;
    let dir = cfg.world_dir();
    world.save(&dir)?;
    tracing::info!(
        users = world.config.num_users,
        items = world.catalog.len(),
        edges = world.graph.num_edges(),
        events = world.events.len(),
        dir = %dir.display(),
        "world written"
    );
    Ok(dir)
}

/// Trains the two-tower model on pre-split events, then the DropoutNet
/// baseline on top of it.
pub fn train(cfg: &RunConfig) -> Result<Vec<f64>> {
    let world = load_world(cfg)?;
    let train_events: Vec<_> = world.events.iter().filter(|e| e.at < world.config.split).copied().collect();
    let (params, report) = train_with_report(&train_events, &cfg.train_config())?;
    for (epoch, loss) in report.epoch_losses.iter().enumerate() {
        tracing::info!(epoch, loss, "two-tower epoch");
    }
    let model = cfg.model_file();
    let items = cfg.items_file();
    write_file(&model, &user_table(&params).to_text())?;
    write_file(&items, &item_table(&params).to_text())?;

    let dropout = dropoutnet_train(&train_events, &params, &world.content, &cfg.dropout_config())?;
    let json = serde_json::to_string(&dropout)?;
    write_file(&cfg.dropout_file(), &json)?;
    tracing::info!(model = %model.display(), "model written");
    Ok(report.epoch_losses)
}

/// Builds the user KNN index from the trained user tower.
pub fn index(cfg: &RunConfig) -> Result<UserIndex> {
    let users = cfg.model_file();
    require(&users, "model file")?;
    let table = EmbeddingTable::load(&users)?;
    let embeddings = table
        .rows
        .iter()
        .map(|(&u, v)| Ok((UserId(u), Embedding::new(v.clone())?)))
        .collect::<socripple::Result<_>>()?;
    let index = UserIndex::build(&embeddings, cfg.index_mode, cfg.hnsw_params())?;
    let path = cfg.index_file();
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    index.save(&path)?;
    tracing::info!(users = index.len(), mode = ?cfg.index_mode, path = %path.display(), "index written");
    Ok(index)
}

fn load_index(cfg: &RunConfig) -> Result<UserIndex> {
    let path = cfg.index_file();
    require(&path, "index file")?;
    Ok(UserIndex::load(&path)?)
}

fn load_dropout(cfg: &RunConfig, world: &WorldFiles) -> Result<DropoutNetScorer> {
    let path = cfg.dropout_file();
    require(&path, "model file")?;
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let params: DropoutNetParams = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(DropoutNetScorer::new(params, &world.content)?)
}

fn context<'a>(world: &'a WorldFiles, index: &'a UserIndex, dropout: Option<&'a DropoutNetScorer>) -> EvalContext<'a> {
    EvalContext {
        graph: &world.graph,
        catalog: &world.catalog,
        content: &world.content,
        events: &world.events,
        split: world.config.split,
        index: Some(index),
        dropout,
    }
}

/// SocRipple and the baselines by item-age bucket; writes `table1.csv`.
pub fn eval(cfg: &RunConfig) -> Result<RecallReport> {
    // the model check comes first so a missing `train` is reported as such
    require(&cfg.model_file(), "model file")?;
    let world = load_world(cfg)?;
    let index = load_index(cfg)?;
    let dropout = load_dropout(cfg, &world)?;
    let report = run_table1(&context(&world, &index, Some(&dropout)), &cfg.eval_config())?;
    write_file(&cfg.report_dir().join("table1.csv"), &report.to_csv())?;
    tracing::info!(users = report.num_test_users, positives = report.num_test_positives, "table1 written");
    Ok(report)
}

/// Stage 1 alone, Stage 1 with graph expansion, and the full pipeline;
/// writes `table2.csv`.
pub fn ablate(cfg: &RunConfig) -> Result<RecallReport> {
    let world = load_world(cfg)?;
    let index = load_index(cfg)?;
    let report = run_table2(&context(&world, &index, None), &cfg.eval_config())?;
    write_file(&cfg.report_dir().join("table2.csv"), &report.to_csv())?;
    Ok(report)
}

/// Recall over the K x M grid; writes `sweep.csv` and a text heatmap.
pub fn sweep(cfg: &RunConfig) -> Result<SweepGrid> {
    let world = load_world(cfg)?;
    let index = load_index(cfg)?;
    let grid = run_sweep(&context(&world, &index, None), &cfg.eval_config(), &cfg.sweep_ks, &cfg.sweep_ms)?;
    let dir = cfg.report_dir();
    write_file(&dir.join("sweep.csv"), &grid.to_csv())?;
    write_file(&dir.join("sweep_heatmap.txt"), &grid.heatmap())?;
    Ok(grid)
}

pub fn buffer_config(cfg: &RunConfig) -> BufferConfig {
    let age = cfg.cold_age_hours * socripple::HOUR;
    BufferConfig {
        window: age,
        max_item_age: age,
        positive: cfg.positive_signals(),
    }
}

/// Graph, catalog and index plus the buffer and impression log replayed from
/// every event strictly before `until`, with the world's user count.
pub fn serving_state(cfg: &RunConfig, until: Timestamp) -> Result<(ServingState, usize)> {
    let world = load_world(cfg)?;
    let index = load_index(cfg)?;
    let mut buffer = EngagementBuffer::new(buffer_config(cfg));
    let mut log = ImpressionLog::new();
    replay(&world.events, &world.catalog, until, &mut buffer, &mut log)?;
    let state = ServingState {
        graph: world.graph,
        catalog: world.catalog,
        index,
        buffer,
        log,
    };
    Ok((state, world.config.num_users))
}

/// Writes the serving state at `until` to the state directory.
pub fn snapshot(cfg: &RunConfig, until: Timestamp) -> Result<PathBuf> {
    let (state, _) = serving_state(cfg, until)?;
    let dir = cfg.state_dir();
    state.save(&dir)?;
    Ok(dir)
}

/// Ranked candidates for one user at `now`, seeing only earlier events.
pub fn retrieve_for(cfg: &RunConfig, user: UserId, now: Timestamp, n: Option<usize>) -> Result<Vec<Retrieved>> {
    let (state, num_users) = serving_state(cfg, now)?;
    if user.index() >= num_users && !state.index.contains(user) {
        bail!("unknown user {user}");
    }
    Ok(retrieve_from(&state, user, now, n, &cfg.ripple))
}

pub fn retrieve_from(state: &ServingState, user: UserId, now: Timestamp, n: Option<usize>, ripple: &RippleConfig) -> Vec<Retrieved> {
    let inputs = RippleInputs {
        graph: &state.graph,
        catalog: &state.catalog,
        index: &state.index,
        buffer: &state.buffer,
        log: &state.log,
    };
    let cfg = RippleConfig {
        n_out: n.unwrap_or(ripple.n_out),
        ..*ripple
    };
    retrieve(user, now, &inputs, &cfg)
}
