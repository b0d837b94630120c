//! Persistence of the serving state.
//!
//! A state directory holds four files: `graph.tsv`, `catalog.jsonl`,
//! `index.json` and `live.json` (buffer entries and impressions). Every file
//! is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::annindex::UserIndex;
use crate::catalog::Catalog;
use crate::engagement::{BufferConfig, BufferEntry, EngagementBuffer, ImpressionLog};
use crate::error::{Error, Result};
use crate::ids::{ItemId, Timestamp, UserId};
use crate::socialgraph::SocialGraph;

pub const STATE_VERSION: u32 = 1;

/// Writes `bytes` to `path` via a temporary file and rename, so readers see
/// either the old or the new contents.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = tmp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    path.with_file_name(name)
}

fn replace_with(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    write(&tmp)?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Serialize, Deserialize)]
struct LiveFile {
    version: u32,
    buffer_config: BufferConfig,
    buffer: Vec<(UserId, BufferEntry)>,
    impressions: Vec<(UserId, ItemId, Timestamp)>,
}

/// Everything a retrieval request reads.
#[derive(Debug, Clone)]
pub struct ServingState {
    pub graph: SocialGraph,
    pub catalog: Catalog,
    pub index: UserIndex,
    pub buffer: EngagementBuffer,
    pub log: ImpressionLog,
}

pub fn save_live(path: &Path, buffer: &EngagementBuffer, log: &ImpressionLog) -> Result<()> {
    let live = LiveFile {
        version: STATE_VERSION,
        buffer_config: *buffer.config(),
        buffer: buffer.entries(),
        impressions: log.iter_sorted(),
    };
    write_atomic(path, &serde_json::to_vec(&live).expect("serializable state"))
}

pub fn load_live(path: &Path) -> Result<(EngagementBuffer, ImpressionLog)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let live: LiveFile = serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt(e.to_string()))?;
    if live.version != STATE_VERSION {
        return Err(Error::Version {
            found: live.version,
            expected: STATE_VERSION,
        });
    }
    let mut buffer = EngagementBuffer::new(live.buffer_config);
    for (u, e) in live.buffer {
        buffer.restore(u, e);
    }
    let mut log = ImpressionLog::new();
    for (u, i, t) in live.impressions {
        log.mark_shown(u, i, t);
    }
    Ok((buffer, log))
}

impl ServingState {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        replace_with(&dir.join("graph.tsv"), |tmp| self.graph.save_edges(tmp))?;
        replace_with(&dir.join("catalog.jsonl"), |tmp| self.catalog.save(tmp))?;
        self.index.save(dir.join("index.json"))?;
        save_live(&dir.join("live.json"), &self.buffer, &self.log)
    }

    /// Loads all four files; any failure returns an error and nothing else.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let graph = SocialGraph::load_edges(dir.join("graph.tsv"))?;
        let catalog = Catalog::load(dir.join("catalog.jsonl"))?;
        let index = UserIndex::load(dir.join("index.json"))?;
        let (buffer, log) = load_live(&dir.join("live.json"))?;
        Ok(Self {
            graph,
            catalog,
            index,
            buffer,
            log,
        })
    }
}
