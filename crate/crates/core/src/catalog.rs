//! Item catalog (item -> creator, upload time) and the JSON-lines files for
//! catalogs and event logs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::engagement::EngagementEvent;
use crate::error::{Error, Result};
use crate::ids::{ItemId, Timestamp, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemMeta {
    pub item: ItemId,
    pub creator: UserId,
    #[serde(rename = "created_ts")]
    pub created_at: Timestamp,
}

/// Dense catalog: item ids are `0..len`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Catalog {
    items: Vec<ItemMeta>,
    // item ids sorted by (created_at, id)
    by_created: Vec<ItemId>,
    by_creator: Vec<Vec<ItemId>>,
}

impl Catalog {
    /// Builds a catalog from `(creator, created_at)` rows; row `i` becomes item `i`.
    pub fn from_rows(rows: impl IntoIterator<Item = (UserId, Timestamp)>) -> Self {
        let items = rows
            .into_iter()
            .enumerate()
            .map(|(i, (creator, created_at))| ItemMeta {
                item: ItemId(i as u32),
                creator,
                created_at,
            })
            .collect();
        Self::from_items(items).expect("dense ids")
    }

    pub fn from_items(mut items: Vec<ItemMeta>) -> Result<Self> {
        items.sort_by_key(|m| m.item);
        for (i, m) in items.iter().enumerate() {
            if m.item.index() != i {
                return Err(Error::InvalidConfig(format!(
                    "catalog ids must be dense from 0; found {} at position {i}",
                    m.item
                )));
            }
        }
        let mut by_created: Vec<ItemId> = items.iter().map(|m| m.item).collect();
        by_created.sort_by_key(|&i| (items[i.index()].created_at, i));
        let n_creators = items.iter().map(|m| m.creator.index() + 1).max().unwrap_or(0);
        let mut by_creator = vec![Vec::new(); n_creators];
        for &i in &by_created {
            by_creator[items[i.index()].creator.index()].push(i);
        }
        Ok(Self {
            items,
            by_created,
            by_creator,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, item: ItemId) -> Option<&ItemMeta> {
        self.items.get(item.index())
    }

    pub fn meta(&self, item: ItemId) -> Result<&ItemMeta> {
        self.get(item).ok_or(Error::UnknownItem(item))
    }

    pub fn items(&self) -> &[ItemMeta] {
        &self.items
    }

    /// Items with `now - max_age <= created_at <= now`, oldest first.
    pub fn cold_items(&self, now: Timestamp, max_age: Timestamp) -> &[ItemId] {
        let lo = self
            .by_created
            .partition_point(|i| self.items[i.index()].created_at < now - max_age);
        let hi = self
            .by_created
            .partition_point(|i| self.items[i.index()].created_at <= now);
        &self.by_created[lo..hi.max(lo)]
    }

    /// Uploads of `creator`, oldest first.
    pub fn by_creator(&self, creator: UserId) -> &[ItemId] {
        self.by_creator
            .get(creator.index())
            .map_or(&[], Vec::as_slice)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let items = read_jsonl(path.as_ref())?;
        Self::from_items(items)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_jsonl(path.as_ref(), &self.items)
    }
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Vec<EngagementEvent>> {
    read_jsonl(path.as_ref())
}

pub fn save_events(path: impl AsRef<Path>, events: &[EngagementEvent]) -> Result<()> {
    write_jsonl(path.as_ref(), events)
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, n + 1, e.to_string())))
        .collect()
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut out = Vec::with_capacity(rows.len() * 64);
    for row in rows {
        serde_json::to_writer(&mut out, row).expect("serializable row");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
