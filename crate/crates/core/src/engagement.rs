//! Live engagement buffer and impression log.
//!
//! The buffer answers "which cold items did this user positively engage with
//! recently" at an injected logical time. Both gates are closed: an entry
//! whose engagement is exactly `window` old, or whose item is exactly
//! `max_item_age` old, is still visible. Entries stamped after `now`
//! (or for items created after `now`) are not visible at `now`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::{ItemId, Timestamp, UserId, HOUR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Signal {
    Like,
    LongView,
    View,
    Skip,
}

impl Signal {
    pub const ALL: [Signal; 4] = [Signal::Like, Signal::LongView, Signal::View, Signal::Skip];

    pub fn as_str(self) -> &'static str {
        match self {
            Signal::Like => "like",
            Signal::LongView => "long_view",
            Signal::View => "view",
            Signal::Skip => "skip",
        }
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

impl fmt::Display for Signal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Signal {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Signal::ALL
            .into_iter()
            .find(|sig| sig.as_str() == s)
            .ok_or_else(|| format!("unknown signal {s:?}"))
    }
}

/// Which signals count as positive engagement. Defaults to like + long_view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositiveSignals(u8);

impl PositiveSignals {
    pub fn new(signals: &[Signal]) -> Self {
        Self(signals.iter().fold(0, |acc, s| acc | s.bit()))
    }

    pub fn contains(self, signal: Signal) -> bool {
        self.0 & signal.bit() != 0
    }
}

impl Default for PositiveSignals {
    fn default() -> Self {
        Self::new(&[Signal::Like, Signal::LongView])
    }
}

/// One interaction. `at` is serialized as `ts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementEvent {
    pub user: UserId,
    pub item: ItemId,
    #[serde(rename = "ts")]
    pub at: Timestamp,
    pub signal: Signal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub item: ItemId,
    pub at: Timestamp,
    pub created_at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferConfig {
    pub window: Timestamp,
    pub max_item_age: Timestamp,
    pub positive: PositiveSignals,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            window: 24 * HOUR,
            max_item_age: 24 * HOUR,
            positive: PositiveSignals::default(),
        }
    }
}

impl BufferConfig {
    /// True when `entry` passes both recency gates at `now`.
    #[inline]
    pub fn visible(&self, entry: &BufferEntry, now: Timestamp) -> bool {
        entry.at <= now
            && now - entry.at <= self.window
            && entry.created_at <= now
            && now - entry.created_at <= self.max_item_age
    }
}

/// Per-user time-ordered positive engagements.
#[derive(Debug, Clone, Default)]
pub struct EngagementBuffer {
    config: BufferConfig,
    // each vec sorted by (at, item); exact duplicates are not stored
    entries: HashMap<UserId, Vec<BufferEntry>>,
    len: usize,
}

impl EngagementBuffer {
    pub fn new(config: BufferConfig) -> Self {
        Self {
            config,
            entries: HashMap::new(),
            len: 0,
        }
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn record(&mut self, event: &EngagementEvent, item_created_at: Timestamp) -> Result<()> {
        if !self.config.positive.contains(event.signal) {
            return Err(Error::NonPositiveSignal(event.signal));
        }
        if event.at < item_created_at {
            return Err(Error::TimeOrder {
                at: event.at,
                created: item_created_at,
            });
        }
        let entry = BufferEntry {
            item: event.item,
            at: event.at,
            created_at: item_created_at,
        };
        let list = self.entries.entry(event.user).or_default();
        // appends are the common case during replay
        let pos = if list
            .last()
            .is_none_or(|last| (last.at, last.item) < (entry.at, entry.item))
        {
            list.len()
        } else {
            match list.binary_search_by(|e| (e.at, e.item).cmp(&(entry.at, entry.item))) {
                Ok(_) => return Ok(()),
                Err(pos) => pos,
            }
        };
        list.insert(pos, entry);
        self.len += 1;
        Ok(())
    }

    /// Visible `(item, at)` pairs for `user` at `now`, most recent first
    /// (ties by ascending item id).
    pub fn recent_items(&self, user: UserId, now: Timestamp) -> Vec<(ItemId, Timestamp)> {
        let Some(list) = self.entries.get(&user) else {
            return Vec::new();
        };
        let upto = list.partition_point(|e| e.at <= now);
        let from = list[..upto].partition_point(|e| now - e.at > self.config.window);
        let mut out: Vec<_> = list[from..upto]
            .iter()
            .filter(|e| self.config.visible(e, now))
            .map(|e| (e.item, e.at))
            .collect();
        out.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        out
    }

    /// Drops entries that can never again be visible at any time `>= now`.
    pub fn prune(&mut self, now: Timestamp) -> usize {
        let cfg = self.config;
        let mut evicted = 0;
        self.entries.retain(|_, list| {
            let before = list.len();
            list.retain(|e| now - e.at <= cfg.window && now - e.created_at <= cfg.max_item_age);
            evicted += before - list.len();
            !list.is_empty()
        });
        self.len -= evicted;
        evicted
    }

    /// Every stored entry, ordered by user then time.
    pub fn entries(&self) -> Vec<(UserId, BufferEntry)> {
        let mut users: Vec<_> = self.entries.keys().copied().collect();
        users.sort_unstable();
        users
            .into_iter()
            .flat_map(|u| self.entries[&u].iter().map(move |e| (u, *e)))
            .collect()
    }

    /// Re-inserts a stored entry, bypassing the signal check.
    pub fn restore(&mut self, user: UserId, entry: BufferEntry) {
        let list = self.entries.entry(user).or_default();
        if let Err(pos) = list.binary_search_by(|e| (e.at, e.item).cmp(&(entry.at, entry.item))) {
            list.insert(pos, entry);
            self.len += 1;
        }
    }
}

/// Buffer shared between concurrent writers and readers.
#[derive(Debug, Default)]
pub struct SharedBuffer {
    inner: RwLock<EngagementBuffer>,
}

impl SharedBuffer {
    pub fn new(buffer: EngagementBuffer) -> Self {
        Self {
            inner: RwLock::new(buffer),
        }
    }

    pub fn record(&self, event: &EngagementEvent, item_created_at: Timestamp) -> Result<()> {
        self.inner.write().record(event, item_created_at)
    }

    pub fn recent_items(&self, user: UserId, now: Timestamp) -> Vec<(ItemId, Timestamp)> {
        self.inner.read().recent_items(user, now)
    }

    pub fn prune(&self, now: Timestamp) -> usize {
        self.inner.write().prune(now)
    }

    pub fn len(&self) -> usize {
        self.inner.read().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read(&self) -> parking_lot::RwLockReadGuard<'_, EngagementBuffer> {
        self.inner.read()
    }
}

/// Which (user, item) pairs were already delivered, with first-shown time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImpressionLog {
    shown: HashMap<u64, Timestamp>,
}

#[inline]
fn pair_key(user: UserId, item: ItemId) -> u64 {
    (u64::from(user.0) << 32) | u64::from(item.0)
}

impl ImpressionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn mark_shown(&mut self, user: UserId, item: ItemId, at: Timestamp) {
        self.shown
            .entry(pair_key(user, item))
            .and_modify(|t| *t = (*t).min(at))
            .or_insert(at);
    }

    pub fn was_shown(&self, user: UserId, item: ItemId) -> bool {
        self.shown.contains_key(&pair_key(user, item))
    }

    pub fn first_shown(&self, user: UserId, item: ItemId) -> Option<Timestamp> {
        self.shown.get(&pair_key(user, item)).copied()
    }

    pub fn len(&self) -> usize {
        self.shown.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shown.is_empty()
    }

    /// `(user, item, first_shown)` in ascending (user, item) order.
    pub fn iter_sorted(&self) -> Vec<(UserId, ItemId, Timestamp)> {
        let mut out: Vec<_> = self
            .shown
            .iter()
            .map(|(&k, &t)| (UserId((k >> 32) as u32), ItemId(k as u32), t))
            .collect();
        out.sort_unstable();
        out
    }
}
