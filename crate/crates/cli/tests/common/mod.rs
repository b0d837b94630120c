//! Fixture world and a live service on an ephemeral port.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::sync::Arc;

use socripple::annindex::{HnswParams, IndexMode, UserIndex};
use socripple::engagement::{BufferConfig, EngagementBuffer, ImpressionLog};
use socripple::ripple::RippleConfig;
use socripple::simgen::{gen_world, replay, World, WorldConfig};
use socripple::snapshot::ServingState;
use socripple::twotower::Embedding;
use socripple::{ItemId, Timestamp, UserId, HOUR};
use socripple_cli::service::{self, AppState};

pub const DAY: Timestamp = 24 * HOUR;

pub fn fixture_world(seed: u64) -> World {
    gen_world(&WorldConfig {
        num_users: 400,
        num_creators: 40,
        num_items: 300,
        mean_follows: 5.0,
        organic_exposures: 20.0,
        horizon: 4 * DAY,
        split: 3 * DAY,
        seed,
        ..WorldConfig::default()
    })
    .unwrap()
}

/// Index over the world's own latent vectors.
pub fn latent_index(w: &World) -> UserIndex {
    let embs: BTreeMap<UserId, Embedding> = (0..w.config.num_users as u32)
        .map(|u| (UserId(u), Embedding::new(w.latent(UserId(u)).to_vec()).unwrap()))
        .collect();
    UserIndex::build(&embs, IndexMode::Exact, HnswParams::default()).unwrap()
}

pub fn app_state(w: &World, until: Timestamp) -> AppState {
    let mut buffer = EngagementBuffer::new(BufferConfig::default());
    let mut log = ImpressionLog::new();
    replay(&w.events, &w.catalog, until, &mut buffer, &mut log).unwrap();
    let state = ServingState {
        graph: w.graph.clone(),
        catalog: w.catalog.clone(),
        index: latent_index(w),
        buffer,
        log,
    };
    AppState::new(state, w.config.num_users, RippleConfig::default())
}

/// Binds 127.0.0.1:0 and serves in the background; returns the base URL.
pub async fn spawn(state: AppState) -> String {
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(service::serve(listener, Arc::new(state)));
    format!("http://{addr}")
}

/// A `(requester, neighbour, item)` triple where a like by `neighbour` should
/// surface `item` to `requester` through Stage 2 only: the item is cold at
/// `now`, unseen by the requester, not authored by them, and its creator is
/// not followed by them, and nobody has engaged positively with it yet.
pub fn read_after_write_case(w: &World, index: &UserIndex, now: Timestamp, skip: usize) -> (UserId, UserId, ItemId) {
    let mut log = ImpressionLog::new();
    let mut buffer = EngagementBuffer::new(BufferConfig::default());
    replay(&w.events, &w.catalog, now, &mut buffer, &mut log).unwrap();
    let engaged: std::collections::HashSet<ItemId> = buffer.entries().into_iter().map(|(_, e)| e.item).collect();
    let cold: Vec<_> = w
        .catalog
        .items()
        .iter()
        .filter(|m| m.created_at < now && now - m.created_at < DAY / 2 && !engaged.contains(&m.item))
        .collect();
    let mut found = 0;
    for u in 0..w.config.num_users as u32 {
        let user = UserId(u);
        let nb = index.knn(user, 5).unwrap();
        let Some(neighbour) = nb.users().next() else { continue };
        for m in &cold {
            if m.creator == user
                || m.creator == neighbour
                || w.graph.follows(user, m.creator)
                || log.was_shown(user, m.item)
                || log.was_shown(neighbour, m.item)
            {
                continue;
            }
            if found == skip {
                return (user, neighbour, m.item);
            }
            found += 1;
            break;
        }
    }
    panic!("fixture has no read-after-write case");
}
