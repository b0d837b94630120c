//! Stage 1 (creator-follower seeding) and Stage 2 (neighbour expansion).
//!
//! Stage 2 for a requesting user at time `now`:
//!
//! 1. `N(u)` = the `K` nearest users in embedding space.
//! 2. For each neighbour, its `M` most recently engaged distinct cold items
//!    from the live buffer.
//! 3. Union of those items, each featurised by support (distinct neighbours
//!    that engaged), similarity of the supporting neighbours to `u`, and
//!    item age.
//! 4. Items already shown to `u`, or uploaded by `u`, are dropped.
//! 5. `score = w_support * support / K + w_similarity * similarity
//!    + w_freshness * exp(-age_hours / tau)`, sorted descending with
//!    ascending item id on ties, truncated to `N_out`.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::annindex::{NeighborList, UserIndex};
use crate::catalog::{Catalog, ItemMeta};
use crate::engagement::{EngagementBuffer, ImpressionLog};
use crate::error::{Error, Result};
use crate::ids::{age_hours, ItemId, Timestamp, UserId};
use crate::socialgraph::SocialGraph;

/// A freshly uploaded item.
pub type ColdItem = ItemMeta;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreWeights {
    pub w_support: f64,
    pub w_similarity: f64,
    pub w_freshness: f64,
    /// Freshness decay constant in hours.
    pub tau_hours: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            w_support: 1.0,
            w_similarity: 1.0,
            w_freshness: 0.5,
            tau_hours: 12.0,
        }
    }
}

impl ScoreWeights {
    pub fn validate(&self) -> Result<()> {
        let ws = [self.w_support, self.w_similarity, self.w_freshness];
        if ws.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidConfig("weights must be finite and non-negative".into()));
        }
        if ws.iter().all(|&w| w == 0.0) {
            return Err(Error::InvalidConfig("at least one weight must be positive".into()));
        }
        if !(self.tau_hours > 0.0 && self.tau_hours.is_finite()) {
            return Err(Error::InvalidConfig("tau must be positive".into()));
        }
        Ok(())
    }
}

/// How supporting-neighbour similarities are folded into one feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityAggregate {
    #[default]
    Mean,
    Max,
}

/// Order of the two stages in the merged list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MergePolicy {
    #[default]
    Stage1First,
    Stage2First,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RippleConfig {
    /// Neighbours fetched from the index.
    pub k: usize,
    /// Cold items consumed per neighbour.
    pub m: usize,
    pub n_out: usize,
    pub weights: ScoreWeights,
    pub similarity: SimilarityAggregate,
    pub merge: MergePolicy,
}

impl Default for RippleConfig {
    fn default() -> Self {
        Self {
            k: 70,
            m: 20,
            n_out: 200,
            weights: ScoreWeights::default(),
            similarity: SimilarityAggregate::Mean,
            merge: MergePolicy::Stage1First,
        }
    }
}

impl RippleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.m == 0 || self.n_out == 0 {
            return Err(Error::InvalidConfig("K, M and N_out must be at least 1".into()));
        }
        self.weights.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateFeatures {
    pub item: ItemId,
    /// Distinct neighbours that engaged.
    pub support: usize,
    /// Aggregated similarity of the supporting neighbours (mean by default).
    pub mean_similarity: f64,
    /// Item age at request time.
    pub age_hours: f64,
}

impl CandidateFeatures {
    /// `exp(-age / tau)`, in `(0, 1]` for non-negative ages.
    pub fn freshness(&self, tau_hours: f64) -> f64 {
        (-self.age_hours / tau_hours).exp()
    }
}

pub fn score_candidate(features: &CandidateFeatures, k: usize, weights: &ScoreWeights) -> Result<f64> {
    if features.support > k {
        return Err(Error::SupportExceedsK {
            support: features.support,
            k,
        });
    }
    Ok(score_unchecked(features, k, weights))
}

#[inline]
fn score_unchecked(f: &CandidateFeatures, k: usize, w: &ScoreWeights) -> f64 {
    w.w_support * (f.support as f64 / k as f64)
        + w.w_similarity * f.mean_similarity
        + w.w_freshness * f.freshness(w.tau_hours)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoredItem {
    pub item: ItemId,
    pub score: f64,
}

/// Descending score, ascending id.
pub fn by_score_then_id(a: &ScoredItem, b: &ScoredItem) -> std::cmp::Ordering {
    b.score.total_cmp(&a.score).then(a.item.cmp(&b.item))
}

/// Users that receive the Stage-1 boost for `item`: its creator's followers.
pub fn stage1_targets(item: &ColdItem, graph: &SocialGraph) -> Vec<UserId> {
    graph.followers(item.creator).to_vec()
}

/// Stage-1 items for `user`: unseen cold items from creators `user` follows,
/// newest first.
pub fn stage1_items(
    user: UserId,
    now: Timestamp,
    graph: &SocialGraph,
    catalog: &Catalog,
    log: &ImpressionLog,
    max_item_age: Timestamp,
) -> Vec<ItemMeta> {
    let mut out: Vec<ItemMeta> = graph
        .following(user)
        .iter()
        .filter(|&&c| c != user)
        .flat_map(|&c| catalog.by_creator(c))
        .map(|&i| catalog.items()[i.index()])
        .filter(|m| m.created_at <= now && now - m.created_at <= max_item_age)
        .filter(|m| !log.was_shown(user, m.item))
        .collect();
    out.sort_by(|a, b| b.created_at.cmp(&a.created_at).then(a.item.cmp(&b.item)));
    out
}

/// Steps 2-4 of Stage 2 for a precomputed neighbour list.
pub fn stage2_features(
    user: UserId,
    now: Timestamp,
    neighbors: &NeighborList,
    buffer: &EngagementBuffer,
    log: &ImpressionLog,
    catalog: &Catalog,
    config: &RippleConfig,
) -> Vec<CandidateFeatures> {
    let recent: Vec<_> = neighbors
        .entries
        .iter()
        .take(config.k)
        .map(|nb| buffer.recent_items(nb.user, now))
        .collect();
    features_from_recent(user, now, neighbors, &recent, log, catalog, config)
}

/// As [`stage2_features`], with each neighbour's visible buffer contents
/// (`recent[j]` for `neighbors.entries[j]`, newest first) already fetched.
pub fn features_from_recent(
    user: UserId,
    now: Timestamp,
    neighbors: &NeighborList,
    recent: &[Vec<(ItemId, Timestamp)>],
    log: &ImpressionLog,
    catalog: &Catalog,
    config: &RippleConfig,
) -> Vec<CandidateFeatures> {
    struct Acc {
        support: usize,
        sim_sum: f64,
        sim_max: f64,
        created_at: Timestamp,
    }
    let mut acc: HashMap<ItemId, Acc> = HashMap::new();
    let mut seen = HashSet::new();
    for (nb, items) in neighbors.entries.iter().zip(recent).take(config.k) {
        seen.clear();
        // items are newest first; keep each item's latest engagement only
        for &(item, _) in items.iter().filter(|(i, _)| seen.insert(*i)).take(config.m) {
            let Some(meta) = catalog.get(item) else {
                continue;
            };
            let a = acc.entry(item).or_insert(Acc {
                support: 0,
                sim_sum: 0.0,
                sim_max: f64::NEG_INFINITY,
                created_at: meta.created_at,
            });
            a.support += 1;
            a.sim_sum += nb.similarity;
            a.sim_max = a.sim_max.max(nb.similarity);
        }
    }
    let mut out: Vec<CandidateFeatures> = acc
        .into_iter()
        .filter(|(item, _)| !log.was_shown(user, *item))
        .filter(|(item, _)| catalog.get(*item).is_some_and(|m| m.creator != user))
        .map(|(item, a)| CandidateFeatures {
            item,
            support: a.support,
            mean_similarity: match config.similarity {
                SimilarityAggregate::Mean => a.sim_sum / a.support as f64,
                SimilarityAggregate::Max => a.sim_max,
            },
            age_hours: age_hours(a.created_at, now),
        })
        .collect();
    out.sort_by_key(|f| f.item);
    out
}

/// Stage 2 given an already computed neighbour list.
pub fn stage2_from_neighbors(
    user: UserId,
    now: Timestamp,
    neighbors: &NeighborList,
    buffer: &EngagementBuffer,
    log: &ImpressionLog,
    catalog: &Catalog,
    config: &RippleConfig,
) -> Vec<ScoredItem> {
    let feats = stage2_features(user, now, neighbors, buffer, log, catalog, config);
    rank_features(&feats, config)
}

/// Scores, sorts (descending score, ascending id) and truncates to `n_out`.
pub fn rank_features(features: &[CandidateFeatures], config: &RippleConfig) -> Vec<ScoredItem> {
    let mut scored: Vec<ScoredItem> = features
        .iter()
        .map(|f| ScoredItem {
            item: f.item,
            score: score_unchecked(f, config.k, &config.weights),
        })
        .collect();
    scored.sort_by(by_score_then_id);
    scored.truncate(config.n_out);
    scored
}

#[allow(clippy::too_many_arguments)]
pub fn stage2_candidates(
    user: UserId,
    now: Timestamp,
    index: &UserIndex,
    buffer: &EngagementBuffer,
    log: &ImpressionLog,
    catalog: &Catalog,
    config: &RippleConfig,
) -> Result<Vec<ScoredItem>> {
    let neighbors = index.knn(user, config.k)?;
    Ok(stage2_from_neighbors(
        user, now, &neighbors, buffer, log, catalog, config,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Stage1,
    Stage2,
}

/// A merged candidate. Stage-1 items carry no score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub item: ItemId,
    pub score: Option<f64>,
    pub source: Source,
}

/// Read-only state the retriever consults.
#[derive(Debug, Clone, Copy)]
pub struct RippleInputs<'a> {
    pub graph: &'a SocialGraph,
    pub catalog: &'a Catalog,
    pub index: &'a UserIndex,
    pub buffer: &'a EngagementBuffer,
    pub log: &'a ImpressionLog,
}

/// Merges a Stage-1 list and a Stage-2 list, deduplicated, at most `n_out`.
pub fn merge(stage1: &[ItemMeta], stage2: &[ScoredItem], config: &RippleConfig) -> Vec<Retrieved> {
    let s1 = stage1.iter().map(|m| Retrieved {
        item: m.item,
        score: None,
        source: Source::Stage1,
    });
    let s2 = stage2.iter().map(|s| Retrieved {
        item: s.item,
        score: Some(s.score),
        source: Source::Stage2,
    });
    let ordered: Box<dyn Iterator<Item = Retrieved>> = match config.merge {
        MergePolicy::Stage1First => Box::new(s1.chain(s2)),
        MergePolicy::Stage2First => Box::new(s2.chain(s1)),
    };
    let mut seen = HashSet::new();
    ordered
        .filter(|r| seen.insert(r.item))
        .take(config.n_out)
        .collect()
}

/// Full two-stage retrieval. Users absent from the index get Stage 1 only.
pub fn retrieve(
    user: UserId,
    now: Timestamp,
    inputs: &RippleInputs<'_>,
    config: &RippleConfig,
) -> Vec<Retrieved> {
    let max_age = inputs.buffer.config().max_item_age;
    let s1 = stage1_items(user, now, inputs.graph, inputs.catalog, inputs.log, max_age);
    let s2 = match inputs.index.knn(user, config.k) {
        Ok(nb) => stage2_from_neighbors(
            user,
            now,
            &nb,
            inputs.buffer,
            inputs.log,
            inputs.catalog,
            config,
        ),
        Err(_) => Vec::new(),
    };
    merge(&s1, &s2, config)
}
