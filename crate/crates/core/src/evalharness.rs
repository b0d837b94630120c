//! Offline recall@K by item-age bucket, the ablation table and the K/M sweep.
//!
//! Every test user is evaluated once, at the time of their first held-out
//! positive. Users are processed in that order while a single replay of the
//! event log advances, so each retriever only ever sees events strictly
//! before the evaluation time.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::annindex::{NeighborList, UserIndex};
use crate::baselines::{
    content_knn_retrieve, item_knn_retrieve, sge_retrieve, ContentTable, DropoutNetScorer, ItemCoMatrix,
};
use crate::catalog::Catalog;
use crate::engagement::{BufferConfig, EngagementBuffer, EngagementEvent, ImpressionLog, PositiveSignals};
use crate::error::{Error, Result};
use crate::ids::{ItemId, Timestamp, UserId, HOUR};
use crate::ripple::{features_from_recent, merge, rank_features, stage1_items, RippleConfig};
use crate::simgen::split;
use crate::socialgraph::SocialGraph;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Socripple,
    Stage1Only,
    Stage1Sge,
    Dropoutnet,
    ContentKnn,
    ItemKnn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Socripple,
        Variant::Stage1Only,
        Variant::Stage1Sge,
        Variant::Dropoutnet,
        Variant::ContentKnn,
        Variant::ItemKnn,
    ];
    pub const TABLE1: [Variant; 4] = [
        Variant::Socripple,
        Variant::Dropoutnet,
        Variant::ContentKnn,
        Variant::ItemKnn,
    ];
    pub const TABLE2: [Variant; 3] = [Variant::Stage1Only, Variant::Stage1Sge, Variant::Socripple];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Socripple => "socripple",
            Variant::Stage1Only => "stage1_only",
            Variant::Stage1Sge => "stage1_sge",
            Variant::Dropoutnet => "dropoutnet",
            Variant::ContentKnn => "content_knn",
            Variant::ItemKnn => "item_knn",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant {s:?}")))
    }
}

/// One retrieval configuration under evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arm {
    Variant(Variant),
    /// SocRipple with the given neighbour count `K` and per-neighbour depth `M`.
    Ripple { k: usize, m: usize },
}

/// `|top-k(retrieved) ∩ relevant| / |relevant|`, or `None` when nothing is relevant.
pub fn recall_at_k(retrieved: &[ItemId], relevant: &HashSet<ItemId>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let mut seen = HashSet::new();
    let hits = retrieved
        .iter()
        .take(k)
        .filter(|i| seen.insert(**i) && relevant.contains(i))
        .count();
    Some(hits as f64 / relevant.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Mean of per-user recalls.
    Macro,
    /// Total hits over total relevant items.
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub buckets_hours: Vec<i64>,
    pub cold_age: Timestamp,
    pub ripple: RippleConfig,
    pub sge_hops: usize,
    pub positive: PositiveSignals,
    pub averaging: Averaging,
    /// Recorded in reports.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            k: 200,
            buckets_hours: vec![6, 12, 24],
            cold_age: 24 * HOUR,
            ripple: RippleConfig::default(),
            sge_hops: 1,
            positive: PositiveSignals::default(),
            averaging: Averaging::Macro,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.buckets_hours.iter().any(|&b| b <= 0 || b * HOUR > self.cold_age) {
            return Err(Error::InvalidConfig(
                "buckets must be positive and no wider than the cold-age window".into(),
            ));
        }
        self.ripple.validate()
    }
}

/// Read-only inputs shared by every arm.
#[derive(Debug, Clone, Copy)]
pub struct EvalContext<'a> {
    pub graph: &'a SocialGraph,
    pub catalog: &'a Catalog,
    pub content: &'a ContentTable,
    /// Full log sorted by time.
    pub events: &'a [EngagementEvent],
    pub split: Timestamp,
    pub index: Option<&'a UserIndex>,
    pub dropout: Option<&'a DropoutNetScorer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallRow {
    pub variant: String,
    pub bucket_hours: i64,
    pub recall_at_k: f64,
    pub k: usize,
    pub num_users: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub rows: Vec<RecallRow>,
    pub num_test_users: usize,
    pub num_test_positives: usize,
}

impl RecallReport {
    pub const HEADER: &'static str = "variant,bucket_hours,recall_at_k,k,num_users,seed";

    pub fn get(&self, variant: Variant, bucket_hours: i64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.variant == variant.as_str() && r.bucket_hours == bucket_hours)
            .map(|r| r.recall_at_k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{:.6},{},{},{}",
                r.variant, r.bucket_hours, r.recall_at_k, r.k, r.num_users, r.seed
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub k: usize,
    pub m: usize,
    pub recall_at_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub ms: Vec<usize>,
    pub cells: Vec<SweepCell>,
    pub seed: u64,
}

impl SweepGrid {
    pub const HEADER: &'static str = "K,M,recall_at_k,seed";

    pub fn get(&self, k: usize, m: usize) -> Option<f64> {
        self.cells
            .iter()
            .find(|c| c.k == k && c.m == m)
            .map(|c| c.recall_at_k)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::HEADER);
        out.push('\n');
        for c in &self.cells {
            writeln!(out, "{},{},{:.6},{}", c.k, c.m, c.recall_at_k, self.seed).unwrap();
        }
        out
    }

    /// Rows are K, columns M; each cell shows recall and a shade.
    pub fn heatmap(&self) -> String {
        const SHADES: [char; 5] = [' ', '.', ':', '*', '#'];
        let (lo, hi) = self
            .cells
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c.recall_at_k), hi.max(c.recall_at_k))
            });
        let mut out = String::from("  K\\M ");
        for m in &self.ms {
            write!(out, "{m:>9}").unwrap();
        }
        out.push('\n');
        for &k in &self.ks {
            write!(out, "{k:>6} ").unwrap();
            for &m in &self.ms {
                let r = self.get(k, m).unwrap_or(f64::NAN);
                let t = if hi > lo { (r - lo) / (hi - lo) } else { 1.0 };
                let shade = SHADES[((t * 4.0).round() as usize).min(4)];
                write!(out, " {r:.4} {shade} ").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Per-bucket aggregate for one arm.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmRecall {
    pub arm: Arm,
    /// `(bucket_hours, recall, num_users)` in config bucket order.
    pub buckets: Vec<(i64, f64, usize)>,
    /// Distinct items placed in at least one test user's top `k`; an
    /// informational coverage count for fresh uploads.
    pub distinct_items: usize,
}

impl ArmRecall {
    pub fn bucket(&self, hours: i64) -> Option<(f64, usize)> {
        self.buckets
            .iter()
            .find(|b| b.0 == hours)
            .map(|&(_, r, n)| (r, n))
    }
}

/// Per-neighbour `(item, engaged_at)` lists, most recent first.
type RecentItems = Vec<(ItemId, Timestamp)>;

/// A test user with their evaluation time and held-out positives.
#[derive(Debug, Clone, PartialEq)]
pub struct TestUser {
    pub user: UserId,
    pub t_eval: Timestamp,
    /// `(item, engaged_at, created_at)`.
    pub positives: Vec<(ItemId, Timestamp, Timestamp)>,
}

impl TestUser {
    /// Held-out items that existed at `t_eval` and were engaged at most
    /// `bucket` after upload.
    pub fn relevant(&self, bucket: Timestamp) -> HashSet<ItemId> {
        self.positives
            .iter()
            .filter(|&&(_, at, created)| created <= self.t_eval && at - created <= bucket)
            .map(|&(i, _, _)| i)
            .collect()
    }
}

/// Test users ordered by `(t_eval, user)`, plus the number of test positives.
pub fn test_users(ctx: &EvalContext<'_>, config: &EvalConfig) -> (Vec<TestUser>, usize) {
    let (_, test) = split(ctx.events, ctx.catalog, ctx.split, config.cold_age, config.positive);
    let mut by_user: HashMap<UserId, TestUser> = HashMap::new();
    for e in &test {
        let created = ctx.catalog.items()[e.item.index()].created_at;
        let tu = by_user.entry(e.user).or_insert(TestUser {
            user: e.user,
            t_eval: e.at,
            positives: Vec::new(),
        });
        tu.t_eval = tu.t_eval.min(e.at);
        tu.positives.push((e.item, e.at, created));
    }
    let mut users: Vec<TestUser> = by_user.into_values().collect();
    users.sort_by_key(|u| (u.t_eval, u.user));
    (users, test.len())
}

/// Live state rebuilt by replaying the log up to each evaluation time.
struct ReplayState<'a> {
    ctx: EvalContext<'a>,
    positive: PositiveSignals,
    cursor: usize,
    buffer: EngagementBuffer,
    log: ImpressionLog,
    co: ItemCoMatrix,
    history: HashMap<UserId, Vec<ItemId>>,
    last_prune: Option<Timestamp>,
}

impl<'a> ReplayState<'a> {
    fn new(ctx: EvalContext<'a>, config: &EvalConfig) -> Self {
        Self {
            ctx,
            positive: config.positive,
            cursor: 0,
            buffer: EngagementBuffer::new(BufferConfig {
                window: config.cold_age,
                max_item_age: config.cold_age,
                positive: config.positive,
            }),
            log: ImpressionLog::new(),
            co: ItemCoMatrix::new(ctx.catalog.len()),
            history: HashMap::new(),
            last_prune: None,
        }
    }

    fn advance(&mut self, until: Timestamp) -> Result<()> {
        let events = self.ctx.events;
        while self.cursor < events.len() && events[self.cursor].at < until {
            let e = &events[self.cursor];
            self.cursor += 1;
            self.log.mark_shown(e.user, e.item, e.at);
            if self.positive.contains(e.signal) {
                let meta = self.ctx.catalog.meta(e.item)?;
                self.buffer.record(e, meta.created_at)?;
                self.co.add(e.user, e.item);
                self.history.entry(e.user).or_default().push(e.item);
            }
        }
        if self.last_prune.is_none_or(|t| until - t >= HOUR) {
            self.buffer.prune(until);
            self.last_prune = Some(until);
        }
        Ok(())
    }

    fn excluded(&self, user: UserId, item: ItemId) -> bool {
        self.log.was_shown(user, item) || self.ctx.catalog.items()[item.index()].creator == user
    }

    fn retrieve(
        &self,
        arm: Arm,
        user: UserId,
        now: Timestamp,
        neighbors: Option<(&NeighborList, &[RecentItems])>,
        config: &EvalConfig,
    ) -> Result<Vec<ItemId>> {
        let ctx = &self.ctx;
        let n = config.k;
        let candidates = ctx.catalog.cold_items(now, config.cold_age);
        let exclude = |i: ItemId| self.excluded(user, i);
        let stage1 = || stage1_items(user, now, ctx.graph, ctx.catalog, &self.log, config.cold_age);
        let history = || self.history.get(&user).map_or(&[][..], Vec::as_slice);
        let ripple = |k: usize, m: usize| {
            let rc = RippleConfig {
                k,
                m,
                n_out: n,
                ..config.ripple
            };
            let s2 = match neighbors {
                Some((nb, recent)) => rank_features(
                    &features_from_recent(user, now, nb, recent, &self.log, ctx.catalog, &rc),
                    &rc,
                ),
                None => Vec::new(),
            };
            merge(&stage1(), &s2, &rc).into_iter().map(|r| r.item).collect()
        };
        Ok(match arm {
            Arm::Variant(Variant::Socripple) => ripple(config.ripple.k, config.ripple.m),
            Arm::Ripple { k, m } => ripple(k, m),
            Arm::Variant(Variant::Stage1Only) => stage1().into_iter().take(n).map(|m| m.item).collect(),
            Arm::Variant(Variant::Stage1Sge) => {
                let sge = sge_retrieve(user, ctx.graph, &self.buffer, &self.log, ctx.catalog, now, config.sge_hops, n);
                let mut seen = HashSet::new();
                stage1()
                    .into_iter()
                    .map(|m| m.item)
                    .chain(sge)
                    .filter(|i| seen.insert(*i))
                    .take(n)
                    .collect()
            }
            Arm::Variant(Variant::Dropoutnet) => {
                let scorer = ctx
                    .dropout
                    .ok_or_else(|| Error::InvalidConfig("dropoutnet variant needs trained parameters".into()))?;
                scorer.retrieve(user, candidates, exclude, n).into_iter().map(|s| s.item).collect()
            }
            Arm::Variant(Variant::ContentKnn) => {
                let profile = ctx.content.profile(history());
                content_knn_retrieve(profile.as_deref(), ctx.content, candidates, exclude, n)
                    .into_iter()
                    .map(|s| s.item)
                    .collect()
            }
            Arm::Variant(Variant::ItemKnn) => item_knn_retrieve(history(), &self.co, candidates, exclude, n)
                .into_iter()
                .map(|s| s.item)
                .collect(),
        })
    }
}

fn needs_index(arm: Arm) -> Option<usize> {
    match arm {
        Arm::Variant(Variant::Socripple) => Some(0),
        Arm::Ripple { k, .. } => Some(k),
        _ => None,
    }
}

/// Evaluates every arm on every bucket in a single replay.
pub fn evaluate_arms(ctx: &EvalContext<'_>, config: &EvalConfig, arms: &[Arm]) -> Result<(Vec<ArmRecall>, usize, usize)> {
    config.validate()?;
    let (users, num_positives) = test_users(ctx, config);
    let k_max = arms
        .iter()
        .filter_map(|&a| needs_index(a).map(|k| k.max(config.ripple.k)))
        .max();
    let neighbors: HashMap<UserId, NeighborList> = match (k_max, ctx.index) {
        (Some(k), Some(index)) => {
            let queries: Vec<UserId> = users.iter().map(|u| u.user).filter(|u| index.contains(*u)).collect();
            let lists = index.knn_batch(&queries, k)?;
            queries.into_iter().zip(lists).collect()
        }
        (Some(_), None) => return Err(Error::InvalidConfig("socripple variants need a user index".into())),
        _ => HashMap::new(),
    };

    let mut tally = Tally::new(arms.len(), config);
    let mut state = ReplayState::new(*ctx, config);
    for tu in &users {
        state.advance(tu.t_eval)?;
        let Some(relevant) = tally.relevant(tu) else {
            continue;
        };
        let nbrs = neighbors.get(&tu.user);
        let recent: Vec<_> = nbrs
            .map(|nb| {
                nb.entries
                    .iter()
                    .map(|n| state.buffer.recent_items(n.user, tu.t_eval))
                    .collect()
            })
            .unwrap_or_default();
        let nbrs = nbrs.map(|nb| (nb, recent.as_slice()));
        for (a, &arm) in arms.iter().enumerate() {
            let got = state.retrieve(arm, tu.user, tu.t_eval, nbrs, config)?;
            tally.add(a, &got, &relevant);
        }
    }
    let results = arms
        .iter()
        .zip(tally.finish())
        .map(|(&arm, (buckets, distinct_items))| ArmRecall {
            arm,
            buckets,
            distinct_items,
        })
        .collect();
    Ok((results, users.len(), num_positives))
}

/// Running per-arm, per-bucket sums.
struct Tally<'c> {
    config: &'c EvalConfig,
    // (sum of recalls or hits, users, relevant total)
    sums: Vec<Vec<(f64, usize, usize)>>,
    delivered: Vec<HashSet<ItemId>>,
}

impl<'c> Tally<'c> {
    fn new(arms: usize, config: &'c EvalConfig) -> Self {
        Self {
            config,
            sums: vec![vec![(0.0, 0, 0); config.buckets_hours.len()]; arms],
            delivered: vec![HashSet::new(); arms],
        }
    }

    /// Relevant sets per bucket, or `None` if the user counts in no bucket.
    fn relevant(&self, tu: &TestUser) -> Option<Vec<HashSet<ItemId>>> {
        let rel: Vec<HashSet<ItemId>> = self
            .config
            .buckets_hours
            .iter()
            .map(|&b| tu.relevant(b * HOUR))
            .collect();
        (!rel.iter().all(HashSet::is_empty)).then_some(rel)
    }

    fn add(&mut self, arm: usize, got: &[ItemId], relevant: &[HashSet<ItemId>]) {
        self.delivered[arm].extend(got.iter().take(self.config.k).copied());
        for (b, rel) in relevant.iter().enumerate() {
            if let Some(r) = recall_at_k(got, rel, self.config.k) {
                let s = &mut self.sums[arm][b];
                match self.config.averaging {
                    Averaging::Macro => s.0 += r,
                    Averaging::Micro => s.0 += r * rel.len() as f64,
                }
                s.1 += 1;
                s.2 += rel.len();
            }
        }
    }

    fn finish(self) -> Vec<(Vec<(i64, f64, usize)>, usize)> {
        let config = self.config;
        self.sums
            .into_iter()
            .zip(self.delivered)
            .map(|(per_bucket, delivered)| {
                let buckets = config
                    .buckets_hours
                    .iter()
                    .zip(per_bucket)
                    .map(|(&h, (sum, users, rel))| {
                        let denom = match config.averaging {
                            Averaging::Macro => users,
                            Averaging::Micro => rel,
                        };
                        let r = if denom == 0 { 0.0 } else { sum / denom as f64 };
                        (h, r, users)
                    })
                    .collect();
                (buckets, delivered.len())
            })
            .collect()
    }
}

/// Replayed state visible to a custom retriever at a user's evaluation time.
pub struct ReplayView<'s> {
    pub buffer: &'s EngagementBuffer,
    pub log: &'s ImpressionLog,
    pub co: &'s ItemCoMatrix,
    /// The user's positives before the evaluation time, in time order.
    pub history: &'s [ItemId],
}

/// Runs the evaluation protocol with an arbitrary retriever; returns
/// `(bucket_hours, recall, num_users)` per configured bucket.
pub fn evaluate_with(
    ctx: &EvalContext<'_>,
    config: &EvalConfig,
    mut retriever: impl FnMut(&TestUser, &ReplayView<'_>) -> Vec<ItemId>,
) -> Result<Vec<(i64, f64, usize)>> {
    config.validate()?;
    let (users, _) = test_users(ctx, config);
    let mut tally = Tally::new(1, config);
    let mut state = ReplayState::new(*ctx, config);
    for tu in &users {
        state.advance(tu.t_eval)?;
        let Some(relevant) = tally.relevant(tu) else {
            continue;
        };
        let view = ReplayView {
            buffer: &state.buffer,
            log: &state.log,
            co: &state.co,
            history: state.history.get(&tu.user).map_or(&[][..], Vec::as_slice),
        };
        let got = retriever(tu, &view);
        tally.add(0, &got, &relevant);
    }
    Ok(tally.finish().pop().expect("one arm").0)
}

fn report(ctx: &EvalContext<'_>, config: &EvalConfig, variants: &[Variant], buckets: &[i64]) -> Result<RecallReport> {
    let cfg = EvalConfig {
        buckets_hours: buckets.to_vec(),
        ..config.clone()
    };
    let arms: Vec<Arm> = variants.iter().map(|&v| Arm::Variant(v)).collect();
    let (results, num_test_users, num_test_positives) = evaluate_arms(ctx, &cfg, &arms)?;
    Ok(report_from(&results, &cfg, num_test_users, num_test_positives))
}

/// Assembles report rows from precomputed arm results.
pub fn report_from(results: &[ArmRecall], config: &EvalConfig, num_test_users: usize, num_test_positives: usize) -> RecallReport {
    let rows = results
        .iter()
        .filter_map(|r| match r.arm {
            Arm::Variant(v) => Some((v, r)),
            Arm::Ripple { .. } => None,
        })
        .flat_map(|(v, r)| {
            r.buckets.iter().map(move |&(h, recall, n)| RecallRow {
                variant: v.as_str().to_string(),
                bucket_hours: h,
                recall_at_k: recall,
                k: config.k,
                num_users: n,
                seed: config.seed,
            })
        })
        .collect();
    RecallReport {
        rows,
        num_test_users,
        num_test_positives,
    }
}

/// Recall of one variant on one bucket.
pub fn evaluate(ctx: &EvalContext<'_>, config: &EvalConfig, variant: Variant, bucket_hours: i64) -> Result<RecallRow> {
    let rep = report(ctx, config, &[variant], &[bucket_hours])?;
    Ok(rep.rows.into_iter().next().expect("one row"))
}

/// SocRipple and the three baselines on the configured buckets.
pub fn run_table1(ctx: &EvalContext<'_>, config: &EvalConfig) -> Result<RecallReport> {
    report(ctx, config, &Variant::TABLE1, &config.buckets_hours)
}

/// The ablation rows on the widest bucket.
pub fn run_table2(ctx: &EvalContext<'_>, config: &EvalConfig) -> Result<RecallReport> {
    let widest = config.cold_age / HOUR;
    report(ctx, config, &Variant::TABLE2, &[widest])
}

/// SocRipple recall on the widest bucket over the `ks x ms` grid.
pub fn run_sweep(ctx: &EvalContext<'_>, config: &EvalConfig, ks: &[usize], ms: &[usize]) -> Result<SweepGrid> {
    if ks.is_empty() || ms.is_empty() || ks.contains(&0) || ms.contains(&0) {
        return Err(Error::InvalidConfig("sweep needs non-empty, positive K and M values".into()));
    }
    let widest = config.cold_age / HOUR;
    let cfg = EvalConfig {
        buckets_hours: vec![widest],
        ..config.clone()
    };
    let arms: Vec<Arm> = ks
        .iter()
        .flat_map(|&k| ms.iter().map(move |&m| Arm::Ripple { k, m }))
        .collect();
    let (results, _, _) = evaluate_arms(ctx, &cfg, &arms)?;
    Ok(sweep_from(&results, ks, ms, config.seed, widest))
}

/// Collects `Arm::Ripple` results for `bucket_hours` into a grid.
pub fn sweep_from(results: &[ArmRecall], ks: &[usize], ms: &[usize], seed: u64, bucket_hours: i64) -> SweepGrid {
    let cells = ks
        .iter()
        .flat_map(|&k| ms.iter().map(move |&m| (k, m)))
        .map(|(k, m)| SweepCell {
            k,
            m,
            recall_at_k: results
                .iter()
                .find(|r| r.arm == Arm::Ripple { k, m })
                .and_then(|r| r.bucket(bucket_hours))
                .map_or(0.0, |(r, _)| r),
        })
        .collect();
    SweepGrid {
        ks: ks.to_vec(),
        ms: ms.to_vec(),
        cells,
        seed,
    }
}
