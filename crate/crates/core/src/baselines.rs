//! Comparison retrievers: Item-KNN, Content-KNN, DropoutNet, plus the
//! Stage-1-only and social-graph-expansion ablations.
//!
//! Every retriever takes an explicit candidate pool (the cold items at the
//! request time) and an exclusion predicate (already shown, own uploads), so
//! all of them are filtered the same way.

use std::collections::{HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ItemMeta};
use crate::embedfile::EmbeddingTable;
use crate::engagement::{EngagementBuffer, ImpressionLog, PositiveSignals};
use crate::error::{Error, Result};
use crate::ids::{ItemId, Timestamp, UserId};
use crate::ripple::{by_score_then_id, stage1_items, ScoredItem};
use crate::socialgraph::SocialGraph;
use crate::twotower::{dot, gemm, softmax_loss_grad, ModelParams, TrainBatch};

fn top_n(mut scored: Vec<ScoredItem>, n: usize) -> Vec<ScoredItem> {
    if scored.len() > n && n > 0 {
        scored.select_nth_unstable_by(n - 1, by_score_then_id);
        scored.truncate(n);
    }
    scored.sort_by(by_score_then_id);
    scored.truncate(n);
    scored
}

// ---------------------------------------------------------------------------
// Item-KNN

/// Binary user-item engagement incidence; item-item cosine is derived from it.
#[derive(Debug, Clone, Default)]
pub struct ItemCoMatrix {
    item_users: Vec<Vec<UserId>>,
    pairs: HashSet<(UserId, ItemId)>,
    num_users: usize,
}

impl ItemCoMatrix {
    pub fn new(num_items: usize) -> Self {
        Self {
            item_users: vec![Vec::new(); num_items],
            pairs: HashSet::new(),
            num_users: 0,
        }
    }

    pub fn from_pairs(num_items: usize, pairs: impl IntoIterator<Item = (UserId, ItemId)>) -> Self {
        let mut co = Self::new(num_items);
        for (u, i) in pairs {
            co.add(u, i);
        }
        co
    }

    /// Records a positive engagement; repeats are ignored.
    pub fn add(&mut self, user: UserId, item: ItemId) {
        if self.pairs.insert((user, item)) {
            if self.item_users.len() <= item.index() {
                self.item_users.resize_with(item.index() + 1, Vec::new);
            }
            self.item_users[item.index()].push(user);
            self.num_users = self.num_users.max(user.index() + 1);
        }
    }

    pub fn engagers(&self, item: ItemId) -> &[UserId] {
        self.item_users.get(item.index()).map_or(&[], Vec::as_slice)
    }

    /// Number of users that engaged with both items.
    pub fn co_count(&self, a: ItemId, b: ItemId) -> usize {
        if a == b {
            return 0;
        }
        let (small, other) = if self.engagers(a).len() <= self.engagers(b).len() {
            (a, b)
        } else {
            (b, a)
        };
        self.engagers(small)
            .iter()
            .filter(|&&u| self.pairs.contains(&(u, other)))
            .count()
    }

    /// Cosine between binary engagement columns; zero on the diagonal.
    pub fn cosine(&self, a: ItemId, b: ItemId) -> f64 {
        let (na, nb) = (self.engagers(a).len(), self.engagers(b).len());
        if a == b || na == 0 || nb == 0 {
            return 0.0;
        }
        self.co_count(a, b) as f64 / ((na * nb) as f64).sqrt()
    }
}

/// `score(c) = sum over h in history of cosine(c, h)`; zero-score candidates
/// are not returned, so an empty history retrieves nothing.
///
/// Evaluated as `sum_{v in U_c} w(v) / sqrt|U_c|` with
/// `w(v) = sum_{h in H, v in U_h} 1 / sqrt|U_h|`, which touches only the
/// engagers of history and candidate items.
pub fn item_knn_retrieve(
    history: &[ItemId],
    co: &ItemCoMatrix,
    candidates: &[ItemId],
    exclude: impl Fn(ItemId) -> bool,
    n: usize,
) -> Vec<ScoredItem> {
    let hist: HashSet<ItemId> = history.iter().copied().collect();
    if hist.is_empty() {
        return Vec::new();
    }
    let mut hist_sorted: Vec<ItemId> = hist.iter().copied().collect();
    hist_sorted.sort_unstable();
    let mut weight = vec![0.0f64; co.num_users];
    for &h in &hist_sorted {
        let users = co.engagers(h);
        if users.is_empty() {
            continue;
        }
        let w = 1.0 / (users.len() as f64).sqrt();
        for &v in users {
            weight[v.index()] += w;
        }
    }
    let scored = candidates
        .iter()
        .filter(|&&c| !hist.contains(&c) && !exclude(c))
        .filter_map(|&c| {
            let users = co.engagers(c);
            if users.is_empty() {
                return None;
            }
            let total: f64 = users.iter().map(|v| weight[v.index()]).sum();
            (total > 0.0).then(|| ScoredItem {
                item: c,
                score: total / (users.len() as f64).sqrt(),
            })
        })
        .collect();
    top_n(scored, n)
}

// ---------------------------------------------------------------------------
// Content-KNN

/// Per-item content vectors, dense by item id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ContentTable {
    pub dim: usize,
    pub vectors: Vec<f64>,
}

impl ContentTable {
    pub fn len(&self) -> usize {
        self.vectors.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, item: ItemId) -> Option<&[f64]> {
        let i = item.index();
        (i < self.len()).then(|| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    pub fn from_table(table: &EmbeddingTable) -> Result<Self> {
        let mut vectors = Vec::with_capacity(table.rows.len() * table.dim);
        for (expect, (&id, v)) in table.rows.iter().enumerate() {
            if id as usize != expect {
                return Err(Error::UnknownItem(ItemId(expect as u32)));
            }
            vectors.extend_from_slice(v);
        }
        Ok(Self {
            dim: table.dim,
            vectors,
        })
    }

    pub fn to_table(&self) -> EmbeddingTable {
        EmbeddingTable {
            dim: self.dim,
            rows: (0..self.len())
                .map(|i| (i as u32, self.vectors[i * self.dim..(i + 1) * self.dim].to_vec()))
                .collect(),
        }
    }

    /// Unweighted mean content vector of `items`; `None` if none has content.
    pub fn profile(&self, items: &[ItemId]) -> Option<Vec<f64>> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0usize;
        for &i in items {
            if let Some(v) = self.get(i) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += x;
                }
                n += 1;
            }
        }
        (n > 0).then(|| acc.into_iter().map(|a| a / n as f64).collect())
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = (dot(a, a) * dot(b, b)).sqrt();
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Candidates ranked by cosine to the user's content profile.
pub fn content_knn_retrieve(
    profile: Option<&[f64]>,
    content: &ContentTable,
    candidates: &[ItemId],
    exclude: impl Fn(ItemId) -> bool,
    n: usize,
) -> Vec<ScoredItem> {
    let Some(profile) = profile else {
        return Vec::new();
    };
    let pnorm = dot(profile, profile).sqrt();
    if pnorm == 0.0 {
        return Vec::new();
    }
    let scored = candidates
        .iter()
        .filter(|&&c| !exclude(c))
        .filter_map(|&c| {
            content.get(c).map(|v| ScoredItem {
                item: c,
                score: cosine(profile, v),
            })
        })
        .collect();
    top_n(scored, n)
}

// ---------------------------------------------------------------------------
// DropoutNet

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutNetConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub cf_dropout_p: f64,
    /// Scale of the random init of content-column weights.
    pub init_scale: f64,
    pub seed: u64,
    pub positive: PositiveSignals,
}

impl Default for DropoutNetConfig {
    fn default() -> Self {
        Self {
            epochs: 2,
            batch_size: 128,
            learning_rate: 0.02,
            cf_dropout_p: 0.5,
            init_scale: 0.1,
            seed: 0,
            positive: PositiveSignals::default(),
        }
    }
}

/// User table, CF item table and a one-hidden-layer fusion MLP
/// `[cf ; content] -> relu(W1 x + b1) -> W2 h + b2` with hidden width `2d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutNetParams {
    pub dim: usize,
    pub content_dim: usize,
    pub users: Vec<f64>,
    pub cf: Vec<f64>,
    /// Items with training interactions; others are scored with CF zeroed.
    pub warm: Vec<bool>,
    /// `hidden x (dim + content_dim)`, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// `dim x hidden`, row-major.
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
    pub cf_dropout_p: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DropoutGradients {
    pub users: HashMap<UserId, Vec<f64>>,
    pub cf: HashMap<ItemId, Vec<f64>>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: Vec<f64>,
}

impl DropoutNetParams {
    pub fn hidden(&self) -> usize {
        2 * self.dim
    }

    fn input_dim(&self) -> usize {
        self.dim + self.content_dim
    }

    /// Fusion that passes the CF part through unchanged:
    /// `W1 = [[I, 0], [-I, 0]]`, `W2 = [I, -I]`, so `relu(x) - relu(-x) = x`.
    pub fn cf_projection(model: &ModelParams, content_dim: usize, cf_dropout_p: f64) -> Self {
        let d = model.dim;
        let (h, inp) = (2 * d, d + content_dim);
        let mut w1 = vec![0.0; h * inp];
        let mut w2 = vec![0.0; d * h];
        for j in 0..d {
            w1[j * inp + j] = 1.0;
            w1[(d + j) * inp + j] = -1.0;
            w2[j * h + j] = 1.0;
            w2[j * h + d + j] = -1.0;
        }
        Self {
            dim: d,
            content_dim,
            users: model.user_table.clone(),
            cf: model.item_table.clone(),
            warm: model.known_items.clone(),
            w1,
            b1: vec![0.0; h],
            w2,
            b2: vec![0.0; d],
            cf_dropout_p,
        }
    }

    pub fn user(&self, user: UserId) -> Option<&[f64]> {
        let d = self.dim;
        let i = user.index();
        (i * d + d <= self.users.len()).then(|| &self.users[i * d..(i + 1) * d])
    }

    fn cf_row(&self, item: ItemId) -> Option<&[f64]> {
        let d = self.dim;
        let i = item.index();
        (i * d + d <= self.cf.len()).then(|| &self.cf[i * d..(i + 1) * d])
    }

    fn forward(&self, item: ItemId, content: &[f64], drop_cf: bool) -> Vec<f64> {
        let (d, h, inp) = (self.dim, self.hidden(), self.input_dim());
        let mut x = vec![0.0; inp];
        if !drop_cf {
            if let Some(cf) = self.cf_row(item) {
                x[..d].copy_from_slice(cf);
            }
        }
        x[d..].copy_from_slice(content);
        let z: Vec<f64> = (0..h)
            .map(|r| dot(&self.w1[r * inp..(r + 1) * inp], &x) + self.b1[r])
            .collect();
        let a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        (0..d)
            .map(|r| dot(&self.w2[r * h..(r + 1) * h], &a) + self.b2[r])
            .collect()
    }

    /// Fused item vector; CF is zeroed for cold items.
    pub fn item_vector(&self, item: ItemId, content: &ContentTable) -> Result<Vec<f64>> {
        let c = content.get(item).ok_or(Error::UnknownItem(item))?;
        let warm = self.warm.get(item.index()).copied().unwrap_or(false);
        Ok(self.forward(item, c, !warm))
    }

    /// In-batch softmax loss with item vectors from the fusion network.
    /// `drop_cf[p]` zeroes the CF input of batch position `p`.
    pub fn batch_loss(&self, batch: &TrainBatch, content: &ContentTable, drop_cf: &[bool]) -> Result<f64> {
        Ok(self.loss_and_grad(batch, content, drop_cf, false)?.0)
    }

    pub fn batch_gradient(
        &self,
        batch: &TrainBatch,
        content: &ContentTable,
        drop_cf: &[bool],
    ) -> Result<DropoutGradients> {
        Ok(self.loss_and_grad(batch, content, drop_cf, true)?.1)
    }

    fn loss_and_grad(
        &self,
        batch: &TrainBatch,
        content: &ContentTable,
        drop_cf: &[bool],
        want_grad: bool,
    ) -> Result<(f64, DropoutGradients)> {
        let (d, h, inp) = (self.dim, self.hidden(), self.input_dim());
        let b = batch.len();
        let mut users = Vec::with_capacity(b * d);
        let mut x = vec![0.0; b * inp];
        for (p, &(u, i)) in batch.pairs.iter().enumerate() {
            users.extend_from_slice(self.user(u).ok_or(Error::UnknownUser(u))?);
            let c = content.get(i).ok_or(Error::UnknownItem(i))?;
            let row = &mut x[p * inp..(p + 1) * inp];
            if !drop_cf.get(p).copied().unwrap_or(false) {
                if let Some(cf) = self.cf_row(i) {
                    row[..d].copy_from_slice(cf);
                }
            }
            row[d..].copy_from_slice(c);
        }
        // z = x W1^T + b1, a = relu(z), out = a W2^T + b2, all batch-major
        let mut z = vec![0.0; b * h];
        gemm(b, inp, h, &x, (inp, 1), &self.w1, (1, inp), &mut z);
        for row in z.chunks_exact_mut(h) {
            row.iter_mut().zip(&self.b1).for_each(|(v, bias)| *v += bias);
        }
        let a: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
        let mut out = vec![0.0; b * d];
        gemm(b, h, d, &a, (h, 1), &self.w2, (1, h), &mut out);
        for row in out.chunks_exact_mut(d) {
            row.iter_mut().zip(&self.b2).for_each(|(v, bias)| *v += bias);
        }
        let (loss, gu, gout) = softmax_loss_grad(&users, &out, d);
        if !want_grad {
            return Ok((loss, DropoutGradients::default()));
        }

        let mut g = DropoutGradients {
            w1: vec![0.0; h * inp],
            b1: vec![0.0; h],
            w2: vec![0.0; d * h],
            b2: vec![0.0; d],
            ..DropoutGradients::default()
        };
        gemm(d, b, h, &gout, (1, d), &a, (h, 1), &mut g.w2);
        for row in gout.chunks_exact(d) {
            g.b2.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
        }
        let mut gz = vec![0.0; b * h];
        gemm(b, d, h, &gout, (d, 1), &self.w2, (h, 1), &mut gz);
        for (gv, zv) in gz.iter_mut().zip(&z) {
            if *zv <= 0.0 {
                *gv = 0.0;
            }
        }
        gemm(h, b, inp, &gz, (1, h), &x, (inp, 1), &mut g.w1);
        for row in gz.chunks_exact(h) {
            g.b1.iter_mut().zip(row).for_each(|(acc, v)| *acc += v);
        }
        let mut gx = vec![0.0; b * inp];
        gemm(b, h, inp, &gz, (h, 1), &self.w1, (inp, 1), &mut gx);

        for (p, &(u, i)) in batch.pairs.iter().enumerate() {
            let row = g.users.entry(u).or_insert_with(|| vec![0.0; d]);
            row.iter_mut().zip(&gu[p * d..(p + 1) * d]).for_each(|(r, v)| *r += v);
            let dropped = drop_cf.get(p).copied().unwrap_or(false);
            if !dropped && self.cf_row(i).is_some() {
                let row = g.cf.entry(i).or_insert_with(|| vec![0.0; d]);
                row.iter_mut().zip(&gx[p * inp..p * inp + d]).for_each(|(r, v)| *r += v);
            }
        }
        Ok((loss, g))
    }

    fn apply(&mut self, g: &DropoutGradients, lr: f64) {
        let d = self.dim;
        for (u, v) in &g.users {
            let row = &mut self.users[u.index() * d..(u.index() + 1) * d];
            row.iter_mut().zip(v).for_each(|(p, x)| *p -= lr * x);
        }
        for (i, v) in &g.cf {
            let row = &mut self.cf[i.index() * d..(i.index() + 1) * d];
            row.iter_mut().zip(v).for_each(|(p, x)| *p -= lr * x);
        }
        for (p, x) in self.w1.iter_mut().zip(&g.w1) {
            *p -= lr * x;
        }
        for (p, x) in self.b1.iter_mut().zip(&g.b1) {
            *p -= lr * x;
        }
        for (p, x) in self.w2.iter_mut().zip(&g.w2) {
            *p -= lr * x;
        }
        for (p, x) in self.b2.iter_mut().zip(&g.b2) {
            *p -= lr * x;
        }
    }
}

/// Trains the fusion network (and fine-tunes both tables) with the in-batch
/// softmax, zeroing each item's CF input with probability `cf_dropout_p`
/// per step. Starts from the CF projection plus small random content weights.
pub fn dropoutnet_train(
    events: &[crate::engagement::EngagementEvent],
    model: &ModelParams,
    content: &ContentTable,
    config: &DropoutNetConfig,
) -> Result<DropoutNetParams> {
    if !(0.0..1.0).contains(&config.cf_dropout_p) && config.cf_dropout_p != 1.0 {
        return Err(Error::InvalidConfig("cf_dropout_p must lie in [0, 1]".into()));
    }
    if config.batch_size == 0 || config.learning_rate <= 0.0 {
        return Err(Error::InvalidConfig("batch_size and learning_rate must be positive".into()));
    }
    let mut pairs: Vec<(UserId, ItemId)> = crate::twotower::positive_pairs(events, config.positive)
        .into_iter()
        .filter(|(u, _)| u.index() < model.num_users())
        .collect();
    if pairs.is_empty() {
        return Err(Error::Empty("positive training events"));
    }
    if let Some(&(_, missing)) = pairs.iter().find(|(_, i)| content.get(*i).is_none()) {
        return Err(Error::UnknownItem(missing));
    }
    let mut params = DropoutNetParams::cf_projection(model, content.dim, config.cf_dropout_p);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let inp = params.input_dim();
    for j in 0..params.hidden() {
        for c in params.dim..inp {
            params.w1[j * inp + c] = rng.random_range(-config.init_scale..=config.init_scale);
        }
    }
    let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle.set_stream(1);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(config.seed);
    mask_rng.set_stream(2);
    let mut drop_of: HashMap<ItemId, bool> = HashMap::new();
    let mut drop_cf = Vec::with_capacity(config.batch_size);
    for _ in 0..config.epochs {
        rand::seq::SliceRandom::shuffle(pairs.as_mut_slice(), &mut shuffle);
        for chunk in pairs.chunks(config.batch_size) {
            drop_of.clear();
            drop_cf.clear();
            for &(_, i) in chunk {
                let dropped = *drop_of
                    .entry(i)
                    .or_insert_with(|| mask_rng.random_bool(config.cf_dropout_p));
                drop_cf.push(dropped);
            }
            let batch = TrainBatch { pairs: chunk.to_vec() };
            let (_, g) = params.loss_and_grad(&batch, content, &drop_cf, true)?;
            params.apply(&g, config.learning_rate);
        }
    }
    Ok(params)
}

/// Precomputed fused vectors for fast scoring.
#[derive(Debug, Clone)]
pub struct DropoutNetScorer {
    params: DropoutNetParams,
    item_vectors: Vec<f64>,
}

impl DropoutNetScorer {
    pub fn new(params: DropoutNetParams, content: &ContentTable) -> Result<Self> {
        let mut item_vectors = Vec::with_capacity(content.len() * params.dim);
        for i in 0..content.len() {
            item_vectors.extend(params.item_vector(ItemId(i as u32), content)?);
        }
        Ok(Self {
            params,
            item_vectors,
        })
    }

    pub fn params(&self) -> &DropoutNetParams {
        &self.params
    }

    pub fn item_vector(&self, item: ItemId) -> Option<&[f64]> {
        let d = self.params.dim;
        let i = item.index();
        (i * d + d <= self.item_vectors.len()).then(|| &self.item_vectors[i * d..(i + 1) * d])
    }

    /// Candidates by affinity to the user's embedding; unknown users get nothing.
    pub fn retrieve(
        &self,
        user: UserId,
        candidates: &[ItemId],
        exclude: impl Fn(ItemId) -> bool,
        n: usize,
    ) -> Vec<ScoredItem> {
        let Some(u) = self.params.user(user) else {
            return Vec::new();
        };
        let scored = candidates
            .iter()
            .filter(|&&c| !exclude(c))
            .filter_map(|&c| {
                self.item_vector(c).map(|v| ScoredItem {
                    item: c,
                    score: dot(u, v),
                })
            })
            .collect();
        top_n(scored, n)
    }
}

// ---------------------------------------------------------------------------
// Ablations

/// Stage-1 ablation: unseen cold items from followed creators, newest first.
pub fn stage1_only_retrieve(
    user: UserId,
    catalog: &Catalog,
    graph: &SocialGraph,
    log: &ImpressionLog,
    now: Timestamp,
    max_item_age: Timestamp,
    n: usize,
) -> Vec<ItemId> {
    stage1_items(user, now, graph, catalog, log, max_item_age)
        .into_iter()
        .take(n)
        .map(|m| m.item)
        .collect()
}

/// Social-graph expansion: the viewer's follows (and, for `hops >= 2`, their
/// follows) stand in for embedding neighbours. Candidates are ranked by
/// support, then newer upload, then ascending id.
#[allow(clippy::too_many_arguments)]
pub fn sge_retrieve(
    user: UserId,
    graph: &SocialGraph,
    buffer: &EngagementBuffer,
    log: &ImpressionLog,
    catalog: &Catalog,
    now: Timestamp,
    hops: usize,
    n: usize,
) -> Vec<ItemId> {
    let mut reached: HashSet<UserId> = HashSet::new();
    let mut frontier = vec![user];
    for _ in 0..hops.max(1) {
        let mut next = Vec::new();
        for u in frontier {
            for &f in graph.following(u) {
                if f != user && reached.insert(f) {
                    next.push(f);
                }
            }
        }
        frontier = next;
    }
    let mut support: HashMap<ItemId, usize> = HashMap::new();
    for &nb in &reached {
        let items: HashSet<ItemId> = buffer.recent_items(nb, now).into_iter().map(|(i, _)| i).collect();
        for i in items {
            *support.entry(i).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(usize, ItemMeta)> = support
        .into_iter()
        .filter(|(i, _)| !log.was_shown(user, *i))
        .filter_map(|(i, s)| catalog.get(i).map(|m| (s, *m)))
        .filter(|(_, m)| m.creator != user)
        .collect();
    ranked.sort_by(|a, b| {
        b.0.cmp(&a.0)
            .then(b.1.created_at.cmp(&a.1.created_at))
            .then(a.1.item.cmp(&b.1.item))
    });
    ranked.into_iter().take(n).map(|(_, m)| m.item).collect()
}
