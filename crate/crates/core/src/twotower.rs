//! Two-tower user/item embeddings trained with an in-batch sampled softmax.
//!
//! Affinity is the raw dot product `s(u, i) = e_u · e_i`. For a batch of `B`
//! positive pairs the score matrix is `S[r][c] = s(u_r, i_c)`, and the
//! probability of the positive in row `r` is the softmax of that row taken at
//! column `r`: every other in-batch item acts as a negative, duplicates
//! included. The batch loss is the summed negative log-likelihood of the
//! positives.
//!
//! Both towers are plain embedding tables optimised with fixed-rate SGD.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embedfile::EmbeddingTable;
use crate::engagement::{EngagementEvent, PositiveSignals};
use crate::error::{Error, Result};
use crate::ids::{ItemId, UserId};

/// A dense latent vector. Entries are finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        dot(&self.0, &self.0).sqrt()
    }
}

/// Dot product with four partial sums (lets the compiler use SIMD lanes).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dot-product affinity between a user and an item embedding.
pub fn affinity(user: &[f64], item: &[f64]) -> Result<f64> {
    if user.len() != item.len() {
        return Err(Error::DimensionMismatch {
            expected: user.len(),
            got: item.len(),
        });
    }
    Ok(dot(user, item))
}

/// Probability of the positive pair in `row` against the other in-batch items.
pub fn in_batch_probability(batch_scores: &[Vec<f64>], row: usize) -> f64 {
    let scores = &batch_scores[row];
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = scores.iter().map(|s| (s - max).exp()).sum();
    (scores[row] - max).exp() / denom
}

/// Summed in-batch softmax NLL over `B` user rows and `B` item rows
/// (flat, row-major, `dim` columns), with gradients for each batch position.
///
/// Returns `(loss, d_loss/d_users, d_loss/d_items)`.
pub fn softmax_loss_grad(users: &[f64], items: &[f64], dim: usize) -> (f64, Vec<f64>, Vec<f64>) {
    let b = users.len() / dim;
    assert_eq!(users.len(), b * dim);
    assert_eq!(items.len(), b * dim);
    // scores[r][c] = u_r . i_c
    let mut g = vec![0.0; b * b];
    gemm(b, dim, b, users, (dim, 1), items, (1, dim), &mut g);
    let mut loss = 0.0;
    for (r, row) in g.chunks_exact_mut(b).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for s in row.iter_mut() {
            *s = (*s - max).exp();
            denom += *s;
        }
        // log p_rr = (s_rr - max) - ln(denom); row[r] currently holds exp(s_rr - max)
        loss -= row[r].ln() - denom.ln();
        let inv = 1.0 / denom;
        for s in row.iter_mut() {
            *s *= inv;
        }
        row[r] -= 1.0;
    }
    // g = softmax - identity; grad_users = g items, grad_items = g^T users
    let mut grad_users = vec![0.0; b * dim];
    gemm(b, b, dim, &g, (b, 1), items, (dim, 1), &mut grad_users);
    let mut grad_items = vec![0.0; b * dim];
    gemm(b, b, dim, &g, (1, b), users, (dim, 1), &mut grad_items);
    (loss, grad_users, grad_items)
}

/// `c = a b` for an `m x k` by `k x n` product with explicit (row, col)
/// strides; `c` is dense row-major and overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64]) {
    assert!(m == 0 || k == 0 || (m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above keep every strided access inside its slice.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Positive (user, item) pairs of one mini-batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainBatch {
    pub pairs: Vec<(UserId, ItemId)>,
}

impl TrainBatch {
    pub fn new(pairs: Vec<(UserId, ItemId)>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("training batch"));
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub init_scale: f64,
    pub seed: u64,
    pub positive: PositiveSignals,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            epochs: 10,
            batch_size: 128,
            learning_rate: 0.05,
            init_scale: 0.1,
            seed: 0,
            positive: PositiveSignals::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(format!("{what} must be positive")));
        if self.dim == 0 {
            return bad("dim");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate");
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale");
        }
        Ok(())
    }
}

/// User and item tables, `dim` columns each, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub dim: usize,
    pub user_table: Vec<f64>,
    pub item_table: Vec<f64>,
    /// Users / items that appeared in training data.
    pub known_users: Vec<bool>,
    pub known_items: Vec<bool>,
    pub seed: u64,
}

impl ModelParams {
    /// Uniform init in `[-init_scale, init_scale]`, users first then items.
    pub fn init(num_users: usize, num_items: usize, dim: usize, init_scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<f64> {
            (0..n * dim)
                .map(|_| rng.random_range(-init_scale..=init_scale))
                .collect()
        };
        let user_table = draw(num_users);
        let item_table = draw(num_items);
        Self {
            dim,
            user_table,
            item_table,
            known_users: vec![true; num_users],
            known_items: vec![true; num_items],
            seed,
        }
    }

    pub fn num_users(&self) -> usize {
        self.known_users.len()
    }

    pub fn num_items(&self) -> usize {
        self.known_items.len()
    }

    pub fn user(&self, user: UserId) -> Result<&[f64]> {
        let i = user.index();
        if i >= self.num_users() {
            return Err(Error::UnknownUser(user));
        }
        Ok(&self.user_table[i * self.dim..(i + 1) * self.dim])
    }

    pub fn item(&self, item: ItemId) -> Result<&[f64]> {
        let i = item.index();
        if i >= self.num_items() {
            return Err(Error::UnknownItem(item));
        }
        Ok(&self.item_table[i * self.dim..(i + 1) * self.dim])
    }

    pub fn user_mut(&mut self, user: UserId) -> &mut [f64] {
        let d = self.dim;
        &mut self.user_table[user.index() * d..(user.index() + 1) * d]
    }

    pub fn item_mut(&mut self, item: ItemId) -> &mut [f64] {
        let d = self.dim;
        &mut self.item_table[item.index() * d..(item.index() + 1) * d]
    }

    /// Gathers the user and item rows of `batch` into two flat matrices.
    pub fn gather(&self, batch: &TrainBatch) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut users = Vec::with_capacity(batch.len() * self.dim);
        let mut items = Vec::with_capacity(batch.len() * self.dim);
        for &(u, i) in &batch.pairs {
            users.extend_from_slice(self.user(u)?);
            items.extend_from_slice(self.item(i)?);
        }
        Ok((users, items))
    }

    /// Reassembles params from exported user and item tables.
    pub fn from_tables(users: &EmbeddingTable, items: &EmbeddingTable) -> Result<Self> {
        if users.dim != items.dim {
            return Err(Error::DimensionMismatch {
                expected: users.dim,
                got: items.dim,
            });
        }
        let dim = users.dim;
        let fill = |t: &EmbeddingTable| {
            let n = t.rows.keys().next_back().map_or(0, |&k| k as usize + 1);
            let mut table = vec![0.0; n * dim];
            let mut known = vec![false; n];
            for (&id, v) in &t.rows {
                table[id as usize * dim..(id as usize + 1) * dim].copy_from_slice(v);
                known[id as usize] = true;
            }
            (table, known)
        };
        let (user_table, known_users) = fill(users);
        let (item_table, known_items) = fill(items);
        Ok(Self {
            dim,
            user_table,
            item_table,
            known_users,
            known_items,
            seed: 0,
        })
    }
}

/// Scores `S[r][c] = s(u_r, i_c)` for a batch.
pub fn score_matrix(params: &ModelParams, batch: &TrainBatch) -> Result<Vec<Vec<f64>>> {
    let (users, items) = params.gather(batch)?;
    let d = params.dim;
    let b = batch.len();
    Ok((0..b)
        .map(|r| {
            (0..b)
                .map(|c| dot(&users[r * d..(r + 1) * d], &items[c * d..(c + 1) * d]))
                .collect()
        })
        .collect())
}

pub fn batch_loss(params: &ModelParams, batch: &TrainBatch) -> Result<f64> {
    let (users, items) = params.gather(batch)?;
    Ok(softmax_loss_grad(&users, &items, params.dim).0)
}

/// Gradient of [`batch_loss`] for every row the batch touches.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Gradients {
    pub users: BTreeMap<UserId, Vec<f64>>,
    pub items: BTreeMap<ItemId, Vec<f64>>,
}

pub fn batch_gradient(params: &ModelParams, batch: &TrainBatch) -> Result<Gradients> {
    let (users, items) = params.gather(batch)?;
    let d = params.dim;
    let (_, gu, gi) = softmax_loss_grad(&users, &items, d);
    let mut grads = Gradients::default();
    for (pos, &(u, i)) in batch.pairs.iter().enumerate() {
        let row = grads.users.entry(u).or_insert_with(|| vec![0.0; d]);
        axpy(1.0, &gu[pos * d..(pos + 1) * d], row);
        let row = grads.items.entry(i).or_insert_with(|| vec![0.0; d]);
        axpy(1.0, &gi[pos * d..(pos + 1) * d], row);
    }
    Ok(grads)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean per-pair loss of each epoch, measured before each batch update.
    pub epoch_losses: Vec<f64>,
}

/// Positive `(user, item)` pairs from an event log.
pub fn positive_pairs(events: &[EngagementEvent], positive: PositiveSignals) -> Vec<(UserId, ItemId)> {
    events
        .iter()
        .filter(|e| positive.contains(e.signal))
        .map(|e| (e.user, e.item))
        .collect()
}

pub fn train(events: &[EngagementEvent], config: &TrainConfig) -> Result<ModelParams> {
    train_with_report(events, config).map(|(p, _)| p)
}

pub fn train_with_report(
    events: &[EngagementEvent],
    config: &TrainConfig,
) -> Result<(ModelParams, TrainReport)> {
    config.validate()?;
    if events.is_empty() {
        return Err(Error::Empty("training events"));
    }
    let mut pairs = positive_pairs(events, config.positive);
    if pairs.is_empty() {
        return Err(Error::Empty("positive training events"));
    }
    let num_users = pairs.iter().map(|p| p.0.index() + 1).max().unwrap_or(0);
    let num_items = pairs.iter().map(|p| p.1.index() + 1).max().unwrap_or(0);
    let mut params = ModelParams::init(
        num_users,
        num_items,
        config.dim,
        config.init_scale,
        config.seed,
    );
    params.known_users = vec![false; num_users];
    params.known_items = vec![false; num_items];
    for &(u, i) in &pairs {
        params.known_users[u.index()] = true;
        params.known_items[i.index()] = true;
    }

    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let d = config.dim;
    let lr = config.learning_rate;
    let mut report = TrainReport::default();
    let mut users = Vec::with_capacity(config.batch_size * d);
    let mut items = Vec::with_capacity(config.batch_size * d);
    for _ in 0..config.epochs {
        pairs.shuffle(&mut shuffle_rng);
        let mut total = 0.0;
        for chunk in pairs.chunks(config.batch_size) {
            users.clear();
            items.clear();
            for &(u, i) in chunk {
                users.extend_from_slice(params.user(u)?);
                items.extend_from_slice(params.item(i)?);
            }
            let (loss, gu, gi) = softmax_loss_grad(&users, &items, d);
            total += loss;
            for (pos, &(u, i)) in chunk.iter().enumerate() {
                axpy(-lr, &gu[pos * d..(pos + 1) * d], params.user_mut(u));
                axpy(-lr, &gi[pos * d..(pos + 1) * d], params.item_mut(i));
            }
        }
        report.epoch_losses.push(total / pairs.len() as f64);
    }
    if params
        .user_table
        .iter()
        .chain(&params.item_table)
        .any(|v| !v.is_finite())
    {
        return Err(Error::NonFinite);
    }
    Ok((params, report))
}

/// One embedding per user seen in training, copied verbatim from the table.
pub fn export_user_embeddings(params: &ModelParams) -> BTreeMap<UserId, Embedding> {
    params
        .known_users
        .iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(u, _)| {
            let u = UserId(u as u32);
            (u, Embedding(params.user(u).expect("in range").to_vec()))
        })
        .collect()
}

pub fn user_table(params: &ModelParams) -> EmbeddingTable {
    EmbeddingTable {
        dim: params.dim,
        rows: export_user_embeddings(params)
            .into_iter()
            .map(|(u, e)| (u.0, e.0))
            .collect(),
    }
}

pub fn item_table(params: &ModelParams) -> EmbeddingTable {
    EmbeddingTable {
        dim: params.dim,
        rows: params
            .known_items
            .iter()
            .enumerate()
            .filter(|(_, &k)| k)
            .map(|(i, _)| {
                let id = ItemId(i as u32);
                (id.0, params.item(id).expect("in range").to_vec())
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engagement::Signal;

    fn batch(pairs: &[(u32, u32)]) -> TrainBatch {
        TrainBatch::new(pairs.iter().map(|&(u, i)| (UserId(u), ItemId(i))).collect()).unwrap()
    }

    #[test]
    fn affinity_examples() {
        assert_eq!(affinity(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        assert_eq!(affinity(&[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        let e = [0.6, 0.8];
        assert!((affinity(&e, &e).unwrap() - 1.0).abs() < 1e-15);
        assert!(matches!(
            affinity(&[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn probability_examples() {
        assert_eq!(in_batch_probability(&[vec![3.7]], 0), 1.0);
        let zeros = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
        assert!((in_batch_probability(&zeros, 0) - 0.5).abs() < 1e-15);
        assert!((in_batch_probability(&zeros, 1) - 0.5).abs() < 1e-15);
        let s = vec![vec![2f64.ln(), 0.0], vec![0.0, 0.0]];
        assert!((in_batch_probability(&s, 0) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn probability_survives_large_scores() {
        let s = vec![vec![1000.0, 999.0], vec![0.0, 0.0]];
        let p = in_batch_probability(&s, 0);
        assert!((p - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn loss_examples() {
        let mut p = ModelParams::init(2, 2, 3, 0.1, 1);
        p.user_table.fill(0.5);
        p.item_table.fill(0.5);
        let l = batch_loss(&p, &batch(&[(0, 0), (1, 1)])).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert_eq!(batch_loss(&p, &batch(&[(0, 1)])).unwrap(), 0.0);
        assert!(matches!(
            batch_loss(&p, &batch(&[(5, 0)])),
            Err(Error::UnknownUser(_))
        ));
        assert!(TrainBatch::new(vec![]).is_err());
    }

    #[test]
    fn single_pair_gradient_is_zero() {
        let p = ModelParams::init(2, 2, 4, 0.1, 9);
        let g = batch_gradient(&p, &batch(&[(1, 0)])).unwrap();
        assert!(g.users.values().chain(g.items.values()).flatten().all(|&x| x == 0.0));
        assert_eq!(g.users.len(), 1);
        assert_eq!(g.items.len(), 1);
    }

    #[test]
    fn symmetric_batch_has_equal_user_gradients() {
        let mut p = ModelParams::init(2, 2, 3, 0.1, 2);
        let e = [0.3, -0.2, 0.1];
        for u in 0..2 {
            p.user_mut(UserId(u)).copy_from_slice(&e);
            p.item_mut(ItemId(u)).copy_from_slice(&e);
        }
        let g = batch_gradient(&p, &batch(&[(0, 0), (1, 1)])).unwrap();
        assert_eq!(g.users[&UserId(0)], g.users[&UserId(1)]);
    }

    #[test]
    fn duplicate_pairs_accumulate() {
        let p = ModelParams::init(3, 3, 2, 0.5, 4);
        let g = batch_gradient(&p, &batch(&[(0, 1), (0, 2), (1, 1)])).unwrap();
        assert_eq!(g.users.len(), 2);
        assert_eq!(g.items.len(), 2);
    }

    fn events(pairs: &[(u32, u32)], reps: usize) -> Vec<EngagementEvent> {
        (0..reps)
            .flat_map(|r| {
                pairs.iter().map(move |&(u, i)| EngagementEvent {
                    user: UserId(u),
                    item: ItemId(i),
                    at: r as i64,
                    signal: Signal::Like,
                })
            })
            .collect()
    }

    fn cosine(a: &[f64], b: &[f64]) -> f64 {
        dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt())
    }

    #[test]
    fn two_item_fixture_prefers_positive() {
        let evs = events(&[(0, 0), (1, 1)], 200);
        let cfg = TrainConfig {
            dim: 4,
            epochs: 20,
            batch_size: 2,
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let p = train(&evs, &cfg).unwrap();
        let u0 = p.user(UserId(0)).unwrap();
        assert!(
            cosine(u0, p.item(ItemId(0)).unwrap()) > cosine(u0, p.item(ItemId(1)).unwrap())
        );
    }

    #[test]
    fn two_cluster_fixture() {
        let mut pairs = Vec::new();
        for u in 0..10u32 {
            for i in 0..10u32 {
                let cluster = u / 5;
                pairs.push((u, cluster * 10 + (u + i) % 10));
            }
        }
        let evs = events(&pairs, 5);
        let cfg = TrainConfig {
            dim: 8,
            epochs: 10,
            batch_size: 16,
            ..TrainConfig::default()
        };
        let (p, report) = train_with_report(&evs, &cfg).unwrap();
        let (mut within, mut across) = (Vec::new(), Vec::new());
        for u in 0..10u32 {
            for i in 0..20u32 {
                let a = dot(p.user(UserId(u)).unwrap(), p.item(ItemId(i)).unwrap());
                if u / 5 == i / 10 {
                    within.push(a)
                } else {
                    across.push(a)
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&within) > mean(&across));
        assert!(report.epoch_losses[1] <= report.epoch_losses[0]);
        assert!(report.epoch_losses[2] <= report.epoch_losses[1]);
    }

    #[test]
    fn training_is_deterministic() {
        let evs = events(&[(0, 0), (1, 1), (2, 0), (3, 2)], 20);
        let cfg = TrainConfig {
            dim: 4,
            batch_size: 3,
            epochs: 3,
            ..TrainConfig::default()
        };
        let a = train(&evs, &cfg).unwrap();
        let b = train(&evs, &cfg).unwrap();
        assert_eq!(a, b);
        let c = train(&evs, &TrainConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn train_rejects_bad_input() {
        assert!(matches!(
            train(&[], &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
        let evs = events(&[(0, 0)], 1);
        for cfg in [
            TrainConfig { dim: 0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
            TrainConfig { batch_size: 0, ..TrainConfig::default() },
            TrainConfig { learning_rate: -0.1, ..TrainConfig::default() },
            TrainConfig { init_scale: 0.0, ..TrainConfig::default() },
        ] {
            assert!(matches!(train(&evs, &cfg), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn export_matches_table_rows() {
        let evs = events(&[(0, 0), (2, 1), (1, 1)], 3);
        let cfg = TrainConfig { dim: 3, epochs: 1, batch_size: 2, ..TrainConfig::default() };
        let p = train(&evs, &cfg).unwrap();
        let exported = export_user_embeddings(&p);
        assert_eq!(exported.len(), 3);
        for (u, e) in &exported {
            assert_eq!(e.as_slice(), p.user(*u).unwrap());
        }
        assert_eq!(user_table(&p).to_text(), user_table(&p).to_text());
    }

    #[test]
    fn export_file_round_trip() {
        let evs = events(&[(0, 0), (3, 1), (1, 2)], 3);
        let cfg = TrainConfig { dim: 5, epochs: 2, batch_size: 2, ..TrainConfig::default() };
        let p = train(&evs, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (up, ip) = (dir.path().join("u.txt"), dir.path().join("i.txt"));
        user_table(&p).save(&up).unwrap();
        item_table(&p).save(&ip).unwrap();
        let users = EmbeddingTable::load(&up).unwrap();
        let items = EmbeddingTable::load(&ip).unwrap();
        assert_eq!(users, user_table(&p));
        let back = ModelParams::from_tables(&users, &items).unwrap();
        assert_eq!(export_user_embeddings(&back), export_user_embeddings(&p));
        assert!(!back.known_users[2]);
    }
}
