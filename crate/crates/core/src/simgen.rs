//! Synthetic social worlds with planted interest structure.
//!
//! Users carry unit latent vectors drawn around a small set of topic centres.
//! The first `num_creators` users upload items. Follow edges attach
//! preferentially to popular creators, boosted by latent similarity.
//! Each item is exposed to a random subset of the creator's followers soon
//! after upload and to interest-biased organic viewers later; an exposure
//! turns positive with probability `base_rate * sigmoid(scale * cos)`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::ContentTable;
use crate::catalog::{self, Catalog, ItemMeta};
use crate::embedfile::EmbeddingTable;
use crate::engagement::{EngagementBuffer, EngagementEvent, ImpressionLog, PositiveSignals, Signal};
use crate::error::{Error, Result};
use crate::ids::{ItemId, Timestamp, UserId, HOUR};
use crate::socialgraph::SocialGraph;
use crate::twotower::dot;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub num_users: usize,
    pub num_creators: usize,
    pub num_items: usize,
    pub d_latent: usize,
    pub num_topics: usize,
    /// Spread of user latents around their topic centre.
    pub topic_noise: f64,
    /// Spread of an item's latent around its creator's latent.
    pub item_noise: f64,
    /// Noise added to the creator latent to form the visible content vector.
    pub content_noise: f64,
    pub mean_follows: f64,
    pub attachment_exponent: f64,
    pub homophily: f64,
    pub base_rate: f64,
    pub affinity_scale: f64,
    /// Probability that a follower is shown a new upload.
    pub follower_exposure: f64,
    pub follower_delay_hours: f64,
    /// Mean organic exposures of an item of median quality.
    pub organic_exposures: f64,
    pub organic_delay_hours: f64,
    /// Strength of interest targeting for organic exposure.
    pub organic_focus: f64,
    pub quality_sigma: f64,
    pub activity_sigma: f64,
    pub exposure_window_hours: f64,
    pub horizon: Timestamp,
    pub split: Timestamp,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            num_users: 10_000,
            num_creators: 500,
            num_items: 5_000,
            d_latent: 16,
            num_topics: 20,
            topic_noise: 0.6,
            item_noise: 0.6,
            content_noise: 1.0,
            mean_follows: 15.0,
            attachment_exponent: 1.0,
            homophily: 4.0,
            base_rate: 0.6,
            affinity_scale: 4.0,
            follower_exposure: 0.3,
            follower_delay_hours: 2.0,
            organic_exposures: 120.0,
            organic_delay_hours: 8.0,
            organic_focus: 4.0,
            quality_sigma: 0.8,
            activity_sigma: 1.0,
            exposure_window_hours: 48.0,
            horizon: 7 * 24 * HOUR,
            split: 6 * 24 * HOUR,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.num_users == 0 || self.num_creators == 0 || self.num_items == 0 || self.d_latent == 0 {
            return bad("num_users, num_creators, num_items and d_latent must be positive");
        }
        if self.num_creators > self.num_users {
            return bad("num_creators cannot exceed num_users");
        }
        if self.num_topics == 0 {
            return bad("num_topics must be positive");
        }
        if self.horizon <= 0 || !(0..=self.horizon).contains(&self.split) {
            return bad("split must lie within (0, horizon]");
        }
        if !(0.0..=1.0).contains(&self.base_rate) || !(0.0..=1.0).contains(&self.follower_exposure) {
            return bad("base_rate and follower_exposure must be probabilities");
        }
        let positive = [
            self.follower_delay_hours,
            self.organic_delay_hours,
            self.exposure_window_hours,
        ];
        if positive.iter().any(|&v| !(v > 0.0 && v.is_finite())) {
            return bad("delays and exposure window must be positive");
        }
        let nonneg = [
            self.topic_noise,
            self.item_noise,
            self.content_noise,
            self.mean_follows,
            self.attachment_exponent,
            self.homophily,
            self.affinity_scale,
            self.organic_exposures,
            self.organic_focus,
            self.quality_sigma,
            self.activity_sigma,
        ];
        if nonneg.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return bad("noise, rate and strength knobs must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct World {
    pub config: WorldConfig,
    pub graph: SocialGraph,
    /// `num_users x d_latent`, unit rows.
    pub user_latents: Vec<f64>,
    pub catalog: Catalog,
    /// `num_items x d_latent`, unit rows.
    pub item_latents: Vec<f64>,
    pub content: ContentTable,
    pub quality: Vec<f64>,
    /// Sorted by `(at, user, item)`.
    pub events: Vec<EngagementEvent>,
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    let s = scale / (d as f64).sqrt();
    (0..d).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn normalized(mut v: Vec<f64>) -> Vec<f64> {
    let n = dot(&v, &v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

// rng streams; items use ITEM_STREAM + item index
const LATENT_STREAM: u64 = 1;
const GRAPH_STREAM: u64 = 2;
const CATALOG_STREAM: u64 = 3;
const ITEM_STREAM: u64 = 1 << 32;

impl World {
    pub fn latent(&self, user: UserId) -> &[f64] {
        let d = self.config.d_latent;
        &self.user_latents[user.index() * d..(user.index() + 1) * d]
    }

    pub fn item_latent(&self, item: ItemId) -> &[f64] {
        let d = self.config.d_latent;
        &self.item_latents[item.index() * d..(item.index() + 1) * d]
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.graph.save_edges(dir.join("edges.tsv"))?;
        self.catalog.save(dir.join("items.jsonl"))?;
        catalog::save_events(dir.join("events.jsonl"), &self.events)?;
        self.content.to_table().save(dir.join("content.txt"))?;
        let d = self.config.d_latent;
        let latents = EmbeddingTable {
            dim: d,
            rows: (0..self.config.num_users)
                .map(|u| (u as u32, self.user_latents[u * d..(u + 1) * d].to_vec()))
                .collect(),
        };
        latents.save(dir.join("latents.txt"))?;
        let cfg = serde_json::to_string_pretty(&self.config).expect("serializable config");
        fs::write(dir.join("world.json"), cfg).map_err(|e| Error::io(dir, e))
    }
}

/// Files written by [`World::save`] that downstream stages read.
#[derive(Debug, Clone)]
pub struct WorldFiles {
    pub config: WorldConfig,
    pub graph: SocialGraph,
    pub catalog: Catalog,
    pub content: ContentTable,
    pub events: Vec<EngagementEvent>,
}

impl WorldFiles {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let cfg_path = dir.join("world.json");
        let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let config = serde_json::from_str(&text).map_err(|e| Error::Corrupt(e.to_string()))?;
        Ok(Self {
            config,
            graph: SocialGraph::load_edges(dir.join("edges.tsv"))?,
            catalog: Catalog::load(dir.join("items.jsonl"))?,
            content: ContentTable::from_table(&EmbeddingTable::load(dir.join("content.txt"))?)?,
            events: catalog::load_events(dir.join("events.jsonl"))?,
        })
    }
}

impl From<World> for WorldFiles {
    fn from(w: World) -> Self {
        Self {
            config: w.config,
            graph: w.graph,
            catalog: w.catalog,
            content: w.content,
            events: w.events,
        }
    }
}

pub fn gen_world(config: &WorldConfig) -> Result<World> {
    config.validate()?;
    let d = config.d_latent;
    let n = config.num_users;

    let mut rng = stream_rng(config.seed, LATENT_STREAM);
    let centers: Vec<Vec<f64>> = (0..config.num_topics)
        .map(|_| normalized(gaussian_vec(&mut rng, d, 1.0)))
        .collect();
    let mut user_latents = Vec::with_capacity(n * d);
    let mut activity = Vec::with_capacity(n);
    let act_dist = LogNormal::new(0.0, config.activity_sigma).expect("finite sigma");
    for _ in 0..n {
        let c = &centers[rng.random_range(0..config.num_topics)];
        let noise = gaussian_vec(&mut rng, d, config.topic_noise);
        let v: Vec<f64> = c.iter().zip(&noise).map(|(a, b)| a + b).collect();
        user_latents.extend(normalized(v));
        activity.push(act_dist.sample(&mut rng));
    }

    let graph = gen_graph(config, &user_latents, &mut stream_rng(config.seed, GRAPH_STREAM));

    let mut rng = stream_rng(config.seed, CATALOG_STREAM);
    let mut uploads: Vec<(Timestamp, UserId)> = (0..config.num_items)
        .map(|_| {
            (
                rng.random_range(0..config.horizon),
                UserId(rng.random_range(0..config.num_creators as u32)),
            )
        })
        .collect();
    uploads.sort();
    let catalog = Catalog::from_rows(uploads.iter().map(|&(t, c)| (c, t)));
    let q_dist = LogNormal::new(0.0, config.quality_sigma).expect("finite sigma");
    let mut item_latents = Vec::with_capacity(config.num_items * d);
    let mut content = Vec::with_capacity(config.num_items * d);
    let mut quality = Vec::with_capacity(config.num_items);
    for &(_, creator) in &uploads {
        let cl = &user_latents[creator.index() * d..(creator.index() + 1) * d];
        let noise = gaussian_vec(&mut rng, d, config.item_noise);
        item_latents.extend(normalized(cl.iter().zip(&noise).map(|(a, b)| a + b).collect()));
        let cnoise = gaussian_vec(&mut rng, d, config.content_noise);
        content.extend(cl.iter().zip(&cnoise).map(|(a, b)| a + b));
        quality.push(q_dist.sample(&mut rng));
    }

    let ctx = ExposureContext {
        config,
        graph: &graph,
        user_latents: &user_latents,
        activity: &activity,
    };
    let mut events: Vec<EngagementEvent> = catalog
        .items()
        .par_iter()
        .map(|meta| {
            let i = meta.item.index();
            ctx.item_events(meta, &item_latents[i * d..(i + 1) * d], quality[i])
        })
        .flatten()
        .collect();
    events.sort_by_key(|e| (e.at, e.user, e.item));

    Ok(World {
        config: config.clone(),
        graph,
        user_latents,
        catalog,
        item_latents,
        content: ContentTable { dim: d, vectors: content },
        quality,
        events,
    })
}

/// Users are processed in id order; each picks distinct creators with weight
/// `(followers + 1)^alpha * exp(homophily * cos)`.
fn gen_graph(config: &WorldConfig, latents: &[f64], rng: &mut ChaCha8Rng) -> SocialGraph {
    let d = config.d_latent;
    let nc = config.num_creators;
    let mut graph = SocialGraph::with_population(config.num_users);
    let mut indegree = vec![0usize; nc];
    let extra = Poisson::new(config.mean_follows.max(1.0) - 1.0 + f64::EPSILON).expect("positive rate");
    let mut weights = vec![0.0; nc];
    for u in 0..config.num_users {
        let lu = &latents[u * d..(u + 1) * d];
        let want = (1 + extra.sample(rng) as usize).min(nc - usize::from(u < nc));
        if want == 0 {
            continue;
        }
        for (c, w) in weights.iter_mut().enumerate() {
            *w = if c == u {
                0.0
            } else {
                let cos = dot(lu, &latents[c * d..(c + 1) * d]);
                ((indegree[c] + 1) as f64).powf(config.attachment_exponent) * (config.homophily * cos).exp()
            };
        }
        let mut total: f64 = weights.iter().sum();
        for _ in 0..want {
            let mut r = rng.random::<f64>() * total;
            // rounding can leave r past the end; fall back to the last live weight
            let mut pick = None;
            for (c, &w) in weights.iter().enumerate() {
                if w > 0.0 {
                    pick = Some(c);
                    if r < w {
                        break;
                    }
                }
                r -= w;
            }
            let Some(pick) = pick else { break };
            graph
                .add_edge(UserId(u as u32), UserId(pick as u32))
                .expect("valid creator edge");
            indegree[pick] += 1;
            total -= weights[pick];
            weights[pick] = 0.0;
        }
    }
    graph
}

struct ExposureContext<'a> {
    config: &'a WorldConfig,
    graph: &'a SocialGraph,
    user_latents: &'a [f64],
    activity: &'a [f64],
}

impl ExposureContext<'_> {
    fn latent(&self, u: usize) -> &[f64] {
        let d = self.config.d_latent;
        &self.user_latents[u * d..(u + 1) * d]
    }

    fn item_events(&self, meta: &ItemMeta, latent: &[f64], quality: f64) -> Vec<EngagementEvent> {
        let cfg = self.config;
        let mut rng = stream_rng(cfg.seed, ITEM_STREAM + meta.item.0 as u64);
        let end = (meta.created_at + (cfg.exposure_window_hours * HOUR as f64) as Timestamp).min(cfg.horizon);
        let mut exposed: HashMap<u32, Timestamp> = HashMap::new();
        let mut expose = |u: u32, t: Timestamp| {
            if t < end && u != meta.creator.0 {
                exposed.entry(u).and_modify(|old| *old = (*old).min(t)).or_insert(t);
            }
        };

        let follow_delay = Exp::new(1.0 / (cfg.follower_delay_hours * HOUR as f64)).expect("positive delay");
        for &f in self.graph.followers(meta.creator) {
            if rng.random_bool(cfg.follower_exposure) {
                let t = meta.created_at + follow_delay.sample(&mut rng) as Timestamp;
                expose(f.0, t);
            }
        }

        let lambda = cfg.organic_exposures * quality;
        if lambda > 0.0 {
            let count = Poisson::new(lambda).expect("positive rate").sample(&mut rng) as usize;
            if count > 0 {
                let mut cum = Vec::with_capacity(cfg.num_users);
                let mut acc = 0.0;
                for u in 0..cfg.num_users {
                    acc += self.activity[u] * (cfg.organic_focus * dot(self.latent(u), latent)).exp();
                    cum.push(acc);
                }
                let delay = Exp::new(1.0 / (cfg.organic_delay_hours * HOUR as f64)).expect("positive delay");
                for _ in 0..count {
                    let r = rng.random::<f64>() * acc;
                    let u = cum.partition_point(|&c| c <= r).min(cfg.num_users - 1);
                    let t = meta.created_at + delay.sample(&mut rng) as Timestamp;
                    expose(u as u32, t);
                }
            }
        }

        let mut viewers: Vec<(u32, Timestamp)> = exposed.into_iter().collect();
        viewers.sort_unstable();
        viewers
            .into_iter()
            .map(|(u, at)| {
                let cos = dot(self.latent(u as usize), latent);
                let p = cfg.base_rate * sigmoid(cfg.affinity_scale * cos);
                let signal = if rng.random_bool(p) {
                    if rng.random_bool(0.5) {
                        Signal::Like
                    } else {
                        Signal::LongView
                    }
                } else if rng.random_bool(0.7) {
                    Signal::View
                } else {
                    Signal::Skip
                };
                EngagementEvent {
                    user: UserId(u),
                    item: meta.item,
                    at,
                    signal,
                }
            })
            .collect()
    }
}

/// Train events precede `split_time`; test events are positives at or after
/// it on items at most `max_item_age` old when engaged.
pub fn split(
    events: &[EngagementEvent],
    catalog: &Catalog,
    split_time: Timestamp,
    max_item_age: Timestamp,
    positive: PositiveSignals,
) -> (Vec<EngagementEvent>, Vec<EngagementEvent>) {
    let train = events.iter().filter(|e| e.at < split_time).copied().collect();
    let test = events
        .iter()
        .filter(|e| e.at >= split_time && positive.contains(e.signal))
        .filter(|e| {
            catalog
                .get(e.item)
                .is_some_and(|m| m.created_at <= e.at && e.at - m.created_at <= max_item_age)
        })
        .copied()
        .collect();
    (train, test)
}

/// Loads every event with `at < until`: positives into the buffer, all
/// events into the impression log. Events must be sorted by time.
pub fn replay(
    events: &[EngagementEvent],
    catalog: &Catalog,
    until: Timestamp,
    buffer: &mut EngagementBuffer,
    log: &mut ImpressionLog,
) -> Result<()> {
    let positive = buffer.config().positive;
    for e in events.iter().take_while(|e| e.at < until) {
        log.mark_shown(e.user, e.item, e.at);
        if positive.contains(e.signal) {
            buffer.record(e, catalog.meta(e.item)?.created_at)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> WorldConfig {
        WorldConfig {
            num_users: 300,
            num_creators: 30,
            num_items: 200,
            organic_exposures: 20.0,
            mean_follows: 5.0,
            ..WorldConfig::default()
        }
    }

    #[test]
    fn two_users_one_item() {
        let cfg = WorldConfig {
            num_users: 2,
            num_creators: 1,
            num_items: 1,
            mean_follows: 1.0,
            follower_exposure: 1.0,
            ..WorldConfig::default()
        };
        let w = gen_world(&cfg).unwrap();
        assert_eq!(w.catalog.len(), 1);
        for e in &w.events {
            assert_eq!(e.item, ItemId(0));
            assert_eq!(e.user, UserId(1));
        }
    }

    #[test]
    fn referential_integrity_and_order() {
        let w = gen_world(&tiny()).unwrap();
        let cfg = &w.config;
        for m in w.catalog.items() {
            assert!(m.creator.index() < cfg.num_creators);
            assert!((0..cfg.horizon).contains(&m.created_at));
        }
        for e in &w.events {
            assert!(e.user.index() < cfg.num_users);
            let m = w.catalog.get(e.item).unwrap();
            assert!(e.at >= m.created_at && e.at < cfg.horizon);
            assert_ne!(e.user, m.creator);
        }
        assert!(w.events.windows(2).all(|p| (p[0].at, p[0].user, p[0].item) < (p[1].at, p[1].user, p[1].item)));
        for (f, c) in w.graph.edges() {
            assert!(c.index() < cfg.num_creators);
            assert_ne!(f, c);
        }
    }

    #[test]
    fn same_seed_same_world() {
        let a = gen_world(&tiny()).unwrap();
        let b = gen_world(&tiny()).unwrap();
        assert_eq!(a.events, b.events);
        assert_eq!(a.catalog, b.catalog);
        assert_eq!(a.content, b.content);
        assert_eq!(a.user_latents, b.user_latents);
        assert_eq!(a.graph.edges().collect::<Vec<_>>(), b.graph.edges().collect::<Vec<_>>());
        let c = gen_world(&WorldConfig { seed: 1, ..tiny() }).unwrap();
        assert_ne!(a.events, c.events);
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            WorldConfig { num_users: 0, ..tiny() },
            WorldConfig { num_creators: 301, ..tiny() },
            WorldConfig { split: -1, ..tiny() },
            WorldConfig { split: 8 * 24 * HOUR, ..tiny() },
            WorldConfig { base_rate: 1.5, ..tiny() },
        ] {
            assert!(gen_world(&cfg).is_err());
        }
    }

    #[test]
    fn split_edges() {
        let w = gen_world(&tiny()).unwrap();
        let pos = PositiveSignals::default();
        let (train, test) = split(&w.events, &w.catalog, w.config.horizon, 24 * HOUR, pos);
        assert_eq!(train.len(), w.events.len());
        assert!(test.is_empty());
        let (train, test) = split(&w.events, &w.catalog, 0, 24 * HOUR, pos);
        assert!(train.is_empty());
        assert!(!test.is_empty());
    }

    #[test]
    fn replay_edges() {
        let w = gen_world(&tiny()).unwrap();
        let mut buf = EngagementBuffer::default();
        let mut log = ImpressionLog::new();
        replay(&w.events, &w.catalog, 0, &mut buf, &mut log).unwrap();
        assert!(buf.is_empty() && log.is_empty());
    }

    #[test]
    fn saved_world_loads_back() {
        let w = gen_world(&tiny()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        w.save(dir.path()).unwrap();
        let files = WorldFiles::load(dir.path()).unwrap();
        assert_eq!(files.events, w.events);
        assert_eq!(files.catalog, w.catalog);
        assert_eq!(files.content, w.content);
        assert_eq!(files.config, w.config);
    }
}
