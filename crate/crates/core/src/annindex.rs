//! K-nearest-neighbour search over user embeddings.
//!
//! Vectors are L2-normalised at build time, so similarity is cosine computed
//! as a dot product. `Exact` mode scans every stored user; `Approximate` mode
//! walks a hierarchical navigable small-world graph. Both return neighbours
//! ordered by descending similarity with ascending user id on ties, and never
//! return the query user.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap, HashMap};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ids::UserId;
use crate::twotower::{dot, Embedding};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexMode {
    Exact,
    Approximate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnswParams {
    /// Max links per node on upper layers; layer 0 allows twice as many.
    pub m: usize,
    pub ef_construction: usize,
    pub ef_search: usize,
    pub seed: u64,
}

impl Default for HnswParams {
    fn default() -> Self {
        Self {
            m: 16,
            ef_construction: 200,
            ef_search: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub user: UserId,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NeighborList {
    pub entries: Vec<Neighbor>,
}

impl NeighborList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.entries.iter().map(|n| n.user)
    }

    /// The first `k` neighbours.
    pub fn truncated(&self, k: usize) -> NeighborList {
        NeighborList {
            entries: self.entries.iter().take(k).copied().collect(),
        }
    }
}

/// Descending similarity, then ascending id.
fn rank_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then(a.user.cmp(&b.user))
}

#[derive(Debug, Clone)]
pub struct UserIndex {
    dim: usize,
    ids: Vec<UserId>,
    vectors: Vec<f64>,
    position: HashMap<UserId, u32>,
    mode: IndexMode,
    params: HnswParams,
    graph: Option<Hnsw>,
}

impl UserIndex {
    pub fn build(
        embeddings: &BTreeMap<UserId, Embedding>,
        mode: IndexMode,
        params: HnswParams,
    ) -> Result<Self> {
        let mut iter = embeddings.iter();
        let (_, first) = iter.next().ok_or(Error::Empty("index embeddings"))?;
        let dim = first.dim();
        if dim == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            });
        }
        let mut ids = Vec::with_capacity(embeddings.len());
        let mut vectors = Vec::with_capacity(embeddings.len() * dim);
        for (&user, e) in embeddings {
            if e.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: e.dim(),
                });
            }
            if e.0.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite);
            }
            let norm = e.norm();
            if norm == 0.0 {
                return Err(Error::ZeroVector(user));
            }
            ids.push(user);
            vectors.extend(e.0.iter().map(|v| v / norm));
        }
        Ok(Self::from_normalized(dim, ids, vectors, mode, params))
    }

    fn from_normalized(
        dim: usize,
        ids: Vec<UserId>,
        vectors: Vec<f64>,
        mode: IndexMode,
        params: HnswParams,
    ) -> Self {
        let position = ids
            .iter()
            .enumerate()
            .map(|(i, &u)| (u, i as u32))
            .collect();
        let mut index = Self {
            dim,
            ids,
            vectors,
            position,
            mode,
            params,
            graph: None,
        };
        if mode == IndexMode::Approximate {
            index.graph = Some(Hnsw::build(&index, params));
        }
        index
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mode(&self) -> IndexMode {
        self.mode
    }

    pub fn ids(&self) -> &[UserId] {
        &self.ids
    }

    pub fn contains(&self, user: UserId) -> bool {
        self.position.contains_key(&user)
    }

    /// The stored (normalised) vector of `user`.
    pub fn vector(&self, user: UserId) -> Option<&[f64]> {
        self.position.get(&user).map(|&p| self.row(p))
    }

    #[inline]
    fn row(&self, pos: u32) -> &[f64] {
        let p = pos as usize;
        &self.vectors[p * self.dim..(p + 1) * self.dim]
    }

    pub fn knn(&self, query: UserId, k: usize) -> Result<NeighborList> {
        if k == 0 {
            return Err(Error::InvalidConfig("K must be at least 1".into()));
        }
        let &qpos = self.position.get(&query).ok_or(Error::UnknownUser(query))?;
        let mut entries = match &self.graph {
            Some(graph) if self.mode == IndexMode::Approximate => graph.search(self, qpos, k),
            _ => self.scan(qpos, k),
        };
        entries.sort_by(rank_order);
        entries.truncate(k);
        Ok(NeighborList { entries })
    }

    pub fn knn_batch(&self, queries: &[UserId], k: usize) -> Result<Vec<NeighborList>> {
        queries.par_iter().map(|&q| self.knn(q, k)).collect()
    }

    fn scan(&self, qpos: u32, k: usize) -> Vec<Neighbor> {
        let q = self.row(qpos);
        let mut all: Vec<Neighbor> = (0..self.ids.len() as u32)
            .filter(|&p| p != qpos)
            .map(|p| Neighbor {
                user: self.ids[p as usize],
                similarity: dot(q, self.row(p)),
            })
            .collect();
        if all.len() > k {
            all.select_nth_unstable_by(k - 1, rank_order);
            all.truncate(k);
        }
        all
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let snap = IndexFile {
            version: SNAPSHOT_VERSION,
            dim: self.dim,
            mode: self.mode,
            params: self.params,
            ids: self.ids.clone(),
            vectors: self.vectors.clone(),
        };
        let bytes = serde_json::to_vec(&snap).expect("serializable index");
        crate::snapshot::write_atomic(path, &bytes)
    }

    /// Loads a saved index; the graph is rebuilt deterministically.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let snap: IndexFile =
            serde_json::from_slice(&bytes).map_err(|e| Error::Corrupt(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(Error::Version {
                found: snap.version,
                expected: SNAPSHOT_VERSION,
            });
        }
        if snap.dim == 0 || snap.vectors.len() != snap.ids.len() * snap.dim {
            return Err(Error::Corrupt("vector table does not match id list".into()));
        }
        Ok(Self::from_normalized(
            snap.dim,
            snap.ids,
            snap.vectors,
            snap.mode,
            snap.params,
        ))
    }
}

#[derive(Serialize, Deserialize)]
struct IndexFile {
    version: u32,
    dim: usize,
    mode: IndexMode,
    params: HnswParams,
    ids: Vec<UserId>,
    vectors: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Scored {
    sim: f64,
    pos: u32,
}

impl Eq for Scored {}

impl Ord for Scored {
    fn cmp(&self, other: &Self) -> Ordering {
        self.sim
            .total_cmp(&other.sim)
            .then(other.pos.cmp(&self.pos))
    }
}

impl PartialOrd for Scored {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Hierarchical navigable small-world graph over index positions.
#[derive(Debug, Clone)]
struct Hnsw {
    // links[node][layer] -> neighbour positions
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    top_layer: usize,
    ef_search: usize,
}

impl Hnsw {
    fn build(index: &UserIndex, params: HnswParams) -> Self {
        let n = index.len();
        let m = params.m.max(2);
        let level_mult = 1.0 / (m as f64).ln();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut graph = Hnsw {
            links: Vec::with_capacity(n),
            entry: 0,
            top_layer: 0,
            ef_search: params.ef_search,
        };
        let mut visited = Visited::new(n);
        for pos in 0..n as u32 {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            let level = (-u.ln() * level_mult).floor() as usize;
            graph.links.push(vec![Vec::new(); level + 1]);
            if pos == 0 {
                graph.top_layer = level;
                continue;
            }
            let q = index.row(pos);
            let mut ep = vec![Scored {
                sim: dot(q, index.row(graph.entry)),
                pos: graph.entry,
            }];
            for layer in (level + 1..=graph.top_layer).rev() {
                ep = graph.search_layer(index, q, &ep, 1, layer, &mut visited);
            }
            for layer in (0..=level.min(graph.top_layer)).rev() {
                let found =
                    graph.search_layer(index, q, &ep, params.ef_construction, layer, &mut visited);
                let cap = if layer == 0 { 2 * m } else { m };
                let chosen = select_neighbors(index, &found, m);
                for &nb in &chosen {
                    graph.links[nb as usize][layer].push(pos);
                    if graph.links[nb as usize][layer].len() > cap {
                        let base = index.row(nb);
                        let mut cands: Vec<Scored> = graph.links[nb as usize][layer]
                            .iter()
                            .map(|&p| Scored {
                                sim: dot(base, index.row(p)),
                                pos: p,
                            })
                            .collect();
                        cands.sort_by(|a, b| b.cmp(a));
                        graph.links[nb as usize][layer] = select_neighbors(index, &cands, cap);
                    }
                }
                graph.links[pos as usize][layer] = chosen;
                ep = found;
            }
            if level > graph.top_layer {
                graph.top_layer = level;
                graph.entry = pos;
            }
        }
        graph
    }

    /// Best-first search on one layer; returns up to `ef` results, best first.
    fn search_layer(
        &self,
        index: &UserIndex,
        q: &[f64],
        entry: &[Scored],
        ef: usize,
        layer: usize,
        visited: &mut Visited,
    ) -> Vec<Scored> {
        visited.reset();
        let mut frontier: BinaryHeap<Scored> = BinaryHeap::new();
        let mut best: BinaryHeap<Reverse<Scored>> = BinaryHeap::new();
        for &s in entry {
            if visited.insert(s.pos) {
                frontier.push(s);
                best.push(Reverse(s));
            }
        }
        while best.len() > ef {
            best.pop();
        }
        while let Some(cur) = frontier.pop() {
            let worst = best.peek().map(|r| r.0);
            if let Some(w) = worst {
                if best.len() >= ef && cur < w {
                    break;
                }
            }
            for &nb in &self.links[cur.pos as usize][layer] {
                if !visited.insert(nb) {
                    continue;
                }
                let s = Scored {
                    sim: dot(q, index.row(nb)),
                    pos: nb,
                };
                if best.len() < ef || s > best.peek().unwrap().0 {
                    frontier.push(s);
                    best.push(Reverse(s));
                    if best.len() > ef {
                        best.pop();
                    }
                }
            }
        }
        let mut out: Vec<Scored> = best.into_iter().map(|r| r.0).collect();
        out.sort_by(|a, b| b.cmp(a));
        out
    }

    fn search(&self, index: &UserIndex, qpos: u32, k: usize) -> Vec<Neighbor> {
        let q = index.row(qpos);
        let mut visited = Visited::new(index.len());
        let mut ep = vec![Scored {
            sim: dot(q, index.row(self.entry)),
            pos: self.entry,
        }];
        for layer in (1..=self.top_layer).rev() {
            ep = self.search_layer(index, q, &ep, 1, layer, &mut visited);
        }
        let ef = self.ef_search.max(k + 1);
        self.search_layer(index, q, &ep, ef, 0, &mut visited)
            .into_iter()
            .filter(|s| s.pos != qpos)
            .map(|s| Neighbor {
                user: index.ids[s.pos as usize],
                similarity: s.sim,
            })
            .collect()
    }
}

/// Diversity heuristic: keep a candidate only if it is closer to the base
/// than to every already-kept neighbour; top up with the closest rejects.
fn select_neighbors(index: &UserIndex, sorted: &[Scored], m: usize) -> Vec<u32> {
    let mut kept: Vec<Scored> = Vec::with_capacity(m);
    let mut rejected = Vec::new();
    for &c in sorted {
        if kept.len() >= m {
            break;
        }
        let cv = index.row(c.pos);
        if kept.iter().all(|k| dot(cv, index.row(k.pos)) < c.sim) {
            kept.push(c);
        } else {
            rejected.push(c);
        }
    }
    for c in rejected {
        if kept.len() >= m {
            break;
        }
        kept.push(c);
    }
    kept.into_iter().map(|s| s.pos).collect()
}

struct Visited {
    marks: Vec<u32>,
    epoch: u32,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            marks: vec![0; n],
            epoch: 0,
        }
    }

    fn reset(&mut self) {
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.marks.fill(0);
            self.epoch = 1;
        }
    }

    fn insert(&mut self, pos: u32) -> bool {
        let slot = &mut self.marks[pos as usize];
        if *slot == self.epoch {
            false
        } else {
            *slot = self.epoch;
            true
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn emb(rows: &[(u32, &[f64])]) -> BTreeMap<UserId, Embedding> {
        rows.iter()
            .map(|(u, v)| (UserId(*u), Embedding(v.to_vec())))
            .collect()
    }

    #[test]
    fn build_edge_cases() {
        let one = UserIndex::build(&emb(&[(3, &[1.0, 2.0])]), IndexMode::Exact, HnswParams::default())
            .unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.knn(UserId(3), 5).unwrap().is_empty());

        let idx = UserIndex::build(&emb(&[(0, &[3.0, 4.0])]), IndexMode::Exact, HnswParams::default())
            .unwrap();
        let v = idx.vector(UserId(0)).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);

        assert!(matches!(
            UserIndex::build(&emb(&[(0, &[0.0, 0.0])]), IndexMode::Exact, HnswParams::default()),
            Err(Error::ZeroVector(_))
        ));
        assert!(matches!(
            UserIndex::build(&emb(&[(0, &[1.0]), (1, &[1.0, 0.0])]), IndexMode::Exact, HnswParams::default()),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            UserIndex::build(&BTreeMap::new(), IndexMode::Exact, HnswParams::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn query_errors_and_self_exclusion() {
        let idx = UserIndex::build(
            &emb(&[(0, &[1.0, 0.0]), (1, &[0.0, 1.0])]),
            IndexMode::Exact,
            HnswParams::default(),
        )
        .unwrap();
        let n = idx.knn(UserId(0), 5).unwrap();
        assert_eq!(n.users().collect::<Vec<_>>(), vec![UserId(1)]);
        assert!(matches!(idx.knn(UserId(9), 1), Err(Error::UnknownUser(_))));
        assert!(idx.knn(UserId(0), 0).is_err());
        assert!(idx.knn_batch(&[UserId(0), UserId(7)], 1).is_err());
    }

    #[test]
    fn ties_break_by_id() {
        let idx = UserIndex::build(
            &emb(&[(5, &[1.0, 0.0]), (2, &[2.0, 0.0]), (9, &[0.5, 0.0]), (1, &[0.0, 1.0])]),
            IndexMode::Exact,
            HnswParams::default(),
        )
        .unwrap();
        let n = idx.knn(UserId(1), 3).unwrap();
        assert_eq!(
            n.users().collect::<Vec<_>>(),
            vec![UserId(2), UserId(5), UserId(9)]
        );
        let n = idx.knn(UserId(9), 2).unwrap();
        assert_eq!(n.users().collect::<Vec<_>>(), vec![UserId(2), UserId(5)]);
    }

    #[test]
    fn snapshot_round_trip() {
        let idx = UserIndex::build(
            &emb(&[(0, &[1.0, 0.3]), (1, &[0.2, 1.0]), (4, &[-1.0, 0.1])]),
            IndexMode::Approximate,
            HnswParams::default(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("index.json");
        idx.save(&p).unwrap();
        let back = UserIndex::load(&p).unwrap();
        for u in idx.ids() {
            assert_eq!(back.knn(*u, 2).unwrap(), idx.knn(*u, 2).unwrap());
            assert_eq!(back.vector(*u), idx.vector(*u));
        }
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, &text[..text.len() / 2]).unwrap();
        assert!(matches!(UserIndex::load(&p), Err(Error::Corrupt(_))));
        fs::write(&p, text.replace("\"version\":1", "\"version\":7")).unwrap();
        assert!(matches!(UserIndex::load(&p), Err(Error::Version { found: 7, .. })));
    }
}
