//! Directed follower graph (follower -> creator).
//!
//! Adjacency is kept in both directions as sorted id vectors, so
//! `followers(c)` and `following(u)` are ascending and always transposes of
//! the same edge set.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ids::UserId;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SocialGraph {
    population: Option<usize>,
    followers: Vec<Vec<UserId>>,
    following: Vec<Vec<UserId>>,
    num_edges: usize,
}

impl SocialGraph {
    pub fn new() -> Self {
        Self::default()
    }

    /// A graph that rejects ids `>= num_users`.
    pub fn with_population(num_users: usize) -> Self {
        Self {
            population: Some(num_users),
            followers: vec![Vec::new(); num_users],
            following: vec![Vec::new(); num_users],
            num_edges: 0,
        }
    }

    pub fn population(&self) -> Option<usize> {
        self.population
    }

    /// Inserts `follower -> creator`. Returns `true` when the edge is new.
    pub fn add_edge(&mut self, follower: UserId, creator: UserId) -> Result<bool> {
        if follower == creator {
            return Err(Error::SelfEdge(follower));
        }
        if let Some(n) = self.population {
            for id in [follower, creator] {
                if id.index() >= n {
                    return Err(Error::UserOutOfRange(id, n));
                }
            }
        }
        let needed = follower.index().max(creator.index()) + 1;
        if self.followers.len() < needed {
            self.followers.resize_with(needed, Vec::new);
            self.following.resize_with(needed, Vec::new);
        }
        let fl = &mut self.followers[creator.index()];
        match fl.binary_search(&follower) {
            Ok(_) => return Ok(false),
            Err(pos) => fl.insert(pos, follower),
        }
        let fg = &mut self.following[follower.index()];
        let pos = fg.binary_search(&creator).unwrap_err();
        fg.insert(pos, creator);
        self.num_edges += 1;
        Ok(true)
    }

    /// Followers of `creator`, ascending. Unknown creators have none.
    pub fn followers(&self, creator: UserId) -> &[UserId] {
        self.followers
            .get(creator.index())
            .map_or(&[], Vec::as_slice)
    }

    /// Creators `user` follows, ascending.
    pub fn following(&self, user: UserId) -> &[UserId] {
        self.following.get(user.index()).map_or(&[], Vec::as_slice)
    }

    pub fn follows(&self, user: UserId, creator: UserId) -> bool {
        self.following(user).binary_search(&creator).is_ok()
    }

    pub fn num_edges(&self) -> usize {
        self.num_edges
    }

    /// Number of id slots (largest seen id + 1, or the configured population).
    pub fn num_nodes(&self) -> usize {
        self.population.unwrap_or(self.followers.len())
    }

    /// All edges as `(follower, creator)`, ordered by follower then creator.
    pub fn edges(&self) -> impl Iterator<Item = (UserId, UserId)> + '_ {
        self.following
            .iter()
            .enumerate()
            .flat_map(|(u, cs)| cs.iter().map(move |&c| (UserId(u as u32), c)))
    }

    /// Parses a whitespace separated `<follower> <creator>` edge list.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn load_edges(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_edges(&text, path)
    }

    pub fn parse_edges(text: &str, origin: &Path) -> Result<Self> {
        let mut graph = Self::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace();
            let (Some(a), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::parse(origin, lineno + 1, "expected two columns"));
            };
            let parse = |s: &str| {
                s.parse::<u32>()
                    .map(UserId)
                    .map_err(|e| Error::parse(origin, lineno + 1, format!("{s:?}: {e}")))
            };
            let (follower, creator) = (parse(a)?, parse(b)?);
            graph
                .add_edge(follower, creator)
                .map_err(|e| Error::parse(origin, lineno + 1, e.to_string()))?;
        }
        Ok(graph)
    }

    pub fn save_edges(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::with_capacity(self.num_edges * 12);
        writeln!(out, "# follower creator").unwrap();
        for (f, c) in self.edges() {
            writeln!(out, "{f} {c}").unwrap();
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}
