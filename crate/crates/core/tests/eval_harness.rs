//! Recall harness checked against hand-rolled replays of small worlds.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use socripple::annindex::{HnswParams, IndexMode, UserIndex};
use socripple::engagement::{BufferConfig, EngagementBuffer, ImpressionLog, Signal};
use socripple::evalharness::{
    evaluate, evaluate_arms, evaluate_with, run_sweep, run_table1, run_table2, Arm, EvalConfig, EvalContext, Variant,
};
use socripple::ripple::{retrieve, RippleConfig, RippleInputs};
use socripple::simgen::{gen_world, replay, World, WorldConfig};
use socripple::twotower::Embedding;
use socripple::{ItemId, Timestamp, UserId, HOUR};

const DAY: Timestamp = 24 * HOUR;

fn micro_world(seed: u64) -> World {
    gen_world(&WorldConfig {
        num_users: 30,
        num_creators: 6,
        num_items: 80,
        d_latent: 4,
        num_topics: 3,
        mean_follows: 3.0,
        organic_exposures: 12.0,
        horizon: 4 * DAY,
        split: 3 * DAY,
        seed,
        ..WorldConfig::default()
    })
    .unwrap()
}

fn random_index(n: usize, seed: u64) -> UserIndex {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embs: BTreeMap<UserId, Embedding> = (0..n as u32)
        .map(|u| (UserId(u), Embedding::new((0..4).map(|_| rng.sample(StandardNormal)).collect()).unwrap()))
        .collect();
    UserIndex::build(&embs, IndexMode::Exact, HnswParams::default()).unwrap()
}

fn ctx<'a>(w: &'a World, index: Option<&'a UserIndex>) -> EvalContext<'a> {
    EvalContext {
        graph: &w.graph,
        catalog: &w.catalog,
        content: &w.content,
        events: &w.events,
        split: w.config.split,
        index,
        dropout: None,
    }
}

fn is_pos(s: Signal) -> bool {
    matches!(s, Signal::Like | Signal::LongView)
}

/// `(user, t_eval, [(item, at, created)])` straight from the log.
fn script_test_users(w: &World) -> Vec<(UserId, Timestamp, Vec<(ItemId, Timestamp, Timestamp)>)> {
    let mut by: BTreeMap<UserId, Vec<(ItemId, Timestamp, Timestamp)>> = BTreeMap::new();
    for e in &w.events {
        let created = w.catalog.get(e.item).unwrap().created_at;
        if e.at >= w.config.split && is_pos(e.signal) && e.at - created <= DAY {
            by.entry(e.user).or_default().push((e.item, e.at, created));
        }
    }
    by.into_iter()
        .map(|(u, ps)| (u, ps.iter().map(|p| p.1).min().unwrap(), ps))
        .collect()
}

/// Macro recall per bucket for a retriever that sees `(user, t_eval)`.
fn script_recall(
    w: &World,
    buckets: &[i64],
    k: usize,
    mut retriever: impl FnMut(UserId, Timestamp) -> Vec<ItemId>,
) -> Vec<(f64, usize)> {
    let mut sums = vec![(0.0, 0usize); buckets.len()];
    for (u, t, ps) in script_test_users(w) {
        let got: Vec<ItemId> = retriever(u, t).into_iter().take(k).collect();
        for (b, &h) in buckets.iter().enumerate() {
            let rel: HashSet<ItemId> = ps
                .iter()
                .filter(|p| p.2 <= t && p.1 - p.2 <= h * HOUR)
                .map(|p| p.0)
                .collect();
            if rel.is_empty() {
                continue;
            }
            let hits = got.iter().collect::<HashSet<_>>().iter().filter(|i| rel.contains(i)).count();
            sums[b].0 += hits as f64 / rel.len() as f64;
            sums[b].1 += 1;
        }
    }
    sums.into_iter()
        .map(|(s, n)| (if n == 0 { 0.0 } else { s / n as f64 }, n))
        .collect()
}

fn script_item_knn(w: &World, user: UserId, t: Timestamp, k: usize) -> Vec<ItemId> {
    let prefix: Vec<_> = w.events.iter().filter(|e| e.at < t).collect();
    let shown: HashSet<(UserId, ItemId)> = prefix.iter().map(|e| (e.user, e.item)).collect();
    let mut engagers: HashMap<ItemId, BTreeSet<UserId>> = HashMap::new();
    for e in prefix.iter().filter(|e| is_pos(e.signal)) {
        engagers.entry(e.item).or_default().insert(e.user);
    }
    let history: BTreeSet<ItemId> = prefix
        .iter()
        .filter(|e| e.user == user && is_pos(e.signal))
        .map(|e| e.item)
        .collect();
    let empty = BTreeSet::new();
    let cosine = |a: ItemId, b: ItemId| {
        let (ua, ub) = (engagers.get(&a).unwrap_or(&empty), engagers.get(&b).unwrap_or(&empty));
        if ua.is_empty() || ub.is_empty() {
            return 0.0;
        }
        ua.intersection(ub).count() as f64 / ((ua.len() * ub.len()) as f64).sqrt()
    };
    let mut scored: Vec<(f64, ItemId)> = w
        .catalog
        .items()
        .iter()
        .filter(|m| m.created_at <= t && t - m.created_at <= DAY)
        .filter(|m| m.creator != user && !shown.contains(&(user, m.item)) && !history.contains(&m.item))
        .map(|m| (history.iter().map(|&h| cosine(m.item, h)).sum::<f64>(), m.item))
        .filter(|(s, _)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|s| s.1).collect()
}

#[test]
fn perfect_and_empty_retrievers_bound_recall() {
    let w = micro_world(1);
    let c = ctx(&w, None);
    let cfg = EvalConfig::default();
    let perfect = evaluate_with(&c, &cfg, |tu, _| tu.positives.iter().map(|p| p.0).collect()).unwrap();
    let empty = evaluate_with(&c, &cfg, |_, _| Vec::new()).unwrap();
    assert!(perfect.iter().any(|b| b.2 > 0));
    for (p, e) in perfect.iter().zip(&empty) {
        assert_eq!(p.2, e.2);
        if p.2 > 0 {
            assert_eq!(p.1, 1.0);
        }
        assert_eq!(e.1, 0.0);
    }
}

#[test]
fn item_knn_matches_hand_rolled_script() {
    for seed in 0..4 {
        let w = micro_world(seed);
        let c = ctx(&w, None);
        for k in [200, 3] {
            let cfg = EvalConfig { k, ..EvalConfig::default() };
            let want = script_recall(&w, &cfg.buckets_hours, k, |u, t| script_item_knn(&w, u, t, k));
            assert!(want[2].1 > 0 && want[2].0 > 0.0, "vacuous world {want:?}");
            for (b, &h) in cfg.buckets_hours.iter().enumerate() {
                let row = evaluate(&c, &cfg, Variant::ItemKnn, h).unwrap();
                assert_eq!(row.num_users, want[b].1);
                assert!((row.recall_at_k - want[b].0).abs() < 1e-12, "seed {seed} k {k} bucket {h}");
            }
        }
    }
}

#[test]
fn socripple_arm_matches_plain_retrieve_on_fresh_replays() {
    for seed in 0..3 {
        let w = micro_world(10 + seed);
        let index = random_index(30, seed);
        let c = ctx(&w, Some(&index));
        let cfg = EvalConfig {
            ripple: RippleConfig { k: 5, m: 3, ..RippleConfig::default() },
            ..EvalConfig::default()
        };
        let want = script_recall(&w, &cfg.buckets_hours, cfg.k, |u, t| {
            let mut buffer = EngagementBuffer::new(BufferConfig::default());
            let mut log = ImpressionLog::new();
            replay(&w.events, &w.catalog, t, &mut buffer, &mut log).unwrap();
            let inputs = RippleInputs {
                graph: &w.graph,
                catalog: &w.catalog,
                index: &index,
                buffer: &buffer,
                log: &log,
            };
            let rc = RippleConfig { n_out: cfg.k, ..cfg.ripple };
            retrieve(u, t, &inputs, &rc).into_iter().map(|r| r.item).collect()
        });
        assert!(want[2].1 > 0 && want[2].0 > 0.0, "vacuous world {want:?}");
        let (res, _, _) = evaluate_arms(&c, &cfg, &[Arm::Variant(Variant::Socripple), Arm::Ripple { k: 5, m: 3 }]).unwrap();
        for arm in &res {
            for (b, &(_, r, n)) in arm.buckets.iter().enumerate() {
                assert_eq!(n, want[b].1);
                assert!((r - want[b].0).abs() < 1e-12, "seed {seed} bucket {b}");
            }
        }
    }
}

#[test]
fn tables_agree_with_single_variant_runs() {
    let w = micro_world(2);
    let index = random_index(30, 2);
    let c = ctx(&w, Some(&index));
    let cfg = EvalConfig::default();
    let t2 = run_table2(&c, &cfg).unwrap();
    assert_eq!(t2.rows.len(), 3);
    for v in Variant::TABLE2 {
        let row = evaluate(&c, &cfg, v, 24).unwrap();
        assert_eq!(t2.get(v, 24), Some(row.recall_at_k));
    }
    let err = run_table1(&c, &cfg).unwrap_err();
    assert!(err.to_string().contains("dropoutnet"), "{err}");
    let grid = run_sweep(&c, &cfg, &[2, 5], &[1, 3]).unwrap();
    assert_eq!(grid.cells.len(), 4);
    let csv = grid.to_csv();
    assert!(csv.starts_with("K,M,recall_at_k,seed\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn evaluation_is_deterministic() {
    let w = micro_world(3);
    let index = random_index(30, 3);
    let c = ctx(&w, Some(&index));
    let cfg = EvalConfig::default();
    let a = run_table2(&c, &cfg).unwrap().to_csv();
    let b = run_table2(&c, &cfg).unwrap().to_csv();
    assert_eq!(a, b);
}
