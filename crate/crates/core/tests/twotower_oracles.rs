//! Loss, probability and gradient checks against independent oracles.

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use socripple::baselines::{ContentTable, DropoutNetParams};
use socripple::twotower::{
    batch_gradient, batch_loss, in_batch_probability, score_matrix, ModelParams, TrainBatch,
};
use socripple::{ItemId, UserId};

fn naive_loss(params: &ModelParams, batch: &TrainBatch) -> f64 {
    let d = params.dim;
    let row = |t: &[f64], i: usize| t[i * d..(i + 1) * d].to_vec();
    let mut loss = 0.0;
    for &(u, i) in &batch.pairs {
        let uv = row(&params.user_table, u.index());
        let mut num = 0.0;
        let mut den = 0.0;
        for &(_, j) in &batch.pairs {
            let iv = row(&params.item_table, j.index());
            let mut s = 0.0;
            for k in 0..d {
                s += uv[k] * iv[k];
            }
            den += s.exp();
            if j == i {
                num = s.exp();
            }
        }
        loss -= (num / den).ln();
    }
    loss
}

fn random_instance(rng: &mut ChaCha8Rng, max_d: usize, max_b: usize) -> (ModelParams, TrainBatch) {
    let d = rng.random_range(1..=max_d);
    let b = rng.random_range(1..=max_b);
    let nu = rng.random_range(1..=b + 2);
    let ni = rng.random_range(b..=b + 3);
    let mut params = ModelParams::init(nu, ni, d, 0.8, rng.random());
    // distinct items per batch so the naive oracle's "j == i" picks a single column
    let mut items: Vec<u32> = (0..ni as u32).collect();
    for k in 0..b {
        let j = rng.random_range(k..ni);
        items.swap(k, j);
    }
    let pairs = (0..b)
        .map(|k| (UserId(rng.random_range(0..nu as u32)), ItemId(items[k])))
        .collect();
    params.known_users = vec![true; nu];
    params.known_items = vec![true; ni];
    (params, TrainBatch::new(pairs).unwrap())
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

#[test]
fn loss_matches_naive_summation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let (params, batch) = random_instance(&mut rng, 8, 8);
        let got = batch_loss(&params, &batch).unwrap();
        let want = naive_loss(&params, &batch);
        assert!((got - want).abs() <= 1e-9 * want.abs().max(1.0), "{got} vs {want}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-6;
    for _ in 0..30 {
        let (params, batch) = random_instance(&mut rng, 8, 8);
        let g = batch_gradient(&params, &batch).unwrap();
        let d = params.dim;
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for (u, gu) in &g.users {
            for k in 0..d {
                let mut p = params.clone();
                p.user_mut(*u)[k] += h;
                let up = batch_loss(&p, &batch).unwrap();
                p.user_mut(*u)[k] -= 2.0 * h;
                let down = batch_loss(&p, &batch).unwrap();
                analytic.push(gu[k]);
                numeric.push((up - down) / (2.0 * h));
            }
        }
        for (i, gi) in &g.items {
            for k in 0..d {
                let mut p = params.clone();
                p.item_mut(*i)[k] += h;
                let up = batch_loss(&p, &batch).unwrap();
                p.item_mut(*i)[k] -= 2.0 * h;
                let down = batch_loss(&p, &batch).unwrap();
                analytic.push(gi[k]);
                numeric.push((up - down) / (2.0 * h));
            }
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-4, "relative error {e}");
    }
}

#[test]
fn duplicate_items_keep_both_columns() {
    let mut params = ModelParams::init(2, 1, 2, 0.5, 3);
    params.known_users = vec![true; 2];
    params.known_items = vec![true];
    let batch = TrainBatch::new(vec![(UserId(0), ItemId(0)), (UserId(1), ItemId(0))]).unwrap();
    // both columns are the same item: every probability is exactly 1/2
    let loss = batch_loss(&params, &batch).unwrap();
    assert!((loss - 2.0 * 2f64.ln()).abs() < 1e-12);
}

fn dropout_instance(rng: &mut ChaCha8Rng) -> (DropoutNetParams, ContentTable, TrainBatch, Vec<bool>) {
    let (model, batch) = random_instance(rng, 6, 6);
    let dc = rng.random_range(1..=4);
    let content = ContentTable {
        dim: dc,
        vectors: (0..model.num_items() * dc).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let mut p = DropoutNetParams::cf_projection(&model, dc, 0.5);
    // perturb the projection so some hidden units are inactive
    for w in p.w1.iter_mut().chain(p.w2.iter_mut()).chain(p.b1.iter_mut()).chain(p.b2.iter_mut()) {
        *w += rng.random_range(-0.5..0.5);
    }
    let mask = (0..batch.len()).map(|_| rng.random_bool(0.3)).collect();
    (p, content, batch, mask)
}

#[test]
fn dropoutnet_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let h = 1e-6;
    for _ in 0..25 {
        let (p, content, batch, mask) = dropout_instance(&mut rng);
        let g = p.batch_gradient(&batch, &content, &mask).unwrap();
        let loss = |q: &DropoutNetParams| q.batch_loss(&batch, &content, &mask).unwrap();
        let fd = |set: &dyn Fn(&mut DropoutNetParams, f64)| {
            let mut q = p.clone();
            set(&mut q, h);
            let up = loss(&q);
            let mut q = p.clone();
            set(&mut q, -h);
            (up - loss(&q)) / (2.0 * h)
        };
        let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
        for k in 0..p.w1.len() {
            analytic.push(g.w1[k]);
            numeric.push(fd(&|q, e| q.w1[k] += e));
        }
        for k in 0..p.b1.len() {
            analytic.push(g.b1[k]);
            numeric.push(fd(&|q, e| q.b1[k] += e));
        }
        for k in 0..p.w2.len() {
            analytic.push(g.w2[k]);
            numeric.push(fd(&|q, e| q.w2[k] += e));
        }
        for k in 0..p.b2.len() {
            analytic.push(g.b2[k]);
            numeric.push(fd(&|q, e| q.b2[k] += e));
        }
        let d = p.dim;
        for (i, gi) in &g.cf {
            for k in 0..d {
                analytic.push(gi[k]);
                numeric.push(fd(&|q, e| q.cf[i.index() * d + k] += e));
            }
        }
        for (u, gu) in &g.users {
            for k in 0..d {
                analytic.push(gu[k]);
                numeric.push(fd(&|q, e| q.users[u.index() * d + k] += e));
            }
        }
        let e = rel_err(&analytic, &numeric);
        assert!(e < 1e-4, "relative error {e}");
    }
}

#[test]
fn projection_init_reproduces_twotower_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..20 {
        let (model, batch) = random_instance(&mut rng, 8, 8);
        let content = ContentTable {
            dim: 3,
            vectors: (0..model.num_items() * 3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let p = DropoutNetParams::cf_projection(&model, 3, 0.0);
        let fused = p.batch_loss(&batch, &content, &vec![false; batch.len()]).unwrap();
        let plain = batch_loss(&model, &batch).unwrap();
        assert!((fused - plain).abs() < 1e-6, "{fused} vs {plain}");
    }
}

proptest! {
    #[test]
    fn probabilities_sum_to_one(row in proptest::collection::vec(-50.0f64..50.0, 1..10)) {
        // placing `row` at position c makes in_batch_probability return softmax(row)[c]
        let b = row.len();
        let total: f64 = (0..b)
            .map(|c| {
                let mut m = vec![vec![0.0; b]; b];
                m[c] = row.clone();
                in_batch_probability(&m, c)
            })
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn probability_is_shift_invariant(row in proptest::collection::vec(-20.0f64..20.0, 1..8), shift in -100.0f64..100.0, pick in 0usize..8) {
        let b = row.len();
        let r = pick % b;
        let mut m = vec![vec![0.0; b]; b];
        m[r] = row.clone();
        let p = in_batch_probability(&m, r);
        m[r] = row.iter().map(|s| s + shift).collect();
        let q = in_batch_probability(&m, r);
        prop_assert!((p - q).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&p));
    }

    #[test]
    fn score_matrix_is_pairwise_dot(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (params, batch) = random_instance(&mut rng, 8, 8);
        let s = score_matrix(&params, &batch).unwrap();
        for (r, &(u, _)) in batch.pairs.iter().enumerate() {
            for (c, &(_, i)) in batch.pairs.iter().enumerate() {
                let want: f64 = params.user(u).unwrap().iter().zip(params.item(i).unwrap()).map(|(a, b)| a * b).sum();
                prop_assert!((s[r][c] - want).abs() < 1e-12);
            }
        }
    }
}
