//! The HTTP service over a real socket.

mod common;

use common::{app_state, fixture_world, latent_index, read_after_write_case, spawn, DAY};
use serde_json::json;
use socripple::ripple::{Retrieved, Source};
use socripple_cli::service::Stats;

const NOW: i64 = 3 * DAY + 6 * 3600;

async fn stats(client: &reqwest::Client, base: &str) -> Stats {
    client.get(format!("{base}/stats")).send().await.unwrap().json().await.unwrap()
}

async fn retrieve(client: &reqwest::Client, base: &str, user: u32, now: i64) -> Vec<Retrieved> {
    let resp = client
        .get(format!("{base}/retrieve/{user}?now={now}&n=100000"))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    resp.json().await.unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn liked_item_reaches_knn_neighbour_through_stage2() {
    let w = fixture_world(1);
    let index = latent_index(&w);
    let client = reqwest::Client::new();
    for case in 0..5 {
        let (user, neighbour, item) = read_after_write_case(&w, &index, NOW, case);
        let base = spawn(app_state(&w, NOW)).await;
        let before = retrieve(&client, &base, user.0, NOW).await;
        assert!(before.iter().all(|r| r.item != item));
        let resp = client
            .post(format!("{base}/event"))
            .json(&json!({ "user": neighbour.0, "item": item.0, "ts": NOW - 1, "signal": "like" }))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 200);
        let after = retrieve(&client, &base, user.0, NOW).await;
        let hit = after.iter().find(|r| r.item == item).expect("liked item visible");
        assert_eq!(hit.source, Source::Stage2);
        assert!(hit.score.is_some());
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_writers_are_all_counted() {
    let w = fixture_world(2);
    let base = spawn(app_state(&w, NOW)).await;
    let client = reqwest::Client::new();
    let start = stats(&client, &base).await;

    // 100 fresh (user, item) likes on items created before NOW
    let mut shown = std::collections::HashSet::new();
    for e in w.events.iter().filter(|e| e.at < NOW) {
        shown.insert((e.user, e.item));
    }
    let items: Vec<_> = w.catalog.items().iter().filter(|m| m.created_at < NOW - 10).collect();
    let mut events = Vec::new();
    'outer: for u in 0..w.config.num_users as u32 {
        for m in &items {
            let user = socripple::UserId(u);
            if m.creator != user && !shown.contains(&(user, m.item)) {
                events.push(json!({ "user": u, "item": m.item.0, "ts": NOW - 10, "signal": "like" }));
                if events.len() == 100 {
                    break 'outer;
                }
                break;
            }
        }
    }
    assert_eq!(events.len(), 100);
    let tasks: Vec<_> = events
        .into_iter()
        .map(|body| {
            let client = client.clone();
            let url = format!("{base}/event");
            tokio::spawn(async move { client.post(url).json(&body).send().await.unwrap().status() })
        })
        .collect();
    for t in tasks {
        assert_eq!(t.await.unwrap(), 200);
    }
    let end = stats(&client, &base).await;
    assert_eq!(end.buffer_entries, start.buffer_entries + 100);
    assert_eq!(end.impressions, start.impressions + 100);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn bad_requests_are_rejected() {
    let w = fixture_world(3);
    let base = spawn(app_state(&w, NOW)).await;
    let client = reqwest::Client::new();
    let start = stats(&client, &base).await;

    let resp = client.get(format!("{base}/retrieve/999999?now={NOW}")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let resp = client.get(format!("{base}/retrieve/1")).send().await.unwrap();
    assert_eq!(resp.status(), 400, "now is required");

    let item = w.catalog.items()[0];
    let bodies = [
        "not json".to_string(),
        json!({ "user": 1, "item": item.item.0, "ts": NOW, "signal": "love" }).to_string(),
        json!({ "user": 1, "item": 999999, "ts": NOW, "signal": "like" }).to_string(),
        json!({ "user": 999999, "item": item.item.0, "ts": NOW, "signal": "like" }).to_string(),
        json!({ "user": 1, "item": item.item.0, "ts": item.created_at - 1, "signal": "like" }).to_string(),
        json!({ "user": 1, "item": item.item.0 }).to_string(),
    ];
    for body in bodies {
        let resp = client
            .post(format!("{base}/event"))
            .header("content-type", "application/json")
            .body(body.clone())
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 400, "{body}");
    }
    assert_eq!(stats(&client, &base).await, start, "rejected events leave no trace");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn non_positive_events_mark_impressions_only() {
    let w = fixture_world(4);
    let index = latent_index(&w);
    let (user, neighbour, item) = read_after_write_case(&w, &index, NOW, 0);
    let base = spawn(app_state(&w, NOW)).await;
    let client = reqwest::Client::new();
    let start = stats(&client, &base).await;
    let resp = client
        .post(format!("{base}/event"))
        .json(&json!({ "user": neighbour.0, "item": item.0, "ts": NOW - 1, "signal": "skip" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 200);
    let end = stats(&client, &base).await;
    assert_eq!(end.buffer_entries, start.buffer_entries);
    assert_eq!(end.impressions, start.impressions + 1);
    assert!(retrieve(&client, &base, user.0, NOW).await.iter().all(|r| r.item != item));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn reload_swaps_the_index() {
    let w = fixture_world(5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.json");
    latent_index(&w).save(&path).unwrap();
    let base = spawn(app_state(&w, NOW).with_index_path(path.clone())).await;
    let client = reqwest::Client::new();
    let resp = client.post(format!("{base}/reload")).send().await.unwrap();
    assert_eq!(resp.status(), 200);
    assert_eq!(stats(&client, &base).await.indexed_users, w.config.num_users);

    std::fs::write(&path, b"{ truncated").unwrap();
    let resp = client.post(format!("{base}/reload")).send().await.unwrap();
    assert_eq!(resp.status(), 500);
    assert_eq!(stats(&client, &base).await.indexed_users, w.config.num_users, "old index kept");
}
