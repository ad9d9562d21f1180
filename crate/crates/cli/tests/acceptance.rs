//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Runs without any web bundle.

#[path = "../../core/tests/support/access_oracle.rs"]
mod access_oracle;

use std::fs;
use std::process::{Command, ExitCode};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use medledger_core::chain::verify_blocks;
use medledger_core::ledger::{init_deployment, Clock};
use medledger_core::sim::{parse_scenario, SimEvent};
use medledger_core::testkit::{random_chain, Cast};
use medledger_core::vault::VaultError;
use medledger_core::{
    fork_choice, genesis_header, hash_bytes, mine_block, Block, BlockHeader, Canonical, Config,
    Digest, KeyPair, Ledger, LedgerError, PatientRecord, Role,
};
use medledger_service::{app, login_message};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};
use tower::ServiceExt;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(started: Instant, budget: Duration) -> Outcome {
    let took = started.elapsed();
    if took >= budget {
        return Err(format!("took {took:.2?}, budget {budget:?}"));
    }
    Ok(format!("{took:.2?}"))
}

// ---------------------------------------------------------------- tamper

fn tamper_detection() -> Outcome {
    let t = Instant::now();
    let cast = Cast::new(4, 2);
    // Genesis, a registration block (7 txs), then 48 blocks of 3.
    let chain = random_chain(&cast, 49, 3, 8, 2024);
    let blocks = chain.blocks();
    let n_tx: usize = blocks.iter().map(|b| b.transactions.len()).sum();
    ensure!(
        chain.len() == 50 && n_tx >= 150,
        "chain too small: {} blocks, {n_tx} txs",
        chain.len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let mutations: Vec<(usize, usize, u8)> = (0..1000)
        .map(|_| {
            let index = rng.gen_range(0..blocks.len());
            let len = blocks[index].to_canonical_bytes().len();
            (index, rng.gen_range(0..len), rng.gen_range(1..=255u8))
        })
        .collect();
    let missed: Vec<_> = mutations
        .par_iter()
        .filter(|&&(index, offset, xor)| {
            let mut bytes = blocks[index].to_canonical_bytes();
            bytes[offset] ^= xor;
            let mutated = Block::from_canonical_bytes(&bytes).ok();
            let entries = blocks.iter().enumerate().map(|(i, b)| {
                if i == index {
                    mutated.as_ref()
                } else {
                    Some(b)
                }
            });
            let report = verify_blocks(entries);
            let flagged = report
                .failures
                .iter()
                .any(|f| f.block_index == index as u64 || f.block_index == index as u64 + 1);
            report.ok || !flagged
        })
        .collect();
    ensure!(
        missed.is_empty(),
        "{} of 1000 mutations undetected, e.g. {:?}",
        missed.len(),
        missed[0]
    );
    Ok(format!(
        "1000/1000 detected, {} blocks, {n_tx} txs, {}",
        chain.len(),
        within(t, Duration::from_secs(10))?
    ))
}

// ---------------------------------------------------------------- pow

/// Header digest recomputed from the field layout, not the codec.
fn header_digest_by_hand(h: &BlockHeader) -> Digest {
    let mut buf = Vec::with_capacity(89);
    buf.extend_from_slice(&h.index.to_be_bytes());
    buf.extend_from_slice(h.prev_hash.as_bytes());
    buf.extend_from_slice(h.tx_root.as_bytes());
    buf.extend_from_slice(&h.timestamp_ms.to_be_bytes());
    buf.push(h.difficulty_bits);
    buf.extend_from_slice(&h.nonce.to_be_bytes());
    hash_bytes(&buf)
}

fn leading_zeros_by_hand(d: &Digest) -> u32 {
    let mut n = 0;
    for byte in d.as_bytes() {
        for bit in (0..8).rev() {
            if byte >> bit & 1 == 1 {
                return n;
            }
            n += 1;
        }
    }
    n
}

fn pow_statistics() -> Outcome {
    let t = Instant::now();
    let parent = genesis_header();
    let mut total = 0u64;
    for run in 0..50u64 {
        let mined = mine_block(&parent, vec![], 12, 1 + run, 0).map_err(|e| e.to_string())?;
        let d = header_digest_by_hand(&mined.block.header);
        ensure!(d == mined.block.digest(), "run {run}: digest mismatch");
        ensure!(
            leading_zeros_by_hand(&d) >= 12,
            "run {run}: {} lacks 12 zero bits",
            d.to_hex()
        );
        total += mined.attempts;
    }
    let mean = total as f64 / 50.0;
    ensure!(
        (1024.0..=16384.0).contains(&mean),
        "mean attempts {mean} outside [2^10, 2^14]"
    );
    Ok(format!(
        "mean attempts {mean:.0}, {}",
        within(t, Duration::from_secs(30))?
    ))
}

// ---------------------------------------------------------------- access

fn access_truth_table() -> Outcome {
    let cases = access_oracle::all_cases();
    ensure!(cases.len() <= 48, "{} cases", cases.len());
    for case in &cases {
        let got = access_oracle::evaluate(*case);
        let want = access_oracle::reference(*case);
        ensure!(got == want, "{case:?}: got {got:?}, want {want:?}");
    }
    Ok(format!("{} combinations match", cases.len()))
}

// ---------------------------------------------------------------- vault

fn fixed_clock() -> Clock {
    let t = Arc::new(AtomicU64::new(1_000));
    Arc::new(move || t.fetch_add(1, Ordering::SeqCst))
}

fn random_record(rng: &mut ChaCha8Rng, patient_id: u64) -> PatientRecord {
    let name_len = rng.gen_range(1..24);
    let username: String = (0..name_len)
        .map(|_| rng.gen_range(b'a'..=b'z') as char)
        .collect();
    let mut r = PatientRecord::new(
        &username,
        rng.gen_range(0..=120),
        &format!("{}.{}", rng.gen_range(34..43), rng.gen_range(0..10)),
        &format!("{}", rng.gen_range(0..2400) as f64 / 100.0),
        patient_id,
    )
    .expect("valid record");
    if rng.gen_bool(0.5) {
        let len = rng.gen_range(0..4096);
        let note: String = (0..len)
            .map(|_| rng.gen_range(b' '..=b'~') as char)
            .collect();
        r.extra.insert("note".into(), note);
    }
    r
}

fn vault_round_trip() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    init_deployment(dir.path(), 4).map_err(|e| e.to_string())?;
    let cfg = Config::load_default(dir.path()).map_err(|e| e.to_string())?;
    let ledger = Ledger::open_with_clock(cfg, fixed_clock()).map_err(|e| e.to_string())?;
    let patients: Vec<KeyPair> = (0..5)
        .map(|i| KeyPair::from_label(&format!("acc:p{i}"), Role::Patient, format!("p{i}")))
        .collect();
    for (i, p) in patients.iter().enumerate() {
        ledger
            .register(&p.public_key(), Role::Patient, &p.name, Some(i as u64 + 1))
            .map_err(|e| e.to_string())?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut stored = Vec::new();
    for _ in 0..200 {
        let pi = rng.gen_range(0..patients.len());
        let record = random_record(&mut rng, pi as u64 + 1);
        let (addr, out) = ledger
            .submit_record(&record, patients[pi].identity_id())
            .map_err(|e| e.to_string())?;
        ensure!(out.mined.is_some(), "anchor was not mined");
        stored.push((record, addr));
    }

    let snap = ledger.snapshot();
    for (record, addr) in &stored {
        let anchored = snap
            .state()
            .anchors
            .get(&record.patient_id)
            .into_iter()
            .flatten();
        ensure!(
            anchored.into_iter().any(|a| a.content_address == *addr),
            "no committed anchor for {addr:?}"
        );
        let back = ledger
            .fetch_record(record.patient_id, addr)
            .map_err(|e| e.to_string())?;
        ensure!(&back == record, "round trip changed record {addr:?}");
    }

    // One random single-byte mutation per stored blob, restored afterwards.
    let mut caught = 0;
    for (record, addr) in &stored {
        let path = ledger.vault().blob_path(addr);
        let original = fs::read(&path).map_err(|e| e.to_string())?;
        let mut bad = original.clone();
        let i = rng.gen_range(0..bad.len());
        bad[i] ^= rng.gen_range(1..=255u8);
        fs::write(&path, &bad).map_err(|e| e.to_string())?;
        match ledger.fetch_record(record.patient_id, addr) {
            Err(LedgerError::Vault(VaultError::CorruptBlob(_) | VaultError::AuthFailure)) => {
                caught += 1
            }
            other => return Err(format!("byte {i} of {addr:?}: {other:?}")),
        }
        fs::write(&path, &original).map_err(|e| e.to_string())?;
    }
    Ok(format!(
        "200 records round-tripped, {caught}/200 mutations rejected"
    ))
}

// ---------------------------------------------------------------- consensus

const PARTITION_SCENARIO: &str = "\
nodes 5
difficulty 8
seed 42
trials 64
latency 2
partition 0,1 2,3,4 from 0 to 150
tx 0 alice patient 1
node 0 mine
tx 2 bob provider
node 2 mine
at 40 tx 3 carol provider
at 40 node 3 mine
max_ticks 5000
";

fn consensus_convergence() -> Outcome {
    let run = || -> Result<(String, String), String> {
        let scenario = parse_scenario(PARTITION_SCENARIO).map_err(|e| e.to_string())?;
        let max_ticks = scenario.max_ticks;
        let mut w = scenario.into_world(None).map_err(|e| e.to_string())?;
        while w.tick() < 150 {
            w.step();
        }
        let left = w.nodes[0].chain.clone();
        let right = w.nodes[2].chain.clone();
        ensure!(
            left.tip_digest() != right.tip_digest(),
            "partition did not fork"
        );
        ensure!(
            w.nodes[1].chain == left && w.nodes[3].chain == right && w.nodes[4].chain == right,
            "sides disagree"
        );
        let winner = fork_choice(&[left.clone(), right.clone()])
            .map_err(|e| e.to_string())?
            .clone();
        let losers: &[usize] = if winner.tip_digest() == left.tip_digest() {
            &[2, 3, 4]
        } else {
            &[0, 1]
        };

        w.run_until_quiescent(max_ticks)
            .map_err(|e| e.to_string())?;
        ensure!(w.converged(), "not converged");
        for n in &w.nodes {
            ensure!(
                n.chain.tip_digest() == winner.tip_digest(),
                "node {} tip differs from fork_choice winner",
                n.node_id
            );
        }
        for &l in losers {
            ensure!(
                w.log()
                    .entries
                    .iter()
                    .any(|e| e.node_id == l && matches!(e.event, SimEvent::Reorged { .. })),
                "loser {l} did not log Reorged"
            );
        }
        Ok((
            w.log().to_csv(),
            format!("winner height {}, losers {losers:?}", winner.len() - 1),
        ))
    };
    let (first, detail) = run()?;
    let (second, _) = run()?;
    ensure!(first == second, "event logs differ between runs");
    Ok(format!("{detail}, identical {}-byte logs", first.len()))
}

// ---------------------------------------------------------------- service

struct Service {
    router: Router,
}

impl Service {
    async fn call(
        &self,
        method: Method,
        uri: &str,
        token: Option<&str>,
        body: Option<Value>,
    ) -> (StatusCode, Value) {
        let mut req = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            req = req.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string())),
            None => req.body(Body::empty()),
        }
        .unwrap();
        let resp = self.router.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
            .await
            .unwrap();
        (
            status,
            serde_json::from_slice(&bytes).unwrap_or(Value::Null),
        )
    }

    async fn login(&self, key: &KeyPair) -> Result<String, String> {
        let (_, c) = self
            .call(
                Method::GET,
                &format!("/api/challenge?username={}", key.name),
                None,
                None,
            )
            .await;
        let challenge = c["challenge"].as_str().ok_or(format!("challenge: {c}"))?;
        let sig = key.sign(login_message(&key.name, challenge).as_bytes());
        let (s, body) = self
            .call(
                Method::POST,
                "/api/login",
                None,
                Some(json!({"username": key.name, "signature": sig})),
            )
            .await;
        ensure!(s == StatusCode::OK, "login {s}: {body}");
        Ok(body["token"].as_str().unwrap_or_default().to_string())
    }
}

fn open_service(dir: &std::path::Path) -> Result<(Service, Arc<Ledger>), String> {
    let cfg = Config::load_default(dir).map_err(|e| e.to_string())?;
    let (router, ledger) = app(cfg, fixed_clock()).map_err(|e| e.to_string())?;
    Ok((Service { router }, ledger))
}

fn runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_all()
        .build()
        .unwrap()
}

fn restart_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    init_deployment(dir.path(), 6).map_err(|e| e.to_string())?;
    let patient = KeyPair::from_label("acc:restart:p", Role::Patient, "rina");
    let doctor = KeyPair::from_label("acc:restart:d", Role::Provider, "dr-osei");
    let before = runtime().block_on(async {
        let (svc, ledger) = open_service(dir.path())?;
        ledger
            .register(&patient.public_key(), Role::Patient, &patient.name, Some(7))
            .map_err(|e| e.to_string())?;
        ledger
            .register(&doctor.public_key(), Role::Provider, &doctor.name, None)
            .map_err(|e| e.to_string())?;
        let token = svc.login(&patient).await?;
        let record = json!({"username": "rina", "age": 33, "temperature": "36.9", "time": "8.15", "patient_id": 7});
        let (s, body) = svc.call(Method::POST, "/api/records", Some(&token), Some(record)).await;
        ensure!(s == StatusCode::OK, "record {s}: {body}");
        let grant = json!({"patient_id": 7, "grantee_id": doctor.identity_id().to_hex(), "scope": "read"});
        let (s, body) = svc.call(Method::POST, "/api/grants", Some(&token), Some(grant)).await;
        ensure!(s == StatusCode::OK, "grant {s}: {body}");
        let appt = json!({"patient_id": 7, "provider_id": doctor.identity_id().to_hex(), "slot_ms": 5_000_000, "note": "follow-up"});
        let (s, body) = svc.call(Method::POST, "/api/appointments", Some(&token), Some(appt)).await;
        ensure!(s == StatusCode::OK, "appointment {s}: {body}");
        Ok::<_, String>(ledger.state().dump())
    })?;
    let after = {
        let (_svc, ledger) = open_service(dir.path())?;
        ledger.state().dump()
    };
    ensure!(
        before.as_bytes() == after.as_bytes(),
        "state dump changed across restart"
    );
    Ok(format!(
        "{}-byte state dump identical after replay",
        before.len()
    ))
}

const EXPECTED_STATUS: &str = "Data Successfully stored into Block chain";

fn record_submission_flow() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    init_deployment(dir.path(), 8).map_err(|e| e.to_string())?;
    runtime().block_on(async {
        let (svc, ledger) = open_service(dir.path())?;
        let hanu = KeyPair::from_label("acc:hanu", Role::Patient, "hanu");
        ledger
            .register(&hanu.public_key(), Role::Patient, "hanu", Some(52))
            .map_err(|e| e.to_string())?;
        let token = svc.login(&hanu).await?;
        let submitted = json!({"username": "hanu", "age": 20, "temperature": 100, "time": 20.8, "patient_id": 52});
        let (s, body) = svc.call(Method::POST, "/api/records", Some(&token), Some(submitted)).await;
        ensure!(s == StatusCode::OK, "submit {s}: {body}");
        ensure!(body["status"] == EXPECTED_STATUS, "status was {}", body["status"]);

        let (s, list) = svc.call(Method::GET, "/api/records/52", Some(&token), None).await;
        ensure!(s == StatusCode::OK, "fetch {s}: {list}");
        let rec = &list["records"][0]["record"];
        let want = json!({"username": "hanu", "age": 20, "temperature": "100", "time": "20.8", "patient_id": 52});
        for field in ["username", "age", "temperature", "time", "patient_id"] {
            ensure!(rec[field] == want[field], "{field}: {} != {}", rec[field], want[field]);
        }
        Ok(format!("status {EXPECTED_STATUS:?}, owner read back patient 52"))
    })
}

// ---------------------------------------------------------------- bench

fn bench_comparison() -> Outcome {
    let t = Instant::now();
    let out_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let csv_path = out_dir.path().join("bench.csv");
    let output = Command::new(env!("CARGO_BIN_EXE_medledger"))
        .args([
            "bench",
            "--difficulty",
            "12",
            "--sizes",
            "1KB,64KB,1MB",
            "--records",
            "5",
            "--out",
        ])
        .arg(&csv_path)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        output.status.success(),
        "bench exited {}: {}",
        output.status,
        String::from_utf8_lossy(&output.stderr)
    );
    let csv = fs::read_to_string(&csv_path).map_err(|e| e.to_string())?;
    ensure!(
        csv == String::from_utf8_lossy(&output.stdout),
        "stdout and --out CSV differ"
    );
    let mut lines = csv.lines();
    ensure!(
        lines.next() == Some("size_bytes,op,median_ms,p95_ms"),
        "bad CSV header"
    );
    let rows: Vec<(usize, String, f64)> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (
                f[0].parse().unwrap(),
                f[1].to_string(),
                f[2].parse().unwrap(),
            )
        })
        .collect();
    let mut detail = Vec::new();
    for size in [1024usize, 65536, 1 << 20] {
        let median = |op: &str| rows.iter().find(|r| r.0 == size && r.1 == op).map(|r| r.2);
        let (Some(up), Some(down)) = (median("upload"), median("download")) else {
            return Err(format!("missing rows for size {size}"));
        };
        ensure!(
            up > down,
            "size {size}: upload {up} ms <= download {down} ms"
        );
        detail.push(format!("{size}B {up:.1}>{down:.1}ms"));
    }
    Ok(format!(
        "{}, {}",
        detail.join(", "),
        within(t, Duration::from_secs(120))?
    ))
}

type Check = (&'static str, fn() -> Outcome);

fn main() -> ExitCode {
    let criteria: [Check; 8] = [
        ("tamper-detection", tamper_detection),
        ("pow-statistics", pow_statistics),
        ("access-truth-table", access_truth_table),
        ("vault-round-trip", vault_round_trip),
        ("consensus-convergence", consensus_convergence),
        ("restart-determinism", restart_determinism),
        ("record-submission-flow", record_submission_flow),
        ("bench-upload-vs-download", bench_comparison),
    ];
    // `cargo test --test acceptance -- <substring>` runs a subset.
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let selected: Vec<_> = criteria
        .into_iter()
        .filter(|(name, _)| filter.is_empty() || filter.iter().any(|f| name.contains(f.as_str())))
        .collect();
    let mut failed = 0;
    for &(name, check) in &selected {
        match std::panic::catch_unwind(check) {
            Ok(Ok(detail)) => println!("PASS {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
            Err(_) => {
                failed += 1;
                println!("FAIL {name}: panicked");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        selected.len() - failed,
        selected.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
