//! Upload vs download latency per record size.
//!
//! Upload = seal + store + anchor + mine; download = access check + fetch +
//! open. Medians, not means: mining time is heavy-tailed.

use std::collections::BTreeMap;
use std::fmt;
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, Context};
use medledger_core::ledger::init_deployment;
use medledger_core::policy::make_self_registration;
use medledger_core::{
    evaluate_access, Access, Action, Config, KeyPair, Ledger, PatientRecord, Role,
};
use rand::rngs::OsRng;
use rand::Rng;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Op {
    Upload,
    Download,
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Op::Upload => "upload",
            Op::Download => "download",
        })
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub records: usize,
    pub sizes: Vec<usize>,
    pub difficulty_bits: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub size_bytes: usize,
    pub op: Op,
    pub median_ms: f64,
    pub p95_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchReport {
    pub rows: Vec<Row>,
    /// Chain-log bytes appended per upload, by record size. Embedded mode only.
    pub log_growth: BTreeMap<usize, Vec<u64>>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("size_bytes,op,median_ms,p95_ms\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.3},{:.3}\n",
                r.size_bytes, r.op, r.median_ms, r.p95_ms
            ));
        }
        out
    }

    pub fn row(&self, size_bytes: usize, op: Op) -> Option<&Row> {
        self.rows
            .iter()
            .find(|r| r.size_bytes == size_bytes && r.op == op)
    }
}

/// `1024`, `1KB`, `64kb`, `1MB`. Binary units.
pub fn parse_size(s: &str) -> anyhow::Result<usize> {
    let t = s.trim().to_ascii_uppercase();
    let (digits, mult) = if let Some(d) = t.strip_suffix("MB") {
        (d, 1 << 20)
    } else if let Some(d) = t.strip_suffix("KB") {
        (d, 1 << 10)
    } else if let Some(d) = t.strip_suffix('B') {
        (d, 1)
    } else {
        (t.as_str(), 1)
    };
    let n: usize = digits
        .trim()
        .parse()
        .with_context(|| format!("bad size {s:?}"))?;
    Ok(n * mult)
}

pub fn parse_sizes(list: &str) -> anyhow::Result<Vec<usize>> {
    let sizes = list
        .split(',')
        .map(parse_size)
        .collect::<anyhow::Result<Vec<_>>>()?;
    if sizes.is_empty() {
        bail!("no sizes given");
    }
    Ok(sizes)
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty());
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    }
}

fn summarize(size_bytes: usize, op: Op, mut samples: Vec<Duration>) -> Row {
    samples.sort();
    let ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
    Row {
        size_bytes,
        op,
        median_ms: median(&ms),
        p95_ms: percentile(&ms, 95.0),
    }
}

fn record_of_size(username: &str, patient_id: u64, size: usize, seq: usize) -> PatientRecord {
    let mut record = PatientRecord::new(username, 40, "37.0", "12.5", patient_id).expect("valid");
    record.extra.insert("seq".into(), seq.to_string());
    record.extra.insert("payload".into(), "x".repeat(size));
    record
}

/// Runs against a throwaway deployment in a temp dir with `auto_mine` on.
pub fn run_embedded(opts: &BenchOptions) -> anyhow::Result<BenchReport> {
    let dir = tempfile::tempdir()?;
    let config: Config = init_deployment(dir.path(), opts.difficulty_bits)?;
    let ledger = Ledger::open(config)?;
    let patient = KeyPair::generate(&mut OsRng, Role::Patient, "bench-patient");
    let pid = 1;
    ledger.register(
        &patient.public_key(),
        Role::Patient,
        &patient.name,
        Some(pid),
    )?;
    let log_path = ledger.config().chain_log.clone();

    let mut report = BenchReport::default();
    for &size in &opts.sizes {
        let mut uploads = Vec::with_capacity(opts.records);
        let mut downloads = Vec::with_capacity(opts.records);
        let mut growth = Vec::with_capacity(opts.records);
        for seq in 0..opts.records {
            let record = record_of_size(&patient.name, pid, size, seq);
            let before = std::fs::metadata(&log_path)?.len();
            let t = Instant::now();
            let (addr, _) = ledger.submit_record(&record, patient.identity_id())?;
            uploads.push(t.elapsed());
            growth.push(std::fs::metadata(&log_path)?.len() - before);

            let t = Instant::now();
            let snapshot = ledger.snapshot();
            if evaluate_access(
                snapshot.state(),
                &patient.identity_id(),
                pid,
                Action::Read,
                ledger.now_ms(),
            ) != Access::Allow
            {
                bail!("owner read denied");
            }
            let fetched = ledger.fetch_record(pid, &addr)?;
            downloads.push(t.elapsed());
            if fetched != record {
                bail!("round trip mismatch at size {size}");
            }
        }
        report.rows.push(summarize(size, Op::Upload, uploads));
        report.rows.push(summarize(size, Op::Download, downloads));
        report.log_growth.insert(size, growth);
    }
    Ok(report)
}

struct Remote {
    http: reqwest::blocking::Client,
    base: String,
}

impl Remote {
    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base.trim_end_matches('/'), path)
    }

    fn send(&self, req: reqwest::blocking::RequestBuilder) -> anyhow::Result<Value> {
        let resp = req.send().map_err(|e| {
            if e.is_connect() || e.is_timeout() {
                anyhow!("ServiceUnreachable: {} ({e})", self.base)
            } else {
                anyhow!(e)
            }
        })?;
        let status = resp.status();
        let body: Value = resp.json().unwrap_or(Value::Null);
        if !status.is_success() {
            bail!("{status}: {body}");
        }
        Ok(body)
    }

    /// Registers a fresh patient and logs in. Needs `auto_mine` on server-side.
    fn enroll(&self) -> anyhow::Result<(u64, String, String)> {
        let pid: u64 = OsRng.gen_range(1 << 32..1 << 48);
        let name = format!("bench-{pid}");
        let key = KeyPair::generate(&mut OsRng, Role::Patient, name.clone());
        let tx = make_self_registration(&key, Some(pid), 0);
        let out = self.send(self.http.post(self.url("/api/register")).json(&tx))?;
        if out["mined"].is_null() {
            bail!("server has auto_mine off; remote bench needs it on");
        }
        let challenge = self.send(
            self.http
                .get(self.url(&format!("/api/challenge?username={name}"))),
        )?;
        let message = challenge["message"].as_str().context("challenge message")?;
        let signature = key.sign(message.as_bytes());
        let login = self.send(
            self.http
                .post(self.url("/api/login"))
                .json(&json!({"username": name, "signature": signature})),
        )?;
        let token = login["token"].as_str().context("token")?.to_string();
        Ok((pid, name, token))
    }
}

/// Runs against a live service. Each sample uses a fresh patient so the
/// download always returns exactly one record.
pub fn run_remote(base_url: &str, opts: &BenchOptions) -> anyhow::Result<BenchReport> {
    let remote = Remote {
        http: reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()?,
        base: base_url.to_string(),
    };
    remote.send(remote.http.get(remote.url("/api/health")))?;
    let mut report = BenchReport::default();
    for &size in &opts.sizes {
        let mut uploads = Vec::new();
        let mut downloads = Vec::new();
        for seq in 0..opts.records {
            let (pid, name, token) = remote.enroll()?;
            let record = record_of_size(&name, pid, size, seq);
            let t = Instant::now();
            remote.send(
                remote
                    .http
                    .post(remote.url("/api/records"))
                    .bearer_auth(&token)
                    .json(&record),
            )?;
            uploads.push(t.elapsed());
            let t = Instant::now();
            remote.send(
                remote
                    .http
                    .get(remote.url(&format!("/api/records/{pid}")))
                    .bearer_auth(&token),
            )?;
            downloads.push(t.elapsed());
        }
        report.rows.push(summarize(size, Op::Upload, uploads));
        report.rows.push(summarize(size, Op::Download, downloads));
    }
    Ok(report)
}
