//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use bhs_core::cluster::ElectionAudit;
use bhs_core::metrics::{oracle_replay, TIMEOUT_RELAY};
use bhs_core::trust::TrustError;
use bhs_core::{
    run, EventLogRecord, FaultTolerance, LogKind, NodeId, ScenarioConfig, SimOutcome, Threshold, TrustTable,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

/// Reference trust factors at x = 0.95 with their relative tolerances.
const REFERENCE: [(u32, f64, f64); 15] = [
    (1, 95.0, 1e-6),
    (10, 59.87369392, 1e-6),
    (20, 35.84859224, 1e-6),
    (30, 21.46387639, 1e-6),
    (40, 12.85121566, 1e-6),
    (50, 7.694497528, 1e-6),
    (60, 4.606979899, 1e-6),
    (70, 2.758369044, 1e-6),
    (80, 1.651537439, 1e-6),
    (90, 0.988836471, 1e-6),
    (100, 0.592052922, 1e-6),
    (200, 0.003505267, 1e-6),
    (300, 2.0753e-05, 1e-4),
    (500, 7.27449e-10, 1e-4),
    (1000, 5.29182e-21, 1e-4),
];

fn scenario(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::from_toml_str(&fs::read_to_string(scenario(name)).unwrap()).unwrap()
}

fn bhs(args: &[&str]) -> Result<Output, String> {
    let o = Command::new(env!("CARGO_BIN_EXE_bhs"))
        .args(args)
        .env_remove("BHS_OUT")
        .output()
        .map_err(|e| format!("cannot start bhs: {e}"))?;
    if !o.status.success() {
        return Err(format!("bhs {args:?} failed: {}", String::from_utf8_lossy(&o.stderr)));
    }
    Ok(o)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

/// Smallest n with 100 * x^n <= ttf, by repeated multiplication.
fn brute_force_crossing(x: f64, ttf: f64) -> u32 {
    let mut tf = 100.0;
    let mut n = 0;
    while tf > ttf {
        tf *= x;
        n += 1;
    }
    n
}

fn parse_tf_csv(text: &str) -> Result<Vec<(u32, f64)>, String> {
    let mut lines = text.lines();
    ensure(lines.next() == Some("n,tf"), || "missing n,tf header".into())?;
    lines
        .map(|l| {
            let (n, tf) = l.split_once(',').ok_or_else(|| format!("bad row {l}"))?;
            Ok((
                n.parse().map_err(|_| format!("bad n {n}"))?,
                tf.parse().map_err(|_| format!("bad tf {tf}"))?,
            ))
        })
        .collect()
}

fn check_reference(rows: &BTreeMap<u32, f64>) -> Result<(), String> {
    for &(n, want, tol) in &REFERENCE {
        let got = *rows.get(&n).ok_or_else(|| format!("row n={n} missing"))?;
        let rel = ((got - want) / want).abs();
        ensure(rel <= tol, || {
            format!("n={n}: got {got}, reference {want}, rel err {rel:e} > {tol:e}")
        })?;
    }
    Ok(())
}

fn c1_table() -> Check {
    let start = Instant::now();
    let ns: Vec<String> = REFERENCE.iter().map(|r| r.0.to_string()).collect();
    let o = bhs(&["table", "--x", "0.95", "--n", &ns.join(",")])?;
    let rows = parse_tf_csv(&String::from_utf8_lossy(&o.stdout))?;
    ensure(rows.len() == REFERENCE.len(), || format!("{} rows", rows.len()))?;
    check_reference(&rows.into_iter().collect())?;
    let took = within(Duration::from_secs(1), start)?;
    Ok(format!("15 rows within tolerance in {took:?}"))
}

fn c2_curve() -> Check {
    let o = bhs(&["curve", "--x", "0.95", "--n-max", "100"])?;
    let rows = parse_tf_csv(&String::from_utf8_lossy(&o.stdout))?;
    ensure(rows.len() == 101, || format!("{} rows", rows.len()))?;
    ensure(rows.iter().enumerate().all(|(i, r)| r.0 == i as u32), || {
        "n column is not 0..=100".into()
    })?;
    ensure(rows[0].1 == 100.0, || "row 0 is not 100".into())?;
    for w in rows.windows(2) {
        ensure(w[1].1 < w[0].1, || format!("not strictly decreasing at n={}", w[1].0))?;
    }
    let map: BTreeMap<u32, f64> = rows.into_iter().collect();
    for &(n, want, tol) in REFERENCE.iter().filter(|r| r.0 <= 100) {
        let rel = ((map[&n] - want) / want).abs();
        ensure(rel <= tol, || format!("n={n}: got {}, reference {want}", map[&n]))?;
    }
    Ok("101 rows, strictly decreasing, matches the table".into())
}

/// ForwardTimerExpiry records charged to `node` before its broadcast.
fn timeouts_before_broadcast(log: &str, node: &str) -> (usize, bool) {
    let mut n = 0;
    for line in log.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() < 5 || f[2] != node {
            continue;
        }
        match f[1] {
            "ForwardTimerExpiry" if f[4] == TIMEOUT_RELAY => n += 1,
            "MaliciousBroadcast" => return (n, true),
            _ => {}
        }
    }
    (n, false)
}

fn c3_detection(dir: &Path) -> Check {
    let want = brute_force_crossing(0.95, 10.0) as usize;
    ensure(want == 45, || format!("brute-force crossing is {want}"))?;
    let start = Instant::now();
    bhs(&["run", "--config", p(&scenario("blackhole5.toml")), "--out", p(dir)])?;
    let took = within(Duration::from_secs(5), start)?;
    let log = fs::read_to_string(dir.join("events.log")).map_err(|e| e.to_string())?;
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("report.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let (timeouts, broadcast) = timeouts_before_broadcast(&log, "M");
    ensure(broadcast, || "M never broadcast as malicious".into())?;
    ensure(timeouts == want, || {
        format!("{timeouts} timeouts attributed to M before detection")
    })?;
    ensure(report["drops_before_detection"]["M"] == want as u64, || {
        format!(
            "report drops_before_detection.M = {}",
            report["drops_before_detection"]["M"]
        )
    })?;
    ensure(report["packets_delivered"] == 100, || {
        format!("delivered {}", report["packets_delivered"])
    })?;
    ensure(report["false_positives"] == 0, || {
        format!("false positives {}", report["false_positives"])
    })?;
    Ok(format!(
        "45 timeouts before detection, 100/100 delivered, 0 false positives in {took:?}"
    ))
}

/// Streak-only oracle for an on-off pattern: does `drop_run` drops then
/// one forward, repeated, ever cross the threshold?
fn on_off_oracle(drop_run: u32, cycles: u32) -> bool {
    let x = FaultTolerance::new(0.95).unwrap();
    let ttf = Threshold::new(10.0).unwrap();
    let id = NodeId::from("M");
    let mut t = TrustTable::with_nodes(x, ttf, [id.clone()]).unwrap();
    for _ in 0..cycles {
        for _ in 0..drop_run {
            if t.record_drop(&id).unwrap().is_malicious() {
                return true;
            }
        }
        t.record_forward(&id).unwrap();
    }
    false
}

fn on_off_config(d: u32) -> ScenarioConfig {
    let text = fs::read_to_string(scenario("blackhole5.toml"))
        .unwrap()
        .replace(
            "M = { kind = \"black_hole\" }",
            &format!("M = {{ kind = \"on_off\", drop_run = {d}, forward_run = 1, advertise_false_route = true }}"),
        )
        .replace("interval = 1", "interval = 50");
    ScenarioConfig::from_toml_str(&text).unwrap()
}

fn c4_on_off(runs: &mut Vec<SimOutcome>) -> Check {
    let start = Instant::now();
    for d in 1..=60 {
        let out = run(&on_off_config(d)).map_err(|e| format!("d={d}: {e}"))?;
        let detected = out.report.detection_time.contains_key(&NodeId::from("M"));
        let expected = on_off_oracle(d, 10);
        ensure(expected == (d >= 45), || format!("oracle says {expected} at d={d}"))?;
        ensure(detected == expected, || {
            format!("d={d}: simulation detected={detected}, oracle {expected}")
        })?;
        ensure(out.report.false_positives == 0, || format!("d={d}: false positive"))?;
        runs.push(out);
    }
    let took = within(Duration::from_secs(10), start)?;
    Ok(format!("d in 1..=60 detected exactly when d >= 45 in {took:?}"))
}

fn c5_oracle() -> Check {
    let start = Instant::now();
    let x = FaultTolerance::new(0.95).unwrap();
    let ttf = Threshold::new(10.0).unwrap();
    let ids: Vec<NodeId> = (0..5).map(|i| NodeId::new(format!("n{i}"))).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut detections = 0;
    for case in 0..1000 {
        let len = rng.gen_range(0..=200);
        // Half the cases drop almost always so detections are common.
        let p_drop = if case % 2 == 0 {
            rng.gen_range(0.97..1.0)
        } else {
            rng.gen_range(0.0..1.0)
        };
        let mut table = TrustTable::with_nodes(x, ttf, ids.iter().cloned()).unwrap();
        let mut log = Vec::new();
        for t in 0..len {
            let id = &ids[rng.gen_range(0..ids.len())];
            let dropped = rng.gen_bool(p_drop);
            let res = if dropped {
                table.record_drop(id).map(|_| ())
            } else {
                table.record_forward(id).map(|_| ())
            };
            match res {
                Ok(()) => log.push(EventLogRecord {
                    time: t,
                    kind: if dropped {
                        LogKind::ForwardTimerExpiry
                    } else {
                        LogKind::Overhear
                    },
                    subject: Some(id.clone()),
                    seq: Some(t),
                    detail: if dropped {
                        TIMEOUT_RELAY.into()
                    } else {
                        "forward to=n0".into()
                    },
                }),
                Err(TrustError::AlreadyDetected(_)) => {}
                Err(e) => return Err(format!("case {case}: {e}")),
            }
        }
        let replay = oracle_replay(&log, x, ttf);
        for e in table.entries() {
            let o = replay.state(&e.node_id);
            ensure(
                o.streak == e.streak && o.tf.to_bits() == e.tf.to_bits() && o.detected == table.is_detected(&e.node_id),
                || {
                    format!(
                        "case {case}, node {}: engine ({}, {}) oracle ({}, {})",
                        e.node_id, e.streak, e.tf, o.streak, o.tf
                    )
                },
            )?;
        }
        detections += table.detected().len();
    }
    let took = within(Duration::from_secs(5), start)?;
    Ok(format!(
        "1000 sequences agree exactly ({detections} detections) in {took:?}"
    ))
}

fn c6_determinism(base: &Path) -> Check {
    let cfg = scenario("blackhole5.toml");
    let mut outs = Vec::new();
    for k in 0..2 {
        let dir = base.join(format!("run{k}"));
        bhs(&["run", "--config", p(&cfg), "--out", p(&dir)])?;
        outs.push(dir);
    }
    for f in ["events.log", "report.json"] {
        let a = fs::read(outs[0].join(f)).map_err(|e| e.to_string())?;
        let b = fs::read(outs[1].join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between runs"))?;
    }
    let mut csvs = Vec::new();
    for k in 0..2 {
        let dir = base.join(format!("sweep{k}"));
        bhs(&[
            "sweep",
            "--config",
            p(&cfg),
            "--grid",
            p(&scenario("sweep.toml")),
            "--seed",
            "1,2,3",
            "--out",
            p(&dir),
        ])?;
        csvs.push(fs::read_to_string(dir.join("sweep.csv")).map_err(|e| e.to_string())?);
    }
    ensure(csvs[0] == csvs[1], || "sweep CSV differs between executions".into())?;
    let header: Vec<&str> = csvs[0].lines().next().unwrap_or_default().split(',').collect();
    let col = header
        .iter()
        .position(|h| *h == "drops_before_detection.M")
        .ok_or("no drops_before_detection.M column")?;
    for line in csvs[0].lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let want = match f[0] {
            "0.9" => brute_force_crossing(0.90, 10.0),
            "0.95" => brute_force_crossing(0.95, 10.0),
            other => return Err(format!("unexpected x {other}")),
        };
        ensure(f[col] == want.to_string(), || {
            format!("row {line}: expected {want} drops")
        })?;
    }
    Ok("run and sweep outputs byte-identical; sweep gives 22 at x=0.90 and 45 at x=0.95".into())
}

fn c7_false_positives(runs: &mut Vec<SimOutcome>) -> Check {
    let cfg = load("honest10_lossy.toml");
    ensure(cfg.channel_loss_p == 0.05, || "scenario loss rate changed".into())?;
    ensure(cfg.behaviors.values().all(|b| !b.is_attacker()), || {
        "scenario has attackers".into()
    })?;
    let start = Instant::now();
    let out = run(&cfg).map_err(|e| e.to_string())?;
    let took = within(Duration::from_secs(60), start)?;
    let hops = out.log.iter().filter(|r| r.kind == LogKind::PacketSend).count();
    let losses = out.log.iter().filter(|r| r.kind == LogKind::ChannelLoss).count();
    let broadcasts = out.log.iter().filter(|r| r.kind == LogKind::MaliciousBroadcast).count();
    ensure(hops >= 100_000, || format!("only {hops} data hops"))?;
    ensure(broadcasts == 0, || format!("{broadcasts} malicious broadcasts"))?;
    runs.push(out);
    Ok(format!(
        "{hops} data hops, {losses} channel losses, 0 malicious broadcasts in {took:?}"
    ))
}

/// Independent check of one election against its candidate snapshot and
/// against the detections already broadcast in the log.
fn election_ok(a: &ElectionAudit, detected_by_then: &BTreeSet<NodeId>) -> Result<(), String> {
    let head = &a.result.head;
    ensure(!detected_by_then.contains(head), || {
        format!("detected node {head} elected")
    })?;
    ensure(detected_by_then.is_subset(&a.excluded), || {
        format!("election at t={} ignored a detection", a.result.elected_at)
    })?;
    let eligible: Vec<_> = a
        .candidates
        .iter()
        .filter(|c| !a.excluded.contains(&c.node_id))
        .collect();
    let best = eligible.iter().map(|c| c.energy).fold(f64::NEG_INFINITY, f64::max);
    let expected = eligible
        .iter()
        .filter(|c| c.energy == best)
        .map(|c| &c.node_id)
        .min()
        .ok_or("no eligible candidates")?;
    ensure(head == expected, || {
        format!("t={}: elected {head}, expected {expected}", a.result.elected_at)
    })
}

fn c8_elections(runs: &[SimOutcome]) -> Check {
    let mut count = 0;
    for out in runs {
        let mut detected = BTreeSet::new();
        let mut audits = out.elections.iter();
        for r in &out.log {
            match r.kind {
                LogKind::MaliciousBroadcast => {
                    detected.insert(r.subject.clone().ok_or("broadcast without subject")?);
                }
                LogKind::Election => {
                    let a = audits.next().ok_or("more Election records than audits")?;
                    ensure(r.subject.as_ref() == Some(&a.result.head), || {
                        "log and audit disagree".into()
                    })?;
                    election_ok(a, &detected)?;
                    count += 1;
                }
                _ => {}
            }
        }
        ensure(audits.next().is_none(), || "audit without Election record".into())?;
    }
    ensure(count > 0, || "no elections checked".into())?;
    Ok(format!("{count} elections across {} runs hold", runs.len()))
}

fn c9_exhaustive() -> Check {
    let start = Instant::now();
    let x = FaultTolerance::new(0.5).unwrap();
    let ttf = Threshold::new(25.0).unwrap();
    let id = NodeId::from("n");
    let mut strings = 0;
    for len in 0..=12u32 {
        for bits in 0..(1u32 << len) {
            let mut table = TrustTable::with_nodes(x, ttf, [id.clone()]).unwrap();
            let mut log = Vec::new();
            let mut text = String::new();
            for i in 0..len {
                let dropped = bits >> i & 1 == 1;
                text.push(if dropped { 'D' } else { 'F' });
                if table.is_detected(&id) {
                    continue;
                }
                let t = u64::from(i);
                if dropped {
                    table.record_drop(&id).unwrap();
                    log.push(EventLogRecord {
                        time: t,
                        kind: LogKind::ForwardTimerExpiry,
                        subject: Some(id.clone()),
                        seq: None,
                        detail: TIMEOUT_RELAY.into(),
                    });
                } else {
                    table.record_forward(&id).unwrap();
                    log.push(EventLogRecord {
                        time: t,
                        kind: LogKind::Overhear,
                        subject: Some(id.clone()),
                        seq: None,
                        detail: "forward to=n".into(),
                    });
                }
            }
            let oracle = oracle_replay(&log, x, ttf).state(&id).detected;
            let rule = text.contains("DD");
            ensure(oracle == rule && table.is_detected(&id) == rule, || {
                format!(
                    "{text}: engine {}, oracle {oracle}, rule {rule}",
                    table.is_detected(&id)
                )
            })?;
            strings += 1;
        }
    }
    let took = within(Duration::from_secs(1), start)?;
    Ok(format!("{strings} strings (4096 of length 12) agree in {took:?}"))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut election_runs = Vec::new();

    let mut results: Vec<(&str, Check)> = Vec::new();
    results.push(("1 table reproduction", c1_table()));
    results.push(("2 trust curve", c2_curve()));
    results.push(("3 detection exactness", c3_detection(&tmp.path().join("c3"))));
    if let Ok(out) = run(&load("blackhole5.toml")) {
        election_runs.push(out);
    }
    results.push(("4 on-off boundary", c4_on_off(&mut election_runs)));
    results.push(("5 oracle equivalence", c5_oracle()));
    results.push(("6 determinism", c6_determinism(&tmp.path().join("c6"))));
    for x in [0.90, 0.95] {
        let mut cfg = load("blackhole5.toml");
        cfg.x = x;
        if let Ok(out) = run(&cfg) {
            election_runs.push(out);
        }
    }
    results.push(("7 false-positive robustness", c7_false_positives(&mut election_runs)));
    results.push(("8 election invariant", c8_elections(&election_runs)));
    results.push(("9 exhaustive order sensitivity", c9_exhaustive()));

    let mut failed = 0;
    for (name, r) in &results {
        match r {
            Ok(msg) => println!("PASS  criterion {name}: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name}: {msg}");
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
