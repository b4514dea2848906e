use chaos_core::config::{ActionConfig, ActionKind, Mode};
use chaos_core::experiment::*;
use chaos_core::scanner::information_disclosure;

fn distance_run(mode: Mode, attacker: &str, seed: u64) -> (f64, u64) {
    let mut sc = fig2_scenario();
    sc.mode = mode;
    sc.seed = seed;
    sc.workload.attacker = attacker.to_string();
    sc.workload.scan_repeats = 1;
    sc.workload.actions = vec![
        ActionConfig { kind: ActionKind::PingSweep, at_tick: 1, from: None, target: Some("db-1".into()), ports: None, transport: None, vuln_id: None, count: None },
        ActionConfig { kind: ActionKind::PortScan, at_tick: 5, from: None, target: Some("db-1".into()), ports: None, transport: None, vuln_id: None, count: None },
        ActionConfig { kind: ActionKind::FingerprintSweep, at_tick: 0, from: None, target: None, ports: None, transport: None, vuln_id: None, count: None },
    ];
    let (out, baseline) = run_with_baseline(&sc).unwrap();
    let idp = information_disclosure(&out.report, &out.truth, &baseline.report).unwrap();
    let mut facts = out.report.clone();
    (idp, facts.count_true_facts(&out.truth))
}

fn main() {
    // distance 1: file-1 (layer 2), distance 2: ws-1 (layer 1), distance 3: guest-1 (layer 0)
    for seed in 1..=10u64 {
        let mut line = format!("seed={seed}");
        for (d, attacker) in [(1, "file-1"), (2, "ws-1"), (3, "guest-1")] {
            let (idp, facts) = distance_run(Mode::Chaos, attacker, seed);
            line.push_str(&format!(" d{d}: idp={idp:.4}/facts={facts}"));
        }
        for (d, attacker) in [(1, "file-1"), (2, "ws-1"), (3, "guest-1")] {
            let (idp, _) = distance_run(Mode::StaticMtd, attacker, seed);
            line.push_str(&format!(" mtd{d}={idp:.4}"));
        }
        println!("{line}");
    }
}
