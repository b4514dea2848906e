//! Experiment orchestration: reference scenarios, workload execution per
//! protection mode, and metric export with byte-stable output.

use crate::addr::Address;
use crate::config::{
    ActionConfig, ActionKind, HostConfig, Mode, Scenario, ServiceConfig, TopologyConfig,
    VulnConfig, WhitelistConfig, WorkloadConfig,
};
use crate::controller::{ChaosController, ModeController, StaticMtdController, UnprotectedController};
use crate::netsim::{PacketBuilder, Simulation, TransportKind};
use crate::scanner::{
    information_disclosure, overhead_metrics, AttackHarness, ExploitOutcome, GroundTruth,
    OverheadMetrics, ScanReport,
};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("layer count must be >= 1 (and <= 30), got {0}")]
    InvalidLayerCount(u32),
    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),
    #[error(transparent)]
    Tower(#[from] crate::tower::TowerError),
    #[error(transparent)]
    Sim(#[from] crate::netsim::SimError),
    #[error("unknown reference scenario {0}")]
    UnknownScenario(String),
}

/// Closed-form obfuscation load for a balanced binary arrangement of
/// workgroups with `layers` levels, under an all-pairs request workload:
/// nothing for the unprotected network, every ordered pair for the
/// indiscriminate baseline, and only the upward pairs here.
pub fn predicted_obfuscation_load(layers: u32) -> Result<(u64, u64, u64), ExperimentError> {
    if layers < 1 || layers > 30 {
        return Err(ExperimentError::InvalidLayerCount(layers));
    }
    let n = (1u64 << layers) - 1;
    let c_mtd = n * (n - 1);
    let mut c_chaos = 0u64;
    for i in 1..layers as u64 {
        let g = 1u64 << i;
        c_chaos += g * (g - 1);
    }
    Ok((0, c_mtd, c_chaos))
}

/// One output row of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub mode: Mode,
    pub seed: u64,
    pub scans: u32,
    pub idp: Option<f64>,
    pub controller_ops: u64,
    pub obfuscated_connections: u64,
    pub mean_delay_ticks: f64,
    pub exploit_success: u64,
    pub exploit_decoy: u64,
    pub exploit_dropped: u64,
    pub exploit_not_vulnerable: u64,
}

pub const METRICS_HEADER: &str = "mode,seed,scans,idp,controller_ops,obfuscated_connections,mean_delay_ticks,exploit_success,exploit_decoy,exploit_dropped,exploit_not_vulnerable";

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.4},{},{},{},{}",
            self.mode.as_str(),
            self.seed,
            self.scans,
            self.idp.map(|v| format!("{v:.6}")).unwrap_or_default(),
            self.controller_ops,
            self.obfuscated_connections,
            self.mean_delay_ticks,
            self.exploit_success,
            self.exploit_decoy,
            self.exploit_dropped,
            self.exploit_not_vulnerable,
        )
    }
}

/// Everything a finished run produced.
pub struct RunOutput {
    pub row: MetricsRow,
    pub report: ScanReport,
    pub truth: GroundTruth,
    pub overhead: OverheadMetrics,
    pub exploit_outcomes: Vec<(String, String, ExploitOutcome)>,
    pub decoy_alerts: u64,
    pub decision_trace: String,
    pub event_trace: String,
    /// Per expected-traffic flow: (payload tag, delivered intact, receiver
    /// saw the real source, sender got the acknowledgement back).
    pub expected_flow_checks: Vec<(String, bool, bool, bool)>,
}

impl RunOutput {
    pub fn metrics_csv(&self) -> String {
        format!("{METRICS_HEADER}\n{}\n", self.row.to_csv())
    }
}

fn make_controller(scenario: &Scenario) -> Result<Box<dyn ModeController>, ExperimentError> {
    Ok(match scenario.mode {
        Mode::Unprotected => Box::new(UnprotectedController),
        Mode::StaticMtd => Box::new(StaticMtdController::new(
            scenario.all_profiles(),
            scenario.obfuscation.clone(),
            scenario.seed,
        )),
        Mode::Chaos => {
            let tower = scenario.build_tower()?;
            Box::new(ChaosController::new(
                tower,
                scenario.decoy_profiles(),
                scenario.obfuscation.clone(),
                scenario.seed,
            ))
        }
    })
}

/// Runs a scenario under its configured mode. For protected modes the
/// disclosure ratio is computed against an unprotected twin run with the
/// identical workload and seed.
pub fn run_experiment(scenario: &Scenario) -> Result<RunOutput, ExperimentError> {
    scenario.validate()?;
    let mut out = execute(scenario)?;
    if scenario.mode != Mode::Unprotected {
        let mut twin = scenario.clone();
        twin.mode = Mode::Unprotected;
        let baseline = execute(&twin)?;
        out.row.idp =
            information_disclosure(&out.report, &out.truth, &baseline.report).ok();
    } else {
        out.row.idp = information_disclosure(&out.report, &out.truth, &out.report).ok();
    }
    Ok(out)
}

/// Runs a scenario and, separately, its unprotected twin, returning both.
pub fn run_with_baseline(scenario: &Scenario) -> Result<(RunOutput, RunOutput), ExperimentError> {
    let out = execute(scenario)?;
    let mut twin = scenario.clone();
    twin.mode = Mode::Unprotected;
    let baseline = execute(&twin)?;
    Ok((out, baseline))
}

fn execute(scenario: &Scenario) -> Result<RunOutput, ExperimentError> {
    let topo = scenario.topology();
    let all_hosts = scenario.all_profiles();
    let mut sim = Simulation::new(&topo, &all_hosts, scenario.sim.clone(), scenario.ids.clone())?;
    let mut controller = make_controller(scenario)?;
    if scenario.mode == Mode::Unprotected {
        UnprotectedController::install_allow_all(&mut sim, &scenario.topology.switches)?;
    }

    let attacker_addr = scenario
        .host_address(&scenario.workload.attacker)
        .expect("validated attacker");
    let truth = GroundTruth::from_hosts(&all_hosts);
    let mut report = ScanReport::default();
    let mut harness = AttackHarness::new(attacker_addr.clone());
    let mut exploit_outcomes = Vec::new();
    let mut expected_flow_checks = Vec::new();
    let mut scans = 0u32;
    let mut exploit_port_counter: u16 = 45000;

    let scan_ports = scenario.effective_scan_ports();
    let targets: Vec<Address> = {
        let mut t: Vec<Address> = all_hosts
            .iter()
            .map(|h| h.real_address.clone())
            .filter(|a| a != &attacker_addr)
            .collect();
        t.sort();
        t
    };

    for action in &scenario.workload.actions {
        while sim.tick() < action.at_tick {
            sim.step(controller.as_mut());
        }
        let actor = action
            .from
            .as_ref()
            .and_then(|id| scenario.host_address(id))
            .unwrap_or_else(|| attacker_addr.clone());
        harness.attacker = actor.clone();
        match action.kind {
            ActionKind::PingSweep => {
                let frag = harness.ping_sweep(&mut sim, controller.as_mut(), &targets);
                report.merge(&frag);
            }
            ActionKind::PortScan => {
                let transport = match action.transport.as_deref() {
                    Some("udp") => TransportKind::Udp,
                    _ => TransportKind::Tcp,
                };
                let ports = action.ports.clone().unwrap_or_else(|| scan_ports.clone());
                let action_targets: Vec<Address> = match &action.target {
                    Some(id) => scenario.host_address(id).into_iter().collect(),
                    None => targets.clone(),
                };
                for t in &action_targets {
                    let frag =
                        harness.port_scan(&mut sim, controller.as_mut(), t, &ports, transport);
                    report.merge(&frag);
                }
            }
            ActionKind::FingerprintSweep => {
                fingerprint_open_ports(
                    &mut harness,
                    &mut sim,
                    controller.as_mut(),
                    &mut report,
                );
            }
            ActionKind::FullScan => {
                for repeat in 0..scenario.workload.scan_repeats.max(1) {
                    let frag = harness.ping_sweep(&mut sim, controller.as_mut(), &targets);
                    report.merge(&frag);
                    for t in &targets {
                        let frag = harness.port_scan(
                            &mut sim,
                            controller.as_mut(),
                            t,
                            &scan_ports,
                            TransportKind::Tcp,
                        );
                        report.merge(&frag);
                    }
                    fingerprint_open_ports(
                        &mut harness,
                        &mut sim,
                        controller.as_mut(),
                        &mut report,
                    );
                    scans += 1;
                    if repeat + 1 < scenario.workload.scan_repeats {
                        for _ in 0..scenario.workload.scan_gap_ticks {
                            sim.step(controller.as_mut());
                        }
                    }
                }
            }
            ActionKind::Exploit => {
                let (Some(target_id), Some(vuln_id)) = (&action.target, &action.vuln_id) else {
                    continue;
                };
                let Some(target) = scenario.host_address(target_id) else {
                    continue;
                };
                let dst_port = exploit_port(scenario, target_id);
                let src_port = exploit_port_counter;
                exploit_port_counter = exploit_port_counter.wrapping_add(1);
                let outcome = harness.exploit_attempt(
                    &mut sim,
                    controller.as_mut(),
                    &target,
                    dst_port,
                    vuln_id,
                    src_port,
                );
                let from_label = action
                    .from
                    .clone()
                    .unwrap_or_else(|| scenario.workload.attacker.clone());
                exploit_outcomes.push((from_label, target_id.clone(), outcome));
            }
            ActionKind::AllPairs => {
                all_pairs_requests(scenario, &mut sim, controller.as_mut());
            }
            ActionKind::ExpectedTraffic => {
                let count = action.count.unwrap_or(100);
                expected_flow_checks = expected_traffic(scenario, &mut sim, controller.as_mut(), count);
            }
        }
        harness.attacker = attacker_addr.clone();
    }
    sim.run_until_quiescent(controller.as_mut(), 500);

    report.count_true_facts(&truth);
    report.elapsed_ticks = sim.tick();
    let overhead = overhead_metrics(&sim, controller.obfuscated_connections());
    let decoy_alerts = sim
        .events
        .iter()
        .filter(|e| matches!(e, crate::netsim::Event::DecoyAlert { .. }))
        .count() as u64;

    let mut success = 0;
    let mut decoy = 0;
    let mut dropped = 0;
    let mut notvuln = 0;
    for (_, _, outcome) in &exploit_outcomes {
        match outcome {
            ExploitOutcome::Success => success += 1,
            ExploitOutcome::FailedDecoy => decoy += 1,
            ExploitOutcome::FailedDropped => dropped += 1,
            ExploitOutcome::FailedNotVulnerable => notvuln += 1,
        }
    }

    let row = MetricsRow {
        mode: scenario.mode,
        seed: scenario.seed,
        scans,
        idp: None,
        controller_ops: overhead.controller_ops,
        obfuscated_connections: overhead.obfuscated_connections,
        mean_delay_ticks: overhead.mean_delay_ticks,
        exploit_success: success,
        exploit_decoy: decoy,
        exploit_dropped: dropped,
        exploit_not_vulnerable: notvuln,
    };
    Ok(RunOutput {
        row,
        report,
        truth,
        overhead,
        exploit_outcomes,
        decoy_alerts,
        decision_trace: controller.decision_trace(),
        event_trace: sim.event_trace(),
        expected_flow_checks,
    })
}

fn fingerprint_open_ports(
    harness: &mut AttackHarness,
    sim: &mut Simulation,
    controller: &mut dyn crate::netsim::Controller,
    report: &mut ScanReport,
) {
    let open: Vec<(Address, u16)> = report
        .observed_ports
        .iter()
        .filter(|(_, kind, _, verdict)| {
            *kind == TransportKind::Tcp && *verdict == crate::scanner::PortVerdict::Open
        })
        .map(|(addr, _, port, _)| (addr.clone(), *port))
        .collect();
    for (addr, port) in open {
        if let Some(banner) = harness.fingerprint(sim, controller, &addr, port) {
            report
                .observed_banners
                .entry((addr, port))
                .or_insert(banner);
        }
    }
}

/// The service port an exploit against a host aims at: the service its
/// risk is attributed to, falling back to the first service or port 7.
fn exploit_port(scenario: &Scenario, host_id: &str) -> u16 {
    scenario
        .hosts
        .iter()
        .find(|h| h.id == host_id)
        .and_then(|h| {
            let profile = scenario
                .host_profiles()
                .into_iter()
                .find(|p| p.host_id == host_id)?;
            profile
                .attributed_service(&scenario.tower)
                .map(|s| s.port)
                .or_else(|| h.services.first().map(|s| s.port))
        })
        .unwrap_or(7)
}

/// One connection per ordered host pair: the request burst first, then a
/// data segment on every flow once the requests have settled. The second
/// packet is what separates reactive flow installation (it rides the
/// dataplane) from per-packet relaying.
fn all_pairs_requests(
    scenario: &Scenario,
    sim: &mut Simulation,
    controller: &mut dyn crate::netsim::Controller,
) {
    let hosts = scenario.host_profiles();
    let mut pairs = Vec::new();
    let mut pair_idx: u16 = 0;
    for src in &hosts {
        for dst in &hosts {
            if src.host_id == dst.host_id {
                continue;
            }
            let dst_port = dst.services.first().map(|s| s.port).unwrap_or(7);
            let src_port = 20000 + pair_idx;
            pair_idx = pair_idx.wrapping_add(1);
            let p = PacketBuilder::tcp_syn(
                src.real_address.clone(),
                dst.real_address.clone(),
                src_port,
                dst_port,
            );
            let _ = sim.inject(p);
            pairs.push((src.real_address.clone(), dst.real_address.clone(), src_port, dst_port));
        }
    }
    sim.run_until_quiescent(controller, 200);
    for (i, (src, dst, src_port, dst_port)) in pairs.into_iter().enumerate() {
        let mut p = PacketBuilder::data(src, dst, src_port, dst_port, &format!("pair-{i}"));
        p.src_port = src_port;
        let _ = sim.inject(p);
    }
    sim.run_until_quiescent(controller, 200);
}

/// Seeded stream of expected (whitelisted or downward) data flows; checks
/// payload integrity, the receiver-observed source, and the returned
/// acknowledgement for each.
fn expected_traffic(
    scenario: &Scenario,
    sim: &mut Simulation,
    controller: &mut dyn crate::netsim::Controller,
    count: u64,
) -> Vec<(String, bool, bool, bool)> {
    let tower = match scenario.build_tower() {
        Ok(t) => t,
        Err(_) => return Vec::new(),
    };
    let hosts = scenario.host_profiles();
    let by_id: BTreeMap<&str, &crate::tower::HostProfile> =
        hosts.iter().map(|h| (h.host_id.as_str(), h)).collect();

    // Candidate pairs: the whitelist plus every strictly downward pair.
    let mut pairs: Vec<(Address, Address, u16)> = Vec::new();
    for w in &scenario.whitelist {
        if let (Some(s), Some(d)) = (by_id.get(w.src.as_str()), by_id.get(w.dst.as_str())) {
            pairs.push((s.real_address.clone(), d.real_address.clone(), w.port));
        }
    }
    for src in &hosts {
        for dst in &hosts {
            if src.host_id == dst.host_id {
                continue;
            }
            let (Ok(a), Ok(b)) = (tower.layer_of(&src.host_id), tower.layer_of(&dst.host_id))
            else {
                continue;
            };
            if a > b {
                let port = dst.services.first().map(|s| s.port).unwrap_or(9);
                pairs.push((src.real_address.clone(), dst.real_address.clone(), port));
            }
        }
    }
    if pairs.is_empty() {
        return Vec::new();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed ^ 0x5eed_f10e);
    let mut sent: Vec<(String, Address, Address, u16)> = Vec::new();
    for i in 0..count {
        let (src, dst, port) = pairs[rng.random_range(0..pairs.len())].clone();
        let tag = format!("flow-{i}");
        // Repeat traffic between a pair reuses the connection's five-tuple,
        // so replies ride the already-installed reverse path.
        let draw = crate::obfuscation::keyed_draw(
            0,
            &["data-port", src.as_str(), dst.as_str(), &port.to_string()],
        );
        let src_port = 50000 + (draw * 10000.0) as u16;
        let p = PacketBuilder::data(src.clone(), dst.clone(), src_port, port, &tag);
        let _ = sim.inject(p);
        sent.push((tag, src, dst, src_port));
        // Small batches keep the in-flight set bounded.
        if i % 16 == 15 {
            sim.run_until_quiescent(controller, 100);
        }
    }
    sim.run_until_quiescent(controller, 400);

    let mut checks = Vec::new();
    for (tag, src, dst, src_port) in sent {
        let payload = format!("data:{tag}");
        let delivered = sim
            .deliveries
            .iter()
            .any(|d| d.host == dst && d.packet.payload_tag == payload);
        let src_seen_real = sim
            .deliveries
            .iter()
            .any(|d| d.host == dst && d.packet.payload_tag == payload && d.packet.src_address == src);
        let ack = format!("ack:{tag}");
        let ack_back = sim.deliveries.iter().any(|d| {
            d.host == src
                && d.packet.payload_tag == ack
                && d.packet.src_address == dst
                && d.packet.dst_port == src_port
        });
        checks.push((tag, delivered, src_seen_real, ack_back));
    }
    checks
}

// ---------------------------------------------------------------------------
// Reference scenarios
// ---------------------------------------------------------------------------

fn svc(name: &str, port: u16, banner: &str) -> ServiceConfig {
    ServiceConfig {
        name: name.to_string(),
        port,
        transport: "tcp".to_string(),
        banner: banner.to_string(),
    }
}

fn vuln(id: &str, category: &str, cvss: f64) -> VulnConfig {
    VulnConfig {
        id: id.to_string(),
        category: category.to_string(),
        cvss,
    }
}

/// The four-layer reference intranet: guests at the bottom, workstations,
/// a service segment, and the database core on top, with a two-way
/// web/database whitelist pair and two decoys. Parameters are
/// illustrative.
pub fn fig2_scenario() -> Scenario {
    let siv_table: BTreeMap<String, f64> = [
        ("ssh", 5.0),
        ("http", 6.0),
        ("https", 6.5),
        ("ftp", 4.0),
        ("smb", 5.5),
        ("postgres", 9.0),
        ("backup", 7.0),
        ("replication", 8.0),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();

    Scenario {
        mode: Mode::Chaos,
        seed: 42,
        tower: crate::tower::TowerConfig {
            alpha: 0.5,
            threshold: 0.5,
            random_index: 0.5,
            siv_table,
            layer_count: 4,
            binning: crate::tower::Binning::EqualWidth,
            strict_intra_layer: false,
        },
        obfuscation: Default::default(),
        ids: Default::default(),
        sim: Default::default(),
        topology: TopologyConfig {
            switches: vec![
                "s-guest".into(),
                "s-ws".into(),
                "s-dmz".into(),
                "s-core".into(),
            ],
            links: vec![
                ("s-guest".into(), "s-ws".into()),
                ("s-ws".into(), "s-dmz".into()),
                ("s-dmz".into(), "s-core".into()),
            ],
        },
        hosts: vec![
            HostConfig {
                id: "guest-1".into(),
                address: "10.0.0.1".into(),
                attachment: "s-guest".into(),
                services: vec![],
                vulnerabilities: vec![],
            },
            HostConfig {
                id: "guest-2".into(),
                address: "10.0.0.2".into(),
                attachment: "s-guest".into(),
                services: vec![],
                vulnerabilities: vec![],
            },
            HostConfig {
                id: "ws-1".into(),
                address: "10.0.1.1".into(),
                attachment: "s-ws".into(),
                services: vec![svc("ssh", 22, "OpenSSH 7.4")],
                vulnerabilities: vec![vuln("cve-ws-1", "privilege-escalation", 5.0)],
            },
            HostConfig {
                id: "ws-2".into(),
                address: "10.0.1.2".into(),
                attachment: "s-ws".into(),
                services: vec![svc("ssh", 22, "OpenSSH 7.2")],
                vulnerabilities: vec![vuln("cve-ws-2", "privilege-escalation", 5.6)],
            },
            HostConfig {
                id: "web-1".into(),
                address: "10.0.2.1".into(),
                attachment: "s-dmz".into(),
                services: vec![
                    svc("http", 80, "Apache 2.4.25"),
                    svc("https", 443, "Apache 2.4.25 TLS"),
                ],
                vulnerabilities: vec![
                    vuln("cve-web-1", "sql-injection", 6.1),
                    vuln("cve-web-2", "xss", 5.4),
                ],
            },
            HostConfig {
                id: "file-1".into(),
                address: "10.0.2.2".into(),
                attachment: "s-dmz".into(),
                services: vec![svc("ftp", 21, "vsftpd 3.0.3"), svc("smb", 445, "Samba 4.5")],
                vulnerabilities: vec![
                    vuln("cve-file-1", "buffer-overflow", 7.8),
                    vuln("cve-file-2", "information-leak", 4.9),
                ],
            },
            HostConfig {
                id: "db-1".into(),
                address: "10.0.3.1".into(),
                attachment: "s-core".into(),
                services: vec![
                    svc("postgres", 5432, "PostgreSQL 9.6.1"),
                    svc("backup", 873, "rsync 3.1.2"),
                    svc("replication", 5433, "pgpool 3.6"),
                ],
                vulnerabilities: vec![
                    vuln("cve-db-1", "sql-injection", 9.8),
                    vuln("cve-db-2", "privilege-escalation", 7.5),
                ],
            },
        ],
        decoys: vec![
            HostConfig {
                id: "decoy-1".into(),
                address: "10.0.9.1".into(),
                attachment: "s-dmz".into(),
                services: vec![
                    svc("telnet-trap", 2323, "trap-telnet 1.0"),
                    svc("admin-trap", 8081, "trap-admin 1.0"),
                ],
                vulnerabilities: vec![],
            },
            HostConfig {
                id: "decoy-2".into(),
                address: "10.0.9.2".into(),
                attachment: "s-ws".into(),
                services: vec![svc("admin-trap", 8082, "trap-admin 2.0")],
                vulnerabilities: vec![],
            },
        ],
        whitelist: vec![
            WhitelistConfig {
                src: "web-1".into(),
                dst: "db-1".into(),
                port: 5432,
                from_tick: None,
                until_tick: None,
            },
            WhitelistConfig {
                src: "db-1".into(),
                dst: "web-1".into(),
                port: 80,
                from_tick: None,
                until_tick: None,
            },
        ],
        workload: WorkloadConfig {
            attacker: "guest-1".into(),
            scan_repeats: 10,
            scan_gap_ticks: 25,
            scan_ports: Some(vec![
                21, 22, 23, 80, 443, 445, 873, 2323, 3306, 3389, 5432, 5433, 8081, 8082, 8443,
                9100,
            ]),
            actions: vec![ActionConfig {
                kind: ActionKind::FullScan,
                at_tick: 1,
                from: None,
                target: None,
                ports: None,
                transport: None,
                vuln_id: None,
                count: None,
            }],
        },
    }
}

/// Balanced binary tower with `layers` levels: one singleton group per
/// node, each on its own edge switch, risk levels engineered to bin one
/// level per layer. Used for the overhead closed-form checks.
pub fn bintree_scenario(layers: u32) -> Result<Scenario, ExperimentError> {
    if layers < 1 || layers > 8 {
        return Err(ExperimentError::InvalidLayerCount(layers));
    }
    let l = layers as u64;
    let mut switches = vec!["bt-core".to_string()];
    let mut links = Vec::new();
    let mut hosts = Vec::new();
    let mut idx = 0u64;
    // Layer k counted from the bottom has 2^(L-1-k) nodes.
    for k in 0..l {
        let nodes = 1u64 << (l - 1 - k);
        let rl = (k as f64 + 0.5) * 10.0 / l as f64;
        for j in 0..nodes {
            let sw = format!("bt-{idx}");
            switches.push(sw.clone());
            links.push(("bt-core".to_string(), sw.clone()));
            hosts.push(HostConfig {
                id: format!("bt-h{idx}"),
                address: format!("10.1.{}.{}", idx / 200, idx % 200 + 1),
                attachment: sw,
                services: vec![svc("svc-bt", 7, "echo 1.0")],
                vulnerabilities: vec![vuln("cve-bt", "rce", rl)],
            });
            idx += 1;
            let _ = j;
        }
    }
    Ok(Scenario {
        mode: Mode::Chaos,
        seed: 7,
        tower: crate::tower::TowerConfig {
            alpha: 0.0,
            threshold: 0.5,
            random_index: 0.5,
            siv_table: [("svc-bt".to_string(), 5.0)].into_iter().collect(),
            layer_count: layers as usize,
            binning: crate::tower::Binning::EqualWidth,
            strict_intra_layer: false,
        },
        obfuscation: Default::default(),
        ids: Default::default(),
        sim: Default::default(),
        topology: TopologyConfig { switches, links },
        hosts,
        decoys: vec![HostConfig {
            id: "decoy-bt".into(),
            address: "10.1.200.1".into(),
            attachment: "bt-core".into(),
            services: vec![svc("trap", 7099, "trap 1.0")],
            vulnerabilities: vec![],
        }],
        whitelist: vec![],
        workload: WorkloadConfig {
            attacker: "bt-h0".into(),
            scan_repeats: 1,
            scan_gap_ticks: 10,
            scan_ports: None,
            actions: vec![ActionConfig {
                kind: ActionKind::AllPairs,
                at_tick: 1,
                from: None,
                target: None,
                ports: None,
                transport: None,
                vuln_id: None,
                count: None,
            }],
        },
    })
}

/// Four layers, one vulnerable host in each, all sharing the same tested
/// vulnerability; exploit matrix from every layer against every other.
pub fn attack_ladder_scenario() -> Scenario {
    let mut hosts = Vec::new();
    let switches: Vec<String> = (0..4).map(|i| format!("lad-s{i}")).collect();
    let links: Vec<(String, String)> = (0..3)
        .map(|i| (format!("lad-s{i}"), format!("lad-s{}", i + 1)))
        .collect();
    for (i, cvss) in [2.0f64, 4.0, 6.0, 8.0].iter().enumerate() {
        hosts.push(HostConfig {
            id: format!("lad-{i}"),
            address: format!("10.2.0.{}", i + 1),
            attachment: format!("lad-s{i}"),
            services: vec![svc("svc-lad", 7001, "ladder 1.0")],
            vulnerabilities: vec![vuln("cve-ladder", "rce", *cvss)],
        });
    }
    let mut actions = Vec::new();
    let mut tick = 1;
    for i in 0..4 {
        for j in 0..4 {
            if i == j {
                continue;
            }
            actions.push(ActionConfig {
                kind: ActionKind::Exploit,
                at_tick: tick,
                from: Some(format!("lad-{i}")),
                target: Some(format!("lad-{j}")),
                ports: None,
                transport: None,
                vuln_id: Some("cve-ladder".to_string()),
                count: None,
            });
            tick += 10;
        }
    }
    Scenario {
        mode: Mode::Chaos,
        seed: 11,
        tower: crate::tower::TowerConfig {
            alpha: 0.0,
            threshold: 0.5,
            random_index: 0.5,
            siv_table: [("svc-lad".to_string(), 5.0)].into_iter().collect(),
            layer_count: 4,
            binning: crate::tower::Binning::EqualWidth,
            strict_intra_layer: false,
        },
        obfuscation: Default::default(),
        ids: Default::default(),
        sim: Default::default(),
        topology: TopologyConfig {
            switches,
            links,
        },
        hosts,
        decoys: vec![HostConfig {
            id: "decoy-lad".into(),
            address: "10.2.9.1".into(),
            attachment: "lad-s1".into(),
            services: vec![svc("trap", 7101, "trap 1.0")],
            vulnerabilities: vec![],
        }],
        whitelist: vec![],
        workload: WorkloadConfig {
            attacker: "lad-0".into(),
            scan_repeats: 1,
            scan_gap_ticks: 10,
            scan_ports: None,
            actions,
        },
    }
}

/// All shipped reference scenarios by name.
pub fn build_reference_scenarios() -> BTreeMap<String, Scenario> {
    let mut m = BTreeMap::new();
    m.insert("fig2".to_string(), fig2_scenario());
    for l in 2..=6 {
        m.insert(
            format!("bintree-{l}"),
            bintree_scenario(l).expect("reference layer count"),
        );
    }
    m.insert("attack-ladder".to_string(), attack_ladder_scenario());
    m
}

/// Looks a scenario up by reference name or loads it from a file path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario, ExperimentError> {
    let path = std::path::Path::new(name_or_path);
    if path.exists() {
        return Ok(crate::config::load_config(path)?);
    }
    build_reference_scenarios()
        .remove(name_or_path)
        .ok_or_else(|| ExperimentError::UnknownScenario(name_or_path.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms_match_hand_values() {
        assert_eq!(predicted_obfuscation_load(1).unwrap(), (0, 0, 0));
        assert_eq!(predicted_obfuscation_load(3).unwrap(), (0, 42, 14));
        assert_eq!(predicted_obfuscation_load(4).unwrap(), (0, 210, 70));
        assert!(predicted_obfuscation_load(0).is_err());
    }

    #[test]
    fn reference_scenarios_validate() {
        for (name, scenario) in build_reference_scenarios() {
            scenario
                .validate()
                .unwrap_or_else(|e| panic!("{name} invalid: {e}"));
        }
    }

    #[test]
    fn fig2_builds_four_layers_with_group_one_on_top() {
        let scenario = fig2_scenario();
        let tower = scenario.build_tower().unwrap();
        assert_eq!(tower.height, 4);
        let top = &tower.layers[3];
        assert!(top.contains(&"group-1".to_string()));
        assert!(tower.groups["group-1"].host_ids.contains("db-1"));
    }

    #[test]
    fn bintree_three_has_seven_groups() {
        let scenario = bintree_scenario(3).unwrap();
        let tower = scenario.build_tower().unwrap();
        assert_eq!(tower.groups.len(), 7);
        assert_eq!(tower.height, 3);
        // One group per node: sizes 4, 2, 1 bottom to top.
        assert_eq!(tower.layers[0].len(), 4);
        assert_eq!(tower.layers[1].len(), 2);
        assert_eq!(tower.layers[2].len(), 1);
    }

    #[test]
    fn attack_ladder_has_one_vulnerable_host_per_layer() {
        let scenario = attack_ladder_scenario();
        let tower = scenario.build_tower().unwrap();
        assert_eq!(tower.height, 4);
        for layer in 0..4 {
            let hosts: Vec<&String> = tower.layers[layer]
                .iter()
                .flat_map(|g| tower.groups[g].host_ids.iter())
                .collect();
            assert_eq!(hosts.len(), 1, "layer {layer} should hold exactly one host");
        }
    }

    #[test]
    fn scenario_roundtrip_via_toml() {
        let scenario = fig2_scenario();
        let text = scenario.to_toml();
        let again = crate::config::parse_config(&text).unwrap();
        assert_eq!(scenario, again);
    }

    #[test]
    fn unprotected_run_has_idp_one_and_no_controller_ops() {
        let mut scenario = fig2_scenario();
        scenario.mode = Mode::Unprotected;
        scenario.workload.scan_repeats = 1;
        let out = run_experiment(&scenario).unwrap();
        assert_eq!(out.row.idp, Some(1.0));
        assert_eq!(out.row.controller_ops, 0);
        assert_eq!(out.row.obfuscated_connections, 0);
        assert!(out.report.true_fact_count > 0);
    }

    #[test]
    fn chaos_run_is_deterministic() {
        let mut scenario = fig2_scenario();
        scenario.workload.scan_repeats = 2;
        let a = run_experiment(&scenario).unwrap();
        let b = run_experiment(&scenario).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.decision_trace, b.decision_trace);
        assert_eq!(a.event_trace, b.event_trace);
    }
}
