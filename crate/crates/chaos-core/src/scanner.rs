//! The attacker harness: reconnaissance and exploit simulation, plus the
//! information-disclosure and overhead metrics computed from what the
//! attacker actually observed.

use crate::addr::Address;
use crate::netsim::{
    Controller, Event, Fate, Flag, Packet, PacketBuilder, Simulation, Tick, TransportKind,
};
use crate::obfuscation::keyed_draw;
use crate::tower::HostProfile;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// What is really true about the protected hosts, derived from their
/// profiles alone; obfuscation can never touch this.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub live_hosts: BTreeSet<Address>,
    pub open_ports: BTreeSet<(Address, TransportKind, u16)>,
    pub banners: BTreeMap<(Address, u16), String>,
}

impl GroundTruth {
    pub fn from_hosts(hosts: &[HostProfile]) -> GroundTruth {
        let mut truth = GroundTruth {
            live_hosts: BTreeSet::new(),
            open_ports: BTreeSet::new(),
            banners: BTreeMap::new(),
        };
        for h in hosts {
            if h.is_decoy {
                continue;
            }
            truth.live_hosts.insert(h.real_address.clone());
            for s in &h.services {
                let kind = match s.transport {
                    crate::tower::Transport::Tcp => TransportKind::Tcp,
                    crate::tower::Transport::Udp => TransportKind::Udp,
                };
                truth.open_ports.insert((h.real_address.clone(), kind, s.port));
                truth
                    .banners
                    .insert((h.real_address.clone(), s.port), s.banner.clone());
            }
        }
        truth
    }

    pub fn fact_count(&self) -> u64 {
        (self.live_hosts.len() + self.open_ports.len() + self.banners.len()) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PortVerdict {
    Open,
    Closed,
    Filtered,
}

/// Everything the attacker believes after its probes, and how much of it
/// is actually true.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScanReport {
    pub observed_live: BTreeSet<Address>,
    pub observed_ports: BTreeSet<(Address, TransportKind, u16, PortVerdict)>,
    pub observed_banners: BTreeMap<(Address, u16), String>,
    pub true_fact_count: u64,
    pub elapsed_ticks: Tick,
}

impl ScanReport {
    pub fn merge(&mut self, other: &ScanReport) {
        self.observed_live.extend(other.observed_live.iter().cloned());
        self.observed_ports.extend(other.observed_ports.iter().cloned());
        for (k, v) in &other.observed_banners {
            self.observed_banners.entry(k.clone()).or_insert_with(|| v.clone());
        }
        self.elapsed_ticks = self.elapsed_ticks.max(other.elapsed_ticks);
    }

    /// Recounts facts against the truth and stores the result.
    pub fn count_true_facts(&mut self, truth: &GroundTruth) -> u64 {
        let live = self
            .observed_live
            .iter()
            .filter(|a| truth.live_hosts.contains(*a))
            .count();
        let ports = self
            .observed_ports
            .iter()
            .filter(|(addr, kind, port, verdict)| {
                *verdict == PortVerdict::Open
                    && truth.open_ports.contains(&(addr.clone(), *kind, *port))
            })
            .count();
        let banners = self
            .observed_banners
            .iter()
            .filter(|(key, banner)| truth.banners.get(*key) == Some(*banner))
            .count();
        self.true_fact_count = (live + ports + banners) as u64;
        self.true_fact_count
    }

    /// Canonical bytes for golden comparisons.
    pub fn canonical(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ScannerError {
    #[error("baseline scan observed zero true facts; disclosure ratio undefined")]
    ZeroBaseline,
    #[error("vulnerability id {0} is not defined on any host")]
    UnknownVulnId(String),
}

/// Information disclosure percentage: true facts learned under a defense
/// mode divided by true facts learned on the unprotected network.
pub fn information_disclosure(
    report: &ScanReport,
    truth: &GroundTruth,
    baseline: &ScanReport,
) -> Result<f64, ScannerError> {
    let mut mode = report.clone();
    let mut base = baseline.clone();
    let id_mode = mode.count_true_facts(truth);
    let id_base = base.count_true_facts(truth);
    if id_base == 0 {
        return Err(ScannerError::ZeroBaseline);
    }
    Ok(id_mode as f64 / id_base as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExploitOutcome {
    Success,
    FailedDecoy,
    FailedDropped,
    FailedNotVulnerable,
}

impl ExploitOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExploitOutcome::Success => "Success",
            ExploitOutcome::FailedDecoy => "FailedDecoy",
            ExploitOutcome::FailedDropped => "FailedDropped",
            ExploitOutcome::FailedNotVulnerable => "FailedNotVulnerable",
        }
    }
}

/// Drives probes through the simulation on behalf of one attacker host
/// and turns the replies it can see into report fragments.
pub struct AttackHarness {
    pub attacker: Address,
    /// How long to wait for the network to settle after a burst.
    pub settle_cap: Tick,
    delivery_cursor: usize,
}

/// Source port for a probe, fixed per (kind, target, port) so a repeated
/// identical scan reuses identical flows.
fn probe_src_port(kind: &str, target: &Address, port: u16) -> u16 {
    let draw = keyed_draw(0, &["src-port", kind, target.as_str(), &port.to_string()]);
    20000 + (draw * 20000.0) as u16
}

impl AttackHarness {
    pub fn new(attacker: Address) -> Self {
        AttackHarness {
            attacker,
            settle_cap: 64,
            delivery_cursor: 0,
        }
    }

    fn settle(&mut self, sim: &mut Simulation, controller: &mut dyn Controller) {
        sim.run_until_quiescent(controller, self.settle_cap);
    }

    /// Replies delivered to the attacker since the last harvest.
    fn harvest(&mut self, sim: &Simulation) -> Vec<Packet> {
        let replies: Vec<Packet> = sim.deliveries[self.delivery_cursor..]
            .iter()
            .filter(|d| d.host == self.attacker)
            .map(|d| d.packet.clone())
            .collect();
        self.delivery_cursor = sim.deliveries.len();
        replies
    }

    /// One echo per target; a host counts as live iff an echo reply with
    /// its address came back.
    pub fn ping_sweep(
        &mut self,
        sim: &mut Simulation,
        controller: &mut dyn Controller,
        targets: &[Address],
    ) -> ScanReport {
        let start = sim.tick();
        for t in targets {
            if *t == self.attacker {
                continue;
            }
            let p = PacketBuilder::icmp_echo(self.attacker.clone(), t.clone());
            let _ = sim.inject(p);
        }
        self.settle(sim, controller);
        let mut frag = ScanReport::default();
        for reply in self.harvest(sim) {
            if reply.transport == TransportKind::Icmp && reply.flags.contains(&Flag::EchoReply) {
                frag.observed_live.insert(reply.src_address.clone());
            }
        }
        frag.elapsed_ticks = sim.tick() - start;
        frag
    }

    /// One connect probe per port; the verdict comes from whatever answers
    /// (or from silence).
    pub fn port_scan(
        &mut self,
        sim: &mut Simulation,
        controller: &mut dyn Controller,
        target: &Address,
        ports: &[u16],
        transport: TransportKind,
    ) -> ScanReport {
        let start = sim.tick();
        let mut awaiting: BTreeMap<u16, u16> = BTreeMap::new(); // src_port -> dst_port
        for port in ports {
            let src_port = probe_src_port("scan", target, *port);
            let p = match transport {
                TransportKind::Tcp => {
                    PacketBuilder::tcp_syn(self.attacker.clone(), target.clone(), src_port, *port)
                }
                TransportKind::Udp => {
                    PacketBuilder::udp_probe(self.attacker.clone(), target.clone(), src_port, *port)
                }
                TransportKind::Icmp => continue,
            };
            let _ = sim.inject(p);
            awaiting.insert(src_port, *port);
        }
        self.settle(sim, controller);
        let mut frag = ScanReport::default();
        let mut answered: BTreeSet<u16> = BTreeSet::new();
        for reply in self.harvest(sim) {
            if reply.src_address != *target || reply.transport != transport {
                continue;
            }
            let Some(dst_port) = awaiting.get(&reply.dst_port) else {
                continue;
            };
            let verdict = match transport {
                TransportKind::Tcp => {
                    if reply.flags.contains(&Flag::Syn) && reply.flags.contains(&Flag::Ack) {
                        PortVerdict::Open
                    } else if reply.flags.contains(&Flag::Rst) {
                        PortVerdict::Closed
                    } else {
                        continue;
                    }
                }
                TransportKind::Udp => {
                    if reply.flags.contains(&Flag::Unreachable) {
                        PortVerdict::Closed
                    } else if reply.payload_tag == "udp-reply" {
                        PortVerdict::Open
                    } else {
                        continue;
                    }
                }
                TransportKind::Icmp => continue,
            };
            answered.insert(reply.dst_port);
            frag.observed_ports
                .insert((target.clone(), transport, *dst_port, verdict));
        }
        for (src_port, dst_port) in awaiting {
            if !answered.contains(&src_port) {
                frag.observed_ports
                    .insert((target.clone(), transport, dst_port, PortVerdict::Filtered));
            }
        }
        frag.elapsed_ticks = sim.tick() - start;
        frag
    }

    /// Fetches the banner behind a port already observed open. Returns the
    /// banner string exactly as whoever answered presented it.
    pub fn fingerprint(
        &mut self,
        sim: &mut Simulation,
        controller: &mut dyn Controller,
        target: &Address,
        port: u16,
    ) -> Option<String> {
        let src_port = probe_src_port("banner", target, port);
        let p = PacketBuilder::banner_request(self.attacker.clone(), target.clone(), src_port, port);
        let _ = sim.inject(p);
        self.settle(sim, controller);
        for reply in self.harvest(sim) {
            if reply.src_address == *target && reply.dst_port == src_port {
                if let Some(banner) = reply.payload_tag.strip_prefix("banner:") {
                    return Some(banner.to_string());
                }
            }
        }
        None
    }

    /// Fires one exploit payload and reports where it ended up.
    pub fn exploit_attempt(
        &mut self,
        sim: &mut Simulation,
        controller: &mut dyn Controller,
        target: &Address,
        dst_port: u16,
        vuln_id: &str,
        src_port: u16,
    ) -> ExploitOutcome {
        let p = PacketBuilder::exploit(
            self.attacker.clone(),
            target.clone(),
            src_port,
            dst_port,
            vuln_id,
        );
        let id = sim.inject(p).expect("attacker is attached");
        self.settle(sim, controller);
        self.delivery_cursor = sim.deliveries.len();
        match sim.fate_of(id) {
            Some(Fate::Delivered) => {
                let vulnerable = sim.events.iter().any(|e| {
                    matches!(e, Event::ExploitDelivered { id: pid, vulnerable: true, .. } if *pid == id)
                });
                if vulnerable {
                    ExploitOutcome::Success
                } else {
                    ExploitOutcome::FailedNotVulnerable
                }
            }
            Some(Fate::AbsorbedByDecoy) => ExploitOutcome::FailedDecoy,
            _ => ExploitOutcome::FailedDropped,
        }
    }
}

/// Aggregate cost numbers for one finished run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverheadMetrics {
    pub controller_ops: u64,
    pub obfuscated_connections: u64,
    pub mean_delay_ticks: f64,
}

/// Controller decision count, obfuscated-connection count, and mean
/// per-packet completion latency.
pub fn overhead_metrics(sim: &Simulation, obfuscated_connections: u64) -> OverheadMetrics {
    let mut total = 0u64;
    let mut n = 0u64;
    for (id, fate) in sim.fates() {
        if matches!(
            fate,
            Fate::Delivered | Fate::AbsorbedByDecoy | Fate::AnsweredSynthetically
        ) {
            if let Some(lat) = sim.latency_of(*id) {
                total += lat;
                n += 1;
            }
        }
    }
    OverheadMetrics {
        controller_ops: sim.counters.controller_ops,
        obfuscated_connections,
        mean_delay_ticks: if n == 0 { 0.0 } else { total as f64 / n as f64 },
    }
}
