//! The control programs for each protection mode.
//!
//! All three speak the same packet-in/flow-mod/packet-out channel. The
//! unprotected controller never hears from the network (switches carry an
//! allow-all entry). The static baseline relays every packet through the
//! controller and fuzzes every probe the same way regardless of who asks.
//! The tower-driven controller classifies each new connection, picks a
//! countermeasure once, and pins it for the life of the flow.

use crate::addr::Address;
use crate::netsim::{
    Action, Controller, FlowEntry, FlowKey, FlowMatch, OutPort, Packet, SimApi, Tick,
    TransportKind, Verdict,
};
use crate::obfuscation::{
    choose_decoy, decide, keyed_draw, rotate_mappings, synthesize_scan_reply, MappingTable,
    ObfuscationConfig, ObfuscationDecision, ReplyBuffer,
};
use crate::tower::{ChaosTower, Classification, HostProfile, IdsVerdict};
use std::collections::{BTreeMap, BTreeSet};

const PRIO_FORWARD: u16 = 60;
const PRIO_REDIRECT: u16 = 50;
const PRIO_DROP: u16 = 90;

/// One logged obfuscation decision; the audit record for released and
/// obfuscated connections.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub tick: Tick,
    pub flow: FlowKey,
    pub classification: String,
    pub leapfrog: f64,
    pub decision: ObfuscationDecision,
    pub draw: f64,
}

impl DecisionRecord {
    pub fn render(&self) -> String {
        format!(
            "tick={} flow={}:{}->{}:{}/{} class={} leapfrog={:.6} decision={} draw={:.6}",
            self.tick,
            self.flow.src,
            self.flow.src_port,
            self.flow.dst,
            self.flow.dst_port,
            self.flow.transport.as_str(),
            self.classification,
            self.leapfrog,
            self.decision.as_str(),
            self.draw,
        )
    }
}

/// What every mode controller reports back to the experiment runner.
pub trait ModeController: Controller {
    fn decision_trace(&self) -> String;
    /// Connections that received a non-forward treatment.
    fn obfuscated_connections(&self) -> u64;
}

// ---------------------------------------------------------------------------
// Unprotected
// ---------------------------------------------------------------------------

/// Baseline without any defense: switches are pre-loaded with an allow-all
/// entry, so this controller never makes a decision.
pub struct UnprotectedController;

impl UnprotectedController {
    /// The allow-all posture: a low-priority match-all forward entry on
    /// every switch.
    pub fn install_allow_all(
        sim: &mut crate::netsim::Simulation,
        switches: &[String],
    ) -> Result<(), crate::netsim::SimError> {
        for sw in switches {
            sim.install_flow(
                sw,
                FlowEntry::new(
                    FlowMatch::default(),
                    0,
                    vec![Action::Output(OutPort::Normal)],
                    0,
                ),
            )?;
        }
        Ok(())
    }
}

impl Controller for UnprotectedController {
    fn on_tick(&mut self, _api: &mut SimApi<'_>) {}
    fn on_packet_in(&mut self, api: &mut SimApi<'_>, _sw: &str, _port: u32, packet: Packet) {
        // Unreachable with the allow-all posture; forward just in case.
        let _ = api.packet_out_to_host(&packet.dst_address.clone(), packet);
    }
}

impl ModeController for UnprotectedController {
    fn decision_trace(&self) -> String {
        String::new()
    }
    fn obfuscated_connections(&self) -> u64 {
        0
    }
}

// ---------------------------------------------------------------------------
// Static MTD baseline
// ---------------------------------------------------------------------------

/// Indiscriminate baseline: every packet passes through the controller and
/// every probe is answered with the same static flip policy, regardless of
/// source or position.
pub struct StaticMtdController {
    hosts: BTreeMap<Address, HostProfile>,
    obf: ObfuscationConfig,
    seed: u64,
    buffer: ReplyBuffer,
    seen: BTreeSet<FlowKey>,
    trace: Vec<DecisionRecord>,
}

impl StaticMtdController {
    pub fn new(hosts: Vec<HostProfile>, obf: ObfuscationConfig, seed: u64) -> Self {
        let buffer = ReplyBuffer::new(obf.reply_window_ticks);
        StaticMtdController {
            hosts: hosts
                .into_iter()
                .map(|h| (h.real_address.clone(), h))
                .collect(),
            obf,
            seed,
            buffer,
            seen: BTreeSet::new(),
            trace: Vec::new(),
        }
    }
}

impl Controller for StaticMtdController {
    fn on_tick(&mut self, _api: &mut SimApi<'_>) {}

    fn on_packet_in(&mut self, api: &mut SimApi<'_>, _sw: &str, _port: u32, packet: Packet) {
        let key = packet.flow_key().canonical();
        if self.seen.insert(key) && packet.is_request() {
            let draw = keyed_draw(
                self.seed,
                &[
                    "mtd-flip",
                    packet.dst_address.as_str(),
                    &packet.dst_port.to_string(),
                    packet.transport.as_str(),
                ],
            );
            self.trace.push(DecisionRecord {
                tick: api.tick(),
                flow: packet.flow_key(),
                classification: "Static".to_string(),
                leapfrog: 0.0,
                decision: ObfuscationDecision::PortObfuscate,
                draw,
            });
        }
        if packet.is_probe() {
            let truth = match self.hosts.get(&packet.dst_address) {
                Some(h) => h.clone(),
                None => {
                    api.drop_packet(&packet, "unknown-target");
                    return;
                }
            };
            // Static policy: the flip depends only on the target, so every
            // prober sees the same fiction.
            let draw = keyed_draw(
                self.seed,
                &[
                    "mtd-flip",
                    packet.dst_address.as_str(),
                    &packet.dst_port.to_string(),
                    packet.transport.as_str(),
                ],
            );
            let now = api.tick();
            match synthesize_scan_reply(&packet, &truth, &mut self.buffer, draw, now, &self.obf) {
                Ok(reply) => {
                    let _ = api.answer_synthetically(&packet, reply);
                }
                Err(_) => api.drop_packet(&packet, "unsupported-probe"),
            }
        } else {
            // Everything else is relayed through the controller.
            let dst = packet.dst_address.clone();
            if api.locate(&dst).is_some() {
                let _ = api.packet_out_to_host(&dst, packet);
            } else {
                api.drop_packet(&packet, "unknown-target");
            }
        }
    }
}

impl ModeController for StaticMtdController {
    fn decision_trace(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }

    fn obfuscated_connections(&self) -> u64 {
        self.trace.len() as u64
    }
}

// ---------------------------------------------------------------------------
// Tower-driven controller
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
struct FlowRecord {
    decision: ObfuscationDecision,
    /// Virtual pair pinned at decision time, for forward flows that cross
    /// switches. Survives later mapping rotations.
    virtual_pair: Option<(Address, Address)>,
    decoy: Option<Address>,
}

/// The discriminating controller: classifies each new connection against
/// the tower, decides once, installs the matching flows, and answers
/// obfuscated probes itself.
pub struct ChaosController {
    tower: ChaosTower,
    addr_to_host: BTreeMap<Address, String>,
    decoy_hosts: BTreeMap<Address, HostProfile>,
    decoy_pool: Vec<Address>,
    obf: ObfuscationConfig,
    seed: u64,
    reals: BTreeSet<Address>,
    virtual_pool: Vec<Address>,
    mapping: Option<MappingTable>,
    buffer: ReplyBuffer,
    flows: BTreeMap<FlowKey, FlowRecord>,
    trace: Vec<DecisionRecord>,
    obfuscated: u64,
}

impl ChaosController {
    pub fn new(
        tower: ChaosTower,
        decoys: Vec<HostProfile>,
        obf: ObfuscationConfig,
        seed: u64,
    ) -> Self {
        let addr_to_host = tower
            .hosts
            .values()
            .map(|h| (h.real_address.clone(), h.host_id.clone()))
            .collect();
        let mut reals: BTreeSet<Address> = tower
            .hosts
            .values()
            .map(|h| h.real_address.clone())
            .collect();
        for d in &decoys {
            reals.insert(d.real_address.clone());
        }
        let virtual_pool = crate::addr::virtual_pool(reals.len() * 2);
        let buffer = ReplyBuffer::new(obf.reply_window_ticks);
        let decoy_pool: Vec<Address> = decoys.iter().map(|d| d.real_address.clone()).collect();
        ChaosController {
            tower,
            addr_to_host,
            decoy_hosts: decoys
                .into_iter()
                .map(|d| (d.real_address.clone(), d))
                .collect(),
            decoy_pool,
            obf,
            seed,
            reals,
            virtual_pool,
            mapping: None,
            buffer,
            flows: BTreeMap::new(),
            trace: Vec::new(),
            obfuscated: 0,
        }
    }

    pub fn tower(&self) -> &ChaosTower {
        &self.tower
    }

    fn current_mapping(&mut self, tick: Tick) -> &MappingTable {
        let epoch = tick / self.obf.ticks_per_epoch.max(1);
        let stale = self.mapping.as_ref().map(|m| m.epoch != epoch).unwrap_or(true);
        if stale {
            let table = rotate_mappings(&self.reals, &self.virtual_pool, epoch, self.seed)
                .expect("virtual pool sized at construction");
            self.mapping = Some(table);
        }
        self.mapping.as_ref().unwrap()
    }

    fn flip_draw(&self, packet: &Packet) -> f64 {
        keyed_draw(
            self.seed,
            &[
                "flip",
                packet.dst_address.as_str(),
                &packet.dst_port.to_string(),
                packet.transport.as_str(),
            ],
        )
    }

    fn decision_draw(&self, packet: &Packet) -> f64 {
        keyed_draw(
            self.seed,
            &[
                "decision",
                packet.dst_address.as_str(),
                &packet.dst_port.to_string(),
                packet.transport.as_str(),
            ],
        )
    }

    /// Installs the entries that carry one direction of a flow along
    /// `path`, applying `first_rewrites` at the first switch and
    /// `last_rewrites` just before delivery.
    #[allow(clippy::too_many_arguments)]
    fn install_path(
        api: &mut SimApi<'_>,
        path: &[(String, u32)],
        first_match: FlowMatch,
        transit_match: FlowMatch,
        first_rewrites: Vec<Action>,
        last_rewrites: Vec<Action>,
        priority: u16,
        idle: Tick,
    ) {
        if path.is_empty() {
            return;
        }
        if path.len() == 1 {
            let (sw, port) = &path[0];
            let mut actions = first_rewrites;
            actions.extend(last_rewrites);
            actions.push(Action::Output(OutPort::Port(*port)));
            let _ = api.install_flow(sw, FlowEntry::new(first_match, priority, actions, idle));
            return;
        }
        for (i, (sw, port)) in path.iter().enumerate() {
            let (matcher, mut actions) = if i == 0 {
                (first_match.clone(), first_rewrites.clone())
            } else if i + 1 == path.len() {
                (transit_match.clone(), last_rewrites.clone())
            } else {
                (transit_match.clone(), Vec::new())
            };
            actions.push(Action::Output(OutPort::Port(*port)));
            let _ = api.install_flow(sw, FlowEntry::new(matcher, priority, actions, idle));
        }
    }

    fn exact_match(src: &Address, dst: &Address, tp: TransportKind, dst_port: u16) -> FlowMatch {
        FlowMatch {
            src: Some(src.clone()),
            dst: Some(dst.clone()),
            transport: Some(tp),
            dst_port: Some(dst_port),
        }
    }

    /// Installs both directions of a forward flow. Flows that cross more
    /// than one switch travel under the epoch's virtual addresses; the
    /// egress switch restores the real ones, which keeps end-to-end
    /// reachability intact.
    fn install_forward(
        &mut self,
        api: &mut SimApi<'_>,
        key: &FlowKey,
        virtual_pair: Option<(Address, Address)>,
    ) {
        let idle = api.config().flow_idle_timeout_ticks;
        let src_sw = match api.locate(&key.src) {
            Some((sw, _)) => sw,
            None => return,
        };
        let fwd_path = match api.path_to(&src_sw, &key.dst) {
            Some(p) => p,
            None => return,
        };
        let dst_sw = match api.locate(&key.dst) {
            Some((sw, _)) => sw,
            None => return,
        };
        let rev_path = match api.path_to(&dst_sw, &key.src) {
            Some(p) => p,
            None => return,
        };
        match &virtual_pair {
            Some((v_src, v_dst)) if fwd_path.len() > 1 => {
                Self::install_path(
                    api,
                    &fwd_path,
                    Self::exact_match(&key.src, &key.dst, key.transport, key.dst_port),
                    Self::exact_match(v_src, v_dst, key.transport, key.dst_port),
                    vec![
                        Action::RewriteSrc(v_src.clone()),
                        Action::RewriteDst(v_dst.clone()),
                    ],
                    vec![
                        Action::RewriteSrc(key.src.clone()),
                        Action::RewriteDst(key.dst.clone()),
                    ],
                    PRIO_FORWARD,
                    idle,
                );
                Self::install_path(
                    api,
                    &rev_path,
                    Self::exact_match(&key.dst, &key.src, key.transport, key.src_port),
                    Self::exact_match(v_dst, v_src, key.transport, key.src_port),
                    vec![
                        Action::RewriteSrc(v_dst.clone()),
                        Action::RewriteDst(v_src.clone()),
                    ],
                    vec![
                        Action::RewriteSrc(key.dst.clone()),
                        Action::RewriteDst(key.src.clone()),
                    ],
                    PRIO_FORWARD,
                    idle,
                );
            }
            _ => {
                Self::install_path(
                    api,
                    &fwd_path,
                    Self::exact_match(&key.src, &key.dst, key.transport, key.dst_port),
                    Self::exact_match(&key.src, &key.dst, key.transport, key.dst_port),
                    Vec::new(),
                    Vec::new(),
                    PRIO_FORWARD,
                    idle,
                );
                Self::install_path(
                    api,
                    &rev_path,
                    Self::exact_match(&key.dst, &key.src, key.transport, key.src_port),
                    Self::exact_match(&key.dst, &key.src, key.transport, key.src_port),
                    Vec::new(),
                    Vec::new(),
                    PRIO_FORWARD,
                    idle,
                );
            }
        }
    }

    /// Installs redirect entries: requests are diverted to the decoy and
    /// the decoy's answers masquerade as the original target.
    fn install_redirect(&mut self, api: &mut SimApi<'_>, key: &FlowKey, decoy: &Address) {
        let idle = api.config().flow_idle_timeout_ticks;
        let src_sw = match api.locate(&key.src) {
            Some((sw, _)) => sw,
            None => return,
        };
        if let Some(path) = api.path_to(&src_sw, decoy) {
            Self::install_path(
                api,
                &path,
                Self::exact_match(&key.src, &key.dst, key.transport, key.dst_port),
                Self::exact_match(&key.src, decoy, key.transport, key.dst_port),
                vec![Action::RewriteDst(decoy.clone())],
                Vec::new(),
                PRIO_REDIRECT,
                idle,
            );
        }
        let decoy_sw = match api.locate(decoy) {
            Some((sw, _)) => sw,
            None => return,
        };
        if let Some(path) = api.path_to(&decoy_sw, &key.src) {
            Self::install_path(
                api,
                &path,
                Self::exact_match(decoy, &key.src, key.transport, key.src_port),
                Self::exact_match(&key.dst, &key.src, key.transport, key.src_port),
                vec![Action::RewriteSrc(key.dst.clone())],
                Vec::new(),
                PRIO_REDIRECT,
                idle,
            );
        }
    }

    fn install_drop(&mut self, api: &mut SimApi<'_>, sw: &str, key: &FlowKey) {
        let idle = api.config().flow_idle_timeout_ticks;
        let _ = api.install_flow(
            sw,
            FlowEntry::new(
                Self::exact_match(&key.src, &key.dst, key.transport, key.dst_port),
                PRIO_DROP,
                vec![Action::DropAction],
                idle,
            ),
        );
    }

    /// Handles a packet of a flow whose decision is already pinned.
    fn act_on(
        &mut self,
        api: &mut SimApi<'_>,
        sw: &str,
        packet: Packet,
        record: FlowRecord,
        is_reply: bool,
    ) {
        match record.decision {
            ObfuscationDecision::Forward => {
                let key = if is_reply {
                    packet.flow_key().reversed()
                } else {
                    packet.flow_key()
                };
                self.install_forward(api, &key, record.virtual_pair.clone());
                let _ = api.release_to_table(sw, packet);
            }
            ObfuscationDecision::PortObfuscate => {
                if is_reply {
                    // Server-to-prober leg of a relayed connection.
                    let dst = packet.dst_address.clone();
                    let _ = api.packet_out_to_host(&dst, packet);
                    return;
                }
                if packet.is_probe() {
                    let truth = self
                        .tower
                        .host_by_address(&packet.dst_address)
                        .cloned()
                        .or_else(|| self.decoy_hosts.get(&packet.dst_address).cloned());
                    match truth {
                        Some(host) => {
                            let draw = self.flip_draw(&packet);
                            let now = api.tick();
                            match synthesize_scan_reply(
                                &packet,
                                &host,
                                &mut self.buffer,
                                draw,
                                now,
                                &self.obf,
                            ) {
                                Ok(reply) => {
                                    let _ = api.answer_synthetically(&packet, reply);
                                }
                                Err(_) => api.drop_packet(&packet, "unsupported-probe"),
                            }
                        }
                        None => api.drop_packet(&packet, "unknown-target"),
                    }
                } else {
                    // Non-probe packets of an obfuscated connection are
                    // relayed; the destination still sees the real source.
                    let dst = packet.dst_address.clone();
                    if api.locate(&dst).is_some() {
                        let _ = api.packet_out_to_host(&dst, packet);
                    } else {
                        api.drop_packet(&packet, "unknown-target");
                    }
                }
            }
            ObfuscationDecision::RedirectToDecoy => match record.decoy.clone() {
                Some(decoy) => {
                    let key = if is_reply {
                        packet.flow_key().reversed()
                    } else {
                        packet.flow_key()
                    };
                    self.install_redirect(api, &key, &decoy);
                    let _ = api.release_to_table(sw, packet);
                }
                None => api.drop_packet(&packet, "no-decoy"),
            },
            ObfuscationDecision::Drop => {
                let key = if is_reply {
                    packet.flow_key().reversed()
                } else {
                    packet.flow_key()
                };
                self.install_drop(api, sw, &key);
                api.drop_packet(&packet, "beyond-threshold");
            }
        }
    }
}

impl Controller for ChaosController {
    fn on_tick(&mut self, api: &mut SimApi<'_>) {
        // Keep the epoch's mapping table fresh.
        let tick = api.tick();
        let _ = self.current_mapping(tick);
    }

    fn on_packet_in(&mut self, api: &mut SimApi<'_>, sw: &str, _in_port: u32, packet: Packet) {
        let key = packet.flow_key();
        if let Some(record) = self.flows.get(&key).cloned() {
            self.act_on(api, sw, packet, record, false);
            return;
        }
        if let Some(record) = self.flows.get(&key.reversed()).cloned() {
            self.act_on(api, sw, packet, record, true);
            return;
        }

        // New connection: classify and decide once.
        let tick = api.tick();
        let src_id = self.addr_to_host.get(&packet.src_address).cloned();
        let dst_id = self.addr_to_host.get(&packet.dst_address).cloned();
        let dst_is_decoy = self.decoy_hosts.contains_key(&packet.dst_address);

        let (classification_label, classification, leapfrog) = match (&src_id, &dst_id) {
            (Some(src), Some(dst)) => {
                let verdict = match api.ids_verdict(&packet.src_address) {
                    Verdict::Normal => IdsVerdict::Normal,
                    Verdict::Suspicious => IdsVerdict::Suspicious,
                };
                match self
                    .tower
                    .classify_connection(src, dst, packet.dst_port, verdict, tick)
                {
                    Ok(c) => {
                        let leapfrog = if c == Classification::UnexpectedUp {
                            self.tower.leapfrog_risk(src, dst).unwrap_or(0.0)
                        } else {
                            0.0
                        };
                        (c.as_str().to_string(), Some(c), leapfrog)
                    }
                    Err(_) => ("Unclassifiable".to_string(), None, 0.0),
                }
            }
            (Some(_), None) if dst_is_decoy => ("DecoyTarget".to_string(), None, 0.0),
            _ => ("Unknown".to_string(), None, 0.0),
        };

        let draw = self.decision_draw(&packet);
        let decision = match (&classification, dst_is_decoy) {
            (Some(c), _) => decide(*c, leapfrog, packet.is_request(), draw, &self.tower.config),
            // Traffic aimed straight at a decoy is let through: that is
            // what the bait is for.
            (None, true) => ObfuscationDecision::Forward,
            (None, false) => ObfuscationDecision::Drop,
        };

        self.trace.push(DecisionRecord {
            tick,
            flow: key.clone(),
            classification: classification_label,
            leapfrog,
            decision,
            draw,
        });
        if classification.is_some() && decision != ObfuscationDecision::Forward {
            self.obfuscated += 1;
        }

        let virtual_pair = if decision == ObfuscationDecision::Forward {
            let table = self.current_mapping(tick);
            match (
                table.forward.get(&packet.src_address),
                table.forward.get(&packet.dst_address),
            ) {
                (Some(a), Some(b)) => Some((a.clone(), b.clone())),
                _ => None,
            }
        } else {
            None
        };
        let decoy = if decision == ObfuscationDecision::RedirectToDecoy {
            choose_decoy(&packet, &self.decoy_pool, self.seed).ok().cloned()
        } else {
            None
        };
        let record = FlowRecord {
            decision,
            virtual_pair,
            decoy,
        };
        self.flows.insert(key.clone(), record.clone());
        self.act_on(api, sw, packet, record, false);
    }
}

impl ModeController for ChaosController {
    fn decision_trace(&self) -> String {
        let mut out = String::new();
        for r in &self.trace {
            out.push_str(&r.render());
            out.push('\n');
        }
        out
    }

    fn obfuscated_connections(&self) -> u64 {
        self.obfuscated
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netsim::{IdsConfig, PacketBuilder, SimConfig, Simulation, Topology};
    use crate::tower::{
        build_tower, ServiceRecord, TowerConfig, Transport, VulnerabilityRecord, WhitelistEntry,
    };

    fn service(name: &str, port: u16, banner: &str) -> ServiceRecord {
        ServiceRecord {
            service_name: name.to_string(),
            port,
            transport: Transport::Tcp,
            banner: banner.to_string(),
        }
    }

    fn host(id: &str, addr: &str, sw: &str, cvss: f64) -> HostProfile {
        HostProfile {
            host_id: id.to_string(),
            real_address: Address::new(addr),
            attachment: sw.to_string(),
            services: vec![service("svc", 80, "banner-x")],
            vulnerabilities: vec![VulnerabilityRecord {
                vuln_id: "v".to_string(),
                category: "rce".to_string(),
                cvss_base: cvss,
            }],
            is_decoy: false,
        }
    }

    fn setup() -> (Simulation, ChaosController, Vec<HostProfile>) {
        let topo = Topology {
            switches: vec!["s1".into(), "s2".into(), "s3".into()],
            links: vec![("s1".into(), "s2".into()), ("s2".into(), "s3".into())],
        };
        let hosts = vec![
            host("low", "10.0.0.1", "s1", 1.0),
            host("mid", "10.0.0.2", "s2", 5.0),
            host("high", "10.0.0.3", "s3", 9.0),
        ];
        let decoy = HostProfile {
            host_id: "trap".to_string(),
            real_address: Address::new("10.0.9.1"),
            attachment: "s2".to_string(),
            services: vec![service("svc", 8081, "trap-banner")],
            vulnerabilities: vec![],
            is_decoy: true,
        };
        let config = TowerConfig {
            alpha: 0.0,
            layer_count: 3,
            threshold: 0.5,
            random_index: 0.5,
            siv_table: [("svc".to_string(), 5.0)].into_iter().collect(),
            ..TowerConfig::default()
        };
        let mut tower = build_tower(&hosts, &config).unwrap();
        tower.whitelist.insert(WhitelistEntry {
            src_group: tower.group_of("mid").unwrap().group_id.clone(),
            dst_group: tower.group_of("high").unwrap().group_id.clone(),
            dst_port: 80,
            window: None,
        });
        let mut all = hosts.clone();
        all.push(decoy.clone());
        let sim = Simulation::new(&topo, &all, SimConfig::default(), IdsConfig::default()).unwrap();
        let ctl = ChaosController::new(tower, vec![decoy], ObfuscationConfig::default(), 7);
        (sim, ctl, hosts)
    }

    #[test]
    fn whitelisted_flow_is_forwarded_end_to_end() {
        let (mut sim, mut ctl, _) = setup();
        let p = PacketBuilder::data(Address::new("10.0.0.2"), Address::new("10.0.0.3"), 41000, 80, "hello");
        let id = sim.inject(p).unwrap();
        sim.run_until_quiescent(&mut ctl, 50);
        assert_eq!(sim.fate_of(id), Some(crate::netsim::Fate::Delivered));
        let delivered = sim
            .deliveries
            .iter()
            .find(|d| d.packet.id == id)
            .expect("delivered packet");
        assert_eq!(delivered.packet.src_address, Address::new("10.0.0.2"));
        assert_eq!(delivered.packet.payload_tag, "data:hello");
        assert_eq!(ctl.obfuscated_connections(), 0);
    }

    #[test]
    fn transit_hops_of_forwarded_flows_hide_real_addresses() {
        let (mut sim, mut ctl, _) = setup();
        let p = PacketBuilder::data(Address::new("10.0.0.2"), Address::new("10.0.0.3"), 41001, 80, "x");
        sim.inject(p).unwrap();
        sim.run_until_quiescent(&mut ctl, 50);
        // After the ingress rewrite, the s2->s3 hop must not expose reals.
        let transit: Vec<&crate::netsim::Event> = sim
            .events
            .iter()
            .filter(|e| {
                matches!(e, crate::netsim::Event::Forwarded { switch, flow, .. }
                    if switch == "s2" && flow.contains("->") && flow.contains("198.18."))
            })
            .collect();
        assert!(!transit.is_empty(), "expected virtual-addressed transit hops");
    }

    #[test]
    fn beyond_threshold_upward_flow_is_dropped() {
        let (mut sim, mut ctl, _) = setup();
        // low -> high jumps 2 of 3 layers: leapfrog 0.667 > 0.5.
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.3"), 41002, 80);
        let id = sim.inject(p).unwrap();
        sim.run_until_quiescent(&mut ctl, 50);
        assert_eq!(sim.fate_of(id), Some(crate::netsim::Fate::DroppedPolicy));
        assert_eq!(ctl.obfuscated_connections(), 1);
        assert!(ctl.decision_trace().contains("decision=Drop"));
    }

    #[test]
    fn within_threshold_upward_flow_is_obfuscated_or_redirected() {
        let (mut sim, mut ctl, _) = setup();
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 41003, 80);
        let id = sim.inject(p).unwrap();
        sim.run_until_quiescent(&mut ctl, 50);
        let fate = sim.fate_of(id).unwrap();
        assert!(
            matches!(
                fate,
                crate::netsim::Fate::AnsweredSynthetically | crate::netsim::Fate::AbsorbedByDecoy
            ),
            "unexpected fate {fate:?}"
        );
        assert_eq!(ctl.obfuscated_connections(), 1);
    }

    #[test]
    fn decisions_are_pinned_per_flow() {
        let (mut sim, mut ctl, _) = setup();
        for _ in 0..3 {
            let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 41004, 80);
            sim.inject(p).unwrap();
            sim.run_until_quiescent(&mut ctl, 50);
        }
        // One decision despite three identical packets.
        assert_eq!(ctl.trace.len(), 1);
    }

    #[test]
    fn mtd_controller_obfuscates_everything() {
        let topo = Topology {
            switches: vec!["s1".into()],
            links: vec![],
        };
        let hosts = vec![host("a", "10.0.0.1", "s1", 1.0), host("b", "10.0.0.2", "s1", 2.0)];
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        let mut ctl = StaticMtdController::new(hosts, ObfuscationConfig::default(), 3);
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 41005, 80);
        let id = sim.inject(p).unwrap();
        sim.run_until_quiescent(&mut ctl, 50);
        assert_eq!(sim.fate_of(id), Some(crate::netsim::Fate::AnsweredSynthetically));
        assert_eq!(ctl.obfuscated_connections(), 1);
    }
}
