//! Deterministic discrete-tick network simulation: hosts, flow-table
//! switches, a controller event channel, and a rate-based IDS stub.
//!
//! One tick moves every in-flight packet one hop. A switch looks the
//! packet up in its flow table and either applies the matched actions or
//! raises a packet-in to the controller; the controller's flow-mods apply
//! immediately and its packet-outs enter the network on the next tick.
//! Given the same topology, workload, and seed the full event trace is
//! identical run to run.

use crate::addr::Address;
use crate::tower::{HostProfile, Transport};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type Tick = u64;
pub type PacketId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Tcp,
    Udp,
    Icmp,
}

impl TransportKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            TransportKind::Tcp => "tcp",
            TransportKind::Udp => "udp",
            TransportKind::Icmp => "icmp",
        }
    }

    pub fn matches_service(&self, svc: Transport) -> bool {
        matches!(
            (self, svc),
            (TransportKind::Tcp, Transport::Tcp) | (TransportKind::Udp, Transport::Udp)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Flag {
    Syn,
    Ack,
    Rst,
    Fin,
    Echo,
    EchoReply,
    Unreachable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Packet {
    /// Assigned when the packet enters the network; 0 beforehand.
    pub id: PacketId,
    pub src_address: Address,
    pub dst_address: Address,
    pub transport: TransportKind,
    pub src_port: u16,
    pub dst_port: u16,
    pub flags: BTreeSet<Flag>,
    pub ttl: u8,
    /// Opaque payload label, e.g. "banner-request" or "exploit:ms08-067".
    pub payload_tag: String,
}

impl Packet {
    /// Reconnaissance packets the obfuscation engine may answer itself.
    /// Payload-carrying connection packets (exploits, data) are not probes.
    pub fn is_probe(&self) -> bool {
        match self.transport {
            TransportKind::Icmp => self.flags.contains(&Flag::Echo),
            TransportKind::Tcp => {
                self.flags.contains(&Flag::Syn)
                    && !self.flags.contains(&Flag::Ack)
                    && (self.payload_tag.is_empty() || self.payload_tag == "banner-request")
            }
            TransportKind::Udp => self.payload_tag == "udp-probe",
        }
    }

    /// Connection-initiating packets, as opposed to replies.
    pub fn is_request(&self) -> bool {
        self.is_probe()
            || self.payload_tag.starts_with("exploit:")
            || self.payload_tag.starts_with("data:")
    }

    /// Skeleton of a reply: endpoints and ports swapped, flags cleared.
    pub fn reply_template(&self) -> Packet {
        Packet {
            id: 0,
            src_address: self.dst_address.clone(),
            dst_address: self.src_address.clone(),
            transport: self.transport,
            src_port: self.dst_port,
            dst_port: self.src_port,
            flags: BTreeSet::new(),
            ttl: 64,
            payload_tag: String::new(),
        }
    }

    pub fn flow_key(&self) -> FlowKey {
        FlowKey {
            src: self.src_address.clone(),
            dst: self.dst_address.clone(),
            transport: self.transport,
            src_port: self.src_port,
            dst_port: self.dst_port,
        }
    }

    pub fn summary(&self) -> String {
        format!(
            "{}:{}->{}:{}/{}",
            self.src_address, self.src_port, self.dst_address, self.dst_port,
            self.transport.as_str()
        )
    }
}

/// Five-tuple identifying a connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FlowKey {
    pub src: Address,
    pub dst: Address,
    pub transport: TransportKind,
    pub src_port: u16,
    pub dst_port: u16,
}

impl FlowKey {
    pub fn reversed(&self) -> FlowKey {
        FlowKey {
            src: self.dst.clone(),
            dst: self.src.clone(),
            transport: self.transport,
            src_port: self.dst_port,
            dst_port: self.src_port,
        }
    }

    /// The request direction of whichever side of the connection this is.
    pub fn canonical(&self) -> FlowKey {
        if (&self.src, self.src_port) <= (&self.dst, self.dst_port) {
            self.clone()
        } else {
            self.reversed()
        }
    }
}

/// Convenience constructors for the packet shapes the harness sends.
pub struct PacketBuilder;

impl PacketBuilder {
    pub fn tcp_syn(src: Address, dst: Address, src_port: u16, dst_port: u16) -> Packet {
        Packet {
            id: 0,
            src_address: src,
            dst_address: dst,
            transport: TransportKind::Tcp,
            src_port,
            dst_port,
            flags: BTreeSet::from([Flag::Syn]),
            ttl: 64,
            payload_tag: String::new(),
        }
    }

    pub fn udp_probe(src: Address, dst: Address, src_port: u16, dst_port: u16) -> Packet {
        Packet {
            id: 0,
            src_address: src,
            dst_address: dst,
            transport: TransportKind::Udp,
            src_port,
            dst_port,
            flags: BTreeSet::new(),
            ttl: 64,
            payload_tag: "udp-probe".to_string(),
        }
    }

    pub fn icmp_echo(src: Address, dst: Address) -> Packet {
        Packet {
            id: 0,
            src_address: src,
            dst_address: dst,
            transport: TransportKind::Icmp,
            src_port: 0,
            dst_port: 0,
            flags: BTreeSet::from([Flag::Echo]),
            ttl: 64,
            payload_tag: String::new(),
        }
    }

    pub fn banner_request(src: Address, dst: Address, src_port: u16, dst_port: u16) -> Packet {
        let mut p = Self::tcp_syn(src, dst, src_port, dst_port);
        p.payload_tag = "banner-request".to_string();
        p
    }

    pub fn exploit(src: Address, dst: Address, src_port: u16, dst_port: u16, vuln_id: &str) -> Packet {
        let mut p = Self::tcp_syn(src, dst, src_port, dst_port);
        p.payload_tag = format!("exploit:{vuln_id}");
        p
    }

    pub fn data(src: Address, dst: Address, src_port: u16, dst_port: u16, tag: &str) -> Packet {
        let mut p = Self::tcp_syn(src, dst, src_port, dst_port);
        p.flags = BTreeSet::from([Flag::Ack]);
        p.payload_tag = format!("data:{tag}");
        p
    }
}

// ---------------------------------------------------------------------------
// Flow tables
// ---------------------------------------------------------------------------

/// Partial predicate over (src, dst, transport, dst_port); `None` matches
/// anything.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowMatch {
    pub src: Option<Address>,
    pub dst: Option<Address>,
    pub transport: Option<TransportKind>,
    pub dst_port: Option<u16>,
}

impl FlowMatch {
    pub fn matches(&self, p: &Packet) -> bool {
        self.src.as_ref().is_none_or(|a| a == &p.src_address)
            && self.dst.as_ref().is_none_or(|a| a == &p.dst_address)
            && self.transport.is_none_or(|t| t == p.transport)
            && self.dst_port.is_none_or(|q| q == p.dst_port)
    }

    pub fn summary(&self) -> String {
        let f = |o: &Option<Address>| o.as_ref().map(|a| a.to_string()).unwrap_or("*".into());
        format!(
            "src={} dst={} tp={} dport={}",
            f(&self.src),
            f(&self.dst),
            self.transport.map(|t| t.as_str().to_string()).unwrap_or("*".into()),
            self.dst_port.map(|p| p.to_string()).unwrap_or("*".into()),
        )
    }
}

/// Where an Output action sends the packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutPort {
    /// A specific switch port.
    Port(u32),
    /// Traditional shortest-path forwarding toward the packet's current
    /// destination address.
    Normal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    RewriteSrc(Address),
    RewriteDst(Address),
    Output(OutPort),
    SendToController,
    DropAction,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowCounters {
    pub packets: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowEntry {
    pub matcher: FlowMatch,
    pub priority: u16,
    pub actions: Vec<Action>,
    pub counters: FlowCounters,
    /// 0 means the entry never expires.
    pub idle_timeout: Tick,
}

impl FlowEntry {
    pub fn new(matcher: FlowMatch, priority: u16, actions: Vec<Action>, idle_timeout: Tick) -> Self {
        FlowEntry {
            matcher,
            priority,
            actions,
            counters: FlowCounters::default(),
            idle_timeout,
        }
    }
}

#[derive(Debug, Clone)]
struct InstalledEntry {
    entry: FlowEntry,
    seq: u64,
    last_matched: Tick,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Endpoint {
    Host(Address),
    Switch(String),
}

#[derive(Debug, Clone)]
pub struct Switch {
    pub switch_id: String,
    pub ports: BTreeMap<u32, Endpoint>,
    table: Vec<InstalledEntry>,
}

pub enum MatchResult {
    Actions(Vec<Action>),
    TableMiss,
}

impl Switch {
    /// Highest-priority matching entry wins; equal priorities fall back to
    /// installation order. Counters of the winner are bumped.
    pub fn match_packet(&mut self, packet: &Packet, now: Tick) -> MatchResult {
        let mut winner: Option<usize> = None;
        for (i, slot) in self.table.iter().enumerate() {
            if !slot.entry.matcher.matches(packet) {
                continue;
            }
            winner = match winner {
                None => Some(i),
                Some(w) => {
                    let cur = &self.table[w];
                    if slot.entry.priority > cur.entry.priority
                        || (slot.entry.priority == cur.entry.priority && slot.seq < cur.seq)
                    {
                        Some(i)
                    } else {
                        Some(w)
                    }
                }
            };
        }
        match winner {
            Some(i) => {
                let slot = &mut self.table[i];
                slot.entry.counters.packets += 1;
                slot.entry.counters.bytes += 64 + packet.payload_tag.len() as u64;
                slot.last_matched = now;
                MatchResult::Actions(slot.entry.actions.clone())
            }
            None => MatchResult::TableMiss,
        }
    }

    pub fn entries(&self) -> Vec<&FlowEntry> {
        self.table.iter().map(|s| &s.entry).collect()
    }
}

// ---------------------------------------------------------------------------
// Controller channel
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerEvent {
    PacketIn {
        switch_id: String,
        in_port: u32,
        packet: Packet,
    },
    FlowMod {
        switch_id: String,
        entry: FlowEntry,
    },
    PacketOut {
        switch_id: String,
        out_port: u32,
        packet: Packet,
    },
}

/// A protection-mode control program driven by packet-in events.
pub trait Controller {
    /// Called once at the start of every tick, before arrivals move.
    fn on_tick(&mut self, api: &mut SimApi<'_>);
    /// Called for each packet-in, in FIFO order within the tick.
    fn on_packet_in(&mut self, api: &mut SimApi<'_>, switch_id: &str, in_port: u32, packet: Packet);
}

/// Controller that never receives traffic; used with a pre-installed
/// allow-all posture.
pub struct NullController;

impl Controller for NullController {
    fn on_tick(&mut self, _api: &mut SimApi<'_>) {}
    fn on_packet_in(&mut self, api: &mut SimApi<'_>, _sw: &str, _port: u32, packet: Packet) {
        api.drop_packet(&packet, "no-controller");
    }
}

// ---------------------------------------------------------------------------
// IDS stub
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdsConfig {
    /// Distinct destination ports on one target within the window.
    pub port_scan_k: usize,
    /// Distinct targets within the window.
    pub sweep_k: usize,
    pub window_ticks: Tick,
}

impl Default for IdsConfig {
    fn default() -> Self {
        IdsConfig {
            port_scan_k: 15,
            sweep_k: 10,
            window_ticks: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Normal,
    Suspicious,
}

#[derive(Debug, Clone, Default)]
pub struct IdsState {
    pub config: IdsConfig,
    contacts: BTreeMap<Address, Vec<(Tick, Address, u16)>>,
}

impl IdsState {
    pub fn new(config: IdsConfig) -> Self {
        IdsState {
            config,
            contacts: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, src: &Address, dst: &Address, dst_port: u16, tick: Tick) {
        self.contacts
            .entry(src.clone())
            .or_default()
            .push((tick, dst.clone(), dst_port));
    }

    /// Suspicious iff, within the window, the source touched at least
    /// `port_scan_k` distinct ports on one target or `sweep_k` distinct
    /// targets.
    pub fn inspect(&self, src: &Address, now: Tick) -> Verdict {
        let history = match self.contacts.get(src) {
            Some(h) => h,
            None => return Verdict::Normal,
        };
        let horizon = now.saturating_sub(self.config.window_ticks);
        let mut per_target: BTreeMap<&Address, BTreeSet<u16>> = BTreeMap::new();
        let mut targets: BTreeSet<&Address> = BTreeSet::new();
        for (tick, dst, port) in history {
            if *tick < horizon {
                continue;
            }
            targets.insert(dst);
            per_target.entry(dst).or_default().insert(*port);
        }
        if targets.len() >= self.config.sweep_k {
            return Verdict::Suspicious;
        }
        if per_target.values().any(|ports| ports.len() >= self.config.port_scan_k) {
            return Verdict::Suspicious;
        }
        Verdict::Normal
    }
}

/// Standalone form of the inspection rule, for callers holding a raw
/// history instead of an [`IdsState`].
pub fn ids_inspect(
    flow_history: &[(Tick, Address, Address, u16)],
    src: &Address,
    now: Tick,
    config: &IdsConfig,
) -> Verdict {
    let mut state = IdsState::new(config.clone());
    for (tick, s, d, p) in flow_history {
        state.record(s, d, *p, *tick);
    }
    state.inspect(src, now)
}

// ---------------------------------------------------------------------------
// Events, fates
// ---------------------------------------------------------------------------

/// Terminal outcome of one injected packet. Every packet ends in exactly
/// one of these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Fate {
    Delivered,
    DroppedTtl,
    DroppedPolicy,
    AbsorbedByDecoy,
    AnsweredSynthetically,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Event {
    Injected { tick: Tick, id: PacketId, flow: String, payload: String },
    Forwarded { tick: Tick, id: PacketId, switch: String, flow: String, out_port: u32 },
    PacketIn { tick: Tick, id: PacketId, switch: String, in_port: u32, flow: String },
    FlowMod { tick: Tick, switch: String, priority: u16, matcher: String },
    PacketOut { tick: Tick, id: PacketId, switch: String, out_port: String },
    Delivered { tick: Tick, id: PacketId, host: String, src_seen: String, payload: String },
    AbsorbedByDecoy { tick: Tick, id: PacketId, decoy: String },
    DecoyAlert { tick: Tick, id: PacketId, decoy: String, flow: String },
    DroppedTtl { tick: Tick, id: PacketId, switch: String },
    DroppedPolicy { tick: Tick, id: PacketId, at: String, reason: String },
    AnsweredSynthetically { tick: Tick, id: PacketId, replied: bool },
    ExploitDelivered { tick: Tick, id: PacketId, host: String, vuln_id: String, vulnerable: bool },
}

impl Event {
    pub fn render(&self) -> String {
        match self {
            Event::Injected { tick, id, flow, payload } => {
                format!("tick={tick} ev=injected id={id} flow={flow} payload={payload}")
            }
            Event::Forwarded { tick, id, switch, flow, out_port } => {
                format!("tick={tick} ev=forwarded id={id} sw={switch} flow={flow} out={out_port}")
            }
            Event::PacketIn { tick, id, switch, in_port, flow } => {
                format!("tick={tick} ev=packet_in id={id} sw={switch} in={in_port} flow={flow}")
            }
            Event::FlowMod { tick, switch, priority, matcher } => {
                format!("tick={tick} ev=flow_mod sw={switch} prio={priority} match=[{matcher}]")
            }
            Event::PacketOut { tick, id, switch, out_port } => {
                format!("tick={tick} ev=packet_out id={id} sw={switch} out={out_port}")
            }
            Event::Delivered { tick, id, host, src_seen, payload } => {
                format!("tick={tick} ev=delivered id={id} host={host} src={src_seen} payload={payload}")
            }
            Event::AbsorbedByDecoy { tick, id, decoy } => {
                format!("tick={tick} ev=absorbed id={id} decoy={decoy}")
            }
            Event::DecoyAlert { tick, id, decoy, flow } => {
                format!("tick={tick} ev=decoy_alert id={id} decoy={decoy} flow={flow}")
            }
            Event::DroppedTtl { tick, id, switch } => {
                format!("tick={tick} ev=dropped_ttl id={id} sw={switch}")
            }
            Event::DroppedPolicy { tick, id, at, reason } => {
                format!("tick={tick} ev=dropped_policy id={id} at={at} reason={reason}")
            }
            Event::AnsweredSynthetically { tick, id, replied } => {
                format!("tick={tick} ev=synth id={id} replied={replied}")
            }
            Event::ExploitDelivered { tick, id, host, vuln_id, vulnerable } => {
                format!("tick={tick} ev=exploit id={id} host={host} vuln={vuln_id} vulnerable={vulnerable}")
            }
        }
    }
}

/// A packet as received by a host, kept for reachability checks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Delivery {
    pub tick: Tick,
    pub host: Address,
    pub packet: Packet,
}

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown switch {0}")]
    UnknownSwitch(String),
    #[error("unknown port {port} on switch {switch}")]
    UnknownPort { switch: String, port: u32 },
    #[error("address {0} is not attached to any switch")]
    UnknownAddress(Address),
}

// ---------------------------------------------------------------------------
// Topology
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    pub switches: Vec<String>,
    pub links: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
struct Routing {
    /// host address -> (switch, port on that switch)
    host_port: BTreeMap<Address, (String, u32)>,
    /// (switch, destination switch) -> out port
    next_hop: BTreeMap<(String, String), u32>,
}

fn build_switches(
    topo: &Topology,
    hosts: &[HostProfile],
) -> Result<(BTreeMap<String, Switch>, Routing), SimError> {
    let mut switches: BTreeMap<String, Switch> = topo
        .switches
        .iter()
        .map(|id| {
            (
                id.clone(),
                Switch {
                    switch_id: id.clone(),
                    ports: BTreeMap::new(),
                    table: Vec::new(),
                },
            )
        })
        .collect();

    let mut host_port = BTreeMap::new();
    let mut sorted_hosts: Vec<&HostProfile> = hosts.iter().collect();
    sorted_hosts.sort_by(|a, b| a.real_address.cmp(&b.real_address));
    for h in sorted_hosts {
        let sw = switches
            .get_mut(&h.attachment)
            .ok_or_else(|| SimError::UnknownSwitch(h.attachment.clone()))?;
        let port = sw.ports.keys().max().copied().unwrap_or(0) + 1;
        sw.ports.insert(port, Endpoint::Host(h.real_address.clone()));
        host_port.insert(h.real_address.clone(), (h.attachment.clone(), port));
    }

    let mut sorted_links = topo.links.clone();
    sorted_links.sort();
    let mut peer_port: BTreeMap<(String, String), u32> = BTreeMap::new();
    for (a, b) in &sorted_links {
        for (from, to) in [(a, b), (b, a)] {
            let sw = switches
                .get_mut(from)
                .ok_or_else(|| SimError::UnknownSwitch(from.clone()))?;
            let port = sw.ports.keys().max().copied().unwrap_or(0) + 1;
            sw.ports.insert(port, Endpoint::Switch(to.clone()));
            peer_port.insert((from.clone(), to.clone()), port);
        }
    }

    // All-pairs next hop by BFS from each switch, neighbors in sorted order.
    let mut adjacency: BTreeMap<&String, Vec<&String>> = BTreeMap::new();
    for (a, b) in &sorted_links {
        adjacency.entry(a).or_default().push(b);
        adjacency.entry(b).or_default().push(a);
    }
    for neighbors in adjacency.values_mut() {
        neighbors.sort();
    }
    let mut next_hop = BTreeMap::new();
    for start in &topo.switches {
        let mut first_step: BTreeMap<&String, &String> = BTreeMap::new();
        let mut visited = BTreeSet::from([start]);
        let mut frontier = vec![start];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for node in frontier {
                for peer in adjacency.get(node).into_iter().flatten() {
                    if visited.insert(peer) {
                        let via = if node == start {
                            peer
                        } else {
                            first_step[node]
                        };
                        first_step.insert(peer, via);
                        next.push(*peer);
                    }
                }
            }
            frontier = next;
        }
        for (dst, via) in first_step {
            next_hop.insert(
                (start.clone(), dst.clone()),
                peer_port[&(start.clone(), (*via).clone())],
            );
        }
    }

    Ok((switches, Routing { host_port, next_hop }))
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Extra ticks a packet spends on the controller round trip.
    pub controller_delay_ticks: Tick,
    /// Idle timeout stamped on reactive flow entries.
    pub flow_idle_timeout_ticks: Tick,
    pub default_ttl: u8,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            controller_delay_ticks: 1,
            flow_idle_timeout_ticks: 200,
            default_ttl: 64,
        }
    }
}

#[derive(Debug, Clone)]
struct Arrival {
    packet: Packet,
    node: Endpoint,
    in_port: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimCounters {
    /// Packet-in events handled by the controller: its decision workload.
    pub controller_ops: u64,
    pub flow_mods: u64,
    pub packet_outs: u64,
    pub injected: u64,
}

pub struct Simulation {
    pub config: SimConfig,
    switches: BTreeMap<String, Switch>,
    routing: Routing,
    hosts: BTreeMap<Address, HostProfile>,
    arrivals: BTreeMap<Tick, Vec<Arrival>>,
    packet_in_queue: Vec<(String, u32, Packet)>,
    tick: Tick,
    next_packet_id: PacketId,
    pub events: Vec<Event>,
    fates: BTreeMap<PacketId, Fate>,
    inject_tick: BTreeMap<PacketId, Tick>,
    fate_tick: BTreeMap<PacketId, Tick>,
    pub deliveries: Vec<Delivery>,
    pub ids: IdsState,
    pub counters: SimCounters,
}

impl Simulation {
    pub fn new(
        topo: &Topology,
        hosts: &[HostProfile],
        config: SimConfig,
        ids_config: IdsConfig,
    ) -> Result<Simulation, SimError> {
        let (switches, routing) = build_switches(topo, hosts)?;
        Ok(Simulation {
            config,
            switches,
            routing,
            hosts: hosts
                .iter()
                .map(|h| (h.real_address.clone(), h.clone()))
                .collect(),
            arrivals: BTreeMap::new(),
            packet_in_queue: Vec::new(),
            tick: 0,
            next_packet_id: 1,
            events: Vec::new(),
            fates: BTreeMap::new(),
            inject_tick: BTreeMap::new(),
            fate_tick: BTreeMap::new(),
            deliveries: Vec::new(),
            ids: IdsState::new(ids_config),
            counters: SimCounters::default(),
        })
    }

    pub fn tick(&self) -> Tick {
        self.tick
    }

    pub fn host(&self, addr: &Address) -> Option<&HostProfile> {
        self.hosts.get(addr)
    }

    pub fn fate_of(&self, id: PacketId) -> Option<Fate> {
        self.fates.get(&id).copied()
    }

    pub fn fates(&self) -> &BTreeMap<PacketId, Fate> {
        &self.fates
    }

    pub fn latency_of(&self, id: PacketId) -> Option<Tick> {
        match (self.inject_tick.get(&id), self.fate_tick.get(&id)) {
            (Some(a), Some(b)) => Some(b.saturating_sub(*a)),
            _ => None,
        }
    }

    pub fn switch(&self, id: &str) -> Option<&Switch> {
        self.switches.get(id)
    }

    pub fn locate(&self, addr: &Address) -> Option<(String, u32)> {
        self.routing.host_port.get(addr).cloned()
    }

    /// Sends a packet from a host into the network; it reaches the
    /// attachment switch on the next tick. Returns the assigned packet id.
    pub fn inject(&mut self, packet: Packet) -> Result<PacketId, SimError> {
        let (sw, port) = self
            .routing
            .host_port
            .get(&packet.src_address)
            .cloned()
            .ok_or_else(|| SimError::UnknownAddress(packet.src_address.clone()))?;
        let mut packet = packet;
        packet.id = self.next_packet_id;
        self.next_packet_id += 1;
        self.counters.injected += 1;
        self.ids.record(
            &packet.src_address,
            &packet.dst_address,
            packet.dst_port,
            self.tick,
        );
        self.events.push(Event::Injected {
            tick: self.tick,
            id: packet.id,
            flow: packet.summary(),
            payload: packet.payload_tag.clone(),
        });
        self.inject_tick.insert(packet.id, self.tick);
        let id = packet.id;
        self.arrivals.entry(self.tick + 1).or_default().push(Arrival {
            packet,
            node: Endpoint::Switch(sw),
            in_port: port,
        });
        Ok(id)
    }

    /// Installs a flow entry, keeping the table ordered by priority then
    /// installation sequence.
    pub fn install_flow(&mut self, switch_id: &str, entry: FlowEntry) -> Result<(), SimError> {
        let now = self.tick;
        let seq = self.counters.flow_mods;
        let sw = self
            .switches
            .get_mut(switch_id)
            .ok_or_else(|| SimError::UnknownSwitch(switch_id.to_string()))?;
        self.counters.flow_mods += 1;
        self.events.push(Event::FlowMod {
            tick: now,
            switch: switch_id.to_string(),
            priority: entry.priority,
            matcher: entry.matcher.summary(),
        });
        sw.table.push(InstalledEntry {
            entry,
            seq,
            last_matched: now,
        });
        sw.table.sort_by(|a, b| {
            b.entry
                .priority
                .cmp(&a.entry.priority)
                .then(a.seq.cmp(&b.seq))
        });
        Ok(())
    }

    /// Emits a packet from a switch port on the controller's behalf.
    pub fn packet_out(
        &mut self,
        switch_id: &str,
        out_port: u32,
        packet: Packet,
    ) -> Result<(), SimError> {
        let sw = self
            .switches
            .get(switch_id)
            .ok_or_else(|| SimError::UnknownSwitch(switch_id.to_string()))?;
        let endpoint = sw
            .ports
            .get(&out_port)
            .ok_or_else(|| SimError::UnknownPort {
                switch: switch_id.to_string(),
                port: out_port,
            })?
            .clone();
        let mut packet = packet;
        if packet.id == 0 {
            packet.id = self.next_packet_id;
            self.next_packet_id += 1;
            self.inject_tick.insert(packet.id, self.tick);
        }
        self.counters.packet_outs += 1;
        self.events.push(Event::PacketOut {
            tick: self.tick,
            id: packet.id,
            switch: switch_id.to_string(),
            out_port: out_port.to_string(),
        });
        let delay = self.config.controller_delay_ticks.max(1);
        self.arrivals.entry(self.tick + delay).or_default().push(Arrival {
            packet,
            node: endpoint,
            in_port: 0,
        });
        Ok(())
    }

    /// Packet-out that re-enters the switch pipeline, so the packet is
    /// matched against freshly installed entries.
    pub fn packet_out_to_table(&mut self, switch_id: &str, packet: Packet) -> Result<(), SimError> {
        if !self.switches.contains_key(switch_id) {
            return Err(SimError::UnknownSwitch(switch_id.to_string()));
        }
        self.counters.packet_outs += 1;
        self.events.push(Event::PacketOut {
            tick: self.tick,
            id: packet.id,
            switch: switch_id.to_string(),
            out_port: "table".to_string(),
        });
        let delay = self.config.controller_delay_ticks.max(1);
        self.arrivals.entry(self.tick + delay).or_default().push(Arrival {
            packet,
            node: Endpoint::Switch(switch_id.to_string()),
            in_port: 0,
        });
        Ok(())
    }

    fn settle_fate(&mut self, id: PacketId, fate: Fate) {
        self.fates.entry(id).or_insert(fate);
        self.fate_tick.entry(id).or_insert(self.tick);
    }

    fn route_normal(&self, at_switch: &str, dst: &Address) -> Option<u32> {
        match self.routing.host_port.get(dst) {
            Some((sw, port)) if sw == at_switch => Some(*port),
            Some((sw, _)) => self.routing.next_hop.get(&(at_switch.to_string(), sw.clone())).copied(),
            None => None,
        }
    }

    fn process_at_switch(&mut self, switch_id: String, in_port: u32, mut packet: Packet) {
        packet.ttl = packet.ttl.saturating_sub(1);
        if packet.ttl == 0 {
            self.events.push(Event::DroppedTtl {
                tick: self.tick,
                id: packet.id,
                switch: switch_id.clone(),
            });
            self.settle_fate(packet.id, Fate::DroppedTtl);
            return;
        }
        let now = self.tick;
        let result = self
            .switches
            .get_mut(&switch_id)
            .map(|sw| sw.match_packet(&packet, now));
        let actions = match result {
            Some(MatchResult::Actions(actions)) => actions,
            Some(MatchResult::TableMiss) => {
                self.events.push(Event::PacketIn {
                    tick: self.tick,
                    id: packet.id,
                    switch: switch_id.clone(),
                    in_port,
                    flow: packet.summary(),
                });
                self.packet_in_queue.push((switch_id, in_port, packet));
                return;
            }
            None => {
                self.settle_fate(packet.id, Fate::DroppedPolicy);
                return;
            }
        };
        for action in actions {
            match action {
                Action::RewriteSrc(a) => packet.src_address = a,
                Action::RewriteDst(a) => packet.dst_address = a,
                Action::Output(OutPort::Port(port)) => {
                    let endpoint = self.switches[&switch_id].ports.get(&port).cloned();
                    match endpoint {
                        Some(node) => {
                            self.events.push(Event::Forwarded {
                                tick: self.tick,
                                id: packet.id,
                                switch: switch_id.clone(),
                                flow: packet.summary(),
                                out_port: port,
                            });
                            self.emit(&switch_id, node, packet);
                        }
                        None => {
                            self.events.push(Event::DroppedPolicy {
                                tick: self.tick,
                                id: packet.id,
                                at: switch_id.clone(),
                                reason: "bad-port".to_string(),
                            });
                            self.settle_fate(packet.id, Fate::DroppedPolicy);
                        }
                    }
                    return;
                }
                Action::Output(OutPort::Normal) => {
                    match self.route_normal(&switch_id, &packet.dst_address) {
                        Some(port) => {
                            let node = self.switches[&switch_id].ports[&port].clone();
                            self.events.push(Event::Forwarded {
                                tick: self.tick,
                                id: packet.id,
                                switch: switch_id.clone(),
                                flow: packet.summary(),
                                out_port: port,
                            });
                            self.emit(&switch_id, node, packet);
                        }
                        None => {
                            self.events.push(Event::DroppedPolicy {
                                tick: self.tick,
                                id: packet.id,
                                at: switch_id.clone(),
                                reason: "no-route".to_string(),
                            });
                            self.settle_fate(packet.id, Fate::DroppedPolicy);
                        }
                    }
                    return;
                }
                Action::SendToController => {
                    self.events.push(Event::PacketIn {
                        tick: self.tick,
                        id: packet.id,
                        switch: switch_id.clone(),
                        in_port,
                        flow: packet.summary(),
                    });
                    self.packet_in_queue.push((switch_id, in_port, packet));
                    return;
                }
                Action::DropAction => {
                    self.events.push(Event::DroppedPolicy {
                        tick: self.tick,
                        id: packet.id,
                        at: switch_id.clone(),
                        reason: "drop-entry".to_string(),
                    });
                    self.settle_fate(packet.id, Fate::DroppedPolicy);
                    return;
                }
            }
        }
        // An action list with no terminal action sinks the packet.
        self.events.push(Event::DroppedPolicy {
            tick: self.tick,
            id: packet.id,
            at: switch_id,
            reason: "no-output".to_string(),
        });
        self.settle_fate(packet.id, Fate::DroppedPolicy);
    }

    fn emit(&mut self, from_switch: &str, node: Endpoint, packet: Packet) {
        match node {
            // The access link is free: leaving the last switch delivers
            // within the same tick.
            Endpoint::Host(addr) => self.process_at_host(addr, packet),
            Endpoint::Switch(sw) => {
                // The ingress port on the receiving switch is the one
                // facing the sender; needed for packet-in bookkeeping.
                let in_port = self
                    .switches
                    .get(&sw)
                    .and_then(|s| {
                        s.ports
                            .iter()
                            .find(
                                |(_, ep)| matches!(ep, Endpoint::Switch(peer) if peer == from_switch),
                            )
                            .map(|(p, _)| *p)
                    })
                    .unwrap_or(0);
                self.arrivals.entry(self.tick + 1).or_default().push(Arrival {
                    packet,
                    node: Endpoint::Switch(sw),
                    in_port,
                });
            }
        }
    }

    fn process_at_host(&mut self, addr: Address, packet: Packet) {
        let host = match self.hosts.get(&addr) {
            Some(h) => h.clone(),
            None => {
                self.settle_fate(packet.id, Fate::DroppedPolicy);
                return;
            }
        };
        if packet.dst_address != addr {
            self.events.push(Event::DroppedPolicy {
                tick: self.tick,
                id: packet.id,
                at: addr.to_string(),
                reason: "misdelivered".to_string(),
            });
            self.settle_fate(packet.id, Fate::DroppedPolicy);
            return;
        }
        if host.is_decoy {
            self.events.push(Event::AbsorbedByDecoy {
                tick: self.tick,
                id: packet.id,
                decoy: host.host_id.clone(),
            });
            self.settle_fate(packet.id, Fate::AbsorbedByDecoy);
            if packet.payload_tag.starts_with("exploit:") {
                self.events.push(Event::DecoyAlert {
                    tick: self.tick,
                    id: packet.id,
                    decoy: host.host_id.clone(),
                    flow: packet.summary(),
                });
            }
            if let Some(reply) = endpoint_reply(&host, &packet, self.config.default_ttl) {
                let _ = self.inject(reply);
            }
            return;
        }
        self.events.push(Event::Delivered {
            tick: self.tick,
            id: packet.id,
            host: host.host_id.clone(),
            src_seen: packet.src_address.to_string(),
            payload: packet.payload_tag.clone(),
        });
        self.settle_fate(packet.id, Fate::Delivered);
        self.deliveries.push(Delivery {
            tick: self.tick,
            host: addr,
            packet: packet.clone(),
        });
        if let Some(vuln_id) = packet.payload_tag.strip_prefix("exploit:") {
            let vulnerable = host.vulnerabilities.iter().any(|v| v.vuln_id == vuln_id);
            self.events.push(Event::ExploitDelivered {
                tick: self.tick,
                id: packet.id,
                host: host.host_id.clone(),
                vuln_id: vuln_id.to_string(),
                vulnerable,
            });
        }
        if let Some(reply) = endpoint_reply(&host, &packet, self.config.default_ttl) {
            let _ = self.inject(reply);
        }
    }

    /// Advances one tick: moves arrivals one hop, runs the controller on
    /// the tick's packet-ins, then expires idle flow entries.
    pub fn step(&mut self, controller: &mut dyn Controller) {
        self.tick += 1;
        {
            let mut api = SimApi { sim: self };
            controller.on_tick(&mut api);
        }
        let arrivals = self.arrivals.remove(&self.tick).unwrap_or_default();
        for arrival in arrivals {
            match arrival.node {
                Endpoint::Switch(sw) => self.process_at_switch(sw, arrival.in_port, arrival.packet),
                Endpoint::Host(addr) => self.process_at_host(addr, arrival.packet),
            }
        }
        let queue: Vec<_> = std::mem::take(&mut self.packet_in_queue);
        for (sw, in_port, packet) in queue {
            self.counters.controller_ops += 1;
            let mut api = SimApi { sim: self };
            controller.on_packet_in(&mut api, &sw, in_port, packet);
        }
        // Idle-timeout sweep.
        let now = self.tick;
        for sw in self.switches.values_mut() {
            sw.table.retain(|slot| {
                slot.entry.idle_timeout == 0
                    || now.saturating_sub(slot.last_matched) < slot.entry.idle_timeout
            });
        }
    }

    pub fn quiescent(&self) -> bool {
        self.arrivals.is_empty() && self.packet_in_queue.is_empty()
    }

    /// Steps until nothing is in flight (or the cap is hit).
    pub fn run_until_quiescent(&mut self, controller: &mut dyn Controller, cap: Tick) {
        let mut steps = 0;
        while !self.quiescent() && steps < cap {
            self.step(controller);
            steps += 1;
        }
    }

    pub fn event_trace(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&e.render());
            out.push('\n');
        }
        out
    }
}

/// What a host answers when a packet reaches it.
fn endpoint_reply(host: &HostProfile, packet: &Packet, ttl: u8) -> Option<Packet> {
    let mut reply = packet.reply_template();
    reply.ttl = ttl;
    match packet.transport {
        TransportKind::Icmp => {
            if packet.flags.contains(&Flag::Echo) {
                reply.transport = TransportKind::Icmp;
                reply.flags = BTreeSet::from([Flag::EchoReply]);
                Some(reply)
            } else {
                None
            }
        }
        TransportKind::Tcp => {
            if !packet.flags.contains(&Flag::Syn) || packet.flags.contains(&Flag::Ack) {
                // Data and acknowledgement segments: answer payloads so the
                // reverse path is exercised, stay quiet otherwise.
                if let Some(tag) = packet.payload_tag.strip_prefix("data:") {
                    reply.flags = BTreeSet::from([Flag::Ack]);
                    reply.payload_tag = format!("ack:{tag}");
                    return Some(reply);
                }
                return None;
            }
            let service = host
                .services
                .iter()
                .find(|s| s.port == packet.dst_port && packet.transport.matches_service(s.transport));
            match service {
                Some(svc) => {
                    if packet.payload_tag == "banner-request" {
                        reply.flags = BTreeSet::from([Flag::Ack]);
                        reply.payload_tag = format!("banner:{}", svc.banner);
                    } else if packet.payload_tag.starts_with("exploit:") {
                        return None;
                    } else {
                        reply.flags = BTreeSet::from([Flag::Syn, Flag::Ack]);
                    }
                    Some(reply)
                }
                None => {
                    if packet.payload_tag.starts_with("exploit:") {
                        return None;
                    }
                    reply.flags = BTreeSet::from([Flag::Rst]);
                    Some(reply)
                }
            }
        }
        TransportKind::Udp => {
            if packet.payload_tag != "udp-probe" {
                return None;
            }
            let open = host
                .services
                .iter()
                .any(|s| s.port == packet.dst_port && packet.transport.matches_service(s.transport));
            if open {
                reply.payload_tag = "udp-reply".to_string();
            } else {
                reply.flags = BTreeSet::from([Flag::Unreachable]);
            }
            Some(reply)
        }
    }
}

// ---------------------------------------------------------------------------
// Controller-facing API
// ---------------------------------------------------------------------------

/// The slice of the simulation a controller may touch while handling an
/// event.
pub struct SimApi<'a> {
    sim: &'a mut Simulation,
}

impl SimApi<'_> {
    pub fn tick(&self) -> Tick {
        self.sim.tick
    }

    pub fn config(&self) -> &SimConfig {
        &self.sim.config
    }

    pub fn locate(&self, addr: &Address) -> Option<(String, u32)> {
        self.sim.locate(addr)
    }

    pub fn host(&self, addr: &Address) -> Option<&HostProfile> {
        self.sim.host(addr)
    }

    /// (switch, out-port) chain from a switch to the switch a host hangs
    /// off, ending with the host port itself.
    pub fn path_to(&self, from_switch: &str, dst: &Address) -> Option<Vec<(String, u32)>> {
        let (dst_switch, host_port) = self.sim.routing.host_port.get(dst)?.clone();
        let mut hops = Vec::new();
        let mut at = from_switch.to_string();
        let mut guard = 0;
        while at != dst_switch {
            let port = self
                .sim
                .routing
                .next_hop
                .get(&(at.clone(), dst_switch.clone()))
                .copied()?;
            hops.push((at.clone(), port));
            match self.sim.switches[&at].ports[&port] {
                Endpoint::Switch(ref next) => at = next.clone(),
                Endpoint::Host(_) => return None,
            }
            guard += 1;
            if guard > self.sim.switches.len() {
                return None;
            }
        }
        hops.push((dst_switch, host_port));
        Some(hops)
    }

    pub fn ids_verdict(&self, src: &Address) -> Verdict {
        self.sim.ids.inspect(src, self.sim.tick)
    }

    pub fn install_flow(&mut self, switch_id: &str, entry: FlowEntry) -> Result<(), SimError> {
        self.sim.install_flow(switch_id, entry)
    }

    /// Releases a controller-held packet back into a switch pipeline.
    pub fn release_to_table(&mut self, switch_id: &str, packet: Packet) -> Result<(), SimError> {
        self.sim.packet_out_to_table(switch_id, packet)
    }

    /// Delivers a controller-held packet out a specific port.
    pub fn packet_out(&mut self, switch_id: &str, out_port: u32, packet: Packet) -> Result<(), SimError> {
        self.sim.packet_out(switch_id, out_port, packet)
    }

    /// Sends a controller-held packet straight to the host that owns an
    /// address, out its access port.
    pub fn packet_out_to_host(&mut self, addr: &Address, packet: Packet) -> Result<(), SimError> {
        let (sw, port) = self
            .sim
            .locate(addr)
            .ok_or_else(|| SimError::UnknownAddress(addr.clone()))?;
        self.sim.packet_out(&sw, port, packet)
    }

    /// Marks a controller-held packet as policy-dropped.
    pub fn drop_packet(&mut self, packet: &Packet, reason: &str) {
        self.sim.events.push(Event::DroppedPolicy {
            tick: self.sim.tick,
            id: packet.id,
            at: "controller".to_string(),
            reason: reason.to_string(),
        });
        self.sim.settle_fate(packet.id, Fate::DroppedPolicy);
    }

    /// Marks a probe as answered by the controller itself and, when the
    /// treatment is not silence, sends the synthesized reply to the prober.
    pub fn answer_synthetically(
        &mut self,
        probe: &Packet,
        reply: Option<Packet>,
    ) -> Result<(), SimError> {
        self.sim.events.push(Event::AnsweredSynthetically {
            tick: self.sim.tick,
            id: probe.id,
            replied: reply.is_some(),
        });
        self.sim.settle_fate(probe.id, Fate::AnsweredSynthetically);
        if let Some(reply) = reply {
            self.packet_out_to_host(&probe.src_address, reply)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain_host(id: &str, addr: &str, switch: &str) -> HostProfile {
        HostProfile {
            host_id: id.to_string(),
            real_address: Address::new(addr),
            attachment: switch.to_string(),
            services: vec![],
            vulnerabilities: vec![],
            is_decoy: false,
        }
    }

    fn line_topology() -> (Topology, Vec<HostProfile>) {
        let topo = Topology {
            switches: vec!["s1".into(), "s2".into(), "s3".into()],
            links: vec![("s1".into(), "s2".into()), ("s2".into(), "s3".into())],
        };
        let hosts = vec![plain_host("a", "10.0.0.1", "s1"), plain_host("b", "10.0.0.2", "s3")];
        (topo, hosts)
    }

    fn allow_all(sim: &mut Simulation) {
        let ids: Vec<String> = sim.switches.keys().cloned().collect();
        for sw in ids {
            sim.install_flow(
                &sw,
                FlowEntry::new(
                    FlowMatch::default(),
                    0,
                    vec![Action::Output(OutPort::Normal)],
                    0,
                ),
            )
            .unwrap();
        }
    }

    #[test]
    fn packet_crosses_three_switches_in_three_ticks() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        allow_all(&mut sim);
        let p = PacketBuilder::data(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 4000, 80, "x");
        let id = sim.inject(p).unwrap();
        let mut ctl = NullController;
        for _ in 0..3 {
            sim.step(&mut ctl);
        }
        assert_eq!(sim.fate_of(id), Some(Fate::Delivered));
        assert_eq!(sim.fate_tick[&id], 3);
    }

    #[test]
    fn ttl_exhausts_at_second_hop() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        allow_all(&mut sim);
        let mut p = PacketBuilder::data(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 4000, 80, "x");
        p.ttl = 2;
        let id = sim.inject(p).unwrap();
        let mut ctl = NullController;
        sim.run_until_quiescent(&mut ctl, 10);
        assert_eq!(sim.fate_of(id), Some(Fate::DroppedTtl));
        assert!(sim
            .events
            .iter()
            .any(|e| matches!(e, Event::DroppedTtl { switch, .. } if switch == "s2")));
    }

    #[test]
    fn higher_priority_entry_wins() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        sim.install_flow(
            "s1",
            FlowEntry::new(FlowMatch::default(), 0, vec![Action::DropAction], 0),
        )
        .unwrap();
        sim.install_flow(
            "s1",
            FlowEntry::new(
                FlowMatch {
                    dst: Some(Address::new("10.0.0.2")),
                    ..FlowMatch::default()
                },
                10,
                vec![Action::Output(OutPort::Normal)],
                0,
            ),
        )
        .unwrap();
        let mut sw = sim.switches.get_mut("s1").unwrap().clone();
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 1, 2);
        match sw.match_packet(&p, 0) {
            MatchResult::Actions(actions) => {
                assert_eq!(actions, vec![Action::Output(OutPort::Normal)])
            }
            MatchResult::TableMiss => panic!("expected a match"),
        }
    }

    #[test]
    fn empty_table_misses() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        let mut sw = sim.switches.get_mut("s1").unwrap().clone();
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 1, 2);
        assert!(matches!(sw.match_packet(&p, 0), MatchResult::TableMiss));
    }

    #[test]
    fn equal_priority_first_installed_wins() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        sim.install_flow(
            "s1",
            FlowEntry::new(FlowMatch::default(), 5, vec![Action::DropAction], 0),
        )
        .unwrap();
        sim.install_flow(
            "s1",
            FlowEntry::new(FlowMatch::default(), 5, vec![Action::Output(OutPort::Normal)], 0),
        )
        .unwrap();
        let mut sw = sim.switches.get_mut("s1").unwrap().clone();
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 1, 2);
        match sw.match_packet(&p, 0) {
            MatchResult::Actions(actions) => assert_eq!(actions, vec![Action::DropAction]),
            MatchResult::TableMiss => panic!("expected a match"),
        }
    }

    #[test]
    fn table_miss_becomes_packet_in() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 1, 2);
        let id = sim.inject(p).unwrap();
        let mut ctl = NullController;
        sim.step(&mut ctl);
        let packet_ins = sim
            .events
            .iter()
            .filter(|e| matches!(e, Event::PacketIn { id: pid, .. } if *pid == id))
            .count();
        assert_eq!(packet_ins, 1);
        assert_eq!(sim.counters.controller_ops, 1);
    }

    #[test]
    fn installed_entry_prevents_packet_in_and_counts() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        allow_all(&mut sim);
        let p = PacketBuilder::data(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 4000, 80, "x");
        sim.inject(p).unwrap();
        let mut ctl = NullController;
        sim.run_until_quiescent(&mut ctl, 20);
        assert_eq!(sim.counters.controller_ops, 0);
        let s1_count = sim.switch("s1").unwrap().entries()[0].counters.packets;
        // Request plus the data acknowledgement on the way back.
        assert_eq!(s1_count, 2);
    }

    #[test]
    fn idle_timeout_expires_entries() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        sim.install_flow(
            "s1",
            FlowEntry::new(FlowMatch::default(), 1, vec![Action::Output(OutPort::Normal)], 3),
        )
        .unwrap();
        let mut ctl = NullController;
        for _ in 0..2 {
            sim.step(&mut ctl);
        }
        assert_eq!(sim.switch("s1").unwrap().entries().len(), 1);
        for _ in 0..2 {
            sim.step(&mut ctl);
        }
        assert_eq!(sim.switch("s1").unwrap().entries().len(), 0);
    }

    #[test]
    fn packet_out_to_unknown_port_errors() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        let p = PacketBuilder::tcp_syn(Address::new("10.0.0.1"), Address::new("10.0.0.2"), 1, 2);
        assert!(matches!(
            sim.packet_out("s1", 99, p.clone()),
            Err(SimError::UnknownPort { .. })
        ));
        assert!(matches!(
            sim.packet_out("nope", 1, p),
            Err(SimError::UnknownSwitch(_))
        ));
    }

    #[test]
    fn identical_runs_produce_identical_traces() {
        let runs: Vec<String> = (0..2)
            .map(|_| {
                let (topo, hosts) = line_topology();
                let mut sim =
                    Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
                allow_all(&mut sim);
                for i in 0..5u16 {
                    let p = PacketBuilder::tcp_syn(
                        Address::new("10.0.0.1"),
                        Address::new("10.0.0.2"),
                        4000 + i,
                        80 + i,
                    );
                    sim.inject(p).unwrap();
                }
                let mut ctl = NullController;
                sim.run_until_quiescent(&mut ctl, 50);
                sim.event_trace()
            })
            .collect();
        assert_eq!(runs[0], runs[1]);
    }

    #[test]
    fn ids_flags_port_scans_and_sweeps() {
        let mut ids = IdsState::new(IdsConfig::default());
        let attacker = Address::new("a");
        for port in 0..20 {
            ids.record(&attacker, &Address::new("t"), port, 10);
        }
        assert_eq!(ids.inspect(&attacker, 20), Verdict::Suspicious);

        let mut ids = IdsState::new(IdsConfig::default());
        ids.record(&attacker, &Address::new("t"), 5432, 10);
        assert_eq!(ids.inspect(&attacker, 20), Verdict::Normal);

        let mut ids = IdsState::new(IdsConfig::default());
        for i in 0..12 {
            ids.record(&attacker, &Address::new(format!("t{i}")), 0, 10);
        }
        assert_eq!(ids.inspect(&attacker, 20), Verdict::Suspicious);
    }

    #[test]
    fn ids_window_forgets_old_contacts() {
        let mut ids = IdsState::new(IdsConfig::default());
        let attacker = Address::new("a");
        for port in 0..20 {
            ids.record(&attacker, &Address::new("t"), port, 10);
        }
        assert_eq!(ids.inspect(&attacker, 300), Verdict::Normal);
    }

    #[test]
    fn conservation_every_packet_gets_one_fate() {
        let (topo, hosts) = line_topology();
        let mut sim = Simulation::new(&topo, &hosts, SimConfig::default(), IdsConfig::default()).unwrap();
        allow_all(&mut sim);
        let mut expected = Vec::new();
        for i in 0..10u16 {
            let p = PacketBuilder::icmp_echo(Address::new("10.0.0.1"), Address::new("10.0.0.2"));
            let mut p = p;
            p.src_port = i;
            expected.push(sim.inject(p).unwrap());
        }
        let mut ctl = NullController;
        sim.run_until_quiescent(&mut ctl, 100);
        assert!(sim.quiescent());
        for id in 1..sim.next_packet_id {
            assert!(sim.fate_of(id).is_some(), "packet {id} has no fate");
        }
    }
}
