//! The obfuscation engine: decision logic for unexpected connections,
//! real/virtual address mutation, port-scan reply synthesis, and decoy
//! redirection.

use crate::addr::Address;
use crate::netsim::{Flag, Packet, TransportKind};
use crate::tower::{Classification, HostProfile, TowerConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Knobs of the countermeasures themselves (the tower decides *whether*
/// to obfuscate; these decide *how*).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObfuscationConfig {
    /// Probability that a synthesized scan reply flips the truth.
    pub fake_rate: f64,
    /// Length of one address-mutation epoch in simulation ticks.
    pub ticks_per_epoch: u64,
    /// How long a synthesized verdict stays pinned in the reply buffer.
    pub reply_window_ticks: u64,
    /// TTL stamped on synthesized replies so hop-distance probing reads a
    /// constant.
    pub synthetic_ttl: u8,
}

impl Default for ObfuscationConfig {
    fn default() -> Self {
        ObfuscationConfig {
            fake_rate: 0.5,
            ticks_per_epoch: 50,
            reply_window_ticks: 100_000,
            synthetic_ttl: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObfuscationDecision {
    Forward,
    PortObfuscate,
    RedirectToDecoy,
    Drop,
}

impl ObfuscationDecision {
    pub fn as_str(&self) -> &'static str {
        match self {
            ObfuscationDecision::Forward => "Forward",
            ObfuscationDecision::PortObfuscate => "PortObfuscate",
            ObfuscationDecision::RedirectToDecoy => "RedirectToDecoy",
            ObfuscationDecision::Drop => "Drop",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ObfuscationError {
    #[error("virtual pool smaller than real address set ({pool} < {real})")]
    PoolTooSmall { pool: usize, real: usize },
    #[error("virtual pool overlaps real addresses at {0}")]
    PoolsOverlap(Address),
    #[error("address {0} not present in mapping table")]
    UnmappedAddress(Address),
    #[error("probe is not a TCP SYN, UDP probe, or ICMP echo")]
    UnsupportedProbeType,
    #[error("no decoys configured")]
    NoDecoysConfigured,
}

/// Picks the countermeasure for one classified connection. Pure: same
/// inputs, same decision. `draw` comes from the experiment's seeded
/// randomness; `leapfrog` only matters for upward connections.
pub fn decide(
    classification: Classification,
    leapfrog: f64,
    is_request: bool,
    draw: f64,
    config: &TowerConfig,
) -> ObfuscationDecision {
    match classification {
        Classification::NormalExpected
        | Classification::SpecialExpected
        | Classification::UnexpectedDown => ObfuscationDecision::Forward,
        Classification::UnexpectedLevel => {
            if config.strict_intra_layer {
                ObfuscationDecision::PortObfuscate
            } else {
                ObfuscationDecision::Forward
            }
        }
        Classification::UnexpectedUp => {
            if leapfrog > config.threshold {
                ObfuscationDecision::Drop
            } else if is_request && draw >= config.random_index {
                ObfuscationDecision::PortObfuscate
            } else {
                ObfuscationDecision::RedirectToDecoy
            }
        }
    }
}

/// One epoch's bijection between real and virtual addresses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingTable {
    pub epoch: u64,
    pub forward: BTreeMap<Address, Address>,
    pub reverse: BTreeMap<Address, Address>,
}

impl MappingTable {
    pub fn to_virtual(&self, real: &Address) -> Result<&Address, ObfuscationError> {
        self.forward
            .get(real)
            .ok_or_else(|| ObfuscationError::UnmappedAddress(real.clone()))
    }

    pub fn to_real(&self, virt: &Address) -> Result<&Address, ObfuscationError> {
        self.reverse
            .get(virt)
            .ok_or_else(|| ObfuscationError::UnmappedAddress(virt.clone()))
    }
}

/// Assigns a fresh virtual address to every real address, deterministically
/// from (seed, epoch). Different epochs draw independent permutations.
pub fn rotate_mappings(
    real_addresses: &BTreeSet<Address>,
    virtual_pool: &[Address],
    epoch: u64,
    seed: u64,
) -> Result<MappingTable, ObfuscationError> {
    if virtual_pool.len() < real_addresses.len() {
        return Err(ObfuscationError::PoolTooSmall {
            pool: virtual_pool.len(),
            real: real_addresses.len(),
        });
    }
    for v in virtual_pool {
        if real_addresses.contains(v) {
            return Err(ObfuscationError::PoolsOverlap(v.clone()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, epoch));
    let mut pool: Vec<Address> = virtual_pool.to_vec();
    pool.sort();
    pool.shuffle(&mut rng);
    let mut forward = BTreeMap::new();
    let mut reverse = BTreeMap::new();
    for (real, virt) in real_addresses.iter().zip(pool.into_iter()) {
        forward.insert(real.clone(), virt.clone());
        reverse.insert(virt, real.clone());
    }
    Ok(MappingTable {
        epoch,
        forward,
        reverse,
    })
}

/// Rewrites src/dst from real to virtual addresses; everything else is
/// untouched.
pub fn apply_ingress(packet: &Packet, table: &MappingTable) -> Result<Packet, ObfuscationError> {
    let mut out = packet.clone();
    out.src_address = table.to_virtual(&packet.src_address)?.clone();
    out.dst_address = table.to_virtual(&packet.dst_address)?.clone();
    Ok(out)
}

/// Inverse of [`apply_ingress`]: virtual back to real.
pub fn apply_egress(packet: &Packet, table: &MappingTable) -> Result<Packet, ObfuscationError> {
    let mut out = packet.clone();
    out.src_address = table.to_real(&packet.src_address)?.clone();
    out.dst_address = table.to_real(&packet.dst_address)?.clone();
    Ok(out)
}

/// What a synthesized reply claimed about a port or host, pinned per probe
/// key so repeated probing sees consistent behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SynthVerdict {
    FakeOpen,
    FakeClosed,
    Real,
}

pub type ProbeKey = (Address, Address, u16, TransportKind);

#[derive(Debug, Clone, Default)]
pub struct ReplyBuffer {
    entries: BTreeMap<ProbeKey, (SynthVerdict, u64)>,
    pub window: u64,
}

impl ReplyBuffer {
    pub fn new(window: u64) -> Self {
        ReplyBuffer {
            entries: BTreeMap::new(),
            window,
        }
    }

    pub fn lookup(&self, key: &ProbeKey, now: u64) -> Option<SynthVerdict> {
        self.entries.get(key).and_then(|(verdict, stored_at)| {
            if now.saturating_sub(*stored_at) < self.window {
                Some(*verdict)
            } else {
                None
            }
        })
    }

    pub fn record(&mut self, key: ProbeKey, verdict: SynthVerdict, now: u64) {
        self.entries.insert(key, (verdict, now));
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Synthesizes the reply to an intercepted probe. A verdict already in the
/// buffer is replayed; otherwise the truth is flipped with probability
/// `fake_rate` and the verdict pinned. Returns `None` when the treatment is
/// silence (e.g. a suppressed echo reply).
pub fn synthesize_scan_reply(
    probe: &Packet,
    host_truth: &HostProfile,
    buffer: &mut ReplyBuffer,
    draw: f64,
    now: u64,
    config: &ObfuscationConfig,
) -> Result<Option<Packet>, ObfuscationError> {
    if !probe.is_probe() {
        return Err(ObfuscationError::UnsupportedProbeType);
    }
    let key: ProbeKey = (
        probe.src_address.clone(),
        probe.dst_address.clone(),
        probe.dst_port,
        probe.transport,
    );
    let truth_open = match probe.transport {
        TransportKind::Icmp => true, // the host exists, so it is live
        kind => host_truth.services.iter().any(|s| {
            s.port == probe.dst_port
                && matches!(
                    (s.transport, kind),
                    (crate::tower::Transport::Tcp, TransportKind::Tcp)
                        | (crate::tower::Transport::Udp, TransportKind::Udp)
                )
        }),
    };
    let verdict = match buffer.lookup(&key, now) {
        Some(v) => v,
        None => {
            let v = if draw < config.fake_rate {
                if truth_open {
                    SynthVerdict::FakeClosed
                } else {
                    SynthVerdict::FakeOpen
                }
            } else {
                SynthVerdict::Real
            };
            buffer.record(key, v, now);
            v
        }
    };
    let claim_open = match verdict {
        SynthVerdict::FakeOpen => true,
        SynthVerdict::FakeClosed => false,
        SynthVerdict::Real => truth_open,
    };
    let mut reply = probe.reply_template();
    reply.ttl = config.synthetic_ttl;
    match probe.transport {
        TransportKind::Icmp => {
            if claim_open {
                reply.flags = BTreeSet::from([Flag::EchoReply]);
                Ok(Some(reply))
            } else {
                // Live host hidden: the echo is silently dropped.
                Ok(None)
            }
        }
        TransportKind::Tcp => {
            if probe.payload_tag == "banner-request" {
                // A sensitive part of the response: blank it out.
                reply.flags = BTreeSet::from([Flag::Ack]);
                reply.payload_tag = "banner:".to_string();
                return Ok(Some(reply));
            }
            reply.flags = if claim_open {
                BTreeSet::from([Flag::Syn, Flag::Ack])
            } else {
                BTreeSet::from([Flag::Rst])
            };
            Ok(Some(reply))
        }
        TransportKind::Udp => {
            if claim_open {
                reply.payload_tag = "udp-reply".to_string();
            } else {
                reply.flags = BTreeSet::from([Flag::Unreachable]);
            }
            Ok(Some(reply))
        }
    }
}

/// Picks the decoy a flow is diverted to: a stable hash of the flow key and
/// seed, so the same flow always lands on the same decoy.
pub fn choose_decoy<'a>(
    packet: &Packet,
    decoy_pool: &'a [Address],
    seed: u64,
) -> Result<&'a Address, ObfuscationError> {
    if decoy_pool.is_empty() {
        return Err(ObfuscationError::NoDecoysConfigured);
    }
    let mut h = Fnv::new(seed);
    h.write(packet.src_address.as_str().as_bytes());
    h.write(packet.dst_address.as_str().as_bytes());
    h.write(&packet.src_port.to_be_bytes());
    h.write(&packet.dst_port.to_be_bytes());
    h.write(&[packet.transport as u8]);
    Ok(&decoy_pool[(h.finish() % decoy_pool.len() as u64) as usize])
}

/// Rewrites a packet's destination to its decoy.
pub fn redirect_to_decoy(
    packet: &Packet,
    decoy_pool: &[Address],
    seed: u64,
) -> Result<Packet, ObfuscationError> {
    let decoy = choose_decoy(packet, decoy_pool, seed)?;
    let mut out = packet.clone();
    out.dst_address = decoy.clone();
    Ok(out)
}

fn mix(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// FNV-1a, used wherever the engine needs a draw that is stable across
/// runs and independent of evaluation order.
struct Fnv(u64);

impl Fnv {
    fn new(seed: u64) -> Self {
        let mut f = Fnv(0xcbf2_9ce4_8422_2325);
        f.write(&seed.to_be_bytes());
        f
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= *b as u64;
            self.0 = self.0.wrapping_mul(0x100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// Deterministic draw in [0,1) keyed by seed and arbitrary labels.
pub fn keyed_draw(seed: u64, parts: &[&str]) -> f64 {
    let mut h = Fnv::new(seed);
    for p in parts {
        h.write(p.as_bytes());
        h.write(&[0]);
    }
    (h.finish() >> 11) as f64 / (1u64 << 53) as f64
}
