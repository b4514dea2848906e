//! The chaos tower: risk scoring, layer/group construction, and connection
//! classification.
//!
//! Hosts are scored from their vulnerabilities and the configured service
//! importance values, binned into layers (higher layer = higher risk), and
//! grouped within a layer by attachment switch. The tower then classifies
//! every connection as expected (normal or special) or unexpected
//! (downward, same-layer, or upward), which is what the obfuscation engine
//! keys its decisions on.

use crate::addr::Address;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

pub type Tick = u64;

/// A known weakness of a host, scored on the standard 0..10 base scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityRecord {
    pub vuln_id: String,
    /// Label such as "sql-injection" or "buffer-overflow".
    pub category: String,
    pub cvss_base: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    Tcp,
    Udp,
}

/// A service offered by a host. The importance value (SIV) for a service
/// name lives in [`TowerConfig::siv_table`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRecord {
    pub service_name: String,
    pub port: u16,
    pub transport: Transport,
    /// Short string revealed when the service is fingerprinted.
    pub banner: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostProfile {
    pub host_id: String,
    pub real_address: Address,
    /// Switch the host hangs off; the physical-locality key for grouping.
    pub attachment: String,
    pub services: Vec<ServiceRecord>,
    pub vulnerabilities: Vec<VulnerabilityRecord>,
    /// Decoys answer traffic but are never placed in the tower's layers.
    pub is_decoy: bool,
}

impl HostProfile {
    /// The service a vulnerability is attributed to when scoring: the
    /// host's highest-SIV service, ties broken by ascending service name.
    pub fn attributed_service<'a>(&'a self, config: &TowerConfig) -> Option<&'a ServiceRecord> {
        let mut best: Option<(&ServiceRecord, f64)> = None;
        for svc in &self.services {
            let siv = match config.siv_table.get(&svc.service_name) {
                Some(v) => *v,
                None => continue,
            };
            best = match best {
                None => Some((svc, siv)),
                Some((cur, cur_siv)) => {
                    if siv > cur_siv || (siv == cur_siv && svc.service_name < cur.service_name) {
                        Some((svc, siv))
                    } else {
                        Some((cur, cur_siv))
                    }
                }
            };
        }
        best.map(|(svc, _)| svc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Binning {
    EqualWidth,
    Quantile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerConfig {
    /// Weight between service importance and vulnerability score, in [0,1].
    pub alpha: f64,
    /// Leapfrog threshold in [0,1]; above it upward connections are dropped.
    pub threshold: f64,
    /// Probability knob in (0,1) splitting fake replies vs decoy redirection.
    pub random_index: f64,
    /// Service importance values, each in [0,10] to stay commensurate with
    /// the vulnerability base-score scale.
    pub siv_table: BTreeMap<String, f64>,
    pub layer_count: usize,
    pub binning: Binning,
    /// When set, same-layer unexpected connections are obfuscated instead
    /// of forwarded.
    pub strict_intra_layer: bool,
}

impl Default for TowerConfig {
    fn default() -> Self {
        TowerConfig {
            alpha: 0.5,
            threshold: 0.5,
            random_index: 0.5,
            siv_table: BTreeMap::new(),
            layer_count: 3,
            binning: Binning::EqualWidth,
            strict_intra_layer: false,
        }
    }
}

impl TowerConfig {
    pub fn validate(&self) -> Result<(), TowerError> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TowerError::ConfigError(format!(
                "alpha must be in [0,1], got {}",
                self.alpha
            )));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(TowerError::ConfigError(format!(
                "threshold must be in [0,1], got {}",
                self.threshold
            )));
        }
        if !(self.random_index > 0.0 && self.random_index < 1.0) {
            return Err(TowerError::ConfigError(format!(
                "random_index must be in (0,1), got {}",
                self.random_index
            )));
        }
        if self.layer_count < 1 {
            return Err(TowerError::ConfigError(
                "layer_count must be >= 1".to_string(),
            ));
        }
        for (name, siv) in &self.siv_table {
            if !(0.0..=10.0).contains(siv) {
                return Err(TowerError::InvalidScore {
                    what: format!("siv_table[{name}]"),
                    value: *siv,
                });
            }
        }
        Ok(())
    }
}

/// A set of hosts in one layer sharing an attachment switch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub group_id: String,
    pub host_ids: BTreeSet<String>,
    /// Highest member risk level; the group's privilege-ordering key.
    pub risk_level: f64,
    pub layer_index: usize,
    pub attachment: String,
}

/// A permitted service path, optionally limited to a tick window.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WhitelistEntry {
    pub src_group: String,
    pub dst_group: String,
    pub dst_port: u16,
    /// Half-open active window [from, until) in simulation ticks; `None`
    /// means always active.
    pub window: Option<(Tick, Tick)>,
}

impl WhitelistEntry {
    pub fn active_at(&self, tick: Tick) -> bool {
        match self.window {
            None => true,
            Some((from, until)) => tick >= from && tick < until,
        }
    }
}

/// Risk-level range covered by one layer, remembered so later insertions
/// land in the same bins the tower was built with.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerBin {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChaosTower {
    /// Group ids per layer, index 0 = bottom (lowest risk).
    pub layers: Vec<Vec<String>>,
    pub groups: BTreeMap<String, Group>,
    pub height: usize,
    pub whitelist: BTreeSet<WhitelistEntry>,
    pub config: TowerConfig,
    /// Risk-level bins of the retained layers, parallel to `layers`.
    pub bins: Vec<LayerBin>,
    pub hosts: BTreeMap<String, HostProfile>,
    /// host_id -> (group_id, layer_index)
    pub placement: BTreeMap<String, (String, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IdsVerdict {
    Normal,
    Suspicious,
}

/// Five-way connection classification; exactly one class per input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Classification {
    /// IDS-normal and whitelisted: an ordinary service path.
    NormalExpected,
    /// IDS-suspicious but strictly downward: released and logged.
    SpecialExpected,
    /// Not whitelisted, higher layer to lower layer.
    UnexpectedDown,
    /// Not whitelisted, same layer.
    UnexpectedLevel,
    /// Not whitelisted, lower layer to higher layer (leapfrog).
    UnexpectedUp,
}

impl Classification {
    pub fn as_str(&self) -> &'static str {
        match self {
            Classification::NormalExpected => "NormalExpected",
            Classification::SpecialExpected => "SpecialExpected",
            Classification::UnexpectedDown => "UnexpectedDown",
            Classification::UnexpectedLevel => "UnexpectedLevel",
            Classification::UnexpectedUp => "UnexpectedUp",
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TowerError {
    #[error("service {0} has no entry in the SIV table")]
    UnknownService(String),
    #[error("{what} out of range [0,10]: {value}")]
    InvalidScore { what: String, value: f64 },
    #[error("no non-decoy hosts to build a tower from")]
    EmptyNetwork,
    #[error("invalid tower config: {0}")]
    ConfigError(String),
    #[error("host {0} already present")]
    DuplicateHost(String),
    #[error("unknown host {0}")]
    UnknownHost(String),
    #[error("decoy host {0} cannot be scored or placed in the tower")]
    DecoyHost(String),
    #[error("connection {0} -> {1} is not an upward connection")]
    NotAnUpwardConnection(String, String),
    #[error("source and destination are the same host: {0}")]
    SelfConnection(String),
}

/// Risk level of a host: the sum over its vulnerabilities of
/// `alpha * SIV(attributed service) + (1 - alpha) * cvss_base`.
///
/// Every vulnerability is attributed to the host's highest-SIV service;
/// a host with no services contributes no importance term.
pub fn compute_risk_level(host: &HostProfile, config: &TowerConfig) -> Result<f64, TowerError> {
    if host.is_decoy {
        return Err(TowerError::DecoyHost(host.host_id.clone()));
    }
    for svc in &host.services {
        if !config.siv_table.contains_key(&svc.service_name) {
            return Err(TowerError::UnknownService(svc.service_name.clone()));
        }
    }
    let siv = match host.attributed_service(config) {
        Some(svc) => {
            let v = config.siv_table[&svc.service_name];
            if !(0.0..=10.0).contains(&v) {
                return Err(TowerError::InvalidScore {
                    what: format!("siv[{}]", svc.service_name),
                    value: v,
                });
            }
            v
        }
        None => 0.0,
    };
    let mut rl = 0.0;
    for vuln in &host.vulnerabilities {
        if !(0.0..=10.0).contains(&vuln.cvss_base) {
            return Err(TowerError::InvalidScore {
                what: format!("cvss[{}]", vuln.vuln_id),
                value: vuln.cvss_base,
            });
        }
        rl += config.alpha * siv + (1.0 - config.alpha) * vuln.cvss_base;
    }
    Ok(rl)
}

fn equal_width_bins(min_rl: f64, max_rl: f64, count: usize) -> Vec<LayerBin> {
    let width = (max_rl - min_rl) / count as f64;
    (0..count)
        .map(|i| LayerBin {
            lo: min_rl + width * i as f64,
            hi: if i + 1 == count {
                max_rl
            } else {
                min_rl + width * (i + 1) as f64
            },
        })
        .collect()
}

/// Bin index for a risk level, on the boundaries the tower was built with.
/// Out-of-range values clamp to the edge bins; values inside a gap left by
/// a compacted-away layer go to the nearer remaining bin (lower on ties).
fn locate_bin(bins: &[LayerBin], rl: f64) -> usize {
    debug_assert!(!bins.is_empty());
    for (i, bin) in bins.iter().enumerate() {
        let last = i + 1 == bins.len();
        if rl >= bin.lo && (rl < bin.hi || (last && rl <= bin.hi)) {
            return i;
        }
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for (i, bin) in bins.iter().enumerate() {
        let dist = if rl < bin.lo {
            bin.lo - rl
        } else if rl > bin.hi {
            rl - bin.hi
        } else {
            0.0
        };
        if dist < best_dist {
            best_dist = dist;
            best = i;
        }
    }
    best
}

/// Builds the tower: scores every non-decoy host, bins scores into layers,
/// and groups hosts within a layer by attachment switch. Deterministic for
/// identical input; ties broken by ascending host id.
pub fn build_tower(hosts: &[HostProfile], config: &TowerConfig) -> Result<ChaosTower, TowerError> {
    config.validate()?;
    let mut seen = BTreeSet::new();
    for h in hosts {
        if !seen.insert(h.host_id.clone()) {
            return Err(TowerError::DuplicateHost(h.host_id.clone()));
        }
    }
    let mut scored: Vec<(&HostProfile, f64)> = Vec::new();
    for h in hosts {
        if h.is_decoy {
            continue;
        }
        scored.push((h, compute_risk_level(h, config)?));
    }
    if scored.is_empty() {
        return Err(TowerError::EmptyNetwork);
    }
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap()
            .then_with(|| a.0.host_id.cmp(&b.0.host_id))
    });

    let min_rl = scored.first().unwrap().1;
    let max_rl = scored.last().unwrap().1;
    let count = config.layer_count;

    // Raw assignment host -> requested bin index.
    let mut assignment: Vec<(&HostProfile, f64, usize)> = Vec::new();
    let bins = match config.binning {
        Binning::EqualWidth => {
            let bins = equal_width_bins(min_rl, max_rl, count);
            for (h, rl) in &scored {
                let idx = if max_rl == min_rl {
                    0
                } else {
                    let width = (max_rl - min_rl) / count as f64;
                    (((rl - min_rl) / width).floor() as usize).min(count - 1)
                };
                assignment.push((h, *rl, idx));
            }
            bins
        }
        Binning::Quantile => {
            let n = scored.len();
            // Lower boundary of bin k is the k/count quantile of the
            // observed scores; equal scores always share a bin.
            let mut boundaries = Vec::new();
            for k in 1..count {
                let pos = (k * n / count).min(n - 1);
                boundaries.push(scored[pos].1);
            }
            for (h, rl) in &scored {
                let idx = boundaries.iter().filter(|b| **b <= *rl).count();
                assignment.push((h, *rl, idx));
            }
            let mut bins = Vec::new();
            for k in 0..count {
                let lo = if k == 0 { min_rl } else { boundaries[k - 1] };
                let hi = if k + 1 == count { max_rl } else { boundaries[k] };
                bins.push(LayerBin { lo, hi: hi.max(lo) });
            }
            bins
        }
    };

    // Drop empty layers and compact indices, keeping each retained
    // layer's original bin range.
    let mut occupied: Vec<usize> = assignment.iter().map(|(_, _, idx)| *idx).collect();
    occupied.sort_unstable();
    occupied.dedup();
    let remap: BTreeMap<usize, usize> = occupied
        .iter()
        .enumerate()
        .map(|(new, old)| (*old, new))
        .collect();
    let kept_bins: Vec<LayerBin> = occupied.iter().map(|old| bins[*old]).collect();
    let height = occupied.len();

    // Group by (layer, attachment).
    let mut members: BTreeMap<(usize, String), Vec<(&HostProfile, f64)>> = BTreeMap::new();
    for (h, rl, idx) in assignment {
        let layer = remap[&idx];
        members
            .entry((layer, h.attachment.clone()))
            .or_default()
            .push((h, rl));
    }

    // Group ids are numbered from the top of the tower downward, so the
    // highest-risk group is always "group-1".
    let mut keys: Vec<(usize, String)> = members.keys().cloned().collect();
    keys.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));

    let mut groups = BTreeMap::new();
    let mut layers = vec![Vec::new(); height];
    let mut placement = BTreeMap::new();
    for (rank, key) in keys.iter().enumerate() {
        let (layer, attachment) = key.clone();
        let group_id = format!("group-{}", rank + 1);
        let hosts_in_group = &members[key];
        let risk_level = hosts_in_group.iter().map(|(_, rl)| *rl).fold(0.0, f64::max);
        let host_ids: BTreeSet<String> = hosts_in_group
            .iter()
            .map(|(h, _)| h.host_id.clone())
            .collect();
        for id in &host_ids {
            placement.insert(id.clone(), (group_id.clone(), layer));
        }
        layers[layer].push(group_id.clone());
        groups.insert(
            group_id.clone(),
            Group {
                group_id,
                host_ids,
                risk_level,
                layer_index: layer,
                attachment,
            },
        );
    }
    for layer in &mut layers {
        layer.sort();
    }

    let hosts_map: BTreeMap<String, HostProfile> = hosts
        .iter()
        .filter(|h| !h.is_decoy)
        .map(|h| (h.host_id.clone(), h.clone()))
        .collect();

    Ok(ChaosTower {
        layers,
        groups,
        height,
        whitelist: BTreeSet::new(),
        config: config.clone(),
        bins: kept_bins,
        hosts: hosts_map,
        placement,
    })
}

impl ChaosTower {
    /// Adds a host to an existing tower without moving layer boundaries.
    /// Joins the same-switch group of the layer its risk level bins into,
    /// or opens a new group there. A full rebuild is a separate call.
    pub fn insert_host(
        &self,
        host: &HostProfile,
        config: &TowerConfig,
    ) -> Result<ChaosTower, TowerError> {
        if self.hosts.contains_key(&host.host_id) {
            return Err(TowerError::DuplicateHost(host.host_id.clone()));
        }
        let rl = compute_risk_level(host, config)?;
        let layer = locate_bin(&self.bins, rl);

        let mut next = self.clone();
        let existing = next
            .layers[layer]
            .iter()
            .find(|gid| next.groups[*gid].attachment == host.attachment)
            .cloned();
        match existing {
            Some(gid) => {
                let group = next.groups.get_mut(&gid).unwrap();
                group.host_ids.insert(host.host_id.clone());
                group.risk_level = group.risk_level.max(rl);
                next.placement.insert(host.host_id.clone(), (gid, layer));
            }
            None => {
                // New groups pick up numbering after the existing ones.
                let group_id = format!("group-{}", next.groups.len() + 1);
                next.groups.insert(
                    group_id.clone(),
                    Group {
                        group_id: group_id.clone(),
                        host_ids: BTreeSet::from([host.host_id.clone()]),
                        risk_level: rl,
                        layer_index: layer,
                        attachment: host.attachment.clone(),
                    },
                );
                next.layers[layer].push(group_id.clone());
                next.layers[layer].sort();
                next.placement
                    .insert(host.host_id.clone(), (group_id, layer));
            }
        }
        next.hosts.insert(host.host_id.clone(), host.clone());
        Ok(next)
    }

    pub fn layer_of(&self, host_id: &str) -> Result<usize, TowerError> {
        self.placement
            .get(host_id)
            .map(|(_, layer)| *layer)
            .ok_or_else(|| TowerError::UnknownHost(host_id.to_string()))
    }

    pub fn group_of(&self, host_id: &str) -> Result<&Group, TowerError> {
        self.placement
            .get(host_id)
            .map(|(gid, _)| &self.groups[gid])
            .ok_or_else(|| TowerError::UnknownHost(host_id.to_string()))
    }

    pub fn host_by_address(&self, addr: &Address) -> Option<&HostProfile> {
        self.hosts.values().find(|h| &h.real_address == addr)
    }

    /// Source layer minus destination layer; negative means upward.
    pub fn altitude(&self, src_host: &str, dst_host: &str) -> Result<i64, TowerError> {
        let src = self.layer_of(src_host)? as i64;
        let dst = self.layer_of(dst_host)? as i64;
        Ok(src - dst)
    }

    /// Leapfrog ratio |altitude| / height for an upward connection.
    pub fn leapfrog_risk(&self, src_host: &str, dst_host: &str) -> Result<f64, TowerError> {
        let alt = self.altitude(src_host, dst_host)?;
        if alt >= 0 {
            return Err(TowerError::NotAnUpwardConnection(
                src_host.to_string(),
                dst_host.to_string(),
            ));
        }
        Ok(alt.unsigned_abs() as f64 / self.height as f64)
    }

    pub fn whitelisted(&self, src_host: &str, dst_host: &str, dst_port: u16, tick: Tick) -> bool {
        let src_group = match self.placement.get(src_host) {
            Some((g, _)) => g,
            None => return false,
        };
        let dst_group = match self.placement.get(dst_host) {
            Some((g, _)) => g,
            None => return false,
        };
        self.whitelist.iter().any(|e| {
            &e.src_group == src_group
                && &e.dst_group == dst_group
                && e.dst_port == dst_port
                && e.active_at(tick)
        })
    }

    /// Classifies a connection. The cascade is total: an IDS-normal
    /// whitelisted flow is a normal service path; an IDS-suspicious
    /// downward flow is released (and logged by the caller); everything
    /// else is unexpected in the direction of its altitude.
    pub fn classify_connection(
        &self,
        src_host: &str,
        dst_host: &str,
        dst_port: u16,
        ids_verdict: IdsVerdict,
        tick: Tick,
    ) -> Result<Classification, TowerError> {
        if src_host == dst_host {
            return Err(TowerError::SelfConnection(src_host.to_string()));
        }
        let alt = self.altitude(src_host, dst_host)?;
        let whitelisted = self.whitelisted(src_host, dst_host, dst_port, tick);
        if ids_verdict == IdsVerdict::Normal && whitelisted {
            return Ok(Classification::NormalExpected);
        }
        if ids_verdict == IdsVerdict::Suspicious && alt > 0 {
            return Ok(Classification::SpecialExpected);
        }
        Ok(if alt > 0 {
            Classification::UnexpectedDown
        } else if alt == 0 {
            Classification::UnexpectedLevel
        } else {
            Classification::UnexpectedUp
        })
    }

    /// Canonical structured-text dump, stable byte-for-byte for identical
    /// towers; the golden-file format.
    pub fn canonical_dump(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("height={}\n", self.height));
        for layer in (0..self.height).rev() {
            out.push_str(&format!("layer {layer}:\n"));
            for gid in &self.layers[layer] {
                let g = &self.groups[gid];
                let hosts: Vec<&str> = g.host_ids.iter().map(|s| s.as_str()).collect();
                out.push_str(&format!(
                    "  {} risk={:.6} switch={} bin=[{:.6},{:.6}] hosts={}\n",
                    gid,
                    g.risk_level,
                    g.attachment,
                    self.bins[layer].lo,
                    self.bins[layer].hi,
                    hosts.join(",")
                ));
            }
        }
        for e in &self.whitelist {
            let window = match e.window {
                Some((a, b)) => format!(" window=[{a},{b})"),
                None => String::new(),
            };
            out.push_str(&format!(
                "whitelist {} -> {} port={}{}\n",
                e.src_group, e.dst_group, e.dst_port, window
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn svc(name: &str, port: u16, banner: &str) -> ServiceRecord {
        ServiceRecord {
            service_name: name.to_string(),
            port,
            transport: Transport::Tcp,
            banner: banner.to_string(),
        }
    }

    fn vuln(id: &str, cvss: f64) -> VulnerabilityRecord {
        VulnerabilityRecord {
            vuln_id: id.to_string(),
            category: "buffer-overflow".to_string(),
            cvss_base: cvss,
        }
    }

    fn host(id: &str, addr: &str, switch: &str, services: Vec<ServiceRecord>, vulns: Vec<VulnerabilityRecord>) -> HostProfile {
        HostProfile {
            host_id: id.to_string(),
            real_address: Address::new(addr),
            attachment: switch.to_string(),
            services,
            vulnerabilities: vulns,
            is_decoy: false,
        }
    }

    fn config_with(alpha: f64, sivs: &[(&str, f64)]) -> TowerConfig {
        TowerConfig {
            alpha,
            siv_table: sivs
                .iter()
                .map(|(k, v)| (k.to_string(), *v))
                .collect(),
            ..TowerConfig::default()
        }
    }

    #[test]
    fn risk_level_alpha_one_uses_only_siv() {
        let cfg = config_with(1.0, &[("web", 8.0)]);
        let h = host("a", "10.0.0.1", "s1", vec![svc("web", 80, "httpd")], vec![vuln("v1", 9.8)]);
        assert_eq!(compute_risk_level(&h, &cfg).unwrap(), 8.0);
    }

    #[test]
    fn risk_level_alpha_zero_uses_only_cvss() {
        let cfg = config_with(0.0, &[("web", 8.0)]);
        let h = host("a", "10.0.0.1", "s1", vec![svc("web", 80, "httpd")], vec![vuln("v1", 9.8)]);
        assert_eq!(compute_risk_level(&h, &cfg).unwrap(), 9.8);
    }

    #[test]
    fn risk_level_half_alpha_sums_per_vulnerability() {
        let cfg = config_with(0.5, &[("web", 8.0)]);
        let h = host(
            "a",
            "10.0.0.1",
            "s1",
            vec![svc("web", 80, "httpd")],
            vec![vuln("v1", 6.0), vuln("v2", 4.0)],
        );
        // (4.0 + 3.0) + (4.0 + 2.0) = 13.0
        assert!((compute_risk_level(&h, &cfg).unwrap() - 13.0).abs() < 1e-12);
    }

    #[test]
    fn risk_level_no_vulnerabilities_is_zero() {
        let cfg = config_with(0.5, &[("web", 8.0)]);
        let h = host("a", "10.0.0.1", "s1", vec![svc("web", 80, "httpd")], vec![]);
        assert_eq!(compute_risk_level(&h, &cfg).unwrap(), 0.0);
    }

    #[test]
    fn risk_level_unknown_service_errors() {
        let cfg = config_with(0.5, &[("web", 8.0)]);
        let h = host("a", "10.0.0.1", "s1", vec![svc("ssh", 22, "sshd")], vec![]);
        assert_eq!(
            compute_risk_level(&h, &cfg),
            Err(TowerError::UnknownService("ssh".to_string()))
        );
    }

    #[test]
    fn risk_level_out_of_range_cvss_errors() {
        let cfg = config_with(0.5, &[("web", 8.0)]);
        let h = host("a", "10.0.0.1", "s1", vec![svc("web", 80, "x")], vec![vuln("v", 11.0)]);
        assert!(matches!(
            compute_risk_level(&h, &cfg),
            Err(TowerError::InvalidScore { .. })
        ));
    }

    #[test]
    fn vulnerability_attributed_to_highest_siv_service() {
        let cfg = config_with(1.0, &[("web", 3.0), ("db", 9.0)]);
        let h = host(
            "a",
            "10.0.0.1",
            "s1",
            vec![svc("web", 80, "x"), svc("db", 5432, "y")],
            vec![vuln("v", 5.0)],
        );
        assert_eq!(compute_risk_level(&h, &cfg).unwrap(), 9.0);
    }

    fn three_hosts() -> (Vec<HostProfile>, TowerConfig) {
        // alpha=0 so RL equals the plain CVSS sum: 2.0 / 5.0 / 9.0.
        let cfg = TowerConfig {
            alpha: 0.0,
            layer_count: 3,
            siv_table: [("svc".to_string(), 5.0)].into_iter().collect(),
            ..TowerConfig::default()
        };
        let hosts = vec![
            host("a", "10.0.0.1", "s1", vec![svc("svc", 1, "x")], vec![vuln("v", 2.0)]),
            host("b", "10.0.0.2", "s2", vec![svc("svc", 1, "x")], vec![vuln("v", 5.0)]),
            host("c", "10.0.0.3", "s3", vec![svc("svc", 1, "x")], vec![vuln("v", 9.0)]),
        ];
        (hosts, cfg)
    }

    #[test]
    fn build_bins_three_hosts_into_three_layers() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        // Boundaries 2.0 - 4.33 - 6.67 - 9.0.
        assert_eq!(tower.height, 3);
        assert_eq!(tower.layer_of("a").unwrap(), 0);
        assert_eq!(tower.layer_of("b").unwrap(), 1);
        assert_eq!(tower.layer_of("c").unwrap(), 2);
    }

    #[test]
    fn build_single_host_single_layer() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts[..1], &cfg).unwrap();
        assert_eq!(tower.height, 1);
    }

    #[test]
    fn build_equal_scores_compact_to_one_layer() {
        let cfg = TowerConfig {
            alpha: 0.0,
            layer_count: 3,
            siv_table: [("svc".to_string(), 5.0)].into_iter().collect(),
            ..TowerConfig::default()
        };
        let hosts: Vec<HostProfile> = (0..4)
            .map(|i| {
                host(
                    &format!("h{i}"),
                    &format!("10.0.0.{i}"),
                    &format!("s{i}"),
                    vec![svc("svc", 1, "x")],
                    vec![vuln("v", 5.0)],
                )
            })
            .collect();
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert_eq!(tower.height, 1);
        assert_eq!(tower.layers[0].len(), 4);
    }

    #[test]
    fn build_rejects_empty_network() {
        let (_, cfg) = three_hosts();
        assert_eq!(build_tower(&[], &cfg), Err(TowerError::EmptyNetwork));
    }

    #[test]
    fn top_group_is_group_one() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert_eq!(tower.group_of("c").unwrap().group_id, "group-1");
    }

    #[test]
    fn same_switch_same_layer_hosts_share_a_group() {
        let cfg = TowerConfig {
            alpha: 0.0,
            layer_count: 2,
            siv_table: [("svc".to_string(), 5.0)].into_iter().collect(),
            ..TowerConfig::default()
        };
        let hosts = vec![
            host("a", "10.0.0.1", "s1", vec![svc("svc", 1, "x")], vec![vuln("v", 1.0)]),
            host("b", "10.0.0.2", "s1", vec![svc("svc", 1, "x")], vec![vuln("v", 1.5)]),
            host("c", "10.0.0.3", "s2", vec![svc("svc", 1, "x")], vec![vuln("v", 9.0)]),
        ];
        let tower = build_tower(&hosts, &cfg).unwrap();
        let ga = tower.group_of("a").unwrap().group_id.clone();
        let gb = tower.group_of("b").unwrap().group_id.clone();
        assert_eq!(ga, gb);
        assert_eq!(tower.group_of("a").unwrap().risk_level, 1.5);
    }

    #[test]
    fn insert_joins_group_when_switch_and_bin_match() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        // RL 5.5 falls in b's bin; same switch as b.
        let newcomer = host("d", "10.0.0.4", "s2", vec![svc("svc", 1, "x")], vec![vuln("v", 5.5)]);
        let next = tower.insert_host(&newcomer, &cfg).unwrap();
        assert_eq!(
            next.group_of("d").unwrap().group_id,
            next.group_of("b").unwrap().group_id
        );
        assert_eq!(next.layer_of("d").unwrap(), 1);
    }

    #[test]
    fn insert_opens_new_group_on_unseen_switch() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        let newcomer = host("d", "10.0.0.4", "s9", vec![svc("svc", 1, "x")], vec![vuln("v", 8.8)]);
        let next = tower.insert_host(&newcomer, &cfg).unwrap();
        assert_eq!(next.layer_of("d").unwrap(), 2);
        assert_ne!(
            next.group_of("d").unwrap().group_id,
            next.group_of("c").unwrap().group_id
        );
    }

    #[test]
    fn insert_duplicate_host_errors() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert_eq!(
            tower.insert_host(&hosts[0], &cfg),
            Err(TowerError::DuplicateHost("a".to_string()))
        );
    }

    #[test]
    fn insert_leaves_other_queries_unchanged() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        let newcomer = host("d", "10.0.0.4", "s9", vec![svc("svc", 1, "x")], vec![vuln("v", 3.0)]);
        let next = tower.insert_host(&newcomer, &cfg).unwrap();
        for id in ["a", "b", "c"] {
            assert_eq!(tower.layer_of(id).unwrap(), next.layer_of(id).unwrap());
            assert_eq!(
                tower.group_of(id).unwrap().group_id,
                next.group_of(id).unwrap().group_id
            );
        }
        assert_eq!(next.hosts["d"], newcomer);
    }

    #[test]
    fn altitude_signs() {
        let (hosts, cfg) = three_hosts();
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert_eq!(tower.altitude("c", "a").unwrap(), 2);
        assert_eq!(tower.altitude("b", "b").unwrap(), 0);
        assert_eq!(tower.altitude("a", "c").unwrap(), -2);
        assert!(matches!(
            tower.altitude("a", "zz"),
            Err(TowerError::UnknownHost(_))
        ));
    }

    #[test]
    fn leapfrog_is_ratio_of_jump_to_height() {
        let cfg = TowerConfig {
            alpha: 0.0,
            layer_count: 4,
            siv_table: [("svc".to_string(), 5.0)].into_iter().collect(),
            ..TowerConfig::default()
        };
        let hosts: Vec<HostProfile> = [1.0f64, 3.5, 6.0, 8.5]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                host(
                    &format!("h{i}"),
                    &format!("10.0.0.{i}"),
                    &format!("s{i}"),
                    vec![svc("svc", 1, "x")],
                    vec![vuln("v", *c)],
                )
            })
            .collect();
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert_eq!(tower.height, 4);
        assert_eq!(tower.leapfrog_risk("h0", "h2").unwrap(), 0.5);
        assert_eq!(tower.leapfrog_risk("h1", "h2").unwrap(), 0.25);
        // The longest possible jump is height - 1.
        assert_eq!(tower.leapfrog_risk("h0", "h3").unwrap(), 0.75);
        assert!(matches!(
            tower.leapfrog_risk("h2", "h0"),
            Err(TowerError::NotAnUpwardConnection(..))
        ));
    }

    fn classified_tower() -> ChaosTower {
        let (hosts, cfg) = three_hosts();
        let mut tower = build_tower(&hosts, &cfg).unwrap();
        let web_group = tower.group_of("b").unwrap().group_id.clone();
        let db_group = tower.group_of("c").unwrap().group_id.clone();
        tower.whitelist.insert(WhitelistEntry {
            src_group: web_group,
            dst_group: db_group,
            dst_port: 5432,
            window: None,
        });
        tower
    }

    #[test]
    fn classify_whitelisted_normal_flow() {
        let tower = classified_tower();
        assert_eq!(
            tower
                .classify_connection("b", "c", 5432, IdsVerdict::Normal, 0)
                .unwrap(),
            Classification::NormalExpected
        );
    }

    #[test]
    fn classify_suspicious_downward_is_special() {
        let tower = classified_tower();
        assert_eq!(
            tower
                .classify_connection("c", "a", 22, IdsVerdict::Suspicious, 0)
                .unwrap(),
            Classification::SpecialExpected
        );
    }

    #[test]
    fn classify_upward_unlisted_flow() {
        let tower = classified_tower();
        assert_eq!(
            tower
                .classify_connection("a", "c", 22, IdsVerdict::Normal, 0)
                .unwrap(),
            Classification::UnexpectedUp
        );
    }

    #[test]
    fn classify_same_layer_and_downward() {
        let (hosts, cfg) = three_hosts();
        let mut more = hosts.clone();
        more.push(host("b2", "10.0.0.9", "s8", vec![svc("svc", 1, "x")], vec![vuln("v", 5.1)]));
        let tower = build_tower(&more, &cfg).unwrap();
        assert_eq!(
            tower
                .classify_connection("b", "b2", 80, IdsVerdict::Normal, 0)
                .unwrap(),
            Classification::UnexpectedLevel
        );
        assert_eq!(
            tower
                .classify_connection("c", "a", 80, IdsVerdict::Normal, 0)
                .unwrap(),
            Classification::UnexpectedDown
        );
    }

    #[test]
    fn whitelist_window_gates_normal_classification() {
        let (hosts, cfg) = three_hosts();
        let mut tower = build_tower(&hosts, &cfg).unwrap();
        let src = tower.group_of("b").unwrap().group_id.clone();
        let dst = tower.group_of("c").unwrap().group_id.clone();
        tower.whitelist.insert(WhitelistEntry {
            src_group: src,
            dst_group: dst,
            dst_port: 5432,
            window: Some((10, 20)),
        });
        assert_eq!(
            tower
                .classify_connection("b", "c", 5432, IdsVerdict::Normal, 15)
                .unwrap(),
            Classification::NormalExpected
        );
        assert_eq!(
            tower
                .classify_connection("b", "c", 5432, IdsVerdict::Normal, 25)
                .unwrap(),
            Classification::UnexpectedUp
        );
    }

    #[test]
    fn classify_self_connection_errors() {
        let tower = classified_tower();
        assert!(matches!(
            tower.classify_connection("a", "a", 1, IdsVerdict::Normal, 0),
            Err(TowerError::SelfConnection(_))
        ));
    }

    #[test]
    fn build_is_deterministic_in_canonical_dump() {
        let (hosts, cfg) = three_hosts();
        let t1 = build_tower(&hosts, &cfg).unwrap();
        let mut reordered = hosts.clone();
        reordered.reverse();
        let t2 = build_tower(&reordered, &cfg).unwrap();
        assert_eq!(t1.canonical_dump(), t2.canonical_dump());
        assert_eq!(
            serde_json::to_string(&t1).unwrap(),
            serde_json::to_string(&t2).unwrap()
        );
    }

    #[test]
    fn decoys_are_never_placed() {
        let (mut hosts, cfg) = three_hosts();
        hosts.push(HostProfile {
            host_id: "trap".to_string(),
            real_address: Address::new("10.0.9.1"),
            attachment: "s1".to_string(),
            services: vec![],
            vulnerabilities: vec![],
            is_decoy: true,
        });
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert!(tower.placement.get("trap").is_none());
        assert!(matches!(
            tower.layer_of("trap"),
            Err(TowerError::UnknownHost(_))
        ));
    }

    #[test]
    fn quantile_binning_orders_layers_by_risk() {
        let cfg = TowerConfig {
            alpha: 0.0,
            layer_count: 2,
            binning: Binning::Quantile,
            siv_table: [("svc".to_string(), 5.0)].into_iter().collect(),
            ..TowerConfig::default()
        };
        let hosts: Vec<HostProfile> = [1.0f64, 2.0, 3.0, 4.0]
            .iter()
            .enumerate()
            .map(|(i, c)| {
                host(
                    &format!("h{i}"),
                    &format!("10.0.0.{i}"),
                    &format!("s{i}"),
                    vec![svc("svc", 1, "x")],
                    vec![vuln("v", *c)],
                )
            })
            .collect();
        let tower = build_tower(&hosts, &cfg).unwrap();
        assert_eq!(tower.height, 2);
        assert_eq!(tower.layers[0].len(), 2);
        assert_eq!(tower.layers[1].len(), 2);
        assert_eq!(tower.layer_of("h0").unwrap(), 0);
        assert_eq!(tower.layer_of("h3").unwrap(), 1);
    }
}
