//! Scenario configuration: one structured-text document covering the
//! topology, the tower parameters, the hosts and decoys, the permitted
//! service paths, and the attacker workload.

use crate::addr::Address;
use crate::netsim::{IdsConfig, SimConfig, Topology};
use crate::tower::{
    HostProfile, ServiceRecord, TowerConfig, Transport, VulnerabilityRecord, WhitelistEntry,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Unprotected,
    StaticMtd,
    Chaos,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Unprotected => "unprotected",
            Mode::StaticMtd => "static-mtd",
            Mode::Chaos => "chaos",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "unprotected" => Some(Mode::Unprotected),
            "static-mtd" | "mtd" => Some(Mode::StaticMtd),
            "chaos" => Some(Mode::Chaos),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceConfig {
    pub name: String,
    pub port: u16,
    #[serde(default = "default_transport")]
    pub transport: String,
    #[serde(default)]
    pub banner: String,
}

fn default_transport() -> String {
    "tcp".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnConfig {
    pub id: String,
    #[serde(default)]
    pub category: String,
    pub cvss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HostConfig {
    pub id: String,
    pub address: String,
    pub attachment: String,
    #[serde(default)]
    pub services: Vec<ServiceConfig>,
    #[serde(default)]
    pub vulnerabilities: Vec<VulnConfig>,
}

impl HostConfig {
    fn to_profile(&self, is_decoy: bool) -> Result<HostProfile, ConfigError> {
        let mut services = Vec::new();
        for s in &self.services {
            let transport = match s.transport.as_str() {
                "tcp" => Transport::Tcp,
                "udp" => Transport::Udp,
                other => {
                    return Err(ConfigError::Validation(format!(
                        "transport: host {} service {} has unknown transport {other}",
                        self.id, s.name
                    )))
                }
            };
            services.push(ServiceRecord {
                service_name: s.name.clone(),
                port: s.port,
                transport,
                banner: s.banner.clone(),
            });
        }
        Ok(HostProfile {
            host_id: self.id.clone(),
            real_address: Address::new(&self.address),
            attachment: self.attachment.clone(),
            services,
            vulnerabilities: self
                .vulnerabilities
                .iter()
                .map(|v| VulnerabilityRecord {
                    vuln_id: v.id.clone(),
                    category: v.category.clone(),
                    cvss_base: v.cvss,
                })
                .collect(),
            is_decoy,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhitelistConfig {
    /// Host ids; translated to the hosts' groups when the tower is built.
    pub src: String,
    pub dst: String,
    pub port: u16,
    #[serde(default)]
    pub from_tick: Option<u64>,
    #[serde(default)]
    pub until_tick: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyConfig {
    pub switches: Vec<String>,
    #[serde(default)]
    pub links: Vec<(String, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ActionKind {
    PingSweep,
    PortScan,
    FingerprintSweep,
    FullScan,
    Exploit,
    AllPairs,
    ExpectedTraffic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionConfig {
    pub kind: ActionKind,
    #[serde(default)]
    pub at_tick: u64,
    /// Attacking host id; defaults to the workload attacker.
    #[serde(default)]
    pub from: Option<String>,
    #[serde(default)]
    pub target: Option<String>,
    #[serde(default)]
    pub ports: Option<Vec<u16>>,
    #[serde(default)]
    pub transport: Option<String>,
    #[serde(default)]
    pub vuln_id: Option<String>,
    /// Flow count for expected-traffic bursts.
    #[serde(default)]
    pub count: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadConfig {
    pub attacker: String,
    #[serde(default = "default_scan_repeats")]
    pub scan_repeats: u32,
    #[serde(default = "default_scan_gap")]
    pub scan_gap_ticks: u64,
    /// Ports swept by full scans; defaults to every configured service and
    /// decoy port plus a few common extras.
    #[serde(default)]
    pub scan_ports: Option<Vec<u16>>,
    #[serde(default)]
    pub actions: Vec<ActionConfig>,
}

fn default_scan_repeats() -> u32 {
    1
}

fn default_scan_gap() -> u64 {
    25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub tower: TowerConfig,
    #[serde(default)]
    pub obfuscation: crate::obfuscation::ObfuscationConfig,
    #[serde(default)]
    pub ids: IdsConfig,
    #[serde(default)]
    pub sim: SimConfig,
    pub topology: TopologyConfig,
    pub hosts: Vec<HostConfig>,
    #[serde(default)]
    pub decoys: Vec<HostConfig>,
    #[serde(default)]
    pub whitelist: Vec<WhitelistConfig>,
    pub workload: WorkloadConfig,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

pub fn load_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

/// Parses and validates a scenario document. Parse failures carry the
/// line/column context from the TOML parser.
pub fn parse_config(text: &str) -> Result<Scenario, ConfigError> {
    let scenario: Scenario = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

impl Scenario {
    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let t = &self.tower;
        if !(0.0..=1.0).contains(&t.alpha) {
            return Err(ConfigError::Validation(format!(
                "alpha: must be in [0,1], got {}",
                t.alpha
            )));
        }
        if !(0.0..=1.0).contains(&t.threshold) {
            return Err(ConfigError::Validation(format!(
                "threshold: must be in [0,1], got {}",
                t.threshold
            )));
        }
        if !(t.random_index > 0.0 && t.random_index < 1.0) {
            return Err(ConfigError::Validation(format!(
                "random_index: must be in (0,1), got {}",
                t.random_index
            )));
        }
        if t.layer_count < 1 {
            return Err(ConfigError::Validation(
                "layer_count: must be >= 1".to_string(),
            ));
        }
        for (name, siv) in &t.siv_table {
            if !(0.0..=10.0).contains(siv) {
                return Err(ConfigError::Validation(format!(
                    "siv_table: value for {name} out of [0,10]: {siv}"
                )));
            }
        }
        if !(0.0..=1.0).contains(&self.obfuscation.fake_rate) {
            return Err(ConfigError::Validation(format!(
                "fake_rate: must be in [0,1], got {}",
                self.obfuscation.fake_rate
            )));
        }

        let switch_set: BTreeSet<&String> = self.topology.switches.iter().collect();
        if switch_set.len() != self.topology.switches.len() {
            return Err(ConfigError::Validation(
                "topology.switches: duplicate switch id".to_string(),
            ));
        }
        for (a, b) in &self.topology.links {
            if !switch_set.contains(a) || !switch_set.contains(b) {
                return Err(ConfigError::Validation(format!(
                    "topology.links: link ({a},{b}) references an unknown switch"
                )));
            }
        }

        let mut ids = BTreeSet::new();
        let mut addrs = BTreeSet::new();
        for (host, decoy) in self
            .hosts
            .iter()
            .map(|h| (h, false))
            .chain(self.decoys.iter().map(|h| (h, true)))
        {
            if !ids.insert(&host.id) {
                return Err(ConfigError::Validation(format!(
                    "hosts: duplicate host id {}",
                    host.id
                )));
            }
            if !addrs.insert(&host.address) {
                return Err(ConfigError::Validation(format!(
                    "hosts: address {} assigned twice (real_address must be unique network-wide)",
                    host.address
                )));
            }
            if !switch_set.contains(&host.attachment) {
                return Err(ConfigError::Validation(format!(
                    "hosts: {} attached to unknown switch {}",
                    host.id, host.attachment
                )));
            }
            let mut ports = BTreeSet::new();
            for s in &host.services {
                if s.port == 0 {
                    return Err(ConfigError::Validation(format!(
                        "services: host {} service {} has port 0",
                        host.id, s.name
                    )));
                }
                if !ports.insert((s.transport.clone(), s.port)) {
                    return Err(ConfigError::Validation(format!(
                        "services: host {} reuses port {}/{} (port must be unique per host and transport)",
                        host.id, s.port, s.transport
                    )));
                }
                if !decoy && !t.siv_table.contains_key(&s.name) {
                    return Err(ConfigError::Validation(format!(
                        "siv_table: service {} of host {} has no SIV entry",
                        s.name, host.id
                    )));
                }
            }
            for v in &host.vulnerabilities {
                if !(0.0..=10.0).contains(&v.cvss) {
                    return Err(ConfigError::Validation(format!(
                        "vulnerabilities: {} on host {} has cvss {} out of [0,10]",
                        v.id, host.id, v.cvss
                    )));
                }
            }
        }
        if self.hosts.is_empty() {
            return Err(ConfigError::Validation(
                "hosts: at least one non-decoy host required".to_string(),
            ));
        }

        for w in &self.whitelist {
            for end in [&w.src, &w.dst] {
                if !self.hosts.iter().any(|h| &h.id == end) {
                    return Err(ConfigError::Validation(format!(
                        "whitelist: host {end} not defined"
                    )));
                }
            }
            if w.port == 0 {
                return Err(ConfigError::Validation(
                    "whitelist: port must be >= 1".to_string(),
                ));
            }
            if let (Some(a), Some(b)) = (w.from_tick, w.until_tick) {
                if a >= b {
                    return Err(ConfigError::Validation(format!(
                        "whitelist: empty window [{a},{b})"
                    )));
                }
            }
        }

        if !self.hosts.iter().any(|h| h.id == self.workload.attacker) {
            return Err(ConfigError::Validation(format!(
                "workload: attacker {} is not a configured host",
                self.workload.attacker
            )));
        }
        let known_vulns: BTreeSet<&String> = self
            .hosts
            .iter()
            .flat_map(|h| h.vulnerabilities.iter().map(|v| &v.id))
            .collect();
        for action in &self.workload.actions {
            if let Some(from) = &action.from {
                if !self.hosts.iter().any(|h| &h.id == from) {
                    return Err(ConfigError::Validation(format!(
                        "workload: action source {from} is not a configured host"
                    )));
                }
            }
            if let Some(target) = &action.target {
                let exists = self.hosts.iter().chain(self.decoys.iter()).any(|h| &h.id == target);
                if !exists {
                    return Err(ConfigError::Validation(format!(
                        "workload: action target {target} is not a configured host"
                    )));
                }
            }
            if action.kind == ActionKind::Exploit {
                match &action.vuln_id {
                    None => {
                        return Err(ConfigError::Validation(
                            "workload: exploit action requires vuln_id".to_string(),
                        ))
                    }
                    Some(v) if !known_vulns.contains(v) => {
                        return Err(ConfigError::Validation(format!(
                            "workload: vuln_id {v} is not defined on any host"
                        )));
                    }
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn host_profiles(&self) -> Vec<HostProfile> {
        self.hosts
            .iter()
            .map(|h| h.to_profile(false).expect("validated"))
            .collect()
    }

    pub fn decoy_profiles(&self) -> Vec<HostProfile> {
        self.decoys
            .iter()
            .map(|h| h.to_profile(true).expect("validated"))
            .collect()
    }

    /// Every attached profile, hosts then decoys.
    pub fn all_profiles(&self) -> Vec<HostProfile> {
        let mut all = self.host_profiles();
        all.extend(self.decoy_profiles());
        all
    }

    pub fn topology(&self) -> Topology {
        Topology {
            switches: self.topology.switches.clone(),
            links: self.topology.links.clone(),
        }
    }

    pub fn host_address(&self, host_id: &str) -> Option<Address> {
        self.hosts
            .iter()
            .chain(self.decoys.iter())
            .find(|h| h.id == host_id)
            .map(|h| Address::new(&h.address))
    }

    /// Builds the tower and translates the host-level whitelist into
    /// group-level entries.
    pub fn build_tower(&self) -> Result<crate::tower::ChaosTower, crate::tower::TowerError> {
        let hosts = self.host_profiles();
        let mut tower = crate::tower::build_tower(&hosts, &self.tower)?;
        for w in &self.whitelist {
            let src_group = tower.group_of(&w.src)?.group_id.clone();
            let dst_group = tower.group_of(&w.dst)?.group_id.clone();
            let window = match (w.from_tick, w.until_tick) {
                (Some(a), Some(b)) => Some((a, b)),
                (Some(a), None) => Some((a, u64::MAX)),
                (None, Some(b)) => Some((0, b)),
                (None, None) => None,
            };
            tower.whitelist.insert(WhitelistEntry {
                src_group,
                dst_group,
                dst_port: w.port,
                window,
            });
        }
        Ok(tower)
    }

    /// Ports a full scan probes: explicit list if given, otherwise the
    /// union of all configured service and decoy ports plus common extras.
    pub fn effective_scan_ports(&self) -> Vec<u16> {
        if let Some(ports) = &self.workload.scan_ports {
            let mut p = ports.clone();
            p.sort_unstable();
            p.dedup();
            return p;
        }
        let mut ports: BTreeSet<u16> = BTreeSet::new();
        for h in self.hosts.iter().chain(self.decoys.iter()) {
            for s in &h.services {
                ports.insert(s.port);
            }
        }
        for extra in [23, 3306, 3389, 8443, 9100] {
            ports.insert(extra);
        }
        ports.into_iter().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"
mode = "chaos"
seed = 1

[tower]
alpha = 0.5
threshold = 0.5
random_index = 0.5
layer_count = 2
binning = "equal-width"
strict_intra_layer = false

[tower.siv_table]
web = 6.0

[topology]
switches = ["s1"]

[[hosts]]
id = "a"
address = "10.0.0.1"
attachment = "s1"

[[hosts]]
id = "b"
address = "10.0.0.2"
attachment = "s1"

  [[hosts.services]]
  name = "web"
  port = 80
  banner = "httpd"

  [[hosts.vulnerabilities]]
  id = "cve-1"
  cvss = 7.0

[workload]
attacker = "a"
"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let s = parse_config(&minimal()).unwrap();
        assert_eq!(s.mode, Mode::Chaos);
        assert_eq!(s.obfuscation.fake_rate, 0.5);
        assert_eq!(s.ids.port_scan_k, 15);
        assert_eq!(s.sim.controller_delay_ticks, 1);
        assert_eq!(s.workload.scan_repeats, 1);
    }

    #[test]
    fn alpha_out_of_range_is_rejected_by_name() {
        let text = minimal().replace("alpha = 0.5", "alpha = 1.5");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("alpha")));
    }

    #[test]
    fn missing_siv_entry_is_rejected_by_name() {
        let text = minimal().replace("web = 6.0", "other = 6.0");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("siv_table")));
    }

    #[test]
    fn parse_error_carries_location() {
        let err = parse_config("mode = chaos\n").unwrap_err();
        match err {
            ConfigError::Parse(msg) => assert!(msg.contains("line"), "{msg}"),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_address_rejected() {
        let text = minimal().replace("address = \"10.0.0.2\"", "address = \"10.0.0.1\"");
        assert!(parse_config(&text).is_err());
    }

    #[test]
    fn roundtrip_through_toml_is_identity() {
        let s = parse_config(&minimal()).unwrap();
        let again = parse_config(&s.to_toml()).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn unknown_attacker_rejected() {
        let text = minimal().replace("attacker = \"a\"", "attacker = \"zz\"");
        let err = parse_config(&text).unwrap_err();
        assert!(matches!(err, ConfigError::Validation(ref m) if m.contains("attacker")));
    }
}
