//! Scenario files: a structured-text format with `[section]` key/value
//! pairs and a node table.
//!
//! ```text
//! [run]
//! duration_s = 3600
//! warmup_s = 900
//! replicas = 20
//! base_seed = 1
//!
//! [channel]
//! tx_range_m = 60
//! interference_range_m = 90
//! p_tx_success = 1.0
//! p_rx_success = 1.0
//!
//! [nodes]
//! # id  x_m  y_m  role            traffic
//! 1     0    0    border_router   -
//! 20    160  120  sender          server
//! 26    200  80   sender          node:20
//! ```
//!
//! Missing sections fall back to defaults (a warning is emitted); invalid
//! values name the offending key and line.

use std::fmt;
use std::path::Path;

use crate::flow::{default_key_features, FieldSelector, KeyFeature, KeyFeatureSpec};
use crate::node::{Role, TrafficDst};
use crate::packet::ShortAddr;
use crate::sim::channel::UdgmParams;
use crate::sim::CostModel;

#[derive(Clone, Debug)]
pub struct ScenarioNode {
    pub id: u16,
    pub x_m: f64,
    pub y_m: f64,
    pub role: Role,
    pub traffic: TrafficDst,
}

#[derive(Clone, Debug)]
pub struct SdnParams {
    pub flow_table_capacity: usize,
    pub update_period_s: u32,
    pub default_ttl_s: u32,
    pub key_features: KeyFeatureSpec,
    /// Controller maintenance sweep period; must stay below the entry TTL
    /// so installed paths never lapse in steady state.
    pub path_refresh_period_s: u32,
    pub miss_queue_cap: usize,
}

impl Default for SdnParams {
    fn default() -> Self {
        SdnParams {
            flow_table_capacity: 40,
            update_period_s: 1200,
            default_ttl_s: 600,
            key_features: default_key_features(),
            path_refresh_period_s: 500,
            miss_queue_cap: 4,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RplParams {
    pub routing_capacity: usize,
    pub dao_period_s: u32,
}

impl Default for RplParams {
    fn default() -> Self {
        RplParams {
            routing_capacity: 40,
            dao_period_s: 60,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RunParams {
    pub duration_s: u32,
    pub warmup_s: u32,
    pub replicas: u32,
    pub base_seed: u64,
}

impl Default for RunParams {
    fn default() -> Self {
        RunParams {
            duration_s: 3600,
            warmup_s: 900,
            replicas: 20,
            base_seed: 1,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub nodes: Vec<ScenarioNode>,
    pub channel: UdgmParams,
    pub costs: CostModel,
    pub sdn: SdnParams,
    pub rpl: RplParams,
    pub run: RunParams,
    pub payload_bytes: u16,
}

#[derive(Clone, Debug)]
pub enum ScenarioError {
    Io(String),
    Parse { line: usize, msg: String },
    Validation(String),
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScenarioError::Io(e) => write!(f, "cannot read scenario: {e}"),
            ScenarioError::Parse { line, msg } => write!(f, "line {line}: {msg}"),
            ScenarioError::Validation(msg) => write!(f, "invalid scenario: {msg}"),
        }
    }
}

impl std::error::Error for ScenarioError {}

impl Scenario {
    pub fn border_router(&self) -> ShortAddr {
        self.nodes
            .iter()
            .find(|n| n.role == Role::BorderRouter)
            .map(|n| ShortAddr(n.id))
            .expect("validated scenario has a border router")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let err = |m: String| Err(ScenarioError::Validation(m));
        if self.nodes.is_empty() {
            return err("no nodes defined".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for n in &self.nodes {
            if n.id == 0 || n.id == 0xFFFF {
                return err(format!("node id {} is reserved", n.id));
            }
            if !seen.insert(n.id) {
                return err(format!("duplicate node id {}", n.id));
            }
        }
        let brs = self
            .nodes
            .iter()
            .filter(|n| n.role == Role::BorderRouter)
            .count();
        if brs != 1 {
            return err(format!("expected exactly 1 border_router, found {brs}"));
        }
        for n in &self.nodes {
            match n.traffic {
                TrafficDst::None => {}
                _ if n.role != Role::Sender => {
                    return err(format!("node {} has traffic but is not a sender", n.id));
                }
                TrafficDst::Peer(p) => {
                    if p.0 == n.id {
                        return err(format!("node {} sends traffic to itself", n.id));
                    }
                    if !seen.contains(&p.0) {
                        return err(format!("node {} sends to unknown node {}", n.id, p.0));
                    }
                }
                TrafficDst::Server => {}
            }
        }
        if !(0.0..=1.0).contains(&self.channel.p_tx_success)
            || !(0.0..=1.0).contains(&self.channel.p_rx_success)
        {
            return err("channel success probabilities must be within [0, 1]".into());
        }
        if self.channel.interference_range_m < self.channel.tx_range_m {
            return err("interference_range_m must be >= tx_range_m".into());
        }
        if self.channel.tx_range_m <= 0.0 {
            return err("tx_range_m must be positive".into());
        }
        if self.costs.bitrate_bps == 0 {
            return err("bitrate_bps must be positive".into());
        }
        for (name, v) in [
            ("duration_s", self.run.duration_s),
            ("replicas", self.run.replicas),
            ("update_period_s", self.sdn.update_period_s),
            ("default_ttl_s", self.sdn.default_ttl_s),
            ("path_refresh_period_s", self.sdn.path_refresh_period_s),
            ("dao_period_s", self.rpl.dao_period_s),
        ] {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.run.warmup_s >= self.run.duration_s {
            return err("warmup_s must be below duration_s".into());
        }
        if self.payload_bytes == 0 {
            return err("payload_bytes must be positive".into());
        }
        Ok(())
    }
}

pub fn load_scenario(path: &Path) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{path:?}: {e}")))?;
    parse_scenario(&text)
}

/// Parse and validate; returns the scenario plus warnings about applied
/// defaults.
pub fn parse_scenario(text: &str) -> Result<(Scenario, Vec<String>), ScenarioError> {
    let mut scenario = Scenario {
        nodes: Vec::new(),
        channel: UdgmParams::default(),
        costs: CostModel::default(),
        sdn: SdnParams::default(),
        rpl: RplParams::default(),
        run: RunParams::default(),
        payload_bytes: 40,
    };
    let mut seen_sections = std::collections::BTreeSet::new();
    let mut section = String::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[') {
            let name = name.strip_suffix(']').ok_or(ScenarioError::Parse {
                line: lineno,
                msg: "unterminated section header".into(),
            })?;
            section = name.to_string();
            seen_sections.insert(section.clone());
            continue;
        }
        match section.as_str() {
            "nodes" => parse_node_row(&mut scenario, line, lineno)?,
            "" => {
                return Err(ScenarioError::Parse {
                    line: lineno,
                    msg: "content before the first [section]".into(),
                })
            }
            s => parse_kv(&mut scenario, s, line, lineno)?,
        }
    }
    let mut warnings = Vec::new();
    for required in ["run", "channel", "costs", "sdn", "rpl"] {
        if !seen_sections.contains(required) {
            warnings.push(format!("missing [{required}] section, defaults applied"));
        }
    }
    scenario.validate()?;
    Ok((scenario, warnings))
}

fn parse_node_row(s: &mut Scenario, line: &str, lineno: usize) -> Result<(), ScenarioError> {
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 5 {
        return Err(ScenarioError::Parse {
            line: lineno,
            msg: format!("expected 5 columns (id x_m y_m role traffic), got {}", parts.len()),
        });
    }
    let parse_err = |what: &str| ScenarioError::Parse {
        line: lineno,
        msg: format!("cannot parse {what}"),
    };
    let id: u16 = parts[0].parse().map_err(|_| parse_err("node id"))?;
    let x_m: f64 = parts[1].parse().map_err(|_| parse_err("x_m"))?;
    let y_m: f64 = parts[2].parse().map_err(|_| parse_err("y_m"))?;
    let role = match parts[3] {
        "border_router" => Role::BorderRouter,
        "forwarder" => Role::Forwarder,
        "sender" => Role::Sender,
        other => {
            return Err(ScenarioError::Parse {
                line: lineno,
                msg: format!("unknown role '{other}'"),
            })
        }
    };
    let traffic = match parts[4] {
        "-" => TrafficDst::None,
        "server" => TrafficDst::Server,
        other => match other.strip_prefix("node:") {
            Some(n) => TrafficDst::Peer(ShortAddr(
                n.parse().map_err(|_| parse_err("traffic peer id"))?,
            )),
            None => {
                return Err(ScenarioError::Parse {
                    line: lineno,
                    msg: format!("unknown traffic '{other}' (use -, server, or node:<id>)"),
                })
            }
        },
    };
    s.nodes.push(ScenarioNode {
        id,
        x_m,
        y_m,
        role,
        traffic,
    });
    Ok(())
}

fn parse_kv(s: &mut Scenario, section: &str, line: &str, lineno: usize) -> Result<(), ScenarioError> {
    let (key, value) = line.split_once('=').ok_or(ScenarioError::Parse {
        line: lineno,
        msg: "expected key = value".into(),
    })?;
    let key = key.trim();
    let value = value.trim();
    let bad = |key: &str| ScenarioError::Parse {
        line: lineno,
        msg: format!("invalid value for {key}"),
    };
    macro_rules! num {
        ($t:ty) => {
            value.parse::<$t>().map_err(|_| bad(key))?
        };
    }
    match (section, key) {
        ("run", "duration_s") => s.run.duration_s = num!(u32),
        ("run", "warmup_s") => s.run.warmup_s = num!(u32),
        ("run", "replicas") => s.run.replicas = num!(u32),
        ("run", "base_seed") => s.run.base_seed = num!(u64),
        ("channel", "tx_range_m") => s.channel.tx_range_m = num!(f64),
        ("channel", "interference_range_m") => s.channel.interference_range_m = num!(f64),
        ("channel", "p_tx_success") => s.channel.p_tx_success = num!(f64),
        ("channel", "p_rx_success") => s.channel.p_rx_success = num!(f64),
        ("costs", "bitrate_bps") => s.costs.bitrate_bps = num!(u64),
        ("costs", "t_proc_mesh_us") => s.costs.t_proc_mesh_us = num!(u64),
        ("costs", "t_proc_routeover_base_us") => s.costs.t_proc_routeover_base_us = num!(u64),
        ("costs", "t_proc_routeover_per_frag_us") => {
            s.costs.t_proc_routeover_per_frag_us = num!(u64)
        }
        ("costs", "t_ext_link_ms") => s.costs.t_ext_link_us = num!(u64) * 1000,
        ("sdn", "flow_table_capacity") => s.sdn.flow_table_capacity = num!(usize),
        ("sdn", "update_period_s") => s.sdn.update_period_s = num!(u32),
        ("sdn", "default_ttl_s") => s.sdn.default_ttl_s = num!(u32),
        ("sdn", "path_refresh_period_s") => s.sdn.path_refresh_period_s = num!(u32),
        ("sdn", "miss_queue_cap") => s.sdn.miss_queue_cap = num!(usize),
        ("sdn", "key_features") => s.sdn.key_features = parse_key_features(value, lineno)?,
        ("rpl", "routing_capacity") => s.rpl.routing_capacity = num!(usize),
        ("rpl", "dao_period_s") => s.rpl.dao_period_s = num!(u32),
        ("traffic", "payload_bytes") => s.payload_bytes = num!(u16),
        _ => {
            return Err(ScenarioError::Parse {
                line: lineno,
                msg: format!("unknown key '{key}' in section [{section}]"),
            })
        }
    }
    Ok(())
}

fn parse_key_features(value: &str, lineno: usize) -> Result<KeyFeatureSpec, ScenarioError> {
    // Format: field:offset:size, comma-separated; "none" for empty
    // (empty spec means whole-frame miss reports).
    if value == "none" {
        return Ok(Vec::new());
    }
    let mut spec = Vec::new();
    for item in value.split(',') {
        let parts: Vec<&str> = item.trim().split(':').collect();
        if parts.len() != 3 {
            return Err(ScenarioError::Parse {
                line: lineno,
                msg: format!("key feature '{item}' is not field:offset:size"),
            });
        }
        let field = match parts[0] {
            "mac_src" => FieldSelector::MacSrc,
            "mac_dst" => FieldSelector::MacDst,
            "mesh_orig" => FieldSelector::MeshOrig,
            "mesh_final" => FieldSelector::MeshFinal,
            "mesh_hops_left" => FieldSelector::MeshHopsLeft,
            "frag_tag" => FieldSelector::FragTag,
            "payload" => FieldSelector::Payload,
            other => {
                return Err(ScenarioError::Parse {
                    line: lineno,
                    msg: format!("unknown field '{other}'"),
                })
            }
        };
        let parse_err = |what: &str| ScenarioError::Parse {
            line: lineno,
            msg: format!("cannot parse key-feature {what}"),
        };
        spec.push(KeyFeature {
            field,
            offset_bits: parts[1].parse().map_err(|_| parse_err("offset"))?,
            size_bits: parts[2].parse().map_err(|_| parse_err("size"))?,
        });
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
[run]
duration_s = 600
warmup_s = 100
replicas = 2
base_seed = 7

[nodes]
1 0 0 border_router -
2 40 0 sender server
";

    #[test]
    fn minimal_scenario_with_defaults_and_warnings() {
        let (s, warnings) = parse_scenario(MINIMAL).unwrap();
        assert_eq!(s.nodes.len(), 2);
        assert_eq!(s.border_router(), ShortAddr(1));
        assert_eq!(s.run.duration_s, 600);
        // Defaults applied for the missing sections, with warnings.
        assert_eq!(s.sdn.flow_table_capacity, 40);
        assert_eq!(s.rpl.dao_period_s, 60);
        assert!(warnings.iter().any(|w| w.contains("[channel]")));
        assert!(warnings.iter().any(|w| w.contains("[costs]")));
    }

    #[test]
    fn duplicate_node_id_names_the_id() {
        let text = MINIMAL.replace("2 40 0 sender server", "1 40 0 sender server");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("duplicate node id 1"), "{err}");
    }

    #[test]
    fn two_border_routers_rejected() {
        let text = MINIMAL.replace("2 40 0 sender server", "2 40 0 border_router -");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("border_router"), "{err}");
    }

    #[test]
    fn m2m_self_destination_rejected() {
        let text = MINIMAL.replace("2 40 0 sender server", "2 40 0 sender node:2");
        let err = parse_scenario(&text).unwrap_err();
        assert!(err.to_string().contains("itself"), "{err}");
    }

    #[test]
    fn parse_error_names_line() {
        let text = "[run]\nduration_s == nope\n";
        let err = parse_scenario(text).unwrap_err();
        match err {
            ScenarioError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn key_features_parse() {
        let text = MINIMAL.to_string()
            + "\n[sdn]\nkey_features = mesh_orig:0:16, mesh_final:0:16\n";
        let (s, _) = parse_scenario(&text).unwrap();
        assert_eq!(s.sdn.key_features, default_key_features());
        let text2 = MINIMAL.to_string() + "\n[sdn]\nkey_features = none\n";
        let (s2, _) = parse_scenario(&text2).unwrap();
        assert!(s2.sdn.key_features.is_empty());
    }

    #[test]
    fn traffic_to_unknown_peer_rejected() {
        let text = MINIMAL.replace("2 40 0 sender server", "2 40 0 sender node:9");
        assert!(parse_scenario(&text).is_err());
    }
}
