use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Abstract node identifier standing in for an IP address.
pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Udp,
    Tcp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Udp => "udp",
            Protocol::Tcp => "tcp",
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "udp" | "UDP" => Ok(Protocol::Udp),
            "tcp" | "TCP" => Ok(Protocol::Tcp),
            other => Err(format!("unknown protocol `{other}`")),
        }
    }
}

/// 5-tuple naming a flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowKey {
    pub src: NodeId,
    pub sport: u16,
    pub dst: NodeId,
    pub dport: u16,
    pub proto: Protocol,
}

impl FlowKey {
    pub const fn new(src: NodeId, sport: u16, dst: NodeId, dport: u16, proto: Protocol) -> Self {
        FlowKey {
            src,
            sport,
            dst,
            dport,
            proto,
        }
    }
}

impl fmt::Display for FlowKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{} -> {}:{} ({})",
            self.src, self.sport, self.dst, self.dport, self.proto
        )
    }
}
