//! Pipeline nodes as addressed by the API: `cluster`, `dimensions:c1`,
//! `apply:c1-r0`, `contrast:c1-r0.g1`, ...

use std::fmt;
use std::str::FromStr;

use schemind_core::{ClusterId, RecordId, SchemaId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum NodeKey {
    Cluster,
    FeatureMatrix(ClusterId),
    Dimensions(ClusterId),
    Attributes(ClusterId),
    Overall(ClusterId),
    Apply(SchemaId),
    Contrast(RecordId),
    Align(RecordId),
    Iterate(SchemaId),
}

pub const NODE_KINDS: [&str; 9] = [
    "cluster",
    "feature_matrix",
    "dimensions",
    "attributes",
    "overall",
    "apply",
    "contrast",
    "align",
    "iterate",
];

impl NodeKey {
    pub fn kind(&self) -> &'static str {
        match self {
            NodeKey::Cluster => "cluster",
            NodeKey::FeatureMatrix(_) => "feature_matrix",
            NodeKey::Dimensions(_) => "dimensions",
            NodeKey::Attributes(_) => "attributes",
            NodeKey::Overall(_) => "overall",
            NodeKey::Apply(_) => "apply",
            NodeKey::Contrast(_) => "contrast",
            NodeKey::Align(_) => "align",
            NodeKey::Iterate(_) => "iterate",
        }
    }

    fn target(&self) -> Option<&str> {
        match self {
            NodeKey::Cluster => None,
            NodeKey::FeatureMatrix(c) | NodeKey::Dimensions(c) | NodeKey::Attributes(c) | NodeKey::Overall(c) => {
                Some(c.as_str())
            }
            NodeKey::Apply(s) | NodeKey::Iterate(s) => Some(s.as_str()),
            NodeKey::Contrast(r) | NodeKey::Align(r) => Some(r.as_str()),
        }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.target() {
            Some(t) => write!(f, "{}:{t}", self.kind()),
            None => f.write_str(self.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown node {0:?}; kinds are {kinds}", kinds = NODE_KINDS.join(", "))]
pub struct BadNode(pub String);

impl FromStr for NodeKey {
    type Err = BadNode;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadNode(s.to_string());
        let (kind, target) = match s.split_once(':') {
            Some((k, t)) if !t.trim().is_empty() => (k, Some(t.trim().to_string())),
            Some(_) => return Err(bad()),
            None => (s, None),
        };
        let node = match (kind, target) {
            ("cluster", None) => NodeKey::Cluster,
            ("feature_matrix", Some(t)) => NodeKey::FeatureMatrix(t.into()),
            ("dimensions", Some(t)) => NodeKey::Dimensions(t.into()),
            ("attributes", Some(t)) => NodeKey::Attributes(t.into()),
            ("overall", Some(t)) => NodeKey::Overall(t.into()),
            ("apply", Some(t)) => NodeKey::Apply(t.into()),
            ("contrast", Some(t)) => NodeKey::Contrast(t.into()),
            ("align", Some(t)) => NodeKey::Align(t.into()),
            ("iterate", Some(t)) => NodeKey::Iterate(t.into()),
            _ => return Err(bad()),
        };
        Ok(node)
    }
}

impl From<NodeKey> for String {
    fn from(k: NodeKey) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for NodeKey {
    type Error = BadNode;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "error", rename_all = "snake_case")]
pub enum NodeStatus {
    Idle,
    Running,
    Done,
    Failed(String),
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for s in [
            "cluster",
            "feature_matrix:c2",
            "overall:c1",
            "apply:c1-r0",
            "align:c1-r0.g3",
            "iterate:c3-r1",
        ] {
            let k: NodeKey = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
            let json = serde_json::to_string(&k).unwrap();
            assert_eq!(serde_json::from_str::<NodeKey>(&json).unwrap(), k);
        }
    }

    #[test]
    fn rejects_typos_and_missing_targets() {
        for s in ["clusters", "dimensions", "dimensions:", "cluster:c1", "apply"] {
            assert!(s.parse::<NodeKey>().is_err(), "{s}");
        }
    }
}
