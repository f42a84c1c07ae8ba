//! Network schema: the meta template of a typed network.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Short label naming a node type, e.g. `U` or `Ci`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeTypeId(String);

impl NodeTypeId {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        if code.is_empty() {
            return Err(Error::Schema("empty node type code".into()));
        }
        Ok(NodeTypeId(code))
    }

    pub fn code(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeTypeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Node types plus the set of allowed relations between them.
///
/// Relations are stored in one canonical orientation; adjacency indexes both
/// directions, so `relation_allowed` accepts either orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema", into = "RawSchema")]
pub struct NetworkSchema {
    node_types: Vec<NodeTypeId>,
    relations: Vec<(NodeTypeId, NodeTypeId)>,
}

#[derive(Serialize, Deserialize)]
struct RawSchema {
    node_types: Vec<String>,
    relations: Vec<(String, String)>,
}

impl TryFrom<RawSchema> for NetworkSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        let node_types = raw
            .node_types
            .into_iter()
            .map(NodeTypeId::new)
            .collect::<Result<Vec<_>>>()?;
        let relations = raw
            .relations
            .into_iter()
            .map(|(a, b)| Ok((NodeTypeId::new(a)?, NodeTypeId::new(b)?)))
            .collect::<Result<Vec<_>>>()?;
        NetworkSchema::new(node_types, relations)
    }
}

impl From<NetworkSchema> for RawSchema {
    fn from(schema: NetworkSchema) -> Self {
        RawSchema {
            node_types: schema.node_types.iter().map(|t| t.0.clone()).collect(),
            relations: schema
                .relations
                .iter()
                .map(|(a, b)| (a.0.clone(), b.0.clone()))
                .collect(),
        }
    }
}

impl NetworkSchema {
    pub fn new(
        node_types: Vec<NodeTypeId>,
        relations: Vec<(NodeTypeId, NodeTypeId)>,
    ) -> Result<Self> {
        for (i, t) in node_types.iter().enumerate() {
            if node_types[..i].contains(t) {
                return Err(Error::Schema(format!("duplicate node type {t:?}")));
            }
        }
        for (i, (a, b)) in relations.iter().enumerate() {
            if !node_types.contains(a) {
                return Err(Error::Schema(format!(
                    "relation endpoint {a} is not a declared node type"
                )));
            }
            if !node_types.contains(b) {
                return Err(Error::Schema(format!(
                    "relation endpoint {b} is not a declared node type"
                )));
            }
            let dup = relations[..i]
                .iter()
                .any(|(x, y)| (x == a && y == b) || (x == b && y == a));
            if dup {
                return Err(Error::Schema(format!("duplicate relation ({a}, {b})")));
            }
        }
        if node_types.len() + relations.len() <= 2 {
            return Err(Error::Schema(
                "network is not heterogeneous: need more than two node/relation types combined"
                    .into(),
            ));
        }
        Ok(NetworkSchema {
            node_types,
            relations,
        })
    }

    /// Parse a schema from the JSON file format:
    /// `{"node_types": ["U", "M"], "relations": [["U", "M"]]}`.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn node_types(&self) -> &[NodeTypeId] {
        &self.node_types
    }

    pub fn relations(&self) -> &[(NodeTypeId, NodeTypeId)] {
        &self.relations
    }

    pub fn has_type(&self, t: &NodeTypeId) -> bool {
        self.node_types.contains(t)
    }

    pub fn type_index(&self, t: &NodeTypeId) -> Option<usize> {
        self.node_types.iter().position(|x| x == t)
    }

    pub fn type_by_code(&self, code: &str) -> Option<&NodeTypeId> {
        self.node_types.iter().find(|t| t.code() == code)
    }

    /// True when (a, b) is a declared relation in either orientation.
    pub fn relation_allowed(&self, a: &NodeTypeId, b: &NodeTypeId) -> bool {
        self.relations
            .iter()
            .any(|(x, y)| (x == a && y == b) || (x == b && y == a))
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn ty(code: &str) -> NodeTypeId {
        NodeTypeId::new(code).unwrap()
    }

    /// Movie-domain schema: types {U, M, D, A, T, G} with User-Movie,
    /// User-User, User-Group, Movie-Director, Movie-Actor, Movie-Type.
    pub(crate) fn movie_schema() -> NetworkSchema {
        NetworkSchema::new(
            ["U", "M", "D", "A", "T", "G"].iter().map(|c| ty(c)).collect(),
            vec![
                (ty("U"), ty("M")),
                (ty("U"), ty("U")),
                (ty("U"), ty("G")),
                (ty("M"), ty("D")),
                (ty("M"), ty("A")),
                (ty("M"), ty("T")),
            ],
        )
        .unwrap()
    }

    #[test]
    fn movie_domain_schema_is_accepted() {
        let s = movie_schema();
        assert_eq!(s.node_types().len(), 6);
        assert_eq!(s.relations().len(), 6);
        assert!(s.relation_allowed(&ty("M"), &ty("U")));
        assert!(!s.relation_allowed(&ty("U"), &ty("D")));
    }

    #[test]
    fn rejects_empty_type_code() {
        assert!(NodeTypeId::new("").is_err());
    }

    #[test]
    fn rejects_undeclared_relation_endpoint() {
        let err = NetworkSchema::new(
            vec![ty("U"), ty("M")],
            vec![(ty("U"), ty("X"))],
        );
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_duplicate_relation_in_either_orientation() {
        let err = NetworkSchema::new(
            vec![ty("U"), ty("M")],
            vec![(ty("U"), ty("M")), (ty("M"), ty("U"))],
        );
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn rejects_homogeneous_network() {
        // One type plus one relation is not heterogeneous.
        let err = NetworkSchema::new(vec![ty("U")], vec![(ty("U"), ty("U"))]);
        assert!(matches!(err, Err(Error::Schema(_))));
    }

    #[test]
    fn json_round_trip() {
        let s = movie_schema();
        let text = serde_json::to_string(&s).unwrap();
        let back = NetworkSchema::from_json(&text).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn json_validation_applies_on_load() {
        let bad = r#"{"node_types": ["U"], "relations": [["U", "M"]]}"#;
        assert!(NetworkSchema::from_json(bad).is_err());
    }
}
