//! Meta-path parsing and validation.

use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::hin::schema::{NetworkSchema, NodeTypeId};

/// A validated sequence of node types, e.g. `U-M-U`.
///
/// The first type must equal the last so the pattern can repeat along a walk
/// and filtering yields a non-degenerate homogeneous sequence, and it must
/// equal the designated target type (user or item side).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaPath {
    label: String,
    types: Vec<NodeTypeId>,
}

impl MetaPath {
    /// Parse a meta-path such as `"UMU"`, `"UMDMU"` or `"U-M-U"`. Multi-letter
    /// codes follow the uppercase-starts-a-code convention (`"UBCiBU"` splits
    /// as U, B, Ci, B, U) unless dashes separate them explicitly.
    pub fn parse(text: &str, schema: &NetworkSchema, target: &NodeTypeId) -> Result<Self> {
        let codes = tokenize(text)?;
        if codes.len() < 2 {
            return Err(err(text, "need at least two node types"));
        }
        let mut types = Vec::with_capacity(codes.len());
        for code in &codes {
            let t = schema
                .type_by_code(code)
                .ok_or_else(|| err(text, format!("unknown type code {code:?}")))?;
            types.push(t.clone());
        }
        for pair in types.windows(2) {
            if !schema.relation_allowed(&pair[0], &pair[1]) {
                return Err(err(
                    text,
                    format!("({}, {}) is not a schema relation", pair[0], pair[1]),
                ));
            }
        }
        if types.first() != types.last() {
            return Err(err(text, "first and last types must match"));
        }
        if types[0] != *target {
            return Err(err(
                text,
                format!("must start with target type {target}, starts with {}", types[0]),
            ));
        }
        let label = codes.concat();
        Ok(MetaPath { label, types })
    }

    /// Canonical label: concatenated type codes without separators.
    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn types(&self) -> &[NodeTypeId] {
        &self.types
    }

    pub fn target_type(&self) -> &NodeTypeId {
        &self.types[0]
    }

    /// Node type required at 1-based walk step `step`. Once the pattern
    /// reaches its last type it repeats, the shared first/last type acting as
    /// the junction: for `UMU` the step types are M, U, M, U, ...
    pub fn type_at_step(&self, step: usize) -> &NodeTypeId {
        debug_assert!(step >= 1);
        let cycle = self.types.len() - 1;
        &self.types[1 + (step - 1) % cycle]
    }
}

impl fmt::Display for MetaPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

fn tokenize(text: &str) -> Result<Vec<String>> {
    let text = text.trim();
    if text.is_empty() {
        return Err(err(text, "empty meta-path"));
    }
    if text.contains('-') {
        return Ok(text.split('-').map(|s| s.trim().to_string()).collect());
    }
    let mut codes: Vec<String> = Vec::new();
    for ch in text.chars() {
        if ch.is_uppercase() || codes.is_empty() {
            codes.push(ch.to_string());
        } else {
            codes.last_mut().unwrap().push(ch);
        }
    }
    Ok(codes)
}

fn err(text: &str, msg: impl Into<String>) -> Error {
    Error::MetaPath {
        text: text.to_string(),
        msg: msg.into(),
    }
}

/// Meta-path strings from the sectioned file format, split by target side.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MetaPathFile {
    pub user: Vec<String>,
    pub item: Vec<String>,
}

/// Read a meta-paths file: one meta-path per line under `[user]` / `[item]`
/// section headers; `#` comments and blank lines ignored.
pub fn load_meta_path_file(path: impl AsRef<Path>) -> Result<MetaPathFile> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    parse_meta_path_file(reader, &path.display().to_string())
}

pub fn parse_meta_path_file(reader: impl BufRead, name: &str) -> Result<MetaPathFile> {
    let mut out = MetaPathFile::default();
    let mut section: Option<bool> = None; // true = user
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line {
            "[user]" => section = Some(true),
            "[item]" => section = Some(false),
            _ => match section {
                Some(true) => out.user.push(line.to_string()),
                Some(false) => out.item.push(line.to_string()),
                None => {
                    return Err(Error::parse(
                        name,
                        lineno + 1,
                        "meta-path outside a [user] or [item] section",
                    ))
                }
            },
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hin::schema::tests::movie_schema;

    fn ty(code: &str) -> NodeTypeId {
        NodeTypeId::new(code).unwrap()
    }

    #[test]
    fn parses_table_meta_paths() {
        let s = movie_schema();
        for text in ["UMU", "UMDMU", "UMAMU", "UMTMU"] {
            let mp = MetaPath::parse(text, &s, &ty("U")).unwrap();
            assert_eq!(mp.label(), text);
            assert_eq!(mp.types().first(), mp.types().last());
        }
        for text in ["MUM", "MAM", "MDM", "MTM"] {
            MetaPath::parse(text, &s, &ty("M")).unwrap();
        }
    }

    #[test]
    fn start_type_mismatch_rejected() {
        let s = movie_schema();
        assert!(matches!(
            MetaPath::parse("MUM", &s, &ty("U")),
            Err(Error::MetaPath { .. })
        ));
    }

    #[test]
    fn non_relation_pair_rejected() {
        let s = movie_schema();
        // No User-Director relation in the movie schema.
        assert!(MetaPath::parse("UDU", &s, &ty("U")).is_err());
    }

    #[test]
    fn unknown_code_rejected() {
        let s = movie_schema();
        assert!(MetaPath::parse("UXU", &s, &ty("U")).is_err());
    }

    #[test]
    fn open_path_rejected() {
        let s = movie_schema();
        assert!(MetaPath::parse("UM", &s, &ty("U")).is_err());
    }

    #[test]
    fn consecutive_pairs_are_schema_relations() {
        let s = movie_schema();
        let mp = MetaPath::parse("UMDMU", &s, &ty("U")).unwrap();
        for pair in mp.types().windows(2) {
            assert!(s.relation_allowed(&pair[0], &pair[1]));
        }
    }

    #[test]
    fn cyclic_step_types() {
        let s = movie_schema();
        let mp = MetaPath::parse("UMU", &s, &ty("U")).unwrap();
        let steps: Vec<&str> = (1..=5).map(|i| mp.type_at_step(i).code()).collect();
        assert_eq!(steps, vec!["M", "U", "M", "U", "M"]);

        let mp = MetaPath::parse("UMDMU", &s, &ty("U")).unwrap();
        let steps: Vec<&str> = (1..=8).map(|i| mp.type_at_step(i).code()).collect();
        assert_eq!(steps, vec!["M", "D", "M", "U", "M", "D", "M", "U"]);
    }

    #[test]
    fn dashed_and_multichar_codes() {
        let s = NetworkSchema::new(
            vec![ty("U"), ty("B"), ty("Ci")],
            vec![(ty("U"), ty("B")), (ty("B"), ty("Ci"))],
        )
        .unwrap();
        let mp = MetaPath::parse("UBCiBU", &s, &ty("U")).unwrap();
        assert_eq!(
            mp.types().iter().map(|t| t.code()).collect::<Vec<_>>(),
            vec!["U", "B", "Ci", "B", "U"]
        );
        let dashed = MetaPath::parse("U-B-Ci-B-U", &s, &ty("U")).unwrap();
        assert_eq!(mp, dashed);
    }

    #[test]
    fn meta_path_file_sections() {
        let text = "# paths\n[user]\nUMU\nUMDMU\n[item]\nMUM\n";
        let f = parse_meta_path_file(text.as_bytes(), "mp.txt").unwrap();
        assert_eq!(f.user, vec!["UMU", "UMDMU"]);
        assert_eq!(f.item, vec!["MUM"]);
    }

    #[test]
    fn meta_path_outside_section_rejected() {
        let text = "UMU\n[user]\n";
        assert!(parse_meta_path_file(text.as_bytes(), "mp.txt").is_err());
    }
}
