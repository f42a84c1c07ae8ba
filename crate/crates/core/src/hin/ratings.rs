//! Rating records and dataset ingestion.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hin::graph::HinGraph;
use crate::hin::schema::NodeTypeId;

/// Declared rating scale. The scale comes from configuration, never inferred
/// from data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RatingScale {
    pub min: f64,
    pub max: f64,
}

impl RatingScale {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !min.is_finite() || !max.is_finite() || min >= max {
            return Err(Error::Config(format!("invalid rating scale [{min}, {max}]")));
        }
        Ok(RatingScale { min, max })
    }

    pub fn contains(&self, r: f64) -> bool {
        r.is_finite() && r >= self.min && r <= self.max
    }

    pub fn clip(&self, r: f64) -> f64 {
        r.clamp(self.min, self.max)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.min + self.max)
    }
}

impl Default for RatingScale {
    fn default() -> Self {
        RatingScale { min: 1.0, max: 5.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatingRecord {
    pub user: String,
    pub item: String,
    pub rating: f64,
}

#[derive(Debug, Clone)]
pub struct RatingDataset {
    records: Vec<RatingRecord>,
    scale: RatingScale,
}

impl RatingDataset {
    pub fn new(records: Vec<RatingRecord>, scale: RatingScale) -> Result<Self> {
        let mut seen: HashSet<(&str, &str)> = HashSet::with_capacity(records.len());
        for r in &records {
            if !scale.contains(r.rating) {
                return Err(Error::Invalid(format!(
                    "rating {} for ({}, {}) outside scale [{}, {}]",
                    r.rating, r.user, r.item, scale.min, scale.max
                )));
            }
            if !seen.insert((r.user.as_str(), r.item.as_str())) {
                return Err(Error::Invalid(format!(
                    "duplicate rating pair ({}, {})",
                    r.user, r.item
                )));
            }
        }
        Ok(RatingDataset { records, scale })
    }

    /// Load `<user_id>\t<item_id>\t<rating>` lines; `#` comments and blank
    /// lines ignored.
    pub fn load(path: impl AsRef<Path>, scale: RatingScale) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(std::fs::File::open(path)?);
        Self::from_reader(reader, scale, &path.display().to_string())
    }

    pub fn from_reader(reader: impl BufRead, scale: RatingScale, name: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            let (user, item, rating) = match (parts.next(), parts.next(), parts.next()) {
                (Some(u), Some(i), Some(r)) if !u.is_empty() && !i.is_empty() => (u, i, r),
                _ => {
                    return Err(Error::parse(
                        name,
                        lineno + 1,
                        "expected <user_id>\\t<item_id>\\t<rating>",
                    ))
                }
            };
            let rating: f64 = rating.trim().parse().map_err(|_| {
                Error::parse(name, lineno + 1, format!("unparseable rating {rating:?}"))
            })?;
            if !scale.contains(rating) {
                return Err(Error::parse(
                    name,
                    lineno + 1,
                    format!(
                        "rating {rating} outside scale [{}, {}]",
                        scale.min, scale.max
                    ),
                ));
            }
            if !seen.insert((user.to_string(), item.to_string())) {
                return Err(Error::parse(
                    name,
                    lineno + 1,
                    format!("duplicate rating pair ({user}, {item})"),
                ));
            }
            records.push(RatingRecord {
                user: user.to_string(),
                item: item.to_string(),
                rating,
            });
        }
        Ok(RatingDataset { records, scale })
    }

    pub fn records(&self) -> &[RatingRecord] {
        &self.records
    }

    pub fn scale(&self) -> RatingScale {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn mean_rating(&self) -> f64 {
        if self.records.is_empty() {
            return self.scale.midpoint();
        }
        self.records.iter().map(|r| r.rating).sum::<f64>() / self.records.len() as f64
    }

    /// Check every user and item id resolves to a graph node of the expected
    /// type.
    pub fn validate_against(
        &self,
        graph: &HinGraph,
        user_type: &NodeTypeId,
        item_type: &NodeTypeId,
    ) -> Result<()> {
        for r in &self.records {
            let ut = graph.node_type(&r.user)?;
            if ut != user_type {
                return Err(Error::Invalid(format!(
                    "rating user {:?} has type {ut}, expected {user_type}",
                    r.user
                )));
            }
            let it = graph.node_type(&r.item)?;
            if it != item_type {
                return Err(Error::Invalid(format!(
                    "rating item {:?} has type {it}, expected {item_type}",
                    r.item
                )));
            }
        }
        Ok(())
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            writeln!(w, "{}\t{}\t{}", r.user, r.item, r.rating)?;
        }
        Ok(())
    }

    /// Build a dataset from a subset of record indices, skipping the
    /// duplicate scan (the source dataset already guarantees it).
    pub(crate) fn subset(&self, indices: &[usize]) -> RatingDataset {
        RatingDataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            scale: self.scale,
        }
    }
}
