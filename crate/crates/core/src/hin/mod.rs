//! Typed-graph data model: schema, graph storage, meta-paths and ratings.

mod graph;
mod metapath;
mod ratings;
pub(crate) mod schema;

pub use graph::{HinGraph, TypedNode};
pub use metapath::{load_meta_path_file, parse_meta_path_file, MetaPath, MetaPathFile};
pub use ratings::{RatingDataset, RatingRecord, RatingScale};
pub use schema::{NetworkSchema, NodeTypeId};
