//! Concept schemas, datasets, synthetic generators and oracle tables.

mod dataset;
mod oracle;
mod schema;
mod synthetic;

pub use dataset::{
    assign_splits, load_dataset, read_dataset, ConceptDataset, DatasetParts, Split,
    IDENTITY_COLUMN, INSTANCE_ID_COLUMN, LABEL_COLUMN, SPLIT_COLUMN, TRUE_PREFIX,
};
pub use oracle::{class_level_oracle, soft_oracle, ClassOracle, Oracle, OracleKind, SoftOracle};
pub use schema::{ConceptGroup, ConceptKind, ConceptSchema, SCHEMA_FORMAT_VERSION};
pub use synthetic::{generate_synthetic, Generator, SyntheticSpec, BLOCK_MEMBER_FLIP};
