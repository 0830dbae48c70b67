//! Tables, CSV ingest, normalization, missingness simulation and padding.

mod csv_io;
mod layout;
mod missing;
mod normalize;
mod table;

pub use csv_io::{
    completed_raw, format_cell, load_csv, table_from_raw, table_with_schema, write_completed,
    CsvOptions, RawCsv, TypeHint,
};
pub use layout::{argmax, average_pad, FeatureLayout, PaddedMatrix, Slot};
pub use missing::{
    simulate_missing, GroundTruthHoldout, HoldoutEntry, Mechanism, MissingSpec, SimulatedMissing,
    MAR_OBSERVED_FRACTION,
};
pub use normalize::{normalize, ColumnScaling, NormalizationParams};
pub use table::{schema_hash, Cell, ColumnKind, ColumnSchema, Table};
