//! Cell/cycle data model, telemetry ingestion, patch sampling and the
//! synthetic fleet generator.

pub mod io;
pub mod patch;
pub mod record;
pub mod synth;

pub use io::{load_capacity, load_cells, read_capacity, read_cells, write_capacity, write_cells, ColumnMap};
pub use patch::{patch_at, sample_patch, Detrender, Patch, PatchConfig, Preprocess};
pub use record::{split_holdout, CapacityTable, CellRecords, CycleRecord, DEFAULT_TEST_CELLS};
pub use synth::{generate_synthetic_fleet, open_circuit_voltage, CellTruth, SyntheticFleet, SyntheticFleetConfig};
