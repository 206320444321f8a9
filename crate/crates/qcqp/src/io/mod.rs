//! File formats: the QPLib ASCII instance format and the self-contained
//! `qcqp-dataset-v1` JSON dataset format.
//!
//! Indices are one-based inside both formats and converted exactly once at
//! this boundary; everything in memory stays zero-based.

pub mod dataset;
pub mod qplib;

pub use dataset::{
    read_dataset, write_dataset, Dataset, DatasetError, DatasetRecord, Split, DATASET_SCHEMA,
};
pub use qplib::{parse_qplib, parse_qplib_full, write_qplib, QplibError, QplibMetadata};
