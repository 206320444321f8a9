//! Labeled instance datasets, JSON schema `qcqp-dataset-v1`.
//!
//! A dataset carries its provenance (base name, seed, split) and a list of
//! records, each an instance plus optional supervision labels. Matrix entries
//! are one-based `[row, col, value]` triplets; infinite bounds are the strings
//! `"-inf"` / `"+inf"`. Numbers round-trip exactly: values are emitted in the
//! shortest representation that parses back to the same float.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gnn::{Label, Task, TrainSample};
use crate::graph::build_graph;
use crate::model::{Bound, Constraint, ModelError, QcqpInstance, SparseSymMatrix};

pub const DATASET_SCHEMA: &str = "qcqp-dataset-v1";

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("schema version mismatch: expected {DATASET_SCHEMA:?}, got {got:?}")]
    SchemaVersion { got: String },
    #[error("record {record}: {message}")]
    Invariant { record: usize, message: String },
    #[error("dataset is malformed: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// One labeled instance. An infeasible record must not carry objective or
/// solution labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRecord {
    pub instance: QcqpInstance,
    pub label_feasibility: Option<u8>,
    pub label_objective: Option<f64>,
    pub label_solution: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub records: Vec<DatasetRecord>,
    pub base_name: String,
    pub seed: u64,
    pub split: Split,
}

impl Dataset {
    /// Checks the record invariants: label consistency and one fixed problem
    /// size across all records.
    pub fn validate(&self) -> Result<(), DatasetError> {
        let mut size: Option<(usize, usize)> = None;
        for (idx, record) in self.records.iter().enumerate() {
            if record.label_feasibility == Some(0)
                && (record.label_objective.is_some() || record.label_solution.is_some())
            {
                return Err(DatasetError::Invariant {
                    record: idx,
                    message: "infeasible record carries objective/solution labels".into(),
                });
            }
            if let Some(feas) = record.label_feasibility {
                if feas > 1 {
                    return Err(DatasetError::Invariant {
                        record: idx,
                        message: format!("feasibility label {feas} is not 0/1"),
                    });
                }
            }
            if let Some(sol) = &record.label_solution {
                if sol.len() != record.instance.num_vars() {
                    return Err(DatasetError::Invariant {
                        record: idx,
                        message: "solution label length differs from variable count".into(),
                    });
                }
            }
            let this = (record.instance.num_vars(), record.instance.num_cons());
            match size {
                None => size = Some(this),
                Some(expected) if expected != this => {
                    return Err(DatasetError::Invariant {
                        record: idx,
                        message: format!("problem size {this:?} differs from {expected:?}"),
                    });
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Graph/label pairs for one task. Every record must carry the label the
    /// task needs.
    pub fn training_samples(&self, task: Task) -> Result<Vec<TrainSample>, DatasetError> {
        self.records
            .iter()
            .enumerate()
            .map(|(idx, record)| {
                let missing = |what: &str| DatasetError::Invariant {
                    record: idx,
                    message: format!("record lacks a {what} label"),
                };
                let label = match task {
                    Task::Feasibility => Label::Feasibility(f64::from(
                        record.label_feasibility.ok_or_else(|| missing("feasibility"))?,
                    )),
                    Task::Objective => {
                        Label::Objective(record.label_objective.ok_or_else(|| missing("objective"))?)
                    }
                    Task::Solution => Label::Solution(
                        record
                            .label_solution
                            .clone()
                            .ok_or_else(|| missing("solution"))?,
                    ),
                };
                Ok(TrainSample {
                    graph: build_graph(&record.instance),
                    label,
                })
            })
            .collect()
    }
}

// --- JSON schema types -----------------------------------------------------

#[derive(Serialize, Deserialize)]
struct MatrixEntryRepr(usize, usize, f64);

#[derive(Serialize, Deserialize)]
struct ConstraintRepr {
    quad: Vec<MatrixEntryRepr>,
    lin: Vec<f64>,
    rhs: f64,
}

#[derive(Serialize, Deserialize)]
struct InstanceRepr {
    name: String,
    num_vars: usize,
    objective_quad: Vec<MatrixEntryRepr>,
    objective_lin: Vec<f64>,
    constraints: Vec<ConstraintRepr>,
    lower: Vec<Bound>,
    upper: Vec<Bound>,
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    instance: InstanceRepr,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_feasibility: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_objective: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label_solution: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    schema: String,
    base_name: String,
    seed: u64,
    split: Split,
    records: Vec<RecordRepr>,
}

fn matrix_to_repr(mat: &SparseSymMatrix) -> Vec<MatrixEntryRepr> {
    mat.entries()
        .iter()
        .map(|&(row, col, value)| MatrixEntryRepr(row + 1, col + 1, value))
        .collect()
}

fn matrix_from_repr(
    dim: usize,
    entries: &[MatrixEntryRepr],
    record: usize,
) -> Result<SparseSymMatrix, DatasetError> {
    let converted = entries
        .iter()
        .map(|&MatrixEntryRepr(row, col, value)| {
            if row == 0 || col == 0 {
                return Err(DatasetError::Invariant {
                    record,
                    message: "matrix indices are one-based".into(),
                });
            }
            Ok((row - 1, col - 1, value))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SparseSymMatrix::new(dim, converted)?)
}

fn instance_to_repr(inst: &QcqpInstance) -> InstanceRepr {
    InstanceRepr {
        name: inst.name().to_string(),
        num_vars: inst.num_vars(),
        objective_quad: matrix_to_repr(inst.objective_quad()),
        objective_lin: inst.objective_lin().to_vec(),
        constraints: inst
            .constraints()
            .iter()
            .map(|cons| ConstraintRepr {
                quad: matrix_to_repr(&cons.quad),
                lin: cons.lin.clone(),
                rhs: cons.rhs,
            })
            .collect(),
        lower: inst.lower().to_vec(),
        upper: inst.upper().to_vec(),
    }
}

fn instance_from_repr(repr: &InstanceRepr, record: usize) -> Result<QcqpInstance, DatasetError> {
    let n = repr.num_vars;
    let constraints = repr
        .constraints
        .iter()
        .map(|cons| {
            Ok(Constraint {
                quad: matrix_from_repr(n, &cons.quad, record)?,
                lin: cons.lin.clone(),
                rhs: cons.rhs,
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    Ok(QcqpInstance::new(
        repr.name.clone(),
        matrix_from_repr(n, &repr.objective_quad, record)?,
        repr.objective_lin.clone(),
        constraints,
        repr.lower.clone(),
        repr.upper.clone(),
    )?)
}

/// Serializes a dataset to a JSON value.
pub fn dataset_to_json(ds: &Dataset) -> Result<serde_json::Value, DatasetError> {
    ds.validate()?;
    let repr = DatasetRepr {
        schema: DATASET_SCHEMA.to_string(),
        base_name: ds.base_name.clone(),
        seed: ds.seed,
        split: ds.split,
        records: ds
            .records
            .iter()
            .map(|record| RecordRepr {
                instance: instance_to_repr(&record.instance),
                label_feasibility: record.label_feasibility,
                label_objective: record.label_objective,
                label_solution: record.label_solution.clone(),
            })
            .collect(),
    };
    Ok(serde_json::to_value(&repr)?)
}

/// Parses and validates a dataset from a JSON value.
pub fn dataset_from_json(value: &serde_json::Value) -> Result<Dataset, DatasetError> {
    let repr: DatasetRepr = serde_json::from_value(value.clone())?;
    if repr.schema != DATASET_SCHEMA {
        return Err(DatasetError::SchemaVersion { got: repr.schema });
    }
    let records = repr
        .records
        .iter()
        .enumerate()
        .map(|(idx, record)| {
            Ok(DatasetRecord {
                instance: instance_from_repr(&record.instance, idx)?,
                label_feasibility: record.label_feasibility,
                label_objective: record.label_objective,
                label_solution: record.label_solution.clone(),
            })
        })
        .collect::<Result<Vec<_>, DatasetError>>()?;
    let ds = Dataset {
        records,
        base_name: repr.base_name,
        seed: repr.seed,
        split: repr.split,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    let value = dataset_to_json(ds)?;
    fs::write(path, serde_json::to_string_pretty(&value)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    dataset_from_json(&value)
}
