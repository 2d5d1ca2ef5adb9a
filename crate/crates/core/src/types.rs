//! Shared data types: named-field schemas, typed state and action vectors,
//! and the transition record stored in the replay buffer.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoreError {
    #[error("length mismatch: expected {expected} values for schema `{schema}`, got {actual}")]
    LengthMismatch {
        schema: String,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite value {value} at index {index} (`{field}`)")]
    NonFinite {
        index: usize,
        field: String,
        value: f64,
    },
    #[error("action entry {value} at index {index} lies outside [-1, 1]")]
    ActionOutOfRange { index: usize, value: f64 },
    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),
    #[error("eval flag must be 0 or 1, got {0}")]
    BadEvalFlag(u8),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("buffer holds {size} transitions, cannot sample {requested}")]
    Underfilled { size: usize, requested: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
}

/// One named coordinate of a vector schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub name: String,
    pub index: usize,
    pub unit: String,
    pub bounds: Option<(f64, f64)>,
}

/// Ordered, named description of a real vector. Field indices always form
/// `0..n` in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSchema {
    name: String,
    fields: Vec<Field>,
}

impl FieldSchema {
    /// Builds a schema from `(name, unit, bounds)` triples; indices are
    /// assigned in order.
    pub fn new<S: Into<String>>(
        name: S,
        fields: impl IntoIterator<Item = (String, String, Option<(f64, f64)>)>,
    ) -> Result<Self, CoreError> {
        let fields: Vec<Field> = fields
            .into_iter()
            .enumerate()
            .map(|(index, (name, unit, bounds))| Field {
                name,
                index,
                unit,
                bounds,
            })
            .collect();
        Self::from_fields(name, fields)
    }

    pub fn from_fields<S: Into<String>>(name: S, fields: Vec<Field>) -> Result<Self, CoreError> {
        let mut seen = HashSet::new();
        for (i, f) in fields.iter().enumerate() {
            if f.index != i {
                return Err(CoreError::InvalidSchema(format!(
                    "field `{}` has index {} but sits at position {i}",
                    f.name, f.index
                )));
            }
            if !is_identifier(&f.name) {
                return Err(CoreError::InvalidSchema(format!(
                    "field name `{}` is not an identifier",
                    f.name
                )));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(CoreError::InvalidSchema(format!(
                    "duplicate field name `{}`",
                    f.name
                )));
            }
            if let Some((lo, hi)) = f.bounds {
                if !(lo < hi) {
                    return Err(CoreError::InvalidSchema(format!(
                        "field `{}` has bounds [{lo}, {hi}] with lo >= hi",
                        f.name
                    )));
                }
            }
        }
        Ok(Self {
            name: name.into(),
            fields,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.fields.iter().map(|f| f.name.as_str())
    }
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn check_finite(values: &[f64], schema: &FieldSchema) -> Result<(), CoreError> {
    if values.len() != schema.len() {
        return Err(CoreError::LengthMismatch {
            schema: schema.name.clone(),
            expected: schema.len(),
            actual: values.len(),
        });
    }
    for (i, &v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(CoreError::NonFinite {
                index: i,
                field: schema.fields[i].name.clone(),
                value: v,
            });
        }
    }
    Ok(())
}

/// A finite real vector conforming to a state schema.
#[derive(Clone, PartialEq)]
pub struct StateVector {
    values: Vec<f64>,
    schema: Arc<FieldSchema>,
}

impl StateVector {
    pub fn new(values: Vec<f64>, schema: Arc<FieldSchema>) -> Result<Self, CoreError> {
        check_finite(&values, &schema)?;
        Ok(Self { values, schema })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn schema(&self) -> &Arc<FieldSchema> {
        &self.schema
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.schema.index_of(name).map(|i| self.values[i])
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

impl fmt::Debug for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (field, v) in self.schema.fields.iter().zip(&self.values) {
            m.entry(&field.name, v);
        }
        m.finish()
    }
}

/// Checks `values` against `schema` and wraps them as a state.
pub fn validate_against_schema(
    values: &[f64],
    schema: &Arc<FieldSchema>,
) -> Result<StateVector, CoreError> {
    StateVector::new(values.to_vec(), Arc::clone(schema))
}

/// A finite action with every entry in `[-1, 1]`.
#[derive(Clone, PartialEq)]
pub struct ActionVector {
    values: Vec<f64>,
    schema: Arc<FieldSchema>,
}

impl ActionVector {
    pub fn new(values: Vec<f64>, schema: Arc<FieldSchema>) -> Result<Self, CoreError> {
        check_finite(&values, &schema)?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(-1.0..=1.0).contains(*v))
        {
            return Err(CoreError::ActionOutOfRange { index, value });
        }
        Ok(Self { values, schema })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn schema(&self) -> &Arc<FieldSchema> {
        &self.schema
    }
}

impl fmt::Debug for ActionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut m = f.debug_map();
        for (field, v) in self.schema.fields.iter().zip(&self.values) {
            m.entry(&field.name, v);
        }
        m.finish()
    }
}

/// One environment step as stored for off-policy learning. `eval_flag` is
/// the evaluation program's verdict on `state`, frozen at insertion time.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: StateVector,
    pub action: ActionVector,
    pub reward: f64,
    pub next_state: StateVector,
    pub eval_flag: u8,
    pub terminal: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<(), CoreError> {
        if !self.reward.is_finite() {
            return Err(CoreError::NonFiniteReward(self.reward));
        }
        if self.eval_flag > 1 {
            return Err(CoreError::BadEvalFlag(self.eval_flag));
        }
        check_finite(self.state.values(), self.state.schema())?;
        check_finite(self.next_state.values(), self.next_state.schema())?;
        Ok(())
    }
}
