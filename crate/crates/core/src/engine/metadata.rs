//! Release records and the metadata documents built from them.
//!
//! A metadata file is JSON with these stable fields:
//!
//! ```text
//! format_version  1
//! dataset_id      string
//! n               public record count
//! audience        "public" | {"user": "<id>"}
//! variables[]     name, description?, kind, lower?, upper?, categories?
//! releases[]      statistic, variable, transform?, epsilon, delta, accuracy,
//!                 alpha, value, batch_id, timestamp, request_id, mechanism,
//!                 quantile?, audience
//! ```
//!
//! `value` is tagged by `type`: `scalar {value}`, `histogram {labels,
//! counts}` or `cdf {points, values}`.

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::mechanisms::{Estimate, StatisticKind, VariableKind, VariableSpec};

pub const METADATA_FORMAT_VERSION: u32 = 1;

/// Who may read a release.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Audience {
    Public,
    User(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct RecordData {
    pub(crate) dataset_id: String,
    pub(crate) request_id: String,
    pub(crate) statistic: StatisticKind,
    pub(crate) variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub(crate) transform: Option<String>,
    pub(crate) mechanism: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub(crate) quantile: Option<f64>,
    pub(crate) epsilon: f64,
    pub(crate) delta: f64,
    pub(crate) accuracy: f64,
    pub(crate) alpha: f64,
    pub(crate) value: Estimate,
    pub(crate) batch_id: String,
    pub(crate) timestamp: u64,
    pub(crate) audience: Audience,
}

/// A differentially private value with its parameters.
///
/// Only the release engine creates these, and only from a mechanism's
/// output, so a metadata file cannot carry anything else:
///
/// ```compile_fail
/// use dprelease::engine::ReleaseRecord;
/// let forged: ReleaseRecord = serde_json::from_str("{}").unwrap();
/// ```
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ReleaseRecord(RecordData);

impl ReleaseRecord {
    pub(crate) fn new(data: RecordData) -> Self {
        ReleaseRecord(data)
    }

    /// Parses a line this crate wrote itself.
    pub(crate) fn from_json(line: &str) -> serde_json::Result<Self> {
        serde_json::from_str(line).map(ReleaseRecord)
    }

    pub fn dataset_id(&self) -> &str {
        &self.0.dataset_id
    }
    pub fn request_id(&self) -> &str {
        &self.0.request_id
    }
    pub fn statistic(&self) -> StatisticKind {
        self.0.statistic
    }
    pub fn variable(&self) -> &str {
        &self.0.variable
    }
    pub fn transform(&self) -> Option<&str> {
        self.0.transform.as_deref()
    }
    pub fn mechanism(&self) -> &str {
        &self.0.mechanism
    }
    pub fn epsilon(&self) -> f64 {
        self.0.epsilon
    }
    pub fn delta(&self) -> f64 {
        self.0.delta
    }
    pub fn accuracy(&self) -> f64 {
        self.0.accuracy
    }
    pub fn alpha(&self) -> f64 {
        self.0.alpha
    }
    pub fn value(&self) -> &Estimate {
        &self.0.value
    }
    pub fn batch_id(&self) -> &str {
        &self.0.batch_id
    }
    pub fn timestamp(&self) -> u64 {
        self.0.timestamp
    }
    pub fn audience(&self) -> &Audience {
        &self.0.audience
    }

    fn check_releasable(&self, dataset_id: &str) -> Result<(), EngineError> {
        let d = &self.0;
        let fail = |why: String| {
            Err(EngineError::Metadata(format!(
                "release `{}` of batch `{}`: {why}",
                d.request_id, d.batch_id
            )))
        };
        if d.dataset_id != dataset_id {
            return fail(format!("belongs to dataset `{}`", d.dataset_id));
        }
        if !(d.epsilon.is_finite() && d.epsilon > 0.0) {
            return fail(format!(
                "epsilon {} is not a differentially private cost",
                d.epsilon
            ));
        }
        if !(0.0..1.0).contains(&d.delta) {
            return fail(format!("delta {} is out of range", d.delta));
        }
        let shape_ok = matches!(
            (d.statistic, &d.value),
            (
                StatisticKind::Mean | StatisticKind::Quantile,
                Estimate::Scalar { .. }
            ) | (StatisticKind::Histogram, Estimate::Histogram { .. })
                | (StatisticKind::Cdf, Estimate::Cdf { .. })
        );
        if !shape_ok {
            return fail(format!("a {} cannot carry this value", d.statistic));
        }
        Ok(())
    }
}

/// Public facts about one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublicVariable {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
}

impl From<&VariableSpec> for PublicVariable {
    /// Field by field; the missing-value default is left out.
    fn from(v: &VariableSpec) -> Self {
        let (lower, upper, categories) = match &v.kind {
            VariableKind::Numeric { lower, upper, .. } => (Some(*lower), Some(*upper), None),
            VariableKind::Boolean => (Some(0.0), Some(1.0), None),
            VariableKind::Categorical { categories } => (None, None, Some(categories.clone())),
        };
        PublicVariable {
            name: v.name.clone(),
            description: v.description.clone(),
            kind: v.kind_name().to_string(),
            lower,
            upper,
            categories,
        }
    }
}

/// A public or per-user metadata document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetadataFile {
    format_version: u32,
    dataset_id: String,
    n: usize,
    audience: Audience,
    variables: Vec<PublicVariable>,
    releases: Vec<ReleaseRecord>,
}

impl MetadataFile {
    pub fn format_version(&self) -> u32 {
        self.format_version
    }
    pub fn dataset_id(&self) -> &str {
        &self.dataset_id
    }
    pub fn n(&self) -> usize {
        self.n
    }
    pub fn audience(&self) -> &Audience {
        &self.audience
    }
    pub fn variables(&self) -> &[PublicVariable] {
        &self.variables
    }
    pub fn releases(&self) -> &[ReleaseRecord] {
        &self.releases
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }
}

/// The public metadata: schema facts and public releases only.
///
/// A record meant for a single user, for another dataset or without a
/// positive privacy cost is refused outright rather than skipped.
pub fn build_public_metadata(
    dataset_id: &str,
    n: usize,
    schema: &[VariableSpec],
    releases: &[ReleaseRecord],
) -> Result<MetadataFile, EngineError> {
    for r in releases {
        r.check_releasable(dataset_id)?;
        if r.audience() != &Audience::Public {
            return Err(EngineError::Metadata(format!(
                "release `{}` of batch `{}` is private to a user",
                r.request_id(),
                r.batch_id()
            )));
        }
    }
    Ok(MetadataFile {
        format_version: METADATA_FORMAT_VERSION,
        dataset_id: dataset_id.to_string(),
        n,
        audience: Audience::Public,
        variables: schema.iter().map(PublicVariable::from).collect(),
        releases: releases.to_vec(),
    })
}

/// A user's file: the public releases plus the user's own, in order.
pub fn build_user_metadata(
    dataset_id: &str,
    n: usize,
    schema: &[VariableSpec],
    releases: &[ReleaseRecord],
    user: &str,
) -> Result<MetadataFile, EngineError> {
    let own = Audience::User(user.to_string());
    for r in releases {
        r.check_releasable(dataset_id)?;
        if r.audience() != &Audience::Public && r.audience() != &own {
            return Err(EngineError::Metadata(format!(
                "release `{}` of batch `{}` belongs to another user",
                r.request_id(),
                r.batch_id()
            )));
        }
    }
    Ok(MetadataFile {
        format_version: METADATA_FORMAT_VERSION,
        dataset_id: dataset_id.to_string(),
        n,
        audience: own,
        variables: schema.iter().map(PublicVariable::from).collect(),
        releases: releases.to_vec(),
    })
}
