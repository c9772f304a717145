//! One statistic a depositor or analyst asks for.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accuracy::{AccuracyContext, AccuracyError};
use crate::composition::PrivacyParams;
use crate::dsl::{self, infer_range, range_warning, DslError, Interval, Program, RangeWarning};
use crate::mechanisms::{
    BinSpec, MechanismError, StatisticKind, VariableKind, VariableSpec, DEFAULT_ALPHA,
    DEFAULT_QUANTILE_CANDIDATES,
};

/// CDF grid size used when a request does not set one.
pub const DEFAULT_CDF_GRID: usize = 64;

/// Quantile level used when a request does not set one.
pub const DEFAULT_QUANTILE: f64 = 0.5;

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn is_false(b: &bool) -> bool {
    !*b
}

/// A derived variable computed row by row from declared variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    pub program: String,
    /// Declared output range; the inferred range fills in whatever is unset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatisticRequest {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variable: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transform: Option<Transform>,
    pub statistic: StatisticKind,
    #[serde(default)]
    pub epsilon: f64,
    #[serde(default)]
    pub delta: f64,
    /// Accuracy radius; with `hold` set it is the target that fixes `epsilon`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "is_false")]
    pub hold: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bins: Option<BinSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantile: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<usize>,
    /// Use the snapping mechanism for a mean instead of plain Laplace.
    #[serde(default, skip_serializing_if = "is_false")]
    pub snapping: bool,
}

#[derive(Debug, Error)]
pub enum RequestError {
    #[error("request `{0}` must name exactly one of a variable or a transform")]
    Target(String),
    #[error("request `{id}` refers to unknown variable `{name}`")]
    UnknownVariable { id: String, name: String },
    #[error("request `{id}`: transform: {source}")]
    Transform { id: String, source: DslError },
    #[error("request `{id}`: {message}")]
    Invalid { id: String, message: String },
    #[error("request `{id}`: {source}")]
    Mechanism { id: String, source: MechanismError },
    #[error("request `{id}`: {source}")]
    Accuracy { id: String, source: AccuracyError },
}

impl StatisticRequest {
    pub fn new(
        id: impl Into<String>,
        variable: impl Into<String>,
        statistic: StatisticKind,
    ) -> Self {
        StatisticRequest {
            id: id.into(),
            variable: Some(variable.into()),
            transform: None,
            statistic,
            epsilon: 0.0,
            delta: 0.0,
            accuracy: None,
            alpha: default_alpha(),
            hold: false,
            bins: None,
            grid: None,
            quantile: None,
            candidates: None,
            snapping: false,
        }
    }

    pub fn derived(id: impl Into<String>, transform: Transform, statistic: StatisticKind) -> Self {
        StatisticRequest {
            variable: None,
            transform: Some(transform),
            ..StatisticRequest::new(id, "", statistic)
        }
    }

    pub fn with_epsilon(mut self, epsilon: f64) -> Self {
        self.epsilon = epsilon;
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }

    /// Holds the request at a target accuracy.
    pub fn held_at_accuracy(mut self, accuracy: f64) -> Self {
        self.accuracy = Some(accuracy);
        self.hold = true;
        self
    }

    pub fn held(mut self) -> Self {
        self.hold = true;
        self
    }

    pub fn with_bins(mut self, bins: BinSpec) -> Self {
        self.bins = Some(bins);
        self
    }

    pub fn with_grid(mut self, grid: usize) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn with_quantile(mut self, q: f64) -> Self {
        self.quantile = Some(q);
        self
    }

    pub fn privacy(&self) -> PrivacyParams {
        PrivacyParams {
            epsilon: self.epsilon,
            delta: self.delta,
        }
    }

    fn invalid(&self, message: impl Into<String>) -> RequestError {
        RequestError::Invalid {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    /// Checks parameters that do not depend on the schema.
    pub fn validate_shape(&self) -> Result<(), RequestError> {
        if self.variable.is_some() == self.transform.is_some() {
            return Err(RequestError::Target(self.id.clone()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(self.invalid(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0) {
            return Err(self.invalid(format!(
                "epsilon must be finite and >= 0, got {}",
                self.epsilon
            )));
        }
        if !(0.0..1.0).contains(&self.delta) {
            return Err(self.invalid(format!("delta must lie in [0, 1), got {}", self.delta)));
        }
        if let Some(t) = self.accuracy {
            if !(t.is_finite() && t > 0.0) {
                return Err(self.invalid(format!("accuracy must be positive, got {t}")));
            }
        }
        if let Some(q) = self.quantile {
            if !(q > 0.0 && q < 1.0) {
                return Err(self.invalid(format!("quantile level must lie in (0, 1), got {q}")));
            }
        }
        if let Some(g) = self.grid {
            if g < 2 || !g.is_power_of_two() {
                return Err(self.invalid(format!("CDF grid must be a power of two >= 2, got {g}")));
            }
        }
        if self.candidates == Some(0) {
            return Err(self.invalid("quantile needs at least one candidate"));
        }
        if self.snapping && self.statistic != StatisticKind::Mean {
            return Err(self.invalid("the snapping mechanism is only offered for means"));
        }
        Ok(())
    }

    pub fn grid_size(&self) -> usize {
        self.grid.unwrap_or(DEFAULT_CDF_GRID)
    }

    pub fn candidate_count(&self) -> usize {
        self.candidates.unwrap_or(DEFAULT_QUANTILE_CANDIDATES)
    }

    pub fn quantile_level(&self) -> f64 {
        self.quantile.unwrap_or(DEFAULT_QUANTILE)
    }

    pub fn bin_spec(&self, spec: &VariableSpec) -> BinSpec {
        self.bins
            .clone()
            .unwrap_or_else(|| BinSpec::default_for(spec))
    }

    /// Resolves the request's target against `schema`.
    pub fn resolve(&self, schema: &[VariableSpec]) -> Result<ResolvedTarget, RequestError> {
        self.validate_shape()?;
        let target = match (&self.variable, &self.transform) {
            (Some(name), None) => {
                let index = schema.iter().position(|v| &v.name == name).ok_or_else(|| {
                    RequestError::UnknownVariable {
                        id: self.id.clone(),
                        name: name.clone(),
                    }
                })?;
                ResolvedTarget {
                    spec: schema[index].clone(),
                    source: TargetSource::Column(index),
                }
            }
            (None, Some(t)) => self.resolve_transform(t, schema)?,
            _ => return Err(RequestError::Target(self.id.clone())),
        };
        self.check_kind(&target.spec)?;
        Ok(target)
    }

    fn resolve_transform(
        &self,
        t: &Transform,
        schema: &[VariableSpec],
    ) -> Result<ResolvedTarget, RequestError> {
        let mut env = HashMap::new();
        let mut names = Vec::new();
        for v in schema {
            if let Some((lo, hi)) = v.range() {
                env.insert(v.name.clone(), Interval::new(lo, hi));
                names.push(v.name.clone());
            }
        }
        let expr = dsl::parse(&t.program, &names).map_err(|source| RequestError::Transform {
            id: self.id.clone(),
            source,
        })?;
        let inferred = infer_range(&expr, &env);
        let declared = Interval {
            lo: t.lower.unwrap_or(inferred.lo),
            hi: t.upper.unwrap_or(inferred.hi),
        };
        if !(declared.is_finite() && declared.lo < declared.hi) {
            return Err(self.invalid(format!(
                "derived range [{}, {}] is not a usable range; declare finite bounds with lower < upper",
                declared.lo, declared.hi
            )));
        }
        let inputs = expr.free_variables();
        let program =
            Program::compile(&expr, &inputs).map_err(|source| RequestError::Transform {
                id: self.id.clone(),
                source,
            })?;
        let columns = inputs
            .iter()
            .map(|n| {
                schema
                    .iter()
                    .position(|v| &v.name == n)
                    .expect("parsed against schema")
            })
            .collect();
        Ok(ResolvedTarget {
            spec: VariableSpec::numeric(self.id.clone(), declared.lo, declared.hi)
                .with_description(format!("derived: {}", t.program.trim())),
            source: TargetSource::Derived(Box::new(DerivedTarget {
                program,
                columns,
                declared,
                inferred,
                warning: range_warning(declared, inferred),
            })),
        })
    }

    fn check_kind(&self, spec: &VariableSpec) -> Result<(), RequestError> {
        let numeric = matches!(
            spec.kind,
            VariableKind::Numeric { .. } | VariableKind::Boolean
        );
        if self.statistic != StatisticKind::Histogram && !numeric {
            return Err(RequestError::Mechanism {
                id: self.id.clone(),
                source: MechanismError::WrongKind {
                    name: spec.name.clone(),
                    found: spec.kind_name(),
                    statistic: self.statistic,
                },
            });
        }
        Ok(())
    }

    /// Public facts the accuracy bound of this request depends on.
    pub fn accuracy_context(
        &self,
        spec: &VariableSpec,
        n: usize,
    ) -> Result<AccuracyContext, RequestError> {
        let mut ctx = AccuracyContext::new(n)
            .with_grid(self.grid_size())
            .with_candidates(self.candidate_count());
        if let Some((lo, hi)) = spec.range() {
            ctx = ctx.with_range(hi - lo);
        }
        if self.statistic == StatisticKind::Histogram {
            let bins =
                self.bin_spec(spec)
                    .bin_count(spec)
                    .map_err(|source| RequestError::Mechanism {
                        id: self.id.clone(),
                        source,
                    })?;
            ctx = ctx.with_bins(bins);
        }
        Ok(ctx)
    }
}

/// What a request is computed over.
#[derive(Debug, Clone)]
pub struct ResolvedTarget {
    pub spec: VariableSpec,
    pub source: TargetSource,
}

#[derive(Debug, Clone)]
pub enum TargetSource {
    /// Index of a schema column.
    Column(usize),
    Derived(Box<DerivedTarget>),
}

#[derive(Debug, Clone)]
pub struct DerivedTarget {
    pub program: Program,
    /// Schema indices of the program's inputs, in `program.inputs()` order.
    pub columns: Vec<usize>,
    pub declared: Interval,
    pub inferred: Interval,
    pub warning: Option<RangeWarning>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<VariableSpec> {
        vec![
            VariableSpec::numeric("Age", 0.0, 120.0),
            VariableSpec::numeric("A", 0.0, 2.0),
            VariableSpec::numeric("B", 0.0, 2.0),
            VariableSpec::categorical("Race", ["w", "b"]),
            VariableSpec::boolean("Employed"),
        ]
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let r: StatisticRequest =
            serde_json::from_str(r#"{"id":"m","variable":"Age","statistic":"mean","epsilon":0.1}"#)
                .unwrap();
        assert!((r.alpha - 0.05).abs() < 1e-12);
        assert!(!r.hold);
        let back: StatisticRequest =
            serde_json::from_str(&serde_json::to_string(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn exactly_one_target() {
        let mut r = StatisticRequest::new("x", "Age", StatisticKind::Mean);
        r.transform = Some(Transform {
            program: "Age".into(),
            lower: None,
            upper: None,
        });
        assert!(matches!(r.resolve(&schema()), Err(RequestError::Target(_))));
        r.variable = None;
        r.transform = None;
        assert!(matches!(r.resolve(&schema()), Err(RequestError::Target(_))));
    }

    #[test]
    fn derived_range_is_inferred() {
        let r = StatisticRequest::derived(
            "AB",
            Transform {
                program: "A * B".into(),
                lower: None,
                upper: None,
            },
            StatisticKind::Mean,
        );
        let t = r.resolve(&schema()).unwrap();
        assert_eq!(t.spec.range(), Some((0.0, 4.0)));
        match t.source {
            TargetSource::Derived(d) => {
                assert!(d.warning.is_none());
                assert_eq!(d.columns, vec![1, 2]);
            }
            _ => panic!("expected a derived target"),
        }
    }

    #[test]
    fn derived_override_warns() {
        let r = StatisticRequest::derived(
            "AB",
            Transform {
                program: "A * B".into(),
                lower: None,
                upper: Some(3.0),
            },
            StatisticKind::Mean,
        );
        let t = r.resolve(&schema()).unwrap();
        assert_eq!(t.spec.range(), Some((0.0, 3.0)));
        match t.source {
            TargetSource::Derived(d) => {
                assert!(matches!(d.warning, Some(RangeWarning::Narrower { .. })))
            }
            _ => panic!(),
        }
    }

    #[test]
    fn categorical_variables_are_not_visible_to_transforms() {
        let r = StatisticRequest::derived(
            "x",
            Transform {
                program: "Race + 1".into(),
                lower: None,
                upper: None,
            },
            StatisticKind::Mean,
        );
        assert!(matches!(
            r.resolve(&schema()),
            Err(RequestError::Transform { .. })
        ));
    }

    #[test]
    fn mean_of_categorical_rejected() {
        let r = StatisticRequest::new("x", "Race", StatisticKind::Mean);
        assert!(matches!(
            r.resolve(&schema()),
            Err(RequestError::Mechanism { .. })
        ));
        let r = StatisticRequest::new("x", "Race", StatisticKind::Histogram);
        assert!(r.resolve(&schema()).is_ok());
    }

    #[test]
    fn histogram_context_counts_bins() {
        let r = StatisticRequest::new("x", "Race", StatisticKind::Histogram);
        let spec = &schema()[3];
        assert_eq!(r.accuracy_context(spec, 10).unwrap().bins, 3);
    }
}
