use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::MechanismError;

/// Label of the bin that collects categorical values outside the declared list.
pub const OTHER_CATEGORY: &str = "(other)";

/// Public description of one column: its name and the domain that every value
/// is clamped into before any mechanism sees it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    #[serde(flatten)]
    pub kind: VariableKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariableKind {
    Numeric {
        lower: f64,
        upper: f64,
        /// Value substituted for missing entries; the range midpoint if unset.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        missing: Option<f64>,
    },
    Categorical {
        categories: Vec<String>,
    },
    /// Stored as 0/1 with range `[0, 1]`; missing entries read as 0.
    Boolean,
}

impl VariableSpec {
    pub fn numeric(name: impl Into<String>, lower: f64, upper: f64) -> Self {
        VariableSpec {
            name: name.into(),
            description: String::new(),
            kind: VariableKind::Numeric {
                lower,
                upper,
                missing: None,
            },
        }
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Self {
        VariableSpec {
            name: name.into(),
            description: String::new(),
            kind: VariableKind::Categorical {
                categories: categories.into_iter().map(Into::into).collect(),
            },
        }
    }

    pub fn boolean(name: impl Into<String>) -> Self {
        VariableSpec {
            name: name.into(),
            description: String::new(),
            kind: VariableKind::Boolean,
        }
    }

    pub fn with_description(mut self, description: impl Into<String>) -> Self {
        self.description = description.into();
        self
    }

    pub fn validate(&self) -> Result<(), MechanismError> {
        let bad = |msg: String| Err(MechanismError::InvalidParameter(msg));
        if self.name.trim().is_empty() {
            return bad("variable name must not be empty".into());
        }
        match &self.kind {
            VariableKind::Numeric {
                lower,
                upper,
                missing,
            } => {
                if !(lower.is_finite() && upper.is_finite() && lower < upper) {
                    return bad(format!(
                        "variable `{}`: range [{lower}, {upper}] must be finite with lower < upper",
                        self.name
                    ));
                }
                if let Some(m) = missing {
                    if !(lower <= m && m <= upper) {
                        return bad(format!(
                            "variable `{}`: missing-value default {m} lies outside [{lower}, {upper}]",
                            self.name
                        ));
                    }
                }
            }
            VariableKind::Categorical { categories } => {
                if categories.is_empty() {
                    return bad(format!("variable `{}`: category list is empty", self.name));
                }
                let mut seen = HashSet::new();
                for c in categories {
                    if c == OTHER_CATEGORY {
                        return bad(format!(
                            "variable `{}`: `{OTHER_CATEGORY}` is a reserved category",
                            self.name
                        ));
                    }
                    if !seen.insert(c.as_str()) {
                        return bad(format!(
                            "variable `{}`: duplicate category `{c}`",
                            self.name
                        ));
                    }
                }
            }
            VariableKind::Boolean => {}
        }
        Ok(())
    }

    /// Clamping range for numeric and boolean variables.
    pub fn range(&self) -> Option<(f64, f64)> {
        match &self.kind {
            VariableKind::Numeric { lower, upper, .. } => Some((*lower, *upper)),
            VariableKind::Boolean => Some((0.0, 1.0)),
            VariableKind::Categorical { .. } => None,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            VariableKind::Numeric { .. } => "numeric",
            VariableKind::Categorical { .. } => "categorical",
            VariableKind::Boolean => "boolean",
        }
    }

    /// Bin labels of a categorical variable: the declared list plus the
    /// reserved catch-all bin.
    pub fn category_labels(&self) -> Option<Vec<String>> {
        match &self.kind {
            VariableKind::Categorical { categories } => {
                let mut labels = categories.clone();
                labels.push(OTHER_CATEGORY.to_string());
                Some(labels)
            }
            _ => None,
        }
    }
}

/// A column after clamping.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    /// Numeric and boolean variables; every value lies in the declared range.
    Numeric(Vec<f64>),
    /// Category indices; `categories.len()` denotes the catch-all bin.
    Categorical(Vec<u32>),
}

impl Column {
    pub fn len(&self) -> usize {
        match self {
            Column::Numeric(v) => v.len(),
            Column::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Column::Numeric(v) => Some(v),
            Column::Categorical(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClampedColumn {
    pub column: Column,
    /// Values that were moved into range (or into the catch-all bin).
    pub clamped: usize,
    /// Missing entries replaced by the variable's default.
    pub missing: usize,
}

#[inline]
pub fn clamp_value(x: f64, lower: f64, upper: f64) -> f64 {
    if x.is_nan() {
        lower
    } else {
        x.clamp(lower, upper)
    }
}

fn is_missing(token: &str) -> bool {
    let t = token.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("null")
}

fn parse_bool(token: &str) -> Option<bool> {
    match token.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "t" | "yes" | "y" => Some(true),
        "0" | "false" | "f" | "no" | "n" => Some(false),
        _ => None,
    }
}

/// Parses and clamps raw tokens into a column obeying `spec`.
///
/// Numeric values outside `[lower, upper]` are truncated to the nearest end,
/// unknown categories map to [`OTHER_CATEGORY`] and missing entries take the
/// variable's default, so the column always has one entry per input row.
/// Row numbers in errors are 1-based data rows.
pub fn clamp_column<S: AsRef<str>>(
    raw: &[S],
    spec: &VariableSpec,
) -> Result<ClampedColumn, MechanismError> {
    spec.validate()?;
    let mut clamped = 0;
    let mut missing = 0;
    let bad_token = |row: usize, token: &str| MechanismError::Ingestion {
        variable: spec.name.clone(),
        row: row + 1,
        token: token.to_string(),
    };
    let column = match &spec.kind {
        VariableKind::Numeric {
            lower,
            upper,
            missing: default,
        } => {
            let fill = default.unwrap_or(0.5 * (lower + upper));
            let mut out = Vec::with_capacity(raw.len());
            for (row, token) in raw.iter().enumerate() {
                let token = token.as_ref();
                if is_missing(token) {
                    missing += 1;
                    out.push(fill);
                    continue;
                }
                let x: f64 = token
                    .trim()
                    .parse()
                    .ok()
                    .filter(|x: &f64| !x.is_nan())
                    .ok_or_else(|| bad_token(row, token))?;
                let c = clamp_value(x, *lower, *upper);
                if c != x {
                    clamped += 1;
                }
                out.push(c);
            }
            Column::Numeric(out)
        }
        VariableKind::Boolean => {
            let mut out = Vec::with_capacity(raw.len());
            for (row, token) in raw.iter().enumerate() {
                let token = token.as_ref();
                if is_missing(token) {
                    missing += 1;
                    out.push(0.0);
                    continue;
                }
                let b = parse_bool(token).ok_or_else(|| bad_token(row, token))?;
                out.push(if b { 1.0 } else { 0.0 });
            }
            Column::Numeric(out)
        }
        VariableKind::Categorical { categories } => {
            let index: HashMap<&str, u32> = categories
                .iter()
                .enumerate()
                .map(|(i, c)| (c.as_str(), i as u32))
                .collect();
            let other = categories.len() as u32;
            let out = raw
                .iter()
                .map(|token| {
                    let token = token.as_ref();
                    if is_missing(token) {
                        missing += 1;
                        return other;
                    }
                    match index.get(token.trim()) {
                        Some(&i) => i,
                        None => {
                            clamped += 1;
                            other
                        }
                    }
                })
                .collect();
            Column::Categorical(out)
        }
    };
    Ok(ClampedColumn {
        column,
        clamped,
        missing,
    })
}
