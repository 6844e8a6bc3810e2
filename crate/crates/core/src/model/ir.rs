//! Solver-agnostic conic problem representation.
//!
//! A problem is a vector of scalar variables `y`, a linear objective
//! `cᵀy`, affine equalities `aᵀy = b`, and PSD constraints of the form
//! `F₀ + Σ yₖ Fₖ ⪰ 0`, each given entry-by-entry over the upper triangle.
//!
//! The JSON encoding is produced by serde from these types, so field order
//! follows declaration order and floats use shortest round-trip formatting.

use std::collections::HashMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct VarId(pub usize);

/// Sparse linear form `Σ coef · var`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LinearForm(pub Vec<(VarId, f64)>);

impl LinearForm {
    pub fn new() -> Self {
        Self(Vec::new())
    }

    pub fn push(&mut self, var: VarId, coef: f64) {
        self.0.push((var, coef));
    }

    pub fn with(mut self, var: VarId, coef: f64) -> Self {
        self.push(var, coef);
        self
    }

    pub fn eval(&self, y: &[f64]) -> f64 {
        self.0.iter().map(|&(v, c)| c * y[v.0]).sum()
    }

    pub fn terms(&self) -> &[(VarId, f64)] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Equality {
    pub form: LinearForm,
    pub rhs: f64,
}

/// One upper-triangular entry `(row, col)` of a PSD block; mirrored below the diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub row: usize,
    pub col: usize,
    pub constant: f64,
    pub terms: LinearForm,
}

/// What a PSD block encodes. Used for diagnostics and structural checks only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlockRole {
    /// The whole lifted matrix `Z`.
    LiftedFull,
    /// Principal submatrix of `Z` on rows/cols `{1, 2, i, j}` for edge `(i, j)`.
    EdgeSubmatrix { i: NodeId, j: NodeId },
    /// `[[1, g], [g, γ]] ⪰ 0` for edge `(i, j)`.
    Epigraph { i: NodeId, j: NodeId },
    /// `g ≥ 0` for edge `(i, j)`.
    Nonnegative { i: NodeId, j: NodeId },
    /// Lifted deviation bound for an uncertain anchor.
    AnchorBall { j: NodeId },
    /// Anything built by hand.
    Generic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdBlock {
    pub dim: usize,
    pub role: BlockRole,
    pub entries: Vec<BlockEntry>,
}

impl PsdBlock {
    pub fn new(dim: usize, role: BlockRole) -> Self {
        Self {
            dim,
            role,
            entries: Vec::new(),
        }
    }

    /// Adds `(row, col)` as a single variable with unit coefficient.
    pub fn set_var(&mut self, row: usize, col: usize, var: VarId) {
        self.set_affine(row, col, 0.0, LinearForm::new().with(var, 1.0));
    }

    pub fn set_constant(&mut self, row: usize, col: usize, value: f64) {
        self.set_affine(row, col, value, LinearForm::new());
    }

    pub fn set_affine(&mut self, row: usize, col: usize, constant: f64, terms: LinearForm) {
        let (row, col) = if row <= col { (row, col) } else { (col, row) };
        self.entries.push(BlockEntry {
            row,
            col,
            constant,
            terms,
        });
    }

    /// Dense symmetric matrix at the point `y`.
    pub fn eval(&self, y: &[f64]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for e in &self.entries {
            let v = e.constant + e.terms.eval(y);
            m[(e.row, e.col)] += v;
            if e.row != e.col {
                m[(e.col, e.row)] += v;
            }
        }
        m
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        self.entries.iter().flat_map(|e| e.terms.0.iter().map(|&(v, _)| v))
    }
}

/// Meaning of a scalar variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VarLabel {
    /// Entry `(row, col)` of the lifted matrix, 0-based, `row ≤ col`.
    Z { row: usize, col: usize },
    /// Squared-distance surrogate for edge `(i, j)`.
    Gamma { i: NodeId, j: NodeId },
    /// Distance surrogate for edge `(i, j)`.
    Dist { i: NodeId, j: NodeId },
    Free,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    Fullsdp,
    Esdp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnchorVariant {
    KnownAnchors,
    UncertainAnchors,
}

/// Lifted-matrix layout. Node `k` (1-based) sits at row/column `k + 1` of `Z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiftedLayout {
    pub formulation: Formulation,
    pub variant: AnchorVariant,
    pub n_sensors: usize,
    pub n_anchors: usize,
}

impl LiftedLayout {
    pub fn dim(&self) -> usize {
        2 + self.n_sensors + self.n_anchors
    }

    pub fn z_index(node: NodeId) -> usize {
        node.0 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub objective: LinearForm,
    pub equalities: Vec<Equality>,
    pub psd_blocks: Vec<PsdBlock>,
    pub var_labels: Vec<VarLabel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<LiftedLayout>,
}

impl ConicProblem {
    /// An empty problem with `num_vars` unlabeled variables.
    pub fn with_vars(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: LinearForm::new(),
            equalities: Vec::new(),
            psd_blocks: Vec::new(),
            var_labels: vec![VarLabel::Free; num_vars],
            layout: None,
        }
    }

    pub fn add_equality(&mut self, form: LinearForm, rhs: f64) {
        self.equalities.push(Equality { form, rhs });
    }

    pub fn validate(&self) -> Result<()> {
        if self.var_labels.len() != self.num_vars {
            return invalid(format!(
                "{} labels for {} variables",
                self.var_labels.len(),
                self.num_vars
            ));
        }
        let check_form = |f: &LinearForm, what: &str| -> Result<()> {
            for &(v, c) in f.terms() {
                if v.0 >= self.num_vars {
                    return invalid(format!("{what} references undeclared variable {}", v.0));
                }
                if !c.is_finite() {
                    return invalid(format!("{what} has non-finite coefficient"));
                }
            }
            Ok(())
        };
        check_form(&self.objective, "objective")?;
        for (k, eq) in self.equalities.iter().enumerate() {
            check_form(&eq.form, &format!("equality {k}"))?;
            if !eq.rhs.is_finite() {
                return invalid(format!("equality {k} has non-finite rhs"));
            }
        }
        for (b, block) in self.psd_blocks.iter().enumerate() {
            if block.dim == 0 {
                return invalid(format!("block {b} has dimension 0"));
            }
            for e in &block.entries {
                if e.row > e.col || e.col >= block.dim {
                    return invalid(format!(
                        "block {b} entry ({}, {}) outside upper triangle of dim {}",
                        e.row, e.col, block.dim
                    ));
                }
                if !e.constant.is_finite() {
                    return invalid(format!("block {b} has non-finite constant"));
                }
                check_form(&e.terms, &format!("block {b}"))?;
            }
        }
        Ok(())
    }

    pub fn objective_value(&self, y: &[f64]) -> f64 {
        self.objective.eval(y)
    }

    /// `aᵀy − b` for every equality.
    pub fn equality_residuals(&self, y: &[f64]) -> Vec<f64> {
        self.equalities.iter().map(|e| e.form.eval(y) - e.rhs).collect()
    }

    /// Variable index by label.
    pub fn label_index(&self) -> HashMap<VarLabel, VarId> {
        self.var_labels
            .iter()
            .enumerate()
            .map(|(k, &l)| (l, VarId(k)))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let p: ConicProblem = serde_json::from_str(text)?;
        p.validate()?;
        Ok(p)
    }
}
