use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::objective_space::OutputTag;

pub type ParamId = usize;

/// Which head a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum HeadKind {
    Output(OutputTag),
    /// Classification head reserved for meta-gradient estimation.
    Dev,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKind::Output(o) => write!(f, "{o}"),
            HeadKind::Dev => f.write_str("Dev"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamGroup {
    Body,
    Head(HeadKind),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub group: ParamGroup,
    pub value: Array2<f64>,
}

/// Named parameter tensors in creation order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet {
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, value: Array2<f64>, group: ParamGroup) -> ParamId {
        self.tensors.push(Tensor {
            name: name.into(),
            group,
            value,
        });
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.tensors[id].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.tensors[id].value
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.tensors.iter().map(|t| t.value.dim()).collect()
    }

    pub fn group(&self, id: ParamId) -> ParamGroup {
        self.tensors[id].group
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.value.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.value.iter().all(|v| v.is_finite()))
    }
}

/// Which parameters a flattened gradient covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    BodyOnly,
    BodyAndHeads,
}

/// One gradient slot per parameter, shaped like the parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    slots: Vec<Array2<f64>>,
}

impl Gradients {
    pub fn zeros(shapes: &[(usize, usize)]) -> Self {
        Gradients {
            slots: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn zeros_like(params: &ParamSet) -> Self {
        Self::zeros(&params.shapes())
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.slots[id]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Array2<f64>) {
        self.slots[id] += g;
    }

    /// `self += k · other`, slot by slot. Slots missing from `other` (params
    /// created after it was computed) are left unchanged.
    pub fn add_scaled(&mut self, k: f64, other: &Gradients) {
        for (a, b) in self.slots.iter_mut().zip(&other.slots) {
            a.scaled_add(k, b);
        }
    }

    /// Grows to cover parameters appended to `params` since creation.
    pub fn extend_to(&mut self, params: &ParamSet) {
        for t in &params.tensors()[self.slots.len()..] {
            self.slots.push(Array2::zeros(t.value.dim()));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slots.iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    /// Concatenation in parameter order, row-major within each tensor.
    pub fn flatten(&self, params: &ParamSet, scope: GradScope) -> Vec<f64> {
        let mut out = Vec::new();
        for (id, slot) in self.slots.iter().enumerate() {
            if scope == GradScope::BodyOnly && params.group(id) != ParamGroup::Body {
                continue;
            }
            out.extend(slot.iter().copied());
        }
        out
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
