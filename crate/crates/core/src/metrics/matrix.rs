use serde::{Deserialize, Serialize};

use super::{MetricsError, Result};
use crate::domain::{AnnotatorId, CategoryId, InstanceId};

/// Labels of every annotator on every instance for one pass.
///
/// Labels are stored as indices into `categories`; `None` marks a cell that
/// is missing or excluded from analysis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMatrix {
    categories: Vec<CategoryId>,
    annotators: Vec<AnnotatorId>,
    instances: Vec<InstanceId>,
    cells: Vec<Option<usize>>,
}

impl LabelMatrix {
    /// An all-masked matrix.
    pub fn new(
        categories: Vec<CategoryId>,
        annotators: Vec<AnnotatorId>,
        instances: Vec<InstanceId>,
    ) -> Self {
        let cells = vec![None; annotators.len() * instances.len()];
        Self {
            categories,
            annotators,
            instances,
            cells,
        }
    }

    /// Builds a matrix from one row of category indices per annotator.
    pub fn from_rows(
        categories: Vec<CategoryId>,
        annotators: Vec<AnnotatorId>,
        instances: Vec<InstanceId>,
        rows: Vec<Vec<Option<usize>>>,
    ) -> Result<Self> {
        if rows.len() != annotators.len() {
            return Err(MetricsError::LengthMismatch {
                left: rows.len(),
                right: annotators.len(),
            });
        }
        let mut m = Self::new(categories, annotators, instances);
        for (a, row) in rows.into_iter().enumerate() {
            if row.len() != m.instances.len() {
                return Err(MetricsError::LengthMismatch {
                    left: row.len(),
                    right: m.instances.len(),
                });
            }
            for (i, label) in row.into_iter().enumerate() {
                m.set(a, i, label)?;
            }
        }
        Ok(m)
    }

    pub fn categories(&self) -> &[CategoryId] {
        &self.categories
    }

    pub fn annotators(&self) -> &[AnnotatorId] {
        &self.annotators
    }

    pub fn instances(&self) -> &[InstanceId] {
        &self.instances
    }

    pub fn set(&mut self, annotator: usize, instance: usize, label: Option<usize>) -> Result<()> {
        if let Some(l) = label {
            if l >= self.categories.len() {
                return Err(MetricsError::CategoryOutOfRange {
                    index: l,
                    count: self.categories.len(),
                });
            }
        }
        let n = self.instances.len();
        self.cells[annotator * n + instance] = label;
        Ok(())
    }

    pub fn set_label(
        &mut self,
        annotator: &AnnotatorId,
        instance: &InstanceId,
        label: &CategoryId,
    ) -> Result<()> {
        let a = self.annotator_index(annotator)?;
        let i = self
            .instances
            .iter()
            .position(|x| x == instance)
            .ok_or_else(|| MetricsError::UnknownInstance(instance.to_string()))?;
        let l = self.categories.iter().position(|c| c == label).ok_or(
            MetricsError::CategoryOutOfRange {
                index: usize::MAX,
                count: self.categories.len(),
            },
        )?;
        self.set(a, i, Some(l))
    }

    pub fn get(&self, annotator: usize, instance: usize) -> Option<usize> {
        self.cells[annotator * self.instances.len() + instance]
    }

    pub fn row(&self, annotator: usize) -> &[Option<usize>] {
        let n = self.instances.len();
        &self.cells[annotator * n..(annotator + 1) * n]
    }

    pub fn annotator_index(&self, id: &AnnotatorId) -> Result<usize> {
        self.annotators
            .iter()
            .position(|a| a == id)
            .ok_or_else(|| MetricsError::UnknownAnnotator(id.clone()))
    }

    /// Number of unmasked cells.
    pub fn present(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count()
    }

    pub fn same_shape(&self, other: &LabelMatrix) -> bool {
        self.categories == other.categories
            && self.annotators == other.annotators
            && self.instances == other.instances
    }

    /// Copy of `self` with every cell masked where `other` is masked.
    pub fn masked_like(&self, other: &LabelMatrix) -> Result<LabelMatrix> {
        if !self.same_shape(other) {
            return Err(MetricsError::ShapeMismatch);
        }
        let mut out = self.clone();
        for (c, o) in out.cells.iter_mut().zip(&other.cells) {
            if o.is_none() {
                *c = None;
            }
        }
        Ok(out)
    }
}
