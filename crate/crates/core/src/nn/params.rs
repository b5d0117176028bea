use std::ops::Range;
use std::sync::Arc;

use super::NnError;
use crate::Scalar;

/// One named parameter array inside a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamBlock {
    pub layer: usize,
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamBlock {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered description of every parameter block of a model.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParamLayout {
    blocks: Vec<ParamBlock>,
    total: usize,
}

impl ParamLayout {
    pub(crate) fn push(&mut self, layer: usize, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let block = ParamBlock {
            layer,
            name: name.into(),
            shape,
            offset: self.total,
        };
        self.total += block.len();
        self.blocks.push(block);
        self.blocks.len() - 1
    }

    pub fn blocks(&self) -> &[ParamBlock] {
        &self.blocks
    }

    pub fn total_len(&self) -> usize {
        self.total
    }
}

/// Flattened trainable parameters (or a gradient / update in the same layout).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector<T> {
    values: Vec<T>,
    layout: Arc<ParamLayout>,
}

impl<T: Scalar> ParamVector<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        Self {
            values: vec![T::zero(); layout.total_len()],
            layout,
        }
    }

    pub fn from_values(layout: Arc<ParamLayout>, values: Vec<T>) -> Result<Self, NnError> {
        if values.len() != layout.total_len() {
            return Err(NnError::LengthMismatch {
                expected: layout.total_len(),
                actual: values.len(),
            });
        }
        Ok(Self { values, layout })
    }

    /// Single unnamed block; handy for tests and scalar toy problems.
    pub fn flat(values: Vec<T>) -> Self {
        let mut layout = ParamLayout::default();
        layout.push(0, "flat", vec![values.len()]);
        Self {
            values,
            layout: Arc::new(layout),
        }
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn block(&self, index: usize) -> &[T] {
        &self.values[self.layout.blocks[index].range()]
    }

    pub fn is_compatible(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn ensure_compatible(&self, other: &Self) -> Result<(), NnError> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(NnError::LayoutMismatch)
        }
    }

    /// `self += scale * other`
    pub fn axpy(&mut self, scale: T, other: &Self) -> Result<(), NnError> {
        self.ensure_compatible(other)?;
        for (a, &b) in self.values.iter_mut().zip(&other.values) {
            *a += scale * b;
        }
        Ok(())
    }

    /// `self - other`
    pub fn sub(&self, other: &Self) -> Result<Self, NnError> {
        self.ensure_compatible(other)?;
        Ok(Self {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| a - b).collect(),
            layout: Arc::clone(&self.layout),
        })
    }

    pub fn scale(&mut self, factor: T) {
        for v in &mut self.values {
            *v *= factor;
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T, NnError> {
        self.ensure_compatible(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(&a, &b)| a * b).sum())
    }

    pub fn l2_norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layouts_must_match_to_combine() {
        let a = ParamVector::flat(vec![1.0, 2.0]);
        let mut other = ParamLayout::default();
        other.push(0, "w", vec![2]);
        let b = ParamVector::zeros(Arc::new(other));
        assert_eq!(a.sub(&b).unwrap_err(), NnError::LayoutMismatch);
        let c = ParamVector::flat(vec![0.5, 0.5]);
        assert_eq!(a.sub(&c).unwrap().values(), &[0.5, 1.5]);
    }

    #[test]
    fn block_offsets_are_contiguous() {
        let mut layout = ParamLayout::default();
        layout.push(0, "conv.weight", vec![2, 1, 3, 3]);
        layout.push(0, "conv.bias", vec![2]);
        assert_eq!(layout.blocks()[1].offset, 18);
        assert_eq!(layout.total_len(), 20);
    }
}
