//! Datasets: records with a target label and an optional binary attribute,
//! plus the generators and file formats that produce them.

mod attributed;
mod export;
mod idx;
mod parabola;

pub use attributed::{gen_attributed, SyntheticAttrConfig};
pub use export::{export_dataset, import_dataset, DatasetManifest};
pub use idx::{load_idx, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
pub use parabola::{gen_parabola, parabola_distance, ParabolaConfig};

use crate::error::{Error, Result};
use crate::nd::Tensor;

/// One sample. `x` is always a flattened rank-1 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub x: Tensor,
    pub y: usize,
    pub a: Option<u8>,
}

/// Maps the `{-1, 1}` label convention onto class indices `{0, 1}`.
pub fn label_from_signed(v: i8) -> Result<usize> {
    match v {
        -1 => Ok(0),
        1 => Ok(1),
        other => Err(Error::InvalidConfig(format!("signed label must be -1 or 1, got {other}"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributedDataset {
    records: Vec<Record>,
    provenance: String,
    image_shape: Option<[usize; 2]>,
}

impl AttributedDataset {
    pub fn new(records: Vec<Record>, provenance: impl Into<String>) -> Result<Self> {
        if let Some(first) = records.first() {
            let d = first.x.shape().to_vec();
            for r in &records {
                if r.x.shape() != d.as_slice() || d.len() != 1 {
                    return Err(Error::ShapeMismatch {
                        op: "dataset",
                        lhs: d.clone(),
                        rhs: r.x.shape().to_vec(),
                    });
                }
                if matches!(r.a, Some(a) if a > 1) {
                    return Err(Error::InvalidConfig("attribute must be 0 or 1".into()));
                }
            }
        }
        Ok(Self {
            records,
            provenance: provenance.into(),
            image_shape: None,
        })
    }

    pub fn with_image_shape(mut self, rows: usize, cols: usize) -> Self {
        self.image_shape = Some([rows, cols]);
        self
    }

    pub fn image_shape(&self) -> Option<[usize; 2]> {
        self.image_shape
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.records.first().map_or(0, |r| r.x.len())
    }

    /// `[n x d]` design matrix.
    pub fn features(&self) -> Result<Tensor> {
        if self.records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let rows: Vec<&[f64]> = self.records.iter().map(|r| r.x.data()).collect();
        Tensor::from_rows(&rows)
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// Attribute column; errors if any record lacks one.
    pub fn attributes(&self) -> Result<Vec<usize>> {
        self.records
            .iter()
            .map(|r| {
                r.a.map(usize::from)
                    .ok_or_else(|| Error::InvalidConfig("dataset has no attribute column".into()))
            })
            .collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            provenance: self.provenance.clone(),
            image_shape: self.image_shape,
        }
    }

    /// First `n` records (or all, if fewer).
    pub fn take(&self, n: usize) -> Self {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Records whose label is in `labels`.
    pub fn filter_labels(&self, labels: &[usize]) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| labels.contains(&self.records[i].y))
            .collect();
        self.subset(&idx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mixed_shapes_and_bad_attributes() {
        let r = |d: usize, a| Record {
            x: Tensor::zeros(&[d]),
            y: 0,
            a,
        };
        assert!(AttributedDataset::new(vec![r(2, None), r(3, None)], "t").is_err());
        assert!(AttributedDataset::new(vec![r(2, Some(2))], "t").is_err());
        let ds = AttributedDataset::new(vec![r(2, Some(1)), r(2, Some(0))], "t").unwrap();
        assert_eq!(ds.attributes().unwrap(), vec![1, 0]);
        assert_eq!(ds.features().unwrap().shape(), &[2, 2]);
    }

    #[test]
    fn signed_labels() {
        assert_eq!(label_from_signed(-1).unwrap(), 0);
        assert_eq!(label_from_signed(1).unwrap(), 1);
        assert!(label_from_signed(0).is_err());
    }
}
