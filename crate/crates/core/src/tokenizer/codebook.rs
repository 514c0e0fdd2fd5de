use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// How a residual picks its code at each level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssignmentRule {
    /// argmax cosine similarity
    Cosine,
    /// argmax raw inner product
    Dot,
    /// argmax |inner product|
    AbsDot,
    /// argmin squared Euclidean distance
    L2,
}

impl AssignmentRule {
    pub const ALL: [AssignmentRule; 4] = [
        AssignmentRule::Cosine,
        AssignmentRule::Dot,
        AssignmentRule::AbsDot,
        AssignmentRule::L2,
    ];

    pub fn tag(self) -> u8 {
        match self {
            AssignmentRule::Cosine => 0,
            AssignmentRule::Dot => 1,
            AssignmentRule::AbsDot => 2,
            AssignmentRule::L2 => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.tag() == tag)
    }
}

/// The `K × n` centroid table of one quantization level.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    level: usize,
    centroids: Matrix,
}

impl Codebook {
    pub fn new(level: usize, centroids: Matrix) -> Result<Self> {
        if centroids.rows() < 2 {
            return Err(Error::Config(format!(
                "codebook at level {level} needs at least 2 codes, got {}",
                centroids.rows()
            )));
        }
        if !centroids.is_finite() {
            return Err(Error::Numerical(format!("codebook at level {level} has non-finite entries")));
        }
        Ok(Codebook { level, centroids })
    }

    pub fn level(&self) -> usize {
        self.level
    }

    /// Number of codes `K`.
    pub fn size(&self) -> usize {
        self.centroids.rows()
    }

    pub fn dim(&self) -> usize {
        self.centroids.cols()
    }

    pub fn centroids(&self) -> &Matrix {
        &self.centroids
    }

    pub fn centroids_mut(&mut self) -> &mut Matrix {
        &mut self.centroids
    }

    #[inline]
    pub fn centroid(&self, code: usize) -> &[f64] {
        self.centroids.row(code)
    }

    #[inline]
    pub fn centroid_mut(&mut self, code: usize) -> &mut [f64] {
        self.centroids.row_mut(code)
    }
}
