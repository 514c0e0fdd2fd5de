use std::fmt;

/// An ordered list of per-level codes, optionally extended with a
/// deduplicate token that separates items sharing the same codes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SemanticId {
    pub codes: Vec<u32>,
    pub dedup: Option<u32>,
}

impl SemanticId {
    pub fn new(codes: Vec<u32>) -> Self {
        SemanticId { codes, dedup: None }
    }

    pub fn with_dedup(codes: Vec<u32>, dedup: u32) -> Self {
        SemanticId {
            codes,
            dedup: Some(dedup),
        }
    }

    pub fn levels(&self) -> usize {
        self.codes.len()
    }

    /// The same codes without a deduplicate token.
    pub fn base(&self) -> SemanticId {
        SemanticId::new(self.codes.clone())
    }

    /// Checks every code against the per-level cardinalities.
    pub fn validate(&self, shape: &[usize]) -> crate::Result<()> {
        if self.codes.len() != shape.len() {
            return Err(crate::Error::shape("SemanticId levels", shape.len(), self.codes.len()));
        }
        for (level, (&code, &k)) in self.codes.iter().zip(shape).enumerate() {
            if code as usize >= k {
                return Err(crate::Error::CodeOutOfRange {
                    level,
                    code: code as usize,
                    cardinality: k,
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for SemanticId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for c in &self.codes {
            if !first {
                f.write_str("-")?;
            }
            first = false;
            write!(f, "{c}")?;
        }
        if let Some(d) = self.dedup {
            write!(f, "#{d}")?;
        }
        Ok(())
    }
}
