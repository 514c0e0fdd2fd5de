//! In-memory item corpus: per-modality embeddings plus resolution metadata.

use std::collections::HashSet;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ModalityInfo {
    pub name: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub item_id: u64,
    /// One entry per corpus modality, in `Corpus::modalities` order.
    pub vectors: Vec<Option<Vec<f64>>>,
    pub relevance: f64,
    /// Epoch seconds.
    pub freshness: i64,
}

/// Records sorted by `item_id`, ids unique.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Corpus {
    modalities: Vec<ModalityInfo>,
    records: Vec<EmbeddingRecord>,
}

impl Corpus {
    pub fn new(modalities: Vec<ModalityInfo>, mut records: Vec<EmbeddingRecord>) -> Result<Self> {
        let mut names = HashSet::new();
        for m in &modalities {
            if !names.insert(m.name.as_str()) {
                return Err(Error::Data(format!("duplicate modality `{}`", m.name)));
            }
        }
        records.sort_by_key(|r| r.item_id);
        for pair in records.windows(2) {
            if pair[0].item_id == pair[1].item_id {
                return Err(Error::Data(format!("duplicate item_id {}", pair[0].item_id)));
            }
        }
        for r in &records {
            if r.vectors.len() != modalities.len() {
                return Err(Error::shape("record modality count", modalities.len(), r.vectors.len()));
            }
            for (v, m) in r.vectors.iter().zip(&modalities) {
                if let Some(v) = v {
                    if v.len() != m.dim {
                        return Err(Error::Data(format!(
                            "item {}: modality `{}` has dim {}, expected {}",
                            r.item_id,
                            m.name,
                            v.len(),
                            m.dim
                        )));
                    }
                }
            }
        }
        Ok(Corpus {
            modalities,
            records,
        })
    }

    pub fn modalities(&self) -> &[ModalityInfo] {
        &self.modalities
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, item_id: u64) -> Option<&EmbeddingRecord> {
        self.records
            .binary_search_by_key(&item_id, |r| r.item_id)
            .ok()
            .map(|i| &self.records[i])
    }

    /// Input slices for `names`, in that order. Fails on the first missing
    /// modality.
    pub fn inputs<'a>(&'a self, record: &'a EmbeddingRecord, names: &[String]) -> Result<Vec<&'a [f64]>> {
        names
            .iter()
            .map(|n| {
                let idx = self
                    .modality_index(n)
                    .ok_or_else(|| Error::MissingModality(n.clone()))?;
                record.vectors[idx]
                    .as_deref()
                    .ok_or_else(|| Error::MissingModality(format!("{n} (item {})", record.item_id)))
            })
            .collect()
    }

    /// Keeps only the listed modalities, in the given order.
    pub fn select_modalities(&self, names: &[&str]) -> Result<Corpus> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.modality_index(n)
                    .ok_or_else(|| Error::MissingModality(n.to_string()))
            })
            .collect::<Result<_>>()?;
        let modalities = idx.iter().map(|&i| self.modalities[i].clone()).collect();
        let records = self
            .records
            .iter()
            .map(|r| EmbeddingRecord {
                item_id: r.item_id,
                vectors: idx.iter().map(|&i| r.vectors[i].clone()).collect(),
                relevance: r.relevance,
                freshness: r.freshness,
            })
            .collect();
        Ok(Corpus {
            modalities,
            records,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: u64, v: Option<Vec<f64>>) -> EmbeddingRecord {
        EmbeddingRecord {
            item_id: id,
            vectors: vec![v],
            relevance: 0.0,
            freshness: 0,
        }
    }

    #[test]
    fn records_are_sorted_and_ids_unique() {
        let m = vec![ModalityInfo { name: "text".into(), dim: 1 }];
        let c = Corpus::new(m.clone(), vec![rec(5, Some(vec![1.0])), rec(2, Some(vec![0.0]))]).unwrap();
        assert_eq!(c.records()[0].item_id, 2);
        assert!(Corpus::new(m, vec![rec(1, None), rec(1, None)]).is_err());
    }

    #[test]
    fn missing_modality_is_named() {
        let m = vec![ModalityInfo { name: "text".into(), dim: 1 }];
        let c = Corpus::new(m, vec![rec(1, None)]).unwrap();
        let err = c.inputs(&c.records()[0], &["text".into()]).unwrap_err();
        assert!(err.to_string().contains("text"));
        let err = c.inputs(&c.records()[0], &["audio".into()]).unwrap_err();
        assert!(err.to_string().contains("audio"));
    }
}
