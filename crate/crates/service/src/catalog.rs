use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PilSections {
    pub usage: String,
    pub warnings: String,
    pub interactions: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedicineRecord {
    pub id: String,
    pub name: String,
    pub posology: String,
    pub pil: PilSections,
    /// Output index of the model this record is bound to.
    pub class_index: usize,
}

/// What the classify endpoint attaches to a recognized frame.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedicineSummary {
    pub id: String,
    pub name: String,
    pub posology: String,
}

impl From<&MedicineRecord> for MedicineSummary {
    fn from(r: &MedicineRecord) -> Self {
        MedicineSummary {
            id: r.id.clone(),
            name: r.name.clone(),
            posology: r.posology.clone(),
        }
    }
}

/// A catalog checked against a model's label space.
#[derive(Debug, Clone)]
pub struct Catalog {
    records: Vec<MedicineRecord>,
    by_class: Vec<usize>,
    by_id: HashMap<String, usize>,
}

impl Catalog {
    /// Requires unique ids and exactly one record per class in `0..classes`.
    pub fn new(records: Vec<MedicineRecord>, classes: usize) -> Result<Self> {
        let fail = |m: String| Err(ServiceError::Catalog(m));
        let mut by_id = HashMap::new();
        let mut by_class = vec![usize::MAX; classes];
        for (i, r) in records.iter().enumerate() {
            if by_id.insert(r.id.clone(), i).is_some() {
                return fail(format!("duplicate medicine id {:?}", r.id));
            }
            if r.class_index >= classes {
                return fail(format!(
                    "{:?} is bound to class {} but the model has {classes} classes",
                    r.id, r.class_index
                ));
            }
            if by_class[r.class_index] != usize::MAX {
                return fail(format!(
                    "class {} is bound to both {:?} and {:?}",
                    r.class_index, records[by_class[r.class_index]].id, r.id
                ));
            }
            by_class[r.class_index] = i;
        }
        if let Some(c) = by_class.iter().position(|&i| i == usize::MAX) {
            return fail(format!("model class {c} has no catalog record"));
        }
        Ok(Catalog { records, by_class, by_id })
    }

    pub fn load(path: impl AsRef<Path>, classes: usize) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read(path).map_err(|e| ServiceError::Config(format!("catalog {}: {e}", path.display())))?;
        let records: Vec<MedicineRecord> =
            serde_json::from_slice(&text).map_err(|e| ServiceError::Catalog(format!("{}: {e}", path.display())))?;
        Self::new(records, classes)
    }

    pub fn records(&self) -> &[MedicineRecord] {
        &self.records
    }

    pub fn for_class(&self, class: usize) -> &MedicineRecord {
        &self.records[self.by_class[class]]
    }

    pub fn get(&self, id: &str) -> Option<&MedicineRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }
}

/// Placeholder records for a dataset manifest's classes, e.g. the synthetic set.
pub fn placeholder_catalog(manifest: &medbox_core::data::DatasetManifest) -> Vec<MedicineRecord> {
    manifest
        .classes
        .iter()
        .enumerate()
        .map(|(i, c)| MedicineRecord {
            id: c.id.clone(),
            name: c.name.clone(),
            posology: "1 tablet every 8 hours with water.".into(),
            pil: PilSections {
                usage: format!("{} is a demonstration entry without clinical content.", c.name),
                warnings: "Do not exceed the stated dose.".into(),
                interactions: "None recorded.".into(),
            },
            class_index: i,
        })
        .collect()
}
