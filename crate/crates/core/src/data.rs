//! Multimodal sample tables, availability-grouped batching, and cached
//! coordinate features.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::fusion::{ModalityId, ModalitySet};
use crate::geo::{GeoCoordinate, LocationEncoder};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum SlotColumn {
    Location(Vec<GeoCoordinate>),
    /// `[n × width]`; rows of samples lacking this slot are ignored.
    Features(Tensor),
}

impl SlotColumn {
    pub fn len(&self) -> usize {
        match self {
            SlotColumn::Location(c) => c.len(),
            SlotColumn::Features(t) => t.rows(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column-per-slot sample table with a per-row availability set.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalData {
    pub slots: Vec<SlotColumn>,
    pub availability: Vec<ModalitySet>,
}

impl MultimodalData {
    pub fn new(slots: Vec<SlotColumn>, availability: Vec<ModalitySet>) -> Result<Self> {
        let d = Self {
            slots,
            availability,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.availability.len()
    }

    pub fn is_empty(&self) -> bool {
        self.availability.is_empty()
    }

    pub fn num_slots(&self) -> usize {
        self.slots.len()
    }

    pub fn location_slot(&self) -> Option<ModalityId> {
        self.slots
            .iter()
            .position(|s| matches!(s, SlotColumn::Location(_)))
            .map(ModalityId)
    }

    pub fn coords(&self) -> Option<&[GeoCoordinate]> {
        self.slots.iter().find_map(|s| match s {
            SlotColumn::Location(c) => Some(c.as_slice()),
            _ => None,
        })
    }

    pub fn features(&self, m: ModalityId) -> Result<&Tensor> {
        match self.slots.get(m.0) {
            Some(SlotColumn::Features(t)) => Ok(t),
            _ => Err(Error::Contract(format!("slot {} holds no feature column", m.0))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        let all = ModalitySet::first(self.slots.len());
        for (i, s) in self.slots.iter().enumerate() {
            if s.len() != n {
                return Err(Error::Contract(format!(
                    "slot {i} has {} rows, expected {n}",
                    s.len()
                )));
            }
        }
        let loc = self.location_slot();
        for (row, a) in self.availability.iter().enumerate() {
            if a.len() < 2 || !a.is_subset(all) || loc.is_some_and(|l| !a.contains(l)) {
                return Err(Error::Contract(format!(
                    "row {row}: availability {a:?} must include the coordinates and at least one other slot"
                )));
            }
        }
        Ok(())
    }

    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        let slots = self
            .slots
            .iter()
            .map(|s| {
                Ok(match s {
                    SlotColumn::Location(c) => {
                        SlotColumn::Location(rows.iter().map(|&r| c[r]).collect())
                    }
                    SlotColumn::Features(t) => SlotColumn::Features(t.gather_rows(rows)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            slots,
            availability: rows.iter().map(|&r| self.availability[r]).collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SlotBatch {
    /// Coordinates plus their per-scale RFF features `[b × 2F]`.
    Location {
        coords: Vec<GeoCoordinate>,
        rff: Vec<Tensor>,
    },
    Features(Tensor),
}

/// Same-availability rows gathered into per-slot tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub available: ModalitySet,
    pub slots: Vec<Option<SlotBatch>>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn features(&self, m: ModalityId) -> Result<&Tensor> {
        match self.slots.get(m.0) {
            Some(Some(SlotBatch::Features(t))) => Ok(t),
            _ => Err(Error::Contract(format!("batch holds no features for slot {}", m.0))),
        }
    }

    pub fn features_mut(&mut self, m: ModalityId) -> Result<&mut Tensor> {
        match self.slots.get_mut(m.0) {
            Some(Some(SlotBatch::Features(t))) => Ok(t),
            _ => Err(Error::Contract(format!("batch holds no features for slot {}", m.0))),
        }
    }
}

/// A split together with the cached RFF features of its coordinates.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub data: MultimodalData,
    rff: Vec<Tensor>,
}

impl PreparedSplit {
    pub fn new(data: MultimodalData, encoder: Option<&LocationEncoder>) -> Result<Self> {
        data.validate()?;
        let rff = match (encoder, data.coords()) {
            (Some(enc), Some(coords)) if !coords.is_empty() => enc.featurize(coords)?,
            _ => Vec::new(),
        };
        Ok(Self { data, rff })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Gathers `rows`, which must all share `available`.
    pub fn gather(&self, rows: &[usize], available: ModalitySet) -> Result<Batch> {
        if rows.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        if let Some(&r) = rows.iter().find(|&&r| self.data.availability[r] != available) {
            return Err(Error::Contract(format!(
                "row {r} does not share availability {available:?}"
            )));
        }
        let slots = self
            .data
            .slots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if !available.contains(ModalityId(i)) {
                    return Ok(None);
                }
                Ok(Some(match s {
                    SlotColumn::Location(c) => {
                        if self.rff.is_empty() {
                            return Err(Error::Contract(
                                "coordinate features were not prepared".into(),
                            ));
                        }
                        SlotBatch::Location {
                            coords: rows.iter().map(|&r| c[r]).collect(),
                            rff: self
                                .rff
                                .iter()
                                .map(|f| f.gather_rows(rows))
                                .collect::<std::result::Result<_, _>>()?,
                        }
                    }
                    SlotColumn::Features(t) => SlotBatch::Features(t.gather_rows(rows)?),
                }))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            indices: rows.to_vec(),
            available,
            slots,
        })
    }

    pub fn batches(&self, batch_size: usize, rng: Option<&mut Rng>) -> Result<Vec<(ModalitySet, Vec<usize>)>> {
        let rows: Vec<usize> = (0..self.len()).collect();
        availability_batches(&self.data.availability, &rows, batch_size, rng)
    }
}

/// Groups `rows` by availability set and chunks each group. With an rng,
/// rows are shuffled within groups and the batch order is shuffled; the
/// final short batch of each group is kept.
pub fn availability_batches(
    availability: &[ModalitySet],
    rows: &[usize],
    batch_size: usize,
    mut rng: Option<&mut Rng>,
) -> Result<Vec<(ModalitySet, Vec<usize>)>> {
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    let mut groups: BTreeMap<ModalitySet, Vec<usize>> = BTreeMap::new();
    for &r in rows {
        groups.entry(availability[r]).or_default().push(r);
    }
    let mut out = Vec::new();
    for (set, mut members) in groups {
        if let Some(rng) = rng.as_deref_mut() {
            members.shuffle(rng);
        }
        out.extend(members.chunks(batch_size).map(|c| (set, c.to_vec())));
    }
    if let Some(rng) = rng {
        out.shuffle(rng);
    }
    Ok(out)
}
