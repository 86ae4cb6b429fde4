use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::DataType;

/// The set of data types an app declares as collected.
///
/// Stored as a 32-bit mask indexed by [`DataType::index`], so set
/// semantics are structural.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PrivacyLabel(u32);

impl PrivacyLabel {
    pub const fn empty() -> Self {
        PrivacyLabel(0)
    }

    pub const fn all() -> Self {
        PrivacyLabel(u32::MAX)
    }

    pub fn from_bits(bits: u32) -> Self {
        PrivacyLabel(bits)
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn contains(self, d: DataType) -> bool {
        self.0 & (1 << d.index()) != 0
    }

    pub fn insert(&mut self, d: DataType) {
        self.0 |= 1 << d.index();
    }

    pub fn remove(&mut self, d: DataType) {
        self.0 &= !(1 << d.index());
    }

    pub fn union(self, other: PrivacyLabel) -> PrivacyLabel {
        PrivacyLabel(self.0 | other.0)
    }

    pub fn is_superset(self, other: PrivacyLabel) -> bool {
        self.0 & other.0 == other.0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Members in canonical order.
    pub fn iter(self) -> impl Iterator<Item = DataType> {
        DataType::ALL.into_iter().filter(move |d| self.contains(*d))
    }
}

impl FromIterator<DataType> for PrivacyLabel {
    fn from_iter<I: IntoIterator<Item = DataType>>(iter: I) -> Self {
        let mut label = PrivacyLabel::empty();
        for d in iter {
            label.insert(d);
        }
        label
    }
}

impl fmt::Debug for PrivacyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|d| d.name())).finish()
    }
}

impl Serialize for PrivacyLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for PrivacyLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let names = Vec::<DataType>::deserialize(deserializer)?;
        Ok(names.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("cannot merge an empty list of labels")]
pub struct EmptyInput;

/// Union of all the given labels.
pub fn merge_labels(labels: &[PrivacyLabel]) -> Result<PrivacyLabel, EmptyInput> {
    if labels.is_empty() {
        return Err(EmptyInput);
    }
    Ok(labels.iter().fold(PrivacyLabel::empty(), |acc, l| acc.union(*l)))
}
