use std::fmt;

use serde::{Deserialize, Serialize};

/// Number of pitch values in the window (0..=35).
pub const PITCH_VALUES: usize = 36;
/// Sixteenth-note steps per excerpt.
pub const STEPS: usize = 64;
/// Longest representable duration in steps.
pub const MAX_DURATION: usize = 63;
/// Default number of note slots per excerpt.
pub const DEFAULT_SLOTS: usize = 64;

/// One of the three note attributes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Pitch,
    Onset,
    Duration,
}

impl Attribute {
    pub const ALL: [Attribute; 3] = [Attribute::Pitch, Attribute::Onset, Attribute::Duration];

    /// Domain size including the trailing "undefined" entry.
    pub const fn domain_size(self) -> usize {
        match self {
            Attribute::Pitch => PITCH_VALUES + 1,
            Attribute::Onset => STEPS + 1,
            Attribute::Duration => MAX_DURATION + 1,
        }
    }

    pub const fn undefined_index(self) -> usize {
        self.domain_size() - 1
    }

    pub const fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Pitch => "pitch",
            Attribute::Onset => "onset",
            Attribute::Duration => "duration",
        }
    }

    /// Domain index of a concrete value. Durations start at 1.
    pub fn value_to_index(self, value: u8) -> usize {
        match self {
            Attribute::Duration => value as usize - 1,
            _ => value as usize,
        }
    }

    pub fn index_to_value(self, index: usize) -> Option<u8> {
        if index >= self.undefined_index() {
            return None;
        }
        Some(match self {
            Attribute::Duration => index as u8 + 1,
            _ => index as u8,
        })
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Multi-hot allowed set over one attribute domain. Every domain has at most
/// 65 entries, so a `u128` holds it.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct AttributeMask {
    attr: Attribute,
    bits: u128,
}

impl AttributeMask {
    fn domain_bits(attr: Attribute) -> u128 {
        (1u128 << attr.domain_size()) - 1
    }

    pub fn empty(attr: Attribute) -> Self {
        Self { attr, bits: 0 }
    }

    pub fn full(attr: Attribute) -> Self {
        Self {
            attr,
            bits: Self::domain_bits(attr),
        }
    }

    pub fn only(attr: Attribute, index: usize) -> Self {
        assert!(index < attr.domain_size(), "index {index} outside {attr} domain");
        Self {
            attr,
            bits: 1u128 << index,
        }
    }

    pub fn undefined_only(attr: Attribute) -> Self {
        Self::only(attr, attr.undefined_index())
    }

    pub fn defined_only(attr: Attribute) -> Self {
        Self {
            attr,
            bits: Self::domain_bits(attr) & !(1u128 << attr.undefined_index()),
        }
    }

    pub fn from_indices(attr: Attribute, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut m = Self::empty(attr);
        for i in indices {
            m.insert(i);
        }
        m
    }

    /// Raw bits; out-of-domain bits are dropped.
    pub fn from_bits(attr: Attribute, bits: u128) -> Self {
        Self {
            attr,
            bits: bits & Self::domain_bits(attr),
        }
    }

    pub fn attribute(&self) -> Attribute {
        self.attr
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    pub fn contains(&self, index: usize) -> bool {
        index < 128 && self.bits >> index & 1 == 1
    }

    pub fn insert(&mut self, index: usize) {
        assert!(index < self.attr.domain_size(), "index {index} outside {} domain", self.attr);
        self.bits |= 1u128 << index;
    }

    pub fn remove(&mut self, index: usize) {
        if index < 128 {
            self.bits &= !(1u128 << index);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn has_undefined(&self) -> bool {
        self.contains(self.attr.undefined_index())
    }

    pub fn has_defined(&self) -> bool {
        self.bits & !(1u128 << self.attr.undefined_index()) != 0
    }

    pub fn intersect(&self, other: &AttributeMask) -> AttributeMask {
        debug_assert_eq!(self.attr, other.attr);
        Self {
            attr: self.attr,
            bits: self.bits & other.bits,
        }
    }

    pub fn union(&self, other: &AttributeMask) -> AttributeMask {
        debug_assert_eq!(self.attr, other.attr);
        Self {
            attr: self.attr,
            bits: self.bits | other.bits,
        }
    }

    pub fn is_subset(&self, other: &AttributeMask) -> bool {
        self.bits & !other.bits == 0
    }

    /// The single set index, if exactly one bit is set.
    pub fn single(&self) -> Option<usize> {
        (self.count() == 1).then(|| self.bits.trailing_zeros() as usize)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.attr.domain_size()).filter(|&i| self.contains(i))
    }

    /// Lower-case hex, zero-padded to the domain width.
    pub fn to_hex(&self) -> String {
        let width = self.attr.domain_size().div_ceil(4);
        format!("{:0width$x}", self.bits)
    }

    pub fn from_hex(attr: Attribute, s: &str) -> Option<Self> {
        u128::from_str_radix(s, 16).ok().map(|b| Self::from_bits(attr, b))
    }

    /// 0/1 row vector over the domain.
    pub fn to_multi_hot<F: num_traits::Float>(&self) -> Vec<F> {
        (0..self.attr.domain_size())
            .map(|i| if self.contains(i) { F::one() } else { F::zero() })
            .collect()
    }
}

impl fmt::Debug for AttributeMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.attr, self.to_hex())
    }
}
