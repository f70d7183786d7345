//! The multi-view prototype bank.
//!
//! Each category owns `n` slots of dimension `d`. Free slots are filled in
//! order; once a category is full, an incoming feature is merged into the
//! slot it is most cosine-similar to (the averaging policy) or overwrites the
//! oldest slot (the FIFO policy).
//!
//! Storage is `f32`. Dot products, norms and means accumulate in `f64`.

pub mod oracle;

use std::fmt;
use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Index of a category row in a [`VisualBank`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CategoryId(pub usize);

impl fmt::Display for CategoryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

impl From<usize> for CategoryId {
    fn from(id: usize) -> Self {
        CategoryId(id)
    }
}

/// A prompt or prototype embedding.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct FeatureVector(Vec<f32>);

impl FeatureVector {
    pub fn new(values: Vec<f32>) -> Self {
        FeatureVector(values)
    }

    pub fn zeros(d: usize) -> Self {
        FeatureVector(vec![0.0; d])
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm64(&self.0)
    }
}

impl Deref for FeatureVector {
    type Target = [f32];

    fn deref(&self) -> &[f32] {
        &self.0
    }
}

impl From<Vec<f32>> for FeatureVector {
    fn from(v: Vec<f32>) -> Self {
        FeatureVector(v)
    }
}

impl AsRef<[f32]> for FeatureVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdatePolicy {
    Averaging,
    Fifo,
}

impl UpdatePolicy {
    pub fn name(self) -> &'static str {
        match self {
            UpdatePolicy::Averaging => "averaging",
            UpdatePolicy::Fifo => "fifo",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateAction {
    /// Written into the next free slot.
    Filled,
    /// Averaged into the most similar occupied slot.
    Merged,
    /// Overwrote the oldest slot of a full FIFO category.
    Replaced,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UpdateRecord {
    pub slot_index: usize,
    pub action: UpdateAction,
}

fn norm64(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt()
}

fn dot64(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Cosine similarity accumulated in `f64` and clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let (na, nb) = (norm64(a), norm64(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok((dot64(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

/// Rounded elementwise mean of two `f32` vectors. The `f64` sum of two `f32`s
/// is exact, so this is the correctly rounded midpoint.
pub(crate) fn midpoint(slot: &mut [f32], feature: &[f32]) {
    for (s, &f) in slot.iter_mut().zip(feature) {
        *s = ((f64::from(*s) + f64::from(f)) * 0.5) as f32;
    }
}

fn validate_feature(feature: &[f32], d: usize) -> Result<()> {
    if feature.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: feature.len(),
        });
    }
    if feature.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite);
    }
    if feature.iter().all(|&x| x == 0.0) {
        return Err(Error::ZeroNorm);
    }
    Ok(())
}

/// The `n` slots held for one category.
#[derive(Clone, Debug, PartialEq)]
pub struct CategorySlots {
    n: usize,
    d: usize,
    occupancy: usize,
    write_cursor: usize,
    slots: Vec<f32>,
}

impl CategorySlots {
    fn empty(n: usize, d: usize) -> Self {
        Self {
            n,
            d,
            occupancy: 0,
            write_cursor: 0,
            slots: vec![0.0; n * d],
        }
    }

    /// Rebuild from raw parts, checking every structural invariant.
    pub fn from_raw(
        n: usize,
        d: usize,
        occupancy: usize,
        write_cursor: usize,
        slots: Vec<f32>,
    ) -> Result<Self> {
        if slots.len() != n * d {
            return Err(Error::DimensionMismatch {
                expected: n * d,
                got: slots.len(),
            });
        }
        if occupancy > n || write_cursor >= n {
            return Err(Error::Corrupt(format!(
                "occupancy {occupancy} / cursor {write_cursor} out of range for {n} slots"
            )));
        }
        if slots[occupancy * d..].iter().any(|&x| x.to_bits() != 0) {
            return Err(Error::Corrupt("unoccupied slot is not zero".into()));
        }
        Ok(Self {
            n,
            d,
            occupancy,
            write_cursor,
            slots,
        })
    }

    pub fn occupancy(&self) -> usize {
        self.occupancy
    }

    pub fn write_cursor(&self) -> usize {
        self.write_cursor
    }

    pub fn is_full(&self) -> bool {
        self.occupancy == self.n
    }

    pub fn slot(&self, i: usize) -> &[f32] {
        &self.slots[i * self.d..(i + 1) * self.d]
    }

    pub fn occupied(&self) -> impl Iterator<Item = &[f32]> + '_ {
        (0..self.occupancy).map(move |i| self.slot(i))
    }

    /// All `n·d` slot values, row-major.
    pub fn raw(&self) -> &[f32] {
        &self.slots
    }

    fn fill(&mut self, feature: &[f32]) -> UpdateRecord {
        let i = self.occupancy;
        self.slots[i * self.d..(i + 1) * self.d].copy_from_slice(feature);
        self.occupancy += 1;
        UpdateRecord {
            slot_index: i,
            action: UpdateAction::Filled,
        }
    }

    /// Index of the occupied slot most cosine-similar to `feature`, lowest
    /// index on ties. A degenerate zero-norm slot scores 0.
    fn most_similar(&self, feature: &[f32]) -> usize {
        let nf = norm64(feature);
        let mut best = (0, f64::NEG_INFINITY);
        for (m, slot) in self.occupied().enumerate() {
            let ns = norm64(slot);
            let s = if ns == 0.0 {
                0.0
            } else {
                (dot64(feature, slot) / (nf * ns)).clamp(-1.0, 1.0)
            };
            if s > best.1 {
                best = (m, s);
            }
        }
        best.0
    }

    /// Similarity-guided averaging update.
    pub fn insert_averaging(&mut self, feature: &[f32]) -> Result<UpdateRecord> {
        validate_feature(feature, self.d)?;
        if !self.is_full() {
            return Ok(self.fill(feature));
        }
        let k = self.most_similar(feature);
        midpoint(&mut self.slots[k * self.d..(k + 1) * self.d], feature);
        Ok(UpdateRecord {
            slot_index: k,
            action: UpdateAction::Merged,
        })
    }

    /// Ring-buffer update: keeps the `n` most recent features.
    pub fn insert_fifo(&mut self, feature: &[f32]) -> Result<UpdateRecord> {
        validate_feature(feature, self.d)?;
        if !self.is_full() {
            return Ok(self.fill(feature));
        }
        let k = self.write_cursor;
        self.slots[k * self.d..(k + 1) * self.d].copy_from_slice(feature);
        self.write_cursor = (k + 1) % self.n;
        Ok(UpdateRecord {
            slot_index: k,
            action: UpdateAction::Replaced,
        })
    }

    pub fn insert(&mut self, policy: UpdatePolicy, feature: &[f32]) -> Result<UpdateRecord> {
        match policy {
            UpdatePolicy::Averaging => self.insert_averaging(feature),
            UpdatePolicy::Fifo => self.insert_fifo(feature),
        }
    }

    /// Mean over occupied slots; `None` when the category is empty.
    pub fn mean(&self) -> Option<FeatureVector> {
        if self.occupancy == 0 {
            return None;
        }
        let mut acc = vec![0.0f64; self.d];
        for slot in self.occupied() {
            for (a, &x) in acc.iter_mut().zip(slot) {
                *a += f64::from(x);
            }
        }
        let k = self.occupancy as f64;
        Some(FeatureVector(acc.into_iter().map(|a| (a / k) as f32).collect()))
    }
}

/// Category-keyed bank of `n` slots per category.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualBank {
    n: usize,
    d: usize,
    policy: UpdatePolicy,
    categories: Vec<CategorySlots>,
}

impl VisualBank {
    pub fn new(num_categories: usize, n: usize, d: usize, policy: UpdatePolicy) -> Result<Self> {
        if num_categories == 0 || n == 0 || d == 0 {
            return Err(Error::InvalidDimension(format!(
                "bank sizes must be positive (categories={num_categories}, n={n}, d={d})"
            )));
        }
        Ok(Self {
            n,
            d,
            policy,
            categories: (0..num_categories)
                .map(|_| CategorySlots::empty(n, d))
                .collect(),
        })
    }

    pub(crate) fn from_parts(
        n: usize,
        d: usize,
        policy: UpdatePolicy,
        categories: Vec<CategorySlots>,
    ) -> Result<Self> {
        if categories.is_empty() || n == 0 || d == 0 {
            return Err(Error::InvalidDimension("empty bank".into()));
        }
        Ok(Self {
            n,
            d,
            policy,
            categories,
        })
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn slots_per_category(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn policy(&self) -> UpdatePolicy {
        self.policy
    }

    pub fn category_ids(&self) -> impl Iterator<Item = CategoryId> {
        (0..self.categories.len()).map(CategoryId)
    }

    pub fn category(&self, id: CategoryId) -> Result<&CategorySlots> {
        self.categories
            .get(id.0)
            .ok_or(Error::UnknownCategory(id.0))
    }

    fn category_mut(&mut self, id: CategoryId) -> Result<&mut CategorySlots> {
        self.categories
            .get_mut(id.0)
            .ok_or(Error::UnknownCategory(id.0))
    }

    /// Mutable access to every category at once. Distinct categories update
    /// independently, so the returned slice can be split across threads.
    pub fn categories_mut(&mut self) -> &mut [CategorySlots] {
        &mut self.categories
    }

    pub fn occupancy(&self, id: CategoryId) -> Result<usize> {
        Ok(self.category(id)?.occupancy)
    }

    /// Insert under the bank's own policy.
    pub fn insert(&mut self, category: CategoryId, feature: &[f32]) -> Result<UpdateRecord> {
        let policy = self.policy;
        self.category_mut(category)?.insert(policy, feature)
    }

    /// Similarity-guided averaging update.
    pub fn insert_prompt(&mut self, category: CategoryId, feature: &[f32]) -> Result<UpdateRecord> {
        self.expect_policy(UpdatePolicy::Averaging)?;
        self.category_mut(category)?.insert_averaging(feature)
    }

    pub fn insert_prompt_fifo(
        &mut self,
        category: CategoryId,
        feature: &[f32],
    ) -> Result<UpdateRecord> {
        self.expect_policy(UpdatePolicy::Fifo)?;
        self.category_mut(category)?.insert_fifo(feature)
    }

    fn expect_policy(&self, expected: UpdatePolicy) -> Result<()> {
        if self.policy != expected {
            return Err(Error::WrongPolicy {
                expected: expected.name(),
                actual: self.policy.name(),
            });
        }
        Ok(())
    }

    pub fn category_mean(&self, category: CategoryId) -> Result<FeatureVector> {
        self.category(category)?
            .mean()
            .ok_or(Error::EmptyCategory(category.0))
    }

    /// Stacked category means, one row per entry of `active`, in that order.
    pub fn prototype_matrix(&self, active: &[CategoryId]) -> Result<Matrix<f32>> {
        let mut out = Matrix::zeros(active.len(), self.d);
        for (i, &c) in active.iter().enumerate() {
            out.row_mut(i).copy_from_slice(&self.category_mean(c)?);
        }
        Ok(out)
    }

    /// Categories with at least one occupied slot, in id order.
    pub fn active_categories(&self) -> Vec<CategoryId> {
        self.category_ids()
            .filter(|&c| self.categories[c.0].occupancy > 0)
            .collect()
    }

    pub fn add_category(&mut self) -> CategoryId {
        self.categories.push(CategorySlots::empty(self.n, self.d));
        CategoryId(self.categories.len() - 1)
    }
}
