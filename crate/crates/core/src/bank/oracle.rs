//! Brute-force reference for the averaging update, kept separate from the
//! bank's own scan so the two can be checked against each other.

use rand::Rng;

use crate::bank::{CategoryId, UpdatePolicy, VisualBank};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleUpdate {
    pub slot_index: usize,
    pub new_slot: Vec<f32>,
}

/// Score every slot exhaustively, pick the lowest-index maximum, and return
/// the averaged slot. All slots are treated as occupied.
#[allow(clippy::needless_range_loop)]
pub fn oracle_update<S: AsRef<[f32]>>(slots: &[S], feature: &[f32]) -> Result<OracleUpdate> {
    let d = feature.len();
    let mut feature_sq = 0.0f64;
    for i in 0..d {
        feature_sq += f64::from(feature[i]) * f64::from(feature[i]);
    }
    if feature_sq == 0.0 {
        return Err(Error::ZeroNorm);
    }

    let mut scores = Vec::with_capacity(slots.len());
    for slot in slots {
        let slot = slot.as_ref();
        if slot.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: slot.len(),
            });
        }
        let mut dot = 0.0f64;
        let mut slot_sq = 0.0f64;
        for i in 0..d {
            dot += f64::from(feature[i]) * f64::from(slot[i]);
        }
        for i in 0..d {
            slot_sq += f64::from(slot[i]) * f64::from(slot[i]);
        }
        let score = if slot_sq == 0.0 {
            0.0
        } else {
            let raw = dot / (feature_sq.sqrt() * slot_sq.sqrt());
            raw.clamp(-1.0, 1.0)
        };
        scores.push(score);
    }

    let mut slot_index = 0;
    for k in 1..scores.len() {
        if scores[k] > scores[slot_index] {
            slot_index = k;
        }
    }

    let chosen = slots
        .get(slot_index)
        .ok_or_else(|| Error::InvalidDimension("no slots".into()))?
        .as_ref();
    let new_slot = (0..d)
        .map(|i| ((f64::from(chosen[i]) + f64::from(feature[i])) * 0.5) as f32)
        .collect();
    Ok(OracleUpdate {
        slot_index,
        new_slot,
    })
}

/// Outcome of [`random_equivalence`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EquivalenceTally {
    pub draws: usize,
    /// Draws whose chosen slot index differed.
    pub index_mismatches: usize,
    /// Draws whose merged slot was not bit-identical.
    pub mismatches: usize,
}

/// Random full-bank updates with `n ∈ {1, 2, 5}` and `d ∈ {2, 8, 64}`, each
/// compared against [`oracle_update`].
pub fn random_equivalence<R: Rng>(rng: &mut R, draws: usize) -> Result<EquivalenceTally> {
    let mut tally = EquivalenceTally {
        draws,
        ..Default::default()
    };
    for _ in 0..draws {
        let n = [1, 2, 5][rng.gen_range(0..3)];
        let d = [2, 8, 64][rng.gen_range(0..3)];
        let mut feature = || -> Vec<f32> {
            loop {
                let v: Vec<f32> = (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
                if v.iter().any(|&x| x != 0.0) {
                    return v;
                }
            }
        };
        let mut bank = VisualBank::new(1, n, d, UpdatePolicy::Averaging)?;
        let warmup: Vec<Vec<f32>> = (0..n).map(|_| feature()).collect();
        for f in &warmup {
            bank.insert(CategoryId(0), f)?;
        }
        // A few merges first so slots are not all raw draws.
        let extra: Vec<Vec<f32>> = (0..n % 3).map(|_| feature()).collect();
        for f in &extra {
            bank.insert(CategoryId(0), f)?;
        }
        let f = feature();
        let before: Vec<Vec<f32>> = bank.category(CategoryId(0))?.occupied().map(<[f32]>::to_vec).collect();
        let expected = oracle_update(&before, &f)?;
        let record = bank.insert(CategoryId(0), &f)?;
        let after = bank.category(CategoryId(0))?.slot(record.slot_index).to_vec();
        if record.slot_index != expected.slot_index {
            tally.index_mismatches += 1;
        }
        if record.slot_index != expected.slot_index || after != expected.new_slot {
            tally.mismatches += 1;
        }
    }
    Ok(tally)
}
