//! Unit-aligned editing of code sequences.
//!
//! An edit unit is one top code and the two bottom codes under it (8 motion
//! frames). Operations that change the length work on whole units, so the
//! 1:2 ratio between the levels always holds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hvqvae::LatentCodes;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Top,
    Bottom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    Insert,
    Delete,
    Replace,
    Reorder,
    SwapTop,
    SwapBottom,
}

/// Half-open index range at one level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditTarget {
    pub level: Level,
    pub range: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EditPayload {
    /// Code indices (replace) or a permutation (reorder).
    Indices(Vec<usize>),
    /// Whole units (insert) or a donor sequence (swaps).
    Codes(LatentCodes),
}

/// One edit.
///
/// * `insert`: `range` is empty and marks the insertion point; `payload` holds
///   whole units as `{top, bottom}`.
/// * `delete`: removes the units covering `range`.
/// * `replace`: overwrites `range` at `level` with `payload` indices.
/// * `reorder`: unit `i` of `range` becomes unit `payload[i]` of it.
/// * `swap_top` / `swap_bottom`: copies that level of the donor `payload` over
///   the units covering `range`.
///
/// Bottom-level ranges of length-changing or unit-moving ops must be even
/// aligned.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOp {
    pub kind: EditKind,
    pub target: EditTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<EditPayload>,
}

impl EditOp {
    pub fn replace(level: Level, start: usize, codes: Vec<usize>) -> Self {
        Self {
            kind: EditKind::Replace,
            target: EditTarget {
                level,
                range: [start, start + codes.len()],
            },
            payload: Some(EditPayload::Indices(codes)),
        }
    }

    pub fn delete_units(start: usize, end: usize) -> Self {
        Self {
            kind: EditKind::Delete,
            target: EditTarget {
                level: Level::Top,
                range: [start, end],
            },
            payload: None,
        }
    }

    pub fn insert_units(at: usize, units: LatentCodes) -> Self {
        Self {
            kind: EditKind::Insert,
            target: EditTarget {
                level: Level::Top,
                range: [at, at],
            },
            payload: Some(EditPayload::Codes(units)),
        }
    }

    pub fn reorder_units(start: usize, perm: Vec<usize>) -> Self {
        Self {
            kind: EditKind::Reorder,
            target: EditTarget {
                level: Level::Top,
                range: [start, start + perm.len()],
            },
            payload: Some(EditPayload::Indices(perm)),
        }
    }

    pub fn swap(level: Level, start: usize, end: usize, donor: LatentCodes) -> Self {
        Self {
            kind: match level {
                Level::Top => EditKind::SwapTop,
                Level::Bottom => EditKind::SwapBottom,
            },
            target: EditTarget {
                level: Level::Top,
                range: [start, end],
            },
            payload: Some(EditPayload::Codes(donor)),
        }
    }
}

/// Codebook sizes, for validating payload indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodebookSizes {
    pub top: usize,
    pub bottom: usize,
}

impl CodebookSizes {
    fn check(&self, level: Level, idx: &[usize]) -> Result<()> {
        let k = match level {
            Level::Top => self.top,
            Level::Bottom => self.bottom,
        };
        if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
            return Err(Error::IndexOutOfRange(format!(
                "{} code {bad} >= codebook size {k}",
                level_name(level)
            )));
        }
        Ok(())
    }
}

fn level_name(l: Level) -> &'static str {
    match l {
        Level::Top => "top",
        Level::Bottom => "bottom",
    }
}

fn level_len(c: &LatentCodes, l: Level) -> usize {
    match l {
        Level::Top => c.top.len(),
        Level::Bottom => c.bottom.len(),
    }
}

fn check_range(c: &LatentCodes, t: &EditTarget, allow_empty: bool) -> Result<()> {
    let [a, b] = t.range;
    let len = level_len(c, t.level);
    if a > b || b > len || (!allow_empty && a == b) {
        return Err(Error::IndexOutOfRange(format!(
            "range [{a}, {b}) on {} codes of length {len}",
            level_name(t.level)
        )));
    }
    Ok(())
}

/// The range in units; bottom ranges must fall on unit boundaries.
fn unit_range(t: &EditTarget) -> Result<(usize, usize)> {
    let [a, b] = t.range;
    match t.level {
        Level::Top => Ok((a, b)),
        Level::Bottom if a % 2 == 0 && b % 2 == 0 => Ok((a / 2, b / 2)),
        Level::Bottom => Err(Error::RatioViolation(format!(
            "bottom range [{a}, {b}) does not cover whole units"
        ))),
    }
}

fn indices(op: &EditOp) -> Result<&[usize]> {
    match &op.payload {
        Some(EditPayload::Indices(v)) => Ok(v),
        _ => Err(Error::InvalidArgument(format!("{:?} needs a list of indices as payload", op.kind))),
    }
}

fn codes(op: &EditOp) -> Result<&LatentCodes> {
    match &op.payload {
        Some(EditPayload::Codes(c)) => Ok(c),
        _ => Err(Error::InvalidArgument(format!("{:?} needs {{top, bottom}} codes as payload", op.kind))),
    }
}

/// Applies one op; the input is left untouched.
pub fn apply_op(c: &LatentCodes, op: &EditOp, sizes: CodebookSizes) -> Result<LatentCodes> {
    c.check_ratio()?;
    let mut out = c.clone();
    match op.kind {
        EditKind::Insert => {
            check_range(c, &op.target, true)?;
            if op.target.range[0] != op.target.range[1] {
                return Err(Error::InvalidArgument("insert takes an empty range at the insertion point".into()));
            }
            let (at, _) = unit_range(&op.target)?;
            let units = codes(op)?;
            units.check_ratio()?;
            if units.top.is_empty() {
                return Err(Error::InvalidArgument("insert payload holds no units".into()));
            }
            sizes.check(Level::Top, &units.top)?;
            sizes.check(Level::Bottom, &units.bottom)?;
            out.top.splice(at..at, units.top.iter().copied());
            out.bottom.splice(2 * at..2 * at, units.bottom.iter().copied());
        }
        EditKind::Delete => {
            check_range(c, &op.target, false)?;
            let (a, b) = unit_range(&op.target)?;
            if b - a == c.top.len() {
                return Err(Error::InvalidArgument("cannot delete every unit".into()));
            }
            out.top.drain(a..b);
            out.bottom.drain(2 * a..2 * b);
        }
        EditKind::Replace => {
            check_range(c, &op.target, false)?;
            let new = indices(op)?;
            let [a, b] = op.target.range;
            if new.len() != b - a {
                return Err(Error::RatioViolation(format!(
                    "replacing [{a}, {b}) needs {} codes, got {}",
                    b - a,
                    new.len()
                )));
            }
            sizes.check(op.target.level, new)?;
            match op.target.level {
                Level::Top => out.top[a..b].copy_from_slice(new),
                Level::Bottom => out.bottom[a..b].copy_from_slice(new),
            }
        }
        EditKind::Reorder => {
            check_range(c, &op.target, false)?;
            let (a, b) = unit_range(&op.target)?;
            let perm = indices(op)?;
            let n = b - a;
            if perm.len() != n {
                return Err(Error::InvalidArgument(format!("reorder of {n} units needs {n} entries")));
            }
            let mut seen = vec![false; n];
            for &p in perm {
                if p >= n {
                    return Err(Error::IndexOutOfRange(format!("permutation entry {p} >= {n}")));
                }
                if std::mem::replace(&mut seen[p], true) {
                    return Err(Error::InvalidArgument(format!("permutation repeats {p}")));
                }
            }
            for (i, &p) in perm.iter().enumerate() {
                out.top[a + i] = c.top[a + p];
                out.bottom[2 * (a + i)] = c.bottom[2 * (a + p)];
                out.bottom[2 * (a + i) + 1] = c.bottom[2 * (a + p) + 1];
            }
        }
        EditKind::SwapTop | EditKind::SwapBottom => {
            check_range(c, &op.target, false)?;
            let (a, b) = unit_range(&op.target)?;
            let donor = codes(op)?;
            donor.check_ratio()?;
            if b > donor.top.len() {
                return Err(Error::IndexOutOfRange(format!(
                    "donor has {} units, range ends at {b}",
                    donor.top.len()
                )));
            }
            if op.kind == EditKind::SwapTop {
                sizes.check(Level::Top, &donor.top[a..b])?;
                out.top[a..b].copy_from_slice(&donor.top[a..b]);
            } else {
                sizes.check(Level::Bottom, &donor.bottom[2 * a..2 * b])?;
                out.bottom[2 * a..2 * b].copy_from_slice(&donor.bottom[2 * a..2 * b]);
            }
        }
    }
    debug_assert!(out.check_ratio().is_ok());
    Ok(out)
}

/// Applies `ops` in order, each against the result of the previous one.
pub fn apply_ops(c: &LatentCodes, ops: &[EditOp], sizes: CodebookSizes) -> Result<LatentCodes> {
    c.check_ratio()?;
    sizes.check(Level::Top, &c.top)?;
    sizes.check(Level::Bottom, &c.bottom)?;
    let mut cur = c.clone();
    for op in ops {
        cur = apply_op(&cur, op, sizes)?;
    }
    Ok(cur)
}

/// `source` with one level replaced wholesale by the donor's.
pub fn transfer_codes(source: &LatentCodes, donor: &LatentCodes, level: Level) -> Result<LatentCodes> {
    source.check_ratio()?;
    donor.check_ratio()?;
    if level_len(source, level) != level_len(donor, level) {
        return Err(Error::LengthMismatch(format!(
            "source has {} {} codes, donor has {}",
            level_len(source, level),
            level_name(level),
            level_len(donor, level)
        )));
    }
    let mut out = source.clone();
    match level {
        Level::Top => out.top = donor.top.clone(),
        Level::Bottom => out.bottom = donor.bottom.clone(),
    }
    Ok(out)
}
