//! Orderings that turn a 2D feature map into a 1D sequence.

use std::rc::Rc;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::ops;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ScanDir {
    /// Row-major.
    RowFwd,
    /// Row-major, reversed.
    RowBwd,
    /// Column-major.
    ColFwd,
    /// Column-major, reversed.
    ColBwd,
}

impl ScanDir {
    /// Directions used for `count` scans: 1, 2 (both row orders) or 4.
    pub fn set(count: usize) -> Result<Vec<ScanDir>> {
        use ScanDir::*;
        match count {
            1 => Ok(vec![RowFwd]),
            2 => Ok(vec![RowFwd, RowBwd]),
            4 => Ok(vec![RowFwd, RowBwd, ColFwd, ColBwd]),
            n => Err(Error::Config(format!("scan_dirs must be 1, 2 or 4, got {n}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScanDir::RowFwd => "row_fwd",
            ScanDir::RowBwd => "row_bwd",
            ScanDir::ColFwd => "col_fwd",
            ScanDir::ColBwd => "col_bwd",
        }
    }

    /// `order[i]` is the row-major pixel index visited at step `i`.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let col_major = || (0..w).flat_map(move |j| (0..h).map(move |i| i * w + j));
        match self {
            ScanDir::RowFwd => (0..h * w).collect(),
            ScanDir::RowBwd => (0..h * w).rev().collect(),
            ScanDir::ColFwd => col_major().collect(),
            ScanDir::ColBwd => {
                let mut v: Vec<usize> = col_major().collect();
                v.reverse();
                v
            }
        }
    }
}

/// Precomputed forward and inverse permutations for one direction.
#[derive(Clone, Debug)]
pub struct SeqOrder {
    pub dir: ScanDir,
    forward: Option<Rc<[usize]>>,
    inverse: Option<Rc<[usize]>>,
}

impl SeqOrder {
    pub fn new(dir: ScanDir, h: usize, w: usize) -> Self {
        if dir == ScanDir::RowFwd {
            return Self { dir, forward: None, inverse: None };
        }
        let order = dir.order(h, w);
        let mut inv = vec![0; order.len()];
        for (i, &p) in order.iter().enumerate() {
            inv[p] = i;
        }
        Self {
            dir,
            forward: Some(order.into()),
            inverse: Some(inv.into()),
        }
    }

    /// Row-major sequence `[B, L, C]` into this direction's order.
    pub fn apply<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        match &self.forward {
            Some(p) => ops::permute_seq(x, p.clone()),
            None => Ok(x),
        }
    }

    /// Back to row-major order.
    pub fn undo<'t>(&self, x: Var<'t>) -> Result<Var<'t>> {
        match &self.inverse {
            Some(p) => ops::permute_seq(x, p.clone()),
            None => Ok(x),
        }
    }
}

/// `[B, C, H, W] -> [B, H*W, C]` in the given direction.
pub fn image_to_sequence(f: Var<'_>, dir: ScanDir) -> Result<Var<'_>> {
    let s = f.shape();
    if s.len() != 4 {
        return Err(Error::invalid("image_to_sequence", format!("expected [B, C, H, W], got {s:?}")));
    }
    SeqOrder::new(dir, s[2], s[3]).apply(ops::nchw_to_seq(f)?)
}

/// Inverse of [`image_to_sequence`].
pub fn sequence_to_image(x: Var<'_>, dir: ScanDir, h: usize, w: usize) -> Result<Var<'_>> {
    ops::seq_to_nchw(SeqOrder::new(dir, h, w).undo(x)?, h, w)
}
