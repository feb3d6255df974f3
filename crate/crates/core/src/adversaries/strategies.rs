//! Concrete Byzantine strategies for the synchronous protocols.

use rand::RngCore;

use crate::bits::BitString;
use crate::byz_download::{Alg1Params, Vote};
use crate::error::SimError;
use crate::fast_download::Claim;
use crate::metrics::Recipients;
use crate::model::Ratio;
use crate::sync_sim::{AdversaryView, ByzOutbox, ByzantineStrategy};

/// Every corrupt peer votes against the true bit in the first round of each
/// epoch, so every one of them lands on every honest blacklist.
#[derive(Clone, Debug)]
pub struct Contrarian {
    params: Alg1Params,
}

impl Contrarian {
    pub fn new(params: Alg1Params) -> Self {
        Contrarian { params }
    }
}

impl ByzantineStrategy<Vote> for Contrarian {
    fn act(
        &mut self,
        view: &AdversaryView<'_, Vote>,
        _: &mut dyn RngCore,
        out: &mut ByzOutbox<'_, Vote>,
    ) -> Result<(), SimError> {
        let (epoch, j) = self.params.position(view.round);
        if j != self.params.first_round {
            return Ok(());
        }
        let Some(bit) = view.input.bit(epoch) else {
            return Ok(());
        };
        for &p in view.corrupt {
            out.send(p, Recipients::All, Vote(!bit))?;
        }
        Ok(())
    }
}

/// The interval layout a flooding adversary needs to forge believable claims.
pub trait FloodTarget {
    /// Level of the claims honest peers broadcast in `round` and the count a
    /// string of that round needs to survive filtering.
    fn level_at(&self, round: u64) -> Option<(u32, Ratio)>;

    /// 0-based start and width of interval `id` (1-based) on `level`.
    fn interval(&self, level: u32, id: usize) -> Option<(usize, usize)>;
}

/// Corrupt peers all claim fabricated strings for one interval, split into
/// groups just large enough to pass the threshold.
pub struct IntervalFlood<T> {
    layout: T,
    target: usize,
    variants: usize,
}

impl<T: FloodTarget> IntervalFlood<T> {
    /// `variants == 0` picks ⌊corrupt / ⌈t⌉⌉ groups (at least one).
    pub fn new(layout: T, target: usize, variants: usize) -> Self {
        IntervalFlood {
            layout,
            target: target.max(1),
            variants,
        }
    }

    pub fn layout(&self) -> &T {
        &self.layout
    }
}

/// Variant 0 is the complement of the truth; variant v restores bit v−1.
pub fn forged_variant(truth: &BitString, v: usize) -> BitString {
    let mut s = truth.complement();
    if v > 0 && !truth.is_empty() {
        let i = (v - 1) % truth.len();
        s.set(i, truth.get(i));
    }
    s
}

impl<T: FloodTarget> ByzantineStrategy<Claim> for IntervalFlood<T> {
    fn act(
        &mut self,
        view: &AdversaryView<'_, Claim>,
        _: &mut dyn RngCore,
        out: &mut ByzOutbox<'_, Claim>,
    ) -> Result<(), SimError> {
        let Some((level, threshold)) = self.layout.level_at(view.round) else {
            return Ok(());
        };
        let Some((start, width)) = self.layout.interval(level, self.target) else {
            return Ok(());
        };
        if width == 0 {
            return Ok(());
        }
        let truth = view.input.interval(start, width);
        let need = threshold.ceil().to_integer().max(1) as usize;
        let groups = if self.variants > 0 {
            self.variants
        } else {
            (view.corrupt.len() / need).max(1)
        };
        let groups = if width == 1 { 1 } else { groups.min(width + 1) };
        for (i, &p) in view.corrupt.iter().enumerate() {
            let bits = forged_variant(&truth, i % groups);
            out.send(
                p,
                Recipients::All,
                Claim {
                    level,
                    id: self.target as u32,
                    bits,
                },
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variants_are_distinct_and_false() {
        let truth = BitString::parse("0110").unwrap();
        let all: Vec<BitString> = (0..5).map(|v| forged_variant(&truth, v)).collect();
        for (i, a) in all.iter().enumerate() {
            assert_ne!(*a, truth);
            for b in &all[i + 1..] {
                assert_ne!(a, b);
            }
        }
    }
}
