//! Bootstrap enlargement of a portfolio.
//!
//! Risks are resampled with replacement to exactly `factor` times the
//! original count. Draws are then swapped one at a time for risks of a
//! different size until the subrisk total is also exactly `factor` times the
//! original. Each copy of a risk carries all of its subrisks and all of its
//! event rows; copy `c` of risk `R` gets the id `R#c`.

use std::collections::BTreeMap;

use rand::Rng;

use super::{LossModel, LossTerm, Portfolio, Risk};
use crate::error::{Error, Result};
use crate::rng::{domain, substream};

/// Swap attempts allowed per drawn risk before the exact subrisk total is
/// declared unreachable.
const REPAIR_ATTEMPTS_PER_DRAW: usize = 1000;

pub fn bootstrap_scale(model: &LossModel, factor: u32, seed: u64) -> Result<LossModel> {
    if factor == 0 {
        return Err(Error::Config("bootstrap factor must be at least 1".into()));
    }
    let risks = model.portfolio().risks();
    if risks.is_empty() {
        return LossModel::new(Portfolio::default(), Vec::new(), Some(model.n_years()));
    }
    let n = risks.len();
    let target_risks = n * factor as usize;
    let target_sub = model.portfolio().subrisk_count() as i64 * factor as i64;

    let mut rng = substream(seed, domain::BOOTSTRAP, 0, 0);
    let mut draws: Vec<u32> = (0..target_risks).map(|_| rng.random_range(0..n as u32)).collect();

    let mut by_size: BTreeMap<u32, Vec<u32>> = BTreeMap::new();
    for (i, r) in risks.iter().enumerate() {
        by_size.entry(r.n_subrisks).or_default().push(i as u32);
    }
    let size = |i: u32| risks[i as usize].n_subrisks as i64;
    let mut diff = target_sub - draws.iter().map(|&i| size(i)).sum::<i64>();
    let mut attempts = 0;
    while diff != 0 {
        attempts += 1;
        if attempts > REPAIR_ATTEMPTS_PER_DRAW * target_risks {
            return Err(Error::Invalid(format!(
                "cannot reach exactly {target_sub} subrisks with {target_risks} resampled risks"
            )));
        }
        let slot = rng.random_range(0..target_risks);
        let current = size(draws[slot]);
        let want = current + diff;
        // the size closest to `want` that moves the total toward the target
        // without overshooting
        let pick = if diff > 0 {
            by_size
                .range(..=want.min(u32::MAX as i64) as u32)
                .next_back()
                .filter(|(&s, _)| s as i64 > current)
        } else {
            by_size
                .range(want.max(0) as u32..)
                .next()
                .filter(|(&s, _)| (s as i64) < current)
        };
        if let Some((&s, ids)) = pick {
            draws[slot] = ids[rng.random_range(0..ids.len())];
            diff -= s as i64 - current;
        }
    }

    let mut copies: Vec<Vec<u32>> = vec![Vec::new(); n];
    let mut new_risks = Vec::with_capacity(target_risks);
    for (new_idx, &orig) in draws.iter().enumerate() {
        let r = &risks[orig as usize];
        let copy = copies[orig as usize].len();
        copies[orig as usize].push(new_idx as u32);
        new_risks.push(Risk {
            risk_id: format!("{}#{copy}", r.risk_id),
            ..r.clone()
        });
    }
    let mut terms = Vec::new();
    for t in model.terms() {
        for &new_idx in &copies[t.risk as usize] {
            terms.push(LossTerm { risk: new_idx, ..*t });
        }
    }
    LossModel::new(Portfolio::new(new_risks)?, terms, Some(model.n_years()))
}
