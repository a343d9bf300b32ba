//! Bisection over ε that turns a fixed-budget attack into a distance estimate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::gradient::pgd;
use super::{AttackError, InnerAttack, Oracle, Result};
use crate::autodiff::LossKind;

/// Final bisection interval: the predicate failed at `lo` (or `lo = 0`) and
/// succeeded at `hi`. `hi` is +inf when it never succeeded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub lo: f64,
    pub hi: f64,
    /// True when the search stopped because the query budget ran out.
    pub exhausted: bool,
}

impl Bracket {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn found(&self) -> bool {
        self.hi.is_finite()
    }
}

/// Bisects `[0, eps_hi]` for the smallest ε at which `succeeds` holds, until
/// the bracket is narrower than `tolerance`. Budget exhaustion ends the search
/// early with the bracket reached so far.
pub fn bisect<F>(eps_hi: f64, tolerance: f64, mut succeeds: F) -> Result<Bracket>
where
    F: FnMut(f64) -> Result<bool>,
{
    if !(eps_hi > 0.0 && tolerance > 0.0) {
        return Err(AttackError::InvalidConfig("eps_hi and tolerance must be positive".into()));
    }
    let mut bracket = Bracket { lo: eps_hi, hi: f64::INFINITY, exhausted: false };
    match succeeds(eps_hi) {
        Ok(true) => {}
        Ok(false) => return Ok(bracket),
        Err(AttackError::BudgetExhausted) => {
            bracket.exhausted = true;
            return Ok(bracket);
        }
        Err(e) => return Err(e),
    }
    bracket = Bracket { lo: 0.0, hi: eps_hi, exhausted: false };
    while bracket.width() >= tolerance {
        let mid = 0.5 * (bracket.lo + bracket.hi);
        match succeeds(mid) {
            Ok(true) => bracket.hi = mid,
            Ok(false) => bracket.lo = mid,
            Err(AttackError::BudgetExhausted) => {
                bracket.exhausted = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(bracket)
}

/// ε search with a fixed-budget inner attack as the success predicate. The
/// tracker behind `oracle` captures the best candidate along the way, so the
/// recorded distance never depends on the predicate being monotone.
pub fn eps_binary_search(
    oracle: &mut impl Oracle,
    x: &[f64],
    y: usize,
    inner: &InnerAttack,
    eps_hi: f64,
    tolerance: f64,
    loss: LossKind,
) -> Result<Bracket> {
    // inner attacks never random-start, so the rng is never drawn from
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    bisect(eps_hi, tolerance, |eps| pgd(oracle, x, y, &inner.params(eps), loss, &mut rng).map(|r| r.success))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_predicate() {
        let b = bisect(1.0, 0.01, |eps| Ok(eps >= 0.37)).unwrap();
        assert!(b.lo < 0.37 && 0.37 <= b.hi);
        assert!(b.width() < 0.01);
        assert!(b.found() && !b.exhausted);
    }

    #[test]
    fn never_succeeds() {
        let mut calls = 0;
        let b = bisect(0.5, 0.01, |_| {
            calls += 1;
            Ok(false)
        })
        .unwrap();
        assert!(!b.found());
        assert_eq!(calls, 1);
    }

    #[test]
    fn exhaustion_returns_partial_bracket() {
        let mut calls = 0;
        let b = bisect(1.0, 1e-6, |eps| {
            calls += 1;
            if calls > 3 {
                Err(AttackError::BudgetExhausted)
            } else {
                Ok(eps >= 0.2)
            }
        })
        .unwrap();
        assert!(b.exhausted);
        assert_eq!((b.lo, b.hi), (0.0, 0.25));
    }

    #[test]
    fn other_errors_propagate() {
        let err = bisect(1.0, 0.1, |_| Err(AttackError::InvalidConfig("boom".into())));
        assert!(err.is_err());
    }
}
