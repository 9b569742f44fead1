//! Binomial Subjective Logic opinions and the fusion operators used by the
//! consensus protocol.
//!
//! An [`Opinion`] is a tuple `(belief, disbelief, uncertainty, base_rate)` with
//! `belief + disbelief + uncertainty = 1`. Opinions map one-to-one onto
//! Beta evidence counts ([`EvidenceCounts`]) with a non-informative prior
//! weight of 2, which is what the fusion operators reduce to.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Tolerance for the additivity constraint `b + d + u = 1`.
pub const ADDITIVITY_TOLERANCE: f64 = 1e-9;

/// Tolerance used when comparing base rates of fused operands.
pub const BASE_RATE_TOLERANCE: f64 = 1e-9;

/// Weight of the non-informative prior for binomial opinions.
pub const PRIOR_WEIGHT: f64 = 2.0;

/// Opinions whose uncertainty is below this are treated as dogmatic.
const DOGMATIC_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SlError {
    #[error("opinion component {name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("belief + disbelief + uncertainty = {sum}, expected 1")]
    NotAdditive { sum: f64 },
    #[error("cannot fuse opinions with different base rates ({left} vs {right})")]
    BaseRateMismatch { left: f64, right: f64 },
    #[error("fusion needs at least one opinion")]
    EmptyInput,
    #[error("cannot parse opinion from {0:?}")]
    Parse(String),
}

/// A binomial opinion about a single proposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Opinion {
    belief: f64,
    disbelief: f64,
    uncertainty: f64,
    base_rate: f64,
}

impl Opinion {
    /// Builds a validated opinion.
    pub fn new(belief: f64, disbelief: f64, uncertainty: f64, base_rate: f64) -> Result<Self, SlError> {
        for (name, value) in [
            ("belief", belief),
            ("disbelief", disbelief),
            ("uncertainty", uncertainty),
            ("base_rate", base_rate),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SlError::OutOfRange { name, value });
            }
        }
        let sum = belief + disbelief + uncertainty;
        if (sum - 1.0).abs() > ADDITIVITY_TOLERANCE {
            return Err(SlError::NotAdditive { sum });
        }
        Ok(Self {
            belief,
            disbelief,
            uncertainty,
            base_rate,
        })
    }

    /// The vacuous opinion: no evidence at all, expectation equals the base rate.
    pub fn vacuous(base_rate: f64) -> Self {
        Self {
            belief: 0.0,
            disbelief: 0.0,
            uncertainty: 1.0,
            base_rate: base_rate.clamp(0.0, 1.0),
        }
    }

    /// Builds an opinion from belief and uncertainty, deriving the disbelief.
    /// Tiny negative rounding residue is clamped away.
    fn from_belief_uncertainty(belief: f64, uncertainty: f64, base_rate: f64) -> Self {
        let belief = belief.clamp(0.0, 1.0);
        let uncertainty = uncertainty.clamp(0.0, 1.0 - belief);
        let disbelief = (1.0 - belief - uncertainty).max(0.0);
        Self {
            belief,
            disbelief,
            uncertainty,
            base_rate,
        }
    }

    pub fn belief(&self) -> f64 {
        self.belief
    }

    pub fn disbelief(&self) -> f64 {
        self.disbelief
    }

    pub fn uncertainty(&self) -> f64 {
        self.uncertainty
    }

    pub fn base_rate(&self) -> f64 {
        self.base_rate
    }

    pub fn is_dogmatic(&self) -> bool {
        self.uncertainty < DOGMATIC_EPSILON
    }

    /// Probability expectation `b + a·u`.
    pub fn expectation(&self) -> f64 {
        self.belief + self.base_rate * self.uncertainty
    }

    /// Threshold decision on the probability expectation. The boundary is inclusive.
    pub fn decide(&self, threshold: f64) -> bool {
        self.expectation() >= threshold
    }

    /// Raises the uncertainty to at least `u_min`, rescaling belief and
    /// disbelief proportionally so the opinion stays additive.
    pub fn floor_uncertainty(&self, u_min: f64) -> Self {
        if self.uncertainty >= u_min {
            return *self;
        }
        let mass = self.belief + self.disbelief;
        let scale = (1.0 - u_min) / mass;
        Self {
            belief: self.belief * scale,
            disbelief: self.disbelief * scale,
            uncertainty: u_min,
            base_rate: self.base_rate,
        }
    }

    fn check_base_rate(&self, other: &Self) -> Result<(), SlError> {
        if (self.base_rate - other.base_rate).abs() > BASE_RATE_TOLERANCE {
            return Err(SlError::BaseRateMismatch {
                left: self.base_rate,
                right: other.base_rate,
            });
        }
        Ok(())
    }
}

impl fmt::Display for Opinion {
    /// `b,d,u,a` using the shortest representation that round-trips exactly.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{}",
            self.belief, self.disbelief, self.uncertainty, self.base_rate
        )
    }
}

impl FromStr for Opinion {
    type Err = SlError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',');
        let mut next = || -> Result<f64, SlError> {
            let field = parts.next().ok_or_else(|| SlError::Parse(s.to_owned()))?;
            field
                .trim()
                .parse::<f64>()
                .map_err(|_| SlError::Parse(s.to_owned()))
        };
        let (b, d, u, a) = (next()?, next()?, next()?, next()?);
        if parts.next().is_some() {
            return Err(SlError::Parse(s.to_owned()));
        }
        Opinion::new(b, d, u, a)
    }
}

/// Beta evidence representation of a binomial opinion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvidenceCounts {
    pub positive: f64,
    pub negative: f64,
}

impl EvidenceCounts {
    /// Maps a non-dogmatic opinion to evidence counts; `None` for dogmatic opinions.
    pub fn from_opinion(op: &Opinion) -> Option<Self> {
        if op.is_dogmatic() {
            return None;
        }
        Some(Self {
            positive: PRIOR_WEIGHT * op.belief / op.uncertainty,
            negative: PRIOR_WEIGHT * op.disbelief / op.uncertainty,
        })
    }

    pub fn to_opinion(&self, base_rate: f64) -> Opinion {
        let total = PRIOR_WEIGHT + self.positive + self.negative;
        Opinion::from_belief_uncertainty(self.positive / total, PRIOR_WEIGHT / total, base_rate)
    }
}

fn dogmatic_mean(ops: &[&Opinion], base_rate: f64) -> Opinion {
    let n = ops.len() as f64;
    let belief = ops.iter().map(|o| o.belief).sum::<f64>() / n;
    Opinion::from_belief_uncertainty(belief, 0.0, base_rate)
}

/// Cumulative fusion of two independent opinions.
pub fn fuse_cumulative(a: &Opinion, b: &Opinion) -> Result<Opinion, SlError> {
    a.check_base_rate(b)?;
    if a.is_dogmatic() && b.is_dogmatic() {
        return Ok(dogmatic_mean(&[a, b], a.base_rate));
    }
    let (ua, ub) = (a.uncertainty, b.uncertainty);
    let kappa = ua + ub - ua * ub;
    let belief = (a.belief * ub + b.belief * ua) / kappa;
    let uncertainty = ua * ub / kappa;
    Ok(Opinion::from_belief_uncertainty(belief, uncertainty, a.base_rate))
}

/// Averaging fusion of two dependent opinions.
pub fn fuse_averaging(a: &Opinion, b: &Opinion) -> Result<Opinion, SlError> {
    a.check_base_rate(b)?;
    if a.is_dogmatic() && b.is_dogmatic() {
        return Ok(dogmatic_mean(&[a, b], a.base_rate));
    }
    let (ua, ub) = (a.uncertainty, b.uncertainty);
    let kappa = ua + ub;
    let belief = (a.belief * ub + b.belief * ua) / kappa;
    let uncertainty = 2.0 * ua * ub / kappa;
    Ok(Opinion::from_belief_uncertainty(belief, uncertainty, a.base_rate))
}

/// N-ary averaging fusion.
///
/// Each opinion is weighted by `1/u`; the fused uncertainty is the harmonic
/// mean of the inputs' uncertainties. Dogmatic inputs dominate: if any are
/// present the result is the plain mean of the dogmatic ones.
pub fn fuse_averaging_multi<'a, I>(ops: I) -> Result<Opinion, SlError>
where
    I: IntoIterator<Item = &'a Opinion>,
{
    let ops: Vec<&Opinion> = ops.into_iter().collect();
    let first = *ops.first().ok_or(SlError::EmptyInput)?;
    for op in &ops[1..] {
        first.check_base_rate(op)?;
    }
    if ops.len() == 1 {
        return Ok(*first);
    }
    let dogmatic: Vec<&Opinion> = ops.iter().copied().filter(|o| o.is_dogmatic()).collect();
    if !dogmatic.is_empty() {
        return Ok(dogmatic_mean(&dogmatic, first.base_rate));
    }
    let mut weight_sum = 0.0;
    let mut belief_sum = 0.0;
    for op in &ops {
        let w = 1.0 / op.uncertainty;
        weight_sum += w;
        belief_sum += op.belief * w;
    }
    let belief = belief_sum / weight_sum;
    let uncertainty = ops.len() as f64 / weight_sum;
    Ok(Opinion::from_belief_uncertainty(belief, uncertainty, first.base_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn op(b: f64, d: f64, u: f64, a: f64) -> Opinion {
        Opinion::new(b, d, u, a).unwrap()
    }

    fn assert_close(x: &Opinion, y: &Opinion, tol: f64) {
        assert!(
            (x.belief() - y.belief()).abs() < tol
                && (x.disbelief() - y.disbelief()).abs() < tol
                && (x.uncertainty() - y.uncertainty()).abs() < tol
                && x.base_rate() == y.base_rate(),
            "{x} != {y}"
        );
    }

    #[test]
    fn expectation_examples() {
        assert_eq!(op(1.0, 0.0, 0.0, 0.5).expectation(), 1.0);
        assert_eq!(op(0.0, 0.0, 1.0, 0.3).expectation(), 0.3);
        assert!((op(0.4, 0.3, 0.3, 0.5).expectation() - 0.55).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_components() {
        assert!(matches!(
            Opinion::new(0.5, 0.6, 0.0, 0.5),
            Err(SlError::NotAdditive { .. })
        ));
        assert!(matches!(
            Opinion::new(-0.1, 0.6, 0.5, 0.5),
            Err(SlError::OutOfRange { name: "belief", .. })
        ));
        assert!(Opinion::new(0.5, 0.5, 0.0, 1.5).is_err());
    }

    #[test]
    fn cumulative_examples() {
        let a = 0.5;
        let x = op(0.5, 0.3, 0.2, a);
        assert_close(&fuse_cumulative(&x, &Opinion::vacuous(a)).unwrap(), &x, 1e-12);
        let fused = fuse_cumulative(&op(0.8, 0.0, 0.2, a), &op(0.0, 0.8, 0.2, a)).unwrap();
        assert_close(&fused, &op(4.0 / 9.0, 4.0 / 9.0, 1.0 / 9.0, a), 1e-12);
    }

    #[test]
    fn averaging_examples() {
        let a = 0.5;
        let x = op(0.6, 0.2, 0.2, a);
        assert_close(&fuse_averaging(&x, &x).unwrap(), &x, 1e-12);
        let fused = fuse_averaging(&op(0.8, 0.0, 0.2, a), &op(0.0, 0.8, 0.2, a)).unwrap();
        assert_close(&fused, &op(0.4, 0.4, 0.2, a), 1e-12);
        // by evidence averaging: (r, s) = (8, 0) and (0, 8) average to (4, 4)
        let oracle = EvidenceCounts {
            positive: 4.0,
            negative: 4.0,
        }
        .to_opinion(a);
        assert_close(&fused, &oracle, 1e-12);

        let y = op(0.5, 0.3, 0.2, a);
        let v = Opinion::vacuous(a);
        let e = fuse_averaging(&y, &v).unwrap().expectation();
        assert!(e > v.expectation().min(y.expectation()) && e < v.expectation().max(y.expectation()));
    }

    #[test]
    fn dogmatic_pair_fuses_to_mean() {
        let a = op(1.0, 0.0, 0.0, 0.5);
        let b = op(0.0, 1.0, 0.0, 0.5);
        for fused in [fuse_cumulative(&a, &b).unwrap(), fuse_averaging(&a, &b).unwrap()] {
            assert_close(&fused, &op(0.5, 0.5, 0.0, 0.5), 1e-12);
        }
        let fused = fuse_averaging_multi([&a, &b, &op(0.2, 0.2, 0.6, 0.5)]).unwrap();
        assert_close(&fused, &op(0.5, 0.5, 0.0, 0.5), 1e-12);
    }

    #[test]
    fn base_rate_mismatch_is_an_error() {
        let err = fuse_cumulative(&Opinion::vacuous(0.2), &Opinion::vacuous(0.7)).unwrap_err();
        assert!(matches!(err, SlError::BaseRateMismatch { .. }));
        assert!(fuse_averaging_multi([&Opinion::vacuous(0.2), &Opinion::vacuous(0.7)]).is_err());
    }

    #[test]
    fn multi_averaging_examples() {
        let x = op(0.3, 0.5, 0.2, 0.4);
        assert_eq!(fuse_averaging_multi([&x]).unwrap(), x);
        assert_close(&fuse_averaging_multi([&x, &x, &x]).unwrap(), &x, 1e-12);
        assert_eq!(
            fuse_averaging_multi(std::iter::empty::<&Opinion>()),
            Err(SlError::EmptyInput)
        );
    }

    #[test]
    fn floor_uncertainty_examples() {
        let floored = op(0.9, 0.1, 0.0, 0.5).floor_uncertainty(0.1);
        assert_close(&floored, &op(0.81, 0.09, 0.1, 0.5), 1e-12);
        assert!((floored.belief() / floored.disbelief() - 9.0).abs() < 1e-9);
        let x = op(0.5, 0.3, 0.2, 0.5);
        assert_eq!(x.floor_uncertainty(0.1), x);
        let y = op(1.0, 0.0, 0.0, 0.5);
        assert_eq!(y.floor_uncertainty(0.0), y);
    }

    #[test]
    fn decide_examples() {
        assert!(op(1.0, 0.0, 0.0, 0.5).decide(0.5));
        assert!(!op(0.0, 1.0, 0.0, 0.5).decide(0.5));
        let x = op(0.4, 0.3, 0.3, 0.5);
        assert!(!x.decide(0.56));
        assert!(x.decide(0.55));
    }

    #[test]
    fn text_form_round_trips() {
        let x = op(0.1, 0.2, 0.7, 1.0 / 3.0);
        assert_eq!(x.to_string().parse::<Opinion>().unwrap(), x);
        assert!("0.1,0.2".parse::<Opinion>().is_err());
        assert!("0.1,0.2,0.7,0.5,9".parse::<Opinion>().is_err());
        assert!("a,b,c,d".parse::<Opinion>().is_err());
    }

    fn arb_opinion(base_rate: f64) -> impl Strategy<Value = Opinion> {
        (0.0f64..1.0, 0.0f64..1.0, 0.001f64..1.0).prop_map(move |(x, y, u)| {
            let rest = 1.0 - u;
            let b = rest * x;
            let d = (rest - b) * y;
            let u = 1.0 - b - d;
            Opinion::new(b, d, u, base_rate).unwrap()
        })
    }

    fn additive(o: &Opinion) -> bool {
        (o.belief() + o.disbelief() + o.uncertainty() - 1.0).abs() < ADDITIVITY_TOLERANCE
    }

    proptest! {
        #[test]
        fn operations_preserve_additivity(x in arb_opinion(0.5), y in arb_opinion(0.5), u_min in 0.0f64..1.0) {
            for o in [
                fuse_cumulative(&x, &y).unwrap(),
                fuse_averaging(&x, &y).unwrap(),
                fuse_averaging_multi([&x, &y]).unwrap(),
                x.floor_uncertainty(u_min),
            ] {
                prop_assert!(additive(&o));
                prop_assert!((0.0..=1.0).contains(&o.expectation()));
            }
        }

        #[test]
        fn evidence_round_trip(x in arb_opinion(0.3)) {
            let back = EvidenceCounts::from_opinion(&x).unwrap().to_opinion(0.3);
            prop_assert!((back.belief() - x.belief()).abs() < 1e-9);
            prop_assert!((back.disbelief() - x.disbelief()).abs() < 1e-9);
            prop_assert!((back.uncertainty() - x.uncertainty()).abs() < 1e-9);
        }

        #[test]
        fn floor_keeps_belief_ordering(x in arb_opinion(0.5), u_min in 0.0f64..1.0) {
            let before = x.expectation() - 0.5;
            let after = x.floor_uncertainty(u_min).expectation() - 0.5;
            prop_assert!(before.signum() == after.signum() || before.abs() < 1e-12 || after.abs() < 1e-12);
        }

        #[test]
        fn decide_is_monotone_in_threshold(x in arb_opinion(0.5), t1 in 0.001f64..0.999, t2 in 0.001f64..0.999) {
            let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
            prop_assert!(!x.decide(hi) || x.decide(lo));
        }

        #[test]
        fn cumulative_commutes_with_vacuous_neutral(x in arb_opinion(0.5), y in arb_opinion(0.5)) {
            prop_assert_eq!(fuse_cumulative(&x, &y).unwrap(), fuse_cumulative(&y, &x).unwrap());
            let n = fuse_cumulative(&x, &Opinion::vacuous(0.5)).unwrap();
            prop_assert!((n.belief() - x.belief()).abs() < 1e-12 && (n.uncertainty() - x.uncertainty()).abs() < 1e-12);
        }
    }
}
