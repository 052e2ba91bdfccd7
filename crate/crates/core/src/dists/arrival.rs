//! Arrival streams in the many-server scaling `λ_N = λ̄ N - β √N`.

use super::DistError;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

/// A deterministic rate function of time.
///
/// In config files a bare number means a constant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "RateRepr", into = "TaggedRate")]
pub enum RateFn {
    Const {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
    },
    Sinusoid {
        mean: f64,
        amplitude: f64,
        period: f64,
    },
    /// `values[i]` on `[knots[i], knots[i+1])`, the last value to ∞.
    Piecewise {
        knots: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum TaggedRate {
    Const { value: f64 },
    Affine { intercept: f64, slope: f64 },
    Sinusoid { mean: f64, amplitude: f64, period: f64 },
    Piecewise { knots: Vec<f64>, values: Vec<f64> },
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RateRepr {
    Number(f64),
    Tagged(TaggedRate),
}

impl From<RateRepr> for RateFn {
    fn from(r: RateRepr) -> Self {
        match r {
            RateRepr::Number(value) => RateFn::Const { value },
            RateRepr::Tagged(t) => match t {
                TaggedRate::Const { value } => RateFn::Const { value },
                TaggedRate::Affine { intercept, slope } => RateFn::Affine { intercept, slope },
                TaggedRate::Sinusoid { mean, amplitude, period } => RateFn::Sinusoid { mean, amplitude, period },
                TaggedRate::Piecewise { knots, values } => RateFn::Piecewise { knots, values },
            },
        }
    }
}

impl From<RateFn> for TaggedRate {
    fn from(r: RateFn) -> Self {
        match r {
            RateFn::Const { value } => TaggedRate::Const { value },
            RateFn::Affine { intercept, slope } => TaggedRate::Affine { intercept, slope },
            RateFn::Sinusoid { mean, amplitude, period } => TaggedRate::Sinusoid { mean, amplitude, period },
            RateFn::Piecewise { knots, values } => TaggedRate::Piecewise { knots, values },
        }
    }
}

impl Default for RateFn {
    fn default() -> Self {
        RateFn::Const { value: 0.0 }
    }
}

impl RateFn {
    pub fn constant(value: f64) -> Self {
        RateFn::Const { value }
    }

    pub fn eval(&self, t: f64) -> f64 {
        match self {
            RateFn::Const { value } => *value,
            RateFn::Affine { intercept, slope } => intercept + slope * t,
            RateFn::Sinusoid { mean, amplitude, period } => mean + amplitude * (TAU * t / period).sin(),
            RateFn::Piecewise { knots, values } => values[knots.partition_point(|&k| k <= t).saturating_sub(1)],
        }
    }

    /// Exact `∫_a^b`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match self {
            RateFn::Const { value } => value * (b - a),
            RateFn::Affine { intercept, slope } => intercept * (b - a) + 0.5 * slope * (b * b - a * a),
            RateFn::Sinusoid { mean, amplitude, period } => {
                mean * (b - a) - amplitude * period / TAU * ((TAU * b / period).cos() - (TAU * a / period).cos())
            }
            RateFn::Piecewise { knots, values } => {
                let mut total = 0.0;
                for i in 0..knots.len() {
                    let lo = knots[i].max(a);
                    let hi = knots.get(i + 1).copied().unwrap_or(f64::INFINITY).min(b);
                    if hi > lo {
                        total += values[i] * (hi - lo);
                    }
                }
                total
            }
        }
    }

    /// Upper bound on `[a, b]` (exact except for the sinusoid, which uses
    /// its global maximum).
    pub fn sup(&self, a: f64, b: f64) -> f64 {
        match self {
            RateFn::Const { value } => *value,
            RateFn::Affine { .. } => self.eval(a).max(self.eval(b)),
            RateFn::Sinusoid { mean, amplitude, .. } => mean + amplitude.abs(),
            RateFn::Piecewise { .. } => self.extremes(a, b).1,
        }
    }

    pub fn inf(&self, a: f64, b: f64) -> f64 {
        match self {
            RateFn::Const { value } => *value,
            RateFn::Affine { .. } => self.eval(a).min(self.eval(b)),
            RateFn::Sinusoid { mean, amplitude, .. } => mean - amplitude.abs(),
            RateFn::Piecewise { .. } => self.extremes(a, b).0,
        }
    }

    fn extremes(&self, a: f64, b: f64) -> (f64, f64) {
        let RateFn::Piecewise { knots, values } = self else { unreachable!() };
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..knots.len() {
            let start = knots[i];
            let end = knots.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if end > a && start <= b {
                lo = lo.min(values[i]);
                hi = hi.max(values[i]);
            }
        }
        (lo, hi)
    }

    fn check(&self, what: &str) -> Result<(), DistError> {
        if let RateFn::Piecewise { knots, values } = self {
            if knots.is_empty()
                || knots[0] != 0.0
                || knots.len() != values.len()
                || knots.windows(2).any(|w| w[1] <= w[0])
            {
                return Err(DistError::InvalidInput(format!(
                    "{what}: piecewise knots must start at 0, increase, and match values"
                )));
            }
        }
        if let RateFn::Sinusoid { period, .. } = self {
            if !(*period > 0.0) {
                return Err(DistError::InvalidInput(format!("{what}: period must be positive")));
            }
        }
        Ok(())
    }
}

/// The arrival process family and its scaling parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalSpec {
    /// Renewal arrivals; interarrival squared coefficient of variation
    /// `sigma2 / lambda_bar`.
    Renewal {
        lambda_bar: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default = "unit")]
        sigma2: f64,
    },
    InhomPoisson {
        lambda_bar: RateFn,
        #[serde(default)]
        beta: RateFn,
    },
}

fn unit() -> f64 {
    1.0
}

impl ArrivalSpec {
    /// Poisson arrivals at rate `λ̄ N - β √N`.
    pub fn poisson(lambda_bar: f64, beta: f64) -> Self {
        ArrivalSpec::Renewal { lambda_bar, beta, sigma2: lambda_bar }
    }

    /// No arrivals at all.
    pub fn none() -> Self {
        ArrivalSpec::InhomPoisson { lambda_bar: RateFn::constant(0.0), beta: RateFn::constant(0.0) }
    }

    pub fn lambda_bar(&self, t: f64) -> f64 {
        match self {
            ArrivalSpec::Renewal { lambda_bar, .. } => *lambda_bar,
            ArrivalSpec::InhomPoisson { lambda_bar, .. } => lambda_bar.eval(t),
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        match self {
            ArrivalSpec::Renewal { beta, .. } => *beta,
            ArrivalSpec::InhomPoisson { beta, .. } => beta.eval(t),
        }
    }

    /// Squared diffusion coefficient of the limiting arrival noise.
    pub fn sigma2(&self, t: f64) -> f64 {
        match self {
            ArrivalSpec::Renewal { sigma2, .. } => *sigma2,
            ArrivalSpec::InhomPoisson { lambda_bar, .. } => lambda_bar.eval(t),
        }
    }

    pub fn sigma2_integral(&self, a: f64, b: f64) -> f64 {
        match self {
            ArrivalSpec::Renewal { sigma2, .. } => sigma2 * (b - a),
            ArrivalSpec::InhomPoisson { lambda_bar, .. } => lambda_bar.integral(a, b),
        }
    }

    pub fn beta_integral(&self, a: f64, b: f64) -> f64 {
        match self {
            ArrivalSpec::Renewal { beta, .. } => beta * (b - a),
            ArrivalSpec::InhomPoisson { beta, .. } => beta.integral(a, b),
        }
    }

    /// Fluid cumulative arrivals `∫₀ᵗ λ̄`.
    pub fn fluid_cumulative(&self, t: f64) -> f64 {
        match self {
            ArrivalSpec::Renewal { lambda_bar, .. } => lambda_bar * t,
            ArrivalSpec::InhomPoisson { lambda_bar, .. } => lambda_bar.integral(0.0, t),
        }
    }

    /// Arrival rate of the `n`-server system at time `t`.
    pub fn rate_n(&self, n: usize, t: f64) -> f64 {
        let nf = n as f64;
        self.lambda_bar(t) * nf - self.beta(t) * nf.sqrt()
    }

    pub fn validate(&self, n: usize, horizon: f64) -> Result<(), DistError> {
        match self {
            ArrivalSpec::Renewal { lambda_bar, sigma2, .. } => {
                if !(*lambda_bar > 0.0) || !(*sigma2 > 0.0) {
                    return Err(DistError::InvalidInput("renewal arrivals need lambda_bar > 0 and sigma2 > 0".into()));
                }
                let r = self.rate_n(n, 0.0);
                if !(r > 0.0) {
                    return Err(DistError::InvalidInput(format!("arrival rate for N={n} is {r}, must be positive")));
                }
            }
            ArrivalSpec::InhomPoisson { lambda_bar, beta } => {
                lambda_bar.check("lambda_bar")?;
                beta.check("beta")?;
                let steps = 2000;
                for i in 0..=steps {
                    let t = horizon * i as f64 / steps as f64;
                    let r = self.rate_n(n, t);
                    if r < -1e-12 || lambda_bar.eval(t) < 0.0 {
                        return Err(DistError::InvalidInput(format!(
                            "arrival rate for N={n} is negative ({r}) at t={t}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// An arrival-time generator for the `n`-server system on `[0, horizon]`.
    pub fn stream(&self, n: usize, horizon: f64) -> ArrivalStream {
        match self {
            ArrivalSpec::Renewal { lambda_bar, sigma2, .. } => {
                let rate = self.rate_n(n, 0.0);
                let shape = lambda_bar / sigma2;
                let gamma = if (shape - 1.0).abs() < 1e-15 {
                    None
                } else {
                    Some(Gamma::new(shape, 1.0 / (shape * rate)).expect("validated"))
                };
                ArrivalStream::Renewal { rate, gamma }
            }
            ArrivalSpec::InhomPoisson { lambda_bar, beta } => {
                let nf = n as f64;
                let bound = (lambda_bar.sup(0.0, horizon) * nf - beta.inf(0.0, horizon) * nf.sqrt()).max(0.0);
                ArrivalStream::Thinned { spec: self.clone(), n, bound }
            }
        }
    }
}

/// Sequential arrival-time generator.
#[derive(Clone, Debug)]
pub enum ArrivalStream {
    Renewal { rate: f64, gamma: Option<Gamma<f64>> },
    Thinned { spec: ArrivalSpec, n: usize, bound: f64 },
}

impl ArrivalStream {
    /// The first arrival strictly after `t` (the previous arrival time), or
    /// `∞` if there is none.
    pub fn next_after<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        match self {
            ArrivalStream::Renewal { rate, gamma } => {
                let gap = match gamma {
                    None => {
                        let e: f64 = Exp1.sample(rng);
                        e / rate
                    }
                    Some(g) => g.sample(rng),
                };
                t + gap
            }
            ArrivalStream::Thinned { spec, n, bound } => {
                if *bound <= 0.0 {
                    return f64::INFINITY;
                }
                let mut s = t;
                loop {
                    let e: f64 = Exp1.sample(rng);
                    s += e / bound;
                    if !s.is_finite() {
                        return f64::INFINITY;
                    }
                    let u: f64 = rng.random();
                    if u * bound <= spec.rate_n(*n, s).max(0.0) {
                        return s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn parses_numbers_and_tagged() {
        let a: ArrivalSpec = serde_json::from_str(
            r#"{"kind":"inhom_poisson","lambda_bar":{"type":"affine","intercept":1,"slope":1},"beta":0.5}"#,
        )
        .unwrap();
        assert_eq!(a.lambda_bar(2.0), 3.0);
        assert_eq!(a.beta(7.0), 0.5);
        let r: ArrivalSpec = serde_json::from_str(r#"{"kind":"renewal","lambda_bar":1.0,"beta":1.0}"#).unwrap();
        assert_eq!(r.sigma2(0.0), 1.0);
        assert!(serde_json::from_str::<ArrivalSpec>(r#"{"kind":"renewal","lambda":1}"#).is_err());
    }

    #[test]
    fn integrals_exact() {
        let s = RateFn::Sinusoid { mean: 1.0, amplitude: 0.5, period: 2.0 };
        assert!((s.integral(0.0, 2.0) - 2.0).abs() < 1e-14);
        let p = RateFn::Piecewise { knots: vec![0.0, 1.0], values: vec![2.0, 3.0] };
        assert!((p.integral(0.5, 2.0) - 4.0).abs() < 1e-14);
        let a = RateFn::Affine { intercept: 1.0, slope: 1.0 };
        assert!((a.integral(0.0, 1.0) - 1.5).abs() < 1e-15);
    }

    #[test]
    fn validation_enforces_positive_rate() {
        assert!(ArrivalSpec::poisson(1.0, 1.0).validate(100, 1.0).is_ok());
        assert!(ArrivalSpec::poisson(1.0, 20.0).validate(100, 1.0).is_err());
        let neg = ArrivalSpec::InhomPoisson {
            lambda_bar: RateFn::Affine { intercept: 1.0, slope: -1.0 },
            beta: RateFn::default(),
        };
        assert!(neg.validate(10, 0.5).is_ok());
        assert!(neg.validate(10, 2.0).is_err());
    }

    #[test]
    fn renewal_interarrival_moments() {
        // sigma2 = 0.5 with lambda_bar = 1: SCV 0.5
        let spec = ArrivalSpec::Renewal { lambda_bar: 1.0, beta: 1.0, sigma2: 0.5 };
        let stream = spec.stream(100, 1.0);
        let rate = 90.0;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gaps: Vec<f64> = (0..200_000).map(|_| stream.next_after(0.0, &mut rng)).collect();
        let m = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let v = gaps.iter().map(|g| (g - m).powi(2)).sum::<f64>() / gaps.len() as f64;
        assert!((m * rate - 1.0).abs() < 1e-2);
        assert!((v * rate * rate - 0.5).abs() < 2e-2);
    }

    #[test]
    fn thinning_matches_integrated_rate() {
        let spec = ArrivalSpec::InhomPoisson {
            lambda_bar: RateFn::Affine { intercept: 1.0, slope: 1.0 },
            beta: RateFn::default(),
        };
        let stream = spec.stream(50, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let reps = 4000;
        let mut total = 0usize;
        for _ in 0..reps {
            let mut t = 0.0;
            loop {
                t = stream.next_after(t, &mut rng);
                if t > 1.0 {
                    break;
                }
                total += 1;
            }
        }
        let mean = total as f64 / reps as f64;
        assert!((mean - 75.0).abs() < 0.6, "{mean}");
    }
}
