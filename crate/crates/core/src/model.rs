//! The economy: channels, energy users (EUs), the energy transmitter's (ET)
//! cost, and the feasible power set
//! `P = { p : 0 <= p_n <= peak_n, sum_n p_n <= pmax }`.
//!
//! Agent indices follow the mechanism convention: agent 0 is the ET and
//! agents `1..=K` are the EUs, so EU `k` lives at `eus[k - 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{check_len, contract, Error, Result};

/// Speed of light used by the Friis helper (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Numerator of the carrier-frequency factor `phi_n = (2.39e7 / CF_n)^2`.
pub const PATH_LOSS_FREQ_REF: f64 = 2.39e7;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    peak: Vec<f64>,
    pmax: f64,
}

impl ChannelSet {
    pub fn new(peak: Vec<f64>, pmax: f64) -> Result<Self> {
        if peak.is_empty() {
            return Err(contract("channel set needs at least one channel"));
        }
        if let Some(bad) = peak.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(contract(format!("peak power must be positive, got {bad}")));
        }
        if !(pmax.is_finite() && pmax > 0.0) {
            return Err(contract(format!("pmax must be positive, got {pmax}")));
        }
        Ok(Self { peak, pmax })
    }

    /// Every channel capped only by the total budget.
    pub fn uniform(n: usize, pmax: f64) -> Result<Self> {
        Self::new(vec![pmax; n], pmax)
    }

    pub fn len(&self) -> usize {
        self.peak.len()
    }

    pub fn is_empty(&self) -> bool {
        self.peak.is_empty()
    }

    pub fn peak(&self) -> &[f64] {
        &self.peak
    }

    pub fn pmax(&self) -> f64 {
        self.pmax
    }

    /// Membership in `P` with an absolute slack.
    pub fn contains(&self, p: &[f64], slack: f64) -> bool {
        p.len() == self.len()
            && p
                .iter()
                .zip(&self.peak)
                .all(|(&x, &cap)| x >= -slack && x <= cap + slack)
            && p.iter().sum::<f64>() <= self.pmax + slack
    }
}

/// An EU's valuation of received power.
#[derive(Debug, Clone, PartialEq)]
pub enum UtilitySpec {
    /// `(E / B) * q^(1 - alpha) / (1 - alpha) * T`.
    AlphaFair {
        energy_rate: f64,
        battery: f64,
        alpha: f64,
        horizon: f64,
    },
    /// Throughput of a wireless-powered transmitter:
    /// `T2 * B * ln(1 + g * q * T1 / (noise * T2))`.
    LogThroughput {
        wpt_time: f64,
        tx_time: f64,
        bandwidth: f64,
        gain: f64,
        noise: f64,
    },
    /// Identically zero; used for virtual agents.
    Zero,
}

impl UtilitySpec {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(contract(format!("utility parameter {name} must be positive, got {v}")))
            }
        };
        match *self {
            UtilitySpec::AlphaFair {
                energy_rate,
                battery,
                alpha,
                horizon,
            } => {
                positive("energy_rate", energy_rate)?;
                positive("battery", battery)?;
                positive("horizon", horizon)?;
                if !(alpha > 0.0 && alpha < 1.0) {
                    return Err(contract(format!("alpha must lie in (0, 1), got {alpha}")));
                }
                Ok(())
            }
            UtilitySpec::LogThroughput {
                wpt_time,
                tx_time,
                bandwidth,
                gain,
                noise,
            } => {
                positive("wpt_time", wpt_time)?;
                positive("tx_time", tx_time)?;
                positive("bandwidth", bandwidth)?;
                positive("gain", gain)?;
                positive("noise", noise)
            }
            UtilitySpec::Zero => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, UtilitySpec::Zero)
    }

    /// `U(q)`. `U(0) = 0` for every variant.
    pub fn value(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return Err(contract(format!("received power must be non-negative, got {q}")));
        }
        Ok(match *self {
            UtilitySpec::AlphaFair {
                energy_rate,
                battery,
                alpha,
                horizon,
            } => energy_rate / battery * q.powf(1.0 - alpha) / (1.0 - alpha) * horizon,
            UtilitySpec::LogThroughput {
                wpt_time,
                tx_time,
                bandwidth,
                gain,
                noise,
            } => tx_time * bandwidth * (gain * q * wpt_time / (noise * tx_time)).ln_1p(),
            UtilitySpec::Zero => 0.0,
        })
    }

    /// `U'(q)`; alpha-fair at `q = 0` is reported as [`Error::UnboundedDerivative`].
    pub fn derivative(&self, q: f64) -> Result<f64> {
        if !(q >= 0.0) {
            return Err(contract(format!("received power must be non-negative, got {q}")));
        }
        match *self {
            UtilitySpec::AlphaFair {
                energy_rate,
                battery,
                alpha,
                horizon,
            } => {
                if q == 0.0 {
                    Err(Error::UnboundedDerivative)
                } else {
                    Ok(energy_rate / battery * horizon * q.powf(-alpha))
                }
            }
            UtilitySpec::LogThroughput {
                wpt_time,
                tx_time,
                bandwidth,
                gain,
                noise,
            } => {
                let c = gain * wpt_time / (noise * tx_time);
                Ok(tx_time * bandwidth * c / (1.0 + c * q))
            }
            UtilitySpec::Zero => Ok(0.0),
        }
    }

    /// `U''(q)` for `q > 0`.
    pub fn second_derivative(&self, q: f64) -> f64 {
        match *self {
            UtilitySpec::AlphaFair {
                energy_rate,
                battery,
                alpha,
                horizon,
            } => -alpha * energy_rate / battery * horizon * q.powf(-alpha - 1.0),
            UtilitySpec::LogThroughput {
                wpt_time,
                tx_time,
                bandwidth,
                gain,
                noise,
            } => {
                let c = gain * wpt_time / (noise * tx_time);
                -tx_time * bandwidth * c * c / ((1.0 + c * q) * (1.0 + c * q))
            }
            UtilitySpec::Zero => 0.0,
        }
    }

    /// Derivative with `q` floored at `q_floor`, for iterative solvers that
    /// may step onto the boundary where an alpha-fair derivative blows up.
    pub(crate) fn derivative_floored(&self, q: f64, q_floor: f64) -> f64 {
        self.derivative(q.max(q_floor)).unwrap_or(f64::MAX)
    }

    /// Same utility measured in a value unit `value_unit` times larger.
    fn scaled_value(&self, value_unit: f64) -> Self {
        match *self {
            UtilitySpec::AlphaFair {
                energy_rate,
                battery,
                alpha,
                horizon,
            } => UtilitySpec::AlphaFair {
                energy_rate: energy_rate / value_unit,
                battery,
                alpha,
                horizon,
            },
            UtilitySpec::LogThroughput {
                wpt_time,
                tx_time,
                bandwidth,
                gain,
                noise,
            } => UtilitySpec::LogThroughput {
                wpt_time,
                tx_time,
                bandwidth: bandwidth / value_unit,
                gain,
                noise,
            },
            UtilitySpec::Zero => UtilitySpec::Zero,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EuProfile {
    pub gains: Vec<f64>,
    /// Ambient received power `I_k`; zero throughout.
    pub ambient: f64,
    pub utility: UtilitySpec,
}

impl EuProfile {
    pub fn new(gains: Vec<f64>, utility: UtilitySpec) -> Self {
        Self {
            gains,
            ambient: 0.0,
            utility,
        }
    }

    /// A virtual agent: zero utility, zero gains.
    pub fn virtual_agent(n: usize) -> Self {
        Self::new(vec![0.0; n], UtilitySpec::Zero)
    }

    fn validate(&self, n: usize) -> Result<()> {
        check_len(n, self.gains.len())?;
        if let Some(bad) = self.gains.iter().find(|h| !(h.is_finite() && **h >= 0.0)) {
            return Err(contract(format!("channel gains must be non-negative, got {bad}")));
        }
        if self.ambient != 0.0 {
            return Err(contract("ambient power must be zero"));
        }
        self.utility.validate()?;
        if !self.utility.is_zero() && self.gains.iter().all(|&h| h == 0.0) {
            return Err(contract("EU has no channel with positive gain"));
        }
        Ok(())
    }

    pub fn received_power(&self, p: &[f64]) -> f64 {
        self.gains.iter().zip(p).map(|(h, x)| h * x).sum::<f64>() + self.ambient
    }
}

/// `C(p) = e * T * (sum_n p_n)^zeta`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    pub coeff: f64,
    pub exponent: f64,
    pub horizon: f64,
}

impl CostSpec {
    pub fn new(coeff: f64, exponent: f64, horizon: f64) -> Result<Self> {
        let c = Self {
            coeff,
            exponent,
            horizon,
        };
        c.validate()?;
        Ok(c)
    }

    fn validate(&self) -> Result<()> {
        if !(self.coeff.is_finite() && self.coeff > 0.0) {
            return Err(contract(format!("cost coefficient must be positive, got {}", self.coeff)));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(contract(format!("cost horizon must be positive, got {}", self.horizon)));
        }
        if !(self.exponent.is_finite() && self.exponent >= 1.0) {
            return Err(contract(format!("cost exponent must be >= 1, got {}", self.exponent)));
        }
        Ok(())
    }

    pub fn strictly_convex(&self) -> bool {
        self.exponent > 1.0
    }

    /// Cost as a function of the total power.
    pub fn of_total(&self, total: f64) -> f64 {
        if total <= 0.0 {
            return 0.0;
        }
        self.coeff * self.horizon * total.powf(self.exponent)
    }

    /// `dC/dS` at total power `S`.
    pub fn marginal(&self, total: f64) -> f64 {
        let total = total.max(0.0);
        if self.exponent == 1.0 {
            self.coeff * self.horizon
        } else {
            self.coeff * self.horizon * self.exponent * total.powf(self.exponent - 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    channels: ChannelSet,
    eus: Vec<EuProfile>,
    cost: CostSpec,
    pup: Vec<f64>,
}

impl Scenario {
    pub fn new(channels: ChannelSet, eus: Vec<EuProfile>, cost: CostSpec, pup: Vec<f64>) -> Result<Self> {
        if eus.is_empty() {
            return Err(contract("scenario needs at least one EU"));
        }
        let n = channels.len();
        for eu in &eus {
            eu.validate(n)?;
        }
        cost.validate()?;
        check_len(eus.len(), pup.len())?;
        if let Some(bad) = pup.iter().find(|v| !(v.is_finite() && **v >= channels.pmax())) {
            return Err(contract(format!(
                "EU power-proposal bound {bad} is below pmax {}",
                channels.pmax()
            )));
        }
        Ok(Self {
            channels,
            eus,
            cost,
            pup,
        })
    }

    /// Scenario with every EU bound set to `factor * pmax`.
    pub fn with_pup_factor(channels: ChannelSet, eus: Vec<EuProfile>, cost: CostSpec, factor: f64) -> Result<Self> {
        let pup = vec![factor * channels.pmax(); eus.len()];
        Self::new(channels, eus, cost, pup)
    }

    /// Number of EUs, `K`.
    pub fn k(&self) -> usize {
        self.eus.len()
    }

    /// Number of channels, `N`.
    pub fn n(&self) -> usize {
        self.channels.len()
    }

    /// Number of mechanism participants, `K + 1`.
    pub fn agents(&self) -> usize {
        self.eus.len() + 1
    }

    pub fn channels(&self) -> &ChannelSet {
        &self.channels
    }

    pub fn eus(&self) -> &[EuProfile] {
        &self.eus
    }

    /// EU by agent index (`1..=K`).
    pub fn eu(&self, agent: usize) -> &EuProfile {
        &self.eus[agent - 1]
    }

    pub fn cost(&self) -> &CostSpec {
        &self.cost
    }

    pub fn pup(&self) -> &[f64] {
        &self.pup
    }

    pub fn pmax(&self) -> f64 {
        self.channels.pmax
    }

    /// Same economy in units where power is measured in multiples of
    /// `power_unit` and value in multiples of `value_unit`. Payoff-maximizing
    /// decisions map back by `p = power_unit * p'`.
    pub fn rescaled(&self, power_unit: f64, value_unit: f64) -> Scenario {
        let channels = ChannelSet {
            peak: self.channels.peak.iter().map(|v| v / power_unit).collect(),
            pmax: self.channels.pmax / power_unit,
        };
        let eus = self
            .eus
            .iter()
            .map(|eu| EuProfile {
                gains: eu.gains.iter().map(|h| h * power_unit).collect(),
                ambient: eu.ambient,
                utility: eu.utility.scaled_value(value_unit),
            })
            .collect();
        let cost = CostSpec {
            coeff: self.cost.coeff * power_unit.powf(self.cost.exponent) / value_unit,
            ..self.cost
        };
        Scenario {
            channels,
            eus,
            cost,
            pup: self.pup.iter().map(|v| v / power_unit).collect(),
        }
    }
}

/// `q_k(p) = sum_n h_{k,n} p_n + I_k`.
pub fn received_power(p: &[f64], eu: &EuProfile) -> Result<f64> {
    check_len(eu.gains.len(), p.len())?;
    if let Some(bad) = p.iter().find(|x| !(**x >= 0.0)) {
        return Err(contract(format!("power must be non-negative, got {bad}")));
    }
    Ok(eu.received_power(p))
}

pub fn utility(u: &UtilitySpec, q: f64) -> Result<f64> {
    u.value(q)
}

/// `grad_p U_k(q_k(p))`, component `n` equal to `h_{k,n} U_k'(q_k(p))`.
pub fn marginal_utility(eu: &EuProfile, p: &[f64]) -> Result<Vec<f64>> {
    let q = received_power(p, eu)?;
    let d = eu.utility.derivative(q)?;
    Ok(eu.gains.iter().map(|h| h * d).collect())
}

pub fn cost(c: &CostSpec, p: &[f64]) -> f64 {
    c.of_total(p.iter().sum())
}

/// Every component equals `C'(sum p)`.
pub fn cost_gradient(c: &CostSpec, p: &[f64]) -> Vec<f64> {
    vec![c.marginal(p.iter().sum()); p.len()]
}

/// Euclidean projection onto `P`: clip to the boxes, then if the sum cap is
/// violated shift every coordinate down by the level `theta` solving
/// `sum_n clip(p_n - theta, 0, peak_n) = pmax`.
pub fn project_feasible(p: &[f64], ch: &ChannelSet) -> Vec<f64> {
    let clipped: Vec<f64> = p
        .iter()
        .zip(&ch.peak)
        .map(|(&x, &cap)| x.clamp(0.0, cap))
        .collect();
    if clipped.iter().sum::<f64>() <= ch.pmax {
        return clipped;
    }
    let shifted_sum = |theta: f64| -> f64 {
        p.iter()
            .zip(&ch.peak)
            .map(|(&x, &cap)| (x - theta).clamp(0.0, cap))
            .sum()
    };
    let mut lo = 0.0;
    let mut hi = p.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if shifted_sum(mid) > ch.pmax {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    p.iter()
        .zip(&ch.peak)
        .map(|(&x, &cap)| (x - hi).clamp(0.0, cap))
        .collect()
}

/// Received power in dBm by the Friis equation.
pub fn friis_received_dbm(pt_dbm: f64, gt_dbi: f64, gr_dbi: f64, d_m: f64, f0_hz: f64) -> Result<f64> {
    if !(d_m > 0.0) || !(f0_hz > 0.0) {
        return Err(contract(format!(
            "distance and frequency must be positive, got d={d_m}, f0={f0_hz}"
        )));
    }
    let ratio = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * d_m * f0_hz);
    Ok(pt_dbm + gt_dbi + gr_dbi + 20.0 * ratio.log10())
}

/// `phi_n = (2.39e7 / CF_n)^2`.
pub fn frequency_factor(carrier_hz: f64) -> f64 {
    let r = PATH_LOSS_FREQ_REF / carrier_hz;
    r * r
}

/// Long-term path-loss gain `a * phi * d^-3`.
pub fn path_loss_gain(available: bool, carrier_hz: f64, distance_m: f64) -> f64 {
    if available {
        frequency_factor(carrier_hz) * distance_m.powi(-3)
    } else {
        0.0
    }
}

/// Parameters of the random scenario generator.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioGenSpec {
    pub k: usize,
    pub prob: f64,
    pub radius: f64,
    /// One carrier frequency per channel (Hz); `N = carriers.len()`.
    pub carriers: Vec<f64>,
    pub pmax: f64,
    /// Per-channel peak power; `None` caps each channel at `pmax`.
    pub peak: Option<Vec<f64>>,
    pub cost: CostSpec,
    pub battery: (f64, f64),
    pub energy_rate: (f64, f64),
    pub alpha: f64,
    pub horizon: f64,
    pub pup_factor: f64,
    pub seed: u64,
}

impl Default for ScenarioGenSpec {
    fn default() -> Self {
        Self {
            k: 10,
            prob: 0.8,
            radius: 5.0,
            carriers: vec![865e6, 890e6, 915e6, 950e6],
            pmax: 4.0,
            peak: None,
            cost: CostSpec {
                coeff: 0.5,
                exponent: 1.1,
                horizon: 1000.0,
            },
            battery: (20.0, 50.0),
            energy_rate: (0.1, 0.3),
            alpha: 0.5,
            horizon: 1000.0,
            pup_factor: 10.0,
            seed: 0,
        }
    }
}

/// Retries per EU before an all-zero availability row is declared unsatisfiable.
pub const AVAILABILITY_RETRIES: usize = 100;

/// RNG streams, one per scenario field. Each stream is a ChaCha8 generator
/// seeded with the generator seed and switched to the listed stream id; values
/// are drawn in EU order (and channel order inside a row).
pub mod streams {
    pub const BATTERY: u64 = 1;
    pub const ENERGY_RATE: u64 = 2;
    pub const DISTANCE: u64 = 3;
    pub const AVAILABILITY: u64 = 4;
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Uniform draw on `[lo, hi)` from 53 random mantissa bits.
pub(crate) fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
    lo + (hi - lo) * u
}

impl ScenarioGenSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(contract(msg));
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.carriers.is_empty() || self.carriers.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return bad("carrier frequencies must be positive and non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.prob) {
            return bad(format!("prob must lie in [0, 1], got {}", self.prob));
        }
        if !(self.radius >= 1.0) {
            return bad(format!("radius must be >= 1, got {}", self.radius));
        }
        for (name, (lo, hi)) in [("battery", self.battery), ("energy_rate", self.energy_rate)] {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad(format!("{name} range [{lo}, {hi}] is invalid"));
            }
        }
        if !(self.pup_factor >= 1.0) {
            return bad(format!("pup factor must be >= 1, got {}", self.pup_factor));
        }
        if let Some(peak) = &self.peak {
            check_len(self.carriers.len(), peak.len())?;
        }
        Ok(())
    }
}

/// Draw a scenario: `B_k ~ U[battery]`, `E_k ~ U[energy_rate]`,
/// `d_k ~ U[1, r]`, `a_{k,n} ~ Bernoulli(prob)`, `h_{k,n} = a phi_n d_k^-3`.
pub fn sample_scenario(spec: &ScenarioGenSpec) -> Result<Scenario> {
    spec.validate()?;
    let n = spec.carriers.len();
    let mut battery = stream(spec.seed, streams::BATTERY);
    let mut energy = stream(spec.seed, streams::ENERGY_RATE);
    let mut distance = stream(spec.seed, streams::DISTANCE);
    let mut avail = stream(spec.seed, streams::AVAILABILITY);

    let mut eus = Vec::with_capacity(spec.k);
    for k in 0..spec.k {
        let b = uniform(&mut battery, spec.battery.0, spec.battery.1);
        let e = uniform(&mut energy, spec.energy_rate.0, spec.energy_rate.1);
        let d = uniform(&mut distance, 1.0, spec.radius);
        let mut row = vec![false; n];
        let mut found = false;
        for _ in 0..AVAILABILITY_RETRIES {
            for a in row.iter_mut() {
                *a = uniform(&mut avail, 0.0, 1.0) < spec.prob;
            }
            if row.iter().any(|&a| a) {
                found = true;
                break;
            }
        }
        if !found {
            return Err(Error::UnsatisfiableScenario(format!(
                "EU {} has no available channel after {AVAILABILITY_RETRIES} draws",
                k + 1
            )));
        }
        let gains = row
            .iter()
            .zip(&spec.carriers)
            .map(|(&a, &cf)| path_loss_gain(a, cf, d))
            .collect();
        eus.push(EuProfile::new(
            gains,
            UtilitySpec::AlphaFair {
                energy_rate: e,
                battery: b,
                alpha: spec.alpha,
                horizon: spec.horizon,
            },
        ));
    }
    let peak = spec.peak.clone().unwrap_or_else(|| vec![spec.pmax; n]);
    let channels = ChannelSet::new(peak, spec.pmax)?;
    Scenario::with_pup_factor(channels, eus, spec.cost, spec.pup_factor)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log_utility() -> UtilitySpec {
        UtilitySpec::LogThroughput {
            wpt_time: 1.0,
            tx_time: 1.0,
            bandwidth: 1.0,
            gain: 1.0,
            noise: 1.0,
        }
    }

    fn alpha_fair(scale: f64, alpha: f64) -> UtilitySpec {
        UtilitySpec::AlphaFair {
            energy_rate: scale,
            battery: 1.0,
            alpha,
            horizon: 1.0,
        }
    }

    #[test]
    fn received_power_examples() {
        let eu = EuProfile::new(vec![0.5, 0.25], log_utility());
        assert_eq!(received_power(&[0.0, 0.0], &eu).unwrap(), 0.0);
        assert_eq!(received_power(&[1.0, 2.0], &eu).unwrap(), 1.0);
        assert!(matches!(
            received_power(&[1.0], &eu),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(received_power(&[-1.0, 0.0], &eu).is_err());
    }

    #[test]
    fn path_loss_gain_at_five_meters() {
        // (2.39e7 / 915e6)^2 / 125, evaluated with exact rational arithmetic.
        let h = path_loss_gain(true, 915e6, 5.0);
        let eu = EuProfile::new(vec![h], log_utility());
        let q = received_power(&[1.0], &eu).unwrap();
        assert!((q - 5.458_126_549_016_095e-6).abs() < 1e-15);
        assert_eq!(path_loss_gain(false, 915e6, 5.0), 0.0);
    }

    #[test]
    fn utility_examples() {
        let u = UtilitySpec::AlphaFair {
            energy_rate: 0.2,
            battery: 40.0,
            alpha: 0.5,
            horizon: 1000.0,
        };
        assert!((utility(&u, 4.0).unwrap() - 20.0).abs() < 1e-12);
        assert_eq!(utility(&u, 0.0).unwrap(), 0.0);
        assert_eq!(utility(&log_utility(), 0.0).unwrap(), 0.0);
        assert_eq!(utility(&UtilitySpec::Zero, 3.0).unwrap(), 0.0);
        assert!((utility(&log_utility(), 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(utility(&u, -1.0).is_err());
    }

    #[test]
    fn marginal_utility_examples() {
        let eu = EuProfile::new(vec![0.0, 1.0], log_utility());
        for p in [[0.0, 0.0], [3.0, 1.0], [0.5, 7.0]] {
            assert_eq!(marginal_utility(&eu, &p).unwrap()[0], 0.0);
        }
        // d/dq of q^(1/2) / (1/2) is q^(-1/2) = 0.5 at q = 4.
        let eu = EuProfile::new(vec![1.0], alpha_fair(1.0, 0.5));
        let g = marginal_utility(&eu, &[4.0]).unwrap();
        assert!((g[0] - 0.5).abs() < 1e-15);
        assert_eq!(marginal_utility(&eu, &[0.0]), Err(Error::UnboundedDerivative));
    }

    #[test]
    fn cost_examples() {
        let c = CostSpec::new(0.5, 1.1, 1000.0).unwrap();
        assert!((cost(&c, &[0.25, 0.75]) - 500.0).abs() < 1e-12);
        assert_eq!(cost(&c, &[0.0, 0.0]), 0.0);
        // 500 * 2^1.1 to 17 digits.
        assert!((cost(&c, &[2.0]) - 1_071.773_462_536_293).abs() < 1e-9);
        assert!(CostSpec::new(0.5, 0.9, 1000.0).is_err());
    }

    #[test]
    fn projection_examples() {
        let ch = ChannelSet::new(vec![4.0, 4.0], 4.0).unwrap();
        assert_eq!(project_feasible(&[1.0, 2.5], &ch), vec![1.0, 2.5]);
        let p = project_feasible(&[3.0, 3.0], &ch);
        assert!((p[0] - 2.0).abs() < 1e-12 && (p[1] - 2.0).abs() < 1e-12);
        assert_eq!(project_feasible(&[-1.0, -1.0], &ch), vec![0.0, 0.0]);
        let ch = ChannelSet::new(vec![1.0, 5.0], 4.0).unwrap();
        let p = project_feasible(&[10.0, 10.0], &ch);
        assert!((p[0] - 1.0).abs() < 1e-12 && (p[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn friis_examples() {
        let r = friis_received_dbm(43.0, 15.0, 0.0, 100.0, 1.9e9).unwrap();
        assert!((r + 20.02).abs() <= 0.02, "{r}");
        let f0 = 915e6;
        let d = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * f0);
        assert!((friis_received_dbm(30.0, 0.0, 0.0, d, f0).unwrap() - 30.0).abs() < 1e-12);
        let a = friis_received_dbm(30.0, 0.0, 0.0, 10.0, f0).unwrap();
        let b = friis_received_dbm(30.0, 0.0, 0.0, 20.0, f0).unwrap();
        assert!((a - b - 20.0 * 2f64.log10()).abs() < 1e-12);
        assert!(friis_received_dbm(30.0, 0.0, 0.0, 0.0, f0).is_err());
        assert!(friis_received_dbm(30.0, 0.0, 0.0, 1.0, -1.0).is_err());
    }

    #[test]
    fn sampling_is_deterministic_and_shaped() {
        let spec = ScenarioGenSpec {
            seed: 42,
            ..Default::default()
        };
        let a = sample_scenario(&spec).unwrap();
        let b = sample_scenario(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!((a.k(), a.n()), (10, 4));
        let c = sample_scenario(&ScenarioGenSpec { seed: 43, ..spec.clone() }).unwrap();
        assert_ne!(a, c);

        let full = sample_scenario(&ScenarioGenSpec { prob: 1.0, ..spec.clone() }).unwrap();
        assert!(full.eus().iter().all(|eu| eu.gains.iter().all(|&h| h > 0.0)));

        let err = sample_scenario(&ScenarioGenSpec { prob: 0.0, ..spec }).unwrap_err();
        assert!(matches!(err, Error::UnsatisfiableScenario(_)));
    }

    #[test]
    fn sampled_gains_follow_distance_model() {
        let spec = ScenarioGenSpec {
            seed: 7,
            prob: 0.5,
            ..Default::default()
        };
        let s = sample_scenario(&spec).unwrap();
        for eu in s.eus() {
            // All positive gains of one EU share the same distance.
            let d: Vec<f64> = eu
                .gains
                .iter()
                .zip(&spec.carriers)
                .filter(|(h, _)| **h > 0.0)
                .map(|(h, cf)| (frequency_factor(*cf) / h).cbrt())
                .collect();
            assert!(!d.is_empty());
            for x in &d {
                assert!((x - d[0]).abs() < 1e-9 && *x >= 1.0 && *x <= 5.0);
            }
            match eu.utility {
                UtilitySpec::AlphaFair {
                    energy_rate, battery, ..
                } => {
                    assert!((20.0..50.0).contains(&battery));
                    assert!((0.1..0.3).contains(&energy_rate));
                }
                _ => panic!("generator emits alpha-fair utilities"),
            }
        }
    }

    #[test]
    fn scenario_invariants_are_enforced() {
        let ch = ChannelSet::uniform(1, 10.0).unwrap();
        let c = CostSpec::new(1.0, 1.0, 1.0).unwrap();
        let eu = EuProfile::new(vec![1.0], log_utility());
        assert!(Scenario::new(ch.clone(), vec![], c, vec![]).is_err());
        assert!(Scenario::new(ch.clone(), vec![eu.clone()], c, vec![5.0]).is_err());
        assert!(Scenario::new(ch.clone(), vec![EuProfile::new(vec![0.0], log_utility())], c, vec![10.0]).is_err());
        assert!(Scenario::new(ch.clone(), vec![eu, EuProfile::virtual_agent(1)], c, vec![10.0, 10.0]).is_ok());
        assert!(ChannelSet::new(vec![], 1.0).is_err());
        assert!(ChannelSet::new(vec![1.0], 0.0).is_err());
    }

    #[test]
    fn rescaling_preserves_welfare_up_to_units() {
        let s = sample_scenario(&ScenarioGenSpec {
            seed: 3,
            ..Default::default()
        })
        .unwrap();
        let (pu, vu) = (1e-6, 0.03);
        let r = s.rescaled(pu, vu);
        let p = [1e-6, 2e-6, 0.5e-6, 3e-6];
        let p_scaled: Vec<f64> = p.iter().map(|x| x / pu).collect();
        for (a, b) in s.eus().iter().zip(r.eus()) {
            let ua = a.utility.value(a.received_power(&p)).unwrap();
            let ub = b.utility.value(b.received_power(&p_scaled)).unwrap();
            assert!((ua - ub * vu).abs() <= 1e-12 * ua.abs());
        }
        let ca = cost(s.cost(), &p);
        let cb = cost(r.cost(), &p_scaled);
        assert!((ca - cb * vu).abs() <= 1e-12 * ca);
        assert!((r.pmax() * pu - s.pmax()).abs() < 1e-12);
    }
}
