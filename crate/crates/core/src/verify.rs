//! Self-checks behind `sparrow verify`: the IF/SSF representability sweep,
//! the energy crossover constants and the search-space count.

use std::collections::HashSet;

use crate::energy::{crossover_compute_only, crossover_total, EnergyCoefficients};
use crate::error::Result;
use crate::nas::SearchSpace;
use crate::neuron::representability_check;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepReport {
    pub instances: u64,
    /// Instances where IF reproduced the SSF count.
    pub equal: u64,
    pub violations: Vec<String>,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// True if some `n` strictly increasing steps `s_1 < ... < s_n` have the
/// cumulative input at `s_k` at least `k * theta`. Exhaustive over subsets.
fn spikes_placeable(inputs: &[i64], theta: i64, n: u32) -> bool {
    let t = inputs.len();
    let cumulative: Vec<i64> = inputs
        .iter()
        .scan(0, |s, &x| {
            *s += x;
            Some(*s)
        })
        .collect();
    (0u32..1 << t).filter(|m| m.count_ones() == n).any(|mask| {
        (0..t)
            .filter(|&s| mask >> s & 1 == 1)
            .enumerate()
            .all(|(k, s)| cumulative[s] >= (k as i64 + 1) * theta)
    })
}

fn if_spikes(inputs: &[i64], theta: i64) -> u32 {
    let mut v = 0;
    let mut n = 0;
    for &x in inputs {
        v += x;
        if v >= theta {
            v -= theta;
            n += 1;
        }
    }
    n
}

/// Every input sequence `x(t) in {0..=max_input}^T` for `T in 1..=max_window`
/// and each threshold: IF never exceeds SSF, SSF equals `min(T, floor(U / theta))`,
/// and the two agree exactly when the level-crossing condition holds.
pub fn representability_sweep(
    max_window: usize,
    thresholds: &[u32],
    max_input: u32,
) -> Result<SweepReport> {
    let mut report = SweepReport {
        instances: 0,
        equal: 0,
        violations: Vec::new(),
    };
    let base = u64::from(max_input) + 1;
    for window in 1..=max_window {
        for &theta in thresholds {
            for code in 0..base.pow(window as u32) {
                let inputs: Vec<i64> = (0..window)
                    .map(|t| (code / base.pow(t as u32) % base) as i64)
                    .collect();
                let real: Vec<f64> = inputs.iter().map(|&x| x as f64).collect();
                let r = representability_check(&real, f64::from(theta), window)?;

                let total: i64 = inputs.iter().sum();
                let ssf = (total / i64::from(theta)).min(window as i64) as u32;
                let iff = if_spikes(&inputs, i64::from(theta));
                let condition = spikes_placeable(&inputs, i64::from(theta), ssf);

                let mut fail = |what: &str| {
                    if report.violations.len() < 20 {
                        report
                            .violations
                            .push(format!("T={window} theta={theta} x={inputs:?}: {what}"));
                    }
                };
                if r.if_count != iff {
                    fail("IF count differs from integer stepping");
                }
                if r.ssf_count != ssf {
                    fail("SSF count differs from min(T, floor(U / theta))");
                }
                if r.if_count > r.ssf_count {
                    fail("IF exceeds SSF");
                }
                if r.condition_holds != condition {
                    fail("level-crossing condition disagrees with exhaustive placement");
                }
                if (r.if_count == r.ssf_count) != condition || r.equal != (iff == ssf) {
                    fail("equality does not match the level-crossing condition");
                }
                report.instances += 1;
                report.equal += u64::from(iff == ssf);
            }
        }
    }
    Ok(report)
}

/// The default sweep: `T <= 6`, thresholds 1 and 2, inputs up to 4.
pub fn default_representability_sweep() -> Result<SweepReport> {
    representability_sweep(6, &[1, 2], 4)
}

/// `num / den` in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: i64,
    pub den: i64,
}

impl Ratio {
    fn new(num: i64, den: i64) -> Self {
        let g = gcd(num.abs(), den.abs()).max(1);
        let s = if den < 0 { -1 } else { 1 };
        Self {
            num: s * num / g,
            den: s * den / g,
        }
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }
}

impl std::fmt::Display for Ratio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Coefficients given to at most six decimals as integer micro-picojoules.
fn micro(v: f64) -> i64 {
    (v * 1e6).round() as i64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossoverReport {
    pub compute_only: f64,
    pub total: f64,
    pub compute_only_exact: Ratio,
    pub total_exact: Ratio,
    /// Floating results agree with the exact ratios and balance the per-synapse energies.
    pub consistent: bool,
    /// For the default coefficients: 13/5 and 136/79.
    pub matches_defaults: Option<bool>,
}

impl CrossoverReport {
    pub fn passed(&self) -> bool {
        self.consistent && self.matches_defaults.unwrap_or(true)
    }
}

pub fn crossover_check(c: &EnergyCoefficients) -> Result<CrossoverReport> {
    let compute_only = crossover_compute_only(c)?;
    let total = crossover_total(c)?;
    let compute_only_exact = Ratio::new(micro(c.e_mac), micro(c.e_acc));
    let num = micro(c.e_mac)
        + micro(c.e_read_w)
        + micro(c.e_read_v)
        + micro(c.e_write_v)
        + micro(c.e_read_act)
        + micro(c.e_write_act);
    let den = micro(c.e_acc) + micro(c.e_read_w) + micro(c.e_read_v) + micro(c.e_write_v);
    let total_exact = Ratio::new(num, den);

    let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1.0);
    // At the crossover the IF side spends exactly what the MAC side does.
    let balanced_compute = close(compute_only * c.e_acc, c.e_mac);
    let if_per_spike = c.e_acc + c.e_read_w + c.e_read_v + c.e_write_v;
    let mac_side = c.e_mac + c.e_read_w + c.e_read_v + c.e_write_v + c.e_read_act + c.e_write_act;
    let balanced_total = close(total * if_per_spike, mac_side);
    let consistent = balanced_compute
        && balanced_total
        && close(compute_only, compute_only_exact.value())
        && close(total, total_exact.value());
    let matches_defaults = (*c == EnergyCoefficients::default())
        .then(|| compute_only_exact == Ratio::new(13, 5) && total_exact == Ratio::new(136, 79));
    Ok(CrossoverReport {
        compute_only,
        total,
        compute_only_exact,
        total_exact,
        consistent,
        matches_defaults,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpaceReport {
    pub enumerated: usize,
    pub distinct: usize,
    pub formula: u128,
}

impl SpaceReport {
    pub fn passed(&self) -> bool {
        self.enumerated == self.distinct && self.enumerated as u128 == self.formula
    }
}

pub fn space_check(space: &SearchSpace) -> Result<SpaceReport> {
    space.validate()?;
    let mut seen = HashSet::new();
    let mut enumerated = 0;
    for arch in space.iter() {
        debug_assert!(space.contains(&arch));
        enumerated += 1;
        seen.insert(arch);
    }
    Ok(SpaceReport {
        enumerated,
        distinct: seen.len(),
        formula: space.size(),
    })
}
