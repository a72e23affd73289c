//! Event-energy model: per-operation coefficients, IF-vs-ANN crossover
//! analysis, memory-port width scaling and pricing of simulator traces.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NetworkSpec;
use crate::sim::SimTrace;

/// Energy per operation in pJ; memory figures are per byte at a 128-bit port.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyCoefficients {
    pub e_acc: f64,
    pub e_mul: f64,
    pub e_mac: f64,
    pub e_read_w: f64,
    pub e_write_w: f64,
    pub e_read_v: f64,
    pub e_write_v: f64,
    pub e_read_act: f64,
    pub e_write_act: f64,
}

impl Default for EnergyCoefficients {
    fn default() -> Self {
        Self {
            e_acc: 0.05,
            e_mul: 0.1,
            e_mac: 0.13,
            e_read_w: 0.25,
            e_write_w: 0.5,
            e_read_v: 0.18,
            e_write_v: 0.31,
            e_read_act: 0.18,
            e_write_act: 0.31,
        }
    }
}

impl EnergyCoefficients {
    fn values(&self) -> [(&'static str, f64); 9] {
        [
            ("e_acc", self.e_acc),
            ("e_mul", self.e_mul),
            ("e_mac", self.e_mac),
            ("e_read_w", self.e_read_w),
            ("e_write_w", self.e_write_w),
            ("e_read_v", self.e_read_v),
            ("e_write_v", self.e_write_v),
            ("e_read_act", self.e_read_act),
            ("e_write_act", self.e_write_act),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        match self
            .values()
            .into_iter()
            .find(|(_, v)| !(*v >= 0.0 && v.is_finite()))
        {
            Some((name, v)) => Err(Error::Coefficients(format!(
                "{name} = {v} must be finite and non-negative"
            ))),
            None => Ok(()),
        }
    }

    /// Every coefficient multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        Self {
            e_acc: self.e_acc * k,
            e_mul: self.e_mul * k,
            e_mac: self.e_mac * k,
            e_read_w: self.e_read_w * k,
            e_write_w: self.e_write_w * k,
            e_read_v: self.e_read_v * k,
            e_write_v: self.e_write_v * k,
            e_read_act: self.e_read_act * k,
            e_write_act: self.e_write_act * k,
        }
    }
}

/// Spike count per input per window below which an IF synapse is cheaper than
/// a MAC, counting compute only: `e_mac / e_acc`.
pub fn crossover_compute_only(c: &EnergyCoefficients) -> Result<f64> {
    if c.e_acc <= 0.0 {
        return Err(Error::DegenerateCrossover("accumulate energy is zero"));
    }
    Ok(c.e_mac / c.e_acc)
}

/// Crossover including weight, membrane and activation memory traffic.
pub fn crossover_total(c: &EnergyCoefficients) -> Result<f64> {
    let num = c.e_mac + c.e_read_w + c.e_read_v + c.e_write_v + c.e_read_act + c.e_write_act;
    let den = c.e_acc + c.e_read_w + c.e_read_v + c.e_write_v;
    if den <= 0.0 {
        return Err(Error::DegenerateCrossover("IF per-spike energy is zero"));
    }
    Ok(num / den)
}

/// Per-synapse IF energy for `s` input spikes per window: each spike costs an
/// accumulate and a weight read, and every spike after the first a membrane
/// read-modify-write.
pub fn if_window_energy(s: f64, c: &EnergyCoefficients) -> f64 {
    s * c.e_acc + s * c.e_read_w + (s - 1.0).max(0.0) * (c.e_read_v + c.e_write_v)
}

/// Per-synapse ANN energy: one MAC, one weight read, one activation read and write.
pub fn ann_energy(c: &EnergyCoefficients) -> f64 {
    c.e_mac + c.e_read_w + c.e_read_act + c.e_write_act
}

/// Relative energy per bit moved as a function of memory port width, anchored
/// at 1.0 for 128 bits and interpolated linearly in `log2(width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PortWidthCurve {
    pub anchors: Vec<(u32, f64)>,
}

impl Default for PortWidthCurve {
    fn default() -> Self {
        Self {
            anchors: vec![(8, 4.0), (16, 2.6), (32, 1.8), (64, 1.3), (128, 1.0)],
        }
    }
}

impl PortWidthCurve {
    pub fn validate(&self) -> Result<()> {
        if self.anchors.is_empty() {
            return Err(Error::Coefficients(
                "port-width curve has no anchors".into(),
            ));
        }
        for w in self.anchors.windows(2) {
            let ((b0, e0), (b1, e1)) = (w[0], w[1]);
            if b1 <= b0 {
                return Err(Error::Coefficients(format!(
                    "port widths must increase ({b0} then {b1})"
                )));
            }
            if e1 > e0 {
                return Err(Error::Coefficients(format!(
                    "energy per bit rises from {e0} at {b0} to {e1} at {b1}"
                )));
            }
        }
        if let Some((b, e)) = self
            .anchors
            .iter()
            .find(|(b, e)| *b == 0 || !(*e > 0.0 && e.is_finite()))
        {
            return Err(Error::Coefficients(format!("bad anchor ({b}, {e})")));
        }
        match self.anchors.iter().find(|(b, _)| *b == 128) {
            Some((_, e)) if (*e - 1.0).abs() < 1e-12 => Ok(()),
            _ => Err(Error::Coefficients(
                "curve must pass through (128, 1.0)".into(),
            )),
        }
    }

    /// Relative energy per bit at `port_bits`; clamped outside the anchors.
    pub fn relative(&self, port_bits: u32) -> f64 {
        let a = &self.anchors;
        let x = f64::from(port_bits).log2();
        if port_bits <= a[0].0 {
            return a[0].1;
        }
        for w in a.windows(2) {
            let ((b0, e0), (b1, e1)) = (w[0], w[1]);
            if port_bits <= b1 {
                let (x0, x1) = (f64::from(b0).log2(), f64::from(b1).log2());
                return e0 + (e1 - e0) * (x - x0) / (x1 - x0);
            }
        }
        a[a.len() - 1].1
    }
}

/// Coefficients, port curve and the optional control and idle terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyConfig {
    pub coefficients: EnergyCoefficients,
    pub curve: PortWidthCurve,
    pub control_pj_per_cycle: f64,
    pub idle_power_uw: f64,
    pub clock_hz: f64,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        Self {
            coefficients: EnergyCoefficients::default(),
            curve: PortWidthCurve::default(),
            control_pj_per_cycle: 0.0,
            idle_power_uw: 0.0,
            clock_hz: 1e8,
        }
    }
}

impl EnergyConfig {
    pub fn validate(&self) -> Result<()> {
        self.coefficients.validate()?;
        self.curve.validate()?;
        for (name, v) in [
            ("control_pj_per_cycle", self.control_pj_per_cycle),
            ("idle_power_uw", self.idle_power_uw),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Coefficients(format!(
                    "{name} = {v} must be finite and non-negative"
                )));
            }
        }
        if !(self.clock_hz > 0.0 && self.clock_hz.is_finite()) {
            return Err(Error::Coefficients(format!(
                "clock_hz = {} must be positive",
                self.clock_hz
            )));
        }
        Ok(())
    }

    /// Parses a full configuration or a bare coefficient object.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = match serde_json::from_str(text) {
            Ok(cfg) => cfg,
            Err(full) => match serde_json::from_str::<EnergyCoefficients>(text) {
                Ok(coefficients) => Self {
                    coefficients,
                    ..Self::default()
                },
                Err(_) => return Err(Error::Json(full)),
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    /// pJ for one burst of `port_bits` at `per_byte` pJ/byte (128-bit rate).
    fn burst(&self, port_bits: u32, per_byte: f64) -> f64 {
        f64::from(port_bits) / 8.0 * per_byte * self.curve.relative(port_bits)
    }
}

/// Per-component energy of one or more inferences, in pJ.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EnergyLedger {
    pub weight_mem_pj: f64,
    pub act_mem_pj: f64,
    pub membrane_pj: f64,
    pub mac_pj: f64,
    pub acc_pj: f64,
    pub mul_pj: f64,
    pub control_pj: f64,
    pub idle_pj: f64,
}

impl EnergyLedger {
    pub fn components(&self) -> [(&'static str, f64); 8] {
        [
            ("weight_mem", self.weight_mem_pj),
            ("act_mem", self.act_mem_pj),
            ("membrane", self.membrane_pj),
            ("mac", self.mac_pj),
            ("acc", self.acc_pj),
            ("mul", self.mul_pj),
            ("control", self.control_pj),
            ("idle", self.idle_pj),
        ]
    }

    pub fn total_pj(&self) -> f64 {
        self.components().iter().map(|(_, v)| v).sum()
    }

    pub fn total_nj(&self) -> f64 {
        self.total_pj() / 1000.0
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("plain data serializes");
        v["total_nj"] = self.total_nj().into();
        serde_json::to_string_pretty(&v).expect("plain data serializes")
    }
}

impl std::ops::Add for EnergyLedger {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            weight_mem_pj: self.weight_mem_pj + o.weight_mem_pj,
            act_mem_pj: self.act_mem_pj + o.act_mem_pj,
            membrane_pj: self.membrane_pj + o.membrane_pj,
            mac_pj: self.mac_pj + o.mac_pj,
            acc_pj: self.acc_pj + o.acc_pj,
            mul_pj: self.mul_pj + o.mul_pj,
            control_pj: self.control_pj + o.control_pj,
            idle_pj: self.idle_pj + o.idle_pj,
        }
    }
}

/// Plain-text table, one component per row.
impl fmt::Display for EnergyLedger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12} {:>14}", "component", "energy (pJ)")?;
        for (name, v) in self.components() {
            writeln!(f, "{name:<12} {v:>14.3}")?;
        }
        write!(
            f,
            "{:<12} {:>14.3}  ({:.4} nJ)",
            "total",
            self.total_pj(),
            self.total_nj()
        )
    }
}

/// Prices every event of a trace.
pub fn ledger_from_trace(trace: &SimTrace, cfg: &EnergyConfig) -> Result<EnergyLedger> {
    cfg.validate()?;
    let c = &cfg.coefficients;
    let e = &trace.events;
    let bits = trace.port_bits;
    let n = |v: u64| v as f64;
    Ok(EnergyLedger {
        weight_mem_pj: n(e.weight_reads + e.bias_reads) * cfg.burst(bits, c.e_read_w),
        act_mem_pj: n(e.act_reads) * cfg.burst(bits, c.e_read_act)
            + n(e.act_writes) * cfg.burst(bits, c.e_write_act),
        membrane_pj: n(e.spill_reads) * cfg.burst(bits, c.e_read_v)
            + n(e.spill_writes) * cfg.burst(bits, c.e_write_v),
        mac_pj: n(e.macs) * c.e_mac,
        acc_pj: n(e.accs + e.bias_accs + e.compares + e.divide_steps + e.classifier_compares)
            * c.e_acc,
        mul_pj: n(2 * e.requants + e.conversions) * c.e_mul,
        control_pj: n(trace.cycles) * cfg.control_pj_per_cycle,
        // 1 uW for 1 s is 1e6 pJ.
        idle_pj: cfg.idle_power_uw * n(trace.cycles) / cfg.clock_hz * 1e6,
    })
}

/// Dense 128-bit-burst weight streaming against a sparse variant that reads
/// individual weights over an 8-bit bus only for nonzero activations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseReport {
    pub sparsity: f64,
    pub synapses: u64,
    pub dense_pj: f64,
    pub sparse_pj: f64,
    /// Activation sparsity at which both variants cost the same.
    pub break_even_sparsity: f64,
    pub dense_wins: bool,
}

impl fmt::Display for SparseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sparsity           {:.3}", self.sparsity)?;
        writeln!(f, "synapses           {}", self.synapses)?;
        writeln!(f, "dense (pJ)         {:.3}", self.dense_pj)?;
        writeln!(f, "sparse (pJ)        {:.3}", self.sparse_pj)?;
        writeln!(f, "break-even         {:.3}", self.break_even_sparsity)?;
        write!(
            f,
            "verdict            {}",
            if self.dense_wins { "dense" } else { "sparse" }
        )
    }
}

const NARROW_BUS_BITS: u32 = 8;
const WIDE_BUS_BITS: u32 = 128;

pub fn sparse_vs_dense_report(
    spec: &NetworkSpec,
    sparsity: f64,
    cfg: &EnergyConfig,
) -> Result<SparseReport> {
    if !(0.0..=1.0).contains(&sparsity) {
        return Err(Error::InvalidSparsity(sparsity));
    }
    cfg.validate()?;
    let c = &cfg.coefficients;
    let wide = cfg.burst(WIDE_BUS_BITS, c.e_read_w);
    let narrow = cfg.burst(NARROW_BUS_BITS, c.e_read_w);
    let port_bytes = (WIDE_BUS_BITS / 8) as u64;

    let mut synapses = 0u64;
    let mut dense_pj = 0.0;
    for l in &spec.layers {
        let s = (l.in_width * l.out_width) as u64;
        synapses += s;
        dense_pj += s.div_ceil(port_bytes) as f64 * wide + s as f64 * c.e_mac;
    }
    let per_nonzero = narrow + c.e_mac;
    let detect = synapses as f64 * c.e_acc;
    let sparse_pj = (1.0 - sparsity) * synapses as f64 * per_nonzero + detect;
    let break_even = if synapses == 0 || per_nonzero == 0.0 {
        0.0
    } else {
        (1.0 - (dense_pj - detect) / (synapses as f64 * per_nonzero)).clamp(0.0, 1.0)
    };
    Ok(SparseReport {
        sparsity,
        synapses,
        dense_pj,
        sparse_pj,
        break_even_sparsity: break_even,
        dense_wins: dense_pj <= sparse_pj,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{LayerKind, LayerSpec};

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    #[test]
    fn crossover_examples() {
        let d = EnergyCoefficients::default();
        assert!(close(crossover_compute_only(&d).unwrap(), 2.6));
        assert!(close(crossover_total(&d).unwrap(), 1.36 / 0.79));
        let eq = EnergyCoefficients { e_mac: 0.05, ..d };
        assert!(close(crossover_compute_only(&eq).unwrap(), 1.0));
        let big = EnergyCoefficients { e_mac: 0.2, ..d };
        assert!(close(crossover_compute_only(&big).unwrap(), 4.0));
        let no_mem = EnergyCoefficients {
            e_read_w: 0.0,
            e_read_v: 0.0,
            e_write_v: 0.0,
            e_read_act: 0.0,
            e_write_act: 0.0,
            ..d
        };
        assert!(close(crossover_total(&no_mem).unwrap(), 2.6));
        assert!(close(
            crossover_total(&d.scaled(2.0)).unwrap(),
            crossover_total(&d).unwrap()
        ));
        let zero = EnergyCoefficients { e_acc: 0.0, ..d };
        assert!(matches!(
            crossover_compute_only(&zero),
            Err(Error::DegenerateCrossover(_))
        ));
    }

    #[test]
    fn window_energy_examples() {
        let d = EnergyCoefficients::default();
        assert_eq!(if_window_energy(0.0, &d), 0.0);
        assert!(close(if_window_energy(1.0, &d), 0.30));
        assert!(close(if_window_energy(2.0, &d), 1.09));
        assert!(close(ann_energy(&d), 0.13 + 0.25 + 0.18 + 0.31));
    }

    #[test]
    fn curve_is_anchored_and_monotone() {
        let c = PortWidthCurve::default();
        c.validate().unwrap();
        assert_eq!(c.relative(128), 1.0);
        assert_eq!(c.relative(8), 4.0);
        assert!(close(
            c.relative(24),
            2.6 + (1.8 - 2.6) * (24f64.log2() - 4.0)
        ));
        let mut prev = f64::INFINITY;
        for bits in 4..=256 {
            let r = c.relative(bits);
            assert!(r <= prev);
            prev = r;
        }
        let rising = PortWidthCurve {
            anchors: vec![(8, 1.0), (128, 1.0), (256, 2.0)],
        };
        assert!(rising.validate().is_err());
    }

    #[test]
    fn single_bursts_price_like_table_entries() {
        let cfg = EnergyConfig::default();
        let mut t = SimTrace::new(128);
        t.events.weight_reads = 1;
        assert!(close(ledger_from_trace(&t, &cfg).unwrap().total_pj(), 4.0));
        let mut t = SimTrace::new(128);
        t.events.act_writes = 1;
        assert!(close(ledger_from_trace(&t, &cfg).unwrap().total_pj(), 4.96));
        assert_eq!(
            ledger_from_trace(&SimTrace::new(128), &cfg)
                .unwrap()
                .total_pj(),
            0.0
        );
    }

    #[test]
    fn ledger_is_additive() {
        let cfg = EnergyConfig {
            control_pj_per_cycle: 0.01,
            idle_power_uw: 60.0,
            ..EnergyConfig::default()
        };
        let mut a = SimTrace::new(128);
        a.cycles = 100;
        a.events.macs = 40;
        a.events.act_reads = 3;
        let mut b = SimTrace::new(128);
        b.cycles = 7;
        b.events.accs = 9;
        b.events.conversions = 2;
        let sum = ledger_from_trace(&(&a + &b), &cfg).unwrap();
        let parts = ledger_from_trace(&a, &cfg).unwrap() + ledger_from_trace(&b, &cfg).unwrap();
        assert!(close(sum.total_pj(), parts.total_pj()));
        // 60 uW over 107 cycles at 100 MHz
        assert!(close(sum.idle_pj, 60.0 * 107.0 / 1e8 * 1e6));
    }

    #[test]
    fn coefficient_file_round_trip_and_errors() {
        let cfg = EnergyConfig::default();
        assert_eq!(EnergyConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        let partial = EnergyConfig::from_json(r#"{"coefficients": {"e_mac": 0.2}}"#).unwrap();
        assert_eq!(partial.coefficients.e_mac, 0.2);
        assert_eq!(partial.coefficients.e_acc, 0.05);
        assert!(EnergyConfig::from_json(r#"{"coefficients": {"e_mac": -1}}"#).is_err());
        assert!(EnergyConfig::from_json(r#"{"coefficients": {"e_teleport": 1}}"#).is_err());
        let bare = EnergyConfig::from_json(r#"{"e_mac": 0.26}"#).unwrap();
        assert_eq!(bare.coefficients.e_mac, 0.26);
        assert_eq!(bare.curve, PortWidthCurve::default());
    }

    #[test]
    fn sparse_report_examples() {
        let spec = NetworkSpec::new(4, vec![LayerSpec::spiking(LayerKind::Ssf, 128, 64, 1)]);
        let cfg = EnergyConfig::default();
        let r0 = sparse_vs_dense_report(&spec, 0.0, &cfg).unwrap();
        assert!(r0.dense_wins && r0.sparse_pj > r0.dense_pj);
        let r1 = sparse_vs_dense_report(&spec, 1.0, &cfg).unwrap();
        assert!(!r1.dense_wins);
        let mid = sparse_vs_dense_report(&spec, 0.5, &cfg).unwrap();
        assert!(mid.dense_wins);
        let be = r0.break_even_sparsity;
        let at = sparse_vs_dense_report(&spec, be, &cfg).unwrap();
        assert!(close(at.sparse_pj, at.dense_pj));
        assert!(matches!(
            sparse_vs_dense_report(&spec, 1.5, &cfg),
            Err(Error::InvalidSparsity(_))
        ));
    }
}
