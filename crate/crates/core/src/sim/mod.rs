//! Cycle-accurate model of the accelerator core.
//!
//! The core walks the layer / output-neuron / input-neuron loop nest under an
//! explicit controller state machine. Weights and biases are fetched from a
//! byte image of weight memory in port-wide bursts, activations are bit-packed
//! into two ping-pong regions of activation memory, and every layer input is
//! staged through a 16 x 128-bit FIFO. IF layers process the window in passes
//! of `membrane_buffer_depth` timesteps, re-streaming weights each pass and
//! spilling residual potentials between passes.

mod fsm;
mod memory;
mod trace;

use serde::{Deserialize, Serialize};

use crate::blob;
use crate::error::{Error, Result};
use crate::network::{
    activation_layout, argmax, count_bits, ensure_valid, fifo_width, levels_to_count,
    output_segments, rate_train, segments_bytes, weight_layout, Activations, EncodeTarget,
    EncodedInput, HardwareLimits, LayerKind, NetworkSpec, Segment, ACT_BITS,
};
use crate::neuron::{BiasMode, Potential};
use crate::quant::requantize;

pub use fsm::{FsmState, Phase};
pub use trace::{trace_event_counts, trace_latency, EventCounts, SimTrace};

use memory::{unpack, BurstCache, BurstWriter, InputFifo, OutputBuffer};

/// Per-output-neuron controller overhead, fitted once so the ECG-shaped hybrid
/// model takes 12400 cycles (0.124 ms at 100 MHz) and then frozen.
pub const NEURON_OVERHEAD_CYCLES: u64 = 7;

/// Cycles charged per datapath event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CycleCosts {
    pub weight_burst: u64,
    pub bias_burst: u64,
    /// Activation-memory bursts overlap with weight streaming.
    pub act_burst: u64,
    pub mac: u64,
    /// One conditional-accumulate step over all buffered timesteps of a synapse.
    pub acc: u64,
    pub bias: u64,
    pub divide: u64,
    pub requant: u64,
    /// Per timestep of an IF compare-and-spike.
    pub compare: u64,
    pub classify: u64,
    pub neuron_overhead: u64,
}

impl Default for CycleCosts {
    fn default() -> Self {
        Self {
            weight_burst: 1,
            bias_burst: 1,
            act_burst: 0,
            mac: 1,
            acc: 1,
            bias: 1,
            divide: 1,
            requant: 1,
            compare: 1,
            classify: 1,
            neuron_overhead: NEURON_OVERHEAD_CYCLES,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoreConfig {
    pub clock_hz: f64,
    pub limits: HardwareLimits,
    pub costs: CycleCosts,
}

impl Default for CoreConfig {
    fn default() -> Self {
        Self {
            clock_hz: 1e8,
            limits: HardwareLimits::default(),
            costs: CycleCosts::default(),
        }
    }
}

/// Configuration registers of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerRegisters {
    pub kind: LayerKind,
    pub in_width: usize,
    pub out_width: usize,
    pub bias_mode: BiasMode,
    pub threshold_q: i32,
    pub m_w: u32,
    pub n_shift: u8,
    pub m_b: u32,
    pub m_shift: u8,
    pub weights_addr: usize,
    pub biases_addr: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimResult {
    pub class: usize,
    pub scores: Vec<u32>,
    pub trace: SimTrace,
}

pub struct Core {
    config: CoreConfig,
    weight_mem: Vec<u8>,
    act_mem: Vec<u8>,
    window: u32,
    registers: Vec<LayerRegisters>,
    fsm: FsmState,
    log: Option<Vec<String>>,
}

impl Core {
    pub fn new(config: CoreConfig) -> Result<Self> {
        config.limits.check()?;
        if !(config.clock_hz > 0.0 && config.clock_hz.is_finite()) {
            return Err(Error::Fault(format!(
                "clock frequency must be positive, got {}",
                config.clock_hz
            )));
        }
        Ok(Self {
            weight_mem: vec![0; config.limits.weight_mem_bytes],
            act_mem: vec![0; config.limits.act_mem_bytes],
            config,
            window: 0,
            registers: Vec::new(),
            fsm: FsmState::default(),
            log: None,
        })
    }

    pub fn config(&self) -> &CoreConfig {
        &self.config
    }

    /// Records one line per datapath event during later inferences.
    pub fn enable_event_log(&mut self) {
        self.log = Some(Vec::new());
    }

    /// Event log of the most recent inference.
    pub fn event_log(&self) -> Option<&[String]> {
        self.log.as_deref()
    }

    pub fn registers(&self) -> &[LayerRegisters] {
        &self.registers
    }

    pub fn window(&self) -> u32 {
        self.window
    }

    pub fn state(&self) -> FsmState {
        self.fsm
    }

    pub fn is_configured(&self) -> bool {
        !self.registers.is_empty()
    }

    pub fn weight_memory(&self) -> &[u8] {
        &self.weight_mem
    }

    /// Parses, checks and installs a model binary; the core ends up idle.
    pub fn load_model(&mut self, bytes: &[u8]) -> Result<()> {
        let spec = blob::unpack_with(bytes, &self.config.limits)?;
        self.load_network(&spec)
    }

    pub fn load_network(&mut self, spec: &NetworkSpec) -> Result<()> {
        ensure_valid(spec, &self.config.limits)?;
        let layout = weight_layout(spec, self.config.limits.port_bytes());
        self.weight_mem.iter_mut().for_each(|b| *b = 0);
        self.registers = spec
            .layers
            .iter()
            .zip(&layout.layers)
            .map(|(l, region)| {
                for (i, &w) in l.weights.iter().enumerate() {
                    self.weight_mem[region.weights + i] = w as u8;
                }
                for (i, b) in l.biases.iter().enumerate() {
                    let at = region.biases + 4 * i;
                    self.weight_mem[at..at + 4].copy_from_slice(&b.to_le_bytes());
                }
                LayerRegisters {
                    kind: l.kind,
                    in_width: l.in_width,
                    out_width: l.out_width,
                    bias_mode: l.bias_mode,
                    threshold_q: l.threshold_q,
                    m_w: l.m_w,
                    n_shift: l.n_shift,
                    m_b: l.m_b,
                    m_shift: l.m_shift,
                    weights_addr: region.weights,
                    biases_addr: region.biases,
                }
            })
            .collect();
        self.window = spec.window;
        self.fsm = FsmState::default();
        Ok(())
    }

    /// Predicted class and trace for one input.
    pub fn run_inference(&mut self, input: &EncodedInput) -> Result<(usize, SimTrace)> {
        let r = self.run(input)?;
        Ok((r.class, r.trace))
    }

    pub fn run(&mut self, input: &EncodedInput) -> Result<SimResult> {
        if !self.is_configured() {
            return Err(Error::Unconfigured);
        }
        if self.fsm.phase != Phase::Idle {
            return Err(Error::Fault(format!(
                "inference started in phase {:?}",
                self.fsm.phase
            )));
        }
        let first = self.registers[0];
        if input.width() != first.in_width {
            return Err(Error::Shape(format!(
                "input has {} values, first layer expects {}",
                input.width(),
                first.in_width
            )));
        }
        input.check(self.window)?;
        if let Some(log) = &mut self.log {
            log.clear();
        }

        let mut run = Run::new(self);
        run.stage_input(input)?;
        for l in 0..run.core.registers.len() {
            run.layer(l)?;
        }
        let (class, scores) = run.classify()?;
        let trace = run.trace;
        Ok(SimResult {
            class,
            scores,
            trace,
        })
    }
}

/// Mutable state of one inference.
struct Run<'a> {
    core: &'a mut Core,
    trace: SimTrace,
    fifo: InputFifo,
    regions: [usize; 2],
    spill_base: usize,
    depth: u32,
    port_bytes: usize,
    pass: usize,
}

impl<'a> Run<'a> {
    fn new(core: &'a mut Core) -> Self {
        let limits = core.config.limits;
        let act = activation_layout(&limits);
        Self {
            trace: SimTrace::new(limits.port_bits),
            fifo: InputFifo::default(),
            regions: act.regions,
            spill_base: act.spill_base,
            depth: limits.membrane_buffer_depth,
            port_bytes: limits.port_bytes(),
            pass: 0,
            core,
        }
    }

    fn costs(&self) -> CycleCosts {
        self.core.config.costs
    }

    fn window(&self) -> u32 {
        self.core.window
    }

    fn tick(&mut self, cycles: u64) {
        self.trace.cycles += cycles;
        self.trace.phase_cycles[self.core.fsm.phase.index()] += cycles;
    }

    fn enter(&mut self, phase: Phase) -> Result<()> {
        self.core.fsm.enter(phase)
    }

    fn log(&mut self, event: impl FnOnce() -> String) {
        if let Some(log) = &mut self.core.log {
            let s = self.core.fsm;
            log.push(format!(
                "{} L{} P{} N{} {} {}",
                self.trace.cycles,
                s.layer,
                self.pass,
                s.neuron_out,
                s.phase.name(),
                event()
            ));
        }
    }

    fn segments(&self, kind: LayerKind) -> Vec<Segment> {
        output_segments(kind, self.window(), self.depth)
    }

    fn segment_offset(&self, segments: &[Segment], index: usize, width: usize) -> usize {
        segments_bytes(&segments[..index], width, self.port_bytes)
    }

    /// Writes values into one stored segment; returns the number of flushes.
    fn write_segment(&mut self, base: usize, seg: Segment, values: &[u32]) -> Result<u64> {
        let mut ob = OutputBuffer::new(self.core.config.limits.port_bits, seg.bits, base);
        let mut flushes = 0;
        for &v in values {
            flushes += u64::from(ob.push(&mut self.core.act_mem, v)?);
        }
        flushes += u64::from(ob.finish(&mut self.core.act_mem)?);
        Ok(flushes)
    }

    /// Reads one stored segment through the activation-memory port.
    fn read_segment(&mut self, base: usize, seg: Segment, width: usize) -> Result<Vec<u32>> {
        let bytes = (width * seg.bits as usize).div_ceil(8);
        let data = self
            .core
            .act_mem
            .get(base..base + bytes)
            .ok_or_else(|| {
                Error::Fault(format!(
                    "activation read past memory end at {}",
                    base + bytes
                ))
            })?
            .to_vec();
        let mut cache = BurstCache::new(self.port_bytes);
        let bursts = (base..base + bytes).filter(|&a| cache.touch(a)).count() as u64;
        self.trace.events.act_reads += bursts;
        self.tick(bursts * self.costs().act_burst);
        Ok(unpack(&data, seg.bits, width))
    }

    /// All segments of a stored layer output, in order.
    fn read_stored(&mut self, base: usize, kind: LayerKind, width: usize) -> Result<Vec<Vec<u32>>> {
        let segs = self.segments(kind);
        (0..segs.len())
            .map(|i| {
                let at = base + self.segment_offset(&segs, i, width);
                self.read_segment(at, segs[i], width)
            })
            .collect()
    }

    /// Writes the external input into region 0 in the first layer's representation.
    fn stage_input(&mut self, input: &EncodedInput) -> Result<()> {
        let first = self.core.registers[0];
        let window = self.window();
        let target = EncodeTarget::for_layer(first.kind);
        if input.target() != target {
            self.trace.events.conversions += input.width() as u64;
        }
        let segs = self.segments(first.kind);
        let per_segment: Vec<Vec<u32>> = match first.kind {
            LayerKind::If => {
                let trains = input.to_trains(window);
                segs.iter()
                    .map(|s| {
                        trains
                            .iter()
                            .map(|t| block_mask(t.as_slice(), *s))
                            .collect()
                    })
                    .collect()
            }
            LayerKind::Ssf => vec![input.to_counts(window)],
            LayerKind::Ann => vec![input.to_levels()],
        };
        for (i, values) in per_segment.iter().enumerate() {
            let base = self.regions[0] + self.segment_offset(&segs, i, first.in_width);
            let flushes = self.write_segment(base, segs[i], values)?;
            self.trace.events.act_writes += flushes;
            self.tick(flushes * self.costs().act_burst);
        }
        self.log(|| format!("stage_input width={}", first.in_width));
        Ok(())
    }

    /// Fills the FIFO with layer `l`'s input for the current pass, converting
    /// from the producer's stored representation when the kinds differ.
    fn load_fifo(&mut self, l: usize) -> Result<()> {
        let r = self.core.registers[l];
        let producer = if l == 0 {
            r.kind
        } else {
            self.core.registers[l - 1].kind
        };
        let base = self.regions[l % 2];
        let window = self.window();
        let width = r.in_width;
        let count_width = fifo_width(count_bits(window)).unwrap_or(16);

        let (values, bits) = match (r.kind, producer) {
            (LayerKind::If, LayerKind::If) => {
                let segs = self.segments(LayerKind::If);
                let seg = segs[self.pass];
                let at = base + self.segment_offset(&segs, self.pass, width);
                (self.read_segment(at, seg, width)?, seg.bits)
            }
            (LayerKind::If, p) => {
                let seg = self.segments(LayerKind::If)[self.pass];
                let stored = self.read_stored(base, p, width)?.remove(0);
                self.trace.events.conversions += width as u64;
                let masks = stored
                    .iter()
                    .map(|&v| {
                        let c = if p == LayerKind::Ann {
                            levels_to_count(v, window)
                        } else {
                            v
                        };
                        block_mask(rate_train(c, window).as_slice(), seg)
                    })
                    .collect();
                (masks, seg.bits)
            }
            (LayerKind::Ssf, LayerKind::Ssf)
            | (LayerKind::Ann, LayerKind::Ann)
            | (LayerKind::Ann, LayerKind::Ssf) => {
                let seg = self.segments(producer)[0];
                (self.read_stored(base, producer, width)?.remove(0), seg.bits)
            }
            (LayerKind::Ssf, LayerKind::Ann) => {
                let levels = self.read_stored(base, producer, width)?.remove(0);
                self.trace.events.conversions += width as u64;
                (
                    levels.iter().map(|&a| levels_to_count(a, window)).collect(),
                    count_width,
                )
            }
            (_, LayerKind::If) => {
                let blocks = self.read_stored(base, producer, width)?;
                self.trace.events.conversions += width as u64;
                let counts = (0..width)
                    .map(|i| blocks.iter().map(|b| b[i].count_ones()).sum())
                    .collect();
                (counts, count_width)
            }
        };
        self.fifo.load(&values, bits)?;
        self.trace.events.fifo_loads += 1;
        self.log(|| format!("fifo_load values={} bits={bits}", values.len()));
        Ok(())
    }

    fn layer(&mut self, l: usize) -> Result<()> {
        let r = self.core.registers[l];
        let window = self.window();
        let out_segs = self.segments(r.kind);
        let passes = if r.kind == LayerKind::If {
            out_segs.len()
        } else {
            1
        };
        let out_base = self.regions[(l + 1) % 2];
        let port_bits = self.core.config.limits.port_bits;
        self.core.fsm.layer = l;

        let mut spill_writer = BurstWriter::new(self.port_bytes);
        for pass in 0..passes {
            self.pass = pass;
            self.load_fifo(l)?;
            let seg = out_segs[pass.min(out_segs.len() - 1)];
            let seg_base = out_base
                + self.segment_offset(&out_segs, pass.min(out_segs.len() - 1), r.out_width);
            let mut obuf = OutputBuffer::new(port_bits, seg.bits, seg_base);
            let mut wcache = BurstCache::new(self.port_bytes);
            let mut bcache = BurstCache::new(self.port_bytes);
            let mut spill_cache = BurstCache::new(self.port_bytes);
            let steps = if r.kind == LayerKind::If {
                seg.steps as usize
            } else {
                0
            };
            let mut lanes = [0i64; 16];

            for n in 0..r.out_width {
                self.core.fsm.neuron_out = n;
                self.fifo.rewind();
                let mut acc = 0i64;
                lanes[..steps].iter_mut().for_each(|v| *v = 0);

                for j in 0..r.in_width {
                    self.core.fsm.neuron_in = j;
                    let addr = r.weights_addr + n * r.in_width + j;
                    if wcache.touch(addr) {
                        self.enter(Phase::LoadWeights)?;
                        self.trace.events.weight_reads += 1;
                        self.tick(self.costs().weight_burst);
                        let burst = addr / self.port_bytes * self.port_bytes;
                        self.log(|| format!("weight_burst addr={burst}"));
                    }
                    self.enter(Phase::Accumulate)?;
                    let w = i64::from(self.core.weight_mem[addr] as i8);
                    let x = self.fifo.pop()?;
                    match r.kind {
                        LayerKind::If => {
                            for (t, lane) in lanes[..steps].iter_mut().enumerate() {
                                if x >> t & 1 == 1 {
                                    *lane += w;
                                    self.trace.events.accs += 1;
                                }
                            }
                            self.tick(self.costs().acc);
                        }
                        _ => {
                            acc += w * i64::from(x);
                            self.trace.events.macs += 1;
                            self.tick(self.costs().mac);
                        }
                    }
                }

                self.enter(Phase::Bias)?;
                let baddr = r.biases_addr + 4 * n;
                for a in baddr..baddr + 4 {
                    if bcache.touch(a) {
                        self.trace.events.bias_reads += 1;
                        self.tick(self.costs().bias_burst);
                    }
                }
                let bias = i64::from(i32::from_le_bytes(
                    self.core.weight_mem[baddr..baddr + 4]
                        .try_into()
                        .expect("4 bytes"),
                ));
                self.tick(self.costs().bias);

                self.enter(Phase::Activate)?;
                let theta = i64::from(r.threshold_q);
                let value = match r.kind {
                    LayerKind::Ssf => {
                        let u = acc + r.bias_mode.window_bias(bias, window);
                        self.trace.events.bias_accs += 1;
                        self.trace.events.divides += 1;
                        self.trace.events.divide_steps += u64::from(count_bits(window));
                        self.tick(self.costs().divide);
                        u.fire_count(theta, window)
                    }
                    LayerKind::Ann => {
                        self.trace.events.requants += 1;
                        self.trace.events.bias_accs += 1;
                        self.trace.events.compares += 1;
                        self.tick(self.costs().requant);
                        requantize(
                            acc,
                            bias,
                            r.m_w,
                            r.m_b,
                            r.n_shift.into(),
                            r.m_shift.into(),
                            ACT_BITS,
                        )
                    }
                    LayerKind::If => {
                        let spill_at = self.spill_base + 4 * n;
                        let mut v = if pass > 0 {
                            for a in spill_at..spill_at + 4 {
                                if spill_cache.touch(a) {
                                    self.trace.events.spill_reads += 1;
                                    self.tick(self.costs().act_burst);
                                }
                            }
                            let raw = self.core.act_mem[spill_at..spill_at + 4]
                                .try_into()
                                .expect("4 bytes");
                            i64::from(i32::from_le_bytes(raw))
                        } else {
                            0
                        };
                        let mut mask = 0u32;
                        for (t, &lane) in lanes[..steps].iter().enumerate() {
                            self.core.fsm.timestep = seg.first_step + t as u32;
                            let global = seg.first_step as usize + t;
                            v += lane;
                            if r.bias_mode == BiasMode::Scaled || global == 0 {
                                v += r.bias_mode.step_bias(bias, global);
                                self.trace.events.bias_accs += 1;
                            }
                            if v >= theta {
                                v -= theta;
                                mask |= 1 << t;
                            }
                            self.trace.events.compares += 1;
                            self.tick(self.costs().compare);
                        }
                        if pass + 1 < passes {
                            let residual = i32::try_from(v).map_err(|_| {
                                Error::Fault(format!(
                                    "residual potential {v} overflows the 32-bit spill slot"
                                ))
                            })?;
                            let bursts = spill_writer.write(
                                &mut self.core.act_mem,
                                spill_at,
                                &residual.to_le_bytes(),
                            )?;
                            self.trace.events.spill_writes += bursts;
                            self.tick(bursts * self.costs().act_burst);
                        }
                        mask
                    }
                };

                self.enter(Phase::WriteBack)?;
                if obuf.push(&mut self.core.act_mem, value)? {
                    self.trace.events.act_writes += 1;
                    self.trace.events.output_flushes += 1;
                    self.tick(self.costs().act_burst);
                    self.log(|| "output_flush".into());
                }
                self.tick(self.costs().neuron_overhead);
            }
            if obuf.finish(&mut self.core.act_mem)? {
                self.trace.events.act_writes += 1;
                self.trace.events.output_flushes += 1;
                self.tick(self.costs().act_burst);
                self.log(|| "output_flush segment_end".into());
            }
            let bursts = spill_writer.finish();
            self.trace.events.spill_writes += bursts;
            self.tick(bursts * self.costs().act_burst);
        }
        Ok(())
    }

    fn classify(&mut self) -> Result<(usize, Vec<u32>)> {
        let l = self.core.registers.len();
        let last = self.core.registers[l - 1];
        self.enter(Phase::Classify)?;
        let blocks = self.read_stored(self.regions[l % 2], last.kind, last.out_width)?;
        let scores: Vec<u32> = match last.kind {
            LayerKind::If => (0..last.out_width)
                .map(|i| blocks.iter().map(|b| b[i].count_ones()).sum())
                .collect(),
            _ => blocks.into_iter().next().unwrap_or_default(),
        };
        self.trace.events.classifier_compares += last.out_width as u64;
        self.tick(self.costs().classify * last.out_width as u64);
        let class = argmax(&scores);
        self.log(|| format!("classify class={class}"));
        self.enter(Phase::Done)?;
        self.enter(Phase::Idle)?;
        Ok((class, scores))
    }
}

/// Spike bits of `train` inside `seg`, timestep `first_step` in bit 0.
fn block_mask(train: &[bool], seg: Segment) -> u32 {
    let first = seg.first_step as usize;
    train[first..first + seg.steps as usize]
        .iter()
        .enumerate()
        .fold(0, |m, (t, &s)| m | (u32::from(s) << t))
}

/// Runs one inference on a freshly configured core.
pub fn simulate(
    spec: &NetworkSpec,
    input: &EncodedInput,
    config: &CoreConfig,
) -> Result<SimResult> {
    let mut core = Core::new(*config)?;
    core.load_network(spec)?;
    core.run(input)
}

/// All-SSF model of the given widths with zero weights and unit thresholds.
pub fn ssf_skeleton(input_width: usize, widths: &[usize], window: u32) -> NetworkSpec {
    let mut prev = input_width;
    let layers = widths
        .iter()
        .map(|&w| {
            let l = crate::network::LayerSpec::spiking(LayerKind::Ssf, prev, w, 1);
            prev = w;
            l
        })
        .collect();
    NetworkSpec::new(window, layers)
}

/// Zero input in the first layer's representation.
pub fn zero_input(spec: &NetworkSpec) -> EncodedInput {
    let width = spec.input_width().unwrap_or(0);
    match spec.layers.first().map(|l| l.kind) {
        Some(LayerKind::If) => {
            Activations::Trains(vec![
                crate::neuron::SpikeTrain::zeros(spec.window as usize);
                width
            ])
        }
        Some(LayerKind::Ssf) => Activations::Counts(vec![0; width]),
        _ => Activations::Levels(vec![0; width]),
    }
}
