use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{LayerKind, ACT_MAX};
use crate::error::{Error, Result};
use crate::neuron::{count_spikes, SpikeTrain};

/// Values carried between layers, in the representation one layer produces.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Activations {
    /// One spike train per neuron (IF).
    Trains(Vec<SpikeTrain>),
    /// One spike count in `[0, T]` per neuron (SSF).
    Counts(Vec<u32>),
    /// One 8-bit activation per neuron (quantized ANN).
    Levels(Vec<u32>),
}

/// Network input: same shapes as inter-layer activations.
pub type EncodedInput = Activations;

impl Activations {
    pub fn width(&self) -> usize {
        match self {
            Activations::Trains(t) => t.len(),
            Activations::Counts(c) | Activations::Levels(c) => c.len(),
        }
    }

    pub fn target(&self) -> EncodeTarget {
        match self {
            Activations::Trains(_) => EncodeTarget::Train,
            Activations::Counts(_) => EncodeTarget::Count,
            Activations::Levels(_) => EncodeTarget::Level,
        }
    }

    /// Rejects trains of the wrong length and out-of-range counts or levels.
    pub fn check(&self, window: u32) -> Result<()> {
        match self {
            Activations::Trains(trains) => {
                if let Some(t) = trains.iter().find(|t| t.window() != window as usize) {
                    return Err(Error::Representation(format!(
                        "spike train of length {} in a window of {window}",
                        t.window()
                    )));
                }
            }
            Activations::Counts(counts) => {
                if let Some(&c) = counts.iter().find(|&&c| c > window) {
                    return Err(Error::Representation(format!(
                        "spike count {c} exceeds window {window}"
                    )));
                }
            }
            Activations::Levels(levels) => {
                if let Some(&a) = levels.iter().find(|&&a| a > ACT_MAX) {
                    return Err(Error::Representation(format!(
                        "activation {a} exceeds {ACT_MAX}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spike counts: trains are counted, ANN levels rescaled onto `[0, T]`.
    pub fn to_counts(&self, window: u32) -> Vec<u32> {
        match self {
            Activations::Trains(t) => t.iter().map(|t| count_spikes(t).get()).collect(),
            Activations::Counts(c) => c.clone(),
            Activations::Levels(a) => a.iter().map(|&a| levels_to_count(a, window)).collect(),
        }
    }

    /// Spike trains with evenly spread spikes for count-coded inputs.
    pub fn to_trains(&self, window: u32) -> Vec<SpikeTrain> {
        match self {
            Activations::Trains(t) => t.clone(),
            other => other
                .to_counts(window)
                .into_iter()
                .map(|c| rate_train(c, window))
                .collect(),
        }
    }

    /// ANN inputs: spike counts pass through as integer activations.
    pub fn to_levels(&self) -> Vec<u32> {
        match self {
            Activations::Trains(t) => t.iter().map(|t| count_spikes(t).get()).collect(),
            Activations::Counts(c) | Activations::Levels(c) => c.clone(),
        }
    }

    /// Per-neuron value the classifier compares.
    pub fn scores(&self) -> Vec<u32> {
        self.to_levels()
    }
}

/// `round(a / (2^8 - 1) * T)` with halves rounded up.
#[inline]
pub fn levels_to_count(level: u32, window: u32) -> u32 {
    (2 * level * window + ACT_MAX) / (2 * ACT_MAX)
}

/// Evenly spread train with exactly `count` spikes: a spike at step `t` whenever
/// `floor(t * count / T)` increments.
pub fn rate_train(count: u32, window: u32) -> SpikeTrain {
    let (c, w) = (u64::from(count), u64::from(window));
    SpikeTrain::from_bools((0..w).map(|t| (t + 1) * c / w != t * c / w).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncodeTarget {
    Train,
    Count,
    Level,
}

impl EncodeTarget {
    /// Representation consumed by the first layer of the given kind.
    pub fn for_layer(kind: LayerKind) -> Self {
        match kind {
            LayerKind::If => EncodeTarget::Train,
            LayerKind::Ssf => EncodeTarget::Count,
            LayerKind::Ann => EncodeTarget::Level,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EncodeTarget::Train => "train",
            EncodeTarget::Count => "count",
            EncodeTarget::Level => "level",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(EncodeTarget::Train),
            "count" => Some(EncodeTarget::Count),
            "level" => Some(EncodeTarget::Level),
            _ => None,
        }
    }
}

/// Rate-codes values in `[0, 1]`: `count = round(v * T)`, `level = round(v * 255)`.
pub fn rate_encode(values: &[f64], window: u32, target: EncodeTarget) -> Result<EncodedInput> {
    if let Some((index, &value)) = values
        .iter()
        .enumerate()
        .find(|(_, v)| !(0.0..=1.0).contains(*v))
    {
        return Err(Error::ValueOutOfRange { index, value });
    }
    let counts = || {
        values
            .iter()
            .map(|&v| (v * f64::from(window)).round() as u32)
    };
    Ok(match target {
        EncodeTarget::Count => Activations::Counts(counts().collect()),
        EncodeTarget::Train => {
            Activations::Trains(counts().map(|c| rate_train(c, window)).collect())
        }
        EncodeTarget::Level => Activations::Levels(
            values
                .iter()
                .map(|&v| (v * f64::from(ACT_MAX)).round() as u32)
                .collect(),
        ),
    })
}

/// Rows of comma-separated reals. A first row that does not parse is taken as
/// a header; errors carry 1-based line numbers.
pub fn parse_value_rows(text: &str) -> Result<Vec<Vec<f64>>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first = true;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(row) => {
                if let Some(prev) = rows.first() {
                    if prev.len() != row.len() {
                        return Err(Error::Parse {
                            line: i + 1,
                            message: format!("{} values, expected {}", row.len(), prev.len()),
                        });
                    }
                }
                if let Some(v) = row.iter().find(|v| !v.is_finite()) {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("non-finite value {v}"),
                    });
                }
                rows.push(row);
            }
            Err(_) if first => {}
            Err(_) => {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "non-numeric cell".into(),
                })
            }
        }
        first = false;
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: "no data rows".into(),
        });
    }
    Ok(rows)
}

/// Rescales every column to `[0, 1]` by its own minimum and maximum; constant
/// columns become zero.
pub fn normalize_columns(rows: &mut [Vec<f64>]) {
    let width = rows.first().map_or(0, Vec::len);
    for c in 0..width {
        let (lo, hi) = rows
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| {
                (lo.min(r[c]), hi.max(r[c]))
            });
        for r in rows.iter_mut() {
            r[c] = if hi > lo {
                (r[c] - lo) / (hi - lo)
            } else {
                0.0
            };
        }
    }
}

/// A file of encoded samples sharing one target, window and width.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub target: EncodeTarget,
    pub window: u32,
    pub width: usize,
    pub samples: Vec<EncodedInput>,
}

const HEADER: &str = "# sparrow encoded input v1";

impl EncodedBatch {
    pub fn encode(rows: &[Vec<f64>], window: u32, target: EncodeTarget) -> Result<Self> {
        let width = rows.first().map_or(0, Vec::len);
        let samples = rows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if row.len() != width {
                    return Err(Error::Parse {
                        line: i + 1,
                        message: format!("{} values, expected {width}", row.len()),
                    });
                }
                rate_encode(row, window, target).map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            target,
            window,
            width,
            samples,
        })
    }

    /// Line-oriented text: a header, a `key=value` line, then one sample per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{HEADER}");
        let _ = writeln!(
            out,
            "target={} window={} width={} samples={}",
            self.target.name(),
            self.window,
            self.width,
            self.samples.len()
        );
        for s in &self.samples {
            let cells: Vec<String> = match s {
                Activations::Trains(t) => t.iter().map(ToString::to_string).collect(),
                Activations::Counts(v) | Activations::Levels(v) => {
                    v.iter().map(ToString::to_string).collect()
                }
            };
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let perr = |line: usize, message: String| Error::Parse {
            line: line + 1,
            message,
        };

        match lines.next() {
            Some((_, l)) if l.trim() == HEADER => {}
            Some((n, l)) => return Err(perr(n, format!("unexpected header `{l}`"))),
            None => return Err(perr(0, "empty encoded input".into())),
        }
        let (n, meta) = lines
            .next()
            .ok_or_else(|| perr(1, "missing metadata line".into()))?;
        let (mut target, mut window, mut width, mut samples) = (None, None, None, None);
        for field in meta.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| perr(n, format!("malformed field `{field}`")))?;
            let num = || {
                v.parse::<usize>()
                    .map_err(|_| perr(n, format!("bad number `{v}` for `{k}`")))
            };
            match k {
                "target" => {
                    target = Some(
                        EncodeTarget::parse(v)
                            .ok_or_else(|| perr(n, format!("unknown target `{v}`")))?,
                    )
                }
                "window" => window = Some(num()? as u32),
                "width" => width = Some(num()?),
                "samples" => samples = Some(num()?),
                _ => return Err(perr(n, format!("unknown field `{k}`"))),
            }
        }
        let target = target.ok_or_else(|| perr(n, "missing target".into()))?;
        let window = window.ok_or_else(|| perr(n, "missing window".into()))?;
        let width = width.ok_or_else(|| perr(n, "missing width".into()))?;
        let expected = samples.ok_or_else(|| perr(n, "missing samples".into()))?;

        let mut parsed = Vec::with_capacity(expected);
        for (n, line) in lines {
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != width {
                return Err(perr(n, format!("{} cells, expected {width}", cells.len())));
            }
            let sample = match target {
                EncodeTarget::Train => Activations::Trains(
                    cells
                        .iter()
                        .map(|c| {
                            let bits: Vec<u8> = c.bytes().map(|b| b.wrapping_sub(b'0')).collect();
                            SpikeTrain::from_bits(&bits).map_err(|e| perr(n, e.to_string()))
                        })
                        .collect::<Result<_>>()?,
                ),
                _ => {
                    let v = cells
                        .iter()
                        .map(|c| {
                            c.parse::<u32>()
                                .map_err(|_| perr(n, format!("non-numeric cell `{c}`")))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    if target == EncodeTarget::Count {
                        Activations::Counts(v)
                    } else {
                        Activations::Levels(v)
                    }
                }
            };
            sample.check(window).map_err(|e| perr(n, e.to_string()))?;
            parsed.push(sample);
        }
        if parsed.len() != expected {
            return Err(perr(
                n,
                format!("header declares {expected} samples, found {}", parsed.len()),
            ));
        }
        Ok(Self {
            target,
            window,
            width,
            samples: parsed,
        })
    }
}
