use std::cmp::Ordering;
use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{proxy_evaluate, Architecture, Dataset, ProxyConfig, SearchSpace};
use crate::energy::{ledger_from_trace, EnergyConfig};
use crate::error::{Error, Result};
use crate::network::HardwareLimits;
use crate::sim::{simulate, ssf_skeleton, zero_input, CoreConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NasConfig {
    pub n_init: usize,
    pub rounds: usize,
    pub k_best: usize,
    pub offspring: usize,
    pub mutation_prob: f64,
    pub proxy: ProxyConfig,
    pub seed: u64,
    pub min_accuracy: Option<f64>,
    pub max_params: Option<usize>,
    /// Score penalty per nJ of estimated inference energy.
    pub lambda: f64,
}

impl Default for NasConfig {
    fn default() -> Self {
        Self {
            n_init: 500,
            rounds: 50,
            k_best: 3,
            offspring: 10,
            mutation_prob: 0.2,
            proxy: ProxyConfig::default(),
            seed: 0,
            min_accuracy: None,
            max_params: None,
            lambda: 0.0,
        }
    }
}

impl NasConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init == 0 || self.k_best == 0 || self.offspring == 0 {
            return Err(Error::InvalidSearch(
                "n_init, k_best and offspring must be at least 1".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.mutation_prob) {
            return Err(Error::InvalidSearch(format!(
                "mutation probability {} outside [0, 1]",
                self.mutation_prob
            )));
        }
        if !self.lambda.is_finite() {
            return Err(Error::InvalidSearch("lambda must be finite".into()));
        }
        Ok(())
    }

    /// `n_init + rounds * k_best * offspring`.
    pub fn evaluator_calls(&self) -> usize {
        self.n_init + self.rounds * self.k_best * self.offspring
    }

    pub fn score(&self, e: &Evaluation) -> f64 {
        e.accuracy - self.lambda * e.energy_nj
    }

    fn feasible(&self, c: &Candidate) -> bool {
        self.min_accuracy.map_or(true, |m| c.accuracy >= m)
            && self.max_params.map_or(true, |m| c.params <= m)
    }
}

/// What an evaluator reports for one architecture. `accuracy` is any
/// higher-is-better quality; analytic evaluators need not be accuracies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub energy_nj: f64,
    pub params: usize,
}

/// Scores architectures. Must be a pure function of `(arch, seed)`.
pub trait Evaluator: Sync {
    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<Evaluation>;
}

/// Brief-training proxy accuracy plus simulated SSF inference energy.
pub struct ProxyEvaluator {
    data: Dataset,
    proxy: ProxyConfig,
    window: u32,
    energy: EnergyConfig,
    core: CoreConfig,
    energy_cache: Mutex<HashMap<Architecture, f64>>,
}

impl ProxyEvaluator {
    pub fn new(
        data: Dataset,
        proxy: ProxyConfig,
        window: u32,
        energy: EnergyConfig,
    ) -> Result<Self> {
        let max_width = HardwareLimits::default().max_width;
        if data.n_features() > max_width {
            return Err(Error::Dataset(format!(
                "{} features exceed the {max_width}-wide input layer",
                data.n_features()
            )));
        }
        energy.validate()?;
        // Energy is estimated for every architecture, including ones whose
        // weights exceed the on-chip memory; `max_params` filters those.
        let limits = HardwareLimits {
            weight_mem_bytes: 1 << 20,
            ..HardwareLimits::default()
        };
        let core = CoreConfig {
            limits,
            clock_hz: energy.clock_hz,
            ..CoreConfig::default()
        };
        Ok(Self {
            data,
            proxy,
            window,
            energy,
            core,
            energy_cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn energy_nj(&self, arch: &Architecture) -> Result<f64> {
        if let Some(&e) = self.energy_cache.lock().expect("cache lock").get(arch) {
            return Ok(e);
        }
        let spec = ssf_skeleton(self.data.n_features(), &arch.widths, self.window);
        let trace = simulate(&spec, &zero_input(&spec), &self.core)?.trace;
        let e = ledger_from_trace(&trace, &self.energy)?.total_nj();
        self.energy_cache
            .lock()
            .expect("cache lock")
            .insert(arch.clone(), e);
        Ok(e)
    }
}

impl Evaluator for ProxyEvaluator {
    fn evaluate(&self, arch: &Architecture, seed: u64) -> Result<Evaluation> {
        Ok(Evaluation {
            accuracy: proxy_evaluate(&arch.widths, &self.data, &self.proxy, seed)?,
            energy_nj: self.energy_nj(arch)?,
            params: arch.param_count(self.data.n_features()),
        })
    }
}

/// Analytic evaluator: quality is the negated parameter count.
pub struct ParamCountEvaluator {
    pub n_inputs: usize,
}

impl Evaluator for ParamCountEvaluator {
    fn evaluate(&self, arch: &Architecture, _seed: u64) -> Result<Evaluation> {
        let params = arch.param_count(self.n_inputs);
        Ok(Evaluation {
            accuracy: -(params as f64),
            energy_nj: 0.0,
            params,
        })
    }
}

/// Same quality for every architecture.
pub struct ConstantEvaluator {
    pub value: f64,
    pub n_inputs: usize,
}

impl Evaluator for ConstantEvaluator {
    fn evaluate(&self, arch: &Architecture, _seed: u64) -> Result<Evaluation> {
        Ok(Evaluation {
            accuracy: self.value,
            energy_nj: 0.0,
            params: arch.param_count(self.n_inputs),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: usize,
    pub architecture: Architecture,
    pub accuracy: f64,
    pub energy_nj: f64,
    pub params: usize,
    pub score: f64,
    pub parent: Option<usize>,
    pub round: usize,
}

/// Higher score first, then lexicographically smaller architecture, then lower id.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.architecture.cmp(&b.architecture))
        .then(a.id.cmp(&b.id))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub history: Vec<Candidate>,
    /// Best feasible score after initialization and after each round.
    pub best_scores: Vec<f64>,
    pub evaluator_calls: usize,
}

/// Per-candidate seed derived from the search seed.
fn candidate_seed(seed: u64, id: usize) -> u64 {
    let mut z = seed
        ^ (id as u64)
            .wrapping_add(1)
            .wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Pending {
    id: usize,
    architecture: Architecture,
    parent: Option<usize>,
    round: usize,
}

fn evaluate_all(
    pending: Vec<Pending>,
    cfg: &NasConfig,
    evaluator: &dyn Evaluator,
) -> Result<Vec<Candidate>> {
    pending
        .into_par_iter()
        .map(|p| {
            let e = evaluator.evaluate(&p.architecture, candidate_seed(cfg.seed, p.id))?;
            let score = cfg.score(&e);
            if !score.is_finite() {
                return Err(Error::InvalidSearch(format!(
                    "non-finite score for {}",
                    p.architecture
                )));
            }
            Ok(Candidate {
                id: p.id,
                architecture: p.architecture,
                accuracy: e.accuracy,
                energy_nj: e.energy_nj,
                params: e.params,
                score,
                parent: p.parent,
                round: p.round,
            })
        })
        .collect()
}

fn top_feasible<'a>(history: &'a [Candidate], cfg: &NasConfig, k: usize) -> Vec<&'a Candidate> {
    let mut feasible: Vec<&Candidate> = history.iter().filter(|c| cfg.feasible(c)).collect();
    feasible.sort_by(|a, b| rank(a, b));
    feasible.truncate(k);
    feasible
}

/// Evolutionary search: `n_init` random candidates, then `rounds` of picking the
/// `k_best` feasible candidates seen so far and evaluating `offspring` mutants of each.
pub fn search(
    space: &SearchSpace,
    cfg: &NasConfig,
    evaluator: &dyn Evaluator,
) -> Result<SearchOutcome> {
    space.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let init = (0..cfg.n_init)
        .map(|id| Pending {
            id,
            architecture: space.sample(&mut rng),
            parent: None,
            round: 0,
        })
        .collect();
    let mut history = evaluate_all(init, cfg, evaluator)?;
    let mut calls = cfg.n_init;

    let parents = top_feasible(&history, cfg, cfg.k_best);
    if parents.is_empty() {
        let best_effort = history
            .iter()
            .min_by(|a, b| rank(a, b))
            .expect("n_init >= 1");
        return Err(Error::Infeasible {
            best_effort: format!(
                "{} score {:.6} params {}",
                best_effort.architecture, best_effort.score, best_effort.params
            ),
        });
    }
    let mut best_scores = vec![parents[0].score];

    for round in 1..=cfg.rounds {
        let parents: Vec<(usize, Architecture)> = top_feasible(&history, cfg, cfg.k_best)
            .into_iter()
            .map(|c| (c.id, c.architecture.clone()))
            .collect();
        let mut pending = Vec::with_capacity(cfg.k_best * cfg.offspring);
        for slot in 0..cfg.k_best {
            let (pid, arch) = &parents[slot % parents.len()];
            for _ in 0..cfg.offspring {
                pending.push(Pending {
                    id: history.len() + pending.len(),
                    architecture: space.mutate(arch, cfg.mutation_prob, &mut rng),
                    parent: Some(*pid),
                    round,
                });
            }
        }
        calls += pending.len();
        history.extend(evaluate_all(pending, cfg, evaluator)?);
        best_scores.push(top_feasible(&history, cfg, 1)[0].score);
    }

    let best = top_feasible(&history, cfg, 1)[0].clone();
    Ok(SearchOutcome {
        best,
        history,
        best_scores,
        evaluator_calls: calls,
    })
}

/// One JSON object per line.
pub fn write_history(history: &[Candidate], mut out: impl Write) -> Result<()> {
    for c in history {
        serde_json::to_writer(&mut out, c)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_history(input: impl BufRead) -> Result<Vec<Candidate>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NasConfig {
        NasConfig {
            n_init: 40,
            rounds: 5,
            ..NasConfig::default()
        }
    }

    #[test]
    fn call_count_follows_formula() {
        let out = search(
            &SearchSpace::default(),
            &NasConfig::default(),
            &ParamCountEvaluator { n_inputs: 128 },
        )
        .unwrap();
        assert_eq!(out.evaluator_calls, 2000);
        assert_eq!(out.history.len(), 2000);
        assert_eq!(out.best.architecture.widths, vec![16, 16, 16]);
    }

    #[test]
    fn best_score_never_decreases() {
        let out = search(
            &SearchSpace::default(),
            &small(),
            &ParamCountEvaluator { n_inputs: 20 },
        )
        .unwrap();
        assert!(out.best_scores.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(out.best_scores.len(), 6);
    }

    #[test]
    fn constant_evaluator_breaks_ties_by_architecture() {
        let out = search(
            &SearchSpace::default(),
            &small(),
            &ConstantEvaluator {
                value: 0.5,
                n_inputs: 8,
            },
        )
        .unwrap();
        let smallest = out.history.iter().map(|c| &c.architecture).min().unwrap();
        assert_eq!(&out.best.architecture, smallest);
        let again = search(
            &SearchSpace::default(),
            &small(),
            &ConstantEvaluator {
                value: 0.5,
                n_inputs: 8,
            },
        )
        .unwrap();
        assert_eq!(out.history, again.history);
    }

    #[test]
    fn impossible_param_budget_is_infeasible() {
        let cfg = NasConfig {
            max_params: Some(10),
            ..small()
        };
        let err = search(
            &SearchSpace::default(),
            &cfg,
            &ParamCountEvaluator { n_inputs: 8 },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Infeasible { .. }));
    }

    #[test]
    fn constraints_filter_parents() {
        let cfg = NasConfig {
            max_params: Some(5000),
            ..small()
        };
        let out = search(
            &SearchSpace::default(),
            &cfg,
            &ConstantEvaluator {
                value: 1.0,
                n_inputs: 16,
            },
        )
        .unwrap();
        assert!(out.best.params <= 5000);
        for c in out.history.iter().filter(|c| c.parent.is_some()) {
            assert!(out.history[c.parent.unwrap()].params <= 5000);
        }
    }

    #[test]
    fn history_round_trips_as_json_lines() {
        let out = search(
            &SearchSpace::default(),
            &small(),
            &ParamCountEvaluator { n_inputs: 4 },
        )
        .unwrap();
        let mut buf = Vec::new();
        write_history(&out.history, &mut buf).unwrap();
        assert_eq!(
            buf.iter().filter(|&&b| b == b'\n').count(),
            out.history.len()
        );
        assert_eq!(read_history(buf.as_slice()).unwrap(), out.history);
        assert!(matches!(
            read_history(&b"{}\n"[..]),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn bad_config_is_rejected() {
        let cfg = NasConfig {
            mutation_prob: 1.5,
            ..small()
        };
        assert!(search(
            &SearchSpace::default(),
            &cfg,
            &ParamCountEvaluator { n_inputs: 4 }
        )
        .is_err());
    }
}
