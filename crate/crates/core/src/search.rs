// Copyright 2026 The gancomp Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Budgeted selection of a sub-network: exhaustive enumeration and
//! regularized evolution, both scoring candidates directly on validation
//! data without retraining.

use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::{Deserialize, Serialize};

use crate::arch::{ChannelConfig, ChoiceSets, GeneratorSpec};
use crate::cost::generator_cost;
use crate::error::{Error, Result};
use crate::metrics;
use crate::tensor::Tensor;
use crate::trainer::TrainedModel;

/// Largest space brute force will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;
const INIT_DRAWS: usize = 10_000;
const MUTATION_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ffd,
    L1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algo {
    Brute,
    Evolution,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub config: ChannelConfig,
    pub macs: u64,
    pub params: u64,
    /// Lower is better.
    pub fitness: f64,
    /// Evaluation index at which the candidate was born (evolution only).
    pub age: Option<u64>,
}

impl Candidate {
    /// Fitness, then MACs, then lexicographic configuration.
    pub fn rank(&self, other: &Candidate) -> Ordering {
        self.fitness
            .total_cmp(&other.fitness)
            .then(self.macs.cmp(&other.macs))
            .then_with(|| self.config.cmp(&other.config))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionParams {
    pub population_size: usize,
    pub sample_size: usize,
    pub cycles: usize,
    pub mutation_prob: f64,
    pub seed: u64,
}

impl Default for EvolutionParams {
    fn default() -> Self {
        EvolutionParams {
            population_size: 32,
            sample_size: 8,
            cycles: 1024,
            mutation_prob: 0.25,
            seed: 0,
        }
    }
}

impl EvolutionParams {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size < 2 || self.sample_size > self.population_size {
            return Err(Error::SearchParams(format!(
                "need 2 <= sample_size ({}) <= population_size ({})",
                self.sample_size, self.population_size
            )));
        }
        if !(self.mutation_prob > 0.0 && self.mutation_prob <= 1.0) {
            return Err(Error::SearchParams(format!(
                "mutation_prob {} must lie in (0, 1]",
                self.mutation_prob
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: Candidate,
    /// Every evaluation in order, cache hits included.
    pub trace: Vec<Candidate>,
    pub evaluations: u64,
}

/// Scores a configuration; lower is better.
pub trait Fitness {
    fn fitness(&mut self, config: &ChannelConfig) -> Result<f64>;
}

impl<F: FnMut(&ChannelConfig) -> Result<f64>> Fitness for F {
    fn fitness(&mut self, config: &ChannelConfig) -> Result<f64> {
        self(config)
    }
}

/// `(MACs, params)` of a configuration.
pub trait CostFn {
    fn cost(&self, config: &ChannelConfig) -> Result<(u64, u64)>;
}

impl<F: Fn(&ChannelConfig) -> Result<(u64, u64)>> CostFn for F {
    fn cost(&self, config: &ChannelConfig) -> Result<(u64, u64)> {
        self(config)
    }
}

/// Analytic cost of sub-networks of `spec` at `resolution`.
pub struct SpecCost {
    pub spec: GeneratorSpec,
    pub resolution: usize,
}

impl CostFn for SpecCost {
    fn cost(&self, config: &ChannelConfig) -> Result<(u64, u64)> {
        let r = generator_cost(&self.spec, Some(config), self.resolution)?;
        Ok((r.total_macs, r.total_params))
    }
}

/// Every configuration once, in lexicographic order (last group fastest).
pub fn enumerate_space(sets: &ChoiceSets) -> SpaceIter<'_> {
    SpaceIter {
        sets,
        digits: vec![0; sets.num_groups()],
        done: sets.0.iter().any(Vec::is_empty),
    }
}

pub struct SpaceIter<'a> {
    sets: &'a ChoiceSets,
    digits: Vec<usize>,
    done: bool,
}

impl Iterator for SpaceIter<'_> {
    type Item = ChannelConfig;

    fn next(&mut self) -> Option<ChannelConfig> {
        if self.done {
            return None;
        }
        let out = ChannelConfig(
            self.digits
                .iter()
                .zip(&self.sets.0)
                .map(|(&d, s)| s[d])
                .collect(),
        );
        self.done = true;
        for k in (0..self.digits.len()).rev() {
            self.digits[k] += 1;
            if self.digits[k] < self.sets.0[k].len() {
                self.done = false;
                break;
            }
            self.digits[k] = 0;
        }
        Some(out)
    }
}

/// Validation score of the supernet's sub-network at `config`: FFD of its
/// outputs against `references`, or the mean per-image L1 to them.
pub fn evaluate(
    supernet: &TrainedModel,
    config: &ChannelConfig,
    inputs: &Tensor,
    references: &Tensor,
    metric: Metric,
) -> Result<f64> {
    let out = supernet.translate(Some(config), inputs)?;
    match metric {
        Metric::Ffd => metrics::ffd(&out, references),
        Metric::L1 => Ok(metrics::pixel_metrics(&out, references)?.l1),
    }
}

/// [`evaluate`] bound to a model and validation set.
pub struct ValidationFitness<'a> {
    pub model: &'a TrainedModel,
    pub inputs: &'a Tensor,
    pub references: &'a Tensor,
    pub metric: Metric,
}

impl Fitness for ValidationFitness<'_> {
    fn fitness(&mut self, config: &ChannelConfig) -> Result<f64> {
        evaluate(
            self.model,
            config,
            self.inputs,
            self.references,
            self.metric,
        )
    }
}

/// Memoizes fitness and cost by configuration.
struct Scorer<'a> {
    fitness: &'a mut dyn Fitness,
    cost: &'a dyn CostFn,
    fit_cache: HashMap<ChannelConfig, f64>,
    cost_cache: HashMap<ChannelConfig, (u64, u64)>,
    trace: Vec<Candidate>,
}

impl<'a> Scorer<'a> {
    fn new(fitness: &'a mut dyn Fitness, cost: &'a dyn CostFn) -> Self {
        Scorer {
            fitness,
            cost,
            fit_cache: HashMap::new(),
            cost_cache: HashMap::new(),
            trace: Vec::new(),
        }
    }

    fn cost(&mut self, c: &ChannelConfig) -> Result<(u64, u64)> {
        if let Some(&v) = self.cost_cache.get(c) {
            return Ok(v);
        }
        let v = self.cost.cost(c)?;
        self.cost_cache.insert(c.clone(), v);
        Ok(v)
    }

    fn in_budget(&mut self, c: &ChannelConfig, budget: u64) -> Result<bool> {
        Ok(self.cost(c)?.0 < budget)
    }

    fn evaluate(&mut self, c: &ChannelConfig, age: Option<u64>) -> Result<Candidate> {
        let (macs, params) = self.cost(c)?;
        let fitness = match self.fit_cache.get(c) {
            Some(&f) => f,
            None => {
                let f = self.fitness.fitness(c)?;
                if !f.is_finite() {
                    return Err(Error::Stats(format!("fitness of {c} is not finite")));
                }
                self.fit_cache.insert(c.clone(), f);
                f
            }
        };
        let cand = Candidate {
            config: c.clone(),
            macs,
            params,
            fitness,
            age,
        };
        self.trace.push(cand.clone());
        Ok(cand)
    }

    fn finish(self) -> SearchResult {
        let best = self
            .trace
            .iter()
            .min_by(|a, b| a.rank(b))
            .expect("at least one evaluation")
            .clone();
        SearchResult {
            best,
            evaluations: self.trace.len() as u64,
            trace: self.trace,
        }
    }
}

/// Evaluates every configuration with MACs strictly below `budget` and
/// returns the best.
pub fn brute_force_search(
    sets: &ChoiceSets,
    budget: u64,
    cost: &dyn CostFn,
    fitness: &mut dyn Fitness,
) -> Result<SearchResult> {
    let size = sets.size();
    if size > BRUTE_FORCE_LIMIT {
        return Err(Error::SpaceTooLarge {
            size,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    let mut s = Scorer::new(fitness, cost);
    for c in enumerate_space(sets) {
        if s.in_budget(&c, budget)? {
            s.evaluate(&c, None)?;
        }
    }
    if s.trace.is_empty() {
        return Err(Error::InfeasibleBudget { budget });
    }
    Ok(s.finish())
}

/// Regularized evolution: tournament selection, per-gene mutation with
/// budget rejection, and removal of the oldest member each cycle.
pub fn evolution_search(
    sets: &ChoiceSets,
    budget: u64,
    cost: &dyn CostFn,
    fitness: &mut dyn Fitness,
    params: &EvolutionParams,
) -> Result<SearchResult> {
    params.validate()?;
    let mut rng = SplitMix64::seed_from_u64(params.seed);
    let mut s = Scorer::new(fitness, cost);
    let mut population: VecDeque<Candidate> = VecDeque::with_capacity(params.population_size);
    let mut born = 0u64;

    let mut draws = 0;
    while population.len() < params.population_size {
        if draws == INIT_DRAWS {
            return Err(Error::InfeasibleBudget { budget });
        }
        draws += 1;
        let c = sets.sample(&mut rng);
        if s.in_budget(&c, budget)? {
            population.push_back(s.evaluate(&c, Some(born))?);
            born += 1;
        }
    }

    for _ in 0..params.cycles {
        let child = 'search: loop {
            let parent = population
                .make_contiguous()
                .choose_multiple(&mut rng, params.sample_size)
                .min_by(|a, b| a.rank(b))
                .expect("sample is non-empty")
                .config
                .clone();
            for _ in 0..MUTATION_RETRIES {
                let child = mutate(&parent, sets, params.mutation_prob, &mut rng);
                if s.in_budget(&child, budget)? {
                    break 'search child;
                }
            }
        };
        population.push_back(s.evaluate(&child, Some(born))?);
        born += 1;
        population.pop_front();
    }
    Ok(s.finish())
}

fn mutate<R: Rng>(parent: &ChannelConfig, sets: &ChoiceSets, p: f64, rng: &mut R) -> ChannelConfig {
    ChannelConfig(
        parent
            .0
            .iter()
            .zip(&sets.0)
            .map(|(&w, set)| {
                if rng.gen_bool(p) {
                    set[rng.gen_range(0..set.len())]
                } else {
                    w
                }
            })
            .collect(),
    )
}
