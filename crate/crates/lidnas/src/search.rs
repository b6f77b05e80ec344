//! The assisted tabu search engine: population seeding, score-based ranking,
//! six-parent selection, and the per-parent loop that mutates the current
//! architecture, trains only the highest-reward child, and falls back to the
//! best tabu record on rejection.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::evaluator::{reward, Evaluator, Sample, TrainConfig};
use crate::genome::{ArchitectureGenome, SearchSpaceConfig};
use crate::mutation::{MutationRecord, Mutator};
use crate::net::{compile, init_params, Tensor};
use crate::scorer::{score, ScoreReport};
use crate::{Error, Result};

/// Number of parent architectures taken from the initial ranking: the three
/// highest-ranked plus the three best-scored near the target size.
pub const PARENT_COUNT: usize = 6;

/// Fraction of the population defining the "closest to target size" band.
pub const CLOSENESS_PERCENTILE: f64 = 0.05;

/// Probe batch size shared by every candidate in a run.
pub const PROBE_BATCH_SIZE: usize = 32;

/// Derives a child seed from a master seed, a domain tag, and a payload.
/// Used for every stream split so parallel and serial runs agree.
pub fn derive_seed(master: u64, domain: &str, payload: &[u8]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(domain.as_bytes());
    hasher.update(payload);
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

/// One row of the initial (or final) ranking.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingEntry {
    pub hash: String,
    pub score: f64,
    pub n_a: usize,
    pub params: u64,
    pub degenerate: bool,
}

/// Sort key: degenerate entries last, then score descending, then hash.
pub fn ranking_order(a: &RankingEntry, b: &RankingEntry) -> std::cmp::Ordering {
    a.degenerate
        .cmp(&b.degenerate)
        .then(b.score.total_cmp(&a.score))
        .then(a.hash.cmp(&b.hash))
}

/// A fully evaluated architecture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub genome: ArchitectureGenome,
    pub hash: String,
    pub score: f64,
    pub n_a: usize,
    pub params: u64,
    pub grade: f64,
    pub accuracy: f64,
}

/// A tabu entry: the visited architecture plus whatever was measured for it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabuRecord {
    pub genome: ArchitectureGenome,
    pub hash: String,
    pub score: f64,
    pub n_a: usize,
    pub params: u64,
    pub grade: Option<f64>,
    pub accuracy: Option<f64>,
    pub reward: Option<f64>,
    pub inserted_at: u32,
}

/// Bounded FIFO memory of visited/rejected architectures.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TabuList {
    records: VecDeque<TabuRecord>,
    tenure: usize,
}

impl TabuList {
    pub fn new(tenure: usize) -> Self {
        TabuList {
            records: VecDeque::new(),
            tenure: tenure.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn contains(&self, hash: &str) -> bool {
        self.records.iter().any(|r| r.hash == hash)
    }

    pub fn push(&mut self, record: TabuRecord) {
        self.records.push_back(record);
        while self.records.len() > self.tenure {
            self.records.pop_front();
        }
    }

    /// Index of the best stored option: highest recorded grade, or highest
    /// reward when nothing stored is graded. Ties break by hash.
    pub fn best_fallback(&self) -> Option<usize> {
        let graded = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.grade.is_some())
            .max_by(|(_, a), (_, b)| {
                a.grade
                    .unwrap()
                    .total_cmp(&b.grade.unwrap())
                    .then(b.hash.cmp(&a.hash))
            });
        if let Some((idx, _)) = graded {
            return Some(idx);
        }
        self.records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.reward.is_some())
            .max_by(|(_, a), (_, b)| {
                a.reward
                    .unwrap()
                    .total_cmp(&b.reward.unwrap())
                    .then(b.hash.cmp(&a.hash))
            })
            .map(|(idx, _)| idx)
    }

    pub fn remove(&mut self, index: usize) -> TabuRecord {
        self.records.remove(index).expect("index in range")
    }

    pub fn records(&self) -> impl Iterator<Item = &TabuRecord> {
        self.records.iter()
    }
}

/// Per-parent search bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchState {
    /// Hash of the originating parent (names the trajectory file).
    pub parent_hash: String,
    pub current: Candidate,
    pub best: Candidate,
    pub iteration: u32,
    pub no_improvement: u32,
    pub tabu: TabuList,
    /// Stream seed for this parent; per-iteration seeds derive from it.
    pub seed: u64,
}

/// One per-iteration row behind the trajectory charts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryRecord {
    pub iteration: u32,
    /// Trained child hash; empty on a stalled step.
    pub child_hash: Option<String>,
    pub reward: Option<f64>,
    pub accuracy: f64,
    pub params: u64,
    pub grade: f64,
    pub accepted: bool,
    pub tabu_size: usize,
}

/// One row of evals.csv.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub hash: String,
    pub accuracy: f64,
    pub params: u64,
    pub grade: f64,
    pub epochs: usize,
}

/// Everything produced by one step.
#[derive(Debug)]
pub struct StepOutcome {
    pub record: TrajectoryRecord,
    pub stalled: bool,
    pub eval: Option<EvalRow>,
    pub proposals: Vec<MutationRecord>,
}

/// Result of one parent's full loop.
#[derive(Debug, Clone)]
pub struct ParentRun {
    pub parent_hash: String,
    pub trajectory: Vec<TrajectoryRecord>,
    pub best: Candidate,
    pub evals: Vec<EvalRow>,
    pub proposals: Vec<MutationRecord>,
}

/// Result of the full search.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub initial_ranking: Vec<RankingEntry>,
    pub final_ranking: Vec<RankingEntry>,
    pub parent_runs: Vec<ParentRun>,
    /// Set when the space held fewer unique genomes than requested.
    pub population_warning: bool,
}

/// The search engine: one immutable bundle of space, task, objective, and
/// seeds, shared by every parent run.
pub struct SearchEngine<'a> {
    pub space: &'a SearchSpaceConfig,
    pub train_samples: &'a [Sample],
    pub val_samples: &'a [Sample],
    pub train_config: &'a TrainConfig,
    pub target_params: u64,
    pub alpha: f64,
    pub probe: Tensor,
    pub master_seed: u64,
    pub children_per_step: usize,
    pub tabu_tenure: usize,
}

impl SearchEngine<'_> {
    fn evaluator(&self) -> Evaluator<'_> {
        Evaluator {
            train_samples: self.train_samples,
            val_samples: self.val_samples,
            train_config: self.train_config,
            target_params: self.target_params,
            alpha: self.alpha,
        }
    }

    /// Initialization seed of a candidate, a pure function of the master
    /// seed and the genome hash.
    pub fn init_seed(&self, hash: &str) -> u64 {
        derive_seed(self.master_seed, "init", hash.as_bytes())
    }

    fn train_seed(&self, hash: &str) -> u64 {
        derive_seed(self.master_seed, "train", hash.as_bytes())
    }

    /// Compiles, initializes, and scores one genome.
    pub fn score_genome(&self, genome: &ArchitectureGenome) -> Result<(String, ScoreReport)> {
        let hash = genome.canonical_hash();
        let net = compile(genome)?;
        let store = init_params(&net, self.init_seed(&hash));
        let report = score(&net, &store, &self.probe)?;
        Ok((hash, report))
    }

    /// Draws `count` unique genomes. Small spaces are enumerated outright
    /// (returning the whole space, with a warning flag, when it is smaller
    /// than `count`); large spaces use rejection sampling with a capped
    /// attempt budget of `20 * count + 1000` draws.
    pub fn seed_population(&self, count: usize) -> (Vec<ArchitectureGenome>, bool) {
        let seed = derive_seed(self.master_seed, "population", &[]);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let space_size = self.space.space_size();
        if space_size <= num_bigint::BigUint::from(4u64 * count as u64) {
            let mut all = Vec::new();
            self.space.for_each_genome(|g| all.push(g.clone()));
            if all.len() <= count {
                let warn = all.len() < count;
                return (all, warn);
            }
            // deterministic partial shuffle, then truncate
            for i in (1..all.len()).rev() {
                let j = rng.random_range(0..=i);
                all.swap(i, j);
            }
            all.truncate(count);
            return (all, false);
        }
        let mut seen = HashSet::new();
        let mut population = Vec::with_capacity(count);
        let max_attempts = 20 * count + 1000;
        for _ in 0..max_attempts {
            if population.len() == count {
                break;
            }
            let genome = self.space.random_genome(rng.random::<u64>());
            if seen.insert(genome.canonical_hash()) {
                population.push(genome);
            }
        }
        let warn = population.len() < count;
        (population, warn)
    }

    /// Scores the population concurrently and sorts it into the initial
    /// ranking. Collection is ordered by hash before sorting so the result
    /// does not depend on worker count.
    pub fn rank_initial(&self, population: &[ArchitectureGenome]) -> Result<Vec<RankingEntry>> {
        if population.is_empty() {
            return Err(Error::InvalidConfig("population is empty".into()));
        }
        let mut entries = population
            .par_iter()
            .map(|genome| {
                let (hash, report) = self.score_genome(genome)?;
                Ok(RankingEntry {
                    hash,
                    score: report.score,
                    n_a: report.n_a,
                    params: genome.param_count(),
                    degenerate: report.degenerate,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by(|a, b| a.hash.cmp(&b.hash));
        entries.sort_by(ranking_order);
        Ok(entries)
    }

    /// Picks the six parents: the top three of the ranking plus, among the
    /// entries whose size distance to the target lies within the smallest
    /// 5th-percentile band, the three with the highest score. Overlaps are
    /// resolved by substituting the next-best band entry.
    pub fn select_parents(&self, ranking: &[RankingEntry]) -> Vec<String> {
        let usable: Vec<&RankingEntry> = ranking.iter().filter(|e| !e.degenerate).collect();
        if usable.len() <= PARENT_COUNT {
            if usable.len() < PARENT_COUNT {
                log::warn!(
                    "only {} non-degenerate candidates available for {} parents",
                    usable.len(),
                    PARENT_COUNT
                );
            }
            return usable.iter().map(|e| e.hash.clone()).collect();
        }
        let mut chosen: Vec<String> = usable
            .iter()
            .take(PARENT_COUNT / 2)
            .map(|e| e.hash.clone())
            .collect();

        let distance =
            |e: &RankingEntry| (e.params as i128 - self.target_params as i128).unsigned_abs();
        let mut distances: Vec<u128> = usable.iter().map(|e| distance(e)).collect();
        distances.sort_unstable();
        let band_rank = ((usable.len() as f64 * CLOSENESS_PERCENTILE).ceil() as usize).max(1);
        let threshold = distances[band_rank - 1];

        // Band entries by score, then hash; beyond the band, by closeness.
        let mut band: Vec<&&RankingEntry> = usable
            .iter()
            .filter(|e| distance(e) <= threshold)
            .collect();
        band.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.hash.cmp(&b.hash)));
        let mut overflow: Vec<&&RankingEntry> = usable
            .iter()
            .filter(|e| distance(e) > threshold)
            .collect();
        overflow.sort_by(|a, b| {
            distance(a)
                .cmp(&distance(b))
                .then(b.score.total_cmp(&a.score))
                .then(a.hash.cmp(&b.hash))
        });
        for entry in band.into_iter().chain(overflow) {
            if chosen.len() == PARENT_COUNT {
                break;
            }
            if !chosen.contains(&entry.hash) {
                chosen.push(entry.hash.clone());
            }
        }
        chosen
    }

    /// Trains and grades one genome, producing a full candidate.
    pub fn evaluate_candidate(&self, genome: &ArchitectureGenome) -> Result<(Candidate, EvalRow)> {
        let (hash, report) = self.score_genome(genome)?;
        let evaluation =
            self.evaluator()
                .evaluate_genome(genome, self.init_seed(&hash), self.train_seed(&hash))?;
        let candidate = Candidate {
            genome: genome.clone(),
            hash: hash.clone(),
            score: report.score,
            n_a: report.n_a,
            params: evaluation.grade.params,
            grade: evaluation.grade.grade,
            accuracy: evaluation.grade.accuracy,
        };
        let eval = EvalRow {
            hash,
            accuracy: candidate.accuracy,
            params: candidate.params,
            grade: candidate.grade,
            epochs: self.train_config.epochs,
        };
        Ok((candidate, eval))
    }

    /// Builds the initial state for one parent: the parent is trained and
    /// graded so the loop has a reference grade.
    pub fn init_state(&self, genome: &ArchitectureGenome) -> Result<(SearchState, EvalRow)> {
        let (candidate, eval) = self.evaluate_candidate(genome)?;
        let state = SearchState {
            parent_hash: candidate.hash.clone(),
            seed: derive_seed(self.master_seed, "parent", candidate.hash.as_bytes()),
            current: candidate.clone(),
            best: candidate,
            iteration: 0,
            no_improvement: 0,
            tabu: TabuList::new(self.tabu_tenure),
        };
        Ok((state, eval))
    }

    /// One search iteration: propose children of the current architecture
    /// (tabu members excluded), compute their rewards, train the
    /// highest-reward child, then accept it or fall back to the best tabu
    /// record. Emits exactly one trajectory record.
    pub fn ats_step(&self, state: &mut SearchState) -> Result<StepOutcome> {
        let iteration = state.iteration + 1;
        state.iteration = iteration;
        let proposal_seed = derive_seed(state.seed, "children", &iteration.to_le_bytes());
        let mutator = Mutator::new(self.space);
        let proposals =
            mutator.propose_children(&state.current.genome, proposal_seed, self.children_per_step)?;
        let audit: Vec<MutationRecord> = proposals
            .children
            .iter()
            .map(|c| c.record.clone())
            .collect();
        let live: Vec<_> = proposals
            .children
            .into_iter()
            .filter(|c| !state.tabu.contains(&c.record.child_hash))
            .collect();
        if live.is_empty() {
            state.no_improvement += 1;
            let record = TrajectoryRecord {
                iteration,
                child_hash: None,
                reward: None,
                accuracy: state.current.accuracy,
                params: state.current.params,
                grade: state.current.grade,
                accepted: false,
                tabu_size: state.tabu.len(),
            };
            return Ok(StepOutcome {
                record,
                stalled: true,
                eval: None,
                proposals: audit,
            });
        }

        // Parallel zero-cost scoring; order is the deterministic proposal
        // order, so the argmax tie-break stays worker-count independent.
        let scored = live
            .par_iter()
            .map(|child| self.score_genome(&child.genome))
            .collect::<Result<Vec<_>>>()?;
        let rewards: Vec<f64> = live
            .iter()
            .zip(&scored)
            .map(|(child, (_, report))| {
                reward(
                    state.current.score,
                    report.score,
                    child.genome.param_count(),
                    self.target_params,
                    self.alpha,
                )
                .value
            })
            .collect();
        let chosen = (0..live.len())
            .max_by(|&a, &b| {
                rewards[a]
                    .total_cmp(&rewards[b])
                    .then(scored[b].0.cmp(&scored[a].0))
            })
            .expect("non-empty");
        let child_genome = &live[chosen].genome;
        let child_reward = rewards[chosen];
        let (child, eval) = self.evaluate_candidate(child_genome)?;
        debug_assert!(!state.tabu.contains(&child.hash));

        let accepted = child.grade > state.current.grade;
        if accepted {
            let previous = std::mem::replace(&mut state.current, child.clone());
            state.tabu.push(TabuRecord {
                genome: previous.genome,
                hash: previous.hash,
                score: previous.score,
                n_a: previous.n_a,
                params: previous.params,
                grade: Some(previous.grade),
                accuracy: Some(previous.accuracy),
                reward: None,
                inserted_at: iteration,
            });
            state.no_improvement = 0;
        } else {
            state.tabu.push(TabuRecord {
                genome: child.genome.clone(),
                hash: child.hash.clone(),
                score: child.score,
                n_a: child.n_a,
                params: child.params,
                grade: Some(child.grade),
                accuracy: Some(child.accuracy),
                reward: Some(child_reward),
                inserted_at: iteration,
            });
            if let Some(idx) = state.tabu.best_fallback() {
                let record = state.tabu.remove(idx);
                if let (Some(grade), Some(accuracy)) = (record.grade, record.accuracy) {
                    state.current = Candidate {
                        genome: record.genome,
                        hash: record.hash,
                        score: record.score,
                        n_a: record.n_a,
                        params: record.params,
                        grade,
                        accuracy,
                    };
                }
            }
            state.no_improvement += 1;
        }
        if child.grade > state.best.grade {
            state.best = child.clone();
        }
        let record = TrajectoryRecord {
            iteration,
            child_hash: Some(child.hash),
            reward: Some(child_reward),
            accuracy: child.accuracy,
            params: child.params,
            grade: child.grade,
            accepted,
            tabu_size: state.tabu.len(),
        };
        Ok(StepOutcome {
            record,
            stalled: false,
            eval: Some(eval),
            proposals: audit,
        })
    }

    /// Runs one parent until the iteration cap or the patience limit.
    pub fn run_parent(
        &self,
        genome: &ArchitectureGenome,
        max_iterations: u32,
        patience: u32,
    ) -> Result<ParentRun> {
        let (mut state, parent_eval) = self.init_state(genome)?;
        let mut evals = vec![parent_eval];
        let mut trajectory = Vec::new();
        let mut proposals = Vec::new();
        while state.iteration < max_iterations && state.no_improvement < patience {
            let outcome = self.ats_step(&mut state)?;
            trajectory.push(outcome.record);
            if let Some(eval) = outcome.eval {
                evals.push(eval);
            }
            proposals.extend(outcome.proposals);
        }
        Ok(ParentRun {
            parent_hash: state.parent_hash,
            trajectory,
            best: state.best,
            evals,
            proposals,
        })
    }

    /// The full pipeline: seed, rank, select six parents, run each parent's
    /// loop (concurrently), and merge the bests into the final ranking.
    pub fn run_search(
        &self,
        population_count: usize,
        max_iterations: u32,
        patience: u32,
    ) -> Result<SearchOutcome> {
        if population_count < 1 {
            return Err(Error::InvalidConfig("population must be >= 1".into()));
        }
        let (population, population_warning) = self.seed_population(population_count);
        log::info!("seeded {} unique genomes", population.len());
        let ranking = self.rank_initial(&population)?;
        let by_hash: HashMap<String, &ArchitectureGenome> = population
            .iter()
            .map(|g| (g.canonical_hash(), g))
            .collect();
        let parent_hashes = self.select_parents(&ranking);
        if parent_hashes.is_empty() {
            return Err(Error::InvalidConfig(
                "no usable parents in the ranking".into(),
            ));
        }
        let parents: Vec<&ArchitectureGenome> = parent_hashes
            .iter()
            .map(|h| *by_hash.get(h).expect("parent from ranking"))
            .collect();
        let parent_runs = parents
            .par_iter()
            .map(|genome| self.run_parent(genome, max_iterations, patience))
            .collect::<Result<Vec<_>>>()?;

        let best = parent_runs
            .iter()
            .map(|run| &run.best)
            .max_by(|a, b| a.grade.total_cmp(&b.grade).then(b.hash.cmp(&a.hash)))
            .expect("at least one parent")
            .clone();

        let mut final_ranking = ranking.clone();
        let mut known: HashSet<String> = final_ranking.iter().map(|e| e.hash.clone()).collect();
        for run in &parent_runs {
            if known.insert(run.best.hash.clone()) {
                final_ranking.push(RankingEntry {
                    hash: run.best.hash.clone(),
                    score: run.best.score,
                    n_a: run.best.n_a,
                    params: run.best.params,
                    degenerate: false,
                });
            }
        }
        final_ranking.sort_by(ranking_order);

        Ok(SearchOutcome {
            best,
            initial_ranking: ranking,
            final_ranking,
            parent_runs,
            population_warning,
        })
    }
}
