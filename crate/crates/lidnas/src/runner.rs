//! Subcommand implementations behind the CLI: full search runs with
//! artifact emission, standalone scoring and evaluation of genome files,
//! and brute-force enumeration of toy spaces.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::artifacts::RunDir;
use crate::config::RunConfig;
use crate::evaluator::{gen_task, Evaluator, SyntheticTask, ValidationGrade};
use crate::genome::ArchitectureGenome;
use crate::net::{compile, init_params, save_params, Tensor};
use crate::scorer::{probe_batch, score, ScoreReport};
use crate::search::{derive_seed, SearchEngine, SearchOutcome, PROBE_BATCH_SIZE};
use crate::{Error, Result};

/// Caps `enumerate` so it cannot be pointed at an astronomic space.
pub const ENUMERATE_LIMIT: u64 = 4096;

/// Runs a closure on a dedicated pool of `workers` threads (0 = the default
/// global pool, sized to the available parallelism).
pub fn with_worker_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if workers == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn build_task(config: &RunConfig) -> SyntheticTask {
    let res = config.space.input_resolution;
    gen_task(
        config.task.seed,
        config.task.samples,
        (res.height, res.width),
        &config.task.spec,
    )
}

fn build_probe(config: &RunConfig) -> Tensor {
    let res = config.space.input_resolution;
    probe_batch(
        derive_seed(config.seed, "probe", &[]),
        PROBE_BATCH_SIZE,
        (res.channels, res.height, res.width),
    )
}

fn engine<'a>(config: &'a RunConfig, task: &'a SyntheticTask, probe: Tensor) -> SearchEngine<'a> {
    let (train_samples, val_samples) = task.split();
    SearchEngine {
        space: &config.space,
        train_samples,
        val_samples,
        train_config: &config.train,
        target_params: config.objective.target_params,
        alpha: config.objective.alpha,
        probe,
        master_seed: config.seed,
        children_per_step: config.search.children_per_step,
        tabu_tenure: config.search.tabu_tenure,
    }
}

/// Summary of a finished search run, also written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct SearchSummary {
    pub best_hash: String,
    pub best_grade: f64,
    pub best_accuracy: f64,
    pub best_params: u64,
    pub best_score: f64,
    pub population: usize,
    pub population_warning: bool,
    pub parents: usize,
    pub trained_candidates: usize,
    pub wall_seconds: f64,
    pub output_dir: PathBuf,
}

/// Full pipeline: seed, rank, search from six parents, and write every
/// artifact (config snapshot, ranking.csv, evals.csv, per-parent
/// trajectories, final_ranking.csv, best_genome.json, mutations.jsonl,
/// summary.json) into the run directory.
pub fn cmd_search(config: &RunConfig) -> Result<SearchSummary> {
    config.check()?;
    let out = config.output_dir.clone().ok_or_else(|| {
        Error::InvalidConfig("search requires an output directory (--out or output_dir)".into())
    })?;
    let started = Instant::now();
    let run_dir = RunDir::create(&out)?;
    run_dir.write_config_snapshot(config)?;

    log::info!("generating task ({} samples)", config.task.samples);
    let task = build_task(config);
    let probe = build_probe(config);
    let eng = engine(config, &task, probe);
    let outcome: SearchOutcome = with_worker_pool(config.workers, || {
        eng.run_search(
            config.search.population,
            config.search.max_iterations,
            config.search.patience,
        )
    })??;

    run_dir.write_ranking("ranking.csv", &outcome.initial_ranking)?;
    run_dir.write_ranking("final_ranking.csv", &outcome.final_ranking)?;
    let mut evals = Vec::new();
    for run in &outcome.parent_runs {
        run_dir.write_trajectory(&run.parent_hash, &run.trajectory)?;
        evals.extend(run.evals.iter().cloned());
    }
    run_dir.write_evals(&evals)?;
    run_dir.write_mutation_audit(&outcome.parent_runs)?;
    run_dir.write_best_genome(&outcome.best.genome)?;

    let summary = SearchSummary {
        best_hash: outcome.best.hash.clone(),
        best_grade: outcome.best.grade,
        best_accuracy: outcome.best.accuracy,
        best_params: outcome.best.params,
        best_score: outcome.best.score,
        population: outcome.initial_ranking.len(),
        population_warning: outcome.population_warning,
        parents: outcome.parent_runs.len(),
        trained_candidates: evals.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
        output_dir: out,
    };
    run_dir.write_summary(&summary)?;
    log::info!(
        "best {} grade {:.4} ({} params) in {:.1}s",
        summary.best_hash,
        summary.best_grade,
        summary.best_params,
        summary.wall_seconds
    );
    Ok(summary)
}

/// Loads and validates a genome file.
pub fn load_genome(path: &Path) -> Result<ArchitectureGenome> {
    let text = std::fs::read_to_string(path)?;
    let genome = ArchitectureGenome::from_json(&text)?;
    genome.validate().into_result()?;
    Ok(genome)
}

/// Scores one genome file on the run's shared probe batch.
pub fn cmd_score(genome_path: &Path, config: &RunConfig) -> Result<ScoreReport> {
    config.check()?;
    let genome = load_genome(genome_path)?;
    let res = genome.input_resolution;
    let probe = probe_batch(
        derive_seed(config.seed, "probe", &[]),
        PROBE_BATCH_SIZE,
        (res.channels, res.height, res.width),
    );
    let hash = genome.canonical_hash();
    let net = compile(&genome)?;
    let store = init_params(&net, derive_seed(config.seed, "init", hash.as_bytes()));
    with_worker_pool(config.workers, || score(&net, &store, &probe))?
}

/// Result of a standalone evaluation.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub hash: String,
    pub grade: ValidationGrade,
    pub final_loss: f64,
    pub epochs: usize,
    pub wall_seconds: f64,
}

/// Trains one genome file on the synthetic task and grades it. When the
/// config names an output directory, the trained parameters and an
/// evals.csv row are written there.
pub fn cmd_eval(genome_path: &Path, config: &RunConfig) -> Result<EvalReport> {
    config.check()?;
    let genome = load_genome(genome_path)?;
    if genome.input_resolution != config.space.input_resolution {
        return Err(Error::InvalidConfig(format!(
            "genome resolution {:?} does not match space resolution {:?}",
            genome.input_resolution, config.space.input_resolution
        )));
    }
    let started = Instant::now();
    let task = build_task(config);
    let (train_samples, val_samples) = task.split();
    let evaluator = Evaluator {
        train_samples,
        val_samples,
        train_config: &config.train,
        target_params: config.objective.target_params,
        alpha: config.objective.alpha,
    };
    let hash = genome.canonical_hash();
    let evaluation = with_worker_pool(config.workers, || {
        evaluator.evaluate_genome(
            &genome,
            derive_seed(config.seed, "init", hash.as_bytes()),
            derive_seed(config.seed, "train", hash.as_bytes()),
        )
    })??;
    if let Some(out) = &config.output_dir {
        let run_dir = RunDir::create(out)?;
        let net = compile(&genome)?;
        save_params(
            &evaluation.params,
            &net,
            &run_dir.path("trained_params.bin"),
            &run_dir.path("trained_params.manifest"),
        )?;
        run_dir.write_evals(&[crate::search::EvalRow {
            hash: hash.clone(),
            accuracy: evaluation.grade.accuracy,
            params: evaluation.grade.params,
            grade: evaluation.grade.grade,
            epochs: config.train.epochs,
        }])?;
    }
    Ok(EvalReport {
        hash,
        final_loss: *evaluation.loss_history.last().expect("epochs >= 1"),
        epochs: config.train.epochs,
        grade: evaluation.grade,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// One enumerated genome with both its score and its trained grade.
#[derive(Debug, Clone, Serialize)]
pub struct EnumRow {
    pub hash: String,
    pub score: f64,
    pub n_a: usize,
    pub params: u64,
    pub accuracy: f64,
    pub grade: f64,
    pub degenerate: bool,
}

/// Brute-force oracle: trains and grades every genome of a toy-scale space.
/// Rows come back sorted by hash; with an output directory set, an
/// `enumeration.csv` is written.
pub fn cmd_enumerate(config: &RunConfig) -> Result<Vec<EnumRow>> {
    config.check()?;
    let size = config.space.space_size();
    if size > num_bigint::BigUint::from(ENUMERATE_LIMIT) {
        return Err(Error::InvalidConfig(format!(
            "enumerate needs a toy-scale space (at most {ENUMERATE_LIMIT} genomes), got {size}"
        )));
    }
    let mut genomes = Vec::new();
    config.space.for_each_genome(|g| genomes.push(g.clone()));
    log::info!("enumerating {} genomes", genomes.len());

    let task = build_task(config);
    let probe = build_probe(config);
    let eng = engine(config, &task, probe);
    let mut rows = with_worker_pool(config.workers, || {
        genomes
            .par_iter()
            .map(|genome| {
                let (candidate, _) = eng.evaluate_candidate(genome)?;
                let report = eng.score_genome(genome)?.1;
                Ok(EnumRow {
                    hash: candidate.hash,
                    score: candidate.score,
                    n_a: candidate.n_a,
                    params: candidate.params,
                    accuracy: candidate.accuracy,
                    grade: candidate.grade,
                    degenerate: report.degenerate,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;
    rows.sort_by(|a, b| a.hash.cmp(&b.hash));
    if let Some(out) = &config.output_dir {
        RunDir::create(out)?.write_enumeration(&rows)?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;

    fn tiny_toy_config(out: Option<PathBuf>) -> RunConfig {
        let mut config = RunConfig::default();
        Preset::Toy.apply(&mut config);
        // shrink further for unit-test speed
        config.search.population = 10;
        config.search.max_iterations = 2;
        config.search.patience = 2;
        config.search.children_per_step = 3;
        config.task.samples = 12;
        config.train.epochs = 2;
        config.seed = 5;
        config.output_dir = out;
        config
    }

    #[test]
    fn search_requires_an_output_directory() {
        let config = tiny_toy_config(None);
        assert!(matches!(cmd_search(&config), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn search_emits_every_artifact_once() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_toy_config(Some(dir.path().to_path_buf()));
        let summary = cmd_search(&config).unwrap();
        assert!(summary.best_grade.is_finite());
        for name in [
            "config.toml",
            "ranking.csv",
            "final_ranking.csv",
            "evals.csv",
            "best_genome.json",
            "mutations.jsonl",
            "summary.json",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let trajectories: Vec<_> = std::fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| {
                let name = e.unwrap().file_name().into_string().unwrap();
                name.starts_with("trajectory-").then_some(name)
            })
            .collect();
        assert_eq!(trajectories.len(), summary.parents);
        // best genome file parses and validates
        let best = load_genome(&dir.path().join("best_genome.json")).unwrap();
        assert_eq!(best.canonical_hash(), summary.best_hash);
    }

    #[test]
    fn zero_iteration_search_leaves_header_only_trajectories() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_toy_config(Some(dir.path().to_path_buf()));
        config.search.max_iterations = 0;
        cmd_search(&config).unwrap();
        let trajectory = std::fs::read_dir(dir.path())
            .unwrap()
            .find_map(|e| {
                let path = e.unwrap().path();
                path.file_name()?
                    .to_str()?
                    .starts_with("trajectory-")
                    .then_some(path)
            })
            .expect("trajectory file");
        let text = std::fs::read_to_string(trajectory).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert!(lines[0].starts_with("# generated"));
        assert!(lines[1].starts_with("iteration,child_hash"));
    }

    #[test]
    fn score_command_matches_library_scoring() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_toy_config(None);
        let genome = config.space.random_genome(8);
        let path = dir.path().join("genome.json");
        std::fs::write(&path, genome.canonical_json()).unwrap();

        let report = cmd_score(&path, &config).unwrap();
        let hash = genome.canonical_hash();
        let net = compile(&genome).unwrap();
        let store = init_params(&net, derive_seed(config.seed, "init", hash.as_bytes()));
        let probe = build_probe(&config);
        let expect = score(&net, &store, &probe).unwrap();
        assert_eq!(report, expect);
    }

    #[test]
    fn eval_command_grades_and_persists_params() {
        let dir = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let mut config = tiny_toy_config(Some(out.path().to_path_buf()));
        config.train.epochs = 2;
        let genome = config.space.random_genome(9);
        let path = dir.path().join("genome.json");
        std::fs::write(&path, genome.canonical_json()).unwrap();

        let report = cmd_eval(&path, &config).unwrap();
        assert_eq!(report.hash, genome.canonical_hash());
        assert!(report.grade.accuracy >= 0.0 && report.grade.accuracy <= 1.0);
        assert!(out.path().join("trained_params.bin").exists());
        assert!(out.path().join("trained_params.manifest").exists());
        assert!(out.path().join("evals.csv").exists());
    }

    #[test]
    fn enumerate_refuses_large_spaces() {
        // the default space is astronomically large
        let config = RunConfig::default();
        assert!(matches!(
            cmd_enumerate(&config),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn enumerate_covers_the_whole_toy_space() {
        let mut config = tiny_toy_config(None);
        // shrink to 2^5 = 32 genomes for speed
        config.space.channel_options = vec![4, 8];
        config.train.epochs = 1;
        config.task.samples = 6;
        let rows = cmd_enumerate(&config).unwrap();
        assert_eq!(rows.len(), 32);
        let mut hashes: Vec<&String> = rows.iter().map(|r| &r.hash).collect();
        hashes.dedup();
        assert_eq!(hashes.len(), 32);
        assert!(rows.windows(2).all(|w| w[0].hash <= w[1].hash));
    }

    #[test]
    fn trajectory_grades_match_objective_recomputation() {
        let dir = tempfile::tempdir().unwrap();
        let mut config = tiny_toy_config(Some(dir.path().to_path_buf()));
        config.search.max_iterations = 3;
        cmd_search(&config).unwrap();
        let mut rows_checked = 0;
        for entry in std::fs::read_dir(dir.path()).unwrap() {
            let path = entry.unwrap().path();
            if !path
                .file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .starts_with("trajectory-")
            {
                continue;
            }
            let text = std::fs::read_to_string(&path).unwrap();
            for line in text.lines().skip(2) {
                let fields: Vec<&str> = line.split(',').collect();
                if fields[1].is_empty() {
                    continue; // stalled step
                }
                let accuracy: f64 = fields[3].parse().unwrap();
                let params: u64 = fields[4].parse().unwrap();
                let grade_field: f64 = fields[5].parse().unwrap();
                let expect = crate::evaluator::grade(
                    accuracy,
                    params,
                    config.objective.target_params,
                    config.objective.alpha,
                );
                assert_eq!(grade_field, expect.grade);
                rows_checked += 1;
            }
        }
        assert!(rows_checked > 0);
    }

    #[test]
    fn genome_files_with_violations_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let config = tiny_toy_config(None);
        let mut genome = config.space.random_genome(1);
        genome.blocks[0].in_channels = 77; // break the chain
        let path = dir.path().join("bad.json");
        std::fs::write(&path, genome.canonical_json()).unwrap();
        assert!(matches!(
            load_genome(&path),
            Err(Error::InvalidGenome(_))
        ));
    }
}
