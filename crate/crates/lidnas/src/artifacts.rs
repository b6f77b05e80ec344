//! Run-directory artifact emission. Every CSV starts with a
//! `# generated <timestamp>` comment line (the only run-varying bytes),
//! then a fixed header row; fields containing commas, quotes, or newlines
//! are quoted.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::genome::ArchitectureGenome;
use crate::search::{EvalRow, ParentRun, RankingEntry, TrajectoryRecord};
use crate::Result;

/// Quotes a CSV field when needed.
fn csv_field(raw: &str) -> String {
    if raw.contains(',') || raw.contains('"') || raw.contains('\n') {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw.to_string()
    }
}

fn csv_line(fields: &[String]) -> String {
    fields
        .iter()
        .map(|f| csv_field(f))
        .collect::<Vec<_>>()
        .join(",")
}

/// A run output directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
    timestamp: String,
}

impl RunDir {
    /// Creates (or reuses) the directory; the timestamp goes into every
    /// artifact's first line.
    pub fn create(root: &Path) -> Result<RunDir> {
        fs::create_dir_all(root)?;
        Ok(RunDir {
            root: root.to_path_buf(),
            timestamp: chrono::Utc::now().to_rfc3339(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn write_csv(&self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<PathBuf> {
        let mut text = String::new();
        writeln!(text, "# generated {}", self.timestamp).expect("write to string");
        writeln!(
            text,
            "{}",
            csv_line(&header.iter().map(|h| h.to_string()).collect::<Vec<_>>())
        )
        .expect("write to string");
        for row in rows {
            writeln!(text, "{}", csv_line(&row)).expect("write to string");
        }
        let path = self.path(name);
        fs::write(&path, text)?;
        Ok(path)
    }

    /// Fully defaulted configuration snapshot, so a run reproduces without
    /// the original file.
    pub fn write_config_snapshot(&self, config: &RunConfig) -> Result<PathBuf> {
        let path = self.path("config.toml");
        fs::write(&path, config.to_toml())?;
        Ok(path)
    }

    /// Columns: hash, score, n_a, params, degenerate.
    pub fn write_ranking(&self, name: &str, entries: &[RankingEntry]) -> Result<PathBuf> {
        let rows = entries
            .iter()
            .map(|e| {
                vec![
                    e.hash.clone(),
                    e.score.to_string(),
                    e.n_a.to_string(),
                    e.params.to_string(),
                    e.degenerate.to_string(),
                ]
            })
            .collect();
        self.write_csv(name, &["hash", "score", "n_a", "params", "degenerate"], rows)
    }

    /// Columns: hash, accuracy, params, grade, epochs.
    pub fn write_evals(&self, rows: &[EvalRow]) -> Result<PathBuf> {
        let rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.hash.clone(),
                    r.accuracy.to_string(),
                    r.params.to_string(),
                    r.grade.to_string(),
                    r.epochs.to_string(),
                ]
            })
            .collect();
        self.write_csv(
            "evals.csv",
            &["hash", "accuracy", "params", "grade", "epochs"],
            rows,
        )
    }

    /// Columns: iteration, child_hash, reward, accuracy, params, grade,
    /// accepted, tabu_size. Stalled iterations leave child_hash and reward
    /// empty.
    pub fn write_trajectory(
        &self,
        parent_hash: &str,
        records: &[TrajectoryRecord],
    ) -> Result<PathBuf> {
        let rows = records
            .iter()
            .map(|r| {
                vec![
                    r.iteration.to_string(),
                    r.child_hash.clone().unwrap_or_default(),
                    r.reward.map(|v| v.to_string()).unwrap_or_default(),
                    r.accuracy.to_string(),
                    r.params.to_string(),
                    r.grade.to_string(),
                    r.accepted.to_string(),
                    r.tabu_size.to_string(),
                ]
            })
            .collect();
        self.write_csv(
            &format!("trajectory-{parent_hash}.csv"),
            &[
                "iteration",
                "child_hash",
                "reward",
                "accuracy",
                "params",
                "grade",
                "accepted",
                "tabu_size",
            ],
            rows,
        )
    }

    /// Mutation audit log: one JSON record per line, grouped per parent in
    /// selection order.
    pub fn write_mutation_audit(&self, runs: &[ParentRun]) -> Result<PathBuf> {
        let mut text = String::new();
        for run in runs {
            for record in &run.proposals {
                writeln!(
                    text,
                    "{}",
                    serde_json::to_string(record).expect("record serializes")
                )
                .expect("write to string");
            }
        }
        let path = self.path("mutations.jsonl");
        fs::write(&path, text)?;
        Ok(path)
    }

    /// The winning genome in the canonical serialization format.
    pub fn write_best_genome(&self, genome: &ArchitectureGenome) -> Result<PathBuf> {
        let path = self.path("best_genome.json");
        fs::write(&path, genome.canonical_json())?;
        Ok(path)
    }

    /// Machine-readable run summary (holds the wall-clock timings; CSV
    /// artifacts stay deterministic).
    pub fn write_summary(&self, summary: &impl Serialize) -> Result<PathBuf> {
        let path = self.path("summary.json");
        fs::write(
            &path,
            serde_json::to_string_pretty(summary).expect("summary serializes"),
        )?;
        Ok(path)
    }

    /// Enumeration table of a toy space. Columns: hash, score, n_a, params,
    /// accuracy, grade, degenerate.
    pub fn write_enumeration(&self, rows: &[crate::runner::EnumRow]) -> Result<PathBuf> {
        let rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.hash.clone(),
                    r.score.to_string(),
                    r.n_a.to_string(),
                    r.params.to_string(),
                    r.accuracy.to_string(),
                    r.grade.to_string(),
                    r.degenerate.to_string(),
                ]
            })
            .collect();
        self.write_csv(
            "enumeration.csv",
            &[
                "hash",
                "score",
                "n_a",
                "params",
                "accuracy",
                "grade",
                "degenerate",
            ],
            rows,
        )
    }
}

/// Strips the timestamp comment line; what remains must be byte-identical
/// across reruns of the same seeded config.
pub fn deterministic_view(csv_text: &str) -> String {
    csv_text
        .lines()
        .filter(|line| !line.starts_with("# generated"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fields_with_commas_are_quoted() {
        assert_eq!(csv_field("plain"), "plain");
        assert_eq!(csv_field("a,b"), "\"a,b\"");
        assert_eq!(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
    }

    #[test]
    fn deterministic_view_drops_only_the_timestamp_line() {
        let text = "# generated 2025-01-01T00:00:00Z\nh,s\n1,2\n";
        assert_eq!(deterministic_view(text), "h,s\n1,2");
    }

    #[test]
    fn ranking_csv_layout() {
        let dir = tempfile::tempdir().unwrap();
        let run = RunDir::create(dir.path()).unwrap();
        let entries = vec![RankingEntry {
            hash: "abc".into(),
            score: 1.5,
            n_a: 10,
            params: 99,
            degenerate: false,
        }];
        let path = run.write_ranking("ranking.csv", &entries).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# generated "));
        assert_eq!(lines[1], "hash,score,n_a,params,degenerate");
        assert_eq!(lines[2], "abc,1.5,10,99,false");
    }
}
