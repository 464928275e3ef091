//! Command-line front end. [`dispatch`] returns the exit status and the
//! rendered output so it can be tested without a process.

use std::fs;
use std::io::Read;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::harness::{
    build_matrix, builtin_workload, builtin_workloads, compare_levels, run_level, DEFAULT_BOUND,
};
use crate::history::{dependency_graph, is_serializable, parse_history, Flavor, History, Serializability};
use crate::mvcc::mv_to_sv;
use crate::phenomena::{admits, classify, LevelId, PhenomenonId};
use crate::workload::{parse_workload, ScheduleSpec, Workload};

pub const EXIT_OK: i32 = 0;
pub const EXIT_MISMATCH: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "isolab", version, about = "Isolation level laboratory: histories, phenomena and concurrency-control engines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify a history and decide serializability.
    Check {
        /// History file; standard input when absent or `-`.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Run a workload under a level's engine.
    Run {
        #[arg(long)]
        level: LevelId,
        /// Workload file, or the name of a built-in workload.
        #[arg(long)]
        workload: String,
        /// Transaction ids, e.g. "1 2 1"; defaults to the workload's own.
        #[arg(long)]
        schedule: Option<ScheduleSpec>,
    },
    /// Search every level and phenomenon cell and compare with the golden matrix.
    Matrix {
        #[arg(long, default_value_t = DEFAULT_BOUND)]
        bound: usize,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        levels: Option<Vec<LevelId>>,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        phenomena: Option<Vec<PhenomenonId>>,
    },
    /// Print the dependency graph of a history in DOT.
    Graph {
        #[arg(long)]
        history: PathBuf,
    },
    /// Order two levels by the non-serializable histories each allows.
    Compare {
        #[arg(long)]
        l1: LevelId,
        #[arg(long)]
        l2: LevelId,
        #[arg(long, default_value_t = DEFAULT_BOUND)]
        bound: usize,
    },
}

struct Failure(String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

fn read_input(path: Option<&PathBuf>, stdin: &mut dyn Read) -> Result<String, Failure> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            fs::read_to_string(p).map_err(|e| Failure(format!("{}: {e}", p.display())))
        }
        _ => {
            let mut s = String::new();
            stdin.read_to_string(&mut s)?;
            Ok(s)
        }
    }
}

/// Parses a history; multiversion input is replaced by its single-version
/// mapping, with a note saying so.
fn load_history(text: &str) -> Result<(History, Option<String>), Failure> {
    let h = parse_history(text)?;
    if h.flavor() == Flavor::MultiVersion {
        let sv = mv_to_sv(&h)?;
        let note = format!("single-version mapping: {}", crate::run::body(&sv));
        return Ok((sv, Some(note)));
    }
    Ok((h, None))
}

fn load_workload(arg: &str) -> Result<Workload, Failure> {
    if let Some(w) = builtin_workload(arg) {
        return Ok(w);
    }
    let text = fs::read_to_string(arg).map_err(|e| Failure(format!("{arg}: {e} (not a built-in workload either)")))?;
    Ok(parse_workload(&text)?)
}

fn check(text: &str) -> Result<String, Failure> {
    let (h, note) = load_history(text)?;
    let mut out = format!("history: {}\n", crate::run::body(&h));
    if let Some(n) = note {
        out.push_str(&n);
        out.push('\n');
    }
    for (p, ws) in classify(&h) {
        if ws.is_empty() {
            out.push_str(&format!("{p}: absent\n"));
        } else {
            out.push_str(&format!("{p}: present\n"));
            for w in &ws {
                out.push_str(&format!("  {}\n", w.render(&h)));
            }
        }
    }
    let admitted: Vec<&str> = LevelId::ALL
        .iter()
        .filter(|l| l.is_locking() && admits(**l, &h))
        .map(|l| l.name())
        .collect();
    out.push_str(&format!("admitted by: {}\n", if admitted.is_empty() { "-".into() } else { admitted.join(" ") }));
    match is_serializable(&h)? {
        Serializability::Serializable => out.push_str("verdict: serializable\n"),
        Serializability::NotSerializable { cycle } => {
            let cycle: Vec<String> = cycle.iter().map(|t| format!("T{t}")).collect();
            out.push_str(&format!("verdict: non-serializable (cycle {})\n", cycle.join(" -> ")));
        }
    }
    Ok(out)
}

fn execute(cmd: Command, stdin: &mut dyn Read) -> Result<(i32, String), Failure> {
    match cmd {
        Command::Check { history } => Ok((EXIT_OK, check(&read_input(history.as_ref(), stdin)?)?)),
        Command::Run {
            level,
            workload,
            schedule,
        } => {
            let w = load_workload(&workload)?;
            let schedule = schedule
                .or_else(|| w.reference_schedule.clone())
                .ok_or_else(|| Failure(format!("workload {} has no schedule; pass --schedule", w.name)))?;
            let report = run_level(&w, level, &schedule)?;
            let out = format!("level: {level}\nworkload: {}\nschedule: {schedule}\n{}", w.name, report.render(&w));
            Ok((EXIT_OK, out))
        }
        Command::Matrix {
            bound,
            levels,
            phenomena,
        } => {
            let levels = levels.unwrap_or_else(|| LevelId::MATRIX.to_vec());
            let phenomena = phenomena.unwrap_or_else(|| PhenomenonId::MATRIX.to_vec());
            let m = build_matrix(&levels, &phenomena, &builtin_workloads(), bound)?;
            let mut out = m.render_table();
            out.push('\n');
            for r in m.records() {
                out.push_str(&r);
                out.push('\n');
            }
            let compared: Vec<_> = m.cells.iter().filter(|c| c.expected.is_some()).collect();
            let bad: Vec<_> = m.mismatches().collect();
            out.push_str(&format!(
                "\ngolden: {}/{} cells match (bound {bound})\n",
                compared.len() - bad.len(),
                compared.len()
            ));
            for c in &bad {
                let expected = c.expected.expect("compared cell");
                out.push_str(&format!("mismatch: {} {} expected {expected}\n", c.level, c.phenomenon));
                if let Some(f) = c.result.found() {
                    out.push_str(&format!("  witness: {}\n", f.witness.render(&f.history)));
                    out.push_str(&format!("  history: {}\n", crate::run::body(&f.history)));
                }
            }
            Ok((if bad.is_empty() { EXIT_OK } else { EXIT_MISMATCH }, out))
        }
        Command::Graph { history } => {
            let (h, _) = load_history(&read_input(Some(&history), stdin)?)?;
            Ok((EXIT_OK, dependency_graph(&h)?.to_dot()))
        }
        Command::Compare { l1, l2, bound } => {
            let order = compare_levels(l1, l2, &builtin_workloads(), bound)?;
            Ok((EXIT_OK, order.render()))
        }
    }
}

/// Parses `argv` (program name first) and runs the command.
pub fn dispatch<I, S>(argv: I, stdin: &mut dyn Read) -> (i32, String)
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let status = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            return (status, e.render().to_string());
        }
    };
    match execute(cli.command, stdin) {
        Ok(r) => r,
        Err(Failure(msg)) => (EXIT_USAGE, format!("error: {msg}\n")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str], input: &str) -> (i32, String) {
        let argv = std::iter::once("isolab").chain(args.iter().copied());
        dispatch(argv, &mut input.as_bytes())
    }

    #[test]
    fn check_reads_stdin() {
        let (status, out) = run(&["check"], "r1[x=50] w1[x=10] r2[x=10] r2[y=50] c2 r1[y=50] w1[y=90] c1");
        assert_eq!(status, 0);
        assert!(out.contains("P1: present\n  P1: w1[x]@1 r2[x]@2 c1@7\n"));
        assert!(out.contains("A1: absent"));
        assert!(out.contains("verdict: non-serializable"));
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(&["frobnicate"], "").0, 2);
        assert_eq!(run(&["run", "--level", "nope", "--workload", "transfer"], "").0, 2);
        assert_eq!(run(&["check"], "r1[x] c1 w1[y]").0, 2);
    }

    #[test]
    fn help_exits_0() {
        let (status, out) = run(&["--help"], "");
        assert_eq!(status, 0);
        assert!(out.contains("matrix"));
    }

    #[test]
    fn run_snapshot_lost_update() {
        let (status, out) = run(&["run", "--level", "snapshot", "--workload", "lost-update"], "");
        assert_eq!(status, 0);
        assert!(out.contains("T1: aborted (first-committer-wins on x)"), "{out}");
    }
}
