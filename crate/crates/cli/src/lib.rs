//! Batch front end of the simulator: scenario configs, CSV results, offline
//! resilience checks and topology generators.

pub mod config;
pub mod gen;

use std::fs::{File, OpenOptions};
use std::io::{self, Write};
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use renaissance::engine::{run_scenario, RunMetrics};
use renaissance::topology::{edge_connectivity, load_topology, min_edge_cut, verify_graph, Graph, TopologyError};
use thiserror::Error;

pub use config::ScenarioConfig;

/// CSV columns, in order. Never reordered; new columns go at the end.
pub const CSV_HEADER: [&str; 9] = [
    "scenario_id",
    "seed",
    "converged",
    "frames",
    "steps",
    "c_resets",
    "illegitimate_deletions",
    "max_rules_per_switch",
    "messages_per_frame",
];

pub const EXIT_OK: i32 = 0;
pub const EXIT_NOT_CONVERGED: i32 = 1;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("{}:{line}: {msg}", path.display())]
    Config { path: PathBuf, line: usize, msg: String },
    #[error("{}: {source}", path.display())]
    Topology { path: PathBuf, source: TopologyError },
    #[error("{0}")]
    Usage(String),
    #[error("unsatisfiable parameters: {0}")]
    Unsatisfiable(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_USAGE
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_owned(), source }
}

pub fn read_topology(path: &Path) -> Result<Graph, CliError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    load_topology(&text).map_err(|source| CliError::Topology { path: path.to_owned(), source })
}

/// `A..B` (both ends included) or a single seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedRange(pub RangeInclusive<u64>);

impl FromStr for SeedRange {
    type Err = String;

    fn from_str(s: &str) -> Result<SeedRange, String> {
        let num = |v: &str| v.trim().parse::<u64>().map_err(|_| format!("bad seed {v:?}"));
        let (a, b) = match s.split_once("..") {
            Some((a, b)) => (num(a)?, num(b.strip_prefix('=').unwrap_or(b))?),
            None => (num(s)?, num(s)?),
        };
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        Ok(SeedRange(a..=b))
    }
}

/// Command-line overrides of a config.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub seeds: Option<SeedRange>,
    pub max_steps: Option<u64>,
    pub csv: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    /// Worker threads for seed sweeps; 0 picks the machine's parallelism.
    pub jobs: usize,
}

#[derive(Debug)]
pub struct RunOutcome {
    /// One per seed, in seed order.
    pub runs: Vec<RunMetrics>,
    /// κ ≥ λ, or links that never stop dropping packets: convergence is not
    /// guaranteed, so failing to converge is not an error.
    pub best_effort: bool,
    pub lambda: usize,
}

impl RunOutcome {
    pub fn exit_code(&self) -> i32 {
        if self.best_effort || self.runs.iter().all(|r| r.converged) {
            EXIT_OK
        } else {
            EXIT_NOT_CONVERGED
        }
    }
}

pub fn csv_row(m: &RunMetrics) -> [String; 9] {
    [
        m.scenario_id.clone(),
        m.seed.to_string(),
        m.converged.to_string(),
        m.frames.to_string(),
        m.steps.to_string(),
        m.total_c_resets().to_string(),
        m.illegitimate_deletions.to_string(),
        m.max_rules_per_switch.to_string(),
        format!("{:.3}", m.messages_per_frame),
    ]
}

/// Write rows, preceded by the header row when `header` is set.
pub fn write_csv<W: Write>(out: W, runs: &[RunMetrics], header: bool) -> csv::Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    if header {
        w.write_record(CSV_HEADER)?;
    }
    for m in runs {
        w.write_record(csv_row(m))?;
    }
    w.flush()?;
    Ok(())
}

/// Run a config for every requested seed. Rows go to the CSV file (appended,
/// header written when the file is new or empty) or to stdout.
pub fn cmd_run(config: &Path, opts: &RunOptions) -> Result<RunOutcome, CliError> {
    let cfg = ScenarioConfig::load(config)?;
    let graph = read_topology(&cfg.topology)?;
    let lambda = edge_connectivity(&graph);
    let best_effort = cfg.kappa >= lambda || cfg.persistent_loss();
    if cfg.kappa >= lambda {
        log::warn!("kappa {} >= edge connectivity {lambda}: best-effort run", cfg.kappa);
    } else if best_effort {
        log::warn!("links stay lossy for the whole run: best-effort run");
    }
    let mut base = cfg.scenario(graph)?;
    if let Some(m) = opts.max_steps {
        base.max_steps = m;
    }
    let trace_path = opts.trace.clone().or(cfg.trace.clone());
    base.trace = trace_path.is_some();
    let seeds: Vec<u64> = match (&opts.seeds, opts.seed) {
        (Some(r), _) => r.0.clone().collect(),
        (None, Some(s)) => vec![s],
        (None, None) => vec![cfg.seed],
    };

    let jobs = match opts.jobs {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        j => j,
    }
    .min(seeds.len());
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunMetrics>>> = Mutex::new(vec![None; seeds.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = seeds.get(i) else { break };
                let mut s = base.clone();
                s.seed = seed;
                let m = run_scenario(&s);
                log::info!(
                    "{} seed {seed}: converged={} frames={} steps={}",
                    m.scenario_id,
                    m.converged,
                    m.frames,
                    m.steps
                );
                slots.lock().unwrap()[i] = Some(m);
            });
        }
    });
    let runs: Vec<RunMetrics> = slots.into_inner().unwrap().into_iter().map(Option::unwrap).collect();

    match opts.csv.clone().or(cfg.csv.clone()) {
        Some(path) => {
            let fresh = std::fs::metadata(&path).map_or(true, |m| m.len() == 0);
            let f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err(&path))?;
            write_csv(f, &runs, fresh).map_err(|e| CliError::Io { path: path.clone(), source: e.into() })?;
        }
        None => write_csv(io::stdout().lock(), &runs, true)
            .map_err(|e| CliError::Io { path: "<stdout>".into(), source: e.into() })?,
    }
    if let Some(path) = trace_path {
        let mut f = io::BufWriter::new(File::create(&path).map_err(io_err(&path))?);
        let write = |f: &mut io::BufWriter<File>| -> io::Result<()> {
            for m in &runs {
                if runs.len() > 1 {
                    writeln!(f, "# {} seed {}", m.scenario_id, m.seed)?;
                }
                for line in &m.trace {
                    writeln!(f, "{line}")?;
                }
            }
            f.flush()
        };
        write(&mut f).map_err(io_err(&path))?;
    }
    Ok(RunOutcome { runs, best_effort, lambda })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub passed: bool,
    pub lambda: usize,
    pub report: String,
}

/// Synthesize every controller's rules for the topology and check them
/// against all failure sets of at most `kappa` links.
pub fn cmd_verify(topology: &Path, kappa: usize) -> Result<VerifyOutcome, CliError> {
    let g = read_topology(topology)?;
    Ok(verify_text(&g, &topology.display().to_string(), kappa))
}

/// Failures listed before the report is cut short.
const MAX_LISTED: usize = 20;

pub fn verify_text(g: &Graph, name: &str, kappa: usize) -> VerifyOutcome {
    let lambda = edge_connectivity(g);
    let report = verify_graph(g, kappa);
    let mut out = String::new();
    let diameter = g.diameter().map_or("inf".to_string(), |d| d.to_string());
    out += &format!(
        "{name}: {} controllers, {} switches, {} links, diameter {diameter}\n",
        g.n_controllers(),
        g.switches().count(),
        g.edges().len()
    );
    out += &format!("edge connectivity {lambda}\n");
    let best_effort = kappa >= lambda;
    if best_effort {
        out += &format!("warning: kappa {kappa} >= edge connectivity {lambda}, some failure sets disconnect the network\n");
    }
    out += &format!(
        "kappa {kappa}: {} pairs, {} failure sets, {} checks, {} failures\n",
        report.pairs,
        report.failure_sets,
        report.checks,
        report.failures.len()
    );
    for f in report.failures.iter().take(MAX_LISTED) {
        out += &format!("  {f}\n");
    }
    if report.failures.len() > MAX_LISTED {
        out += &format!("  ... {} more\n", report.failures.len() - MAX_LISTED);
    }
    if best_effort {
        let cut: Vec<String> = min_edge_cut(g).iter().map(|(a, b)| format!("{a}-{b}")).collect();
        out += &format!("witness cut: {}\n", cut.join(","));
    } else if let Some(f) = report.failures.first() {
        let failed: Vec<String> = f.failed.iter().map(|(a, b)| format!("{a}-{b}")).collect();
        out += &format!("witness failure set: {}\n", failed.join(","));
    }
    let passed = report.passed() && !best_effort;
    out += if passed { "PASS\n" } else { "FAIL\n" };
    VerifyOutcome { passed, lambda, report: out }
}

/// Generate a topology and write it to `out`.
pub fn cmd_gen<S: AsRef<str>>(family: &str, params: &[S], out: &Path) -> Result<Graph, CliError> {
    let g = gen::generate(family, gen::Params::parse(params)?)?;
    std::fs::write(out, g.to_text()).map_err(io_err(out))?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!("1..20".parse::<SeedRange>().unwrap().0.count(), 20);
        assert_eq!("3..=4".parse::<SeedRange>(), Ok(SeedRange(3..=4)));
        assert_eq!("7".parse::<SeedRange>(), Ok(SeedRange(7..=7)));
        assert!("5..2".parse::<SeedRange>().is_err());
        assert!("a..2".parse::<SeedRange>().is_err());
    }

    #[test]
    fn path_graph_fails_with_a_witness() {
        let g = load_topology("1 2\n1-2\n2-3\n").unwrap();
        let v = verify_text(&g, "path", 1);
        assert!(!v.passed);
        assert_eq!(v.lambda, 1);
        assert!(v.report.contains("warning"));
        assert!(v.report.contains("witness cut: 1-2") || v.report.contains("witness cut: 2-3"), "{}", v.report);
    }

    #[test]
    fn ring_four_passes() {
        let g = load_topology("1 4\n1-2\n1-3\n2-3\n3-4\n4-5\n5-2\n").unwrap();
        let v = verify_text(&g, "ring4", 1);
        assert!(v.passed, "{}", v.report);
        assert!(v.report.ends_with("PASS\n"));
    }
}
