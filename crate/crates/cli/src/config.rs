//! Scenario config files: one `key=value` per line, `#` starts a comment,
//! repeated `fault=` lines form the schedule.
//!
//! ```text
//! id=b4-bootstrap
//! topology=b4.topo
//! kappa=1
//! start=empty
//! fault=at:legit fail_stop 2
//! fault=at:5000 remove_link 4 5
//! ```

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use renaissance::channels::FaultPlan;
use renaissance::engine::{Fault, Scenario, Start, When};
use renaissance::topology::{Graph, NodeId};

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub id: String,
    /// Resolved against the config file's directory.
    pub topology: PathBuf,
    /// Number of controllers that run, counting from 1. All declared ones by default.
    pub controllers: Option<u32>,
    pub kappa: usize,
    pub theta: u32,
    pub three_tag: bool,
    pub memory_adaptive: bool,
    pub seed: u64,
    pub max_steps: u64,
    pub start: Start,
    pub link_plan: FaultPlan,
    pub faults: Vec<(When, Fault)>,
    pub hold_frames: usize,
    pub csv: Option<PathBuf>,
    pub trace: Option<PathBuf>,
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<ScenarioConfig, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_owned(), source })?;
        let base = path.parent().unwrap_or(Path::new(""));
        ScenarioConfig::parse(&text, base).map_err(|(line, msg)| CliError::Config { path: path.to_owned(), line, msg })
    }

    /// Parse config text; relative paths are joined onto `base`.
    pub fn parse(text: &str, base: &Path) -> Result<ScenarioConfig, (usize, String)> {
        let defaults = Scenario::new("", Graph::default());
        let mut c = ScenarioConfig {
            id: String::new(),
            topology: PathBuf::new(),
            controllers: None,
            kappa: defaults.kappa,
            theta: defaults.theta,
            three_tag: defaults.three_tag,
            memory_adaptive: defaults.memory_adaptive,
            seed: defaults.seed,
            max_steps: defaults.max_steps,
            start: defaults.start,
            link_plan: defaults.link_plan,
            faults: Vec::new(),
            hold_frames: 0,
            csv: None,
            trace: None,
        };
        let mut seen = BTreeSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap().trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or((line, format!("expected key=value, got {body:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            if key != "fault" && !seen.insert(key.to_string()) {
                return Err((line, format!("{key} given twice")));
            }
            let err = |msg: String| (line, msg);
            match key {
                "id" => c.id = value.to_string(),
                "topology" => c.topology = base.join(value),
                "controllers" => c.controllers = Some(parse(value).map_err(err)?),
                "kappa" => c.kappa = parse(value).map_err(err)?,
                "theta" => c.theta = parse(value).map_err(err)?,
                "three_tag" => c.three_tag = parse(value).map_err(err)?,
                "memory_adaptive" => c.memory_adaptive = parse(value).map_err(err)?,
                "seed" => c.seed = parse(value).map_err(err)?,
                "max_steps" => c.max_steps = parse(value).map_err(err)?,
                "hold_frames" => c.hold_frames = parse(value).map_err(err)?,
                "start" => {
                    c.start = match value {
                        "empty" => Start::Empty,
                        "corrupt" => Start::Corrupt,
                        _ => return Err(err(format!("start must be empty or corrupt, got {value:?}"))),
                    }
                }
                "links" => match value.parse::<Fault>().map_err(err)? {
                    Fault::LinkPlan { link: None, plan } => c.link_plan = plan,
                    _ => return Err(err("links takes a plan for every link, e.g. lossy 0.1 3".into())),
                },
                "fault" => c.faults.push(parse_fault(value).map_err(err)?),
                "csv" => c.csv = Some(base.join(value)),
                "trace" => c.trace = Some(base.join(value)),
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        if c.topology.as_os_str().is_empty() {
            return Err((0, "missing topology".into()));
        }
        if c.id.is_empty() {
            c.id = c.topology.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        }
        Ok(c)
    }

    /// Random omissions on every link that no scheduled `reliable` ever lifts.
    pub fn persistent_loss(&self) -> bool {
        let lossy = |p: &FaultPlan| p.omit_prob > 0.0;
        let mut lossy_now = lossy(&self.link_plan);
        for (_, f) in &self.faults {
            if let Fault::LinkPlan { link: None, plan } = f {
                lossy_now = lossy(plan);
            }
        }
        lossy_now
    }

    pub fn scenario(&self, graph: Graph) -> Result<Scenario, CliError> {
        let declared = graph.n_controllers();
        let active = self.controllers.unwrap_or(declared);
        if active > declared {
            return Err(CliError::Usage(format!("{active} controllers requested, topology declares {declared}")));
        }
        let mut s = Scenario::new(self.id.clone(), graph);
        s.active = (1..=active).map(NodeId).collect();
        s.kappa = self.kappa;
        s.theta = self.theta;
        s.three_tag = self.three_tag;
        s.memory_adaptive = self.memory_adaptive;
        s.seed = self.seed;
        s.max_steps = self.max_steps;
        s.start = self.start;
        s.link_plan = self.link_plan.clone();
        s.hold_frames = self.hold_frames;
        for (when, fault) in &self.faults {
            s = s.with_fault(*when, fault.clone());
        }
        Ok(s)
    }
}

fn parse<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("cannot parse {v:?}"))
}

/// `at:<step> <fault>` or `at:legit <fault>`.
fn parse_fault(v: &str) -> Result<(When, Fault), String> {
    let (at, fault) = v.split_once(char::is_whitespace).ok_or("fault needs at:<step>|at:legit and a fault")?;
    let when = match at.strip_prefix("at:") {
        Some("legit") => When::Legit,
        Some(n) => When::Step(parse(n)?),
        None => return Err(format!("fault time must start with at:, got {at:?}")),
    };
    Ok((when, fault.trim().parse()?))
}
