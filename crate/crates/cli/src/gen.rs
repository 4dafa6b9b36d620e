//! Topology families for experiments. Switches are numbered after the
//! controllers; every controller attaches to two switches unless noted.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use renaissance::topology::{edge_connectivity, Graph, NodeId};

use crate::CliError;

const RANDOM_ATTEMPTS: usize = 1000;

/// `key=value` parameters of one family.
#[derive(Debug, Default)]
pub struct Params(BTreeMap<String, String>);

impl Params {
    pub fn parse<S: AsRef<str>>(args: &[S]) -> Result<Params, CliError> {
        let mut m = BTreeMap::new();
        for a in args {
            let a = a.as_ref();
            let (k, v) = a.split_once('=').ok_or_else(|| CliError::Usage(format!("expected key=value, got {a:?}")))?;
            m.insert(k.to_string(), v.to_string());
        }
        Ok(Params(m))
    }

    fn get(&mut self, key: &str, default: Option<u64>) -> Result<u64, CliError> {
        match self.0.remove(key) {
            Some(v) => v.parse().map_err(|_| CliError::Usage(format!("{key}={v} is not a number"))),
            None => default.ok_or_else(|| CliError::Usage(format!("missing parameter {key}"))),
        }
    }

    fn finish(self) -> Result<(), CliError> {
        match self.0.keys().next() {
            Some(k) => Err(CliError::Usage(format!("unknown parameter {k}"))),
            None => Ok(()),
        }
    }
}

fn unsatisfiable(msg: String) -> CliError {
    CliError::Unsatisfiable(msg)
}

/// Build a graph of `family` from its parameters.
pub fn generate(family: &str, mut p: Params) -> Result<Graph, CliError> {
    let g = match family {
        "ring" => {
            let (n, c) = (p.get("n", None)?, p.get("controllers", Some(2))?);
            p.finish()?;
            ring(n as u32, c as u32)?
        }
        "grid" => {
            let (r, k, c) = (p.get("rows", None)?, p.get("cols", None)?, p.get("controllers", Some(2))?);
            p.finish()?;
            grid(r as u32, k as u32, c as u32)?
        }
        "clos-lite" => {
            let (s, l, c) = (p.get("spine", None)?, p.get("leaf", None)?, p.get("controllers", Some(2))?);
            p.finish()?;
            clos_lite(s as u32, l as u32, c as u32)?
        }
        "random" => {
            let (n, k) = (p.get("n", None)?, p.get("k", Some(2))?);
            let (seed, c) = (p.get("seed", Some(0))?, p.get("controllers", Some(2))?);
            p.finish()?;
            random(n as u32, k as usize, seed, c as u32)?
        }
        _ => return Err(CliError::Usage(format!("unknown family {family:?} (ring, grid, clos-lite, random)"))),
    };
    Ok(g)
}

/// Attach controller `i` of `c` to two neighbouring entries of `cycle`, spread evenly.
fn attach(g: &mut Graph, cycle: &[NodeId], c: u32) {
    let len = cycle.len();
    for i in 0..c as usize {
        let at = i * len / c as usize;
        let ctrl = NodeId(i as u32 + 1);
        g.add_edge(ctrl, cycle[at]);
        g.add_edge(ctrl, cycle[(at + 1) % len]);
    }
}

pub fn ring(n: u32, c: u32) -> Result<Graph, CliError> {
    if n < 3 {
        return Err(unsatisfiable(format!("a ring needs at least 3 switches, got {n}")));
    }
    let mut g = Graph::new(c, n);
    let sw: Vec<NodeId> = (c + 1..=c + n).map(NodeId).collect();
    for i in 0..sw.len() {
        g.add_edge(sw[i], sw[(i + 1) % sw.len()]);
    }
    attach(&mut g, &sw, c);
    Ok(g)
}

pub fn grid(rows: u32, cols: u32, c: u32) -> Result<Graph, CliError> {
    if rows < 2 || cols < 2 {
        return Err(unsatisfiable(format!("a grid needs at least 2x2 switches, got {rows}x{cols}")));
    }
    let mut g = Graph::new(c, rows * cols);
    let at = |r: u32, k: u32| NodeId(c + 1 + r * cols + k);
    for r in 0..rows {
        for k in 0..cols {
            if k + 1 < cols {
                g.add_edge(at(r, k), at(r, k + 1));
            }
            if r + 1 < rows {
                g.add_edge(at(r, k), at(r + 1, k));
            }
        }
    }
    // The outer boundary, clockwise from the top-left corner.
    let mut border: Vec<NodeId> = (0..cols).map(|k| at(0, k)).collect();
    border.extend((1..rows).map(|r| at(r, cols - 1)));
    border.extend((0..cols - 1).rev().map(|k| at(rows - 1, k)));
    border.extend((1..rows - 1).rev().map(|r| at(r, 0)));
    attach(&mut g, &border, c);
    Ok(g)
}

/// Every leaf connects to every spine; controllers hang off pairs of leaves.
pub fn clos_lite(spine: u32, leaf: u32, c: u32) -> Result<Graph, CliError> {
    if spine < 1 || leaf < 2 {
        return Err(unsatisfiable(format!("clos-lite needs a spine and two leaves, got {spine} and {leaf}")));
    }
    let mut g = Graph::new(c, spine + leaf);
    let spines: Vec<NodeId> = (c + 1..=c + spine).map(NodeId).collect();
    let leaves: Vec<NodeId> = (c + spine + 1..=c + spine + leaf).map(NodeId).collect();
    for &s in &spines {
        for &l in &leaves {
            g.add_edge(s, l);
        }
    }
    attach(&mut g, &leaves, c);
    Ok(g)
}

/// A random graph of `n` switches whose edge connectivity, controllers
/// included, is at least `k`. Each controller attaches to `k` switches.
pub fn random(n: u32, k: usize, seed: u64, c: u32) -> Result<Graph, CliError> {
    if n < 3 || k == 0 || k > n as usize - 1 {
        return Err(unsatisfiable(format!("no {k}-connected graph on {n} switches")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let all_pairs = n as usize * (n as usize - 1) / 2;
    let extra = (n as usize * (k - 1) / 2 + n as usize / 4).min(all_pairs - n as usize);
    for _ in 0..RANDOM_ATTEMPTS {
        let mut g = Graph::new(c, n);
        let mut sw: Vec<NodeId> = (c + 1..=c + n).map(NodeId).collect();
        sw.shuffle(&mut rng);
        for i in 0..sw.len() {
            g.add_edge(sw[i], sw[(i + 1) % sw.len()]);
        }
        let mut added = 0;
        while added < extra {
            let a = sw[rng.gen_range(0..sw.len())];
            let b = sw[rng.gen_range(0..sw.len())];
            if a != b && g.add_edge(a, b) {
                added += 1;
            }
        }
        for i in 1..=c {
            for &s in sw.choose_multiple(&mut rng, k) {
                g.add_edge(NodeId(i), s);
            }
        }
        if edge_connectivity(&g) >= k {
            return Ok(g);
        }
    }
    Err(unsatisfiable(format!("no {k}-connected graph on {n} switches after {RANDOM_ATTEMPTS} attempts")))
}
