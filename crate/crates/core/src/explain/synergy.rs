use std::fmt::Write as _;

use serde::Serialize;

use super::GlobalImportance;
use crate::cue::{CueKind, NUM_CUES};
use crate::error::{Error, Result};

const TOP_EDGES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynergyNode {
    pub cue: &'static str,
    /// Share of global importance; the node weights sum to 1.
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynergyEdge {
    pub a: &'static str,
    pub b: &'static str,
    /// Mean absolute interaction value of the pair.
    pub strength: f64,
    pub top: bool,
}

/// Cue nodes weighted by importance and all ten cue pairs weighted by
/// interaction strength, with the three strongest pairs flagged.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynergyGraph {
    pub nodes: Vec<SynergyNode>,
    pub edges: Vec<SynergyEdge>,
}

impl SynergyGraph {
    /// Builds the graph from global importances and a mean-|interaction|
    /// matrix. Equal strengths are ranked by pair order (cue order of the
    /// first member, then of the second).
    pub fn new(importance: &GlobalImportance, interactions: &[[f64; NUM_CUES]; NUM_CUES]) -> Result<Self> {
        let total: f64 = importance.percent.iter().sum();
        if total.is_nan() || total <= 0.0 || importance.percent.iter().any(|p| *p < 0.0) {
            return Err(Error::Validation("importances must be non-negative with a positive sum".into()));
        }
        let nodes = CueKind::ALL
            .iter()
            .map(|k| SynergyNode {
                cue: k.label(),
                weight: importance.percent[k.index()] / total,
            })
            .collect();
        let mut edges = Vec::with_capacity(10);
        for i in 0..NUM_CUES {
            for j in (i + 1)..NUM_CUES {
                let strength = interactions[i][j];
                if !strength.is_finite() || strength < 0.0 {
                    return Err(Error::Validation(format!("bad interaction strength {strength}")));
                }
                edges.push(SynergyEdge {
                    a: CueKind::ALL[i].label(),
                    b: CueKind::ALL[j].label(),
                    strength,
                    top: false,
                });
            }
        }
        let mut order: Vec<usize> = (0..edges.len()).collect();
        order.sort_by(|&x, &y| edges[y].strength.total_cmp(&edges[x].strength).then(x.cmp(&y)));
        for &e in &order[..TOP_EDGES] {
            edges[e].top = true;
        }
        Ok(SynergyGraph { nodes, edges })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes") + "\n"
    }

    /// Graphviz text. Edge pen width scales with strength relative to the
    /// strongest pair; flagged pairs are drawn bold.
    pub fn to_dot(&self) -> String {
        let max_strength = self
            .edges
            .iter()
            .map(|e| e.strength)
            .fold(0.0, f64::max);
        let mut out = String::from("graph synergy {\n  layout=circo;\n  node [shape=circle];\n");
        for n in &self.nodes {
            writeln!(
                out,
                "  \"{}\" [weight=\"{:.6}\", width={:.3}];",
                n.cue,
                n.weight,
                0.5 + 1.5 * n.weight
            )
            .unwrap();
        }
        for e in &self.edges {
            let rel = if max_strength > 0.0 { e.strength / max_strength } else { 0.0 };
            writeln!(
                out,
                "  \"{}\" -- \"{}\" [strength=\"{:.6}\", penwidth={:.3}, style={}];",
                e.a,
                e.b,
                e.strength,
                0.5 + 4.5 * rel,
                if e.top { "bold" } else { "solid" }
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }
}
