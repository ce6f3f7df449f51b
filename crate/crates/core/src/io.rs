//! JSON problem and scheme files.

use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::costmodel::{FeatureVector, Objective, Resources};
use crate::error::{Error, Result};
use crate::geometry::{HyperplaneGeometry, SchemeMetrics};
use crate::polytope::AnalysisConfig;
use crate::program::{AccessTemplate, Controller, Program, UnrollStrategy};
use crate::rewrite::ResolutionDag;
use crate::search::{CandidateBudget, Solution, SolveReport, SolveStats};

pub const FORMAT_VERSION: u32 = 1;

fn one() -> u32 {
    1
}

fn thirty_two() -> u32 {
    32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemorySpec {
    pub id: String,
    pub dims: Vec<u64>,
    #[serde(default = "thirty_two")]
    pub element_bits: u32,
    #[serde(default = "one")]
    pub ports: u32,
}

/// Analysis knobs a problem may override.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct AnalysisOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symbol_range: Option<(i64, i64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_clamp: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub enumeration: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub version: u32,
    pub memory: MemorySpec,
    pub controllers: Controller,
    pub accesses: Vec<AccessTemplate>,
    #[serde(default)]
    pub unroll_strategy: UnrollStrategy,
    /// Runtime values for data-dependent loop bounds, used by replay.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub concrete_bounds: BTreeMap<String, i64>,
    #[serde(default)]
    pub budget: CandidateBudget,
    #[serde(default)]
    pub analysis: AnalysisOverrides,
    #[serde(default)]
    pub objective: Objective,
}

/// Deserializes with the JSON path of the first offending field in errors.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::invalid(format!("at `{path}`: {}", e.into_inner()))
    })
}

impl ProblemFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let p: ProblemFile = parse_json(text)?;
        p.check()?;
        Ok(p)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported problem version {}", self.version)));
        }
        if self.memory.dims.is_empty() || self.memory.dims.contains(&0) {
            return Err(Error::invalid("memory dims must be non-empty and positive"));
        }
        if self.memory.ports == 0 || self.memory.element_bits == 0 {
            return Err(Error::invalid("memory ports and element_bits must be positive"));
        }
        self.budget.check()?;
        self.program().check()
    }

    pub fn program(&self) -> Program {
        Program {
            memory: self.memory.id.clone(),
            dims: self.memory.dims.clone(),
            root: self.controllers.clone(),
            accesses: self.accesses.clone(),
            strategy: self.unroll_strategy,
        }
    }

    pub fn analysis_config(&self) -> AnalysisConfig {
        let mut cfg = AnalysisConfig::default();
        let a = self.analysis;
        if let Some(r) = a.symbol_range {
            cfg.symbol_range = r;
        }
        if let Some(c) = a.dynamic_clamp {
            cfg.dynamic_clamp = c;
        }
        if let Some(b) = a.enumeration {
            cfg.budget = b;
        }
        cfg
    }
}

/// One banking scheme as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEntry {
    #[serde(flatten)]
    pub geometry: HyperplaneGeometry,
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<Vec<u64>>,
    #[serde(default = "one")]
    pub duplication: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ports: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<SchemeMetrics>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dag: Option<ResolutionDag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Resources>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<FeatureVector>,
}

impl From<&Solution> for SchemeEntry {
    fn from(s: &Solution) -> Self {
        SchemeEntry {
            geometry: s.geometry.clone(),
            p: Some(s.p.clone()),
            duplication: s.duplication,
            ports: Some(s.ports),
            metrics: Some(s.metrics.clone()),
            dag: Some(s.dag.clone()),
            predicted: Some(s.predicted),
            features: Some(s.features.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeFile {
    pub version: u32,
    pub memory: String,
    pub chosen: SchemeEntry,
    #[serde(default)]
    pub alternatives: Vec<SchemeEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stats: Option<SolveStats>,
}

impl SchemeFile {
    /// The best `top` solutions of a report; `top == 0` keeps all.
    pub fn from_report(memory: &str, report: &SolveReport, top: usize) -> Result<Self> {
        let keep = if top == 0 { report.solutions.len() } else { top.min(report.solutions.len()) };
        let mut entries = report.solutions[..keep].iter().map(SchemeEntry::from);
        let chosen = entries.next().ok_or(Error::NoSolution)?;
        Ok(SchemeFile {
            version: FORMAT_VERSION,
            memory: memory.to_string(),
            chosen,
            alternatives: entries.collect(),
            stats: Some(report.stats.clone()),
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: SchemeFile = parse_json(text)?;
        if s.version != FORMAT_VERSION {
            return Err(Error::invalid(format!("unsupported scheme version {}", s.version)));
        }
        Ok(s)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
