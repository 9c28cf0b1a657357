use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorkflowError;

pub const DEFAULT_PAYLOAD_LIMIT_BYTES: usize = 262_144;

const DEFAULT_DEFINITION: &str = include_str!("default.toml");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StateKind {
    Task,
    ParallelMap,
    WaitLoop,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FanOut {
    Files,
    Partitions,
}

/// The functions a state may run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Ingest,
    ReducePrep,
    ReduceGate,
    #[serde(rename = "reduce1")]
    ReduceAggregate,
    #[serde(rename = "reduce2")]
    ReduceRank,
}

impl Target {
    /// Whether the target answers yes or no, as a wait-loop requires.
    pub fn is_boolean(self) -> bool {
        self == Target::ReduceGate
    }

    fn shape(self) -> (StateKind, Option<FanOut>) {
        match self {
            Target::Ingest => (StateKind::ParallelMap, Some(FanOut::Files)),
            Target::ReducePrep => (StateKind::Task, None),
            Target::ReduceGate => (StateKind::WaitLoop, None),
            Target::ReduceAggregate => (StateKind::ParallelMap, Some(FanOut::Partitions)),
            Target::ReduceRank => (StateKind::Task, None),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateDef {
    pub name: String,
    pub kind: StateKind,
    pub target: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fan_out: Option<FanOut>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub end: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkflowDefinition {
    #[serde(default = "default_payload_limit")]
    pub payload_limit_bytes: usize,
    /// Orchestrator time spent moving into each state.
    #[serde(default)]
    pub transition_ms: u64,
    /// Extra attempts per failed task.
    #[serde(default)]
    pub retries: u32,
    #[serde(default)]
    pub retry_backoff_ms: u64,
    pub states: Vec<StateDef>,
}

fn default_payload_limit() -> usize {
    DEFAULT_PAYLOAD_LIMIT_BYTES
}

impl Default for WorkflowDefinition {
    fn default() -> Self {
        WorkflowDefinition::parse(DEFAULT_DEFINITION)
            .expect("embedded workflow definition is valid")
    }
}

impl WorkflowDefinition {
    pub fn parse(text: &str) -> Result<Self, WorkflowError> {
        let def: WorkflowDefinition =
            toml::from_str(text).map_err(|e| WorkflowError::Definition(e.to_string()))?;
        def.validate()?;
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self, WorkflowError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| WorkflowError::Definition(format!("{}: {e}", path.display())))?;
        WorkflowDefinition::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("workflow definition serialises")
    }

    pub fn state(&self, target: Target) -> Option<&StateDef> {
        self.states.iter().find(|s| s.target == target)
    }

    pub fn validate(&self) -> Result<(), WorkflowError> {
        let bad = |m: String| Err(WorkflowError::Definition(m));
        if self.states.is_empty() {
            return bad("no states".into());
        }
        let ends = self.states.iter().filter(|s| s.end).count();
        if ends != 1 {
            return bad(format!("expected exactly one terminal state, found {ends}"));
        }
        if !self.states.last().is_some_and(|s| s.end) {
            return bad("the terminal state must come last".into());
        }
        let mut names = HashSet::new();
        let mut targets = HashSet::new();
        for s in &self.states {
            if !names.insert(s.name.as_str()) {
                return bad(format!("duplicate state name {:?}", s.name));
            }
            if !targets.insert(s.target) {
                return bad(format!("{:?} runs more than once", s.target));
            }
            if s.kind == StateKind::WaitLoop && !s.target.is_boolean() {
                return bad(format!("wait-loop {:?} needs a boolean task", s.name));
            }
            let (kind, fan_out) = s.target.shape();
            if s.kind != kind || s.fan_out != fan_out {
                return bad(format!(
                    "state {:?} cannot run {:?} as {:?}",
                    s.name, s.target, s.kind
                ));
            }
        }
        let pos = |t: Target| self.states.iter().position(|s| s.target == t);
        let required = [
            Target::Ingest,
            Target::ReduceGate,
            Target::ReduceAggregate,
            Target::ReduceRank,
        ];
        let mut last = None;
        for t in required {
            let Some(p) = pos(t) else {
                return bad(format!("missing a state for {t:?}"));
            };
            if last.is_some_and(|l| p < l) {
                return bad(format!("{t:?} is out of order"));
            }
            last = Some(p);
        }
        if let Some(p) = pos(Target::ReducePrep) {
            if p < pos(Target::Ingest).unwrap_or(0)
                || p > pos(Target::ReduceAggregate).unwrap_or(usize::MAX)
            {
                return bad("ReducePrep must run between ingest and aggregation".into());
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_definition() {
        let d = WorkflowDefinition::default();
        assert_eq!(d.payload_limit_bytes, 262_144);
        assert_eq!(d.states.len(), 5);
        assert_eq!(WorkflowDefinition::parse(&d.to_toml()).unwrap(), d);
    }

    fn edited(f: impl FnOnce(&mut WorkflowDefinition)) -> Result<(), WorkflowError> {
        let mut d = WorkflowDefinition::default();
        f(&mut d);
        d.validate()
    }

    #[test]
    fn rejects_malformed_definitions() {
        assert!(edited(|d| d.states[4].end = false).is_err());
        assert!(edited(|d| d.states[1].end = true).is_err());
        assert!(edited(|d| d.states[2].target = Target::ReducePrep).is_err());
        assert!(edited(|d| d.states.swap(2, 3)).is_err());
        assert!(edited(|d| {
            d.states.remove(1);
        })
        .is_ok());
        assert!(WorkflowDefinition::parse("states = []").is_err());
    }
}
