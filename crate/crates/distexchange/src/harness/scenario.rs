//! Scenario scripts: a line-oriented text format describing actors,
//! resources, and timed market actions, plus the referential and temporal
//! validation run before execution.
//!
//! ```text
//! seed 42
//! taxonomy default
//! 0 alice CREATE_ACTOR
//! 0 alice INIT_POD pod://alice.example/store
//! 0 alice PUT_RESOURCE browsing web-browsing-history
//! 0 alice PUBLISH browsing retention=2592000
//! 86400 bob USE browsing web-analytics
//! 604800 - TICK
//! ```

use std::collections::BTreeSet;
use std::path::PathBuf;

use thiserror::Error;

use crate::policy::{Obligation, Purpose, PurposeTaxonomy};
use crate::tee::TeeMode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioParseError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TaxonomySource {
    Default,
    File(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    CreateActor,
    InitPod {
        pod_ref: String,
        obligations: Vec<Obligation>,
    },
    PutResource {
        alias: String,
        content: Vec<u8>,
    },
    Publish {
        alias: String,
        obligations: Option<Vec<Obligation>>,
    },
    PayFee {
        alias: String,
    },
    Acquire {
        alias: String,
        purpose: Purpose,
    },
    Use {
        alias: String,
        purpose: Purpose,
        bypass: bool,
    },
    UpdatePolicy {
        alias: String,
        obligations: Vec<Obligation>,
    },
    Monitor {
        alias: String,
    },
    SealBlock,
    Tick,
    SetDishonest {
        mode: TeeMode,
    },
}

impl Action {
    pub fn name(&self) -> &'static str {
        match self {
            Action::CreateActor => "CREATE_ACTOR",
            Action::InitPod { .. } => "INIT_POD",
            Action::PutResource { .. } => "PUT_RESOURCE",
            Action::Publish { .. } => "PUBLISH",
            Action::PayFee { .. } => "PAY_FEE",
            Action::Acquire { .. } => "ACQUIRE",
            Action::Use { .. } => "USE",
            Action::UpdatePolicy { .. } => "UPDATE_POLICY",
            Action::Monitor { .. } => "MONITOR",
            Action::SealBlock => "SEAL_BLOCK",
            Action::Tick => "TICK",
            Action::SetDishonest { .. } => "SET_DISHONEST",
        }
    }

    fn needs_actor(&self) -> bool {
        !matches!(self, Action::SealBlock | Action::Tick)
    }
}

/// One timed step: `<at> <actor|-> <ACTION> <args...>`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioStep {
    pub at: u64,
    pub actor: String,
    pub action: Action,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub taxonomy: TaxonomySource,
    pub steps: Vec<ScenarioStep>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScenarioIssue {
    pub step: usize,
    pub message: String,
}

impl std::fmt::Display for ScenarioIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "step {}: {}", self.step, self.message)
    }
}

fn parse_obligation(token: &str, line: usize) -> Result<Obligation, ScenarioParseError> {
    let err = |message: String| ScenarioParseError::Line { line, message };
    if let Some(value) = token.strip_prefix("retention=") {
        let seconds: u64 = value
            .parse()
            .map_err(|_| err(format!("retention wants seconds, got {value:?}")))?;
        return Ok(Obligation::retention(seconds));
    }
    if let Some(value) = token.strip_prefix("purpose=") {
        let mut purposes = Vec::new();
        for part in value.split(',') {
            purposes
                .push(Purpose::new(part).map_err(|e| err(format!("bad purpose {part:?}: {e}")))?);
        }
        return Ok(Obligation::purposes(purposes));
    }
    Err(err(format!(
        "expected retention=<secs> or purpose=<a,b,...>, got {token:?}"
    )))
}

fn parse_obligations(tokens: &[&str], line: usize) -> Result<Vec<Obligation>, ScenarioParseError> {
    if tokens == ["none"] {
        return Ok(vec![]);
    }
    tokens.iter().map(|t| parse_obligation(t, line)).collect()
}

/// Parses scenario text. Directives (`seed`, `taxonomy`) may appear before
/// the first step; `#` starts a comment.
pub fn parse_scenario(text: &str, name: &str) -> Result<Scenario, ScenarioParseError> {
    let mut scenario = Scenario {
        name: name.to_owned(),
        seed: 0,
        taxonomy: TaxonomySource::Default,
        steps: Vec::new(),
    };
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let err = |message: String| ScenarioParseError::Line { line, message };
        let stripped = raw.split('#').next().unwrap_or("").trim();
        if stripped.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = stripped.split_whitespace().collect();
        match tokens.as_slice() {
            ["seed", value] => {
                scenario.seed = value
                    .parse()
                    .map_err(|_| err(format!("seed wants a u64, got {value:?}")))?;
            }
            ["taxonomy", "default"] => scenario.taxonomy = TaxonomySource::Default,
            ["taxonomy", path] => scenario.taxonomy = TaxonomySource::File(PathBuf::from(path)),
            [at, actor, action, rest @ ..] => {
                let at: u64 = at
                    .parse()
                    .map_err(|_| err(format!("timestamp wants seconds, got {at:?}")))?;
                let action = parse_action(action, rest, line)?;
                scenario.steps.push(ScenarioStep {
                    at,
                    actor: (*actor).to_owned(),
                    action,
                });
            }
            _ => return Err(err(format!("cannot parse {stripped:?}"))),
        }
    }
    Ok(scenario)
}

fn parse_action(action: &str, rest: &[&str], line: usize) -> Result<Action, ScenarioParseError> {
    let err = |message: String| ScenarioParseError::Line { line, message };
    let parsed = match (action, rest) {
        ("CREATE_ACTOR", []) => Action::CreateActor,
        ("INIT_POD", [pod_ref, obligations @ ..]) => Action::InitPod {
            pod_ref: (*pod_ref).to_owned(),
            obligations: parse_obligations(obligations, line)?,
        },
        ("PUT_RESOURCE", [alias, content]) => Action::PutResource {
            alias: (*alias).to_owned(),
            content: content.as_bytes().to_vec(),
        },
        ("PUBLISH", [alias]) => Action::Publish {
            alias: (*alias).to_owned(),
            obligations: None,
        },
        ("PUBLISH", [alias, obligations @ ..]) => Action::Publish {
            alias: (*alias).to_owned(),
            obligations: Some(parse_obligations(obligations, line)?),
        },
        ("PAY_FEE", [alias]) => Action::PayFee {
            alias: (*alias).to_owned(),
        },
        ("ACQUIRE", [alias, purpose]) => Action::Acquire {
            alias: (*alias).to_owned(),
            purpose: Purpose::new(*purpose).map_err(|e| err(e.to_string()))?,
        },
        ("USE", [alias, purpose]) => Action::Use {
            alias: (*alias).to_owned(),
            purpose: Purpose::new(*purpose).map_err(|e| err(e.to_string()))?,
            bypass: false,
        },
        ("USE", [alias, purpose, "bypass"]) => Action::Use {
            alias: (*alias).to_owned(),
            purpose: Purpose::new(*purpose).map_err(|e| err(e.to_string()))?,
            bypass: true,
        },
        ("UPDATE_POLICY", [alias, obligations @ ..]) if !obligations.is_empty() => {
            Action::UpdatePolicy {
                alias: (*alias).to_owned(),
                obligations: parse_obligations(obligations, line)?,
            }
        }
        ("MONITOR", [alias]) => Action::Monitor {
            alias: (*alias).to_owned(),
        },
        ("SEAL_BLOCK", []) => Action::SealBlock,
        ("TICK", []) => Action::Tick,
        ("SET_DISHONEST", [mode]) => Action::SetDishonest {
            mode: match *mode {
                "honest" => TeeMode::Honest,
                "ignore-updates" => TeeMode::IgnoreUpdates,
                "silent" => TeeMode::Silent,
                other => {
                    return Err(err(format!(
                        "mode must be honest|ignore-updates|silent, got {other:?}"
                    )))
                }
            },
        },
        (other, _) => return Err(err(format!("unknown or malformed action {other:?}"))),
    };
    Ok(parsed)
}

/// Referential and temporal checks: actors and aliases are declared before
/// use, timestamps never decrease, purposes exist in the taxonomy when one
/// is resolvable.
pub fn validate_scenario(
    scenario: &Scenario,
    taxonomy: Option<&PurposeTaxonomy>,
) -> Vec<ScenarioIssue> {
    let mut issues = Vec::new();
    let mut actors: BTreeSet<&str> = BTreeSet::new();
    let mut aliases: BTreeSet<&str> = BTreeSet::new();
    let mut last_at = 0u64;

    let check_purpose = |purpose: &Purpose, step: usize, issues: &mut Vec<ScenarioIssue>| {
        if let Some(tax) = taxonomy {
            if !tax.contains(purpose) {
                issues.push(ScenarioIssue {
                    step,
                    message: format!("purpose {purpose} not in taxonomy"),
                });
            }
        }
    };

    for (step, s) in scenario.steps.iter().enumerate() {
        if s.at < last_at {
            issues.push(ScenarioIssue {
                step,
                message: format!("timestamp {} decreases (previous {})", s.at, last_at),
            });
        }
        last_at = last_at.max(s.at);

        if s.action.needs_actor() {
            if s.actor == "-" {
                issues.push(ScenarioIssue {
                    step,
                    message: format!("{} needs a named actor", s.action.name()),
                });
            } else if !matches!(s.action, Action::CreateActor) && !actors.contains(s.actor.as_str())
            {
                issues.push(ScenarioIssue {
                    step,
                    message: format!("actor {} not declared", s.actor),
                });
            }
        }

        match &s.action {
            Action::CreateActor => {
                if !actors.insert(s.actor.as_str()) {
                    issues.push(ScenarioIssue {
                        step,
                        message: format!("actor {} declared twice", s.actor),
                    });
                }
            }
            Action::PutResource { alias, .. } => {
                if !aliases.insert(alias.as_str()) {
                    issues.push(ScenarioIssue {
                        step,
                        message: format!("alias {alias} declared twice"),
                    });
                }
            }
            Action::Publish { alias, .. }
            | Action::PayFee { alias }
            | Action::Monitor { alias }
            | Action::UpdatePolicy { alias, .. } => {
                if !aliases.contains(alias.as_str()) {
                    issues.push(ScenarioIssue {
                        step,
                        message: format!("alias {alias} not declared"),
                    });
                }
            }
            Action::Acquire { alias, purpose } | Action::Use { alias, purpose, .. } => {
                if !aliases.contains(alias.as_str()) {
                    issues.push(ScenarioIssue {
                        step,
                        message: format!("alias {alias} not declared"),
                    });
                }
                check_purpose(purpose, step, &mut issues);
            }
            _ => {}
        }
    }
    issues
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_directives_and_steps() {
        let text = "\
# a comment
seed 7
taxonomy default

0 alice CREATE_ACTOR
0 alice INIT_POD pod://a retention=100
5 alice PUT_RESOURCE data payload-bytes
5 alice PUBLISH data purpose=medical,academic
9 - TICK
";
        let s = parse_scenario(text, "t").unwrap();
        assert_eq!(s.seed, 7);
        assert_eq!(s.steps.len(), 5);
        assert_eq!(s.steps[1].action.name(), "INIT_POD");
        match &s.steps[3].action {
            Action::Publish {
                obligations: Some(obs),
                ..
            } => assert_eq!(obs.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_lines_with_position() {
        let err = parse_scenario("0 alice FLY\n", "t").unwrap_err();
        assert_eq!(
            err,
            ScenarioParseError::Line {
                line: 1,
                message: "unknown or malformed action \"FLY\"".into()
            }
        );
        let err = parse_scenario("x alice CREATE_ACTOR\n", "t").unwrap_err();
        assert!(matches!(err, ScenarioParseError::Line { line: 1, .. }));
    }

    #[test]
    fn undeclared_actor_is_flagged() {
        let s = parse_scenario("0 alice INIT_POD pod://a\n", "t").unwrap();
        let issues = validate_scenario(&s, None);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].step, 0);
        assert!(issues[0].message.contains("not declared"));
    }

    #[test]
    fn decreasing_timestamps_are_flagged() {
        let text = "0 alice CREATE_ACTOR\n5 - TICK\n3 - TICK\n";
        let s = parse_scenario(text, "t").unwrap();
        let issues = validate_scenario(&s, None);
        assert_eq!(issues.len(), 1);
        assert_eq!(issues[0].step, 2);
    }

    #[test]
    fn bundled_scenarios_validate() {
        let tax = PurposeTaxonomy::default_market();
        for (name, text) in [
            ("alice_bob", include_str!("../../scenarios/alice_bob.scn")),
            ("violation", include_str!("../../scenarios/violation.scn")),
        ] {
            let s = parse_scenario(text, name).unwrap();
            let issues = validate_scenario(&s, Some(&tax));
            assert!(issues.is_empty(), "{name}: {issues:?}");
        }
    }
}
