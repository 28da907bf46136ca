use std::collections::BTreeSet;
use std::fmt;

use crate::enforcement::{parse_policy, Mechanism, PolicyError, SecurityAutomaton};
use crate::guest::{parse_program, GuestError, GuestProgram};
use crate::ids::{JobId, NodeId, PolicyId, TaskId};

use super::churn::{ChurnSpec, Transition};

pub const PPM: u32 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSpec {
    pub id: NodeId,
    pub compromised: bool,
    pub churn: ChurnSpec,
    /// Time at which an honest node turns hostile, if ever.
    pub hostile_at: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskDef {
    pub id: TaskId,
    pub duration: u64,
    pub program: GuestProgram,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobSpec {
    pub id: JobId,
    pub owner: NodeId,
    pub submit: u64,
    pub tasks: Vec<TaskDef>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub horizon: u64,
    pub mechanism: Mechanism,
    pub dissemination_latency: u64,
    pub dispatch_latency: u64,
    /// Local-owner load in parts per million.
    pub busy_ppm: u32,
    pub retry_budget: u32,
    pub cooldown: u64,
    pub deny: BTreeSet<NodeId>,
    pub nodes: Vec<NodeSpec>,
    pub policies: Vec<SecurityAutomaton>,
    pub active_policy: PolicyId,
    pub jobs: Vec<JobSpec>,
}

impl Scenario {
    pub fn policy(&self) -> &SecurityAutomaton {
        self.policies
            .iter()
            .find(|p| *p.policy_id() == self.active_policy)
            .expect("active policy is checked at load")
    }

    /// Task duration stretched by the local owner's load, rounded up.
    pub fn effective_duration(&self, d: u64) -> u64 {
        if self.busy_ppm >= PPM {
            return u64::MAX;
        }
        let num = d as u128 * PPM as u128;
        let den = (PPM - self.busy_ppm) as u128;
        u64::try_from(num.div_ceil(den)).unwrap_or(u64::MAX)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

fn err<T>(line: usize, message: impl fmt::Display) -> Result<T, ScenarioError> {
    Err(ScenarioError {
        line,
        message: message.to_string(),
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    None,
    Sim,
    Nodes,
    Policy,
    Jobs,
}

struct Block {
    start: usize,
    text: String,
}

struct OpenTask {
    id: TaskId,
    duration: u64,
    line: usize,
    body: Block,
}

/// Parses and validates a scenario. Only the first error is reported.
pub fn load_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut seed = 0;
    let mut horizon = None;
    let mut mechanism = Mechanism::Monitor;
    let mut dissemination_latency = 1;
    let mut dispatch_latency = 1;
    let mut busy_ppm = 50_000;
    let mut retry_budget = 8;
    let mut cooldown = 10;
    let mut deny = BTreeSet::new();
    let mut active_policy = None;
    let mut seen_keys = BTreeSet::new();

    let mut nodes: Vec<NodeSpec> = Vec::new();
    let mut policy_blocks: Vec<Block> = Vec::new();
    let mut jobs: Vec<(usize, JobSpec)> = Vec::new();
    let mut task: Option<OpenTask> = None;
    let mut section = Section::None;
    let mut last_line = 0;

    for (i, raw) in text.lines().enumerate() {
        let n = i + 1;
        last_line = n;
        if let Some(t) = task.as_mut() {
            if raw.trim() == "end" {
                let t = task.take().expect("open task");
                let program =
                    parse_program(&t.body.text).map_err(|e| guest_error(e, &t.body, t.line))?;
                let Some((_, job)) = jobs.last_mut() else {
                    unreachable!("tasks only open inside a job")
                };
                job.tasks.push(TaskDef {
                    id: t.id,
                    duration: t.duration,
                    program,
                });
            } else {
                t.body.text.push_str(raw);
                t.body.text.push('\n');
            }
            continue;
        }
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            if section == Section::Policy {
                push_policy_line(&mut policy_blocks, "");
            }
            continue;
        }
        if line.starts_with('[') {
            section = match line {
                "[sim]" => Section::Sim,
                "[nodes]" => Section::Nodes,
                "[policy]" => {
                    policy_blocks.push(Block {
                        start: n + 1,
                        text: String::new(),
                    });
                    Section::Policy
                }
                "[jobs]" => Section::Jobs,
                _ => return err(n, format!("unknown section `{line}`")),
            };
            continue;
        }
        match section {
            Section::None => return err(n, "content before the first section"),
            Section::Policy => push_policy_line(&mut policy_blocks, line),
            Section::Sim => {
                let Some((key, value)) = line.split_once('=') else {
                    return err(n, "expected `key = value`");
                };
                let (key, value) = (key.trim(), value.trim());
                if !seen_keys.insert(key.to_string()) {
                    return err(n, format!("duplicate key `{key}`"));
                }
                match key {
                    "seed" => seed = int(n, key, value)?,
                    "horizon" => horizon = Some(int(n, key, value)?),
                    "mechanism" => mechanism = value.parse().or_else(|e: String| err(n, e))?,
                    "dissemination_latency" => dissemination_latency = int(n, key, value)?,
                    "dispatch_latency" => dispatch_latency = int(n, key, value)?,
                    "busy_fraction" => busy_ppm = fraction(n, value)?,
                    "retry_budget" => retry_budget = int(n, key, value)?,
                    "cooldown" => cooldown = int(n, key, value)?,
                    "active_policy" => active_policy = Some((n, PolicyId::new(value))),
                    "deny" => {
                        for v in value.split_whitespace() {
                            deny.insert(NodeId(int(n, key, v)?));
                        }
                    }
                    _ => return err(n, format!("unknown key `{key}`")),
                }
            }
            Section::Nodes => {
                let node = parse_node(n, line)?;
                if nodes.iter().any(|x| x.id == node.id) {
                    return err(n, format!("duplicate node id {}", node.id));
                }
                nodes.push(node);
            }
            Section::Jobs => {
                let mut words = line.split_whitespace();
                match words.next() {
                    Some("job") => {
                        let job = parse_job(n, words)?;
                        if jobs.iter().any(|(_, j)| j.id == job.id) {
                            return err(n, format!("duplicate job id {}", job.id));
                        }
                        jobs.push((n, job));
                    }
                    Some("task") => {
                        if jobs.is_empty() {
                            return err(n, "task outside of a job");
                        }
                        let (id, duration) = parse_task_header(n, words)?;
                        let dup = jobs.iter().flat_map(|(_, j)| &j.tasks).any(|t| t.id == id);
                        if dup {
                            return err(n, format!("duplicate task id {id}"));
                        }
                        task = Some(OpenTask {
                            id,
                            duration,
                            line: n,
                            body: Block {
                                start: n + 1,
                                text: String::new(),
                            },
                        });
                    }
                    Some(w) => return err(n, format!("expected `job` or `task`, found `{w}`")),
                    None => unreachable!("blank lines are skipped"),
                }
            }
        }
    }
    if let Some(t) = task {
        return err(t.line, format!("task {} is missing `end`", t.id));
    }

    let Some(horizon) = horizon else {
        return err(last_line.max(1), "missing `horizon` in [sim]");
    };
    if horizon == 0 {
        return err(line_of(text, "horizon"), "horizon must be positive");
    }
    let mut policies: Vec<SecurityAutomaton> = Vec::new();
    for b in &policy_blocks {
        let p = parse_policy(&b.text).map_err(|e| policy_error(e, b))?;
        if policies.iter().any(|q| q.policy_id() == p.policy_id()) {
            return err(
                b.start,
                format!("duplicate policy `{}`", p.policy_id().as_str()),
            );
        }
        policies.push(p);
    }
    let active_policy = match active_policy {
        Some((n, id)) => {
            if !policies.iter().any(|p| *p.policy_id() == id) {
                return err(n, format!("unknown policy `{}`", id.as_str()));
            }
            id
        }
        None => match policies.first() {
            Some(p) => p.policy_id().clone(),
            None => return err(last_line.max(1), "no [policy] section"),
        },
    };
    for (n, job) in &jobs {
        if !nodes.iter().any(|x| x.id == job.owner) {
            return err(
                *n,
                format!("job {} owner {} is not a declared node", job.id, job.owner),
            );
        }
        if job.tasks.is_empty() {
            return err(*n, format!("job {} has no tasks", job.id));
        }
    }

    Ok(Scenario {
        seed,
        horizon,
        mechanism,
        dissemination_latency,
        dispatch_latency,
        busy_ppm,
        retry_budget,
        cooldown,
        deny,
        nodes,
        policies,
        active_policy,
        jobs: jobs.into_iter().map(|(_, j)| j).collect(),
    })
}

fn push_policy_line(blocks: &mut [Block], line: &str) {
    let b = blocks.last_mut().expect("policy section opened a block");
    b.text.push_str(line);
    b.text.push('\n');
}

fn line_of(text: &str, key: &str) -> usize {
    text.lines()
        .position(|l| l.trim_start().starts_with(key))
        .map_or(1, |i| i + 1)
}

fn guest_error(e: GuestError, body: &Block, header: usize) -> ScenarioError {
    match e {
        GuestError::Syntax { line, message } => ScenarioError {
            line: body.start + line - 1,
            message,
        },
        other => ScenarioError {
            line: header,
            message: other.to_string(),
        },
    }
}

fn policy_error(e: PolicyError, b: &Block) -> ScenarioError {
    match e {
        PolicyError::Syntax { line, message } => ScenarioError {
            line: b.start + line - 1,
            message,
        },
        other => ScenarioError {
            line: b.start,
            message: other.to_string(),
        },
    }
}

fn int<T: std::str::FromStr>(n: usize, key: &str, value: &str) -> Result<T, ScenarioError> {
    value.parse().or_else(|_| {
        err(
            n,
            format!("`{key}` expects a non-negative integer, found `{value}`"),
        )
    })
}

fn fraction(n: usize, value: &str) -> Result<u32, ScenarioError> {
    let x: f64 = value.parse().or_else(|_| {
        err(
            n,
            format!("busy_fraction expects a number, found `{value}`"),
        )
    })?;
    if !(0.0..=1.0).contains(&x) {
        return err(n, format!("busy_fraction {value} is out of range [0, 1]"));
    }
    Ok((x * PPM as f64).round() as u32)
}

fn kv(n: usize, word: &str) -> Result<(&str, &str), ScenarioError> {
    word.split_once('=').ok_or_else(|| ScenarioError {
        line: n,
        message: format!("expected `key=value`, found `{word}`"),
    })
}

fn parse_node(n: usize, line: &str) -> Result<NodeSpec, ScenarioError> {
    let mut words = line.split_whitespace();
    if words.next() != Some("node") {
        return err(n, "expected `node <id> <honest|compromised> <churn>`");
    }
    let id = NodeId(int(n, "node", words.next().unwrap_or(""))?);
    let compromised = match words.next() {
        Some("honest") => false,
        Some("compromised") => true,
        other => {
            return err(
                n,
                format!(
                    "expected honest or compromised, found `{}`",
                    other.unwrap_or("")
                ),
            )
        }
    };
    let churn = match words.next() {
        Some("always") => ChurnSpec::AlwaysOn,
        Some("script") => {
            let rest: Vec<&str> = words.collect();
            let split = rest
                .iter()
                .position(|w| w.contains('='))
                .unwrap_or(rest.len());
            let mut script = Vec::new();
            for w in &rest[..split] {
                let Some((t, what)) = w.split_once(':') else {
                    return err(
                        n,
                        format!("expected `<time>:on` or `<time>:off`, found `{w}`"),
                    );
                };
                let t: u64 = int(n, "script time", t)?;
                let what = match what {
                    "on" => Transition::Connect,
                    "off" => Transition::Disconnect,
                    _ => return err(n, format!("expected on or off, found `{what}`")),
                };
                script.push((t, what));
            }
            if script.first().map(|s| s.1) != Some(Transition::Connect) {
                return err(n, "churn script must start with `<time>:on`");
            }
            for w in script.windows(2) {
                if w[1].0 <= w[0].0 {
                    return err(n, "script times must be strictly increasing");
                }
                if w[1].1 == w[0].1 {
                    return err(n, "script must alternate on and off");
                }
            }
            return finish_node(
                n,
                id,
                compromised,
                ChurnSpec::Script(script),
                rest[split..].iter().copied(),
            );
        }
        Some("exp") => {
            let (mut on, mut off, mut min_on, mut start_on) = (None, None, 1, true);
            let mut rest = Vec::new();
            for w in words.by_ref() {
                let (k, v) = kv(n, w)?;
                match k {
                    "on" => on = Some(int(n, k, v)?),
                    "off" => off = Some(int(n, k, v)?),
                    "min_on" => min_on = int(n, k, v)?,
                    "start" => {
                        start_on = match v {
                            "on" => true,
                            "off" => false,
                            _ => return err(n, format!("start expects on or off, found `{v}`")),
                        }
                    }
                    _ => {
                        rest.push(w);
                        break;
                    }
                }
            }
            let (Some(mean_on), Some(mean_off)) = (on, off) else {
                return err(n, "exp churn needs on=<mean> and off=<mean>");
            };
            if mean_on == 0 || mean_off == 0 {
                return err(n, "churn means must be positive");
            }
            return finish_node(
                n,
                id,
                compromised,
                ChurnSpec::Exponential {
                    mean_on,
                    mean_off,
                    min_on: min_on.max(1),
                    start_on,
                },
                rest.into_iter().chain(words),
            );
        }
        other => {
            return err(
                n,
                format!(
                    "expected always, script or exp, found `{}`",
                    other.unwrap_or("")
                ),
            )
        }
    };
    finish_node(n, id, compromised, churn, words)
}

fn finish_node<'a>(
    n: usize,
    id: NodeId,
    compromised: bool,
    churn: ChurnSpec,
    rest: impl Iterator<Item = &'a str>,
) -> Result<NodeSpec, ScenarioError> {
    let mut hostile_at = None;
    for w in rest {
        match kv(n, w)? {
            ("hostile_at", v) => hostile_at = Some(int(n, "hostile_at", v)?),
            (k, _) => return err(n, format!("unknown node option `{k}`")),
        }
    }
    Ok(NodeSpec {
        id,
        compromised,
        churn,
        hostile_at,
    })
}

fn parse_job<'a>(
    n: usize,
    mut words: impl Iterator<Item = &'a str>,
) -> Result<JobSpec, ScenarioError> {
    let id = JobId(int(n, "job", words.next().unwrap_or(""))?);
    let (mut owner, mut submit) = (None, 0);
    for w in words {
        match kv(n, w)? {
            ("owner", v) => owner = Some(NodeId(int(n, "owner", v)?)),
            ("submit", v) => submit = int(n, "submit", v)?,
            (k, _) => return err(n, format!("unknown job option `{k}`")),
        }
    }
    let Some(owner) = owner else {
        return err(n, format!("job {id} needs owner=<node>"));
    };
    Ok(JobSpec {
        id,
        owner,
        submit,
        tasks: Vec::new(),
    })
}

fn parse_task_header<'a>(
    n: usize,
    mut words: impl Iterator<Item = &'a str>,
) -> Result<(TaskId, u64), ScenarioError> {
    let id = TaskId(int(n, "task", words.next().unwrap_or(""))?);
    let mut duration = None;
    for w in words {
        match kv(n, w)? {
            ("duration", v) => duration = Some(int(n, "duration", v)?),
            (k, _) => return err(n, format!("unknown task option `{k}`")),
        }
    }
    match duration {
        Some(0) => err(n, "task duration must be positive"),
        Some(d) => Ok((id, d)),
        None => err(n, format!("task {id} needs duration=<ticks>")),
    }
}
