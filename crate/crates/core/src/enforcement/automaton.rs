use std::collections::BTreeMap;
use std::fmt;

use super::PolicyError;
use crate::guest::GuestEvent;
use crate::ids::PolicyId;

pub const MAX_STATES: usize = 64;

/// Index into an automaton's state list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct State(pub u8);

/// A missing transition: the event is forbidden in this state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Violation {
    pub state: State,
    pub event: GuestEvent,
}

/// Safety policy as a finite-state machine over guest events. Any
/// (state, event) pair without a transition is a violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecurityAutomaton {
    policy_id: PolicyId,
    states: Vec<String>,
    initial: State,
    delta: Vec<[Option<State>; 4]>,
}

impl SecurityAutomaton {
    pub fn new(
        policy_id: PolicyId,
        states: Vec<String>,
        initial: State,
        transitions: impl IntoIterator<Item = (State, GuestEvent, State)>,
    ) -> Result<Self, PolicyError> {
        if states.is_empty() || states.len() > MAX_STATES {
            return Err(PolicyError::StateCount(states.len()));
        }
        let n = states.len();
        let in_range = |s: State| (s.0 as usize) < n;
        if !in_range(initial) {
            return Err(PolicyError::UnknownState(initial.0.to_string()));
        }
        let mut delta = vec![[None; 4]; n];
        for (from, event, to) in transitions {
            if !in_range(from) || !in_range(to) {
                return Err(PolicyError::UnknownState(format!("{}", from.0.max(to.0))));
            }
            delta[from.0 as usize][event.index()] = Some(to);
        }
        Ok(Self {
            policy_id,
            states,
            initial,
            delta,
        })
    }

    pub fn policy_id(&self) -> &PolicyId {
        &self.policy_id
    }

    pub fn initial(&self) -> State {
        self.initial
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, s: State) -> Option<&str> {
        self.states.get(s.0 as usize).map(String::as_str)
    }

    pub fn state_by_name(&self, name: &str) -> Option<State> {
        self.states
            .iter()
            .position(|s| s == name)
            .map(|i| State(i as u8))
    }

    pub fn transition(&self, s: State, e: GuestEvent) -> Option<State> {
        self.delta.get(s.0 as usize).and_then(|row| row[e.index()])
    }

    /// Bitmask of states in which `e` is permitted.
    pub fn permitting(&self, e: GuestEvent) -> u64 {
        self.delta
            .iter()
            .enumerate()
            .filter(|(_, row)| row[e.index()].is_some())
            .fold(0, |m, (i, _)| m | (1u64 << i))
    }

    /// All transitions in (state, event) order.
    pub fn transitions(&self) -> impl Iterator<Item = (State, GuestEvent, State)> + '_ {
        self.delta.iter().enumerate().flat_map(|(i, row)| {
            GuestEvent::ALL
                .into_iter()
                .filter_map(move |e| row[e.index()].map(|to| (State(i as u8), e, to)))
        })
    }
}

/// One step of the automaton. A state outside the automaton has no
/// transitions and therefore violates.
pub fn automaton_step(
    a: &SecurityAutomaton,
    state: State,
    event: GuestEvent,
) -> Result<State, Violation> {
    a.transition(state, event).ok_or(Violation { state, event })
}

/// Parses the line-oriented policy format:
///
/// ```text
/// policy nsar
/// states S0 S1
/// initial S0
/// on S0 read -> S1
/// ```
pub fn parse_policy(text: &str) -> Result<SecurityAutomaton, PolicyError> {
    let syntax = |line: usize, message: String| PolicyError::Syntax { line, message };
    let mut id: Option<String> = None;
    let mut states: Option<Vec<String>> = None;
    let mut initial: Option<State> = None;
    let mut transitions: BTreeMap<(State, GuestEvent), State> = BTreeMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split('#').next().unwrap_or("");
        let words: Vec<&str> = code.split_whitespace().collect();
        let Some((&head, rest)) = words.split_first() else {
            continue;
        };
        let lookup = |states: &Option<Vec<String>>, name: &str| -> Result<State, PolicyError> {
            let list = states
                .as_ref()
                .ok_or_else(|| syntax(line, "`states` must come first".into()))?;
            list.iter()
                .position(|s| s == name)
                .map(|i| State(i as u8))
                .ok_or_else(|| syntax(line, format!("unknown state `{name}`")))
        };
        match head {
            "policy" => {
                if id.is_some() {
                    return Err(syntax(line, "duplicate `policy` line".into()));
                }
                match rest {
                    [name] => id = Some((*name).to_string()),
                    _ => return Err(syntax(line, "expected `policy <id>`".into())),
                }
            }
            "states" => {
                if states.is_some() {
                    return Err(syntax(line, "duplicate `states` line".into()));
                }
                if rest.is_empty() || rest.len() > MAX_STATES {
                    return Err(syntax(line, format!("{} states, need 1..=64", rest.len())));
                }
                let mut list: Vec<String> = Vec::new();
                for s in rest {
                    if list.iter().any(|x| x == s) {
                        return Err(syntax(line, format!("duplicate state `{s}`")));
                    }
                    list.push((*s).to_string());
                }
                states = Some(list);
            }
            "initial" => {
                if initial.is_some() {
                    return Err(syntax(line, "duplicate `initial` line".into()));
                }
                match rest {
                    [s] => initial = Some(lookup(&states, s)?),
                    _ => return Err(syntax(line, "expected `initial <state>`".into())),
                }
            }
            "on" => match rest {
                [from, event, "->", to] => {
                    let from = lookup(&states, from)?;
                    let to = lookup(&states, to)?;
                    let event: GuestEvent = event.parse().map_err(|e| syntax(line, e))?;
                    if transitions.insert((from, event), to).is_some() {
                        return Err(syntax(line, "duplicate transition".into()));
                    }
                }
                _ => {
                    return Err(syntax(
                        line,
                        "expected `on <state> <event> -> <state>`".into(),
                    ))
                }
            },
            other => return Err(syntax(line, format!("unknown directive `{other}`"))),
        }
    }
    let last = text.lines().count().max(1);
    let id = id.ok_or_else(|| syntax(last, "missing `policy` line".into()))?;
    let states = states.ok_or_else(|| syntax(last, "missing `states` line".into()))?;
    let initial = initial.ok_or_else(|| syntax(last, "missing `initial` line".into()))?;
    SecurityAutomaton::new(
        PolicyId(id),
        states,
        initial,
        transitions.into_iter().map(|((f, e), t)| (f, e, t)),
    )
}

impl fmt::Display for SecurityAutomaton {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "policy {}", self.policy_id)?;
        writeln!(f, "states {}", self.states.join(" "))?;
        writeln!(f, "initial {}", self.states[self.initial.0 as usize])?;
        for (from, e, to) in self.transitions() {
            writeln!(
                f,
                "on {} {} -> {}",
                self.states[from.0 as usize], e, self.states[to.0 as usize]
            )?;
        }
        Ok(())
    }
}
