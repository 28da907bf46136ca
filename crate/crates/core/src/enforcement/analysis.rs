//! Static analysis: reachable automaton states per program point.
//!
//! The automaton is deterministic and programs are acyclic, so the state set
//! reaching a point (union over incoming paths) is exact: every state in it
//! is realized by some path. Rejection therefore always comes with a
//! concrete witness, and acceptance means every path is safe.

use std::collections::BTreeMap;
use std::rc::Rc;

use super::automaton::{SecurityAutomaton, State};
use super::Verdict;
use crate::guest::{GuestEvent, GuestProgram, Instruction};

/// Concrete path to a missing transition: the branch decisions taken and
/// the events emitted, the last of which is the violating one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Witness {
    pub decisions: Vec<bool>,
    pub events: Vec<GuestEvent>,
}

/// What the analysis learned about one event-emitting instruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PointInfo {
    /// Pre-order position among all instructions of the program.
    pub index: usize,
    pub event: GuestEvent,
    /// Bitmask of automaton states that can reach this instruction.
    pub reachable: u64,
    /// Reachable states with no transition on `event`.
    pub unsafe_states: u64,
}

impl PointInfo {
    pub fn needs_guard(&self) -> bool {
        self.unsafe_states != 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Analysis {
    pub points: Vec<PointInfo>,
    /// First violation found in pre-order, if any.
    pub witness: Option<Witness>,
}

impl Analysis {
    pub fn accepted(&self) -> bool {
        self.witness.is_none()
    }

    pub fn guard_count(&self) -> usize {
        self.points.iter().filter(|p| p.needs_guard()).count()
    }
}

enum Step {
    Root,
    Decision(bool, Rc<Step>),
    Event(GuestEvent, Rc<Step>),
}

fn materialize(mut node: &Rc<Step>, last: GuestEvent) -> Witness {
    let mut decisions = Vec::new();
    let mut events = vec![last];
    loop {
        match node.as_ref() {
            Step::Root => break,
            Step::Decision(d, p) => {
                decisions.push(*d);
                node = p;
            }
            Step::Event(e, p) => {
                events.push(*e);
                node = p;
            }
        }
    }
    decisions.reverse();
    events.reverse();
    Witness { decisions, events }
}

type Reach = BTreeMap<State, Rc<Step>>;

fn mask(reach: &Reach) -> u64 {
    reach.keys().fold(0, |m, s| m | (1u64 << s.0))
}

struct Analyzer<'a> {
    a: &'a SecurityAutomaton,
    next_index: usize,
    points: Vec<PointInfo>,
    witness: Option<Witness>,
}

impl Analyzer<'_> {
    fn block(&mut self, block: &[Instruction], mut reach: Reach) -> Reach {
        for instr in block {
            let index = self.next_index;
            self.next_index += 1;
            match instr {
                Instruction::Branch {
                    then_block,
                    else_block,
                    ..
                } => {
                    let fork = |d: bool| -> Reach {
                        reach
                            .iter()
                            .map(|(s, w)| (*s, Rc::new(Step::Decision(d, w.clone()))))
                            .collect()
                    };
                    let (t, e) = (fork(true), fork(false));
                    let mut joined = self.block(then_block, t);
                    for (s, w) in self.block(else_block, e) {
                        joined.entry(s).or_insert(w);
                    }
                    reach = joined;
                }
                Instruction::Halt => {
                    reach.clear();
                }
                other => {
                    if let Some(event) = other.event() {
                        let mut next = Reach::new();
                        let mut unsafe_states = 0u64;
                        for (s, w) in &reach {
                            match self.a.transition(*s, event) {
                                Some(to) => {
                                    next.entry(to)
                                        .or_insert_with(|| Rc::new(Step::Event(event, w.clone())));
                                }
                                None => {
                                    unsafe_states |= 1u64 << s.0;
                                    if self.witness.is_none() {
                                        self.witness = Some(materialize(w, event));
                                    }
                                }
                            }
                        }
                        self.points.push(PointInfo {
                            index,
                            event,
                            reachable: mask(&reach),
                            unsafe_states,
                        });
                        reach = next;
                    }
                    // Instrumentation is treated as transparent, which only
                    // over-approximates the reachable states.
                }
            }
        }
        reach
    }
}

/// Per-point reachable state sets for `program` under `a`.
pub fn analyze(a: &SecurityAutomaton, program: &GuestProgram) -> Analysis {
    let mut an = Analyzer {
        a,
        next_index: 0,
        points: Vec::new(),
        witness: None,
    };
    let start: Reach = [(a.initial(), Rc::new(Step::Root))].into();
    an.block(&program.body, start);
    Analysis {
        points: an.points,
        witness: an.witness,
    }
}

/// Accepts iff no reachable (state, event) pair lacks a transition.
pub fn static_analyze(a: &SecurityAutomaton, program: &GuestProgram) -> Verdict {
    match analyze(a, program).witness {
        None => Verdict::AcceptedStatically,
        Some(witness) => Verdict::RejectedStatically { witness },
    }
}
