use proptest::prelude::*;

use super::*;
use crate::guest::{enumerate_paths, execute_unmonitored, parse_program, GuestEvent, Instruction};
use crate::ids::NodeId;
use GuestEvent::*;

pub(crate) const NSAR: &str = "\
policy nsar
states S0 S1
initial S0
on S0 read -> S1
on S0 send -> S0
on S0 compute -> S0
on S0 write -> S0
on S1 read -> S1
on S1 compute -> S1
on S1 write -> S1
";

fn nsar() -> SecurityAutomaton {
    parse_policy(NSAR).unwrap()
}

fn prog(src: &str) -> GuestProgram {
    parse_program(src).unwrap()
}

#[test]
fn nsar_steps() {
    let a = nsar();
    let s0 = a.state_by_name("S0").unwrap();
    let s1 = a.state_by_name("S1").unwrap();
    assert_eq!(automaton_step(&a, s0, Send), Ok(s0));
    assert_eq!(
        automaton_step(&a, s1, Send),
        Err(Violation {
            state: s1,
            event: Send
        })
    );
    assert_eq!(automaton_step(&a, s0, Read), Ok(s1));
    assert!(automaton_step(&a, State(9), Read).is_err());
}

#[test]
fn policy_text_round_trips() {
    let a = nsar();
    assert!(a
        .to_string()
        .starts_with("policy nsar\nstates S0 S1\ninitial S0\non S0 read -> S1\n"));
    assert_eq!(parse_policy(&a.to_string()).unwrap(), a);
}

#[test]
fn policy_errors() {
    let bad = [
        ("states A\ninitial A\n", "missing `policy`"),
        ("policy p\ninitial A\n", "`states` must come first"),
        ("policy p\nstates A\ninitial B\n", "unknown state"),
        (
            "policy p\nstates A\ninitial A\non A jump -> A\n",
            "unknown event",
        ),
        (
            "policy p\nstates A\ninitial A\non A read A\n",
            "expected `on",
        ),
        ("policy p\nstates A A\ninitial A\n", "duplicate state"),
        (
            "policy p\nstates A\ninitial A\non A read -> A\non A read -> A\n",
            "duplicate transition",
        ),
        ("policy p\nstates A\n", "missing `initial`"),
        ("bogus\n", "unknown directive"),
    ];
    for (text, needle) in bad {
        let err = parse_policy(text).unwrap_err().to_string();
        assert!(err.contains(needle), "{text:?} gave {err}");
    }
    let many: Vec<String> = (0..65).map(|i| format!("S{i}")).collect();
    let text = format!("policy p\nstates {}\ninitial S0\n", many.join(" "));
    assert!(parse_policy(&text).is_err());
}

#[test]
fn safe_prefix_by_hand() {
    let a = nsar();
    // compute: S0->S0, read: S0->S1, send: S1 undefined
    assert_eq!(longest_safe_prefix(&a, &[Compute, Read, Send]), 2);
    // send: S0->S0, read: S0->S1, compute: S1->S1
    assert_eq!(longest_safe_prefix(&a, &[Send, Read, Compute]), 3);
    assert_eq!(longest_safe_prefix(&a, &[]), 0);
}

#[test]
fn monitor_examples() {
    let a = nsar();
    match run_monitor(&a, &prog("compute 1\nread 0\nsend 2"), &[]).unwrap() {
        Verdict::MonitoredTruncated {
            trace,
            violation_index,
        } => {
            assert_eq!(trace.events, vec![Compute, Read]);
            assert_eq!(violation_index, 2);
        }
        other => panic!("{other:?}"),
    }
    match run_monitor(&a, &prog("send 2\nread 0"), &[]).unwrap() {
        Verdict::MonitoredOk(trace) => assert_eq!(trace.events, vec![Send, Read]),
        other => panic!("{other:?}"),
    }
    match run_monitor(&a, &prog("halt"), &[]).unwrap() {
        Verdict::MonitoredOk(trace) => assert!(trace.events.is_empty()),
        other => panic!("{other:?}"),
    }
}

#[test]
fn static_examples() {
    let a = nsar();
    assert_eq!(
        static_analyze(&a, &prog("send 1\ncompute 1")),
        Verdict::AcceptedStatically
    );
    assert_eq!(
        static_analyze(&a, &prog("read 0\nsend 1")),
        Verdict::RejectedStatically {
            witness: Witness {
                decisions: vec![],
                events: vec![Read, Send],
            }
        }
    );
    let p = prog("read 0\nbranch r1 { send 2 } { compute 1 }");
    let Verdict::RejectedStatically { witness } = static_analyze(&a, &p) else {
        panic!("expected rejection");
    };
    assert_eq!(witness.decisions, vec![true]);
    assert_eq!(witness.events, vec![Read, Send]);
    // cross-check against the path enumeration
    let violating: Vec<_> = enumerate_paths(&p)
        .unwrap()
        .into_iter()
        .filter(|pt| longest_safe_prefix(&a, &pt.trace.events) < pt.trace.len())
        .collect();
    assert_eq!(violating.len(), 1);
    assert_eq!(violating[0].decisions, vec![true]);
}

#[test]
fn halt_makes_later_sends_unreachable() {
    let a = nsar();
    assert_eq!(
        static_analyze(&a, &prog("read 0\nhalt\nsend 1")),
        Verdict::AcceptedStatically
    );
}

#[test]
fn rewrite_examples() {
    let a = nsar();
    let Verdict::Rewritten(p2) = rewrite(&a, &prog("read 0\nsend 2")).unwrap() else {
        panic!()
    };
    let t = execute_unmonitored(&p2, &[]).unwrap();
    assert_eq!(t.events, vec![Read]);
    assert_eq!(t.events.len(), longest_safe_prefix(&a, &[Read, Send]));

    let Verdict::Rewritten(p2) = rewrite(&a, &prog("send 2\ncompute 1")).unwrap() else {
        panic!()
    };
    assert_eq!(
        execute_unmonitored(&p2, &[]).unwrap().events,
        vec![Send, Compute]
    );

    let Verdict::Rewritten(p2) = rewrite(&a, &GuestProgram::new(vec![])).unwrap() else {
        panic!()
    };
    assert!(execute_unmonitored(&p2, &[]).unwrap().events.is_empty());
}

#[test]
fn rewrite_rejects_reserved_registers() {
    let a = nsar();
    assert_eq!(
        rewrite(&a, &prog("branch r14 { } { }")),
        Err(EnforceError::ReservedRegister { reg: 14 })
    );
    assert_eq!(
        rewrite(&a, &prog("branch r15 { } { }")),
        Err(EnforceError::ReservedRegister { reg: 15 })
    );
    assert!(matches!(
        run_combined(&a, &prog("set r14 1\nsend 1"), &[]),
        Err(EnforceError::ReservedRegister { .. })
    ));
}

#[test]
fn rewrite_respects_instruction_limit() {
    let a = nsar();
    let p = prog(&"compute 1\n".repeat(6000));
    assert!(matches!(
        rewrite(&a, &p),
        Err(EnforceError::LimitExceeded { .. })
    ));
}

#[test]
fn combined_examples() {
    let a = nsar();
    let safe = prog("send 1\ncompute 2");
    let run = run_combined(&a, &safe, &[]).unwrap();
    assert_eq!(run.guard_count, 0);
    assert_eq!(
        run.verdict.observable(),
        run_monitor(&a, &safe, &[]).unwrap().observable()
    );

    let bad = prog("read 0\nsend 2");
    let run = run_combined(&a, &bad, &[]).unwrap();
    assert!(run.guard_count >= 1);
    assert_eq!(
        run.verdict.observable(),
        run_monitor(&a, &bad, &[]).unwrap().observable()
    );
}

#[test]
fn combined_guards_only_unsafe_arm() {
    let a = nsar();
    // then-arm reads (enters S1) then sends: unsafe. else-arm only sends from S0.
    let p = prog("compute 1\nbranch r0 {\n read 0\n send 1\n} {\n send 2\n}\ncompute 3");
    let analysis = analyze(&a, &p);
    let guarded: Vec<_> = analysis
        .points
        .iter()
        .filter(|pt| pt.needs_guard())
        .collect();
    assert_eq!(guarded.len(), 1);
    assert_eq!(guarded[0].event, Send);
    // pre-order: compute=0, branch=1, read=2, send=3, send=4, compute=5
    assert_eq!(guarded[0].index, 3);
    assert_eq!(guarded[0].reachable, 0b10);

    let run = run_combined(&a, &p, &[true]).unwrap();
    assert_eq!(run.guard_count, 1);
    let Instruction::Branch {
        then_block,
        else_block,
        ..
    } = &run.program.body[2]
    else {
        panic!("{:?}", run.program.body);
    };
    assert!(matches!(
        then_block[1],
        Instruction::Check { event: Send, .. }
    ));
    assert!(!else_block.iter().any(|i| i.is_instrumentation()));
    for oracle in [[true], [false]] {
        assert_eq!(
            run_combined(&a, &p, &oracle).unwrap().verdict.observable(),
            run_monitor(&a, &p, &oracle).unwrap().observable()
        );
    }
}

#[test]
fn mechanism_names() {
    for m in [
        Mechanism::Monitor,
        Mechanism::StaticThenRun,
        Mechanism::Rewrite,
        Mechanism::Combined,
    ] {
        assert_eq!(m.name().parse::<Mechanism>(), Ok(m));
    }
    assert!("sandbox".parse::<Mechanism>().is_err());
}

fn arb_automaton() -> impl Strategy<Value = SecurityAutomaton> {
    (1usize..=5).prop_flat_map(|n| {
        let cells = prop::collection::vec(prop::option::weighted(0.8, 0..n as u8), n * 4);
        (Just(n), 0..n as u8, cells).prop_map(|(n, init, cells)| {
            let transitions = cells.into_iter().enumerate().filter_map(|(i, to)| {
                to.map(|to| (State((i / 4) as u8), GuestEvent::ALL[i % 4], State(to)))
            });
            SecurityAutomaton::new(
                crate::ids::PolicyId::new("arb"),
                (0..n).map(|i| format!("Q{i}")).collect(),
                State(init),
                transitions,
            )
            .unwrap()
        })
    })
}

fn arb_program() -> impl Strategy<Value = GuestProgram> {
    crate::guest::tests::arb_block(2).prop_map(GuestProgram::new)
}

proptest! {
    #[test]
    fn monitor_matches_prefix_oracle(a in arb_automaton(), p in arb_program(), bits in prop::collection::vec(any::<bool>(), 16)) {
        let full = execute_unmonitored(&p, &bits).unwrap();
        let k = longest_safe_prefix(&a, &full.events);
        let observed = match run_monitor(&a, &p, &bits).unwrap() {
            Verdict::MonitoredOk(t) => { prop_assert_eq!(k, full.len()); t }
            Verdict::MonitoredTruncated { trace, violation_index } => {
                prop_assert_eq!(violation_index, k);
                trace
            }
            other => panic!("{other:?}"),
        };
        prop_assert_eq!(&observed.events[..], &full.events[..k]);
    }

    #[test]
    fn rewrite_is_sound_and_transparent(a in arb_automaton(), p in arb_program(), bits in prop::collection::vec(any::<bool>(), 16)) {
        let Verdict::Rewritten(p2) = rewrite(&a, &p).unwrap() else { panic!() };
        let original = execute_unmonitored(&p, &bits).unwrap();
        let rewritten = execute_unmonitored(&p2, &bits).unwrap();
        prop_assert_eq!(longest_safe_prefix(&a, &rewritten.events), rewritten.len());
        let k = longest_safe_prefix(&a, &original.events);
        prop_assert_eq!(&rewritten.events[..], &original.events[..k]);
    }

    #[test]
    fn static_acceptance_is_exact(a in arb_automaton(), p in arb_program()) {
        let all_safe = enumerate_paths(&p).unwrap().iter()
            .all(|pt| longest_safe_prefix(&a, &pt.trace.events) == pt.trace.len());
        match static_analyze(&a, &p) {
            Verdict::AcceptedStatically => prop_assert!(all_safe),
            Verdict::RejectedStatically { witness } => {
                prop_assert!(!all_safe);
                let n = witness.events.len();
                prop_assert_eq!(longest_safe_prefix(&a, &witness.events), n - 1);
                let mut oracle = witness.decisions.clone();
                oracle.resize(32, false);
                let t = execute_unmonitored(&p, &oracle).unwrap();
                prop_assert_eq!(&t.events[..n], &witness.events[..]);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn combined_equals_monitor(a in arb_automaton(), p in arb_program(), bits in prop::collection::vec(any::<bool>(), 16)) {
        let run = run_combined(&a, &p, &bits).unwrap();
        let monitored = run_monitor(&a, &p, &bits).unwrap();
        prop_assert_eq!(run.verdict.observable(), monitored.observable());
        prop_assert!(run.guard_count <= p.event_instruction_count());
        if static_analyze(&a, &p) == Verdict::AcceptedStatically {
            prop_assert_eq!(run.guard_count, 0);
        }
    }
}

#[test]
fn send_target_is_irrelevant_to_policy() {
    let a = nsar();
    let p = GuestProgram::new(vec![Instruction::Send(NodeId(u64::MAX))]);
    assert_eq!(static_analyze(&a, &p), Verdict::AcceptedStatically);
}
