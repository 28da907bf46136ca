use proptest::prelude::*;

use super::*;
use crate::federation::{CapSet, Capability};
use crate::ids::NodeId;
use GuestEvent::*;
use Instruction as I;

#[test]
fn parses_straight_line() {
    let p = parse_program("compute 3\nhalt").unwrap();
    assert_eq!(p.body, vec![I::Compute(3), I::Halt]);
    let p = parse_program("read 0\nsend 7").unwrap();
    assert_eq!(p.body, vec![I::Read(0), I::Send(NodeId(7))]);
    assert_eq!(
        p.declared_caps,
        CapSet::from([Capability::ReadHostData, Capability::SendMessage])
    );
}

#[test]
fn parses_inline_branch() {
    let p = parse_program("branch r1 { send 2 } { compute 1 }").unwrap();
    assert_eq!(
        p.body,
        vec![I::Branch {
            cond: 1,
            then_block: vec![I::Send(NodeId(2))],
            else_block: vec![I::Compute(1)],
        }]
    );
}

#[test]
fn parses_multiline_braces_and_comments() {
    let src = "# header\nread 1   # trailing\nbranch r3\n{\n  write 2\n}\n{\n}\nhalt\n";
    let p = parse_program(src).unwrap();
    assert_eq!(
        p.body,
        vec![
            I::Read(1),
            I::Branch {
                cond: 3,
                then_block: vec![I::Write(2)],
                else_block: vec![],
            },
            I::Halt,
        ]
    );
}

#[test]
fn syntax_errors_carry_lines() {
    let cases = [
        ("compute 0", 1),
        ("read 16", 1),
        ("halt\nfly 3", 2),
        ("compute", 1),
        ("compute 3 4", 1),
        ("branch r1 { send 2 }", 1),
        ("branch r1 {\nsend 2\n", 1),
        ("}", 1),
        ("branch r16 { } { }", 1),
        ("branch x1 { } { }", 1),
    ];
    for (src, line) in cases {
        match parse_program(src) {
            Err(GuestError::Syntax { line: l, .. }) => assert_eq!(l, line, "{src:?}"),
            other => panic!("{src:?}: {other:?}"),
        }
    }
}

#[test]
fn instruction_limit() {
    let src = "compute 1\n".repeat(MAX_INSTRUCTIONS);
    assert!(parse_program(&src).is_ok());
    let src = "compute 1\n".repeat(MAX_INSTRUCTIONS + 1);
    assert_eq!(
        parse_program(&src),
        Err(GuestError::LimitExceeded {
            count: MAX_INSTRUCTIONS + 1
        })
    );
}

#[test]
fn nesting_limit() {
    let deep = |n: usize| format!("{}{}", "branch r0 {\n".repeat(n), "} { }\n".repeat(n));
    assert!(parse_program(&deep(super::parse::MAX_NESTING)).is_ok());
    assert!(matches!(
        parse_program(&deep(super::parse::MAX_NESTING + 1)),
        Err(GuestError::Syntax { .. })
    ));
}

#[test]
fn unmonitored_examples() {
    let p = GuestProgram::new(vec![I::Compute(1), I::Halt]);
    let t = execute_unmonitored(&p, &[]).unwrap();
    assert_eq!(t.events, vec![Compute]);
    assert_eq!(t.termination, Termination::Completed);
    assert_eq!(t.compute_units, 1);

    let p = GuestProgram::new(vec![I::Read(0), I::Send(NodeId(7))]);
    assert_eq!(
        execute_unmonitored(&p, &[]).unwrap().events,
        vec![Read, Send]
    );

    let p = parse_program("branch r1 { send 2 } { compute 1 }").unwrap();
    assert_eq!(
        execute_unmonitored(&p, &[false]).unwrap().events,
        vec![Compute]
    );
    assert_eq!(
        execute_unmonitored(&p, &[]),
        Err(GuestError::OracleExhausted { consumed: 0 })
    );
}

#[test]
fn halt_inside_branch_stops_program() {
    let p = parse_program("branch r0 { halt } { }\nsend 1").unwrap();
    assert_eq!(execute_unmonitored(&p, &[true]).unwrap().events, vec![]);
    assert_eq!(
        execute_unmonitored(&p, &[false]).unwrap().events,
        vec![Send]
    );
}

#[test]
fn path_counts() {
    let p = parse_program("read 0\ncompute 2").unwrap();
    assert_eq!(enumerate_paths(&p).unwrap().len(), 1);

    let p = parse_program("branch r1 { send 2 } { compute 1 }").unwrap();
    assert_eq!(enumerate_paths(&p).unwrap().len(), 2);

    // then-arm holds another branch: {T,T}, {T,F}, {F}
    let p = parse_program("branch r1 { branch r2 { read 0 } { write 0 } } { send 1 }").unwrap();
    let mut paths: Vec<_> = enumerate_paths(&p)
        .unwrap()
        .into_iter()
        .map(|pt| (pt.decisions, pt.trace.events))
        .collect();
    paths.sort();
    assert_eq!(
        paths,
        vec![
            (vec![false], vec![Send]),
            (vec![true, false], vec![Write]),
            (vec![true, true], vec![Read]),
        ]
    );
}

#[test]
fn too_many_branches() {
    let src = "branch r0 { } { }\n".repeat(21);
    let p = parse_program(&src).unwrap();
    assert_eq!(
        enumerate_paths(&p),
        Err(GuestError::TooManyBranches { count: 21 })
    );
}

#[test]
fn instrumentation_round_trips_through_text() {
    let p = GuestProgram::new(vec![
        I::Set { reg: 14, value: 0 },
        I::Guard {
            reg: 14,
            event: Read,
            next: vec![Some(1), None],
        },
        I::Read(0),
        I::Check {
            reg: 14,
            event: Send,
            allowed: 0b101,
        },
        I::Send(NodeId(3)),
    ]);
    let text = p.to_string();
    assert!(text.contains("guard r14 read 1 -"));
    assert!(text.contains("check r14 send 0 2"));
    assert_eq!(parse_program(&text).unwrap().body, p.body);
}

pub(crate) fn arb_block(depth: u32) -> BoxedStrategy<Vec<Instruction>> {
    let leaf = prop_oneof![
        (0u8..16).prop_map(I::Read),
        (0u8..16).prop_map(I::Write),
        (1u32..50).prop_map(I::Compute),
        (0u64..20).prop_map(|n| I::Send(NodeId(n))),
        Just(I::Halt),
    ];
    if depth == 0 {
        return prop::collection::vec(leaf, 0..6).boxed();
    }
    let branch =
        (0u8..14, arb_block(depth - 1), arb_block(depth - 1)).prop_map(|(cond, t, e)| I::Branch {
            cond,
            then_block: t,
            else_block: e,
        });
    prop::collection::vec(prop_oneof![4 => leaf, 1 => branch], 0..6).boxed()
}

proptest! {
    #[test]
    fn print_parse_identity(body in arb_block(2)) {
        let p = GuestProgram::new(body);
        let reparsed = parse_program(&p.to_string()).unwrap();
        prop_assert_eq!(reparsed, p);
    }

    #[test]
    fn realized_trace_is_an_enumerated_path(body in arb_block(2), bits in prop::collection::vec(any::<bool>(), 16)) {
        let p = GuestProgram::new(body);
        let t = execute_unmonitored(&p, &bits).unwrap();
        let paths = enumerate_paths(&p).unwrap();
        prop_assert!(paths.iter().any(|pt| pt.trace == t));
        // replaying a path's own decisions reproduces it
        for pt in &paths {
            prop_assert_eq!(&execute_unmonitored(&p, &pt.decisions).unwrap(), &pt.trace);
        }
    }

    #[test]
    fn trace_length_bounded_by_event_instructions(body in arb_block(2), bits in prop::collection::vec(any::<bool>(), 16)) {
        let p = GuestProgram::new(body);
        let t = execute_unmonitored(&p, &bits).unwrap();
        prop_assert!(t.len() <= p.event_instruction_count());
        for e in &t.events {
            prop_assert!(p.required_caps().contains(e.capability()));
        }
    }
}
