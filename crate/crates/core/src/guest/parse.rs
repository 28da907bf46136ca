//! Line-oriented program text: one instruction per line, `#` comments,
//! `branch r<k> { … } { … }` with braces anywhere.

use super::program::{GuestEvent, GuestProgram, Instruction, MAX_INSTRUCTIONS, REGISTER_COUNT};
use super::GuestError;
use crate::ids::NodeId;

#[derive(Debug, Clone)]
struct Token<'a> {
    line: usize,
    text: &'a str,
}

fn tokenize(src: &str) -> Vec<Token<'_>> {
    let mut out = Vec::new();
    for (idx, raw) in src.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split('#').next().unwrap_or("");
        let mut start = None;
        for (i, c) in code.char_indices() {
            if c.is_whitespace() || c == '{' || c == '}' {
                if let Some(s) = start.take() {
                    out.push(Token {
                        line,
                        text: &code[s..i],
                    });
                }
                if c == '{' || c == '}' {
                    out.push(Token {
                        line,
                        text: &code[i..i + 1],
                    });
                }
            } else if start.is_none() {
                start = Some(i);
            }
        }
        if let Some(s) = start {
            out.push(Token {
                line,
                text: &code[s..],
            });
        }
    }
    out
}

/// Deepest branch nesting accepted.
pub const MAX_NESTING: usize = 256;

struct Parser<'a> {
    tokens: Vec<Token<'a>>,
    pos: usize,
    depth: usize,
}

fn syntax(line: usize, message: impl Into<String>) -> GuestError {
    GuestError::Syntax {
        line,
        message: message.into(),
    }
}

fn is_brace(t: &str) -> bool {
    t == "{" || t == "}"
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Token<'a>> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<Token<'a>> {
        let t = self.tokens.get(self.pos).cloned();
        self.pos += 1;
        t
    }

    /// Next token, which must sit on `line` and not be a brace.
    fn arg(&mut self, line: usize, what: &str) -> Result<&'a str, GuestError> {
        match self.peek() {
            Some(t) if t.line == line && !is_brace(t.text) => {
                let text = t.text;
                self.pos += 1;
                Ok(text)
            }
            _ => Err(syntax(line, format!("missing {what}"))),
        }
    }

    fn rest_of_line(&mut self, line: usize) -> Vec<&'a str> {
        let mut out = Vec::new();
        while let Some(t) = self.peek() {
            if t.line != line || is_brace(t.text) {
                break;
            }
            out.push(t.text);
            self.pos += 1;
        }
        out
    }

    fn end_of_instruction(&self, line: usize) -> Result<(), GuestError> {
        match self.peek() {
            Some(t) if t.line == line && !is_brace(t.text) => {
                Err(syntax(line, format!("unexpected token `{}`", t.text)))
            }
            _ => Ok(()),
        }
    }

    fn expect_open(&mut self, line: usize) -> Result<(), GuestError> {
        match self.next() {
            Some(t) if t.text == "{" => Ok(()),
            Some(t) => Err(syntax(t.line, format!("expected `{{`, found `{}`", t.text))),
            None => Err(syntax(line, "expected `{`, found end of input")),
        }
    }

    fn block(&mut self, nested: Option<usize>) -> Result<Vec<Instruction>, GuestError> {
        let mut body = Vec::new();
        loop {
            let Some(tok) = self.next() else {
                return match nested {
                    Some(open) => Err(syntax(open, "unclosed block")),
                    None => Ok(body),
                };
            };
            if tok.text == "}" {
                return match nested {
                    Some(_) => Ok(body),
                    None => Err(syntax(tok.line, "unmatched `}`")),
                };
            }
            if tok.text == "{" {
                return Err(syntax(tok.line, "unexpected `{`"));
            }
            let line = tok.line;
            let instr = match tok.text {
                "read" => Instruction::Read(self.small(line, "region")?),
                "write" => Instruction::Write(self.small(line, "region")?),
                "compute" => {
                    let n: u32 = self.number(line, "unit count")?;
                    if n == 0 {
                        return Err(syntax(line, "compute units must be positive"));
                    }
                    Instruction::Compute(n)
                }
                "send" => Instruction::Send(NodeId(self.number(line, "node id")?)),
                "halt" => Instruction::Halt,
                "branch" => {
                    if self.depth >= MAX_NESTING {
                        return Err(syntax(line, "branches nested too deeply"));
                    }
                    self.depth += 1;
                    let cond = self.register(line)?;
                    self.expect_open(line)?;
                    let then_line = self.tokens[self.pos - 1].line;
                    let then_block = self.block(Some(then_line))?;
                    self.expect_open(line)?;
                    let else_line = self.tokens[self.pos - 1].line;
                    let else_block = self.block(Some(else_line))?;
                    self.depth -= 1;
                    Instruction::Branch {
                        cond,
                        then_block,
                        else_block,
                    }
                }
                "set" => {
                    let reg = self.register(line)?;
                    let value: u8 = self.number(line, "value")?;
                    Instruction::Set { reg, value }
                }
                "guard" => {
                    let reg = self.register(line)?;
                    let event = self.event(line)?;
                    let mut next = Vec::new();
                    for t in self.rest_of_line(line) {
                        next.push(match t {
                            "-" => None,
                            s => Some(parse_state(line, s)?),
                        });
                    }
                    if next.is_empty() {
                        return Err(syntax(line, "guard needs a transition table"));
                    }
                    Instruction::Guard { reg, event, next }
                }
                "check" => {
                    let reg = self.register(line)?;
                    let event = self.event(line)?;
                    let mut allowed = 0u64;
                    for t in self.rest_of_line(line) {
                        allowed |= 1u64 << parse_state(line, t)?;
                    }
                    Instruction::Check {
                        reg,
                        event,
                        allowed,
                    }
                }
                other => return Err(syntax(line, format!("unknown instruction `{other}`"))),
            };
            self.end_of_instruction(line)?;
            body.push(instr);
        }
    }

    fn number<T: std::str::FromStr>(&mut self, line: usize, what: &str) -> Result<T, GuestError> {
        let t = self.arg(line, what)?;
        t.parse()
            .map_err(|_| syntax(line, format!("invalid {what} `{t}`")))
    }

    fn small(&mut self, line: usize, what: &str) -> Result<u8, GuestError> {
        let v: u8 = self.number(line, what)?;
        if v >= REGISTER_COUNT {
            return Err(syntax(line, format!("{what} {v} out of range 0..16")));
        }
        Ok(v)
    }

    fn register(&mut self, line: usize) -> Result<u8, GuestError> {
        let t = self.arg(line, "register")?;
        let v: u8 = t
            .strip_prefix('r')
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| syntax(line, format!("invalid register `{t}`")))?;
        if v >= REGISTER_COUNT {
            return Err(syntax(line, format!("register r{v} out of range r0..r15")));
        }
        Ok(v)
    }

    fn event(&mut self, line: usize) -> Result<GuestEvent, GuestError> {
        let t = self.arg(line, "event")?;
        t.parse().map_err(|e: String| syntax(line, e))
    }
}

fn parse_state(line: usize, s: &str) -> Result<u8, GuestError> {
    match s.parse::<u8>() {
        Ok(v) if v < 64 => Ok(v),
        _ => Err(syntax(line, format!("invalid state index `{s}`"))),
    }
}

pub fn parse_program(text: &str) -> Result<GuestProgram, GuestError> {
    let mut p = Parser {
        tokens: tokenize(text),
        pos: 0,
        depth: 0,
    };
    let body = p.block(None)?;
    let program = GuestProgram::new(body);
    let count = program.instruction_count();
    if count > MAX_INSTRUCTIONS {
        return Err(GuestError::LimitExceeded { count });
    }
    Ok(program)
}
