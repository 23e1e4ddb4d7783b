//! Hand-rolled lexer. Tokens carry source positions for diagnostics.

use crate::diag::{DiagCode, Diagnostic, Span};

#[derive(Clone, Debug, PartialEq)]
pub enum Tok {
    Ident(String),
    IntLit(i64),
    LongLit(i64),
    DoubleLit(f64),
    // punctuation / operators
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Comma,
    Semi,
    Dot,
    Assign,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,
    PlusAssign,
    MinusAssign,
    StarAssign,
    SlashAssign,
    PlusPlus,
    MinusMinus,
    Lt,
    Le,
    Gt,
    Ge,
    EqEq,
    Ne,
    AndAnd,
    OrOr,
    Not,
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

pub fn lex(source: &str) -> Result<Vec<Token>, Diagnostic> {
    let mut out = Vec::new();
    let bytes: Vec<char> = source.chars().collect();
    let mut i = 0usize;
    let mut line = 1u32;
    let mut col = 1u32;

    macro_rules! push {
        ($tok:expr, $span:expr) => {
            out.push(Token { tok: $tok, span: $span })
        };
    }

    while i < bytes.len() {
        let c = bytes[i];
        let span = Span::new(line, col);
        match c {
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
            }
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == '/' => {
                while i < bytes.len() && bytes[i] != '\n' {
                    i += 1;
                }
            }
            '/' if i + 1 < bytes.len() && bytes[i + 1] == '*' => {
                i += 2;
                col += 2;
                loop {
                    if i + 1 >= bytes.len() {
                        return Err(Diagnostic::error(
                            DiagCode::SYNTAX_ERROR,
                            span,
                            "unterminated block comment",
                        ));
                    }
                    if bytes[i] == '*' && bytes[i + 1] == '/' {
                        i += 2;
                        col += 2;
                        break;
                    }
                    if bytes[i] == '\n' {
                        line += 1;
                        col = 1;
                    } else {
                        col += 1;
                    }
                    i += 1;
                }
            }
            '0'..='9' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let mut is_double = false;
                if i < bytes.len() && bytes[i] == '.' && i + 1 < bytes.len() && bytes[i + 1].is_ascii_digit() {
                    is_double = true;
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                if i < bytes.len() && (bytes[i] == 'e' || bytes[i] == 'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == '+' || bytes[j] == '-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        is_double = true;
                        i = j;
                        while i < bytes.len() && bytes[i].is_ascii_digit() {
                            i += 1;
                        }
                    }
                }
                let text: String = bytes[start..i].iter().collect();
                let width = (i - start) as u32;
                if is_double {
                    let v: f64 = text.parse().map_err(|_| {
                        Diagnostic::error(DiagCode::SYNTAX_ERROR, span, format!("bad number `{text}`"))
                    })?;
                    push!(Tok::DoubleLit(v), span);
                } else if i < bytes.len() && (bytes[i] == 'L' || bytes[i] == 'l') {
                    i += 1;
                    let v: i64 = text.parse().map_err(|_| {
                        Diagnostic::error(DiagCode::SYNTAX_ERROR, span, format!("bad long literal `{text}`"))
                    })?;
                    push!(Tok::LongLit(v), span);
                    col += 1;
                } else {
                    let v: i64 = text.parse().map_err(|_| {
                        Diagnostic::error(DiagCode::SYNTAX_ERROR, span, format!("bad int literal `{text}`"))
                    })?;
                    // literals beyond the int range are typed long
                    if v > i32::MAX as i64 {
                        push!(Tok::LongLit(v), span);
                    } else {
                        push!(Tok::IntLit(v), span);
                    }
                }
                col += width;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_') {
                    i += 1;
                }
                let text: String = bytes[start..i].iter().collect();
                col += (i - start) as u32;
                push!(Tok::Ident(text), span);
            }
            _ => {
                let two = if i + 1 < bytes.len() {
                    Some((bytes[i], bytes[i + 1]))
                } else {
                    None
                };
                let (tok, width) = match two {
                    Some(('+', '=')) => (Tok::PlusAssign, 2),
                    Some(('-', '=')) => (Tok::MinusAssign, 2),
                    Some(('*', '=')) => (Tok::StarAssign, 2),
                    Some(('/', '=')) => (Tok::SlashAssign, 2),
                    Some(('+', '+')) => (Tok::PlusPlus, 2),
                    Some(('-', '-')) => (Tok::MinusMinus, 2),
                    Some(('<', '=')) => (Tok::Le, 2),
                    Some(('>', '=')) => (Tok::Ge, 2),
                    Some(('=', '=')) => (Tok::EqEq, 2),
                    Some(('!', '=')) => (Tok::Ne, 2),
                    Some(('&', '&')) => (Tok::AndAnd, 2),
                    Some(('|', '|')) => (Tok::OrOr, 2),
                    _ => {
                        let t = match c {
                            '(' => Tok::LParen,
                            ')' => Tok::RParen,
                            '{' => Tok::LBrace,
                            '}' => Tok::RBrace,
                            '[' => Tok::LBracket,
                            ']' => Tok::RBracket,
                            ',' => Tok::Comma,
                            ';' => Tok::Semi,
                            '.' => Tok::Dot,
                            '=' => Tok::Assign,
                            '+' => Tok::Plus,
                            '-' => Tok::Minus,
                            '*' => Tok::Star,
                            '/' => Tok::Slash,
                            '%' => Tok::Percent,
                            '<' => Tok::Lt,
                            '>' => Tok::Gt,
                            '!' => Tok::Not,
                            _ => {
                                return Err(Diagnostic::error(
                                    DiagCode::SYNTAX_ERROR,
                                    span,
                                    format!("unexpected character `{c}`"),
                                ))
                            }
                        };
                        (t, 1)
                    }
                };
                push!(tok, span);
                i += width;
                col += width as u32;
            }
        }
    }
    out.push(Token { tok: Tok::Eof, span: Span::new(line, col) });
    Ok(out)
}
