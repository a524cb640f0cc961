use std::collections::HashMap;
use std::iter::Peekable;
use std::str::Chars;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Str(String),
    Sym(char),
    Newline,
}

struct Lexer<'a> {
    chars: Peekable<Chars<'a>>,
    line: usize,
}

impl<'a> Lexer<'a> {
    fn new(text: &'a str) -> Self {
        Lexer { chars: text.chars().peekable(), line: 1 }
    }

    fn skip_line(&mut self) {
        while let Some(&c) = self.chars.peek() {
            if c == '\n' {
                break;
            }
            self.chars.next();
        }
    }

    fn number(&mut self, first: char) -> Result<Tok> {
        let mut s = String::from(first);
        let mut prev = first;
        while let Some(&c) = self.chars.peek() {
            let ok = c.is_ascii_digit()
                || c == '.' && !s.ends_with('.')
                || c == 'e'
                || c == 'E'
                || (c == '+' || c == '-') && (prev == 'e' || prev == 'E');
            if !ok {
                break;
            }
            // `1...` is a number followed by a continuation
            if c == '.' && s.contains('.') {
                break;
            }
            s.push(c);
            prev = c;
            self.chars.next();
        }
        s.parse::<f64>()
            .map(Tok::Num)
            .map_err(|_| Error::parse(self.line, format!("bad number literal '{s}'")))
    }

    fn next(&mut self) -> Result<Option<(Tok, usize)>> {
        loop {
            let Some(c) = self.chars.next() else { return Ok(None) };
            let line = self.line;
            match c {
                '\n' => {
                    self.line += 1;
                    return Ok(Some((Tok::Newline, line)));
                }
                '%' | '#' => self.skip_line(),
                c if c.is_whitespace() => {}
                '.' if self.chars.peek() == Some(&'.') => {
                    // continuation: drop the rest of the line and the newline
                    self.skip_line();
                    if self.chars.next().is_some() {
                        self.line += 1;
                    }
                }
                '\'' | '"' => {
                    let mut s = String::new();
                    loop {
                        match self.chars.next() {
                            Some(q) if q == c => break,
                            Some('\n') | None => return Err(Error::parse(line, "unterminated string")),
                            Some(ch) => s.push(ch),
                        }
                    }
                    return Ok(Some((Tok::Str(s), line)));
                }
                c if c.is_ascii_digit() => return self.number(c).map(|t| Some((t, line))),
                '.' if self.chars.peek().is_some_and(|d| d.is_ascii_digit()) => {
                    return self.number(c).map(|t| Some((t, line)))
                }
                c if c.is_alphabetic() || c == '_' => {
                    let mut s = String::from(c);
                    while let Some(&d) = self.chars.peek() {
                        if d.is_alphanumeric() || d == '_' {
                            s.push(d);
                            self.chars.next();
                        } else {
                            break;
                        }
                    }
                    return Ok(Some((Tok::Ident(s), line)));
                }
                c => return Ok(Some((Tok::Sym(c), line))),
            }
        }
    }
}

/// A value assigned to `mpc.<field>`.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Str(String),
    Matrix { rows: Vec<Vec<f64>>, line: usize },
    Cell,
}

#[derive(Debug, Default)]
pub struct RawCase {
    pub name: String,
    pub fields: HashMap<String, Value>,
}

impl RawCase {
    pub fn matrix(&self, field: &str) -> Option<(&[Vec<f64>], usize)> {
        match self.fields.get(field) {
            Some(Value::Matrix { rows, line }) => Some((rows, *line)),
            _ => None,
        }
    }

    pub fn scalar(&self, field: &str) -> Option<f64> {
        match self.matrix(field) {
            Some((rows, _)) if rows.len() == 1 && rows[0].len() == 1 => Some(rows[0][0]),
            _ => None,
        }
    }

    pub fn string(&self, field: &str) -> Option<&str> {
        match self.fields.get(field) {
            Some(Value::Str(s)) => Some(s),
            _ => None,
        }
    }
}

fn numeric_ident(s: &str) -> Option<f64> {
    match s {
        "Inf" | "inf" => Some(f64::INFINITY),
        "NaN" | "nan" => Some(f64::NAN),
        _ => None,
    }
}

/// Tokenize a case function and collect every `mpc.<field> = <value>`.
pub fn scan(text: &str) -> Result<RawCase> {
    let mut lx = Lexer::new(text);
    let mut toks = Vec::new();
    while let Some(t) = lx.next()? {
        toks.push(t);
    }
    let mut raw = RawCase::default();
    let mut i = 0;
    let mut have_function = false;
    let at = |i: usize| toks.get(i).map(|t| &t.0);

    while i < toks.len() {
        let (tok, line) = (&toks[i].0, toks[i].1);
        match tok {
            Tok::Ident(s) if s == "function" => {
                have_function = true;
                // function mpc = name
                let mut j = i + 1;
                while j < toks.len() && toks[j].0 != Tok::Newline {
                    if let (Tok::Sym('='), Some(Tok::Ident(name))) = (&toks[j].0, at(j + 1)) {
                        raw.name = name.clone();
                    }
                    j += 1;
                }
                i = j;
            }
            Tok::Ident(_) if have_function && at(i + 1) == Some(&Tok::Sym('.')) => {
                let Some(Tok::Ident(field)) = at(i + 2) else {
                    return Err(Error::parse(line, "expected a field name after '.'"));
                };
                if at(i + 3) != Some(&Tok::Sym('=')) {
                    i += 3;
                    continue;
                }
                let field = field.clone();
                i += 4;
                let (value, next) = parse_value(&toks, i)?;
                raw.fields.insert(field, value);
                i = next;
            }
            _ => i += 1,
        }
    }
    if !have_function {
        return Err(Error::parse(1, "no case function found"));
    }
    Ok(raw)
}

fn parse_value(toks: &[(Tok, usize)], mut i: usize) -> Result<(Value, usize)> {
    let line = toks.get(i).map_or(0, |t| t.1);
    match toks.get(i).map(|t| &t.0) {
        Some(Tok::Str(s)) => Ok((Value::Str(s.clone()), i + 1)),
        Some(Tok::Sym('[')) => {
            i += 1;
            let mut rows = Vec::new();
            let mut row = Vec::new();
            let mut sign = 1.0;
            loop {
                let Some((t, l)) = toks.get(i) else {
                    return Err(Error::parse(line, "unterminated matrix"));
                };
                match t {
                    Tok::Sym(']') => break,
                    Tok::Sym(';') | Tok::Newline => {
                        if !row.is_empty() {
                            rows.push(std::mem::take(&mut row));
                        }
                    }
                    Tok::Sym(',') => {}
                    Tok::Sym('-') => {
                        sign = -sign;
                        i += 1;
                        continue;
                    }
                    Tok::Sym('+') => {
                        i += 1;
                        continue;
                    }
                    Tok::Num(v) => row.push(sign * v),
                    Tok::Ident(s) => match numeric_ident(s) {
                        Some(v) => row.push(sign * v),
                        None => return Err(Error::parse(*l, format!("unexpected '{s}' in matrix"))),
                    },
                    other => return Err(Error::parse(*l, format!("unexpected {other:?} in matrix"))),
                }
                sign = 1.0;
                i += 1;
            }
            if !row.is_empty() {
                rows.push(row);
            }
            Ok((Value::Matrix { rows, line }, i + 1))
        }
        Some(Tok::Sym('{')) => {
            let mut depth = 0usize;
            while let Some((t, _)) = toks.get(i) {
                match t {
                    Tok::Sym('{') => depth += 1,
                    Tok::Sym('}') => {
                        depth -= 1;
                        if depth == 0 {
                            return Ok((Value::Cell, i + 1));
                        }
                    }
                    _ => {}
                }
                i += 1;
            }
            Err(Error::parse(line, "unterminated cell array"))
        }
        Some(Tok::Num(_)) | Some(Tok::Sym('-')) => {
            let neg = toks[i].0 == Tok::Sym('-');
            if neg {
                i += 1;
            }
            match toks.get(i).map(|t| &t.0) {
                Some(Tok::Num(v)) => {
                    let v = if neg { -v } else { *v };
                    Ok((Value::Matrix { rows: vec![vec![v]], line }, i + 1))
                }
                _ => Err(Error::parse(line, "expected a number")),
            }
        }
        _ => Err(Error::parse(line, "unsupported value")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scans_fields() {
        let text = "function mpc = tiny\n% comment\nmpc.version = '2';\nmpc.baseMVA = 100;\n\
                    mpc.bus = [\n 1 3 0 0; % first\n 2 1 -1.5e1 ...\n Inf;\n];\nmpc.bus_name = {\n 'a';\n 'b';\n};\n";
        let raw = scan(text).unwrap();
        assert_eq!(raw.name, "tiny");
        assert_eq!(raw.string("version"), Some("2"));
        assert_eq!(raw.scalar("baseMVA"), Some(100.0));
        let (rows, line) = raw.matrix("bus").unwrap();
        assert_eq!(line, 5);
        assert_eq!(rows, &[vec![1.0, 3.0, 0.0, 0.0], vec![2.0, 1.0, -15.0, f64::INFINITY]]);
        assert_eq!(raw.fields.get("bus_name"), Some(&Value::Cell));
    }

    #[test]
    fn empty_text_has_no_function() {
        let e = scan("").unwrap_err().to_string();
        assert!(e.contains("no case function found"), "{e}");
    }

    #[test]
    fn decimal_forms() {
        let raw = scan("function mpc = x\nmpc.a = [ .5, 1., -2.25E-3 1e+2 ];").unwrap();
        assert_eq!(raw.matrix("a").unwrap().0, &[vec![0.5, 1.0, -0.00225, 100.0]]);
    }
}
