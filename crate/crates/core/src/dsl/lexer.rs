use crate::diag::Diagnostic;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Meta(String),
    Num(String),
    Punct(&'static str),
    Eof,
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCT: [&str; 18] = ["->", "=>", "<=", ">=", "<", ">", "=", ";", ":", ",", "(", ")", "[", "]", "|", "@", "+", "."];

fn ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

pub fn lex(text: &str) -> Result<Vec<Token>, Diagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '#' || (c == '/' && chars.get(i + 1) == Some(&'/')) {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        let (start_line, start_col) = (line, col);
        let tok = if c == '?' {
            let mut j = i + 1;
            while j < chars.len() && ident_char(chars[j]) {
                j += 1;
            }
            if j == i + 1 {
                return Err(Diagnostic::at_pos("E_PARSE", line, col, "expected a name after ?"));
            }
            let name: String = chars[i + 1..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            Tok::Meta(name)
        } else if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            if j + 1 < chars.len() && (chars[j] == '/' || chars[j] == '.') && chars[j + 1].is_ascii_digit() {
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            let num: String = chars[i..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            Tok::Num(num)
        } else if ident_char(c) {
            let mut j = i;
            while j < chars.len() && ident_char(chars[j]) {
                j += 1;
            }
            let name: String = chars[i..j].iter().collect();
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            Tok::Ident(name)
        } else {
            let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
            match PUNCT.iter().find(|p| rest.starts_with(**p)) {
                Some(p) => {
                    advance(&mut i, &mut line, &mut col, p.len());
                    Tok::Punct(p)
                }
                None => return Err(Diagnostic::at_pos("E_PARSE", line, col, format!("unexpected character {c:?}"))),
            }
        };
        out.push(Token { tok, line: start_line, col: start_col });
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
