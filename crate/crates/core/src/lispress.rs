//! S-expressions in the Lispress style, canonical printing, and the
//! whitespace-insensitive Lispress Match metric.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SexpError {
    #[error("unbalanced parentheses at offset {0}")]
    Unbalanced(usize),
    #[error("unterminated string starting at offset {0}")]
    UnterminatedString(usize),
    #[error("trailing input at offset {0}")]
    TrailingInput(usize),
    #[error("empty input")]
    Empty,
}

/// An atom or a list. Quoted-string atoms keep their quotes and escapes
/// verbatim, so `"a b"` and `"a\"b"` print back exactly.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SexpNode {
    Atom(String),
    List(Vec<SexpNode>),
}

impl SexpNode {
    pub fn atom(text: impl Into<String>) -> Self {
        SexpNode::Atom(text.into())
    }

    pub fn is_string_atom(&self) -> bool {
        matches!(self, SexpNode::Atom(a) if a.starts_with('"'))
    }

    pub fn as_atom(&self) -> Option<&str> {
        match self {
            SexpNode::Atom(a) => Some(a),
            SexpNode::List(_) => None,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            SexpNode::Atom(_) => 0,
            SexpNode::List(children) => 1 + children.iter().map(SexpNode::depth).max().unwrap_or(0),
        }
    }
}

impl fmt::Display for SexpNode {
    /// Canonical form: single spaces, none inside the parentheses.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SexpNode::Atom(a) => f.write_str(a),
            SexpNode::List(children) => {
                f.write_str("(")?;
                for (i, child) in children.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    child.fmt(f)?;
                }
                f.write_str(")")
            }
        }
    }
}

pub fn canonical(node: &SexpNode) -> String {
    node.to_string()
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl Parser<'_> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn skip_ws(&mut self) {
        while let Some(c) = self.peek() {
            if !c.is_whitespace() {
                break;
            }
            self.pos += c.len_utf8();
        }
    }

    fn node(&mut self) -> Result<SexpNode, SexpError> {
        self.skip_ws();
        match self.peek() {
            None => Err(SexpError::Unbalanced(self.pos)),
            Some('(') => {
                self.pos += 1;
                let mut children = Vec::new();
                loop {
                    self.skip_ws();
                    match self.peek() {
                        None => return Err(SexpError::Unbalanced(self.pos)),
                        Some(')') => {
                            self.pos += 1;
                            return Ok(SexpNode::List(children));
                        }
                        Some(_) => children.push(self.node()?),
                    }
                }
            }
            Some(')') => Err(SexpError::Unbalanced(self.pos)),
            Some('"') => self.string(),
            Some(_) => {
                let begin = self.pos;
                while let Some(c) = self.peek() {
                    if c.is_whitespace() || c == '(' || c == ')' || c == '"' {
                        break;
                    }
                    self.pos += c.len_utf8();
                }
                Ok(SexpNode::Atom(self.src[begin..self.pos].to_owned()))
            }
        }
    }

    fn string(&mut self) -> Result<SexpNode, SexpError> {
        let begin = self.pos;
        self.pos += 1;
        let mut escaped = false;
        while let Some(c) = self.peek() {
            self.pos += c.len_utf8();
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => return Ok(SexpNode::Atom(self.src[begin..self.pos].to_owned())),
                _ => {}
            }
        }
        Err(SexpError::UnterminatedString(begin))
    }
}

/// Parses exactly one s-expression; surrounding whitespace is ignored.
pub fn parse_sexp(text: &str) -> Result<SexpNode, SexpError> {
    let mut parser = Parser { src: text, pos: 0 };
    parser.skip_ws();
    if parser.peek().is_none() {
        return Err(SexpError::Empty);
    }
    let node = parser.node()?;
    parser.skip_ws();
    match parser.peek() {
        None => Ok(node),
        Some(')') => Err(SexpError::Unbalanced(parser.pos)),
        Some(_) => Err(SexpError::TrailingInput(parser.pos)),
    }
}

/// Which side of a comparison failed to parse.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchError {
    Prediction(SexpError),
    Gold(SexpError),
}

/// Structural equality of two Lispress strings.
pub fn lispress_equal(prediction: &str, gold: &str) -> Result<bool, MatchError> {
    let gold = parse_sexp(gold).map_err(MatchError::Gold)?;
    let prediction = parse_sexp(prediction).map_err(MatchError::Prediction)?;
    Ok(prediction == gold)
}
