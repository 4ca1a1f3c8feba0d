//! Bracket-structure parse trees for the syntax component of CodeBLEU.
//!
//! The bundled [`BracketParser`] recognises `{}` blocks, `()` and `[]` groups,
//! `;`-terminated statements and keyword-headed constructs. Leaves are reduced
//! to categories (`id`, `num`, `str`, keyword or operator text), so subtrees
//! compare structure rather than identifier names. Any other parser can be
//! plugged in through [`ParseTreeProvider`].

use std::collections::HashMap;

use super::tokenize::{is_identifier, is_number, is_string_literal, tokenize_code};
use super::Language;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Program,
    Block,
    Parens,
    Brackets,
    Statement,
    Construct(String),
    Leaf(String),
}

impl NodeKind {
    fn label(&self) -> &str {
        match self {
            NodeKind::Program => "program",
            NodeKind::Block => "block",
            NodeKind::Parens => "parens",
            NodeKind::Brackets => "brackets",
            NodeKind::Statement => "stmt",
            NodeKind::Construct(k) => k,
            NodeKind::Leaf(c) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntaxNode {
    pub kind: NodeKind,
    pub children: Vec<SyntaxNode>,
}

impl SyntaxNode {
    fn leaf(category: impl Into<String>) -> Self {
        SyntaxNode {
            kind: NodeKind::Leaf(category.into()),
            children: Vec::new(),
        }
    }

    pub fn depth(&self) -> usize {
        1 + self
            .children
            .iter()
            .map(SyntaxNode::depth)
            .max()
            .unwrap_or(0)
    }

    /// S-expression of the subtree rooted here.
    pub fn sexp(&self) -> String {
        let mut out = String::new();
        self.write_sexp(&mut out);
        out
    }

    fn write_sexp(&self, out: &mut String) {
        if self.children.is_empty() {
            out.push_str(self.kind.label());
            return;
        }
        out.push('(');
        out.push_str(self.kind.label());
        for c in &self.children {
            out.push(' ');
            c.write_sexp(out);
        }
        out.push(')');
    }

    /// S-expressions of every subtree of depth at least 2, root included.
    pub fn subtrees(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out
    }

    fn collect(&self, out: &mut Vec<String>) {
        if self.depth() >= 2 {
            out.push(self.sexp());
        }
        for c in &self.children {
            c.collect(out);
        }
    }
}

/// Source of parse trees for syntax matching.
pub trait ParseTreeProvider {
    fn parse(&self, code: &str, language: Language) -> SyntaxNode;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BracketParser;

impl ParseTreeProvider for BracketParser {
    fn parse(&self, code: &str, language: Language) -> SyntaxNode {
        let tokens = tokenize_code(code);
        let usable = balanced_prefix_len(&tokens);
        let mut parser = Parser {
            tokens: &tokens[..usable],
            pos: 0,
            language,
        };
        SyntaxNode {
            kind: NodeKind::Program,
            children: parser.sequence(None),
        }
    }
}

fn closer_for(open: &str) -> Option<&'static str> {
    match open {
        "{" => Some("}"),
        "(" => Some(")"),
        "[" => Some("]"),
        _ => None,
    }
}

/// Length of the longest prefix that a bracket parser can consume: cut at the
/// first mismatched closer, and back off to the last point of zero nesting if
/// any group is left open.
pub fn balanced_prefix_len(tokens: &[String]) -> usize {
    let mut stack: Vec<&'static str> = Vec::new();
    let mut last_zero = 0;
    for (i, t) in tokens.iter().enumerate() {
        if let Some(close) = closer_for(t) {
            stack.push(close);
        } else if matches!(t.as_str(), "}" | ")" | "]") {
            if stack.last() != Some(&t.as_str()) {
                return last_zero;
            }
            stack.pop();
        }
        if stack.is_empty() {
            last_zero = i + 1;
        }
    }
    last_zero
}

struct Parser<'a> {
    tokens: &'a [String],
    pos: usize,
    language: Language,
}

impl Parser<'_> {
    fn sequence(&mut self, closer: Option<&str>) -> Vec<SyntaxNode> {
        let mut statements = Vec::new();
        let mut current: Vec<SyntaxNode> = Vec::new();
        while let Some(tok) = self.tokens.get(self.pos) {
            let tok = tok.as_str();
            if Some(tok) == closer {
                break;
            }
            self.pos += 1;
            match tok {
                "{" => {
                    let inner = self.group(NodeKind::Block, "}");
                    current.push(inner);
                    let continues = matches!(
                        self.tokens.get(self.pos).map(String::as_str),
                        Some(";") | Some(",") | Some(")") | Some(".")
                    );
                    if !continues {
                        self.flush(&mut current, &mut statements);
                    }
                }
                "(" => {
                    let inner = self.group(NodeKind::Parens, ")");
                    current.push(inner);
                }
                "[" => {
                    let inner = self.group(NodeKind::Brackets, "]");
                    current.push(inner);
                }
                ";" => {
                    current.push(SyntaxNode::leaf(";"));
                    self.flush(&mut current, &mut statements);
                }
                _ => current.push(self.leaf(tok)),
            }
        }
        self.flush(&mut current, &mut statements);
        statements
    }

    fn group(&mut self, kind: NodeKind, closer: &str) -> SyntaxNode {
        let children = self.sequence(Some(closer));
        // the balanced prefix guarantees the closer is present
        self.pos += 1;
        SyntaxNode { kind, children }
    }

    fn flush(&self, current: &mut Vec<SyntaxNode>, statements: &mut Vec<SyntaxNode>) {
        if current.is_empty() {
            return;
        }
        let kind = match current.first().map(|n| &n.kind) {
            Some(NodeKind::Leaf(head)) if self.language.is_keyword(head) => {
                NodeKind::Construct(head.clone())
            }
            _ => NodeKind::Statement,
        };
        statements.push(SyntaxNode {
            kind,
            children: std::mem::take(current),
        });
    }

    fn leaf(&self, tok: &str) -> SyntaxNode {
        let category = if self.language.is_keyword(tok) {
            tok
        } else if is_identifier(tok) {
            "id"
        } else if is_number(tok) {
            "num"
        } else if is_string_literal(tok) {
            "str"
        } else {
            tok
        };
        SyntaxNode::leaf(category)
    }
}

/// Fraction of reference subtrees (depth ≥ 2, as a multiset) also present in
/// the candidate. A reference with no such subtree scores 1.
pub fn syntax_match_with<P: ParseTreeProvider>(
    provider: &P,
    candidate: &str,
    reference: &str,
    language: Language,
) -> f64 {
    let reference_trees = provider.parse(reference, language).subtrees();
    if reference_trees.is_empty() {
        return 1.0;
    }
    let mut available: HashMap<String, usize> = HashMap::new();
    for s in provider.parse(candidate, language).subtrees() {
        *available.entry(s).or_insert(0) += 1;
    }
    let mut matched = 0usize;
    for s in &reference_trees {
        if let Some(c) = available.get_mut(s) {
            if *c > 0 {
                *c -= 1;
                matched += 1;
            }
        }
    }
    matched as f64 / reference_trees.len() as f64
}

pub fn syntax_match(candidate: &str, reference: &str, language: Language) -> f64 {
    syntax_match_with(&BracketParser, candidate, reference, language)
}
