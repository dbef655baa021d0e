use std::cell::RefCell;
use std::time::Instant;

use tree_sitter::{Node, Parser};

use super::{CheckerKind, SyntaxChecker, SyntaxVerdict, DEFAULT_EMBEDDED_TIMEOUT_SECS};

thread_local! {
    static PARSER: RefCell<Option<Parser>> = const { RefCell::new(None) };
}

/// Java compilation-unit parse. tree-sitter recovers from errors, so any
/// ERROR or MISSING node in the tree counts as a rejection.
#[derive(Debug, Default)]
pub struct JavaChecker;

impl JavaChecker {
    pub fn new() -> Self {
        JavaChecker
    }
}

fn first_error(node: Node<'_>) -> Option<Node<'_>> {
    if node.is_error() || node.is_missing() {
        return Some(node);
    }
    if !node.has_error() {
        return None;
    }
    let mut cursor = node.walk();
    let children: Vec<Node<'_>> = node.children(&mut cursor).collect();
    children.into_iter().find_map(first_error)
}

impl SyntaxChecker for JavaChecker {
    fn id(&self) -> &str {
        "java/tree-sitter-java"
    }

    fn kind(&self) -> CheckerKind {
        CheckerKind::EmbeddedGrammar
    }

    fn timeout(&self) -> f64 {
        DEFAULT_EMBEDDED_TIMEOUT_SECS
    }

    fn check(&self, source: &str) -> SyntaxVerdict {
        let started = Instant::now();
        let error = PARSER.with(|cell| {
            let mut slot = cell.borrow_mut();
            let parser = slot.get_or_insert_with(|| {
                let mut parser = Parser::new();
                parser
                    .set_language(&tree_sitter_java::LANGUAGE.into())
                    .expect("tree-sitter-java grammar matches the linked runtime");
                parser
            });
            match parser.parse(source, None) {
                None => Some("parser produced no tree".to_owned()),
                Some(tree) => first_error(tree.root_node()).map(|node| {
                    let pos = node.start_position();
                    let what = if node.is_missing() {
                        format!("missing `{}`", node.kind())
                    } else {
                        "unexpected input".to_owned()
                    };
                    format!("{what} at {}:{}", pos.row + 1, pos.column + 1)
                }),
            }
        });
        SyntaxVerdict::from_parse(self.id(), started, error)
    }
}
