//! TOSCA simple-profile subset: parsing, validation and instantiation order.
//!
//! Five node types are understood (`Compute`, `SoftwareComponent`,
//! `LongRunningService`, `BatchJob`, `DataRequirement`); any other type is
//! kept in the model and reported as `UNSUPPORTED_TYPE`.

mod emit;
mod model;
mod order;
mod validate;
pub mod yaml;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

pub use emit::{flow_value, to_yaml};
pub use model::{
    DeploymentPolicy, InputDef, Locality, NodeKind, NodeTemplate, PolicyKind, PropertyValue, Requirement,
    RequirementKind, Scenario, TemplateDocument, Value,
};
pub use order::{cycles, resolve_order};
pub use validate::{resolve_inputs, validate, validate_with_inputs, Issue, IssueCode, ValidationReport, Warning};

/// Largest accepted template, in bytes.
pub const MAX_TEMPLATE_BYTES: usize = 1024 * 1024;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseErrorKind {
    Empty,
    TooLarge,
    Syntax,
    Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("{line}:{column}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub kind: ParseErrorKind,
    pub reason: String,
}

impl ParseError {
    pub(crate) fn shape(pos: yaml::Pos, reason: impl Into<String>) -> Self {
        ParseError { line: pos.line, column: pos.column, kind: ParseErrorKind::Shape, reason: reason.into() }
    }

    pub fn code(&self) -> &'static str {
        match self.kind {
            ParseErrorKind::Empty => "EMPTY_TEMPLATE",
            ParseErrorKind::TooLarge => "TEMPLATE_TOO_LARGE",
            ParseErrorKind::Syntax => "SYNTAX",
            ParseErrorKind::Shape => "BAD_SHAPE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub struct CycleError {
    pub nodes: Vec<String>,
}

impl fmt::Display for CycleError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "requirement graph has a cycle among [{}]", self.nodes.join(", "))
    }
}

/// Parses template text into the structured model.
pub fn parse_template(doc: &str) -> Result<TemplateDocument, ParseError> {
    if doc.len() > MAX_TEMPLATE_BYTES {
        return Err(ParseError {
            line: 0,
            column: 0,
            kind: ParseErrorKind::TooLarge,
            reason: alloc::format!("template is {} bytes; the limit is {MAX_TEMPLATE_BYTES}", doc.len()),
        });
    }
    if doc.trim().is_empty() {
        return Err(ParseError { line: 1, column: 1, kind: ParseErrorKind::Empty, reason: String::from("empty template") });
    }
    let tree = yaml::parse(doc).map_err(|e| ParseError {
        line: e.pos.line,
        column: e.pos.column,
        kind: ParseErrorKind::Syntax,
        reason: e.message,
    })?;
    if matches!(&tree, yaml::Node::Scalar { value, quoted: false, .. } if value.is_empty()) {
        return Err(ParseError { line: 1, column: 1, kind: ParseErrorKind::Empty, reason: String::from("template has no content") });
    }
    model::from_tree(&tree)
}
