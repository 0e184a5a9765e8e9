//! Structured model of a deployment template.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

use super::yaml::{self, Entry, Node, Pos};
use super::ParseError;

/// A loosely typed value: scalars, plus lists and maps for raw extras and
/// output expressions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Seq(Vec<Value>),
    Map(Vec<(String, Value)>),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(i) => Some(*i as f64),
            Value::Float(f) => Some(*f),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(i) => Some(*i),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_scalar(&self) -> bool {
        !matches!(self, Value::Seq(_) | Value::Map(_))
    }

    /// Plain scalars resolve like the YAML core schema; quoted ones stay strings.
    pub(crate) fn from_plain(text: &str) -> Value {
        if yaml::is_null_text(text) {
            return Value::Null;
        }
        match text {
            "true" | "True" | "TRUE" => return Value::Bool(true),
            "false" | "False" | "FALSE" => return Value::Bool(false),
            _ => {}
        }
        if looks_like_int(text) {
            if let Ok(i) = text.parse::<i64>() {
                return Value::Int(i);
            }
        } else if looks_like_float(text) {
            if let Ok(f) = text.parse::<f64>() {
                if f.is_finite() {
                    return Value::Float(f);
                }
            }
        }
        Value::Str(text.to_string())
    }

    pub(crate) fn from_node(n: &Node) -> Value {
        match n {
            Node::Scalar { value, quoted: true, .. } => Value::Str(value.clone()),
            Node::Scalar { value, quoted: false, .. } => Value::from_plain(value),
            Node::Seq { items, .. } => Value::Seq(items.iter().map(Value::from_node).collect()),
            Node::Map { entries, .. } => {
                Value::Map(entries.iter().map(|e| (e.key.clone(), Value::from_node(&e.value))).collect())
            }
        }
    }
}

fn looks_like_int(t: &str) -> bool {
    let d = t.strip_prefix(['-', '+']).unwrap_or(t);
    !d.is_empty() && d.bytes().all(|b| b.is_ascii_digit())
}

fn looks_like_float(t: &str) -> bool {
    let d = t.strip_prefix(['-', '+']).unwrap_or(t);
    let (mantissa, exp) = match d.find(['e', 'E']) {
        Some(i) => (&d[..i], Some(&d[i + 1..])),
        None => (d, None),
    };
    let (int, frac) = match mantissa.find('.') {
        Some(i) => (&mantissa[..i], Some(&mantissa[i + 1..])),
        None => (mantissa, None),
    };
    let digits = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    let mantissa_ok = match frac {
        Some(f) => digits(int) && digits(f) && !(int.is_empty() && f.is_empty()),
        None => !int.is_empty() && digits(int),
    };
    let exp_ok = match exp {
        Some(e) => {
            let e = e.strip_prefix(['-', '+']).unwrap_or(e);
            !e.is_empty() && digits(e)
        }
        None => true,
    };
    mantissa_ok && exp_ok && (frac.is_some() || exp.is_some())
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Null => f.write_str("null"),
            Value::Bool(b) => write!(f, "{b}"),
            Value::Int(i) => write!(f, "{i}"),
            Value::Float(x) => write!(f, "{x:?}"),
            Value::Str(s) => f.write_str(s),
            Value::Seq(_) | Value::Map(_) => f.write_str(&super::emit::flow_value(self)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NodeKind {
    Compute,
    SoftwareComponent,
    LongRunningService,
    BatchJob,
    DataRequirement,
    /// Any other type; kept so real-world templates still load.
    Unsupported(String),
}

impl NodeKind {
    pub fn parse(s: &str) -> NodeKind {
        match s {
            "Compute" | "tosca.nodes.Compute" => NodeKind::Compute,
            "SoftwareComponent" | "tosca.nodes.SoftwareComponent" => NodeKind::SoftwareComponent,
            "LongRunningService" | "tosca.nodes.indigo.LongRunningService" => NodeKind::LongRunningService,
            "BatchJob" | "tosca.nodes.indigo.BatchJob" => NodeKind::BatchJob,
            "DataRequirement" | "tosca.nodes.indigo.DataRequirement" => NodeKind::DataRequirement,
            other => NodeKind::Unsupported(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            NodeKind::Compute => "Compute",
            NodeKind::SoftwareComponent => "SoftwareComponent",
            NodeKind::LongRunningService => "LongRunningService",
            NodeKind::BatchJob => "BatchJob",
            NodeKind::DataRequirement => "DataRequirement",
            NodeKind::Unsupported(s) => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum PropertyValue {
    Value(Value),
    GetInput(String),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequirementKind {
    Host,
    Dependency,
    Data,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Requirement {
    /// `Err(raw)` for a kind outside the supported set.
    pub kind: Result<RequirementKind, String>,
    pub target: String,
}

impl Requirement {
    pub fn new(kind: RequirementKind, target: impl Into<String>) -> Self {
        Requirement { kind: Ok(kind), target: target.into() }
    }

    pub fn kind_name(&self) -> &str {
        match &self.kind {
            Ok(RequirementKind::Host) => "host",
            Ok(RequirementKind::Dependency) => "dependency",
            Ok(RequirementKind::Data) => "data",
            Err(raw) => raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTemplate {
    pub name: String,
    pub kind: NodeKind,
    pub properties: BTreeMap<String, PropertyValue>,
    pub requirements: Vec<Requirement>,
    pub extras: BTreeMap<String, Value>,
}

impl NodeTemplate {
    pub fn new(name: impl Into<String>, kind: NodeKind) -> Self {
        NodeTemplate {
            name: name.into(),
            kind,
            properties: BTreeMap::new(),
            requirements: Vec::new(),
            extras: BTreeMap::new(),
        }
    }

    pub fn with_property(mut self, key: &str, v: Value) -> Self {
        self.properties.insert(key.to_string(), PropertyValue::Value(v));
        self
    }

    pub fn with_requirement(mut self, kind: RequirementKind, target: &str) -> Self {
        self.requirements.push(Requirement::new(kind, target));
        self
    }

    /// The literal value of a property, `None` if absent or still an input reference.
    pub fn prop(&self, key: &str) -> Option<&Value> {
        match self.properties.get(key)? {
            PropertyValue::Value(v) => Some(v),
            PropertyValue::GetInput(_) => None,
        }
    }

    pub fn prop_f64(&self, key: &str) -> Option<f64> {
        self.prop(key).and_then(Value::as_f64)
    }

    pub fn prop_str(&self, key: &str) -> Option<&str> {
        self.prop(key).and_then(Value::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDef {
    #[serde(rename = "type")]
    pub ty: String,
    pub default: Option<Value>,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PolicyKind {
    ScenarioHint,
    SlaClass,
    Locality,
    Other(String),
}

impl PolicyKind {
    pub fn parse(s: &str) -> PolicyKind {
        match s {
            "scenario_hint" => PolicyKind::ScenarioHint,
            "sla_class" => PolicyKind::SlaClass,
            "locality" => PolicyKind::Locality,
            other => PolicyKind::Other(other.to_string()),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            PolicyKind::ScenarioHint => "scenario_hint",
            PolicyKind::SlaClass => "sla_class",
            PolicyKind::Locality => "locality",
            PolicyKind::Other(s) => s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeploymentPolicy {
    pub kind: PolicyKind,
    pub value: Value,
}

/// Where a deployment runs: user-managed virtual infrastructure (A) or
/// platform-managed services and jobs on the elastic cluster (B).
#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Scenario> {
        match s {
            "A" | "a" => Some(Scenario::A),
            "B" | "b" => Some(Scenario::B),
            _ => None,
        }
    }
}

#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    #[default]
    PreferData,
    PreferCompute,
}

impl Locality {
    pub fn parse(s: &str) -> Option<Locality> {
        match s {
            "prefer_data" => Some(Locality::PreferData),
            "prefer_compute" => Some(Locality::PreferCompute),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TemplateDocument {
    pub tosca_definitions_version: Option<String>,
    pub description: Option<String>,
    pub inputs: BTreeMap<String, InputDef>,
    /// Kept as a list so that duplicate names survive to validation.
    pub node_templates: Vec<NodeTemplate>,
    pub outputs: BTreeMap<String, Value>,
    pub policies: Vec<DeploymentPolicy>,
    /// Unknown top-level keys.
    pub extras: BTreeMap<String, Value>,
    /// Unknown keys under `topology_template`.
    pub topology_extras: BTreeMap<String, Value>,
}

impl TemplateDocument {
    pub fn node(&self, name: &str) -> Option<&NodeTemplate> {
        self.node_templates.iter().find(|n| n.name == name)
    }

    fn policy(&self, kind: PolicyKind) -> Option<&Value> {
        self.policies.iter().find(|p| p.kind == kind).map(|p| &p.value)
    }

    pub fn scenario_hint(&self) -> Option<Scenario> {
        self.policy(PolicyKind::ScenarioHint).and_then(Value::as_str).and_then(Scenario::parse)
    }

    pub fn sla_class(&self) -> Option<crate::slam::SlaClass> {
        self.policy(PolicyKind::SlaClass).and_then(Value::as_str).and_then(crate::slam::SlaClass::parse)
    }

    pub fn locality(&self) -> Locality {
        self.policy(PolicyKind::Locality).and_then(Value::as_str).and_then(Locality::parse).unwrap_or_default()
    }
}

fn shape<T>(pos: Pos, msg: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError::shape(pos, msg))
}

fn entries<'n>(n: &'n Node, what: &str) -> Result<&'n [Entry], ParseError> {
    match n {
        Node::Map { entries, .. } => Ok(entries),
        _ if n.is_null() => Ok(&[]),
        other => shape(other.pos(), format!("{what} must be a mapping, found a {}", other.kind_name())),
    }
}

fn items<'n>(n: &'n Node, what: &str) -> Result<&'n [Node], ParseError> {
    match n {
        Node::Seq { items, .. } => Ok(items),
        _ if n.is_null() => Ok(&[]),
        other => shape(other.pos(), format!("{what} must be a sequence, found a {}", other.kind_name())),
    }
}

fn scalar_text<'n>(n: &'n Node, what: &str) -> Result<&'n str, ParseError> {
    match n {
        Node::Scalar { value, .. } => Ok(value),
        other => shape(other.pos(), format!("{what} must be a scalar, found a {}", other.kind_name())),
    }
}

fn no_duplicates(es: &[Entry], what: &str) -> Result<(), ParseError> {
    for (i, e) in es.iter().enumerate() {
        if es[..i].iter().any(|p| p.key == e.key) {
            return shape(e.key_pos, format!("duplicate key `{}` in {what}", e.key));
        }
    }
    Ok(())
}

/// Converts a parsed YAML tree into the template model.
pub(crate) fn from_tree(root: &Node) -> Result<TemplateDocument, ParseError> {
    let Node::Map { entries: top, .. } = root else {
        return shape(root.pos(), format!("template must be a mapping, found a {}", root.kind_name()));
    };
    no_duplicates(top, "the template")?;
    let mut doc = TemplateDocument::default();
    for e in top {
        match e.key.as_str() {
            "tosca_definitions_version" => {
                doc.tosca_definitions_version = Some(scalar_text(&e.value, "tosca_definitions_version")?.to_string())
            }
            "description" => doc.description = Some(scalar_text(&e.value, "description")?.to_string()),
            "topology_template" => topology(&e.value, &mut doc)?,
            other => {
                doc.extras.insert(other.to_string(), Value::from_node(&e.value));
            }
        }
    }
    Ok(doc)
}

fn topology(n: &Node, doc: &mut TemplateDocument) -> Result<(), ParseError> {
    let es = entries(n, "topology_template")?;
    no_duplicates(es, "topology_template")?;
    for e in es {
        match e.key.as_str() {
            "inputs" => {
                let ins = entries(&e.value, "inputs")?;
                no_duplicates(ins, "inputs")?;
                for i in ins {
                    doc.inputs.insert(i.key.clone(), input_def(&i.value)?);
                }
            }
            "node_templates" => {
                for nt in entries(&e.value, "node_templates")? {
                    doc.node_templates.push(node_template(&nt.key, nt.key_pos, &nt.value)?);
                }
            }
            "outputs" => {
                let outs = entries(&e.value, "outputs")?;
                no_duplicates(outs, "outputs")?;
                for o in outs {
                    let expr = match &o.value {
                        Node::Map { entries, .. } => match entries.iter().find(|x| x.key == "value") {
                            Some(v) => Value::from_node(&v.value),
                            None => Value::from_node(&o.value),
                        },
                        other => Value::from_node(other),
                    };
                    doc.outputs.insert(o.key.clone(), expr);
                }
            }
            "policies" => {
                for p in items(&e.value, "policies")? {
                    let pe = entries(p, "a policy")?;
                    if pe.len() != 1 {
                        return shape(p.pos(), "each policy must be a single `kind: value` entry");
                    }
                    doc.policies.push(DeploymentPolicy {
                        kind: PolicyKind::parse(&pe[0].key),
                        value: Value::from_node(&pe[0].value),
                    });
                }
            }
            other => {
                doc.topology_extras.insert(other.to_string(), Value::from_node(&e.value));
            }
        }
    }
    Ok(())
}

fn input_def(n: &Node) -> Result<InputDef, ParseError> {
    let es = entries(n, "an input definition")?;
    no_duplicates(es, "an input definition")?;
    let mut def = InputDef { ty: String::from("string"), default: None };
    for e in es {
        match e.key.as_str() {
            "type" => def.ty = scalar_text(&e.value, "input type")?.to_string(),
            "default" => def.default = Some(Value::from_node(&e.value)),
            _ => {}
        }
    }
    Ok(def)
}

fn node_template(name: &str, pos: Pos, n: &Node) -> Result<NodeTemplate, ParseError> {
    let es = entries(n, "a node template")?;
    no_duplicates(es, "a node template")?;
    let Some(ty) = es.iter().find(|e| e.key == "type") else {
        return shape(pos, format!("node template `{name}` has no type"));
    };
    let mut node = NodeTemplate::new(name, NodeKind::parse(scalar_text(&ty.value, "node type")?));
    for e in es {
        match e.key.as_str() {
            "type" => {}
            "properties" => {
                let ps = entries(&e.value, "properties")?;
                no_duplicates(ps, "properties")?;
                for p in ps {
                    node.properties.insert(p.key.clone(), property(&p.value));
                }
            }
            "requirements" => {
                for r in items(&e.value, "requirements")? {
                    node.requirements.push(requirement(r)?);
                }
            }
            other => {
                node.extras.insert(other.to_string(), Value::from_node(&e.value));
            }
        }
    }
    Ok(node)
}

fn property(n: &Node) -> PropertyValue {
    if let Node::Map { entries, .. } = n {
        if entries.len() == 1 && entries[0].key == "get_input" {
            if let Node::Scalar { value, .. } = &entries[0].value {
                return PropertyValue::GetInput(value.clone());
            }
        }
    }
    PropertyValue::Value(Value::from_node(n))
}

fn requirement(n: &Node) -> Result<Requirement, ParseError> {
    let es = entries(n, "a requirement")?;
    if es.len() != 1 {
        return shape(n.pos(), "each requirement must be a single `kind: target` entry");
    }
    let e = &es[0];
    let target = match &e.value {
        Node::Scalar { value, .. } => value.clone(),
        Node::Map { entries, pos } => match entries.iter().find(|x| x.key == "node") {
            Some(x) => scalar_text(&x.value, "requirement node")?.to_string(),
            None => return shape(*pos, "requirement mapping needs a `node` entry"),
        },
        other => return shape(other.pos(), "requirement target must be a node name"),
    };
    let kind = match e.key.as_str() {
        "host" => Ok(RequirementKind::Host),
        "dependency" => Ok(RequirementKind::Dependency),
        "data" => Ok(RequirementKind::Data),
        other => Err(other.to_string()),
    };
    Ok(Requirement { kind, target })
}
