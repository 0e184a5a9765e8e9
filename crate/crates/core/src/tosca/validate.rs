use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::model::{
    Locality, NodeKind, NodeTemplate, PolicyKind, PropertyValue, RequirementKind, Scenario, TemplateDocument, Value,
};
use super::order;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    EmptyTopology,
    DuplicateNode,
    UnknownTarget,
    BadRequirement,
    BadHost,
    Cycle,
    MissingProperty,
    BadProperty,
    UnknownInput,
    MissingInput,
    BadInput,
    DuplicatePolicy,
    BadPolicy,
    // warnings
    UnsupportedType,
    UnknownProperty,
    UnknownKey,
    UnknownPolicy,
    UnknownInputType,
}

impl IssueCode {
    pub fn as_str(&self) -> &'static str {
        match self {
            IssueCode::EmptyTopology => "EMPTY_TOPOLOGY",
            IssueCode::DuplicateNode => "DUPLICATE_NODE",
            IssueCode::UnknownTarget => "UNKNOWN_TARGET",
            IssueCode::BadRequirement => "BAD_REQUIREMENT",
            IssueCode::BadHost => "BAD_HOST",
            IssueCode::Cycle => "CYCLE",
            IssueCode::MissingProperty => "MISSING_PROPERTY",
            IssueCode::BadProperty => "BAD_PROPERTY",
            IssueCode::UnknownInput => "UNKNOWN_INPUT",
            IssueCode::MissingInput => "MISSING_INPUT",
            IssueCode::BadInput => "BAD_INPUT",
            IssueCode::DuplicatePolicy => "DUPLICATE_POLICY",
            IssueCode::BadPolicy => "BAD_POLICY",
            IssueCode::UnsupportedType => "UNSUPPORTED_TYPE",
            IssueCode::UnknownProperty => "UNKNOWN_PROPERTY",
            IssueCode::UnknownKey => "UNKNOWN_KEY",
            IssueCode::UnknownPolicy => "UNKNOWN_POLICY",
            IssueCode::UnknownInputType => "UNKNOWN_INPUT_TYPE",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub code: IssueCode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    /// Members of a dependency cycle, sorted; only set for `CYCLE`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cycle: Vec<String>,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Warning {
    pub code: IssueCode,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Issue>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_deployable(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn has_error(&self, code: IssueCode) -> bool {
        self.errors.iter().any(|e| e.code == code)
    }

    fn error(&mut self, code: IssueCode, node: Option<&str>, message: String) {
        self.errors.push(Issue { code, node: node.map(ToString::to_string), cycle: Vec::new(), message });
    }

    fn warn(&mut self, code: IssueCode, message: String) {
        self.warnings.push(Warning { code, message });
    }
}

/// Properties each supported node kind understands.
fn known_properties(kind: &NodeKind) -> &'static [&'static str] {
    match kind {
        NodeKind::Compute => &["cpu", "memory", "disk", "image", "gpu", "infiniband"],
        NodeKind::SoftwareComponent => &["image", "command", "version"],
        NodeKind::LongRunningService => &["cpu", "memory", "disk", "image", "command", "replicas"],
        NodeKind::BatchJob => {
            &["cpu", "memory", "disk", "image", "command", "duration", "max_attempts", "simulate_failures"]
        }
        NodeKind::DataRequirement => &["dataset", "access_mode"],
        NodeKind::Unsupported(_) => &[],
    }
}

fn input_type_matches(ty: &str, v: &Value) -> Option<bool> {
    Some(match ty {
        "string" => matches!(v, Value::Str(_)),
        "integer" => matches!(v, Value::Int(_)),
        "float" => matches!(v, Value::Int(_) | Value::Float(_)),
        "boolean" => matches!(v, Value::Bool(_)),
        _ => return None,
    })
}

/// Replaces every `get_input` reference with the provided value or the
/// input's default. Unresolvable references are reported and left in place.
pub fn resolve_inputs(
    t: &TemplateDocument,
    provided: &BTreeMap<String, Value>,
) -> (TemplateDocument, Vec<Issue>) {
    let mut issues = Vec::new();
    let mut out = t.clone();
    for node in &mut out.node_templates {
        for (key, pv) in node.properties.iter_mut() {
            let PropertyValue::GetInput(name) = pv else { continue };
            let Some(def) = t.inputs.get(name) else {
                issues.push(Issue {
                    code: IssueCode::UnknownInput,
                    node: Some(node.name.clone()),
                    cycle: Vec::new(),
                    message: format!("property `{key}` references undeclared input `{name}`"),
                });
                continue;
            };
            match provided.get(name).or(def.default.as_ref()) {
                Some(v) => *pv = PropertyValue::Value(v.clone()),
                None => issues.push(Issue {
                    code: IssueCode::MissingInput,
                    node: Some(node.name.clone()),
                    cycle: Vec::new(),
                    message: format!("input `{name}` has no value and no default"),
                }),
            }
        }
    }
    (out, issues)
}

/// Checks every template invariant. Never fails; violations are report entries.
pub fn validate(t: &TemplateDocument) -> ValidationReport {
    validate_with_inputs(t, &BTreeMap::new())
}

pub fn validate_with_inputs(t: &TemplateDocument, provided: &BTreeMap<String, Value>) -> ValidationReport {
    let mut r = ValidationReport::default();

    for k in t.extras.keys() {
        r.warn(IssueCode::UnknownKey, format!("unknown top-level key `{k}` preserved"));
    }
    for k in t.topology_extras.keys() {
        r.warn(IssueCode::UnknownKey, format!("unknown topology_template key `{k}` preserved"));
    }

    for (name, def) in &t.inputs {
        match &def.default {
            Some(d) => match input_type_matches(&def.ty, d) {
                Some(true) => {}
                Some(false) => {
                    r.error(IssueCode::BadInput, None, format!("default of input `{name}` is not a {}", def.ty))
                }
                None => r.warn(IssueCode::UnknownInputType, format!("input `{name}` has unknown type `{}`", def.ty)),
            },
            None => {
                if input_type_matches(&def.ty, &Value::Null).is_none() {
                    r.warn(IssueCode::UnknownInputType, format!("input `{name}` has unknown type `{}`", def.ty));
                }
            }
        }
    }
    for (name, v) in provided {
        if let Some(def) = t.inputs.get(name) {
            if input_type_matches(&def.ty, v) == Some(false) {
                r.error(IssueCode::BadInput, None, format!("value for input `{name}` is not a {}", def.ty));
            }
        }
    }

    if t.node_templates.is_empty() {
        r.error(IssueCode::EmptyTopology, None, String::from("template declares no node templates"));
    }

    let mut kinds: BTreeMap<&str, &NodeKind> = BTreeMap::new();
    let mut reported_dup = BTreeSet::new();
    for n in &t.node_templates {
        if kinds.insert(&n.name, &n.kind).is_some() && reported_dup.insert(n.name.as_str()) {
            r.error(IssueCode::DuplicateNode, Some(&n.name), format!("node template `{}` is defined more than once", n.name));
        }
    }

    let (resolved, input_issues) = resolve_inputs(t, provided);
    r.errors.extend(input_issues);

    for n in &resolved.node_templates {
        if let NodeKind::Unsupported(ty) = &n.kind {
            r.warn(IssueCode::UnsupportedType, format!("node `{}` has unsupported type `{ty}`; it will not be deployed", n.name));
        }
        check_properties(n, &mut r);
        for req in &n.requirements {
            let target_kind = kinds.get(req.target.as_str());
            match (&req.kind, target_kind) {
                (Err(raw), _) => r.error(
                    IssueCode::BadRequirement,
                    Some(&n.name),
                    format!("unsupported requirement kind `{raw}`"),
                ),
                (Ok(_), None) => r.error(
                    IssueCode::UnknownTarget,
                    Some(&n.name),
                    format!("requirement target `{}` is not a node template", req.target),
                ),
                (Ok(RequirementKind::Host), Some(k)) if **k != NodeKind::Compute => r.error(
                    IssueCode::BadHost,
                    Some(&n.name),
                    format!("host `{}` is a {}, not a Compute node", req.target, k.name()),
                ),
                (Ok(RequirementKind::Data), Some(k)) if **k != NodeKind::DataRequirement => r.error(
                    IssueCode::BadRequirement,
                    Some(&n.name),
                    format!("data requirement `{}` is a {}, not a DataRequirement", req.target, k.name()),
                ),
                _ => {}
            }
        }
    }

    for cycle in order::cycles(t) {
        r.errors.push(Issue {
            code: IssueCode::Cycle,
            node: None,
            message: format!("dependency cycle among [{}]", cycle.join(", ")),
            cycle,
        });
    }

    let mut seen = BTreeSet::new();
    for p in &t.policies {
        if !seen.insert(p.kind.clone()) {
            r.error(IssueCode::DuplicatePolicy, None, format!("policy `{}` given more than once", p.kind.name()));
            continue;
        }
        let ok = match &p.kind {
            PolicyKind::ScenarioHint => p.value.as_str().and_then(Scenario::parse).is_some(),
            PolicyKind::SlaClass => p.value.as_str().and_then(crate::slam::SlaClass::parse).is_some(),
            PolicyKind::Locality => p.value.as_str().and_then(Locality::parse).is_some(),
            PolicyKind::Other(k) => {
                r.warn(IssueCode::UnknownPolicy, format!("unknown policy `{k}` ignored"));
                true
            }
        };
        if !ok {
            r.error(IssueCode::BadPolicy, None, format!("policy `{}` has invalid value `{}`", p.kind.name(), p.value));
        }
    }

    r
}

fn check_properties(n: &NodeTemplate, r: &mut ValidationReport) {
    let known = known_properties(&n.kind);
    if !matches!(n.kind, NodeKind::Unsupported(_)) {
        for (k, v) in &n.properties {
            if !known.contains(&k.as_str()) {
                r.warn(IssueCode::UnknownProperty, format!("node `{}`: unknown property `{k}`", n.name));
            } else if let PropertyValue::Value(v) = v {
                if !v.is_scalar() {
                    r.error(IssueCode::BadProperty, Some(&n.name), format!("property `{k}` must be a scalar"));
                }
            }
        }
    }

    let mut number = |key: &str, required: bool, min: f64, inclusive: bool| match n.properties.get(key) {
        None if required => r.error(IssueCode::MissingProperty, Some(&n.name), format!("missing required property `{key}`")),
        None | Some(PropertyValue::GetInput(_)) => {}
        Some(PropertyValue::Value(v)) => {
            let ok = v.as_f64().map(|x| if inclusive { x >= min } else { x > min }).unwrap_or(false)
                && v.as_f64().map(|x| x <= 1.0e9).unwrap_or(false);
            if !ok {
                let bound = if inclusive { ">=" } else { ">" };
                r.error(IssueCode::BadProperty, Some(&n.name), format!("property `{key}` must be a number {bound} {min}"));
            }
        }
    };
    match n.kind {
        NodeKind::Compute => {
            number("cpu", true, 1.0, true);
            number("memory", true, 0.0, false);
            number("disk", false, 0.0, true);
        }
        NodeKind::LongRunningService | NodeKind::BatchJob => {
            number("cpu", true, 0.0, false);
            number("memory", true, 0.0, false);
            number("disk", false, 0.0, true);
        }
        _ => {}
    }

    let mut integer = |key: &str, required: bool, min: i64| match n.properties.get(key) {
        None if required => r.error(IssueCode::MissingProperty, Some(&n.name), format!("missing required property `{key}`")),
        None | Some(PropertyValue::GetInput(_)) => {}
        Some(PropertyValue::Value(v)) => {
            if !v.as_i64().map(|x| x >= min && x <= 1_000_000).unwrap_or(false) {
                r.error(IssueCode::BadProperty, Some(&n.name), format!("property `{key}` must be an integer >= {min}"));
            }
        }
    };
    match n.kind {
        NodeKind::LongRunningService => integer("replicas", true, 1),
        NodeKind::BatchJob => {
            integer("duration", false, 0);
            integer("max_attempts", false, 1);
            integer("simulate_failures", false, 0);
        }
        _ => {}
    }

    let mut text = |key: &str, required: bool, allowed: &[&str]| match n.properties.get(key) {
        None if required => r.error(IssueCode::MissingProperty, Some(&n.name), format!("missing required property `{key}`")),
        None | Some(PropertyValue::GetInput(_)) => {}
        Some(PropertyValue::Value(v)) => {
            let ok = match v.as_str() {
                Some(s) => !s.is_empty() && (allowed.is_empty() || allowed.contains(&s)),
                None => false,
            };
            if !ok {
                r.error(IssueCode::BadProperty, Some(&n.name), format!("property `{key}` has an invalid value"));
            }
        }
    };
    match n.kind {
        NodeKind::DataRequirement => {
            text("dataset", true, &[]);
            text("access_mode", false, &["posix", "webdav"]);
        }
        NodeKind::Compute | NodeKind::LongRunningService | NodeKind::BatchJob | NodeKind::SoftwareComponent => {
            text("image", false, &[]);
        }
        _ => {}
    }

    if n.kind == NodeKind::Compute {
        for flag in ["gpu", "infiniband"] {
            if let Some(PropertyValue::Value(v)) = n.properties.get(flag) {
                if v.as_bool().is_none() {
                    r.error(IssueCode::BadProperty, Some(&n.name), format!("property `{flag}` must be a boolean"));
                }
            }
        }
    }
}
