//! The published verdict schema and a validator for emitted verdicts.

use serde_json::{json, Value};

use super::{EndpointKind, EndpointSpec, FieldType};

/// JSON Schema (draft 2020-12 subset) describing one verdict object.
pub fn verdict_schema() -> Value {
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "verdict",
        "type": "object",
        "additionalProperties": false,
        "required": ["endpoint", "ok", "passed", "evidence", "error", "bindings", "revision"],
        "properties": {
            "criterion_id": {"type": "string"},
            "endpoint": {"type": "string", "pattern": "^(check|get)-[a-z0-9-]+$"},
            "ok": {"type": "boolean"},
            "passed": {"type": ["boolean", "null"]},
            "evidence": {"type": "object"},
            "error": {"type": ["string", "null"]},
            "bindings": {"type": "object", "additionalProperties": {"type": "string"}},
            "revision": {"type": "integer", "minimum": 0}
        }
    })
}

const KEYS: [&str; 8] = [
    "criterion_id",
    "endpoint",
    "ok",
    "passed",
    "evidence",
    "error",
    "bindings",
    "revision",
];

/// Problems with a serialized verdict; empty when it is valid. With a spec,
/// the evidence of successful verdicts is checked against the endpoint's
/// declared evidence fields.
pub fn validate_verdict(v: &Value, spec: Option<&EndpointSpec>) -> Vec<String> {
    let mut problems = Vec::new();
    let Some(obj) = v.as_object() else {
        return vec!["verdict is not an object".into()];
    };
    for k in obj.keys() {
        if !KEYS.contains(&k.as_str()) {
            problems.push(format!("unexpected key `{k}`"));
        }
    }
    for k in &KEYS[1..] {
        if !obj.contains_key(*k) {
            problems.push(format!("missing key `{k}`"));
        }
    }
    if !problems.is_empty() {
        return problems;
    }
    let mut expect = |ok: bool, msg: &str| {
        if !ok {
            problems.push(msg.to_string());
        }
    };
    expect(
        obj.get("criterion_id").is_none_or(Value::is_string),
        "criterion_id must be a string",
    );
    let endpoint = obj["endpoint"].as_str().unwrap_or_default();
    expect(
        endpoint.starts_with("check-") || endpoint.starts_with("get-"),
        "endpoint must be named check-* or get-*",
    );
    expect(obj["ok"].is_boolean(), "ok must be a boolean");
    expect(
        obj["passed"].is_boolean() || obj["passed"].is_null(),
        "passed must be a boolean or null",
    );
    expect(obj["evidence"].is_object(), "evidence must be an object");
    expect(
        obj["error"].is_string() || obj["error"].is_null(),
        "error must be a string or null",
    );
    expect(
        obj["bindings"]
            .as_object()
            .is_some_and(|m| m.values().all(Value::is_string)),
        "bindings must map strings to strings",
    );
    expect(
        obj["revision"].as_u64().is_some(),
        "revision must be a non-negative integer",
    );

    let ok = obj["ok"].as_bool().unwrap_or(false);
    if !ok {
        expect(
            obj["passed"] == json!(false),
            "ok=false requires passed=false",
        );
        expect(
            obj["error"].as_str().is_some_and(|e| !e.is_empty()),
            "ok=false requires a non-empty error",
        );
        expect(
            obj["evidence"]
                .get("failure")
                .and_then(|f| f.get("kind"))
                .is_some_and(Value::is_string),
            "ok=false requires evidence.failure.kind",
        );
    } else if endpoint.starts_with("check-") {
        expect(
            obj["passed"].is_boolean(),
            "check verdicts carry a boolean passed",
        );
    } else if !obj.contains_key("criterion_id") {
        expect(obj["passed"].is_null(), "query verdicts leave passed unset");
    }

    if let (true, Some(spec)) = (ok, spec) {
        if spec.name != endpoint {
            problems.push(format!(
                "verdict endpoint `{endpoint}` does not match spec {}",
                spec.name
            ));
        }
        if spec.kind() == EndpointKind::Check && !obj["passed"].is_boolean() {
            problems.push("check endpoint without a passed flag".into());
        }
        for f in spec.evidence {
            match obj["evidence"].get(f.name) {
                None => problems.push(format!("evidence lacks `{}`", f.name)),
                Some(Value::Null) if f.nullable => {}
                Some(value) => {
                    if !type_matches(f.ty, value) {
                        problems.push(format!("evidence `{}` is not {:?}", f.name, f.ty));
                    }
                }
            }
        }
    }
    problems
}

fn is_scalar(v: &Value) -> bool {
    v.is_boolean() || v.is_number() || v.is_string()
}

fn type_matches(ty: FieldType, v: &Value) -> bool {
    match ty {
        FieldType::Bool => v.is_boolean(),
        FieldType::Integer => v.is_i64() || v.is_u64(),
        FieldType::Number => v.is_number(),
        FieldType::Text => v.is_string(),
        FieldType::Scalar => is_scalar(v),
        FieldType::TextList => v.as_array().is_some_and(|a| a.iter().all(Value::is_string)),
        FieldType::ScalarList => v
            .as_array()
            .is_some_and(|a| a.iter().all(|x| x.is_null() || is_scalar(x))),
        FieldType::Object => v.is_object(),
    }
}
