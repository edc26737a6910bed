//! JSON Schema validation for the keyword subset the shipped schemas use.
//! Unknown keywords are an error, so the schemas cannot silently outgrow it.

use serde_json::Value;

const ANNOTATIONS: [&str; 5] = ["$schema", "$id", "$defs", "title", "description"];

pub struct Validator {
    root: Value,
}

impl Validator {
    pub fn new(root: Value) -> Self {
        Self { root }
    }

    pub fn load(name: &str) -> Self {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs").join(name);
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        Self::new(serde_json::from_str(&text).expect("schema is JSON"))
    }

    /// All violations, each as `pointer: reason`.
    pub fn errors(&self, instance: &Value) -> Vec<String> {
        let mut out = Vec::new();
        self.check(&self.root, instance, "", &mut out);
        out
    }

    pub fn is_valid(&self, instance: &Value) -> bool {
        self.errors(instance).is_empty()
    }

    fn resolve(&self, reference: &str) -> &Value {
        let pointer = reference
            .strip_prefix('#')
            .unwrap_or_else(|| panic!("only local references are supported: {reference}"));
        self.root
            .pointer(pointer)
            .unwrap_or_else(|| panic!("unresolved reference {reference}"))
    }

    fn check(&self, schema: &Value, v: &Value, at: &str, out: &mut Vec<String>) {
        let Some(map) = schema.as_object() else {
            panic!("schema at {at} is not an object");
        };
        let mut fail = |m: String| out.push(format!("{at}: {m}"));
        let mut nested = Vec::new();
        for (key, arg) in map {
            match key.as_str() {
                k if ANNOTATIONS.contains(&k) => {}
                "$ref" => self.check(self.resolve(arg.as_str().expect("string $ref")), v, at, &mut nested),
                "allOf" => {
                    for s in arg.as_array().expect("allOf array") {
                        self.check(s, v, at, &mut nested);
                    }
                }
                "oneOf" => {
                    let matching = arg
                        .as_array()
                        .expect("oneOf array")
                        .iter()
                        .filter(|s| {
                            let mut e = Vec::new();
                            self.check(s, v, at, &mut e);
                            e.is_empty()
                        })
                        .count();
                    if matching != 1 {
                        fail(format!("{matching} oneOf branches match"));
                    }
                }
                "type" => {
                    let allowed: Vec<&str> = match arg {
                        Value::String(s) => vec![s.as_str()],
                        Value::Array(a) => a.iter().map(|t| t.as_str().expect("type name")).collect(),
                        _ => panic!("bad type keyword"),
                    };
                    if !allowed.iter().any(|t| has_type(v, t)) {
                        fail(format!("expected type {allowed:?}"));
                    }
                }
                "const" => {
                    if !json_equal(v, arg) {
                        fail(format!("expected {arg}"));
                    }
                }
                "enum" => {
                    if !arg.as_array().expect("enum array").iter().any(|c| json_equal(v, c)) {
                        fail(format!("{v} not in {arg}"));
                    }
                }
                "properties" => {
                    if let Some(obj) = v.as_object() {
                        for (name, sub) in arg.as_object().expect("properties object") {
                            if let Some(child) = obj.get(name) {
                                self.check(sub, child, &format!("{at}/{name}"), &mut nested);
                            }
                        }
                    }
                }
                "required" => {
                    if let Some(obj) = v.as_object() {
                        for name in arg.as_array().expect("required array") {
                            let name = name.as_str().expect("property name");
                            if !obj.contains_key(name) {
                                fail(format!("missing {name}"));
                            }
                        }
                    }
                }
                "additionalProperties" => {
                    assert_eq!(arg, &Value::Bool(false), "only additionalProperties: false is supported");
                    if let Some(obj) = v.as_object() {
                        let known = map.get("properties").and_then(Value::as_object);
                        for name in obj.keys() {
                            if !known.is_some_and(|k| k.contains_key(name)) {
                                fail(format!("unexpected property {name}"));
                            }
                        }
                    }
                }
                "items" => {
                    if let Some(items) = v.as_array() {
                        for (i, item) in items.iter().enumerate() {
                            self.check(arg, item, &format!("{at}/{i}"), &mut nested);
                        }
                    }
                }
                "minItems" | "maxItems" => {
                    if let Some(items) = v.as_array() {
                        let n = arg.as_u64().expect("count") as usize;
                        if (key == "minItems" && items.len() < n) || (key == "maxItems" && items.len() > n) {
                            fail(format!("{key} {n} violated by length {}", items.len()));
                        }
                    }
                }
                "minLength" | "maxLength" => {
                    if let Some(s) = v.as_str() {
                        let n = arg.as_u64().expect("count") as usize;
                        let len = s.chars().count();
                        if (key == "minLength" && len < n) || (key == "maxLength" && len > n) {
                            fail(format!("{key} {n} violated by length {len}"));
                        }
                    }
                }
                "minimum" | "maximum" | "exclusiveMinimum" | "exclusiveMaximum" => {
                    if let Some(x) = v.as_f64() {
                        let b = arg.as_f64().expect("numeric bound");
                        let ok = match key.as_str() {
                            "minimum" => x >= b,
                            "maximum" => x <= b,
                            "exclusiveMinimum" => x > b,
                            _ => x < b,
                        };
                        if !ok {
                            fail(format!("{x} violates {key} {b}"));
                        }
                    }
                }
                other => panic!("unsupported schema keyword {other}"),
            }
        }
        out.extend(nested);
    }
}

fn has_type(v: &Value, t: &str) -> bool {
    match t {
        "null" => v.is_null(),
        "boolean" => v.is_boolean(),
        "object" => v.is_object(),
        "array" => v.is_array(),
        "string" => v.is_string(),
        "number" => v.is_number(),
        "integer" => v.is_i64() || v.is_u64() || v.as_f64().is_some_and(|x| x.fract() == 0.0),
        other => panic!("unknown type {other}"),
    }
}

/// Equality with numbers compared by value, so `1` equals `1.0`.
fn json_equal(a: &Value, b: &Value) -> bool {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => x.as_f64() == y.as_f64(),
        (Value::Array(x), Value::Array(y)) => x.len() == y.len() && x.iter().zip(y).all(|(p, q)| json_equal(p, q)),
        (Value::Object(x), Value::Object(y)) => {
            x.len() == y.len() && x.iter().all(|(k, p)| y.get(k).is_some_and(|q| json_equal(p, q)))
        }
        _ => a == b,
    }
}
