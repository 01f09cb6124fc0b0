use serde::ser::SerializeMap;
use serde::{Serialize, Serializer};
use serde_json::{json, Map, Value};

use super::ToolError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Nonempty string.
    Text,
    /// Integer in `[min, max]`.
    Integer { min: i64, max: i64 },
    /// Exactly `len` nonnegative integers.
    IntArray { len: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub description: &'static str,
    pub kind: ParamKind,
    pub required: bool,
}

/// Flat object schema for tool arguments. Serializes as JSON Schema.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSchema {
    pub params: Vec<ParamSpec>,
}

impl ParamSchema {
    pub fn new(params: Vec<ParamSpec>) -> Self {
        Self { params }
    }

    pub fn validate(&self, args: &Map<String, Value>) -> Result<(), ToolError> {
        let violation = |m: String| Err(ToolError::SchemaViolation(m));
        for key in args.keys() {
            if !self.params.iter().any(|p| p.name == key) {
                return violation(format!("unexpected argument `{key}`"));
            }
        }
        for p in &self.params {
            let Some(v) = args.get(p.name) else {
                if p.required {
                    return violation(format!("missing required argument `{}`", p.name));
                }
                continue;
            };
            match p.kind {
                ParamKind::Text => match v.as_str() {
                    Some(s) if !s.trim().is_empty() => {}
                    _ => return violation(format!("`{}` must be a nonempty string", p.name)),
                },
                ParamKind::Integer { min, max } => match v.as_i64() {
                    Some(n) if (min..=max).contains(&n) => {}
                    _ => return violation(format!("`{}` must be an integer in [{min}, {max}]", p.name)),
                },
                ParamKind::IntArray { len } => {
                    let ok = v
                        .as_array()
                        .is_some_and(|a| a.len() == len && a.iter().all(|x| x.as_u64().is_some_and(|n| n <= u32::MAX as u64)));
                    if !ok {
                        return violation(format!(
                            "`{}` must be an array of {len} nonnegative integers",
                            p.name
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn to_json_schema(&self) -> Value {
        let mut props = Map::new();
        for p in &self.params {
            let mut s = match p.kind {
                ParamKind::Text => json!({"type": "string", "minLength": 1}),
                ParamKind::Integer { min, max } => json!({"type": "integer", "minimum": min, "maximum": max}),
                ParamKind::IntArray { len } => json!({
                    "type": "array",
                    "items": {"type": "integer", "minimum": 0},
                    "minItems": len,
                    "maxItems": len,
                }),
            };
            s["description"] = Value::from(p.description);
            props.insert(p.name.to_string(), s);
        }
        let required: Vec<&str> = self.params.iter().filter(|p| p.required).map(|p| p.name).collect();
        json!({
            "type": "object",
            "properties": props,
            "required": required,
            "additionalProperties": false,
        })
    }
}

impl Serialize for ParamSchema {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let Value::Object(m) = self.to_json_schema() else { unreachable!() };
        let mut map = serializer.serialize_map(Some(m.len()))?;
        for (k, v) in &m {
            map.serialize_entry(k, v)?;
        }
        map.end()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> ParamSchema {
        ParamSchema::new(vec![
            ParamSpec { name: "query", description: "q", kind: ParamKind::Text, required: true },
            ParamSpec { name: "top_k", description: "k", kind: ParamKind::Integer { min: 1, max: 20 }, required: false },
            ParamSpec { name: "bbox", description: "b", kind: ParamKind::IntArray { len: 4 }, required: false },
        ])
    }

    fn args(v: Value) -> Map<String, Value> {
        v.as_object().unwrap().clone()
    }

    #[test]
    fn accepts_valid() {
        assert!(schema().validate(&args(json!({"query": "x"}))).is_ok());
        assert!(schema().validate(&args(json!({"query": "x", "top_k": 3, "bbox": [0, 1, 2, 3]}))).is_ok());
    }

    #[test]
    fn rejects_invalid() {
        let s = schema();
        for bad in [
            json!({}),
            json!({"query": ""}),
            json!({"query": 3}),
            json!({"query": "x", "extra": 1}),
            json!({"query": "x", "top_k": 0}),
            json!({"query": "x", "top_k": 1.5}),
            json!({"query": "x", "bbox": [1, 2, 3]}),
            json!({"query": "x", "bbox": [1, 2, 3, -4]}),
            json!({"query": "x", "bbox": [1, 2, 3, "4"]}),
        ] {
            assert!(matches!(s.validate(&args(bad.clone())), Err(ToolError::SchemaViolation(_))), "{bad}");
        }
    }

    #[test]
    fn serializes_as_json_schema() {
        let v = serde_json::to_value(schema()).unwrap();
        assert_eq!(v["type"], "object");
        assert_eq!(v["required"], json!(["query"]));
        assert_eq!(v["properties"]["bbox"]["minItems"], 4);
    }
}
