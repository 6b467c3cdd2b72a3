//! CSV helpers.

use anyhow::Result;
use serde_json::Value;

/// Flattens nested objects into dotted keys; arrays become compact JSON.
pub fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, child, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

/// Renders a header and rows into CSV bytes.
pub fn render(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    Ok(w.into_inner()?)
}

pub fn strings<const N: usize>(v: [&str; N]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

pub fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flattens_nested_objects() {
        let v: Value = serde_json::json!({"a": {"b": 1, "c": [1, 2]}, "d": null, "e": "x"});
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        assert_eq!(
            out,
            vec![
                ("a.b".into(), "1".into()),
                ("a.c".into(), "[1,2]".into()),
                ("d".into(), "".into()),
                ("e".into(), "x".into()),
            ]
        );
    }
}
