//! Deterministic report emission.
//!
//! JSON reports are written with sorted keys and a fixed float format so
//! that identical runs produce identical bytes. CSV files carry the plot
//! data with a fixed column set per experiment.

use serde_json::{Number, Value};
use splitfield::measure::fmt_g12;
use std::fmt::Write as _;

/// Float to JSON value; non-finite values become strings because JSON has
/// no literal for them.
pub fn fval(x: f64) -> Value {
    if x.is_finite() {
        Value::Number(Number::from_f64(x).expect("finite float"))
    } else if x.is_nan() {
        Value::String("nan".into())
    } else if x > 0.0 {
        Value::String("inf".into())
    } else {
        Value::String("-inf".into())
    }
}

/// Canonical rendering: object keys sorted (the map type is ordered),
/// floats through the shared 12-significant-digit formatter, no layout
/// whitespace, one trailing newline.
pub fn canonical_json(v: &Value) -> String {
    let mut s = String::new();
    write_value(v, &mut s);
    s.push('\n');
    s
}

fn write_value(v: &Value, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                let _ = write!(out, "{u}");
            } else if let Some(i) = n.as_i64() {
                let _ = write!(out, "{i}");
            } else {
                out.push_str(&fmt_g12(n.as_f64().expect("numeric json value")));
            }
        }
        Value::String(s) => {
            out.push_str(&serde_json::to_string(s).expect("string encodes"));
        }
        Value::Array(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(item, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, item)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&serde_json::to_string(k).expect("key encodes"));
                out.push(':');
                write_value(item, out);
            }
            out.push('}');
        }
    }
}

/// Fixed-width CSV builder; every row must match the header length.
pub struct Csv {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&'static str]) -> Self {
        Csv {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(
            row.len(),
            self.header.len(),
            "csv row width must match header"
        );
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        s.push_str(&self.header.join(","));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

pub fn cell_f(x: f64) -> String {
    fmt_g12(x)
}

pub fn cell_u(x: usize) -> String {
    x.to_string()
}

pub fn cell_b(x: bool) -> String {
    (if x { "true" } else { "false" }).to_string()
}

pub fn cell_s(x: &str) -> String {
    x.to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn json_keys_come_out_sorted() {
        let v = json!({"zeta": 1, "alpha": {"b": 2, "a": 3}, "mid": [1, 2]});
        assert_eq!(
            canonical_json(&v),
            "{\"alpha\":{\"a\":3,\"b\":2},\"mid\":[1,2],\"zeta\":1}\n"
        );
    }

    #[test]
    fn floats_render_via_shared_formatter() {
        let v = json!({"x": fval(0.1 + 0.2), "y": fval(f64::INFINITY)});
        assert_eq!(canonical_json(&v), "{\"x\":0.3,\"y\":\"inf\"}\n");
    }

    #[test]
    fn csv_rows_keep_fixed_width() {
        let mut c = Csv::new(&["a", "b"]);
        c.push(vec![cell_f(1.5), cell_b(false)]);
        assert_eq!(c.render(), "a,b\n1.5,false\n");
    }
}
