//! Canonical JSON: object keys sorted, no insignificant whitespace.

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Serializes through `serde_json::Value`, whose map type keeps keys sorted.
pub fn to_canonical_json<T: Serialize>(value: &T) -> String {
    let value = serde_json::to_value(value).expect("value serializes to JSON");
    serde_json::to_string(&value).expect("JSON value serializes")
}

pub fn from_canonical_json<T: DeserializeOwned>(text: &str) -> serde_json::Result<T> {
    serde_json::from_str(text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn keys_are_sorted_and_compact() {
        #[derive(Serialize)]
        struct S {
            zeta: u8,
            alpha: Vec<u8>,
        }
        assert_eq!(to_canonical_json(&S { zeta: 1, alpha: vec![2] }), r#"{"alpha":[2],"zeta":1}"#);
        assert_eq!(to_canonical_json(&json!({"b": {"d": 1, "c": 2}, "a": null})), r#"{"a":null,"b":{"c":2,"d":1}}"#);
    }
}
