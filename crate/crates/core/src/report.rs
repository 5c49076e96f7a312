//! Versioned JSON envelopes for every report.

use serde::Serialize;
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema_version: u32,
    kind: &'a str,
    tolerances: &'a Value,
    result: &'a T,
}

/// Pretty JSON with a trailing newline. Output depends only on the inputs,
/// so equal configs and seeds give byte-identical files.
pub fn render<T: Serialize>(kind: &str, tolerances: &Value, result: &T) -> String {
    let env = Envelope {
        schema_version: SCHEMA_VERSION,
        kind,
        tolerances,
        result,
    };
    let mut s = serde_json::to_string_pretty(&env).expect("report serializes");
    s.push('\n');
    s
}
