//! End-to-end checks of the lchs binary: exit codes, output files, manifest
//! digests, and the convergence sweep's fitted slope.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lchs"))
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("failed to launch the lchs binary")
}

fn assert_status(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json_file(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn write_problem(dir: &Path, name: &str, body: &serde_json::Value) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string_pretty(body).unwrap()).unwrap();
    path
}

/// 2x2 constant A = L + iH with L = I + 0.5 X, H = Z.
fn mixing_problem() -> serde_json::Value {
    serde_json::json!({
        "dim": 2,
        "T": 1.0,
        "terms": [{
            "matrix": [[1.0, 1.0], [0.5, 0.0], [0.5, 0.0], [1.0, -1.0]],
            "time_profile": "const"
        }],
        "u0": [[1.0, 0.0], [0.0, 0.0]],
        "shift": "auto"
    })
}

#[test]
fn scalar_verify_passes_and_reports_the_error() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("verify.json");
    let out = run(bin()
        .args(["verify", "--scalar", "--K", "100", "--M", "20000"])
        .arg("--out")
        .arg(&out_path));
    assert_status(&out, 0);
    let doc = json_file(&out_path);
    assert_eq!(doc["mode"], "scalar");
    let error = doc["error"].as_f64().unwrap();
    assert!(error <= 1e-2, "scalar anchor error {error:e}");
    assert!(out_path.with_file_name("verify.json.manifest.json").exists());
}

#[test]
fn solve_reports_success_stats_and_oracle_distance() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "problem.json", &mixing_problem());
    let out_path = dir.path().join("result.json");
    let out = run(bin()
        .arg("solve")
        .arg("--problem")
        .arg(&problem)
        .args(["--eps", "1e-2", "--check-oracle"])
        .arg("--out")
        .arg(&out_path));
    assert_status(&out, 0);
    let doc = json_file(&out_path);
    let p_succ = doc["p_succ"].as_f64().unwrap();
    assert!(p_succ > 0.0 && p_succ <= 1.0 + 1e-12, "p_succ {p_succ}");
    let err = doc["error_vs_oracle"].as_f64().unwrap();
    assert!(err <= 5e-2, "oracle distance {err:e}");
    assert_eq!(doc["u_tilde"].as_array().unwrap().len(), 2);
}

#[test]
fn solve_on_a_fully_decayed_problem_exits_with_the_budget_code() {
    let dir = tempfile::tempdir().unwrap();
    let deep = serde_json::json!({
        "dim": 2,
        "T": 1.0,
        "terms": [{
            "matrix": [[1600.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1600.0, 0.0]],
            "time_profile": "const"
        }],
        "u0": [[1.0, 0.0], [0.0, 0.0]],
        "shift": "auto"
    });
    let problem = write_problem(dir.path(), "deep.json", &deep);
    let out = run(bin()
        .arg("solve")
        .arg("--problem")
        .arg(&problem)
        .arg("--out")
        .arg(dir.path().join("result.json")));
    assert_status(&out, 3);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("decayed"), "stderr: {stderr}");
}

#[test]
fn trotter_sweep_fits_the_second_order_slope() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("sweep.csv");
    let out = run(bin()
        .args(["convergence", "--sweep", "trotter_r=8..256", "--order", "2"])
        .arg("--out")
        .arg(&csv_path));
    assert_status(&out, 0);
    let doc = json_file(&dir.path().join("sweep.slope.json"));
    let slope = doc["slope"].as_f64().unwrap();
    assert!(
        (-2.25..=-1.75).contains(&slope),
        "fitted slope {slope} outside the second-order window"
    );
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.lines().count() >= 6, "csv:\n{csv}");
    assert!(csv.lines().next().unwrap().contains("trotter_r"));
}

#[test]
fn repeated_runs_produce_identical_digests() {
    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "problem.json", &mixing_problem());
    let observable = write_problem(
        dir.path(),
        "observable.json",
        &serde_json::json!({
            "dim": 2,
            "matrix": [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0]]
        }),
    );
    let mut digests = Vec::new();
    for round in 0..2 {
        let out_path = dir.path().join(format!("estimate-{round}.json"));
        let out = run(bin()
            .arg("estimate")
            .arg("--problem")
            .arg(&problem)
            .arg("--observable")
            .arg(&observable)
            .args(["--eps", "0.4", "--delta", "0.3", "--seed", "7"])
            .arg("--out")
            .arg(&out_path));
        assert_status(&out, 0);
        let manifest = json_file(&PathBuf::from(format!(
            "{}.manifest.json",
            out_path.display()
        )));
        let name = format!("estimate-{round}.json");
        digests.push(manifest["outputs"][&name].as_str().unwrap().to_string());
    }
    assert_eq!(digests[0], digests[1], "same seed, different output bytes");
}

#[test]
fn cap_demo_writes_norm_series_and_densities() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("demo.csv");
    let out = run(bin()
        .args(["cap", "--n", "16", "--length", "10"])
        .args(["--packet=-2,1,1", "--absorber", "2,3,2"])
        .args(["--T", "1.0", "--eps", "0.1", "--snapshots", "2"])
        .arg("--out")
        .arg(&csv_path));
    assert_status(&out, 0);
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(csv.lines().count(), 4, "header + 3 snapshots:\n{csv}");
    let dump = json_file(&dir.path().join("demo.densities.json"));
    assert_eq!(dump["densities"].as_array().unwrap().len(), 3);
    assert_eq!(dump["grid"].as_array().unwrap().len(), 16);
}

fn schema(name: &str) -> serde_json::Value {
    let path = format!(
        "{}/../../schemas/{name}",
        env!("CARGO_MANIFEST_DIR")
    );
    serde_json::from_str(&std::fs::read_to_string(&path).unwrap_or_else(|e| {
        panic!("cannot read {path}: {e}");
    }))
    .unwrap()
}

/// Structural validator for the subset of JSON Schema the shipped documents
/// use: local $defs refs, oneOf, const/enum, type unions, object properties
/// with required and additionalProperties (false or a schema), array items,
/// numeric lower bounds, and item-count bounds. String patterns are not
/// checked.
fn conforms(value: &serde_json::Value, node: &serde_json::Value, root: &serde_json::Value) -> Result<(), String> {
    use serde_json::Value;
    if let Some(reference) = node.get("$ref").and_then(Value::as_str) {
        let path = reference
            .strip_prefix("#/")
            .ok_or_else(|| format!("non-local $ref {reference}"))?;
        let mut target = root;
        for part in path.split('/') {
            target = target
                .get(part)
                .ok_or_else(|| format!("dangling $ref {reference}"))?;
        }
        return conforms(value, target, root);
    }
    if let Some(branches) = node.get("oneOf").and_then(Value::as_array) {
        let hits = branches
            .iter()
            .filter(|branch| conforms(value, branch, root).is_ok())
            .count();
        if hits != 1 {
            return Err(format!("oneOf matched {hits} branches for {value}"));
        }
        return Ok(());
    }
    if let Some(expected) = node.get("const") {
        if value != expected {
            return Err(format!("expected const {expected}, got {value}"));
        }
    }
    if let Some(options) = node.get("enum").and_then(Value::as_array) {
        if !options.contains(value) {
            return Err(format!("{value} not in enum {options:?}"));
        }
    }
    if let Some(ty) = node.get("type") {
        let names: Vec<&str> = match ty {
            Value::String(s) => vec![s.as_str()],
            Value::Array(list) => list.iter().filter_map(Value::as_str).collect(),
            other => return Err(format!("bad type clause {other}")),
        };
        let matches = |name: &str| match name {
            "object" => value.is_object(),
            "array" => value.is_array(),
            "string" => value.is_string(),
            "number" => value.is_number(),
            "integer" => {
                value.is_i64()
                    || value.is_u64()
                    || value.as_f64().is_some_and(|x| x.fract() == 0.0)
            }
            "boolean" => value.is_boolean(),
            "null" => value.is_null(),
            _ => false,
        };
        if !names.iter().any(|name| matches(name)) {
            return Err(format!("{value} does not have type {names:?}"));
        }
    }
    if let Some(x) = value.as_f64() {
        if let Some(min) = node.get("minimum").and_then(Value::as_f64) {
            if x < min {
                return Err(format!("{x} below minimum {min}"));
            }
        }
        if let Some(min) = node.get("exclusiveMinimum").and_then(Value::as_f64) {
            if x <= min {
                return Err(format!("{x} not above {min}"));
            }
        }
    }
    if let Some(items) = value.as_array() {
        if let Some(min) = node.get("minItems").and_then(Value::as_u64) {
            if (items.len() as u64) < min {
                return Err(format!("{} items, need {min}", items.len()));
            }
        }
        if let Some(max) = node.get("maxItems").and_then(Value::as_u64) {
            if (items.len() as u64) > max {
                return Err(format!("{} items, cap {max}", items.len()));
            }
        }
        if let Some(item_schema) = node.get("items") {
            for (i, item) in items.iter().enumerate() {
                conforms(item, item_schema, root).map_err(|e| format!("[{i}]: {e}"))?;
            }
        }
    }
    if let Some(map) = value.as_object() {
        if let Some(min) = node.get("minProperties").and_then(Value::as_u64) {
            if (map.len() as u64) < min {
                return Err(format!("{} properties, need {min}", map.len()));
            }
        }
        let properties = node.get("properties").and_then(Value::as_object);
        if let Some(required) = node.get("required").and_then(Value::as_array) {
            for key in required.iter().filter_map(Value::as_str) {
                if !map.contains_key(key) {
                    return Err(format!("missing required key {key:?}"));
                }
            }
        }
        for (key, entry) in map {
            match properties.and_then(|p| p.get(key)) {
                Some(sub) => {
                    conforms(entry, sub, root).map_err(|e| format!("{key}: {e}"))?
                }
                None => match node.get("additionalProperties") {
                    Some(Value::Bool(false)) => {
                        return Err(format!("unexpected key {key:?}"));
                    }
                    Some(Value::Bool(true)) | None => {}
                    Some(sub) => {
                        conforms(entry, sub, root).map_err(|e| format!("{key}: {e}"))?
                    }
                },
            }
        }
    }
    Ok(())
}

fn assert_conforms(value: &serde_json::Value, schema_name: &str) {
    let doc = schema(schema_name);
    if let Err(why) = conforms(value, &doc, &doc) {
        panic!("{schema_name}: {why}");
    }
}

#[test]
fn outputs_match_the_shipped_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let problem_doc = mixing_problem();
    assert_conforms(&problem_doc, "problem.schema.json");
    let problem = write_problem(dir.path(), "problem.json", &problem_doc);

    let observable_doc = serde_json::json!({
        "dim": 2,
        "matrix": [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0]]
    });
    assert_conforms(&observable_doc, "observable.schema.json");
    let observable = write_problem(dir.path(), "observable.json", &observable_doc);

    let solve_out = dir.path().join("result.json");
    assert_status(
        &run(bin()
            .arg("solve")
            .arg("--problem")
            .arg(&problem)
            .args(["--eps", "1e-2", "--check-oracle"])
            .arg("--out")
            .arg(&solve_out)),
        0,
    );
    assert_conforms(&json_file(&solve_out), "solve-output.schema.json");
    assert_conforms(
        &json_file(&dir.path().join("result.json.manifest.json")),
        "manifest.schema.json",
    );

    let estimate_out = dir.path().join("estimate.json");
    assert_status(
        &run(bin()
            .arg("estimate")
            .arg("--problem")
            .arg(&problem)
            .arg("--observable")
            .arg(&observable)
            .args(["--eps", "0.4", "--delta", "0.3", "--seed", "7"])
            .arg("--out")
            .arg(&estimate_out)),
        0,
    );
    assert_conforms(&json_file(&estimate_out), "estimate-output.schema.json");
    assert_conforms(
        &json_file(&dir.path().join("estimate.json.manifest.json")),
        "manifest.schema.json",
    );

    let verify_out = dir.path().join("verify.json");
    assert_status(
        &run(bin()
            .args(["verify", "--scalar", "--K", "50", "--M", "2000"])
            .arg("--out")
            .arg(&verify_out)),
        0,
    );
    assert_conforms(&json_file(&verify_out), "verify-output.schema.json");

    let plan_out = dir.path().join("plan.json");
    assert_status(
        &run(bin()
            .arg("plan")
            .arg("--problem")
            .arg(&problem)
            .args(["--eps", "1e-3", "--order", "2", "--mode", "td"])
            .arg("--out")
            .arg(&plan_out)),
        0,
    );
    assert_conforms(&json_file(&plan_out), "plan-output.schema.json");

    let sweep_out = dir.path().join("sweep.csv");
    assert_status(
        &run(bin()
            .args(["convergence", "--sweep", "trotter_r=8..64", "--order", "2"])
            .arg("--out")
            .arg(&sweep_out)),
        0,
    );
    assert_conforms(
        &json_file(&dir.path().join("sweep.slope.json")),
        "convergence-output.schema.json",
    );

    let cap_out = dir.path().join("demo.csv");
    assert_status(
        &run(bin()
            .args(["cap", "--n", "16", "--length", "10"])
            .args(["--packet=-2,1,1", "--absorber", "2,3,2"])
            .args(["--T", "1.0", "--eps", "0.1", "--snapshots", "2"])
            .arg("--out")
            .arg(&cap_out)),
        0,
    );
    assert_conforms(
        &json_file(&dir.path().join("demo.densities.json")),
        "cap-densities.schema.json",
    );
}

#[test]
fn bad_flags_and_bad_modes_exit_with_usage_errors() {
    let out = run(bin().args(["solve", "--no-such-flag"]));
    assert_status(&out, 2);

    let out = run(bin().args(["verify"]));
    assert_status(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pick exactly one"));

    let dir = tempfile::tempdir().unwrap();
    let problem = write_problem(dir.path(), "problem.json", &mixing_problem());
    let out = run(bin()
        .arg("solve")
        .arg("--problem")
        .arg(&problem)
        .args(["--backend", "magic"]));
    assert_status(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("not recognized"));
}
