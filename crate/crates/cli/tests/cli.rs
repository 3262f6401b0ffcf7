use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_vitsim"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn vitsim")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn json(args: &[&str]) -> Value {
    serde_json::from_str(&ok(args)).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Tiny {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Tiny {
    fn new(seed: u64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        ok(&["gen", "--preset", "tiny", "--seed", &seed.to_string(), "--out", s(&root.join("gen"))]);
        Tiny { _dir: dir, root }
    }

    fn config(&self) -> PathBuf {
        self.root.join("gen/config.json")
    }

    fn dense(&self) -> PathBuf {
        self.root.join("gen/model.vsbm")
    }

    fn prune(&self, rb: f64) -> PathBuf {
        let out = self.root.join(format!("prune-{rb}"));
        ok(&[
            "prune",
            "--config",
            s(&self.config()),
            "--weights",
            s(&self.dense()),
            "--rb",
            &rb.to_string(),
            "--out",
            s(&out),
        ]);
        out
    }
}

#[test]
fn gen_is_deterministic() {
    let a = Tiny::new(9);
    let b = Tiny::new(9);
    let c = Tiny::new(10);
    let bytes = |t: &Tiny| std::fs::read(t.dense()).unwrap();
    assert_eq!(bytes(&a), bytes(&b));
    assert_ne!(bytes(&a), bytes(&c));
    assert_eq!(std::fs::read(a.config()).unwrap(), std::fs::read(b.config()).unwrap());
}

#[test]
fn prune_at_one_keeps_every_parameter() {
    let t = Tiny::new(1);
    let dir = t.prune(1.0);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("prune_report.json")).unwrap()).unwrap();
    assert_eq!(r["param_count"], r["baseline_param_count"]);
    assert_eq!(r["head_retained_ratio"], 1.0);
    assert_eq!(r["alpha"], 1.0);
    assert!(dir.join("pruned.vsbm").exists() && dir.join("masks.vsbm").exists());
}

#[test]
fn prune_at_half_shrinks_the_model() {
    let t = Tiny::new(1);
    let dir = t.prune(0.5);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(dir.join("prune_report.json")).unwrap()).unwrap();
    assert!(r["param_count"].as_u64().unwrap() < r["baseline_param_count"].as_u64().unwrap());
    assert_eq!(r["alpha_mlp"], 0.5);
}

#[test]
fn dense_and_unit_pruned_weights_infer_the_same() {
    let t = Tiny::new(2);
    let p = t.prune(1.0);
    let dense = json(&["infer", "--config", s(&t.config()), "--weights", s(&t.dense()), "--seed", "4"]);
    let pruned = json(&["infer", "--config", s(&t.config()), "--weights", s(&p.join("pruned.vsbm")), "--seed", "4"]);
    assert_eq!(dense["logits"], pruned["logits"]);
}

#[test]
fn keep_rate_shortens_the_token_trajectory() {
    let t = Tiny::new(2);
    let v = json(&["infer", "--config", s(&t.config()), "--weights", s(&t.dense()), "--rt", "0.5"]);
    let counts: Vec<u64> = v["token_counts"].as_array().unwrap().iter().map(|c| c.as_u64().unwrap()).collect();
    // dropping happens inside the first encoder: 16 body tokens, 8 kept, plus class and fused
    assert_eq!(counts, vec![17, 10, 10]);
    assert_eq!(v["logits"].as_array().unwrap().len(), 10);
}

#[test]
fn simulate_matches_infer() {
    let t = Tiny::new(3);
    let p = t.prune(0.5);
    let w = p.join("pruned.vsbm");
    let infer = json(&["infer", "--config", s(&t.config()), "--weights", s(&w), "--rt", "0.7", "--seed", "8"]);
    let sim = json(&["simulate", "--config", s(&t.config()), "--weights", s(&w), "--rt", "0.7", "--seed", "8"]);
    assert_eq!(infer["logits"], sim["logits"]);
    assert_eq!(infer["token_counts"], sim["token_counts"]);
    let timing = json(&["simulate", "--config", s(&t.config()), "--weights", s(&w), "--rt", "0.7", "--timing-only"]);
    assert_eq!(timing["total_cycles"], sim["total_cycles"]);
    assert!(timing.get("logits").is_none());
}

#[test]
fn image_file_round_trips() {
    let t = Tiny::new(3);
    let cfg = vitsim::read_config(&t.config()).unwrap();
    let img = vitsim_core::vitref::synth::random_image(&cfg, 8);
    let path = t.root.join("img.vsbm");
    vitsim::save_image(&img, &path).unwrap();
    let a = json(&["infer", "--config", s(&t.config()), "--weights", s(&t.dense()), "--image", s(&path)]);
    let b = json(&["infer", "--config", s(&t.config()), "--weights", s(&t.dense()), "--seed", "8"]);
    assert_eq!(a["logits"], b["logits"]);
}

/// Checks `type`, `required`, `properties`, `items`, `$ref`, `minimum`,
/// `maximum` and `exclusiveMinimum`: the keywords the report schema uses.
fn validate(schema: &Value, root: &Value, v: &Value, path: &str) -> Vec<String> {
    let schema = match schema.get("$ref").and_then(Value::as_str) {
        Some(r) => {
            let name = r.strip_prefix("#/$defs/").expect("local ref");
            &root["$defs"][name]
        }
        None => schema,
    };
    let mut errs = Vec::new();
    if let Some(t) = schema.get("type").and_then(Value::as_str) {
        let good = match t {
            "object" => v.is_object(),
            "array" => v.is_array(),
            "integer" => v.is_u64() || v.is_i64(),
            "number" => v.is_number(),
            "string" => v.is_string(),
            "boolean" => v.is_boolean(),
            other => panic!("schema type {other} not handled"),
        };
        if !good {
            errs.push(format!("{path}: expected {t}, got {v}"));
            return errs;
        }
    }
    if let Some(x) = v.as_f64() {
        if let Some(m) = schema.get("minimum").and_then(Value::as_f64) {
            if x < m {
                errs.push(format!("{path}: {x} < {m}"));
            }
        }
        if let Some(m) = schema.get("maximum").and_then(Value::as_f64) {
            if x > m {
                errs.push(format!("{path}: {x} > {m}"));
            }
        }
        if let Some(m) = schema.get("exclusiveMinimum").and_then(Value::as_f64) {
            if x <= m {
                errs.push(format!("{path}: {x} <= {m}"));
            }
        }
    }
    if let Some(req) = schema.get("required").and_then(Value::as_array) {
        for k in req {
            if v.get(k.as_str().unwrap()).is_none() {
                errs.push(format!("{path}: missing {k}"));
            }
        }
    }
    if let (Some(props), Some(obj)) = (schema.get("properties").and_then(Value::as_object), v.as_object()) {
        for (k, sub) in props {
            if let Some(x) = obj.get(k) {
                errs.extend(validate(sub, root, x, &format!("{path}.{k}")));
            }
        }
    }
    if let (Some(items), Some(arr)) = (schema.get("items"), v.as_array()) {
        for (i, x) in arr.iter().enumerate() {
            errs.extend(validate(items, root, x, &format!("{path}[{i}]")));
        }
    }
    errs
}

#[test]
fn report_matches_schema() {
    let schema_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/sim_report.schema.json");
    let schema: Value = serde_json::from_str(&std::fs::read_to_string(schema_path).unwrap()).unwrap();
    let t = Tiny::new(5);
    let p = t.prune(0.7);
    let report = json(&["simulate", "--config", s(&t.config()), "--weights", s(&p.join("pruned.vsbm")), "--rt", "0.5"]);
    let errs = validate(&schema, &schema, &report, "$");
    assert!(errs.is_empty(), "{errs:#?}");
    assert_eq!(report["stage_cycles"].as_object().unwrap().len(), 14);

    let mut broken = report.clone();
    broken.as_object_mut().unwrap().remove("macs");
    broken["utilization"] = Value::from(1.5);
    assert_eq!(validate(&schema, &schema, &broken, "$").len(), 2);
}

#[test]
fn lower_keep_rate_means_fewer_cycles() {
    let t = Tiny::new(6);
    let w = t.prune(0.7).join("pruned.vsbm");
    let cycles = |rt: &str| {
        json(&["simulate", "--config", s(&t.config()), "--weights", s(&w), "--rt", rt, "--timing-only"])["total_cycles"]
            .as_u64()
            .unwrap()
    };
    let (a, b, c) = (cycles("1.0"), cycles("0.7"), cycles("0.4"));
    assert!(a > b && b > c, "{a} {b} {c}");
}

#[test]
fn partial_hardware_config() {
    let t = Tiny::new(6);
    let hw = t.root.join("hw.json");
    std::fs::write(&hw, r#"{"p_h": 1, "clock_hz": 1e9}"#).unwrap();
    let (cfg, dense) = (t.config(), t.dense());
    let args = ["simulate", "--config", s(&cfg), "--weights", s(&dense), "--timing-only"];
    let slow = json(&[&args[..], &["--hw", s(&hw)]].concat());
    let fast = json(&args);
    assert_eq!(slow["clock_hz"], 1e9);
    assert!(slow["total_cycles"].as_u64() > fast["total_cycles"].as_u64());

    std::fs::write(&hw, r#"{"b": 16}"#).unwrap();
    let out = run(&[&args[..], &["--hw", s(&hw)]].concat());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn model_reports() {
    let t = Tiny::new(7);
    let base = json(&["model", "--config", s(&t.config())]);
    let unit = json(&["model", "--config", s(&t.config()), "--alpha", "1"]);
    assert_eq!(base["complexity"]["model_macs"], unit["complexity"]["model_macs"]);
    let half = json(&["model", "--config", s(&t.config()), "--alpha", "0.5", "--alpha-mlp", "0.5"]);
    assert!(half["complexity"]["model_macs"].as_u64() < base["complexity"]["model_macs"].as_u64());
    assert_eq!(base["resources"]["dsp"], 7088.0);

    let w = t.prune(0.5).join("pruned.vsbm");
    let m = json(&["model", "--config", s(&t.config()), "--weights", s(&w)]);
    let sim = json(&["simulate", "--config", s(&t.config()), "--weights", s(&w), "--timing-only"]);
    assert_eq!(m["complexity"]["total"], sim["ops"]);
    assert!(m["predicted_cycles"].as_u64().unwrap() > 0);
}

#[test]
fn sweep_writes_one_row_per_combination() {
    let t = Tiny::new(8);
    let csv = ok(&["sweep", "--config", s(&t.config()), "--rb", "0.5,1", "--rt", "0.5,0.8,1", "--block", "4,8"]);
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("block,r_b,r_t,total_cycles"));
    assert_eq!(lines.count(), 12);
}

#[test]
fn errors_exit_with_code_two() {
    let t = Tiny::new(1);
    let p = t.prune(0.5);
    let cases: Vec<Vec<String>> = vec![
        vec![
            "prune".into(),
            "--config".into(),
            s(&t.config()).into(),
            "--weights".into(),
            s(&p.join("pruned.vsbm")).into(),
            "--rb".into(),
            "0.5".into(),
            "--out".into(),
            s(&t.root.join("x")).into(),
        ],
        vec![
            "prune".into(),
            "--config".into(),
            s(&t.config()).into(),
            "--weights".into(),
            s(&t.dense()).into(),
            "--rb".into(),
            "1.5".into(),
            "--out".into(),
            s(&t.root.join("x")).into(),
        ],
        vec![
            "infer".into(),
            "--config".into(),
            s(&t.root.join("missing.json")).into(),
            "--weights".into(),
            s(&t.dense()).into(),
        ],
        vec!["infer".into(), "--config".into(), s(&t.config()).into(), "--weights".into(), s(&t.config()).into()],
        vec![
            "infer".into(),
            "--config".into(),
            s(&t.config()).into(),
            "--weights".into(),
            s(&t.dense()).into(),
            "--rt".into(),
            "0".into(),
        ],
    ];
    for c in cases {
        let args: Vec<&str> = c.iter().map(String::as_str).collect();
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
}
