use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use artieval::attention::{AttentionStack, Heatmap};
use artieval::formats;
use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_artieval"))
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn manifest() -> String {
    fixtures()
        .join("bundled/manifest.json")
        .display()
        .to_string()
}

fn path(rel: &str) -> String {
    fixtures().join(rel).display().to_string()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn assert_matches_oracle(args: &[&str], expected: &str) {
    let out = run(args);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let want = std::fs::read(path(&format!("handcrafted/expected/{expected}"))).unwrap();
    assert!(
        out.stdout == want,
        "report differs from {expected}:\n{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn handcrafted_reports_match_oracle() {
    let m = manifest();
    let p = |f: &str| path(&format!("handcrafted/{f}"));
    assert_matches_oracle(&["eval", "aj", &m, &p("aj.json")], "aj.json");
    assert_matches_oracle(&["eval", "pad", &m, &p("pad.json")], "pad.json");
    assert_matches_oracle(
        &[
            "eval",
            "ca-pad",
            &m,
            &p("ca_pad.json"),
            "--pooling",
            "macro",
        ],
        "ca_pad_macro.json",
    );
    assert_matches_oracle(
        &["eval", "instances", &m, &p("instances.json")],
        "instances.json",
    );
    assert_matches_oracle(
        &[
            "--tau",
            "0.5",
            "eval",
            "instances",
            &m,
            &p("instances.json"),
            "--agnostic",
            "--t",
            "0.25",
        ],
        "instances_agnostic.json",
    );
}

#[test]
fn validate_exit_codes() {
    let ok = run(&["validate", &manifest()]);
    assert_eq!(ok.status.code(), Some(0));
    assert_eq!(json(&ok)["errors"].as_array().unwrap().len(), 0);

    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.display().to_string()
    };
    let two = write(
        "two.json",
        r#"{"schema_version":"1","images":[{"uid":"a","role":"fake","generator":"g","width":8,"height":8,
            "annotations":[{"category":"color","round":1,"polygon":[[0,0],[4,4]]}]}]}"#,
    );
    let out = run(&["validate", &two]);
    assert_eq!(out.status.code(), Some(1));
    let errors = json(&out)["errors"].as_array().unwrap().clone();
    assert_eq!(errors.len(), 1);
    assert_eq!(errors[0]["kind"], "ValidationError");
    assert_eq!(errors[0]["uid"], "a");

    let real = write(
        "real.json",
        r#"{"schema_version":"1","images":[{"uid":"a","role":"real","generator":null,"width":8,"height":8,
            "annotations":[{"category":"color","round":1,"polygon":[[0,0],[4,0],[4,4]]}]}]}"#,
    );
    assert_eq!(run(&["validate", &real]).status.code(), Some(1));

    let garbage = write("garbage.json", "{not json");
    let out = run(&["validate", &garbage]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(json(&out)["errors"][0]["kind"], "SchemaError");
}

#[test]
fn missing_prediction_exits_3_naming_the_image() {
    let dir = tempfile::tempdir().unwrap();
    let full: Value =
        serde_json::from_slice(&std::fs::read(path("bundled/ca_pad_perfect.json")).unwrap())
            .unwrap();
    let mut cut = full.clone();
    cut["predictions"].as_array_mut().unwrap().remove(2);
    let p = dir.path().join("cut.json");
    std::fs::write(&p, serde_json::to_vec(&cut).unwrap()).unwrap();
    let out = run(&["eval", "ca-pad", &manifest(), p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("0000/fake/gen-c"), "{err}");

    let aj: Value =
        serde_json::from_slice(&std::fs::read(path("bundled/aj_perfect.json")).unwrap()).unwrap();
    let mut cut = aj.clone();
    cut["predictions"].as_array_mut().unwrap().remove(0);
    std::fs::write(&p, serde_json::to_vec(&cut).unwrap()).unwrap();
    let out = run(&["eval", "aj", &manifest(), p.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("0000/real"));
}

#[test]
fn malformed_inputs_exit_2_without_panicking() {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, body: &[u8]| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p.display().to_string()
    };
    let m = manifest();
    let cases: Vec<Vec<String>> = vec![
        vec!["eval".into(), "aj".into(), m.clone(), w("a.json", b"[]")],
        vec!["eval".into(), "pad".into(), m.clone(), w("b.json", br#"{"predictions":[{"uid":"0000","generator":"gen-a","masks":{"color":{"size":[48,64],"counts":[1]}}}]}"#)],
        vec!["eval".into(), "pad".into(), m.clone(), w("c.json", br#"{"predictions":[{"uid":"0000","masks":{}}]}"#)],
        vec!["eval".into(), "instances".into(), m.clone(), w("d.json", br#"{"predictions":[{"uid":"0000","generator":"gen-a","instances":[{"category":"color","region":{"type":"point","point":[99,1]}}]}]}"#)],
        vec!["eval".into(), "instances".into(), m.clone(), path("handcrafted/instances.json"), "--t".into(), "0".into()],
        vec!["eval".into(), "aj".into(), m.clone(), path("handcrafted/aj.json"), "--threshold".into(), "2".into()],
        vec!["eval".into(), "ca-pad".into(), m.clone(), w("e.json", br#"{"predictions":[{"uid":"0000","generator":"gen-a","heatmap":"nope.xhm"}]}"#)],
        vec!["align".into(), "loss".into(), w("f.xhm", b"XHM1\x01\x00"), w("g.xhm", b"")],
        vec!["align".into(), "rollout".into(), w("h.xas", b"XAS1"), dir.path().join("o.xhm").display().to_string(), "--grid".into(), "2x2".into()],
        vec!["eval".into(), "pad".into(), m.clone(), path("handcrafted/pad.json"), "--gate-on-aj".into(), w("i.json", br#"{"predictions":[]}"#)],
    ];
    for args in cases {
        let out = bin().args(&args).output().unwrap();
        let code = out.status.code();
        assert!(code == Some(2) || code == Some(3), "{args:?} -> {code:?}");
        let err = String::from_utf8_lossy(&out.stderr);
        assert!(err.starts_with("error["), "{args:?}: {err}");
        assert!(!err.contains("panicked"), "{args:?}: {err}");
    }
}

#[test]
fn gate_on_aj_drops_images_judged_real() {
    let m = manifest();
    let plain = json(&run(&[
        "eval",
        "ca-pad",
        &m,
        &path("bundled/ca_pad_perfect.json"),
    ]));
    let gated = run(&[
        "eval",
        "ca-pad",
        &m,
        &path("bundled/ca_pad_perfect.json"),
        "--gate-on-aj",
        &path("handcrafted/aj.json"),
    ]);
    assert!(
        gated.status.success(),
        "{}",
        String::from_utf8_lossy(&gated.stderr)
    );
    let gated = json(&gated);
    assert_eq!(plain["tables"]["rows"][0]["iou"], 100.0);
    let counts = &gated["tables"]["rows"][0]["counts"];
    assert_eq!(counts["fp"], 0);
    assert!(counts["fn"].as_u64().unwrap() > 0);
    assert_eq!(gated["config"]["gate_on_aj"], true);
}

#[test]
fn out_flag_writes_the_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("r.json");
    let args = ["eval", "pad", &manifest(), &path("handcrafted/pad.json")];
    let stdout = run(&args).stdout;
    let out = bin().args(args).arg("--out").arg(&target).output().unwrap();
    assert!(out.status.success() && out.stdout.is_empty());
    assert_eq!(std::fs::read(&target).unwrap(), stdout);
}

#[test]
fn align_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = |n: &str| dir.path().join(n).display().to_string();
    let h = Heatmap::new(2, 2, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
    let art = Heatmap::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    std::fs::write(d("cls.xhm"), formats::write_heatmap(&h)).unwrap();
    std::fs::write(d("art.xhm"), formats::write_heatmap(&art)).unwrap();

    let same = json(&run(&["align", "loss", &d("cls.xhm"), &d("cls.xhm")]));
    assert_eq!(same["alignment"], 0.0);

    let l = json(&run(&[
        "align",
        "loss",
        &d("cls.xhm"),
        &d("art.xhm"),
        "--lambda",
        "0",
        "--score",
        "0.5",
        "--label",
        "1",
    ]));
    assert_eq!(l["alignment"], 0.0625);
    assert!((l["total"].as_f64().unwrap() - (std::f64::consts::LN_2 + 0.0625)).abs() < 1e-12);

    let g = run(&[
        "align",
        "grad",
        &d("cls.xhm"),
        &d("art.xhm"),
        &d("g.xhm"),
        "--lambda",
        "0",
    ]);
    assert!(g.status.success());
    let grad = formats::read_heatmap(&std::fs::read(d("g.xhm")).unwrap()).unwrap();
    assert_eq!(grad.values(), &[-0.25, 0.0, 0.0, 0.0]);

    let out = run(&["align", "gradcheck", "--pairs", "20"]);
    assert_eq!(out.status.code(), Some(0));
    let v = json(&out);
    assert!(v["max_rel_error"].as_f64().unwrap() < 1e-4);
    assert_eq!(v["pairs"], 20);

    let bad = Heatmap::new(2, 2, vec![1.5, 0.0, 0.0, 0.0]).unwrap();
    std::fs::write(d("bad.xhm"), formats::write_heatmap(&bad)).unwrap();
    assert_eq!(
        run(&["align", "loss", &d("bad.xhm"), &d("art.xhm")])
            .status
            .code(),
        Some(2)
    );

    let n = 5;
    let eye: Vec<f64> = (0..n * n)
        .map(|i| if i / n == i % n { 1.0 } else { 0.0 })
        .collect();
    let stack = AttentionStack::new(n, vec![eye.clone(), eye], None).unwrap();
    std::fs::write(d("s.xas"), formats::write_attention_stack(&stack)).unwrap();
    let r = json(&run(&[
        "align",
        "rollout",
        &d("s.xas"),
        &d("r.xhm"),
        "--grid",
        "2x2",
    ]));
    assert_eq!(r["degenerate"], true);
    let roll = formats::read_heatmap(&std::fs::read(d("r.xhm")).unwrap()).unwrap();
    assert!(roll.values().iter().all(|&v| v == 0.0));

    let a = json(&run(&[
        "align",
        "art-heatmap",
        &manifest(),
        &d("a.xhm"),
        "--uid",
        "0001",
        "--generator",
        "gen-c",
        "--patch",
        "16",
    ]));
    let cells = formats::read_heatmap(&std::fs::read(d("a.xhm")).unwrap()).unwrap();
    assert_eq!((cells.height(), cells.width()), (3, 4));
    let total: f64 = cells.values().iter().map(|v| (v * 256.0).round()).sum();
    assert_eq!(total as u64, a["artifact_pixels"].as_u64().unwrap());
}

#[test]
fn fidelity_commands() {
    let m = manifest();
    let par = json(&run(&["fidelity", "par", &m]));
    assert_eq!(par["rows"].as_array().unwrap().len(), 6);
    let bins = json(&run(&[
        "fidelity",
        "bins",
        &m,
        &path("handcrafted/aj.json"),
        "--edges",
        "0,0.05,1",
    ]));
    let table = &bins["table"]["bins"];
    assert_eq!(table.as_array().unwrap().len(), 3);
    let total: u64 = table
        .as_array()
        .unwrap()
        .iter()
        .map(|b| b["count"].as_u64().unwrap())
        .sum();
    assert_eq!(total, 6);
    let conf = run(&["fidelity", "confidence", &m, "--bin-width", "0.25"]);
    assert!(conf.status.success());
    assert_eq!(
        json(&conf)["histogram"]["counts"].as_array().unwrap().len(),
        4
    );
}

#[test]
fn fixture_command_is_deterministic_and_valid() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        assert!(run(&["fixture", d.to_str().unwrap(), "--seed", "3"])
            .status
            .success());
    }
    let mut names: Vec<_> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    for n in names
        .iter()
        .filter(|n| n.to_str().unwrap().ends_with(".json"))
    {
        assert_eq!(
            std::fs::read(a.join(n)).unwrap(),
            std::fs::read(b.join(n)).unwrap()
        );
    }
    let out = run(&["validate", a.join("manifest.json").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));

    let bundled = dir.path().join("bundled");
    assert!(run(&["fixture", bundled.to_str().unwrap()])
        .status
        .success());
    assert_eq!(
        std::fs::read(bundled.join("manifest.json")).unwrap(),
        std::fs::read(fixtures().join("bundled/manifest.json")).unwrap(),
        "committed fixture is stale; regenerate with `artieval fixture`"
    );
}
