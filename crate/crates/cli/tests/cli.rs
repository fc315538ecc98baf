use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use caap_core::io::image_io::load_image;
use caap_core::io::mapfile::MapFile;
use caap_core::{AttributionMap, AttributionMode, SelectionOp};

struct Dir(PathBuf);

impl Dir {
    fn new(tag: &str) -> Self {
        let p = std::env::temp_dir().join(format!("caap-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&p);
        std::fs::create_dir_all(&p).unwrap();
        Dir(p)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_caap"))
            .current_dir(&self.0)
            .env_remove("CAAP_THREADS")
            .args(args)
            .output()
            .unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        String::from_utf8(out.stdout).unwrap()
    }

    /// Toy model and planted image in the directory.
    fn seeded(tag: &str) -> Self {
        let d = Dir::new(tag);
        d.ok(&["gen-model", "--seed", "7", "--out", "m.vitw"]);
        d.ok(&[
            "gen-planted",
            "--seed",
            "7",
            "--patch",
            "6",
            "--out",
            "x.pgm",
            "--mask-out",
            "mask.pgm",
        ]);
        d
    }
}

impl Drop for Dir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn fails_with(out: &Output, code: i32, name: &str) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let err = String::from_utf8(out.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(
        err.starts_with(&format!("error: code={name} msg=\"")),
        "{err}"
    );
}

#[test]
fn exit_codes_follow_the_table() {
    let d = Dir::seeded("codes");
    fails_with(&d.run(&["attribute", "--no-such-flag"]), 2, "usage");
    fails_with(&d.run(&["frobnicate"]), 2, "usage");
    fails_with(
        &d.run(&[
            "attribute",
            "--model",
            "missing.vitw",
            "--image",
            "x.pgm",
            "--out",
            "o.json",
        ]),
        3,
        "io",
    );
    std::fs::write(d.path("bad.vitw"), b"VITW1\nshort").unwrap();
    fails_with(
        &d.run(&[
            "attribute",
            "--model",
            "bad.vitw",
            "--image",
            "x.pgm",
            "--out",
            "o.json",
        ]),
        4,
        "format",
    );
    fails_with(
        &d.run(&[
            "attribute",
            "--model",
            "m.vitw",
            "--image",
            "x.pgm",
            "--layers",
            "2..7",
            "--out",
            "o.json",
        ]),
        5,
        "config",
    );
    fails_with(
        &d.run(&[
            "attribute",
            "--model",
            "m.vitw",
            "--image",
            "x.pgm",
            "--class",
            "5",
            "--out",
            "o.json",
        ]),
        5,
        "config",
    );
    fails_with(
        &d.run(&["eval", "--map", "nope.json", "--out", "r.json"]),
        3,
        "io",
    );
    std::fs::write(d.path("c.toml"), "unknown_key = 3\n").unwrap();
    fails_with(
        &d.run(&["--config", "c.toml", "gen-model", "--out", "z.vitw"]),
        4,
        "format",
    );
    assert!(!d.path("o.json").exists());
}

#[test]
fn default_class_is_the_top_prediction() {
    let d = Dir::seeded("class");
    d.ok(&[
        "attribute",
        "--model",
        "m.vitw",
        "--image",
        "x.pgm",
        "--out",
        "a.json",
    ]);
    let m = MapFile::read(&d.path("a.json")).unwrap();
    assert_eq!(m.map.class_id, 1);
    assert_eq!(m.config["class"], "1");
    assert_eq!(m.config["layers"], "1..4");
    assert_eq!(m.map.mode, AttributionMode::Parallel);
    assert_eq!(m.map.select, SelectionOp::Box { radius: 1 });
}

#[test]
fn flags_override_config_file() {
    let d = Dir::seeded("precedence");
    std::fs::write(
        d.path("run.toml"),
        "model = \"m.vitw\"\nimage = \"x.pgm\"\nmode = \"naive\"\nselect = \"nopad\"\nlayers = \"1..2\"\n",
    )
    .unwrap();
    d.ok(&["--config", "run.toml", "attribute", "--out", "a.json"]);
    d.ok(&[
        "--config",
        "run.toml",
        "attribute",
        "--layers",
        "2..3",
        "--out",
        "b.json",
    ]);
    let a = MapFile::read(&d.path("a.json")).unwrap();
    let b = MapFile::read(&d.path("b.json")).unwrap();
    assert_eq!(a.map.mode, AttributionMode::Naive);
    assert_eq!(a.config["layers"], "1..2");
    assert_eq!(b.config["layers"], "2..3");
    assert_eq!(b.map.select, SelectionOp::NoPad);
}

#[test]
fn threads_from_environment_do_not_change_output() {
    let d = Dir::seeded("env");
    let args = [
        "attribute",
        "--model",
        "m.vitw",
        "--image",
        "x.pgm",
        "--mode",
        "approx",
    ];
    let out = Command::new(env!("CARGO_BIN_EXE_caap"))
        .current_dir(&d.0)
        .env("CAAP_THREADS", "3")
        .args(args)
        .args(["--out", "env.json"])
        .output()
        .unwrap();
    assert!(out.status.success());
    d.ok(&[&args[..], &["--threads", "1", "--out", "one.json"]].concat());
    assert_eq!(
        std::fs::read(d.path("env.json")).unwrap(),
        std::fs::read(d.path("one.json")).unwrap()
    );
}

#[test]
fn map_equal_to_mask_scores_perfectly() {
    let d = Dir::seeded("perfect");
    let scores: Vec<f64> = (0..16).map(|p| if p == 6 { 1.0 } else { 0.0 }).collect();
    MapFile {
        map: AttributionMap {
            grid: 4,
            scores,
            class_id: 1,
            mode: AttributionMode::Naive,
            blank: None,
            select: SelectionOp::NoPad,
            range: None,
            model_fingerprint: 0,
        },
        config: BTreeMap::new(),
    }
    .write(&d.path("synthetic.json"))
    .unwrap();
    let kv = d.ok(&[
        "eval",
        "--map",
        "synthetic.json",
        "--mask",
        "mask.pgm",
        "--out",
        "r.json",
    ]);
    assert!(
        kv.contains("aupr1=1\n") && kv.contains("pg_hit=1\n"),
        "{kv}"
    );
    assert!(kv.contains("del_auc=na\n"));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path("r.json")).unwrap()).unwrap();
    assert_eq!(report["format"], "caap-report/1");
    assert_eq!(report["metrics"]["aupr1"], 1.0);
    assert_eq!(report["config"]["metrics"], "aupr,pg,entropy,gini");
}

#[test]
fn eval_rejects_a_different_model() {
    let d = Dir::seeded("fingerprint");
    d.ok(&[
        "attribute",
        "--model",
        "m.vitw",
        "--image",
        "x.pgm",
        "--out",
        "a.json",
    ]);
    d.ok(&["gen-model", "--seed", "8", "--out", "other.vitw"]);
    let out = d.run(&[
        "eval",
        "--map",
        "a.json",
        "--model",
        "other.vitw",
        "--image",
        "x.pgm",
        "--out",
        "r.json",
    ]);
    fails_with(&out, 5, "config");
}

#[test]
fn blank_ablation_has_five_rows() {
    let d = Dir::seeded("ablate");
    d.ok(&[
        "ablate", "--axis", "blank", "--model", "m.vitw", "--image", "x.pgm", "--out", "t.csv",
    ]);
    let text = std::fs::read_to_string(d.path("t.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("blank,del_auc,ins_auc,ins_minus_del"));
    let keys: Vec<&str> = rows[1..]
        .iter()
        .map(|r| r.split(',').next().unwrap())
        .collect();
    assert_eq!(keys, ["black", "white", "mean", "noisy", "blurnoisy"]);
    assert!(text.contains("# axis=blank\n"));
}

#[test]
fn outputs_carry_their_settings() {
    let d = Dir::seeded("echo");
    d.ok(&[
        "attribute",
        "--model",
        "m.vitw",
        "--image",
        "x.pgm",
        "--out",
        "a.json",
        "--heatmap",
        "h.pgm",
    ]);
    d.ok(&[
        "attn-stats",
        "--model",
        "m.vitw",
        "--image",
        "x.pgm",
        "--mask",
        "mask.pgm",
        "--out",
        "s.csv",
    ]);
    let heat = std::fs::read_to_string(d.path("h.pgm")).unwrap();
    assert!(heat.starts_with("P2\n# ") && heat.contains("# mode=parallel\n"));
    let img = load_image(Path::new(&d.path("h.pgm"))).unwrap();
    assert_eq!((img.width(), img.height()), (16, 16));
    let stats = std::fs::read_to_string(d.path("s.csv")).unwrap();
    assert!(stats.contains("# model_fingerprint=299cf365e2612e2d\n"));
    assert!(stats.contains("\nlayer,intra,inter,obj_bg,gap\n"));
    assert_eq!(stats.lines().filter(|l| !l.starts_with('#')).count(), 7);
}
