use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
log_every = 1
checkpoint_every = 100

[depth]
feature_channels = 2
residual_blocks = 1
filter_channels = 2
disparities = 16
d_max = 15.0

[inpaint]
base_channels = 4
tail_channels = 4

[data]
scenes = 2
held_out = 1

[data.scene]
height = 32
width = 32
"#;

fn viewsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_viewsynth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    tiny: PathBuf,
    data: PathBuf,
}

/// Tiny dataset in KITTI layout, generated through the CLI.
fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let tiny = root.join("tiny.toml");
    fs::write(&tiny, TINY).unwrap();
    let ds = root.join("kitti");
    let o = viewsynth(&["gen-data", "-c", s(&tiny), "--out", s(&ds)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    Fixture {
        data: ds.join("data.toml"),
        _dir: dir,
        root,
        tiny,
    }
}

fn train(f: &Fixture) -> (PathBuf, PathBuf) {
    let d = f.root.join("depth");
    let o = viewsynth(&[
        "train-depth",
        "-c",
        s(&f.tiny),
        "-c",
        s(&f.data),
        "--iterations",
        "2",
        "--out",
        s(&d),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).contains("depth iter 2/2"));
    let depth = d.join("depth.ck");
    let i = f.root.join("inpaint");
    let o = viewsynth(&[
        "train-inpaint",
        "-c",
        s(&f.tiny),
        "-c",
        s(&f.data),
        "--depth",
        s(&depth),
        "--iterations",
        "2",
        "--out",
        s(&i),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (depth, i.join("inpaint.ck"))
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(code(&viewsynth(&[])), 1);
    assert_eq!(code(&viewsynth(&["render", "--bogus"])), 1);
    assert_eq!(
        code(&viewsynth(&[
            "evaluate",
            "--inpaint",
            "nospacing",
            "--out",
            "x"
        ])),
        1
    );
    let help = viewsynth(&["--help"]);
    assert_eq!(code(&help), 0);
    let text = String::from_utf8_lossy(&help.stdout);
    for sub in [
        "gen-data",
        "train-depth",
        "train-inpaint",
        "render",
        "evaluate",
        "gradcheck",
        "baseline-median",
    ] {
        assert!(text.contains(sub), "help lacks {sub}");
    }
}

#[test]
fn gen_data_writes_kitti_layout_and_data_config() {
    let f = fixture();
    let ds = f.root.join("kitti");
    for id in ["00", "01", "02"] {
        assert!(ds
            .join("sequences")
            .join(id)
            .join("image_2/000004.png")
            .exists());
        assert!(ds.join("poses").join(format!("{id}.txt")).exists());
    }
    let data = fs::read_to_string(&f.data).unwrap();
    assert!(data.contains("source = \"kitti\""), "{data}");
    assert!(data.contains("test_sequences = [2]"), "{data}");
    assert!(data.contains("crop = [32, 32]"), "{data}");
}

#[test]
fn train_render_evaluate_end_to_end() {
    let f = fixture();
    let (depth, inpaint) = train(&f);
    assert!(f.root.join("depth/depth_train.log").exists());
    assert!(f.root.join("inpaint/config.toml").exists());

    let out = f.root.join("render");
    let o = viewsynth(&[
        "render",
        "-c",
        s(&f.tiny),
        "-c",
        s(&f.data),
        "--depth",
        s(&depth),
        "--inpaint",
        s(&inpaint),
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for k in 0..4 {
        assert!(out.join(format!("warped_{k}.png")).exists());
        assert!(out.join(format!("mask_{k}.png")).exists());
    }
    for name in ["render.png", "median.png", "target.png"] {
        assert!(out.join(name).exists(), "{name}");
    }
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    for key in [
        "frame=2",
        "depth_s=",
        "warp_s=",
        "inpaint_s=",
        "mae=",
        "median_mae=",
    ] {
        assert!(report.contains(key), "{report}");
    }

    let eval = |dir: &Path| {
        let o = viewsynth(&[
            "evaluate",
            "-c",
            s(&f.tiny),
            "-c",
            s(&f.data),
            "--depth",
            s(&depth),
            "--inpaint",
            &format!("1={}", s(&inpaint)),
            "--spacings",
            "1",
            "--median",
            "--out",
            s(dir),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    };
    let (a, b) = (f.root.join("eval_a"), f.root.join("eval_b"));
    eval(&a);
    eval(&b);
    let table = fs::read_to_string(a.join("table.txt")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert!(lines[0].starts_with("Spacing\tMethod\tTest "), "{table}");
    assert!(lines[1].contains("\tOurs\t"), "{table}");
    assert!(lines[2].contains("\tMedian\t"), "{table}");
    for file in ["table.txt", "table.csv", "frames.csv"] {
        assert_eq!(
            fs::read(a.join(file)).unwrap(),
            fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn identity_window_reproduces_target_through_median() {
    let f = fixture();
    let (_, inpaint) = train_gt(&f);
    let out = f.root.join("identity");
    let o = viewsynth(&[
        "render",
        "-c",
        s(&f.tiny),
        "--gt-depth",
        "--inpaint",
        s(&inpaint),
        "--spacing",
        "0",
        "--frame",
        "3",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = fs::read_to_string(out.join("report.txt")).unwrap();
    assert!(report.contains("median_mae=0.0000"), "{report}");
    assert!(report.contains("holes=0.0000"), "{report}");
}

fn train_gt(f: &Fixture) -> (PathBuf, PathBuf) {
    let i = f.root.join("inpaint_gt");
    let o = viewsynth(&[
        "train-inpaint",
        "-c",
        s(&f.tiny),
        "--gt-depth",
        "--iterations",
        "1",
        "--out",
        s(&i),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (PathBuf::new(), i.join("inpaint.ck"))
}

#[test]
fn missing_artifacts_shape_mismatch_and_empty_evaluation() {
    let f = fixture();
    let (_, inpaint) = train_gt(&f);
    let missing = f.root.join("nope.ck");
    let o = viewsynth(&[
        "render",
        "-c",
        s(&f.tiny),
        "--gt-depth",
        "--inpaint",
        s(&missing),
        "--out",
        s(&f.root),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(stderr(&o).contains("nope.ck"));

    let wide = f.root.join("wide.toml");
    fs::write(&wide, "[inpaint]\nbase_channels = 6\n").unwrap();
    let o = viewsynth(&[
        "render",
        "-c",
        s(&f.tiny),
        "-c",
        s(&wide),
        "--gt-depth",
        "--inpaint",
        s(&inpaint),
        "--out",
        s(&f.root),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("shape"), "{}", stderr(&o));

    let bad = f.root.join("bad.toml");
    fs::write(&bad, "[depth]\ndisparities = 20\n").unwrap();
    let o = viewsynth(&[
        "train-depth",
        "-c",
        s(&f.tiny),
        "-c",
        s(&bad),
        "--out",
        s(&f.root),
    ]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));

    let o = viewsynth(&[
        "evaluate",
        "-c",
        s(&f.tiny),
        "--gt-depth",
        "--inpaint",
        &format!("1={}", s(&inpaint)),
        "--spacings",
        "3",
        "--out",
        s(&f.root.join("empty")),
    ]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn baseline_median_writes_one_line_per_spacing() {
    let f = fixture();
    let out = f.root.join("median");
    let o = viewsynth(&[
        "baseline-median",
        "-c",
        s(&f.tiny),
        "--gt-depth",
        "--spacings",
        "1",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("median.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("1,"));
}

#[test]
fn gradcheck_reports_pass_and_named_failure() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("g.txt");
    let o = viewsynth(&["gradcheck", "--filter", "elementwise", "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = fs::read_to_string(&out).unwrap();
    assert!(
        text.starts_with("gradcheck op=elementwise status=pass"),
        "{text}"
    );

    let o = viewsynth(&[
        "gradcheck",
        "--filter",
        "elementwise",
        "--with-fixture",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 5);
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("op=corrupted_square status=FAIL"), "{text}");
    assert!(stderr(&o).contains("corrupted_square"));

    let o = viewsynth(&["gradcheck", "--filter", "no-such-op", "--out", s(&out)]);
    assert_eq!(code(&o), 4);
}
