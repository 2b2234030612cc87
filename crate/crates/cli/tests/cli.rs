use std::path::Path;
use std::process::{Command, Output};

fn cxrank(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cxrank"))
        .args(args)
        .output()
        .expect("spawn cxrank")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = cxrank(args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    stdout(&o)
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Compare `--help` output against `tests/golden/<name>.txt`; set
/// `UPDATE_GOLDEN=1` to rewrite the files.
#[test]
fn help_matches_golden() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden");
    for sub in ["", "generate", "build", "train", "eval", "ablate", "report"] {
        let args: Vec<&str> = if sub.is_empty() {
            vec!["--help"]
        } else {
            vec![sub, "--help"]
        };
        let text = ok(&args);
        let file = dir.join(format!(
            "{}.txt",
            if sub.is_empty() { "cxrank" } else { sub }
        ));
        if std::env::var_os("UPDATE_GOLDEN").is_some() {
            std::fs::write(&file, &text).unwrap();
        }
        let want =
            std::fs::read_to_string(&file).unwrap_or_else(|_| panic!("missing {}", file.display()));
        assert_eq!(text, want, "help for `{sub}` drifted");
    }
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        ok(&[
            "generate",
            "--out",
            p(d.path()),
            "--n",
            "120",
            "--seed",
            "2",
        ]);
    }
    for f in [
        "raw.jsonl",
        "knn.jsonl",
        "features.cxfs",
        "truth.txt",
        "config.json",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs");
    }
}

#[test]
fn infeasible_rank_skew_is_an_error() {
    let d = tempfile::tempdir().unwrap();
    let o = cxrank(&[
        "generate",
        "--out",
        p(d.path()),
        "--n",
        "50",
        "--rank-skew",
        "0.1",
    ]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.starts_with("error:") && err.contains("rank_skew"),
        "{err}"
    );
}

#[test]
fn build_reports_consistent_counts() {
    let d = tempfile::tempdir().unwrap();
    ok(&[
        "generate",
        "--out",
        p(d.path()),
        "--n",
        "400",
        "--seed",
        "1",
    ]);
    let out = ok(&["build", "--out", p(d.path())]);
    let nums: Vec<usize> = out
        .split_whitespace()
        .filter_map(|t| t.parse().ok())
        .collect();
    assert_eq!(nums.len(), 4, "{out}");
    assert_eq!(nums[0], nums[1] + nums[2] + nums[3], "{out}");
    assert!(nums[2] > 0);
    assert!(d.path().join("manifest.jsonl").exists());
}

#[test]
fn train_then_eval_checkpoint_and_report() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    ok(&["generate", "--out", p(root), "--n", "500", "--seed", "3"]);
    ok(&["build", "--out", p(root)]);
    let config = root.join("run.json");
    std::fs::write(
        &config,
        r#"{"neuralcx": {"hidden_units": 8, "max_epochs": 2}}"#,
    )
    .unwrap();
    let data = |out: &str| {
        vec![
            "--manifest".to_string(),
            root.join("manifest.jsonl").display().to_string(),
            "--features".into(),
            root.join("features.cxfs").display().to_string(),
            "--config".into(),
            config.display().to_string(),
            "--out".into(),
            root.join(out).display().to_string(),
        ]
    };
    let run = |head: &[&str], out: &str, tail: &[&str]| {
        let mut args: Vec<String> = head.iter().map(|s| s.to_string()).collect();
        args.extend(data(out));
        args.extend(tail.iter().map(|s| s.to_string()));
        ok(&args.iter().map(String::as_str).collect::<Vec<_>>())
    };

    let trained = run(&["train"], "train", &["--oracle", "untrained"]);
    assert!(trained.starts_with("best epoch"), "{trained}");
    for f in ["checkpoint.cxck", "train_log.csv", "config.json"] {
        assert!(root.join("train").join(f).exists(), "{f}");
    }
    let ck = root.join("train/checkpoint.cxck").display().to_string();
    let evald = run(
        &["eval"],
        "eval_ck",
        &[
            "--model",
            "neuralcx",
            "--oracle",
            "untrained",
            "--checkpoint",
            &ck,
        ],
    );
    assert!(evald.starts_with("neuralcx"), "{evald}");

    let dist = run(&["eval"], "eval_dist", &[]);
    assert!(dist.starts_with("distance"), "{dist}");
    let csv = std::fs::read_to_string(root.join("eval_dist/results.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let merged = ok(&[
        "report",
        "--results",
        p(&root.join("eval_ck/results.csv")),
        "--results",
        p(&root.join("eval_dist/results.csv")),
        "--out",
        p(&root.join("report")),
    ]);
    assert!(
        merged.contains("neuralcx") && merged.contains("distance"),
        "{merged}"
    );
    assert_eq!(
        std::fs::read_to_string(root.join("report/results.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn bad_arguments_fail_cleanly() {
    let d = tempfile::tempdir().unwrap();
    let root = d.path();
    ok(&["generate", "--out", p(root), "--n", "200"]);
    ok(&["build", "--out", p(root)]);
    let m = root.join("manifest.jsonl");
    let f = root.join("features.cxfs");
    let o = root.join("o");
    let base = [
        "eval",
        "--manifest",
        p(&m),
        "--features",
        p(&f),
        "--out",
        p(&o),
    ];
    for extra in [
        &["--model", "nonsense"][..],
        &["--lambda", "0.5"],
        &["--preset", "table9"],
        &["--oracle", "huge"],
    ] {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let out = cxrank(&args);
        assert_eq!(out.status.code(), Some(1), "{extra:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    }
    let missing = cxrank(&[
        "eval",
        "--manifest",
        "/nonexistent",
        "--features",
        p(&f),
        "--out",
        p(&o),
    ]);
    assert_eq!(missing.status.code(), Some(1));
}
