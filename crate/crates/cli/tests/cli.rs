use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn adacot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_adacot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/adaptive.toml")
}

fn small_config(dir: &Path) -> PathBuf {
    let text = std::fs::read_to_string(config_path()).unwrap();
    let text = text
        .replace("total_steps = 200", "total_steps = 20")
        .replace(
            "eval_samples_per_class = 200",
            "eval_samples_per_class = 20",
        );
    let p = dir.join("small.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

const ROLLOUTS: &str = r#"{"prompt_id":"p1","mode":"long","correct":true,"format_ok":true,"length":40}
{"prompt_id":"p1","mode":"long","correct":false,"format_ok":true,"length":30}
{"prompt_id":"p1","mode":"short","correct":true,"format_ok":true,"length":8}
{"prompt_id":"p1","mode":"short","correct":true,"format_ok":true,"length":6}
{"prompt_id":2,"mode":"long","correct":true,"format_ok":true,"length":20}
{"prompt_id":2,"mode":"short","correct":false,"format_ok":true,"length":5}
"#;

#[test]
fn train_is_byte_deterministic_and_eval_reads_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let cfg = cfg.to_str().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&adacot(&[
        "train",
        "--config",
        cfg,
        "--seed",
        "3",
        "--out",
        a.to_str().unwrap(),
    ]));
    ok(&adacot(&[
        "train",
        "--config",
        cfg,
        "--seed",
        "3",
        "--out",
        b.to_str().unwrap(),
    ]));
    let ma = std::fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, std::fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(
        std::fs::read(a.join("policy.bin")).unwrap(),
        std::fs::read(b.join("policy.bin")).unwrap()
    );
    let text = String::from_utf8(ma).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "step,split,accuracy,thinking_rate,avg_tokens,mean_reward,grpo_loss,rmsl_loss,alpha_mean"
    );
    assert_eq!(
        text.lines().filter(|l| l.contains(",train_easy,")).count(),
        20
    );

    let c = dir.path().join("c");
    ok(&adacot(&[
        "train",
        "--config",
        cfg,
        "--seed",
        "4",
        "--out",
        c.to_str().unwrap(),
    ]));
    assert_ne!(
        std::fs::read(a.join("metrics.csv")).unwrap(),
        std::fs::read(c.join("metrics.csv")).unwrap()
    );

    let eval = ok(&adacot(&[
        "eval",
        "--config",
        cfg,
        "--policy",
        a.join("policy.bin").to_str().unwrap(),
    ]));
    let json: serde_json::Value = serde_json::from_str(&eval).unwrap();
    assert_eq!(json["long_only"]["all"]["thinking_rate"], 1.0);
    assert_eq!(json["short_only"]["all"]["thinking_rate"], 0.0);

    let plot = dir.path().join("plot.csv");
    let rep = ok(&adacot(&[
        "report",
        "--metrics",
        a.join("metrics.csv").to_str().unwrap(),
        "--plot",
        plot.to_str().unwrap(),
    ]));
    assert!(rep.contains("evaluation"), "{rep}");
    assert_eq!(std::fs::read_to_string(plot).unwrap().lines().count(), 21);
}

#[test]
fn shape_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(&input, ROLLOUTS).unwrap();
    let cfg = config_path();
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&adacot(&[
            "shape",
            "--in",
            input.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--config",
            cfg.to_str().unwrap(),
            "--step",
            "100",
        ]));
        std::fs::read(out).unwrap()
    };
    let a = run("a.jsonl");
    assert_eq!(a, run("b.jsonl"));
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 6);
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    // alpha = 1 > theta: long-correct earns the base reward minus the full length penalty.
    assert_eq!(first["reward_base"], 1.0);
    assert_eq!(first["length_penalty"], -1.0);
    assert_eq!(first["reward_total"], 0.0);
}

#[test]
fn shape_reports_line_of_bad_record() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.jsonl");
    std::fs::write(
        &input,
        "{\"prompt_id\":\"a\",\"mode\":\"long\",\"format_ok\":true,\"length\":3}\n",
    )
    .unwrap();
    let out = adacot(&[
        "shape",
        "--in",
        input.to_str().unwrap(),
        "--out",
        "-",
        "--config",
        config_path().to_str().unwrap(),
        "--step",
        "0",
    ]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 1: missing field `correct`"), "{err}");
}

#[test]
fn unknown_config_key_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "total_step = 5\n").unwrap();
    let out = adacot(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().join("o").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("total_step"));
}

#[test]
fn checkpoint_for_other_task_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let run = dir.path().join("r");
    ok(&adacot(&[
        "train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        run.to_str().unwrap(),
    ]));
    let other = dir.path().join("other.toml");
    std::fs::write(&other, "[task]\nnum_classes = 2\nanswer_vocab = 2\ntargets = [0, 1]\nalias_groups = [[0], [1]]\nlong_len_range = [6, 12]\nshort_len_range = [1, 5]\n").unwrap();
    let out = adacot(&[
        "eval",
        "--config",
        other.to_str().unwrap(),
        "--policy",
        run.join("policy.bin").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
}
