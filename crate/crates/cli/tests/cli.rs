use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn smgarn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_smgarn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("SMGARN_NUM_WORKERS")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, h: usize, w: usize, seed: u64) -> Output {
    smgarn(&[
        "synth",
        "--out",
        p(dir),
        "--count",
        &count.to_string(),
        "--size",
        &h.to_string(),
        &w.to_string(),
        "--seed",
        &seed.to_string(),
    ])
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            out.extend(tree(&path));
        } else {
            out.push((path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap()));
        }
    }
    out.sort();
    out
}

/// A small run config; `extra` lines replace the defaults with the same key.
fn tiny_config(dir: &Path, extra: &str) -> PathBuf {
    let base = "embed_dim = 4\nmarb_count = 1\npatch_size = 16\nbatch_size = 1\nepochs = 1\nlr_init = 0.001\n";
    let key = |l: &str| l.split('=').next().unwrap().trim().to_string();
    let overridden: Vec<String> = extra.lines().map(key).collect();
    let mut text = String::from("# tiny run\n");
    for line in base.lines().filter(|l| !overridden.contains(&key(l))) {
        text += line;
        text += "\n";
    }
    text += extra;
    let path = dir.join(format!("run{}.cfg", overridden.join("_")));
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_writes_a_manifest_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let o = synth(&a, 4, 24, 20, 5);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(code(&synth(&b, 4, 24, 20, 5)), 0);
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let ids: Vec<&str> = manifest["samples"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["id"].as_str().unwrap())
        .collect();
    assert_eq!(ids, ["0001", "0002", "0003", "0004"]);
    assert_eq!(manifest["params"]["flake_count_range"], "10, 60");
    for sub in ["snowy", "gt", "mask", "latents"] {
        assert_eq!(fs::read_dir(a.join(sub)).unwrap().count(), 4, "{sub}");
    }
    assert_eq!(tree(&a), tree(&b));
    assert_ne!(tree(&a), {
        let c = tmp.path().join("c");
        synth(&c, 4, 24, 20, 6);
        tree(&c)
    });
}

#[test]
fn synth_reads_a_params_file() {
    let tmp = tempfile::tempdir().unwrap();
    let params = tmp.path().join("snow.cfg");
    fs::write(&params, "opacity_range = 0, 0\ntransmission_range = 1, 1\n").unwrap();
    let out = tmp.path().join("d");
    let o = smgarn(&[
        "synth",
        "--out",
        p(&out),
        "--count",
        "1",
        "--size",
        "16",
        "16",
        "--seed",
        "0",
        "--params",
        p(&params),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(
        fs::read(out.join("snowy/0001.png")).unwrap(),
        fs::read(out.join("gt/0001.png")).unwrap()
    );

    fs::write(&params, "opacity_range = 0.9, 0.1\n").unwrap();
    let o = smgarn(&[
        "synth",
        "--out",
        p(&out),
        "--count",
        "1",
        "--size",
        "16",
        "16",
        "--seed",
        "0",
        "--params",
        p(&params),
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&synth(tmp.path(), 0, 16, 16, 0)), 1);
    assert_eq!(code(&smgarn(&["synth", "--out", p(tmp.path()), "--count", "2"])), 1);
    assert_eq!(code(&smgarn(&["train", "--bogus"])), 1);
    assert_eq!(code(&smgarn(&["frobnicate"])), 1);
    assert_eq!(code(&smgarn(&["eval", "--data", p(tmp.path())])), 1);
    assert_eq!(code(&smgarn(&["--help"])), 0);
}

#[test]
fn unwritable_output_is_a_data_error() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, b"x").unwrap();
    assert_eq!(code(&synth(&file.join("sub"), 1, 16, 16, 0)), 2);
}

#[test]
fn train_resume_and_missing_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 20, 20, 1);
    let cfg = tiny_config(tmp.path(), "");
    let run = tmp.path().join("run");
    let o = smgarn(&["train", "--config", p(&cfg), "--data", p(&data), "--out", p(&run)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpts: Vec<_> = fs::read_dir(&run)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n.starts_with("ckpt_"))
        .collect();
    assert_eq!(ckpts, ["ckpt_epoch0001.tensors"]);
    let log = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);
    assert!(log.starts_with("epoch,step,loss_total,loss_rec,loss_mask,lr,psnr,ssim"));

    let cfg3 = tiny_config(tmp.path(), "epochs = 3\n");
    let o = smgarn(&[
        "train",
        "--config",
        p(&cfg3),
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--resume",
        p(&run.join("ckpt_epoch0001.tensors")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(
        stdout(&o).contains("trained epochs 1..3 (6 steps total)"),
        "{}",
        stdout(&o)
    );
    assert!(run.join("ckpt_epoch0003.tensors").is_file());
    let log = fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(log.lines().count(), 7);

    let wide = tiny_config(tmp.path(), "epochs = 3\nembed_dim = 6\n");
    let o = smgarn(&[
        "train",
        "--config",
        p(&wide),
        "--data",
        p(&data),
        "--out",
        p(&run),
        "--resume",
        p(&run.join("ckpt_epoch0001.tensors")),
    ]);
    assert_eq!(code(&o), 2);

    fs::remove_dir_all(data.join("mask")).unwrap();
    let o = smgarn(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("r2")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains(p(&data.join("mask"))), "{}", stderr(&o));

    let no_mask_net = tiny_config(tmp.path(), "guidance_case = case1_no_masknet\n");
    let o = smgarn(&[
        "train",
        "--config",
        p(&no_mask_net),
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("r3")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn malformed_config_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 20, 20, 1);
    let cfg = tmp.path().join("bad.cfg");
    fs::write(&cfg, "embed_dim = 4\n\nmystery_knob = 3\n").unwrap();
    let o = smgarn(&[
        "train",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&tmp.path().join("r")),
    ]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn eval_identity_and_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 20, 20, 2);
    // gt as input
    for entry in fs::read_dir(data.join("gt")).unwrap() {
        let path = entry.unwrap().path();
        fs::copy(&path, data.join("snowy").join(path.file_name().unwrap())).unwrap();
    }
    let out = tmp.path().join("report");
    let o = smgarn(&["eval", "--identity", "--data", p(&data), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(stdout(&o).lines().last().unwrap(), "100.00/1.00");
    assert_eq!(fs::read_to_string(out.join("report.csv")).unwrap().lines().count(), 3);

    let cfg = tiny_config(tmp.path(), "");
    let run = tmp.path().join("run");
    assert_eq!(
        code(&smgarn(&[
            "train",
            "--config",
            p(&cfg),
            "--data",
            p(&data),
            "--out",
            p(&run)
        ])),
        0
    );
    let o = smgarn(&[
        "eval",
        "--ckpt",
        p(&run.join("ckpt_epoch0001.tensors")),
        "--data",
        p(&data),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let summary = stdout(&o).lines().last().unwrap().to_string();
    let (ps, ss) = summary.split_once('/').unwrap();
    assert_eq!(ps.split_once('.').unwrap().1.len(), 2);
    assert_eq!(ss.split_once('.').unwrap().1.len(), 2);

    fs::remove_dir_all(data.join("gt")).unwrap();
    assert_eq!(code(&smgarn(&["eval", "--identity", "--data", p(&data)])), 2);
    assert_eq!(
        code(&smgarn(&[
            "eval",
            "--ckpt",
            p(&tmp.path().join("none")),
            "--data",
            p(&data)
        ])),
        2
    );
}

#[test]
fn infer_keeps_resolution_and_handles_masks() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 20, 20, 3);
    let odd = tmp.path().join("odd");
    synth(&odd, 1, 97, 101, 4);
    let input = odd.join("snowy/0001.png");

    let run = tmp.path().join("full");
    assert_eq!(
        code(&smgarn(&[
            "train",
            "--config",
            p(&tiny_config(tmp.path(), "")),
            "--data",
            p(&data),
            "--out",
            p(&run)
        ])),
        0
    );
    let ckpt = run.join("ckpt_epoch0001.tensors");
    let out = tmp.path().join("out");
    let o = smgarn(&[
        "infer",
        "--ckpt",
        p(&ckpt),
        "--in",
        p(&input),
        "--out",
        p(&out),
        "--save-mask",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let img = image::open(out.join("0001.png")).unwrap();
    assert_eq!((img.width(), img.height()), (101, 97));
    let mask = image::open(out.join("0001_mask.png")).unwrap();
    assert_eq!((mask.width(), mask.height()), (101, 97));
    assert!(matches!(mask, image::DynamicImage::ImageLuma8(_)));

    let cfg1 = tiny_config(tmp.path(), "guidance_case = case1_no_masknet\n");
    let run1 = tmp.path().join("case1");
    assert_eq!(
        code(&smgarn(&[
            "train",
            "--config",
            p(&cfg1),
            "--data",
            p(&data),
            "--out",
            p(&run1)
        ])),
        0
    );
    let out1 = tmp.path().join("out1");
    let o = smgarn(&[
        "infer",
        "--ckpt",
        p(&run1.join("ckpt_epoch0001.tensors")),
        "--in",
        p(&input),
        "--out",
        p(&out1),
        "--save-mask",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stderr(&o).to_lowercase().contains("warn"), "{}", stderr(&o));
    assert!(out1.join("0001.png").is_file());
    assert!(!out1.join("0001_mask.png").exists());
}

#[test]
fn infer_over_a_directory_lists_unreadable_files() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 20, 20, 5);
    let run = tmp.path().join("run");
    assert_eq!(
        code(&smgarn(&[
            "train",
            "--config",
            p(&tiny_config(tmp.path(), "")),
            "--data",
            p(&data),
            "--out",
            p(&run)
        ])),
        0
    );
    let ckpt = run.join("ckpt_epoch0001.tensors");
    let snowy = data.join("snowy");
    fs::write(snowy.join("broken.png"), b"not a png").unwrap();
    fs::write(snowy.join("notes.txt"), b"hello").unwrap();
    let out = tmp.path().join("out");
    let o = smgarn(&["infer", "--ckpt", p(&ckpt), "--in", p(&snowy), "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let mut written: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    written.sort();
    assert_eq!(written, ["0001.png", "0002.png"]);
    let err = stderr(&o);
    assert!(err.contains("broken.png") && err.contains("notes.txt"), "{err}");

    let junk = tmp.path().join("junk");
    fs::create_dir(&junk).unwrap();
    fs::write(junk.join("a.png"), b"zz").unwrap();
    assert_eq!(
        code(&smgarn(&[
            "infer",
            "--ckpt",
            p(&ckpt),
            "--in",
            p(&junk),
            "--out",
            p(&out)
        ])),
        2
    );
    assert_eq!(
        code(&smgarn(&[
            "infer",
            "--ckpt",
            p(&data.join("nope")),
            "--in",
            p(&snowy),
            "--out",
            p(&out)
        ])),
        2
    );
}

#[test]
fn ablate_runs_a_grid_and_rejects_unknown_names() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2, 16, 16, 6);
    let cfg = tiny_config(tmp.path(), "batch_size = 2\n");
    let out = tmp.path().join("ablate");
    let o = smgarn(&[
        "ablate",
        "--grid",
        "marb",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    for v in ["marn_ss_sa", "marn_ms_sa", "marn_ss_ma", "marn_ms_ma"] {
        assert!(csv.contains(v));
        assert!(out.join(format!("{v}.csv")).is_file());
    }
    assert!(stdout(&o).contains("trend"));

    let o = smgarn(&[
        "ablate",
        "--grid",
        "tbl9",
        "--config",
        p(&cfg),
        "--data",
        p(&data),
        "--out",
        p(&out),
    ]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    for g in ["attention", "guidance", "gfnet", "marb", "marb_count"] {
        assert!(err.contains(g), "{err}");
    }
}
