use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sgac::checkpoint::Checkpoint;
use sgac::error::exit;
use sgac::image_io::write_png;
use sgac_core::model::{ModelConfig, ModelParams};
use sgac_core::synth::patch;

fn sgac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgac")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let o = sgac(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn code(args: &[&str]) -> i32 {
    sgac(args).status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn psnr_line(out: &str) -> String {
    let i = out.find("psnr ").expect("psnr printed");
    out[i..].split(" dB").next().unwrap().to_string()
}

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn model(&self, name: &str, bits_back: bool) -> PathBuf {
        let p = self.path(name);
        let mut args = vec!["train", "--lambda", "0.02", "--steps", "3", "--corpus-size", "8", "--checkpoint", s(&p)];
        if bits_back {
            args.push("--bits-back");
        }
        ok(&args);
        p
    }

    /// A 36×30 grayscale test image, not a multiple of the model stride.
    fn image(&self) -> PathBuf {
        let p = self.path("x.png");
        let big = patch(5, 0, 40);
        let x = sgac_core::numcore::Tensor::from_fn([1, 1, 30, 36], |i| big.data()[(i / 36) * 40 + i % 36]);
        write_png(&p, &x).unwrap();
        p
    }
}

#[test]
fn zero_step_training_writes_the_initialization() {
    let t = Setup::new();
    let p = t.path("m0.ckpt");
    ok(&["train", "--lambda", "0.5", "--steps", "0", "--seed", "4", "--corpus-size", "4", "--checkpoint", s(&p)]);
    let c = Checkpoint::load(&p).unwrap();
    let init = ModelParams::init(ModelConfig { lambda: 0.5, ..ModelConfig::default() }, 4).unwrap();
    assert_eq!(c.params, init);
    assert_eq!(c.steps, 0);
}

#[test]
fn bits_back_checkpoint_doubles_hyper_encoder_output() {
    let t = Setup::new();
    let std = Checkpoint::load(&t.model("s.ckpt", false)).unwrap();
    let bb = Checkpoint::load(&t.model("b.ckpt", true)).unwrap();
    assert!(bb.params.config.bits_back && !std.params.config.bits_back);
    let out = |c: &Checkpoint| c.params.hyper_encoder[1].weight.shape()[0];
    assert_eq!(out(&bb), 2 * out(&std));
}

#[test]
fn compress_round_trip_reports_the_same_psnr() {
    let t = Setup::new();
    let m = t.model("m.ckpt", false);
    let x = t.image();
    let (a, b, y) = (t.path("a.sgac"), t.path("b.sgac"), t.path("y.png"));
    for method in ["round", "sga"] {
        let enc = ok(&["compress", "--checkpoint", s(&m), "--input", s(&x), "--output", s(&a), "--method", method, "--inference-steps", "20"]);
        ok(&["compress", "--checkpoint", s(&m), "--input", s(&x), "--output", s(&b), "--method", method, "--inference-steps", "20"]);
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap(), "deterministic");
        let dec = ok(&["decompress", "--checkpoint", s(&m), "--input", s(&a), "--output", s(&y), "--reference", s(&x)]);
        assert_eq!(psnr_line(&enc), psnr_line(&dec));
        let img = sgac::image_io::read_png(&y).unwrap();
        assert_eq!(img.shape(), &[1, 1, 30, 36]);
    }
}

#[test]
fn bits_back_round_trip_recovers_side_information() {
    let t = Setup::new();
    let m = t.model("bb.ckpt", true);
    let x = t.image();
    let side = t.path("side.bin");
    let data: Vec<u8> = (0..257u32).map(|i| (i * 97 % 251) as u8).collect();
    std::fs::write(&side, &data).unwrap();
    let (f, y, back) = (t.path("f.sgac"), t.path("y.png"), t.path("back.bin"));
    let enc = ok(&[
        "compress", "--checkpoint", s(&m), "--mode", "bitsback", "--side-info", s(&side), "--input", s(&x),
        "--output", s(&f), "--joint-steps", "10", "--bbvi-steps", "10",
    ]);
    let dec = ok(&["decompress", "--checkpoint", s(&m), "--input", s(&f), "--output", s(&y), "--side-info", s(&back), "--reference", s(&x)]);
    assert_eq!(std::fs::read(&back).unwrap(), data);
    assert_eq!(psnr_line(&enc), psnr_line(&dec));
}

#[test]
fn exit_codes() {
    let t = Setup::new();
    let m = t.model("m.ckpt", false);
    let other = t.model("o.ckpt", true);
    let x = t.image();
    let f = t.path("f.sgac");
    let side = t.path("side.bin");
    std::fs::write(&side, [1u8; 16]).unwrap();
    ok(&["compress", "--checkpoint", s(&m), "--input", s(&x), "--output", s(&f), "--method", "round"]);
    // Bits-back with a standard checkpoint is refused before any work.
    let no_out = t.path("never.sgac");
    assert_eq!(
        code(&["compress", "--checkpoint", s(&m), "--mode", "bitsback", "--side-info", s(&side), "--input", s(&x), "--output", s(&no_out)]),
        exit::CONFIG
    );
    assert!(!no_out.exists());
    assert_eq!(code(&["compress", "--checkpoint", s(&m), "--method", "newton", "--input", s(&x), "--output", s(&f)]), exit::CONFIG);
    assert_eq!(code(&["train", "--steps", "1"]), exit::CONFIG);
    assert_eq!(code(&["decompress", "--checkpoint", s(&other), "--input", s(&f), "--output", s(&t.path("y.png"))]), exit::PROTOCOL);
    let mut bytes = std::fs::read(&f).unwrap();
    bytes.truncate(bytes.len() - 1);
    std::fs::write(&f, &bytes).unwrap();
    assert_eq!(code(&["decompress", "--checkpoint", s(&m), "--input", s(&f), "--output", s(&t.path("y.png"))]), exit::PROTOCOL);
    assert_eq!(code(&["decompress", "--checkpoint", s(&t.path("missing.ckpt")), "--input", s(&f), "--output", "y.png"]), exit::IO);
    let nan = t.path("nan.ckpt");
    assert_eq!(
        code(&["train", "--lambda", "1", "--steps", "20", "--learning-rate", "1e300", "--corpus-size", "4", "--checkpoint", s(&nan)]),
        exit::NUMERICAL
    );
    // The last finite parameters are kept.
    let kept = Checkpoint::load(&nan).unwrap();
    assert!(kept.params.tensors().iter().all(|t| t.data().iter().all(|v| v.is_finite())));
}

#[test]
fn config_file_with_flag_overrides() {
    let t = Setup::new();
    let cfg = t.path("run.toml");
    let a = t.path("a.ckpt");
    let b = t.path("b.ckpt");
    std::fs::write(&cfg, format!("lambda = 0.3\nsteps = 0\ncorpus_size = 4\nseed = 2\ncheckpoint = \"{}\"\n", s(&a))).unwrap();
    ok(&["train", "--config", s(&cfg)]);
    ok(&["train", "--config", s(&cfg), "--checkpoint", s(&b), "--lambda", "0.7"]);
    assert_eq!(Checkpoint::load(&a).unwrap().params.config.lambda, 0.3);
    let cb = Checkpoint::load(&b).unwrap();
    assert_eq!(cb.params.config.lambda, 0.7);
    assert_eq!(cb.params, ModelParams::init(ModelConfig { lambda: 0.7, ..ModelConfig::default() }, 2).unwrap());
    std::fs::write(&cfg, "lambda = 0.3\nunknown_key = 1\n").unwrap();
    assert_eq!(code(&["train", "--config", s(&cfg)]), exit::CONFIG);
}

#[test]
fn ablate_and_report() {
    let t = Setup::new();
    let m = t.model("m.ckpt", false);
    let bb = t.model("bb.ckpt", true);
    let missing = t.path("gone.ckpt");
    let out = t.path("abl");
    let ckpts = format!("{},{},{}", s(&m), s(&bb), s(&missing));
    let text = ok(&[
        "ablate", "--checkpoints", &ckpts, "--methods", "M1,A6", "--corpus-size", "2", "--inference-steps", "10",
        "--output", s(&out),
    ]);
    assert!(text.contains("skipping"));
    for f in ["rd_points.csv", "curves.csv", "gap_curves.csv", "report.json", "report.md"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = std::fs::read_to_string(out.join("rd_points.csv")).unwrap();
    // Two baselines and two methods, two images each.
    assert_eq!(rows.lines().count(), 1 + 8);
    let json = ok(&["report", "--input", s(&out), "--format", "json"]);
    let v: serde_json::Value = serde_json::from_str(&json).unwrap();
    let bd: Vec<&str> = v["bd"].as_array().unwrap().iter().map(|r| r["method"].as_str().unwrap()).collect();
    assert_eq!(bd, ["M1", "A6"]);
    assert_eq!(v["paired"][1]["baseline"], "round-bb");
    assert_eq!(v["final_gaps"].as_array().unwrap().len(), 1);

    let single = t.path("single");
    ok(&["ablate", "--checkpoints", s(&m), "--methods", "A3", "--corpus-size", "1", "--inference-steps", "5", "--output", s(&single)]);
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(single.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["bd"].as_array().unwrap().len(), 1);
    assert_eq!(code(&["ablate", "--checkpoints", s(&missing), "--output", s(&single)]), exit::CONFIG);
}
