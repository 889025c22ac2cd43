use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sentigan::io::{read_image, read_mask, read_segmentation};
use sentigan::train::{save_checkpoint, TrainConfig, Trainer};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

fn sentigan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sentigan")).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn model(dir: &Path) -> PathBuf {
    let path = dir.join("model.sgn");
    save_checkpoint(&Trainer::new(TrainConfig::default()).unwrap().checkpoint(), &path).unwrap();
    path
}

fn extract(out: &Path) -> Output {
    let f = fixtures();
    sentigan(&[
        "extract-masks",
        "--image",
        s(&f.join("scene.png")),
        "--captions",
        s(&f.join("captions.tsv")),
        "--seg",
        s(&f.join("scene_seg.png")),
        "--out-dir",
        s(out),
    ])
}

#[test]
fn extract_masks_selects_the_attended_segments() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("masks");
    let o = extract(&out);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let seg = read_segmentation(&fixtures().join("scene_seg.png")).unwrap();
    assert_eq!(read_mask(&out.join("disc.png")).unwrap(), seg.class_mask(1));
    assert_eq!(read_mask(&out.join("rectangle.png")).unwrap(), seg.class_mask(2));
}

#[test]
fn extract_then_transfer_writes_a_png() {
    let dir = tempfile::tempdir().unwrap();
    let masks = dir.path().join("masks");
    assert_eq!(code(&extract(&masks)), 0);
    let f = fixtures();
    let jobs = dir.path().join("jobs.tsv");
    fs::write(
        &jobs,
        format!(
            "masks/disc.png\t{}\t{}\nmasks/rectangle.png\t{}\t{}\t0.5\n",
            s(&f.join("reference.png")),
            s(&f.join("reference_disc.png")),
            s(&f.join("reference.png")),
            s(&f.join("reference_rectangle.png")),
        ),
    )
    .unwrap();
    let m = model(dir.path());
    let out = dir.path().join("out.png");
    let o = sentigan(&["transfer", "--model", s(&m), "--input", s(&f.join("scene.png")), "--jobs", s(&jobs), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let img = read_image(&out).unwrap();
    assert_eq!((img.height(), img.width()), (32, 32));

    // Strength 0 returns the input pixels exactly; the second job line pins
    // its own strength, so use only the first.
    let out0 = dir.path().join("out0.png");
    let jobs0 = dir.path().join("jobs0.tsv");
    fs::write(&jobs0, fs::read_to_string(&jobs).unwrap().lines().next().unwrap()).unwrap();
    let o = sentigan(&["transfer", "--model", s(&m), "--input", s(&f.join("scene.png")), "--jobs", s(&jobs0), "--strength", "0", "--out", s(&out0)]);
    assert_eq!(code(&o), 0);
    let a = read_image(&f.join("scene.png")).unwrap();
    assert_eq!(read_image(&out0).unwrap().to_rgb8(), a.to_rgb8());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let m = model(dir.path());
    let out = dir.path().join("never.png");

    // Unknown flag: usage error and nothing written.
    let o = sentigan(&["transfer", "--model", s(&m), "--frobnicate", "--out", s(&out)]);
    assert_eq!(code(&o), 2);
    let o = sentigan(&["transfer", "--model", s(&m)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());

    // Missing input file: IO.
    let jobs = dir.path().join("jobs.tsv");
    fs::write(&jobs, format!("{}\t{}\t{}\n", s(&f.join("reference_disc.png")), s(&f.join("reference.png")), s(&f.join("reference_disc.png")))).unwrap();
    let o = sentigan(&["transfer", "--model", s(&m), "--input", s(&dir.path().join("absent.png")), "--jobs", s(&jobs), "--out", s(&out)]);
    assert_eq!(code(&o), 3);
    assert!(!String::from_utf8_lossy(&o.stderr).trim().is_empty());

    // Corrupt PNG: format.
    let junk = dir.path().join("junk.png");
    fs::write(&junk, b"\x89PNG\r\n\x1a\nnot really").unwrap();
    let o = sentigan(&["transfer", "--model", s(&m), "--input", s(&junk), "--jobs", s(&jobs), "--out", s(&out)]);
    assert_eq!(code(&o), 4);

    // Foreign checkpoint: format.
    let bad = dir.path().join("bad.sgn");
    fs::write(&bad, b"NOTAMODELFILE").unwrap();
    let o = sentigan(&["transfer", "--model", s(&bad), "--input", s(&f.join("scene.png")), "--jobs", s(&jobs), "--out", s(&out)]);
    assert_eq!(code(&o), 4);

    // Mask of the wrong size: shape.
    let small = dir.path().join("small.png");
    image_gray(&small, 8);
    fs::write(&jobs, format!("{}\t{}\t{}\n", s(&small), s(&f.join("reference.png")), s(&f.join("reference_disc.png")))).unwrap();
    let o = sentigan(&["transfer", "--model", s(&m), "--input", s(&f.join("scene.png")), "--jobs", s(&jobs), "--out", s(&out)]);
    assert_eq!(code(&o), 4);

    // Output directory missing: IO.
    fs::write(&jobs, format!("{}\t{}\t{}\n", s(&f.join("reference_disc.png")), s(&f.join("reference.png")), s(&f.join("reference_disc.png")))).unwrap();
    let o = sentigan(&[
        "transfer",
        "--model",
        s(&m),
        "--input",
        s(&f.join("scene.png")),
        "--jobs",
        s(&jobs),
        "--out",
        s(&dir.path().join("no/such/dir/out.png")),
    ]);
    assert_eq!(code(&o), 3);
    assert!(!out.exists());

    // Malformed job line: format.
    fs::write(&jobs, "only-one-field\n").unwrap();
    let o = sentigan(&["transfer", "--model", s(&m), "--input", s(&f.join("scene.png")), "--jobs", s(&jobs), "--out", s(&out)]);
    assert_eq!(code(&o), 4);
    assert!(!out.exists());
}

fn image_gray(path: &Path, n: usize) {
    let m = sentigan::image::ObjectMask::full(n, n);
    sentigan::io::write_mask(path, &m).unwrap();
}

#[test]
fn filter_anp_keeps_caption_nouns() {
    let f = fixtures();
    let o = sentigan(&["filter-anp", "--anp-list", s(&f.join("anps.txt")), "--caption-nouns", s(&f.join("caption_nouns.txt"))]);
    assert_eq!(code(&o), 0);
    assert_eq!(String::from_utf8(o.stdout).unwrap(), "bright_disc\nsad rectangle\nhappy_Disc\n");
}

#[test]
fn training_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let corpus_dir = dir.path().join("corpus");
    let o = sentigan(&["synth-corpus", "--out-dir", s(&corpus_dir), "--count", "6", "--size", "16", "--seed", "3"]);
    assert_eq!(code(&o), 0);
    let manifest = corpus_dir.join("corpus.tsv");
    let cfg = dir.path().join("train.cfg");
    fs::write(&cfg, "image_size = 16\nbatch_size = 2\ncontent_channels = 8\nenc_width = 4\nstyle_width = 4\ndec_width = 4\ndisc_width = 4\nmlp_hidden = 16\n").unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = sentigan(&["train", "--corpus", s(&manifest), "--config", s(&cfg), "--out", s(&out), "--iters", "3", "--seed", "9"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.sgn"), run("b.sgn"));

    let o = sentigan(&["eval", "--model", s(&dir.path().join("a.sgn")), "--corpus", s(&manifest), "--trials", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let ratio: f64 = String::from_utf8(o.stdout).unwrap().trim().parse().unwrap();
    assert!(ratio.is_finite());

    fs::write(&cfg, "learning_rate = 1\n").unwrap();
    let o = sentigan(&["train", "--corpus", s(&manifest), "--config", s(&cfg), "--out", s(&dir.path().join("c.sgn"))]);
    assert_eq!(code(&o), 4);
    assert!(!dir.path().join("c.sgn").exists());
}
