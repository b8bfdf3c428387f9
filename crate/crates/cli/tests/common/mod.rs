#![allow(dead_code)]

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

/// The example sentence of each category, in category order.
pub const CATEGORY_EXAMPLES: [(&str, &str); 7] = [
    ("direct", "厂区周围宜设围墙，其高度不宜小于2m。"),
    ("indirect", "电缆隧道的安全出口间距不应超过120m。"),
    ("method", "建筑通风宜采用自然通风方式。"),
    ("reference", "钢材的物理性能指标应按表3.2.7采用。"),
    ("general", "门窗的材料、功能和质量等应满足使用要求。"),
    ("term", "用水量：用户所消耗的水量。"),
    ("other", "井下消防及洒水储备水量应能及时得到补充。"),
];

const TAILS: [&str; 12] = ["甲", "乙", "丙", "丁", "戊", "己", "庚", "辛", "壬", "癸", "子", "丑"];

pub fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_codeinterp"));
    cmd.env_remove("RUST_LOG");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

/// Runs and asserts success, returning stdout.
pub fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed with {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// `text<TAB>label` lines: `per_class` variants of each example sentence.
pub fn write_tsv(path: &Path, per_class: usize) {
    let mut s = String::new();
    for (label, text) in CATEGORY_EXAMPLES {
        for tail in TAILS.iter().cycle().take(per_class) {
            s.push_str(&format!("{text}{tail}\t{label}\n"));
        }
    }
    fs::write(path, s).unwrap();
}

/// Two small codes with metadata.
pub fn write_corpus(dir: &Path) -> std::path::PathBuf {
    let docs = dir.join("docs");
    fs::create_dir_all(&docs).unwrap();
    fs::write(
        docs.join("GB-1.txt"),
        "中华人民共和国国家标准\n1 总则\n1.0.1 为防止和减少建筑火灾危害，制定本规范。\n1.0.2 厂区周围宜设围墙，其高度不宜小于2m。\n12\n1.0.3 建筑通风宜采用自然通风方式，\n且应便于维护。\n",
    )
    .unwrap();
    fs::write(
        docs.join("DB-2.txt"),
        "2.0.1 用水量：用户所消耗的水量。\n2.0.2 钢材的物理性能指标应按表3.2.7采用。\n",
    )
    .unwrap();
    let meta = dir.join("meta.json");
    fs::write(
        &meta,
        r#"{
  "GB-1": {"title": "Fire code", "level": "GB", "domain_tag": "fire"},
  "DB-2": {"title": "Water code", "level": "DB", "domain_tag": "water"}
}"#,
    )
    .unwrap();
    meta
}
