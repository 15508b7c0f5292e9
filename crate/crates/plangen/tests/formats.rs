use std::fs;
use std::path::{Path, PathBuf};

use plangen::checkpoint::{
    generator_from_bytes, generator_to_bytes, load_generator, load_planner, planner_from_bytes, planner_to_bytes, save_generator,
    save_planner, CheckpointError,
};
use plangen::jsonl::{load_entries, load_jsonl, save_jsonl, FormatError};
use plangen_core::corpus::{synth_generate, SynthConfig};
use plangen_core::data::DataKind;
use plangen_core::generator::{generator_vocab, GeneratorConfig, GeneratorModel};
use plangen_core::planner::{planner_vocab, PlannerConfig, PlannerModel};
use serde_json::json;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn line_error(contents: &str) -> (usize, String) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    fs::write(&path, contents).unwrap();
    match load_jsonl(&path) {
        Err(FormatError::Line { line, message }) => (line, message),
        other => panic!("expected a line error, got {other:?}"),
    }
}

const GOOD: &str = r#"{"kind":"tabular","records":[{"key":"Name","value":"Ann"}],"text":"Ann ."}"#;

#[test]
fn alan_bean_fixture_loads_with_five_records() {
    let ex = load_jsonl(&fixture("alan_bean.jsonl")).unwrap();
    assert_eq!(ex.len(), 1);
    let d = &ex[0].data;
    assert_eq!(d.kind(), DataKind::Rdf);
    assert_eq!(d.len(), 5);
    assert_eq!(d.plan_tokens(), ["nationality", "occupation", "birthPlace", "selectedByNASA", "status"]);
    assert_eq!(d.records()[2].matchable_values[0], ["Wheeler", ",", "Texas"]);
    assert_eq!(d.records()[0].auxiliary_values[0], ["Alan", "Bean"]);
}

#[test]
fn plan_free_lines_take_the_delexicalized_plan() {
    let ex = load_jsonl(&fixture("film.jsonl")).unwrap();
    assert_eq!(ex[0].plan.tokens(&ex[0].data), ["Name", "Role", "Title"]);
    let ex = load_jsonl(&fixture("alan_bean.jsonl")).unwrap();
    assert_eq!(ex[0].plan.tokens(&ex[0].data), ["birthPlace", "status", "occupation", "selectedByNASA"]);
}

#[test]
fn explicit_plans_are_kept() {
    let entries = load_entries(&fixture("film_plan.jsonl")).unwrap();
    let e = &entries[0];
    assert!(e.text.is_none());
    assert_eq!(e.plan.as_ref().unwrap().tokens(&e.data), ["Name", "Role", "Year", "Title"]);
    let plans = load_jsonl(&fixture("alan_bean_plans.jsonl")).unwrap();
    assert_eq!(plans.len(), 3);
    assert!(plans.iter().all(|p| p.plan.len() == 5));
    assert_eq!(load_entries(&fixture("colonials.jsonl")).unwrap().len(), 7);
}

#[test]
fn errors_carry_line_numbers() {
    let (line, msg) = line_error(&format!("{GOOD}\n{GOOD}\n{}", r#"{"kind":"tabular","records":[{"key":"Name","value":"Ann"}]}"#));
    assert_eq!(line, 3);
    assert!(msg.contains("text"), "{msg}");

    let (line, _) = line_error(&format!("{GOOD}\n{}", r#"{"kind":"graph","records":[],"text":"x"}"#));
    assert_eq!(line, 2);

    let (line, msg) = line_error(r#"{"kind":"tabular","records":[{"key":"Name","value":"Ann"}],"text":"Ann","plan":["Year"]}"#);
    assert_eq!(line, 1);
    assert!(msg.contains("Year"), "{msg}");

    let (line, _) = line_error(&format!("{GOOD}\n\n{}", r#"{"kind":"rdf","records":[{"key":"Name","value":"Ann"}],"text":"Ann"}"#));
    assert_eq!(line, 3, "blank lines still count");

    let (line, _) = line_error(&format!("{GOOD}\nnot json"));
    assert_eq!(line, 2);

    let (line, _) = line_error(r#"{"kind":"tabular","records":[],"text":"x"}"#);
    assert_eq!(line, 1);
}

#[test]
fn missing_file_is_an_io_error() {
    assert!(matches!(load_jsonl(Path::new("/nonexistent/x.jsonl")), Err(FormatError::Io { .. })));
}

#[test]
fn dataset_round_trip() {
    let examples = synth_generate(&SynthConfig { num_examples: 150, ..SynthConfig::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("corpus.jsonl");
    save_jsonl(&examples, &path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), examples);
    let mut fixtures = load_jsonl(&fixture("alan_bean_plans.jsonl")).unwrap();
    fixtures.extend(load_jsonl(&fixture("film.jsonl")).unwrap());
    save_jsonl(&fixtures, &path).unwrap();
    assert_eq!(load_jsonl(&path).unwrap(), fixtures);
}

fn small_models() -> (PlannerModel, GeneratorModel) {
    let ex = load_jsonl(&fixture("alan_bean_plans.jsonl")).unwrap();
    let planner = PlannerModel::new(PlannerConfig { hidden: 6, ..Default::default() }, planner_vocab(&ex).unwrap(), 1);
    let cfg = GeneratorConfig { d_model: 8, enc_layers: 1, dec_layers: 1, heads: 2, ffn: 12, max_source: 64, max_target: 24 };
    let generator = GeneratorModel::new(cfg, generator_vocab(&ex).unwrap(), 2).unwrap();
    (planner, generator)
}

#[test]
fn checkpoints_round_trip_exactly() {
    let (planner, generator) = small_models();
    let dir = tempfile::tempdir().unwrap();
    let (pp, gp) = (dir.path().join("p.ckpt"), dir.path().join("g.ckpt"));
    save_planner(&planner, json!({"note": "x"}), &pp).unwrap();
    save_generator(&generator, json!(null), &gp).unwrap();
    let (p2, g2) = (load_planner(&pp).unwrap(), load_generator(&gp).unwrap());
    assert_eq!(p2.config(), planner.config());
    assert_eq!(g2.config(), generator.config());
    assert_eq!(planner_to_bytes(&p2, json!({"note": "x"})), fs::read(&pp).unwrap());
    assert_eq!(generator_to_bytes(&g2, json!(null)), fs::read(&gp).unwrap());
    assert!(!dir.path().join("p.tmp").exists());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let (planner, generator) = small_models();
    let p = planner_to_bytes(&planner, json!({}));
    let g = generator_to_bytes(&generator, json!({}));

    assert!(matches!(generator_from_bytes(&p), Err(CheckpointError::Kind { .. })));
    assert!(matches!(planner_from_bytes(&g), Err(CheckpointError::Kind { .. })));
    assert!(matches!(planner_from_bytes(b"nope"), Err(CheckpointError::Format(_))));
    assert!(matches!(planner_from_bytes(&p[..p.len() - 3]), Err(CheckpointError::Format(_))));
    let mut extra = p.clone();
    extra.extend_from_slice(&[0; 8]);
    assert!(matches!(planner_from_bytes(&extra), Err(CheckpointError::Format(_))));
    let mut magic = g.clone();
    magic[0] = b'X';
    assert!(matches!(generator_from_bytes(&magic), Err(CheckpointError::Format(_))));
    let mut header = g.clone();
    header[17] ^= 0xff;
    assert!(generator_from_bytes(&header).is_err());
}
