use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use bpstory::annotation::rules::ExtractiveQa;
use bpstory::annotation::{annotate_corpus, Adapters, QuestionAnswerer};
use bpstory::control::{generate_refined, refine_blueprint, EntityRule};
use bpstory::corpus::{compute_stats, load_corpus, save_corpus, Blueprint, QAPair, Split, Story, StorySample};
use bpstory::metrics::external::{CommandMetric, ExternalMetric, METRICS};
use bpstory::metrics::{evaluate, ConceptLexicon, EvalItem};
use bpstory::model::{
    generate_iterative, generate_topdown, load_checkpoint, save_checkpoint, select_checkpoint, train, DecodeConfig,
    GenerationTrace, Mode, PreparedImages, StoryModel, VisionStack,
};
use bpstory::text::token_f1;
use bpstory::toy::{write_toy_corpus, ToyConfig};
use bpstory::vision::{Concept, ConceptSet};
use bpstory::{Error, Result, StoryModelF64};

use crate::config::{Config, VisionSection};
use crate::manifest::Recorder;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => fs::create_dir_all(dir).map_err(io_err(dir)),
        None => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(io_err(path))
}

fn write_jsonl(path: &Path, lines: &[Value]) -> Result<()> {
    let mut out = Vec::new();
    for l in lines {
        writeln!(out, "{l}").expect("write to memory");
    }
    write_text(path, std::str::from_utf8(&out).expect("json is utf-8"))
}

fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    raw.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: format!("{}: {e}", path.display()),
            })
        })
        .collect()
}

fn field<'a, T: Deserialize<'a>>(v: &'a Value, key: &str) -> Result<T> {
    let id = v.get("sequence_id").and_then(Value::as_str).unwrap_or("?");
    let data = |message: String| Error::Data {
        sample_id: id.to_string(),
        message,
    };
    let x = v.get(key).ok_or_else(|| data(format!("missing field `{key}`")))?;
    T::deserialize(x).map_err(|e| data(format!("field `{key}`: {e}")))
}

pub fn toy_corpus(rec: &mut Recorder, out_dir: &Path, toy: &ToyConfig) -> Result<()> {
    let samples = write_toy_corpus(out_dir, toy)?;
    let corpus = out_dir.join("corpus.jsonl");
    save_corpus(&samples, &corpus)?;
    rec.output("corpus", &corpus);
    rec.output("images", &out_dir.join("images"));
    println!("{} stories written to {}", samples.len(), corpus.display());
    Ok(())
}

pub fn stats(rec: &mut Recorder, corpus: &Path, split: Option<Split>, out: Option<&Path>) -> Result<()> {
    rec.input("corpus", corpus);
    let s = compute_stats(&load_corpus(corpus, split)?)?;
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.2}"));
    println!("{:<28}{}", "samples", s.num_samples);
    println!("{:<28}{:.2}", "images / sequence", s.avg_images_per_sequence);
    println!("{:<28}{:.2}", "sentences / story", s.avg_sentences_per_story);
    println!("{:<28}{:.2}", "tokens / story", s.avg_tokens_per_story);
    println!("{:<28}{}", "QA pairs / story", opt(s.avg_qa_pairs_per_story));
    println!("{:<28}{}", "tokens / QA pair", opt(s.avg_tokens_per_qa_pair));
    println!("{:<28}{}", "tokens story + QA", opt(s.avg_tokens_story_plus_qa));
    if let Some(out) = out {
        write_text(out, &serde_json::to_string_pretty(&s).expect("stats serialize"))?;
        rec.output("stats", out);
    }
    Ok(())
}

pub fn annotate(rec: &mut Recorder, cfg: &Config, corpus: &Path, out: &Path) -> Result<()> {
    rec.input("corpus", corpus);
    rec.version("adapters", "builtin-rules");
    let samples = load_corpus(corpus, None)?;
    let (annotated, failures) = annotate_corpus(&samples, &Adapters::builtin(), &cfg.annotation, cfg.parallelism)?;
    ensure_parent(out)?;
    save_corpus(&annotated, out)?;
    rec.output("corpus", out);
    if !failures.is_empty() {
        let path = out.with_extension("failures.jsonl");
        let lines: Vec<Value> = failures
            .iter()
            .map(|f| serde_json::to_value(f).expect("serializes"))
            .collect();
        write_jsonl(&path, &lines)?;
        rec.output("failures", &path);
        log::warn!(
            "{} of {} samples failed; see {}",
            failures.len(),
            samples.len(),
            path.display()
        );
    }
    println!("annotated {} of {} samples", annotated.len(), samples.len());
    Ok(())
}

fn record_vision(rec: &mut Recorder, vision: &VisionStack) {
    rec.version("encoder", vision.encoder.fingerprint());
    rec.version("detector", vision.detector.fingerprint());
}

fn concept_lists(c: &ConceptSet) -> Vec<Vec<&str>> {
    c.per_image
        .iter()
        .map(|v| v.iter().map(|x| x.concept.as_str()).collect())
        .collect()
}

pub fn concepts(rec: &mut Recorder, cfg: &Config, corpus: &Path, out: &Path) -> Result<()> {
    rec.input("corpus", corpus);
    let vision = cfg.vision.build()?;
    record_vision(rec, &vision);
    let mut lines = Vec::new();
    for s in load_corpus(corpus, None)? {
        let p = vision.prepare(&s.image_sequence)?;
        lines.push(json!({
            "sequence_id": s.id(),
            "concepts": concept_lists(&p.concepts),
            "concept_string": p.concept_string,
        }));
    }
    write_jsonl(out, &lines)?;
    rec.output("concepts", out);
    Ok(())
}

/// Stored next to the weights so generation rebuilds the same frozen stack.
#[derive(Serialize, Deserialize)]
struct VisionRecord {
    section: VisionSection,
    encoder: String,
    detector: String,
}

const VISION_FILE: &str = "vision.json";

fn greedy_score(model: &StoryModelF64, sample: &StorySample, prepared: &PreparedImages) -> f64 {
    let cfg = DecodeConfig {
        beam_size: 1,
        ..DecodeConfig::default()
    };
    let trace = model.bind(prepared).and_then(|b| match model.mode() {
        Mode::TopDown => generate_topdown(&b, &cfg),
        Mode::Iterative => generate_iterative(&b, &cfg),
    });
    match trace {
        Ok(t) => token_f1(&t.story.text(), &sample.story.text()),
        Err(e) => {
            log::warn!("{}: validation decode failed: {e}", sample.id());
            0.0
        }
    }
}

pub fn train_cmd(rec: &mut Recorder, cfg: &Config, corpus: &Path, mode: Mode, dir: &Path) -> Result<()> {
    rec.input("corpus", corpus);
    let all = load_corpus(corpus, None)?;
    let (train_set, val_set): (Vec<StorySample>, Vec<StorySample>) = {
        let t: Vec<_> = all.iter().filter(|s| s.split == Split::Train).cloned().collect();
        let v = all.iter().filter(|s| s.split == Split::Validation).cloned().collect();
        (t, v)
    };
    if train_set.is_empty() {
        return Err(Error::Domain("no training-split samples".into()));
    }
    if let Some(s) = train_set.iter().find(|s| s.blueprint.is_none()) {
        return Err(Error::Data {
            sample_id: s.id().to_string(),
            message: "sample has no blueprint; run annotate first".into(),
        });
    }
    let vision = cfg.vision.build()?;
    record_vision(rec, &vision);
    let prepare = |set: &[StorySample]| -> Result<Vec<PreparedImages>> {
        set.iter().map(|s| vision.prepare(&s.image_sequence)).collect()
    };
    let prepared = prepare(&train_set)?;
    let val_prepared = prepare(&val_set)?;
    let concept_strings: Vec<String> = prepared
        .iter()
        .chain(&val_prepared)
        .map(|p| p.concept_string.clone())
        .collect();
    let num_images = train_set.iter().map(|s| s.image_sequence.len()).max().unwrap_or(1);
    let model_cfg = cfg.model.model_config(mode, vision.encoder.dim(), num_images);
    let mut model = StoryModel::<f64>::new(
        model_cfg,
        StoryModel::<f64>::build_tokenizer(&train_set, &concept_strings),
    )?;

    let mut saved: Vec<(usize, PathBuf)> = Vec::new();
    let every = cfg.train.checkpoint_every;
    let report = train(&mut model, &train_set, &prepared, &cfg.train, &mut |step, m, losses| {
        if every.is_some() {
            let path = dir.join(format!("step-{step:06}"));
            save_checkpoint(m, &path, Some(&json!({"step": step, "loss": losses.last()})))?;
            saved.push((step, path));
        }
        Ok(())
    })?;

    let mut selected_step = report.steps;
    if saved.len() > 1 && !val_set.is_empty() {
        let i = select_checkpoint(&saved, &val_set, |(_, path), sample| {
            let m: StoryModelF64 = load_checkpoint(path)?;
            let idx = val_set
                .iter()
                .position(|v| v.id() == sample.id())
                .expect("sample from the set");
            Ok(greedy_score(&m, sample, &val_prepared[idx]))
        })?;
        selected_step = saved[i].0;
        model = load_checkpoint(&saved[i].1)?;
    }
    save_checkpoint(
        &model,
        dir,
        Some(&json!({"selected_step": selected_step, "final_loss": report.loss_curve.last()})),
    )?;
    let record = VisionRecord {
        section: cfg.vision.clone(),
        encoder: vision.encoder.fingerprint(),
        detector: vision.detector.fingerprint(),
    };
    write_text(
        &dir.join(VISION_FILE),
        &serde_json::to_string_pretty(&record).expect("serializes"),
    )?;
    write_text(
        &dir.join("train_report.json"),
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    rec.version("model", model.fingerprint());
    rec.output("checkpoint", dir);
    println!(
        "trained {} steps on {} rows; loss {:.4} -> {:.4}; checkpoint at step {selected_step}",
        report.steps,
        report.rows,
        report.loss_curve.first().copied().unwrap_or(f64::NAN),
        report.loss_curve.last().copied().unwrap_or(f64::NAN),
    );
    Ok(())
}

fn checkpoint_vision(dir: &Path) -> Result<VisionStack> {
    let path = dir.join(VISION_FILE);
    let raw = fs::read_to_string(&path).map_err(io_err(&path))?;
    let record: VisionRecord =
        serde_json::from_str(&raw).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let vision = record.section.build()?;
    if vision.encoder.fingerprint() != record.encoder || vision.detector.fingerprint() != record.detector {
        return Err(Error::Config(format!(
            "{}: frozen components differ from the ones used in training",
            path.display()
        )));
    }
    Ok(vision)
}

pub struct GenerateArgs<'a> {
    pub checkpoint: &'a Path,
    pub images: &'a Path,
    pub split: Option<Split>,
    pub out: &'a Path,
    pub refine: bool,
}

pub fn generate(rec: &mut Recorder, cfg: &Config, args: &GenerateArgs<'_>) -> Result<()> {
    rec.input("checkpoint", args.checkpoint);
    rec.input("images", args.images);
    let model: StoryModelF64 = load_checkpoint(args.checkpoint)?;
    let vision = checkpoint_vision(args.checkpoint)?;
    record_vision(rec, &vision);
    rec.version("model", model.fingerprint());
    let dcfg = &cfg.decode;
    let mut lines = Vec::new();
    let mut flagged = 0;
    for s in load_corpus(args.images, args.split)? {
        let p = vision.prepare(&s.image_sequence)?;
        let bound = model.bind(&p)?.with_length_penalty(dcfg.length_penalty);
        let mut trace: GenerationTrace = if args.refine {
            let lex = ConceptLexicon::from_set(&p.concepts);
            generate_refined(&bound, model.mode(), dcfg, &lex, cfg.control.entity_rule)?
        } else {
            match model.mode() {
                Mode::TopDown => generate_topdown(&bound, dcfg)?,
                Mode::Iterative => generate_iterative(&bound, dcfg)?,
            }
        };
        trace.sequence_id = s.id().to_string();
        flagged += usize::from(!trace.flags.is_empty());
        let mut line = trace.to_json();
        line["concepts"] = json!(concept_lists(&p.concepts));
        lines.push(line);
    }
    write_jsonl(args.out, &lines)?;
    rec.output("generated", args.out);
    println!("generated {} stories ({flagged} flagged)", lines.len());
    Ok(())
}

fn blueprint_of(v: &Value) -> Result<Blueprint> {
    #[derive(Deserialize)]
    struct Pair {
        answer: String,
        question: String,
    }
    let segments: Vec<Vec<Pair>> = field(v, "blueprint")?;
    Ok(Blueprint::from_segments(
        segments
            .into_iter()
            .map(|s| s.into_iter().map(|p| QAPair::generated(p.answer, p.question)).collect())
            .collect(),
    ))
}

fn concept_set(lists: Vec<Vec<String>>) -> ConceptSet {
    ConceptSet {
        per_image: lists
            .into_iter()
            .map(|v| {
                v.into_iter()
                    .map(|concept| Concept {
                        concept,
                        confidence: 1.0,
                    })
                    .collect()
            })
            .collect(),
    }
}

fn concept_table(path: &Path) -> Result<HashMap<String, ConceptSet>> {
    read_jsonl(path)?
        .iter()
        .map(|v| Ok((field::<String>(v, "sequence_id")?, concept_set(field(v, "concepts")?))))
        .collect()
}

const INTERNAL: [&str; 3] = ["repetition", "grounding", "faithfulness"];

pub struct EvaluateArgs<'a> {
    pub generated: &'a Path,
    pub references: Option<&'a Path>,
    pub concepts: Option<&'a Path>,
    pub metrics: &'a [String],
    pub out: &'a Path,
}

pub fn evaluate_cmd(rec: &mut Recorder, cfg: &Config, args: &EvaluateArgs<'_>) -> Result<()> {
    rec.input("generated", args.generated);
    for m in args.metrics {
        if !INTERNAL.contains(&m.as_str()) && !METRICS.contains(&m.as_str()) {
            return Err(Error::Config(format!(
                "unknown metric `{m}`; expected one of {}",
                INTERNAL.iter().chain(&METRICS).copied().collect::<Vec<_>>().join(", ")
            )));
        }
    }
    let wants = |m: &str| args.metrics.iter().any(|x| x == m);
    let concepts = match args.concepts {
        Some(p) => {
            rec.input("concepts", p);
            Some(concept_table(p)?)
        }
        None if wants("grounding") => return Err(Error::Config("grounding needs --concepts".into())),
        None => None,
    };
    let mut items = Vec::new();
    for v in read_jsonl(args.generated)? {
        let id: String = field(&v, "sequence_id")?;
        let concepts = match &concepts {
            Some(t) if wants("grounding") => Some(t.get(&id).cloned().ok_or_else(|| Error::Data {
                sample_id: id.clone(),
                message: "no concepts for this sequence".into(),
            })?),
            _ => None,
        };
        items.push(EvalItem {
            story: Story::new(field::<Vec<String>>(&v, "story")?),
            blueprint: Some(blueprint_of(&v)?),
            sequence_id: id,
            concepts,
        });
    }
    let qa = ExtractiveQa;
    let qa_ref: Option<&dyn QuestionAnswerer> = if wants("faithfulness") { Some(&qa) } else { None };
    let mut report = evaluate(&items, &cfg.metrics, qa_ref)?;
    let keep = |k: &str| {
        (wants("repetition") && k.ends_with("_repetition"))
            || (wants("grounding") && k.starts_with("grounding_"))
            || (wants("faithfulness") && k == "faithfulness")
    };
    report.corpus_metrics.retain(|k, _| keep(k));
    for m in &mut report.per_sample {
        m.retain(|k, _| keep(k));
    }

    let external: Vec<&str> = args
        .metrics
        .iter()
        .map(String::as_str)
        .filter(|m| METRICS.contains(m))
        .collect();
    if !external.is_empty() {
        let refs = args
            .references
            .ok_or_else(|| Error::Config("reference-based metrics need --references".into()))?;
        rec.input("references", refs);
        let by_id: HashMap<String, String> = load_corpus(refs, None)?
            .iter()
            .map(|s| (s.id().to_string(), s.story.text()))
            .collect();
        let hypotheses: Vec<String> = items.iter().map(|i| i.story.text()).collect();
        let references = items
            .iter()
            .map(|i| {
                by_id
                    .get(&i.sequence_id)
                    .map(|r| vec![r.clone()])
                    .ok_or_else(|| Error::Data {
                        sample_id: i.sequence_id.clone(),
                        message: "no reference story".into(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let runner: &CommandMetric = cfg
            .external_metrics
            .as_ref()
            .ok_or_else(|| Error::Config("reference-based metrics need an [external_metrics] program".into()))?;
        let mut versions = serde_json::Map::new();
        for m in external {
            let (value, v) = runner.compute(m, &hypotheses, &references)?;
            report.corpus_metrics.insert(m.to_string(), value);
            versions.insert(m.to_string(), v);
        }
        report.config_snapshot["external_versions"] = Value::Object(versions);
    }
    let text = if args.out.extension().is_some_and(|e| e == "csv") {
        report.to_csv()
    } else {
        report.to_json()
    };
    write_text(args.out, &text)?;
    rec.output("report", args.out);
    for (k, v) in &report.corpus_metrics {
        println!("{k:<24}{v:.4}");
    }
    Ok(())
}

pub fn refine(
    rec: &mut Recorder,
    generated: &Path,
    concepts: Option<&Path>,
    out: &Path,
    rule: EntityRule,
) -> Result<()> {
    rec.input("generated", generated);
    let table = match concepts {
        Some(p) => {
            rec.input("concepts", p);
            Some(concept_table(p)?)
        }
        None => None,
    };
    let mut lines = Vec::new();
    let mut removed = 0;
    for v in read_jsonl(generated)? {
        let id: String = field(&v, "sequence_id")?;
        let set = match &table {
            Some(t) => t.get(&id).cloned().ok_or_else(|| Error::Data {
                sample_id: id.clone(),
                message: "no concepts for this sequence".into(),
            })?,
            None => concept_set(field(&v, "concepts")?),
        };
        let report = refine_blueprint(&blueprint_of(&v)?, &ConceptLexicon::from_set(&set), rule);
        removed += report.removed_pairs.len();
        lines.push(json!({"sequence_id": id, "refinement": report}));
    }
    write_jsonl(out, &lines)?;
    rec.output("refined", out);
    println!("refined {} blueprints, {removed} pairs removed", lines.len());
    Ok(())
}
