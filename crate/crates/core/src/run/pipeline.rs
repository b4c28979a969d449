use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::checkpoint::{Checkpoint, ModelKind};
use super::config::RunConfig;
use super::manifest::Manifest;
use crate::corpus::{generate_corpus, Corpus, CorpusConfig, Split};
use crate::error::{at_path, Error, Result};
use crate::metrics::MetricSummary;
use crate::student::{DecoderFamily, Student};
use crate::teacher::{pretrain_teacher, Teacher, TeacherEpoch};
use crate::training::oracle::{EstimatorCheck, OracleFixture};
use crate::training::{
    evaluate_student, pretrain_state_net, train_student as fit_student, write_history, EpochMetrics,
    FrozenTeacher, StateNetEpoch, TrainData,
};

pub const CORPUS_CONFIG_FILE: &str = "corpus_config.json";
pub const TEACHER_HISTORY_FILE: &str = "teacher_history.jsonl";
pub const STUDENT_CHECKPOINT_FILE: &str = "student.json";
pub const HISTORY_FILE: &str = "history.jsonl";

fn corpus_files(dir: &Path) -> Vec<PathBuf> {
    let mut v = vec![dir.join(CORPUS_CONFIG_FILE), dir.join("vocab.json")];
    for s in ["train", "val", "test"] {
        v.push(dir.join(format!("{s}.jsonl")));
        v.push(dir.join(format!("df_{s}.json")));
    }
    v
}

fn refs(paths: &[PathBuf]) -> Vec<&Path> {
    paths.iter().map(PathBuf::as_path).collect()
}

fn create_dir(dir: &Path) -> Result<()> {
    at_path(dir, fs::create_dir_all(dir))
}

/// Generates the corpus into `corpus_dir`.
pub fn gen_corpus(cfg: &RunConfig) -> Result<Corpus> {
    cfg.validate()?;
    let corpus = generate_corpus(&cfg.corpus)?;
    let dir = &cfg.corpus_dir;
    create_dir(dir)?;
    corpus.save(dir)?;
    let cc = dir.join(CORPUS_CONFIG_FILE);
    at_path(&cc, fs::write(&cc, serde_json::to_string_pretty(&cfg.corpus)?))?;
    let outputs = corpus_files(dir);
    Manifest::new("gen-corpus", cfg.hash(), cfg.corpus.seed, &[], &refs(&outputs))?.write(dir)?;
    Ok(corpus)
}

/// Loads the corpus and checks it was generated with `cfg.corpus`.
pub fn load_corpus(cfg: &RunConfig) -> Result<Corpus> {
    let dir = &cfg.corpus_dir;
    let cc = dir.join(CORPUS_CONFIG_FILE);
    let stored: CorpusConfig = serde_json::from_str(&at_path(&cc, fs::read_to_string(&cc))?)?;
    if stored != cfg.corpus {
        return Err(Error::Config(format!(
            "{} was generated with a different corpus configuration",
            dir.display()
        )));
    }
    Corpus::load(dir)
}

#[derive(Debug, Clone, Serialize)]
pub struct TeacherOutcome {
    pub history: Vec<TeacherEpoch>,
    pub accuracy: f64,
    pub checkpoint: PathBuf,
}

/// Trains the teacher autoencoder on the training split and writes its
/// checkpoint, per-epoch history and manifest into `out_dir`.
pub fn train_teacher(cfg: &RunConfig, on_epoch: impl FnMut(&TeacherEpoch)) -> Result<TeacherOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    create_dir(&cfg.out_dir)?;
    let teacher = Teacher::new(cfg.model.family, cfg.dims(corpus.vocab.len()), cfg.model.with_cell);
    let mut params = teacher.init_params(cfg.teacher.seed);
    let history = pretrain_teacher(&teacher, &mut params, &corpus.vocab, &corpus.train, &cfg.teacher, on_epoch)?;
    let accuracy = match history.last() {
        Some(e) => e.accuracy,
        None => teacher.accuracy(&params, &corpus.vocab, &corpus.train)?,
    };
    let path = cfg.teacher_checkpoint_path();
    Checkpoint::new(
        ModelKind::Teacher,
        cfg.model.family,
        teacher.decoder.dims,
        cfg.model.with_cell,
        &params,
        serde_json::to_value(cfg)?,
        cfg.corpus.seed,
        &corpus.vocab,
    )
    .save(&path)?;
    let hist_path = cfg.out_dir.join(TEACHER_HISTORY_FILE);
    write_lines(&hist_path, &history)?;
    let inputs = corpus_files(&cfg.corpus_dir);
    Manifest::new(
        "train-teacher",
        cfg.hash(),
        cfg.teacher.seed,
        &refs(&inputs),
        &[path.as_path(), hist_path.as_path()],
    )?
    .write(&cfg.out_dir)?;
    Ok(TeacherOutcome {
        history,
        accuracy,
        checkpoint: path,
    })
}

fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut f = std::io::BufWriter::new(at_path(path, fs::File::create(path))?);
    for r in rows {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

fn load_teacher(cfg: &RunConfig, corpus: &Corpus) -> Result<(Teacher, crate::nn::ParamSet)> {
    let ck = Checkpoint::load(&cfg.teacher_checkpoint_path())?;
    ck.check_vocab(&corpus.vocab)?;
    if ck.family != cfg.model.family || ck.dims != cfg.dims(corpus.vocab.len()) || ck.with_cell != cfg.model.with_cell {
        return Err(Error::Checkpoint(
            "teacher checkpoint does not match the configured model".into(),
        ));
    }
    ck.teacher()
}

#[derive(Debug, Clone, Serialize)]
pub struct StudentOutcome {
    pub state_net: Vec<StateNetEpoch>,
    pub history: Vec<EpochMetrics>,
    pub best_epoch: usize,
    pub checkpoint: PathBuf,
}

/// Initializes the student from the teacher, pretrains the state network,
/// trains the student and writes the best checkpoint (by validation CIDEr),
/// the metrics history and a manifest into `out_dir`.
pub fn train_student(cfg: &RunConfig, on_epoch: impl FnMut(&EpochMetrics)) -> Result<StudentOutcome> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let (teacher, tp) = load_teacher(cfg, &corpus)?;
    create_dir(&cfg.out_dir)?;
    let frozen = FrozenTeacher {
        teacher: &teacher,
        params: &tp,
    };
    let student = Student::new(cfg.model.family, teacher.decoder.dims, cfg.model.with_cell);
    let s = &cfg.student;
    let mut params = student.init_from_teacher(&tp, s.seed)?;
    let state_net = pretrain_state_net(
        &student,
        &mut params,
        frozen,
        &corpus.vocab,
        &corpus.train,
        s.state_net_epochs,
        s.state_net_lr,
        s.grad_clip,
        s.seed.wrapping_add(1),
    )?;
    let data = TrainData {
        vocab: &corpus.vocab,
        train: &corpus.train,
        df_train: &corpus.df_train,
        val: &corpus.val,
        df_val: &corpus.df_val,
    };
    let run = fit_student(&student, params, frozen, data, s, on_epoch)?;
    let path = cfg.out_dir.join(STUDENT_CHECKPOINT_FILE);
    Checkpoint::new(
        ModelKind::Student,
        cfg.model.family,
        student.decoder.dims,
        cfg.model.with_cell,
        &run.best,
        serde_json::to_value(cfg)?,
        cfg.corpus.seed,
        &corpus.vocab,
    )
    .save(&path)?;
    let hist_path = cfg.out_dir.join(HISTORY_FILE);
    write_history(&hist_path, &run.history)?;
    let mut inputs = corpus_files(&cfg.corpus_dir);
    inputs.push(cfg.teacher_checkpoint_path());
    Manifest::new(
        "train-student",
        cfg.hash(),
        s.seed,
        &refs(&inputs),
        &[path.as_path(), hist_path.as_path()],
    )?
    .write(&cfg.out_dir)?;
    Ok(StudentOutcome {
        state_net,
        history: run.history,
        best_epoch: run.best_epoch,
        checkpoint: path,
    })
}

/// Beam-search metrics of a student checkpoint on one split, scored with
/// that split's document frequencies.
pub fn evaluate(cfg: &RunConfig, checkpoint: &Path, split: Split) -> Result<MetricSummary> {
    cfg.validate()?;
    let corpus = load_corpus(cfg)?;
    let ck = Checkpoint::load(checkpoint)?;
    ck.check_vocab(&corpus.vocab)?;
    let (student, params) = ck.student()?;
    evaluate_student(
        &student,
        &params,
        &corpus.vocab,
        corpus.split(split),
        corpus.doc_freq(split),
        cfg.student.t_max,
        cfg.student.beam_width,
    )
}

/// Enumeration-oracle report for both decoder families.
pub fn enum_check(seed: u64) -> Result<Vec<EstimatorCheck>> {
    [DecoderFamily::Fc, DecoderFamily::UpDown]
        .into_iter()
        .map(|f| OracleFixture::new(f, seed).check())
        .collect()
}
