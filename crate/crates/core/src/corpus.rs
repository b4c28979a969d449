//! Synthetic scenes with template captions, vocabulary and JSONL storage.
//!
//! A scene is a bag of `K` objects (category, color, size). Its feature
//! vectors are `one-hot category ⊕ one-hot color ⊕ size ⊕ zero padding`,
//! with Gaussian noise (σ = 0.05) added to every coordinate. Each caption
//! describes the largest object and the second largest one with the template
//! `a <size> <color> <category> is <relation> a <color2> <category2>`. Every
//! caption draws a wording style that swaps words for synonyms, so the
//! references of one scene differ in wording but agree in content.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::metrics::{DocFreq, TokenSeq};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
const RESERVED: [&str; 4] = ["pad", "bos", "eos", "unk"];

/// Longest caption the grammar can emit, in words.
pub const MAX_CAPTION_WORDS: usize = 12;

const FEATURE_NOISE: f64 = 0.05;

// Word forms per wording style: [canonical, style 1, style 2].
const CATEGORIES: [[&str; 3]; 8] = [
    ["cube", "block", "cube"],
    ["ball", "sphere", "ball"],
    ["cone", "cone", "cone"],
    ["cylinder", "tube", "cylinder"],
    ["ring", "ring", "hoop"],
    ["star", "star", "star"],
    ["cup", "mug", "cup"],
    ["bowl", "dish", "bowl"],
];

const COLORS: [[&str; 3]; 6] = [
    ["red", "red", "crimson"],
    ["blue", "blue", "navy"],
    ["green", "green", "green"],
    ["yellow", "yellow", "gold"],
    ["purple", "violet", "purple"],
    ["orange", "orange", "orange"],
];

const SIZES: [[&str; 3]; 3] = [
    ["small", "tiny", "small"],
    ["medium", "medium", "midsize"],
    ["large", "big", "huge"],
];

const RELATIONS: [[&[&str]; 3]; 4] = [
    [&["next", "to"], &["beside"], &["near"]],
    [&["behind"], &["behind"], &["in", "back", "of"]],
    [&["in", "front", "of"], &["before"], &["in", "front", "of"]],
    [&["on", "top", "of"], &["above"], &["over"]],
];

/// Cumulative probabilities of wording styles 0, 1, 2.
const STYLE_CDF: [f64; 3] = [0.7, 0.85, 1.0];

pub const N_CATEGORIES: usize = CATEGORIES.len();
pub const N_COLORS: usize = COLORS.len();

/// Generation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub objects_per_scene: usize,
    pub feature_dim: usize,
    pub captions_per_scene: usize,
    pub min_count: usize,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            n_train: 1000,
            n_val: 200,
            n_test: 200,
            objects_per_scene: 6,
            feature_dim: 32,
            captions_per_scene: 5,
            min_count: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return contract("every split needs at least one scene");
        }
        if self.objects_per_scene < 2 {
            return contract("scenes need at least two objects");
        }
        if self.feature_dim < N_CATEGORIES + N_COLORS + 1 {
            return contract(format!(
                "feature_dim must be at least {}",
                N_CATEGORIES + N_COLORS + 1
            ));
        }
        if self.captions_per_scene == 0 {
            return contract("captions_per_scene must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectDesc {
    pub category: usize,
    pub color: usize,
    pub size: f64,
}

/// A synthetic image: object descriptors and their noisy feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub scene_id: u64,
    pub objects: Vec<ObjectDesc>,
    pub features: Vec<Vec<f64>>,
}

/// Mean of the object feature vectors.
pub fn mean_feature(features: &[Vec<f64>]) -> Vec<f64> {
    let d = features.first().map_or(0, Vec::len);
    let mut m = vec![0.0; d];
    for f in features {
        m.iter_mut().zip(f).for_each(|(a, b)| *a += b);
    }
    let k = features.len().max(1) as f64;
    m.iter_mut().for_each(|a| *a /= k);
    m
}

/// One scene with its reference captions, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub scene_id: u64,
    #[serde(rename = "K")]
    pub k: usize,
    pub features: Vec<Vec<f64>>,
    pub captions: Vec<TokenSeq>,
}

impl CorpusRecord {
    pub fn mean_feature(&self) -> Vec<f64> {
        mean_feature(&self.features)
    }
}

fn scene_rng(corpus_seed: u64, scene_id: u64) -> ChaCha8Rng {
    // splitmix64 finaliser over the pair
    let mut z = corpus_seed
        .wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add(scene_id)
        .wrapping_add(0x6a09_e667_f3bc_c909);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

fn size_bucket(size: f64) -> usize {
    if size < 0.4 {
        0
    } else if size < 0.7 {
        1
    } else {
        2
    }
}

/// Relation word group between subject and object categories.
pub fn relation_of(subject: &ObjectDesc, object: &ObjectDesc) -> usize {
    (subject.category + object.category) % RELATIONS.len()
}

/// Indices of the largest and second largest objects.
pub fn salient_pair(objects: &[ObjectDesc]) -> (usize, usize) {
    let mut idx: Vec<usize> = (0..objects.len()).collect();
    idx.sort_by(|&a, &b| objects[b].size.total_cmp(&objects[a].size).then(a.cmp(&b)));
    (idx[0], idx[1])
}

/// Renders the template caption for a scene in the given wording style.
pub fn render_caption(objects: &[ObjectDesc], style: usize) -> TokenSeq {
    let (s, o) = salient_pair(objects);
    let (subj, obj) = (&objects[s], &objects[o]);
    let mut words = vec![
        "a",
        SIZES[size_bucket(subj.size)][style],
        COLORS[subj.color][style],
        CATEGORIES[subj.category][style],
        "is",
    ];
    words.extend_from_slice(RELATIONS[relation_of(subj, obj)][style]);
    words.extend_from_slice(&["a", COLORS[obj.color][style], CATEGORIES[obj.category][style]]);
    words.into_iter().map(str::to_string).collect()
}

/// Generates scene `scene_id` and its reference captions.
pub fn generate_scene(cfg: &CorpusConfig, scene_id: u64) -> (Scene, Vec<TokenSeq>) {
    let mut rng = scene_rng(cfg.seed, scene_id);
    let k = cfg.objects_per_scene;
    let sizes = loop {
        let s: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
        let mut sorted = s.clone();
        sorted.sort_by(f64::total_cmp);
        if sorted.windows(2).all(|w| w[1] - w[0] >= 0.02) {
            break s;
        }
    };
    let objects: Vec<ObjectDesc> = sizes
        .into_iter()
        .map(|size| ObjectDesc {
            category: rng.random_range(0..N_CATEGORIES),
            color: rng.random_range(0..N_COLORS),
            size,
        })
        .collect();
    let noise = Normal::new(0.0, FEATURE_NOISE).expect("valid sigma");
    let features = objects
        .iter()
        .map(|o| {
            let mut f = vec![0.0; cfg.feature_dim];
            f[o.category] = 1.0;
            f[N_CATEGORIES + o.color] = 1.0;
            f[N_CATEGORIES + N_COLORS] = o.size;
            f.iter_mut().for_each(|x| *x += noise.sample(&mut rng));
            f
        })
        .collect();
    let captions = (0..cfg.captions_per_scene)
        .map(|_| {
            let u: f64 = rng.random();
            let style = STYLE_CDF.iter().position(|&c| u < c).unwrap_or(0);
            render_caption(&objects, style)
        })
        .collect();
    (
        Scene {
            scene_id,
            objects,
            features,
        },
        captions,
    )
}

/// Token ↔ id map with reserved ids `pad=0, bos=1, eos=2, unk=3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: BTreeMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds the vocabulary from training captions, keeping words seen at
    /// least `min_count` times, in lexicographic order.
    pub fn build<'a>(captions: impl IntoIterator<Item = &'a TokenSeq>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for c in captions {
            for w in c {
                *counts.entry(w.as_str()).or_insert(0) += 1;
            }
        }
        let words = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count && !RESERVED.contains(w))
            .map(|(w, _)| w.to_string());
        Self::from_tokens(RESERVED.iter().map(|s| s.to_string()).chain(words).collect())
            .expect("reserved prefix present")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return contract("vocabulary must start with pad, bos, eos, unk");
        }
        let mut index = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return contract(format!("duplicate vocabulary token {t:?}"));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// `[BOS, ids.., EOS]`; unknown words map to UNK.
    pub fn encode(&self, caption: &[String]) -> Vec<usize> {
        let mut out = Vec::with_capacity(caption.len() + 2);
        out.push(BOS);
        out.extend(caption.iter().map(|w| self.id(w)));
        out.push(EOS);
        out
    }

    /// Word ids only, without BOS/EOS.
    pub fn encode_words(&self, caption: &[String]) -> Vec<usize> {
        caption.iter().map(|w| self.id(w)).collect()
    }

    /// Inverse of [`Vocabulary::encode`]: skips a leading BOS and stops at
    /// the first EOS.
    pub fn decode(&self, ids: &[usize]) -> TokenSeq {
        let start = usize::from(ids.first() == Some(&BOS));
        ids[start..]
            .iter()
            .take_while(|&&i| i != EOS)
            .map(|&i| self.token(i).unwrap_or("unk").to_string())
            .collect()
    }

    /// FNV-1a digest of the token list.
    pub fn digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for t in &self.tokens {
            for b in t.as_bytes().iter().chain(std::iter::once(&0u8)) {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VocabFile {
            tokens: self.tokens.clone(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(s)?;
        Self::from_tokens(f.tokens)
    }
}

/// Three splits, the training vocabulary and per-split document frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: Vec<CorpusRecord>,
    pub val: Vec<CorpusRecord>,
    pub test: Vec<CorpusRecord>,
    pub vocab: Vocabulary,
    pub df_train: DocFreq,
    pub df_val: DocFreq,
    pub df_test: DocFreq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => contract(format!("unknown split {other:?}")),
        }
    }
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

fn doc_freq(records: &[CorpusRecord]) -> DocFreq {
    let sets: Vec<Vec<TokenSeq>> = records.iter().map(|r| r.captions.clone()).collect();
    DocFreq::from_reference_sets(&sets)
}

/// Generates the three splits; scene ids are `0..n_train` for training,
/// then validation, then test.
pub fn generate_corpus(cfg: &CorpusConfig) -> Result<Corpus> {
    cfg.validate()?;
    let make = |range: std::ops::Range<usize>| -> Vec<CorpusRecord> {
        range
            .map(|id| {
                let (scene, captions) = generate_scene(cfg, id as u64);
                CorpusRecord {
                    scene_id: scene.scene_id,
                    k: scene.features.len(),
                    features: scene.features,
                    captions,
                }
            })
            .collect()
    };
    let (a, b) = (cfg.n_train, cfg.n_train + cfg.n_val);
    let train = make(0..a);
    let val = make(a..b);
    let test = make(b..b + cfg.n_test);
    let vocab = Vocabulary::build(train.iter().flat_map(|r| r.captions.iter()), cfg.min_count);
    Ok(Corpus {
        df_train: doc_freq(&train),
        df_val: doc_freq(&val),
        df_test: doc_freq(&test),
        train,
        val,
        test,
        vocab,
    })
}

impl Corpus {
    pub fn split(&self, s: Split) -> &[CorpusRecord] {
        match s {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn doc_freq(&self, s: Split) -> &DocFreq {
        match s {
            Split::Train => &self.df_train,
            Split::Val => &self.df_val,
            Split::Test => &self.df_test,
        }
    }

    /// Writes `{train,val,test}.jsonl`, `vocab.json` and `df_{split}.json`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for s in [Split::Train, Split::Val, Split::Test] {
            save_jsonl(&dir.join(format!("{}.jsonl", s.name())), self.split(s))?;
            fs::write(dir.join(format!("df_{}.json", s.name())), self.doc_freq(s).to_json()?)?;
        }
        fs::write(dir.join("vocab.json"), self.vocab.to_json()?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let read_df = |s: Split| -> Result<DocFreq> {
            DocFreq::from_json(&fs::read_to_string(dir.join(format!("df_{}.json", s.name())))?)
        };
        Ok(Self {
            train: load_jsonl(&dir.join("train.jsonl"))?,
            val: load_jsonl(&dir.join("val.jsonl"))?,
            test: load_jsonl(&dir.join("test.jsonl"))?,
            vocab: Vocabulary::from_json(&fs::read_to_string(dir.join("vocab.json"))?)?,
            df_train: read_df(Split::Train)?,
            df_val: read_df(Split::Val)?,
            df_test: read_df(Split::Test)?,
        })
    }
}

/// One JSON object per line.
pub fn save_jsonl(path: &Path, records: &[CorpusRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads records written by [`save_jsonl`]; errors carry 1-based line
/// numbers.
pub fn load_jsonl(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = fs::File::open(path)?;
    parse_jsonl(BufReader::new(file))
}

pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<CorpusRecord>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: CorpusRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if rec.features.len() != rec.k || rec.k == 0 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("K = {} but {} feature vectors", rec.k, rec.features.len()),
            });
        }
        out.push(rec);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{cider, rouge_l};

    fn small() -> CorpusConfig {
        CorpusConfig {
            n_train: 100,
            n_val: 20,
            n_test: 20,
            ..CorpusConfig::default()
        }
    }

    #[test]
    fn splits_have_distinct_scene_ids() {
        let c = generate_corpus(&small()).unwrap();
        let mut ids: Vec<u64> = c
            .train
            .iter()
            .chain(&c.val)
            .chain(&c.test)
            .map(|r| r.scene_id)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), 140);
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small()).unwrap();
        let b = generate_corpus(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate_corpus(&CorpusConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn scene_structure() {
        let cfg = small();
        let (scene, caps) = generate_scene(&cfg, 17);
        assert_eq!(scene.features.len(), cfg.objects_per_scene);
        assert_eq!(caps.len(), cfg.captions_per_scene);
        let m = mean_feature(&scene.features);
        for j in 0..cfg.feature_dim {
            let direct: f64 = scene.features.iter().map(|f| f[j]).sum::<f64>() / 6.0;
            assert!((m[j] - direct).abs() <= 1e-12);
        }
    }

    #[test]
    fn captions_are_short_and_mutually_consistent() {
        let c = generate_corpus(&small()).unwrap();
        for r in c.train.iter().chain(&c.val) {
            for (i, a) in r.captions.iter().enumerate() {
                assert!(a.len() <= MAX_CAPTION_WORDS);
                for b in &r.captions[i + 1..] {
                    assert!(rouge_l(a, &[b.clone()]).unwrap() > 0.0);
                }
            }
        }
    }

    #[test]
    fn every_caption_scores_against_its_own_references() {
        let c = generate_corpus(&small()).unwrap();
        for (records, df) in [(&c.train, &c.df_train), (&c.val, &c.df_val)] {
            for r in records.iter() {
                for cap in &r.captions {
                    assert!(cider(cap, &r.captions, df).unwrap() > 0.0);
                }
            }
        }
    }

    #[test]
    fn vocabulary_round_trip_and_unknowns() {
        let c = generate_corpus(&small()).unwrap();
        let v = &c.vocab;
        assert_eq!(&v.tokens()[..4], &["pad", "bos", "eos", "unk"]);
        assert!(v.len() > 30 && v.len() < 70, "{}", v.len());
        assert_eq!(v.encode(&[]), vec![BOS, EOS]);
        let cap = &c.train[0].captions[0];
        let ids = v.encode(cap);
        assert_eq!(ids.len(), cap.len() + 2);
        assert_eq!(&v.decode(&ids), cap);
        let odd: TokenSeq = vec!["a".into(), "zzz".into()];
        assert_eq!(v.encode(&odd)[2], UNK);
        let again = Vocabulary::from_json(&v.to_json().unwrap()).unwrap();
        assert_eq!(&again, v);
    }

    #[test]
    fn min_count_filters_rare_words() {
        let caps: Vec<TokenSeq> = vec![
            vec!["a".into(), "b".into()],
            vec!["a".into(), "c".into()],
        ];
        let v = Vocabulary::build(caps.iter(), 2);
        assert_eq!(v.tokens(), &["pad", "bos", "eos", "unk", "a"]);
    }

    #[test]
    fn jsonl_errors_name_the_line() {
        let c = generate_corpus(&small()).unwrap();
        let mut buf = Vec::new();
        for r in &c.val[..3] {
            buf.extend(serde_json::to_vec(r).unwrap());
            buf.push(b'\n');
        }
        let full = String::from_utf8(buf).unwrap();
        let cut = &full[..full.len() - 40];
        match parse_jsonl(cut.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
        assert_eq!(parse_jsonl(full.as_bytes()).unwrap(), c.val[..3].to_vec());
    }
}
