//! Brute-force reference implementations of the caption metrics and a
//! handcrafted candidate/reference suite.
//!
//! The oracles below deliberately share no code with the library: n-grams
//! are compared as token slices, counts are found by linear scans and the
//! longest common subsequence by enumerating subsequences.

#![allow(dead_code)]

pub fn toks(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn grams(t: &[String], n: usize) -> Vec<&[String]> {
    if t.len() < n {
        return Vec::new();
    }
    (0..=t.len() - n).map(|i| &t[i..i + n]).collect()
}

fn count(gs: &[&[String]], g: &[String]) -> usize {
    gs.iter().filter(|x| **x == g).count()
}

fn distinct<'a>(gs: &[&'a [String]]) -> Vec<&'a [String]> {
    let mut out: Vec<&[String]> = Vec::new();
    for g in gs {
        if !out.contains(g) {
            out.push(g);
        }
    }
    out
}

pub fn bleu4_oracle(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let c = cand.len();
    if c == 0 {
        return 0.0;
    }
    let mut logs = 0.0;
    for n in 1..=4 {
        let cg = grams(cand, n);
        if cg.is_empty() {
            return 0.0;
        }
        let mut matched = 0;
        for g in distinct(&cg) {
            let best_ref = refs.iter().map(|r| count(&grams(r, n), g)).max().unwrap();
            matched += count(&cg, g).min(best_ref);
        }
        if matched == 0 {
            return 0.0;
        }
        logs += (matched as f64 / cg.len() as f64).ln() / 4.0;
    }
    let mut best = refs[0].len();
    for r in refs {
        let d = (r.len() as i64 - c as i64).abs();
        let bd = (best as i64 - c as i64).abs();
        if d < bd || (d == bd && r.len() < best) {
            best = r.len();
        }
    }
    let bp = if c >= best { 1.0 } else { (1.0 - best as f64 / c as f64).exp() };
    bp * logs.exp()
}

pub struct Corpus {
    sets: Vec<Vec<Vec<String>>>,
}

impl Corpus {
    pub fn new(sets: Vec<Vec<Vec<String>>>) -> Self {
        Self { sets }
    }

    fn idf(&self, g: &[String]) -> f64 {
        let n = g.len();
        let df = self
            .sets
            .iter()
            .filter(|set| set.iter().any(|r| grams(r, n).contains(&g)))
            .count();
        (self.sets.len() as f64 / df.max(1) as f64).ln()
    }

    pub fn cider(&self, cand: &[String], refs: &[Vec<String>]) -> f64 {
        let mut total = 0.0;
        for n in 1..=4 {
            let cg = grams(cand, n);
            let mut per_ref = 0.0;
            for r in refs {
                let rg = grams(r, n);
                let mut keys = distinct(&cg);
                for g in distinct(&rg) {
                    if !keys.contains(&g) {
                        keys.push(g);
                    }
                }
                let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
                for g in keys {
                    let w = self.idf(g);
                    let a = count(&cg, g) as f64 * w;
                    let b = count(&rg, g) as f64 * w;
                    dot += a * b;
                    na += a * a;
                    nb += b * b;
                }
                per_ref += if na > 0.0 && nb > 0.0 {
                    dot / (na.sqrt() * nb.sqrt())
                } else if !cg.is_empty() && same_counts(&cg, &rg) {
                    1.0
                } else {
                    0.0
                };
            }
            total += per_ref / refs.len() as f64;
        }
        10.0 * total / 4.0
    }
}

fn same_counts(a: &[&[String]], b: &[&[String]]) -> bool {
    a.len() == b.len() && distinct(a).iter().all(|g| count(a, g) == count(b, g))
}

fn is_subsequence(sub: &[&String], of: &[String]) -> bool {
    let mut it = of.iter();
    sub.iter().all(|s| it.any(|x| x == *s))
}

/// LCS by trying every subsequence of the shorter side, longest first.
pub fn lcs_oracle(a: &[String], b: &[String]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    assert!(short.len() <= 16, "brute force limited to 16 tokens");
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        let k = mask.count_ones() as usize;
        if k <= best {
            continue;
        }
        let sub: Vec<&String> = (0..short.len()).filter(|i| mask >> i & 1 == 1).map(|i| &short[i]).collect();
        if is_subsequence(&sub, long) {
            best = k;
        }
    }
    best
}

pub fn rouge_l_oracle(cand: &[String], refs: &[Vec<String>]) -> f64 {
    let beta2 = 1.2f64 * 1.2;
    let mut best = 0.0f64;
    for r in refs {
        let l = lcs_oracle(cand, r) as f64;
        if l == 0.0 {
            continue;
        }
        let p = l / cand.len() as f64;
        let rc = l / r.len() as f64;
        best = best.max((1.0 + beta2) * p * rc / (rc + beta2 * p));
    }
    best
}

pub struct Pair {
    pub candidate: Vec<String>,
    pub refs: Vec<Vec<String>>,
}

fn pair(c: &str, refs: &[&str]) -> Pair {
    Pair {
        candidate: toks(c),
        refs: refs.iter().map(|r| toks(r)).collect(),
    }
}

/// Fifty candidate/reference sets covering exact matches, partial overlap,
/// reordering, repetition (clipping), brevity, very short and empty
/// candidates, disjoint vocabularies and multi-reference cases.
pub fn metric_suite() -> Vec<Pair> {
    vec![
        pair("a red cube next to a blue ball", &["a red cube next to a blue ball"]),
        pair("a red cube next to a blue ball", &["a red cube beside a blue ball", "a red box next to a blue sphere"]),
        pair("a small green cone", &["a small green cone on a table", "a green cone"]),
        pair("the the the the the", &["the cat is on the mat"]),
        pair("cat", &["a cat"]),
        pair("", &["a cat sits"]),
        pair("a big yellow ring behind a small red cube", &["a big yellow ring behind a small red cube", "a yellow ring behind a red cube"]),
        pair("blue ball a next to cube red a", &["a red cube next to a blue ball"]),
        pair("dog runs fast", &["a cat sleeps", "the bird sings"]),
        pair("a large purple cylinder on top of a tiny white cone", &["a large purple cylinder on top of a tiny white cone"]),
        pair("a large purple cylinder", &["a large purple cylinder on top of a tiny white cone"]),
        pair("a large purple cylinder on top of a tiny white cone and more words here", &["a large purple cylinder on top of a tiny white cone"]),
        pair("a cube", &["a cube", "a cube next to a ball"]),
        pair("a small red cube in front of a big ball", &["a small red cube in front of a big ball", "a small red block in front of a large ball", "a little red cube before a big sphere"]),
        pair("one two three four", &["one two three four"]),
        pair("one two three four", &["four three two one"]),
        pair("one two three", &["one two three"]),
        pair("a a a a", &["a a", "a a a"]),
        pair("a b c d e f", &["a b c d", "c d e f", "a b e f"]),
        pair("x y z w", &["x y z w v u", "x y"]),
        pair("the red ball is next to the green cube", &["the red ball is next to the green cube", "a green cube is next to the red ball"]),
        pair("a green cube is next to the red ball", &["the red ball is next to the green cube"]),
        pair("a tiny blue ring", &["a tiny blue ring", "a tiny blue ring", "a tiny blue ring"]),
        pair("a tiny blue ring", &["a small blue ring", "a tiny navy ring", "a little blue hoop"]),
        pair("big big big ball", &["a big ball", "the big red ball"]),
        pair("a white cone behind a black cube", &["a black cube behind a white cone"]),
        pair("a white cone behind a black cube", &["a white cone behind a black cube on a table with a lamp"]),
        pair("a b", &["a b c d e f g h"]),
        pair("a b c d e f g h", &["a b"]),
        pair("q", &["q"]),
        pair("red", &["a red ball", "red"]),
        pair("a large orange pyramid on top of a medium gray ball", &["a large orange pyramid on top of a medium gray ball", "an orange pyramid on a gray ball"]),
        pair("an orange pyramid on a gray ball", &["a large orange pyramid on top of a medium gray ball"]),
        pair("a small cube next to a small cube", &["a small cube next to a small cube"]),
        pair("a small cube next to a small cube", &["a small cube next to a big cube"]),
        pair("ball ball cube cube", &["cube ball cube ball"]),
        pair("the cat sat on the mat", &["the cat sat on the mat", "there is a cat on the mat"]),
        pair("there is a cat on the mat", &["the cat sat on the mat"]),
        pair("a b c d", &["a b c d", "e f g h", "a b x y"]),
        pair("e f g h", &["a b c d"]),
        pair("a red cube", &["a red cube", "a red cube next to a blue ball"]),
        pair("a red cube next to a blue ball", &["a red cube"]),
        pair("yellow ring behind red cube", &["a yellow ring behind a red cube", "yellow ring behind red cube"]),
        pair("a a b b c c d d", &["a b c d a b c d"]),
        pair("the small red cube is in front of the big blue ball", &["the big blue ball is behind the small red cube"]),
        pair("one", &["one two", "two one"]),
        pair("a cone", &["a cone", "a cone", "a cone", "a cone", "a cone"]),
        pair("a purple cone next to a purple cube", &["a purple cone next to a purple cube", "two purple things", "a cone and a cube"]),
        pair("m n o p q r s t u v", &["m n o p q r s t u v"]),
        pair("m n o p q r s t u v", &["v u t s r q p o n m"]),
    ]
}
