//! Generators and brute-force oracles shared by the integration tests.

#![allow(dead_code)]

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use toneprobe::corpus::{ToneLabel, ToneToken};
use toneprobe::embstore::EmbeddingFile;
use toneprobe::svm::Matrix;
use toneprobe::textgrid::{Interval, IntervalTier, TextGrid};

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

const LABEL_POOL: &[&str] = &[
    "",
    "",
    "",
    "H",
    "L",
    "M",
    "T1",
    "T4",
    "R",
    "F",
    "say \"hi\"",
    "ā́",
    "tɔ̀n",
    "!bang",
    "a b",
    "\"\"",
    "日本",
];
const TIER_NAMES: &[&str] = &["tones", "words", "phones", "tone \"x\"", "Töne"];

/// Random time that survives a text round trip: either millisecond-rounded or
/// an arbitrary double.
fn random_time(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    let t = rng.random_range(lo..hi);
    if rng.random_bool(0.7) {
        (t * 1000.0).round() / 1000.0
    } else {
        t
    }
}

/// A valid TextGrid with 0-3 interval tiers partitioning its range.
pub fn random_grid(rng: &mut ChaCha8Rng) -> TextGrid {
    let xmin = if rng.random_bool(0.8) {
        0.0
    } else {
        random_time(rng, 0.0, 5.0)
    };
    let xmax = xmin + 0.5 + random_time(rng, 0.0, 20.0);
    let n_tiers = rng.random_range(0..=3);
    let tiers = (0..n_tiers)
        .map(|_| {
            let n = rng.random_range(1..=25);
            let mut cuts: Vec<f64> = (0..n - 1).map(|_| random_time(rng, xmin, xmax)).collect();
            cuts.push(xmin);
            cuts.push(xmax);
            cuts.sort_by(f64::total_cmp);
            let intervals = cuts
                .windows(2)
                .map(|w| {
                    let label: &str = if w[0] == w[1] {
                        ""
                    } else {
                        LABEL_POOL.choose(rng).unwrap()
                    };
                    Interval::new(w[0], w[1], label)
                })
                .collect();
            IntervalTier {
                name: TIER_NAMES.choose(rng).unwrap().to_string(),
                xmin,
                xmax,
                intervals,
            }
        })
        .collect();
    TextGrid { xmin, xmax, tiers }
}

/// Random edits of a valid file: byte flips, deletions, insertions of
/// syntax-relevant fragments, truncation and duplication of slices.
pub fn mutate(rng: &mut ChaCha8Rng, input: &[u8]) -> Vec<u8> {
    const FRAGMENTS: &[&[u8]] = &[
        b"\"",
        b"\"\"",
        b"!",
        b"\n",
        b"<exists>",
        b"<absent>",
        b"-1",
        b"1e308",
        b"NaN",
        b"inf",
        b"size = 99",
        b"intervals [1]:",
        b"\"TextTier\"",
        b"\xff\xfe",
        b"\xfe\xff",
        b"\xef\xbb\xbf",
        b"xmin = ",
        b"0.0000001",
        b"\xc3",
        b"[]",
    ];
    let mut out = input.to_vec();
    for _ in 0..rng.random_range(1..=4) {
        let len = out.len();
        match rng.random_range(0..6) {
            0 if len > 0 => {
                let i = rng.random_range(0..len);
                out[i] = rng.random();
            }
            1 if len > 0 => {
                let i = rng.random_range(0..len);
                let j = (i + rng.random_range(1..=16)).min(len);
                out.drain(i..j);
            }
            2 => {
                let i = rng.random_range(0..=len);
                let frag = FRAGMENTS.choose(rng).unwrap();
                out.splice(i..i, frag.iter().copied());
            }
            3 if len > 0 => {
                out.truncate(rng.random_range(0..len));
            }
            4 if len > 1 => {
                let i = rng.random_range(0..len - 1);
                let j = rng.random_range(i + 1..=len.min(i + 64));
                let slice = out[i..j].to_vec();
                let at = rng.random_range(0..=len);
                out.splice(at..at, slice);
            }
            _ => {
                let i = rng.random_range(0..=len);
                out.insert(i, rng.random_range(b' '..=b'~'));
            }
        }
    }
    out
}

pub fn token(id: &str, speaker: &str, dialect: &str, tone: &str) -> ToneToken {
    ToneToken {
        token_id: id.into(),
        utterance_id: format!("{speaker}_u"),
        speaker_id: speaker.into(),
        dialect: dialect.into(),
        tone: ToneLabel::new(tone),
        start: 0.0,
        end: 0.1,
    }
}

pub fn class_name(c: usize) -> String {
    format!("C{c}")
}

/// Random speaker corpus that admits a plan with every class in every one
/// of `k` folds: speakers get hidden home folds and each class is forced
/// into at least one speaker per home fold. Otherwise speakers skip each
/// class with probability 0.3.
pub fn random_speaker_corpus(rng: &mut ChaCha8Rng, n_speakers: usize, n_classes: usize, k: usize) -> Vec<ToneToken> {
    assert!(n_speakers >= k);
    let mut present = vec![vec![false; n_classes]; n_speakers];
    for row in present.iter_mut() {
        for p in row.iter_mut() {
            *p = rng.random_bool(0.7);
        }
    }
    let mut perm: Vec<usize> = (0..n_speakers).collect();
    perm.shuffle(rng);
    for h in 0..k {
        let members: Vec<usize> = perm.iter().copied().skip(h).step_by(k).collect();
        #[allow(clippy::needless_range_loop)]
        for c in 0..n_classes {
            if members.iter().all(|&s| !present[s][c]) {
                present[*members.choose(rng).unwrap()][c] = true;
            }
        }
    }
    let mut tokens = Vec::new();
    for (s, row) in present.iter().enumerate() {
        let spk = format!("s{s:02}");
        let dialect = format!("d{}", s % 3);
        for (c, &p) in row.iter().enumerate() {
            if p {
                for _ in 0..rng.random_range(1..=12) {
                    let id = format!("{spk}#{}", tokens.len());
                    tokens.push(token(&id, &spk, &dialect, &class_name(c)));
                }
            }
        }
    }
    tokens
}

/// Every speaker has exactly `per_class[c]` tokens of class `c`.
pub fn symmetric_corpus(n_speakers: usize, per_class: &[usize]) -> Vec<ToneToken> {
    let mut tokens = Vec::new();
    for s in 0..n_speakers {
        let spk = format!("s{s:02}");
        for (c, &n) in per_class.iter().enumerate() {
            for i in 0..n {
                tokens.push(token(&format!("{spk}#{c}.{i}"), &spk, "d0", &class_name(c)));
            }
        }
    }
    tokens
}

/// Mean of the frames whose center lies in `[start, end)`, by linear scan and
/// f64 accumulation. `None` when no frame qualifies.
pub fn brute_force_pool(emb: &EmbeddingFile, layer: u32, start: f64, end: f64) -> Option<Vec<f64>> {
    let block = emb.layer(layer).unwrap();
    let mut sum = vec![0.0f64; emb.dim];
    let mut n = 0usize;
    for i in 0..emb.num_frames {
        let center = emb.frame_offset + i as f64 * emb.frame_stride + emb.frame_stride / 2.0;
        if center >= start && center < end {
            n += 1;
            for (s, v) in sum.iter_mut().zip(&block[i * emb.dim..(i + 1) * emb.dim]) {
                *s += *v as f64;
            }
        }
    }
    (n > 0).then(|| sum.into_iter().map(|s| s / n as f64).collect())
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x` with a trailing constant-1 column.
pub fn augment(x: &Matrix) -> Vec<Vec<f64>> {
    x.iter_rows()
        .map(|r| {
            let mut v = r.to_vec();
            v.push(1.0);
            v
        })
        .collect()
}

/// `0.5 |w|^2 + C sum hinge` for an augmented weight vector.
pub fn primal_objective(xa: &[Vec<f64>], y: &[f64], w: &[f64], c: f64) -> f64 {
    0.5 * dot(w, w)
        + c * xa
            .iter()
            .zip(y)
            .map(|(r, yi)| (1.0 - yi * dot(w, r)).max(0.0))
            .sum::<f64>()
}

pub struct QpSolution {
    pub alpha: Vec<f64>,
    pub w: Vec<f64>,
    pub primal: f64,
    pub dual: f64,
}

/// Box-constrained dual QP `min 0.5 a'Qa - 1'a, 0 <= a <= C` with
/// `Q_ij = y_i y_j x_i.x_j` over augmented rows, solved by accelerated
/// projected gradient with adaptive restart until the projected gradient
/// falls below 1e-11.
pub fn qp_oracle(x: &Matrix, y: &[f64], c: f64) -> QpSolution {
    let xa = augment(x);
    let n = xa.len();
    let q: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| y[i] * y[j] * dot(&xa[i], &xa[j])).collect())
        .collect();
    let matvec = |v: &[f64]| -> Vec<f64> { q.iter().map(|row| dot(row, v)).collect() };

    // largest eigenvalue by power iteration
    let mut v = vec![1.0; n];
    let mut lambda = 0.0;
    for _ in 0..500 {
        let u = matvec(&v);
        let norm = dot(&u, &u).sqrt();
        if norm == 0.0 {
            break;
        }
        lambda = norm / dot(&v, &v).sqrt();
        v = u.into_iter().map(|z| z / norm).collect();
    }
    let trace: f64 = (0..n).map(|i| q[i][i]).sum();
    let l = (lambda * 1.01).min(trace).max(1e-12);
    let objective = |a: &[f64]| 0.5 * dot(a, &matvec(a)) - a.iter().sum::<f64>();
    let project = |z: f64| z.clamp(0.0, c);

    let mut a = vec![0.0; n];
    let mut z = a.clone();
    let mut t = 1.0f64;
    let mut f_prev = objective(&a);
    for _ in 0..500_000 {
        let g: Vec<f64> = matvec(&z).into_iter().map(|v| v - 1.0).collect();
        let a_next: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| project(zi - gi / l)).collect();
        let f = objective(&a_next);
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        if f > f_prev {
            // restart momentum
            z = a.clone();
            t = 1.0;
            continue;
        }
        z = a_next
            .iter()
            .zip(&a)
            .map(|(an, ao)| an + (t - 1.0) / t_next * (an - ao))
            .collect();
        a = a_next;
        t = t_next;
        f_prev = f;

        let grad: Vec<f64> = matvec(&a).into_iter().map(|v| v - 1.0).collect();
        let pg = a
            .iter()
            .zip(&grad)
            .map(|(&ai, &gi)| {
                if ai <= 0.0 {
                    gi.min(0.0)
                } else if ai >= c {
                    gi.max(0.0)
                } else {
                    gi
                }
            })
            .fold(0.0f64, |m, v| m.max(v.abs()));
        if pg < 1e-11 {
            break;
        }
    }
    let d = xa[0].len();
    let mut w = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            w[j] += a[i] * y[i] * xa[i][j];
        }
    }
    let primal = primal_objective(&xa, y, &w, c);
    let dual = -objective(&a);
    QpSolution {
        alpha: a,
        w,
        primal,
        dual,
    }
}

/// Gaussian blobs with labels in {-1, +1}, both present.
pub fn random_binary_problem(rng: &mut ChaCha8Rng, n: usize, dim: usize, shift: f64) -> (Matrix, Vec<f64>) {
    loop {
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        if y.iter().all(|&v| v == y[0]) {
            continue;
        }
        let data: Vec<f64> = y
            .iter()
            .flat_map(|&yi| {
                (0..dim)
                    .map(|_| yi * shift + rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect::<Vec<_>>()
            })
            .collect();
        return (Matrix::new(n, dim, data).unwrap(), y);
    }
}
