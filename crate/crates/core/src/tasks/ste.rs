//! String transduction `(az|bz)* → (za|bbb)*`, with the constraint that the
//! output holds exactly three `b` per `bz` chunk of the input.

use std::ops::RangeInclusive;
use std::sync::Arc;

use rand::Rng;

use crate::constraint::ConstraintSpec;
use crate::error::{Error, Result};
use crate::models::{Seq2Seq, Vocab};

/// Chunk counts for training sources.
pub const TRAIN_CHUNKS: RangeInclusive<usize> = 3..=6;
/// Chunk counts for test sources.
pub const TEST_CHUNKS: RangeInclusive<usize> = 3..=8;
/// Default number of training pairs.
pub const TRAIN_SIZE: usize = 6000;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StePair {
    pub src: String,
    pub tgt: String,
}

/// Maps every `az` to `za` and every `bz` to `bbb`.
pub fn ste_transduce(src: &str) -> Result<String> {
    let bytes = src.as_bytes();
    if bytes.len() % 2 != 0 {
        return Err(Error::Input(format!("{src:?} is not a sequence of az/bz chunks")));
    }
    let mut out = String::with_capacity(bytes.len() * 3 / 2);
    for chunk in bytes.chunks(2) {
        match chunk {
            b"az" => out.push_str("za"),
            b"bz" => out.push_str("bbb"),
            _ => return Err(Error::Input(format!("{src:?} is not a sequence of az/bz chunks"))),
        }
    }
    Ok(out)
}

/// Random source with a chunk count drawn uniformly from `chunks`, each chunk
/// `az` or `bz` with equal odds.
pub fn random_source<R: Rng + ?Sized>(chunks: RangeInclusive<usize>, rng: &mut R) -> String {
    let n = rng.random_range(chunks);
    (0..n).map(|_| if rng.random_bool(0.5) { "bz" } else { "az" }).collect()
}

pub fn gen_ste_chunks<R: Rng + ?Sized>(chunks: RangeInclusive<usize>, count: usize, rng: &mut R) -> Vec<StePair> {
    (0..count)
        .map(|_| {
            let src = random_source(chunks.clone(), rng);
            let tgt = ste_transduce(&src).expect("generated sources are well formed");
            StePair { src, tgt }
        })
        .collect()
}

/// Training (3–6 chunks) or test (3–8 chunks) pairs.
pub fn gen_ste<R: Rng + ?Sized>(train: bool, count: usize, rng: &mut R) -> Vec<StePair> {
    gen_ste_chunks(if train { TRAIN_CHUNKS } else { TEST_CHUNKS }, count, rng)
}

/// `(3·x_b − y_b)² / (|x| + |y|)`, clamped to `[0, 1]`.
pub fn ste_violation(src: &str, out: &str) -> f64 {
    let xb = src.bytes().filter(|&c| c == b'b').count();
    let yb = out.bytes().filter(|&c| c == b'b').count();
    degree_from_counts(xb, yb, src.len() + out.len())
}

fn degree_from_counts(xb: usize, yb: usize, total_len: usize) -> f64 {
    if total_len == 0 {
        return 0.0;
    }
    let diff = 3.0 * xb as f64 - yb as f64;
    (diff * diff / total_len as f64).clamp(0.0, 1.0)
}

/// Character vocabulary: reserved entries plus `a`, `b`, `z`.
pub fn ste_vocab() -> Vocab {
    Vocab::new(&["a", "b", "z"]).expect("static vocabulary")
}

/// Encoder-decoder whose decoder emits EOS, `a`, `b`, `z`.
pub fn ste_model(embed: usize, hidden: usize) -> Seq2Seq {
    let v = ste_vocab();
    let outs = [v.id("a").unwrap(), v.id("b").unwrap(), v.id("z").unwrap()];
    Seq2Seq::new(v, &outs, embed, hidden).expect("static model layout")
}

/// The b-count constraint over encoded sources and emitted token ids.
pub fn ste_constraint() -> ConstraintSpec<Vec<usize>> {
    let b = ste_vocab().id("b").unwrap();
    ConstraintSpec::programmatic(
        "b-count",
        Arc::new(move |src: &Vec<usize>, out: &[usize]| {
            let xb = src.iter().filter(|&&t| t == b).count();
            let yb = out.iter().filter(|&&t| t == b).count();
            Ok(degree_from_counts(xb, yb, src.len() + out.len()))
        }),
    )
}

/// Line-oriented `source TAB target` dump.
pub fn to_lines(pairs: &[StePair]) -> String {
    pairs.iter().map(|p| format!("{}\t{}\n", p.src, p.tgt)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn transduction_examples() {
        assert_eq!(ste_transduce("azbzbz").unwrap(), "zabbbbbb");
        assert_eq!(ste_transduce("").unwrap(), "");
        assert_eq!(ste_transduce("bz").unwrap(), "bbb");
        assert!(matches!(ste_transduce("ab"), Err(Error::Input(_))));
        assert!(ste_transduce("azb").is_err());
    }

    #[test]
    fn violation_examples() {
        assert_eq!(ste_violation("azbz", "zabbb"), 0.0);
        assert!((ste_violation("azbz", "zab") - 4.0 / 7.0).abs() < 1e-15);
        assert_eq!(ste_violation("bzbz", "bbbbbb"), 0.0);
        assert_eq!(ste_violation("bzbzbz", ""), 1.0);
    }

    #[test]
    fn spec_matches_string_degree() {
        let v = ste_vocab();
        let spec = ste_constraint();
        let src = v.encode_chars("azbz").unwrap();
        let out = v.encode_chars("zab").unwrap();
        assert!((spec.degree(&src, &out).unwrap() - 4.0 / 7.0).abs() < 1e-15);
    }

    #[test]
    fn generated_pairs_are_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let train = gen_ste(true, 500, &mut rng);
        for p in &train {
            assert!((6..=12).contains(&p.src.len()));
            let xb = p.src.matches("bz").count();
            assert_eq!(p.tgt.matches('b').count(), 3 * xb);
            assert_eq!(ste_violation(&p.src, &p.tgt), 0.0);
        }
        let again = gen_ste(true, 500, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(train, again);
        let test = gen_ste(false, 500, &mut rng);
        assert!(test.iter().all(|p| (6..=16).contains(&p.src.len())));
        assert!(test.iter().any(|p| p.src.len() == 16));
    }
}
