mod common;

use proptest::prelude::*;
use toneprobe::textgrid::{parse_textgrid, parse_textgrid_str, TextGrid};

fn roundtrips(grid: &TextGrid) {
    let long = grid.to_long_string();
    let parsed = parse_textgrid_str(&long).unwrap_or_else(|e| panic!("{e}\n{long}"));
    assert_eq!(&parsed.grid, grid);
    assert_eq!(parsed.grid.to_long_string(), long);

    let short = grid.to_short_string();
    let parsed = parse_textgrid_str(&short).unwrap_or_else(|e| panic!("{e}\n{short}"));
    assert_eq!(&parsed.grid, grid);
    assert_eq!(parsed.grid.to_short_string(), short);
}

fn utf16_le(s: &str) -> Vec<u8> {
    let mut out = vec![0xff, 0xfe];
    for u in s.encode_utf16() {
        out.extend_from_slice(&u.to_le_bytes());
    }
    out
}

fn utf16_be(s: &str) -> Vec<u8> {
    let mut out = vec![0xfe, 0xff];
    for u in s.encode_utf16() {
        out.extend_from_slice(&u.to_be_bytes());
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn random_grids_roundtrip(seed in any::<u64>()) {
        roundtrips(&common::random_grid(&mut common::rng(seed)));
    }

    #[test]
    fn encodings_agree(seed in any::<u64>()) {
        let grid = common::random_grid(&mut common::rng(seed));
        let text = grid.to_long_string();
        let mut bom8 = b"\xef\xbb\xbf".to_vec();
        bom8.extend_from_slice(text.as_bytes());
        for bytes in [text.as_bytes().to_vec(), bom8, utf16_le(&text), utf16_be(&text)] {
            prop_assert_eq!(&parse_textgrid(&bytes).unwrap().grid, &grid);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = parse_textgrid(&bytes);
    }

    #[test]
    fn accepted_mutants_are_well_formed(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let grid = common::random_grid(&mut rng);
        let text = if seed % 2 == 0 { grid.to_long_string() } else { grid.to_short_string() };
        let mutant = common::mutate(&mut rng, text.as_bytes());
        if let Ok(parsed) = parse_textgrid(&mutant) {
            for tier in &parsed.grid.tiers {
                for w in tier.intervals.windows(2) {
                    prop_assert!(w[1].start >= w[0].end - 1e-6);
                }
                for iv in &tier.intervals {
                    prop_assert!(iv.start <= iv.end);
                }
            }
        }
    }
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let grid = common::random_grid(&mut common::rng(3));
    let short = grid.to_short_string();
    let noisy: String = short
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i > 2 && i % 3 == 0 {
                format!("{l} ! note \"quoted\"\n\n")
            } else {
                format!("{l}\n")
            }
        })
        .collect();
    assert_eq!(parse_textgrid_str(&noisy).unwrap().grid, grid);
}
