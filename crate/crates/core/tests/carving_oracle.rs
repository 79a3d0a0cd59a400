mod common;

use std::collections::BTreeSet;

use common::naive_carve;
use privmem::carving::{carve_bytes, carve_reader, Carver, Encoding, EncodingFilter};
use proptest::prelude::*;

fn as_set(data: &[u8], min_len: usize) -> BTreeSet<(usize, Encoding, String)> {
    carve_bytes(data, min_len, EncodingFilter::Both)
        .into_iter()
        .map(|s| (s.offset, s.encoding, s.text))
        .collect()
}

/// Bytes skewed toward printable characters and NULs so that runs of both
/// encodings actually occur.
fn memoryish(max: usize) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(
        prop_oneof![
            4 => 0x20u8..=0x7e,
            3 => Just(0u8),
            1 => Just(b'\t'),
            2 => any::<u8>(),
        ],
        0..max,
    )
}

proptest! {
    #[test]
    fn matches_oracle(data in memoryish(2048), min_len in prop::sample::select(vec![1usize, 3, 4, 8])) {
        prop_assert_eq!(as_set(&data, min_len), naive_carve(&data, min_len));
    }

    #[test]
    fn output_is_sorted_and_sized(data in memoryish(1024)) {
        let out = carve_bytes(&data, 3, EncodingFilter::Both);
        for w in out.windows(2) {
            prop_assert!((w[0].offset, w[0].encoding) <= (w[1].offset, w[1].encoding));
        }
        for s in &out {
            let width = if s.encoding == Encoding::Ascii { 1 } else { 2 };
            prop_assert_eq!(s.byte_len, width * s.text.len());
            prop_assert!(s.offset + s.byte_len <= data.len());
        }
    }

    #[test]
    fn chunking_is_invisible(data in memoryish(1024), cuts in prop::collection::vec(any::<usize>(), 0..6)) {
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c % (data.len() + 1)).collect();
        cuts.sort_unstable();
        let mut carver = Carver::new(3, EncodingFilter::Both);
        let mut at = 0;
        for c in cuts {
            carver.feed(&data[at..c]);
            at = c;
        }
        carver.feed(&data[at..]);
        prop_assert_eq!(carver.finish(), carve_bytes(&data, 3, EncodingFilter::Both));
    }

    #[test]
    fn filters_partition_output(data in memoryish(1024)) {
        let both = carve_bytes(&data, 3, EncodingFilter::Both);
        let mut split = carve_bytes(&data, 3, EncodingFilter::Ascii);
        split.extend(carve_bytes(&data, 3, EncodingFilter::Utf16));
        split.sort_by_key(|s| (s.offset, s.encoding));
        prop_assert_eq!(both, split);
    }
}

#[test]
fn reader_matches_slice_across_chunk_boundary() {
    // a UTF-16 run straddling the 1 MiB read boundary
    let mut data = vec![0xffu8; (1 << 20) - 3];
    for &c in b"straddle" {
        data.extend_from_slice(&[c, 0]);
    }
    data.extend_from_slice(&[0xff; 16]);
    let streamed = carve_reader(&data[..], 3, EncodingFilter::Both).unwrap();
    assert_eq!(streamed, carve_bytes(&data, 3, EncodingFilter::Both));
    assert!(streamed
        .iter()
        .any(|s| s.text == "straddle" && s.encoding == Encoding::Utf16le));
}
