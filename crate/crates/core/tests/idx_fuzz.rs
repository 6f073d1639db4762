//! Random and mutated IDX files checked against a reference decoder.

mod common;

use common::{idx_bytes, reference_idx};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use snn_core::dataio::{parse_idx_images, parse_idx_labels, IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC};
use snn_core::SnnError;

fn random_file(rng: &mut ChaCha8Rng) -> Vec<u8> {
    let images = rng.random_bool(0.5);
    let (magic, dims): (u32, Vec<u32>) = if images {
        (
            IDX_IMAGES_MAGIC,
            vec![
                rng.random_range(0..6),
                rng.random_range(0..9),
                rng.random_range(0..9),
            ],
        )
    } else {
        (IDX_LABELS_MAGIC, vec![rng.random_range(0..40)])
    };
    let len: usize = dims.iter().map(|&d| d as usize).product();
    let payload: Vec<u8> = (0..len)
        .map(|_| {
            if images {
                rng.random()
            } else {
                rng.random_range(0..10)
            }
        })
        .collect();
    let mut bytes = idx_bytes(magic, &dims, &payload);
    match rng.random_range(0..6) {
        0 => {
            let cut = rng.random_range(0..=bytes.len());
            bytes.truncate(cut);
        }
        1 => bytes.extend((0..rng.random_range(1..5)).map(|_| rng.random::<u8>())),
        2 if !bytes.is_empty() => {
            let i = rng.random_range(0..bytes.len().min(16));
            bytes[i] ^= 1 << rng.random_range(0..8);
        }
        3 if !images && !payload.is_empty() => {
            let i = 8 + rng.random_range(0..payload.len());
            bytes[i] = rng.random_range(10..=255);
        }
        _ => {}
    }
    bytes
}

#[test]
fn parsers_agree_with_reference_on_random_files() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1D8);
    let (mut accepted, mut rejected) = (0, 0);
    for _ in 0..1000 {
        let bytes = random_file(&mut rng);
        let reference = reference_idx(&bytes);

        let images = parse_idx_images(&bytes);
        match (&reference, &images) {
            (Some((IDX_IMAGES_MAGIC, dims, payload)), Ok(img)) if dims.len() == 3 => {
                assert_eq!(
                    [img.count, img.rows, img.cols],
                    [dims[0] as usize, dims[1] as usize, dims[2] as usize]
                );
                assert_eq!(&img.pixels, payload);
                accepted += 1;
            }
            (_, Ok(img)) => panic!("image parser accepted an invalid file: {img:?} from {bytes:?}"),
            (_, Err(_)) => rejected += 1,
        }

        let labels = parse_idx_labels(&bytes);
        match (&reference, &labels) {
            (Some((IDX_LABELS_MAGIC, dims, payload)), Ok(l)) if dims.len() == 1 => {
                assert_eq!(l, payload);
                assert!(l.iter().all(|&v| v < 10));
                accepted += 1;
            }
            (
                Some((IDX_LABELS_MAGIC, dims, payload)),
                Err(SnnError::LabelOutOfRange { index, value }),
            ) if dims.len() == 1 => {
                assert!(payload[*index] >= 10 && payload[*index] == *value);
                assert!(payload[..*index].iter().all(|&v| v < 10));
                rejected += 1;
            }
            (_, Ok(l)) => panic!("label parser accepted an invalid file: {l:?} from {bytes:?}"),
            (_, Err(_)) => rejected += 1,
        }
    }
    assert!(
        accepted > 100 && rejected > 100,
        "accepted {accepted}, rejected {rejected}"
    );
}

#[test]
fn specific_error_kinds() {
    let good = idx_bytes(IDX_LABELS_MAGIC, &[3], &[1, 2, 3]);
    assert_eq!(parse_idx_labels(&good).unwrap(), vec![1, 2, 3]);
    assert!(matches!(
        parse_idx_images(&good),
        Err(SnnError::BadMagic {
            expected: IDX_IMAGES_MAGIC,
            found: IDX_LABELS_MAGIC
        })
    ));
    assert!(matches!(
        parse_idx_labels(&good[..9]),
        Err(SnnError::TruncatedFile { .. })
    ));
    assert!(matches!(
        parse_idx_labels(&good[..6]),
        Err(SnnError::TruncatedFile { .. })
    ));
    let mut long = good.clone();
    long.push(0);
    assert!(matches!(
        parse_idx_labels(&long),
        Err(SnnError::DimensionMismatch(_))
    ));
    let bad = idx_bytes(IDX_LABELS_MAGIC, &[2], &[4, 11]);
    assert!(matches!(
        parse_idx_labels(&bad),
        Err(SnnError::LabelOutOfRange {
            index: 1,
            value: 11
        })
    ));
}
