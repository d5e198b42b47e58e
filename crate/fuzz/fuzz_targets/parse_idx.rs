#![no_main]

use ifm::data::{parse_idx, parse_idx_images, parse_idx_labels};
use libfuzzer_sys::fuzz_target;

// The first byte picks the entry point. For the paired parser the next four
// bytes (little-endian) give the length of the image file; the remainder is
// the label file.
fuzz_target!(|data: &[u8]| {
    let Some((&sel, rest)) = data.split_first() else { return };
    match sel % 3 {
        0 => {
            if let Ok(img) = parse_idx_images(rest) {
                assert_eq!(img.pixels.len(), img.count * img.rows * img.cols);
            }
        }
        1 => {
            if let Ok(labels) = parse_idx_labels(rest) {
                assert!(labels.iter().all(|&l| l < 10));
            }
        }
        _ => {
            let Some((len, rest)) = rest.split_first_chunk::<4>() else { return };
            let cut = (u32::from_le_bytes(*len) as usize).min(rest.len());
            let (a, b) = rest.split_at(cut);
            if let Ok(set) = parse_idx(a, b) {
                assert_eq!(set.images.len(), set.labels.len() * 28 * 28);
            }
        }
    }
});
