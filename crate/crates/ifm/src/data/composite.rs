use super::{DIGIT_SIZE, IMAGE_PIXELS, IMAGE_SIZE};

/// Padded digit pixels at or above this value are foreground.
pub const FOREGROUND_THRESHOLD: u8 = 77;
pub const PAD: usize = (IMAGE_SIZE - DIGIT_SIZE) / 2;

/// Zero-pads a 28x28 digit to 32x32.
pub fn pad_digit(digit: &[u8]) -> [u8; IMAGE_PIXELS] {
    assert_eq!(digit.len(), DIGIT_SIZE * DIGIT_SIZE, "digit must be 28x28");
    let mut out = [0u8; IMAGE_PIXELS];
    for r in 0..DIGIT_SIZE {
        let dst = (r + PAD) * IMAGE_SIZE + PAD;
        out[dst..dst + DIGIT_SIZE].copy_from_slice(&digit[r * DIGIT_SIZE..(r + 1) * DIGIT_SIZE]);
    }
    out
}

/// Digit pixels over the mask threshold replace the background patch.
pub fn composite(digit: &[u8], patch: &[u8; IMAGE_PIXELS]) -> [u8; IMAGE_PIXELS] {
    let padded = pad_digit(digit);
    let mut out = *patch;
    for (o, &d) in out.iter_mut().zip(&padded) {
        if d >= FOREGROUND_THRESHOLD {
            *o = d;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn patch() -> [u8; IMAGE_PIXELS] {
        std::array::from_fn(|i| (i * 7 % 256) as u8)
    }

    #[test]
    fn blank_digit_leaves_patch() {
        assert_eq!(composite(&[0; 784], &patch()), patch());
    }

    #[test]
    fn full_digit_keeps_border() {
        let p = patch();
        let out = composite(&[255; 784], &p);
        for r in 0..32 {
            for c in 0..32 {
                let inner = (2..30).contains(&r) && (2..30).contains(&c);
                let want = if inner { 255 } else { p[r * 32 + c] };
                assert_eq!(out[r * 32 + c], want);
            }
        }
    }

    #[test]
    fn threshold_is_inclusive() {
        let mut d = [0u8; 784];
        d[0] = 76;
        d[1] = 77;
        let p = [5u8; 1024];
        let out = composite(&d, &p);
        assert_eq!(out[2 * 32 + 2], 5);
        assert_eq!(out[2 * 32 + 3], 77);
    }
}
