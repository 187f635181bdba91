//! Pad-crop-mirror augmentation for training images.

use super::{Sample, CHANNELS, SIDE};
use crate::tensor::{Element, Rng, Tensor};

pub const PADDING: usize = 4;
pub const PADDED_SIDE: usize = SIDE + 2 * PADDING;

/// Crop offset into the padded 40x40 image plus a horizontal flip flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropParams {
    pub dy: usize,
    pub dx: usize,
    pub mirror: bool,
}

impl CropParams {
    pub const IDENTITY: CropParams = CropParams {
        dy: PADDING,
        dx: PADDING,
        mirror: false,
    };

    /// One of the 81 offsets uniformly, then a fair coin for the flip.
    pub fn sample(rng: &mut Rng) -> Self {
        let dy = rng.below(2 * PADDING + 1);
        let dx = rng.below(2 * PADDING + 1);
        CropParams {
            dy,
            dx,
            mirror: rng.coin(),
        }
    }
}

/// Writes the crop of `src` (`[3,32,32]`, conceptually padded with `pad`) into `dst`.
pub(crate) fn write_crop<T: Element>(src: &[f32], p: CropParams, pad: [f32; CHANNELS], dst: &mut [T]) {
    debug_assert!(p.dy <= 2 * PADDING && p.dx <= 2 * PADDING);
    for c in 0..CHANNELS {
        let plane = &src[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
        let pad_c = T::from_f64_lossy(pad[c] as f64);
        for y in 0..SIDE {
            let row = &mut dst[(c * SIDE + y) * SIDE..(c * SIDE + y + 1) * SIDE];
            let sy = (y + p.dy).wrapping_sub(PADDING);
            if sy >= SIDE {
                row.fill(pad_c);
                continue;
            }
            for (x, out) in row.iter_mut().enumerate() {
                let cx = if p.mirror { SIDE - 1 - x } else { x };
                let sx = (cx + p.dx).wrapping_sub(PADDING);
                *out = if sx < SIDE {
                    T::from_f64_lossy(plane[sy * SIDE + sx] as f64)
                } else {
                    pad_c
                };
            }
        }
    }
}

pub fn augment_at(sample: &Sample, params: CropParams, pad: [f32; CHANNELS]) -> Sample {
    let mut data = vec![0.0f32; CHANNELS * SIDE * SIDE];
    write_crop(sample.image.data(), params, pad, &mut data);
    Sample {
        image: Tensor::from_vec(&[CHANNELS, SIDE, SIDE], data).expect("image shape"),
        label: sample.label,
    }
}

/// Random translated and possibly mirrored crop; `pad` is the normalized zero pixel.
pub fn augment(sample: &Sample, rng: &mut Rng, pad: [f32; CHANNELS]) -> Sample {
    augment_at(sample, CropParams::sample(rng), pad)
}
