//! Quality and rate measures: PSNR/SSIM on aggregated event images, the
//! temporal quantization error and the compression ratio.

use crate::binning::HistogramSubframe;
use crate::{Error, Result};

pub const DEFAULT_PSNR_CAP: f64 = 99.0;
pub const DEFAULT_BITS_PER_EVENT: u32 = 64;

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// Signed per-pixel event balance (positive minus negative) summed over bins.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregatedEventImage {
    pub width: usize,
    pub height: usize,
    pub signed: Vec<i64>,
}

impl AggregatedEventImage {
    pub fn from_subframes(subframes: &[HistogramSubframe]) -> Result<Self> {
        let first = subframes
            .first()
            .ok_or_else(|| Error::invalid("no subframes to aggregate"))?;
        let (width, height) = (first.width, first.height);
        let mut signed = vec![0i64; width * height];
        for sf in subframes {
            if sf.width != width || sf.height != height {
                return Err(Error::invalid("subframes differ in size"));
            }
            let s = sf.polarity.sign() as i64;
            for (acc, &c) in signed.iter_mut().zip(&sf.counts) {
                *acc += s * c as i64;
            }
        }
        Ok(AggregatedEventImage {
            width,
            height,
            signed,
        })
    }

    /// Clips to `[-127, 128]` and offsets by 127 into 8 bits.
    pub fn to_u8(&self) -> Vec<u8> {
        self.signed
            .iter()
            .map(|&v| (v.clamp(-127, 128) + 127) as u8)
            .collect()
    }
}

pub fn mse(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("images differ in size or are empty"));
    }
    let sum: u64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as i64 - y as i64;
            (d * d) as u64
        })
        .sum();
    Ok(sum as f64 / a.len() as f64)
}

/// PSNR for a known mean squared error; `cap` replaces infinity.
pub fn psnr_from_mse(mse: f64, cap: f64) -> f64 {
    if mse <= 0.0 {
        cap
    } else {
        (10.0 * (PEAK * PEAK / mse).log10()).min(cap)
    }
}

pub fn psnr(a: &[u8], b: &[u8], cap: f64) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?, cap))
}

fn window_stats(a: &[u8], b: &[u8], width: usize, x0: usize, y0: usize, wx: usize, wy: usize) -> f64 {
    let n = (wx * wy) as f64;
    let (mut sa, mut sb) = (0.0, 0.0);
    for y in y0..y0 + wy {
        for x in x0..x0 + wx {
            sa += a[y * width + x] as f64;
            sb += b[y * width + x] as f64;
        }
    }
    let (ma, mb) = (sa / n, sb / n);
    let cov = |p: &[u8], q: &[u8], mp: f64, mq: f64| -> f64 {
        let mut s = 0.0;
        for y in y0..y0 + wy {
            for x in x0..x0 + wx {
                s += (p[y * width + x] as f64 - mp) * (q[y * width + x] as f64 - mq);
            }
        }
        s / n
    };
    let (va, vb, cab) = (cov(a, a, ma, ma), cov(b, b, mb, mb), cov(a, b, ma, mb));
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    ((2.0 * ma * mb + c1) * (2.0 * cab + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
}

/// Mean SSIM over all 8x8 windows at stride 1. Images smaller than the
/// window use a single window covering the whole image.
pub fn ssim(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<f64> {
    if a.len() != b.len() || a.len() != width * height || a.is_empty() {
        return Err(Error::invalid("images differ in size or are empty"));
    }
    let wx = SSIM_WINDOW.min(width);
    let wy = SSIM_WINDOW.min(height);
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=height - wy {
        for x0 in 0..=width - wx {
            total += window_stats(a, b, width, x0, y0, wx, wy);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialMetrics {
    pub psnr: f64,
    pub ssim: f64,
    pub mse: f64,
}

/// PSNR and SSIM between the aggregated images of two subframe sets.
pub fn spatial_metrics(
    original: &[HistogramSubframe],
    coded: &[HistogramSubframe],
    psnr_cap: f64,
) -> Result<SpatialMetrics> {
    if original.len() != coded.len() {
        return Err(Error::invalid("subframe counts differ"));
    }
    for (o, c) in original.iter().zip(coded) {
        if o.bin != c.bin || o.polarity != c.polarity {
            return Err(Error::invalid("subframe bin structure differs"));
        }
    }
    let a = AggregatedEventImage::from_subframes(original)?;
    let b = AggregatedEventImage::from_subframes(coded)?;
    if a.width != b.width || a.height != b.height {
        return Err(Error::invalid("subframe dimensions differ"));
    }
    let (ia, ib) = (a.to_u8(), b.to_u8());
    let mse = mse(&ia, &ib)?;
    Ok(SpatialMetrics {
        psnr: psnr_from_mse(mse, psnr_cap),
        ssim: ssim(&ia, &ib, a.width, a.height)?,
        mse,
    })
}

/// Temporal error of one frame: `sqrt(sum (t_org - t_quant)^2)`.
pub fn t_error_frame(pairs: &[(f64, f64)]) -> f64 {
    pairs.iter().map(|(o, q)| (o - q) * (o - q)).sum::<f64>().sqrt()
}

/// Mean over frames of [`t_error_frame`]. Each frame lists `(t_org, t_quant)`
/// for the events that survived coding.
pub fn t_error(frames: &[Vec<(f64, f64)>]) -> Result<f64> {
    if frames.is_empty() {
        return Err(Error::invalid("T_error needs at least one frame"));
    }
    Ok(frames.iter().map(|f| t_error_frame(f)).sum::<f64>() / frames.len() as f64)
}

/// `bits_per_event * n_events / gamma`. Zero events give zero.
pub fn compression_ratio(n_events: u64, gamma_bits: u64, bits_per_event: u32) -> Result<f64> {
    if gamma_bits == 0 {
        return Err(Error::invalid("compressed size is zero"));
    }
    Ok(bits_per_event as f64 * n_events as f64 / gamma_bits as f64)
}

/// `w_s * d_s + w_t * d_t`.
pub fn weighted_distortion(d_spatial: f64, d_temporal: f64, w_spatial: f64, w_temporal: f64) -> f64 {
    w_spatial * d_spatial + w_temporal * d_temporal
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::event::Polarity;
    use proptest::prelude::*;

    fn sf(bin: u32, p: Polarity, w: usize, counts: Vec<u32>) -> HistogramSubframe {
        let h = counts.len() / w;
        HistogramSubframe {
            bin,
            polarity: p,
            width: w,
            height: h,
            counts,
        }
    }

    #[test]
    fn t_error_examples() {
        assert_eq!(t_error(&[vec![(0.3, 0.3), (0.7, 0.7)]]).unwrap(), 0.0);
        let v = t_error(&[vec![(0.0, 0.0), (0.5, 0.0)]]).unwrap();
        assert!((v - 0.5).abs() < 1e-9);
        assert!(t_error(&[]).is_err());
    }

    #[test]
    fn compression_ratio_examples() {
        assert_eq!(compression_ratio(100, 6400, 64).unwrap(), 1.0);
        assert!((compression_ratio(100, 800, 64).unwrap() - 8.0).abs() < 1e-9);
        assert_eq!(compression_ratio(0, 800, 64).unwrap(), 0.0);
        assert!(compression_ratio(10, 0, 64).is_err());
        let a = compression_ratio(1234, 999, 64).unwrap();
        let b = compression_ratio(1234, 1998, 64).unwrap();
        assert_eq!(a, 2.0 * b);
    }

    #[test]
    fn aggregation_and_normalization() {
        let pos = sf(0, Polarity::Positive, 2, vec![3, 0, 200, 0]);
        let neg = sf(0, Polarity::Negative, 2, vec![1, 2, 0, 300]);
        let img = AggregatedEventImage::from_subframes(&[pos, neg]).unwrap();
        assert_eq!(img.signed, vec![2, -2, 200, -300]);
        assert_eq!(img.to_u8(), vec![129, 125, 255, 0]);
    }

    #[test]
    fn psnr_against_blank_coding() {
        // 4x4 original with 4 cells at +1 and 2 at -3; coded is empty
        let mut counts = vec![0u32; 16];
        counts[..4].fill(1);
        let pos = sf(0, Polarity::Positive, 4, counts);
        let mut counts = vec![0u32; 16];
        counts[10] = 3;
        counts[11] = 3;
        let neg = sf(0, Polarity::Negative, 4, counts);
        let orig = vec![pos.clone(), neg.clone()];
        let coded = vec![
            HistogramSubframe::zeros(0, Polarity::Positive, 4, 4),
            HistogramSubframe::zeros(0, Polarity::Negative, 4, 4),
        ];
        let m = spatial_metrics(&orig, &coded, 99.0).unwrap();
        let rmse = ((4.0 * 1.0 + 2.0 * 9.0) / 16.0f64).sqrt();
        assert!((m.psnr - 20.0 * (255.0 / rmse).log10()).abs() < 1e-9);
        let same = spatial_metrics(&orig, &orig, 99.0).unwrap();
        assert_eq!(same.psnr, 99.0);
        assert_eq!(same.ssim, 1.0);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        let a = vec![HistogramSubframe::zeros(0, Polarity::Positive, 4, 4)];
        let b = vec![HistogramSubframe::zeros(0, Polarity::Positive, 5, 4)];
        assert!(spatial_metrics(&a, &b, 99.0).is_err());
        let c = vec![HistogramSubframe::zeros(1, Polarity::Positive, 4, 4)];
        assert!(spatial_metrics(&a, &c, 99.0).is_err());
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_reflexive(a in prop::collection::vec(any::<u8>(), 120), b in prop::collection::vec(any::<u8>(), 120)) {
            let s_ab = ssim(&a, &b, 12, 10).unwrap();
            let s_ba = ssim(&b, &a, 12, 10).unwrap();
            prop_assert!((s_ab - s_ba).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&s_ab));
            prop_assert_eq!(ssim(&a, &a, 12, 10).unwrap(), 1.0);
            prop_assert_eq!(ssim(&a[..20], &a[..20], 5, 4).unwrap(), 1.0);
        }

        #[test]
        fn t_error_shift_and_scale(ts in prop::collection::vec((0.0f64..1.0, 0.0f64..0.1), 1..50),
                                   shift in -100.0f64..100.0, scale in 0.001f64..1000.0) {
            let base: Vec<(f64, f64)> = ts.iter().map(|&(t, d)| (t, t - d)).collect();
            let e = t_error(&[base.clone()]).unwrap();
            let shifted: Vec<(f64, f64)> = base.iter().map(|&(o, q)| (o + shift, q + shift)).collect();
            let scaled: Vec<(f64, f64)> = base.iter().map(|&(o, q)| (o * scale, q * scale)).collect();
            prop_assert!((t_error(&[shifted]).unwrap() - e).abs() < 1e-9 * (1.0 + shift.abs()));
            prop_assert!((t_error(&[scaled]).unwrap() - scale * e).abs() < 1e-9 * scale.max(1.0));
        }
    }
}
