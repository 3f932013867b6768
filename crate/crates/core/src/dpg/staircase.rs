//! Staircase aggregation: each pyramid level is fused with the downsampled
//! trail of the levels above it, then the final map is resized to the gating
//! grid and collapsed over channels.

use super::{DpgError, FeaturePyramid, StaircaseParams};
use ndarray::{concatenate, Array1, Array2, Array3, Axis};

/// Depthwise 3x3 convolution with stride 2 and clamp-to-edge padding.
///
/// Edge padding replicates the border sample, so a channelwise-constant
/// input stays constant whenever its kernel sums to one. Output spatial size
/// is `ceil(h / 2) x ceil(w / 2)`; the kernel must be `(C, 3, 3)` for a
/// `(C, h, w)` input.
pub fn depthwise_stride2(x: &Array3<f64>, kernel: &Array3<f64>) -> Array3<f64> {
    let (c, h, w) = x.dim();
    assert_eq!(
        kernel.dim(),
        (c, 3, 3),
        "kernel shape must match input channels"
    );
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Array3::zeros((c, oh, ow));
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..3 {
                    let sy = ((2 * oy + dy) as isize - 1).clamp(0, h as isize - 1) as usize;
                    for dx in 0..3 {
                        let sx = ((2 * ox + dx) as isize - 1).clamp(0, w as isize - 1) as usize;
                        acc += x[[ch, sy, sx]] * kernel[[ch, dy, dx]];
                    }
                }
                out[[ch, oy, ox]] = acc;
            }
        }
    }
    out
}

/// Bilinear resize with half-pixel centers, per channel.
///
/// Sampling at the original size reproduces the input exactly; constants map
/// to constants.
pub fn bilinear_resize(x: &Array3<f64>, out_h: usize, out_w: usize) -> Array3<f64> {
    let (c, h, w) = x.dim();
    assert!(out_h > 0 && out_w > 0, "target size must be positive");
    let scale_y = h as f64 / out_h as f64;
    let scale_x = w as f64 / out_w as f64;
    let mut out = Array3::zeros((c, out_h, out_w));
    for oy in 0..out_h {
        let sy = ((oy as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let fy = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = ((ox as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let fx = sx - x0 as f64;
            for ch in 0..c {
                let top = x[[ch, y0, x0]] * (1.0 - fx) + x[[ch, y0, x1]] * fx;
                let bottom = x[[ch, y1, x0]] * (1.0 - fx) + x[[ch, y1, x1]] * fx;
                out[[ch, oy, ox]] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    out
}

fn check_stair(
    level: &str,
    got: (usize, usize, usize),
    want: (usize, usize, usize),
) -> Result<(), DpgError> {
    if (got.1, got.2) != (want.1, want.2) {
        return Err(DpgError::StairShape {
            level: level.into(),
            detail: format!(
                "downsampled trail is {}x{}, level is {}x{}",
                got.1, got.2, want.1, want.2
            ),
        });
    }
    Ok(())
}

/// Runs the staircase: `O2 = dw(P2)`, `O3 = dw([P3; O2])`, `O4 = dw([P4; O3])`,
/// fuses `[P5; O4]` (4C channels), resizes it to the gating grid, sums over
/// channels, and flattens row-major to a length `S^2` vector.
pub fn staircase_forward(
    pyramid: &FeaturePyramid,
    params: &StaircaseParams,
) -> Result<Array1<f64>, DpgError> {
    let c = pyramid.channels();
    if params.gating_size == 0 {
        return Err(DpgError::InvalidGatingSize);
    }
    let kernels = [
        ("dw2", &params.dw2, c),
        ("dw3", &params.dw3, 2 * c),
        ("dw4", &params.dw4, 3 * c),
    ];
    for (name, tensor, want_c) in kernels {
        if tensor.dim() != (want_c, 3, 3) {
            return Err(DpgError::ShapeMismatch {
                tensor: name.into(),
                expected: vec![want_c, 3, 3],
                got: vec![tensor.dim().0, tensor.dim().1, tensor.dim().2],
            });
        }
    }
    let (p2, p3, p4, p5) = (
        pyramid.level(0),
        pyramid.level(1),
        pyramid.level(2),
        pyramid.level(3),
    );

    let o2 = depthwise_stride2(p2, &params.dw2);
    check_stair("P3", o2.dim(), p3.dim())?;
    let x3 = concatenate(Axis(0), &[p3.view(), o2.view()]).expect("spatial dims were just checked");

    let o3 = depthwise_stride2(&x3, &params.dw3);
    check_stair("P4", o3.dim(), p4.dim())?;
    let x4 = concatenate(Axis(0), &[p4.view(), o3.view()]).expect("spatial dims were just checked");

    let o4 = depthwise_stride2(&x4, &params.dw4);
    check_stair("P5", o4.dim(), p5.dim())?;
    let fused =
        concatenate(Axis(0), &[p5.view(), o4.view()]).expect("spatial dims were just checked");

    let resized = bilinear_resize(&fused, params.gating_size, params.gating_size);
    let summed: Array2<f64> = resized.sum_axis(Axis(0));
    Ok(Array1::from_iter(summed.iter().copied()))
}
