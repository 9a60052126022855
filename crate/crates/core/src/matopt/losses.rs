//! Appearance losses between a reference photograph and a rendered image:
//! masked channel statistics, masked Gram matrices over the filter-bank
//! features, and masked mean absolute color difference. Each loss has an
//! exact gradient with respect to the rendered pixels.

use crate::error::{Error, Result};
use crate::img::{ImageRgb, Planes};
use crate::retrieval::{builtin_features, builtin_features_adjoint, FeatureMap, SegmentationMask};

/// Sign with `sgn(0) = 0` (f64::signum maps 0 to 1, which would inject
/// spurious gradient at exact minima).
#[inline]
fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_mask(image: &ImageRgb, mask: &SegmentationMask) -> Result<usize> {
    if mask.width != image.width || mask.height != image.height {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width, mask.height, image.width, image.height
        )));
    }
    let n = mask.area();
    if n == 0 {
        return Err(Error::Empty(format!(
            "component mask '{}' selects no pixels",
            mask.label
        )));
    }
    Ok(n)
}

/// Per-channel mean and population variance over the masked pixels.
pub fn masked_mean_var(
    image: &ImageRgb,
    mask: &SegmentationMask,
) -> Result<([f64; 3], [f64; 3])> {
    let n = check_mask(image, mask)? as f64;
    let mut mean = [0.0; 3];
    let mut sq = [0.0; 3];
    for (px, &m) in image.data.iter().zip(&mask.bits) {
        if m {
            for c in 0..3 {
                mean[c] += px[c];
                sq[c] += px[c] * px[c];
            }
        }
    }
    for c in 0..3 {
        mean[c] /= n;
        sq[c] = sq[c] / n - mean[c] * mean[c];
    }
    Ok((mean, sq))
}

/// Statistics loss: sum over channels of |Δmean| + |Δvariance| between the
/// reference region and the rendered region (each under its own mask).
pub fn loss_stat(
    reference: &ImageRgb,
    ref_mask: &SegmentationMask,
    render: &ImageRgb,
    cad_mask: &SegmentationMask,
) -> Result<f64> {
    loss_stat_with_grad(reference, ref_mask, render, cad_mask).map(|(m, v, _)| m + v)
}

/// [`loss_stat`] split into its mean/variance parts, with the gradient with
/// respect to the rendered pixels.
pub fn loss_stat_with_grad(
    reference: &ImageRgb,
    ref_mask: &SegmentationMask,
    render: &ImageRgb,
    cad_mask: &SegmentationMask,
) -> Result<(f64, f64, Vec<[f64; 3]>)> {
    let (mu_ref, var_ref) = masked_mean_var(reference, ref_mask)?;
    let (mu_ren, var_ren) = masked_mean_var(render, cad_mask)?;
    let n = cad_mask.area() as f64;
    let mut l_mean = 0.0;
    let mut l_var = 0.0;
    for c in 0..3 {
        l_mean += (mu_ref[c] - mu_ren[c]).abs();
        l_var += (var_ref[c] - var_ren[c]).abs();
    }
    let mut grad = vec![[0.0; 3]; render.data.len()];
    for (g, (px, &m)) in grad.iter_mut().zip(render.data.iter().zip(&cad_mask.bits)) {
        if m {
            for c in 0..3 {
                let d_mean = sgn(mu_ren[c] - mu_ref[c]) / n;
                let d_var = sgn(var_ren[c] - var_ref[c]) * 2.0 * (px[c] - mu_ren[c]) / n;
                g[c] = d_mean + d_var;
            }
        }
    }
    Ok((l_mean, l_var, grad))
}

/// Masked Gram matrix: `G[a][b] = Σ_masked f_a·f_b / N`. Symmetric PSD.
pub fn gram_matrix(features: &FeatureMap, mask: &SegmentationMask) -> Result<Vec<Vec<f64>>> {
    let p = &features.planes;
    if mask.width != p.width || mask.height != p.height {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not match features {}x{}",
            mask.width, mask.height, p.width, p.height
        )));
    }
    let n = mask.area();
    if n == 0 {
        return Err(Error::Empty(format!(
            "component mask '{}' selects no pixels",
            mask.label
        )));
    }
    let ch = p.channels;
    let mut g = vec![vec![0.0; ch]; ch];
    for (i, &m) in mask.bits.iter().enumerate() {
        if !m {
            continue;
        }
        for a in 0..ch {
            let fa = p.data[a * p.width * p.height + i];
            for b in a..ch {
                g[a][b] += fa * p.data[b * p.width * p.height + i];
            }
        }
    }
    for a in 0..ch {
        for b in a..ch {
            g[a][b] /= n as f64;
            g[b][a] = g[a][b];
        }
    }
    Ok(g)
}

/// Texture loss on arbitrary feature maps: entrywise |ΔGram|, summed.
pub fn loss_vgg_features(
    ref_features: &FeatureMap,
    ref_mask: &SegmentationMask,
    render_features: &FeatureMap,
    cad_mask: &SegmentationMask,
) -> Result<f64> {
    if ref_features.planes.channels != render_features.planes.channels {
        return Err(Error::Dimension(format!(
            "feature channel counts differ: {} vs {}",
            ref_features.planes.channels, render_features.planes.channels
        )));
    }
    let g_ref = gram_matrix(ref_features, ref_mask)?;
    let g_ren = gram_matrix(render_features, cad_mask)?;
    let mut loss = 0.0;
    for (ra, rb) in g_ref.iter().zip(&g_ren) {
        for (a, b) in ra.iter().zip(rb) {
            loss += (a - b).abs();
        }
    }
    Ok(loss)
}

/// Texture loss with the built-in filter bank as extractor.
pub fn loss_vgg(
    reference: &ImageRgb,
    ref_mask: &SegmentationMask,
    render: &ImageRgb,
    cad_mask: &SegmentationMask,
) -> Result<f64> {
    loss_vgg_features(
        &builtin_features(reference),
        ref_mask,
        &builtin_features(render),
        cad_mask,
    )
}

/// [`loss_vgg`] with the gradient with respect to the rendered pixels,
/// backpropagated through the filter bank's exact adjoint.
pub fn loss_vgg_with_grad(
    reference: &ImageRgb,
    ref_mask: &SegmentationMask,
    render: &ImageRgb,
    cad_mask: &SegmentationMask,
) -> Result<(f64, Vec<[f64; 3]>)> {
    let f_ref = builtin_features(reference);
    let f_ren = builtin_features(render);
    let g_ref = gram_matrix(&f_ref, ref_mask)?;
    let g_ren = gram_matrix(&f_ren, cad_mask)?;
    let ch = f_ren.planes.channels;
    let mut loss = 0.0;
    for a in 0..ch {
        for b in 0..ch {
            loss += (g_ref[a][b] - g_ren[a][b]).abs();
        }
    }
    // dL/df_a(p) = (2/N) Σ_b sgn(G_ren[a][b] − G_ref[a][b]) · f_b(p), masked
    let p = &f_ren.planes;
    let (w, h) = (p.width, p.height);
    let n = cad_mask.area() as f64;
    let mut f_cot = Planes::new(w, h, ch);
    for (i, &m) in cad_mask.bits.iter().enumerate() {
        if !m {
            continue;
        }
        for a in 0..ch {
            let mut acc = 0.0;
            for b in 0..ch {
                let s = sgn(g_ren[a][b] - g_ref[a][b]);
                if s != 0.0 {
                    acc += s * p.data[b * w * h + i];
                }
            }
            f_cot.data[a * w * h + i] = 2.0 * acc / n;
        }
    }
    Ok((loss, builtin_features_adjoint(&f_cot)))
}

/// Photometric loss: mean absolute difference over the overlap mask, averaged
/// over pixels and channels. An empty overlap contributes 0 and is flagged.
pub fn loss_rgb(
    reference: &ImageRgb,
    render: &ImageRgb,
    overlap: &SegmentationMask,
) -> Result<(f64, bool)> {
    let (l, empty, _) = loss_rgb_with_grad(reference, render, overlap)?;
    Ok((l, empty))
}

/// [`loss_rgb`] plus the gradient with respect to the rendered pixels.
pub fn loss_rgb_with_grad(
    reference: &ImageRgb,
    render: &ImageRgb,
    overlap: &SegmentationMask,
) -> Result<(f64, bool, Vec<[f64; 3]>)> {
    if overlap.width != render.width || overlap.height != render.height {
        return Err(Error::Dimension(format!(
            "overlap mask {}x{} does not match image {}x{}",
            overlap.width, overlap.height, render.width, render.height
        )));
    }
    let n = overlap.area();
    let mut grad = vec![[0.0; 3]; render.data.len()];
    if n == 0 {
        return Ok((0.0, true, grad));
    }
    let scale = 1.0 / (3.0 * n as f64);
    let mut loss = 0.0;
    for (i, &m) in overlap.bits.iter().enumerate() {
        if !m {
            continue;
        }
        for c in 0..3 {
            let d = render.data[i][c] - reference.data[i][c];
            loss += d.abs() * scale;
            grad[i][c] = sgn(d) * scale;
        }
    }
    Ok((loss, false, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_of(w: usize, h: usize, bits: Vec<bool>) -> SegmentationMask {
        SegmentationMask::new(w, h, bits, "test".into(), 1.0, 0).unwrap()
    }

    fn full_mask(w: usize, h: usize) -> SegmentationMask {
        mask_of(w, h, vec![true; w * h])
    }

    fn pattern_image(w: usize, h: usize, salt: u64) -> ImageRgb {
        let mut img = ImageRgb::new(w, h);
        for i in 0..w * h {
            let t = (i as u64 * 2654435761 + salt) as f64;
            img.data[i] = [
                (t * 1e-6).sin().abs(),
                (t * 3e-6).cos().abs(),
                (t * 7e-6).sin().abs(),
            ];
        }
        img
    }

    #[test]
    fn constant_region_stats() {
        let img = ImageRgb::filled(4, 4, [0.5; 3]);
        let (mean, var) = masked_mean_var(&img, &full_mask(4, 4)).unwrap();
        for c in 0..3 {
            assert!((mean[c] - 0.5).abs() < 1e-15);
            assert!(var[c].abs() < 1e-15);
        }
    }

    #[test]
    fn two_pixel_stats_closed_form() {
        let mut img = ImageRgb::new(2, 1);
        img.data = vec![[0.0; 3], [1.0; 3]];
        let (mean, var) = masked_mean_var(&img, &full_mask(2, 1)).unwrap();
        for c in 0..3 {
            assert!((mean[c] - 0.5).abs() < 1e-15);
            assert!((var[c] - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn stats_match_two_pass_oracle() {
        let img = pattern_image(8, 8, 7);
        let bits: Vec<bool> = (0..64).map(|i| i % 3 != 0).collect();
        let mask = mask_of(8, 8, bits.clone());
        let (mean, var) = masked_mean_var(&img, &mask).unwrap();
        // independent two-pass computation
        for c in 0..3 {
            let vals: Vec<f64> = img
                .data
                .iter()
                .zip(&bits)
                .filter(|(_, &m)| m)
                .map(|(p, _)| p[c])
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
            assert!((mean[c] - m).abs() < 1e-12);
            assert!((var[c] - v).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_is_an_error() {
        let img = ImageRgb::filled(2, 2, [0.1; 3]);
        let mask = mask_of(2, 2, vec![false; 4]);
        assert!(masked_mean_var(&img, &mask).is_err());
    }

    #[test]
    fn identical_inputs_zero_stat_loss() {
        let img = pattern_image(8, 8, 1);
        let m = full_mask(8, 8);
        assert_eq!(loss_stat(&img, &m, &img, &m).unwrap(), 0.0);
    }

    #[test]
    fn constant_offset_stat_loss_is_three_d() {
        let a = ImageRgb::filled(4, 4, [0.2; 3]);
        let b = ImageRgb::filled(4, 4, [0.45; 3]);
        let m = full_mask(4, 4);
        let l = loss_stat(&a, &m, &b, &m).unwrap();
        assert!((l - 3.0 * 0.25).abs() < 1e-12);
    }

    #[test]
    fn stat_gradient_matches_finite_differences() {
        let reference = pattern_image(6, 6, 3);
        let mut render = pattern_image(6, 6, 11);
        let ref_mask = mask_of(6, 6, (0..36).map(|i| i % 4 != 1).collect());
        let cad_mask = mask_of(6, 6, (0..36).map(|i| i % 5 != 2).collect());
        let (m0, v0, grad) =
            loss_stat_with_grad(&reference, &ref_mask, &render, &cad_mask).unwrap();
        let base = m0 + v0;
        let h = 1e-7;
        for &(i, c) in &[(7usize, 0usize), (20, 1), (33, 2)] {
            render.data[i][c] += h;
            let l = loss_stat(&reference, &ref_mask, &render, &cad_mask).unwrap();
            render.data[i][c] -= h;
            let fd = (l - base) / h;
            assert!(
                (grad[i][c] - fd).abs() < 1e-5,
                "pixel {i} ch {c}: {} vs {fd}",
                grad[i][c]
            );
        }
    }

    #[test]
    fn zero_features_zero_gram() {
        let f = FeatureMap {
            planes: Planes::new(4, 4, 3),
            source: crate::retrieval::FeatureSource::Ingested,
        };
        let g = gram_matrix(&f, &full_mask(4, 4)).unwrap();
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_constant_gram() {
        let mut planes = Planes::new(3, 3, 1);
        planes.data.iter_mut().for_each(|v| *v = 0.4);
        let f = FeatureMap {
            planes,
            source: crate::retrieval::FeatureSource::Ingested,
        };
        let g = gram_matrix(&f, &full_mask(3, 3)).unwrap();
        assert_eq!(g.len(), 1);
        assert!((g[0][0] - 0.16).abs() < 1e-12);
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let img = pattern_image(16, 16, 9);
        let f = builtin_features(&img);
        let mask = mask_of(16, 16, (0..256).map(|i| i % 7 != 0).collect());
        let g = gram_matrix(&f, &mask).unwrap();
        let ch = g.len();
        // random quadratic forms must be (numerically) non-negative
        for trial in 0..20 {
            let x: Vec<f64> = (0..ch)
                .map(|i| ((trial * 31 + i * 7 + 1) as f64 * 0.37).sin())
                .collect();
            let mut q = 0.0;
            for a in 0..ch {
                for b in 0..ch {
                    q += x[a] * g[a][b] * x[b];
                }
            }
            assert!(q >= -1e-9, "trial {trial}: {q}");
        }
    }

    #[test]
    fn identical_inputs_zero_vgg_loss() {
        let img = pattern_image(16, 16, 2);
        let m = full_mask(16, 16);
        assert_eq!(loss_vgg(&img, &m, &img, &m).unwrap(), 0.0);
    }

    #[test]
    fn shifted_image_with_shifted_interior_masks_zero_vgg() {
        let (w, h) = (48usize, 48usize);
        let pattern = |x: usize, y: usize| {
            let v = ((x as f64 * 0.7).sin() + (y as f64 * 1.3).cos() + 2.0) / 4.0;
            [v, v * 0.5, v * 0.25]
        };
        let (sx, sy) = (3usize, 2usize);
        let mut base = ImageRgb::new(w, h);
        let mut shifted = ImageRgb::new(w, h);
        for y in 0..h {
            for x in 0..w {
                base.set(x, y, pattern(x, y));
                shifted.set(x, y, pattern(x.wrapping_sub(sx), y.wrapping_sub(sy)));
            }
        }
        // interior masks offset by the same shift, away from the filter reach
        let reach = 16;
        let mut base_bits = vec![false; w * h];
        let mut shift_bits = vec![false; w * h];
        for y in reach..(h - reach - sy) {
            for x in reach..(w - reach - sx) {
                base_bits[y * w + x] = true;
                shift_bits[(y + sy) * w + (x + sx)] = true;
            }
        }
        let l = loss_vgg(
            &base,
            &mask_of(w, h, base_bits),
            &shifted,
            &mask_of(w, h, shift_bits),
        )
        .unwrap();
        assert!(l < 1e-9, "{l}");
    }

    #[test]
    fn vgg_gradient_matches_finite_differences() {
        let reference = pattern_image(12, 12, 4);
        let mut render = pattern_image(12, 12, 21);
        let ref_mask = mask_of(12, 12, (0..144).map(|i| i % 4 != 1).collect());
        let cad_mask = mask_of(12, 12, (0..144).map(|i| i % 3 != 2).collect());
        let (base, grad) =
            loss_vgg_with_grad(&reference, &ref_mask, &render, &cad_mask).unwrap();
        let h = 1e-6;
        for &(i, c) in &[(30usize, 0usize), (77, 1), (100, 2)] {
            render.data[i][c] += h;
            let hi = loss_vgg(&reference, &ref_mask, &render, &cad_mask).unwrap();
            render.data[i][c] -= 2.0 * h;
            let lo = loss_vgg(&reference, &ref_mask, &render, &cad_mask).unwrap();
            render.data[i][c] += h;
            let fd = (hi - lo) / (2.0 * h);
            assert!(
                (grad[i][c] - fd).abs() < 1e-4 * fd.abs().max(1.0),
                "pixel {i} ch {c}: {} vs {fd} (base {base})",
                grad[i][c]
            );
        }
    }

    #[test]
    fn identical_images_zero_rgb_loss() {
        let img = pattern_image(8, 8, 5);
        let (l, empty) = loss_rgb(&img, &img, &full_mask(8, 8)).unwrap();
        assert_eq!(l, 0.0);
        assert!(!empty);
    }

    #[test]
    fn constant_offset_rgb_loss() {
        let a = pattern_image(8, 8, 6);
        let mut b = a.clone();
        for px in &mut b.data {
            for c in px.iter_mut() {
                *c += 0.1;
            }
        }
        let (l, _) = loss_rgb(&a, &b, &full_mask(8, 8)).unwrap();
        assert!((l - 0.1).abs() < 1e-12);
    }

    #[test]
    fn empty_overlap_contributes_zero_with_warning() {
        let img = pattern_image(4, 4, 8);
        let (l, empty) = loss_rgb(&img, &img, &mask_of(4, 4, vec![false; 16])).unwrap();
        assert_eq!(l, 0.0);
        assert!(empty);
    }

    #[test]
    fn rgb_gradient_matches_finite_differences() {
        let reference = pattern_image(6, 6, 13);
        let mut render = pattern_image(6, 6, 17);
        let overlap = mask_of(6, 6, (0..36).map(|i| i % 2 == 0).collect());
        let (base, _, grad) = loss_rgb_with_grad(&reference, &render, &overlap).unwrap();
        let h = 1e-7;
        for &(i, c) in &[(0usize, 0usize), (18, 2)] {
            render.data[i][c] += h;
            let (l, _) = loss_rgb(&reference, &render, &overlap).unwrap();
            render.data[i][c] -= h;
            let fd = (l - base) / h;
            assert!((grad[i][c] - fd).abs() < 1e-6, "{} vs {fd}", grad[i][c]);
        }
    }
}
