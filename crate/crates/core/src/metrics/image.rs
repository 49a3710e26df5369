use crate::error::{dim_err, Result};
use crate::feature::PixelMap;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// PSNR reported for (near-)identical images.
pub const PSNR_CAP: f64 = 99.0;

fn check(a: &PixelMap, b: &PixelMap) -> Result<()> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(dim_err(format!(
            "images are {}x{}x{} and {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    if a.data.is_empty() {
        return Err(dim_err("empty image"));
    }
    Ok(())
}

pub fn psnr(a: &PixelMap, b: &PixelMap) -> Result<f64> {
    check(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64;
    Ok(if mse < 1e-10 { PSNR_CAP } else { (10.0 * (1.0 / mse).log10()).min(PSNR_CAP) })
}

/// Normalized 1D Gaussian taps; the 2D window is their outer product.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let c = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-(i as f64 - c).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    w
}

/// Same-size separable filtering with zero padding. The window is symmetric,
/// so this is also its own adjoint.
fn blur(plane: &[f64], h: usize, w: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = SSIM_WINDOW as isize / 2;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let xx = x as isize + k as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let yy = y as isize + k as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn plane(img: &PixelMap, c: usize) -> Vec<f64> {
    img.data.iter().skip(c).step_by(img.channels).copied().collect()
}

/// Mean SSIM over all pixels and channels.
pub fn ssim(a: &PixelMap, b: &PixelMap) -> Result<f64> {
    ssim_impl(a, b, false).map(|(s, _)| s)
}

/// SSIM of `pred` against `gt` and its gradient with respect to `pred`.
pub fn ssim_with_grad(pred: &PixelMap, gt: &PixelMap) -> Result<(f64, PixelMap)> {
    ssim_impl(pred, gt, true).map(|(s, g)| (s, g.expect("gradient requested")))
}

fn ssim_impl(x_img: &PixelMap, y_img: &PixelMap, with_grad: bool) -> Result<(f64, Option<PixelMap>)> {
    check(x_img, y_img)?;
    let (h, w, ch) = (x_img.height, x_img.width, x_img.channels);
    let n = h * w;
    let norm = 1.0 / (n * ch) as f64;
    let taps = gaussian_window();
    let mut total = 0.0;
    let mut grad = with_grad.then(|| PixelMap::zeros(h, w, ch));
    for c in 0..ch {
        let x = plane(x_img, c);
        let y = plane(y_img, c);
        let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).collect::<Vec<_>>();
        let mx = blur(&x, h, w, &taps);
        let my = blur(&y, h, w, &taps);
        let exx = blur(&sq(&x, &x), h, w, &taps);
        let eyy = blur(&sq(&y, &y), h, w, &taps);
        let exy = blur(&sq(&x, &y), h, w, &taps);
        let mut d_mx = vec![0.0; n];
        let mut d_exx = vec![0.0; n];
        let mut d_exy = vec![0.0; n];
        for i in 0..n {
            let a1 = 2.0 * mx[i] * my[i] + SSIM_C1;
            let a2 = 2.0 * (exy[i] - mx[i] * my[i]) + SSIM_C2;
            let b1 = mx[i] * mx[i] + my[i] * my[i] + SSIM_C1;
            let b2 = (exx[i] - mx[i] * mx[i]) + (eyy[i] - my[i] * my[i]) + SSIM_C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if with_grad {
                let g = s * norm;
                d_mx[i] = g * (2.0 * my[i] / a1 - 2.0 * my[i] / a2 - 2.0 * mx[i] / b1 + 2.0 * mx[i] / b2);
                d_exx[i] = -g / b2;
                d_exy[i] = 2.0 * g / a2;
            }
        }
        if let Some(grad) = grad.as_mut() {
            let gm = blur(&d_mx, h, w, &taps);
            let gxx = blur(&d_exx, h, w, &taps);
            let gxy = blur(&d_exy, h, w, &taps);
            for i in 0..n {
                grad.data[i * ch + c] = gm[i] + 2.0 * x[i] * gxx[i] + y[i] * gxy[i];
            }
        }
    }
    Ok((total * norm, grad))
}
