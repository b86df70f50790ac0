mod common;

use proptest::prelude::*;
use rand::Rng;
use splatsem_core::imaging::{laplacian_sharpness, psnr, ssim, Image};

/// Direct SSIM: for every valid 11x11 window, weighted moments from an explicit 2D kernel.
fn ssim_direct(a: &Image, b: &Image) -> f64 {
    let g: Vec<f64> = (0..11).map(|i| (-((i as f64 - 5.0).powi(2)) / 4.5).exp()).collect();
    let mut kernel = vec![0.0; 121];
    for y in 0..11 {
        for x in 0..11 {
            kernel[y * 11 + x] = g[x] * g[y];
        }
    }
    let s: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for ch in 0..a.channels {
        let mut acc = 0.0;
        let mut count = 0;
        for y0 in 0..=a.height - 11 {
            for x0 in 0..=a.width - 11 {
                let (mut mx, mut my) = (0.0, 0.0);
                for y in 0..11 {
                    for x in 0..11 {
                        let w = kernel[y * 11 + x];
                        mx += w * a.get(x0 + x, y0 + y, ch) as f64;
                        my += w * b.get(x0 + x, y0 + y, ch) as f64;
                    }
                }
                let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
                for y in 0..11 {
                    for x in 0..11 {
                        let w = kernel[y * 11 + x];
                        let dx = a.get(x0 + x, y0 + y, ch) as f64 - mx;
                        let dy = b.get(x0 + x, y0 + y, ch) as f64 - my;
                        vx += w * dx * dx;
                        vy += w * dy * dy;
                        cxy += w * dx * dy;
                    }
                }
                acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += acc / count as f64;
    }
    total / a.channels as f64
}

fn random_image(seed: u64, w: usize, h: usize, c: usize) -> Image {
    let mut r = common::rng(seed);
    Image::new(w, h, c, (0..w * h * c).map(|_| r.random_range(0.0..1.0)).collect()).unwrap()
}

#[test]
fn ssim_against_negative_matches_direct_oracle() {
    let a = random_image(1, 19, 15, 3);
    let neg = Image::new(a.width, a.height, 3, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
    let got = ssim(&a, &neg).unwrap();
    let expect = ssim_direct(&a, &neg);
    assert!((got - expect).abs() < 1e-9, "{got} vs {expect}");
    assert!(got < 0.5);
}

#[test]
fn psnr_uniform_offset_is_twenty_db() {
    let a = Image::filled(8, 8, 3, 0.25);
    let b = Image::new(8, 8, 3, a.data.iter().map(|&v| (v as f64 + 0.1) as f32).collect()).unwrap();
    let expect = 10.0 * (1.0 / ((0.25f32 + 0.1) as f64 - 0.25).powi(2)).log10();
    let got = psnr(&a, &b).unwrap();
    assert!((got - expect).abs() < 1e-9);
    assert!((got - 20.0).abs() < 1e-5);
}

#[test]
fn checkerboard_sharper_than_blurred() {
    let n = 12;
    let board = Image::new(n, n, 1, (0..n * n).map(|p| ((p / n + p % n) % 2) as f32).collect()).unwrap();
    let mut blurred = board.clone();
    for y in 1..n - 1 {
        for x in 1..n - 1 {
            let mut s = 0.0;
            for dy in 0..3 {
                for dx in 0..3 {
                    s += board.get(x + dx - 1, y + dy - 1, 0);
                }
            }
            blurred.data[y * n + x] = s / 9.0;
        }
    }
    assert!(laplacian_sharpness(&board).unwrap() > laplacian_sharpness(&blurred).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn metrics_are_symmetric(seed in any::<u64>()) {
        let a = random_image(seed, 13, 12, 1);
        let b = random_image(seed.wrapping_add(1), 13, 12, 1);
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert!((ssim(&a, &b).unwrap() - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((ssim(&a, &b).unwrap() - ssim_direct(&a, &b)).abs() < 1e-9);
    }
}
