//! Parallel-beam Radon transform, filtered backprojection, blur kernels,
//! 2-D convolution and grayscale image I/O.
//!
//! Pixel `(r, c)` of an `h × w` image sits at `x = c - (w-1)/2`,
//! `y = (h-1)/2 - r`. The projection at angle `θ` and offset `s` integrates
//! along the line `x cos θ + y sin θ = s`. Detector offsets are centered and
//! spaced `Δs = √(h² + w²) / n_det`, so the detector row spans the diagonal.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;
use rayon::prelude::*;
use rustfft::{FftNum, FftPlanner};
use rustfft::num_complex::Complex;

use crate::error::{check_dim, Error, Result};
use crate::scalar::Real;

/// Grayscale image with pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage<T> {
    pixels: Array2<T>,
}

impl<T: Real> GrayImage<T> {
    /// Clamps `pixels` into `[0, 1]`.
    pub fn new(pixels: Array2<T>) -> Result<Self> {
        if pixels.is_empty() {
            return Err(Error::Empty("image without pixels"));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image pixels"));
        }
        Ok(GrayImage {
            pixels: pixels.mapv(clamp01),
        })
    }

    pub fn zeros(h: usize, w: usize) -> Result<Self> {
        Self::new(Array2::zeros((h, w)))
    }

    pub fn height(&self) -> usize {
        self.pixels.nrows()
    }

    pub fn width(&self) -> usize {
        self.pixels.ncols()
    }

    pub fn pixels(&self) -> ArrayView2<'_, T> {
        self.pixels.view()
    }

    pub fn into_pixels(self) -> Array2<T> {
        self.pixels
    }

    /// Row-major flattening, the feature layout used by the experiments.
    pub fn to_vec(&self) -> Vec<T> {
        self.pixels.iter().copied().collect()
    }
}

#[inline]
fn clamp01<T: Real>(v: T) -> T {
    v.max(T::zero()).min(T::one())
}

/// Projection data: `data[[k, j]]` is the line integral at detector `k` and
/// angle `angles[j] = j π / n_ang`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram<T> {
    data: Array2<T>,
    angles: Array1<T>,
}

impl<T: Real> Sinogram<T> {
    pub fn new(data: Array2<T>) -> Result<Self> {
        let (n_det, n_ang) = data.dim();
        if n_det == 0 || n_ang == 0 {
            return Err(Error::Empty("sinogram"));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sinogram"));
        }
        Ok(Sinogram {
            data,
            angles: uniform_angles(n_ang),
        })
    }

    pub fn n_det(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_ang(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> ArrayView2<'_, T> {
        self.data.view()
    }

    pub fn angles(&self) -> &Array1<T> {
        &self.angles
    }

    pub fn into_data(self) -> Array2<T> {
        self.data
    }

    /// Column-major flattening (one projection after another).
    pub fn to_vec(&self) -> Vec<T> {
        self.data.t().iter().copied().collect()
    }
}

pub fn uniform_angles<T: Real>(n_ang: usize) -> Array1<T> {
    let step = T::lit(std::f64::consts::PI) / T::count(n_ang);
    (0..n_ang).map(|j| T::count(j) * step).collect()
}

/// Detector spacing for an `h × w` field of view.
pub fn detector_spacing<T: Real>(h: usize, w: usize, n_det: usize) -> T {
    (T::count(h * h + w * w)).sqrt() / T::count(n_det)
}

/// Bilinear sample at continuous `(row, col)`, zero outside the image.
#[inline]
fn bilinear<T: Real>(img: ArrayView2<T>, row: T, col: T) -> T {
    let (h, w) = img.dim();
    let r0 = row.floor();
    let c0 = col.floor();
    let fr = row - r0;
    let fc = col - c0;
    let (Some(r0), Some(c0)) = (r0.to_i64(), c0.to_i64()) else {
        return T::zero();
    };
    let at = |r: i64, c: i64| -> T {
        if r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w {
            img[[r as usize, c as usize]]
        } else {
            T::zero()
        }
    };
    let one = T::one();
    (one - fr) * ((one - fc) * at(r0, c0) + fc * at(r0, c0 + 1))
        + fr * ((one - fc) * at(r0 + 1, c0) + fc * at(r0 + 1, c0 + 1))
}

/// Discrete Radon transform: `n_det × n_ang` sinogram.
///
/// Each projection samples the bilinear interpolant of the image at unit
/// steps along the line and sums, which equals rotating the image and
/// summing its columns.
pub fn radon<T: Real>(img: ArrayView2<T>, n_ang: usize, n_det: usize) -> Result<Sinogram<T>> {
    let (h, w) = img.dim();
    if h == 0 || w == 0 {
        return Err(Error::Empty("radon: image"));
    }
    if n_ang == 0 || n_det == 0 {
        return Err(Error::invalid("radon needs at least one angle and one detector"));
    }
    if img.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("radon input"));
    }
    let ds: T = detector_spacing(h, w, n_det);
    let diag = T::count(h * h + w * w).sqrt();
    let n_t = diag.ceil().to_usize().unwrap_or(1) + 1;
    let half = |n: usize| T::count(n - 1) / T::lit(2.0);
    let (cx, cy, ct, cs) = (half(w), half(h), half(n_t), half(n_det));
    let angles: Array1<T> = uniform_angles(n_ang);
    let columns: Vec<Vec<T>> = angles
        .as_slice()
        .expect("contiguous")
        .par_iter()
        .map(|&theta| {
            let (sin, cos) = theta.sin_cos();
            (0..n_det)
                .map(|k| {
                    let s = (T::count(k) - cs) * ds;
                    let mut acc = T::zero();
                    for j in 0..n_t {
                        let t = T::count(j) - ct;
                        let x = s * cos - t * sin;
                        let y = s * sin + t * cos;
                        acc += bilinear(img, cy - y, x + cx);
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let data = Array2::from_shape_fn((n_det, n_ang), |(k, j)| columns[j][k]);
    Sinogram::new(data)
}

/// Ramp-filters every projection with `|ξ|` in the frequency domain.
///
/// Projections are zero-padded to the next power of two `≥ 2 n_det`.
pub fn ramp_filter<T: Real + FftNum>(sino: &Sinogram<T>, spacing: T) -> Array2<T> {
    let (n_det, n_ang) = sino.data.dim();
    let len = (2 * n_det).next_power_of_two();
    let fft = FftPlanner::<T>::new().plan_fft_forward(len);
    let ifft = FftPlanner::<T>::new().plan_fft_inverse(len);
    let denom = T::count(len) * spacing;
    let ramp: Vec<T> = (0..len)
        .map(|j| T::count(j.min(len - j)) / denom)
        .collect();
    let scale = T::count(len).recip();
    let filtered: Vec<Vec<T>> = (0..n_ang)
        .into_par_iter()
        .map(|a| {
            let mut buf: Vec<Complex<T>> = (0..len)
                .map(|k| Complex::new(if k < n_det { sino.data[[k, a]] } else { T::zero() }, T::zero()))
                .collect();
            fft.process(&mut buf);
            for (b, &r) in buf.iter_mut().zip(&ramp) {
                *b *= r;
            }
            ifft.process(&mut buf);
            buf[..n_det].iter().map(|c| c.re * scale).collect()
        })
        .collect();
    Array2::from_shape_fn((n_det, n_ang), |(k, a)| filtered[a][k])
}

/// Filtered backprojection without the final clamp.
pub fn iradon_raw<T: Real + FftNum>(sino: &Sinogram<T>, out_h: usize, out_w: usize) -> Result<Array2<T>> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Empty("iradon: output size"));
    }
    let n_det = sino.n_det();
    let ds: T = detector_spacing(out_h, out_w, n_det);
    let q = ramp_filter(sino, ds);
    let trig: Vec<(T, T)> = sino.angles.iter().map(|a| a.sin_cos()).collect();
    let half = |n: usize| T::count(n - 1) / T::lit(2.0);
    let (cx, cy, cs) = (half(out_w), half(out_h), half(n_det));
    let last = T::count(n_det - 1);
    let scale = T::lit(std::f64::consts::PI) / T::count(sino.n_ang());
    let rows: Vec<Vec<T>> = (0..out_h)
        .into_par_iter()
        .map(|r| {
            let y = cy - T::count(r);
            (0..out_w)
                .map(|c| {
                    let x = T::count(c) - cx;
                    let mut acc = T::zero();
                    for (a, &(sin, cos)) in trig.iter().enumerate() {
                        let u = (x * cos + y * sin) / ds + cs;
                        if u < T::zero() || u > last {
                            continue;
                        }
                        let k0 = u.floor().to_usize().unwrap_or(0).min(n_det - 1);
                        let f = u - T::count(k0);
                        let v0 = q[[k0, a]];
                        let v1 = if k0 + 1 < n_det { q[[k0 + 1, a]] } else { T::zero() };
                        acc += v0 + f * (v1 - v0);
                    }
                    acc * scale
                })
                .collect()
        })
        .collect();
    Ok(Array2::from_shape_fn((out_h, out_w), |(r, c)| rows[r][c]))
}

/// Filtered backprojection clamped to `[0, 1]`.
pub fn iradon<T: Real + FftNum>(sino: &Sinogram<T>, out_h: usize, out_w: usize) -> Result<GrayImage<T>> {
    GrayImage::new(iradon_raw(sino, out_h, out_w)?)
}

/// 9×9 Gaussian blur with σ = 2, normalized to unit sum.
pub fn gaussian_blur_kernel<T: Real>() -> Array2<T> {
    let raw = Array2::from_shape_fn((9, 9), |(i, j)| {
        let (u, v) = (i as f64 - 4.0, j as f64 - 4.0);
        (-(u * u + v * v) / 8.0).exp()
    });
    let total: f64 = raw.iter().sum();
    raw.mapv(|v| T::lit(v / total))
}

/// 9×9 horizontal motion blur: central row `1/9`, zero elsewhere.
pub fn motion_blur_kernel<T: Real>() -> Array2<T> {
    let mut k = Array2::zeros((9, 9));
    k.row_mut(4).fill(T::lit(9.0).recip());
    k
}

/// Same-size convolution with zero padding; the kernel is anchored at
/// `(p/2, q/2)`.
pub fn convolve2d<T: Real>(img: ArrayView2<T>, kernel: ArrayView2<T>) -> Result<Array2<T>> {
    let (h, w) = img.dim();
    let (p, q) = kernel.dim();
    if p == 0 || q == 0 {
        return Err(Error::Empty("convolution kernel"));
    }
    if p > h || q > w {
        return Err(Error::invalid(format!(
            "convolution kernel {p}x{q} larger than image {h}x{w}"
        )));
    }
    let (ar, ac) = ((p / 2) as isize, (q / 2) as isize);
    let rows: Vec<Vec<T>> = (0..h)
        .into_par_iter()
        .map(|i| {
            (0..w)
                .map(|j| {
                    let mut acc = T::zero();
                    for u in 0..p {
                        let si = i as isize - (u as isize - ar);
                        if si < 0 || si >= h as isize {
                            continue;
                        }
                        for v in 0..q {
                            let sj = j as isize - (v as isize - ac);
                            if sj < 0 || sj >= w as isize {
                                continue;
                            }
                            acc += img[[si as usize, sj as usize]] * kernel[[u, v]];
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    Ok(Array2::from_shape_fn((h, w), |(i, j)| rows[i][j]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlurKind {
    Gaussian,
    Motion,
}

impl BlurKind {
    pub fn kernel<T: Real>(self) -> Array2<T> {
        match self {
            BlurKind::Gaussian => gaussian_blur_kernel(),
            BlurKind::Motion => motion_blur_kernel(),
        }
    }
}

pub fn blur<T: Real>(img: &GrayImage<T>, kind: BlurKind) -> Result<GrayImage<T>> {
    GrayImage::new(convolve2d(img.pixels(), kind.kernel::<T>().view())?)
}

/// Rasterized disk of value `value` and radius `radius_frac · min(h, w) / 2`.
pub fn disk_phantom<T: Real>(h: usize, w: usize, radius_frac: f64, value: f64) -> Result<GrayImage<T>> {
    let r = radius_frac * h.min(w) as f64 / 2.0;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    GrayImage::new(Array2::from_shape_fn((h, w), |(i, j)| {
        let (dy, dx) = (i as f64 - cy, j as f64 - cx);
        if dx * dx + dy * dy <= r * r {
            T::lit(value)
        } else {
            T::zero()
        }
    }))
}

/// Random face-like shape: an elliptical head, two eyes and a mouth bar, with
/// jittered positions, sizes and intensities.
pub fn shape_phantom<T: Real, R: Rng + ?Sized>(h: usize, w: usize, rng: &mut R) -> Result<GrayImage<T>> {
    let (hf, wf) = (h as f64, w as f64);
    let cy = hf / 2.0 + rng.random_range(-0.05..0.05) * hf;
    let cx = wf / 2.0 + rng.random_range(-0.05..0.05) * wf;
    let ry = hf * rng.random_range(0.30..0.42);
    let rx = wf * rng.random_range(0.24..0.36);
    let tilt: f64 = rng.random_range(-0.3..0.3);
    let skin = rng.random_range(0.45..0.8);
    let eye = rng.random_range(0.0..0.2);
    let eye_r = rx * rng.random_range(0.12..0.22);
    let eye_dx = rx * rng.random_range(0.35..0.5);
    let eye_dy = -ry * rng.random_range(0.2..0.35);
    let mouth_dy = ry * rng.random_range(0.35..0.55);
    let mouth_hw = rx * rng.random_range(0.25..0.5);
    let mouth_hh = ry * rng.random_range(0.04..0.1);
    let mouth = rng.random_range(0.1..0.35);
    let background = rng.random_range(0.0..0.15);
    let (st, ct) = tilt.sin_cos();
    GrayImage::new(Array2::from_shape_fn((h, w), |(i, j)| {
        let (y0, x0) = (i as f64 - cy, j as f64 - cx);
        let (x, y) = (ct * x0 + st * y0, -st * x0 + ct * y0);
        let mut v = background;
        if (x / rx).powi(2) + (y / ry).powi(2) <= 1.0 {
            v = skin;
            for side in [-1.0, 1.0] {
                let (ex, ey) = (x - side * eye_dx, y - eye_dy);
                if ex * ex + ey * ey <= eye_r * eye_r {
                    v = eye;
                }
            }
            if (y - mouth_dy).abs() <= mouth_hh && x.abs() <= mouth_hw {
                v = mouth;
            }
        }
        T::lit(v)
    }))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail<V>(&self, message: impl Into<String>) -> Result<V> {
        Err(Error::Parse {
            offset: self.pos,
            message: message.into(),
        })
    }

    fn skip_space_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn uint(&mut self, what: &str) -> Result<u32> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            if self.pos >= self.bytes.len() {
                return self.fail(format!("unexpected end of data reading {what}"));
            }
            return self.fail(format!("expected {what}"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).expect("ascii digits");
        text.parse().or_else(|_| {
            self.pos = start;
            self.fail(format!("{what} out of range"))
        })
    }
}

/// Decodes PGM (`P2`, `P5`) or PPM (`P3`, `P6`) bytes. Color pixels are
/// converted with luminance weights `(0.299, 0.587, 0.114)`.
pub fn decode_pnm<T: Real>(bytes: &[u8]) -> Result<GrayImage<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < 2 || bytes[0] != b'P' {
        return cur.fail("missing P magic number");
    }
    let (binary, channels) = match bytes[1] {
        b'2' => (false, 1),
        b'5' => (true, 1),
        b'3' => (false, 3),
        b'6' => (true, 3),
        _ => {
            cur.pos = 1;
            return cur.fail("unsupported magic number");
        }
    };
    cur.pos = 2;
    let w = cur.uint("width")? as usize;
    let h = cur.uint("height")? as usize;
    let maxval = cur.uint("maxval")?;
    if w == 0 || h == 0 {
        return cur.fail("zero image dimension");
    }
    if maxval == 0 || maxval > 65535 {
        return cur.fail(format!("maxval {maxval} outside 1..=65535"));
    }
    let count = w * h * channels;
    let mut samples = Vec::with_capacity(count);
    if binary {
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return cur.fail("expected single whitespace before raster");
        }
        cur.pos += 1;
        let width = if maxval > 255 { 2 } else { 1 };
        let need = count * width;
        if bytes.len() - cur.pos < need {
            cur.pos = bytes.len();
            return cur.fail(format!("truncated raster: need {need} bytes"));
        }
        for chunk in bytes[cur.pos..cur.pos + need].chunks(width) {
            let v = if width == 2 {
                u32::from(chunk[0]) << 8 | u32::from(chunk[1])
            } else {
                u32::from(chunk[0])
            };
            samples.push(v);
        }
    } else {
        for _ in 0..count {
            samples.push(cur.uint("sample")?);
        }
    }
    if let Some(pos) = samples.iter().position(|&v| v > maxval) {
        return Err(Error::Parse {
            offset: cur.pos,
            message: format!("sample {pos} exceeds maxval {maxval}"),
        });
    }
    let max = f64::from(maxval);
    let px = Array2::from_shape_fn((h, w), |(i, j)| {
        let base = (i * w + j) * channels;
        let v = if channels == 1 {
            f64::from(samples[base]) / max
        } else {
            (0.299 * f64::from(samples[base]) + 0.587 * f64::from(samples[base + 1]) + 0.114 * f64::from(samples[base + 2]))
                / max
        };
        T::lit(v)
    });
    GrayImage::new(px)
}

/// Binary `P5` with maxval 255 and round-half-up quantization.
pub fn encode_pgm<T: Real>(img: &GrayImage<T>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.pixels.iter().map(|&v| (v.as_f64() * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8));
    out
}

pub fn read_pgm<T: Real>(path: impl AsRef<Path>) -> Result<GrayImage<T>> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_pgm<T: Real>(img: &GrayImage<T>, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_pgm(img))?;
    Ok(())
}

/// Stacks equally sized images as rows of a feature matrix.
pub fn stack_rows<T: Real>(rows: &[Vec<T>]) -> Result<Array2<T>> {
    let first = rows.first().ok_or(Error::Empty("no rows to stack"))?;
    let d = first.len();
    for r in rows {
        check_dim("stacked row length", d, r.len())?;
    }
    Ok(Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((h, w), |_| rng.random::<f64>())
    }

    #[test]
    fn radon_shape_and_zero() {
        let s = radon(Array2::<f64>::zeros((10, 7)).view(), 5, 13).unwrap();
        assert_eq!(s.data().dim(), (13, 5));
        assert!(s.data().iter().all(|&v| v == 0.0));
        assert!(radon(Array2::<f64>::zeros((0, 3)).view(), 5, 5).is_err());
    }

    #[test]
    fn radon_linear() {
        let a = random_image(12, 9, 1);
        let b = random_image(12, 9, 2);
        let combo = &a * 0.3 + &b * -1.7;
        let lhs = radon(combo.view(), 7, 15).unwrap();
        let ra = radon(a.view(), 7, 15).unwrap();
        let rb = radon(b.view(), 7, 15).unwrap();
        let rhs = ra.data().to_owned() * 0.3 + rb.data().to_owned() * -1.7;
        assert!((lhs.data().to_owned() - rhs).iter().all(|v| v.abs() < 1e-8));
    }

    // The rasterized edge is not rotation invariant, so each projection is
    // compared with the angular mean.
    #[test]
    fn radon_disk_rotation_and_mass() {
        let disk = disk_phantom::<f64>(64, 64, 0.6, 1.0).unwrap();
        let n_det = 95;
        let s = radon(disk.pixels(), 36, n_det).unwrap();
        let ds: f64 = detector_spacing(64, 64, n_det);
        let mass: f64 = disk.pixels().sum();
        let mean = s.data().mean_axis(ndarray::Axis(1)).unwrap();
        for j in 0..36 {
            let data = s.data();
            let col = data.column(j);
            let diff = (&col - &mean).mapv(|v| v * v).sum().sqrt();
            let rel = diff / mean.mapv(|v| v * v).sum().sqrt();
            assert!(rel <= 0.02, "angle {j}");
            let proj: f64 = col.sum() * ds;
            assert!((proj - mass).abs() <= 0.01 * mass, "angle {j}: {proj} vs {mass}");
        }
    }

    #[test]
    fn iradon_zero_and_roundtrip() {
        let zero = Sinogram::new(Array2::<f64>::zeros((20, 8))).unwrap();
        assert!(iradon(&zero, 10, 10).unwrap().pixels().iter().all(|&v| v == 0.0));
        let disk = disk_phantom::<f64>(64, 64, 0.6, 1.0).unwrap();
        let s = radon(disk.pixels(), 90, 95).unwrap();
        let rec = iradon(&s, 64, 64).unwrap();
        let mse = (&rec.pixels() - &disk.pixels()).mapv(|v| v * v).mean().unwrap();
        assert!(-10.0 * mse.log10() >= 20.0, "psnr {}", -10.0 * mse.log10());
    }

    #[test]
    fn ramp_suppresses_constant_shift() {
        let disk = disk_phantom::<f64>(64, 64, 0.6, 1.0).unwrap();
        let s = radon(disk.pixels(), 90, 95).unwrap();
        // A unit shift is about 3% of the peak projection; on a finite
        // detector the shift is a box, whose ramp response is small but
        // not zero, so the change scales with the shift.
        let shifted = Sinogram::new(s.data().mapv(|v| v + 1.0)).unwrap();
        let a = iradon_raw(&s, 64, 64).unwrap();
        let b = iradon_raw(&shifted, 64, 64).unwrap();
        let interior = |m: &Array2<f64>| m.slice(ndarray::s![16..48, 16..48]).to_owned();
        let (ia, ib) = (interior(&a), interior(&b));
        let rel = (&ib - &ia).mapv(|v| v * v).sum().sqrt() / ia.mapv(|v| v * v).sum().sqrt();
        assert!(rel <= 0.01, "{rel}");
    }

    #[test]
    fn gaussian_kernel_values() {
        let g = gaussian_blur_kernel::<f64>();
        assert!((g.sum() - 1.0).abs() < 1e-12);
        let mut z = 0.0;
        for i in -4i32..=4 {
            for j in -4i32..=4 {
                z += (-f64::from(i * i + j * j) / 8.0).exp();
            }
        }
        assert!((g[[4, 4]] - 1.0 / z).abs() < 1e-15);
        assert_eq!(g[[0, 0]], g[[8, 8]]);
        assert_eq!(g[[1, 3]], g[[3, 1]]);
        assert_eq!(g[[2, 0]], g[[6, 8]]);
    }

    #[test]
    fn motion_kernel_values() {
        let m = motion_blur_kernel::<f64>();
        assert_eq!(m[[4, 0]], 1.0 / 9.0);
        assert_eq!(m[[0, 0]], 0.0);
        let sums: Vec<f64> = m.rows().into_iter().map(|r| r.sum()).collect();
        for (i, s) in sums.iter().enumerate() {
            assert!((s - if i == 4 { 1.0 } else { 0.0 }).abs() < 1e-15);
        }
    }

    #[test]
    fn convolution_examples() {
        let img = random_image(6, 5, 3);
        assert_eq!(convolve2d(img.view(), array![[1.0]].view()).unwrap(), img);
        let two = array![[0.25], [0.75]];
        assert_eq!(convolve2d(two.view(), array![[1.0]].view()).unwrap(), two);
        let c = Array2::from_elem((20, 20), 0.6);
        let out = convolve2d(c.view(), gaussian_blur_kernel::<f64>().view()).unwrap();
        for i in 4..16 {
            for j in 4..16 {
                assert!((out[[i, j]] - 0.6).abs() < 1e-12);
            }
        }
        assert!(out[[0, 0]] < 0.6);
        let stripe = Array2::from_elem((3, 30), 0.4);
        let out = convolve2d(stripe.view(), motion_blur_kernel::<f64>().view());
        assert!(out.is_err());
        let stripe = Array2::from_elem((9, 30), 0.4);
        let out = convolve2d(stripe.view(), motion_blur_kernel::<f64>().view()).unwrap();
        for j in 4..26 {
            assert!((out[[4, j]] - 0.4).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_is_flipped() {
        // Shifting kernel: non-zero at (0, 1) of a 3x3 kernel moves pixels
        // down one row.
        let mut k = Array2::zeros((3, 3));
        k[[0, 1]] = 1.0;
        let img = array![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]];
        let out = convolve2d(img.view(), k.view()).unwrap();
        assert_eq!(out, array![[4.0, 5.0, 6.0], [7.0, 8.0, 9.0], [0.0, 0.0, 0.0]]);
    }

    #[test]
    fn pnm_decoding() {
        let img: GrayImage<f64> = decode_pnm(b"P2\n1 1\n255\n255\n").unwrap();
        assert_eq!(img.pixels()[[0, 0]], 1.0);
        let img: GrayImage<f64> = decode_pnm(b"P2 # comment\n2 1 10\n5 10").unwrap();
        assert_eq!(img.pixels(), array![[0.5, 1.0]]);
        let img: GrayImage<f64> = decode_pnm(&[b"P5 1 1 65535\n".as_slice(), &[0xff, 0xff]].concat()).unwrap();
        assert_eq!(img.pixels()[[0, 0]], 1.0);
        let img: GrayImage<f64> = decode_pnm(b"P3 1 1 255 255 0 0").unwrap();
        assert!((img.pixels()[[0, 0]] - 0.299).abs() < 1e-12);
    }

    #[test]
    fn pnm_errors_carry_offsets() {
        match decode_pnm::<f64>(b"P5 2 2 255\n\x01\x02") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 13),
            other => panic!("{other:?}"),
        }
        match decode_pnm::<f64>(b"P2 2 x") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        assert!(decode_pnm::<f64>(b"P7 1 1 255\n\x00").is_err());
        assert!(decode_pnm::<f64>(b"P2 1 1 255 300").is_err());
        assert!(decode_pnm::<f64>(b"").is_err());
    }

    #[test]
    fn pgm_roundtrip() {
        let img = GrayImage::new(random_image(16, 16, 9)).unwrap();
        let back: GrayImage<f64> = decode_pnm(&encode_pgm(&img)).unwrap();
        let err = (&back.pixels() - &img.pixels()).mapv(f64::abs).fold(0.0f64, |a, &b| a.max(b));
        assert!(err <= 1.0 / 255.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pgm");
        write_pgm(&img, &path).unwrap();
        assert_eq!(read_pgm::<f64>(&path).unwrap(), back);
    }

    #[test]
    fn images_clamp() {
        let img = GrayImage::new(array![[-0.5, 1.5]]).unwrap();
        assert_eq!(img.pixels(), array![[0.0, 1.0]]);
        assert!(GrayImage::new(array![[f64::NAN]]).is_err());
    }

    #[test]
    fn shape_phantoms_vary() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: GrayImage<f64> = shape_phantom(32, 32, &mut rng).unwrap();
        let b: GrayImage<f64> = shape_phantom(32, 32, &mut rng).unwrap();
        assert_ne!(a, b);
        assert!(a.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}
