//! Synthetic rainy-image generation and paired-dataset management.
//!
//! Rain follows the haze-aware model
//! `J = T * (I + sum_i S_i) + (1 - T) * A`: additive oriented streak layers,
//! a smooth atmospheric transmission map, and global airlight. Clean images
//! come from a procedural texture generator so the toolkit is self-contained.
//!
//! Everything is keyed by `(master seed, sample index)`, so samples can be
//! regenerated independently and parallel generation agrees with serial.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageio;
use crate::rng::{
    derive_seed, rng_for, STREAM_CROP, STREAM_FOG, STREAM_RAIN, STREAM_SAMPLE, STREAM_STREAK,
    STREAM_TEXTURE,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// One additive streak layer: an impulse field convolved with an oriented
/// line kernel. Angles are degrees from the +x axis with y pointing down,
/// so 90 means vertically falling rain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreakParams {
    pub angle_deg: f64,
    pub length: usize,
    pub density: f64,
    pub intensity: f64,
}

/// Realized parameters of one synthesized sample.
#[derive(Debug, Clone)]
pub struct RainParams<S: Scalar> {
    pub layers: Vec<StreakParams>,
    /// Transmission map `[1,H,W]` in [0,1].
    pub transmission: Tensor<S>,
    /// Global atmospheric light in [0,1].
    pub airlight: f64,
}

/// Sampling ranges for [`RainParams`]. Ranges are inclusive on both ends.
#[derive(Debug, Clone, Copy)]
pub struct RainPreset {
    pub name: &'static str,
    pub n_layers: (usize, usize),
    /// The per-image master direction is drawn from this window; individual
    /// layers jitter around it.
    pub master_angle: (f64, f64),
    pub angle_jitter: f64,
    pub length: (usize, usize),
    pub density: (f64, f64),
    pub intensity: (f64, f64),
    pub fog_strength: (f64, f64),
    pub airlight: (f64, f64),
}

pub const PRESET_DEFAULT: RainPreset = RainPreset {
    name: "default",
    n_layers: (2, 3),
    master_angle: (70.0, 110.0),
    angle_jitter: 20.0,
    length: (9, 15),
    density: (0.002, 0.01),
    intensity: (0.4, 0.8),
    fog_strength: (0.25, 0.5),
    airlight: (0.75, 0.95),
};

/// Degenerate preset: `T = 1`, no streaks, so the rainy image equals the
/// clean image exactly.
pub const PRESET_IDENTITY: RainPreset = RainPreset {
    name: "identity",
    n_layers: (0, 0),
    master_angle: (90.0, 90.0),
    angle_jitter: 0.0,
    length: (1, 1),
    density: (0.0, 0.0),
    intensity: (0.0, 0.0),
    fog_strength: (0.0, 0.0),
    airlight: (0.8, 0.8),
};

pub const PRESET_LIGHT: RainPreset = RainPreset {
    name: "light",
    n_layers: (1, 2),
    length: (7, 11),
    density: (0.001, 0.004),
    intensity: (0.2, 0.45),
    fog_strength: (0.1, 0.25),
    ..PRESET_DEFAULT
};

pub const PRESET_HEAVY: RainPreset = RainPreset {
    name: "heavy",
    n_layers: (3, 4),
    length: (11, 19),
    density: (0.008, 0.02),
    intensity: (0.6, 0.95),
    fog_strength: (0.4, 0.65),
    ..PRESET_DEFAULT
};

impl RainPreset {
    pub fn by_name(name: &str) -> Option<RainPreset> {
        match name {
            "default" => Some(PRESET_DEFAULT),
            "identity" => Some(PRESET_IDENTITY),
            "light" => Some(PRESET_LIGHT),
            "heavy" => Some(PRESET_HEAVY),
            _ => None,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

fn uniform_usize(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    if lo >= hi {
        return lo;
    }
    lo + (rng.random::<u64>() % (hi - lo + 1) as u64) as usize
}

/// Smooth value noise in [0,1]: a coarse uniform grid upsampled with
/// Catmull-Rom interpolation.
fn value_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let cell = cell.max(2);
    let gh = h.div_ceil(cell) + 1;
    let gw = w.div_ceil(cell) + 1;
    let grid: Vec<f64> = (0..gh * gw).map(|_| rng.random()).collect();
    let at = |gy: isize, gx: isize| -> f64 {
        let gy = gy.clamp(0, gh as isize - 1) as usize;
        let gx = gx.clamp(0, gw as isize - 1) as usize;
        grid[gy * gw + gx]
    };
    let catmull = |p0: f64, p1: f64, p2: f64, p3: f64, t: f64| -> f64 {
        0.5 * (2.0 * p1
            + (-p0 + p2) * t
            + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
            + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
    };
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let fy = y as f64 / cell as f64;
        let iy = fy.floor() as isize;
        let ty = fy - iy as f64;
        for x in 0..w {
            let fx = x as f64 / cell as f64;
            let ix = fx.floor() as isize;
            let tx = fx - ix as f64;
            let mut rows = [0.0; 4];
            for (r, row) in rows.iter_mut().enumerate() {
                let gy = iy + r as isize - 1;
                *row = catmull(
                    at(gy, ix - 1),
                    at(gy, ix),
                    at(gy, ix + 1),
                    at(gy, ix + 2),
                    tx,
                );
            }
            let v = catmull(rows[0], rows[1], rows[2], rows[3], ty);
            out[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Deterministic clean-image source: smooth colored noise plus a handful of
/// soft-edged shapes so there are edges and structure worth restoring.
pub fn procedural_clean<S: Scalar>(h: usize, w: usize, seed: u64) -> Tensor<S> {
    let mut rng = rng_for(seed, &[STREAM_TEXTURE]);
    let coarse = (h.min(w) / 3).max(4);
    let fine = (h.min(w) / 8).max(2);
    let mut channels: Vec<Vec<f64>> = Vec::with_capacity(3);
    for _ in 0..3 {
        let a = value_noise(h, w, coarse, &mut rng);
        let b = value_noise(h, w, fine, &mut rng);
        channels.push(a.iter().zip(&b).map(|(&x, &y)| 0.65 * x + 0.35 * y).collect());
    }

    let n_shapes = uniform_usize(&mut rng, 2, 5);
    for _ in 0..n_shapes {
        let cx = uniform(&mut rng, 0.0, w as f64);
        let cy = uniform(&mut rng, 0.0, h as f64);
        let rx = uniform(&mut rng, w as f64 / 10.0, w as f64 / 3.0);
        let ry = uniform(&mut rng, h as f64 / 10.0, h as f64 / 3.0);
        let soft = uniform(&mut rng, 1.0, 4.0);
        let round = rng.random::<f64>() < 0.5;
        let color = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 - cx) / rx;
                let dy = (y as f64 - cy) / ry;
                let d = if round {
                    (dx * dx + dy * dy).sqrt()
                } else {
                    dx.abs().max(dy.abs())
                };
                // soft edge around d = 1
                let alpha = (1.0 - (d - 1.0) * soft).clamp(0.0, 1.0);
                if alpha <= 0.0 {
                    continue;
                }
                for (c, chan) in channels.iter_mut().enumerate() {
                    let v = &mut chan[y * w + x];
                    *v = *v * (1.0 - alpha) + color[c] * alpha;
                }
            }
        }
    }

    // rescale into [0.05, 0.95] so synthesis headroom exists
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for chan in &channels {
        for &v in chan {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let span = (hi - lo).max(1e-9);
    let mut data = Vec::with_capacity(3 * h * w);
    for chan in &channels {
        data.extend(chan.iter().map(|&v| 0.05 + 0.9 * (v - lo) / span));
    }
    Tensor::new(vec![3, h, w], data.iter().map(|&v| S::from_f64(v)).collect())
        .expect("procedural shape")
}

/// Sparse Bernoulli impulses convolved with an oriented line kernel of unit
/// mass, scaled by `intensity`. Nonnegative everywhere.
pub fn generate_streak_layer<S: Scalar>(
    h: usize,
    w: usize,
    p: &StreakParams,
    seed: u64,
) -> Result<Tensor<S>> {
    if !(0.0..=1.0).contains(&p.density) {
        return Err(Error::InvalidArgument(format!(
            "streak density must be in [0,1], got {}",
            p.density
        )));
    }
    if p.length == 0 {
        return Err(Error::InvalidArgument("streak length must be positive".to_string()));
    }
    let mut rng = rng_for(seed, &[STREAM_STREAK]);
    let mut field = vec![0.0f64; h * w];
    for v in &mut field {
        if rng.random::<f64>() < p.density {
            *v = 1.0;
        }
    }

    let rad = p.angle_deg.to_radians();
    let (dx, dy) = (rad.cos(), rad.sin());
    let center = (p.length as f64 - 1.0) / 2.0;
    let tap = 1.0 / p.length as f64;
    let offsets: Vec<(isize, isize)> = (0..p.length)
        .map(|t| {
            let d = t as f64 - center;
            ((d * dx).round() as isize, (d * dy).round() as isize)
        })
        .collect();

    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let imp = field[y * w + x];
            if imp == 0.0 {
                continue;
            }
            for &(ox, oy) in &offsets {
                let ty = y as isize + oy;
                let tx = x as isize + ox;
                if ty < 0 || tx < 0 || ty >= h as isize || tx >= w as isize {
                    continue;
                }
                out[ty as usize * w + tx as usize] += tap * imp;
            }
        }
    }
    Tensor::new(
        vec![1, h, w],
        out.iter().map(|&v| S::from_f64(v * p.intensity)).collect(),
    )
}

/// Smooth transmission field in `[1 - fog_strength, 1]` built from
/// low-frequency value noise.
pub fn generate_transmission<S: Scalar>(
    h: usize,
    w: usize,
    fog_strength: f64,
    seed: u64,
) -> Result<Tensor<S>> {
    if !(0.0..=1.0).contains(&fog_strength) {
        return Err(Error::InvalidArgument(format!(
            "fog_strength must be in [0,1], got {fog_strength}"
        )));
    }
    if fog_strength == 0.0 {
        return Ok(Tensor::ones(&[1, h, w]));
    }
    let mut rng = rng_for(seed, &[STREAM_FOG]);
    let cell = (h.min(w) / 4).max(4);
    let noise = value_noise(h, w, cell, &mut rng);
    Tensor::new(
        vec![1, h, w],
        noise
            .iter()
            .map(|&n| S::from_f64((1.0 - fog_strength * n).clamp(0.0, 1.0)))
            .collect(),
    )
}

/// Draw realized rain parameters for one sample.
pub fn sample_rain_params<S: Scalar>(
    preset: &RainPreset,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<RainParams<S>> {
    let mut rng = rng_for(seed, &[STREAM_RAIN]);
    let n = uniform_usize(&mut rng, preset.n_layers.0, preset.n_layers.1);
    let master = uniform(&mut rng, preset.master_angle.0, preset.master_angle.1);
    let layers = (0..n)
        .map(|_| StreakParams {
            angle_deg: master + uniform(&mut rng, -preset.angle_jitter, preset.angle_jitter),
            length: uniform_usize(&mut rng, preset.length.0, preset.length.1),
            density: uniform(&mut rng, preset.density.0, preset.density.1),
            intensity: uniform(&mut rng, preset.intensity.0, preset.intensity.1),
        })
        .collect();
    let fog = uniform(&mut rng, preset.fog_strength.0, preset.fog_strength.1);
    let airlight = uniform(&mut rng, preset.airlight.0, preset.airlight.1);
    Ok(RainParams {
        layers,
        transmission: generate_transmission(h, w, fog, seed)?,
        airlight,
    })
}

/// Sum of all realized streak layers for a sample, `[1,H,W]`.
pub fn rain_streak_sum<S: Scalar>(
    rp: &RainParams<S>,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<Tensor<S>> {
    let mut total = Tensor::zeros(&[1, h, w]);
    for (i, layer) in rp.layers.iter().enumerate() {
        let streaks = generate_streak_layer::<S>(h, w, layer, derive_seed(seed, &[i as u64]))?;
        for (t, &s) in total.data_mut().iter_mut().zip(streaks.data()) {
            *t = *t + s;
        }
    }
    Ok(total)
}

/// Evaluate `J = T * (I + sum S_i) + (1 - T) * A` without clamping; callers
/// clamp to [0,1] when storing images.
pub fn synthesize_rain<S: Scalar>(
    clean: &Tensor<S>,
    rp: &RainParams<S>,
    seed: u64,
) -> Result<Tensor<S>> {
    let (h, w) = match clean.shape() {
        &[3, h, w] => (h, w),
        other => {
            return Err(Error::ShapeMismatch {
                context: "synthesize_rain",
                expected: "3xHxW".to_string(),
                got: crate::error::shape_string(other),
            })
        }
    };
    if rp.transmission.shape() != [1, h, w] {
        return Err(Error::ShapeMismatch {
            context: "synthesize_rain transmission",
            expected: format!("1x{h}x{w}"),
            got: crate::error::shape_string(rp.transmission.shape()),
        });
    }
    let streaks = rain_streak_sum(rp, h, w, seed)?;
    let a = S::from_f64(rp.airlight);
    let one = S::one();
    let mut out = Tensor::zeros(&[3, h, w]);
    let plane = h * w;
    let t = rp.transmission.data();
    let s = streaks.data();
    let i = clean.data();
    let j = out.data_mut();
    for c in 0..3 {
        for p in 0..plane {
            let tv = t[p];
            j[c * plane + p] = tv * (i[c * plane + p] + s[p]) + (one - tv) * a;
        }
    }
    Ok(out)
}

/// A clean/rainy pair with the provenance needed to regenerate it.
#[derive(Debug, Clone)]
pub struct PairedSample<S: Scalar> {
    /// Clean image `[3,H,W]` in [0,1].
    pub clean: Tensor<S>,
    /// Rainy image `[3,H,W]`, clamped to [0,1] as stored on disk.
    pub rainy: Tensor<S>,
    pub params: RainParams<S>,
    pub seed: u64,
}

/// Generate sample `index` of a dataset keyed by `master_seed`. Bit-identical
/// regardless of generation order.
pub fn generate_pair<S: Scalar>(
    preset: &RainPreset,
    h: usize,
    w: usize,
    master_seed: u64,
    index: u64,
) -> Result<PairedSample<S>> {
    let seed = derive_seed(master_seed, &[STREAM_SAMPLE, index]);
    let clean = procedural_clean::<S>(h, w, seed);
    let params = sample_rain_params::<S>(preset, h, w, seed)?;
    let rainy = synthesize_rain(&clean, &params, seed)?.clamp01();
    Ok(PairedSample { clean, rainy, params, seed })
}

/// Pick the crop origin for an `h x w` image, deterministic in the seed.
pub fn sample_crop_origin(h: usize, w: usize, size: usize, seed: u64) -> Result<(usize, usize)> {
    if size % 16 != 0 {
        return Err(Error::InvalidArgument(format!(
            "crop size must be a multiple of 16, got {size}"
        )));
    }
    if size > h || size > w {
        return Err(Error::InvalidArgument(format!(
            "crop size {size} exceeds image {h}x{w}"
        )));
    }
    let mut rng = rng_for(seed, &[STREAM_CROP]);
    let y0 = uniform_usize(&mut rng, 0, h - size);
    let x0 = uniform_usize(&mut rng, 0, w - size);
    Ok((y0, x0))
}

/// Copy a `size x size` window starting at `(y0, x0)` from every channel.
pub fn crop_window<S: Scalar>(
    img: &Tensor<S>,
    y0: usize,
    x0: usize,
    size: usize,
) -> Result<Tensor<S>> {
    let (c, h, w) = match img.shape() {
        &[c, h, w] => (c, h, w),
        other => {
            return Err(Error::ShapeMismatch {
                context: "crop_window",
                expected: "CxHxW".to_string(),
                got: crate::error::shape_string(other),
            })
        }
    };
    if y0 + size > h || x0 + size > w {
        return Err(Error::InvalidArgument(format!(
            "window {size}x{size} at ({y0},{x0}) exceeds image {h}x{w}"
        )));
    }
    let mut out = Tensor::zeros(&[c, size, size]);
    let src = img.data();
    let dst = out.data_mut();
    for ci in 0..c {
        for y in 0..size {
            let s = (ci * h + y0 + y) * w + x0;
            let d = (ci * size + y) * size;
            dst[d..d + size].copy_from_slice(&src[s..s + size]);
        }
    }
    Ok(out)
}

/// Crop the same window from the clean and rainy images (and the
/// transmission map, keeping the sample internally consistent).
pub fn random_crop_pair<S: Scalar>(
    sample: &PairedSample<S>,
    size: usize,
    seed: u64,
) -> Result<PairedSample<S>> {
    let (h, w) = match sample.clean.shape() {
        &[3, h, w] => (h, w),
        other => {
            return Err(Error::ShapeMismatch {
                context: "random_crop_pair",
                expected: "3xHxW".to_string(),
                got: crate::error::shape_string(other),
            })
        }
    };
    let (y0, x0) = sample_crop_origin(h, w, size, seed)?;
    Ok(PairedSample {
        clean: crop_window(&sample.clean, y0, x0, size)?,
        rainy: crop_window(&sample.rainy, y0, x0, size)?,
        params: RainParams {
            layers: sample.params.layers.clone(),
            transmission: crop_window(&sample.params.transmission, y0, x0, size)?,
            airlight: sample.params.airlight,
        },
        seed: sample.seed,
    })
}

pub const MANIFEST_NAME: &str = "manifest.tsv";

/// One dataset entry: paired PNGs under `clean/` and `rain/` plus the seed
/// that regenerates the pair.
#[derive(Debug, Clone)]
pub struct DatasetEntry {
    pub stem: String,
    pub clean_path: PathBuf,
    pub rain_path: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub entries: Vec<DatasetEntry>,
}

impl Dataset {
    /// Generate `count` pairs into `out_dir` (layout `clean/NNN.png`,
    /// `rain/NNN.png`, plus a `stem<TAB>seed` manifest).
    pub fn generate<S: Scalar>(
        out_dir: &Path,
        count: usize,
        h: usize,
        w: usize,
        preset: &RainPreset,
        master_seed: u64,
    ) -> Result<Dataset> {
        let clean_dir = out_dir.join("clean");
        let rain_dir = out_dir.join("rain");
        std::fs::create_dir_all(&clean_dir).map_err(|e| Error::io(&clean_dir, e))?;
        std::fs::create_dir_all(&rain_dir).map_err(|e| Error::io(&rain_dir, e))?;

        let mut entries = Vec::with_capacity(count);
        let mut manifest = String::new();
        for i in 0..count {
            let pair = generate_pair::<S>(preset, h, w, master_seed, i as u64)?;
            let stem = format!("{i:03}");
            let clean_path = clean_dir.join(format!("{stem}.png"));
            let rain_path = rain_dir.join(format!("{stem}.png"));
            imageio::write_image(&clean_path, &pair.clean)?;
            imageio::write_image(&rain_path, &pair.rainy)?;
            manifest.push_str(&format!("{stem}\t{}\n", pair.seed));
            entries.push(DatasetEntry { stem, clean_path, rain_path, seed: pair.seed });
        }
        let manifest_path = out_dir.join(MANIFEST_NAME);
        let mut f = std::fs::File::create(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        f.write_all(manifest.as_bytes()).map_err(|e| Error::io(&manifest_path, e))?;
        Ok(Dataset { root: out_dir.to_path_buf(), entries })
    }

    /// Load a dataset directory via its manifest. Entries whose PNG pair is
    /// incomplete are skipped with a warning.
    pub fn load(dir: &Path) -> Result<Dataset> {
        let manifest_path = dir.join(MANIFEST_NAME);
        let text = std::fs::read_to_string(&manifest_path)
            .map_err(|e| Error::io(&manifest_path, e))?;
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.splitn(2, '\t');
            let stem = parts.next().unwrap_or_default().to_string();
            let seed: u64 = parts
                .next()
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| {
                    Error::Data(format!(
                        "malformed manifest line {} in {}",
                        lineno + 1,
                        manifest_path.display()
                    ))
                })?;
            let clean_path = dir.join("clean").join(format!("{stem}.png"));
            let rain_path = dir.join("rain").join(format!("{stem}.png"));
            if !clean_path.exists() || !rain_path.exists() {
                log::warn!("skipping unpaired entry `{stem}` in {}", dir.display());
                continue;
            }
            entries.push(DatasetEntry { stem, clean_path, rain_path, seed });
        }
        if entries.is_empty() {
            return Err(Error::Data(format!("no usable pairs in {}", dir.display())));
        }
        Ok(Dataset { root: dir.to_path_buf(), entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Read pair `i` from disk as `[3,H,W]` tensors in [0,1].
    pub fn read_pair<S: Scalar>(&self, i: usize) -> Result<(Tensor<S>, Tensor<S>)> {
        let entry = &self.entries[i];
        Ok((
            imageio::read_image(&entry.clean_path)?,
            imageio::read_image(&entry.rain_path)?,
        ))
    }
}
