//! Procedural two-domain dataset: instrument scenes with ground-truth masks.
//!
//! Domain X is a pale, warm-toned scene with dark matte instruments; domain Y
//! is darker and red-shifted with bright reflective instruments, specular
//! spots, and a global color cast. The two domains are deliberately far apart
//! in color statistics while sharing the same scene structure, so unpaired
//! translation between them is non-degenerate but learnable at small scale.
//!
//! Every sample is a pure function of (spec, seed, index): each index gets its
//! own derived random stream, so generation order and parallel generation
//! cannot change the output.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::pnm;
use crate::image::{ImageRgb, MaskImage, LUMA_WEIGHTS};
use crate::rng;

/// Instrument pixel fraction must land in this window or the geometry is redrawn.
pub const AREA_BOUNDS: (f64, f64) = (0.02, 0.25);

/// Geometry redraw attempts before giving up on a sample.
const MAX_PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    X,
    Y,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::X => "X",
            Domain::Y => "Y",
        }
    }

    fn id_prefix(self) -> &'static str {
        match self {
            Domain::X => "x",
            Domain::Y => "y",
        }
    }
}

impl std::fmt::Display for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "X" | "x" => Ok(Domain::X),
            "Y" | "y" => Ok(Domain::Y),
            other => Err(Error::Config(format!("unknown domain {other:?}, expected X or Y"))),
        }
    }
}

/// Background model: flat base color, smooth low-frequency blobs, pixel noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BackgroundSpec {
    pub base_rgb: [f64; 3],
    /// Amplitude of uniform per-pixel sensor noise applied to the whole frame.
    pub noise_amplitude: f64,
    /// Number of soft luminance blobs breaking up the flat background.
    pub blob_count: usize,
    /// Peak brightness offset of one blob.
    pub blob_amplitude: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum InstrumentShape {
    /// Constant-width shaft with round caps.
    Capsule,
    /// Shaft tapering to a quarter of its width at the tip.
    Wedge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentSpec {
    /// Gray level sampled uniformly from this range per sample.
    pub gray_range: [f64; 2],
    /// Shaft width as a fraction of image size, sampled per sample.
    pub width_range: [f64; 2],
    pub shape: InstrumentShape,
    /// Strength of the axial sheen stripe; 0 for matte instruments.
    pub highlight: f64,
}

/// Domain-specific clutter layered on top of the clean scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisanceSpec {
    pub specular_count: usize,
    /// Largest specular ellipse radius as a fraction of image size.
    pub specular_size: f64,
    /// Probability that the instrument casts a soft shadow.
    pub shadow_probability: f64,
    /// Color the frame is pulled toward multiplicatively.
    pub cast_rgb: [f64; 3],
    /// 0 disables the cast; 1 scales each channel fully to `cast_rgb`.
    pub cast_strength: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub domain: Domain,
    pub image_size: usize,
    pub seed: u64,
    pub background: BackgroundSpec,
    pub instrument: InstrumentSpec,
    pub nuisance: NuisanceSpec,
}

impl DomainSpec {
    pub fn validate(&self) -> Result<()> {
        fn unit(name: &str, v: f64) -> Result<()> {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0,1], got {v}")))
            }
        }
        fn range(name: &str, r: [f64; 2]) -> Result<()> {
            if r[0] > r[1] || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::Config(format!("{name} must be an ordered range, got {r:?}")));
            }
            Ok(())
        }
        if self.image_size < 16 {
            return Err(Error::Config(format!(
                "image size must be at least 16, got {}",
                self.image_size
            )));
        }
        for (i, &c) in self.background.base_rgb.iter().enumerate() {
            unit(&format!("background base channel {i}"), c)?;
        }
        for (i, &c) in self.nuisance.cast_rgb.iter().enumerate() {
            unit(&format!("cast channel {i}"), c)?;
        }
        unit("noise amplitude", self.background.noise_amplitude)?;
        unit("blob amplitude", self.background.blob_amplitude)?;
        unit("highlight", self.instrument.highlight)?;
        unit("specular size", self.nuisance.specular_size)?;
        unit("shadow probability", self.nuisance.shadow_probability)?;
        unit("cast strength", self.nuisance.cast_strength)?;
        range("gray range", self.instrument.gray_range)?;
        range("width range", self.instrument.width_range)?;
        unit("gray range low", self.instrument.gray_range[0])?;
        unit("gray range high", self.instrument.gray_range[1])?;
        if self.instrument.width_range[0] <= 0.0 || self.instrument.width_range[1] > 0.5 {
            return Err(Error::Config(format!(
                "width range must lie in (0, 0.5], got {:?}",
                self.instrument.width_range
            )));
        }
        Ok(())
    }
}

/// One generated scene: the rendered frame and its exact instrument mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: ImageRgb,
    pub mask: MaskImage,
    pub id: String,
}

/// The two stock domains at 64x64. X is a pale warm bench scene with mid-gray
/// matte instruments. Y is a dim scene under a strong warm cast: its
/// background luminance falls inside X's instrument band and the cast tints
/// the (much darker) instruments, so a segmentor trained on X misfires on raw
/// Y images. Instruments stay the darkest structures in both domains, so
/// luminance structure correlates positively across the translation.
pub fn default_specs() -> (DomainSpec, DomainSpec) {
    let x = DomainSpec {
        domain: Domain::X,
        image_size: 64,
        seed: 11,
        background: BackgroundSpec {
            base_rgb: [0.78, 0.71, 0.59],
            noise_amplitude: 0.03,
            blob_count: 4,
            blob_amplitude: 0.10,
        },
        instrument: InstrumentSpec {
            gray_range: [0.35, 0.55],
            width_range: [0.06, 0.13],
            shape: InstrumentShape::Capsule,
            highlight: 0.0,
        },
        nuisance: NuisanceSpec {
            specular_count: 0,
            specular_size: 0.0,
            shadow_probability: 0.25,
            cast_rgb: [1.0, 1.0, 1.0],
            cast_strength: 0.0,
        },
    };
    let y = DomainSpec {
        domain: Domain::Y,
        image_size: 64,
        seed: 22,
        background: BackgroundSpec {
            base_rgb: [0.45, 0.50, 0.55],
            noise_amplitude: 0.03,
            blob_count: 4,
            blob_amplitude: 0.10,
        },
        instrument: InstrumentSpec {
            gray_range: [0.10, 0.20],
            width_range: [0.06, 0.13],
            shape: InstrumentShape::Capsule,
            highlight: 0.10,
        },
        nuisance: NuisanceSpec {
            specular_count: 3,
            specular_size: 0.06,
            shadow_probability: 0.35,
            cast_rgb: [1.0, 0.55, 0.45],
            cast_strength: 0.55,
        },
    };
    (x, y)
}

/// Instrument geometry in pixel coordinates.
#[derive(Clone, Copy, Debug)]
struct Placement {
    center: (f64, f64),
    /// Unit direction of the shaft axis.
    axis: (f64, f64),
    half_len: f64,
    radius: f64,
}

/// Per-pixel opacity of the instrument, antialiased over a one-pixel band.
///
/// Coverage 1 means the pixel center is at least half a pixel inside the
/// shape, so every full-opacity pixel clears the 0.5 mask threshold.
fn rasterize(shape: InstrumentShape, p: &Placement, size: usize) -> Vec<f64> {
    let mut cov = vec![0.0; size * size];
    let taper = match shape {
        InstrumentShape::Capsule => 1.0,
        InstrumentShape::Wedge => 0.25,
    };
    for y in 0..size {
        for x in 0..size {
            let px = x as f64 + 0.5 - p.center.0;
            let py = y as f64 + 0.5 - p.center.1;
            // Signed position along the axis and distance to the spine.
            let t = px * p.axis.0 + py * p.axis.1;
            let tc = t.clamp(-p.half_len, p.half_len);
            let dx = px - tc * p.axis.0;
            let dy = py - tc * p.axis.1;
            let d = (dx * dx + dy * dy).sqrt();
            // Local radius: constant for capsules, linear taper for wedges.
            let s = (tc + p.half_len) / (2.0 * p.half_len);
            let r = p.radius * (1.0 + (taper - 1.0) * s);
            cov[y * size + x] = (r - d + 0.5).clamp(0.0, 1.0);
        }
    }
    cov
}

/// Perpendicular distance from each pixel center to the (unclamped) shaft axis.
fn axis_distance(p: &Placement, x: usize, y: usize) -> f64 {
    let px = x as f64 + 0.5 - p.center.0;
    let py = y as f64 + 0.5 - p.center.1;
    (px * p.axis.1 - py * p.axis.0).abs()
}

fn uniform(rng: &mut rand_chacha::ChaCha12Rng, lo: f64, hi: f64) -> f64 {
    use rand::Rng as _;
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

/// Draws geometry until the masked area lands inside `AREA_BOUNDS`.
fn place_instrument(
    spec: &DomainSpec,
    rng: &mut rand_chacha::ChaCha12Rng,
) -> Result<(Placement, Vec<f64>)> {
    let s = spec.image_size as f64;
    let lo = (AREA_BOUNDS.0 * s * s).ceil() as usize;
    let hi = (AREA_BOUNDS.1 * s * s).floor() as usize;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let angle = uniform(rng, 0.0, std::f64::consts::PI);
        let p = Placement {
            center: (uniform(rng, 0.30 * s, 0.70 * s), uniform(rng, 0.30 * s, 0.70 * s)),
            axis: (angle.cos(), angle.sin()),
            half_len: uniform(rng, 0.25 * s, 0.45 * s),
            radius: 0.5 * s * uniform(rng, spec.instrument.width_range[0], spec.instrument.width_range[1]),
        };
        let cov = rasterize(spec.instrument.shape, &p, spec.image_size);
        let area = cov.iter().filter(|&&c| c >= 0.5).count();
        if (lo..=hi).contains(&area) {
            return Ok((p, cov));
        }
    }
    Err(Error::Dataset(format!(
        "no instrument placement hit the {:?} area window in {MAX_PLACEMENT_ATTEMPTS} draws; \
         width range {:?} is incompatible with image size {}",
        AREA_BOUNDS, spec.instrument.width_range, spec.image_size
    )))
}

/// Renders the sample at `index`. Pure in (spec, index); does not touch disk.
pub fn sample(spec: &DomainSpec, index: u64) -> Result<Sample> {
    spec.validate()?;
    let size = spec.image_size;
    let n = size * size;
    let tag = format!("synth/{}", spec.domain.tag());
    let mut rng = rng::indexed_stream(spec.seed, &tag, index);

    let (placement, cov) = place_instrument(spec, &mut rng)?;
    let gray = uniform(&mut rng, spec.instrument.gray_range[0], spec.instrument.gray_range[1]);

    // Background: base color plus soft brightness blobs.
    let mut buf = vec![[0.0f64; 3]; n];
    for px in buf.iter_mut() {
        *px = spec.background.base_rgb;
    }
    let s = size as f64;
    for _ in 0..spec.background.blob_count {
        let cx = uniform(&mut rng, 0.0, s);
        let cy = uniform(&mut rng, 0.0, s);
        let sigma = uniform(&mut rng, 0.10 * s, 0.25 * s);
        let amp = uniform(&mut rng, -spec.background.blob_amplitude, spec.background.blob_amplitude);
        for y in 0..size {
            for x in 0..size {
                let d2 = (x as f64 + 0.5 - cx).powi(2) + (y as f64 + 0.5 - cy).powi(2);
                let w = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                for c in &mut buf[y * size + x] {
                    *c += w;
                }
            }
        }
    }

    // Soft shadow: the instrument silhouette displaced and widened, darkening
    // the background before the instrument is composited over it.
    if uniform(&mut rng, 0.0, 1.0) < spec.nuisance.shadow_probability {
        let shadow = Placement {
            center: (placement.center.0 + 0.05 * s, placement.center.1 + 0.07 * s),
            radius: placement.radius * 1.4,
            ..placement
        };
        let shadow_cov = rasterize(spec.instrument.shape, &shadow, size);
        for (px, &sc) in buf.iter_mut().zip(&shadow_cov) {
            for c in px {
                *c *= 1.0 - 0.30 * sc;
            }
        }
    }

    // Instrument: flat gray with an optional sheen stripe along the axis.
    for y in 0..size {
        for x in 0..size {
            let c = cov[y * size + x];
            if c <= 0.0 {
                continue;
            }
            let mut tone = gray;
            if spec.instrument.highlight > 0.0 {
                let d = axis_distance(&placement, x, y) / (0.35 * placement.radius).max(1e-6);
                tone += spec.instrument.highlight * (-d * d).exp();
            }
            for ch in &mut buf[y * size + x] {
                *ch = *ch * (1.0 - c) + tone * c;
            }
        }
    }

    // Specular ellipses: additive washes toward white.
    for _ in 0..spec.nuisance.specular_count {
        let cx = uniform(&mut rng, 0.0, s);
        let cy = uniform(&mut rng, 0.0, s);
        let rx = uniform(&mut rng, 0.01 * s, (spec.nuisance.specular_size * s).max(0.011 * s));
        let ry = uniform(&mut rng, 0.01 * s, (spec.nuisance.specular_size * s).max(0.011 * s));
        let phi = uniform(&mut rng, 0.0, std::f64::consts::PI);
        let strength = uniform(&mut rng, 0.5, 0.9);
        let (cp, sp) = (phi.cos(), phi.sin());
        for y in 0..size {
            for x in 0..size {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let u = (dx * cp + dy * sp) / rx;
                let v = (-dx * sp + dy * cp) / ry;
                let q2 = u * u + v * v;
                if q2 > 9.0 {
                    continue;
                }
                let w = strength * (-2.0 * q2).exp();
                for c in &mut buf[y * size + x] {
                    *c += (1.0 - *c) * w;
                }
            }
        }
    }

    // Global color cast, then sensor noise over the finished frame.
    let cast = spec.nuisance.cast_rgb;
    let cs = spec.nuisance.cast_strength;
    let na = spec.background.noise_amplitude;
    for px in buf.iter_mut() {
        for (c, &k) in px.iter_mut().zip(&cast) {
            *c *= 1.0 - cs * (1.0 - k);
        }
        for c in px {
            *c += uniform(&mut rng, -na, na);
        }
    }

    let mut image = ImageRgb::new(size, size);
    for (i, px) in buf.iter().enumerate() {
        let y = i / size;
        let x = i % size;
        image.set_pixel(
            x,
            y,
            [
                px[0].clamp(0.0, 1.0) as f32,
                px[1].clamp(0.0, 1.0) as f32,
                px[2].clamp(0.0, 1.0) as f32,
            ],
        );
    }

    let mut mask = MaskImage::new(size, size);
    for (l, &c) in mask.labels.iter_mut().zip(&cov) {
        *l = u8::from(c >= 0.5);
    }

    Ok(Sample {
        image,
        mask,
        id: format!("{}{:05}", spec.domain.id_prefix(), index),
    })
}

/// Mean luminance of the pixels outside the mask.
pub fn background_luminance(sample: &Sample) -> f64 {
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, &l) in sample.mask.labels.iter().enumerate() {
        if l == 0 {
            let p = sample.image.pixel(i % sample.image.width, i / sample.image.width);
            sum += LUMA_WEIGHTS
                .iter()
                .zip(&p)
                .map(|(&w, &c)| w * f64::from(c))
                .sum::<f64>();
            count += 1;
        }
    }
    sum / count.max(1) as f64
}

/// File layout constants shared by the writer and the loader.
pub const IMAGES_DIR: &str = "images";
pub const MASKS_DIR: &str = "masks";
pub const SPEC_FILE: &str = "spec.json";

/// Writes n samples under `<root>/<domain>/{images,masks}/` plus `spec.json`.
/// Returns the sample ids in index order.
pub fn generate(spec: &DomainSpec, n: usize, root: &Path) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    spec.validate()?;
    let dir = root.join(spec.domain.tag());
    let images = dir.join(IMAGES_DIR);
    let masks = dir.join(MASKS_DIR);
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let spec_path = dir.join(SPEC_FILE);
    let text = serde_json::to_string_pretty(spec)?;
    fs::write(&spec_path, text).map_err(|e| Error::io(&spec_path, e))?;

    let mut ids = Vec::with_capacity(n);
    for index in 0..n as u64 {
        let s = sample(spec, index)?;
        pnm::write_ppm(images.join(format!("{}.ppm", s.id)), &s.image)?;
        pnm::write_pgm(masks.join(format!("{}.pgm", s.id)), &s.mask)?;
        ids.push(s.id);
    }
    Ok(ids)
}

/// A generated domain directory opened for reading.
///
/// Ids are sorted, so dataset order is stable across filesystems.
#[derive(Clone, Debug)]
pub struct DiskDataset {
    dir: PathBuf,
    ids: Vec<String>,
    pub spec: Option<DomainSpec>,
}

impl DiskDataset {
    pub fn open(domain_dir: &Path) -> Result<Self> {
        let images = domain_dir.join(IMAGES_DIR);
        let entries = fs::read_dir(&images).map_err(|e| Error::io(&images, e))?;
        let mut ids = Vec::new();
        for entry in entries {
            let entry = entry.map_err(|e| Error::io(&images, e))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(id) = name.strip_suffix(".ppm") {
                ids.push(id.to_string());
            }
        }
        if ids.is_empty() {
            return Err(Error::Dataset(format!("no .ppm images under {}", images.display())));
        }
        ids.sort();
        for id in &ids {
            let mask = domain_dir.join(MASKS_DIR).join(format!("{id}.pgm"));
            if !mask.is_file() {
                return Err(Error::Dataset(format!("image {id} has no mask at {}", mask.display())));
            }
        }
        let spec_path = domain_dir.join(SPEC_FILE);
        let spec = if spec_path.is_file() {
            let text = fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
            Some(serde_json::from_str(&text)?)
        } else {
            None
        };
        Ok(DiskDataset {
            dir: domain_dir.to_path_buf(),
            ids,
            spec,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn load(&self, i: usize) -> Result<Sample> {
        let id = self.ids.get(i).ok_or_else(|| {
            Error::InvalidArgument(format!("sample index {i} out of range for {} samples", self.ids.len()))
        })?;
        let image = pnm::read_ppm(self.dir.join(IMAGES_DIR).join(format!("{id}.ppm")))?;
        let mask = pnm::read_pgm(self.dir.join(MASKS_DIR).join(format!("{id}.pgm")))?;
        if image.width != mask.width || image.height != mask.height {
            return Err(Error::Dataset(format!(
                "sample {id}: image is {}x{} but mask is {}x{}",
                image.width, image.height, mask.width, mask.height
            )));
        }
        Ok(Sample {
            image,
            mask,
            id: id.clone(),
        })
    }
}

#[cfg(test)]
mod tests;
