//! Parametric galaxy scenes, their rendering and Poisson noise.

use std::f64::consts::PI;

use galbnn_nn::derive_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ellipticity::{normalize_angle, Ellipticity};
use crate::error::{Error, Result};

/// Ratio of half-light radius to σ for a circular Gaussian, `sqrt(2 ln 2)`.
pub const GAUSSIAN_HLR_PER_SIGMA: f64 = 1.177_410_022_515_474_6;
/// Ratio of half-light radius to scale length for an exponential disk.
pub const EXPONENTIAL_HLR_PER_SCALE: f64 = 1.678_346_990_016_661_3;

const NOISE_STREAM: u64 = 0x6e6f_6973_65;
pub const MAX_COMPANIONS: usize = 5;
pub const MIN_STAMP: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    EllipticalGaussian,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GalaxyModel {
    pub profile: Profile,
    pub flux: f64,
    pub half_light_radius: f64,
    pub q: f64,
    pub theta: f64,
    /// Offset `(x, y)` of the centroid from the stamp centre, in pixels.
    pub center: (f64, f64),
}

impl GalaxyModel {
    pub fn ellipticity(&self) -> Ellipticity {
        Ellipticity::from_axis_ratio(self.q, self.theta)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.flux > 0.0
            && self.half_light_radius > 0.0
            && self.q > 0.0
            && self.q <= 1.0
            && self.theta.is_finite()
            && self.center.0.is_finite()
            && self.center.1.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(format!("invalid galaxy {self:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Noise {
    None,
    Poisson { sky_level: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Category {
    IsolatedClean,
    IsolatedNoisy,
    BlendClean,
    BlendNoisy,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::IsolatedClean,
        Category::IsolatedNoisy,
        Category::BlendClean,
        Category::BlendNoisy,
    ];

    pub fn is_blend(self) -> bool {
        matches!(self, Category::BlendClean | Category::BlendNoisy)
    }

    pub fn is_noisy(self) -> bool {
        matches!(self, Category::IsolatedNoisy | Category::BlendNoisy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Category::IsolatedClean => "isolated-clean",
            Category::IsolatedNoisy => "isolated-noisy",
            Category::BlendClean => "blend-clean",
            Category::BlendNoisy => "blend-noisy",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Category::IsolatedClean => 0,
            Category::IsolatedNoisy => 1,
            Category::BlendClean => 2,
            Category::BlendNoisy => 3,
        }
    }
}

impl std::str::FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub central: GalaxyModel,
    pub companions: Vec<GalaxyModel>,
    pub noise: Noise,
    pub label: Ellipticity,
    pub seed: u64,
}

impl Scene {
    pub fn isolated(central: GalaxyModel, noise: Noise, seed: u64) -> Self {
        Self {
            label: central.ellipticity(),
            central,
            companions: Vec::new(),
            noise,
            seed,
        }
    }

    pub fn is_blend(&self) -> bool {
        !self.companions.is_empty()
    }

    pub fn galaxies(&self) -> impl Iterator<Item = &GalaxyModel> {
        std::iter::once(&self.central).chain(&self.companions)
    }

    /// Seed of the per-pixel noise streams.
    pub fn noise_seed(&self) -> u64 {
        derive_seed(self.seed, &[NOISE_STREAM])
    }
}

/// Row-major `height × width` image in counts.
#[derive(Clone, Debug, PartialEq)]
pub struct Stamp {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
}

impl Stamp {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Domain(format!(
                "{} pixels for a {height}×{width} stamp",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn from_f32(height: usize, width: usize, pixels: &[f32]) -> Result<Self> {
        Self::new(height, width, pixels.iter().map(|&v| v as f64).collect())
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.pixels.iter().map(|&v| v as f32).collect()
    }

    pub fn sum(&self) -> f64 {
        self.pixels.iter().sum()
    }

    /// Pixel centre of the stamp in array coordinates.
    pub fn center(&self) -> (f64, f64) {
        (
            (self.width as f64 - 1.0) / 2.0,
            (self.height as f64 - 1.0) / 2.0,
        )
    }
}

/// Parameter distributions of simulated scenes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub stamp_size: usize,
    /// Lower bound of the uniform axis-ratio distribution.
    pub q_min: f64,
    /// Log-uniform half-light radius bounds, pixels.
    pub radius_min: f64,
    pub radius_max: f64,
    /// Log-uniform total flux bounds, counts.
    pub flux_min: f64,
    pub flux_max: f64,
    /// Probability that a galaxy has an exponential instead of Gaussian profile.
    pub exponential_fraction: f64,
    /// Flat sky level of noisy stamps, counts per pixel.
    pub sky_level: f64,
    pub max_companions: usize,
    /// Maximum distance of a companion centroid from the stamp centre.
    pub companion_offset_max: f64,
    /// Minimum distance of a companion centroid from the central galaxy.
    pub companion_min_separation: f64,
    /// Sub-pixel samples per axis for pixel integration.
    pub subpixels: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            stamp_size: 64,
            q_min: 0.25,
            radius_min: 2.5,
            radius_max: 6.0,
            flux_min: 2000.0,
            flux_max: 20000.0,
            exponential_fraction: 0.2,
            sky_level: 100.0,
            max_companions: MAX_COMPANIONS,
            companion_offset_max: 20.0,
            companion_min_separation: 2.0,
            subpixels: 2,
        }
    }
}

impl SimConfig {
    pub fn desk() -> Self {
        Self {
            stamp_size: 32,
            radius_min: 1.5,
            radius_max: 3.5,
            flux_min: 600.0,
            flux_max: 2000.0,
            companion_offset_max: 10.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("sim: {m}")));
        if self.stamp_size < MIN_STAMP {
            return fail(&format!("stamp_size must be at least {MIN_STAMP}"));
        }
        if !(self.q_min > 0.0 && self.q_min <= 1.0) {
            return fail("q_min must be in (0, 1]");
        }
        if !(self.radius_min > 0.0
            && self.radius_min <= self.radius_max
            && self.radius_max.is_finite())
        {
            return fail("need 0 < radius_min <= radius_max");
        }
        if !(self.flux_min > 0.0 && self.flux_min <= self.flux_max && self.flux_max.is_finite()) {
            return fail("need 0 < flux_min <= flux_max");
        }
        if !(0.0..=1.0).contains(&self.exponential_fraction) {
            return fail("exponential_fraction must be in [0, 1]");
        }
        if !(self.sky_level >= 0.0 && self.sky_level.is_finite()) {
            return fail("sky_level must be non-negative");
        }
        if self.max_companions == 0 || self.max_companions > MAX_COMPANIONS {
            return fail(&format!("max_companions must be in 1..={MAX_COMPANIONS}"));
        }
        let half = (self.stamp_size as f64 - 1.0) / 2.0;
        let reach = self
            .companion_offset_max
            .min(half * std::f64::consts::SQRT_2);
        if !(self.companion_min_separation >= 0.0 && self.companion_min_separation < reach) {
            return fail("companion_min_separation must be below the reachable offset");
        }
        if self.subpixels == 0 {
            return fail("subpixels must be at least 1");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex.
    pub fn content_hash(&self) -> String {
        hex_sha256(
            serde_json::to_string(self)
                .expect("plain struct")
                .as_bytes(),
        )
    }
}

pub(crate) fn hex_sha256(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

fn log_uniform<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo.ln()..hi.ln()).exp()
    }
}

fn sample_galaxy<R: Rng>(rng: &mut R, config: &SimConfig, center: (f64, f64)) -> GalaxyModel {
    let q = if config.q_min < 1.0 {
        rng.gen_range(config.q_min..=1.0)
    } else {
        1.0
    };
    let theta = normalize_angle(rng.gen_range(0.0..PI));
    let half_light_radius = log_uniform(rng, config.radius_min, config.radius_max);
    let flux = log_uniform(rng, config.flux_min, config.flux_max);
    let profile = if rng.gen::<f64>() < config.exponential_fraction {
        Profile::Exponential
    } else {
        Profile::EllipticalGaussian
    };
    GalaxyModel {
        profile,
        flux,
        half_light_radius,
        q,
        theta,
        center,
    }
}

fn sample_companion_center<R: Rng>(rng: &mut R, config: &SimConfig) -> (f64, f64) {
    let half = (config.stamp_size as f64 - 1.0) / 2.0;
    loop {
        let r = config.companion_offset_max * rng.gen::<f64>().sqrt();
        let phi = rng.gen_range(0.0..2.0 * PI);
        let (x, y) = (r * phi.cos(), r * phi.sin());
        if r >= config.companion_min_separation && x.abs() <= half && y.abs() <= half {
            return (x, y);
        }
    }
}

/// Draws a scene of the given category; a pure function of `(config, seed)`.
pub fn sample_scene(config: &SimConfig, category: Category, seed: u64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let central = sample_galaxy(&mut rng, config, (0.0, 0.0));
    let companions = if category.is_blend() {
        let n = rng.gen_range(1..=config.max_companions);
        (0..n)
            .map(|_| {
                let c = sample_companion_center(&mut rng, config);
                sample_galaxy(&mut rng, config, c)
            })
            .collect()
    } else {
        Vec::new()
    };
    let noise = if category.is_noisy() {
        Noise::Poisson {
            sky_level: config.sky_level,
        }
    } else {
        Noise::None
    };
    Scene {
        label: central.ellipticity(),
        central,
        companions,
        noise,
        seed,
    }
}

/// Surface-brightness evaluator of one galaxy in stamp-centred coordinates.
struct ProfileEval {
    profile: Profile,
    cx: f64,
    cy: f64,
    cos: f64,
    sin: f64,
    inv_major2: f64,
    inv_minor2: f64,
    norm: f64,
}

impl ProfileEval {
    fn new(g: &GalaxyModel) -> Self {
        let scale = match g.profile {
            Profile::EllipticalGaussian => g.half_light_radius / GAUSSIAN_HLR_PER_SIGMA,
            Profile::Exponential => g.half_light_radius / EXPONENTIAL_HLR_PER_SCALE,
        };
        let major = scale / g.q.sqrt();
        let minor = scale * g.q.sqrt();
        let (sin, cos) = g.theta.sin_cos();
        Self {
            profile: g.profile,
            cx: g.center.0,
            cy: g.center.1,
            cos,
            sin,
            inv_major2: 1.0 / (major * major),
            inv_minor2: 1.0 / (minor * minor),
            norm: g.flux / (2.0 * PI * major * minor),
        }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = dx * self.cos + dy * self.sin;
        let v = -dx * self.sin + dy * self.cos;
        let r2 = u * u * self.inv_major2 + v * v * self.inv_minor2;
        match self.profile {
            Profile::EllipticalGaussian => self.norm * (-0.5 * r2).exp(),
            Profile::Exponential => self.norm * (-r2.sqrt()).exp(),
        }
    }
}

fn check_size(height: usize, width: usize) -> Result<()> {
    if height < MIN_STAMP || width < MIN_STAMP {
        return Err(Error::Domain(format!(
            "stamp {height}×{width} smaller than {MIN_STAMP}×{MIN_STAMP}"
        )));
    }
    Ok(())
}

/// Renders one galaxy into `out`, adding to the existing values.
fn render_galaxy(g: &GalaxyModel, height: usize, width: usize, subpixels: usize, out: &mut [f64]) {
    let eval = ProfileEval::new(g);
    let (x0, y0) = ((width as f64 - 1.0) / 2.0, (height as f64 - 1.0) / 2.0);
    let s = subpixels as f64;
    let offsets: Vec<f64> = (0..subpixels).map(|i| (i as f64 + 0.5) / s - 0.5).collect();
    let weight = 1.0 / (s * s);
    for r in 0..height {
        let y = r as f64 - y0;
        for c in 0..width {
            let x = c as f64 - x0;
            let mut acc = 0.0;
            for dy in &offsets {
                for dx in &offsets {
                    acc += eval.at(x + dx, y + dy);
                }
            }
            out[r * width + c] += acc * weight;
        }
    }
}

/// Noiseless rendering with `subpixels × subpixels` midpoint integration.
///
/// Galaxies are accumulated central first, then companions in order.
pub fn render_with(scene: &Scene, height: usize, width: usize, subpixels: usize) -> Result<Stamp> {
    check_size(height, width)?;
    if subpixels == 0 {
        return Err(Error::Domain("subpixels must be at least 1".into()));
    }
    let mut pixels = vec![0.0; height * width];
    for g in scene.galaxies() {
        g.validate()?;
        render_galaxy(g, height, width, subpixels, &mut pixels);
    }
    Stamp::new(height, width, pixels)
}

pub fn render(scene: &Scene, height: usize, width: usize) -> Result<Stamp> {
    render_with(scene, height, width, 2)
}

/// `Poisson(pixel + sky) − sky` per pixel. Pixel `i` draws from its own
/// ChaCha stream `i` of `seed`, so the result does not depend on traversal
/// order.
pub fn add_poisson_noise(stamp: &Stamp, sky_level: f64, seed: u64) -> Result<Stamp> {
    if !(sky_level >= 0.0 && sky_level.is_finite()) {
        return Err(Error::Domain(format!("sky level {sky_level}")));
    }
    if let Some(i) = stamp
        .pixels
        .iter()
        .position(|&p| !(p >= 0.0 && p.is_finite()))
    {
        return Err(Error::Domain(format!(
            "pixel {i} is {} (corrupt stamp)",
            stamp.pixels[i]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = stamp
        .pixels
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let lambda = p + sky_level;
            if lambda == 0.0 {
                return 0.0;
            }
            rng.set_stream(i as u64);
            rng.set_word_pos(0);
            let k: f64 = Poisson::new(lambda)
                .expect("positive finite rate")
                .sample(&mut rng);
            k - sky_level
        })
        .collect();
    Stamp::new(stamp.height, stamp.width, pixels)
}

/// One simulated example: its scene, the clean stamp and, for noisy
/// categories, the noisy variant of the same scene.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetRecord {
    pub scene: Scene,
    pub clean: Vec<f32>,
    pub noisy: Option<Vec<f32>>,
}

impl DatasetRecord {
    pub fn label(&self) -> Ellipticity {
        self.scene.label
    }

    pub fn is_blend(&self) -> bool {
        self.scene.is_blend()
    }

    pub fn n_companions(&self) -> usize {
        self.scene.companions.len()
    }

    /// The stamp a network sees at inference: the noisy variant when present.
    pub fn observed(&self) -> &[f32] {
        self.noisy.as_deref().unwrap_or(&self.clean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetHeader {
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub category: Category,
    pub sim_config_hash: String,
    pub base_seed: u64,
    /// Hash of the run configuration that produced the file, if any.
    #[serde(default)]
    pub run_config_hash: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

/// Record `index` of a dataset, a pure function of `(config, category,
/// base_seed, index)`.
pub fn simulate_record(
    config: &SimConfig,
    category: Category,
    base_seed: u64,
    index: u64,
) -> Result<DatasetRecord> {
    let scene = sample_scene(config, category, derive_seed(base_seed, &[index]));
    let size = config.stamp_size;
    let clean = render_with(&scene, size, size, config.subpixels)?;
    let noisy = match scene.noise {
        Noise::None => None,
        Noise::Poisson { sky_level } => {
            Some(add_poisson_noise(&clean, sky_level, scene.noise_seed())?.to_f32())
        }
    };
    Ok(DatasetRecord {
        clean: clean.to_f32(),
        noisy,
        scene,
    })
}

/// Simulates `n` records; records are generated in parallel and are
/// independent of the thread count.
pub fn generate_dataset(
    config: &SimConfig,
    category: Category,
    n: usize,
    base_seed: u64,
) -> Result<Dataset> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Domain(
            "dataset must contain at least one record".into(),
        ));
    }
    let records = (0..n as u64)
        .into_par_iter()
        .map(|i| simulate_record(config, category, base_seed, i))
        .collect::<Result<Vec<_>>>()?;
    let header = DatasetHeader {
        height: config.stamp_size,
        width: config.stamp_size,
        count: n,
        category,
        sim_config_hash: config.content_hash(),
        base_seed,
        run_config_hash: None,
    };
    Ok(Dataset { header, records })
}
