//! The multi-view shape network, its two output heads and their losses.

use std::f64::consts::PI;

use galbnn_nn::{
    derive_seed, BatchNorm, Conv2d, Dense, Dropout, Flatten, Layer, MaxPool2d, Maxout, Mode, PRelu,
    Scalar, Sequential, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ellipticity::Ellipticity;
use crate::error::{Error, Result};
use crate::linalg::Sym2;

pub const VIEWS: usize = 4;

/// Scale of the read-out layer's initial weights relative to He
/// initialisation, so a fresh head starts near its bias.
pub const OUTPUT_GAIN: f64 = 0.01;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    /// 2×2 max-pool after the activation.
    pub pool: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadKind {
    /// Two outputs, the predicted mean, trained with squared error.
    PlainL2,
    /// Five outputs `(μ1, μ2, ℓ11_raw, ℓ21, ℓ22_raw)`, trained with the
    /// bivariate normal negative log-likelihood.
    MvnNll,
}

impl HeadKind {
    pub fn outputs(self) -> usize {
        match self {
            HeadKind::PlainL2 => 2,
            HeadKind::MvnNll => 5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::PlainL2 => "plain-l2",
            HeadKind::MvnNll => "mvn-nll",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub stamp_size: usize,
    pub crop_size: usize,
    pub conv: Vec<ConvSpec>,
    /// Widths of the two maxout layers of the MVN head.
    pub fc_mvn: Vec<usize>,
    /// Widths of the two maxout layers of the plain head.
    pub fc_plain: Vec<usize>,
    pub maxout_pieces: usize,
    pub dropout_rate: f64,
    pub prelu_init: f64,
    /// Added to the softplus Cholesky diagonal; bounds Σ's eigenvalues below.
    pub sigma_floor: f64,
    /// Standard deviation the fresh MVN head predicts on a zero feature vector.
    pub init_sigma: f64,
    /// Multiplier applied to pixel counts before the network.
    pub input_scale: f64,
}

impl ArchitectureConfig {
    /// Full-size network on 64×64 stamps with 45-pixel crops.
    pub fn reference() -> Self {
        Self {
            stamp_size: 64,
            crop_size: 45,
            conv: vec![
                ConvSpec {
                    channels: 32,
                    kernel: 5,
                    pool: true,
                },
                ConvSpec {
                    channels: 64,
                    kernel: 3,
                    pool: true,
                },
                ConvSpec {
                    channels: 128,
                    kernel: 3,
                    pool: false,
                },
                ConvSpec {
                    channels: 128,
                    kernel: 3,
                    pool: true,
                },
            ],
            fc_mvn: vec![4096, 4096],
            fc_plain: vec![2048, 2048],
            maxout_pieces: 2,
            dropout_rate: 0.5,
            prelu_init: 0.25,
            sigma_floor: 1e-3,
            init_sigma: 0.3,
            input_scale: 0.01,
        }
    }

    /// Scaled-down network on 32×32 stamps with 24-pixel crops.
    pub fn desk() -> Self {
        Self {
            stamp_size: 32,
            crop_size: 24,
            conv: vec![
                ConvSpec {
                    channels: 8,
                    kernel: 5,
                    pool: true,
                },
                ConvSpec {
                    channels: 16,
                    kernel: 3,
                    pool: true,
                },
                ConvSpec {
                    channels: 32,
                    kernel: 3,
                    pool: false,
                },
                ConvSpec {
                    channels: 32,
                    kernel: 3,
                    pool: true,
                },
            ],
            fc_mvn: vec![1024, 1024],
            fc_plain: vec![256, 256],
            ..Self::reference()
        }
    }

    pub fn fc_widths(&self, head: HeadKind) -> &[usize] {
        match head {
            HeadKind::PlainL2 => &self.fc_plain,
            HeadKind::MvnNll => &self.fc_mvn,
        }
    }

    /// `(height, width, channels)` of one view at the end of the trunk.
    pub fn trunk_output(&self) -> (usize, usize, usize) {
        let mut side = self.crop_size;
        let mut ch = 1;
        for c in &self.conv {
            ch = c.channels;
            if c.pool {
                side /= 2;
            }
        }
        (side, side, ch)
    }

    pub fn view_features(&self) -> usize {
        let (h, w, c) = self.trunk_output();
        h * w * c
    }

    pub fn flatten_width(&self) -> usize {
        VIEWS * self.view_features()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("arch: {m}")));
        if self.crop_size == 0 || self.crop_size > self.stamp_size {
            return fail(format!(
                "crop_size {} must be in 1..={}",
                self.crop_size, self.stamp_size
            ));
        }
        if self.conv.is_empty() || self.conv.iter().any(|c| c.channels == 0 || c.kernel == 0) {
            return fail("conv layers need positive channels and kernels".into());
        }
        if self.view_features() == 0 {
            return fail("pooling reduces the crop to nothing".into());
        }
        for (name, w) in [("fc_mvn", &self.fc_mvn), ("fc_plain", &self.fc_plain)] {
            if w.len() != 2 || w.contains(&0) {
                return fail(format!("{name} must list two positive widths"));
            }
        }
        if self.maxout_pieces == 0 {
            return fail("maxout_pieces must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return fail("dropout_rate must be in [0, 1)".into());
        }
        if !(self.sigma_floor > 0.0 && self.init_sigma > self.sigma_floor) {
            return fail("need 0 < sigma_floor < init_sigma".into());
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite() && self.prelu_init.is_finite())
        {
            return fail("input_scale must be positive".into());
        }
        Ok(())
    }
}

/// Rotates a square row-major image by 90° counter-clockwise.
pub fn rot90<T: Copy>(src: &[T], n: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * n);
    for r in 0..n {
        for c in 0..n {
            out.push(src[c * n + (n - 1 - r)]);
        }
    }
    out
}

/// Centre crop of side `crop` of a square `stamp × stamp` image.
pub fn center_crop<T: Copy>(src: &[T], stamp: usize, crop: usize) -> Vec<T> {
    let off = (stamp - crop) / 2;
    let mut out = Vec::with_capacity(crop * crop);
    for r in off..off + crop {
        out.extend_from_slice(&src[r * stamp + off..r * stamp + off + crop]);
    }
    out
}

/// The four network views of a stamp: its centre crop rotated by 0°, 90°,
/// 180° and 270°.
///
/// When `stamp − crop` is even, rotating the stamp cyclically permutes the
/// views; the network itself is not constrained to be equivariant.
pub fn augment_views<T: Copy>(pixels: &[T], stamp: usize, crop: usize) -> Result<[Vec<T>; VIEWS]> {
    if pixels.len() != stamp * stamp || crop == 0 || crop > stamp {
        return Err(Error::Domain(format!(
            "cannot crop {crop}×{crop} views from {} pixels of a {stamp}×{stamp} stamp",
            pixels.len()
        )));
    }
    let v0 = center_crop(pixels, stamp, crop);
    let v1 = rot90(&v0, crop);
    let v2 = rot90(&v1, crop);
    let v3 = rot90(&v2, crop);
    Ok([v0, v1, v2, v3])
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// One forward pass of the MVN head: mean and covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MvnPrediction {
    pub mu: [f64; 2],
    pub cov: Sym2,
    pub raw: [f64; 5],
}

impl MvnPrediction {
    pub fn mean(&self) -> Ellipticity {
        Ellipticity::new(self.mu[0], self.mu[1])
    }
}

/// Lower Cholesky factor `(ℓ11, ℓ21, ℓ22)` encoded by the raw head outputs.
pub fn cholesky_factor(raw: &[f64; 5], sigma_floor: f64) -> (f64, f64, f64) {
    (
        softplus(raw[2]) + sigma_floor,
        raw[3],
        softplus(raw[4]) + sigma_floor,
    )
}

pub fn head_to_mvn(raw: [f64; 5], sigma_floor: f64) -> Result<MvnPrediction> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::Inference {
            sample: 0,
            reason: format!("raw head output {i} is {}", raw[i]),
        });
    }
    let (l11, l21, l22) = cholesky_factor(&raw, sigma_floor);
    let cov = Sym2::new(l11 * l11, l11 * l21, l21 * l21 + l22 * l22);
    Ok(MvnPrediction {
        mu: [raw[0], raw[1]],
        cov,
        raw,
    })
}

/// `½[ln(4π² det Σ) + rᵀΣ⁻¹r]` with `r = y − μ`.
pub fn nll_loss(pred: &MvnPrediction, target: Ellipticity) -> f64 {
    let r = [target.e1 - pred.mu[0], target.e2 - pred.mu[1]];
    let inv = pred.cov.inverse().expect("positive-definite covariance");
    let maha = r[0] * inv.apply(r)[0] + r[1] * inv.apply(r)[1];
    0.5 * ((4.0 * PI * PI * pred.cov.det()).ln() + maha)
}

pub fn l2_loss(mu: [f64; 2], target: Ellipticity) -> f64 {
    (target.e1 - mu[0]).powi(2) + (target.e2 - mu[1]).powi(2)
}

/// NLL of one row and its gradient with respect to the five raw outputs,
/// computed through the Cholesky factor.
pub fn nll_with_grad(raw: &[f64; 5], target: [f64; 2], sigma_floor: f64) -> (f64, [f64; 5]) {
    let (l11, l21, l22) = cholesky_factor(raw, sigma_floor);
    let r1 = target[0] - raw[0];
    let r2 = target[1] - raw[1];
    let z1 = r1 / l11;
    let z2 = (r2 - l21 * z1) / l22;
    let loss = (2.0 * PI).ln() + l11.ln() + l22.ln() + 0.5 * (z1 * z1 + z2 * z2);
    let d_mu1 = -z1 / l11 + z2 * l21 / (l11 * l22);
    let d_mu2 = -z2 / l22;
    let d_l11 = 1.0 / l11 - z1 * z1 / l11 + z2 * l21 * z1 / (l11 * l22);
    let d_l21 = -z2 * z1 / l22;
    let d_l22 = (1.0 - z2 * z2) / l22;
    (
        loss,
        [
            d_mu1,
            d_mu2,
            d_l11 * sigmoid(raw[2]),
            d_l21,
            d_l22 * sigmoid(raw[4]),
        ],
    )
}

/// Mean loss over a batch of head outputs and its gradient.
pub fn batch_loss<T: Scalar>(
    head: HeadKind,
    raw: &Tensor<T>,
    targets: &[[f64; 2]],
    sigma_floor: f64,
) -> Result<(f64, Tensor<T>)> {
    let k = head.outputs();
    if raw.row_len() != k || raw.rows() != targets.len() {
        return Err(Error::Contract(format!(
            "head output {:?} does not match {} targets of a {} head",
            raw.shape(),
            targets.len(),
            head.name()
        )));
    }
    let n = targets.len() as f64;
    let mut total = 0.0;
    let mut grad = Vec::with_capacity(raw.len());
    for (row, t) in raw.data().chunks_exact(k).zip(targets) {
        match head {
            HeadKind::PlainL2 => {
                let (d1, d2) = (row[0].as_f64() - t[0], row[1].as_f64() - t[1]);
                total += d1 * d1 + d2 * d2;
                grad.push(T::of_f64(2.0 * d1 / n));
                grad.push(T::of_f64(2.0 * d2 / n));
            }
            HeadKind::MvnNll => {
                let r: [f64; 5] = std::array::from_fn(|i| row[i].as_f64());
                let (l, g) = nll_with_grad(&r, *t, sigma_floor);
                total += l;
                grad.extend(g.iter().map(|v| T::of_f64(v / n)));
            }
        }
    }
    Ok((total / n, Tensor::new(raw.shape().to_vec(), grad)?))
}

/// The shape network: shared convolutional trunk applied to each view,
/// concatenation, two maxout layers with dropout, linear output.
#[derive(Clone, Debug)]
pub struct ShapeNet<T: Scalar = f32> {
    arch: ArchitectureConfig,
    head: HeadKind,
    net: Sequential<T>,
    trunk_len: usize,
}

impl<T: Scalar> ShapeNet<T> {
    /// Trunk and head are initialised from independent streams of `seed`.
    pub fn new(arch: &ArchitectureConfig, head: HeadKind, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut trunk_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0]));
        let mut head_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[1]));
        let mut layers = Vec::new();
        let mut ch = 1;
        for c in &arch.conv {
            layers.push(Layer::BatchNorm(BatchNorm::new(ch)));
            layers.push(Layer::Conv2d(Conv2d::new(
                &mut trunk_rng,
                ch,
                c.channels,
                (c.kernel, c.kernel),
            )));
            layers.push(Layer::PRelu(PRelu::new(c.channels, arch.prelu_init)));
            if c.pool {
                layers.push(Layer::MaxPool2d(MaxPool2d::new(2)));
            }
            ch = c.channels;
        }
        let trunk_len = layers.len();
        layers.push(Layer::Flatten(Flatten::new(VIEWS)));
        let widths = arch.fc_widths(head);
        let mut width = arch.flatten_width();
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Layer::Maxout(Maxout::new(
                &mut head_rng,
                width,
                w,
                arch.maxout_pieces,
            )));
            layers.push(Layer::Dropout(Dropout::new(
                arch.dropout_rate,
                i as u64 + 1,
            )));
            width = w;
        }
        let mut out = Dense::new(&mut head_rng, width, head.outputs());
        out.weight
            .value
            .data_mut()
            .iter_mut()
            .for_each(|w: &mut T| *w = T::of_f64(Scalar::as_f64(*w) * OUTPUT_GAIN));
        if head == HeadKind::MvnNll {
            let b = T::of_f64(softplus_inv(arch.init_sigma - arch.sigma_floor));
            out.bias.value.data_mut()[2] = b;
            out.bias.value.data_mut()[4] = b;
        }
        layers.push(Layer::Dense(out));
        Ok(Self {
            arch: arch.clone(),
            head,
            net: Sequential::new(layers),
            trunk_len,
        })
    }

    pub fn arch(&self) -> &ArchitectureConfig {
        &self.arch
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    pub fn net(&self) -> &Sequential<T> {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Sequential<T> {
        &mut self.net
    }

    /// Number of trunk layers (everything before the view concatenation).
    pub fn trunk_len(&self) -> usize {
        self.trunk_len
    }

    /// Stacks the views of each stamp into a `(B·4, crop, crop, 1)` batch,
    /// scaled by the input scale.
    pub fn input_batch<P: AsRef<[f32]>>(&self, stamps: &[P]) -> Result<Tensor<T>> {
        let (s, c) = (self.arch.stamp_size, self.arch.crop_size);
        let scale = self.arch.input_scale;
        let mut data = Vec::with_capacity(stamps.len() * VIEWS * c * c);
        for p in stamps {
            for view in augment_views(p.as_ref(), s, c)? {
                data.extend(view.iter().map(|&v| T::of_f64(v as f64 * scale)));
            }
        }
        Ok(Tensor::new(vec![stamps.len() * VIEWS, c, c, 1], data)?)
    }

    pub fn forward(&mut self, input: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        Ok(self.net.forward(input, mode)?)
    }

    /// Per-view trunk activations, `(B·4, h, w, c)`.
    pub fn trunk(&mut self, input: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        Ok(self.net.forward_range(0..self.trunk_len, input, mode)?)
    }

    /// Head applied to trunk activations; MC-dropout rows are taken per
    /// stamp, so `row_seeds` has one entry per stamp.
    pub fn head_forward(&mut self, trunk: Tensor<T>, mode: &Mode<'_>) -> Result<Tensor<T>> {
        let n = self.net.len();
        Ok(self.net.forward_range(self.trunk_len..n, trunk, mode)?)
    }

    /// Deterministic (dropout-free) head outputs for a batch of stamps.
    pub fn predict_raw<P: AsRef<[f32]>>(&mut self, stamps: &[P]) -> Result<Vec<Vec<f64>>> {
        let x = self.input_batch(stamps)?;
        let out = self.forward(x, &Mode::Eval)?;
        Ok(out
            .data()
            .chunks_exact(self.head.outputs())
            .map(|r| r.iter().map(|v| v.as_f64()).collect())
            .collect())
    }
}

/// Copies every trunk layer (convolutions, batch norms with running
/// statistics, PReLU slopes) of `src` into `dst`, leaving `dst`'s
/// fully-connected layers untouched.
pub fn transfer_trunk<T: Scalar>(src: &ShapeNet<T>, dst: &mut ShapeNet<T>) -> Result<()> {
    let (a, b) = (&src.arch, &dst.arch);
    if a.stamp_size != b.stamp_size
        || a.crop_size != b.crop_size
        || a.conv != b.conv
        || src.trunk_len != dst.trunk_len
    {
        return Err(Error::Contract("trunk architectures differ".into()));
    }
    dst.net.clear_tape();
    for i in 0..src.trunk_len {
        let mut layer = src.net.layers()[i].clone();
        layer.clear_cache();
        dst.net.layers_mut()[i] = layer;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use galbnn_nn::gradcheck::rel_error;

    #[test]
    fn shape_ledger() {
        let r = ArchitectureConfig::reference();
        assert_eq!(r.view_features(), 3200);
        assert_eq!(r.flatten_width(), 12800);
        let d = ArchitectureConfig::desk();
        assert_eq!(d.trunk_output(), (3, 3, 32));
        assert_eq!(d.flatten_width(), 4 * 288);
        assert!(r.validate().is_ok() && d.validate().is_ok());
        assert!(ArchitectureConfig { crop_size: 40, ..d }
            .validate()
            .is_err());
    }

    #[test]
    fn desk_network_output_shape() {
        let arch = ArchitectureConfig::desk();
        let mut net = ShapeNet::<f32>::new(&arch, HeadKind::MvnNll, 1).unwrap();
        let stamps = vec![vec![1.0f32; 32 * 32]; 3];
        let x = net.input_batch(&stamps).unwrap();
        assert_eq!(x.shape(), &[12, 24, 24, 1]);
        let t = net.trunk(x.clone(), &Mode::Eval).unwrap();
        assert_eq!(t.shape(), &[12, 3, 3, 32]);
        assert_eq!(net.forward(x, &Mode::Eval).unwrap().shape(), &[3, 5]);
    }

    #[test]
    fn views_of_symmetric_input_are_identical() {
        let n = 8;
        let p: Vec<f32> = (0..n * n)
            .map(|i| {
                let (r, c) = ((i / n) as f32 - 3.5, (i % n) as f32 - 3.5);
                (-(r * r + c * c)).exp()
            })
            .collect();
        let v = augment_views(&p, n, 6).unwrap();
        assert!(v.iter().all(|x| x == &v[0]));
        assert_eq!(augment_views(&p, n, 6).unwrap(), v);
    }

    #[test]
    fn rotated_stamp_permutes_views() {
        let n = 10;
        let p: Vec<f64> = (0..n * n).map(|i| ((i * 7919) % 101) as f64).collect();
        let v = augment_views(&p, n, 6).unwrap();
        let w = augment_views(&rot90(&p, n), n, 6).unwrap();
        for k in 0..VIEWS {
            assert_eq!(w[k], v[(k + 1) % VIEWS]);
        }
    }

    #[test]
    fn softplus_inverse() {
        for y in [1e-6, 0.3, 1.0, 5.0, 40.0] {
            assert!(rel_error(softplus(softplus_inv(y)), y) < 1e-12, "{y}");
        }
        assert!(softplus(-800.0) >= 0.0 && softplus(800.0) == 800.0);
    }

    #[test]
    fn identity_covariance_construction() {
        let f = 1e-3;
        let s = softplus_inv(1.0 - f);
        let p = head_to_mvn([0.0, 0.0, s, 0.0, s], f).unwrap();
        assert!(
            (p.cov.xx - 1.0).abs() < 1e-14 && p.cov.xy == 0.0 && (p.cov.yy - 1.0).abs() < 1e-14
        );
        let p = head_to_mvn([0.0, 0.0, s, 3.0, s], f).unwrap();
        assert!(
            (p.cov.xx - 1.0).abs() < 1e-14
                && (p.cov.xy - 3.0).abs() < 1e-13
                && (p.cov.yy - 10.0).abs() < 1e-13
        );
        assert!(head_to_mvn([0.0, f64::NAN, 0.0, 0.0, 0.0], f).is_err());
    }

    #[test]
    fn nll_reference_values() {
        let f = 1e-3;
        let s = softplus_inv(1.0 - f);
        let p = head_to_mvn([0.2, -0.1, s, 0.0, s], f).unwrap();
        let ln2pi = (2.0 * PI).ln();
        assert!((nll_loss(&p, Ellipticity::new(0.2, -0.1)) - ln2pi).abs() < 1e-12);
        assert!((ln2pi - 1.8379).abs() < 1e-4);
        assert!((nll_loss(&p, Ellipticity::new(1.2, -0.1)) - (ln2pi + 0.5)).abs() < 1e-12);
        assert_eq!(l2_loss([0.1, 0.1], Ellipticity::new(0.1, 0.1)), 0.0);
        assert_eq!(l2_loss([1.0, 0.0], Ellipticity::new(0.0, 0.0)), 1.0);
        assert!((l2_loss([0.6, 0.0], Ellipticity::default()) - 0.36).abs() < 1e-15);
    }

    #[test]
    fn cholesky_route_matches_matrix_route() {
        let raws = [
            [0.1, -0.3, 0.4, -1.2, -2.0],
            [0.0, 0.5, -3.0, 0.2, 1.5],
            [-0.7, 0.2, 2.0, 4.0, 0.0],
        ];
        for raw in raws {
            let p = head_to_mvn(raw, 1e-3).unwrap();
            let t = [0.3, -0.25];
            let (l, _) = nll_with_grad(&raw, t, 1e-3);
            assert!((l - nll_loss(&p, Ellipticity::new(t[0], t[1]))).abs() < 1e-12);
            let (l11, _, l22) = cholesky_factor(&raw, 1e-3);
            assert!(rel_error(p.cov.det(), l11 * l11 * l22 * l22) < 1e-12);
            assert!(p.cov.det() >= 1e-12);
        }
    }

    #[test]
    fn nll_gradient_matches_differences() {
        let raw = [0.1, -0.3, 0.4, -1.2, -2.0];
        let t = [0.45, 0.1];
        let (_, g) = nll_with_grad(&raw, t, 1e-3);
        for i in 0..5 {
            let h = 1e-6;
            let mut up = raw;
            up[i] += h;
            let mut dn = raw;
            dn[i] -= h;
            let num = (nll_with_grad(&up, t, 1e-3).0 - nll_with_grad(&dn, t, 1e-3).0) / (2.0 * h);
            assert!(rel_error(g[i], num) < 1e-6, "output {i}: {} vs {num}", g[i]);
        }
    }

    /// With μ fixed at the residual mean, the covariance gradient of the
    /// batch NLL vanishes when Σ equals the empirical second moment.
    #[test]
    fn nll_stationary_at_empirical_covariance() {
        let res = [[0.3, 0.1], [-0.2, 0.25], [0.05, -0.4], [-0.15, 0.05]];
        let m = res
            .iter()
            .fold(Sym2::ZERO, |acc, r| acc.add(&Sym2::outer(*r)))
            .scale(0.25);
        let f = 1e-3;
        let l11 = m.xx.sqrt();
        let l21 = m.xy / l11;
        let l22 = (m.yy - l21 * l21).sqrt();
        let raw = [0.0, 0.0, softplus_inv(l11 - f), l21, softplus_inv(l22 - f)];
        let mut g = [0.0; 5];
        for r in res {
            let (_, gi) = nll_with_grad(&raw, r, f);
            for k in 0..5 {
                g[k] += gi[k];
            }
        }
        for k in 2..5 {
            assert!(g[k].abs() < 1e-10, "d/draw[{k}] = {}", g[k]);
        }
    }

    #[test]
    fn transfer_copies_trunk_only() {
        let arch = ArchitectureConfig::desk();
        let mut src = ShapeNet::<f32>::new(&arch, HeadKind::PlainL2, 3).unwrap();
        // Give the source non-default batch-norm statistics.
        let stamps: Vec<Vec<f32>> = (0..4)
            .map(|s| {
                (0..1024)
                    .map(|i| ((i * (s + 3)) % 17) as f32 * 10.0)
                    .collect()
            })
            .collect();
        let x = src.input_batch(&stamps).unwrap();
        src.forward(x.clone(), &Mode::Train { seed: 1 }).unwrap();
        src.net_mut().clear_tape();
        let mut dst = ShapeNet::<f32>::new(&arch, HeadKind::MvnNll, 4).unwrap();
        let fresh = ShapeNet::<f32>::new(&arch, HeadKind::MvnNll, 4).unwrap();
        transfer_trunk(&src, &mut dst).unwrap();
        let a = src.trunk(x.clone(), &Mode::Eval).unwrap();
        let b = dst.trunk(x.clone(), &Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
        let n = dst.net().len();
        let last = |m: &ShapeNet<f32>| match &m.net().layers()[n - 1] {
            Layer::Dense(d) => d.weight.value.clone(),
            _ => unreachable!(),
        };
        assert_eq!(last(&dst), last(&fresh));
        transfer_trunk(&src, &mut dst).unwrap();
        assert_eq!(dst.trunk(x, &Mode::Eval).unwrap().data(), a.data());
        let other = ArchitectureConfig {
            crop_size: 22,
            ..arch
        };
        let mut bad = ShapeNet::<f32>::new(&other, HeadKind::MvnNll, 4).unwrap();
        assert!(transfer_trunk(&src, &mut bad).is_err());
    }

    #[test]
    fn view_order_matters() {
        let arch = ArchitectureConfig::desk();
        let mut net = ShapeNet::<f64>::new(&arch, HeadKind::MvnNll, 5).unwrap();
        let p: Vec<f32> = (0..1024).map(|i| ((i * 31) % 97) as f32).collect();
        let x = net.input_batch(&[p]).unwrap();
        let out = net.forward(x.clone(), &Mode::Eval).unwrap();
        let view = x.row_len();
        let mut swapped = x.data().to_vec();
        swapped.rotate_left(view);
        let swapped = Tensor::new(x.shape().to_vec(), swapped).unwrap();
        let out2 = net.forward(swapped, &Mode::Eval).unwrap();
        assert_ne!(out.data(), out2.data());
    }
}
