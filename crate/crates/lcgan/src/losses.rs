//! Objective terms for the translation game.
//!
//! Every function returns a differentiable scalar tensor. Image inputs are
//! RGB in `[0,1]` unless noted; the structural term extracts luminance
//! itself. Batches are treated as a single pixel population, sized for the
//! one-image-per-domain batches used in training.

use serde::{Deserialize, Serialize};

use crate::diff::{GradCheckReport, Tensor};
use crate::error::{Error, Result};
use crate::image::{luminance, MaskImage, Pyramid};
use crate::scalar::Scalar;

/// Weights and constants for the full objective.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the cycle reconstruction term.
    pub cycle_weight: f64,
    /// Weight of the multi-scale luminance correlation term.
    pub structure_weight: f64,
    /// Weight of the segmentation consistency term.
    pub seg_weight: f64,
    /// Number of downscaling steps in the correlation pyramid.
    pub scales: usize,
    /// Per-scale weights, full resolution first; scales+1 entries summing
    /// to 1. Zero-weight levels are skipped.
    pub scale_weights: Vec<f64>,
    /// Stabilizer in the correlation quotient, sized for [0,1] luminance.
    pub zncc_eps: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            cycle_weight: 5.0,
            structure_weight: 1.0,
            seg_weight: 2.0,
            scales: 4,
            scale_weights: vec![0.0, 0.05, 0.33, 0.35, 0.27],
            zncc_eps: 1e-4,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale_weights.len() != self.scales + 1 {
            return Err(Error::Config(format!(
                "scale_weights has {} entries, need scales+1 = {}",
                self.scale_weights.len(),
                self.scales + 1
            )));
        }
        if self.scale_weights.iter().any(|&g| g < 0.0) {
            return Err(Error::Config("scale_weights must be non-negative".into()));
        }
        let sum: f64 = self.scale_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("scale_weights sum to {sum}, need 1")));
        }
        if self.zncc_eps <= 0.0 {
            return Err(Error::Config("zncc_eps must be positive".into()));
        }
        if self.cycle_weight < 0.0 || self.structure_weight < 0.0 || self.seg_weight < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        Ok(())
    }
}

/// All objective terms of one step, kept as graph scalars so either total
/// can be backpropagated. `totals` collapses them to plain numbers for logs.
#[derive(Clone, Debug)]
pub struct LossBreakdown<T: Scalar> {
    pub gan_g: Tensor<T>,
    pub gan_f: Tensor<T>,
    pub d_x: Tensor<T>,
    pub d_y: Tensor<T>,
    pub cyc: Tensor<T>,
    pub ssim: Tensor<T>,
    pub seg: Tensor<T>,
    pub total_generator: Tensor<T>,
    pub total_discriminator: Tensor<T>,
}

impl<T: Scalar> LossBreakdown<T> {
    pub const CSV_FIELDS: &'static str =
        "gan_g,gan_f,d_x,d_y,cyc,ssim,seg,total_generator,total_discriminator";

    pub fn csv_values(&self) -> String {
        let vals = [
            &self.gan_g,
            &self.gan_f,
            &self.d_x,
            &self.d_y,
            &self.cyc,
            &self.ssim,
            &self.seg,
            &self.total_generator,
            &self.total_discriminator,
        ];
        vals.iter()
            .map(|t| format!("{}", t.item().to_f64()))
            .collect::<Vec<_>>()
            .join(",")
    }

    pub fn all_finite(&self) -> bool {
        self.total_generator.item().to_f64().is_finite()
            && self.total_discriminator.item().to_f64().is_finite()
    }
}

/// Zero-normalized cross-correlation over all elements of two equally
/// shaped single-channel tensors: (cov + eps) / (std_a * std_b + eps), all
/// moments with 1/(m-1).
///
/// A constant input makes the quotient identically 1 with zero gradient;
/// that branch is taken explicitly so no gradient flows through the root of
/// a zero variance.
pub fn zncc<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            "zncc: inputs differ",
            &[("a", a.shape()), ("b", b.shape())],
        ));
    }
    let m = a.numel();
    if m < 2 {
        return Err(Error::InvalidArgument(format!("zncc needs at least 2 pixels, got {m}")));
    }
    let flat = |t: &Tensor<T>| {
        let d = t.data();
        d.iter().all(|&v| v == d[0])
    };
    if flat(a) || flat(b) {
        return Ok(Tensor::scalar(T::one()));
    }
    let inv = T::from_f64(1.0 / (m as f64 - 1.0));
    let ca = a.sub(&a.mean_all());
    let cb = b.sub(&b.mean_all());
    let var_a = ca.square().sum_all().affine(inv, T::zero());
    let var_b = cb.square().sum_all().affine(inv, T::zero());
    let cov = ca.mul(&cb).sum_all().affine(inv, T::zero());
    let eps = T::from_f64(eps);
    let num = cov.affine(T::one(), eps);
    let den = var_a.sqrt().mul(&var_b.sqrt()).affine(T::one(), eps);
    Ok(num.div(&den))
}

/// Correlation across pyramid levels: 1 - sum_i w_i * zncc(level_i).
fn pyramid_decorrelation<T: Scalar>(
    a_rgb: &Tensor<T>,
    b_rgb: &Tensor<T>,
    config: &LossConfig,
) -> Result<Tensor<T>> {
    let pa = Pyramid::build(&luminance(a_rgb)?, config.scales + 1)?;
    let pb = Pyramid::build(&luminance(b_rgb)?, config.scales + 1)?;
    let mut acc: Option<Tensor<T>> = None;
    for (i, &w) in config.scale_weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let c = zncc(&pa.levels[i], &pb.levels[i], config.zncc_eps)?;
        let weighted = c.affine(T::from_f64(w), T::zero());
        acc = Some(match acc {
            Some(s) => s.add(&weighted),
            None => weighted,
        });
    }
    let correlated = acc.unwrap_or_else(|| Tensor::scalar(T::zero()));
    Ok(Tensor::scalar(T::one()).sub(&correlated))
}

/// Structural similarity loss: luminance decorrelation between each
/// generator's input and output, both directions summed. Inputs are RGB in
/// `[0,1]`.
pub fn ssim_loss<T: Scalar>(
    x: &Tensor<T>,
    g_x: &Tensor<T>,
    y: &Tensor<T>,
    f_y: &Tensor<T>,
    config: &LossConfig,
) -> Result<Tensor<T>> {
    let fwd = pyramid_decorrelation(x, g_x, config)?;
    let bwd = pyramid_decorrelation(y, f_y, config)?;
    Ok(fwd.add(&bwd))
}

/// Cycle reconstruction: mean |F(G(x)) - x| + mean |G(F(y)) - y|. Any value
/// range, as long as it is consistent per pair.
pub fn cycle_loss<T: Scalar>(
    x: &Tensor<T>,
    f_g_x: &Tensor<T>,
    y: &Tensor<T>,
    g_f_y: &Tensor<T>,
) -> Result<Tensor<T>> {
    if x.shape() != f_g_x.shape() || y.shape() != g_f_y.shape() {
        return Err(Error::shape(
            "cycle_loss: reconstruction shape differs from source",
            &[
                ("x", x.shape()),
                ("F(G(x))", f_g_x.shape()),
                ("y", y.shape()),
                ("G(F(y))", g_f_y.shape()),
            ],
        ));
    }
    Ok(f_g_x.l1_with(x).add(&g_f_y.l1_with(y)))
}

/// Least-squares adversarial terms from one discriminator's patch maps.
///
/// Generator term: mean (D(fake) - 1)^2. Discriminator term:
/// mean (D(real) - 1)^2 + mean D(fake)^2. For the discriminator term the
/// caller must score a fake that is detached from the generator graph
/// (history-buffer images are).
pub fn gan_losses<T: Scalar>(
    d_real_map: &Tensor<T>,
    d_fake_map: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    (
        gan_generator_loss(d_fake_map),
        gan_discriminator_loss(d_real_map, d_fake_map),
    )
}

/// Generator half of `gan_losses`; the fake stays attached to its graph.
pub fn gan_generator_loss<T: Scalar>(d_fake_map: &Tensor<T>) -> Tensor<T> {
    let one = T::one();
    d_fake_map.affine(one, -one).square().mean_all()
}

/// Discriminator half of `gan_losses`; see the detachment note above.
pub fn gan_discriminator_loss<T: Scalar>(
    d_real_map: &Tensor<T>,
    d_fake_map: &Tensor<T>,
) -> Tensor<T> {
    let one = T::one();
    d_real_map
        .affine(one, -one)
        .square()
        .mean_all()
        .add(&d_fake_map.square().mean_all())
}

/// Segmentation consistency: cross-entropy of the cycle-reconstructed source
/// against its true mask, plus cross-entropy of the cycle-reconstructed
/// target against the pseudo-label extracted (and detached) from the
/// target's own segmentation.
pub fn seg_consistency_loss<T: Scalar>(
    x_mask: &MaskImage,
    s_fgx_logits: &Tensor<T>,
    s_y_logits: &Tensor<T>,
    s_gfy_logits: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = s_fgx_logits.shape();
    if s.len() != 4 || s[1] != 2 || s[2] != x_mask.height || s[3] != x_mask.width {
        return Err(Error::shape(
            "seg consistency: logits do not match mask resolution",
            &[("logits", s), ("mask", &[x_mask.height, x_mask.width])],
        ));
    }
    if s_y_logits.shape() != s_gfy_logits.shape() {
        return Err(Error::shape(
            "seg consistency: target-domain logit shapes differ",
            &[("S(y)", s_y_logits.shape()), ("S(G(F(y)))", s_gfy_logits.shape())],
        ));
    }
    let source_term = s_fgx_logits.cross_entropy_with(&x_mask.to_onehot())?;
    let pseudo = MaskImage::from_class_scores(&s_y_logits.detach())?;
    let target_term = s_gfy_logits.cross_entropy_with(&pseudo.to_onehot())?;
    Ok(source_term.add(&target_term))
}

/// Scalar sub-terms that `total_objective` composes.
#[derive(Clone, Debug)]
pub struct ObjectiveTerms<T: Scalar> {
    pub gan_g: Tensor<T>,
    pub gan_f: Tensor<T>,
    pub d_x: Tensor<T>,
    pub d_y: Tensor<T>,
    pub cyc: Tensor<T>,
    pub ssim: Tensor<T>,
    pub seg: Tensor<T>,
}

/// Weighted composition of the full objective. Generators minimize
/// `total_generator`, each discriminator minimizes its own term;
/// `total_discriminator` is their sum, kept for logging.
pub fn total_objective<T: Scalar>(
    terms: ObjectiveTerms<T>,
    config: &LossConfig,
) -> Result<LossBreakdown<T>> {
    for (name, t) in [
        ("gan_g", &terms.gan_g),
        ("gan_f", &terms.gan_f),
        ("d_x", &terms.d_x),
        ("d_y", &terms.d_y),
        ("cyc", &terms.cyc),
        ("ssim", &terms.ssim),
        ("seg", &terms.seg),
    ] {
        if t.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "objective term {name} must be scalar, got shape {:?}",
                t.shape()
            )));
        }
    }
    let weighted = |t: &Tensor<T>, w: f64| t.affine(T::from_f64(w), T::zero());
    let total_generator = terms
        .gan_g
        .add(&terms.gan_f)
        .add(&weighted(&terms.cyc, config.cycle_weight))
        .add(&weighted(&terms.ssim, config.structure_weight))
        .add(&weighted(&terms.seg, config.seg_weight));
    let total_discriminator = terms.d_x.add(&terms.d_y);
    Ok(LossBreakdown {
        gan_g: terms.gan_g,
        gan_f: terms.gan_f,
        d_x: terms.d_x,
        d_y: terms.d_y,
        cyc: terms.cyc,
        ssim: terms.ssim,
        seg: terms.seg,
        total_generator,
        total_discriminator,
    })
}

/// One finite-difference audit of every objective term, in double precision.
///
/// Inputs are random but deterministic in `seed`. Each entry pairs a loss
/// name with its [`GradCheckReport`]; "total" differentiates the composed
/// generator objective through every term at once, which also exercises
/// graph reuse (the same image feeds both the cycle and structural paths).
pub fn audit_gradients(seed: u64) -> Result<Vec<(&'static str, GradCheckReport)>> {
    use rand::Rng as _;

    let config = LossConfig::default();
    let draw = |tag: &str, shape: &[usize], lo: f64, hi: f64| -> Tensor<f64> {
        let mut rng = crate::rng::stream(seed, tag);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Tensor::constant(data, shape)
    };
    let mask = {
        let mut rng = crate::rng::stream(seed, "audit/mask");
        let mut m = MaskImage::new(8, 8);
        for label in &mut m.labels {
            *label = u8::from(rng.gen::<f64>() < 0.3);
        }
        m
    };

    let mut entries = Vec::new();
    let sampled = |n: usize| crate::diff::GradCheckConfig {
        samples_per_param: Some(n),
        seed,
        ..crate::diff::GradCheckConfig::default()
    };

    let real = draw("audit/d_real", &[1, 1, 6, 6], -0.5, 1.5);
    let fake = draw("audit/d_fake", &[1, 1, 6, 6], -0.5, 1.5);
    entries.push((
        "adversarial",
        crate::diff::grad_check(
            |p| Ok(gan_generator_loss(&p[1]).add(&gan_discriminator_loss(&p[0], &p[1]))),
            &[("d_real", real), ("d_fake", fake)],
            &sampled(36),
        )?,
    ));

    let x = draw("audit/cyc_x", &[1, 3, 8, 8], 0.0, 1.0);
    let fgx = draw("audit/cyc_fgx", &[1, 3, 8, 8], 0.0, 1.0);
    let y = draw("audit/cyc_y", &[1, 3, 8, 8], 0.0, 1.0);
    let gfy = draw("audit/cyc_gfy", &[1, 3, 8, 8], 0.0, 1.0);
    entries.push((
        "cycle",
        crate::diff::grad_check(
            |p| cycle_loss(&p[0], &p[1], &p[2], &p[3]),
            &[("x", x), ("f_g_x", fgx), ("y", y), ("g_f_y", gfy)],
            &sampled(32),
        )?,
    ));

    // 32x32 keeps the coarsest level of the default 4-scale pyramid at 2x2.
    let x = draw("audit/ssim_x", &[1, 3, 32, 32], 0.0, 1.0);
    let gx = draw("audit/ssim_gx", &[1, 3, 32, 32], 0.0, 1.0);
    let y = draw("audit/ssim_y", &[1, 3, 32, 32], 0.0, 1.0);
    let fy = draw("audit/ssim_fy", &[1, 3, 32, 32], 0.0, 1.0);
    entries.push((
        "structural_similarity",
        crate::diff::grad_check(
            |p| ssim_loss(&p[0], &p[1], &p[2], &p[3], &config),
            &[("x", x), ("g_x", gx), ("y", y), ("f_y", fy)],
            &sampled(24),
        )?,
    ));

    // The pseudo-label source S(y) is detached by design, so only the two
    // differentiable logit inputs are probed.
    let s_y = draw("audit/seg_y", &[1, 2, 8, 8], -1.0, 1.0);
    let s_fgx = draw("audit/seg_fgx", &[1, 2, 8, 8], -1.0, 1.0);
    let s_gfy = draw("audit/seg_gfy", &[1, 2, 8, 8], -1.0, 1.0);
    entries.push((
        "segmentation_consistency",
        crate::diff::grad_check(
            |p| seg_consistency_loss(&mask, &p[0], &s_y, &p[1]),
            &[("s_fgx", s_fgx.clone()), ("s_gfy", s_gfy.clone())],
            &sampled(32),
        )?,
    ));

    let x = draw("audit/tot_x", &[1, 3, 32, 32], 0.0, 1.0);
    let fake_y = draw("audit/tot_fake_y", &[1, 3, 32, 32], 0.0, 1.0);
    let rec_x = draw("audit/tot_rec_x", &[1, 3, 32, 32], 0.0, 1.0);
    let y = draw("audit/tot_y", &[1, 3, 32, 32], 0.0, 1.0);
    let fake_x = draw("audit/tot_fake_x", &[1, 3, 32, 32], 0.0, 1.0);
    let rec_y = draw("audit/tot_rec_y", &[1, 3, 32, 32], 0.0, 1.0);
    let d_fy = draw("audit/tot_d_fy", &[1, 1, 6, 6], -0.5, 1.5);
    let d_fx = draw("audit/tot_d_fx", &[1, 1, 6, 6], -0.5, 1.5);
    entries.push((
        "total",
        crate::diff::grad_check(
            |p| {
                let terms = ObjectiveTerms {
                    gan_g: gan_generator_loss(&p[6]),
                    gan_f: gan_generator_loss(&p[7]),
                    d_x: Tensor::scalar(0.0),
                    d_y: Tensor::scalar(0.0),
                    cyc: cycle_loss(&p[0], &p[2], &p[3], &p[5])?,
                    ssim: ssim_loss(&p[0], &p[1], &p[3], &p[4], &config)?,
                    seg: seg_consistency_loss(&mask, &p[8], &s_y, &p[9])?,
                };
                Ok(total_objective(terms, &config)?.total_generator)
            },
            &[
                ("x", x),
                ("fake_y", fake_y),
                ("rec_x", rec_x),
                ("y", y),
                ("fake_x", fake_x),
                ("rec_y", rec_y),
                ("d_fake_y", d_fy),
                ("d_fake_x", d_fx),
                ("s_fgx", s_fgx),
                ("s_gfy", s_gfy),
            ],
            &sampled(12),
        )?,
    ));

    Ok(entries)
}
