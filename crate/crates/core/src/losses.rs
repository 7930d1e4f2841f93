//! Training objectives: cross-entropy, KL divergence, focal loss, the
//! adversarial pair and the SSIM boundary loss, plus their weighted total.
//!
//! Probabilities are clamped to `[EPS, 1]` before every logarithm.

use serde::{Deserialize, Serialize};

use crate::compat::{ssim_strips, strip_indices, Side, SsimParams, PIXEL_RANGE};
use crate::error::{Error, Result};
use crate::puzzle::GridSpec;
use crate::tensor::{Real, Tensor};

pub const EPS: f64 = 1e-12;
const ROW_SUM_TOL: f64 = 1e-6;

/// Rows of probabilities `[B, P]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution<T: Real = f64> {
    probs: Vec<T>,
    classes: usize,
}

impl<T: Real> Distribution<T> {
    pub fn new(probs: Vec<T>, classes: usize) -> Result<Self> {
        if classes == 0 || probs.is_empty() || probs.len() % classes != 0 {
            return Err(Error::Invalid(format!(
                "{} probabilities do not form rows of {classes}",
                probs.len()
            )));
        }
        for (r, row) in probs.chunks(classes).enumerate() {
            let sum = row.iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
            let in_range = row.iter().all(|&v| v >= T::zero() && v <= T::one());
            if !in_range || (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::Invalid(format!(
                    "row {r} is not a probability distribution (sum {sum})"
                )));
            }
        }
        Ok(Distribution { probs, classes })
    }

    pub fn one_hot(labels: &[usize], classes: usize) -> Result<Self> {
        let mut probs = vec![T::zero(); labels.len() * classes];
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::Invalid(format!("label {l} out of range for {classes} classes")));
            }
            probs[i * classes + l] = T::one();
        }
        Distribution::new(probs, classes)
    }

    /// Row-wise softmax of logits `[B, P]`.
    pub fn softmax(logits: &Tensor<T>) -> Result<Self> {
        let shape = logits.shape();
        if shape.len() != 2 {
            return Err(Error::Shape(format!("logits must be [B, P], got {shape:?}")));
        }
        let probs = logits.data().chunks(shape[1]).flat_map(softmax_row).collect();
        Ok(Distribution {
            probs,
            classes: shape[1],
        })
    }

    pub fn rows(&self) -> usize {
        self.probs.len() / self.classes
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self) -> &[T] {
        &self.probs
    }

    fn row(&self, r: usize) -> &[T] {
        &self.probs[r * self.classes..(r + 1) * self.classes]
    }
}

fn softmax_row<T: Real>(row: &[T]) -> Vec<T> {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

fn clamped_ln<T: Real>(p: T) -> T {
    p.max(T::from_f64_lossy(EPS)).ln()
}

fn same_shape<T: Real>(a: &Distribution<T>, b: &Distribution<T>) -> Result<()> {
    if a.classes != b.classes || a.probs.len() != b.probs.len() {
        return Err(Error::Shape(format!(
            "distributions differ in shape: {}x{} vs {}x{}",
            a.rows(),
            a.classes,
            b.rows(),
            b.classes
        )));
    }
    Ok(())
}

/// `-Σ target·ln(pred)`, mean over rows.
pub fn cross_entropy<T: Real>(pred: &Distribution<T>, target: &Distribution<T>) -> Result<T> {
    focal_loss(pred, target, 0.0)
}

/// `Σ p·ln(p/q)`, mean over rows.
pub fn kl_divergence<T: Real>(p: &Distribution<T>, q: &Distribution<T>) -> Result<T> {
    same_shape(p, q)?;
    let mut total = T::zero();
    for (&a, &b) in p.probs.iter().zip(&q.probs) {
        if a > T::zero() {
            total += a * (clamped_ln(a) - clamped_ln(b));
        }
    }
    Ok(total / T::from_usize(p.rows()).unwrap())
}

/// `-Σ_k target_k·(1 - pred_k)^γ·ln(pred_k)` over the target's support, mean
/// over rows. For a one-hot target this is `-(1 - p_t)^γ·ln p_t`.
pub fn focal_loss<T: Real>(pred: &Distribution<T>, target: &Distribution<T>, gamma: f64) -> Result<T> {
    same_shape(pred, target)?;
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Invalid(format!("focal exponent must be >= 0, got {gamma}")));
    }
    let g = T::from_f64_lossy(gamma);
    let mut total = T::zero();
    for r in 0..pred.rows() {
        for (&q, &p) in pred.row(r).iter().zip(target.row(r)) {
            if p > T::zero() {
                let factor = if gamma == 0.0 { T::one() } else { (T::one() - q).max(T::zero()).powf(g) };
                total -= p * factor * clamped_ln(q);
            }
        }
    }
    Ok(total / T::from_usize(pred.rows()).unwrap())
}

/// Focal loss of `softmax(logits)` against one-hot labels, and its gradient
/// with respect to the logits.
pub fn jigsaw_loss<T: Real>(logits: &Tensor<T>, labels: &[usize], gamma: f64) -> Result<(T, Tensor<T>)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::Shape(format!(
            "logits {shape:?} do not match {} labels",
            labels.len()
        )));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Invalid(format!("focal exponent must be >= 0, got {gamma}")));
    }
    if let Some(&bad) = logits.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            component: "L_jigsaw".into(),
            value: bad.to_f64().unwrap_or(f64::NAN),
        });
    }
    let classes = shape[1];
    let batch = T::from_usize(labels.len()).unwrap();
    let g = T::from_f64_lossy(gamma);
    let ln_eps = T::from_f64_lossy(EPS.ln());
    let mut total = T::zero();
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &t) in logits.data().chunks(classes).zip(labels) {
        if t >= classes {
            return Err(Error::Invalid(format!("label {t} out of range for {classes} classes")));
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let probs: Vec<T> = row.iter().map(|&v| (v - lse).exp()).collect();
        let log_pt = (row[t] - lse).max(ln_eps);
        let pt = probs[t];
        let rest = (T::one() - pt).max(T::zero());
        let factor = if gamma == 0.0 { T::one() } else { rest.powf(g) };
        total -= factor * log_pt;
        // dL/dz_k = [γ(1-p_t)^(γ-1)·p_t·ln p_t - (1-p_t)^γ]·(δ_tk - p_k)
        let slope = if gamma == 0.0 || rest == T::zero() {
            T::zero()
        } else {
            g * rest.powf(g - T::one()) * pt * log_pt
        };
        let coef = (slope - factor) / batch;
        grad.extend(probs.iter().enumerate().map(|(k, &pk)| {
            let delta = if k == t { T::one() } else { T::zero() };
            coef * (delta - pk)
        }));
    }
    Ok((total / batch, Tensor::from_vec(shape, grad)?))
}

fn softplus<T: Real>(x: T) -> T {
    // ln(1 + e^x) without overflow
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Discriminator and generator adversarial losses on patch logits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdversarialLosses<T> {
    pub d_loss: T,
    pub g_loss: T,
}

/// `d = mean softplus(-real) + mean softplus(fake)`;
/// `g = mean softplus(-fake)`, or `-mean softplus(fake)` when `saturating`.
pub fn adversarial_losses<T: Real>(
    real: &Tensor<T>,
    fake: &Tensor<T>,
    saturating: bool,
) -> Result<AdversarialLosses<T>> {
    if real.shape() != fake.shape() {
        return Err(Error::Shape(format!(
            "real logits {:?} and fake logits {:?} differ",
            real.shape(),
            fake.shape()
        )));
    }
    let (d_loss, _, _) = discriminator_loss(real, fake);
    let (g_loss, _) = generator_adversarial_loss(fake, saturating);
    Ok(AdversarialLosses { d_loss, g_loss })
}

/// `mean softplus(-x)`: the cost of logits that should read "real".
pub fn real_target_term<T: Real>(logits: &Tensor<T>) -> (T, Tensor<T>) {
    let n = T::from_usize(logits.len()).unwrap();
    let loss = logits.data().iter().map(|&x| softplus(-x)).sum::<T>() / n;
    (loss, logits.map(|x| (sigmoid(x) - T::one()) / n))
}

/// `mean softplus(x)`: the cost of logits that should read "fake".
pub fn fake_target_term<T: Real>(logits: &Tensor<T>) -> (T, Tensor<T>) {
    let n = T::from_usize(logits.len()).unwrap();
    let loss = logits.data().iter().map(|&x| softplus(x)).sum::<T>() / n;
    (loss, logits.map(|x| sigmoid(x) / n))
}

/// Discriminator loss and its gradients with respect to both logit maps.
pub fn discriminator_loss<T: Real>(real: &Tensor<T>, fake: &Tensor<T>) -> (T, Tensor<T>, Tensor<T>) {
    let (lr, g_real) = real_target_term(real);
    let (lf, g_fake) = fake_target_term(fake);
    (lr + lf, g_real, g_fake)
}

/// Generator adversarial loss and its gradient with respect to the fake logits.
pub fn generator_adversarial_loss<T: Real>(fake: &Tensor<T>, saturating: bool) -> (T, Tensor<T>) {
    if saturating {
        let (loss, grad) = fake_target_term(fake);
        (-loss, grad.map(|g| -g))
    } else {
        real_target_term(fake)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundaryLossConfig {
    /// Strip width in pixels.
    pub strip_width: usize,
    pub k1: f64,
    pub k2: f64,
    /// Sliding-window length along the strip.
    pub window: usize,
}

impl Default for BoundaryLossConfig {
    fn default() -> Self {
        BoundaryLossConfig {
            strip_width: 2,
            k1: 0.01,
            k2: 0.03,
            window: 8,
        }
    }
}

impl BoundaryLossConfig {
    pub fn validate(&self, piece_px: usize) -> Result<()> {
        if self.strip_width == 0 || 2 * self.strip_width >= piece_px {
            return Err(Error::Config(format!(
                "boundary strip width {} must be in 1..{} for {piece_px}px pieces",
                self.strip_width,
                piece_px.div_ceil(2)
            )));
        }
        if self.window == 0 || !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::Config("SSIM window and constants must be positive".into()));
        }
        Ok(())
    }

    fn ssim(&self) -> SsimParams {
        SsimParams {
            k1: self.k1,
            k2: self.k2,
            window: self.window,
            data_range: PIXEL_RANGE,
        }
    }
}

/// Boundary loss `(1 - SSIM_tb) + (1 - SSIM_lr)` averaged over the batch,
/// with its gradient with respect to the images `[B, 3, H, W]`.
pub fn boundary_loss<T: Real>(
    images: &Tensor<T>,
    grid: GridSpec,
    cfg: &BoundaryLossConfig,
) -> Result<(T, Tensor<T>)> {
    cfg.validate(grid.piece_px)?;
    let [b, c, h, w] = images.dims4()?;
    let side = grid.image_side();
    if c != 3 || h != side || w != side {
        return Err(Error::Shape(format!(
            "boundary loss expects [B, 3, {side}, {side}] images, got {:?}",
            images.shape()
        )));
    }
    let (n, p, depth) = (grid.n, grid.piece_px, cfg.strip_width);
    let params = cfg.ssim();
    let pairs = n * (n - 1);
    let plane = 3 * side * side;
    // (first side, second side, cell offsets) for each relation
    let relations = [
        (Side::Bottom, Side::Top, (1usize, 0usize)),
        (Side::Right, Side::Left, (0, 1)),
    ];
    let mut plans = Vec::new();
    for &(sa, sb, (dr, dc)) in &relations {
        let mut list = Vec::with_capacity(pairs);
        for r in 0..n - dr {
            for col in 0..n - dc {
                let ia = strip_indices(3, side, (r * p, col * p), p, depth, sa, side);
                let ib = strip_indices(3, side, ((r + dr) * p, (col + dc) * p), p, depth, sb, side);
                list.push((ia, ib));
            }
        }
        plans.push(list);
    }

    let scale = T::one() / T::from_usize(pairs * b).unwrap();
    let mut total = T::zero();
    let mut grad = vec![T::zero(); images.len()];
    let data = images.data();
    for img in 0..b {
        let base = img * plane;
        for list in &plans {
            for (ia, ib) in list {
                let xa: Vec<T> = ia.iter().map(|&i| data[base + i]).collect();
                let xb: Vec<T> = ib.iter().map(|&i| data[base + i]).collect();
                let mut ga = vec![T::zero(); xa.len()];
                let mut gb = vec![T::zero(); xb.len()];
                let s = ssim_strips(&xa, &xb, [3, depth, p], &params, Some((&mut ga, &mut gb)));
                total += (T::one() - s) * scale;
                for (k, &i) in ia.iter().enumerate() {
                    grad[base + i] -= ga[k] * scale;
                }
                for (k, &i) in ib.iter().enumerate() {
                    grad[base + i] -= gb[k] * scale;
                }
            }
        }
    }
    Ok((total, Tensor::from_vec(images.shape(), grad)?))
}

/// Relative weights of the three objectives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub w_jigsaw: f64,
    pub w_gan: f64,
    pub w_boundary: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_jigsaw: 1.0,
            w_gan: 1.0,
            w_boundary: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("w_jigsaw", self.w_jigsaw),
            ("w_gan", self.w_gan),
            ("w_boundary", self.w_boundary),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight {name} must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Per-step loss values.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub jigsaw: f64,
    pub gan_d: f64,
    pub gan_g: f64,
    pub boundary: f64,
}

impl LossComponents {
    /// Fail with the name of the first non-finite component.
    pub fn check_finite(&self) -> Result<()> {
        for (component, value) in [
            ("L_jigsaw", self.jigsaw),
            ("L_GAN_D", self.gan_d),
            ("L_GAN_G", self.gan_g),
            ("L_boundary", self.boundary),
        ] {
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    component: component.to_string(),
                    value,
                });
            }
        }
        Ok(())
    }
}

/// Weighted objective of the classifier and generator.
pub fn total_loss(components: &LossComponents, weights: &LossWeights) -> Result<f64> {
    components.check_finite()?;
    Ok(weights.w_jigsaw * components.jigsaw
        + weights.w_gan * components.gan_g
        + weights.w_boundary * components.boundary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dist(rows: &[&[f64]]) -> Distribution<f64> {
        Distribution::new(rows.concat(), rows[0].len()).unwrap()
    }

    fn random_dist(rows: usize, classes: usize, rng: &mut ChaCha8Rng) -> Distribution<f64> {
        let mut v: Vec<f64> = (0..rows * classes).map(|_| rng.gen_range(0.001..1.0)).collect();
        for row in v.chunks_mut(classes) {
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= s);
        }
        Distribution::new(v, classes).unwrap()
    }

    #[test]
    fn distributions_are_validated() {
        assert!(Distribution::new(vec![0.5, 0.6], 2).is_err());
        assert!(Distribution::new(vec![1.5, -0.5], 2).is_err());
        assert!(Distribution::new(vec![0.5, 0.5, 1.0], 2).is_err());
        assert!(Distribution::<f64>::one_hot(&[3], 3).is_err());
        let s = Distribution::softmax(&Tensor::from_vec(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
        assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_reference_values() {
        let target = Distribution::one_hot(&[2], 10).unwrap();
        assert_eq!(cross_entropy(&target, &target).unwrap(), 0.0);
        let uniform = Distribution::new(vec![0.1; 10], 10).unwrap();
        assert!((cross_entropy(&uniform, &target).unwrap() - 10f64.ln()).abs() < 1e-12);
        let p = dist(&[&[0.2, 0.3, 0.5]]);
        let entropy: f64 = -[0.2f64, 0.3, 0.5].iter().map(|v| v * v.ln()).sum::<f64>();
        assert!((cross_entropy(&p, &p).unwrap() - entropy).abs() < 1e-12);
        assert!(cross_entropy(&p, &target).is_err());
    }

    #[test]
    fn kl_reference_values() {
        let p = dist(&[&[1.0, 0.0]]);
        let q = dist(&[&[0.5, 0.5]]);
        assert!((kl_divergence(&p, &q).unwrap() - 2f64.ln()).abs() < 1e-12);
        assert_eq!(kl_divergence(&q, &q).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let (a, b) = (random_dist(3, 5, &mut rng), random_dist(3, 5, &mut rng));
            let kl = kl_divergence(&a, &b).unwrap();
            let identity = cross_entropy(&b, &a).unwrap() - cross_entropy(&a, &a).unwrap();
            assert!(kl >= 0.0);
            assert!((kl - identity).abs() < 1e-12);
        }
    }

    #[test]
    fn focal_reference_values() {
        let pred = dist(&[&[0.9, 0.1]]);
        let target = Distribution::one_hot(&[0], 2).unwrap();
        let v = focal_loss(&pred, &target, 2.0).unwrap();
        assert!((v - 0.01 * -(0.9f64.ln())).abs() < 1e-12);
        assert!((v - 0.00105361).abs() < 1e-8);
        assert!(focal_loss(&pred, &target, -1.0).is_err());
    }

    #[test]
    fn focal_bounds_and_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let (a, b) = (random_dist(2, 6, &mut rng), random_dist(2, 6, &mut rng));
            let ce = cross_entropy(&a, &b).unwrap();
            assert!((focal_loss(&a, &b, 0.0).unwrap() - ce).abs() <= 1e-9);
            let fl = focal_loss(&a, &b, 2.0).unwrap();
            assert!(fl <= ce && fl >= 0.0);
        }
    }

    #[test]
    fn jigsaw_loss_reference_values() {
        let peaked = Tensor::from_vec(&[1, 4], vec![0.0, 20.0, 0.0, 0.0]).unwrap();
        assert!(jigsaw_loss(&peaked, &[1], 2.0).unwrap().0 < 1e-3);
        let flat = Tensor::<f64>::zeros(&[2, 10]);
        assert!((jigsaw_loss(&flat, &[3, 7], 0.0).unwrap().0 - 10f64.ln()).abs() < 1e-12);
        assert!(jigsaw_loss(&flat, &[3, 10], 0.0).is_err());
        assert!(jigsaw_loss(&flat, &[3], 0.0).is_err());
    }

    #[test]
    fn jigsaw_loss_matches_focal_of_softmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::<f64>::randn(&[4, 7], 2.0, &mut rng);
        let labels = [0, 6, 3, 3];
        let (v, _) = jigsaw_loss(&logits, &labels, 2.0).unwrap();
        let pred = Distribution::softmax(&logits).unwrap();
        let want = focal_loss(&pred, &Distribution::one_hot(&labels, 7).unwrap(), 2.0).unwrap();
        assert!((v - want).abs() < 1e-12);
    }

    #[test]
    fn jigsaw_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for gamma in [0.0, 0.5, 2.0] {
            let logits = Tensor::<f64>::randn(&[3, 5], 1.5, &mut rng);
            let labels = [1, 4, 0];
            let (_, grad) = jigsaw_loss(&logits, &labels, gamma).unwrap();
            let h = 1e-6;
            for i in 0..logits.len() {
                let (mut p, mut m) = (logits.clone(), logits.clone());
                p.data_mut()[i] += h;
                m.data_mut()[i] -= h;
                let num = (jigsaw_loss(&p, &labels, gamma).unwrap().0 - jigsaw_loss(&m, &labels, gamma).unwrap().0)
                    / (2.0 * h);
                let a = grad.data()[i];
                assert!((num - a).abs() <= 1e-5 * num.abs().max(a.abs()).max(1e-8), "γ={gamma} {i}: {num} vs {a}");
            }
        }
    }

    #[test]
    fn adversarial_reference_values() {
        let zero = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
        let l = adversarial_losses(&zero, &zero, false).unwrap();
        assert!((l.d_loss - 2.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l.g_loss - 2f64.ln()).abs() < 1e-12);
        let confident = adversarial_losses(&Tensor::full(&[1, 1, 2, 2], 50.0), &Tensor::full(&[1, 1, 2, 2], -50.0), false)
            .unwrap();
        assert!(confident.d_loss < 1e-20);
        assert!(adversarial_losses(&zero, &Tensor::zeros(&[1, 1, 3, 3]), false).is_err());
    }

    #[test]
    fn generator_loss_is_monotone_in_fake_logit() {
        for saturating in [false, true] {
            let mut prev = f64::INFINITY;
            for k in 0..1000 {
                let x = -20.0 + 40.0 * k as f64 / 999.0;
                let (g, _) = generator_adversarial_loss(&Tensor::full(&[1, 1, 1, 1], x), saturating);
                assert!(g < prev, "saturating={saturating} x={x}");
                prev = g;
            }
        }
    }

    #[test]
    fn adversarial_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let real = Tensor::<f64>::randn(&[2, 1, 2, 2], 2.0, &mut rng);
        let fake = Tensor::<f64>::randn(&[2, 1, 2, 2], 2.0, &mut rng);
        let (_, gr, gf) = discriminator_loss(&real, &fake);
        let h = 1e-6;
        for i in 0..real.len() {
            let bump = |t: &Tensor<f64>, d: f64| {
                let mut c = t.clone();
                c.data_mut()[i] += d;
                c
            };
            let num_r = (discriminator_loss(&bump(&real, h), &fake).0 - discriminator_loss(&bump(&real, -h), &fake).0) / (2.0 * h);
            let num_f = (discriminator_loss(&real, &bump(&fake, h)).0 - discriminator_loss(&real, &bump(&fake, -h)).0) / (2.0 * h);
            assert!((num_r - gr.data()[i]).abs() < 1e-8);
            assert!((num_f - gf.data()[i]).abs() < 1e-8);
            for sat in [false, true] {
                let (_, gg) = generator_adversarial_loss(&fake, sat);
                let num = (generator_adversarial_loss(&bump(&fake, h), sat).0 - generator_adversarial_loss(&bump(&fake, -h), sat).0)
                    / (2.0 * h);
                assert!((num - gg.data()[i]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0f64), 1000.0);
        assert!(softplus(-1000.0f64) >= 0.0 && softplus(-1000.0f64) < 1e-300);
        assert!((softplus(0.0f64) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn boundary_loss_is_zero_for_seamless_strips() {
        let grid = GridSpec::new(2, 16).unwrap();
        let img = Tensor::<f64>::full(&[2, 3, 32, 32], 0.3);
        let (v, _) = boundary_loss(&img, grid, &BoundaryLossConfig::default()).unwrap();
        assert!(v.abs() < 1e-12);
        // every tile mirrored about its seams, so facing strips coincide
        let mut data = vec![0.0; 3 * 32 * 32];
        for c in 0..3 {
            for y in 0..32 {
                for x in 0..32 {
                    let fx = (x % 16).min(15 - x % 16) as f64;
                    let fy = (y % 16).min(15 - y % 16) as f64;
                    data[(c * 32 + y) * 32 + x] = ((fx * 0.7 + fy * 0.3 + c as f64) * 0.9).sin();
                }
            }
        }
        let img = Tensor::from_vec(&[1, 3, 32, 32], data).unwrap();
        let (v, _) = boundary_loss(&img, grid, &BoundaryLossConfig::default()).unwrap();
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn boundary_loss_rejects_bad_dimensions() {
        let grid = GridSpec::new(2, 16).unwrap();
        let cfg = BoundaryLossConfig::default();
        assert!(boundary_loss(&Tensor::<f64>::zeros(&[1, 3, 30, 32]), grid, &cfg).is_err());
        assert!(boundary_loss(&Tensor::<f64>::zeros(&[1, 1, 32, 32]), grid, &cfg).is_err());
        let wide = BoundaryLossConfig { strip_width: 8, ..cfg };
        assert!(boundary_loss(&Tensor::<f64>::zeros(&[1, 3, 32, 32]), grid, &wide).is_err());
    }

    #[test]
    fn boundary_gradient_matches_finite_differences() {
        let grid = GridSpec::new(2, 8).unwrap();
        let cfg = BoundaryLossConfig { window: 4, ..BoundaryLossConfig::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = Tensor::<f64>::uniform(&[2, 3, 16, 16], -1.0, 1.0, &mut rng);
        let (_, grad) = boundary_loss(&img, grid, &cfg).unwrap();
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for i in 0..img.len() {
            let (mut p, mut m) = (img.clone(), img.clone());
            p.data_mut()[i] += h;
            m.data_mut()[i] -= h;
            let num = (boundary_loss(&p, grid, &cfg).unwrap().0 - boundary_loss(&m, grid, &cfg).unwrap().0) / (2.0 * h);
            let a = grad.data()[i];
            if num == 0.0 && a == 0.0 {
                continue;
            }
            worst = worst.max((num - a).abs() / num.abs().max(a.abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn total_is_weighted_sum() {
        let c = LossComponents { jigsaw: 0.5, gan_d: 9.0, gan_g: 0.7, boundary: 0.1 };
        assert!((total_loss(&c, &LossWeights::default()).unwrap() - 1.3).abs() < 1e-12);
        let only = LossWeights { w_gan: 0.0, w_boundary: 0.0, ..LossWeights::default() };
        assert_eq!(total_loss(&c, &only).unwrap(), 0.5);
        assert!(LossWeights { w_gan: -1.0, ..LossWeights::default() }.validate().is_err());
        let bad = LossComponents { boundary: f64::NAN, ..c };
        match total_loss(&bad, &only) {
            Err(Error::NonFinite { component, .. }) => assert_eq!(component, "L_boundary"),
            other => panic!("{other:?}"),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn losses_are_non_negative(seed in any::<u64>(), classes in 2usize..8) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (a, b) = (random_dist(2, classes, &mut rng), random_dist(2, classes, &mut rng));
            prop_assert!(kl_divergence(&a, &b).unwrap() >= -1e-15);
            prop_assert!(cross_entropy(&a, &b).unwrap() >= 0.0);
            prop_assert!(focal_loss(&a, &b, 2.0).unwrap() >= 0.0);
            prop_assert!(kl_divergence(&a, &a).unwrap().abs() < 1e-15);
        }

        #[test]
        fn boundary_loss_stays_in_range(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Tensor::<f64>::uniform(&[1, 3, 24, 24], -1.0, 1.0, &mut rng);
            let (v, _) = boundary_loss(&img, GridSpec::new(3, 8).unwrap(), &BoundaryLossConfig::default()).unwrap();
            prop_assert!((0.0..=4.0).contains(&v));
        }
    }
}
