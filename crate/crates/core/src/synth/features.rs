//! Fixed convolutional descriptor network, Gram matrices and the
//! content/style objective with its analytic pixel gradient.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{ImageTensor, CHANNELS};
use crate::nn::{Activation, Conv, Tensor3};

const WIDTHS: [usize; 4] = [8, 16, 16, 32];
const STRIDES: [usize; 4] = [1, 2, 1, 2];
const ACTIVATION: Activation = Activation::Tanh;

/// Multiplies the Gram term so that `alpha` near 1 balances content and
/// style for natural-looking inputs.
pub const STYLE_SCALE: f64 = 1e3;

/// Four frozen random-weight 3x3 tanh convolutions.
///
/// Layers are indexed from 0; the content layer is index 1 (the second
/// layer) and every layer contributes to the style representation.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureExtractor {
    convs: Vec<Conv>,
    params: Vec<f64>,
    rng_seed: u64,
    content_layer: usize,
    style_layers: Vec<usize>,
}

impl FeatureExtractor {
    pub fn new(rng_seed: u64) -> Self {
        let mut convs = Vec::with_capacity(WIDTHS.len());
        let mut in_c = CHANNELS;
        let mut offset = 0;
        for (&w, &s) in WIDTHS.iter().zip(&STRIDES) {
            let conv = Conv::new(in_c, w, 3, s, offset);
            offset = conv.end();
            in_c = w;
            convs.push(conv);
        }
        let mut params = vec![0.0; offset];
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        for conv in &convs {
            conv.init(&mut params, &mut rng, 1.0);
        }
        Self {
            convs,
            params,
            rng_seed,
            content_layer: 1,
            style_layers: vec![0, 1, 2, 3],
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn content_layer(&self) -> usize {
        self.content_layer
    }

    pub fn style_layers(&self) -> &[usize] {
        &self.style_layers
    }

    pub fn depth(&self) -> usize {
        self.convs.len()
    }

    /// Post-activation feature maps of every layer.
    pub fn features(&self, x: &Tensor3) -> Vec<Tensor3> {
        let mut maps: Vec<Tensor3> = Vec::with_capacity(self.convs.len());
        let centered = x.map(|v| v - 0.5);
        for (i, conv) in self.convs.iter().enumerate() {
            let src = if i == 0 { &centered } else { &maps[i - 1] };
            let mut y = conv.forward(&self.params, src);
            ACTIVATION.forward(&mut y);
            maps.push(y);
        }
        maps
    }

    pub fn image_features(&self, img: &ImageTensor) -> Vec<Tensor3> {
        self.features(&Tensor3::from_image(img))
    }

    /// Backpropagates per-layer output gradients down to the input pixels.
    /// `layer_grads[i]` is the loss gradient w.r.t. layer `i`'s output, if any.
    fn backprop(&self, x: &Tensor3, maps: &[Tensor3], mut layer_grads: Vec<Option<Tensor3>>) -> Tensor3 {
        let mut carry: Option<Tensor3> = None;
        for i in (0..self.convs.len()).rev() {
            let mut g = match (carry.take(), layer_grads[i].take()) {
                (Some(mut a), Some(b)) => {
                    a.data.iter_mut().zip(&b.data).for_each(|(a, b)| *a += b);
                    a
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => continue,
            };
            ACTIVATION.backward(&maps[i].data, &mut g.data);
            let (ih, iw) = if i == 0 { (x.h, x.w) } else { (maps[i - 1].h, maps[i - 1].w) };
            carry = Some(self.convs[i].backward_input(&self.params, ih, iw, &g));
        }
        carry.unwrap_or_else(|| Tensor3::zeros(x.c, x.h, x.w))
    }
}

/// Symmetric `dim x dim` channel inner-product matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Gram {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Gram {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }
}

/// `G[i][j] = Σ_p F[i][p]·F[j][p] / (C·H·W)`.
pub fn gram_matrix(features: &Tensor3) -> Result<Gram> {
    if features.c == 0 || features.h == 0 || features.w == 0 || features.data.is_empty() {
        return Err(Error::arg("gram matrix of an empty feature map"));
    }
    let c = features.c;
    let norm = features.data.len() as f64;
    let mut data = vec![0.0; c * c];
    for i in 0..c {
        let fi = features.channel(i);
        for j in i..c {
            let fj = features.channel(j);
            let v = fi.iter().zip(fj).map(|(a, b)| a * b).sum::<f64>() / norm;
            data[i * c + j] = v;
            data[j * c + i] = v;
        }
    }
    Ok(Gram { dim: c, data })
}

/// Gram matrices of a style image at the extractor's style layers.
#[derive(Clone, Debug, PartialEq)]
pub struct StyleTarget {
    pub layers: Vec<usize>,
    pub grams: Vec<Gram>,
}

impl StyleTarget {
    pub fn from_image(fx: &FeatureExtractor, style: &ImageTensor) -> Result<Self> {
        let maps = fx.image_features(style);
        let grams = fx
            .style_layers()
            .iter()
            .map(|&l| gram_matrix(&maps[l]))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            layers: fx.style_layers().to_vec(),
            grams,
        })
    }

    fn check(&self, fx: &FeatureExtractor) -> Result<()> {
        if self.layers != fx.style_layers() || self.grams.len() != self.layers.len() {
            return Err(Error::arg(format!(
                "style target layers {:?} do not match extractor style layers {:?}",
                self.layers,
                fx.style_layers()
            )));
        }
        for (&l, g) in self.layers.iter().zip(&self.grams) {
            let expected = WIDTHS.get(l).copied().unwrap_or(0);
            if g.dim != expected {
                return Err(Error::arg(format!(
                    "style target layer {l} has {}x{} Gram, expected {expected}x{expected}",
                    g.dim, g.dim
                )));
            }
        }
        Ok(())
    }
}

fn gram_mse(a: &Gram, b: &Gram) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64
}

fn feature_mse(a: &Tensor3, b: &Tensor3) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.data.len() as f64
}

fn style_term(maps: &[Tensor3], target: &StyleTarget) -> Result<f64> {
    let mut total = 0.0;
    for (&l, t) in target.layers.iter().zip(&target.grams) {
        total += gram_mse(&gram_matrix(&maps[l])?, t);
    }
    Ok(STYLE_SCALE * total)
}

/// `STYLE_SCALE` times the sum over style layers of the mean squared Gram difference.
pub fn style_loss(candidate: &ImageTensor, target: &StyleTarget, fx: &FeatureExtractor) -> Result<f64> {
    target.check(fx)?;
    style_term(&fx.image_features(candidate), target)
}

/// Mean squared difference of content-layer features.
pub fn content_loss(candidate: &ImageTensor, content: &ImageTensor, fx: &FeatureExtractor) -> Result<f64> {
    if candidate.dims() != content.dims() {
        return Err(Error::arg(format!(
            "candidate is {:?} but content is {:?}",
            candidate.dims(),
            content.dims()
        )));
    }
    let l = fx.content_layer();
    Ok(feature_mse(
        &fx.image_features(candidate)[l],
        &fx.image_features(content)[l],
    ))
}

/// Value of `content_loss + alpha * style_loss` split into its parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossParts {
    pub content: f64,
    pub style: f64,
    pub total: f64,
}

/// The synthesis objective for one content image and one style target.
pub struct Objective<'a> {
    fx: &'a FeatureExtractor,
    content_features: Tensor3,
    target: StyleTarget,
    alpha: f64,
}

impl<'a> Objective<'a> {
    pub fn new(fx: &'a FeatureExtractor, content: &Tensor3, target: StyleTarget, alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::arg(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        target.check(fx)?;
        let content_features = fx.features(content).swap_remove(fx.content_layer());
        Ok(Self {
            fx,
            content_features,
            target,
            alpha,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn parts(&self, x: &Tensor3) -> Result<LossParts> {
        let maps = self.fx.features(x);
        let content = feature_mse(&maps[self.fx.content_layer()], &self.content_features);
        let style = if self.alpha == 0.0 { 0.0 } else { style_term(&maps, &self.target)? };
        Ok(LossParts {
            content,
            style,
            total: content + self.alpha * style,
        })
    }

    pub fn value(&self, x: &Tensor3) -> Result<f64> {
        Ok(self.parts(x)?.total)
    }

    /// Objective value and its gradient with respect to the pixels of `x`.
    pub fn value_and_grad(&self, x: &Tensor3) -> Result<(f64, Tensor3)> {
        let maps = self.fx.features(x);
        let mut layer_grads: Vec<Option<Tensor3>> = vec![None; maps.len()];

        let cl = self.fx.content_layer();
        let f = &maps[cl];
        let n = f.data.len() as f64;
        let mut content = 0.0;
        let mut g = Tensor3::zeros(f.c, f.h, f.w);
        for ((gv, a), b) in g.data.iter_mut().zip(&f.data).zip(&self.content_features.data) {
            let d = a - b;
            content += d * d;
            *gv = 2.0 * d / n;
        }
        content /= n;
        layer_grads[cl] = Some(g);

        let mut style = 0.0;
        if self.alpha != 0.0 {
            for (&l, target) in self.target.layers.iter().zip(&self.target.grams) {
                let f = &maps[l];
                let gram = gram_matrix(f)?;
                style += STYLE_SCALE * gram_mse(&gram, target);
                let c = f.c;
                let p = f.plane();
                let n = f.data.len() as f64;
                let diff: Vec<f64> = gram.data.iter().zip(&target.data).map(|(a, b)| a - b).collect();
                // d/dF[k][p] of mean((G - T)^2) = 4/(C^2 N) Σ_j D[k][j] F[j][p]
                let scale = self.alpha * STYLE_SCALE * 4.0 / ((c * c) as f64 * n);
                let mut gs = Tensor3::zeros(f.c, f.h, f.w);
                for k in 0..c {
                    let dst = &mut gs.data[k * p..(k + 1) * p];
                    for j in 0..c {
                        let coef = scale * diff[k * c + j];
                        if coef == 0.0 {
                            continue;
                        }
                        for (d, s) in dst.iter_mut().zip(f.channel(j)) {
                            *d += coef * s;
                        }
                    }
                }
                match layer_grads[l].as_mut() {
                    Some(existing) => existing.data.iter_mut().zip(&gs.data).for_each(|(a, b)| *a += b),
                    None => layer_grads[l] = Some(gs),
                }
            }
        }
        let grad = self.fx.backprop(x, &maps, layer_grads);
        Ok((content + self.alpha * style, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor3 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor3::from_vec(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn random_image(h: usize, w: usize, seed: u64) -> ImageTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ImageTensor::new(h, w, (0..3 * h * w).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn gram_of_constant_map() {
        let g = gram_matrix(&Tensor3::from_vec(1, 2, 2, vec![1.0; 4]).unwrap()).unwrap();
        assert_eq!(g.data, vec![1.0]);
    }

    #[test]
    fn gram_zero_channel_has_zero_row() {
        let mut data = vec![0.5, -1.0, 2.0, 0.25];
        data.extend([0.0; 4]);
        let g = gram_matrix(&Tensor3::from_vec(2, 2, 2, data).unwrap()).unwrap();
        assert!(g.get(0, 0) > 0.0);
        assert_eq!([g.get(0, 1), g.get(1, 0), g.get(1, 1)], [0.0; 3]);
    }

    #[test]
    fn gram_matches_pairwise_loop() {
        let f = random_map(3, 4, 4, 9);
        let g = gram_matrix(&f).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for y in 0..4 {
                    for x in 0..4 {
                        acc += f.data[(i * 4 + y) * 4 + x] * f.data[(j * 4 + y) * 4 + x];
                    }
                }
                assert!((g.get(i, j) - acc / 48.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn gram_rejects_empty() {
        assert!(gram_matrix(&Tensor3::zeros(0, 2, 2)).is_err());
    }

    #[test]
    fn extractor_is_reproducible() {
        assert_eq!(FeatureExtractor::new(4), FeatureExtractor::new(4));
        assert_ne!(FeatureExtractor::new(4).params(), FeatureExtractor::new(5).params());
    }

    #[test]
    fn self_style_is_zero() {
        let fx = FeatureExtractor::new(1);
        let img = random_image(16, 16, 2);
        let target = StyleTarget::from_image(&fx, &img).unwrap();
        assert!(style_loss(&img, &target, &fx).unwrap().abs() < 1e-10);
    }

    #[test]
    fn zero_target_zero_candidate() {
        // Features of an all-zero image are not zero (tanh of biases and the
        // centering shift), so build a target from those features.
        let fx = FeatureExtractor::new(1);
        let black = ImageTensor::gray(8, 8, 0.0).unwrap();
        let target = StyleTarget::from_image(&fx, &black).unwrap();
        assert_eq!(style_loss(&black, &target, &fx).unwrap(), 0.0);
        let zero_target = StyleTarget {
            layers: target.layers.clone(),
            grams: target.grams.iter().map(|g| Gram { dim: g.dim, data: vec![0.0; g.data.len()] }).collect(),
        };
        let direct: f64 = target.grams.iter().map(|g| g.data.iter().map(|v| v * v).sum::<f64>() / g.data.len() as f64).sum::<f64>() * STYLE_SCALE;
        assert!((style_loss(&black, &zero_target, &fx).unwrap() - direct).abs() < 1e-12);
    }

    #[test]
    fn mismatched_target_is_rejected() {
        let fx = FeatureExtractor::new(1);
        let img = random_image(8, 8, 3);
        let mut target = StyleTarget::from_image(&fx, &img).unwrap();
        target.layers.pop();
        assert!(matches!(style_loss(&img, &target, &fx), Err(Error::Argument(_))));
    }

    #[test]
    fn content_loss_identity_and_shape_check() {
        let fx = FeatureExtractor::new(1);
        let a = random_image(8, 8, 5);
        assert_eq!(content_loss(&a, &a, &fx).unwrap(), 0.0);
        assert!(content_loss(&a, &random_image(8, 6, 5), &fx).is_err());
    }
}
