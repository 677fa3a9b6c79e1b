//! Local style features: a fixed convolutional feature extractor and
//! per-patch Gram matrices over a `g x g` grid.
//!
//! Feature maps are stored `n x n x c` (row, column, channel). Patches are
//! numbered row-major: patch `j` covers grid row `j / g`, grid column `j % g`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{seeded_normal, DiffOp, Rng, Tensor};
use crate::synthesis::ImageTensor;

/// One 3x3 convolution (stride 1, zero padding) followed by ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    seed: u64,
    in_channels: usize,
    out_channels: usize,
    /// `[out][in][ky][kx]`
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl FeatureExtractor {
    pub const DEFAULT_CHANNELS: usize = 8;

    pub fn new(seed: u64, in_channels: usize, out_channels: usize) -> Self {
        assert!(in_channels > 0 && out_channels > 0);
        let root = Rng::new(seed);
        let std = (2.0 / (9 * in_channels) as f64).sqrt();
        let weights = seeded_normal(&mut root.split(0), &[out_channels * in_channels * 9], 0.0, std)
            .expect("valid stddev")
            .into_data();
        let bias = seeded_normal(&mut root.split(1), &[out_channels], 0.0, 0.1)
            .expect("valid stddev")
            .into_data();
        Self {
            seed,
            in_channels,
            out_channels,
            weights,
            bias,
        }
    }

    pub fn with_zero_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    fn check(&self, image: &Tensor) -> Result<(usize, usize)> {
        let d = image.dims();
        if d.len() != 3 || d[0] != self.in_channels || d[1] != d[2] {
            return Err(Error::arg(format!(
                "extractor expects {} x n x n images, got {:?}",
                self.in_channels, d
            )));
        }
        Ok((d[1], d[2]))
    }

    #[inline]
    fn w(&self, o: usize, i: usize, ky: usize, kx: usize) -> f64 {
        self.weights[((o * self.in_channels + i) * 3 + ky) * 3 + kx]
    }

    /// Pre-activation, laid out `n x n x c`.
    fn convolve(&self, image: &Tensor) -> Result<Vec<f64>> {
        let (h, w) = self.check(image)?;
        let c = self.out_channels;
        let x = image.data();
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for xx in 0..w {
                for o in 0..c {
                    let mut acc = self.bias[o];
                    for i in 0..self.in_channels {
                        for ky in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                acc += self.w(o, i, ky, kx) * x[(i * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(y * w + xx) * c + o] = acc;
                }
            }
        }
        Ok(out)
    }

    pub fn extract(&self, image: &ImageTensor) -> Result<FeatureMap> {
        FeatureMap::new(self.forward(image.tensor())?)
    }
}

impl DiffOp for FeatureExtractor {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check(input)?;
        let pre = self.convolve(input)?;
        Tensor::new(vec![h, w, self.out_channels], pre.into_iter().map(|v| v.max(0.0)).collect())
    }

    fn vjp(&self, input: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check(input)?;
        let c = self.out_channels;
        if cotangent.dims() != [h, w, c] {
            return Err(Error::arg(format!(
                "feature cotangent must be {:?}, got {:?}",
                [h, w, c],
                cotangent.dims()
            )));
        }
        let pre = self.convolve(input)?;
        let g = cotangent.data();
        let mut grad = vec![0.0; input.len()];
        for y in 0..h {
            for xx in 0..w {
                for o in 0..c {
                    let idx = (y * w + xx) * c + o;
                    if pre[idx] <= 0.0 {
                        continue;
                    }
                    let go = g[idx];
                    for i in 0..self.in_channels {
                        for ky in 0..3 {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for kx in 0..3 {
                                let sx = xx as isize + kx as isize - 1;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                grad[(i * h + sy as usize) * w + sx as usize] += self.w(o, i, ky, kx) * go;
                            }
                        }
                    }
                }
            }
        }
        input.with_data(grad)
    }
}

/// Activations of shape `n x n x c`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap(Tensor);

impl FeatureMap {
    pub fn new(tensor: Tensor) -> Result<Self> {
        let d = tensor.dims();
        if d.len() != 3 || d[0] != d[1] {
            return Err(Error::arg(format!("feature map must be n x n x c, got {d:?}")));
        }
        Ok(Self(tensor))
    }

    pub fn side(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StyleOptions {
    /// Patches per side; `1` gives a single whole-image Gram.
    pub grid: usize,
    /// Divide each Gram by the number of pixels in its patch.
    pub normalize: bool,
}

impl Default for StyleOptions {
    fn default() -> Self {
        Self {
            grid: 4,
            normalize: false,
        }
    }
}

/// `p = g^2` Gram matrices of size `c x c`, stored as one `p x c x c` tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleSet {
    grams: Tensor,
}

impl StyleSet {
    pub fn from_tensor(grams: Tensor) -> Result<Self> {
        let d = grams.dims();
        if d.len() != 3 || d[1] != d[2] {
            return Err(Error::arg(format!("style set must be p x c x c, got {d:?}")));
        }
        Ok(Self { grams })
    }

    pub fn patches(&self) -> usize {
        self.grams.dims()[0]
    }

    pub fn channels(&self) -> usize {
        self.grams.dims()[1]
    }

    /// Flattened Gram of patch `j`.
    pub fn matrix(&self, j: usize) -> &[f64] {
        let cc = self.channels() * self.channels();
        &self.grams.data()[j * cc..(j + 1) * cc]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.grams
    }

    pub fn same_layout(&self, other: &StyleSet) -> bool {
        self.grams.dims() == other.grams.dims()
    }

    /// Copy with every Gram multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<StyleSet> {
        Ok(Self {
            grams: self.grams.scale(factor)?,
        })
    }
}

fn patch_geometry(fmap: &FeatureMap, grid: usize) -> Result<usize> {
    if grid == 0 || fmap.side() % grid != 0 {
        return Err(Error::arg(format!(
            "feature map side {} is not divisible by grid {grid}",
            fmap.side()
        )));
    }
    Ok(fmap.side() / grid)
}

pub fn local_style_features(fmap: &FeatureMap, opts: &StyleOptions) -> Result<StyleSet> {
    let g = opts.grid;
    let patch = patch_geometry(fmap, g)?;
    let n = fmap.side();
    let c = fmap.channels();
    let f = fmap.tensor().data();
    let scale = if opts.normalize {
        1.0 / (patch * patch) as f64
    } else {
        1.0
    };
    let mut grams = vec![0.0; g * g * c * c];
    for j in 0..g * g {
        let (gy, gx) = (j / g, j % g);
        let gram = &mut grams[j * c * c..(j + 1) * c * c];
        for y in gy * patch..(gy + 1) * patch {
            for x in gx * patch..(gx + 1) * patch {
                let px = &f[(y * n + x) * c..(y * n + x + 1) * c];
                for u in 0..c {
                    if px[u] == 0.0 {
                        continue;
                    }
                    for v in u..c {
                        gram[u * c + v] += px[u] * px[v];
                    }
                }
            }
        }
        for u in 0..c {
            for v in u..c {
                let s = gram[u * c + v] * scale;
                gram[u * c + v] = s;
                gram[v * c + u] = s;
            }
        }
    }
    StyleSet::from_tensor(Tensor::new(vec![g * g, c, c], grams)?)
}

/// Pulls a cotangent on the Grams (`p x c x c`) back to the feature map:
/// `dF[y,x,u] = scale * sum_v (G_uv + G_vu) F[y,x,v]` within each patch.
pub fn style_vjp(fmap: &FeatureMap, opts: &StyleOptions, cotangent: &Tensor) -> Result<Tensor> {
    let g = opts.grid;
    let patch = patch_geometry(fmap, g)?;
    let n = fmap.side();
    let c = fmap.channels();
    if cotangent.dims() != [g * g, c, c] {
        return Err(Error::arg(format!(
            "style cotangent must be {:?}, got {:?}",
            [g * g, c, c],
            cotangent.dims()
        )));
    }
    let scale = if opts.normalize {
        1.0 / (patch * patch) as f64
    } else {
        1.0
    };
    let f = fmap.tensor().data();
    let mut out = vec![0.0; f.len()];
    let mut sym = vec![0.0; c * c];
    for j in 0..g * g {
        let gj = &cotangent.data()[j * c * c..(j + 1) * c * c];
        for u in 0..c {
            for v in 0..c {
                sym[u * c + v] = scale * (gj[u * c + v] + gj[v * c + u]);
            }
        }
        let (gy, gx) = (j / g, j % g);
        for y in gy * patch..(gy + 1) * patch {
            for x in gx * patch..(gx + 1) * patch {
                let base = (y * n + x) * c;
                for u in 0..c {
                    let row = &sym[u * c..(u + 1) * c];
                    out[base + u] = row.iter().zip(&f[base..base + c]).map(|(s, v)| s * v).sum();
                }
            }
        }
    }
    fmap.tensor().with_data(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_l2_error};

    fn random_map(seed: u64, n: usize, c: usize) -> FeatureMap {
        FeatureMap::new(seeded_normal(&mut Rng::new(seed), &[n, n, c], 0.0, 1.0).unwrap()).unwrap()
    }

    fn brute_gram(fmap: &FeatureMap, g: usize) -> Vec<Vec<f64>> {
        let n = fmap.side();
        let c = fmap.channels();
        let s = n / g;
        let at = |y: usize, x: usize, u: usize| fmap.tensor().data()[(y * n + x) * c + u];
        let mut out = Vec::new();
        for gy in 0..g {
            for gx in 0..g {
                let mut m = vec![0.0; c * c];
                for u in 0..c {
                    for v in 0..c {
                        for y in 0..s {
                            for x in 0..s {
                                m[u * c + v] += at(gy * s + y, gx * s + x, u) * at(gy * s + y, gx * s + x, v);
                            }
                        }
                    }
                }
                out.push(m);
            }
        }
        out
    }

    #[test]
    fn zero_image_zero_bias_gives_zero_features() {
        let ex = FeatureExtractor::new(1, 3, 4).with_zero_bias();
        let img = ImageTensor::new(Tensor::zeros(&[3, 8, 8])).unwrap();
        let f = ex.extract(&img).unwrap();
        assert_eq!(f.tensor().dims(), &[8, 8, 4]);
        assert!(f.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn extractor_is_deterministic() {
        let img = ImageTensor::new(seeded_normal(&mut Rng::new(2), &[3, 8, 8], 0.0, 0.5).unwrap()).unwrap();
        let a = FeatureExtractor::new(3, 3, 4).extract(&img).unwrap();
        let b = FeatureExtractor::new(3, 3, 4).extract(&img).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn extractor_vjp_matches_finite_differences() {
        let ex = FeatureExtractor::new(4, 3, 4);
        let mut rng = Rng::new(5);
        let x = seeded_normal(&mut rng, &[3, 8, 8], 0.0, 1.0).unwrap();
        let probe = seeded_normal(&mut rng, &[8, 8, 4], 0.0, 1.0).unwrap();
        let analytic = ex.vjp(&x, &probe).unwrap();
        let fd = finite_diff_gradient(|t| Ok(ex.forward(t)?.dot(&probe)), &x, 1e-5).unwrap();
        assert!(relative_l2_error(analytic.data(), fd.data()) <= 1e-6);
    }

    #[test]
    fn extractor_rejects_shape() {
        let ex = FeatureExtractor::new(4, 3, 4);
        assert!(ex.forward(&Tensor::zeros(&[1, 8, 8])).is_err());
        assert!(ex.forward(&Tensor::zeros(&[3, 8, 6])).is_err());
    }

    #[test]
    fn zero_map_gives_zero_grams() {
        let f = FeatureMap::new(Tensor::zeros(&[8, 8, 3])).unwrap();
        let s = local_style_features(&f, &StyleOptions::default()).unwrap();
        assert_eq!(s.patches(), 16);
        assert!(s.tensor().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_channel_is_squared_norm() {
        let vals = vec![1.0, -2.0, 3.0, 0.5];
        let f = FeatureMap::new(Tensor::new(vec![2, 2, 1], vals.clone()).unwrap()).unwrap();
        let s = local_style_features(&f, &StyleOptions { grid: 1, normalize: false }).unwrap();
        let expected: f64 = vals.iter().map(|v| v * v).sum();
        assert_eq!(s.matrix(0), &[expected]);
    }

    #[test]
    fn two_channel_grid_two_matches_brute_force() {
        let f = random_map(6, 4, 2);
        let s = local_style_features(&f, &StyleOptions { grid: 2, normalize: false }).unwrap();
        for (j, m) in brute_gram(&f, 2).iter().enumerate() {
            for (a, b) in s.matrix(j).iter().zip(m) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn whole_image_gram_equals_sum_of_patch_grams() {
        let f = random_map(7, 8, 3);
        let global = local_style_features(&f, &StyleOptions { grid: 1, normalize: false }).unwrap();
        let local = local_style_features(&f, &StyleOptions { grid: 4, normalize: false }).unwrap();
        for e in 0..9 {
            let sum: f64 = (0..16).map(|j| local.matrix(j)[e]).sum();
            assert!((sum - global.matrix(0)[e]).abs() <= 1e-10);
        }
    }

    #[test]
    fn normalization_divides_by_patch_area() {
        let f = random_map(8, 8, 2);
        let raw = local_style_features(&f, &StyleOptions { grid: 2, normalize: false }).unwrap();
        let norm = local_style_features(&f, &StyleOptions { grid: 2, normalize: true }).unwrap();
        for (a, b) in raw.tensor().data().iter().zip(norm.tensor().data()) {
            assert!((a / 16.0 - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn indivisible_grid_rejected() {
        let f = random_map(9, 6, 2);
        assert!(local_style_features(&f, &StyleOptions { grid: 4, normalize: false }).is_err());
    }

    #[test]
    fn channel_swap_permutes_grams() {
        let f = random_map(10, 4, 3);
        let mut swapped = f.tensor().data().to_vec();
        for px in swapped.chunks_exact_mut(3) {
            px.swap(0, 2);
        }
        let g = FeatureMap::new(f.tensor().with_data(swapped).unwrap()).unwrap();
        let opts = StyleOptions { grid: 2, normalize: false };
        let a = local_style_features(&f, &opts).unwrap();
        let b = local_style_features(&g, &opts).unwrap();
        let perm = [2, 1, 0];
        for j in 0..4 {
            for u in 0..3 {
                for v in 0..3 {
                    assert_eq!(a.matrix(j)[perm[u] * 3 + perm[v]], b.matrix(j)[u * 3 + v]);
                }
            }
        }
    }

    #[test]
    fn style_vjp_matches_finite_differences() {
        for normalize in [false, true] {
            let opts = StyleOptions { grid: 2, normalize };
            let f = random_map(11, 4, 3);
            let probe = seeded_normal(&mut Rng::new(12), &[4, 3, 3], 0.0, 1.0).unwrap();
            let analytic = style_vjp(&f, &opts, &probe).unwrap();
            let fd = finite_diff_gradient(
                |t| {
                    let s = local_style_features(&FeatureMap::new(t.clone())?, &opts)?;
                    Ok(s.tensor().dot(&probe))
                },
                f.tensor(),
                1e-5,
            )
            .unwrap();
            assert!(relative_l2_error(analytic.data(), fd.data()) <= 1e-6);
        }
    }
}
