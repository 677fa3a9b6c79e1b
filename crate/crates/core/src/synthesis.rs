//! Generators (latent code -> image) and optimization-based inversion.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::numerics::{seeded_normal, DiffOp, Rng, Tensor};

/// A `C x H x W` image with values nominally in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor(Tensor);

impl ImageTensor {
    pub fn new(tensor: Tensor) -> Result<Self> {
        if tensor.dims().len() != 3 {
            return Err(Error::arg(format!(
                "image must be C x H x W, got dims {:?}",
                tensor.dims()
            )));
        }
        Ok(Self(tensor))
    }

    pub fn channels(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn height(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[2]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    /// Elementwise mean of equally shaped images.
    pub fn mean(images: &[ImageTensor]) -> Result<ImageTensor> {
        let first = images
            .first()
            .ok_or_else(|| Error::arg("mean of an empty image list"))?;
        let mut acc = vec![0.0; first.data().len()];
        for img in images {
            if img.tensor().dims() != first.tensor().dims() {
                return Err(Error::arg("image shape mismatch"));
            }
            acc.iter_mut().zip(img.data()).for_each(|(a, v)| *a += v);
        }
        let n = images.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        ImageTensor::new(first.tensor().with_data(acc)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorShape {
    pub latent_rows: usize,
    pub latent_dim: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl GeneratorShape {
    pub fn latent_len(&self) -> usize {
        self.latent_rows * self.latent_dim
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn image_dims(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }
}

/// Named toy generator profiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Profile {
    #[default]
    #[serde(rename = "toy-16")]
    Toy16,
    #[serde(rename = "toy-32")]
    Toy32,
}

impl Profile {
    pub fn shape(self) -> GeneratorShape {
        let side = match self {
            Profile::Toy16 => 16,
            Profile::Toy32 => 32,
        };
        GeneratorShape {
            latent_rows: 1,
            latent_dim: 32,
            channels: 3,
            height: side,
            width: side,
        }
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy-16" => Ok(Profile::Toy16),
            "toy-32" => Ok(Profile::Toy32),
            other => Err(Error::arg(format!(
                "unknown profile {other:?} (expected toy-16 or toy-32)"
            ))),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Toy16 => "toy-16",
            Profile::Toy32 => "toy-32",
        })
    }
}

/// Differentiable map from latent codes (`L x d`) to images (`C x H x W`).
///
/// `forward` must be deterministic and `vjp` its exact adjoint.
pub trait Generator: DiffOp {
    fn shape(&self) -> GeneratorShape;

    fn generate(&self, code: &LatentCode) -> Result<ImageTensor> {
        ImageTensor::new(self.forward(code.tensor())?)
    }

    fn check_code(&self, code: &Tensor) -> Result<()> {
        let s = self.shape();
        if code.dims() != [s.latent_rows, s.latent_dim] {
            return Err(Error::arg(format!(
                "generator expects {}x{} codes, got {:?}",
                s.latent_rows,
                s.latent_dim,
                code.dims()
            )));
        }
        Ok(())
    }

    fn check_image(&self, image: &Tensor) -> Result<()> {
        if image.dims() != self.shape().image_dims() {
            return Err(Error::arg(format!(
                "generator produces {:?} images, got {:?}",
                self.shape().image_dims(),
                image.dims()
            )));
        }
        Ok(())
    }
}

/// Frozen seeded affine map followed by `tanh`: `G(w) = tanh(A vec(w) + b)`.
///
/// `A` has i.i.d. `N(0, 1/(C H W))` entries so `A^T A` is close to identity,
/// which keeps the map full-rank and well-conditioned for inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyGenerator {
    shape: GeneratorShape,
    seed: u64,
    /// Row-major `(C H W) x (L d)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyGenerator {
    pub const BIAS_STD: f64 = 0.1;

    pub fn new(seed: u64, profile: Profile) -> Self {
        let shape = profile.shape();
        let root = Rng::new(seed);
        let std = 1.0 / (shape.image_len() as f64).sqrt();
        let weights = seeded_normal(&mut root.split(0), &[shape.image_len(), shape.latent_len()], 0.0, std)
            .expect("valid stddev")
            .into_data();
        let bias = seeded_normal(&mut root.split(1), &[shape.image_len()], 0.0, Self::BIAS_STD)
            .expect("valid stddev")
            .into_data();
        Self {
            shape,
            seed,
            weights,
            bias,
        }
    }

    pub fn from_profile_name(seed: u64, profile: &str) -> Result<Self> {
        Ok(Self::new(seed, profile.parse()?))
    }

    pub fn with_zero_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn pre_activation(&self, code: &[f64]) -> Vec<f64> {
        let n = self.shape.latent_len();
        self.weights
            .chunks_exact(n)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(code).map(|(a, w)| a * w).sum::<f64>())
            .collect()
    }
}

impl DiffOp for ToyGenerator {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_code(input)?;
        let out = self
            .pre_activation(input.data())
            .into_iter()
            .map(f64::tanh)
            .collect();
        Tensor::new(self.shape.image_dims().to_vec(), out)
    }

    fn vjp(&self, input: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.check_code(input)?;
        self.check_image(cotangent)?;
        let n = self.shape.latent_len();
        let mut grad = vec![0.0; n];
        for ((row, z), g) in self
            .weights
            .chunks_exact(n)
            .zip(self.pre_activation(input.data()))
            .zip(cotangent.data())
        {
            let y = z.tanh();
            let gz = g * (1.0 - y * y);
            grad.iter_mut().zip(row).for_each(|(acc, a)| *acc += a * gz);
        }
        input.with_data(grad)
    }
}

impl Generator for ToyGenerator {
    fn shape(&self) -> GeneratorShape {
        self.shape
    }
}

/// Test double whose forward pass is a reshape of the code.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityGenerator {
    shape: GeneratorShape,
}

impl IdentityGenerator {
    pub fn new(latent: (usize, usize), image: (usize, usize, usize)) -> Result<Self> {
        let shape = GeneratorShape {
            latent_rows: latent.0,
            latent_dim: latent.1,
            channels: image.0,
            height: image.1,
            width: image.2,
        };
        if shape.latent_len() != shape.image_len() || shape.latent_len() == 0 {
            return Err(Error::arg(format!(
                "identity generator needs L*d == C*H*W, got {} vs {}",
                shape.latent_len(),
                shape.image_len()
            )));
        }
        Ok(Self { shape })
    }
}

impl DiffOp for IdentityGenerator {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_code(input)?;
        input.reshape(&self.shape.image_dims())
    }

    fn vjp(&self, input: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.check_code(input)?;
        self.check_image(cotangent)?;
        cotangent.reshape(input.dims())
    }
}

impl Generator for IdentityGenerator {
    fn shape(&self) -> GeneratorShape {
        self.shape
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InversionOptions {
    pub max_iters: usize,
    pub step_size: f64,
    /// Stop once the reconstruction MSE falls to this value.
    pub tolerance: f64,
    /// Recorded with the run; descent from the zero code draws no randomness.
    pub seed: u64,
}

impl Default for InversionOptions {
    fn default() -> Self {
        Self {
            max_iters: 300,
            step_size: 1.0,
            tolerance: 1e-10,
            seed: 0,
        }
    }
}

impl InversionOptions {
    fn validate(&self) -> Result<()> {
        if self.max_iters == 0 || !(self.step_size > 0.0) || !(self.tolerance >= 0.0) {
            return Err(Error::arg(format!("invalid inversion options {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    pub code: LatentCode,
    /// Mean squared reconstruction error of `code`.
    pub mse: f64,
    pub iterations: usize,
}

fn reconstruction(gen: &dyn Generator, code: &Tensor, target: &ImageTensor) -> Result<(f64, Tensor)> {
    let image = gen.forward(code)?;
    let residual: Vec<f64> = image
        .data()
        .iter()
        .zip(target.data())
        .map(|(a, b)| a - b)
        .collect();
    let mse = residual.iter().map(|r| r * r).sum::<f64>() / residual.len() as f64;
    Ok((mse, image.with_data(residual)?))
}

/// Inverts `target` by gradient descent on `0.5 |G(w) - x|^2` from the zero code.
pub fn invert(gen: &dyn Generator, target: &ImageTensor, opts: &InversionOptions) -> Result<Inversion> {
    let s = gen.shape();
    invert_from(gen, target, LatentCode::zeros(s.latent_rows, s.latent_dim), opts)
}

/// Same as [`invert`] from an explicit starting code. Returns the best iterate.
pub fn invert_from(
    gen: &dyn Generator,
    target: &ImageTensor,
    init: LatentCode,
    opts: &InversionOptions,
) -> Result<Inversion> {
    opts.validate()?;
    gen.check_image(target.tensor())?;
    gen.check_code(init.tensor())?;

    let mut w = init.into_tensor();
    let (mut mse, mut residual) = reconstruction(gen, &w, target)?;
    let mut best = Inversion {
        code: LatentCode::new(w.clone())?,
        mse,
        iterations: 0,
    };
    let mut trace = vec![mse];
    for iter in 1..=opts.max_iters {
        if mse <= opts.tolerance {
            break;
        }
        let grad = gen.vjp(&w, &residual)?;
        let next: Vec<f64> = w
            .data()
            .iter()
            .zip(grad.data())
            .map(|(a, g)| a - opts.step_size * g)
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                trace,
                hint: "inversion step produced non-finite code; try a smaller step_size".into(),
            });
        }
        w = w.with_data(next)?;
        (mse, residual) = reconstruction(gen, &w, target)?;
        if !mse.is_finite() {
            return Err(Error::Divergence {
                trace,
                hint: "reconstruction loss is non-finite; try a smaller step_size".into(),
            });
        }
        trace.push(mse);
        if mse < best.mse {
            best = Inversion {
                code: LatentCode::new(w.clone())?,
                mse,
                iterations: iter,
            };
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_diff_gradient, relative_l2_error};

    #[test]
    fn zero_code_zero_bias_gives_zero_image() {
        let gen = ToyGenerator::new(1, Profile::Toy16).with_zero_bias();
        let img = gen.generate(&LatentCode::zeros(1, 32)).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn same_seed_same_generator() {
        assert_eq!(ToyGenerator::new(5, Profile::Toy16), ToyGenerator::new(5, Profile::Toy16));
        assert_ne!(ToyGenerator::new(5, Profile::Toy16), ToyGenerator::new(6, Profile::Toy16));
    }

    #[test]
    fn unknown_profile() {
        assert!(ToyGenerator::from_profile_name(1, "toy-64").is_err());
        assert_eq!(
            ToyGenerator::from_profile_name(1, "toy-32").unwrap().shape().height,
            32
        );
    }

    #[test]
    fn toy_vjp_matches_finite_differences() {
        let gen = ToyGenerator::new(11, Profile::Toy16);
        let mut rng = Rng::new(12);
        let w = LatentCode::random(1, 32, &mut rng);
        let probe = seeded_normal(&mut rng, &[3, 16, 16], 0.0, 1.0).unwrap();
        let analytic = gen.vjp(w.tensor(), &probe).unwrap();
        let fd = finite_diff_gradient(|t| Ok(gen.forward(t)?.dot(&probe)), w.tensor(), 1e-5).unwrap();
        assert!(relative_l2_error(analytic.data(), fd.data()) <= 1e-6);
    }

    #[test]
    fn identity_generator_contract() {
        assert!(IdentityGenerator::new((1, 10), (3, 2, 2)).is_err());
        let gen = IdentityGenerator::new((2, 6), (3, 2, 2)).unwrap();
        let w = LatentCode::random(2, 6, &mut Rng::new(1));
        let img = gen.generate(&w).unwrap();
        assert_eq!(img.data(), w.data());
        let cot = seeded_normal(&mut Rng::new(2), &[3, 2, 2], 0.0, 1.0).unwrap();
        let back = gen.vjp(w.tensor(), &cot).unwrap();
        assert_eq!(back.dims(), &[2, 6]);
        assert_eq!(back.data(), cot.data());
    }

    #[test]
    fn identity_inversion_takes_one_step() {
        let gen = IdentityGenerator::new((1, 12), (3, 2, 2)).unwrap();
        let x = ImageTensor::new(seeded_normal(&mut Rng::new(3), &[3, 2, 2], 0.0, 0.5).unwrap()).unwrap();
        let inv = invert(&gen, &x, &InversionOptions::default()).unwrap();
        assert_eq!(inv.iterations, 1);
        assert_eq!(inv.code.data(), x.data());
        assert_eq!(inv.mse, 0.0);
    }

    #[test]
    fn toy_inversion_recovers_planted_code() {
        let gen = ToyGenerator::new(21, Profile::Toy16);
        let w_star = LatentCode::random(1, 32, &mut Rng::new(22));
        let x = gen.generate(&w_star).unwrap();
        let inv = invert(&gen, &x, &InversionOptions::default()).unwrap();
        assert!(inv.mse <= 1e-6, "mse {}", inv.mse);
    }

    #[test]
    fn inversion_at_optimum_is_stationary() {
        let gen = ToyGenerator::new(23, Profile::Toy16);
        let w = LatentCode::random(1, 32, &mut Rng::new(24));
        let x = gen.generate(&w).unwrap();
        let opts = InversionOptions {
            tolerance: 0.0,
            max_iters: 5,
            ..Default::default()
        };
        let inv = invert_from(&gen, &x, w.clone(), &opts).unwrap();
        assert_eq!(inv.code, w);
        assert_eq!(inv.mse, 0.0);
    }

    #[test]
    fn huge_step_diverges_or_never_worsens() {
        let gen = ToyGenerator::new(25, Profile::Toy16);
        let x = gen.generate(&LatentCode::random(1, 32, &mut Rng::new(26))).unwrap();
        let init_mse = reconstruction(&gen, LatentCode::zeros(1, 32).tensor(), &x).unwrap().0;
        let opts = InversionOptions {
            step_size: 50.0,
            max_iters: 20,
            ..Default::default()
        };
        // tanh saturation keeps this finite; the best iterate never loses to the start
        let inv = invert(&gen, &x, &opts).unwrap();
        assert!(inv.mse <= init_mse);
    }

    #[test]
    fn inversion_rejects_wrong_shape() {
        let gen = ToyGenerator::new(1, Profile::Toy16);
        let x = ImageTensor::new(Tensor::zeros(&[3, 8, 8])).unwrap();
        assert!(invert(&gen, &x, &InversionOptions::default()).is_err());
    }
}
