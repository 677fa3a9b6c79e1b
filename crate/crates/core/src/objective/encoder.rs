use crate::error::{Error, Result};
use crate::numerics::{seeded_normal, DiffOp, Rng, Tensor};

/// Frozen seeded affine map from images to an `e`-dimensional embedding,
/// followed by L2 normalization. A zero pre-normalization vector maps to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ContentEncoder {
    seed: u64,
    input_dims: [usize; 3],
    dim: usize,
    /// Row-major `e x (C H W)`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ContentEncoder {
    pub const DEFAULT_DIM: usize = 16;

    pub fn new(seed: u64, input_dims: [usize; 3], dim: usize) -> Self {
        assert!(dim > 0 && input_dims.iter().all(|&d| d > 0));
        let n: usize = input_dims.iter().product();
        let root = Rng::new(seed);
        let weights = seeded_normal(&mut root.split(0), &[dim * n], 0.0, 1.0 / (n as f64).sqrt())
            .expect("valid stddev")
            .into_data();
        let bias = seeded_normal(&mut root.split(1), &[dim], 0.0, 0.1)
            .expect("valid stddev")
            .into_data();
        Self {
            seed,
            input_dims,
            dim,
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

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn check(&self, image: &Tensor) -> Result<()> {
        if image.dims() != self.input_dims {
            return Err(Error::arg(format!(
                "content encoder expects {:?} images, got {:?}",
                self.input_dims,
                image.dims()
            )));
        }
        Ok(())
    }

    fn raw(&self, image: &Tensor) -> Vec<f64> {
        let n = image.len();
        self.weights
            .chunks_exact(n)
            .zip(&self.bias)
            .map(|(row, b)| b + row.iter().zip(image.data()).map(|(w, x)| w * x).sum::<f64>())
            .collect()
    }
}

impl DiffOp for ContentEncoder {
    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        let z = self.raw(input);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        let out = if norm > 0.0 {
            z.iter().map(|v| v / norm).collect()
        } else {
            vec![0.0; self.dim]
        };
        Tensor::new(vec![self.dim], out)
    }

    fn vjp(&self, input: &Tensor, cotangent: &Tensor) -> Result<Tensor> {
        self.check(input)?;
        if cotangent.dims() != [self.dim] {
            return Err(Error::arg(format!(
                "embedding cotangent must have length {}, got {:?}",
                self.dim,
                cotangent.dims()
            )));
        }
        let z = self.raw(input);
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(Tensor::zeros(input.dims()));
        }
        // d(z/|z|)^T g = (g - y (y.g)) / |z|
        let y: Vec<f64> = z.iter().map(|v| v / norm).collect();
        let yg: f64 = y.iter().zip(cotangent.data()).map(|(a, b)| a * b).sum();
        let gz: Vec<f64> = cotangent
            .data()
            .iter()
            .zip(&y)
            .map(|(g, yi)| (g - yi * yg) / norm)
            .collect();
        let n = input.len();
        let mut grad = vec![0.0; n];
        for (row, g) in self.weights.chunks_exact(n).zip(&gz) {
            grad.iter_mut().zip(row).for_each(|(acc, w)| *acc += w * g);
        }
        input.with_data(grad)
    }
}
