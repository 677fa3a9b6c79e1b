//! Labeled toy records with planted local textures.
//!
//! Each record belongs to a latent group that fixes its background tint and
//! its lesion texture. The grade is the number of lesion patches, planted in
//! distinct cells of a `grid x grid` layout at random positions, so records of
//! one group share Gram signatures at different places.

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};
use crate::pipeline::dataset::{LabeledDataset, Record};
use crate::synthesis::{ImageTensor, Profile};

pub const MAX_GRADE: u8 = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyDataOptions {
    pub profile: Profile,
    pub records: usize,
    pub groups: usize,
    /// Cells per side of the lesion layout.
    pub grid: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for ToyDataOptions {
    fn default() -> Self {
        Self {
            profile: Profile::Toy16,
            records: 60,
            groups: 6,
            grid: 4,
            noise: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Texture {
    Horizontal,
    Vertical,
    Checker,
    Diagonal,
}

const TEXTURES: [Texture; 4] = [Texture::Horizontal, Texture::Vertical, Texture::Checker, Texture::Diagonal];

impl Texture {
    fn value(self, y: usize, x: usize) -> f64 {
        let on = match self {
            Texture::Horizontal => y % 2 == 0,
            Texture::Vertical => x % 2 == 0,
            Texture::Checker => (x + y) % 2 == 0,
            Texture::Diagonal => (x + 2 * y) % 4 < 2,
        };
        if on {
            1.0
        } else {
            -1.0
        }
    }
}

struct Group {
    tint: Vec<f64>,
    texture: Texture,
    /// Per-channel texture amplitude; sign patterns differ between groups.
    colors: Vec<f64>,
}

fn group(rng: &mut Rng, index: usize, channels: usize) -> Group {
    Group {
        tint: (0..channels).map(|_| 0.4 * (2.0 * rng.uniform() - 1.0)).collect(),
        texture: TEXTURES[index % TEXTURES.len()],
        colors: (0..channels)
            .map(|_| {
                let a = 0.3 + 0.4 * rng.uniform();
                if rng.uniform() < 0.5 {
                    -a
                } else {
                    a
                }
            })
            .collect(),
    }
}

pub fn generate(opts: &ToyDataOptions) -> Result<LabeledDataset> {
    let shape = opts.profile.shape();
    let (c, h, w) = (shape.channels, shape.height, shape.width);
    if opts.records == 0 || opts.groups == 0 {
        return Err(Error::arg("toy data needs at least one record and one group"));
    }
    if opts.grid == 0 || h % opts.grid != 0 || w % opts.grid != 0 || opts.grid * opts.grid < MAX_GRADE as usize {
        return Err(Error::arg(format!(
            "grid {} must divide {h}x{w} and hold {MAX_GRADE} lesions",
            opts.grid
        )));
    }
    if !(opts.noise >= 0.0) {
        return Err(Error::arg("noise must be >= 0"));
    }
    let root = Rng::new(opts.seed);
    let groups: Vec<Group> = (0..opts.groups)
        .map(|g| group(&mut root.split(g as u64), g, c))
        .collect();
    let (ph, pw) = (h / opts.grid, w / opts.grid);

    let records = (0..opts.records)
        .map(|i| {
            let mut rng = root.split(1_000_000 + i as u64);
            let g = &groups[i % opts.groups];
            let grade = rng.below(MAX_GRADE as usize + 1) as u8;
            let mut cells: Vec<usize> = (0..opts.grid * opts.grid).collect();
            rng.shuffle(&mut cells);
            let lesions = &cells[..grade as usize];

            let mut data = vec![0.0; c * h * w];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let ramp = 0.2 * ((x + y) as f64 / (h + w) as f64 - 0.5);
                        let cell = (y / ph) * opts.grid + x / pw;
                        let texture = if lesions.contains(&cell) {
                            g.colors[ch] * g.texture.value(y, x)
                        } else {
                            0.0
                        };
                        let v = g.tint[ch] + ramp + texture + opts.noise * rng.standard_normal();
                        data[(ch * h + y) * w + x] = v.clamp(-1.0, 1.0);
                    }
                }
            }
            Ok(Record {
                id: i as u64,
                image: ImageTensor::new(Tensor::new(vec![c, h, w], data)?)?,
                label: grade,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(opts.profile.to_string(), MAX_GRADE, records)
}
