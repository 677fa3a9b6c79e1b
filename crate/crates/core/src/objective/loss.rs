use crate::alignment::{correspondence, Correspondence};
use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::numerics::{DiffOp, Tensor};
use crate::objective::{LossConfig, Models};
use crate::style::{local_style_features, style_vjp, FeatureMap, StyleSet};
use crate::synthesis::ImageTensor;

/// `1 - <e0, e_avg>` for unit embeddings.
pub fn content_loss(e0: &Tensor, e_avg: &Tensor) -> Result<f64> {
    if e0.dims() != e_avg.dims() {
        return Err(Error::arg(format!(
            "embedding dims differ: {:?} vs {:?}",
            e0.dims(),
            e_avg.dims()
        )));
    }
    Ok(1.0 - e0.dot(e_avg))
}

/// `sum_i sum_j |S_src(i, j) - S_tgt(a(i, j))|_F^2`.
pub fn style_loss(sources: &[StyleSet], target: &StyleSet, corr: &[Correspondence]) -> Result<f64> {
    if sources.len() != corr.len() {
        return Err(Error::arg(format!(
            "{} source style sets but {} correspondences",
            sources.len(),
            corr.len()
        )));
    }
    let p = target.patches();
    let mut total = 0.0;
    for (src, a) in sources.iter().zip(corr) {
        if !src.same_layout(target) {
            return Err(Error::arg(format!(
                "source style layout {:?} differs from target {:?}",
                src.tensor().dims(),
                target.tensor().dims()
            )));
        }
        if a.indices().len() != p || a.indices().iter().any(|&t| t >= p) {
            return Err(Error::arg(format!("correspondence {:?} invalid for {p} patches", a.indices())));
        }
        for (j, &t) in a.indices().iter().enumerate() {
            total += src
                .matrix(j)
                .iter()
                .zip(target.matrix(t))
                .map(|(s, g)| (s - g) * (s - g))
                .sum::<f64>();
        }
    }
    Ok(total)
}

/// Relabels a non-finite error with the pipeline stage it came from.
fn at_stage<T>(stage: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { detail, .. } => Error::NonFinite {
            stage: stage.to_string(),
            detail,
        },
        other => other,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub total: f64,
    pub content: f64,
    pub style: f64,
    pub target: StyleSet,
    pub correspondences: Vec<Correspondence>,
}

/// The loss for one cluster: source styles from the cluster's original
/// images and the content anchor `e0 = F(G(w0))`.
#[derive(Debug, Clone)]
pub struct ClusterObjective<'a> {
    models: &'a Models,
    config: LossConfig,
    sources: Vec<StyleSet>,
    e0: Tensor,
}

impl<'a> ClusterObjective<'a> {
    pub fn new(models: &'a Models, images: &[ImageTensor], w0: &LatentCode, config: &LossConfig) -> Result<Self> {
        config.validate()?;
        if images.is_empty() {
            return Err(Error::arg("cluster has no images"));
        }
        let sources = images
            .iter()
            .map(|img| {
                let fmap = models.extractor.extract(img)?;
                local_style_features(&fmap, &config.style)
            })
            .collect::<Result<Vec<_>>>()?;
        let e0 = models
            .encoder
            .forward(models.generator.generate(w0)?.tensor())?;
        Ok(Self {
            models,
            config: *config,
            sources,
            e0,
        })
    }

    pub fn from_parts(models: &'a Models, sources: Vec<StyleSet>, e0: Tensor, config: &LossConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            models,
            config: *config,
            sources,
            e0,
        })
    }

    pub fn config(&self) -> &LossConfig {
        &self.config
    }

    /// Same cluster, different loss settings.
    pub fn with_config(&self, config: &LossConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config: *config,
            ..self.clone()
        })
    }

    pub fn sources(&self) -> &[StyleSet] {
        &self.sources
    }

    pub fn anchor_embedding(&self) -> &Tensor {
        &self.e0
    }

    fn forward_parts(&self, w: &LatentCode) -> Result<(ImageTensor, FeatureMap, StyleSet)> {
        let image = at_stage("generator", self.models.generator.generate(w))?;
        let fmap = at_stage("feature extractor", self.models.extractor.extract(&image))?;
        let target = at_stage("gram", local_style_features(&fmap, &self.config.style))?;
        Ok((image, fmap, target))
    }

    fn assemble(&self, image: &ImageTensor, target: StyleSet) -> Result<Evaluation> {
        let correspondences = self
            .sources
            .iter()
            .map(|src| correspondence(src, &target, self.config.alignment))
            .collect::<Result<Vec<_>>>()?;
        let e_avg = at_stage("content encoder", self.models.encoder.forward(image.tensor()))?;
        let content = content_loss(&self.e0, &e_avg)?;
        let style = style_loss(&self.sources, &target, &correspondences)?;
        let lambda = self.config.lambda;
        let total = lambda * content + (1.0 - lambda) * style;
        if !total.is_finite() {
            return Err(Error::non_finite(
                "total loss",
                format!("content {content}, style {style}"),
            ));
        }
        Ok(Evaluation {
            total,
            content,
            style,
            target,
            correspondences,
        })
    }

    /// Loss terms at `w`, with correspondences recomputed for the current target.
    pub fn evaluate(&self, w: &LatentCode) -> Result<Evaluation> {
        let (image, _, target) = self.forward_parts(w)?;
        self.assemble(&image, target)
    }

    pub fn total_loss(&self, w: &LatentCode) -> Result<f64> {
        Ok(self.evaluate(w)?.total)
    }

    /// Evaluation and analytic gradient at `w`. Correspondences are held fixed
    /// inside the derivative.
    pub fn gradient(&self, w: &LatentCode) -> Result<(Evaluation, Tensor)> {
        let (image, fmap, target) = self.forward_parts(w)?;
        let eval = self.assemble(&image, target)?;
        let lambda = self.config.lambda;

        let p = eval.target.patches();
        let cc = eval.target.channels() * eval.target.channels();
        let mut gram_cot = vec![0.0; p * cc];
        let style_weight = 2.0 * (1.0 - lambda);
        if style_weight != 0.0 {
            for (src, a) in self.sources.iter().zip(&eval.correspondences) {
                for (j, &t) in a.indices().iter().enumerate() {
                    let slot = &mut gram_cot[t * cc..(t + 1) * cc];
                    for ((c, s), g) in slot.iter_mut().zip(src.matrix(j)).zip(eval.target.matrix(t)) {
                        *c += style_weight * (g - s);
                    }
                }
            }
        }
        let gram_cot = at_stage("style loss cotangent", eval.target.tensor().with_data(gram_cot))?;
        let fmap_cot = at_stage("gram vjp", style_vjp(&fmap, &self.config.style, &gram_cot))?;
        let mut image_cot = at_stage(
            "feature extractor vjp",
            self.models.extractor.vjp(image.tensor(), &fmap_cot),
        )?;
        if lambda != 0.0 {
            let emb_cot = at_stage("content loss cotangent", self.e0.scale(-lambda))?;
            let content_cot = at_stage(
                "content encoder vjp",
                self.models.encoder.vjp(image.tensor(), &emb_cot),
            )?;
            image_cot = at_stage("image cotangent", image_cot.axpy(1.0, &content_cot))?;
        }
        let grad = at_stage(
            "generator vjp",
            self.models.generator.vjp(w.tensor(), &image_cot),
        )?;
        Ok((eval, grad))
    }
}
