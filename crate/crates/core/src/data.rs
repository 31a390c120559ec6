//! Synthetic two-view hierarchical data.
//!
//! Each superclass gets a Gaussian latent prototype, and each subclass a
//! Gaussian offset from its parent. A sample's image view is a fixed random
//! projection of its (noisy) prototype; its text view is a second projection
//! plus one of several per-class template offsets, which play the role of
//! prompt templates at evaluation time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math::{Matrix, Vector};
use crate::metrics::ClassHierarchy;

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub n_superclasses: usize,
    /// One entry applies to every superclass; otherwise one entry per superclass.
    pub children_per_parent: Vec<usize>,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub n_templates: usize,
    pub noise_sigma: f64,
    pub parent_sigma: f64,
    pub child_sigma: f64,
    pub template_sigma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_superclasses: 8,
            children_per_parent: vec![4],
            latent_dim: 16,
            image_dim: 64,
            text_dim: 48,
            n_templates: 4,
            noise_sigma: 0.3,
            parent_sigma: 1.0,
            child_sigma: 0.35,
            template_sigma: 0.3,
            n_train: 2000,
            n_test: 800,
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn children_counts(&self) -> Result<Vec<usize>> {
        match self.children_per_parent.as_slice() {
            [c] => Ok(vec![*c; self.n_superclasses]),
            cs if cs.len() == self.n_superclasses => Ok(cs.to_vec()),
            cs => Err(Error::BadConfig(format!(
                "children_per_parent has {} entries for {} superclasses",
                cs.len(),
                self.n_superclasses
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = self.children_counts()?;
        if self.n_superclasses == 0 || counts.contains(&0) {
            return Err(Error::BadConfig(
                "every superclass needs at least one subclass".into(),
            ));
        }
        if self.latent_dim == 0
            || self.image_dim == 0
            || self.text_dim == 0
            || self.n_templates == 0
        {
            return Err(Error::BadConfig(
                "dimensions and template count must be positive".into(),
            ));
        }
        for (name, s) in [
            ("noise_sigma", self.noise_sigma),
            ("parent_sigma", self.parent_sigma),
            ("child_sigma", self.child_sigma),
            ("template_sigma", self.template_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::BadConfig(format!(
                    "{name} must be finite and nonnegative, got {s}"
                )));
            }
        }
        Ok(())
    }
}

/// Children are assigned to parents contiguously: parent 0 owns subclasses
/// `0..c_0`, parent 1 the next `c_1`, and so on.
///
/// The layout is fully determined by the counts; `_seed` is accepted so the
/// hierarchy can be generated alongside the rest of a seeded dataset.
pub fn make_hierarchy(
    n_superclasses: usize,
    children_per_parent: &[usize],
    _seed: u64,
) -> Result<ClassHierarchy> {
    let counts: Vec<usize> = match children_per_parent {
        [c] => vec![*c; n_superclasses],
        cs => cs.to_vec(),
    };
    if n_superclasses == 0 || counts.len() != n_superclasses || counts.contains(&0) {
        return Err(Error::BadConfig(format!(
            "cannot build a hierarchy with {n_superclasses} superclasses and children {children_per_parent:?}"
        )));
    }
    let parent_of = counts
        .iter()
        .enumerate()
        .flat_map(|(p, &c)| std::iter::repeat_n(p, c))
        .collect();
    ClassHierarchy::new(parent_of, n_superclasses)
}

/// Paired views with their subclass labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Matrix,
    pub texts: Matrix,
    pub labels: Vec<usize>,
    /// Template used for each sample's text view.
    pub templates: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: GeneratorConfig,
    pub hierarchy: ClassHierarchy,
    /// `n_superclasses × latent_dim`.
    pub parent_prototypes: Matrix,
    /// `n_subclasses × latent_dim`.
    pub class_prototypes: Matrix,
    /// `image_dim × latent_dim`.
    pub image_projection: Matrix,
    /// `text_dim × latent_dim`.
    pub text_projection: Matrix,
    /// Row `class · n_templates + template`, each of length `text_dim`.
    pub template_offsets: Matrix,
    pub train: Split,
    pub test: Split,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Matrix {
    let dist = Normal::new(0.0, sigma).expect("validated sigma");
    let data = (0..rows * cols).map(|_| dist.sample(rng)).collect();
    Matrix::new(rows, cols, data).expect("finite samples")
}

/// `projection · latent` written into `out`.
fn project(projection: &Matrix, latent: &[f64], out: &mut [f64]) {
    for (o, row) in out.iter_mut().zip(projection.row_iter()) {
        *o = crate::math::dot(row, latent);
    }
}

pub fn sample_dataset(cfg: &GeneratorConfig) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let hierarchy = make_hierarchy(cfg.n_superclasses, &cfg.children_per_parent, cfg.seed)?;
    let n_classes = hierarchy.n_subclasses();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let parent_prototypes = gaussian_matrix(
        &mut rng,
        cfg.n_superclasses,
        cfg.latent_dim,
        cfg.parent_sigma,
    );
    let offsets = gaussian_matrix(&mut rng, n_classes, cfg.latent_dim, cfg.child_sigma);
    let mut class_prototypes = offsets;
    for c in 0..n_classes {
        let parent = parent_prototypes.row(hierarchy.parent_of(c)).to_vec();
        for (x, p) in class_prototypes.row_mut(c).iter_mut().zip(parent) {
            *x += p;
        }
    }
    let proj_sigma = 1.0 / (cfg.latent_dim as f64).sqrt();
    let image_projection = gaussian_matrix(&mut rng, cfg.image_dim, cfg.latent_dim, proj_sigma);
    let text_projection = gaussian_matrix(&mut rng, cfg.text_dim, cfg.latent_dim, proj_sigma);
    let template_offsets = gaussian_matrix(
        &mut rng,
        n_classes * cfg.n_templates,
        cfg.text_dim,
        cfg.template_sigma,
    );

    let draw_split = |n: usize, rng: &mut ChaCha8Rng| {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("validated sigma");
        let mut images = Matrix::zeros(n, cfg.image_dim);
        let mut texts = Matrix::zeros(n, cfg.text_dim);
        let mut labels = Vec::with_capacity(n);
        let mut templates = Vec::with_capacity(n);
        let mut latent = vec![0.0; cfg.latent_dim];
        for i in 0..n {
            let class = rng.random_range(0..n_classes);
            let template = rng.random_range(0..cfg.n_templates);
            let proto = class_prototypes.row(class);

            for (z, p) in latent.iter_mut().zip(proto) {
                *z = p + noise.sample(rng);
            }
            project(&image_projection, &latent, images.row_mut(i));

            for (z, p) in latent.iter_mut().zip(proto) {
                *z = p + noise.sample(rng);
            }
            let text = texts.row_mut(i);
            project(&text_projection, &latent, text);
            for (t, o) in text
                .iter_mut()
                .zip(template_offsets.row(class * cfg.n_templates + template))
            {
                *t += o;
            }
            labels.push(class);
            templates.push(template);
        }
        Split {
            images,
            texts,
            labels,
            templates,
        }
    };
    let train = draw_split(cfg.n_train, &mut rng);
    let test = draw_split(cfg.n_test, &mut rng);

    Ok(SyntheticDataset {
        config: cfg.clone(),
        hierarchy,
        parent_prototypes,
        class_prototypes,
        image_projection,
        text_projection,
        template_offsets,
        train,
        test,
    })
}

impl SyntheticDataset {
    pub fn n_classes(&self) -> usize {
        self.hierarchy.n_subclasses()
    }

    pub fn n_templates(&self) -> usize {
        self.config.n_templates
    }

    pub fn superclass_of(&self, subclass: usize) -> usize {
        self.hierarchy.parent_of(subclass)
    }

    /// Noiseless text views of `class` under its first `how_many` templates.
    pub fn prompt_views(&self, class: usize, how_many: usize) -> Result<Matrix> {
        if class >= self.n_classes() {
            return Err(Error::BadClass(class));
        }
        if how_many > self.n_templates() {
            return Err(Error::TooManyTemplates {
                requested: how_many,
                available: self.n_templates(),
            });
        }
        if how_many == 0 {
            return Err(Error::BadConfig(
                "at least one prompt view is required".into(),
            ));
        }
        let text_dim = self.text_projection.rows();
        let mut base = vec![0.0; text_dim];
        project(
            &self.text_projection,
            self.class_prototypes.row(class),
            &mut base,
        );
        let mut out = Matrix::zeros(how_many, text_dim);
        for t in 0..how_many {
            let offset = self.template_offsets.row(class * self.n_templates() + t);
            for ((o, b), d) in out.row_mut(t).iter_mut().zip(&base).zip(offset) {
                *o = b + d;
            }
        }
        Ok(out)
    }

    /// Smallest distance between two distinct class prototypes in latent space.
    pub fn min_prototype_separation(&self) -> f64 {
        let n = self.n_classes();
        let mut best = f64::INFINITY;
        for a in 0..n {
            for b in a + 1..n {
                let d: f64 = self
                    .class_prototypes
                    .row(a)
                    .iter()
                    .zip(self.class_prototypes.row(b))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                best = best.min(d.sqrt());
            }
        }
        best
    }

    /// Nearest-prototype classification of a latent vector.
    pub fn nearest_prototype(&self, latent: &Vector) -> usize {
        let mut best = (0, f64::INFINITY);
        for c in 0..self.n_classes() {
            let d: f64 = self
                .class_prototypes
                .row(c)
                .iter()
                .zip(latent.as_slice())
                .map(|(x, y)| (x - y) * (x - y))
                .sum();
            if d < best.1 {
                best = (c, d);
            }
        }
        best.0
    }
}
