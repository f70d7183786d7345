//! Synthetic stand-in for the prompt and region encoders.
//!
//! Every category has `V` unit "view" prototypes in prompt space. A prompt
//! feature is a view plus isotropic noise; a proposal feature is the same view
//! pushed through a hidden linear map `A` (D×d) plus noise. The trained MLP's
//! job is to approximate that map on category means.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bank::{CategoryId, FeatureVector};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Deterministic generator for one named stream of a seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const WORLD_STREAM: u64 = 1;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldSpec {
    pub categories: usize,
    pub views: usize,
    pub prompt_dim: usize,
    pub region_dim: usize,
    pub prompt_noise: f64,
    pub region_noise: f64,
    /// Upper bound on cosine similarity between views of different categories.
    pub separation_cap: f64,
    /// Weight of a shared per-category direction in every view, in `[0, 1)`.
    /// Zero makes the views of a category independent directions.
    pub view_coherence: f64,
    /// Use `A = I` instead of a random map (requires `prompt_dim == region_dim`).
    pub identity_map: bool,
    /// Dimension of the random subspace of prompt space that holds every
    /// view. `None` uses the whole space.
    pub latent_dim: Option<usize>,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for WorldSpec {
    fn default() -> Self {
        Self {
            categories: 10,
            views: 3,
            prompt_dim: 32,
            region_dim: 32,
            prompt_noise: 0.1,
            region_noise: 0.1,
            separation_cap: 0.9,
            view_coherence: 0.75,
            identity_map: false,
            latent_dim: Some(4),
            seed: 0,
        }
    }
}

impl WorldSpec {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("categories", self.categories),
            ("views", self.views),
            ("prompt_dim", self.prompt_dim),
            ("region_dim", self.region_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(format!("world.{name}"), "must be >= 1"));
            }
        }
        for (name, v) in [
            ("prompt_noise", self.prompt_noise),
            ("region_noise", self.region_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("world.{name}"), "must be >= 0"));
            }
        }
        if !(self.separation_cap > -1.0 && self.separation_cap <= 1.0) {
            return Err(Error::config("world.separation_cap", "must be in (-1, 1]"));
        }
        if !(0.0..1.0).contains(&self.view_coherence) {
            return Err(Error::config("world.view_coherence", "must be in [0, 1)"));
        }
        if let Some(r) = self.latent_dim {
            if r == 0 || r > self.prompt_dim {
                return Err(Error::config(
                    "world.latent_dim",
                    "must be in [1, prompt_dim]",
                ));
            }
        }
        if self.identity_map && self.prompt_dim != self.region_dim {
            return Err(Error::config(
                "world.identity_map",
                "requires prompt_dim == region_dim",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ViewPrototype {
    pub z: Vec<f32>,
    pub category: CategoryId,
    pub view_index: usize,
}

#[derive(Clone, Debug)]
pub struct World {
    pub spec: WorldSpec,
    /// `categories × views` prototypes, category-major.
    views: Vec<ViewPrototype>,
    /// Hidden prompt→region map, `region_dim × prompt_dim`.
    map: Matrix<f32>,
}

fn unit_gaussian<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn cos64(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// `r` orthonormal vectors in `R^d` by Gram-Schmidt on Gaussian draws.
fn orthonormal_basis<R: Rng>(rng: &mut R, d: usize, r: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(r);
    while basis.len() < r {
        let mut v = unit_gaussian(rng, d);
        for b in &basis {
            let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn draw_category<R: Rng>(
    rng: &mut R,
    spec: &WorldSpec,
    basis: Option<&[Vec<f64>]>,
    c: usize,
) -> Vec<ViewPrototype> {
    let r = basis.map_or(spec.prompt_dim, <[_]>::len);
    let anchor = unit_gaussian(rng, r);
    let (wa, wu) = (spec.view_coherence.sqrt(), (1.0 - spec.view_coherence).sqrt());
    (0..spec.views)
        .map(|v| {
            let u = unit_gaussian(rng, r);
            let mut mixed: Vec<f64> = anchor.iter().zip(&u).map(|(a, u)| wa * a + wu * u).collect();
            if let Some(basis) = basis {
                let mut embedded = vec![0.0; spec.prompt_dim];
                for (coef, b) in mixed.iter().zip(basis) {
                    embedded.iter_mut().zip(b).for_each(|(e, x)| *e += coef * x);
                }
                mixed = embedded;
            }
            let n = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
            ViewPrototype {
                z: mixed.iter().map(|x| (x / n) as f32).collect(),
                category: CategoryId(c),
                view_index: v,
            }
        })
        .collect()
}

/// Draw the view prototypes and the hidden map. Each category is resampled
/// until all its views sit below the separation cap against every earlier
/// category.
pub fn generate_world(spec: &WorldSpec) -> Result<World> {
    spec.validate()?;
    let mut rng = seeded_rng(spec.seed, WORLD_STREAM);
    let basis = spec
        .latent_dim
        .filter(|&r| r < spec.prompt_dim)
        .map(|r| orthonormal_basis(&mut rng, spec.prompt_dim, r));
    let mut views: Vec<ViewPrototype> = Vec::with_capacity(spec.categories * spec.views);
    for c in 0..spec.categories {
        let mut accepted = None;
        for _ in 0..MAX_RESAMPLES {
            let cand = draw_category(&mut rng, spec, basis.as_deref(), c);
            let ok = cand.iter().all(|v| {
                views
                    .iter()
                    .all(|w| cos64(&v.z, &w.z) < spec.separation_cap)
            });
            if ok {
                accepted = Some(cand);
                break;
            }
        }
        match accepted {
            Some(cand) => views.extend(cand),
            None => {
                return Err(Error::SeparationUnsatisfiable {
                    cap: spec.separation_cap,
                    count: spec.categories * spec.views,
                    dim: spec.prompt_dim,
                })
            }
        }
    }

    let (rows, cols) = (spec.region_dim, spec.prompt_dim);
    let map = if spec.identity_map {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            m.row_mut(i)[i] = 1.0;
        }
        m
    } else {
        let scale = 1.0 / (cols as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                (g * scale) as f32
            })
            .collect();
        Matrix::from_vec(rows, cols, data)?
    };

    Ok(World {
        spec: spec.clone(),
        views,
        map,
    })
}

/// Axis-aligned box in normalised image coordinates. Carried, never scored.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionLabel {
    pub x1: f32,
    pub y1: f32,
    pub x2: f32,
    pub y2: f32,
    pub category: CategoryId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub feature: Vec<f32>,
    pub label: CategoryId,
    pub view: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptItem {
    pub category: CategoryId,
    pub view: usize,
    pub feature: FeatureVector,
}

/// One synthetic target image.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub prompt_items: Vec<PromptItem>,
    pub proposals: Vec<Proposal>,
    pub region_labels: Vec<RegionLabel>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum StreamPolicy {
    /// Random view order.
    Shuffled,
    /// Each category sees `run_length` copies of view 0, then of view 1, and so on.
    CyclicViews { run_length: usize },
}

fn gaussian_noise<R: Rng>(rng: &mut R, sigma: f64) -> f64 {
    if sigma == 0.0 {
        0.0
    } else {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    }
}

impl World {
    pub fn num_categories(&self) -> usize {
        self.spec.categories
    }

    pub fn num_views(&self) -> usize {
        self.spec.views
    }

    pub fn view(&self, category: CategoryId, view: usize) -> &ViewPrototype {
        &self.views[category.0 * self.spec.views + view]
    }

    pub fn views(&self) -> &[ViewPrototype] {
        &self.views
    }

    pub fn map(&self) -> &Matrix<f32> {
        &self.map
    }

    /// `A · z` for one view, accumulated in `f64`.
    pub fn region_image(&self, category: CategoryId, view: usize) -> Vec<f32> {
        let z = &self.view(category, view).z;
        self.map
            .iter_rows()
            .map(|row| {
                row.iter()
                    .zip(z)
                    .map(|(&a, &x)| f64::from(a) * f64::from(x))
                    .sum::<f64>() as f32
            })
            .collect()
    }

    /// A noisy prompt embedding of one view. Never returns an all-zero vector.
    pub fn sample_prompt_feature<R: Rng>(
        &self,
        category: CategoryId,
        view: usize,
        rng: &mut R,
    ) -> FeatureVector {
        let z = &self.view(category, view).z;
        loop {
            let f: Vec<f32> = z
                .iter()
                .map(|&x| (f64::from(x) + gaussian_noise(rng, self.spec.prompt_noise)) as f32)
                .collect();
            if f.iter().any(|&x| x != 0.0) {
                return FeatureVector::new(f);
            }
        }
    }

    pub fn sample_proposal<R: Rng>(&self, category: CategoryId, view: usize, rng: &mut R) -> Proposal {
        let feature = self
            .region_image(category, view)
            .into_iter()
            .map(|x| (f64::from(x) + gaussian_noise(rng, self.spec.region_noise)) as f32)
            .collect();
        Proposal {
            feature,
            label: category,
            view,
        }
    }

    /// `count` proposals with categories drawn uniformly from `categories`
    /// and views uniformly per proposal, plus matching inert boxes.
    pub fn sample_proposals<R: Rng>(
        &self,
        categories: &[CategoryId],
        count: usize,
        rng: &mut R,
    ) -> (Vec<Proposal>, Vec<RegionLabel>) {
        let mut proposals = Vec::with_capacity(count);
        let mut boxes = Vec::with_capacity(count);
        for _ in 0..count {
            let c = *categories.choose(rng).expect("non-empty category list");
            let v = rng.gen_range(0..self.spec.views);
            proposals.push(self.sample_proposal(c, v, rng));
            boxes.push(sample_box(rng, c));
        }
        (proposals, boxes)
    }

    /// A training/evaluation episode: `prompts` prompt items over random
    /// categories and views, then `proposals` proposals.
    pub fn sample_episode<R: Rng>(
        &self,
        categories: &[CategoryId],
        prompts: usize,
        proposals: usize,
        rng: &mut R,
    ) -> Episode {
        let prompt_items = (0..prompts)
            .map(|_| {
                let c = *categories.choose(rng).expect("non-empty category list");
                let v = rng.gen_range(0..self.spec.views);
                PromptItem {
                    category: c,
                    view: v,
                    feature: self.sample_prompt_feature(c, v, rng),
                }
            })
            .collect();
        let (proposals, region_labels) = self.sample_proposals(categories, proposals, rng);
        Episode {
            prompt_items,
            proposals,
            region_labels,
        }
    }

    /// A prompt stream over `categories`, organised in rounds: every round
    /// holds exactly one item per category (in random order), so any prefix of
    /// `k · |categories|` items carries exactly `k` prompts per category.
    pub fn make_stream(
        &self,
        categories: &[CategoryId],
        policy: StreamPolicy,
        length: usize,
        seed: u64,
        stream: u64,
    ) -> Vec<PromptItem> {
        let mut rng = seeded_rng(seed, stream);
        let mut out = Vec::with_capacity(length);
        let mut order = categories.to_vec();
        let mut round = 0usize;
        while out.len() < length {
            order.shuffle(&mut rng);
            for &c in &order {
                if out.len() == length {
                    break;
                }
                let v = match policy {
                    StreamPolicy::Shuffled => rng.gen_range(0..self.spec.views),
                    StreamPolicy::CyclicViews { run_length } => {
                        (round / run_length.max(1)) % self.spec.views
                    }
                };
                out.push(PromptItem {
                    category: c,
                    view: v,
                    feature: self.sample_prompt_feature(c, v, &mut rng),
                });
            }
            round += 1;
        }
        out
    }
}

fn sample_box<R: Rng>(rng: &mut R, category: CategoryId) -> RegionLabel {
    let x1: f32 = rng.gen_range(0.0..0.9);
    let y1: f32 = rng.gen_range(0.0..0.9);
    let x2 = rng.gen_range(x1 + 0.05..=1.0);
    let y2 = rng.gen_range(y1 + 0.05..=1.0);
    RegionLabel {
        x1,
        y1,
        x2,
        y2,
        category,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{UpdatePolicy, VisualBank};

    fn spec(categories: usize, views: usize, d: usize) -> WorldSpec {
        WorldSpec {
            categories,
            views,
            prompt_dim: d,
            region_dim: d,
            view_coherence: 0.0,
            latent_dim: None,
            ..WorldSpec::default()
        }
    }

    #[test]
    fn views_span_at_most_the_latent_subspace() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        for v in w.views() {
            let mut r: Vec<f64> = v.z.iter().map(|&x| f64::from(x)).collect();
            for b in &basis {
                let p: f64 = r.iter().zip(b).map(|(x, y)| x * y).sum();
                r.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
            let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
            if n > 1e-4 {
                basis.push(r.into_iter().map(|x| x / n).collect());
            }
        }
        assert_eq!(basis.len(), 4);
    }

    #[test]
    fn two_nearly_orthogonal_categories() {
        let s = WorldSpec {
            separation_cap: 0.1,
            ..spec(2, 1, 2)
        };
        let w = generate_world(&s).unwrap();
        let (a, b) = (&w.views()[0].z, &w.views()[1].z);
        assert!(cos64(a, b) < 0.1);
    }

    #[test]
    fn generation_is_deterministic() {
        let s = WorldSpec {
            seed: 42,
            ..WorldSpec::default()
        };
        let (a, b) = (generate_world(&s).unwrap(), generate_world(&s).unwrap());
        assert_eq!(a.views(), b.views());
        assert_eq!(a.map(), b.map());
        let other = generate_world(&WorldSpec { seed: 43, ..s }).unwrap();
        assert_ne!(a.views(), other.views());
    }

    #[test]
    fn default_world_prototypes_are_unit_and_separated() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        assert_eq!(w.views().len(), 30);
        for v in w.views() {
            let n: f64 = v.z.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
        }
        for a in w.views() {
            for b in w.views() {
                if a.category != b.category {
                    assert!(cos64(&a.z, &b.z) < w.spec.separation_cap);
                }
            }
        }
    }

    #[test]
    fn impossible_cap_is_reported() {
        let s = WorldSpec {
            separation_cap: -0.9,
            ..spec(3, 1, 2)
        };
        assert!(matches!(
            generate_world(&s),
            Err(Error::SeparationUnsatisfiable { .. })
        ));
    }

    #[test]
    fn noiseless_prompt_is_the_prototype() {
        let s = WorldSpec {
            prompt_noise: 0.0,
            ..WorldSpec::default()
        };
        let w = generate_world(&s).unwrap();
        let mut rng = seeded_rng(1, 9);
        let f = w.sample_prompt_feature(CategoryId(2), 1, &mut rng);
        assert_eq!(&*f, w.view(CategoryId(2), 1).z.as_slice());
    }

    #[test]
    fn prompt_sample_mean_tracks_prototype() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let mut rng = seeded_rng(5, 9);
        let n = 10_000;
        let d = w.spec.prompt_dim;
        let mut acc = vec![0.0f64; d];
        for _ in 0..n {
            let f = w.sample_prompt_feature(CategoryId(0), 0, &mut rng);
            for (a, &x) in acc.iter_mut().zip(f.iter()) {
                *a += f64::from(x);
            }
        }
        let tol = 3.0 * w.spec.prompt_noise / (n as f64).sqrt();
        let z = &w.view(CategoryId(0), 0).z;
        let within = acc
            .iter()
            .zip(z)
            .filter(|(a, &x)| (*a / n as f64 - f64::from(x)).abs() <= tol)
            .count();
        // 3σ per coordinate: expect ~99.7% of the 32 coordinates inside.
        assert!(within >= d - 2, "{within}/{d} coordinates within 3σ");
    }

    #[test]
    fn prompts_cluster_by_view() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let mut rng = seeded_rng(6, 9);
        let c = CategoryId(3);
        let samples: Vec<Vec<FeatureVector>> = (0..3)
            .map(|v| (0..20).map(|_| w.sample_prompt_feature(c, v, &mut rng)).collect())
            .collect();
        let dist = |a: &[f32], b: &[f32]| -> f64 {
            a.iter().zip(b).map(|(x, y)| f64::from(x - y).powi(2)).sum::<f64>().sqrt()
        };
        let (mut within, mut nw, mut across, mut na) = (0.0, 0, 0.0, 0);
        for (va, sa) in samples.iter().enumerate() {
            for (vb, sb) in samples.iter().enumerate() {
                for (i, a) in sa.iter().enumerate() {
                    for (j, b) in sb.iter().enumerate() {
                        if va == vb && i < j {
                            within += dist(a, b);
                            nw += 1;
                        } else if va < vb {
                            across += dist(a, b);
                            na += 1;
                        }
                    }
                }
            }
        }
        assert!(within / nw as f64 <= across / na as f64);
    }

    #[test]
    fn identity_noiseless_proposal_equals_prototype() {
        let s = WorldSpec {
            prompt_noise: 0.0,
            region_noise: 0.0,
            identity_map: true,
            ..WorldSpec::default()
        };
        let w = generate_world(&s).unwrap();
        let mut rng = seeded_rng(2, 2);
        let p = w.sample_proposal(CategoryId(4), 2, &mut rng);
        assert_eq!(p.feature, w.view(CategoryId(4), 2).z);
    }

    #[test]
    fn proposals_closest_to_own_category_image() {
        // Coherent views: every view leans on its category direction.
        let s = WorldSpec {
            region_noise: 0.01,
            view_coherence: 0.8,
            region_dim: 128,
            separation_cap: 0.3,
            latent_dim: None,
            ..WorldSpec::default()
        };
        let w = generate_world(&s).unwrap();
        let ids: Vec<CategoryId> = (0..w.num_categories()).map(CategoryId).collect();
        let mean_image = |c: CategoryId| -> Vec<f64> {
            let mut acc = vec![0.0; w.spec.region_dim];
            for v in 0..w.num_views() {
                for (a, x) in acc.iter_mut().zip(w.region_image(c, v)) {
                    *a += f64::from(x) / w.num_views() as f64;
                }
            }
            acc
        };
        let images: Vec<Vec<f64>> = ids.iter().map(|&c| mean_image(c)).collect();
        let mut rng = seeded_rng(3, 3);
        let (props, boxes) = w.sample_proposals(&ids, 200, &mut rng);
        for p in &props {
            let dots: Vec<f64> = images
                .iter()
                .map(|m| m.iter().zip(&p.feature).map(|(a, &b)| a * f64::from(b)).sum())
                .collect();
            let own = dots[p.label.0];
            assert!(dots.iter().enumerate().all(|(c, &d)| c == p.label.0 || d < own));
        }
        for b in boxes {
            assert!(b.x1 < b.x2 && b.y1 < b.y2);
        }
    }

    #[test]
    fn cyclic_stream_layout() {
        let w = generate_world(&spec(2, 3, 8)).unwrap();
        let ids = [CategoryId(0), CategoryId(1)];
        let items = w.make_stream(&ids, StreamPolicy::CyclicViews { run_length: 10 }, 60, 0, 4);
        for c in ids {
            let views: Vec<usize> = items
                .iter()
                .filter(|i| i.category == c)
                .map(|i| i.view)
                .collect();
            let expect: Vec<usize> = (0..3).flat_map(|v| std::iter::repeat_n(v, 10)).collect();
            assert_eq!(views, expect);
        }
    }

    #[test]
    fn shuffled_stream_is_reproducible_and_balanced() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let ids: Vec<CategoryId> = (0..10).map(CategoryId).collect();
        let a = w.make_stream(&ids, StreamPolicy::Shuffled, 70, 11, 4);
        let b = w.make_stream(&ids, StreamPolicy::Shuffled, 70, 11, 4);
        assert_eq!(a, b);
        for c in &ids {
            assert_eq!(a[..30].iter().filter(|i| i.category == *c).count(), 3);
        }
    }

    fn view_coverage(world: &World, bank: &VisualBank, c: CategoryId) -> usize {
        let cat = bank.category(c).unwrap();
        (0..world.num_views())
            .filter(|&v| {
                let z = &world.view(c, v).z;
                cat.occupied().any(|s| cos64(s, z) >= 0.8)
            })
            .count()
    }

    #[test]
    fn fifo_forgets_views_under_cyclic_drift() {
        let w = generate_world(&WorldSpec::default()).unwrap();
        let ids: Vec<CategoryId> = (0..10).map(CategoryId).collect();
        let stream = w.make_stream(&ids, StreamPolicy::CyclicViews { run_length: 10 }, 300, 0, 4);
        let mut avg = VisualBank::new(10, 5, 32, UpdatePolicy::Averaging).unwrap();
        let mut fifo = VisualBank::new(10, 5, 32, UpdatePolicy::Fifo).unwrap();
        for item in &stream {
            avg.insert(item.category, &item.feature).unwrap();
            fifo.insert(item.category, &item.feature).unwrap();
        }
        let cov = |b: &VisualBank| -> usize { ids.iter().map(|&c| view_coverage(&w, b, c)).sum() };
        assert!(cov(&fifo) < cov(&avg), "fifo {} avg {}", cov(&fifo), cov(&avg));
    }
}
