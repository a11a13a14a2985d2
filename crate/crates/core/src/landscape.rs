//! Loss landscapes on a random plane through a model, and projections of
//! fine-tuning trajectories onto that plane.
//!
//! Directions are filter-normalized: every parameter entry of a direction
//! is rescaled to the norm of the same entry of the origin, so the plane's
//! units are comparable across layers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, predict_logits, MlpArchitecture, ParamSet};
use crate::par::{self, ExecMode};

const MAX_DIRECTION_RETRIES: u64 = 8;

#[derive(Debug, Clone)]
pub struct PlaneBasis {
    pub origin: ParamSet,
    pub dir_u: ParamSet,
    pub dir_v: ParamSet,
    pub extent: f64,
    pub resolution: usize,
    pub seed: u64,
}

fn random_like(origin: &ParamSet, rng: &mut ChaCha8Rng) -> ParamSet {
    let mut d = origin.zeros_like();
    for i in 0..d.len() {
        for v in d.tensor_mut(i).values_mut() {
            *v = StandardNormal.sample(rng);
        }
    }
    d
}

/// Rescales each entry of `dir` to the norm of the matching origin entry;
/// entries whose origin or direction norm vanishes become zero.
fn filter_normalize(dir: &mut ParamSet, origin: &ParamSet) {
    for i in 0..dir.len() {
        let target = origin.tensor(i).norm();
        let t = dir.tensor_mut(i);
        let n = t.norm();
        if n > 0.0 && target > 0.0 {
            t.scale(target / n);
        } else {
            t.scale(0.0);
        }
    }
}

/// Removes, entry by entry, the component of `v` along `u`.
fn orthogonalize(v: &mut ParamSet, u: &ParamSet) {
    for i in 0..v.len() {
        let ut = u.tensor(i);
        let uu = ut.norm_sq();
        if uu == 0.0 {
            continue;
        }
        let k = v.tensor(i).dot(ut) / uu;
        for (x, &y) in v.tensor_mut(i).values_mut().iter_mut().zip(ut.values()) {
            *x -= k * y;
        }
    }
}

fn draw_direction(origin: &ParamSet, seed: u64, stream: u64, against: Option<&ParamSet>) -> Option<ParamSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut d = random_like(origin, &mut rng);
    if let Some(u) = against {
        orthogonalize(&mut d, u);
    }
    filter_normalize(&mut d, origin);
    if let Some(u) = against {
        // Rescaling keeps each entry orthogonal; this pass removes rounding.
        orthogonalize(&mut d, u);
    }
    (d.norm() > 0.0).then_some(d)
}

/// Two filter-normalized, mutually orthogonal random directions around
/// `origin`. A direction that comes out identically zero is redrawn from
/// the next stream, up to eight times.
pub fn make_plane(origin: &ParamSet, seed: u64, extent: f64, resolution: usize) -> Result<PlaneBasis> {
    if resolution < 3 || resolution.is_multiple_of(2) {
        return Err(Error::rejected(format!("resolution must be odd and at least 3, got {resolution}")));
    }
    if !(extent >= 0.0 && extent.is_finite()) {
        return Err(Error::rejected("extent must be finite and non-negative"));
    }
    let mut stream = 0;
    let mut next = |against: Option<&ParamSet>| -> Result<ParamSet> {
        for _ in 0..=MAX_DIRECTION_RETRIES {
            let s = stream;
            stream += 1;
            if let Some(d) = draw_direction(origin, seed, s, against) {
                return Ok(d);
            }
        }
        Err(Error::DegenerateFit("could not draw a non-zero plane direction".into()))
    };
    let dir_u = next(None)?;
    let dir_v = next(Some(&dir_u))?;
    Ok(PlaneBasis {
        origin: origin.clone(),
        dir_u,
        dir_v,
        extent,
        resolution,
        seed,
    })
}

impl PlaneBasis {
    /// Axis coordinates, symmetric around an exact zero at the center.
    pub fn axis(&self) -> Vec<f64> {
        let c = (self.resolution - 1) / 2;
        (0..self.resolution)
            .map(|i| self.extent * (i as f64 - c as f64) / c as f64)
            .collect()
    }

    /// `origin + alpha·dir_u + beta·dir_v`.
    pub fn point(&self, alpha: f64, beta: f64) -> ParamSet {
        let mut p = self.origin.clone();
        if alpha != 0.0 {
            p.axpy(alpha, &self.dir_u);
        }
        if beta != 0.0 {
            p.axpy(beta, &self.dir_v);
        }
        p
    }

    /// The same plane with the two directions exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            dir_u: self.dir_v.clone(),
            dir_v: self.dir_u.clone(),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// `values[i][j]` is the loss at `(alphas[i], betas[j])`; non-finite
    /// losses are stored as `+inf`.
    pub values: Vec<Vec<f64>>,
}

impl LossGrid {
    pub fn center(&self) -> f64 {
        let c = self.alphas.len() / 2;
        self.values[c][c]
    }

    /// `alpha,beta,loss` rows in row-major order.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,beta,loss\n");
        for (i, a) in self.alphas.iter().enumerate() {
            for (j, b) in self.betas.iter().enumerate() {
                s.push_str(&format!("{a},{b},{}\n", self.values[i][j]));
            }
        }
        s
    }

    /// Grid plus basis metadata. Infinite cells are written as `null`.
    pub fn to_json(&self, basis: &PlaneBasis, dataset: &str) -> Result<String> {
        let cells: Vec<Vec<Option<f64>>> = self
            .values
            .iter()
            .map(|row| row.iter().map(|&v| v.is_finite().then_some(v)).collect())
            .collect();
        let norms: Vec<(String, f64)> = basis
            .origin
            .iter()
            .map(|(name, t)| (name.to_owned(), t.norm()))
            .collect();
        let doc = serde_json::json!({
            "dataset": dataset,
            "seed": basis.seed,
            "extent": basis.extent,
            "resolution": basis.resolution,
            "origin_entry_norms": norms,
            "alphas": self.alphas,
            "betas": self.betas,
            "values": cells,
        });
        Ok(serde_json::to_string_pretty(&doc)?)
    }
}

/// Evaluates `loss` on every grid cell. Cells are independent and may run
/// in parallel; their order in the output is fixed.
pub fn loss_grid_with<F>(basis: &PlaneBasis, mode: ExecMode, loss: F) -> Result<LossGrid>
where
    F: Fn(&ParamSet) -> Result<f64> + Sync + Send,
{
    let axis = basis.axis();
    let r = basis.resolution;
    let cells = par::map_range(mode, r * r, |k| {
        let p = basis.point(axis[k / r], axis[k % r]);
        match loss(&p) {
            Ok(v) if v.is_finite() => Ok(v),
            Ok(_) | Err(Error::Divergence { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        }
    });
    let flat = cells.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(LossGrid {
        alphas: axis.clone(),
        betas: axis,
        values: flat.chunks(r).map(<[f64]>::to_vec).collect(),
    })
}

/// Mean cross-entropy of `params` on `dataset`.
pub fn dataset_loss(params: &ParamSet, arch: &MlpArchitecture, dataset: &LabeledDataset) -> Result<f64> {
    let logits = predict_logits(params, arch, &dataset.features)?;
    Ok(cross_entropy(&logits, &dataset.labels)?.0)
}

/// Cross-entropy landscape of `dataset` over the plane.
pub fn loss_grid(basis: &PlaneBasis, arch: &MlpArchitecture, dataset: &LabeledDataset, mode: ExecMode) -> Result<LossGrid> {
    if dataset.is_empty() {
        return Err(Error::rejected("loss grid needs a non-empty dataset"));
    }
    loss_grid_with(basis, mode, |p| dataset_loss(p, arch, dataset))
}

/// Least-squares plane coordinates of each checkpoint's offset from the
/// origin.
pub fn project_trajectory(checkpoints: &[ParamSet], basis: &PlaneBasis) -> Result<Vec<(f64, f64)>> {
    let (u, v) = (&basis.dir_u, &basis.dir_v);
    let uu = u.dot(u);
    let uv = u.dot(v);
    let vv = v.dot(v);
    let det = uu * vv - uv * uv;
    if det <= 0.0 {
        return Err(Error::DegenerateFit("plane directions are linearly dependent".into()));
    }
    checkpoints
        .iter()
        .map(|c| {
            basis
                .origin
                .check_layout(c)
                .map_err(|_| Error::rejected("checkpoint layout differs from the plane origin"))?;
            let mut d = c.clone();
            d.axpy(-1.0, &basis.origin);
            let (bu, bv) = (u.dot(&d), v.dot(&d));
            Ok(((vv * bu - uv * bv) / det, (uu * bv - uv * bu) / det))
        })
        .collect()
}

/// `step,alpha,beta` rows.
pub fn trajectory_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("step,alpha,beta\n");
    for (i, (a, b)) in points.iter().enumerate() {
        s.push_str(&format!("{i},{a},{b}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Tensor2D};

    fn small() -> (MlpArchitecture, ParamSet) {
        let arch = MlpArchitecture::new(vec![3, 5, 2], Activation::Tanh, 4).unwrap();
        let p = arch.init_params();
        (arch, p)
    }

    #[test]
    fn plane_rejects_bad_resolution() {
        let (_, p) = small();
        assert!(make_plane(&p, 0, 1.0, 4).is_err());
        assert!(make_plane(&p, 0, 1.0, 1).is_err());
        assert!(make_plane(&p, 0, -1.0, 3).is_err());
    }

    #[test]
    fn zero_origin_is_degenerate() {
        let p = ParamSet::new(vec![("w".into(), Tensor2D::zeros(2, 2))]).unwrap();
        assert!(matches!(make_plane(&p, 0, 1.0, 3), Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn axis_is_symmetric_with_exact_center() {
        let (_, p) = small();
        let b = make_plane(&p, 1, 0.7, 7).unwrap();
        let a = b.axis();
        assert_eq!(a[3], 0.0);
        for i in 0..7 {
            assert_eq!(a[i], -a[6 - i]);
        }
    }

    #[test]
    fn off_plane_projection_matches_normal_equations() {
        let (_, p) = small();
        let b = make_plane(&p, 2, 1.0, 3).unwrap();
        let mut c = b.point(0.3, -1.1);
        c.axpy(0.05, &make_plane(&p, 9, 1.0, 3).unwrap().dir_v);
        let (a, bb) = project_trajectory(std::slice::from_ref(&c), &b).unwrap()[0];
        // Residual must be orthogonal to both directions.
        let mut r = c.clone();
        r.axpy(-1.0, &p);
        r.axpy(-a, &b.dir_u);
        r.axpy(-bb, &b.dir_v);
        assert!(r.dot(&b.dir_u).abs() < 1e-9);
        assert!(r.dot(&b.dir_v).abs() < 1e-9);
    }
}
