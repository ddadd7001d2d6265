//! Euclidean projections onto the feasible sets used by the optimizers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::vecmath::Vector;

/// Largest dimension accepted by [`FeasibleSet::project_bruteforce`].
pub const BRUTEFORCE_MAX_DIM: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetKind {
    L1Ball { radius: f64 },
    L2Ball { radius: f64 },
    Box { lower: Vec<f64>, upper: Vec<f64> },
    FullSpace,
}

/// A closed convex set `Q ⊆ ℝᵈ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    kind: SetKind,
    dim: usize,
}

impl FeasibleSet {
    pub fn l1_ball(dim: usize, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!("l1 radius must be positive, got {radius}")));
        }
        Self::with_dim(SetKind::L1Ball { radius }, dim)
    }

    pub fn l2_ball(dim: usize, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(invalid(format!("l2 radius must be positive, got {radius}")));
        }
        Self::with_dim(SetKind::L2Ball { radius }, dim)
    }

    pub fn cube(dim: usize, lower: f64, upper: f64) -> Result<Self> {
        Self::boxed(vec![lower; dim], vec![upper; dim])
    }

    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if !(l.is_finite() && u.is_finite() && l <= u) {
                return Err(invalid(format!("box bounds invalid at coordinate {i}: [{l}, {u}]")));
            }
        }
        let dim = lower.len();
        Self::with_dim(SetKind::Box { lower, upper }, dim)
    }

    pub fn full_space(dim: usize) -> Result<Self> {
        Self::with_dim(SetKind::FullSpace, dim)
    }

    fn with_dim(kind: SetKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("feasible set dimension must be positive"));
        }
        Ok(Self { kind, dim })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Upper bound on `sup ‖u − v‖` over the set; `None` when unbounded.
    pub fn diameter(&self) -> Option<f64> {
        match &self.kind {
            SetKind::L1Ball { radius } => Some(2.0 * radius),
            SetKind::L2Ball { radius } => Some(2.0 * radius),
            SetKind::Box { lower, upper } => Some(
                lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| (u - l) * (u - l))
                    .sum::<f64>()
                    .sqrt(),
            ),
            SetKind::FullSpace => None,
        }
    }

    /// True when the set is a product of intervals, so membership and
    /// projection act coordinate by coordinate.
    pub fn is_separable(&self) -> bool {
        matches!(self.kind, SetKind::Box { .. } | SetKind::FullSpace)
    }

    /// Bounds of coordinate `i` for separable sets.
    pub fn coordinate_bounds(&self, i: usize) -> Option<(f64, f64)> {
        match &self.kind {
            SetKind::Box { lower, upper } => Some((lower[i], upper[i])),
            SetKind::FullSpace => Some((f64::NEG_INFINITY, f64::INFINITY)),
            _ => None,
        }
    }

    /// Euclidean projection `argmin_{y ∈ Q} ‖y − x‖²`.
    pub fn project(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.dim())?;
        let mut y = x.to_dense();
        self.project_in_place(&mut y)?;
        Vector::dense(y)
    }

    /// In-place projection of a dense buffer.
    pub fn project_in_place(&self, x: &mut [f64]) -> Result<()> {
        check_dim(self.dim, x.len())?;
        match &self.kind {
            SetKind::L1Ball { radius } => project_l1(x, *radius),
            SetKind::L2Ball { radius } => {
                let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > *radius {
                    let s = radius / norm;
                    x.iter_mut().for_each(|v| *v *= s);
                }
            }
            SetKind::Box { lower, upper } => {
                for ((v, l), u) in x.iter_mut().zip(lower).zip(upper) {
                    *v = v.clamp(*l, *u);
                }
            }
            SetKind::FullSpace => {}
        }
        Ok(())
    }

    /// Whether the constraint value is within `tol` of the bound.
    pub fn membership(&self, x: &Vector, tol: f64) -> bool {
        if x.dim() != self.dim {
            return false;
        }
        match &self.kind {
            SetKind::L1Ball { radius } => x.norm1() <= radius + tol,
            SetKind::L2Ball { radius } => x.norm2() <= radius + tol,
            SetKind::Box { lower, upper } => {
                let x = x.to_dense();
                x.iter()
                    .zip(lower.iter().zip(upper))
                    .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol)
            }
            SetKind::FullSpace => true,
        }
    }

    pub fn contains_dense(&self, x: &[f64], tol: f64) -> bool {
        match Vector::dense(x.to_vec()) {
            Ok(v) => self.membership(&v, tol),
            Err(_) => false,
        }
    }

    /// Support function `max_{u ∈ Q} ⟨dir, u⟩`; `None` when unbounded in `dir`.
    pub fn support(&self, dir: &[f64]) -> Result<Option<f64>> {
        check_dim(self.dim, dir.len())?;
        Ok(match &self.kind {
            SetKind::L1Ball { radius } => {
                Some(radius * dir.iter().fold(0.0f64, |m, v| m.max(v.abs())))
            }
            SetKind::L2Ball { radius } => Some(radius * dir.iter().map(|v| v * v).sum::<f64>().sqrt()),
            SetKind::Box { lower, upper } => Some(
                dir.iter()
                    .zip(lower.iter().zip(upper))
                    .map(|(d, (l, u))| (d * l).max(d * u))
                    .sum(),
            ),
            SetKind::FullSpace => dir.iter().all(|v| *v == 0.0).then_some(0.0),
        })
    }

    /// Random point of the set, used to sample the variational inequality.
    /// Draws a mix of interior and boundary points; unbounded coordinates
    /// are sampled from `[-scale, scale]`.
    pub fn sample_point(&self, rng: &mut impl Rng, scale: f64) -> Vec<f64> {
        let d = self.dim;
        let raw: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let on_boundary = rng.gen_bool(0.25);
        let shrink = if on_boundary { 1.0 } else { rng.gen::<f64>() };
        match &self.kind {
            SetKind::L1Ball { radius } => {
                let n: f64 = raw.iter().map(|v| v.abs()).sum();
                if n == 0.0 {
                    return vec![0.0; d];
                }
                raw.iter().map(|v| v / n * radius * shrink).collect()
            }
            SetKind::L2Ball { radius } => {
                let n = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n == 0.0 {
                    return vec![0.0; d];
                }
                raw.iter().map(|v| v / n * radius * shrink).collect()
            }
            SetKind::Box { lower, upper } => raw
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, u))| {
                    if on_boundary {
                        if *v < 0.0 { *l } else { *u }
                    } else {
                        l + (u - l) * 0.5 * (v + 1.0)
                    }
                })
                .collect(),
            SetKind::FullSpace => raw.iter().map(|v| v * scale).collect(),
        }
    }

    /// Projection by exhaustive search over the faces of the set. Test
    /// oracle only: exponential in the dimension.
    pub fn project_bruteforce(&self, x: &Vector) -> Result<Vector> {
        check_dim(self.dim, x.dim())?;
        if self.dim > BRUTEFORCE_MAX_DIM {
            return Err(invalid(format!(
                "brute-force projection limited to dimension {BRUTEFORCE_MAX_DIM}, got {}",
                self.dim
            )));
        }
        let x = x.to_dense();
        let y = match &self.kind {
            SetKind::L1Ball { radius } => bruteforce_l1(&x, *radius),
            SetKind::L2Ball { radius } => bruteforce_l2(&x, *radius),
            SetKind::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(&v, (&l, &u))| {
                    [v, l, u]
                        .into_iter()
                        .filter(|c| *c >= l && *c <= u)
                        .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
                        .unwrap_or(l)
                })
                .collect(),
            SetKind::FullSpace => x,
        };
        Vector::dense(y)
    }
}

/// Sort-based soft-thresholding onto `{‖y‖₁ ≤ τ}`.
fn project_l1(x: &mut [f64], radius: f64) {
    let l1: f64 = x.iter().map(|v| v.abs()).sum();
    if l1 <= radius {
        return;
    }
    let mut mags: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    mags.sort_unstable_by(|a, b| b.total_cmp(a));

    // θ from the largest prefix whose smallest element is not below its threshold.
    let mut prefix = 0.0;
    let mut theta = 0.0;
    for (k, &m) in mags.iter().enumerate() {
        prefix += m;
        let candidate = (prefix - radius) / (k + 1) as f64;
        if m >= candidate {
            theta = candidate;
        } else {
            break;
        }
    }
    for v in x.iter_mut() {
        *v = v.signum() * (v.abs() - theta).max(0.0);
    }
}

fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Enumerates every face (support set and sign pattern) of the ℓ₁ ball,
/// projects onto the face's affine hull, and keeps the nearest candidate
/// that lies inside its face.
fn bruteforce_l1(x: &[f64], radius: f64) -> Vec<f64> {
    let d = x.len();
    if x.iter().map(|v| v.abs()).sum::<f64>() <= radius {
        return x.to_vec();
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let patterns = 3usize.pow(d as u32);
    for code in 0..patterns {
        // digit 0: coordinate fixed at zero, 1: positive, 2: negative
        let mut signs = vec![0.0; d];
        let mut c = code;
        for s in signs.iter_mut() {
            *s = match c % 3 {
                0 => 0.0,
                1 => 1.0,
                _ => -1.0,
            };
            c /= 3;
        }
        let support = signs.iter().filter(|s| **s != 0.0).count();
        if support == 0 {
            continue;
        }
        // minimize ‖y − x‖² s.t. yⱼ = 0 off-support, Σ sᵢyᵢ = τ
        let signed_sum: f64 = x.iter().zip(&signs).map(|(v, s)| v * s).sum();
        let theta = (signed_sum - radius) / support as f64;
        let y: Vec<f64> = x
            .iter()
            .zip(&signs)
            .map(|(v, s)| if *s == 0.0 { 0.0 } else { v - theta * s })
            .collect();
        if y.iter().zip(&signs).any(|(v, s)| v * s < 0.0) {
            continue;
        }
        let dist = dist_sq(&y, x);
        if best.as_ref().is_none_or(|(b, _)| dist < *b) {
            best = Some((dist, y));
        }
    }
    best.map(|(_, y)| y).unwrap_or_else(|| vec![0.0; d])
}

/// Boundary KKT for the ℓ₂ ball: `y = x / (1 + λ)` with `‖y‖ = r`, the
/// multiplier found by bisection rather than in closed form.
fn bruteforce_l2(x: &[f64], radius: f64) -> Vec<f64> {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm <= radius {
        return x.to_vec();
    }
    let (mut lo, mut hi) = (0.0f64, norm / radius);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if norm / (1.0 + mid) > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let lambda = hi;
    x.iter().map(|v| v / (1.0 + lambda)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> Vector {
        Vector::dense(x.to_vec()).unwrap()
    }

    fn close(a: &Vector, b: &[f64], tol: f64) -> bool {
        a.to_dense().iter().zip(b).all(|(p, q)| (p - q).abs() <= tol)
    }

    #[test]
    fn l1_examples() {
        let q = FeasibleSet::l1_ball(2, 1.0).unwrap();
        assert!(close(&q.project(&v(&[3., 0.])).unwrap(), &[1., 0.], 1e-15));
        assert!(close(&q.project(&v(&[1., 1.])).unwrap(), &[0.5, 0.5], 1e-15));
        assert!(close(&q.project(&v(&[0.2, -0.3])).unwrap(), &[0.2, -0.3], 0.0));
        let q = FeasibleSet::l1_ball(3, 0.6).unwrap();
        let x = v(&[0.6, -0.4, 0.2]);
        assert!(close(&q.project(&x).unwrap(), &[0.4, -0.2, 0.0], 1e-12));
        assert!(close(&q.project_bruteforce(&x).unwrap(), &[0.4, -0.2, 0.0], 1e-12));
    }

    #[test]
    fn l2_and_box_examples() {
        let q = FeasibleSet::l2_ball(2, 1.0).unwrap();
        assert!(close(&q.project(&v(&[3., 4.])).unwrap(), &[0.6, 0.8], 1e-15));
        let q = FeasibleSet::cube(1, -1.0, 1.0).unwrap();
        assert_eq!(q.project(&v(&[1.05])).unwrap().to_dense(), vec![1.0]);
    }

    #[test]
    fn bruteforce_agrees_on_trivial_cases() {
        let q = FeasibleSet::l1_ball(2, 1.0).unwrap();
        for (x, y) in [([3., 0.], [1., 0.]), ([1., 1.], [0.5, 0.5]), ([0.2, -0.3], [0.2, -0.3])] {
            assert!(close(&q.project_bruteforce(&v(&x)).unwrap(), &y, 1e-12));
        }
    }

    #[test]
    fn bruteforce_rejects_large_dimension() {
        let q = FeasibleSet::l1_ball(9, 1.0).unwrap();
        assert!(q.project_bruteforce(&Vector::zeros(9)).is_err());
    }

    #[test]
    fn membership_examples() {
        let q = FeasibleSet::l1_ball(2, 1.0).unwrap();
        assert!(q.membership(&v(&[0.5, 0.5]), 0.0));
        assert!(!q.membership(&v(&[0.6, 0.5]), 0.0));
        let f = FeasibleSet::full_space(2).unwrap();
        assert!(f.membership(&v(&[1e300, -1e300]), 0.0));
    }

    #[test]
    fn diameters() {
        assert_eq!(FeasibleSet::l1_ball(3, 2.0).unwrap().diameter(), Some(4.0));
        assert_eq!(FeasibleSet::l2_ball(3, 1.5).unwrap().diameter(), Some(3.0));
        let b = FeasibleSet::boxed(vec![0., 0.], vec![3., 4.]).unwrap();
        assert_eq!(b.diameter(), Some(5.0));
        assert_eq!(FeasibleSet::full_space(1).unwrap().diameter(), None);
    }

    #[test]
    fn constructor_guards() {
        assert!(FeasibleSet::l1_ball(2, 0.0).is_err());
        assert!(FeasibleSet::l2_ball(2, -1.0).is_err());
        assert!(FeasibleSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(FeasibleSet::l1_ball(0, 1.0).is_err());
    }

    #[test]
    fn support_function() {
        let b = FeasibleSet::boxed(vec![-1., 0.], vec![2., 1.]).unwrap();
        assert_eq!(b.support(&[1., -1.]).unwrap(), Some(2.0));
        let l1 = FeasibleSet::l1_ball(2, 2.0).unwrap();
        assert_eq!(l1.support(&[1., -3.]).unwrap(), Some(6.0));
        let f = FeasibleSet::full_space(2).unwrap();
        assert_eq!(f.support(&[0., 1.]).unwrap(), None);
    }

    fn set_and_point() -> impl Strategy<Value = (FeasibleSet, Vec<f64>, Vec<f64>)> {
        (1usize..7, 0u8..3, 0.1..3.0f64).prop_flat_map(|(d, kind, r)| {
            let set = match kind {
                0 => FeasibleSet::l1_ball(d, r).unwrap(),
                1 => FeasibleSet::l2_ball(d, r).unwrap(),
                _ => FeasibleSet::cube(d, -r, 0.5 * r).unwrap(),
            };
            (
                Just(set),
                prop::collection::vec(-4.0..4.0f64, d),
                prop::collection::vec(-4.0..4.0f64, d),
            )
        })
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_feasible((q, x, _) in set_and_point()) {
            let p = q.project(&v(&x)).unwrap();
            prop_assert!(q.membership(&p, 1e-12));
            let pp = q.project(&p).unwrap();
            prop_assert!(close(&pp, &p.to_dense(), 1e-12));
        }

        #[test]
        fn projection_is_nonexpansive((q, x, y) in set_and_point()) {
            let px = q.project(&v(&x)).unwrap().to_dense();
            let py = q.project(&v(&y)).unwrap().to_dense();
            prop_assert!(dist_sq(&px, &py).sqrt() <= dist_sq(&x, &y).sqrt() + 1e-12);
        }

        #[test]
        fn variational_inequality_holds((q, x, _) in set_and_point(), seed in any::<u64>()) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = q.project(&v(&x)).unwrap().to_dense();
            for _ in 0..200 {
                let u = q.sample_point(&mut rng, 1.0);
                let s: f64 = x.iter().zip(&p).zip(&u).map(|((x, p), u)| (x - p) * (u - p)).sum();
                prop_assert!(s <= 1e-10, "slack {}", s);
            }
        }

        #[test]
        fn projection_matches_bruteforce((q, x, _) in set_and_point()) {
            let fast = q.project(&v(&x)).unwrap();
            let slow = q.project_bruteforce(&v(&x)).unwrap();
            prop_assert!(close(&fast, &slow.to_dense(), 1e-8));
        }
    }
}
