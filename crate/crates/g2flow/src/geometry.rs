//! Differentiable-geometry backends: left-invariant data over a Lie algebra
//! (frame-constant fields, exact algebraic derivatives) and a periodic lattice
//! (centered finite differences). Both feed the same generic formulas for the
//! exterior derivative, Levi-Civita connection, covariant derivatives and
//! curvature, written for an anholonomic frame with structure constants c and
//! coordinate partials; the Lie backend has zero partials, the lattice has
//! zero c.

use crate::scalar::Scalar;
use crate::tensor7::{increasing_tuples, Metric, Tensor, TensorError, DIM};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("structure constants not antisymmetric at (k={k}, i={i}, j={j}) [1-based]")]
    NotAntisymmetric { k: usize, i: usize, j: usize },
    #[error("Jacobi identity violated at (i={i}, j={j}, k={k}, n={n}) [1-based]")]
    Jacobi { i: usize, j: usize, k: usize, n: usize },
    #[error("active dimension {0} out of range 1..=7")]
    BadActiveDim(usize),
    #[error("lattice size {0} too small for the stencil")]
    LatticeTooSmall(usize),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A tensor field: one tensor per backend point.
#[derive(Clone, Debug)]
pub struct Field<S> {
    pub points: Vec<Tensor<S>>,
}

impl<S: Scalar> Field<S> {
    pub fn constant(num_points: usize, t: Tensor<S>) -> Self {
        Field { points: vec![t; num_points] }
    }

    pub fn rank(&self) -> usize {
        self.points[0].rank()
    }

    pub fn map(&self, f: impl Fn(&Tensor<S>) -> Tensor<S>) -> Self {
        Field { points: self.points.iter().map(f).collect() }
    }

    pub fn zip(&self, other: &Self, f: impl Fn(&Tensor<S>, &Tensor<S>) -> Tensor<S>) -> Self {
        Field {
            points: self.points.iter().zip(&other.points).map(|(a, b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.add(b))
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a.sub(b))
    }

    pub fn scale(&self, c: &S) -> Self {
        self.map(|t| t.scale(c))
    }

    pub fn max_abs_f64(&self) -> f64 {
        self.points.iter().map(|t| t.max_abs_f64()).fold(0.0, f64::max)
    }
}

/// What a geometry backend supplies: derivatives of fields and the frame's
/// structure constants. All other geometric operators are generic over this.
pub trait Backend<S: Scalar>: Sync {
    fn num_points(&self) -> usize;
    /// Coordinate partial derivatives; output rank is input rank + 1 with the
    /// derivative index first. Identically zero for frame-constant backends.
    fn partial(&self, f: &Field<S>) -> Field<S>;
    /// Structure constants `c^k_{ij}` stored as a rank-3 array `[k][i][j]`,
    /// or `None` when the frame is holonomic.
    fn structure_constants(&self) -> Option<&Tensor<S>>;
    /// Coordinate measure of one point's cell (for integrals).
    fn cell_measure(&self) -> S;
}

// ---------------------------------------------------------------------------
// Lie backend
// ---------------------------------------------------------------------------

/// Left-invariant geometry over a 7-dimensional Lie algebra. A single point
/// represents the whole homogeneous space; `covolume` scales integrals.
pub struct LieBackend<S> {
    c: Tensor<S>,
    covolume: S,
}

impl<S: Scalar> LieBackend<S> {
    /// Build from structure constants `c^k_{ij}` (`[k][i][j]` layout); checks
    /// antisymmetry in (i,j) and the Jacobi identity exhaustively.
    pub fn new(c: Tensor<S>, covolume: S) -> Result<Self, GeometryError> {
        assert_eq!(c.rank(), 3);
        for k in 0..DIM {
            for i in 0..DIM {
                for j in 0..DIM {
                    let sum = c.get(&[k, i, j]).clone() + c.get(&[k, j, i]).clone();
                    if sum.to_f64().abs() > 1e-12 {
                        return Err(GeometryError::NotAntisymmetric { k: k + 1, i: i + 1, j: j + 1 });
                    }
                }
            }
        }
        for i in 0..DIM {
            for j in 0..DIM {
                for k in 0..DIM {
                    for n in 0..DIM {
                        let mut s = S::zero();
                        for m in 0..DIM {
                            s = s + c.get(&[m, i, j]).clone() * c.get(&[n, m, k]).clone()
                                + c.get(&[m, j, k]).clone() * c.get(&[n, m, i]).clone()
                                + c.get(&[m, k, i]).clone() * c.get(&[n, m, j]).clone();
                        }
                        if s.to_f64().abs() > 1e-12 {
                            return Err(GeometryError::Jacobi {
                                i: i + 1,
                                j: j + 1,
                                k: k + 1,
                                n: n + 1,
                            });
                        }
                    }
                }
            }
        }
        Ok(LieBackend { c, covolume })
    }

    /// The abelian algebra (flat torus model).
    pub fn abelian() -> Self {
        LieBackend { c: Tensor::zeros(3), covolume: S::one() }
    }

    /// The 2-step nilpotent algebra `d e^6 = mu e^12`, `d e^7 = mu e^13` on
    /// which the standard 3-form is closed with nonvanishing torsion.
    pub fn nilpotent(mu: S) -> Self {
        let mut c = Tensor::zeros(3);
        // de^k = -(1/2) c^k_{ij} e^i ^ e^j
        c.set(&[5, 0, 1], -mu.clone());
        c.set(&[5, 1, 0], mu.clone());
        c.set(&[6, 0, 2], -mu.clone());
        c.set(&[6, 2, 0], mu);
        LieBackend { c, covolume: S::one() }
    }

    pub fn constants(&self) -> &Tensor<S> {
        &self.c
    }
}

impl<S: Scalar> Backend<S> for LieBackend<S> {
    fn num_points(&self) -> usize {
        1
    }
    fn partial(&self, f: &Field<S>) -> Field<S> {
        Field::constant(1, Tensor::zeros(f.rank() + 1))
    }
    fn structure_constants(&self) -> Option<&Tensor<S>> {
        Some(&self.c)
    }
    fn cell_measure(&self) -> S {
        self.covolume.clone()
    }
}

// ---------------------------------------------------------------------------
// Lattice backend
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StencilOrder {
    Two,
    Four,
}

/// Periodic lattice with a small set of active dimensions; fields are constant
/// along the remaining directions.
pub struct LatticeBackend<S> {
    /// Active tensor-space dimensions (0-based).
    pub active: Vec<usize>,
    pub sizes: Vec<usize>,
    pub spacing: Vec<S>,
    pub order: StencilOrder,
}

impl<S: Scalar> LatticeBackend<S> {
    pub fn new(
        active: Vec<usize>,
        sizes: Vec<usize>,
        spacing: Vec<S>,
        order: StencilOrder,
    ) -> Result<Self, GeometryError> {
        assert_eq!(active.len(), sizes.len());
        assert_eq!(active.len(), spacing.len());
        for &d in &active {
            if d >= DIM {
                return Err(GeometryError::BadActiveDim(d + 1));
            }
        }
        let need = match order {
            StencilOrder::Two => 3,
            StencilOrder::Four => 5,
        };
        for &n in &sizes {
            if n < need {
                return Err(GeometryError::LatticeTooSmall(n));
            }
        }
        Ok(LatticeBackend { active, sizes, spacing, order })
    }

    pub fn total_points(&self) -> usize {
        self.sizes.iter().product()
    }

    /// Grid coordinates of a flat point index (row major over `sizes`).
    pub fn coords(&self, mut p: usize) -> Vec<usize> {
        let mut out = vec![0; self.sizes.len()];
        for ax in (0..self.sizes.len()).rev() {
            out[ax] = p % self.sizes[ax];
            p /= self.sizes[ax];
        }
        out
    }

    pub fn point_of(&self, coords: &[usize]) -> usize {
        let mut p = 0;
        for (ax, &c) in coords.iter().enumerate() {
            p = p * self.sizes[ax] + c;
        }
        p
    }

    /// Neighbor with grid axis `ax` shifted by `delta` (periodic).
    pub fn shift(&self, p: usize, ax: usize, delta: isize) -> usize {
        let mut c = self.coords(p);
        let n = self.sizes[ax] as isize;
        c[ax] = (((c[ax] as isize + delta) % n + n) % n) as usize;
        self.point_of(&c)
    }

    /// Sample a per-point scalar from grid coordinates (in units of spacing).
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        (0..self.total_points())
            .map(|p| {
                let xs: Vec<f64> = self
                    .coords(p)
                    .iter()
                    .zip(&self.spacing)
                    .map(|(&c, h)| c as f64 * h.to_f64())
                    .collect();
                f(&xs)
            })
            .collect()
    }
}

impl<S: Scalar> Backend<S> for LatticeBackend<S> {
    fn num_points(&self) -> usize {
        self.total_points()
    }

    fn partial(&self, f: &Field<S>) -> Field<S> {
        let rank = f.rank();
        let n = self.num_points();
        let len = DIM.pow(rank as u32);
        let mut out: Vec<Tensor<S>> = (0..n).map(|_| Tensor::zeros(rank + 1)).collect();
        for (ax, &dim) in self.active.iter().enumerate() {
            let h = &self.spacing[ax];
            for p in 0..n {
                let data: Vec<S> = match self.order {
                    StencilOrder::Two => {
                        let fp = &f.points[self.shift(p, ax, 1)];
                        let fm = &f.points[self.shift(p, ax, -1)];
                        let d = S::from_i64(2) * h.clone();
                        (0..len)
                            .map(|i| (fp.data()[i].clone() - fm.data()[i].clone()) / d.clone())
                            .collect()
                    }
                    StencilOrder::Four => {
                        let fp2 = &f.points[self.shift(p, ax, 2)];
                        let fp1 = &f.points[self.shift(p, ax, 1)];
                        let fm1 = &f.points[self.shift(p, ax, -1)];
                        let fm2 = &f.points[self.shift(p, ax, -2)];
                        let d = S::from_i64(12) * h.clone();
                        let eight = S::from_i64(8);
                        (0..len)
                            .map(|i| {
                                (fm2.data()[i].clone() - fp2.data()[i].clone()
                                    + eight.clone()
                                        * (fp1.data()[i].clone() - fm1.data()[i].clone()))
                                    / d.clone()
                            })
                            .collect()
                    }
                };
                // write into slot `dim` of the derivative index
                let stride = len;
                let dst = &mut out[p];
                for (i, v) in data.into_iter().enumerate() {
                    if v == S::zero() {
                        continue;
                    }
                    // flat index = dim * 7^rank + i
                    let mut idxbuf = vec![0usize; rank + 1];
                    idxbuf[0] = dim;
                    let mut rem = i;
                    for pos in (1..rank + 1).rev() {
                        idxbuf[pos] = rem % DIM;
                        rem /= DIM;
                    }
                    let _ = stride;
                    dst.set(&idxbuf, v);
                }
            }
        }
        Field { points: out }
    }

    fn structure_constants(&self) -> Option<&Tensor<S>> {
        None
    }

    fn cell_measure(&self) -> S {
        let mut m = S::one();
        for h in &self.spacing {
            m = m * h.clone();
        }
        m
    }
}

// ---------------------------------------------------------------------------
// Generic operators
// ---------------------------------------------------------------------------

/// Exterior derivative of a k-form field:
/// `(d a)_{i0..ik} = sum_a (-1)^a  d_{ia} a_{..} + sum_{a<b} (-1)^{a+b} c^m_{ia ib} a_{m ..}`.
pub fn exterior_derivative<S: Scalar>(backend: &dyn Backend<S>, f: &Field<S>) -> Field<S> {
    let k = f.rank();
    assert!(k < DIM, "d of a top-degree form");
    let pf = backend.partial(f);
    let c = backend.structure_constants();
    let out: Vec<Tensor<S>> = (0..backend.num_points())
        .map(|p| {
            let mut t = Tensor::zero_form(k + 1);
            for idx in increasing_tuples(k + 1) {
                let mut v = S::zero();
                // partial terms
                for a in 0..k + 1 {
                    let mut buf = Vec::with_capacity(k + 1);
                    buf.push(idx[a]);
                    for (b, &q) in idx.iter().enumerate() {
                        if b != a {
                            buf.push(q);
                        }
                    }
                    let term = pf.points[p].get(&buf).clone();
                    v = if a % 2 == 0 { v + term } else { v - term };
                }
                // bracket terms
                if let Some(c) = c {
                    for a in 0..k + 1 {
                        for b in a + 1..k + 1 {
                            let mut rest = Vec::with_capacity(k);
                            for (q, &r) in idx.iter().enumerate() {
                                if q != a && q != b {
                                    rest.push(r);
                                }
                            }
                            for m in 0..DIM {
                                let cv = c.get(&[m, idx[a], idx[b]]);
                                if *cv == S::zero() {
                                    continue;
                                }
                                let mut buf = Vec::with_capacity(k);
                                buf.push(m);
                                buf.extend_from_slice(&rest);
                                let term = cv.clone() * f.points[p].get(&buf).clone();
                                v = if (a + b) % 2 == 0 { v + term } else { v - term };
                            }
                        }
                    }
                }
                t.set_form_term(&idx, v);
            }
            t
        })
        .collect();
    Field { points: out }
}

/// Levi-Civita connection coefficients `Gamma^k_{ij}` (layout `[k][i][j]`)
/// from the generalized Koszul formula.
pub fn christoffel<S: Scalar>(backend: &dyn Backend<S>, metrics: &[Metric<S>]) -> Field<S> {
    let gfield = Field { points: metrics.iter().map(|m| m.g().clone()).collect() };
    let dg = backend.partial(&gfield);
    let c = backend.structure_constants();
    let half = S::from_ratio(1, 2);
    let out: Vec<Tensor<S>> = (0..backend.num_points())
        .map(|p| {
            let g = metrics[p].g();
            let ginv = metrics[p].g_inv();
            let dgp = &dg.points[p];
            let mut low = Tensor::zeros(3); // Gamma_{ij l}
            for i in 0..DIM {
                for j in 0..DIM {
                    for l in 0..DIM {
                        let mut v = dgp.get(&[i, j, l]).clone() + dgp.get(&[j, i, l]).clone()
                            - dgp.get(&[l, i, j]).clone();
                        if let Some(c) = c {
                            for m in 0..DIM {
                                v = v
                                    + c.get(&[m, i, j]).clone() * g.get(&[m, l]).clone()
                                    - c.get(&[m, j, l]).clone() * g.get(&[m, i]).clone()
                                    + c.get(&[m, l, i]).clone() * g.get(&[m, j]).clone();
                            }
                        }
                        low.set(&[i, j, l], v * half.clone());
                    }
                }
            }
            let mut gam = Tensor::zeros(3);
            for k in 0..DIM {
                for i in 0..DIM {
                    for j in 0..DIM {
                        let mut v = S::zero();
                        for l in 0..DIM {
                            let lv = low.get(&[i, j, l]);
                            if *lv == S::zero() {
                                continue;
                            }
                            v = v + ginv.get(&[l, k]).clone() * lv.clone();
                        }
                        gam.set(&[k, i, j], v);
                    }
                }
            }
            gam
        })
        .collect();
    Field { points: out }
}

/// Covariant derivative of a covariant tensor field; output rank + 1 with the
/// derivative index first.
pub fn covariant_derivative<S: Scalar>(
    backend: &dyn Backend<S>,
    f: &Field<S>,
    gamma: &Field<S>,
) -> Field<S> {
    let rank = f.rank();
    let pf = backend.partial(f);
    let out: Vec<Tensor<S>> = (0..backend.num_points())
        .map(|p| {
            let mut t = pf.points[p].clone();
            let gam = &gamma.points[p];
            let fp = &f.points[p];
            let mut idx = vec![0usize; rank + 1];
            let total = DIM.pow((rank + 1) as u32);
            for flat in 0..total {
                let mut rem = flat;
                for pos in (0..rank + 1).rev() {
                    idx[pos] = rem % DIM;
                    rem /= DIM;
                }
                let i = idx[0];
                let mut corr = S::zero();
                for a in 0..rank {
                    let ka = idx[1 + a];
                    let mut src = idx[1..].to_vec();
                    for m in 0..DIM {
                        let gv = gam.get(&[m, i, ka]);
                        if *gv == S::zero() {
                            continue;
                        }
                        src[a] = m;
                        corr = corr + gv.clone() * fp.get(&src).clone();
                    }
                    src[a] = ka;
                }
                if corr != S::zero() {
                    let cur = t.get(&idx).clone();
                    t.set(&idx, cur - corr);
                }
            }
            t
        })
        .collect();
    Field { points: out }
}

/// Rough Laplacian `g^{ij} nabla_i nabla_j` of a tensor field.
pub fn rough_laplacian<S: Scalar>(
    backend: &dyn Backend<S>,
    f: &Field<S>,
    gamma: &Field<S>,
    metrics: &[Metric<S>],
) -> Field<S> {
    let d1 = covariant_derivative(backend, f, gamma);
    let d2 = covariant_derivative(backend, &d1, gamma);
    let rank = f.rank();
    let out: Vec<Tensor<S>> = (0..backend.num_points())
        .map(|p| {
            let ginv = metrics[p].g_inv();
            let dd = &d2.points[p];
            let mut t = Tensor::zeros(rank);
            crate::tensor7::for_each_index(rank, |rest| {
                let mut acc = S::zero();
                let mut buf = vec![0usize; rank + 2];
                buf[2..].copy_from_slice(rest);
                for i in 0..DIM {
                    for j in 0..DIM {
                        let gv = ginv.get(&[i, j]);
                        if *gv == S::zero() {
                            continue;
                        }
                        buf[0] = i;
                        buf[1] = j;
                        let v = dd.get(&buf);
                        if *v == S::zero() {
                            continue;
                        }
                        acc = acc + gv.clone() * v.clone();
                    }
                }
                t.set(rest, acc);
            });
            t
        })
        .collect();
    Field { points: out }
}

/// Riemann, Ricci and scalar curvature of a metric field.
#[derive(Clone, Debug)]
pub struct CurvatureField<S> {
    /// `R_{ijkl}`, all indices down.
    pub rm: Field<S>,
    /// `R_{jk} = R_{ijkl} g^{il}`.
    pub ric: Field<S>,
    pub scalar: Vec<S>,
}

pub fn riemann<S: Scalar>(
    backend: &dyn Backend<S>,
    gamma: &Field<S>,
    metrics: &[Metric<S>],
) -> CurvatureField<S> {
    let dgam = backend.partial(gamma);
    let c = backend.structure_constants();
    let mut rm_pts = Vec::with_capacity(backend.num_points());
    let mut ric_pts = Vec::with_capacity(backend.num_points());
    let mut scal = Vec::with_capacity(backend.num_points());
    for p in 0..backend.num_points() {
        let gam = &gamma.points[p];
        let dg = &dgam.points[p];
        let g = metrics[p].g();
        let ginv = metrics[p].g_inv();
        let mut up = Tensor::zeros(4); // R^l_{ijk} stored as [l][i][j][k]
        for l in 0..DIM {
            for i in 0..DIM {
                for j in 0..DIM {
                    for k in 0..DIM {
                        let mut v = dg.get(&[i, l, j, k]).clone() - dg.get(&[j, l, i, k]).clone();
                        for m in 0..DIM {
                            let a = gam.get(&[m, j, k]);
                            if *a != S::zero() {
                                v = v + a.clone() * gam.get(&[l, i, m]).clone();
                            }
                            let b = gam.get(&[m, i, k]);
                            if *b != S::zero() {
                                v = v - b.clone() * gam.get(&[l, j, m]).clone();
                            }
                        }
                        if let Some(c) = c {
                            for m in 0..DIM {
                                let cv = c.get(&[m, i, j]);
                                if *cv == S::zero() {
                                    continue;
                                }
                                v = v - cv.clone() * gam.get(&[l, m, k]).clone();
                            }
                        }
                        up.set(&[l, i, j, k], v);
                    }
                }
            }
        }
        let mut rm = Tensor::zeros(4);
        for i in 0..DIM {
            for j in 0..DIM {
                for k in 0..DIM {
                    for mlow in 0..DIM {
                        let mut v = S::zero();
                        for l in 0..DIM {
                            let uv = up.get(&[l, i, j, k]);
                            if *uv == S::zero() {
                                continue;
                            }
                            v = v + uv.clone() * g.get(&[l, mlow]).clone();
                        }
                        rm.set(&[i, j, k, mlow], v);
                    }
                }
            }
        }
        let mut ric = Tensor::zeros(2);
        for j in 0..DIM {
            for k in 0..DIM {
                let mut v = S::zero();
                for i in 0..DIM {
                    for l in 0..DIM {
                        let gv = ginv.get(&[i, l]);
                        if *gv == S::zero() {
                            continue;
                        }
                        let rv = rm.get(&[i, j, k, l]);
                        if *rv == S::zero() {
                            continue;
                        }
                        v = v + gv.clone() * rv.clone();
                    }
                }
                ric.set(&[j, k], v);
            }
        }
        let mut r = S::zero();
        for j in 0..DIM {
            for k in 0..DIM {
                let gv = ginv.get(&[j, k]);
                if *gv == S::zero() {
                    continue;
                }
                r = r + gv.clone() * ric.get(&[j, k]).clone();
            }
        }
        rm_pts.push(rm);
        ric_pts.push(ric);
        scal.push(r);
    }
    CurvatureField { rm: Field { points: rm_pts }, ric: Field { points: ric_pts }, scalar: scal }
}

/// `int f dV` over the backend, with `dV = sqrt(det g) * cell`.
pub fn integrate<S: Scalar>(
    backend: &dyn Backend<S>,
    values: &[S],
    metrics: &[Metric<S>],
) -> Result<S, TensorError> {
    let cell = backend.cell_measure();
    let mut acc = S::zero();
    for (v, m) in values.iter().zip(metrics) {
        acc = acc + v.clone() * m.sqrt_det()? * cell.clone();
    }
    Ok(acc)
}

/// Total Riemannian volume.
pub fn total_volume<S: Scalar>(
    backend: &dyn Backend<S>,
    metrics: &[Metric<S>],
) -> Result<S, TensorError> {
    let ones = vec![S::one(); metrics.len()];
    integrate(backend, &ones, metrics)
}

/// Sign-checked exhaustive curvature-symmetry sweep (used by tests and the
/// diagnostics report).
pub fn curvature_symmetry_dev<S: Scalar>(rm: &Tensor<S>) -> f64 {
    let mut dev: f64 = 0.0;
    crate::tensor7::for_each_index(4, |idx| {
        let (i, j, k, l) = (idx[0], idx[1], idx[2], idx[3]);
        let v = rm.get(&[i, j, k, l]).to_f64();
        dev = dev.max((v + rm.get(&[j, i, k, l]).to_f64()).abs());
        dev = dev.max((v + rm.get(&[i, j, l, k]).to_f64()).abs());
        dev = dev.max((v - rm.get(&[k, l, i, j]).to_f64()).abs());
        let bianchi = v + rm.get(&[j, k, i, l]).to_f64() + rm.get(&[k, i, j, l]).to_f64();
        dev = dev.max(bianchi.abs());
    });
    dev
}

/// Maurer-Cartan sign fixture: `d e^k = -(1/2) c^k_{ij} e^i ^ e^j`.
pub fn lie_d_of_basis_covector<S: Scalar>(backend: &LieBackend<S>, k: usize) -> Tensor<S> {
    let f = Field::constant(1, Tensor::basis_covector(k));
    exterior_derivative(backend, &f).points.pop().unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::g2algebra::{standard_phi, G2Structure};
    use crate::scalar::Exact;

    #[test]
    fn abelian_d_is_zero() {
        let b: LieBackend<Exact> = LieBackend::abelian();
        let phi = Field::constant(1, standard_phi::<Exact>());
        let d = exterior_derivative(&b, &phi);
        assert!(d.points[0].is_zero());
    }

    #[test]
    fn maurer_cartan_sign() {
        // c^7_{12} = 1  =>  d e^7 = -e^{12}
        let mut c: Tensor<Exact> = Tensor::zeros(3);
        c.set(&[6, 0, 1], Exact::from_i64(1));
        c.set(&[6, 1, 0], Exact::from_i64(-1));
        let b = LieBackend::new(c, Exact::from_i64(1)).unwrap();
        let de7 = lie_d_of_basis_covector(&b, 6);
        assert_eq!(*de7.get(&[0, 1]), Exact::from_i64(-1));
        assert_eq!(*de7.get(&[1, 0]), Exact::from_i64(1));
    }

    #[test]
    fn jacobi_rejects_bad_constants() {
        // c^2_{12} = 1 (i.e. [e1,e2] = e2) together with c^3_{13}=1, c^1_{23}=1
        // violates Jacobi
        let mut c: Tensor<f64> = Tensor::zeros(3);
        for (k, i, j) in [(1usize, 0usize, 1usize), (2, 0, 2), (0, 1, 2)] {
            c.set(&[k, i, j], 1.0);
            c.set(&[k, j, i], -1.0);
        }
        assert!(matches!(
            LieBackend::new(c, 1.0),
            Err(GeometryError::Jacobi { .. })
        ));
    }

    #[test]
    fn antisymmetry_rejected() {
        let mut c: Tensor<f64> = Tensor::zeros(3);
        c.set(&[6, 0, 1], 1.0); // missing the (j,i) partner
        assert!(matches!(
            LieBackend::new(c, 1.0),
            Err(GeometryError::NotAntisymmetric { .. })
        ));
    }

    #[test]
    fn nilpotent_d_phi_closed_and_d_squared_zero() {
        let b: LieBackend<Exact> = LieBackend::nilpotent(Exact::from_i64(1));
        let phi = Field::constant(1, standard_phi::<Exact>());
        let dphi = exterior_derivative(&b, &phi);
        assert!(dphi.points[0].is_zero(), "standard phi is closed on this algebra");
        let s: G2Structure<Exact> = G2Structure::standard();
        let psi = Field::constant(1, s.psi.clone());
        let dpsi = exterior_derivative(&b, &psi);
        assert!(!dpsi.points[0].is_zero(), "nonzero torsion expected");
        let ddpsi = exterior_derivative(&b, &dpsi);
        assert!(ddpsi.points[0].is_zero(), "d^2 = 0 exactly on the Lie backend");
    }

    #[test]
    fn koszul_nilpotent_exact_values() {
        let b: LieBackend<Exact> = LieBackend::nilpotent(Exact::from_i64(1));
        let metrics = vec![Metric::<Exact>::euclidean()];
        let gam = christoffel(&b, &metrics);
        let g = &gam.points[0];
        let half = Exact::from_ratio(1, 2);
        // frozen hand-computed values for c^6_{12} = -1, c^7_{13} = -1
        assert_eq!(*g.get(&[5, 0, 1]), -half.clone()); // Gamma^6_{12}
        assert_eq!(*g.get(&[1, 0, 5]), half.clone()); // Gamma^2_{16}
        assert_eq!(*g.get(&[1, 5, 0]), half.clone()); // Gamma^2_{61}
        // torsion-free as a connection: Gamma^k_ij - Gamma^k_ji = c^k_ij
        for k in 0..DIM {
            for i in 0..DIM {
                for j in 0..DIM {
                    let anti = g.get(&[k, i, j]).clone() - g.get(&[k, j, i]).clone();
                    assert_eq!(anti, *b.constants().get(&[k, i, j]));
                }
            }
        }
        // metric compatibility
        let gfield = Field::constant(1, metrics[0].g().clone());
        let dg = covariant_derivative(&b, &gfield, &gam);
        assert!(dg.points[0].is_zero());
    }

    #[test]
    fn abelian_flat() {
        let b: LieBackend<Exact> = LieBackend::abelian();
        let metrics = vec![Metric::<Exact>::euclidean()];
        let gam = christoffel(&b, &metrics);
        assert!(gam.points[0].is_zero());
        let cur = riemann(&b, &gam, &metrics);
        assert!(cur.rm.points[0].is_zero());
        assert_eq!(cur.scalar[0], Exact::from_i64(0));
    }

    #[test]
    fn nilpotent_curvature_exact() {
        let b: LieBackend<Exact> = LieBackend::nilpotent(Exact::from_i64(1));
        let metrics = vec![Metric::<Exact>::euclidean()];
        let gam = christoffel(&b, &metrics);
        let cur = riemann(&b, &gam, &metrics);
        // scalar curvature of this nilmanifold metric is exactly -1
        assert_eq!(cur.scalar[0], Exact::from_i64(-1));
        assert_eq!(curvature_symmetry_dev(&cur.rm.points[0]), 0.0);
        // Ricci symmetric
        for j in 0..DIM {
            for k in 0..DIM {
                assert_eq!(cur.ric.points[0].get(&[j, k]), cur.ric.points[0].get(&[k, j]));
            }
        }
    }

    #[test]
    fn heisenberg_scalar_curvature() {
        // single bracket c^7_{12} = 1: R = -(1/2) for the Euclidean frame metric
        let mut c: Tensor<Exact> = Tensor::zeros(3);
        c.set(&[6, 0, 1], Exact::from_i64(1));
        c.set(&[6, 1, 0], Exact::from_i64(-1));
        let b = LieBackend::new(c, Exact::from_i64(1)).unwrap();
        let metrics = vec![Metric::<Exact>::euclidean()];
        let gam = christoffel(&b, &metrics);
        let cur = riemann(&b, &gam, &metrics);
        assert!(cur.scalar[0] < Exact::from_i64(0));
        assert_eq!(cur.scalar[0], Exact::from_ratio(-1, 2));
    }

    fn conformal_lattice(n: usize, order: StencilOrder) -> (LatticeBackend<f64>, Vec<Metric<f64>>, Vec<(f64, f64)>) {
        let b = LatticeBackend::new(vec![0, 1], vec![n, n], vec![1.0 / n as f64; 2], order).unwrap();
        let mut metrics = Vec::with_capacity(b.total_points());
        let mut uv = Vec::with_capacity(b.total_points());
        for p in 0..b.total_points() {
            let c = b.coords(p);
            let (x, y) = (c[0] as f64 / n as f64, c[1] as f64 / n as f64);
            let tau = std::f64::consts::TAU;
            let u = 0.05 * (tau * x).sin() * (tau * y).cos();
            let mut g: Tensor<f64> = Tensor::kronecker();
            g.set(&[0, 0], (2.0 * u).exp());
            g.set(&[1, 1], (2.0 * u).exp());
            metrics.push(Metric::new(g).unwrap());
            uv.push((x, y));
        }
        (b, metrics, uv)
    }

    #[test]
    fn lattice_christoffel_matches_conformal_formula() {
        let n = 32;
        let (b, metrics, uv) = conformal_lattice(n, StencilOrder::Four);
        let gam = christoffel(&b, &metrics);
        let tau = std::f64::consts::TAU;
        let mut dev: f64 = 0.0;
        for p in 0..b.total_points() {
            let (x, y) = uv[p];
            let u1 = 0.05 * tau * (tau * x).cos() * (tau * y).cos();
            let u2 = -0.05 * tau * (tau * x).sin() * (tau * y).sin();
            let g = &gam.points[p];
            dev = dev.max((g.get(&[0, 0, 0]) - u1).abs());
            dev = dev.max((g.get(&[0, 0, 1]) - u2).abs());
            dev = dev.max((g.get(&[0, 1, 1]) + u1).abs());
            dev = dev.max((g.get(&[1, 0, 0]) + u2).abs());
            dev = dev.max((g.get(&[1, 0, 1]) - u1).abs());
            dev = dev.max((g.get(&[1, 1, 1]) - u2).abs());
        }
        assert!(dev < 5e-5, "order-4 stencil accuracy, got {dev}");
    }

    #[test]
    fn lattice_sectional_curvature_and_convergence() {
        let tau = std::f64::consts::TAU;
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let (b, metrics, uv) = conformal_lattice(n, StencilOrder::Two);
            let gam = christoffel(&b, &metrics);
            let cur = riemann(&b, &gam, &metrics);
            let mut dev: f64 = 0.0;
            for p in 0..b.total_points() {
                let (x, y) = uv[p];
                let u = 0.05 * (tau * x).sin() * (tau * y).cos();
                // u_11 + u_22 = -2 tau^2 u for this mode; K = -e^{-2u} lap u
                let k_analytic = (2.0 * tau * tau * u) * (-2.0 * u).exp();
                let det2 = metrics[p].g().get(&[0, 0]) * metrics[p].g().get(&[1, 1]);
                let sect = cur.rm.points[p].get(&[0, 1, 1, 0]) / det2;
                dev = dev.max((sect - k_analytic).abs());
            }
            errs.push(dev);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order >= 1.9, "expected ~order-2 convergence, got {order} ({errs:?})");
    }

    #[test]
    fn lattice_d_and_d_squared() {
        let n = 24;
        let b: LatticeBackend<f64> =
            LatticeBackend::new(vec![0, 1], vec![n, n], vec![1.0 / n as f64; 2], StencilOrder::Four)
                .unwrap();
        let tau = std::f64::consts::TAU;
        // f(x,y) dx^1 with f = sin(tau x) sin(tau y)
        let pts: Vec<Tensor<f64>> = (0..b.total_points())
            .map(|p| {
                let c = b.coords(p);
                let (x, y) = (c[0] as f64 / n as f64, c[1] as f64 / n as f64);
                let mut t = Tensor::zeros(1);
                t.set(&[0], (tau * x).sin() * (tau * y).sin());
                t
            })
            .collect();
        let f = Field { points: pts };
        let df = exterior_derivative(&b, &f);
        // (df)_{10} = d_1 f ... component (dx^2 ^ dx^1): check against analytic
        let mut dev: f64 = 0.0;
        for p in 0..b.total_points() {
            let c = b.coords(p);
            let (x, y) = (c[0] as f64 / n as f64, c[1] as f64 / n as f64);
            let analytic = -tau * (tau * x).sin() * (tau * y).cos(); // coefficient on dx^{12} is -d_2 f
            dev = dev.max((df.points[p].get(&[0, 1]) - analytic).abs());
        }
        // order-4 truncation at this resolution: h^4 f^(5)/30 ~ 1e-3
        assert!(dev < 2e-3, "d against analytic derivative: {dev}");
        let ddf = exterior_derivative(&b, &df);
        assert!(ddf.max_abs_f64() < 1e-12, "discrete centered d^2 = 0 to rounding");
    }

    #[test]
    fn covariant_derivative_flat_cases() {
        let b: LieBackend<f64> = LieBackend::abelian();
        let metrics = vec![Metric::<f64>::euclidean()];
        let gam = christoffel(&b, &metrics);
        let phi = Field::constant(1, standard_phi::<f64>());
        let dphi = covariant_derivative(&b, &phi, &gam);
        assert!(dphi.points[0].is_zero(), "flat structure is parallel");
    }
}
