//! Torsion extraction and the torsion-curvature identities: the full torsion
//! tensor, the intrinsic torsion forms, Ricci and scalar curvature expressed
//! through torsion, the Bianchi-type identity, and the two routes to the
//! Laplacian of the defining 3-form.

use crate::g2algebra::{i_phi_unchecked, standard_phi, Form3SplitOperator, G2Error, G2Structure};
use crate::geometry::{
    christoffel, covariant_derivative, exterior_derivative, riemann, Backend, CurvatureField,
    Field, GeometryError,
};
use crate::scalar::Scalar;
use crate::tensor7::{
    hodge_star, inner_form, interior_product, norm2_full, raise_index, Metric, Symmetry, Tensor,
    TensorError, DIM,
};
use thiserror::Error;

/// A structure counts as closed when |d phi| <= this times |phi| pointwise.
pub const CLOSEDNESS_RTOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TorsionError {
    #[error("structure is not closed: |d phi| / |phi| = {0:.3e}")]
    NotClosed(f64),
    #[error("torsion-form extraction residual {0:.3e} above tolerance (inconsistent inputs)")]
    ExtractionResidual(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    G2(#[from] G2Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Intrinsic torsion forms with the full torsion tensor implied by them.
#[derive(Clone, Debug)]
pub struct TorsionData<S> {
    /// Full torsion tensor `T_{lm}` (2-form in the closed case).
    pub t: Tensor<S>,
    pub tau0: S,
    /// 1-form component.
    pub tau1: Tensor<S>,
    /// 2-form component in the 14-dimensional type.
    pub tau2: Tensor<S>,
    /// 3-form component in the 27-dimensional type.
    pub tau3: Tensor<S>,
    /// Trace-free symmetric 2-tensor with `tau3 = i(tau3_sym)`.
    pub tau3_sym: Tensor<S>,
}

/// `T_{lm} = (1/24) (nabla_l phi_{abc}) psi_m{}^{abc}`.
pub fn full_torsion_point<S: Scalar>(nabla_phi: &Tensor<S>, s: &G2Structure<S>) -> Tensor<S> {
    let mut psi_r = s.psi.clone();
    for slot in 1..4 {
        psi_r = raise_index(&psi_r, slot, &s.metric).expect("rank 4");
    }
    let mut t = Tensor::zeros(2);
    for l in 0..DIM {
        for m in 0..DIM {
            let mut acc = S::zero();
            crate::tensor7::for_each_index(3, |abc| {
                let dv = nabla_phi.get(&[l, abc[0], abc[1], abc[2]]);
                if *dv == S::zero() {
                    return;
                }
                acc = acc.clone() + dv.clone() * psi_r.get(&[m, abc[0], abc[1], abc[2]]).clone();
            });
            t.set(&[l, m], acc / S::from_i64(24));
        }
    }
    t
}

/// Reconstruction of `nabla phi` from `T`: `nabla_l phi_{abc} = T_l{}^n psi_{nabc}`.
pub fn reconstruct_nabla_phi<S: Scalar>(t: &Tensor<S>, s: &G2Structure<S>) -> Tensor<S> {
    let tu = raise_index(t, 1, &s.metric).expect("rank 2");
    let mut out = Tensor::zeros(4);
    crate::tensor7::for_each_index(3, |abc| {
        for l in 0..DIM {
            let mut acc = S::zero();
            for n in 0..DIM {
                let tv = tu.get(&[l, n]);
                if *tv == S::zero() {
                    continue;
                }
                acc = acc + tv.clone() * s.psi.get(&[n, abc[0], abc[1], abc[2]]).clone();
            }
            out.set(&[l, abc[0], abc[1], abc[2]], acc);
        }
    });
    out
}

/// `That_{ij} = T_i{}^k T_{kj}` (symmetric for antisymmetric T).
pub fn t_hat<S: Scalar>(t: &Tensor<S>, metric: &Metric<S>) -> Tensor<S> {
    let tu = raise_index(t, 1, metric).expect("rank 2");
    let mut out = Tensor::zeros(2);
    for i in 0..DIM {
        for j in 0..DIM {
            let mut acc = S::zero();
            for k in 0..DIM {
                let a = tu.get(&[i, k]);
                if *a == S::zero() {
                    continue;
                }
                acc = acc + a.clone() * t.get(&[k, j]).clone();
            }
            out.set(&[i, j], acc);
        }
    }
    out.with_symmetry(Symmetry::SymmetricPairs(vec![(0, 1)]))
}

/// `|T|^2 = (1/2) T_{ij} T^{ij}` (the 2-form norm used throughout the closed case).
pub fn torsion_norm2<S: Scalar>(t: &Tensor<S>, metric: &Metric<S>) -> S {
    norm2_full(t, metric) / S::from_i64(2)
}

/// Extract the intrinsic torsion forms from `d phi` and `d psi` and assemble
/// the full torsion tensor from them. The extraction is verified by
/// substituting back; a residual above `tol_f64` (relative) is an error.
pub fn torsion_forms<S: Scalar>(
    s: &G2Structure<S>,
    dphi: &Tensor<S>,
    dpsi: &Tensor<S>,
    split3: &Form3SplitOperator<S>,
    tol_f64: f64,
) -> Result<TorsionData<S>, TorsionError> {
    let m = &s.metric;
    // tau0 = <d phi, psi> / |psi|^2, |psi|^2 = 7
    let tau0 = inner_form(dphi, &s.psi, m)? / S::from_i64(7);
    // *d phi = tau0 phi + 3 *(tau1 ^ phi) + tau3; split it
    let sdphi = hodge_star(dphi, m, 1)?;
    let sp = split3.split(&sdphi, s);
    let tr_h = crate::tensor7::inner_2tensor(&sp.h, s.g(), m)?;
    let tau3_sym = sp.h.sub(&s.g().scale(&(tr_h * S::from_ratio(1, 7))));
    let tau3 = i_phi_unchecked(&tau3_sym, &s.phi, m);
    // tau1 solves 3 *(tau1 ^ phi) = X .| psi  (X = 7-part of *d phi)
    let mut lmap = crate::linalg::SqMat::<S>::zeros(DIM);
    for a in 0..DIM {
        let w = hodge_star(
            &crate::tensor7::wedge(&Tensor::basis_covector(a), &s.phi)?,
            m,
            1,
        )?;
        let y = crate::g2algebra::vector_from_part7(&w, s);
        for r in 0..DIM {
            *lmap.at_mut(r, a) = y.get(&[r]).clone() * S::from_i64(3);
        }
    }
    let xvec: Vec<S> = (0..DIM).map(|i| sp.x.get(&[i]).clone()).collect();
    let tau1_coeffs = lmap.solve(&xvec).map_err(G2Error::from)?;
    let mut tau1 = Tensor::zeros(1);
    for (i, v) in tau1_coeffs.into_iter().enumerate() {
        tau1.set(&[i], v);
    }
    // tau2 = -pi14(*d psi)
    let sdpsi = hodge_star(dpsi, m, 1)?;
    let tau2 = crate::g2algebra::split_2form(&sdpsi, s).part14.neg();
    // Full torsion via the torsion-form formula:
    // T = tau0/4 g - tau3_sym - (sharp tau1 .| phi) - tau2/2
    let sharp1 = raise_index(&tau1, 0, m)?;
    let t1phi = interior_product(&sharp1, &s.phi)?;
    let t = s
        .g()
        .scale(&(tau0.clone() / S::from_i64(4)))
        .sub(&tau3_sym)
        .sub(&t1phi)
        .sub(&tau2.scale(&S::from_ratio(1, 2)));
    let td = TorsionData { t, tau0, tau1, tau2, tau3, tau3_sym };
    // verify by reconstruction
    let (rphi, rpsi) = reconstruct_exterior_derivatives(&td, s)?;
    let scale = dphi.max_abs_f64().max(dpsi.max_abs_f64()).max(1.0);
    let res = rphi.sub(dphi).max_abs_f64().max(rpsi.sub(dpsi).max_abs_f64());
    if res > tol_f64 * scale {
        return Err(TorsionError::ExtractionResidual(res));
    }
    Ok(td)
}

/// `d phi = tau0 psi + 3 tau1 ^ phi + *tau3`, `d psi = 4 tau1 ^ psi - *tau2`.
pub fn reconstruct_exterior_derivatives<S: Scalar>(
    td: &TorsionData<S>,
    s: &G2Structure<S>,
) -> Result<(Tensor<S>, Tensor<S>), TorsionError> {
    let m = &s.metric;
    let dphi = s
        .psi
        .scale(&td.tau0)
        .add(&crate::tensor7::wedge(&td.tau1, &s.phi)?.scale(&S::from_i64(3)))
        .add(&hodge_star(&td.tau3, m, 1)?);
    let dpsi = crate::tensor7::wedge(&td.tau1, &s.psi)?
        .scale(&S::from_i64(4))
        .sub(&hodge_star(&td.tau2, m, 1)?);
    Ok((dphi, dpsi))
}

/// Ricci curvature from torsion.
///
/// Closed case: `R_jk = -(nabla_i T_jm) phi_k{}^{im} - T_j{}^i T_ik`.
/// The general case adds the antisymmetrized derivative, trace and psi terms.
pub fn ricci_from_torsion<S: Scalar>(
    t: &Tensor<S>,
    nabla_t: &Tensor<S>,
    s: &G2Structure<S>,
    closed: bool,
) -> Tensor<S> {
    let m = &s.metric;
    let tu = raise_index(t, 1, m).expect("rank 2"); // T_x{}^y
    let mut out = Tensor::zeros(2);
    if closed {
        // phi_k{}^{im} = g^{ia} g^{mb} phi_{kab}
        let mut phi_r = raise_index(&s.phi, 1, m).expect("rank 3");
        phi_r = raise_index(&phi_r, 2, m).expect("rank 3");
        for j in 0..DIM {
            for k in 0..DIM {
                let mut acc = S::zero();
                for i in 0..DIM {
                    for mm in 0..DIM {
                        let dv = nabla_t.get(&[i, j, mm]);
                        if *dv == S::zero() {
                            continue;
                        }
                        acc = acc - dv.clone() * phi_r.get(&[k, i, mm]).clone();
                    }
                    let a = tu.get(&[j, i]);
                    if *a != S::zero() {
                        acc = acc - a.clone() * t.get(&[i, k]).clone();
                    }
                }
                out.set(&[j, k], acc);
            }
        }
    } else {
        // R_jk = -(nabla_i T_jm - nabla_j T_im) phi^m{}_k{}^i
        //        - T_j{}^i T_ik + (tr T) T_jk + T_jb T_ia psi^{iab}{}_k
        let mut phi_mki = raise_index(&s.phi, 0, m).expect("rank 3");
        phi_mki = raise_index(&phi_mki, 2, m).expect("rank 3"); // [m,k,i]
        let mut psi_r = s.psi.clone();
        for slot in 0..3 {
            psi_r = raise_index(&psi_r, slot, m).expect("rank 4"); // psi^{iab}{}_k
        }
        let mut tr = S::zero();
        for i in 0..DIM {
            tr = tr + tu.get(&[i, i]).clone();
        }
        for j in 0..DIM {
            for k in 0..DIM {
                let mut acc = S::zero();
                for i in 0..DIM {
                    for mm in 0..DIM {
                        let anti =
                            nabla_t.get(&[i, j, mm]).clone() - nabla_t.get(&[j, i, mm]).clone();
                        if anti == S::zero() {
                            continue;
                        }
                        acc = acc - anti * phi_mki.get(&[mm, k, i]).clone();
                    }
                    let a = tu.get(&[j, i]);
                    if *a != S::zero() {
                        acc = acc - a.clone() * t.get(&[i, k]).clone();
                    }
                }
                acc = acc + tr.clone() * t.get(&[j, k]).clone();
                for i in 0..DIM {
                    for a in 0..DIM {
                        let tia = t.get(&[i, a]);
                        if *tia == S::zero() {
                            continue;
                        }
                        for b in 0..DIM {
                            let tjb = t.get(&[j, b]);
                            if *tjb == S::zero() {
                                continue;
                            }
                            let pv = psi_r.get(&[i, a, b, k]);
                            if *pv == S::zero() {
                                continue;
                            }
                            acc = acc + tjb.clone() * tia.clone() * pv.clone();
                        }
                    }
                }
                out.set(&[j, k], acc);
            }
        }
    }
    out
}

/// Scalar curvature from the intrinsic torsion forms (general case):
/// `R = -12 div(tau1) + (21/8) tau0^2 - ||tau3_sym||^2 + 30 |tau1|^2 - (1/2)|tau2|^2`.
/// The divergence of `tau1` is connection data supplied by the caller
/// (zero in the closed case).
pub fn scalar_from_torsion<S: Scalar>(td: &TorsionData<S>, s: &G2Structure<S>, div_tau1: S) -> S {
    let m = &s.metric;
    let t0sq = td.tau0.clone() * td.tau0.clone();
    let tau1n2 = inner_form(&td.tau1, &td.tau1, m).expect("1-forms");
    let tau2n2 = inner_form(&td.tau2, &td.tau2, m).expect("2-forms");
    let tau3sn2 = norm2_full(&td.tau3_sym, m);
    S::from_i64(-12) * div_tau1 + S::from_ratio(21, 8) * t0sq - tau3sn2
        + S::from_i64(30) * tau1n2
        - S::from_ratio(1, 2) * tau2n2
}

/// Closed-case scalar curvature `R = -2 |T|^2`.
pub fn scalar_from_torsion_closed<S: Scalar>(t: &Tensor<S>, metric: &Metric<S>) -> S {
    -(S::from_i64(2) * torsion_norm2(t, metric))
}

/// Closed-case derivative formula:
/// `nabla_i T_jk = -(1/4) R_ijmn phi_k{}^{mn} - (1/4) R_kjmn phi_i{}^{mn}
///  + (1/4) R_ikmn phi_j{}^{mn} - (1/2) T_im T_jn phi_k{}^{mn}
///  - (1/2) T_km T_jn phi_i{}^{mn} + (1/2) T_im T_kn phi_j{}^{mn}`,
/// indices m, n raised.
pub fn grad_torsion_formula<S: Scalar>(
    rm: &Tensor<S>,
    t: &Tensor<S>,
    s: &G2Structure<S>,
) -> Tensor<S> {
    let m = &s.metric;
    let mut phimn = raise_index(&s.phi, 1, m).expect("rank 3");
    phimn = raise_index(&phimn, 2, m).expect("rank 3"); // phi_x{}^{mn}
    let tu = raise_index(t, 1, m).expect("rank 2"); // T_x{}^m
    let quarter = S::from_ratio(1, 4);
    let half = S::from_ratio(1, 2);
    let mut out = Tensor::zeros(3);
    for i in 0..DIM {
        for j in 0..DIM {
            for k in 0..DIM {
                let mut acc = S::zero();
                for mm in 0..DIM {
                    for n in 0..DIM {
                        let pk = phimn.get(&[k, mm, n]);
                        if *pk != S::zero() {
                            let r = rm.get(&[i, j, mm, n]);
                            if *r != S::zero() {
                                acc = acc - quarter.clone() * r.clone() * pk.clone();
                            }
                            let tt = tu.get(&[i, mm]).clone() * tu.get(&[j, n]).clone();
                            if tt != S::zero() {
                                acc = acc - half.clone() * tt * pk.clone();
                            }
                        }
                        let pi = phimn.get(&[i, mm, n]);
                        if *pi != S::zero() {
                            let r = rm.get(&[k, j, mm, n]);
                            if *r != S::zero() {
                                acc = acc - quarter.clone() * r.clone() * pi.clone();
                            }
                            let tt = tu.get(&[k, mm]).clone() * tu.get(&[j, n]).clone();
                            if tt != S::zero() {
                                acc = acc - half.clone() * tt * pi.clone();
                            }
                        }
                        let pj = phimn.get(&[j, mm, n]);
                        if *pj != S::zero() {
                            let r = rm.get(&[i, k, mm, n]);
                            if *r != S::zero() {
                                acc = acc + quarter.clone() * r.clone() * pj.clone();
                            }
                            let tt = tu.get(&[i, mm]).clone() * tu.get(&[k, n]).clone();
                            if tt != S::zero() {
                                acc = acc + half.clone() * tt * pj.clone();
                            }
                        }
                    }
                }
                out.set(&[i, j, k], acc);
            }
        }
    }
    out
}

/// Bianchi-type residual
/// `nabla_i T_jl - nabla_j T_il + ((1/2) R_ijab + T_ia T_jb) phi^{ab}{}_l`,
/// identically zero for closed structures.
pub fn bianchi_residual<S: Scalar>(
    rm: &Tensor<S>,
    t: &Tensor<S>,
    nabla_t: &Tensor<S>,
    s: &G2Structure<S>,
) -> Tensor<S> {
    let m = &s.metric;
    let mut phi_abl = raise_index(&s.phi, 0, m).expect("rank 3");
    phi_abl = raise_index(&phi_abl, 1, m).expect("rank 3"); // phi^{ab}{}_l
    let tu = raise_index(t, 1, m).expect("rank 2");
    let half = S::from_ratio(1, 2);
    let mut out = Tensor::zeros(3);
    for i in 0..DIM {
        for j in 0..DIM {
            for l in 0..DIM {
                let mut acc = nabla_t.get(&[i, j, l]).clone() - nabla_t.get(&[j, i, l]).clone();
                for a in 0..DIM {
                    for b in 0..DIM {
                        let pv = phi_abl.get(&[a, b, l]);
                        if *pv == S::zero() {
                            continue;
                        }
                        let inner = half.clone() * rm.get(&[i, j, a, b]).clone()
                            + tu.get(&[i, a]).clone() * tu.get(&[j, b]).clone();
                        if inner == S::zero() {
                            continue;
                        }
                        acc = acc + inner * pv.clone();
                    }
                }
                out.set(&[i, j, l], acc);
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Field-level derived geometry
// ---------------------------------------------------------------------------

/// Everything the flow and the diagnostics need at one instant, derived from
/// the 3-form field alone.
pub struct DerivedGeometry<S> {
    pub structures: Vec<G2Structure<S>>,
    pub gamma: Field<S>,
    pub curvature: CurvatureField<S>,
    pub nabla_phi: Field<S>,
    /// Full torsion `T_{lm}` per point.
    pub torsion: Field<S>,
    /// `nabla_i T_{jk}` per point.
    pub nabla_torsion: Field<S>,
    pub torsion_norm2: Vec<S>,
    pub t_hat: Field<S>,
    /// `h = -Ric - (2/3)|T|^2 g - 2 That` (the closed-flow velocity is `i(h)`).
    pub h: Field<S>,
    /// max over points of |d phi| / |phi|.
    pub closedness: f64,
}

impl<S: Scalar> DerivedGeometry<S> {
    pub fn metrics(&self) -> Vec<Metric<S>> {
        self.structures.iter().map(|s| s.metric.clone()).collect()
    }

    pub fn is_closed(&self) -> bool {
        self.closedness <= CLOSEDNESS_RTOL
    }

    /// `Sic = -h` per point.
    pub fn sic(&self) -> Field<S> {
        self.h.map(|t| t.neg())
    }
}

/// Derive the full geometry bundle of a 3-form field.
pub fn derive<S: Scalar>(
    backend: &dyn Backend<S>,
    phi: &Field<S>,
) -> Result<DerivedGeometry<S>, TorsionError> {
    let mut structures = Vec::with_capacity(phi.points.len());
    for p in &phi.points {
        structures.push(G2Structure::from_phi(p.clone())?);
    }
    let metrics: Vec<Metric<S>> = structures.iter().map(|s| s.metric.clone()).collect();
    let gamma = christoffel(backend, &metrics);
    let curvature = riemann(backend, &gamma, &metrics);
    let nabla_phi = covariant_derivative(backend, phi, &gamma);
    let torsion = Field {
        points: nabla_phi
            .points
            .iter()
            .zip(&structures)
            .map(|(np, s)| full_torsion_point(np, s))
            .collect(),
    };
    let nabla_torsion = covariant_derivative(backend, &torsion, &gamma);
    let torsion_norm2: Vec<S> = torsion
        .points
        .iter()
        .zip(&metrics)
        .map(|(t, m)| torsion_norm2(t, m))
        .collect();
    let t_hat = Field {
        points: torsion.points.iter().zip(&metrics).map(|(t, m)| t_hat(t, m)).collect(),
    };
    let two_thirds = S::from_ratio(2, 3);
    let h = Field {
        points: (0..structures.len())
            .map(|p| {
                curvature.ric.points[p]
                    .neg()
                    .sub(
                        &structures[p]
                            .g()
                            .scale(&(two_thirds.clone() * torsion_norm2[p].clone())),
                    )
                    .sub(&t_hat.points[p].scale(&S::from_i64(2)))
            })
            .collect(),
    };
    let dphi = exterior_derivative(backend, phi);
    let mut closedness: f64 = 0.0;
    for (d, p) in dphi.points.iter().zip(&phi.points) {
        let scale = p.max_abs_f64().max(1e-300);
        closedness = closedness.max(d.max_abs_f64() / scale);
    }
    Ok(DerivedGeometry {
        structures,
        gamma,
        curvature,
        nabla_phi,
        torsion,
        nabla_torsion,
        torsion_norm2,
        t_hat,
        h,
        closedness,
    })
}

/// Closed-flow velocity `Delta phi = i(h)` per point (requires closedness at
/// the default tolerance).
pub fn closed_flow_velocity<S: Scalar>(d: &DerivedGeometry<S>) -> Result<Field<S>, TorsionError> {
    closed_flow_velocity_with_tol(d, CLOSEDNESS_RTOL)
}

/// Closed-flow velocity with an explicit closedness tolerance (the lattice
/// stays closed only to stencil order).
pub fn closed_flow_velocity_with_tol<S: Scalar>(
    d: &DerivedGeometry<S>,
    tol: f64,
) -> Result<Field<S>, TorsionError> {
    if d.closedness > tol {
        return Err(TorsionError::NotClosed(d.closedness));
    }
    Ok(Field {
        points: d
            .structures
            .iter()
            .zip(&d.h.points)
            .map(|(s, h)| i_phi_unchecked(h, &s.phi, &s.metric))
            .collect(),
    })
}

/// Codifferential `d* = (-1)^k * d *` on k-forms in dimension 7.
pub fn codifferential<S: Scalar>(
    backend: &dyn Backend<S>,
    f: &Field<S>,
    metrics: &[Metric<S>],
) -> Result<Field<S>, TorsionError> {
    let k = f.rank();
    let starred: Vec<Tensor<S>> = f
        .points
        .iter()
        .zip(metrics)
        .map(|(t, m)| hodge_star(t, m, 1))
        .collect::<Result<_, _>>()?;
    let dstar = exterior_derivative(backend, &Field { points: starred });
    let mut out: Vec<Tensor<S>> = dstar
        .points
        .iter()
        .zip(metrics)
        .map(|(t, m)| hodge_star(t, m, 1))
        .collect::<Result<_, _>>()?;
    if k % 2 == 1 {
        for t in &mut out {
            *t = t.neg();
        }
    }
    Ok(Field { points: out })
}

/// Hodge Laplacian `d d* + d* d` of a k-form field.
pub fn hodge_laplacian<S: Scalar>(
    backend: &dyn Backend<S>,
    f: &Field<S>,
    metrics: &[Metric<S>],
) -> Result<Field<S>, TorsionError> {
    let dstar_f = codifferential(backend, f, metrics)?;
    let d_dstar = exterior_derivative(backend, &dstar_f);
    let df = exterior_derivative(backend, f);
    let dstar_df = codifferential(backend, &df, metrics)?;
    Ok(d_dstar.add(&dstar_df))
}

/// Both routes to `Delta phi` for a closed structure, with their agreement.
pub struct LaplacianPhi<S> {
    /// `d d* phi + d* d phi`.
    pub hodge: Field<S>,
    /// `i(h)`.
    pub from_h: Field<S>,
    pub max_dev: f64,
}

pub fn laplacian_phi<S: Scalar>(
    backend: &dyn Backend<S>,
    d: &DerivedGeometry<S>,
    phi: &Field<S>,
) -> Result<LaplacianPhi<S>, TorsionError> {
    laplacian_phi_with_tol(backend, d, phi, CLOSEDNESS_RTOL)
}

pub fn laplacian_phi_with_tol<S: Scalar>(
    backend: &dyn Backend<S>,
    d: &DerivedGeometry<S>,
    phi: &Field<S>,
    tol: f64,
) -> Result<LaplacianPhi<S>, TorsionError> {
    if d.closedness > tol {
        return Err(TorsionError::NotClosed(d.closedness));
    }
    let metrics = d.metrics();
    let hodge = hodge_laplacian(backend, phi, &metrics)?;
    let from_h = closed_flow_velocity_with_tol(d, tol)?;
    let max_dev = hodge.sub(&from_h).max_abs_f64();
    Ok(LaplacianPhi { hodge, from_h, max_dev })
}

/// Constant standard-form field (tests and scenario construction).
pub fn standard_phi_field<S: Scalar>(num_points: usize) -> Field<S> {
    Field::constant(num_points, standard_phi())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::LieBackend;
    use crate::scalar::Exact;
    use crate::tensor7::inner_2tensor;

    fn nilpotent_derived() -> (LieBackend<Exact>, DerivedGeometry<Exact>) {
        let b: LieBackend<Exact> = LieBackend::nilpotent(Exact::from_i64(1));
        let phi = standard_phi_field::<Exact>(1);
        let d = derive(&b, &phi).unwrap();
        (b, d)
    }

    #[test]
    fn flat_structure_torsion_free() {
        let b: LieBackend<Exact> = LieBackend::abelian();
        let phi = standard_phi_field::<Exact>(1);
        let d = derive(&b, &phi).unwrap();
        assert!(d.torsion.points[0].is_zero());
        assert!(d.curvature.rm.points[0].is_zero());
        assert!(d.h.points[0].is_zero());
        let lap = laplacian_phi(&b, &d, &phi).unwrap();
        assert!(lap.hodge.points[0].is_zero());
        assert_eq!(lap.max_dev, 0.0);
    }

    #[test]
    fn nilpotent_torsion_exact_values() {
        let (_b, d) = nilpotent_derived();
        let t = &d.torsion.points[0];
        // frozen exact values: T_27 = -1/2, T_36 = 1/2 (1-based), antisymmetric
        let half = Exact::from_ratio(1, 2);
        assert_eq!(*t.get(&[1, 6]), -half.clone());
        assert_eq!(*t.get(&[6, 1]), half.clone());
        assert_eq!(*t.get(&[2, 5]), half.clone());
        assert_eq!(*t.get(&[5, 2]), -half.clone());
        for i in 0..DIM {
            for j in 0..DIM {
                assert_eq!(
                    t.get(&[i, j]).clone() + t.get(&[j, i]).clone(),
                    Exact::from_i64(0),
                    "T antisymmetric in the closed case"
                );
            }
        }
        // |T|^2 = 1/2, R = -2|T|^2 = -1, exactly
        assert_eq!(d.torsion_norm2[0], half);
        assert_eq!(d.curvature.scalar[0], Exact::from_i64(-1));
    }

    #[test]
    fn nilpotent_reconstruction_and_divergence_exact() {
        let (_b, d) = nilpotent_derived();
        let s = &d.structures[0];
        // nabla phi = T . psi, exactly
        let recon = reconstruct_nabla_phi(&d.torsion.points[0], s);
        assert_eq!(recon, d.nabla_phi.points[0]);
        // divergence-free: g^{ij} nabla_i T_{jk} = 0
        let dt = &d.nabla_torsion.points[0];
        for k in 0..DIM {
            let mut div = Exact::from_i64(0);
            for i in 0..DIM {
                for j in 0..DIM {
                    div = div + s.g_inv().get(&[i, j]).clone() * dt.get(&[i, j, k]).clone();
                }
            }
            assert_eq!(div, Exact::from_i64(0));
        }
    }

    #[test]
    fn ricci_routes_agree_exactly() {
        let (_b, d) = nilpotent_derived();
        let s = &d.structures[0];
        let closed = ricci_from_torsion(&d.torsion.points[0], &d.nabla_torsion.points[0], s, true);
        assert_eq!(closed, d.curvature.ric.points[0]);
        let general =
            ricci_from_torsion(&d.torsion.points[0], &d.nabla_torsion.points[0], s, false);
        assert_eq!(general, d.curvature.ric.points[0]);
        // trace check: g^{jk} R_jk = -2|T|^2
        let tr = inner_2tensor(&closed, s.g(), &s.metric).unwrap();
        assert_eq!(tr, Exact::from_i64(-1));
    }

    #[test]
    fn grad_torsion_formula_exact() {
        let (_b, d) = nilpotent_derived();
        let s = &d.structures[0];
        let rhs = grad_torsion_formula(&d.curvature.rm.points[0], &d.torsion.points[0], s);
        assert_eq!(rhs, d.nabla_torsion.points[0]);
        // flat case: both sides vanish
        let bf: LieBackend<Exact> = LieBackend::abelian();
        let phi = standard_phi_field::<Exact>(1);
        let df = derive(&bf, &phi).unwrap();
        let z = grad_torsion_formula(
            &df.curvature.rm.points[0],
            &df.torsion.points[0],
            &df.structures[0],
        );
        assert!(z.is_zero());
    }

    #[test]
    fn phi_trace_of_grad_torsion_reproduces_quadratic_identity() {
        // (nabla_j T_im) phi^m{}_k{}^i = 2 T_j{}^l T_lk
        let (_b, d) = nilpotent_derived();
        let s = &d.structures[0];
        let m = &s.metric;
        let dt = &d.nabla_torsion.points[0];
        let mut phi_mki = raise_index(&s.phi, 0, m).unwrap();
        phi_mki = raise_index(&phi_mki, 2, m).unwrap();
        let tu = raise_index(&d.torsion.points[0], 1, m).unwrap();
        for j in 0..DIM {
            for k in 0..DIM {
                let mut lhs = Exact::from_i64(0);
                for i in 0..DIM {
                    for mm in 0..DIM {
                        lhs = lhs + dt.get(&[j, i, mm]).clone() * phi_mki.get(&[mm, k, i]).clone();
                    }
                }
                let mut rhs = Exact::from_i64(0);
                for l in 0..DIM {
                    rhs = rhs
                        + Exact::from_i64(2)
                            * tu.get(&[j, l]).clone()
                            * d.torsion.points[0].get(&[l, k]).clone();
                }
                assert_eq!(lhs, rhs);
            }
        }
    }

    #[test]
    fn bianchi_residual_exactly_zero() {
        let (_b, d) = nilpotent_derived();
        let s = &d.structures[0];
        let res = bianchi_residual(
            &d.curvature.rm.points[0],
            &d.torsion.points[0],
            &d.nabla_torsion.points[0],
            s,
        );
        assert!(res.is_zero());
    }

    #[test]
    fn laplacian_two_routes_exact() {
        let (b, d) = nilpotent_derived();
        let phi = standard_phi_field::<Exact>(1);
        let lap = laplacian_phi(&b, &d, &phi).unwrap();
        assert_eq!(lap.hodge.points[0], lap.from_h.points[0]);
        assert_eq!(lap.max_dev, 0.0);
        // pi^3_7 of Delta phi vanishes
        let s = &d.structures[0];
        let op = Form3SplitOperator::new(s).unwrap();
        let sp = op.split(&lap.hodge.points[0], s);
        assert!(sp.x.is_zero());
        // |Delta phi|^2 = (16/9)|T|^4 + 2||Sic||^2, exactly
        let lap_n2 = inner_form(&lap.hodge.points[0], &lap.hodge.points[0], &s.metric).unwrap();
        let sic = d.h.points[0].neg();
        let sic_n2 = norm2_full(&sic, &s.metric);
        let t4 = d.torsion_norm2[0].clone() * d.torsion_norm2[0].clone();
        assert_eq!(lap_n2, Exact::from_ratio(16, 9) * t4 + Exact::from_i64(2) * sic_n2);
    }

    #[test]
    fn torsion_forms_closed_case_exact() {
        let (b, d) = nilpotent_derived();
        let s = &d.structures[0];
        let phi = standard_phi_field::<Exact>(1);
        let dphi = exterior_derivative(&b, &phi).points.pop().unwrap();
        let dpsi = exterior_derivative(&b, &Field::constant(1, s.psi.clone()))
            .points
            .pop()
            .unwrap();
        let op = Form3SplitOperator::new(s).unwrap();
        let td = torsion_forms(s, &dphi, &dpsi, &op, 1e-9).unwrap();
        assert_eq!(td.tau0, Exact::from_i64(0));
        assert!(td.tau1.is_zero());
        assert!(td.tau3.is_zero());
        // tau2 = -2T exactly, lying in the 14-type
        assert_eq!(td.tau2, d.torsion.points[0].scale(&Exact::from_i64(-2)));
        assert_eq!(td.t, d.torsion.points[0]);
        let sp2 = crate::g2algebra::split_2form(&td.tau2, s);
        assert!(sp2.part7.is_zero());
        // closed scalar curvature via both formulas
        let r_closed = scalar_from_torsion_closed(&td.t, &s.metric);
        let r_general = scalar_from_torsion(&td, s, Exact::from_i64(0));
        assert_eq!(r_closed, r_general);
        assert_eq!(r_closed, Exact::from_i64(-1));
    }

    #[test]
    fn torsion_forms_general_structure() {
        // non-closed: perturb phi off the closed cone of the nilpotent algebra
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let mut bump: Tensor<f64> = Tensor::zero_form(3);
        bump.set_form_term(&[3, 4, 5], 0.05); // d(e^456) = e^1245 here
        bump.set_form_term(&[4, 5, 6], -0.03);
        let phi_t = standard_phi::<f64>().add(&bump);
        let phi = Field::constant(1, phi_t);
        let d = derive(&b, &phi).unwrap();
        assert!(d.closedness > 1e-3, "deliberately non-closed");
        let s = &d.structures[0];
        let dphi = exterior_derivative(&b, &phi).points.pop().unwrap();
        let dpsi = exterior_derivative(&b, &Field::constant(1, s.psi.clone()))
            .points
            .pop()
            .unwrap();
        let op = Form3SplitOperator::new(s).unwrap();
        let td = torsion_forms(s, &dphi, &dpsi, &op, 1e-9).unwrap();
        assert!(
            td.tau0.abs() > 1e-6
                || td.tau1.max_abs_f64() > 1e-6
                || td.tau3.max_abs_f64() > 1e-6
        );
        // full torsion from the forms equals the covariant-derivative route
        assert!(td.t.sub(&d.torsion.points[0]).max_abs_f64() < 1e-12);
        // general Ricci formula against the metric route
        let ric = ricci_from_torsion(&d.torsion.points[0], &d.nabla_torsion.points[0], s, false);
        assert!(ric.sub(&d.curvature.ric.points[0]).max_abs_f64() < 1e-10);
        // general scalar formula with div tau1 from the connection
        let tau1_field = Field::constant(1, td.tau1.clone());
        let dtau1 = covariant_derivative(&b, &tau1_field, &d.gamma);
        let mut div = 0.0;
        for i in 0..DIM {
            for j in 0..DIM {
                div += s.g_inv().get(&[i, j]) * dtau1.points[0].get(&[i, j]);
            }
        }
        let r = scalar_from_torsion(&td, s, div);
        assert!(
            (r - d.curvature.scalar[0]).abs() < 1e-10,
            "general scalar formula: {r} vs {}",
            d.curvature.scalar[0]
        );
    }

    #[test]
    fn closed_gate_refuses_nonclosed() {
        let b: LieBackend<f64> = LieBackend::nilpotent(1.0);
        let mut bump: Tensor<f64> = Tensor::zero_form(3);
        bump.set_form_term(&[3, 4, 5], 0.05);
        let phi = Field::constant(1, standard_phi::<f64>().add(&bump));
        let d = derive(&b, &phi).unwrap();
        assert!(matches!(closed_flow_velocity(&d), Err(TorsionError::NotClosed(_))));
    }

    #[test]
    fn codifferential_adjointness_on_lattice() {
        // <d a, b> = <a, d* b> under the L2 pairing by quadrature
        use crate::geometry::{integrate, LatticeBackend, StencilOrder};
        let n = 16;
        let b: LatticeBackend<f64> =
            LatticeBackend::new(vec![0, 1], vec![n, n], vec![1.0 / n as f64; 2], StencilOrder::Four)
                .unwrap();
        let tau = std::f64::consts::TAU;
        let metrics: Vec<Metric<f64>> =
            (0..b.total_points()).map(|_| Metric::euclidean()).collect();
        let a_pts: Vec<Tensor<f64>> = (0..b.total_points())
            .map(|p| {
                let c = b.coords(p);
                let (x, y) = (c[0] as f64 / n as f64, c[1] as f64 / n as f64);
                let mut t = Tensor::zeros(1);
                t.set(&[2], (tau * x).sin() + (tau * y).cos());
                t.set(&[0], (tau * y).sin());
                t
            })
            .collect();
        let bb_pts: Vec<Tensor<f64>> = (0..b.total_points())
            .map(|p| {
                let c = b.coords(p);
                let (x, y) = (c[0] as f64 / n as f64, c[1] as f64 / n as f64);
                let mut t: Tensor<f64> = Tensor::zero_form(2);
                t.set_form_term(&[0, 2], (tau * x).cos());
                t.set_form_term(&[1, 4], (tau * y).sin() * (tau * x).sin());
                t
            })
            .collect();
        let af = Field { points: a_pts };
        let bf = Field { points: bb_pts };
        let da = exterior_derivative(&b, &af);
        let dstar_b = codifferential(&b, &bf, &metrics).unwrap();
        let lhs_vals: Vec<f64> = (0..b.total_points())
            .map(|p| inner_form(&da.points[p], &bf.points[p], &metrics[p]).unwrap())
            .collect();
        let rhs_vals: Vec<f64> = (0..b.total_points())
            .map(|p| inner_form(&af.points[p], &dstar_b.points[p], &metrics[p]).unwrap())
            .collect();
        let lhs = integrate(&b, &lhs_vals, &metrics).unwrap();
        let rhs = integrate(&b, &rhs_vals, &metrics).unwrap();
        assert!((lhs - rhs).abs() < 1e-12, "adjointness by quadrature: {lhs} vs {rhs}");
    }
}
