//! Dense tensor algebra over a fixed 7-dimensional vector space.
//!
//! Tensors are stored as full dense component arrays of length `7^rank`, all
//! indices down unless an operation says otherwise. k-forms carry the full
//! antisymmetric coefficient array; the paper-facing coefficient convention is
//! the "standard form" one, `alpha = (1/k!) alpha_{i1..ik} dx^{i1} ^ ... ^ dx^{ik}`.
//!
//! Public indices are 0-based. Scenario files and documentation use 1..7; the
//! shift happens at the parsing boundary and nowhere else.

use crate::linalg::{Definiteness, SqMat};
use crate::scalar::Scalar;
use std::sync::OnceLock;
use thiserror::Error;

pub const DIM: usize = 7;

#[derive(Debug, Error, PartialEq)]
pub enum TensorError {
    #[error("rank mismatch: {0}")]
    RankMismatch(String),
    #[error("slot {slot} out of range for rank {rank}")]
    SlotOutOfRange { slot: usize, rank: usize },
    #[error("combined rank {0} exceeds the resource guard (8)")]
    RankTooLarge(usize),
    #[error("wedge degree {0} exceeds 7")]
    DegreeOverflow(usize),
    #[error("interior product needs a form of degree >= 1")]
    DegreeUnderflow,
    #[error("metric is not positive definite")]
    NotPositiveDefinite,
    #[error("square root of {0} is not representable in this scalar kind")]
    RootUnavailable(String),
    #[error("duplicate index in form term")]
    DuplicateIndex,
}

/// Declared symmetry of the component array, testable by exhaustive sweep.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Symmetry {
    None,
    FullyAntisymmetric,
    /// Invariant under swapping each listed slot pair.
    SymmetricPairs(Vec<(usize, usize)>),
}

#[derive(Clone, Debug)]
pub struct Tensor<S> {
    rank: usize,
    symmetry: Symmetry,
    data: Vec<S>,
}

/// Component equality; the symmetry tag is metadata and does not participate.
impl<S: PartialEq> PartialEq for Tensor<S> {
    fn eq(&self, other: &Self) -> bool {
        self.rank == other.rank && self.data == other.data
    }
}

#[inline]
fn lin(idx: &[usize]) -> usize {
    let mut a = 0;
    for &i in idx {
        debug_assert!(i < DIM);
        a = a * DIM + i;
    }
    a
}

/// Iterate all multi-indices of the given rank, calling `f` with a scratch slice.
pub fn for_each_index(rank: usize, mut f: impl FnMut(&[usize])) {
    let mut idx = [0usize; 8];
    let total = DIM.pow(rank as u32);
    for flat in 0..total {
        let mut rem = flat;
        for pos in (0..rank).rev() {
            idx[pos] = rem % DIM;
            rem /= DIM;
        }
        f(&idx[..rank]);
    }
}

/// Strictly increasing index tuples of the given length.
pub fn increasing_tuples(rank: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..DIM {
            cur.push(i);
            rec(i + 1, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, rank, &mut Vec::new(), &mut out);
    out
}

/// Sign of a permutation given as a slice; 0 if any index repeats.
pub fn perm_sign(idx: &[usize]) -> i8 {
    let n = idx.len();
    let mut s = 1i8;
    for i in 0..n {
        for j in i + 1..n {
            if idx[i] == idx[j] {
                return 0;
            }
            if idx[i] > idx[j] {
                s = -s;
            }
        }
    }
    s
}

/// All permutations of (0..7) with signs, built once.
pub fn perms7() -> &'static [([usize; 7], i8)] {
    static PERMS: OnceLock<Vec<([usize; 7], i8)>> = OnceLock::new();
    PERMS.get_or_init(|| {
        let mut out = Vec::with_capacity(5040);
        let mut p: Vec<usize> = (0..DIM).collect();
        // Heap's algorithm, iterative
        let mut c = [0usize; 7];
        out.push((p.clone().try_into().unwrap(), perm_sign(&p)));
        let mut i = 0;
        while i < DIM {
            if c[i] < i {
                if i % 2 == 0 {
                    p.swap(0, i);
                } else {
                    p.swap(c[i], i);
                }
                out.push((p.clone().try_into().unwrap(), perm_sign(&p)));
                c[i] += 1;
                i = 0;
            } else {
                c[i] = 0;
                i += 1;
            }
        }
        out
    })
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(rank: usize) -> Self {
        Tensor { rank, symmetry: Symmetry::None, data: vec![S::zero(); DIM.pow(rank as u32)] }
    }

    pub fn zero_form(rank: usize) -> Self {
        let mut t = Self::zeros(rank);
        t.symmetry = Symmetry::FullyAntisymmetric;
        t
    }

    pub fn scalar(v: S) -> Self {
        Tensor { rank: 0, symmetry: Symmetry::None, data: vec![v] }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn symmetry(&self) -> &Symmetry {
        &self.symmetry
    }

    pub fn with_symmetry(mut self, sym: Symmetry) -> Self {
        self.symmetry = sym;
        self
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn get(&self, idx: &[usize]) -> &S {
        debug_assert_eq!(idx.len(), self.rank);
        &self.data[lin(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: S) {
        debug_assert_eq!(idx.len(), self.rank);
        self.data[lin(idx)] = v;
    }

    /// Build a k-form from terms given on index tuples (0-based, distinct
    /// entries); each term is antisymmetrically extended.
    pub fn form_from_terms(rank: usize, terms: &[(&[usize], S)]) -> Result<Self, TensorError> {
        let mut t = Self::zeros(rank);
        t.symmetry = Symmetry::FullyAntisymmetric;
        for (idx, v) in terms {
            if perm_sign(idx) == 0 {
                return Err(TensorError::DuplicateIndex);
            }
            t.set_form_term(idx, v.clone());
        }
        Ok(t)
    }

    /// Overwrite the orbit of one index tuple with the antisymmetric extension
    /// of `v` placed at `idx`.
    pub fn set_form_term(&mut self, idx: &[usize], v: S) {
        let rank = self.rank;
        let mut perm: Vec<usize> = (0..rank).collect();
        permute_all(&mut perm, &mut |p| {
            let s = perm_sign(p);
            let target: Vec<usize> = p.iter().map(|&k| idx[k]).collect();
            let val = if s >= 0 { v.clone() } else { -v.clone() };
            self.data[lin(&target)] = val;
        });
    }

    /// Identity as a rank-2 tensor (Kronecker delta).
    pub fn kronecker() -> Self {
        let mut t = Self::zeros(2);
        for i in 0..DIM {
            t.set(&[i, i], S::one());
        }
        t.symmetry = Symmetry::SymmetricPairs(vec![(0, 1)]);
        t
    }

    /// Basis covector e^i (0-based).
    pub fn basis_covector(i: usize) -> Self {
        let mut t = Self::zeros(1);
        t.set(&[i], S::one());
        t
    }

    /// Basis vector e_i (0-based); same storage as a covector, used where a
    /// contravariant slot is expected.
    pub fn basis_vector(i: usize) -> Self {
        Self::basis_covector(i)
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        Tensor {
            rank: self.rank,
            symmetry: self.symmetry.clone(),
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn scale(&self, c: &S) -> Self {
        self.map(|v| v.clone() * c.clone())
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.rank, other.rank);
        let sym = if self.symmetry == other.symmetry { self.symmetry.clone() } else { Symmetry::None };
        Tensor {
            rank: self.rank,
            symmetry: sym,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a.clone() + b.clone())
                .collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(&-S::one()))
    }

    pub fn neg(&self) -> Self {
        self.scale(&-S::one())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == S::zero())
    }

    /// Largest |component| as f64 (for residual reporting).
    pub fn max_abs_f64(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64().abs()).fold(0.0, f64::max)
    }

    /// Exhaustive component sweep verifying the declared symmetry.
    pub fn check_symmetry(&self) -> bool {
        match &self.symmetry {
            Symmetry::None => true,
            Symmetry::FullyAntisymmetric => {
                let mut ok = true;
                for_each_index(self.rank, |idx| {
                    if !ok {
                        return;
                    }
                    // compare against the sorted representative
                    let mut sorted: Vec<usize> = idx.to_vec();
                    sorted.sort_unstable();
                    let s = perm_sign(idx);
                    let expect = if s == 0 {
                        S::zero()
                    } else if s > 0 {
                        self.get(&sorted).clone()
                    } else {
                        -self.get(&sorted).clone()
                    };
                    if *self.get(idx) != expect {
                        ok = false;
                    }
                });
                ok
            }
            Symmetry::SymmetricPairs(pairs) => {
                let mut ok = true;
                for &(a, b) in pairs {
                    for_each_index(self.rank, |idx| {
                        if !ok {
                            return;
                        }
                        let mut sw = idx.to_vec();
                        sw.swap(a, b);
                        if self.get(idx) != self.get(&sw) {
                            ok = false;
                        }
                    });
                }
                ok
            }
        }
    }
}

fn permute_all(perm: &mut [usize], f: &mut impl FnMut(&[usize])) {
    // Heap's algorithm (recursive flavor for clarity; rank <= 7)
    fn rec(k: usize, perm: &mut [usize], f: &mut impl FnMut(&[usize])) {
        if k <= 1 {
            f(perm);
            return;
        }
        for i in 0..k {
            rec(k - 1, perm, f);
            if k % 2 == 0 {
                perm.swap(i, k - 1);
            } else {
                perm.swap(0, k - 1);
            }
        }
    }
    let n = perm.len();
    if n == 0 {
        f(perm);
        return;
    }
    rec(n, perm, f);
}

// ---------------------------------------------------------------------------
// Metric
// ---------------------------------------------------------------------------

/// A positive-definite metric with cached inverse and determinant.
#[derive(Clone, Debug)]
pub struct Metric<S> {
    g: Tensor<S>,
    g_inv: Tensor<S>,
    det: S,
}

impl<S: Scalar> Metric<S> {
    pub fn new(g: Tensor<S>) -> Result<Self, TensorError> {
        assert_eq!(g.rank(), 2);
        let mut m = SqMat::zeros(DIM);
        for i in 0..DIM {
            for j in 0..DIM {
                *m.at_mut(i, j) = g.get(&[i, j]).clone();
            }
        }
        if m.definiteness() != Definiteness::Positive {
            return Err(TensorError::NotPositiveDefinite);
        }
        let det = m.det();
        let inv = m.inverse().map_err(|_| TensorError::NotPositiveDefinite)?;
        let mut g_inv = Tensor::zeros(2);
        for i in 0..DIM {
            for j in 0..DIM {
                g_inv.set(&[i, j], inv.at(i, j).clone());
            }
        }
        let g = g.with_symmetry(Symmetry::SymmetricPairs(vec![(0, 1)]));
        let g_inv = g_inv.with_symmetry(Symmetry::SymmetricPairs(vec![(0, 1)]));
        Ok(Metric { g, g_inv, det })
    }

    pub fn euclidean() -> Self {
        Metric {
            g: Tensor::kronecker(),
            g_inv: Tensor::kronecker(),
            det: S::one(),
        }
    }

    pub fn g(&self) -> &Tensor<S> {
        &self.g
    }

    pub fn g_inv(&self) -> &Tensor<S> {
        &self.g_inv
    }

    pub fn det(&self) -> &S {
        &self.det
    }

    pub fn sqrt_det(&self) -> Result<S, TensorError> {
        self.det
            .sqrt()
            .ok_or_else(|| TensorError::RootUnavailable(format!("{:?}", self.det)))
    }

    /// Riemannian volume form in the fixed standard orientation.
    pub fn volume_form(&self) -> Result<Tensor<S>, TensorError> {
        let sq = self.sqrt_det()?;
        let mut vol = Tensor::zero_form(DIM);
        for (p, s) in perms7() {
            let v = if *s >= 0 { sq.clone() } else { -sq.clone() };
            vol.set(&p[..], v);
        }
        Ok(vol)
    }
}

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

pub fn tensor_product<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let rank = a.rank() + b.rank();
    if rank > 8 {
        return Err(TensorError::RankTooLarge(rank));
    }
    let mut out = Tensor::zeros(rank);
    let nb = b.data.len();
    for (ia, va) in a.data.iter().enumerate() {
        if *va == S::zero() {
            continue;
        }
        for (ib, vb) in b.data.iter().enumerate() {
            out.data[ia * nb + ib] = va.clone() * vb.clone();
        }
    }
    Ok(out)
}

fn check_slots(rank: usize, s1: usize, s2: usize) -> Result<(), TensorError> {
    if s1 >= rank {
        return Err(TensorError::SlotOutOfRange { slot: s1, rank });
    }
    if s2 >= rank {
        return Err(TensorError::SlotOutOfRange { slot: s2, rank });
    }
    if s1 == s2 {
        return Err(TensorError::RankMismatch("contraction slots must be distinct".into()));
    }
    Ok(())
}

/// Kronecker-pairing trace over two slots (no metric; for mixed tensors whose
/// slots are already dual to each other).
pub fn trace_pair<S: Scalar>(
    a: &Tensor<S>,
    s1: usize,
    s2: usize,
) -> Result<Tensor<S>, TensorError> {
    check_slots(a.rank(), s1, s2)?;
    let rank = a.rank() - 2;
    let mut out: Tensor<S> = Tensor::zeros(rank);
    let (lo, hi) = if s1 < s2 { (s1, s2) } else { (s2, s1) };
    for_each_index(rank, |oidx| {
        let mut full = [0usize; 8];
        let mut acc = S::zero();
        for m in 0..DIM {
            let mut pos = 0;
            for slot in 0..a.rank() {
                full[slot] = if slot == lo || slot == hi {
                    m
                } else {
                    let v = oidx[pos];
                    pos += 1;
                    v
                };
            }
            acc = acc + a.get(&full[..a.rank()]).clone();
        }
        let mut tmp = out.data[lin(oidx)].clone();
        tmp = tmp + acc;
        out.data[lin(oidx)] = tmp;
    });
    Ok(out)
}

/// Metric contraction of two lower slots: applies `g^{-1}` across them.
pub fn contract<S: Scalar>(
    a: &Tensor<S>,
    s1: usize,
    s2: usize,
    metric: &Metric<S>,
) -> Result<Tensor<S>, TensorError> {
    check_slots(a.rank(), s1, s2)?;
    let raised = raise_index(a, s2, metric)?;
    trace_pair(&raised, s1, s2)
}

/// Apply `g^{-1}` at one slot (sharp).
pub fn raise_index<S: Scalar>(
    a: &Tensor<S>,
    slot: usize,
    metric: &Metric<S>,
) -> Result<Tensor<S>, TensorError> {
    apply_rank2_at_slot(a, slot, metric.g_inv())
}

/// Apply `g` at one slot (flat).
pub fn lower_index<S: Scalar>(
    a: &Tensor<S>,
    slot: usize,
    metric: &Metric<S>,
) -> Result<Tensor<S>, TensorError> {
    apply_rank2_at_slot(a, slot, metric.g())
}

fn apply_rank2_at_slot<S: Scalar>(
    a: &Tensor<S>,
    slot: usize,
    m: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if slot >= a.rank() {
        return Err(TensorError::SlotOutOfRange { slot, rank: a.rank() });
    }
    let mut out = Tensor::zeros(a.rank());
    out.symmetry = a.symmetry.clone();
    let stride = DIM.pow((a.rank() - 1 - slot) as u32);
    let block = stride * DIM;
    for base in 0..a.data.len() / block {
        for rem in 0..stride {
            let off = base * block + rem;
            for j in 0..DIM {
                let mut acc = S::zero();
                for i in 0..DIM {
                    let v = &a.data[off + i * stride];
                    if *v == S::zero() {
                        continue;
                    }
                    acc = acc + m.get(&[i, j]).clone() * v.clone();
                }
                out.data[off + j * stride] = acc;
            }
        }
    }
    Ok(out)
}

/// Raise every slot.
pub fn raise_all<S: Scalar>(a: &Tensor<S>, metric: &Metric<S>) -> Tensor<S> {
    let mut out = a.clone();
    for slot in 0..a.rank() {
        out = raise_index(&out, slot, metric).expect("slot in range");
    }
    out
}

/// Wedge product of forms; rejects combined degree above 7.
pub fn wedge<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>, TensorError> {
    let (k, l) = (a.rank(), b.rank());
    if k + l > DIM {
        return Err(TensorError::DegreeOverflow(k + l));
    }
    if k == 0 {
        return Ok(b.scale(&a.data[0]));
    }
    if l == 0 {
        return Ok(a.scale(&b.data[0]));
    }
    let mut out = Tensor::zero_form(k + l);
    let subsets = increasing_tuples_of(k, k + l);
    for idx in increasing_tuples(k + l) {
        let mut v = S::zero();
        for sub in &subsets {
            // sub: positions (within idx) going to `a`; rest to `b`
            let mut perm = Vec::with_capacity(k + l);
            perm.extend_from_slice(sub);
            for p in 0..k + l {
                if !sub.contains(&p) {
                    perm.push(p);
                }
            }
            let s = perm_sign(&perm);
            let ia: Vec<usize> = perm[..k].iter().map(|&p| idx[p]).collect();
            let ib: Vec<usize> = perm[k..].iter().map(|&p| idx[p]).collect();
            let term = a.get(&ia).clone() * b.get(&ib).clone();
            v = if s >= 0 { v + term } else { v - term };
        }
        out.set_form_term(&idx, v);
    }
    Ok(out)
}

fn increasing_tuples_of(k: usize, n: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, left: usize, n: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, left - 1, n, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, k, n, &mut Vec::new(), &mut out);
    out
}

/// Wedge coefficient at a single index tuple (avoids materializing high-degree
/// outputs).
pub fn wedge_at<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, idx: &[usize]) -> S {
    let (k, l) = (a.rank(), b.rank());
    debug_assert_eq!(idx.len(), k + l);
    let mut v = S::zero();
    for sub in increasing_tuples_of(k, k + l) {
        let mut perm = Vec::with_capacity(k + l);
        perm.extend_from_slice(&sub);
        for p in 0..k + l {
            if !sub.contains(&p) {
                perm.push(p);
            }
        }
        let s = perm_sign(&perm);
        let ia: Vec<usize> = perm[..k].iter().map(|&p| idx[p]).collect();
        let ib: Vec<usize> = perm[k..].iter().map(|&p| idx[p]).collect();
        let term = a.get(&ia).clone() * b.get(&ib).clone();
        v = if s >= 0 { v + term } else { v - term };
    }
    v
}

/// Interior product `X .| a` of a vector (contravariant rank 1) with a k-form.
pub fn interior_product<S: Scalar>(
    x: &Tensor<S>,
    a: &Tensor<S>,
) -> Result<Tensor<S>, TensorError> {
    if a.rank() == 0 {
        return Err(TensorError::DegreeUnderflow);
    }
    assert_eq!(x.rank(), 1);
    let rank = a.rank() - 1;
    let mut out: Tensor<S> = Tensor::zeros(rank);
    out.symmetry = if rank >= 1 { Symmetry::FullyAntisymmetric } else { Symmetry::None };
    let stride = DIM.pow(rank as u32);
    for m in 0..DIM {
        let xm = x.data[m].clone();
        if xm == S::zero() {
            continue;
        }
        for rest in 0..stride {
            let v = &a.data[m * stride + rest];
            if *v == S::zero() {
                continue;
            }
            out.data[rest] = out.data[rest].clone() + xm.clone() * v.clone();
        }
    }
    Ok(out)
}

/// `<a,b>_g = (1/k!) a_{I} b^{I}` on k-forms.
pub fn inner_form<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    metric: &Metric<S>,
) -> Result<S, TensorError> {
    if a.rank() != b.rank() {
        return Err(TensorError::RankMismatch(format!("{} vs {}", a.rank(), b.rank())));
    }
    let braised = raise_all(b, metric);
    let mut acc = S::zero();
    for (va, vb) in a.data.iter().zip(&braised.data) {
        if *va == S::zero() || *vb == S::zero() {
            continue;
        }
        acc = acc + va.clone() * vb.clone();
    }
    let mut fact = 1i64;
    for i in 1..=a.rank() as i64 {
        fact *= i;
    }
    Ok(acc / S::from_i64(fact))
}

/// `<<A,B>>_g = A_{ij} B^{ij}` on 2-tensors (no factorial normalization).
pub fn inner_2tensor<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    metric: &Metric<S>,
) -> Result<S, TensorError> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(TensorError::RankMismatch(format!("{} and {}", a.rank(), b.rank())));
    }
    let braised = raise_all(b, metric);
    let mut acc = S::zero();
    for (va, vb) in a.data.iter().zip(&braised.data) {
        if *va == S::zero() || *vb == S::zero() {
            continue;
        }
        acc = acc + va.clone() * vb.clone();
    }
    Ok(acc)
}

/// `||A||^2 = <<A,A>>` for any rank: full contraction against the all-raised copy.
pub fn norm2_full<S: Scalar>(a: &Tensor<S>, metric: &Metric<S>) -> S {
    let ar = raise_all(a, metric);
    let mut acc = S::zero();
    for (va, vb) in a.data.iter().zip(&ar.data) {
        if *va == S::zero() {
            continue;
        }
        acc = acc + va.clone() * vb.clone();
    }
    acc
}

/// Hodge star in the fixed standard orientation (`orientation = -1` flips it).
pub fn hodge_star<S: Scalar>(
    a: &Tensor<S>,
    metric: &Metric<S>,
    orientation: i8,
) -> Result<Tensor<S>, TensorError> {
    let k = a.rank();
    let sq = metric.sqrt_det()?;
    let ar = raise_all(a, metric);
    let mut out: Tensor<S> = Tensor::zero_form(DIM - k);
    for (p, s) in perms7() {
        let v = ar.get(&p[..k]);
        if *v == S::zero() {
            continue;
        }
        let idx = &p[k..];
        let pos = lin(idx);
        let term = v.clone() * sq.clone();
        let signed = if *s * orientation >= 0 { term } else { -term };
        out.data[pos] = out.data[pos].clone() + signed;
    }
    let mut fact = 1i64;
    for i in 1..=k as i64 {
        fact *= i;
    }
    let inv = S::one() / S::from_i64(fact);
    Ok(out.scale(&inv))
}
