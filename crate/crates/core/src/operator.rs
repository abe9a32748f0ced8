//! Dense complex operators on 1..=4 qubits: tensor algebra, Hermitian
//! eigendecomposition, matrix exponentials, partial traces.

use crate::error::{Error, Result};
use crate::real::{cre, cis, cx, tol, Cx, Real};
use ndarray::{linalg::kron as nd_kron, Array2};

/// Default cap on system size; large enough for every experiment here and
/// small enough to catch accidental exponential blowup.
pub const MAX_QUBITS: usize = 4;

#[derive(Clone, Debug)]
pub struct Operator<T: Real> {
    m: Array2<Cx<T>>,
}

fn check_dim(dim: usize, max_qubits: usize) -> Result<()> {
    if dim < 2 || !dim.is_power_of_two() {
        return Err(Error::BadDim(dim));
    }
    let qubits = dim.trailing_zeros() as usize;
    if qubits > max_qubits {
        return Err(Error::TooLarge { qubits, max: max_qubits });
    }
    Ok(())
}

impl<T: Real> Operator<T> {
    /// Wrap a square matrix whose dimension is a power of two (<= 4 qubits).
    pub fn from_array(m: Array2<Cx<T>>) -> Result<Self> {
        Self::from_array_capped(m, MAX_QUBITS)
    }

    /// Same as `from_array` with an explicit qubit-count cap.
    pub fn from_array_capped(m: Array2<Cx<T>>, max_qubits: usize) -> Result<Self> {
        let (r, c) = m.dim();
        if r != c {
            return Err(Error::NotSquare { rows: r, cols: c });
        }
        check_dim(r, max_qubits)?;
        Ok(Self { m })
    }

    pub fn from_fn(dim: usize, f: impl Fn(usize, usize) -> Cx<T>) -> Result<Self> {
        Self::from_array(Array2::from_shape_fn((dim, dim), |(i, j)| f(i, j)))
    }

    pub fn zeros(dim: usize) -> Self {
        Self { m: Array2::from_elem((dim, dim), Cx::new(T::zero(), T::zero())) }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Array2::from_elem((dim, dim), Cx::new(T::zero(), T::zero()));
        for i in 0..dim {
            m[[i, i]] = cre(T::one());
        }
        Self { m }
    }

    pub fn from_diag(d: &[Cx<T>]) -> Self {
        let mut m = Array2::from_elem((d.len(), d.len()), Cx::new(T::zero(), T::zero()));
        for (i, v) in d.iter().enumerate() {
            m[[i, i]] = *v;
        }
        Self { m }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn qubits(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn array(&self) -> &Array2<Cx<T>> {
        &self.m
    }

    pub fn into_array(self) -> Array2<Cx<T>> {
        self.m
    }

    pub fn get(&self, i: usize, j: usize) -> Cx<T> {
        self.m[[i, j]]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Cx<T>) {
        self.m[[i, j]] = v;
    }

    pub fn dagger(&self) -> Self {
        Self { m: self.m.t().mapv(|z| z.conj()) }
    }

    pub fn trace(&self) -> Cx<T> {
        (0..self.dim()).map(|i| self.m[[i, i]]).fold(Cx::new(T::zero(), T::zero()), |a, b| a + b)
    }

    /// Tr[self * rhs] without forming the product matrix.
    pub fn trace_product(&self, rhs: &Self) -> Cx<T> {
        assert_eq!(self.dim(), rhs.dim(), "trace product dimension mismatch");
        let mut acc = Cx::new(T::zero(), T::zero());
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += self.m[[i, j]] * rhs.m[[j, i]];
            }
        }
        acc
    }

    pub fn scaled(&self, c: Cx<T>) -> Self {
        Self { m: self.m.mapv(|z| z * c) }
    }

    pub fn scaled_re(&self, r: T) -> Self {
        self.scaled(cre(r))
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim(), rhs.dim(), "operator product dimension mismatch");
        Self { m: self.m.dot(&rhs.m) }
    }

    /// u self u^dag
    pub fn conjugated_by(&self, u: &Self) -> Self {
        u.matmul(self).matmul(&u.dagger())
    }

    pub fn commutator(&self, other: &Self) -> Self {
        &self.matmul(other) - &other.matmul(self)
    }

    pub fn max_abs(&self) -> T {
        self.m.iter().fold(T::zero(), |a, z| a.max(z.norm()))
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        assert_eq!(self.dim(), other.dim(), "operator diff dimension mismatch");
        let mut d = T::zero();
        for (a, b) in self.m.iter().zip(other.m.iter()) {
            d = d.max((*a - *b).norm());
        }
        d
    }

    pub fn frobenius_norm(&self) -> T {
        self.m.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    /// max_ij |H - H^dag|
    pub fn hermiticity_deviation(&self) -> T {
        let mut d = T::zero();
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                d = d.max((self.m[[i, j]] - self.m[[j, i]].conj()).norm());
            }
        }
        d
    }

    /// max_ij |U U^dag - I|
    pub fn unitarity_deviation(&self) -> T {
        self.matmul(&self.dagger()).max_abs_diff(&Self::identity(self.dim()))
    }

    pub fn is_hermitian(&self, tolerance: T) -> bool {
        self.hermiticity_deviation() <= tolerance
    }

    pub fn is_unitary(&self, tolerance: T) -> bool {
        self.unitarity_deviation() <= tolerance
    }

    pub fn kron(&self, other: &Self) -> Result<Self> {
        Self::from_array(nd_kron(&self.m, &other.m))
    }

    /// I (x) ... (x) op(at `site`) (x) ... (x) I on `n` qubits.
    pub fn embed(op: &Self, site: usize, n: usize) -> Result<Self> {
        if op.dim() != 2 {
            return Err(Error::DimMismatch(format!("embed expects a 2x2 operator, got {}x{0}", op.dim())));
        }
        if site >= n {
            return Err(Error::InvalidArgument(format!("site {site} out of range for {n} qubits")));
        }
        check_dim(1 << n, MAX_QUBITS)?;
        let mut out = Self::identity(1 << site);
        if site == 0 {
            out = op.clone();
        } else {
            out = Self { m: nd_kron(&out.m, &op.m) };
        }
        if site + 1 < n {
            let rest = Self::identity(1 << (n - site - 1));
            out = Self { m: nd_kron(&out.m, &rest.m) };
        }
        Ok(out)
    }

    pub fn pauli_x() -> Self {
        let o = T::one();
        let z = T::zero();
        Self::from_fn(2, |i, j| if i != j { cx(o, z) } else { cx(z, z) }).unwrap()
    }

    pub fn pauli_y() -> Self {
        let o = T::one();
        let z = T::zero();
        Self::from_fn(2, |i, j| match (i, j) {
            (0, 1) => cx(z, -o),
            (1, 0) => cx(z, o),
            _ => cx(z, z),
        })
        .unwrap()
    }

    pub fn pauli_z() -> Self {
        let o = T::one();
        let z = T::zero();
        Self::from_fn(2, |i, j| match (i, j) {
            (0, 0) => cx(o, z),
            (1, 1) => cx(-o, z),
            _ => cx(z, z),
        })
        .unwrap()
    }

    /// Spin operator I_z = Z/2 (I_x, I_y analogous).
    pub fn spin_z() -> Self {
        Self::pauli_z().scaled_re(T::lit(0.5))
    }

    pub fn spin_x() -> Self {
        Self::pauli_x().scaled_re(T::lit(0.5))
    }

    pub fn spin_y() -> Self {
        Self::pauli_y().scaled_re(T::lit(0.5))
    }

    /// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
    /// Eigenvalues ascending; `vectors` columns are the eigenvectors.
    pub fn eigh(&self) -> Result<Eigh<T>> {
        let scale = self.max_abs().max(T::one());
        let dev = self.hermiticity_deviation();
        if dev > tol::<T>(1e-12) * scale {
            return Err(Error::NotHermitian(dev.as_f64()));
        }
        let n = self.dim();
        let half = T::lit(0.5);
        let mut a = self.m.clone();
        for i in 0..n {
            a[[i, i]] = cre(a[[i, i]].re);
            for j in 0..i {
                let v = (a[[i, j]] + a[[j, i]].conj()).scale(half);
                a[[i, j]] = v;
                a[[j, i]] = v.conj();
            }
        }
        let mut v: Array2<Cx<T>> = Self::identity(n).m;
        let stop = T::epsilon() * scale * T::lit(n as f64);
        let skip = stop * T::lit(1e-2);
        let max_sweeps = 64;
        let mut converged = false;
        for _ in 0..max_sweeps {
            let mut off = T::zero();
            for p in 0..n {
                for q in (p + 1)..n {
                    off = off.max(a[[p, q]].norm());
                }
            }
            if off <= stop {
                converged = true;
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[[p, q]];
                    let b = apq.norm();
                    if b <= skip {
                        continue;
                    }
                    // Phase u and angle t zero the (p,q) element of the
                    // Hermitian 2x2 block [[app, b u],[b conj(u), aqq]].
                    let u = apq.unscale(b);
                    let app = a[[p, p]].re;
                    let aqq = a[[q, q]].re;
                    let diff = app - aqq;
                    let t = if diff == T::zero() {
                        T::one()
                    } else {
                        let tau = diff / (T::lit(2.0) * b);
                        let s = if tau >= T::zero() { T::one() } else { -T::one() };
                        s / (tau.abs() + (T::one() + tau * tau).sqrt())
                    };
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = t * c;
                    let su = u.scale(s);
                    let suc = u.conj().scale(s);
                    for i in 0..n {
                        let aip = a[[i, p]];
                        let aiq = a[[i, q]];
                        a[[i, p]] = aip.scale(c) + aiq * suc;
                        a[[i, q]] = aiq.scale(c) - aip * su;
                    }
                    for i in 0..n {
                        let api = a[[p, i]];
                        let aqi = a[[q, i]];
                        a[[p, i]] = api.scale(c) + aqi * su;
                        a[[q, i]] = aqi.scale(c) - api * suc;
                    }
                    a[[p, q]] = Cx::new(T::zero(), T::zero());
                    a[[q, p]] = Cx::new(T::zero(), T::zero());
                    a[[p, p]] = cre(a[[p, p]].re);
                    a[[q, q]] = cre(a[[q, q]].re);
                    for i in 0..n {
                        let vip = v[[i, p]];
                        let viq = v[[i, q]];
                        v[[i, p]] = vip.scale(c) + viq * suc;
                        v[[i, q]] = viq.scale(c) - vip * su;
                    }
                }
            }
        }
        if !converged {
            return Err(Error::EigenNoConverge(max_sweeps));
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[[i, i]].re.partial_cmp(&a[[j, j]].re).expect("NaN eigenvalue"));
        let values: Vec<T> = order.iter().map(|&i| a[[i, i]].re).collect();
        let mut vectors = Self::zeros(n);
        for (col, &src) in order.iter().enumerate() {
            for i in 0..n {
                vectors.m[[i, col]] = v[[i, src]];
            }
        }
        Ok(Eigh { values, vectors })
    }

    /// exp(-i self t) for Hermitian self, via eigendecomposition.
    pub fn matexp_hermitian(&self, t: T) -> Result<Self> {
        let e = self.eigh()?;
        let n = self.dim();
        let phases: Vec<Cx<T>> = e.values.iter().map(|&l| cis(-l * t)).collect();
        let mut out = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = Cx::new(T::zero(), T::zero());
                for k in 0..n {
                    acc = acc + e.vectors.m[[i, k]] * phases[k] * e.vectors.m[[j, k]].conj();
                }
                out.m[[i, j]] = acc;
            }
        }
        Ok(out)
    }

    /// Trace out every factor not listed in `keep` (strictly increasing
    /// indices into `dims`); `dims` are the tensor-factor dimensions.
    pub fn partial_trace(&self, dims: &[usize], keep: &[usize]) -> Result<Self> {
        let total: usize = dims.iter().product();
        if total != self.dim() {
            return Err(Error::DimMismatch(format!(
                "factor dims {:?} give {} but operator dim is {}",
                dims, total, self.dim()
            )));
        }
        if keep.is_empty() {
            return Err(Error::Empty("partial_trace keep set"));
        }
        if keep.windows(2).any(|w| w[0] >= w[1]) || *keep.last().unwrap() >= dims.len() {
            return Err(Error::InvalidArgument(format!(
                "keep indices {:?} must be strictly increasing and < {}",
                keep, dims.len()
            )));
        }
        let kept_dim: usize = keep.iter().map(|&k| dims[k]).product();
        let decode = |mut idx: usize| -> Vec<usize> {
            let mut digits = vec![0usize; dims.len()];
            for f in (0..dims.len()).rev() {
                digits[f] = idx % dims[f];
                idx /= dims[f];
            }
            digits
        };
        let encode_kept = |digits: &[usize]| -> usize {
            keep.iter().fold(0usize, |acc, &k| acc * dims[k] + digits[k])
        };
        let traced: Vec<usize> = (0..dims.len()).filter(|f| !keep.contains(f)).collect();
        let mut out = Array2::from_elem((kept_dim, kept_dim), Cx::new(T::zero(), T::zero()));
        for r in 0..total {
            let rd = decode(r);
            for c in 0..total {
                let cd = decode(c);
                if traced.iter().all(|&f| rd[f] == cd[f]) {
                    out[[encode_kept(&rd), encode_kept(&cd)]] =
                        out[[encode_kept(&rd), encode_kept(&cd)]] + self.m[[r, c]];
                }
            }
        }
        Self::from_array_capped(out, MAX_QUBITS)
    }
}

#[derive(Clone, Debug)]
pub struct Eigh<T: Real> {
    pub values: Vec<T>,
    pub vectors: Operator<T>,
}

impl<T: Real> std::ops::Add for &Operator<T> {
    type Output = Operator<T>;
    fn add(self, rhs: Self) -> Operator<T> {
        assert_eq!(self.dim(), rhs.dim(), "operator sum dimension mismatch");
        Operator { m: &self.m + &rhs.m }
    }
}

impl<T: Real> std::ops::Sub for &Operator<T> {
    type Output = Operator<T>;
    fn sub(self, rhs: Self) -> Operator<T> {
        assert_eq!(self.dim(), rhs.dim(), "operator difference dimension mismatch");
        Operator { m: &self.m - &rhs.m }
    }
}

impl<T: Real> std::ops::Neg for &Operator<T> {
    type Output = Operator<T>;
    fn neg(self) -> Operator<T> {
        self.scaled_re(-T::one())
    }
}

impl<T: Real> std::ops::Mul for &Operator<T> {
    type Output = Operator<T>;
    fn mul(self, rhs: Self) -> Operator<T> {
        self.matmul(rhs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::real::cre;

    type Op = Operator<f64>;

    #[test]
    fn kron_identities() {
        let i2 = Op::identity(2);
        let i4 = i2.kron(&i2).unwrap();
        assert!(i4.max_abs_diff(&Op::identity(4)) == 0.0);

        let xz = Op::pauli_x().kron(&Op::pauli_z()).unwrap();
        assert_eq!(xz.get(0, 2), cre(1.0));
        assert_eq!(xz.get(1, 3), cre(-1.0));
        assert_eq!(xz.get(2, 0), cre(1.0));
        assert_eq!(xz.get(3, 1), cre(-1.0));

        let a = Op::pauli_x().kron(&Op::identity(2)).unwrap();
        let b = Op::identity(2).kron(&Op::pauli_x()).unwrap();
        let xx = Op::pauli_x().kron(&Op::pauli_x()).unwrap();
        assert!(a.matmul(&b).max_abs_diff(&xx) < 1e-15);
    }

    #[test]
    fn embed_matches_kron() {
        let z = Op::pauli_z();
        assert!(Op::embed(&z, 0, 1).unwrap().max_abs_diff(&z) == 0.0);
        let ix = Op::identity(2).kron(&Op::pauli_x()).unwrap();
        assert!(Op::embed(&Op::pauli_x(), 1, 2).unwrap().max_abs_diff(&ix) == 0.0);
        let z0 = Op::embed(&z, 0, 3).unwrap();
        let z1 = Op::embed(&z, 1, 3).unwrap();
        assert!(z0.commutator(&z1).max_abs() == 0.0);
    }

    #[test]
    fn embed_rejects_bad_site() {
        assert!(Op::embed(&Op::pauli_x(), 2, 2).is_err());
    }

    #[test]
    fn size_cap_enforced() {
        assert!(Op::from_array(ndarray::Array2::from_elem((32, 32), cre(0.0))).is_err());
        assert!(Op::from_array(ndarray::Array2::from_elem((3, 3), cre(0.0))).is_err());
    }

    fn random_hermitian(dim: usize, seed: u64) -> Op {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, 0);
        let g = Array2::from_shape_fn((dim, dim), |_| {
            Cx::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let h = &g + &g.t().mapv(|z: Cx<f64>| z.conj());
        Op::from_array(h).unwrap()
    }

    #[test]
    fn eigh_reconstructs() {
        for &dim in &[2usize, 4, 8, 16] {
            let h = random_hermitian(dim, dim as u64);
            let e = h.eigh().unwrap();
            assert!(e.vectors.unitarity_deviation() < 1e-12, "dim {dim}");
            let lambda = Op::from_diag(&e.values.iter().map(|&l| cre(l)).collect::<Vec<_>>());
            let rebuilt = e.vectors.matmul(&lambda).matmul(&e.vectors.dagger());
            assert!(rebuilt.max_abs_diff(&h) < 1e-12 * h.max_abs().max(1.0), "dim {dim}");
            assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn eigh_rejects_non_hermitian() {
        let mut m = Op::zeros(2);
        m.set(0, 1, cre(1.0));
        assert!(m.eigh().is_err());
    }

    #[test]
    fn matexp_basics() {
        let h = random_hermitian(4, 7);
        assert!(h.matexp_hermitian(0.0).unwrap().max_abs_diff(&Op::identity(4)) < 1e-14);
        let u = h.matexp_hermitian(0.37).unwrap();
        assert!(u.unitarity_deviation() < 1e-12);
        // group property exp(-iH t1) exp(-iH t2) = exp(-iH (t1+t2))
        let u1 = h.matexp_hermitian(0.2).unwrap();
        let u2 = h.matexp_hermitian(0.5).unwrap();
        let u12 = h.matexp_hermitian(0.7).unwrap();
        assert!(u1.matmul(&u2).max_abs_diff(&u12) < 1e-9);
    }

    #[test]
    fn matexp_rotation_form() {
        // exp(-i (theta/2) X) = cos(theta/2) I - i sin(theta/2) X
        let theta: f64 = 1.1;
        let u = Op::pauli_x().scaled_re(0.5).matexp_hermitian(theta).unwrap();
        let want = &Op::identity(2).scaled_re((theta / 2.0).cos())
            + &Op::pauli_x().scaled(Cx::new(0.0, -(theta / 2.0).sin()));
        assert!(u.max_abs_diff(&want) < 1e-14);
        // theta = pi about x gives -iX
        let u = Op::pauli_x().scaled_re(0.5).matexp_hermitian(std::f64::consts::PI).unwrap();
        assert!(u.max_abs_diff(&Op::pauli_x().scaled(Cx::new(0.0, -1.0))) < 1e-14);
    }

    #[test]
    fn partial_trace_product_and_bell() {
        // |0><0| (x) |+><+| : tracing factor 0 leaves |+><+|
        let p0 = Op::from_fn(2, |i, j| if i == 0 && j == 0 { cre(1.0) } else { cre(0.0) }).unwrap();
        let plus = Op::from_fn(2, |_, _| cre(0.5)).unwrap();
        let prod = p0.kron(&plus).unwrap();
        assert!(prod.partial_trace(&[2, 2], &[1]).unwrap().max_abs_diff(&plus) < 1e-15);
        assert!(prod.partial_trace(&[2, 2], &[0]).unwrap().max_abs_diff(&p0) < 1e-15);

        // Bell state: both partial traces are I/2
        let mut bell = Op::zeros(4);
        for (i, j) in [(0, 0), (0, 3), (3, 0), (3, 3)] {
            bell.set(i, j, cre(0.5));
        }
        let half = Op::identity(2).scaled_re(0.5);
        assert!(bell.partial_trace(&[2, 2], &[0]).unwrap().max_abs_diff(&half) < 1e-15);
        assert!(bell.partial_trace(&[2, 2], &[1]).unwrap().max_abs_diff(&half) < 1e-15);
    }

    #[test]
    fn partial_trace_preserves_trace() {
        let h = random_hermitian(8, 3);
        let pt = h.partial_trace(&[2, 2, 2], &[0, 2]).unwrap();
        assert!((pt.trace() - h.trace()).norm() < 1e-12);
    }

    #[test]
    fn partial_trace_rejects_bad_dims() {
        let h = random_hermitian(8, 4);
        assert!(h.partial_trace(&[2, 2], &[0]).is_err());
        assert!(h.partial_trace(&[2, 2, 2], &[2, 0]).is_err());
    }
}
