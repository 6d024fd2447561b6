//! Hermitian operator arithmetic, orthonormal operator bases, and the
//! conversion between density matrices and their real coordinate vectors.

use nalgebra::{Complex, DMatrix, DVector};

use crate::{tol, Error, Result};

pub type C64 = Complex<f64>;
pub type CMat = DMatrix<C64>;
pub type RMat = DMatrix<f64>;
pub type RVec = DVector<f64>;

/// Largest qubit count `pauli` will build a basis for. At 8 qubits the basis
/// already holds 65536 dense 256x256 matrices; anything beyond is a mistake.
pub const MAX_QUBITS: usize = 8;

fn max_asymmetry(m: &CMat) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in 0..=j {
            let dev = (m[(i, j)] - m[(j, i)].conj()).norm();
            if dev > worst {
                worst = dev;
            }
        }
    }
    worst
}

/// Trace of the product of two equal-sized square matrices, without forming
/// the product: sum over a,b of x[a,b] * y[b,a].
pub fn trace_product(x: &CMat, y: &CMat) -> C64 {
    let d = x.nrows();
    let mut acc = C64::new(0.0, 0.0);
    for b in 0..d {
        for a in 0..d {
            acc += x[(a, b)] * y[(b, a)];
        }
    }
    acc
}

/// A d x d complex matrix validated to be Hermitian at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    dim: usize,
    entries: CMat,
}

impl HermitianOperator {
    pub fn new(entries: CMat) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "operator must be square, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        let dev = max_asymmetry(&entries);
        if dev > tol::HERM {
            return Err(Error::NotHermitian(dev));
        }
        Ok(Self {
            dim: entries.nrows(),
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &CMat {
        &self.entries
    }

    /// Real trace (the imaginary part vanishes for Hermitian matrices).
    pub fn trace(&self) -> f64 {
        self.entries.trace().re
    }

    /// Hilbert-Schmidt inner product Tr(self * other); for Hermitian
    /// arguments this equals Tr(self^dag * other).
    pub fn hs_inner(&self, other: &Self) -> C64 {
        trace_product(&self.entries, &other.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.entries
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .fold(f64::INFINITY, |acc, v| acc.min(v))
    }
}

/// Ordered orthonormal basis of d^2 Hermitian operators together with its
/// trace vector (entry i = Tr(B_i)).
#[derive(Debug, Clone)]
pub struct HermitianBasis {
    dim: usize,
    elements: Vec<HermitianOperator>,
    trace_vector: RVec,
}

impl HermitianBasis {
    /// Wraps an arbitrary operator list, checking Hermiticity and
    /// orthonormality. For bases beyond 256 elements the pairwise check is
    /// subsampled deterministically; the diagonal (unit norm) is always
    /// checked in full.
    pub fn new(elements: Vec<HermitianOperator>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidArgument("empty basis".into()));
        }
        let dim = elements[0].dim();
        if elements.len() != dim * dim {
            return Err(Error::DimensionMismatch(format!(
                "basis over dimension {dim} needs {} elements, got {}",
                dim * dim,
                elements.len()
            )));
        }
        if let Some(e) = elements.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "mixed operator dimensions {dim} and {}",
                e.dim()
            )));
        }
        let n = elements.len();
        let mut worst = 0.0f64;
        for i in 0..n {
            let nrm = elements[i].hs_inner(&elements[i]);
            worst = worst.max((nrm.re - 1.0).abs()).max(nrm.im.abs());
        }
        if n <= 256 {
            for i in 0..n {
                for j in (i + 1)..n {
                    worst = worst.max(elements[i].hs_inner(&elements[j]).norm());
                }
            }
        } else {
            // Deterministic stride subsample of off-diagonal pairs.
            let mut k = 1usize;
            for i in (0..n).step_by(37) {
                for _ in 0..8 {
                    let j = (i + k * 131 + 1) % n;
                    if j != i {
                        worst = worst.max(elements[i].hs_inner(&elements[j]).norm());
                    }
                    k += 1;
                }
            }
        }
        if worst > tol::ORTH {
            return Err(Error::NotOrthonormal(worst));
        }
        let trace_vector = RVec::from_iterator(n, elements.iter().map(|e| e.trace()));
        Ok(Self {
            dim,
            elements,
            trace_vector,
        })
    }

    /// The scaled Pauli product basis for `num_qubits` qubits: element index
    /// i encodes the per-qubit labels (l_1,...,l_q) in base 4 with the first
    /// qubit as the most significant digit and the identity label first, so
    /// element 0 is I/sqrt(d) and the 2-qubit index works out to 4j + k.
    pub fn pauli(num_qubits: usize) -> Result<Self> {
        if num_qubits == 0 {
            return Err(Error::InvalidArgument("num_qubits must be >= 1".into()));
        }
        if num_qubits > MAX_QUBITS {
            return Err(Error::InvalidArgument(format!(
                "num_qubits {num_qubits} exceeds the cap of {MAX_QUBITS}"
            )));
        }
        let scale = 1.0 / 2.0f64.sqrt();
        let sigmas: [CMat; 4] = [
            CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]),
            CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
            CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]),
            CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
        ];
        let scaled: Vec<CMat> = sigmas.iter().map(|s| s.map(|x| x * scale)).collect();

        let dim = 1usize << num_qubits;
        let count = dim * dim;
        let mut elements = Vec::with_capacity(count);
        for idx in 0..count {
            let mut m: Option<CMat> = None;
            // Decode base-4 digits from the most significant down.
            for q in (0..num_qubits).rev() {
                let label = (idx >> (2 * q)) & 3;
                m = Some(match m {
                    None => scaled[label].clone(),
                    Some(acc) => acc.kronecker(&scaled[label]),
                });
            }
            let entries = m.expect("num_qubits >= 1");
            elements.push(HermitianOperator { dim, entries });
        }
        let trace_vector = RVec::from_iterator(count, elements.iter().map(|e| e.trace()));
        Ok(Self {
            dim,
            elements,
            trace_vector,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn element(&self, i: usize) -> &HermitianOperator {
        &self.elements[i]
    }

    pub fn elements(&self) -> &[HermitianOperator] {
        &self.elements
    }

    pub fn trace_vector(&self) -> &RVec {
        &self.trace_vector
    }
}

/// Trace-one positive semidefinite Hermitian matrix. PSD is enforced here
/// because values of this type act as ground-truth states; estimator outputs
/// are allowed to leave the PSD cone and stay plain Hermitian operators.
#[derive(Debug, Clone)]
pub struct DensityMatrix {
    dim: usize,
    matrix: CMat,
}

impl DensityMatrix {
    pub fn new(matrix: CMat) -> Result<Self> {
        let op = HermitianOperator::new(matrix)?;
        let tr = op.trace();
        if (tr - 1.0).abs() > tol::TRACE {
            return Err(Error::NotDensityMatrix(format!("trace is {tr}, not 1")));
        }
        let min_eig = op.min_eigenvalue();
        if min_eig < -tol::PSD {
            return Err(Error::NotDensityMatrix(format!(
                "smallest eigenvalue {min_eig:.3e} below -{:.1e}",
                tol::PSD
            )));
        }
        Ok(Self {
            dim: op.dim,
            matrix: op.entries,
        })
    }

    /// rho = |psi><psi| / <psi|psi>.
    pub fn from_pure(ket: &DVector<C64>) -> Result<Self> {
        let nrm2 = ket.iter().map(|x| x.norm_sqr()).sum::<f64>();
        if nrm2 <= 0.0 {
            return Err(Error::InvalidArgument("zero state vector".into()));
        }
        let d = ket.len();
        let mut m = CMat::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] = ket[i] * ket[j].conj() / c(nrm2, 0.0);
            }
        }
        Self::new(m)
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        let m = CMat::identity(dim, dim).map(|x| x / c(dim as f64, 0.0));
        Self { dim, matrix: m }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn matrix(&self) -> &CMat {
        &self.matrix
    }

    /// Tr(rho^2); equals the squared coordinate norm under any orthonormal
    /// Hermitian basis.
    pub fn purity(&self) -> f64 {
        trace_product(&self.matrix, &self.matrix).re
    }
}

/// Real coordinates of an operator under a HermitianBasis.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaVector {
    pub coords: RVec,
    pub basis_dim: usize,
}

impl ThetaVector {
    pub fn new(coords: RVec, basis_dim: usize) -> Result<Self> {
        if coords.len() != basis_dim * basis_dim {
            return Err(Error::DimensionMismatch(format!(
                "theta length {} does not match basis dimension {basis_dim}",
                coords.len()
            )));
        }
        Ok(Self { coords, basis_dim })
    }

    /// |theta^T Tr(B) - 1|.
    pub fn constraint_residual(&self, trace_vector: &RVec) -> f64 {
        (self.coords.dot(trace_vector) - 1.0).abs()
    }

    pub fn norm_squared(&self) -> f64 {
        self.coords.norm_squared()
    }
}

/// Coordinates of a state: theta_i = Re Tr(rho B_i). Errors if any trace
/// carries a non-negligible imaginary residue, which would mean the inputs
/// were not Hermitian to begin with.
pub fn decompose(rho: &DensityMatrix, basis: &HermitianBasis) -> Result<ThetaVector> {
    decompose_operator(rho.matrix(), basis)
}

/// Same as `decompose` but for an arbitrary Hermitian matrix.
pub fn decompose_operator(matrix: &CMat, basis: &HermitianBasis) -> Result<ThetaVector> {
    if matrix.nrows() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "operator dimension {} vs basis dimension {}",
            matrix.nrows(),
            basis.dim()
        )));
    }
    let mut coords = RVec::zeros(basis.len());
    for (i, b) in basis.elements().iter().enumerate() {
        let t = trace_product(matrix, b.entries());
        if t.im.abs() > tol::HERM {
            return Err(Error::NotHermitian(t.im.abs()));
        }
        coords[i] = t.re;
    }
    ThetaVector::new(coords, basis.dim())
}

/// rho(theta) = sum_i theta_i B_i. The result is Hermitian by construction
/// but not necessarily PSD, so it is returned as a plain operator.
pub fn reconstruct(theta: &ThetaVector, basis: &HermitianBasis) -> Result<HermitianOperator> {
    if theta.coords.len() != basis.len() {
        return Err(Error::DimensionMismatch(format!(
            "theta length {} vs basis size {}",
            theta.coords.len(),
            basis.len()
        )));
    }
    let d = basis.dim();
    let mut m = CMat::zeros(d, d);
    for (i, b) in basis.elements().iter().enumerate() {
        let w = c(theta.coords[i], 0.0);
        m.zip_apply(b.entries(), |acc, x| *acc += w * x);
    }
    HermitianOperator::new(m)
}

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_qubit_pauli_basis() {
        let basis = HermitianBasis::pauli(1).unwrap();
        assert_eq!(basis.len(), 4);
        assert_eq!(basis.dim(), 2);
        let s = 1.0 / 2.0f64.sqrt();
        // Identity element first.
        assert_abs_diff_eq!(basis.element(0).entries()[(0, 0)].re, s, epsilon = 1e-15);
        assert_abs_diff_eq!(basis.element(0).entries()[(1, 1)].re, s, epsilon = 1e-15);
        // sigma_x / sqrt(2)
        assert_abs_diff_eq!(basis.element(1).entries()[(0, 1)].re, s, epsilon = 1e-15);
        // sigma_y / sqrt(2)
        assert_abs_diff_eq!(basis.element(2).entries()[(1, 0)].im, s, epsilon = 1e-15);
        // sigma_z / sqrt(2)
        assert_abs_diff_eq!(basis.element(3).entries()[(1, 1)].re, -s, epsilon = 1e-15);
        let t = basis.trace_vector();
        assert_abs_diff_eq!(t[0], 2.0f64.sqrt(), epsilon = 1e-15);
        for i in 1..4 {
            assert_abs_diff_eq!(t[i], 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn two_qubit_trace_vector() {
        let basis = HermitianBasis::pauli(2).unwrap();
        assert_eq!(basis.len(), 16);
        assert_abs_diff_eq!(basis.trace_vector()[0], 2.0, epsilon = 1e-14);
        for i in 1..16 {
            assert_abs_diff_eq!(basis.trace_vector()[i], 0.0, epsilon = 1e-14);
        }
        assert_abs_diff_eq!(basis.trace_vector().norm(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn two_qubit_index_is_first_factor_major() {
        let basis = HermitianBasis::pauli(2).unwrap();
        let one = HermitianBasis::pauli(1).unwrap();
        // index 4j + k must equal (sigma_j/sqrt2) kron (sigma_k/sqrt2)
        for j in 0..4 {
            for k in 0..4 {
                let expect = one.element(j).entries().kronecker(one.element(k).entries());
                let got = basis.element(4 * j + k).entries();
                assert!((got - expect).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn pauli_orthonormality_full_and_sampled() {
        for q in [1usize, 2] {
            let basis = HermitianBasis::pauli(q).unwrap();
            let n = basis.len();
            for i in 0..n {
                for j in 0..n {
                    let g = basis.element(i).hs_inner(basis.element(j));
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!((g.re - expect).abs() < 1e-12 && g.im.abs() < 1e-12);
                }
            }
        }
        // Large basis: sampled pairs only, same tolerance.
        let basis = HermitianBasis::pauli(6).unwrap();
        let pairs = [
            (0usize, 1usize),
            (5, 77),
            (100, 101),
            (1, 4095),
            (2048, 2049),
            (17, 17),
            (333, 4000),
            (4095, 4095),
            (9, 1024),
            (64, 65),
            (7, 3333),
            (2, 3),
            (511, 512),
            (1023, 1024),
            (1500, 2500),
            (123, 321),
            (42, 8),
            (59, 30),
            (600, 601),
            (4094, 4095),
        ];
        for (i, j) in pairs {
            let g = basis.element(i).hs_inner(basis.element(j));
            let expect = if i == j { 1.0 } else { 0.0 };
            assert!(
                (g.re - expect).abs() < 1e-12 && g.im.abs() < 1e-12,
                "pair ({i},{j}) off"
            );
        }
    }

    #[test]
    fn qubit_cap_enforced() {
        assert!(HermitianBasis::pauli(0).is_err());
        assert!(HermitianBasis::pauli(9).is_err());
    }

    #[test]
    fn decompose_maximally_mixed() {
        let basis = HermitianBasis::pauli(1).unwrap();
        let rho = DensityMatrix::maximally_mixed(2);
        let theta = decompose(&rho, &basis).unwrap();
        assert_abs_diff_eq!(theta.coords[0], 1.0 / 2.0f64.sqrt(), epsilon = 1e-14);
        for i in 1..4 {
            assert_abs_diff_eq!(theta.coords[i], 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn decompose_ground_state() {
        let basis = HermitianBasis::pauli(1).unwrap();
        let ket = DVector::from_vec(vec![c(1.0, 0.0), c(0.0, 0.0)]);
        let rho = DensityMatrix::from_pure(&ket).unwrap();
        let theta = decompose(&rho, &basis).unwrap();
        let s = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(theta.coords[0], s, epsilon = 1e-14);
        assert_abs_diff_eq!(theta.coords[1], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(theta.coords[2], 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(theta.coords[3], s, epsilon = 1e-14);
        assert_abs_diff_eq!(theta.constraint_residual(basis.trace_vector()), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn reconstruct_identity_coordinates() {
        let basis = HermitianBasis::pauli(1).unwrap();
        let theta =
            ThetaVector::new(RVec::from_vec(vec![1.0 / 2.0f64.sqrt(), 0.0, 0.0, 0.0]), 2).unwrap();
        let op = reconstruct(&theta, &basis).unwrap();
        let expect = CMat::identity(2, 2).map(|x| x * c(0.5, 0.0));
        assert!((op.entries() - expect).norm() < 1e-14);
    }

    #[test]
    fn non_hermitian_rejected() {
        let m = CMat::from_row_slice(
            2,
            2,
            &[c(1.0, 0.0), c(1.0, 0.5), c(1.0, 0.5), c(0.0, 0.0)],
        );
        assert!(matches!(
            HermitianOperator::new(m),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn density_matrix_gates() {
        // trace off
        let m = CMat::identity(2, 2);
        assert!(DensityMatrix::new(m).is_err());
        // negative eigenvalue
        let m = CMat::from_row_slice(
            2,
            2,
            &[c(1.5, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-0.5, 0.0)],
        );
        assert!(DensityMatrix::new(m).is_err());
    }
}
