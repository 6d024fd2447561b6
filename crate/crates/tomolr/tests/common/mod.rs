//! Shared fixtures for the integration suites: random states and POVMs,
//! dense oracle solves, orthogonal completions, and numeric helpers.
#![allow(dead_code)]

use nalgebra::DVector;
use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use tomolr::linalg::{
    decompose, C64, CMat, DensityMatrix, HermitianBasis, HermitianOperator, RMat, RVec,
    ThetaVector,
};
use tomolr::measurement::{design_matrix, probabilities, weight_dense, DesignMatrix, Povm, Weight};

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Full-rank random density matrix: rho = G G* / Tr(G G*) for a complex
/// Gaussian G.
pub fn ginibre_state(dim: usize, rng: &mut ChaCha12Rng) -> DensityMatrix {
    let g = CMat::from_fn(dim, dim, |_, _| {
        C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let m = &g * g.adjoint();
    let tr: f64 = (0..dim).map(|i| m[(i, i)].re).sum();
    DensityMatrix::new(m.map(|x| x / tr)).expect("a scaled Gram matrix is a state")
}

/// Haar-ish random unit ket from complex Gaussian entries.
pub fn random_ket(dim: usize, rng: &mut ChaCha12Rng) -> DVector<C64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        let n = v.norm();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

/// Incomplete POVM of `num_outcomes` scaled random rank-1 effects whose
/// design matrix has full column rank (resampled until it does).
pub fn random_full_rank_problem(
    num_qubits: usize,
    num_outcomes: usize,
    rng: &mut ChaCha12Rng,
) -> (Povm, DesignMatrix, HermitianBasis) {
    let basis = HermitianBasis::pauli(num_qubits).expect("qubit count in range");
    let dim = 1usize << num_qubits;
    let scale = 1.0 / num_outcomes as f64;
    loop {
        let effects: Vec<HermitianOperator> = (0..num_outcomes)
            .map(|_| {
                let ket = random_ket(dim, rng);
                let proj = (&ket * ket.adjoint()).map(|x| x * scale);
                HermitianOperator::new(proj).expect("scaled projector is an effect")
            })
            .collect();
        let povm = Povm::new(effects, false).expect("effects are PSD");
        let a = design_matrix(&povm, &basis).expect("shapes agree");
        if a.rank_full() {
            return (povm, a, basis);
        }
    }
}

/// A random full-rank regression instance: design, basis, true coordinates,
/// and outcome probabilities.
pub struct ProblemFixture {
    pub povm: Povm,
    pub a: DesignMatrix,
    pub basis: HermitianBasis,
    pub t: RVec,
    pub theta: ThetaVector,
    pub p: RVec,
}

pub fn random_problem(num_qubits: usize, num_outcomes: usize, rng: &mut ChaCha12Rng) -> ProblemFixture {
    let (povm, a, basis) = random_full_rank_problem(num_qubits, num_outcomes, rng);
    let rho = ginibre_state(1 << num_qubits, rng);
    let theta = decompose(&rho, &basis).expect("basis spans Hermitian space");
    let (p, _) = probabilities(&a, &theta).expect("valid state and POVM");
    let t = basis.trace_vector().clone();
    ProblemFixture { povm, a, basis, t, theta, p }
}

/// The complete one-qubit POVM built from six scaled eigenvector kets (the
/// x/y axes at weight 1/6 each sign, the z axis at weight 1/3 each sign).
pub fn six_vector_povm() -> Povm {
    let s6 = 1.0 / 6f64.sqrt();
    let s3 = 1.0 / 3f64.sqrt();
    let kets = [
        [C64::new(s6, 0.0), C64::new(s6, 0.0)],
        [C64::new(s6, 0.0), C64::new(-s6, 0.0)],
        [C64::new(s6, 0.0), C64::new(0.0, s6)],
        [C64::new(s6, 0.0), C64::new(0.0, -s6)],
        [C64::new(s3, 0.0), C64::new(0.0, 0.0)],
        [C64::new(0.0, 0.0), C64::new(s3, 0.0)],
    ];
    let effects = kets
        .iter()
        .map(|k| {
            let ket = DVector::from_row_slice(k);
            HermitianOperator::new(&ket * ket.adjoint()).expect("rank-1 effect")
        })
        .collect();
    Povm::new(effects, true).expect("the six effects sum to the identity")
}

/// Constrained ridge solution by an independent dense KKT factorization:
/// [2 A^T W A + 2 gamma I, t; t^T, 0] [theta; lambda] = [2 A^T W y; 1],
/// solved by LU.
pub fn kkt_oracle(a: &DesignMatrix, weight: &Weight, y: &RVec, t: &RVec, gamma: f64) -> RVec {
    let m = a.num_outcomes();
    let d2 = a.num_coords();
    let w = weight_dense(weight, m);
    let gram = a.entries().transpose() * &w * a.entries();
    let mut kkt = RMat::zeros(d2 + 1, d2 + 1);
    for i in 0..d2 {
        for j in 0..d2 {
            kkt[(i, j)] = 2.0 * gram[(i, j)];
        }
        kkt[(i, i)] += 2.0 * gamma;
        kkt[(i, d2)] = t[i];
        kkt[(d2, i)] = t[i];
    }
    let atwy = a.entries().transpose() * (&w * y);
    let mut rhs = RVec::zeros(d2 + 1);
    rhs.rows_mut(0, d2).copy_from(&(atwy * 2.0));
    rhs[d2] = 1.0;
    let sol = kkt.lu().solve(&rhs).expect("KKT system is nonsingular");
    sol.rows(0, d2).into_owned()
}

/// Dense pieces of the constrained ridge map: N = A^T W A + gamma I,
/// C = N^{-1}, and F = C - C t t^T C / (t^T C t).
pub fn dense_map_pieces(
    a: &DesignMatrix,
    weight: &Weight,
    t: &RVec,
    gamma: f64,
) -> (RMat, RMat, RMat) {
    let d2 = a.num_coords();
    let w = weight_dense(weight, a.num_outcomes());
    let mut n = a.entries().transpose() * &w * a.entries();
    for i in 0..d2 {
        n[(i, i)] += gamma;
    }
    let c = n.clone().try_inverse().expect("N is invertible");
    let ct = &c * t;
    let f = &c - &ct * ct.transpose() / t.dot(&ct);
    (n, c, f)
}

/// Dense ridge map of the free block: U = (K^T W K + gamma I)^{-1} K^T W.
pub fn dense_reduced_map(k: &DesignMatrix, weight: &Weight, gamma: f64) -> RMat {
    let d = k.num_coords();
    let w = weight_dense(weight, k.num_outcomes());
    let mut gram = k.entries().transpose() * &w * k.entries();
    for i in 0..d {
        gram[(i, i)] += gamma;
    }
    let inv = gram.try_inverse().expect("shifted Gram matrix is invertible");
    inv * k.entries().transpose() * &w
}

/// Random orthogonal completion whose first row is t/|t|, by Gram-Schmidt
/// over random Gaussian rows.
pub fn gram_schmidt_completion(t: &RVec, rng: &mut ChaCha12Rng) -> RMat {
    let n = t.len();
    let mut rows: Vec<RVec> = vec![t / t.norm()];
    while rows.len() < n {
        let mut v = RVec::from_fn(n, |_, _| rng.sample(StandardNormal));
        for r in &rows {
            let proj = r.dot(&v);
            v -= r * proj;
        }
        let norm = v.norm();
        if norm > 1e-6 {
            rows.push(v / norm);
        }
    }
    RMat::from_fn(n, n, |i, j| rows[i][j])
}

/// Central finite difference of `f` at `x`.
pub fn central_diff<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// Relative closeness |x - y| <= tol * (1 + |y|).
pub fn close_rel(x: f64, y: f64, tol: f64) -> bool {
    (x - y).abs() <= tol * (1.0 + y.abs())
}
