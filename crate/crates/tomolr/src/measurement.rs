//! POVM descriptions, the design matrix linking state coordinates to outcome
//! probabilities, count simulators, and the diagonal weight matrices used by
//! the weighted estimators.

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::Binomial;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg::{c, trace_product, CMat, HermitianBasis, HermitianOperator, RMat, RVec, ThetaVector};
use crate::{tol, Error, Result};

/// Measurement set {E_m}. `complete` records whether sum(E_m) = I is
/// enforced; POVMs used for collective sampling must be complete.
#[derive(Debug, Clone)]
pub struct Povm {
    dim: usize,
    effects: Vec<HermitianOperator>,
    complete: bool,
}

impl Povm {
    pub fn new(effects: Vec<HermitianOperator>, complete: bool) -> Result<Self> {
        if effects.is_empty() {
            return Err(Error::InvalidArgument("POVM needs at least one effect".into()));
        }
        let dim = effects[0].dim();
        if let Some(e) = effects.iter().find(|e| e.dim() != dim) {
            return Err(Error::DimensionMismatch(format!(
                "effect dimensions {} and {} mixed",
                dim,
                e.dim()
            )));
        }
        for (index, e) in effects.iter().enumerate() {
            let min_eig = e.min_eigenvalue();
            if min_eig < -tol::PSD {
                return Err(Error::EffectNotPsd { index, min_eig });
            }
        }
        if complete {
            let mut sum = CMat::zeros(dim, dim);
            for e in &effects {
                sum += e.entries();
            }
            let dev = (sum - CMat::identity(dim, dim)).norm();
            if dev > tol::POVM {
                return Err(Error::IncompletePovm(dev));
            }
        }
        Ok(Self { dim, effects, complete })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.effects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effects.is_empty()
    }

    pub fn complete(&self) -> bool {
        self.complete
    }

    pub fn effects(&self) -> &[HermitianOperator] {
        &self.effects
    }

    pub fn to_json(&self) -> String {
        let effects: Vec<Vec<Vec<[f64; 2]>>> = self
            .effects
            .iter()
            .map(|e| {
                (0..self.dim)
                    .map(|i| {
                        (0..self.dim)
                            .map(|j| {
                                let x = e.entries()[(i, j)];
                                [x.re, x.im]
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let doc = PovmJson { dim: self.dim, effects, complete: self.complete };
        serde_json::to_string_pretty(&doc).expect("POVM serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PovmJson =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("POVM JSON: {e}")))?;
        let mut effects = Vec::with_capacity(doc.effects.len());
        for rows in &doc.effects {
            if rows.len() != doc.dim || rows.iter().any(|r| r.len() != doc.dim) {
                return Err(Error::Config(format!(
                    "POVM JSON: effect is not a {0}x{0} matrix",
                    doc.dim
                )));
            }
            let m = CMat::from_fn(doc.dim, doc.dim, |i, j| c(rows[i][j][0], rows[i][j][1]));
            effects.push(HermitianOperator::new(m)?);
        }
        Self::new(effects, doc.complete)
    }
}

#[derive(Serialize, Deserialize)]
struct PovmJson {
    dim: usize,
    effects: Vec<Vec<Vec<[f64; 2]>>>,
    complete: bool,
}

/// M x d^2 real matrix with A[m][i] = Tr(E_m B_i).
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    entries: RMat,
    rank_full: bool,
}

impl DesignMatrix {
    /// Wraps a raw matrix, deciding `rank_full` by the singular-value
    /// threshold used in `design_matrix`.
    pub fn from_entries(entries: RMat) -> Self {
        let rank_full = full_column_rank(&entries);
        Self { entries, rank_full }
    }

    pub fn entries(&self) -> &RMat {
        &self.entries
    }

    pub fn rank_full(&self) -> bool {
        self.rank_full
    }

    pub fn num_outcomes(&self) -> usize {
        self.entries.nrows()
    }

    pub fn num_coords(&self) -> usize {
        self.entries.ncols()
    }
}

fn full_column_rank(a: &RMat) -> bool {
    let (m, n) = a.shape();
    if m < n {
        return false;
    }
    let sv = a.clone().singular_values();
    let smax = sv.max();
    let smin = sv.min();
    smin > n as f64 * f64::EPSILON * smax
}

/// Builds the design matrix of a POVM under a basis. Each trace must be real
/// up to the Hermitian tolerance; a larger imaginary residue means the
/// inputs were inconsistent.
pub fn design_matrix(povm: &Povm, basis: &HermitianBasis) -> Result<DesignMatrix> {
    if povm.dim() != basis.dim() {
        return Err(Error::DimensionMismatch(format!(
            "POVM dimension {} vs basis dimension {}",
            povm.dim(),
            basis.dim()
        )));
    }
    let m = povm.len();
    let k = basis.len();
    let rows: Vec<Result<Vec<f64>>> = povm
        .effects()
        .par_iter()
        .map(|e| {
            let mut row = Vec::with_capacity(k);
            for b in basis.elements() {
                let t = trace_product(e.entries(), b.entries());
                if t.im.abs() > tol::HERM {
                    return Err(Error::NotHermitian(t.im.abs()));
                }
                row.push(t.re);
            }
            Ok(row)
        })
        .collect();
    let mut entries = RMat::zeros(m, k);
    for (i, row) in rows.into_iter().enumerate() {
        let row = row?;
        for (j, v) in row.into_iter().enumerate() {
            entries[(i, j)] = v;
        }
    }
    Ok(DesignMatrix::from_entries(entries))
}

/// p = A theta, clipped into [0,1]. Returns the number of entries that had
/// to be clipped from roundoff-sized excursions; anything beyond the PSD
/// tolerance is reported as an error.
pub fn probabilities(a: &DesignMatrix, theta: &ThetaVector) -> Result<(RVec, usize)> {
    if a.num_coords() != theta.coords.len() {
        return Err(Error::DimensionMismatch(format!(
            "design matrix has {} columns, theta has {} entries",
            a.num_coords(),
            theta.coords.len()
        )));
    }
    let mut p = a.entries() * &theta.coords;
    let mut clipped = 0usize;
    for i in 0..p.len() {
        let v = p[i];
        if v < -tol::PSD || v > 1.0 + tol::PSD {
            return Err(Error::InvalidArgument(format!(
                "probability {i} = {v} outside [0,1] beyond tolerance"
            )));
        }
        if v < 0.0 {
            p[i] = 0.0;
            clipped += 1;
        } else if v > 1.0 {
            p[i] = 1.0;
            clipped += 1;
        }
    }
    Ok((p, clipped))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// n independent trials per effect; counts are independent binomials.
    Separate,
    /// One multinomial draw of n trials over all outcomes.
    Collective,
}

/// Empirical outcome frequencies with their raw counts and provenance.
#[derive(Debug, Clone)]
pub struct MeasurementRecord {
    pub mode: Mode,
    pub n: u64,
    pub counts: Vec<u64>,
    pub seed: u64,
    pub frequencies: RVec,
}

impl MeasurementRecord {
    pub fn from_counts(mode: Mode, n: u64, counts: Vec<u64>, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("n must be >= 1".into()));
        }
        match mode {
            Mode::Separate => {
                if let Some(c) = counts.iter().find(|&&c| c > n) {
                    return Err(Error::InvalidArgument(format!(
                        "count {c} exceeds {n} trials"
                    )));
                }
            }
            Mode::Collective => {
                let total: u64 = counts.iter().sum();
                if total != n {
                    return Err(Error::InvalidArgument(format!(
                        "collective counts sum to {total}, not {n}"
                    )));
                }
            }
        }
        let frequencies =
            RVec::from_iterator(counts.len(), counts.iter().map(|&c| c as f64 / n as f64));
        Ok(Self { mode, n, counts, seed, frequencies })
    }

    /// Analysis-side constructor from exact frequencies (for instance the
    /// true probabilities). The stored counts are rounded and only
    /// approximate; such records are meant for weight construction, not for
    /// serialization round-trips.
    pub fn from_frequencies(frequencies: RVec, n: u64, mode: Mode) -> Self {
        let counts = frequencies
            .iter()
            .map(|&f| (f * n as f64).round().max(0.0) as u64)
            .collect();
        Self { mode, n, counts, seed: 0, frequencies }
    }

    pub fn to_json(&self) -> String {
        let doc = RecordJson {
            mode: self.mode,
            n: self.n,
            counts: self.counts.clone(),
            seed: self.seed,
        };
        serde_json::to_string_pretty(&doc).expect("record serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: RecordJson = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("measurement record JSON: {e}")))?;
        Self::from_counts(doc.mode, doc.n, doc.counts, doc.seed)
    }
}

#[derive(Serialize, Deserialize)]
struct RecordJson {
    mode: Mode,
    n: u64,
    counts: Vec<u64>,
    seed: u64,
}

/// counts[m] ~ Binomial(n, p_m), independent across m.
pub fn sample_separate(p: &RVec, n: u64, seed: u64) -> Result<MeasurementRecord> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut counts = Vec::with_capacity(p.len());
    for &pm in p.iter() {
        if !(0.0..=1.0).contains(&pm) {
            return Err(Error::InvalidArgument(format!("probability {pm} outside [0,1]")));
        }
        let dist = Binomial::new(n, pm)
            .map_err(|e| Error::InvalidArgument(format!("binomial: {e}")))?;
        counts.push(dist.sample(&mut rng));
    }
    MeasurementRecord::from_counts(Mode::Separate, n, counts, seed)
}

/// counts ~ Multinomial(n, p), drawn exactly through the chain of
/// conditional binomials. Requires sum(p) = 1 up to the POVM tolerance and
/// renormalizes internally.
pub fn sample_collective(p: &RVec, n: u64, seed: u64) -> Result<MeasurementRecord> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be >= 1".into()));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > tol::POVM {
        return Err(Error::InvalidArgument(format!(
            "collective sampling needs a complete outcome set; probabilities sum to {total}"
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let m = p.len();
    let mut counts = vec![0u64; m];
    let mut remaining_trials = n;
    let mut remaining_mass = total;
    for i in 0..m {
        if remaining_trials == 0 {
            break;
        }
        if i == m - 1 {
            counts[i] = remaining_trials;
            break;
        }
        let cond = if remaining_mass > 0.0 {
            (p[i] / remaining_mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let dist = Binomial::new(remaining_trials, cond)
            .map_err(|e| Error::InvalidArgument(format!("binomial: {e}")))?;
        let draw = dist.sample(&mut rng);
        counts[i] = draw;
        remaining_trials -= draw;
        remaining_mass -= p[i];
    }
    MeasurementRecord::from_counts(Mode::Collective, n, counts, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightSource {
    TrueP,
    EmpiricalClamped,
}

/// Diagonal of W = P^{-1} = n diag(1/(p_m - p_m^2)).
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    pub diag: RVec,
    pub n: u64,
    pub source: WeightSource,
    pub clamp_count: usize,
}

/// Weight used by an estimator: either the identity (unweighted) or a
/// diagonal inverse-variance matrix.
#[derive(Debug, Clone)]
pub enum Weight {
    Identity,
    Diag(WeightMatrix),
}

impl Weight {
    pub fn clamp_count(&self) -> usize {
        match self {
            Weight::Identity => 0,
            Weight::Diag(w) => w.clamp_count,
        }
    }

    /// W x (row scaling).
    pub fn scale_rows(&self, x: &RMat) -> RMat {
        match self {
            Weight::Identity => x.clone(),
            Weight::Diag(w) => {
                let mut out = x.clone();
                for (i, &d) in w.diag.iter().enumerate() {
                    out.row_mut(i).scale_mut(d);
                }
                out
            }
        }
    }

    /// W^{1/2} x (row scaling by sqrt of the diagonal).
    pub fn sqrt_scale_rows(&self, x: &RMat) -> RMat {
        match self {
            Weight::Identity => x.clone(),
            Weight::Diag(w) => {
                let mut out = x.clone();
                for (i, &d) in w.diag.iter().enumerate() {
                    out.row_mut(i).scale_mut(d.sqrt());
                }
                out
            }
        }
    }

    pub fn scale_vec(&self, v: &RVec) -> RVec {
        match self {
            Weight::Identity => v.clone(),
            Weight::Diag(w) => v.component_mul(&w.diag),
        }
    }

    pub fn sqrt_scale_vec(&self, v: &RVec) -> RVec {
        match self {
            Weight::Identity => v.clone(),
            Weight::Diag(w) => {
                RVec::from_iterator(v.len(), v.iter().zip(w.diag.iter()).map(|(&x, &d)| x * d.sqrt()))
            }
        }
    }

    /// r^T W r.
    pub fn quad(&self, r: &RVec) -> f64 {
        match self {
            Weight::Identity => r.norm_squared(),
            Weight::Diag(w) => r
                .iter()
                .zip(w.diag.iter())
                .map(|(&x, &d)| x * x * d)
                .sum(),
        }
    }

    /// W^{-1} x (row scaling by the inverse diagonal).
    pub fn inv_scale_rows(&self, x: &RMat) -> RMat {
        match self {
            Weight::Identity => x.clone(),
            Weight::Diag(w) => {
                let mut out = x.clone();
                for (i, &d) in w.diag.iter().enumerate() {
                    out.row_mut(i).scale_mut(1.0 / d);
                }
                out
            }
        }
    }
}

/// W from the true probabilities; every p_m must sit strictly inside (0,1).
pub fn weight_matrix_true(p: &RVec, n: u64) -> Result<WeightMatrix> {
    for (index, &pm) in p.iter().enumerate() {
        if pm < tol::EPS_CLAMP || pm > 1.0 - tol::EPS_CLAMP {
            return Err(Error::DegenerateProbability { index, value: pm });
        }
    }
    let diag = RVec::from_iterator(p.len(), p.iter().map(|&pm| n as f64 / (pm - pm * pm)));
    Ok(WeightMatrix { diag, n, source: WeightSource::TrueP, clamp_count: 0 })
}

/// W from empirical frequencies, with each p-hat clamped into
/// [eps_clamp, 1 - eps_clamp] before inversion.
pub fn weight_matrix_empirical(record: &MeasurementRecord, eps_clamp: f64) -> WeightMatrix {
    let n = record.n;
    let mut clamp_count = 0usize;
    let diag = RVec::from_iterator(
        record.frequencies.len(),
        record.frequencies.iter().map(|&f| {
            let clamped = f.clamp(eps_clamp, 1.0 - eps_clamp);
            if clamped != f {
                clamp_count += 1;
            }
            n as f64 / (clamped - clamped * clamped)
        }),
    );
    WeightMatrix { diag, n, source: WeightSource::EmpiricalClamped, clamp_count }
}

/// Under-complete measurement set of +1-eigenspace projectors Q_{j_k+} of
/// distinct random non-identity Pauli tensor words (identity factors allowed,
/// the all-identity word excluded). Each effect is the unit projector itself:
/// in separate mode every projector is measured on its own batch of copies as
/// a binary outcome with click probability Tr(Q_{j_k+} rho). The set is not
/// complete, so collective sampling does not apply.
pub fn pauli_projector_povm(num_qubits: usize, num_projectors: usize, seed: u64) -> Result<Povm> {
    if num_qubits == 0 {
        return Err(Error::InvalidArgument("num_qubits must be >= 1".into()));
    }
    let word_count = 4usize.pow(num_qubits as u32) - 1;
    if num_projectors == 0 || num_projectors > word_count {
        return Err(Error::InvalidArgument(format!(
            "num_projectors must be in 1..={word_count} for {num_qubits} qubits"
        )));
    }
    let mut word_ids: Vec<usize> = (1..=word_count).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    word_ids.shuffle(&mut rng);
    word_ids.truncate(num_projectors);

    let sigmas: [CMat; 4] = [
        CMat::identity(2, 2),
        CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)]),
        CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(0.0, -1.0), c(0.0, 1.0), c(0.0, 0.0)]),
        CMat::from_row_slice(2, 2, &[c(1.0, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(-1.0, 0.0)]),
    ];
    let dim = 1usize << num_qubits;
    let mut effects = Vec::with_capacity(num_projectors);
    for id in word_ids {
        let mut word: Option<CMat> = None;
        let mut rest = id;
        for _ in 0..num_qubits {
            let label = rest % 4;
            rest /= 4;
            word = Some(match word {
                None => sigmas[label].clone(),
                Some(acc) => acc.kronecker(&sigmas[label]),
            });
        }
        let pauli = word.expect("num_qubits >= 1");
        let projector = (CMat::identity(dim, dim) + pauli).map(|x| x * c(0.5, 0.0));
        effects.push(HermitianOperator::new(projector)?);
    }
    Povm::new(effects, false)
}

/// Convenience: dense symmetric matrix from a diagonal weight, for tests and
/// MSE assembly at small dimensions.
pub fn weight_dense(weight: &Weight, m: usize) -> RMat {
    match weight {
        Weight::Identity => RMat::identity(m, m),
        Weight::Diag(w) => RMat::from_diagonal(&w.diag),
    }
}

/// P = diag(p - p^2)/n, the true noise covariance of separate-mode
/// frequencies.
pub fn noise_covariance_diag(p: &RVec, n: u64) -> RVec {
    RVec::from_iterator(p.len(), p.iter().map(|&pm| (pm - pm * pm) / n as f64))
}
