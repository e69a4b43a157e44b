//! Generalized estimating equation quantities.
//!
//! For working covariance `G_i^{1/2} R G_i^{1/2}`, with `G_i` the diagonal of
//! variances `v(mu_ij)`:
//!
//! ```text
//! psi(beta) = (1/n) sum_i X_i' G_i^{1/2} R^{-1} G_i^{-1/2} (Y_i - mu_i)
//! S(beta)   = (1/n) sum_i X_i' G_i^{1/2} R^{-1} G_i^{1/2} X_i
//! V(beta)   = (1/n) sum_i X_i' G_i^{1/2} R^{-1} e_i e_i' R^{-1} G_i^{1/2} X_i
//! ```
//!
//! where `e_i = G_i^{-1/2} (Y_i - mu_i)` are the standardized residuals.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::ClusteredDataset;
use crate::error::{Error, Result};
use crate::family::Family;

/// Variances below this are treated as singular.
pub const MIN_VARIANCE: f64 = 1e-10;
/// Condition number above which inverting a working correlation logs a warning.
pub const CONDITION_WARNING: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationKind {
    Independence,
    Ar1,
    Exchangeable,
    Unstructured,
}

impl std::str::FromStr for CorrelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "independence" | "independent" | "ind" => Ok(Self::Independence),
            "ar1" | "ar-1" | "autoregressive" => Ok(Self::Ar1),
            "exchangeable" | "exch" | "cs" => Ok(Self::Exchangeable),
            "unstructured" | "un" => Ok(Self::Unstructured),
            other => Err(Error::InvalidArgument(format!("unknown correlation structure '{other}'"))),
        }
    }
}

/// How an unstructured estimate treats clusters of unequal size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnstructuredPooling {
    /// Require every cluster to have the same size.
    #[default]
    EqualSizesOnly,
    /// Average over the clusters of maximal size only; smaller clusters use
    /// the upper-left block.
    MaxSizeClusters,
}

/// Working correlation structure with its nuisance parameter.
#[derive(Debug, Clone, PartialEq)]
pub enum WorkingCorrelation {
    Independence,
    Ar1(f64),
    Exchangeable(f64),
    Unstructured(DMatrix<f64>),
}

impl WorkingCorrelation {
    pub fn kind(&self) -> CorrelationKind {
        match self {
            Self::Independence => CorrelationKind::Independence,
            Self::Ar1(_) => CorrelationKind::Ar1,
            Self::Exchangeable(_) => CorrelationKind::Exchangeable,
            Self::Unstructured(_) => CorrelationKind::Unstructured,
        }
    }

    /// Scalar parameter for AR1 and exchangeable structures.
    pub fn gamma(&self) -> Option<f64> {
        match self {
            Self::Ar1(g) | Self::Exchangeable(g) => Some(*g),
            _ => None,
        }
    }

    /// The `m x m` correlation matrix for a cluster of size `m`.
    pub fn matrix(&self, m: usize) -> Result<DMatrix<f64>> {
        match self {
            Self::Independence => Ok(DMatrix::identity(m, m)),
            Self::Ar1(g) => {
                if !(g.abs() < 1.0) {
                    return Err(Error::InvalidArgument(format!("AR1 parameter {g} outside (-1, 1)")));
                }
                Ok(DMatrix::from_fn(m, m, |j, k| g.powi((j as i32 - k as i32).abs())))
            }
            Self::Exchangeable(g) => {
                let lower = if m > 1 { -1.0 / (m as f64 - 1.0) } else { f64::NEG_INFINITY };
                if !(*g > lower && *g < 1.0) {
                    return Err(Error::InvalidArgument(format!(
                        "exchangeable parameter {g} outside ({lower}, 1) for cluster size {m}"
                    )));
                }
                Ok(DMatrix::from_fn(m, m, |j, k| if j == k { 1.0 } else { *g }))
            }
            Self::Unstructured(r) => {
                if m > r.nrows() {
                    return Err(Error::Dimension(format!(
                        "unstructured correlation is {0}x{0}, cluster size {m}",
                        r.nrows()
                    )));
                }
                Ok(r.view((0, 0), (m, m)).clone_owned())
            }
        }
    }

    /// Inverse of [`matrix`](Self::matrix) via Cholesky.
    pub fn inverse(&self, m: usize) -> Result<DMatrix<f64>> {
        let r = self.matrix(m)?;
        if matches!(self, Self::Independence) {
            return Ok(r);
        }
        spd_inverse(r, &format!("working correlation of size {m}"))
    }

    /// Inverses for every size `0..=max_size`, indexed by size.
    pub fn inverses(&self, sizes: &[usize]) -> Result<Vec<Option<DMatrix<f64>>>> {
        let max = sizes.iter().copied().max().unwrap_or(0);
        let mut out = vec![None; max + 1];
        for &m in sizes {
            if out[m].is_none() {
                out[m] = Some(self.inverse(m)?);
            }
        }
        Ok(out)
    }
}

pub(crate) fn spd_inverse(r: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = r.clone().symmetric_eigen();
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if lo > 0.0 && hi / lo > CONDITION_WARNING {
        log::warn!("{what} has condition number {:.3e}", hi / lo);
    }
    let chol = r
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))?;
    Ok(chol.inverse())
}

/// Stacked per-observation mean, standard deviation and standardized residual.
#[derive(Debug, Clone)]
pub(crate) struct ObservationTerms {
    pub mu: DVector<f64>,
    pub sd: DVector<f64>,
    pub eps: DVector<f64>,
}

pub(crate) fn observation_terms(
    dataset: &ClusteredDataset,
    family: Family,
    beta: &DVector<f64>,
) -> Result<ObservationTerms> {
    if beta.len() != dataset.p() {
        return Err(Error::Dimension(format!(
            "beta has length {}, dataset has p = {}",
            beta.len(),
            dataset.p()
        )));
    }
    let eta = dataset.x() * beta;
    let nobs = eta.len();
    let mut mu = DVector::zeros(nobs);
    let mut sd = DVector::zeros(nobs);
    let mut eps = DVector::zeros(nobs);
    for i in 0..dataset.n() {
        for (j, r) in dataset.cluster_range(i).enumerate() {
            if !eta[r].is_finite() {
                return Err(Error::Domain(format!("non-finite linear predictor in cluster {i}")));
            }
            let m = family.mu(eta[r]);
            let v = family.variance(m);
            if !(v >= MIN_VARIANCE) {
                return Err(Error::SingularVariance {
                    cluster: i,
                    observation: j,
                    variance: v,
                });
            }
            mu[r] = m;
            sd[r] = v.sqrt();
            eps[r] = (dataset.y()[r] - m) / sd[r];
        }
    }
    Ok(ObservationTerms { mu, sd, eps })
}

/// `(y_ij - mu_ij) / v(mu_ij)^{1/2}`, one vector per cluster.
pub fn standardized_residuals(
    dataset: &ClusteredDataset,
    family: Family,
    beta: &DVector<f64>,
) -> Result<Vec<DVector<f64>>> {
    let terms = observation_terms(dataset, family, beta)?;
    Ok((0..dataset.n())
        .map(|i| {
            let r = dataset.cluster_range(i);
            terms.eps.rows(r.start, r.len()).clone_owned()
        })
        .collect())
}

/// Moment estimate of the working correlation at `beta_hat`.
pub fn estimate_gamma(
    dataset: &ClusteredDataset,
    family: Family,
    beta_hat: &DVector<f64>,
    kind: CorrelationKind,
) -> Result<WorkingCorrelation> {
    estimate_gamma_with(dataset, family, beta_hat, kind, UnstructuredPooling::default())
}

pub fn estimate_gamma_with(
    dataset: &ClusteredDataset,
    family: Family,
    beta_hat: &DVector<f64>,
    kind: CorrelationKind,
    pooling: UnstructuredPooling,
) -> Result<WorkingCorrelation> {
    if dataset.n() < 2 {
        return Err(Error::Data("estimating a working correlation needs at least 2 clusters".into()));
    }
    if kind == CorrelationKind::Independence {
        return Ok(WorkingCorrelation::Independence);
    }
    let eps = standardized_residuals(dataset, family, beta_hat)?;
    match kind {
        CorrelationKind::Independence => unreachable!(),
        CorrelationKind::Ar1 => {
            let (mut num, mut den) = (0.0, 0usize);
            for e in &eps {
                num += e.as_slice().windows(2).map(|w| w[0] * w[1]).sum::<f64>();
                den += e.len() - 1;
            }
            let g = if den > 0 { num / den as f64 } else { 0.0 };
            Ok(WorkingCorrelation::Ar1(g.clamp(-0.99, 0.99)))
        }
        CorrelationKind::Exchangeable => {
            let (mut num, mut den) = (0.0, 0usize);
            for e in &eps {
                let s: f64 = e.sum();
                num += s * s - e.norm_squared();
                den += e.len() * (e.len() - 1);
            }
            let g = if den > 0 { num / den as f64 } else { 0.0 };
            let m_max = dataset.max_cluster_size();
            let lower = if m_max > 1 { -1.0 / (m_max as f64 - 1.0) + 0.01 } else { -0.99 };
            Ok(WorkingCorrelation::Exchangeable(g.clamp(lower, 0.99)))
        }
        CorrelationKind::Unstructured => {
            let m_max = dataset.max_cluster_size();
            let equal = eps.iter().all(|e| e.len() == m_max);
            if !equal && pooling == UnstructuredPooling::EqualSizesOnly {
                return Err(Error::Data(
                    "unstructured working correlation requires equal cluster sizes; \
                     use a structured correlation or max-size pooling"
                        .into(),
                ));
            }
            let used: Vec<&DVector<f64>> = eps.iter().filter(|e| e.len() == m_max).collect();
            let mut r = DMatrix::zeros(m_max, m_max);
            for e in &used {
                r.ger(1.0, e, e, 1.0);
            }
            r /= used.len() as f64;
            let eig = r.clone().symmetric_eigen().eigenvalues;
            if !(eig.min() > 1e-10 * eig.amax().max(1.0)) {
                return Err(Error::NotPositiveDefinite(
                    "unstructured moment estimate; use a structured working correlation".into(),
                ));
            }
            Ok(WorkingCorrelation::Unstructured(r))
        }
    }
}

/// Estimating function with its sensitivity and variability matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct GeeMatrices {
    pub psi: DVector<f64>,
    pub s: DMatrix<f64>,
    pub v: DMatrix<f64>,
}

struct ClusterBlock {
    /// `G^{1/2} X_i`
    b: DMatrix<f64>,
    /// `R^{-1} e_i`
    rinv_eps: DVector<f64>,
}

fn cluster_blocks<'a>(
    dataset: &'a ClusteredDataset,
    terms: &'a ObservationTerms,
    inverses: &'a [Option<DMatrix<f64>>],
) -> impl Iterator<Item = (usize, ClusterBlock)> + 'a {
    (0..dataset.n()).map(move |i| {
        let c = dataset.cluster(i);
        let r = dataset.cluster_range(i);
        let sd = terms.sd.rows(r.start, r.len());
        let mut b = c.x.clone_owned();
        for (mut row, s) in b.row_iter_mut().zip(sd.iter()) {
            row *= *s;
        }
        let rinv = inverses[c.size()].as_ref().unwrap();
        let rinv_eps = rinv * terms.eps.rows(r.start, r.len());
        (i, ClusterBlock { b, rinv_eps })
    })
}

/// `psi(beta)` alone; cheaper than [`gee_matrices`].
pub fn psi(
    dataset: &ClusteredDataset,
    family: Family,
    beta: &DVector<f64>,
    corr: &WorkingCorrelation,
) -> Result<DVector<f64>> {
    let terms = observation_terms(dataset, family, beta)?;
    let inverses = corr.inverses(&dataset.sizes())?;
    let mut out = DVector::zeros(dataset.p());
    for (_, blk) in cluster_blocks(dataset, &terms, &inverses) {
        out.gemv_tr(1.0, &blk.b, &blk.rinv_eps, 1.0);
    }
    Ok(out / dataset.n() as f64)
}

/// `psi(beta)` and `S(beta)` without the variability matrix.
pub fn psi_and_sensitivity(
    dataset: &ClusteredDataset,
    family: Family,
    beta: &DVector<f64>,
    corr: &WorkingCorrelation,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let terms = observation_terms(dataset, family, beta)?;
    let inverses = corr.inverses(&dataset.sizes())?;
    let p = dataset.p();
    let mut psi = DVector::zeros(p);
    let mut s = DMatrix::zeros(p, p);
    for (i, blk) in cluster_blocks(dataset, &terms, &inverses) {
        psi.gemv_tr(1.0, &blk.b, &blk.rinv_eps, 1.0);
        let rinv = inverses[dataset.cluster_size(i)].as_ref().unwrap();
        let c = rinv * &blk.b;
        s.gemm_tr(1.0, &blk.b, &c, 1.0);
    }
    let n = dataset.n() as f64;
    Ok((psi / n, symmetrize(s / n)))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Evaluates `psi`, `S` and the sandwich variability matrix at `beta`.
pub fn gee_matrices(
    dataset: &ClusteredDataset,
    family: Family,
    beta: &DVector<f64>,
    corr: &WorkingCorrelation,
) -> Result<GeeMatrices> {
    let terms = observation_terms(dataset, family, beta)?;
    let inverses = corr.inverses(&dataset.sizes())?;
    let p = dataset.p();
    let n = dataset.n();
    let mut psi = DVector::zeros(p);
    let mut s = DMatrix::zeros(p, p);
    let mut u = DMatrix::zeros(n, p);
    for (i, blk) in cluster_blocks(dataset, &terms, &inverses) {
        let ui = blk.b.tr_mul(&blk.rinv_eps);
        psi += &ui;
        u.set_row(i, &ui.transpose());
        let rinv = inverses[dataset.cluster_size(i)].as_ref().unwrap();
        let c = rinv * &blk.b;
        s.gemm_tr(1.0, &blk.b, &c, 1.0);
    }
    let nf = n as f64;
    let v = u.tr_mul(&u) / nf;
    Ok(GeeMatrices {
        psi: psi / nf,
        s: symmetrize(s / nf),
        v: symmetrize(v),
    })
}

/// The three terms of `d psi / d beta' = -S + E_n + F_n`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianParts {
    pub s_term: DMatrix<f64>,
    pub e_n: DMatrix<f64>,
    pub f_n: DMatrix<f64>,
}

impl JacobianParts {
    /// `-S + E_n + F_n`.
    pub fn jacobian(&self) -> DMatrix<f64> {
        &self.e_n + &self.f_n - &self.s_term
    }
}

/// Splits the Jacobian of `psi` into the sensitivity term and the two
/// terms carrying the variance-function derivative.
///
/// ```text
/// E_n = -(1/2n) sum_ij vdot_ij G_ij^{-1/2} (y_ij - mu_ij) X_i' G_i^{1/2} R^{-1} e_j e_j' X_i
/// F_n =  (1/2n) sum_ij vdot_ij G_ij^{1/2} x_ij x_ij' e_j' R^{-1} G_i^{-1/2} (Y_i - mu_i)
/// ```
pub fn jacobian_parts(
    dataset: &ClusteredDataset,
    family: Family,
    beta: &DVector<f64>,
    corr: &WorkingCorrelation,
) -> Result<JacobianParts> {
    let (_, s_term) = psi_and_sensitivity(dataset, family, beta, corr)?;
    let p = dataset.p();
    let mut e_n = DMatrix::zeros(p, p);
    let mut f_n = DMatrix::zeros(p, p);
    if family == Family::Gaussian {
        return Ok(JacobianParts { s_term, e_n, f_n });
    }
    let terms = observation_terms(dataset, family, beta)?;
    let inverses = corr.inverses(&dataset.sizes())?;
    for (i, blk) in cluster_blocks(dataset, &terms, &inverses) {
        let c = dataset.cluster(i);
        let rinv = inverses[c.size()].as_ref().unwrap();
        let range = dataset.cluster_range(i);
        for (j, r) in range.enumerate() {
            let vdot = family.variance_dot(terms.mu[r]);
            let xj = c.x.row(j).transpose();
            // X_i' G^{1/2} R^{-1} e_j
            let left = blk.b.tr_mul(&rinv.column(j));
            let resid = dataset.y()[r] - terms.mu[r];
            e_n.ger(-0.5 * vdot * resid / terms.sd[r], &left, &xj, 1.0);
            f_n.ger(0.5 * vdot * terms.sd[r] * blk.rinv_eps[j], &xj, &xj, 1.0);
        }
    }
    let nf = dataset.n() as f64;
    Ok(JacobianParts {
        s_term,
        e_n: e_n / nf,
        f_n: f_n / nf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Cluster;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, m: usize, p: usize, family: Family, seed: u64) -> ClusteredDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clusters = (0..n)
            .map(|i| {
                let x = DMatrix::from_fn(m, p, |_, _| rng.sample::<f64, _>(StandardNormal) * 0.7);
                let y = DVector::from_fn(m, |_, _| match family {
                    Family::Gaussian => rng.sample::<f64, _>(StandardNormal),
                    Family::Logit => f64::from(rng.random::<bool>()),
                });
                Cluster::new(format!("{i}"), x, y)
            })
            .collect();
        ClusteredDataset::new(clusters).unwrap()
    }

    /// Straightforward double loop over clusters and observations.
    fn naive_psi(d: &ClusteredDataset, fam: Family, beta: &DVector<f64>, r: &DMatrix<f64>) -> DVector<f64> {
        let rinv = r.clone().try_inverse().unwrap();
        let mut out = DVector::zeros(d.p());
        for c in d.clusters() {
            let m = c.size();
            for j in 0..m {
                for k in 0..m {
                    let eta_j: f64 = (0..d.p()).map(|l| c.x[(j, l)] * beta[l]).sum();
                    let eta_k: f64 = (0..d.p()).map(|l| c.x[(k, l)] * beta[l]).sum();
                    let mu_j = fam.mu(eta_j);
                    let mu_k = fam.mu(eta_k);
                    let w = fam.variance(mu_j).sqrt() * rinv[(j, k)] / fam.variance(mu_k).sqrt();
                    for l in 0..d.p() {
                        out[l] += c.x[(j, l)] * w * (c.y[k] - mu_k);
                    }
                }
            }
        }
        out / d.n() as f64
    }

    #[test]
    fn psi_matches_naive_double_loop() {
        let d = random_data(6, 3, 4, Family::Gaussian, 2);
        let beta = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.5]);
        let corr = WorkingCorrelation::Ar1(0.3);
        let fast = psi(&d, Family::Gaussian, &beta, &corr).unwrap();
        let slow = naive_psi(&d, Family::Gaussian, &beta, &corr.matrix(3).unwrap());
        assert!((fast - slow).amax() < 1e-12);

        let d = random_data(6, 3, 4, Family::Logit, 3);
        let fast = psi(&d, Family::Logit, &beta, &corr).unwrap();
        let slow = naive_psi(&d, Family::Logit, &beta, &corr.matrix(3).unwrap());
        assert!((fast - slow).amax() < 1e-12);
    }

    #[test]
    fn gaussian_independence_collapses() {
        let d = random_data(5, 2, 3, Family::Gaussian, 8);
        let beta = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let g = gee_matrices(&d, Family::Gaussian, &beta, &WorkingCorrelation::Independence).unwrap();
        let n = d.n() as f64;
        let psi_direct = d.x().tr_mul(&(d.y() - d.x() * &beta)) / n;
        let s_direct = d.x().tr_mul(d.x()) / n;
        assert!((g.psi - psi_direct).amax() < 1e-13);
        assert!((g.s - s_direct).amax() < 1e-13);
    }

    #[test]
    fn zero_residuals_give_zero_psi_and_v() {
        let d = random_data(5, 3, 2, Family::Gaussian, 1);
        let beta = DVector::from_vec(vec![0.4, -0.7]);
        let d = d.with_response(d.x() * &beta).unwrap();
        let g = gee_matrices(&d, Family::Gaussian, &beta, &WorkingCorrelation::Ar1(0.5)).unwrap();
        assert!(g.psi.amax() < 1e-14);
        assert!(g.v.amax() < 1e-14);
    }

    #[test]
    fn standardized_residual_examples() {
        let c = Cluster::new("a", DMatrix::zeros(1, 1), DVector::from_element(1, 1.0));
        let d = ClusteredDataset::new(vec![c]).unwrap();
        let e = standardized_residuals(&d, Family::Logit, &DVector::zeros(1)).unwrap();
        assert!((e[0][0] - 1.0).abs() < 1e-15);

        let d = random_data(3, 2, 2, Family::Gaussian, 4);
        let beta = DVector::from_vec(vec![0.2, 0.1]);
        let e = standardized_residuals(&d, Family::Gaussian, &beta).unwrap();
        let raw = d.y() - d.x() * &beta;
        assert!((e[1][1] - raw[3]).abs() < 1e-15);

        // mu = 1 - 1e-15 trips the singular-variance guard
        let c = Cluster::new("a", DMatrix::from_element(1, 1, 1.0), DVector::from_element(1, 1.0));
        let d = ClusteredDataset::new(vec![c]).unwrap();
        let eta = ((1.0 - 1e-15) / 1e-15f64).ln();
        let err = standardized_residuals(&d, Family::Logit, &DVector::from_element(1, eta)).unwrap_err();
        assert!(matches!(err, Error::SingularVariance { cluster: 0, observation: 0, .. }));
    }

    fn fixed_residual_data(eps: &[&[f64]]) -> ClusteredDataset {
        let clusters = eps
            .iter()
            .enumerate()
            .map(|(i, e)| Cluster::new(format!("{i}"), DMatrix::zeros(e.len(), 1), DVector::from_column_slice(e)))
            .collect();
        ClusteredDataset::new(clusters).unwrap()
    }

    #[test]
    fn gamma_examples() {
        let beta = DVector::zeros(1);
        let d = fixed_residual_data(&[&[1.0, 1.0], &[1.0, -1.0]]);
        let g = estimate_gamma(&d, Family::Gaussian, &beta, CorrelationKind::Ar1).unwrap();
        assert_eq!(g, WorkingCorrelation::Ar1(0.0));

        let d = fixed_residual_data(&[&[1.0, 0.0], &[0.0, 1.0]]);
        let g = estimate_gamma(&d, Family::Gaussian, &beta, CorrelationKind::Unstructured).unwrap();
        assert_eq!(g, WorkingCorrelation::Unstructured(DMatrix::from_diagonal_element(2, 2, 0.5)));

        let d = fixed_residual_data(&[&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0], &[0.0, 0.0, 1.0]]);
        let g = estimate_gamma(&d, Family::Gaussian, &beta, CorrelationKind::Ar1).unwrap();
        assert_eq!(g.gamma(), Some(0.0));
        let g = estimate_gamma(&d, Family::Gaussian, &beta, CorrelationKind::Exchangeable).unwrap();
        assert_eq!(g.gamma(), Some(0.0));

        // strongly correlated residuals get clamped
        let d = fixed_residual_data(&[&[3.0, 3.0], &[2.0, 2.0]]);
        let g = estimate_gamma(&d, Family::Gaussian, &beta, CorrelationKind::Ar1).unwrap();
        assert_eq!(g.gamma(), Some(0.99));
    }

    #[test]
    fn unstructured_identity_and_guards() {
        let d = random_data(8, 3, 2, Family::Gaussian, 6);
        let beta = DVector::from_vec(vec![0.1, 0.2]);
        let r = match estimate_gamma(&d, Family::Gaussian, &beta, CorrelationKind::Unstructured).unwrap() {
            WorkingCorrelation::Unstructured(r) => r,
            _ => unreachable!(),
        };
        let eps = standardized_residuals(&d, Family::Gaussian, &beta).unwrap();
        let mut avg = DMatrix::zeros(3, 3);
        for e in &eps {
            avg += e * e.transpose();
        }
        avg /= eps.len() as f64;
        assert!((avg - r).amax() < 1e-14);

        // rank-deficient moment estimate
        let d = fixed_residual_data(&[&[1.0, 1.0], &[2.0, 2.0]]);
        assert!(matches!(
            estimate_gamma(&d, Family::Gaussian, &DVector::zeros(1), CorrelationKind::Unstructured),
            Err(Error::NotPositiveDefinite(_))
        ));
        // unequal sizes
        let d = fixed_residual_data(&[&[1.0, 0.0], &[0.0, 1.0, 0.5], &[0.3, 1.0, -1.0], &[1.0, 0.2, 0.1]]);
        assert!(estimate_gamma(&d, Family::Gaussian, &DVector::zeros(1), CorrelationKind::Unstructured).is_err());
        let g = estimate_gamma_with(
            &d,
            Family::Gaussian,
            &DVector::zeros(1),
            CorrelationKind::Unstructured,
            UnstructuredPooling::MaxSizeClusters,
        )
        .unwrap();
        assert_eq!(g.matrix(2).unwrap().nrows(), 2);
    }

    #[test]
    fn correlation_matrices() {
        let r = WorkingCorrelation::Ar1(0.5).matrix(3).unwrap();
        assert_eq!(r[(0, 2)], 0.25);
        assert!(WorkingCorrelation::Ar1(1.0).matrix(2).is_err());
        assert!(WorkingCorrelation::Exchangeable(-0.6).matrix(3).is_err());
        assert!(WorkingCorrelation::Exchangeable(-0.4).matrix(3).is_ok());
        let inv = WorkingCorrelation::Exchangeable(0.3).inverse(4).unwrap();
        let r = WorkingCorrelation::Exchangeable(0.3).matrix(4).unwrap();
        assert!((inv * r - DMatrix::identity(4, 4)).amax() < 1e-12);
        let un = WorkingCorrelation::Unstructured(DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 1.0]));
        assert!(un.matrix(3).is_err());
        assert_eq!(un.matrix(1).unwrap()[(0, 0)], 1.0);
    }

    #[test]
    fn gaussian_jacobian_extra_terms_vanish() {
        let d = random_data(4, 3, 3, Family::Gaussian, 7);
        let beta = DVector::from_vec(vec![0.2, 0.0, -0.3]);
        let parts = jacobian_parts(&d, Family::Gaussian, &beta, &WorkingCorrelation::Ar1(0.4)).unwrap();
        assert_eq!(parts.e_n, DMatrix::zeros(3, 3));
        assert_eq!(parts.f_n, DMatrix::zeros(3, 3));
    }

    #[test]
    fn sensitivity_is_symmetric_psd() {
        let d = random_data(7, 3, 5, Family::Logit, 10);
        let beta = DVector::from_vec(vec![0.2, -0.1, 0.0, 0.3, 0.1]);
        let g = gee_matrices(&d, Family::Logit, &beta, &WorkingCorrelation::Exchangeable(0.2)).unwrap();
        assert_eq!(g.s, g.s.transpose());
        let eig = g.s.clone().symmetric_eigen();
        assert!(eig.eigenvalues.min() > 0.0);
        assert!(g.v.clone().symmetric_eigen().eigenvalues.min() > -1e-12);
    }

    #[test]
    fn invariant_under_cluster_reordering() {
        let d = random_data(6, 2, 3, Family::Logit, 11);
        let beta = DVector::from_vec(vec![0.1, 0.4, -0.2]);
        let rev = d.subset(&[5, 4, 3, 2, 1, 0]).unwrap();
        let corr = WorkingCorrelation::Ar1(0.2);
        let a = gee_matrices(&d, Family::Logit, &beta, &corr).unwrap();
        let b = gee_matrices(&rev, Family::Logit, &beta, &corr).unwrap();
        assert!((a.psi - b.psi).amax() < 1e-14);
        assert!((a.s - b.s).amax() < 1e-14);
        assert!((a.v - b.v).amax() < 1e-14);
    }
}
