//! Normalized Laplacian spectra and their density-of-states histograms.
//!
//! Eigenvalues come from a dense symmetric solver: Householder reduction to
//! tridiagonal form followed by implicit-shift QL iteration. Window graphs are
//! small, so the exact spectrum is cheap.

use thiserror::Error;

use crate::temporal_graph::WindowGraph;

/// Default deflation tolerance for [`eigenvalues_sym`].
pub const EIGEN_TOL: f64 = 1e-12;
/// Eigenvalues this close below an interior bin edge are binned above it.
const EDGE_SNAP: f64 = 1e-9;
/// How far outside `[0, 2]` an eigenvalue may stray before it is rejected.
const RANGE_SLACK: f64 = 1e-6;
const MAX_SWEEPS_PER_EIGENVALUE: usize = 60;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("window has no nodes")]
    EmptyWindow,
    #[error("eigenvalue iteration did not converge after {0} sweeps")]
    NonConvergence(usize),
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("matrix has a non-finite entry")]
    NonFiniteEntry,
    #[error("bin count must be positive")]
    InvalidBinCount,
    #[error("eigenvalue {0} lies outside [0, 2]")]
    OutOfRange(f64),
    #[error("histograms use different bins")]
    BinMismatch,
}

/// Dense symmetric matrix stored as its packed upper triangle.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    order: usize,
    upper: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(order: usize) -> Self {
        Self {
            order,
            upper: vec![0.0; order * (order + 1) / 2],
        }
    }

    /// Builds from a full row-major matrix, reading only the upper triangle.
    pub fn from_dense(order: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), order * order, "expected a square matrix");
        let mut m = Self::zeros(order);
        for i in 0..order {
            for j in i..order {
                m.set(i, j, data[i * order + j]);
            }
        }
        m
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * (2 * self.order - i - 1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let k = self.offset(i, j);
        self.upper[k] = value;
    }

    pub fn trace(&self) -> f64 {
        (0..self.order).map(|i| self.get(i, i)).sum()
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.order;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = self.get(i, j);
            }
        }
        out
    }
}

/// `L = I - D^{-1/2} A D^{-1/2}` over the window's simple edges.
pub fn normalized_laplacian(window: &WindowGraph) -> Result<SymMatrix, SpectralError> {
    let n = window.num_nodes();
    if n == 0 {
        return Err(SpectralError::EmptyWindow);
    }
    let edges = window.local_edges();
    let mut degree = vec![0usize; n];
    for &(u, v) in &edges {
        degree[u] += 1;
        degree[v] += 1;
    }
    let mut l = SymMatrix::zeros(n);
    for (i, &d) in degree.iter().enumerate() {
        l.set(i, i, if d > 0 { 1.0 } else { 0.0 });
    }
    for &(u, v) in &edges {
        l.set(u, v, -1.0 / ((degree[u] * degree[v]) as f64).sqrt());
    }
    Ok(l)
}

/// All eigenvalues of a symmetric matrix, ascending. Off-diagonal entries are
/// deflated once they drop below `tol` (or below machine precision relative
/// to their neighbors), which bounds each eigenvalue error by `tol`.
pub fn eigenvalues_sym(m: &SymMatrix, tol: f64) -> Result<Vec<f64>, SpectralError> {
    if !(tol > 0.0) {
        return Err(SpectralError::InvalidTolerance(tol));
    }
    if m.upper.iter().any(|x| !x.is_finite()) {
        return Err(SpectralError::NonFiniteEntry);
    }
    let n = m.order;
    if n == 0 {
        return Ok(Vec::new());
    }
    let (mut diag, mut off) = tridiagonalize(m);
    implicit_ql(&mut diag, &mut off, tol)?;
    diag.sort_by(f64::total_cmp);
    Ok(diag)
}

/// Householder reduction. Returns the diagonal and the subdiagonal, with
/// `off[i]` coupling rows `i - 1` and `i` (`off[0]` is zero).
fn tridiagonalize(m: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.order;
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| m.get(i, j)).collect()).collect();
    let mut diag = vec![0.0; n];
    let mut off = vec![0.0; n];
    for i in (1..n).rev() {
        let l = i - 1;
        if l == 0 {
            off[i] = a[i][l];
            continue;
        }
        let scale: f64 = a[i][..=l].iter().map(|x| x.abs()).sum();
        if scale == 0.0 {
            off[i] = a[i][l];
            continue;
        }
        let mut h = 0.0;
        for k in 0..=l {
            a[i][k] /= scale;
            h += a[i][k] * a[i][k];
        }
        let f = a[i][l];
        let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
        off[i] = scale * g;
        h -= f * g;
        a[i][l] = f - g;
        let mut f = 0.0;
        for j in 0..=l {
            let mut g = 0.0;
            for k in 0..=j {
                g += a[j][k] * a[i][k];
            }
            for k in j + 1..=l {
                g += a[k][j] * a[i][k];
            }
            off[j] = g / h;
            f += off[j] * a[i][j];
        }
        let hh = f / (h + h);
        for j in 0..=l {
            let f = a[i][j];
            let g = off[j] - hh * f;
            off[j] = g;
            for k in 0..=j {
                a[j][k] -= f * off[k] + g * a[i][k];
            }
        }
    }
    for (i, d) in diag.iter_mut().enumerate() {
        *d = a[i][i];
    }
    off[0] = 0.0;
    (diag, off)
}

/// Implicit-shift QL on a symmetric tridiagonal matrix; eigenvalues are left in `d`.
fn implicit_ql(d: &mut [f64], e: &mut [f64], tol: f64) -> Result<(), SpectralError> {
    let n = d.len();
    // Shift so that e[i] couples rows i and i + 1.
    e.rotate_left(1);
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut sweeps = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd || e[m].abs() <= tol {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            sweeps += 1;
            if sweeps > MAX_SWEEPS_PER_EIGENVALUE {
                return Err(SpectralError::NonConvergence(MAX_SWEEPS_PER_EIGENVALUE));
            }
            // Wilkinson-style shift from the leading 2x2 block.
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut underflow = false;
            for i in (l..m).rev() {
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Density of states: normalized eigenvalue counts over equal-width bins on `[0, 2]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DosHistogram {
    pub bin_edges: Vec<f64>,
    pub mass: Vec<f64>,
    /// Set on the all-zero histogram of an empty window.
    pub empty: bool,
}

impl DosHistogram {
    fn edges(bin_count: usize) -> Vec<f64> {
        let width = 2.0 / bin_count as f64;
        (0..=bin_count)
            .map(|i| if i == bin_count { 2.0 } else { i as f64 * width })
            .collect()
    }

    /// The flagged all-zero histogram emitted for empty windows.
    pub fn empty_sentinel(bin_count: usize) -> Self {
        Self {
            bin_edges: Self::edges(bin_count),
            mass: vec![0.0; bin_count],
            empty: true,
        }
    }

    /// Rebuilds a histogram from stored bin masses.
    pub fn from_mass(mass: Vec<f64>, empty: bool) -> Result<Self, SpectralError> {
        if mass.is_empty() {
            return Err(SpectralError::InvalidBinCount);
        }
        if mass.iter().any(|m| !m.is_finite()) {
            return Err(SpectralError::NonFiniteEntry);
        }
        Ok(Self {
            bin_edges: Self::edges(mass.len()),
            mass,
            empty,
        })
    }

    pub fn bin_count(&self) -> usize {
        self.mass.len()
    }

    pub fn bin_width(&self) -> f64 {
        2.0 / self.bin_count() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }
}

/// Bins are half-open `[a, b)` except the last, which is closed. Eigenvalues
/// are clamped into `[0, 2]`; an empty spectrum yields the flagged sentinel.
pub fn dos_histogram(eigs: &[f64], bin_count: usize) -> Result<DosHistogram, SpectralError> {
    if bin_count == 0 {
        return Err(SpectralError::InvalidBinCount);
    }
    if eigs.is_empty() {
        return Ok(DosHistogram::empty_sentinel(bin_count));
    }
    let width = 2.0 / bin_count as f64;
    let mut counts = vec![0usize; bin_count];
    for &lambda in eigs {
        if !(-RANGE_SLACK..=2.0 + RANGE_SLACK).contains(&lambda) {
            return Err(SpectralError::OutOfRange(lambda));
        }
        let x = lambda.clamp(0.0, 2.0);
        let bin = (((x + EDGE_SNAP) / width).floor() as usize).min(bin_count - 1);
        counts[bin] += 1;
    }
    let total = eigs.len() as f64;
    Ok(DosHistogram {
        bin_edges: DosHistogram::edges(bin_count),
        mass: counts.into_iter().map(|c| c as f64 / total).collect(),
        empty: false,
    })
}

/// 1-D earth mover's distance between histograms with mass at bin centers:
/// the summed absolute CDF gap times the bin width.
pub fn wasserstein1_hist(a: &DosHistogram, b: &DosHistogram) -> Result<f64, SpectralError> {
    if a.bin_edges != b.bin_edges {
        return Err(SpectralError::BinMismatch);
    }
    let (mut ca, mut cb, mut acc) = (0.0, 0.0, 0.0);
    for (x, y) in a.mass.iter().zip(&b.mass) {
        ca += x;
        cb += y;
        acc += (ca - cb).abs();
    }
    Ok(acc * a.bin_width())
}

/// Density-of-states descriptor of one window.
pub fn spectral_descriptor(window: &WindowGraph, bin_count: usize) -> Result<DosHistogram, SpectralError> {
    if window.is_empty() {
        if bin_count == 0 {
            return Err(SpectralError::InvalidBinCount);
        }
        return Ok(DosHistogram::empty_sentinel(bin_count));
    }
    let lap = normalized_laplacian(window)?;
    let eigs = eigenvalues_sym(&lap, EIGEN_TOL)?;
    dos_histogram(&eigs, bin_count)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win(edges: &[(usize, usize)]) -> WindowGraph {
        WindowGraph::from_edges(0, 0.0, 1.0, edges.iter().copied())
    }

    #[test]
    fn packed_storage_is_symmetric() {
        let mut m = SymMatrix::zeros(4);
        let mut k = 0.0;
        for i in 0..4 {
            for j in i..4 {
                k += 1.0;
                m.set(i, j, k);
            }
        }
        let dense = m.to_dense();
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(dense[i * 4 + j], dense[j * 4 + i]);
            }
        }
        assert_eq!(m.get(3, 3), 10.0);
        assert_eq!(m.get(2, 0), 3.0);
    }

    #[test]
    fn laplacian_examples() {
        let k2 = normalized_laplacian(&win(&[(0, 1)])).unwrap();
        assert_eq!(k2.to_dense(), vec![1.0, -1.0, -1.0, 1.0]);
        let p3 = normalized_laplacian(&win(&[(0, 1), (1, 2)])).unwrap();
        let h = -1.0 / 2f64.sqrt();
        assert!((p3.get(0, 1) - h).abs() < 1e-15);
        assert!((p3.get(1, 2) - h).abs() < 1e-15);
        assert_eq!(p3.get(0, 2), 0.0);
        assert!((0..3).all(|i| p3.get(i, i) == 1.0));
        assert_eq!(normalized_laplacian(&win(&[])), Err(SpectralError::EmptyWindow));
    }

    #[test]
    fn eigenvalue_examples() {
        let k2 = normalized_laplacian(&win(&[(0, 1)])).unwrap();
        let e = eigenvalues_sym(&k2, EIGEN_TOL).unwrap();
        assert!((e[0]).abs() < 1e-12 && (e[1] - 2.0).abs() < 1e-12);
        assert_eq!(eigenvalues_sym(&SymMatrix::zeros(3), EIGEN_TOL).unwrap(), vec![0.0; 3]);
        let p3 = normalized_laplacian(&win(&[(0, 1), (1, 2)])).unwrap();
        let e = eigenvalues_sym(&p3, EIGEN_TOL).unwrap();
        for (got, want) in e.iter().zip([0.0, 1.0, 2.0]) {
            assert!((got - want).abs() < 1e-12, "{e:?}");
        }
        assert!(eigenvalues_sym(&p3, 0.0).is_err());
    }

    #[test]
    fn eigenvalues_of_known_tridiagonal() {
        // Second-difference matrix: 2 - 2cos(k pi / (n + 1)).
        let n = 9;
        let mut m = SymMatrix::zeros(n);
        for i in 0..n {
            m.set(i, i, 2.0);
            if i + 1 < n {
                m.set(i, i + 1, -1.0);
            }
        }
        let e = eigenvalues_sym(&m, EIGEN_TOL).unwrap();
        for (k, got) in e.iter().enumerate() {
            let want = 2.0 - 2.0 * ((k + 1) as f64 * std::f64::consts::PI / (n + 1) as f64).cos();
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(dos_histogram(&[0.0, 2.0], 4).unwrap().mass, vec![0.5, 0.0, 0.0, 0.5]);
        let third = 1.0 / 3.0;
        assert_eq!(
            dos_histogram(&[0.0, 1.0, 2.0], 4).unwrap().mass,
            vec![third, 0.0, third, third]
        );
        // A value a hair under an interior edge lands above it.
        assert_eq!(
            dos_histogram(&[1.0 - 1e-14], 4).unwrap().mass,
            vec![0.0, 0.0, 1.0, 0.0]
        );
        assert_eq!(dos_histogram(&[0.0; 5], 4).unwrap().mass, vec![1.0, 0.0, 0.0, 0.0]);
        let empty = dos_histogram(&[], 4).unwrap();
        assert!(empty.empty);
        assert_eq!(empty.mass, vec![0.0; 4]);
        assert_eq!(dos_histogram(&[2.5], 4), Err(SpectralError::OutOfRange(2.5)));
        assert_eq!(dos_histogram(&[1.0], 0), Err(SpectralError::InvalidBinCount));
        assert_eq!(empty.bin_edges, vec![0.0, 0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn wasserstein_examples() {
        let a = dos_histogram(&[0.1], 4).unwrap();
        let b = dos_histogram(&[1.9], 4).unwrap();
        assert_eq!(wasserstein1_hist(&a, &a).unwrap(), 0.0);
        assert!((wasserstein1_hist(&a, &b).unwrap() - 1.5).abs() < 1e-15);
        assert_eq!(wasserstein1_hist(&a, &b).unwrap(), wasserstein1_hist(&b, &a).unwrap());
        let c = dos_histogram(&[0.1], 8).unwrap();
        assert_eq!(wasserstein1_hist(&a, &c), Err(SpectralError::BinMismatch));
    }

    #[test]
    fn spectral_descriptor_examples() {
        let empty = spectral_descriptor(&win(&[]), 4).unwrap();
        assert!(empty.empty && empty.total_mass() == 0.0);
        let k2 = spectral_descriptor(&win(&[(0, 1)]), 4).unwrap();
        assert_eq!(k2.mass, vec![0.5, 0.0, 0.0, 0.5]);
        assert!(!k2.empty);
    }
}
