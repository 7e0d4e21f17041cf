//! Hermitian observables with cached spectral decompositions.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{domain, Error, Result};
use crate::linalg::{ComplexMatrix, C64, ONE};

/// Hermiticity tolerance for [`Observable::from_matrix`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Eigenvalues with modulus at or below this count as zero when computing rank.
pub const RANK_TOL: f64 = 1e-10;

/// `O = Σ_q o_q |o_q⟩⟨o_q|`, eigenpairs sorted by descending eigenvalue.
#[derive(Clone, Debug)]
pub struct Observable {
    matrix: ComplexMatrix,
    eigenvalues: Vec<f64>,
    eigenvectors: ComplexMatrix,
    rank: usize,
}

impl Observable {
    pub fn from_matrix(matrix: ComplexMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(domain("observable must be square"));
        }
        if !matrix.is_finite() {
            return Err(domain("observable has non-finite entries"));
        }
        if !matrix.is_hermitian(HERMITIAN_TOL)? {
            return Err(domain("observable is not Hermitian"));
        }
        let d = matrix.rows();
        let eig = DMatrix::from_fn(d, d, |i, j| matrix[(i, j)]).symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let eigenvalues: Vec<f64> = order.iter().map(|&q| eig.eigenvalues[q]).collect();
        let eigenvectors = ComplexMatrix::from_fn(d, d, |i, j| eig.eigenvectors[(i, order[j])]);
        let rank = eigenvalues.iter().filter(|o| o.abs() > RANK_TOL).count();
        Ok(Self {
            matrix,
            eigenvalues,
            eigenvectors,
            rank,
        })
    }

    pub fn matrix(&self) -> &ComplexMatrix {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Eigenvectors as columns, in eigenvalue order.
    pub fn eigenvectors(&self) -> &ComplexMatrix {
        &self.eigenvectors
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Eigenvectors `|o_q⟩` of the nonzero eigenvalues: the projective
    /// measurement whose outcome statistics determine `⟨O⟩`.
    pub fn measurement_basis(&self) -> Vec<Vec<C64>> {
        self.eigenvalues
            .iter()
            .enumerate()
            .filter(|(_, o)| o.abs() > RANK_TOL)
            .map(|(q, _)| self.eigenvectors.column(q))
            .collect()
    }

    pub fn trace(&self) -> f64 {
        self.eigenvalues.iter().sum()
    }

    pub fn trace_sq(&self) -> f64 {
        self.matrix.as_slice().iter().map(|x| x.norm_sqr()).sum()
    }

    /// `d·Tr(O²) − Tr(O)²`, nonnegative by Cauchy–Schwarz.
    pub fn spread_factor(&self) -> f64 {
        let d = self.dim() as f64;
        (d * self.trace_sq() - self.trace().powi(2)).max(0.0)
    }

    /// `Σ_{k≠j} |O_kj|²` in the computational basis.
    pub fn offdiag_square_sum(&self) -> f64 {
        let d = self.dim();
        let mut s = 0.0;
        for k in 0..d {
            for j in 0..d {
                if k != j {
                    s += self.matrix[(k, j)].norm_sqr();
                }
            }
        }
        s
    }

    /// `Σ_q o_q |o_q⟩⟨o_q|`, rebuilt from the cached decomposition.
    pub fn reconstruct(&self) -> ComplexMatrix {
        let d = self.dim();
        ComplexMatrix::from_fn(d, d, |i, j| {
            (0..d)
                .map(|q| self.eigenvectors[(i, q)] * self.eigenvectors[(j, q)].conj() * self.eigenvalues[q])
                .sum()
        })
    }
}

/// Rank-one projector onto `|0…0⟩`.
pub fn projector_zero(n: usize) -> Result<Observable> {
    if n == 0 {
        return Err(domain("projector needs n >= 1"));
    }
    let d = 1 << n;
    let mut m = ComplexMatrix::zeros(d, d);
    m[(0, 0)] = ONE;
    Observable::from_matrix(m)
}

/// Ones on the leading `r x r` block wherever `|i − j| <= k`, zeros elsewhere.
pub fn k_diagonal(d: usize, r: usize, k: usize) -> Result<Observable> {
    if r > d {
        return Err(domain(format!("rank {r} exceeds dimension {d}")));
    }
    if r == 0 || k >= r {
        return Err(domain(format!("k-diagonal needs 0 <= k < r, got r={r} k={k}")));
    }
    let m = ComplexMatrix::from_fn(d, d, |i, j| {
        if i < r && j < r && i.abs_diff(j) <= k {
            ONE
        } else {
            C64::new(0.0, 0.0)
        }
    });
    Observable::from_matrix(m)
}

/// Tensor product of single-qubit Paulis, leftmost factor on qubit 0.
pub fn pauli_string(spec: &str) -> Result<Observable> {
    let letters: Vec<char> = spec
        .chars()
        .filter(|c| !matches!(c, '⊗' | '*' | ' '))
        .collect();
    if letters.is_empty() {
        return Err(Error::Parse("empty Pauli string".into()));
    }
    let mut m = ComplexMatrix::identity(1);
    for c in letters {
        let p = match c.to_ascii_uppercase() {
            'I' => ComplexMatrix::identity(2),
            'X' => ComplexMatrix::pauli_x(),
            'Y' => ComplexMatrix::pauli_y(),
            'Z' => ComplexMatrix::pauli_z(),
            other => return Err(Error::Parse(format!("unknown Pauli factor `{other}`"))),
        };
        m = m.kron(&p);
    }
    Observable::from_matrix(m)
}

/// Observable description accepted on the command line and in configs.
///
/// `proj0`, `pauli:Z⊗I` (or `pauli:ZI`), `kdiag:r=5,k=2`, `file:<path>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ObservableSpec {
    ProjectorZero,
    Pauli(String),
    KDiagonal { r: usize, k: usize },
    File(PathBuf),
}

impl ObservableSpec {
    pub fn build(&self, n: usize) -> Result<Observable> {
        let d = 1usize << n;
        let o = match self {
            Self::ProjectorZero => projector_zero(n)?,
            Self::Pauli(s) => pauli_string(s)?,
            Self::KDiagonal { r, k } => k_diagonal(d, *r, *k)?,
            Self::File(path) => Observable::from_matrix(load_matrix(path)?)?,
        };
        if o.dim() != d {
            return Err(domain(format!(
                "observable `{self}` has dimension {}, expected {d} for n = {n}",
                o.dim()
            )));
        }
        Ok(o)
    }
}

impl FromStr for ObservableSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "proj0" {
            return Ok(Self::ProjectorZero);
        }
        if let Some(rest) = s.strip_prefix("pauli:") {
            pauli_string(rest)?;
            return Ok(Self::Pauli(rest.to_string()));
        }
        if let Some(path) = s.strip_prefix("file:") {
            return Ok(Self::File(PathBuf::from(path)));
        }
        if let Some(rest) = s.strip_prefix("kdiag:") {
            let (mut r, mut k) = (None, None);
            for part in rest.split(',') {
                let (key, value) = part
                    .split_once('=')
                    .ok_or_else(|| Error::Parse(format!("expected key=value, got `{part}`")))?;
                let value: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad integer `{value}`")))?;
                match key.trim() {
                    "r" => r = Some(value),
                    "k" => k = Some(value),
                    other => return Err(Error::Parse(format!("unknown kdiag key `{other}`"))),
                }
            }
            return match (r, k) {
                (Some(r), Some(k)) => Ok(Self::KDiagonal { r, k }),
                _ => Err(Error::Parse(format!("kdiag needs r and k: `{s}`"))),
            };
        }
        Err(Error::Parse(format!("unrecognized observable `{s}`")))
    }
}

impl fmt::Display for ObservableSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::ProjectorZero => write!(f, "proj0"),
            Self::Pauli(s) => write!(f, "pauli:{s}"),
            Self::KDiagonal { r, k } => write!(f, "kdiag:r={r},k={k}"),
            Self::File(p) => write!(f, "file:{}", p.display()),
        }
    }
}

/// Parses the dense matrix text format: a line with `d`, then `d` rows of `d`
/// whitespace-separated `re,im` pairs. Blank lines and `#` comments are skipped.
pub fn parse_matrix_text(text: &str) -> Result<ComplexMatrix> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| Error::Parse("empty matrix file".into()))?;
    let d: usize = header
        .parse()
        .map_err(|_| Error::Parse(format!("bad dimension line `{header}`")))?;
    let mut data = Vec::with_capacity(d * d);
    for row in 0..d {
        let line = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("missing row {row}")))?;
        let entries: Vec<&str> = line.split_whitespace().collect();
        if entries.len() != d {
            return Err(Error::Parse(format!(
                "row {row} has {} entries, expected {d}",
                entries.len()
            )));
        }
        for e in entries {
            data.push(parse_complex(e)?);
        }
    }
    if let Some(extra) = lines.next() {
        return Err(Error::Parse(format!("trailing content `{extra}`")));
    }
    ComplexMatrix::from_vec(d, d, data)
}

pub(crate) fn parse_complex(token: &str) -> Result<C64> {
    let (re, im) = token
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("expected re,im pair, got `{token}`")))?;
    let p = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("bad number `{s}`")))
    };
    Ok(C64::new(p(re)?, p(im)?))
}

/// Inverse of [`parse_matrix_text`]; uses shortest round-trip float formatting.
pub fn format_matrix_text(m: &ComplexMatrix) -> String {
    let mut out = format!("{}\n", m.rows());
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|x| format!("{:?},{:?}", x.re, x.im)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn load_matrix(path: &Path) -> Result<ComplexMatrix> {
    let m = parse_matrix_text(&std::fs::read_to_string(path)?)?;
    if !m.is_square() {
        return Err(domain("matrix file is not square"));
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::haar::{ginibre, SeededRng};

    #[test]
    fn z_spectrum() {
        let z = Observable::from_matrix(ComplexMatrix::pauli_z()).unwrap();
        assert_eq!(z.rank(), 2);
        assert!((z.eigenvalues()[0] - 1.0).abs() < 1e-14);
        assert!((z.eigenvalues()[1] + 1.0).abs() < 1e-14);
        let v = z.eigenvectors();
        assert!((v[(0, 0)].norm() - 1.0).abs() < 1e-14);
        assert!((v[(1, 1)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn identity_spectrum() {
        let o = Observable::from_matrix(ComplexMatrix::identity(4)).unwrap();
        assert!(o.eigenvalues().iter().all(|e| (e - 1.0).abs() < 1e-14));
        assert_eq!(o.rank(), 4);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let mut rng = SeededRng::new(1, 0);
        let g = ginibre(8, &mut rng);
        let h = g.add(&g.adjoint()).unwrap();
        let o = Observable::from_matrix(h.clone()).unwrap();
        assert!(o.reconstruct().max_abs_diff(&h) <= 1e-9);
        let v = o.eigenvectors();
        assert!((&v.adjoint() * v).max_abs_diff(&ComplexMatrix::identity(8)) < 1e-9);
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut m = ComplexMatrix::zeros(2, 2);
        m[(0, 1)] = ONE;
        assert!(matches!(Observable::from_matrix(m), Err(Error::Domain(_))));
    }

    #[test]
    fn projector_zero_shapes() {
        let p = projector_zero(1).unwrap();
        assert_eq!(p.matrix(), &ComplexMatrix::diag(&[ONE, C64::new(0.0, 0.0)]));
        let p = projector_zero(2).unwrap();
        assert_eq!(p.rank(), 1);
        for n in 1..=5 {
            let p = projector_zero(n).unwrap();
            assert!((p.trace() - 1.0).abs() < 1e-12 && (p.trace_sq() - 1.0).abs() < 1e-12);
            assert!((p.spread_factor() - ((1 << n) as f64 - 1.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn k_diagonal_examples() {
        let o = k_diagonal(16, 5, 0).unwrap();
        assert_eq!(o.rank(), 5);
        assert_eq!(o.offdiag_square_sum(), 0.0);
        assert_eq!(k_diagonal(16, 5, 1).unwrap().offdiag_square_sum(), 8.0);
        assert_eq!(k_diagonal(16, 5, 2).unwrap().offdiag_square_sum(), 14.0);
        let full = k_diagonal(16, 5, 4).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(full.matrix()[(i, j)], ONE);
            }
        }
        assert!(k_diagonal(4, 5, 0).is_err());
    }

    #[test]
    fn offdiag_of_x() {
        let x = Observable::from_matrix(ComplexMatrix::pauli_x()).unwrap();
        assert_eq!(x.offdiag_square_sum(), 2.0);
    }

    #[test]
    fn completeness_when_full_rank() {
        let o = pauli_string("Z⊗X").unwrap();
        assert_eq!(o.rank(), 4);
        let basis = o.measurement_basis();
        let mut sum = ComplexMatrix::zeros(4, 4);
        for v in &basis {
            sum = sum.add(&ComplexMatrix::from_fn(4, 4, |i, j| v[i] * v[j].conj())).unwrap();
        }
        assert!(sum.max_abs_diff(&ComplexMatrix::identity(4)) < 1e-9);
    }

    #[test]
    fn spread_factor_nonnegative() {
        for spec in ["proj0", "pauli:ZI", "pauli:XY", "kdiag:r=3,k=1", "kdiag:r=4,k=3"] {
            let o: ObservableSpec = spec.parse().unwrap();
            assert!(o.build(2).unwrap().spread_factor() >= 0.0);
        }
        let id = Observable::from_matrix(ComplexMatrix::identity(4)).unwrap();
        assert!(id.spread_factor().abs() < 1e-12);
    }

    #[test]
    fn spec_parsing_round_trips() {
        for s in ["proj0", "pauli:Z⊗I", "kdiag:r=5,k=2", "file:/tmp/o.txt"] {
            let spec: ObservableSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
        assert!("kdiag:r=5".parse::<ObservableSpec>().is_err());
        assert!("pauli:ZQ".parse::<ObservableSpec>().is_err());
        assert!("nope".parse::<ObservableSpec>().is_err());
        assert!("pauli:ZII".parse::<ObservableSpec>().unwrap().build(2).is_err());
    }

    #[test]
    fn matrix_text_round_trip() {
        let mut rng = SeededRng::new(2, 0);
        let m = ginibre(4, &mut rng);
        assert_eq!(parse_matrix_text(&format_matrix_text(&m)).unwrap(), m);
        assert!(parse_matrix_text("2\n1,0 0,0\n").is_err());
        assert!(parse_matrix_text("1\n1;0\n").is_err());
    }

    #[test]
    fn file_spec_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("z.txt");
        std::fs::write(&path, "2\n1,0 0,0\n0,0 -1,0\n").unwrap();
        let spec: ObservableSpec = format!("file:{}", path.display()).parse().unwrap();
        let o = spec.build(1).unwrap();
        assert_eq!(o.matrix(), &ComplexMatrix::pauli_z());
    }
}
