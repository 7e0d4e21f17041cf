//! Haar-random unitaries and states, reproducible RNG streams, and Monte Carlo
//! checks of the first- and second-moment Haar integration identities.

use std::fmt;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::linalg::{householder_qr, ComplexMatrix, PureState, C64};

/// ChaCha20 stream addressed by `(seed, stream)`.
///
/// Identical `(seed, stream)` pairs replay identical sequences, so every
/// Monte Carlo trial can own its generator regardless of which worker runs it.
#[derive(Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: ChaCha20Rng,
}

impl SeededRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha20Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl fmt::Debug for SeededRng {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SeededRng")
            .field("seed", &self.seed)
            .field("stream", &self.stream)
            .finish_non_exhaustive()
    }
}

impl RngCore for SeededRng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

const STREAM_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

/// Child stream for trial `index` of `master`.
///
/// For a fixed master the map `index -> stream` is a bijection on `u64`, so
/// distinct trials never share a stream. The master's own position is ignored:
/// derivation depends only on `(seed, stream, index)`.
pub fn derive_trial_rng(master: &SeededRng, index: u64) -> SeededRng {
    let base = master.stream.wrapping_add(1).wrapping_mul(STREAM_MIX);
    SeededRng::new(master.seed, base.wrapping_add(index))
}

fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// `d x d` matrix of i.i.d. standard complex Gaussians.
pub fn ginibre<R: Rng + ?Sized>(d: usize, rng: &mut R) -> ComplexMatrix {
    ComplexMatrix::from_fn(d, d, |_, _| complex_normal(rng))
}

/// Haar-distributed element of U(d): Ginibre matrix followed by QR with the
/// diagonal of R made positive, which removes the gauge freedom of the QR.
pub fn haar_unitary<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<ComplexMatrix> {
    if d == 0 {
        return Err(domain("Haar unitary of dimension 0"));
    }
    let (q, _) = householder_qr(&ginibre(d, rng));
    Ok(q)
}

/// Haar-random pure state: a normalized complex Gaussian vector.
pub fn haar_state<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<PureState> {
    if d == 0 {
        return Err(domain("Haar state of dimension 0"));
    }
    let amps: Vec<C64> = (0..d).map(|_| complex_normal(rng)).collect();
    PureState::normalized(amps)
}

/// The five Haar integration identities.
///
/// P1-P3 integrate over unitaries (first moment, and the two second-moment
/// trace contractions); P4-P5 integrate over pure states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MomentProperty {
    P1,
    P2,
    P3,
    P4,
    P5,
}

impl MomentProperty {
    pub const ALL: [MomentProperty; 5] = [Self::P1, Self::P2, Self::P3, Self::P4, Self::P5];

    pub fn arity(self) -> usize {
        match self {
            Self::P1 => 2,
            Self::P2 | Self::P3 => 4,
            Self::P4 | Self::P5 => 1,
        }
    }

    /// Exact value of the integral for the given operands.
    pub fn analytic(self, d: usize, ops: &[ComplexMatrix]) -> Result<C64> {
        self.check(d, ops)?;
        let df = d as f64;
        let tr = |m: &ComplexMatrix| m.trace().expect("square operand");
        let tr2 = |a: &ComplexMatrix, b: &ComplexMatrix| tr(&(a * b));
        Ok(match self {
            Self::P1 => tr(&ops[0]) * tr(&ops[1]) / df,
            Self::P2 | Self::P3 => {
                if d < 2 {
                    return Err(domain("second-moment identities need d >= 2"));
                }
                let (a, b, c, dd) = (&ops[0], &ops[1], &ops[2], &ops[3]);
                let (ta, tb, tc, td) = (tr(a), tr(b), tr(c), tr(dd));
                let (tac, tbd) = (tr2(a, c), tr2(b, dd));
                let k1 = 1.0 / (df * df - 1.0);
                let k2 = 1.0 / (df * (df * df - 1.0));
                if self == Self::P2 {
                    (tac * tb * td + ta * tc * tbd) * k1 - (ta * tb * tc * td + tac * tbd) * k2
                } else {
                    (ta * tb * tc * td + tac * tbd) * k1 - (tac * tb * td + ta * tc * tbd) * k2
                }
            }
            Self::P4 => tr(&ops[0]) / df,
            Self::P5 => {
                let a = &ops[0];
                (tr(a) * tr(a) + tr2(a, a)) / (df * (df + 1.0))
            }
        })
    }

    /// One Monte Carlo draw of the integrand.
    pub fn sample<R: Rng + ?Sized>(self, d: usize, ops: &[ComplexMatrix], rng: &mut R) -> Result<C64> {
        self.check(d, ops)?;
        Ok(match self {
            Self::P1 | Self::P2 | Self::P3 => {
                let w = haar_unitary(d, rng)?;
                let wd = w.adjoint();
                let conj = |m: &ComplexMatrix| &(&w * m) * &wd;
                match self {
                    Self::P1 => (&conj(&ops[0]) * &ops[1]).trace()?,
                    Self::P2 => {
                        let left = &conj(&ops[0]) * &ops[1];
                        let right = &conj(&ops[2]) * &ops[3];
                        (&left * &right).trace()?
                    }
                    _ => (&conj(&ops[0]) * &ops[1]).trace()? * (&conj(&ops[2]) * &ops[3]).trace()?,
                }
            }
            Self::P4 | Self::P5 => {
                let phi = haar_state(d, rng)?;
                let e = phi.expectation(&ops[0])?;
                if self == Self::P4 {
                    e
                } else {
                    e * e
                }
            }
        })
    }

    fn check(self, d: usize, ops: &[ComplexMatrix]) -> Result<()> {
        if ops.len() != self.arity() {
            return Err(domain(format!(
                "{self:?} takes {} operands, got {}",
                self.arity(),
                ops.len()
            )));
        }
        if ops.iter().any(|m| m.rows() != d || m.cols() != d) {
            return Err(domain(format!("{self:?} operands must be {d}x{d}")));
        }
        Ok(())
    }
}

impl fmt::Display for MomentProperty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheckReport {
    pub property: MomentProperty,
    pub d: usize,
    pub operands: String,
    pub estimate_re: f64,
    pub estimate_im: f64,
    pub analytic_re: f64,
    pub analytic_im: f64,
    pub standard_error: f64,
    pub z_score: f64,
    pub samples: usize,
}

impl MomentCheckReport {
    pub fn estimate(&self) -> C64 {
        C64::new(self.estimate_re, self.estimate_im)
    }

    pub fn analytic(&self) -> C64 {
        C64::new(self.analytic_re, self.analytic_im)
    }
}

/// Streaming mean/variance for complex samples (Welford, per component).
#[derive(Clone, Debug, Default)]
pub(crate) struct ComplexStats {
    n: usize,
    mean: C64,
    m2_re: f64,
    m2_im: f64,
}

impl ComplexStats {
    pub fn push(&mut self, x: C64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        let delta2 = x - self.mean;
        self.m2_re += delta.re * delta2.re;
        self.m2_im += delta.im * delta2.im;
    }

    pub fn mean(&self) -> C64 {
        self.mean
    }

    /// `sqrt((var_re + var_im) / n)` with unbiased variances.
    pub fn standard_error(&self) -> f64 {
        if self.n < 2 {
            return f64::INFINITY;
        }
        let var = (self.m2_re + self.m2_im) / (self.n - 1) as f64;
        (var / self.n as f64).sqrt()
    }
}

/// Monte Carlo estimate of one identity's left side against its exact right side.
///
/// The z-score is `|estimate - analytic| / se` with both components pooled into
/// one standard error; a deterministic integrand (se = 0) scores 0 when it hits
/// the analytic value and infinity otherwise.
pub fn moment_check<R: Rng + ?Sized>(
    property: MomentProperty,
    d: usize,
    operands: &[ComplexMatrix],
    samples: usize,
    rng: &mut R,
) -> Result<MomentCheckReport> {
    if samples == 0 {
        return Err(domain("moment check needs at least one sample"));
    }
    let analytic = property.analytic(d, operands)?;
    let mut stats = ComplexStats::default();
    for _ in 0..samples {
        stats.push(property.sample(d, operands, rng)?);
    }
    let estimate = stats.mean();
    let se = stats.standard_error();
    let diff = (estimate - analytic).norm();
    let z_score = if se > 0.0 && se.is_finite() {
        diff / se
    } else if diff <= 1e-12 * (1.0 + analytic.norm()) {
        0.0
    } else {
        f64::INFINITY
    };
    Ok(MomentCheckReport {
        property,
        d,
        operands: String::new(),
        estimate_re: estimate.re,
        estimate_im: estimate.im,
        analytic_re: analytic.re,
        analytic_im: analytic.im,
        standard_error: se,
        z_score,
        samples,
    })
}
