//! Sampling probabilities for light clients.
//!
//! All functions here are pure. The Monte-Carlo helpers take a master seed
//! and derive one ChaCha stream per trial, so aggregate counts are
//! reproducible regardless of how trials are scheduled.

use num_bigint::{BigInt, BigUint};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{Binomial, DiscreteCDF};
use thiserror::Error;

/// Largest population size for which [`pe`] uses exact arithmetic.
pub const EXACT_PE_LIMIT: u64 = 4096;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum ProbError {
    #[error("parameter out of range: {0}")]
    Range(String),
    #[error("population of {n} is too large for exact evaluation")]
    Nonconvergent { n: u64 },
}

fn range(msg: impl Into<String>) -> ProbError {
    ProbError::Range(msg.into())
}

/// Parameters of one sampling scenario over a `2k x 2k` extended matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplingParams {
    pub k: u64,
    pub s: u64,
    pub c: u64,
    pub c_hat: u64,
    pub q: u64,
    pub d: u64,
}

impl SamplingParams {
    pub fn new(k: u64, s: u64, c: u64) -> Result<Self, ProbError> {
        let p = SamplingParams { k, s, c, c_hat: 0, q: min_withheld(k), d: 0 };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), ProbError> {
        if self.k == 0 {
            return Err(range("k must be positive"));
        }
        if self.s == 0 || self.s >= min_withheld(self.k) {
            return Err(range(format!("s = {} outside 0 < s < (k+1)^2", self.s)));
        }
        if self.q > total_shares(self.k) {
            return Err(range("q exceeds the number of shares"));
        }
        if self.c_hat > self.c {
            return Err(range("client threshold exceeds client count"));
        }
        if self.d > self.c * self.s {
            return Err(range("more denied requests than requests"));
        }
        Ok(())
    }

    pub fn gamma(&self) -> u64 {
        gamma(self.k)
    }

    pub fn lambda(&self) -> u64 {
        total_shares(self.k) - gamma(self.k)
    }

    pub fn p1(&self) -> Result<f64, ProbError> {
        p1(self.k, self.s, self.q)
    }

    pub fn pc(&self) -> Result<f64, ProbError> {
        pc(self.k, self.s, self.c, self.c_hat)
    }

    pub fn pe(&self) -> Result<f64, ProbError> {
        pe(total_shares(self.k), self.s, self.c, self.lambda())
    }

    pub fn px(&self) -> Result<f64, ProbError> {
        px(self.s, self.c, self.d)
    }
}

/// Number of shares in the extended matrix, `4k^2`.
pub fn total_shares(k: u64) -> u64 {
    4 * k * k
}

/// Smallest number of withheld shares that can make the matrix unrecoverable.
pub fn min_withheld(k: u64) -> u64 {
    (k + 1) * (k + 1)
}

/// Number of distinct shares that always suffices to recover the matrix.
pub fn gamma(k: u64) -> u64 {
    k * (3 * k - 2)
}

/// Probability that `s` distinct samples hit at least one of `q` unavailable
/// shares. Product form.
pub fn p1(k: u64, s: u64, q: u64) -> Result<f64, ProbError> {
    let n = total_shares(k);
    if k == 0 || q > n || s > n {
        return Err(range(format!("p1 needs s <= 4k^2 and q <= 4k^2 (k={k}, s={s}, q={q})")));
    }
    let miss: f64 = (0..s).map(|i| 1.0 - q as f64 / (n - i) as f64).product();
    Ok((1.0 - miss).clamp(0.0, 1.0))
}

/// Same quantity as [`p1`] computed as an exact hypergeometric complement.
pub fn p1_hypergeometric(k: u64, s: u64, q: u64) -> Result<f64, ProbError> {
    let n = total_shares(k);
    if k == 0 || q > n || s > n {
        return Err(range(format!("p1 needs s <= 4k^2 and q <= 4k^2 (k={k}, s={s}, q={q})")));
    }
    let miss = BigRational::new(binom(n - q, s).into(), binom(n, s).into());
    Ok(ratio_to_f64(&(BigRational::one() - miss)))
}

/// Probability that more than `c_hat` of `c` clients each sample at least
/// one unavailable share, with `q = (k+1)^2`. The binomial CDF includes the
/// zero-success term.
pub fn pc(k: u64, s: u64, c: u64, c_hat: u64) -> Result<f64, ProbError> {
    pc_with(p1(k, s, min_withheld(k))?, c, c_hat)
}

/// Variant of [`pc`] whose subtracted sum starts at one success, so the
/// zero-success mass is counted as a success of the check.
pub fn pc_from_one(k: u64, s: u64, c: u64, c_hat: u64) -> Result<f64, ProbError> {
    let p = p1(k, s, min_withheld(k))?;
    let dist = binomial(p, c)?;
    Ok((pc_with(p, c, c_hat)? + dist.cdf(0)).min(1.0))
}

/// Upper tail `P(X > c_hat)` for `X ~ Binomial(c, p)`.
pub fn pc_with(p: f64, c: u64, c_hat: u64) -> Result<f64, ProbError> {
    if c_hat > c {
        return Err(range("client threshold exceeds client count"));
    }
    if c_hat == c {
        return Ok(0.0);
    }
    Ok(binomial(p, c)?.sf(c_hat).clamp(0.0, 1.0))
}

fn binomial(p: f64, c: u64) -> Result<Binomial, ProbError> {
    Binomial::new(p, c).map_err(|e| range(e.to_string()))
}

/// Probability that `c` draws of `s` distinct elements from `n` cover at
/// least `n - lambda` distinct elements in total.
///
/// Evaluated exactly with an alternating series over big integers. Terms
/// are log-concave in the summation index, so once they decrease the
/// remainder is bounded by the first omitted term and the series is cut when
/// that bound drops below `2^-128` of the total.
pub fn pe(n: u64, s: u64, c: u64, lambda: u64) -> Result<f64, ProbError> {
    Ok(ratio_to_f64(&pe_exact(n, s, c, lambda)?))
}

/// Exact value of [`pe`] up to the truncation tolerance.
pub fn pe_exact(n: u64, s: u64, c: u64, lambda: u64) -> Result<BigRational, ProbError> {
    if s > n {
        return Err(range(format!("s = {s} exceeds n = {n}")));
    }
    if n > EXACT_PE_LIMIT {
        return Err(ProbError::Nonconvergent { n });
    }
    let one = BigRational::one();
    if lambda >= n {
        return Ok(one);
    }
    let need = n - lambda;
    if c == 0 {
        return Ok(BigRational::zero());
    }
    if s >= need {
        return Ok(one);
    }
    if c.saturating_mul(s) < need {
        return Ok(BigRational::zero());
    }
    let (sum, denom) = pe_series(n, s, c, lambda);
    let denom = BigInt::from(denom);
    Ok(BigRational::new(&denom - sum, denom))
}

/// Returns the signed series sum and the common denominator `C(n,s)^c`.
fn pe_series(n: u64, s: u64, c: u64, lambda: u64) -> (BigInt, BigUint) {
    let cu = c as u32;
    let denom = binom(n, s).pow(cu);
    let ln_denom = c as f64 * ln_binom(n, s);
    let cutoff = ln_denom - 128.0 * std::f64::consts::LN_2;

    let last = n - lambda - s;
    let mut a = BigUint::one();
    let mut b = binom(n, lambda + 1);
    let mut m = binom(n - lambda - 1, s);
    let mut sum = BigInt::zero();
    let mut prev_ln = f64::NEG_INFINITY;
    for i in 1..=last {
        let ln_term = ln_binom(lambda + i - 1, lambda)
            + ln_binom(n, lambda + i)
            + c as f64 * ln_binom(n - lambda - i, s);
        let term = BigInt::from(&a * &b * m.pow(cu));
        if i % 2 == 1 {
            sum += term;
        } else {
            sum -= term;
        }
        if ln_term < prev_ln && ln_term < cutoff {
            break;
        }
        prev_ln = ln_term;
        if i == last {
            break;
        }
        a = a * (lambda + i) / i;
        b = b * (n - lambda - i) / (lambda + i + 1);
        m = m * (n - lambda - i - s) / (n - lambda - i);
    }
    (sum, denom)
}

/// Whether `pe(n, s, c, lambda) >= target`, decided without rounding.
pub fn pe_at_least(n: u64, s: u64, c: u64, lambda: u64, target: f64) -> Result<bool, ProbError> {
    let t = BigRational::from_float(target).ok_or_else(|| range("target is not finite"))?;
    Ok(pe_exact(n, s, c, lambda)? >= t)
}

/// How [`min_clients`] arrived at its answer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Exact,
    MonteCarlo { trials: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MinClients {
    pub c: u64,
    pub method: Method,
}

/// Trials used when [`min_clients`] falls back to simulation.
pub const MIN_CLIENTS_TRIALS: u64 = 2000;

/// Smallest client count `c` such that `c` clients sampling `s` shares each
/// collect at least `k(3k-2)` distinct shares with probability `>= target`.
///
/// Exact for `4k^2 <= 4096`. Larger matrices use the empirical quantile of
/// simulated hitting times.
pub fn min_clients(k: u64, s: u64, target: f64, seed: u64) -> Result<MinClients, ProbError> {
    if !(0.0..1.0).contains(&target) {
        return Err(range("target must lie in [0, 1)"));
    }
    let n = total_shares(k);
    if k == 0 || s == 0 || s > n {
        return Err(range(format!("invalid k = {k}, s = {s}")));
    }
    if n > EXACT_PE_LIMIT {
        let c = min_clients_monte_carlo(k, s, target, MIN_CLIENTS_TRIALS, seed);
        return Ok(MinClients { c, method: Method::MonteCarlo { trials: MIN_CLIENTS_TRIALS } });
    }
    let lambda = n - gamma(k);
    let ok = |c: u64| pe_at_least(n, s, c, lambda, target);

    // Bracket around a cheap simulated estimate, then bisect exactly.
    let guess = min_clients_monte_carlo(k, s, target, 200, seed).max(1);
    let mut step = (guess / 50).max(2);
    let mut lo = guess.saturating_sub(step);
    while lo > 0 && ok(lo)? {
        step *= 2;
        lo = lo.saturating_sub(step);
    }
    let mut hi = guess + step;
    while !ok(hi)? {
        lo = hi;
        step *= 2;
        hi += step;
    }
    // Invariant: lo fails (or is zero) and hi succeeds.
    if lo == 0 && ok(0)? {
        return Ok(MinClients { c: 0, method: Method::Exact });
    }
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if ok(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(MinClients { c: hi, method: Method::Exact })
}

/// Empirical `target` quantile of the client count at which `gamma(k)`
/// distinct shares have been collected.
pub fn min_clients_monte_carlo(k: u64, s: u64, target: f64, trials: u64, seed: u64) -> u64 {
    let n = total_shares(k);
    let mut times: Vec<u64> =
        (0..trials).map(|t| hitting_time(&mut trial_rng(seed, t), n, s, gamma(k))).collect();
    times.sort_unstable();
    let idx = ((target * trials as f64).ceil() as usize).clamp(1, times.len()) - 1;
    times[idx]
}

/// Number of clients, each drawing `s` distinct elements out of `n`, until
/// at least `goal` distinct elements have been seen.
pub fn hitting_time<R: Rng + ?Sized>(rng: &mut R, n: u64, s: u64, goal: u64) -> u64 {
    let mut seen = vec![false; n as usize];
    let mut distinct = 0;
    let mut clients = 0;
    while distinct < goal {
        clients += 1;
        for i in index::sample(rng, n as usize, s as usize) {
            if !seen[i] {
                seen[i] = true;
                distinct += 1;
            }
        }
    }
    clients
}

/// RNG for trial `trial` under master seed `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Probability that a given client has at least one of its `s` requests
/// denied when `d` of all `c*s` requests are denied uniformly. Sum form.
pub fn px(s: u64, c: u64, d: u64) -> Result<f64, ProbError> {
    Ok(ratio_to_f64(&px_sum_exact(s, c, d)?))
}

pub fn px_sum_exact(s: u64, c: u64, d: u64) -> Result<BigRational, ProbError> {
    px_check(s, c, d)?;
    let total = binom(c * s, d);
    let others = s * (c - 1);
    let mut num = BigUint::zero();
    for i in 1..=s.min(d) {
        if d - i <= others {
            num += binom(s, i) * binom(others, d - i);
        }
    }
    Ok(BigRational::new(num.into(), total.into()))
}

/// [`px`] via the complement `1 - C(s(c-1), d) / C(cs, d)`.
pub fn px_complement(s: u64, c: u64, d: u64) -> Result<f64, ProbError> {
    Ok(ratio_to_f64(&px_complement_exact(s, c, d)?))
}

pub fn px_complement_exact(s: u64, c: u64, d: u64) -> Result<BigRational, ProbError> {
    px_check(s, c, d)?;
    let miss = BigRational::new(binom(s * (c - 1), d).into(), binom(c * s, d).into());
    Ok(BigRational::one() - miss)
}

fn px_check(s: u64, c: u64, d: u64) -> Result<(), ProbError> {
    if c == 0 || s == 0 {
        return Err(range("px needs at least one client and one sample"));
    }
    if d > c * s {
        return Err(range(format!("d = {d} exceeds c*s = {}", c * s)));
    }
    Ok(())
}

/// Binomial coefficient; zero when `r > n`.
pub fn binom(n: u64, r: u64) -> BigUint {
    if r > n {
        return BigUint::zero();
    }
    let r = r.min(n - r);
    let mut acc = BigUint::one();
    for i in 0..r {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

fn ln_binom(n: u64, r: u64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    if r > n {
        return f64::NEG_INFINITY;
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(r as f64 + 1.0) - ln_gamma((n - r) as f64 + 1.0)
}

/// Converts a rational in `[0, 1]`-ish range to the nearest `f64` without
/// overflowing on huge numerators and denominators.
pub fn ratio_to_f64(r: &BigRational) -> f64 {
    if r.is_zero() {
        return 0.0;
    }
    let (num, den) = (r.numer(), r.denom());
    let shift = den.bits() as i64 - num.bits() as i64 + 64;
    let scaled = if shift >= 0 {
        (num << shift as usize).div_floor(den)
    } else {
        num.div_floor(&(den << (-shift) as usize))
    };
    scaled.to_f64().unwrap_or(f64::NAN) * 2f64.powi(-shift as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn p1_trivial_and_limits() {
        assert_eq!(p1(1, 1, 4).unwrap(), 1.0);
        assert_eq!(p1(4, 0, 25).unwrap(), 0.0);
        assert!(p1(2, 17, 9).is_err());
        assert_eq!(p1(2, 8, 9).unwrap(), 1.0);
        let big = p1(4096, 1, min_withheld(4096)).unwrap();
        assert!(close(big, 0.25, 1e-3));
    }

    #[test]
    fn p1_forms_agree() {
        for k in [1u64, 2, 4, 16, 32] {
            let q = min_withheld(k);
            for s in 0..=(total_shares(k) - q).min(30) {
                let a = p1(k, s, q).unwrap();
                let b = p1_hypergeometric(k, s, q).unwrap();
                assert!(close(a, b, 1e-12), "k={k} s={s}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn p1_monotone() {
        let k = 8;
        let mut last = 0.0;
        for s in 0..40 {
            let v = p1(k, s, min_withheld(k)).unwrap();
            assert!(v >= last);
            last = v;
        }
        assert!(p1(k, 5, 30).unwrap() >= p1(k, 5, 29).unwrap());
    }

    #[test]
    fn pc_edges() {
        assert_eq!(pc(8, 5, 20, 20).unwrap(), 0.0);
        assert_eq!(pc_with(1.0, 20, 19).unwrap(), 1.0);
        assert!(pc(8, 5, 20, 21).is_err());
        let a = pc(16, 3, 50, 10).unwrap();
        let b = pc_from_one(16, 3, 50, 10).unwrap();
        let p = p1(16, 3, min_withheld(16)).unwrap();
        assert!(close(b - a, (1.0 - p).powi(50), 1e-12));
    }

    #[test]
    fn pc_matches_direct_sum() {
        let (c, p) = (30u64, 0.3f64);
        for c_hat in 0..=c {
            let mut cdf = 0.0;
            for j in 0..=c_hat {
                cdf += binom(c, j).to_f64().unwrap()
                    * p.powi(j as i32)
                    * (1.0 - p).powi((c - j) as i32);
            }
            assert!(close(pc_with(p, c, c_hat).unwrap(), 1.0 - cdf, 1e-12));
        }
    }

    fn pe_enumerated(n: u64, s: u64, c: u64, lambda: u64) -> BigRational {
        // Every ordered tuple of c subsets of size s, as bitmasks.
        let subsets: Vec<u32> =
            (0u32..1 << n).filter(|m| m.count_ones() as u64 == s).collect();
        let mut hits = 0u64;
        let mut total = 0u64;
        let mut idx = vec![0usize; c as usize];
        loop {
            let cover = idx.iter().fold(0u32, |acc, &i| acc | subsets[i]);
            total += 1;
            if cover.count_ones() as u64 + lambda >= n {
                hits += 1;
            }
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    return BigRational::new(hits.into(), total.into());
                }
                idx[pos] += 1;
                if idx[pos] < subsets.len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }

    #[test]
    fn pe_trivial() {
        assert_eq!(pe(2, 1, 1, 1).unwrap(), 1.0);
        assert_eq!(pe(10, 2, 2, 0).unwrap(), 0.0);
        assert!(pe(5000, 2, 2, 0).is_err());
        assert!(pe(4, 5, 2, 0).is_err());
    }

    #[test]
    fn pe_matches_enumeration() {
        for (n, s, c, lambda) in [(4, 2, 2, 0), (5, 2, 3, 0), (5, 2, 3, 1), (6, 3, 3, 1), (6, 2, 4, 2), (7, 3, 3, 0)] {
            let exact = pe_exact(n, s, c, lambda).unwrap();
            assert_eq!(exact, pe_enumerated(n, s, c, lambda), "n={n} s={s} c={c} l={lambda}");
        }
    }

    #[test]
    fn pe_monotone() {
        let (n, lambda) = (64, 20);
        let mut last = 0.0;
        for c in 1..60 {
            let v = pe(n, 2, c, lambda).unwrap();
            assert!(v + 1e-15 >= last, "c={c}");
            last = v;
        }
        assert!(pe(n, 3, 20, lambda).unwrap() >= pe(n, 2, 20, lambda).unwrap());
    }

    #[test]
    fn min_clients_small() {
        let k = 4;
        let n = total_shares(k);
        let lambda = n - gamma(k);
        let got = min_clients(k, 3, 0.99, 7).unwrap();
        assert_eq!(got.method, Method::Exact);
        assert!(pe_at_least(n, 3, got.c, lambda, 0.99).unwrap());
        assert!(!pe_at_least(n, 3, got.c - 1, lambda, 0.99).unwrap());
    }

    #[test]
    fn px_forms_and_edges() {
        assert_eq!(px(3, 4, 12).unwrap(), 1.0);
        assert_eq!(px(3, 4, 0).unwrap(), 0.0);
        assert!(px(3, 4, 13).is_err());
        for (s, c, d) in [(1, 1, 1), (2, 5, 3), (5, 50, 200), (15, 10, 7)] {
            assert_eq!(px_sum_exact(s, c, d).unwrap(), px_complement_exact(s, c, d).unwrap());
        }
    }

    #[test]
    fn ratio_conversion() {
        let r = BigRational::new(1.into(), 3.into());
        assert!(close(ratio_to_f64(&r), 1.0 / 3.0, 1e-16));
        let big = BigRational::new(BigInt::from(7) << 5000usize, BigInt::from(9) << 5000usize);
        assert!(close(ratio_to_f64(&big), 7.0 / 9.0, 1e-16));
    }

    #[test]
    fn params_validation() {
        let p = SamplingParams::new(16, 2, 692).unwrap();
        assert_eq!(p.gamma(), 16 * 46);
        assert_eq!(p.lambda(), 288);
        assert!(SamplingParams::new(2, 9, 1).is_err());
        assert!(SamplingParams { d: 10_000, ..p }.validate().is_err());
    }
}
