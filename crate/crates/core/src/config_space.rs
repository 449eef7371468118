//! Finite marked-binomial sample space: parameters, configurations, exact
//! tables and seeded path sampling.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

pub const DEFAULT_ENUM_CAP: u64 = 10_000_000;

/// Enumeration cap, overridable through `MBP_ENUM_CAP`.
pub fn enum_cap() -> u64 {
    std::env::var("MBP_ENUM_CAP")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_ENUM_CAP)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub horizon: usize,
    pub marks: Vec<f64>,
    pub jump_prob: f64,
    pub mark_probs: Vec<f64>,
    pub seed: u64,
}

impl ModelParams {
    pub fn new(
        horizon: usize,
        marks: Vec<f64>,
        jump_prob: f64,
        mark_probs: Vec<f64>,
        seed: u64,
    ) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::InvalidParam("horizon T must be positive".into()));
        }
        if marks.is_empty() {
            return Err(Error::InvalidParam("mark space is empty".into()));
        }
        if marks.len() != mark_probs.len() {
            return Err(Error::InvalidParam(format!(
                "{} marks but {} mark probabilities",
                marks.len(),
                mark_probs.len()
            )));
        }
        if marks.iter().any(|k| !k.is_finite()) {
            return Err(Error::InvalidParam("marks must be finite".into()));
        }
        for i in 0..marks.len() {
            for j in 0..i {
                if marks[i] == marks[j] {
                    return Err(Error::InvalidParam(format!("mark {} repeated", marks[i])));
                }
            }
        }
        if !(jump_prob > 0.0 && jump_prob < 1.0) {
            return Err(Error::InvalidParam(format!(
                "jump probability lambda = {jump_prob} must lie in (0,1)"
            )));
        }
        if mark_probs.iter().any(|&q| !(q > 0.0) || !q.is_finite()) {
            return Err(Error::InvalidParam("every Q(k) must be positive".into()));
        }
        let s: f64 = mark_probs.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!("Q sums to {s}, not 1")));
        }
        Ok(ModelParams { horizon, marks, jump_prob, mark_probs, seed })
    }

    /// Canonical three-step instance with marks {1,-1}.
    pub fn canonical() -> Self {
        ModelParams::new(3, vec![1.0, -1.0], 0.5, vec![0.5, 0.5], 0).unwrap()
    }

    pub fn n_marks(&self) -> usize {
        self.marks.len()
    }

    pub fn radix(&self) -> usize {
        self.marks.len() + 1
    }

    /// ν({(t,k)}) = λQ(k).
    pub fn nu(&self, k: usize) -> f64 {
        self.jump_prob * self.mark_probs[k]
    }

    /// Per-step law over digits 0..=m.
    pub fn step_probs(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.radix());
        p.push(1.0 - self.jump_prob);
        p.extend((0..self.n_marks()).map(|k| self.nu(k)));
        p
    }

    pub fn mean_mark(&self) -> f64 {
        self.marks.iter().zip(&self.mark_probs).map(|(k, q)| k * q).sum()
    }

    /// (1+m)^T, or `None` on overflow.
    pub fn state_count(&self) -> Option<u64> {
        (self.radix() as u64).checked_pow(self.horizon as u32)
    }

    /// Parses `key = value` lines (keys T, marks, lambda, Q, seed; `#` comments).
    pub fn from_kv(text: &str) -> Result<Self> {
        let mut t = None;
        let mut marks = None;
        let mut lambda = None;
        let mut q = None;
        let mut seed = 0u64;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
            let value = value.trim();
            match key.trim() {
                "T" => t = Some(parse_num::<usize>(value, "T")?),
                "marks" => marks = Some(parse_list(value, "marks")?),
                "lambda" => lambda = Some(parse_num::<f64>(value, "lambda")?),
                "Q" => q = Some(parse_list(value, "Q")?),
                "seed" => seed = parse_num::<u64>(value, "seed")?,
                other => return Err(Error::Config(format!("unknown key '{other}'"))),
            }
        }
        let missing = |k: &str| Error::Config(format!("missing key '{k}'"));
        ModelParams::new(
            t.ok_or_else(|| missing("T"))?,
            marks.ok_or_else(|| missing("marks"))?,
            lambda.ok_or_else(|| missing("lambda"))?,
            q.ok_or_else(|| missing("Q"))?,
            seed,
        )
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, key: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value for {key}: '{s}'")))
}

pub fn parse_list(s: &str, key: &str) -> Result<Vec<f64>> {
    s.split(',').map(|x| parse_num::<f64>(x, key)).collect()
}

/// One realized path; digit 0 means no jump, digit i means a jump with mark i-1
/// (zero-based mark index).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Configuration {
    pub digits: Vec<usize>,
}

impl Configuration {
    pub fn new(digits: Vec<usize>, params: &ModelParams) -> Result<Self> {
        if digits.len() != params.horizon {
            return Err(Error::InvalidParam(format!(
                "configuration length {} differs from T = {}",
                digits.len(),
                params.horizon
            )));
        }
        if let Some(&d) = digits.iter().find(|&&d| d > params.n_marks()) {
            return Err(Error::OutOfRange(format!("digit {d}")));
        }
        Ok(Configuration { digits })
    }

    pub fn horizon(&self) -> usize {
        self.digits.len()
    }

    /// Digit at time t (1-based).
    pub fn digit(&self, t: usize) -> usize {
        self.digits[t - 1]
    }

    pub fn rank(&self, radix: usize) -> usize {
        self.digits.iter().rev().fold(0, |acc, &d| acc * radix + d)
    }

    pub fn from_rank(mut rank: usize, horizon: usize, radix: usize) -> Self {
        let mut digits = Vec::with_capacity(horizon);
        for _ in 0..horizon {
            digits.push(rank % radix);
            rank /= radix;
        }
        Configuration { digits }
    }

    /// π_t: remove any jump at t.
    pub fn restrict(&self, t: usize) -> Self {
        let mut c = self.clone();
        c.digits[t - 1] = 0;
        c
    }

    /// π_t(η) + δ_(t,k) with zero-based mark index k.
    pub fn augment(&self, t: usize, k: usize) -> Self {
        let mut c = self.clone();
        c.digits[t - 1] = k + 1;
        c
    }

    pub fn jumps_up_to(&self, t: usize) -> usize {
        self.digits[..t].iter().filter(|&&d| d != 0).count()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.digits.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", s.join(""))
    }
}

pub fn config_probability(params: &ModelParams, omega: &Configuration) -> f64 {
    let p = params.step_probs();
    omega.digits.iter().map(|&d| p[d]).product()
}

/// (N_t, Y_t, Ȳ_t).
pub fn compound_value(
    params: &ModelParams,
    omega: &Configuration,
    t: usize,
) -> Result<(usize, f64, f64)> {
    if t == 0 || t > params.horizon {
        return Err(Error::OutOfRange(format!("time {t}")));
    }
    let n = omega.jumps_up_to(t);
    let y: f64 = omega.digits[..t]
        .iter()
        .filter(|&&d| d != 0)
        .map(|&d| params.marks[d - 1])
        .sum();
    let ybar = y - params.jump_prob * t as f64 * params.mean_mark();
    Ok((n, y, ybar))
}

/// Draws one path from stream `stream` of the generator seeded by `params.seed`.
pub fn sample_path(params: &ModelParams, stream: u64) -> Configuration {
    let mut rng = stream_rng(params.seed, stream);
    sample_with(params, &mut rng)
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn sample_with<R: Rng>(params: &ModelParams, rng: &mut R) -> Configuration {
    let cdf = cumulative(&params.step_probs());
    let digits = (0..params.horizon).map(|_| draw_digit(&cdf, rng)).collect();
    Configuration { digits }
}

pub(crate) fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    p.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

pub(crate) fn draw_digit<R: Rng>(cdf: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

/// The enumerated space: rank-indexed probabilities and digit strides.
#[derive(Debug, Clone)]
pub struct Space {
    pub params: ModelParams,
    n: usize,
    radix: usize,
    strides: Vec<usize>,
    probs: Vec<f64>,
    step: Vec<f64>,
}

impl PartialEq for Space {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl Space {
    pub fn new(params: ModelParams) -> Result<Arc<Space>> {
        Space::with_cap(params, enum_cap())
    }

    pub fn with_cap(params: ModelParams, cap: u64) -> Result<Arc<Space>> {
        let count = params.state_count();
        match count {
            Some(c) if c <= cap => {}
            _ => {
                let shown = count.map(|c| c.to_string()).unwrap_or_else(|| {
                    format!("{}^{}", params.radix(), params.horizon)
                });
                return Err(Error::EnumerationTooLarge { count: shown, cap });
            }
        }
        let radix = params.radix();
        let n = count.unwrap() as usize;
        let strides: Vec<usize> = (0..=params.horizon).map(|t| radix.pow(t as u32)).collect();
        let step = params.step_probs();
        let mut probs = vec![1.0; n];
        // Build by doubling out one digit at a time (t=1 least significant).
        for t in 0..params.horizon {
            let s = strides[t];
            for r in (0..s).rev() {
                let base = probs[r];
                for d in 0..radix {
                    probs[d * s + r] = base * step[d];
                }
            }
        }
        Ok(Arc::new(Space { params, n, radix, strides, probs, step }))
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.params.horizon
    }

    pub fn n_marks(&self) -> usize {
        self.radix - 1
    }

    pub fn radix(&self) -> usize {
        self.radix
    }

    /// (1+m)^(t-1), the weight of digit t in the rank.
    pub fn stride(&self, t: usize) -> usize {
        self.strides[t - 1]
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn step_probs(&self) -> &[f64] {
        &self.step
    }

    pub fn digit(&self, rank: usize, t: usize) -> usize {
        (rank / self.strides[t - 1]) % self.radix
    }

    pub fn with_digit(&self, rank: usize, t: usize, d: usize) -> usize {
        let s = self.strides[t - 1];
        rank - self.digit(rank, t) * s + d * s
    }

    pub fn configuration(&self, rank: usize) -> Configuration {
        Configuration::from_rank(rank, self.horizon(), self.radix)
    }

    pub fn enumerate(&self) -> Vec<Configuration> {
        (0..self.n).map(|r| self.configuration(r)).collect()
    }

    pub fn expect(&self, values: &[f64]) -> f64 {
        values.iter().zip(&self.probs).map(|(v, p)| v * p).sum()
    }

    /// E[F | 𝔉_t] as a full table.
    pub fn cond_expect(&self, values: &[f64], t: usize) -> Vec<f64> {
        let low = self.strides[t];
        let mut atom = vec![0.0; low];
        let mut mass = vec![0.0; low];
        for r in 0..self.n {
            atom[r % low] += values[r] * self.probs[r];
            mass[r % low] += self.probs[r];
        }
        for (a, m) in atom.iter_mut().zip(&mass) {
            *a /= m;
        }
        (0..self.n).map(|r| atom[r % low]).collect()
    }

    /// Index of the 𝔉_t atom containing `rank`.
    pub fn atom(&self, rank: usize, t: usize) -> usize {
        rank % self.strides[t]
    }

    /// Number of 𝔉_t atoms.
    pub fn atom_count(&self, t: usize) -> usize {
        self.strides[t]
    }

    pub fn table<F: Fn(&Configuration) -> f64>(&self, f: F) -> Vec<f64> {
        (0..self.n).map(|r| f(&self.configuration(r))).collect()
    }
}

pub fn enumerate_configurations(params: &ModelParams) -> Result<Vec<Configuration>> {
    Ok(Space::new(params.clone())?.enumerate())
}

pub type Callable = Arc<dyn Fn(&Configuration) -> f64 + Send + Sync>;

/// A real functional of configurations: a dense rank-indexed table or a callable.
#[derive(Clone)]
pub enum PathFunctional {
    Exact { space: Arc<Space>, values: Vec<f64> },
    Callable { params: Arc<ModelParams>, f: Callable },
}

impl fmt::Debug for PathFunctional {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PathFunctional::Exact { values, .. } => {
                f.debug_struct("Exact").field("values", values).finish()
            }
            PathFunctional::Callable { .. } => f.write_str("Callable"),
        }
    }
}

impl PathFunctional {
    pub fn from_table(space: &Arc<Space>, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.size() {
            return Err(Error::InvalidParam(format!(
                "table length {} differs from {}",
                values.len(),
                space.size()
            )));
        }
        Ok(PathFunctional::Exact { space: space.clone(), values })
    }

    pub(crate) fn exact_unchecked(space: &Arc<Space>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), space.size());
        PathFunctional::Exact { space: space.clone(), values }
    }

    pub fn from_fn<F: Fn(&Configuration) -> f64>(space: &Arc<Space>, f: F) -> Self {
        PathFunctional::exact_unchecked(space, space.table(f))
    }

    pub fn callable<F>(params: ModelParams, f: F) -> Self
    where
        F: Fn(&Configuration) -> f64 + Send + Sync + 'static,
    {
        PathFunctional::Callable { params: Arc::new(params), f: Arc::new(f) }
    }

    pub fn constant(space: &Arc<Space>, c: f64) -> Self {
        PathFunctional::exact_unchecked(space, vec![c; space.size()])
    }

    /// N_t.
    pub fn counting(space: &Arc<Space>, t: usize) -> Self {
        PathFunctional::from_fn(space, |w| w.jumps_up_to(t) as f64)
    }

    /// Y_t.
    pub fn compound(space: &Arc<Space>, t: usize) -> Self {
        let p = space.params.clone();
        PathFunctional::from_fn(space, move |w| compound_value(&p, w, t).unwrap().1)
    }

    /// Ȳ_t.
    pub fn compensated(space: &Arc<Space>, t: usize) -> Self {
        let p = space.params.clone();
        PathFunctional::from_fn(space, move |w| compound_value(&p, w, t).unwrap().2)
    }

    pub fn indicator(space: &Arc<Space>, rank: usize) -> Self {
        let mut v = vec![0.0; space.size()];
        v[rank] = 1.0;
        PathFunctional::exact_unchecked(space, v)
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, PathFunctional::Exact { .. })
    }

    pub fn params(&self) -> &ModelParams {
        match self {
            PathFunctional::Exact { space, .. } => &space.params,
            PathFunctional::Callable { params, .. } => params,
        }
    }

    pub fn exact(&self) -> Result<(&Arc<Space>, &[f64])> {
        match self {
            PathFunctional::Exact { space, values } => Ok((space, values)),
            PathFunctional::Callable { .. } => Err(Error::ExactModeRequired),
        }
    }

    pub fn values(&self) -> Result<&[f64]> {
        Ok(self.exact()?.1)
    }

    pub fn space(&self) -> Result<&Arc<Space>> {
        Ok(self.exact()?.0)
    }

    pub fn eval(&self, omega: &Configuration) -> f64 {
        match self {
            PathFunctional::Exact { space, values } => values[omega.rank(space.radix())],
            PathFunctional::Callable { f, .. } => f(omega),
        }
    }

    pub fn into_values(self) -> Result<Vec<f64>> {
        match self {
            PathFunctional::Exact { values, .. } => Ok(values),
            PathFunctional::Callable { .. } => Err(Error::ExactModeRequired),
        }
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        let (s, v) = self.exact()?;
        Ok(PathFunctional::exact_unchecked(s, v.iter().map(|&x| f(x)).collect()))
    }

    pub fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Self, f: F) -> Result<Self> {
        let (s, a) = self.exact()?;
        let (s2, b) = other.exact()?;
        if s.params != s2.params {
            return Err(Error::SpaceMismatch);
        }
        Ok(PathFunctional::exact_unchecked(
            s,
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
        ))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        self.map(|x| c * x)
    }

    /// F - E[F].
    pub fn centered(&self) -> Result<Self> {
        let m = expectation(self)?;
        self.map(|x| x - m)
    }

    /// Monte Carlo mean and standard error, usable in either mode.
    pub fn mc_expectation(&self, n: usize, stream: u64) -> (f64, f64) {
        let params = self.params().clone();
        let mut rng = stream_rng(params.seed, stream);
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let x = self.eval(&sample_with(&params, &mut rng));
            s += x;
            s2 += x * x;
        }
        let mean = s / n as f64;
        let var = (s2 / n as f64 - mean * mean).max(0.0);
        (mean, (var / n as f64).sqrt())
    }

    /// CSV with header `rank,probability,value`.
    pub fn to_csv(&self) -> Result<String> {
        let (s, v) = self.exact()?;
        let mut out = String::from("rank,probability,value\n");
        for (r, (x, p)) in v.iter().zip(s.probs()).enumerate() {
            out.push_str(&format!("{r},{},{}\n", crate::fmt17(*p), crate::fmt17(*x)));
        }
        Ok(out)
    }
}

pub fn expectation(f: &PathFunctional) -> Result<f64> {
    let (s, v) = f.exact()?;
    Ok(s.expect(v))
}

pub fn conditional_expectation(f: &PathFunctional, t: usize) -> Result<PathFunctional> {
    let (s, v) = f.exact()?;
    if t > s.horizon() {
        return Err(Error::OutOfRange(format!("time {t}")));
    }
    Ok(PathFunctional::exact_unchecked(s, s.cond_expect(v, t)))
}

pub(crate) fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cti() -> Arc<Space> {
        Space::new(ModelParams::canonical()).unwrap()
    }

    #[test]
    fn enumeration_counts() {
        assert_eq!(enumerate_configurations(&ModelParams::canonical()).unwrap().len(), 27);
        let p = ModelParams::new(1, vec![1.0], 0.3, vec![1.0], 0).unwrap();
        assert_eq!(enumerate_configurations(&p).unwrap().len(), 2);
        let p = ModelParams::new(5, vec![1.0, 2.0, 3.0], 0.3, vec![0.5, 0.3, 0.2], 0).unwrap();
        assert_eq!(enumerate_configurations(&p).unwrap().len(), 1024);
    }

    #[test]
    fn cap_error_names_count() {
        let p = ModelParams::new(5, vec![1.0, 2.0, 3.0], 0.3, vec![0.5, 0.3, 0.2], 0).unwrap();
        let e = Space::with_cap(p, 100).unwrap_err();
        assert!(e.to_string().contains("1024"), "{e}");
    }

    #[test]
    fn rejects_bad_params() {
        assert!(ModelParams::new(3, vec![1.0], 0.0, vec![1.0], 0).is_err());
        assert!(ModelParams::new(3, vec![1.0], 1.0, vec![1.0], 0).is_err());
        assert!(ModelParams::new(3, vec![1.0, 1.0], 0.5, vec![0.5, 0.5], 0).is_err());
        assert!(ModelParams::new(3, vec![1.0, 2.0], 0.5, vec![0.6, 0.5], 0).is_err());
        assert!(ModelParams::new(3, vec![1.0, 2.0], 0.5, vec![1.0, 0.0], 0).is_err());
    }

    #[test]
    fn probabilities() {
        let s = cti();
        let p = &s.params;
        let zero = Configuration::new(vec![0, 0, 0], p).unwrap();
        assert!((config_probability(p, &zero) - 0.125).abs() < 1e-15);
        let one = Configuration::new(vec![1, 0, 0], p).unwrap();
        assert!((config_probability(p, &one) - 0.0625).abs() < 1e-15);
        assert!((s.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for r in 0..s.size() {
            let w = s.configuration(r);
            assert_eq!(w.rank(3), r);
            assert!((s.probs()[r] - config_probability(p, &w)).abs() < 1e-16);
        }
    }

    #[test]
    fn compound_values() {
        let p = ModelParams::canonical();
        let z = Configuration::new(vec![0, 0, 0], &p).unwrap();
        assert_eq!(compound_value(&p, &z, 3).unwrap(), (0, 0.0, 0.0));
        let w = Configuration::new(vec![1, 2, 1], &p).unwrap();
        let (n, y, _) = compound_value(&p, &w, 3).unwrap();
        assert_eq!((n, y), (3, 1.0));
        assert!(compound_value(&p, &w, 4).is_err());
        assert!(compound_value(&p, &w, 0).is_err());
    }

    #[test]
    fn compensated_is_martingale() {
        let p = ModelParams::new(4, vec![1.0, 2.5, -0.5], 0.35, vec![0.2, 0.3, 0.5], 0).unwrap();
        let s = Space::new(p).unwrap();
        for t in 1..=4 {
            let yt = PathFunctional::compensated(&s, t);
            let prev = if t == 1 {
                PathFunctional::constant(&s, 0.0)
            } else {
                PathFunctional::compensated(&s, t - 1)
            };
            let inc = yt.sub(&prev).unwrap();
            let c = conditional_expectation(&inc, t - 1).unwrap();
            assert!(c.values().unwrap().iter().all(|x| x.abs() < 1e-12));
        }
        let yt = PathFunctional::compensated(&s, 4);
        assert!(expectation(&yt).unwrap().abs() < 1e-12);
    }

    #[test]
    fn expectations() {
        let s = cti();
        assert!((expectation(&PathFunctional::constant(&s, 2.5)).unwrap() - 2.5).abs() < 1e-15);
        assert!((expectation(&PathFunctional::counting(&s, 3)).unwrap() - 1.5).abs() < 1e-15);
        assert!((expectation(&PathFunctional::indicator(&s, 0)).unwrap() - 0.125).abs() < 1e-15);
        let c = PathFunctional::callable(ModelParams::canonical(), |_| 1.0);
        assert_eq!(expectation(&c), Err(Error::ExactModeRequired));
    }

    #[test]
    fn conditional_edges() {
        let s = cti();
        let f = PathFunctional::from_fn(&s, |w| (w.rank(3) as f64).sin());
        let e = expectation(&f).unwrap();
        let c0 = conditional_expectation(&f, 0).unwrap();
        assert!(c0.values().unwrap().iter().all(|x| (x - e).abs() < 1e-12));
        let c3 = conditional_expectation(&f, 3).unwrap();
        assert_eq!(c3.values().unwrap(), f.values().unwrap());
        assert!(conditional_expectation(&f, 4).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let p = ModelParams::canonical();
        assert_eq!(sample_path(&p, 7), sample_path(&p, 7));
        let n = 100_000;
        let f = PathFunctional::callable(p.clone(), |w| w.jumps_up_to(3) as f64);
        let (m, se) = f.mc_expectation(n, 1);
        assert!((m - 1.5).abs() < 4.0 * se, "{m} {se}");
    }

    #[test]
    fn kv_config() {
        let p = ModelParams::from_kv("# canonical\nT = 3\nmarks = 1,-1\nlambda=0.5\nQ = 0.5, 0.5\nseed = 9\n")
            .unwrap();
        assert_eq!(p.horizon, 3);
        assert_eq!(p.seed, 9);
        assert!(ModelParams::from_kv("T = 3\n").is_err());
        assert!(ModelParams::from_kv("T = x\n").is_err());
        assert!(ModelParams::from_kv("bogus = 1\n").is_err());
    }

    proptest::proptest! {
        #[test]
        fn tower_property(seed in 0u64..1000, t in 0usize..=4) {
            let p = ModelParams::new(4, vec![1.0, -2.0], 0.4, vec![0.3, 0.7], seed).unwrap();
            let s = Space::new(p).unwrap();
            let mut rng = stream_rng(seed, 0);
            let f = PathFunctional::from_table(&s, (0..s.size()).map(|_| rng.random::<f64>() - 0.5).collect()).unwrap();
            let c = conditional_expectation(&f, t).unwrap();
            proptest::prop_assert!((expectation(&c).unwrap() - expectation(&f).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn rank_round_trip(rank in 0usize..1024) {
            let w = Configuration::from_rank(rank, 5, 4);
            proptest::prop_assert_eq!(w.rank(4), rank);
        }
    }
}
