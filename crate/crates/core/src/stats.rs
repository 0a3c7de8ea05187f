//! Reference simulator and the statistics used to compare samples.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::engine::{AcceptedEvent, BdsPath, Provenance};
use crate::environment::EnvironmentPath;
use crate::error::{BdsError, Result};
use crate::intensity::IntensityModel;
use crate::model::{event_count, event_types, EventType, Population};
use crate::rng::{exponential, role, RandomSource};

/// Next-event simulation with competing exponentials at the current state.
///
/// No skeleton is involved: after every event or regime switch the total rate
/// is recomputed and a fresh exponential clock is drawn.
pub fn oracle_simulate<M: IntensityModel + ?Sized>(
    model: &M,
    env: &EnvironmentPath,
    z0: &Population,
    horizon: f64,
    source: &RandomSource,
    replicate: u64,
    cap: usize,
) -> Result<BdsPath> {
    let p = model.subgroups();
    if z0.dim() != p {
        return Err(BdsError::DimensionMismatch { expected: p, got: z0.dim() });
    }
    let mut rng = source.stream(role::ORACLE, replicate);
    let types: Vec<EventType> = event_types(p).collect();
    let mut rates = vec![0.0; event_count(p)];
    let mut z = z0.clone();
    let mut t = 0.0;
    let mut events = Vec::new();
    while t < horizon {
        let regime = env.regime_after(t);
        let boundary = env.next_switch_after(t).min(horizon);
        model.rates(regime.params, t, z.counts(), &mut rates);
        let total: f64 = rates.iter().sum();
        let next = t + exponential(&mut rng, total);
        if next > boundary {
            t = boundary;
            continue;
        }
        t = next;
        let mut u = rng.random::<f64>() * total;
        let mut chosen = None;
        for (k, &r) in rates.iter().enumerate() {
            if r > 0.0 {
                chosen = Some(k);
                if u < r {
                    break;
                }
                u -= r;
            }
        }
        let event = types[chosen.expect("positive total rate")];
        z.apply(event)?;
        events.push(AcceptedEvent { time: t, event, record: None });
        if events.len() > cap {
            return Err(BdsError::InvalidArgument(format!("oracle exceeded {cap} events before t = {t}")));
        }
    }
    Ok(BdsPath {
        z0: z0.clone(),
        horizon,
        events,
        skeleton: None,
        provenance: Some(Provenance { seed: source.seed(), replicate }),
    })
}

/// A named sample of a discrete observable.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalLaw<K> {
    pub name: String,
    pub samples: Vec<K>,
}

impl<K: Ord + Clone> EmpiricalLaw<K> {
    pub fn new(name: impl Into<String>, samples: Vec<K>) -> Self {
        EmpiricalLaw { name: name.into(), samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn counts(&self) -> BTreeMap<K, u64> {
        let mut out = BTreeMap::new();
        for s in &self.samples {
            *out.entry(s.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn frequencies(&self) -> BTreeMap<K, f64> {
        let n = self.samples.len() as f64;
        self.counts().into_iter().map(|(k, c)| (k, c as f64 / n)).collect()
    }
}

/// Half the L1 distance between two empirical laws.
pub fn tv_distance<K: Ord + Clone>(a: &EmpiricalLaw<K>, b: &EmpiricalLaw<K>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(BdsError::Empty(format!("{} / {}", a.name, b.name)));
    }
    tv_to_exact(a, &b.frequencies())
}

/// Half the L1 distance between an empirical law and an exact one.
pub fn tv_to_exact<K: Ord + Clone>(a: &EmpiricalLaw<K>, exact: &BTreeMap<K, f64>) -> Result<f64> {
    if a.is_empty() {
        return Err(BdsError::Empty(a.name.clone()));
    }
    let fa = a.frequencies();
    let mut sum = 0.0;
    for (k, &pa) in &fa {
        sum += (pa - exact.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, &pb) in exact {
        if !fa.contains_key(k) {
            sum += pb.abs();
        }
    }
    Ok((0.5 * sum).min(1.0))
}

/// Chi-square homogeneity test of two integer samples.
///
/// Bins are the pooled support in increasing order, merged left to right
/// until each bin's expected count is at least 5 in both samples; a short
/// tail is folded into the last bin. Fewer than two bins gives `p = 1`.
pub fn two_sample_test(a: &EmpiricalLaw<i64>, b: &EmpiricalLaw<i64>) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(BdsError::Empty(format!("{} / {}", a.name, b.name)));
    }
    let ca = a.counts();
    let cb = b.counts();
    let mut support: Vec<i64> = ca.keys().chain(cb.keys()).copied().collect();
    support.sort_unstable();
    support.dedup();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let total = na + nb;
    let min_share = na.min(nb) / total;

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for k in support {
        acc.0 += ca.get(&k).copied().unwrap_or(0) as f64;
        acc.1 += cb.get(&k).copied().unwrap_or(0) as f64;
        if (acc.0 + acc.1) * min_share >= 5.0 {
            bins.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.0 + acc.1 > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => bins.push(acc),
        }
    }
    if bins.len() < 2 {
        return Ok(1.0);
    }
    let mut chi2 = 0.0;
    for &(oa, ob) in &bins {
        let pooled = oa + ob;
        let ea = na * pooled / total;
        let eb = nb * pooled / total;
        chi2 += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = (bins.len() - 1) as f64;
    let dist = ChiSquared::new(df).map_err(|e| BdsError::InvalidArgument(e.to_string()))?;
    Ok(dist.sf(chi2))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroTest {
    pub mean: f64,
    pub standard_error: f64,
    pub z: f64,
    /// `|z| > 3`.
    pub flagged: bool,
}

/// Is the sample mean compatible with zero?
pub fn residual_zero_test(residuals: &[f64]) -> Result<ZeroTest> {
    let n = residuals.len();
    if n < 2 {
        return Err(BdsError::Empty(format!("{n} residuals")));
    }
    let nf = n as f64;
    let mean = residuals.iter().sum::<f64>() / nf;
    let var = residuals.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let z = if se > 0.0 {
        mean / se
    } else if mean == 0.0 {
        0.0
    } else {
        mean.signum() * f64::INFINITY
    };
    Ok(ZeroTest { mean, standard_error: se, z, flagged: z.abs() > 3.0 })
}

/// One line of a results table.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub experiment: String,
    pub statistic: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
}

impl ResultRow {
    pub fn at_most(experiment: &str, statistic: impl Into<String>, value: f64, threshold: f64) -> Self {
        ResultRow { experiment: experiment.into(), statistic: statistic.into(), value, threshold, pass: value <= threshold }
    }

    pub fn below(experiment: &str, statistic: impl Into<String>, value: f64, threshold: f64) -> Self {
        ResultRow { experiment: experiment.into(), statistic: statistic.into(), value, threshold, pass: value < threshold }
    }

    pub fn above(experiment: &str, statistic: impl Into<String>, value: f64, threshold: f64) -> Self {
        ResultRow { experiment: experiment.into(), statistic: statistic.into(), value, threshold, pass: value > threshold }
    }
}

/// `experiment,statistic,value,threshold,pass`
pub fn write_results_csv<W: Write>(out: &mut W, rows: &[ResultRow]) -> std::io::Result<()> {
    writeln!(out, "experiment,statistic,value,threshold,pass")?;
    for r in rows {
        writeln!(out, "{},{},{},{},{}", r.experiment, r.statistic, r.value, r.threshold, r.pass)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::intensity::{LinearModel, Scaled};
    use rand_distr::{Distribution, Normal, Poisson};

    fn poisson_sample(mean: f64, n: usize, seed: u64) -> Vec<i64> {
        let mut rng = RandomSource::new(seed).stream("test", 0);
        let d = Poisson::new(mean).unwrap();
        (0..n).map(|_| d.sample(&mut rng) as i64).collect()
    }

    #[test]
    fn oracle_zero_model_is_empty() {
        let mut r = crate::toy::ToyParams { d1: 1.0, d2: 1.0, b: 1.0, lambda: 1.0, k12: 1.0, k21: 1.0 }.regime();
        r.k = 1.0;
        let env = EnvironmentPath::constant(r);
        let zero = Scaled::zero(&LinearModel { p: 2 });
        let path = oracle_simulate(&zero, &env, &Population(vec![3, 3]), 5.0, &RandomSource::new(1), 0, 1000).unwrap();
        assert!(path.events.is_empty());
    }

    #[test]
    fn tv_basics() {
        let a = EmpiricalLaw::new("a", vec![1, 1, 2, 3]);
        let b = EmpiricalLaw::new("b", vec![4, 5]);
        assert_eq!(tv_distance(&a, &a).unwrap(), 0.0);
        assert_eq!(tv_distance(&a, &b).unwrap(), 1.0);
        let c = EmpiricalLaw::new("c", vec![1, 2, 2, 2]);
        assert_eq!(tv_distance(&a, &c).unwrap(), tv_distance(&c, &a).unwrap());
        assert!((tv_distance(&a, &c).unwrap() - 0.5).abs() < 1e-15);
        assert!(tv_distance(&a, &EmpiricalLaw::new("e", vec![])).is_err());
    }

    #[test]
    fn binomial_sample_is_close_to_exact() {
        let mut rng = RandomSource::new(3).stream("test", 0);
        let d = rand_distr::Binomial::new(2, 1.0 / 3.0).unwrap();
        let law = EmpiricalLaw::new("bin", (0..100_000).map(|_| d.sample(&mut rng) as i64).collect());
        let exact: BTreeMap<i64, f64> = [(0, 4.0 / 9.0), (1, 4.0 / 9.0), (2, 1.0 / 9.0)].into_iter().collect();
        assert!(tv_to_exact(&law, &exact).unwrap() < 0.01);
    }

    #[test]
    fn chi_square_identity_and_power() {
        let a = EmpiricalLaw::new("a", poisson_sample(3.0, 5000, 1));
        assert_eq!(two_sample_test(&a, &a.clone()).unwrap(), 1.0);
        let one = EmpiricalLaw::new("one", poisson_sample(1.0, 10_000, 2));
        let five = EmpiricalLaw::new("five", poisson_sample(5.0, 10_000, 3));
        assert!(two_sample_test(&one, &five).unwrap() < 1e-6);
        let other = EmpiricalLaw::new("b", poisson_sample(3.0, 5000, 4));
        assert!(two_sample_test(&a, &other).unwrap() > 1e-3);
        let flat = EmpiricalLaw::new("flat", vec![7; 100]);
        assert_eq!(two_sample_test(&flat, &flat.clone()).unwrap(), 1.0);
    }

    #[test]
    fn zero_test() {
        let t = residual_zero_test(&[0.0; 200]).unwrap();
        assert_eq!((t.mean, t.z, t.flagged), (0.0, 0.0, false));
        let mut rng = RandomSource::new(8).stream("test", 0);
        let n = Normal::new(0.0, 1.0).unwrap();
        let centered: Vec<f64> = (0..10_000).map(|_| n.sample(&mut rng)).collect();
        assert!(!residual_zero_test(&centered).unwrap().flagged);
        let shifted: Vec<f64> = centered.iter().map(|v| v + 0.5).collect();
        assert!(residual_zero_test(&shifted).unwrap().flagged);
    }

    #[test]
    fn results_csv() {
        let rows = vec![ResultRow::above("x", "p_value", 0.5, 0.01)];
        let mut buf = Vec::new();
        write_results_csv(&mut buf, &rows).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "experiment,statistic,value,threshold,pass\nx,p_value,0.5,0.01,true\n");
    }
}
