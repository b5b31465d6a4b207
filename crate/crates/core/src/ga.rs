//! Real-coded genetic minimizer used by both the model-reduction and the
//! controller-tuning searches.
//!
//! Fixed-size population, tournament selection, blend crossover, Gaussian
//! mutation, and elitism. The RNG is a seeded counter-based stream owned by
//! the sequential loop; only fitness evaluation fans out across threads, so
//! a given seed always reproduces the same run bit for bit.

use crate::error::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Axis-aligned search box, one (low, high) pair per decision variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub bounds: Vec<(f64, f64)>,
}

impl SearchSpace {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::invalid("search space needs at least one variable"));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(format!("bad bound ({lo}, {hi})")));
            }
        }
        Ok(SearchSpace { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn clamp(&self, x: &mut [f64]) {
        for (v, &(lo, hi)) in x.iter_mut().zip(&self.bounds) {
            *v = v.clamp(lo, hi);
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.bounds
            .iter()
            .map(|&(lo, hi)| rng.random_range(lo..=hi))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    pub elitism: usize,
    pub tournament: usize,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            generations: 200,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            elitism: 2,
            tournament: 3,
            seed: 0,
        }
    }
}

impl GaConfig {
    fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::invalid("population must be at least 4"));
        }
        if self.elitism >= self.population {
            return Err(Error::invalid("elitism must leave room for offspring"));
        }
        if self.tournament == 0 || self.tournament > self.population {
            return Err(Error::invalid("tournament size out of range"));
        }
        if !(0.0..=1.0).contains(&self.crossover_rate) || !(0.0..=1.0).contains(&self.mutation_rate) {
            return Err(Error::invalid("rates must lie in [0, 1]"));
        }
        if self.generations == 0 {
            return Err(Error::invalid("need at least one generation"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaResult {
    pub best: Vec<f64>,
    pub best_cost: f64,
    /// Best cost after initialization and after each generation.
    pub history: Vec<f64>,
    pub evaluations: usize,
}

/// BLX-alpha blend: each child gene is drawn uniformly from the parents'
/// interval extended by half its width on both sides.
fn blend<R: Rng>(rng: &mut R, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    const ALPHA: f64 = 0.5;
    let mut c1 = Vec::with_capacity(a.len());
    let mut c2 = Vec::with_capacity(a.len());
    for (&x, &y) in a.iter().zip(b) {
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        let spread = (hi - lo) * ALPHA;
        let (lo, hi) = (lo - spread, hi + spread);
        if hi > lo {
            c1.push(rng.random_range(lo..=hi));
            c2.push(rng.random_range(lo..=hi));
        } else {
            c1.push(x);
            c2.push(y);
        }
    }
    (c1, c2)
}

/// Minimizes `f` over the box. `seeds` are injected into the initial
/// population (clamped to the box) so earlier solutions can warm-start the
/// search; elitism guarantees the returned cost never exceeds the best seed's.
pub fn minimize<F>(
    space: &SearchSpace,
    config: &GaConfig,
    seeds: &[Vec<f64>],
    f: F,
) -> Result<GaResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = space.dim();

    let mut pop: Vec<Vec<f64>> = (0..config.population).map(|_| space.sample(&mut rng)).collect();
    for (slot, seed) in pop.iter_mut().zip(seeds) {
        if seed.len() != dim {
            return Err(Error::invalid("seed dimension mismatch"));
        }
        let mut s = seed.clone();
        space.clamp(&mut s);
        *slot = s;
    }

    let eval = |pop: &[Vec<f64>]| -> Vec<f64> {
        pop.par_iter()
            .map(|x| {
                let c = f(x);
                if c.is_nan() {
                    f64::INFINITY
                } else {
                    c
                }
            })
            .collect()
    };

    let mut costs = eval(&pop);
    let mut evaluations = pop.len();

    let rank = |costs: &[f64]| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..costs.len()).collect();
        idx.sort_by(|&i, &j| costs[i].partial_cmp(&costs[j]).unwrap().then(i.cmp(&j)));
        idx
    };

    let mut order = rank(&costs);
    let mut history = vec![costs[order[0]]];

    let sigma: Vec<f64> = space.bounds.iter().map(|&(lo, hi)| 0.1 * (hi - lo)).collect();

    for _ in 0..config.generations {
        let mut next: Vec<Vec<f64>> = order[..config.elitism]
            .iter()
            .map(|&i| pop[i].clone())
            .collect();

        while next.len() < config.population {
            let pick = |rng: &mut ChaCha8Rng| -> usize {
                let mut best = rng.random_range(0..pop.len());
                for _ in 1..config.tournament {
                    let other = rng.random_range(0..pop.len());
                    if costs[other] < costs[best] {
                        best = other;
                    }
                }
                best
            };
            let p1 = pick(&mut rng);
            let p2 = pick(&mut rng);

            let (mut c1, mut c2) = if rng.random::<f64>() < config.crossover_rate {
                blend(&mut rng, &pop[p1], &pop[p2])
            } else {
                (pop[p1].clone(), pop[p2].clone())
            };

            for child in [&mut c1, &mut c2] {
                for (g, s) in child.iter_mut().zip(&sigma) {
                    if rng.random::<f64>() < config.mutation_rate {
                        *g += Normal::new(0.0, *s).unwrap().sample(&mut rng);
                    }
                }
                space.clamp(child);
            }

            next.push(c1);
            if next.len() < config.population {
                next.push(c2);
            }
        }

        pop = next;
        costs = eval(&pop);
        evaluations += pop.len();
        order = rank(&costs);
        history.push(costs[order[0]]);
    }

    let best_idx = order[0];
    if !costs[best_idx].is_finite() {
        return Err(Error::Optimization(
            "every candidate evaluated to a non-finite cost".into(),
        ));
    }
    Ok(GaResult {
        best: pop[best_idx].clone(),
        best_cost: costs[best_idx],
        history,
        evaluations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sphere(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum()
    }

    fn quick_config(seed: u64) -> GaConfig {
        GaConfig { population: 40, generations: 60, seed, ..GaConfig::default() }
    }

    #[test]
    fn converges_on_sphere() {
        let space = SearchSpace::new(vec![(-5.0, 5.0); 3]).unwrap();
        let r = minimize(&space, &quick_config(7), &[], sphere).unwrap();
        assert!(r.best_cost < 1e-2, "best cost {}", r.best_cost);
    }

    #[test]
    fn same_seed_reproduces_run() {
        let space = SearchSpace::new(vec![(-5.0, 5.0); 4]).unwrap();
        let a = minimize(&space, &quick_config(42), &[], sphere).unwrap();
        let b = minimize(&space, &quick_config(42), &[], sphere).unwrap();
        assert_eq!(a.best, b.best);
        assert_eq!(a.history, b.history);
        assert_eq!(a.evaluations, b.evaluations);
    }

    #[test]
    fn different_seeds_explore_differently() {
        let space = SearchSpace::new(vec![(-5.0, 5.0); 4]).unwrap();
        let a = minimize(&space, &quick_config(1), &[], sphere).unwrap();
        let b = minimize(&space, &quick_config(2), &[], sphere).unwrap();
        assert_ne!(a.best, b.best);
    }

    #[test]
    fn seed_candidate_never_lost() {
        // an injected optimum must survive via elitism
        let space = SearchSpace::new(vec![(-5.0, 5.0); 3]).unwrap();
        let cfg = GaConfig { population: 20, generations: 5, ..quick_config(3) };
        let r = minimize(&space, &cfg, &[vec![0.0, 0.0, 0.0]], sphere).unwrap();
        assert!(r.best_cost <= 1e-12);
    }

    #[test]
    fn history_is_monotone_and_sized() {
        let space = SearchSpace::new(vec![(-2.0, 2.0); 2]).unwrap();
        let cfg = GaConfig { population: 16, generations: 25, ..quick_config(9) };
        let r = minimize(&space, &cfg, &[], sphere).unwrap();
        assert_eq!(r.history.len(), 26);
        for w in r.history.windows(2) {
            assert!(w[1] <= w[0], "history must not regress");
        }
        assert_eq!(r.evaluations, 16 * 26);
    }

    #[test]
    fn all_nan_objective_is_an_error() {
        let space = SearchSpace::new(vec![(0.0, 1.0)]).unwrap();
        let cfg = GaConfig { population: 8, generations: 2, ..quick_config(1) };
        assert!(minimize(&space, &cfg, &[], |_| f64::NAN).is_err());
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let space = SearchSpace::new(vec![(0.0, 1.0)]).unwrap();
        let bad = GaConfig { population: 2, ..GaConfig::default() };
        assert!(minimize(&space, &bad, &[], sphere).is_err());
        assert!(SearchSpace::new(vec![(1.0, 1.0)]).is_err());
        assert!(SearchSpace::new(vec![]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn best_stays_inside_box(seed in 0u64..1000) {
            let space = SearchSpace::new(vec![(-1.0, 2.0), (3.0, 4.0)]).unwrap();
            let cfg = GaConfig { population: 10, generations: 5, seed, ..GaConfig::default() };
            let r = minimize(&space, &cfg, &[], sphere).unwrap();
            for (v, (lo, hi)) in r.best.iter().zip(space.bounds.iter()) {
                prop_assert!(*v >= *lo && *v <= *hi);
            }
        }
    }
}
