//! Dominance relations and Pareto-front construction for minimization of
//! (execution time, dynamic energy).

use serde::{Deserialize, Serialize};

use crate::config::{Configuration, ObjectiveSample};
use crate::error::{Error, Result};

fn check(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "objective vectors must have the same non-zero length ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("objective components must be finite"));
    }
    Ok(())
}

/// `a` is no worse than `b` in every objective and better in at least one.
pub fn dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    check(a, b)?;
    Ok(dominates_unchecked(a, b))
}

/// `a` is better than `b` in every objective. A point that no other point
/// strictly dominates is weakly Pareto-optimal.
pub fn strictly_dominates(a: &[f64], b: &[f64]) -> Result<bool> {
    check(a, b)?;
    Ok(a.iter().zip(b).all(|(x, y)| x < y))
}

fn dominates_unchecked(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// One point of the front and every configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontEntry {
    pub objective: [f64; 2],
    pub configs: Vec<Configuration>,
}

impl FrontEntry {
    pub fn time_s(&self) -> f64 {
        self.objective[0]
    }

    pub fn dynamic_energy_j(&self) -> f64 {
        self.objective[1]
    }
}

/// Mutually nondominated entries, kept sorted by ascending time (and hence
/// strictly descending energy).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParetoFront {
    entries: Vec<FrontEntry>,
}

impl ParetoFront {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[FrontEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All configurations on the front, in front order.
    pub fn configurations(&self) -> Vec<Configuration> {
        self.entries
            .iter()
            .flat_map(|e| e.configs.iter().copied())
            .collect()
    }

    /// Fold one sample into the front. Returns whether the front changed.
    /// Non-finite samples are ignored.
    pub fn insert(&mut self, sample: &ObjectiveSample) -> bool {
        let point = sample.objective();
        if point.iter().any(|v| !v.is_finite()) {
            log::warn!("ignoring non-finite sample for {}", sample.config);
            return false;
        }
        if let Some(entry) = self.entries.iter_mut().find(|e| e.objective == point) {
            if entry.configs.contains(&sample.config) {
                return false;
            }
            entry.configs.push(sample.config);
            return true;
        }
        if self
            .entries
            .iter()
            .any(|e| dominates_unchecked(&e.objective, &point))
        {
            return false;
        }
        self.entries
            .retain(|e| !dominates_unchecked(&point, &e.objective));
        let at = self.entries.partition_point(|e| e.objective[0] < point[0]);
        self.entries.insert(
            at,
            FrontEntry {
                objective: point,
                configs: vec![sample.config],
            },
        );
        true
    }

    /// Whether some entry dominates `point`.
    pub fn dominates_point(&self, point: &[f64; 2]) -> bool {
        self.entries
            .iter()
            .any(|e| dominates_unchecked(&e.objective, point))
    }
}

/// Functional form of [`ParetoFront::insert`].
pub fn front_update(mut front: ParetoFront, sample: &ObjectiveSample) -> ParetoFront {
    front.insert(sample);
    front
}

/// Globally Pareto-optimal front of `samples`.
pub fn front_build<'a, I>(samples: I) -> ParetoFront
where
    I: IntoIterator<Item = &'a ObjectiveSample>,
{
    samples.into_iter().fold(ParetoFront::new(), front_update)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample(g: usize, t: usize, time: f64, energy: f64) -> ObjectiveSample {
        ObjectiveSample {
            config: Configuration::new(g, t).unwrap(),
            time_s: time,
            dynamic_energy_j: energy,
        }
    }

    fn brute_force(samples: &[ObjectiveSample]) -> Vec<([f64; 2], Vec<Configuration>)> {
        let mut out: Vec<([f64; 2], Vec<Configuration>)> = Vec::new();
        for s in samples {
            let p = s.objective();
            let dominated = samples.iter().any(|o| {
                let q = o.objective();
                q[0] <= p[0] && q[1] <= p[1] && (q[0] < p[0] || q[1] < p[1])
            });
            if dominated {
                continue;
            }
            match out.iter_mut().find(|(q, _)| *q == p) {
                Some((_, cs)) => {
                    if !cs.contains(&s.config) {
                        cs.push(s.config)
                    }
                }
                None => out.push((p, vec![s.config])),
            }
        }
        for (_, cs) in &mut out {
            cs.sort();
        }
        out.sort_by(|a, b| a.0[0].total_cmp(&b.0[0]));
        out
    }

    fn normalized(front: &ParetoFront) -> Vec<([f64; 2], Vec<Configuration>)> {
        front
            .entries()
            .iter()
            .map(|e| {
                let mut cs = e.configs.clone();
                cs.sort();
                (e.objective, cs)
            })
            .collect()
    }

    #[test]
    fn dominance_examples() {
        assert!(dominates(&[1.0, 1.0], &[2.0, 2.0]).unwrap());
        assert!(!dominates(&[1.0, 2.0], &[2.0, 1.0]).unwrap());
        assert!(!dominates(&[1.0, 1.0], &[1.0, 1.0]).unwrap());
        assert!(dominates(&[1.0, 2.0], &[1.0, 3.0]).unwrap());
        assert!(dominates(&[14.244, 729.1005], &[14.314, 802.6687]).unwrap());

        assert!(strictly_dominates(&[1.0, 1.0], &[2.0, 2.0]).unwrap());
        assert!(!strictly_dominates(&[1.0, 2.0], &[1.0, 3.0]).unwrap());
        assert!(!strictly_dominates(&[14.112, 824.2743], &[14.177, 740.0211]).unwrap());
        assert!(!strictly_dominates(&[14.177, 740.0211], &[14.112, 824.2743]).unwrap());
    }

    #[test]
    fn dominance_rejects_non_finite() {
        assert!(dominates(&[f64::NAN, 1.0], &[1.0, 1.0]).is_err());
        assert!(strictly_dominates(&[1.0, f64::INFINITY], &[1.0, 1.0]).is_err());
        assert!(dominates(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn update_examples() {
        let front = front_update(ParetoFront::new(), &sample(1, 1, 2.0, 2.0));
        assert_eq!(front.len(), 1);
        let front = front_update(front, &sample(2, 1, 1.0, 1.0));
        assert_eq!(
            front.configurations(),
            vec![Configuration::new(2, 1).unwrap()]
        );
        let unchanged = front_update(front.clone(), &sample(3, 1, 5.0, 5.0));
        assert_eq!(unchanged, front);
    }

    #[test]
    fn identical_objectives_merge() {
        let samples: Vec<_> = (1..=4).map(|g| sample(g, 1, 3.0, 7.0)).collect();
        let front = front_build(&samples);
        assert_eq!(front.len(), 1);
        assert_eq!(front.entries()[0].configs.len(), 4);
    }

    #[test]
    fn near_ties_are_not_merged() {
        let a = sample(1, 1, 1.0, 2.0);
        let b = sample(2, 1, 1.0 + f64::EPSILON, 2.0);
        let front = front_build(&[b, a]);
        assert_eq!(front.len(), 1);
        assert_eq!(front.configurations(), vec![a.config]);
    }

    #[test]
    fn non_finite_samples_are_ignored() {
        let front = front_build(&[sample(1, 1, f64::NAN, 1.0), sample(2, 1, 1.0, 1.0)]);
        assert_eq!(front.len(), 1);
    }

    fn arb_samples() -> impl Strategy<Value = Vec<ObjectiveSample>> {
        // Small integer grid so that ties and duplicates occur.
        prop::collection::vec((1usize..6, 1usize..6, 1u8..12, 1u8..12), 0..40).prop_map(|v| {
            v.into_iter()
                .map(|(g, t, a, b)| sample(g, t, a as f64, b as f64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_pairwise_filter(samples in arb_samples()) {
            prop_assert_eq!(normalized(&front_build(&samples)), brute_force(&samples));
        }

        #[test]
        fn permutation_invariant(samples in arb_samples(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = samples.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(normalized(&front_build(&samples)), normalized(&front_build(&shuffled)));
        }

        #[test]
        fn front_structure(samples in arb_samples()) {
            let front = front_build(&samples);
            for a in front.entries() {
                for b in front.entries() {
                    prop_assert!(!dominates(&a.objective, &b.objective).unwrap());
                }
            }
            for w in front.entries().windows(2) {
                prop_assert!(w[0].time_s() < w[1].time_s());
                prop_assert!(w[0].dynamic_energy_j() > w[1].dynamic_energy_j());
            }
            for s in &samples {
                let on_front = front.entries().iter().any(|e| e.configs.contains(&s.config) && e.objective == s.objective());
                prop_assert!(on_front || front.dominates_point(&s.objective()));
            }
        }
    }
}
