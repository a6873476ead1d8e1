//! Sparsity metrics on flat weight vectors: L_p quasi-norms, the pq
//! compressibility index, its induced lower bound on parameters worth
//! keeping, and the adaptive prune count derived from that bound.
//!
//! Callers pass only the *surviving* (unmasked) weights of a layer; already
//! pruned coordinates would otherwise inflate the index and collapse the
//! bound as pruning progresses.

use crate::error::{Error, Result};

/// How the tail/head mass ratio entering the lower bound is obtained.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EtaMode {
    /// Plug a fixed ratio in directly. `Fixed(0.0)` is the permissive limit.
    Fixed(f64),
    /// Scan keep-counts from the top and return the largest self-consistent
    /// one, resolving the circularity between the ratio and the bound.
    Exact,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PqConfig {
    /// Quasi-norm exponent, 0 < p <= 1.
    pub p: f64,
    /// Norm exponent, q >= 1 and q > p.
    pub q: f64,
    /// Scaling factor applied to the prunable fraction.
    pub gamma: f64,
    /// Maximum fraction pruned per step, in (0, 1].
    pub beta: f64,
    pub eta_mode: EtaMode,
}

impl PqConfig {
    pub fn new(p: f64, q: f64, gamma: f64, beta: f64, eta_mode: EtaMode) -> Result<Self> {
        let cfg = PqConfig {
            p,
            q,
            gamma,
            beta,
            eta_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::config(format!("p must be in (0, 1], got {}", self.p)));
        }
        if !(self.q >= 1.0 && self.q > self.p) {
            return Err(Error::config(format!(
                "q must satisfy q >= 1 and q > p, got q={} p={}",
                self.q, self.p
            )));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::config(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        if let EtaMode::Fixed(eta) = self.eta_mode {
            if eta < 0.0 || !eta.is_finite() {
                return Err(Error::config(format!("fixed eta must be nonnegative, got {eta}")));
            }
        }
        Ok(())
    }
}

/// Everything the adaptive pruner derives from one layer's weight vector.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SparsityReport {
    /// Number of surviving parameters the metrics were computed over.
    pub survivors: usize,
    /// Compressibility index in [0, 1).
    pub pq_index: f64,
    /// Tail/head mass ratio used in the bound.
    pub eta: f64,
    /// Lower bound on the parameters worth keeping, in [0, survivors].
    pub lower_bound: f64,
    /// Parameters to prune this step.
    pub prune_count: usize,
}

/// `(sum |v_i|^p)^(1/p)`; zero for the zero vector. `p = 1` and `p = 2`
/// take exact fast paths.
pub fn lp_norm(v: &[f64], p: f64) -> f64 {
    assert!(p > 0.0, "lp_norm needs p > 0, got {p}");
    if v.is_empty() {
        return 0.0;
    }
    if p == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    if p == 2.0 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let sum: f64 = v.iter().map(|x| x.abs().powf(p)).sum();
    if sum == 0.0 {
        0.0
    } else {
        sum.powf(1.0 / p)
    }
}

/// Compressibility index `1 - d^(1/q - 1/p) * |v|_p / |v|_q`: 0 for uniform
/// magnitudes, `1 - d^(1/q - 1/p)` for a one-hot vector. Scale invariant.
pub fn pq_index(v: &[f64], p: f64, q: f64) -> Result<f64> {
    let norm_q = lp_norm(v, q);
    if norm_q == 0.0 {
        return Err(Error::input(
            "pq_index is undefined for an all-zero vector".to_string(),
        ));
    }
    let d = v.len() as f64;
    Ok(1.0 - d.powf(1.0 / q - 1.0 / p) * lp_norm(v, p) / norm_q)
}

/// Smallest ratio `eta` with `tail_p_mass <= eta * head_p_mass`, where the
/// head is the `r` largest magnitudes (ties: lowest index wins a head slot).
pub fn eta_r(v: &[f64], p: f64, r: usize) -> Result<f64> {
    if r == 0 || r > v.len() {
        return Err(Error::input(format!(
            "keep count r={r} out of range [1, {}]",
            v.len()
        )));
    }
    let order = magnitude_order(v);
    let mass = |i: &usize| v[*i].abs().powf(p);
    let head: f64 = order[..r].iter().map(mass).sum();
    let tail: f64 = order[r..].iter().map(mass).sum();
    if head == 0.0 {
        return Err(Error::input(
            "eta is undefined when the head mass is zero".to_string(),
        ));
    }
    Ok(tail / head)
}

/// Indices sorted by descending magnitude, ties broken by lowest index.
fn magnitude_order(v: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| {
        v[b].abs()
            .total_cmp(&v[a].abs())
            .then_with(|| a.cmp(&b))
    });
    order
}

fn bound_formula(d: f64, eta: f64, index: f64, p: f64, q: f64) -> f64 {
    d * (1.0 + eta).powf(-q / (q - p)) * (1.0 - index).powf(q * p / (q - p))
}

/// Lower bound on the number of parameters worth keeping.
///
/// In `Fixed(eta)` mode this evaluates the bound directly. In `Exact` mode
/// the bound is circular (the ratio depends on the keep count), so the keep
/// counts `d-1, d-2, .., 1` are scanned from the top and the largest one
/// still at or above its own bound is returned; `d` itself always satisfies
/// the bound trivially and is only returned when no smaller count does.
/// The result is clamped to `[0, d]`.
pub fn lower_bound_r(v: &[f64], cfg: &PqConfig) -> Result<f64> {
    cfg.validate()?;
    let index = pq_index(v, cfg.p, cfg.q)?;
    let d = v.len() as f64;
    match cfg.eta_mode {
        EtaMode::Fixed(eta) => Ok(bound_formula(d, eta, index, cfg.p, cfg.q).clamp(0.0, d)),
        EtaMode::Exact => {
            let order = magnitude_order(v);
            let masses: Vec<f64> = order.iter().map(|&i| v[i].abs().powf(cfg.p)).collect();
            let total: f64 = masses.iter().sum();
            let mut head = total;
            // walk r = d-1 .. 1; head/tail updated incrementally
            for r in (1..v.len()).rev() {
                head -= masses[r];
                if head == 0.0 {
                    continue;
                }
                let eta = (total - head) / head;
                if r as f64 >= bound_formula(d, eta, index, cfg.p, cfg.q) {
                    return Ok(r as f64);
                }
            }
            Ok(d)
        }
    }
}

/// Adaptive prune count `floor(d * min(gamma * (1 - bound/d), beta))`.
pub fn prune_count(v: &[f64], cfg: &PqConfig) -> Result<usize> {
    let report = sparsity_report(v, cfg)?;
    Ok(report.prune_count)
}

/// Compute all the per-layer sparsity quantities in one pass.
pub fn sparsity_report(v: &[f64], cfg: &PqConfig) -> Result<SparsityReport> {
    cfg.validate()?;
    let d = v.len();
    let index = pq_index(v, cfg.p, cfg.q)?;
    let bound = lower_bound_r(v, cfg)?;
    let eta = match cfg.eta_mode {
        EtaMode::Fixed(eta) => eta,
        EtaMode::Exact => {
            let r = (bound as usize).clamp(1, d);
            eta_r(v, cfg.p, r)?
        }
    };
    let df = d as f64;
    let count = (df * (cfg.gamma * (1.0 - bound / df)).min(cfg.beta)).floor();
    let count = (count.max(0.0) as usize).min(d);
    Ok(SparsityReport {
        survivors: d,
        pq_index: index,
        eta,
        lower_bound: bound,
        prune_count: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(p: f64, q: f64, gamma: f64, beta: f64, eta: EtaMode) -> PqConfig {
        PqConfig::new(p, q, gamma, beta, eta).unwrap()
    }

    #[test]
    fn lp_norm_examples() {
        assert_eq!(lp_norm(&[1.0, 1.0, 1.0, 1.0], 1.0), 4.0);
        assert_eq!(lp_norm(&[3.0, 4.0], 2.0), 5.0);
        assert_eq!(lp_norm(&[1.0, 1.0, 1.0, 1.0], 0.5), 16.0);
        assert_eq!(lp_norm(&[0.0, 0.0], 0.5), 0.0);
    }

    #[test]
    fn pq_index_examples() {
        let uniform = pq_index(&[1.0, 1.0, 1.0, 1.0], 1.0, 2.0).unwrap();
        assert!(uniform.abs() < 1e-12);
        for c in [1.0, -2.5, 1e-3] {
            let one_hot = pq_index(&[c, 0.0, 0.0, 0.0], 1.0, 2.0).unwrap();
            assert!((one_hot - 0.5).abs() < 1e-12, "c={c} gave {one_hot}");
        }
        let mixed = pq_index(&[3.0, 1.0, 0.0, 0.0], 1.0, 2.0).unwrap();
        assert!((mixed - 0.3675444679663241).abs() < 1e-12);
        assert!(pq_index(&[0.0, 0.0], 1.0, 2.0).is_err());
    }

    #[test]
    fn eta_examples() {
        let v = [3.0, 1.0, 0.0, 0.0];
        assert!((eta_r(&v, 1.0, 1).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(eta_r(&v, 1.0, 2).unwrap(), 0.0);
        assert_eq!(eta_r(&v, 1.0, 4).unwrap(), 0.0);
        assert!(eta_r(&v, 1.0, 5).is_err());
        assert!(eta_r(&v, 1.0, 0).is_err());
    }

    #[test]
    fn eta_tie_break_prefers_lowest_index() {
        // both entries have magnitude 1; index 0 takes the head slot
        let v = [-1.0, 1.0];
        assert_eq!(eta_r(&v, 1.0, 1).unwrap(), 1.0);
        let order = magnitude_order(&v);
        assert_eq!(order, vec![0, 1]);
    }

    #[test]
    fn lower_bound_fixed_mode() {
        let v = [3.0, 1.0, 0.0, 0.0];
        let c = cfg(1.0, 2.0, 1.0, 0.9, EtaMode::Fixed(0.0));
        let r = lower_bound_r(&v, &c).unwrap();
        assert!((r - 1.6).abs() < 1e-12);

        // one-hot: index is exactly 0.5, bound collapses to d * 0.25
        let one_hot = [2.0, 0.0, 0.0, 0.0];
        let r = lower_bound_r(&one_hot, &c).unwrap();
        assert!((r - 1.0).abs() < 1e-12);

        // uniform magnitudes: zero index keeps everything
        let uniform = [0.5; 6];
        let r = lower_bound_r(&uniform, &c).unwrap();
        assert!((r - 6.0).abs() < 1e-9);
    }

    #[test]
    fn lower_bound_exact_mode_is_self_consistent() {
        let v = [3.0, 1.0, 0.0, 0.0];
        let c = cfg(1.0, 2.0, 1.0, 0.9, EtaMode::Exact);
        let r = lower_bound_r(&v, &c).unwrap();
        assert_eq!(r, 3.0);
    }

    #[test]
    fn prune_count_examples() {
        let v = [3.0, 1.0, 0.0, 0.0];
        let c = cfg(1.0, 2.0, 1.0, 0.9, EtaMode::Fixed(0.0));
        assert_eq!(prune_count(&v, &c).unwrap(), 2);

        let c2 = cfg(1.0, 2.0, 2.0, 0.9, EtaMode::Fixed(0.0));
        assert_eq!(prune_count(&v, &c2).unwrap(), 3);

        // nothing prunable when the bound equals the dimension
        let uniform = [1.0; 8];
        assert_eq!(prune_count(&uniform, &c).unwrap(), 0);
    }

    #[test]
    fn scale_invariance() {
        let v = [0.3, -1.7, 0.02, 5.0, -0.4];
        let base = pq_index(&v, 0.5, 1.0).unwrap();
        for alpha in [2.0, -3.0, 1e-6, 1e6] {
            let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            let s = pq_index(&scaled, 0.5, 1.0).unwrap();
            assert!((s - base).abs() < 1e-12, "alpha={alpha}: {s} vs {base}");
        }
    }
}

#[cfg(test)]
mod prop_tests {
    use super::*;
    use proptest::prelude::*;

    fn nonzero_vec() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-10.0f64..10.0, 2..64).prop_filter(
            "needs a clearly nonzero entry",
            |v| v.iter().any(|x| x.abs() > 1e-3),
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn pq_index_bounds(v in nonzero_vec(), pq in 0usize..2) {
            let (p, q) = [(1.0, 2.0), (0.5, 1.0)][pq];
            let i = pq_index(&v, p, q).unwrap();
            prop_assert!(i >= -1e-12 && i < 1.0);
            let d = v.len() as f64;
            prop_assert!(i <= 1.0 - d.powf(1.0 / q - 1.0 / p) + 1e-12);
        }

        #[test]
        fn pq_index_scale_invariant(v in nonzero_vec(), alpha in 0.01f64..100.0, sign in proptest::bool::ANY) {
            let alpha = if sign { alpha } else { -alpha };
            let scaled: Vec<f64> = v.iter().map(|x| alpha * x).collect();
            let a = pq_index(&v, 1.0, 2.0).unwrap();
            let b = pq_index(&scaled, 1.0, 2.0).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn beta_clamps_prune_count(v in nonzero_vec(), beta in 0.05f64..1.0, gamma in 0.1f64..4.0) {
            let cfg = PqConfig::new(0.5, 1.0, gamma, beta, EtaMode::Fixed(0.0)).unwrap();
            let c = prune_count(&v, &cfg).unwrap();
            prop_assert!(c <= (beta * v.len() as f64).floor() as usize);
        }

        #[test]
        fn exact_mode_consistency(v in nonzero_vec()) {
            let cfg = PqConfig::new(1.0, 2.0, 1.0, 0.9, EtaMode::Exact).unwrap();
            let r = lower_bound_r(&v, &cfg).unwrap() as usize;
            let d = v.len();
            prop_assert!(r >= 1 && r <= d);
            let index = pq_index(&v, 1.0, 2.0).unwrap();
            let bound_at = |k: usize| {
                let eta = eta_r(&v, 1.0, k).unwrap();
                bound_formula(d as f64, eta, index, 1.0, 2.0)
            };
            prop_assert!(r as f64 >= bound_at(r) || r == d);
            if r + 1 < d {
                // the next keep-count up must violate its own bound
                prop_assert!(((r + 1) as f64) < bound_at(r + 1));
            }
        }

        #[test]
        fn zeroing_smallest_never_decreases_index(
            mut v in proptest::collection::vec(0.01f64..10.0, 3..64)
        ) {
            // force distinct magnitudes so "smallest" is unambiguous
            v.sort_by(|a, b| a.total_cmp(b));
            v.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
            prop_assume!(v.len() >= 3);
            let before = pq_index(&v, 1.0, 2.0).unwrap();
            let (smallest, _) = v
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| a.abs().total_cmp(&b.abs()))
                .map(|(i, v)| (i, *v))
                .unwrap();
            v[smallest] = 0.0;
            let after = pq_index(&v, 1.0, 2.0).unwrap();
            prop_assert!(after >= before - 1e-12);
        }
    }
}
