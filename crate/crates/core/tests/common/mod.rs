//! Instance generators and independent oracles shared by the integration
//! tests. Nothing here calls the solvers under test.
#![allow(dead_code)]

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdelay_core::instance::Instance;

/// Random instance with `μ = 100`, RTT in `[5, 50]` ms and total demand
/// `ρ·p·μ` for `ρ ∈ [0.3, 0.9]`.
pub fn random_instance(seed: u64, max_clients: usize, max_facilities: usize, p: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = rng.random_range(2..=max_clients);
    let nf = rng.random_range(p.max(3)..=max_facilities);
    let mu = 100.0;
    let rtt: Vec<Vec<f64>> = (0..nc)
        .map(|_| (0..nf).map(|_| rng.random_range(5.0..50.0) * 1e-3).collect())
        .collect();
    let rho = rng.random_range(0.3..0.9);
    let weights: Vec<f64> = (0..nc).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let arrival = weights.iter().map(|w| w / total * rho * p as f64 * mu).collect();
    Instance::from_matrix(rtt, arrival, vec![mu; nf], p).unwrap()
}

/// `(Σ x_cf l_cf + Σ_f Λ_f/(μ_f − Λ_f)) / Λ`, or `None` when some facility
/// is saturated.
pub fn mean_response_time(instance: &Instance, x: &[Vec<f64>]) -> Option<f64> {
    let nf = instance.num_facilities();
    let mut rtt = 0.0;
    let mut loads = vec![0.0; nf];
    for (c, row) in x.iter().enumerate() {
        for f in 0..nf {
            rtt += row[f] * instance.rtt[c][f];
            loads[f] += row[f];
        }
    }
    let mut tis = 0.0;
    for f in 0..nf {
        if loads[f] >= instance.service[f] {
            return None;
        }
        tis += loads[f] / (instance.service[f] - loads[f]);
    }
    Some((rtt + tis) / instance.total_arrival())
}

/// Euclidean projection of `v` onto `{w ≥ 0, Σ w = total}`.
pub fn project_simplex(v: &[f64], total: f64) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (k, &val) in u.iter().enumerate() {
        cum += val;
        let t = (cum - total) / (k + 1) as f64;
        if val - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&a| (a - theta).max(0.0)).collect()
}

fn subset_objective(instance: &Instance, subset: &[usize], x: &[Vec<f64>]) -> f64 {
    let nf = instance.num_facilities();
    let full: Vec<Vec<f64>> = x
        .iter()
        .map(|row| {
            let mut r = vec![0.0; nf];
            for (k, &f) in subset.iter().enumerate() {
                r[f] = row[k];
            }
            r
        })
        .collect();
    mean_response_time(instance, &full).unwrap_or(f64::INFINITY)
}

fn subset_gradient(instance: &Instance, subset: &[usize], x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let total = instance.total_arrival();
    let loads: Vec<f64> = (0..subset.len()).map(|k| x.iter().map(|r| r[k]).sum()).collect();
    x.iter()
        .enumerate()
        .map(|(c, _)| {
            subset
                .iter()
                .enumerate()
                .map(|(k, &f)| {
                    let mu = instance.service[f];
                    (instance.rtt[c][f] + mu / ((mu - loads[k]) * (mu - loads[k]))) / total
                })
                .collect()
        })
        .collect()
}

fn projected_gradient(instance: &Instance, subset: &[usize], mut x: Vec<Vec<f64>>) -> f64 {
    let mut value = subset_objective(instance, subset, &x);
    let mut step = 1.0e3;
    for _ in 0..20_000 {
        let g = subset_gradient(instance, subset, &x);
        let mut improved = false;
        while step > 1e-12 {
            let candidate: Vec<Vec<f64>> = x
                .iter()
                .zip(&g)
                .enumerate()
                .map(|(c, (row, grow))| {
                    let moved: Vec<f64> = row.iter().zip(grow).map(|(a, b)| a - step * b).collect();
                    project_simplex(&moved, instance.arrival[c])
                })
                .collect();
            let v = subset_objective(instance, subset, &candidate);
            if v < value - 1e-16 {
                x = candidate;
                value = v;
                improved = true;
                step *= 2.0;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    value
}

/// Cyclic coordinate search: each client's split between two facilities of
/// the subset is scanned on a grid of 1000 points, refined three times.
fn grid_search(instance: &Instance, subset: &[usize], mut x: Vec<Vec<f64>>) -> f64 {
    let mut value = subset_objective(instance, subset, &x);
    let w = subset.len();
    for _sweep in 0..60 {
        let before = value;
        for c in 0..x.len() {
            for (a, b) in (0..w).tuple_combinations() {
                let pool = x[c][a] + x[c][b];
                if pool <= 0.0 {
                    continue;
                }
                let (mut lo, mut hi) = (0.0, pool);
                for _refine in 0..4 {
                    let mut best = (value, x[c][a]);
                    for i in 0..=1000 {
                        let share = lo + (hi - lo) * i as f64 / 1000.0;
                        let mut trial = x.clone();
                        trial[c][a] = share;
                        trial[c][b] = pool - share;
                        let v = subset_objective(instance, subset, &trial);
                        if v < best.0 {
                            best = (v, share);
                        }
                    }
                    x[c][a] = best.1;
                    x[c][b] = pool - best.1;
                    value = best.0;
                    let width = (hi - lo) / 1000.0 * 2.0;
                    lo = (best.1 - width).max(0.0);
                    hi = (best.1 + width).min(pool);
                }
            }
        }
        if before - value < 1e-13 {
            break;
        }
    }
    value
}

/// Minimum over starts of projected gradient and grid search for one
/// subset, `+∞` when the subset cannot carry the demand.
pub fn subset_oracle(instance: &Instance, subset: &[usize], starts: usize, seed: u64) -> f64 {
    let cap: f64 = subset.iter().map(|&f| instance.service[f]).sum();
    if instance.total_arrival() >= cap {
        return f64::INFINITY;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best = f64::INFINITY;
    for s in 0..starts {
        // proportional fill mixed with a random split stays strictly feasible
        let mix = if s == 0 { 0.0 } else { rng.random_range(0.0..0.5) };
        let x: Vec<Vec<f64>> = (0..instance.num_clients())
            .map(|c| {
                let r: Vec<f64> = subset.iter().map(|_| rng.random_range(0.0..1.0)).collect();
                let rs: f64 = r.iter().sum();
                subset
                    .iter()
                    .zip(&r)
                    .map(|(&f, &rv)| {
                        let prop = instance.service[f] / cap;
                        instance.arrival[c] * ((1.0 - mix) * prop + mix * rv / rs)
                    })
                    .collect()
            })
            .collect();
        let feasible = subset_objective(instance, subset, &x).is_finite();
        if !feasible {
            continue;
        }
        let pg = projected_gradient(instance, subset, x.clone());
        let gs = grid_search(instance, subset, x);
        best = best.min(pg).min(gs);
    }
    best
}

/// Oracle for the exact problem: best subset oracle over all `p`-subsets.
pub fn exact_oracle(instance: &Instance, seed: u64) -> f64 {
    (0..instance.num_facilities())
        .combinations(instance.p)
        .enumerate()
        .map(|(k, subset)| subset_oracle(instance, &subset, 4, seed ^ k as u64))
        .fold(f64::INFINITY, f64::min)
}

/// `g_μ(λ)`: even split across the 60 ms and 70 ms facilities.
pub fn toy_even_split(mu: f64, lambda: f64) -> f64 {
    0.5 * (0.060 + 1.0 / (mu - lambda / 2.0)) + 0.5 * (0.070 + 1.0 / (mu - lambda / 2.0))
}

/// Mean response time when `lambda1` goes to the 60 ms facility and the
/// rest to the 70 ms facility.
pub fn toy_split(mu: f64, lambda: f64, lambda1: f64) -> f64 {
    let l2 = lambda - lambda1;
    let part = |share: f64, rtt: f64, load: f64| {
        if share == 0.0 {
            0.0
        } else if load >= mu {
            f64::INFINITY
        } else {
            share / lambda * (rtt + 1.0 / (mu - load))
        }
    };
    part(lambda1, 0.060, lambda1) + part(l2, 0.070, l2)
}

/// `h_μ(λ)` on a grid of step `step` over `λ₁ ∈ [0, λ]`; returns
/// `(value, λ₁)`.
pub fn toy_grid_optimum(mu: f64, lambda: f64, step: f64) -> (f64, f64) {
    let n = (lambda / step).round() as usize;
    (0..=n)
        .map(|i| {
            let l1 = lambda * i as f64 / n as f64;
            (toy_split(mu, lambda, l1), l1)
        })
        .fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a })
}
