//! Throwaway diagnostic: full support sweep on one true column.

use itertools::Itertools;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sparsemix::harness::{derive_seed, trial_root};
use sparsemix::model::generate_signal_set;
use sparsemix::noiseless::{vandermonde_row, AlphaGrid};

fn mgs_resid(powers: &[Vec<f64>], y: &[f64], support: &[usize]) -> f64 {
    let rows = y.len();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for &idx in support {
        let mut col: Vec<f64> = (0..rows).map(|r| powers[r][idx]).collect();
        let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if scale == 0.0 { continue; }
        col.iter_mut().for_each(|v| *v /= scale);
        for _ in 0..2 {
            for q in &basis {
                let dot: f64 = q.iter().zip(&col).map(|(a, b)| a * b).sum();
                col.iter_mut().zip(q).for_each(|(c, a)| *c -= dot * a);
            }
        }
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 1e-13 {
            col.iter_mut().for_each(|v| *v /= norm);
            basis.push(col);
        }
    }
    let mut r: Vec<f64> = y.to_vec();
    for _ in 0..2 {
        for q in &basis {
            let dot: f64 = q.iter().zip(&r).map(|(a, b)| a * b).sum();
            r.iter_mut().zip(q).for_each(|(c, a)| *c -= dot * a);
        }
    }
    r.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn main() {
    let (n, k, l) = (40usize, 4usize, 3usize);
    for trial in [1u64, 3] {
        let root = trial_root(7, trial);
        let mut sig_rng = ChaCha8Rng::seed_from_u64(derive_seed(root, 1, 0));
        let signals = generate_signal_set(n, k, l, 1.0, 2.0, &mut sig_rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, 3, 0));
        let grid = AlphaGrid::sample(k, l, &mut rng).unwrap();
        let powers: Vec<Vec<f64>> =
            grid.alphas().iter().map(|&a| vandermonde_row(a, n)).collect();
        for c in 0..1 {
            let v = &signals.vectors()[c];
            let true_support: Vec<usize> =
                v.iter().enumerate().filter(|(_, x)| **x != 0.0).map(|(i, _)| i).collect();
            let col: Vec<f64> =
                powers.iter().map(|row| row.iter().zip(v).map(|(x, b)| x * b).sum()).collect();
            let max_abs = col.iter().fold(0.0f64, |a, x| a.max(x.abs()));
            let mut scored: Vec<(f64, Vec<usize>)> = Vec::new();
            for size in 1..=k {
                for support in (0..n).combinations(size) {
                    scored.push((mgs_resid(&powers, &col, &support), support));
                }
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            println!(
                "trial {trial} comp {c} t={} alpha0={:.4} true={:?} max_abs={:.2e}",
                grid.t(), grid.alphas()[0], true_support, max_abs
            );
            for (r, s) in scored.iter().take(6) {
                println!("   resid={:.3e} rel={:.3e} support={:?}", r, r / max_abs, s);
            }
            let (tr, _) = scored.iter().find(|(_, s)| *s == true_support).unwrap().clone();
            let rank = scored.iter().position(|(_, s)| *s == true_support).unwrap();
            println!("   true support resid={:.3e} rel={:.3e} rank={}", tr, tr / max_abs, rank);
        }
    }
}
