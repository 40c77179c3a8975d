//! Throwaway diagnostic: replay one noiseless trial and dump internals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparsemix::harness::{derive_seed, trial_root};
use sparsemix::model::generate_signal_set;
use sparsemix::noiseless::{
    decode_sparse, noiseless_batch_size, process_batch, vandermonde_row, AlphaGrid,
};
use sparsemix::oracle::Oracle;

fn main() {
    let master = 7u64;
    let (n, k, l) = (40usize, 4usize, 3usize);
    for trial in [1u64, 2, 3] {
        let root = trial_root(master, trial);
        let mut sig_rng = ChaCha8Rng::seed_from_u64(derive_seed(root, 1, 0));
        let signals = generate_signal_set(n, k, l, 1.0, 2.0, &mut sig_rng).unwrap();
        let truth = signals.clone();
        let mut oracle = Oracle::new(signals, 0.0, derive_seed(root, 2, 0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(root, 3, 0));

        // Mirror recover_noiseless: sample the grid, query all batches.
        let grid = AlphaGrid::sample(k, l, &mut rng).unwrap();
        let b = noiseless_batch_size(k, l, 1.0);
        println!("== trial {trial} t={} alpha range [{:.4}, {:.4}]", grid.t(), grid.alphas()[0], grid.alphas()[2 * k - 1]);
        let mut batches = Vec::new();
        for &a in grid.alphas() {
            let row = vandermonde_row(a, n);
            batches.push(oracle.query_batch(&row, b).unwrap());
        }
        // True per-component responses at each point.
        let mut true_cols = vec![vec![0.0f64; 2 * k]; l];
        for (pi, &a) in grid.alphas().iter().enumerate() {
            let row = vandermonde_row(a, n);
            for (c, v) in truth.vectors().iter().enumerate() {
                true_cols[c][pi] = row.iter().zip(v).map(|(x, y)| x * y).sum();
            }
        }
        // Sorted-order consistency check.
        for (pi, batch) in batches.iter().enumerate() {
            match process_batch(batch, l) {
                Ok(vals) => {
                    let mut expect: Vec<f64> = (0..l).map(|c| true_cols[c][pi]).collect();
                    expect.sort_by(f64::total_cmp);
                    let ok = vals
                        .iter()
                        .zip(&expect)
                        .all(|(a, b)| (a - b).abs() <= 1e-12 * b.abs().max(1e-300));
                    if !ok {
                        println!("  point {pi}: processed {vals:?} vs expected {expect:?}");
                    }
                }
                Err(e) => println!("  point {pi}: process error {e}"),
            }
        }
        // Rank order of components at each point.
        let orders: Vec<Vec<usize>> = (0..2 * k)
            .map(|pi| {
                let mut idx: Vec<usize> = (0..l).collect();
                idx.sort_by(|&a, &b| true_cols[a][pi].total_cmp(&true_cols[b][pi]));
                idx
            })
            .collect();
        let consistent = orders.windows(2).all(|w| w[0] == w[1]);
        println!("  rank order consistent: {consistent} (first {:?})", orders[0]);
        // Decode each true column directly and compare.
        for c in 0..l {
            let support: Vec<usize> = truth.vectors()[c]
                .iter()
                .enumerate()
                .filter(|(_, x)| **x != 0.0)
                .map(|(i, _)| i)
                .collect();
            match decode_sparse(&grid, &true_cols[c], n, k) {
                Ok(beta) => {
                    let got: Vec<usize> = beta
                        .iter()
                        .enumerate()
                        .filter(|(_, x)| x.abs() > 1e-9)
                        .map(|(i, _)| i)
                        .collect();
                    let err = beta
                        .iter()
                        .zip(&truth.vectors()[c])
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    println!(
                        "  comp {c}: support {support:?} decoded {got:?} max_err {err:.3e}"
                    );
                }
                Err(e) => println!("  comp {c}: support {support:?} decode error {e}"),
            }
        }
        let _ = rng.gen::<u64>();
    }
}
