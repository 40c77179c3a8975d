//! Small combinatorial helpers shared by the decoding and RIP modules.

/// Iterator over all size-`k` subsets of `0..n` in lexicographic order.
pub(crate) struct Subsets {
    n: usize,
    k: usize,
    cur: Vec<usize>,
    done: bool,
}

impl Subsets {
    pub(crate) fn new(n: usize, k: usize) -> Self {
        let done = k > n;
        Subsets { n, k, cur: (0..k).collect(), done }
    }
}

impl Iterator for Subsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.done {
            return None;
        }
        let out = self.cur.clone();
        if self.k == 0 {
            self.done = true;
            return Some(out);
        }
        // Advance the rightmost index that still has room.
        let mut i = self.k;
        loop {
            if i == 0 {
                self.done = true;
                break;
            }
            i -= 1;
            if self.cur[i] + (self.k - i) < self.n {
                self.cur[i] += 1;
                for j in i + 1..self.k {
                    self.cur[j] = self.cur[j - 1] + 1;
                }
                break;
            }
        }
        Some(out)
    }
}

/// Binomial coefficient, saturating at `u128::MAX`.
pub(crate) fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        let num = (n - i) as u128;
        acc = match acc.checked_mul(num) {
            Some(v) => v / (i as u128 + 1),
            None => return u128::MAX,
        };
    }
    acc
}
