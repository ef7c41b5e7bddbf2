/// Banded LU factorization with partial pivoting.
///
/// Row `i` stores columns `i−kl ..= i+kl+ku`, leaving room for the fill
/// that row interchanges introduce above the diagonal. Multipliers of `L`
/// are kept where they were computed and pivots are replayed during the
/// forward solve.
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
    factored: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Singular {
    pub column: usize,
}

impl BandLu {
    pub fn new(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandLu {
            n,
            kl,
            ku,
            width,
            data: vec![0.0; n * width],
            pivots: vec![0; n],
            factored: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
        self.factored = false;
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Adds `v` to entry `(i, j)`, which must lie inside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside band ({}, {})",
            self.kl,
            self.ku
        );
        let k = self.at(i, j);
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if j + self.kl < i || j > i + self.kl + self.ku {
            return 0.0;
        }
        self.data[self.at(i, j)]
    }

    pub fn factor(&mut self) -> Result<(), Singular> {
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        let mut colmax = vec![0.0f64; n];
        for (j, m) in colmax.iter_mut().enumerate() {
            for i in j.saturating_sub(ku)..=(j + kl).min(n - 1) {
                *m = m.max(self.data[self.at(i, j)].abs());
            }
        }
        for k in 0..n {
            let tiny = colmax[k] * 1e-15;
            let last_row = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.at(k, k)].abs();
            for i in k + 1..=last_row {
                let v = self.data[self.at(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            self.pivots[k] = p;
            if best <= tiny || !best.is_finite() {
                return Err(Singular { column: k });
            }
            let last_col = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.at(k, j), self.at(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.at(k, k)];
            let urow = self.at(k, k + 1);
            let ulen = last_col - k;
            for i in k + 1..=last_row {
                let li = self.at(i, k);
                let l = self.data[li] / pivot;
                self.data[li] = l;
                if l == 0.0 {
                    continue;
                }
                let start = self.at(i, k + 1);
                let (head, tail) = if start > urow {
                    let (h, t) = self.data.split_at_mut(start);
                    (&h[urow..urow + ulen], &mut t[..ulen])
                } else {
                    unreachable!("row {i} precedes pivot row {k} in storage")
                };
                for (a, &u) in tail.iter_mut().zip(head) {
                    *a -= l * u;
                }
            }
        }
        self.factored = true;
        Ok(())
    }

    /// Solves `A x = b` in place.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve before factor");
        let (n, kl, ku) = (self.n, self.kl, self.ku);
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                b.swap(k, p);
            }
            let bk = b[k];
            if bk != 0.0 {
                for i in k + 1..=(k + kl).min(n - 1) {
                    b[i] -= self.data[self.at(i, k)] * bk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = b[k];
            for j in k + 1..=(k + kl + ku).min(n - 1) {
                s -= self.data[self.at(k, j)] * b[j];
            }
            b[k] = s / self.data[self.at(k, k)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_mul(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
        a.iter()
            .map(|row| row.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    }

    #[test]
    fn random_banded_systems() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, kl, ku) in &[(1, 0, 0), (5, 1, 1), (30, 3, 5), (60, 7, 2), (40, 39, 39)] {
            let mut dense = vec![vec![0.0; n]; n];
            let mut lu = BandLu::new(n, kl, ku);
            for i in 0..n {
                for j in i.saturating_sub(kl)..=(i + ku).min(n - 1) {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    dense[i][j] = v;
                    lu.add(i, j, v);
                }
            }
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut b = dense_mul(&dense, &x);
            lu.factor().unwrap();
            lu.solve(&mut b);
            for (u, v) in b.iter().zip(&x) {
                assert!((u - v).abs() < 1e-8, "n={n} kl={kl} ku={ku}: {u} vs {v}");
            }
        }
    }

    #[test]
    fn zero_leading_pivot_needs_interchange() {
        // [[0, 1], [1, 0]]
        let mut lu = BandLu::new(2, 1, 1);
        lu.add(0, 1, 1.0);
        lu.add(1, 0, 1.0);
        lu.factor().unwrap();
        let mut b = vec![3.0, 4.0];
        lu.solve(&mut b);
        assert_eq!(b, vec![4.0, 3.0]);
    }

    #[test]
    fn singular_is_reported() {
        let mut lu = BandLu::new(2, 1, 1);
        lu.add(0, 0, 1.0);
        lu.add(0, 1, 2.0);
        lu.add(1, 0, 2.0);
        lu.add(1, 1, 4.0);
        assert!(lu.factor().is_err());
    }
}
