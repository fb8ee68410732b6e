//! Orthonormal 8×8 type-II DCT and its inverse.

use std::sync::OnceLock;

pub const BLOCK: usize = 8;

pub type Block = [[f64; BLOCK]; BLOCK];

/// `basis[k][n] = a(k) cos((2n + 1) k π / 16)` with `a(0) = √(1/8)` and
/// `a(k) = √(2/8)` otherwise.
fn basis() -> &'static Block {
    static BASIS: OnceLock<Block> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; BLOCK]; BLOCK];
        for (k, row) in c.iter_mut().enumerate() {
            let a = if k == 0 { (1.0 / BLOCK as f64).sqrt() } else { (2.0 / BLOCK as f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = a * (((2 * n + 1) * k) as f64 * std::f64::consts::PI / (2 * BLOCK) as f64).cos();
            }
        }
        c
    })
}

/// `C · X · Cᵀ`, indexed `[v][u]` (vertical frequency first).
pub fn dct_block_forward(block: &Block) -> Block {
    let c = basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    // Rows: tmp[y][u] = Σ_x X[y][x] C[u][x]
    for y in 0..BLOCK {
        for u in 0..BLOCK {
            tmp[y][u] = (0..BLOCK).map(|x| block[y][x] * c[u][x]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for u in 0..BLOCK {
            out[v][u] = (0..BLOCK).map(|y| c[v][y] * tmp[y][u]).sum();
        }
    }
    out
}

/// `Cᵀ · F · C`.
pub fn dct_block_inverse(coef: &Block) -> Block {
    let c = basis();
    let mut tmp = [[0.0; BLOCK]; BLOCK];
    for v in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[v][x] = (0..BLOCK).map(|u| coef[v][u] * c[u][x]).sum();
        }
    }
    let mut out = [[0.0; BLOCK]; BLOCK];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y][x] = (0..BLOCK).map(|v| c[v][y] * tmp[v][x]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_block(rng: &mut ChaCha8Rng) -> Block {
        let mut b = [[0.0; BLOCK]; BLOCK];
        for row in b.iter_mut() {
            for v in row.iter_mut() {
                *v = rng.random_range(-128.0..128.0);
            }
        }
        b
    }

    /// Textbook quadruple-loop DCT-II with orthonormal scaling.
    fn direct_dct(x: &Block) -> Block {
        let a = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
        let mut f = [[0.0; BLOCK]; BLOCK];
        for v in 0..8 {
            for u in 0..8 {
                let mut s = 0.0;
                for yy in 0..8 {
                    for xx in 0..8 {
                        s += x[yy][xx]
                            * ((2 * xx + 1) as f64 * u as f64 * PI / 16.0).cos()
                            * ((2 * yy + 1) as f64 * v as f64 * PI / 16.0).cos();
                    }
                }
                f[v][u] = a(u) * a(v) * s;
            }
        }
        f
    }

    fn max_abs_diff(a: &Block, b: &Block) -> f64 {
        a.iter().flatten().zip(b.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn constant_block_is_pure_dc() {
        let c = 3.25;
        let f = dct_block_forward(&[[c; 8]; 8]);
        assert!((f[0][0] - 8.0 * c).abs() < 1e-12);
        for (i, v) in f.iter().flatten().enumerate().skip(1) {
            assert!(v.abs() < 1e-12, "AC {i} = {v}");
        }
        assert_eq!(dct_block_forward(&[[0.0; 8]; 8]), [[0.0; 8]; 8]);
    }

    #[test]
    fn matches_direct_formula_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let x = random_block(&mut rng);
            let f = dct_block_forward(&x);
            assert!(max_abs_diff(&f, &direct_dct(&x)) <= 1e-9);
            assert!(max_abs_diff(&dct_block_inverse(&f), &x) <= 1e-9);
            let e_x: f64 = x.iter().flatten().map(|v| v * v).sum();
            let e_f: f64 = f.iter().flatten().map(|v| v * v).sum();
            assert!((e_x - e_f).abs() <= 1e-9 * e_x.max(1.0));
        }
    }

    #[test]
    fn basis_is_orthonormal() {
        let c = basis();
        for i in 0..8 {
            for j in 0..8 {
                let dot: f64 = (0..8).map(|n| c[i][n] * c[j][n]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn transform_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (a, b) = (random_block(&mut rng), random_block(&mut rng));
        let (s, t) = (0.7, -1.3);
        let mut mix = [[0.0; 8]; 8];
        for y in 0..8 {
            for x in 0..8 {
                mix[y][x] = s * a[y][x] + t * b[y][x];
            }
        }
        let (fa, fb, fm) = (dct_block_forward(&a), dct_block_forward(&b), dct_block_forward(&mix));
        for v in 0..8 {
            for u in 0..8 {
                assert!((fm[v][u] - (s * fa[v][u] + t * fb[v][u])).abs() <= 1e-9);
            }
        }
    }
}
