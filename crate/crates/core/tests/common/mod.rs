//! Reference implementations shared by the integration tests. Nothing here
//! calls into the simulator or the convolution code under test.

#![allow(dead_code)]

use num_complex::Complex64 as C;
use qshield::diffsim::TapeOp;
use rand::Rng;
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256StarStar;

pub type Dense = Vec<Vec<C>>;

pub fn rng(seed: u64) -> Xoshiro256StarStar {
    Xoshiro256StarStar::seed_from_u64(seed)
}

fn identity(dim: usize) -> Dense {
    (0..dim)
        .map(|r| (0..dim).map(|c| if r == c { C::new(1.0, 0.0) } else { C::new(0.0, 0.0) }).collect())
        .collect()
}

fn matmul(a: &Dense, b: &Dense) -> Dense {
    let n = a.len();
    let mut out = vec![vec![C::new(0.0, 0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == C::new(0.0, 0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

fn kron(a: &Dense, b: &Dense) -> Dense {
    let (na, nb) = (a.len(), b.len());
    let mut out = vec![vec![C::new(0.0, 0.0); na * nb]; na * nb];
    for i in 0..na {
        for j in 0..na {
            for k in 0..nb {
                for l in 0..nb {
                    out[i * nb + k][j * nb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn ry(t: f64) -> Dense {
    let (c, s) = ((t / 2.0).cos(), (t / 2.0).sin());
    vec![vec![C::new(c, 0.0), C::new(-s, 0.0)], vec![C::new(s, 0.0), C::new(c, 0.0)]]
}

pub fn rz(t: f64) -> Dense {
    vec![
        vec![C::from_polar(1.0, -t / 2.0), C::new(0.0, 0.0)],
        vec![C::new(0.0, 0.0), C::from_polar(1.0, t / 2.0)],
    ]
}

/// `u` on `qubit` of an `n`-qubit register, qubit 0 being the leftmost
/// tensor factor.
pub fn lift(u: &Dense, qubit: usize, n: usize) -> Dense {
    let mut out = identity(1);
    for q in 0..n {
        out = kron(&out, &if q == qubit { u.clone() } else { identity(2) });
    }
    out
}

pub fn cz(a: usize, b: usize, n: usize) -> Dense {
    let dim = 1 << n;
    let mut m = identity(dim);
    for (i, row) in m.iter_mut().enumerate() {
        let bit = |q: usize| (i >> (n - 1 - q)) & 1;
        if bit(a) == 1 && bit(b) == 1 {
            row[i] = C::new(-1.0, 0.0);
        }
    }
    m
}

/// Full unitary of a tape, multiplied out gate by gate.
pub fn tape_unitary(n: usize, ops: &[TapeOp], params: &[f64]) -> Dense {
    let mut u = identity(1 << n);
    for op in ops {
        let g = match *op {
            TapeOp::Rot { qubit, params: [a, b, c] } => {
                lift(&matmul(&rz(params[c]), &matmul(&ry(params[b]), &rz(params[a]))), qubit, n)
            }
            TapeOp::Ry { qubit, param } => lift(&ry(params[param]), qubit, n),
            TapeOp::Rz { qubit, param } => lift(&rz(params[param]), qubit, n),
            TapeOp::Cz { control, target } => cz(control, target, n),
        };
        u = matmul(&g, &u);
    }
    u
}

pub fn apply(u: &Dense, psi: &[C]) -> Vec<C> {
    u.iter().map(|row| row.iter().zip(psi).map(|(a, b)| a * b).sum()).collect()
}

/// `⟨Z_q⟩` read straight off the probabilities.
pub fn z_expectations(psi: &[C], n: usize) -> Vec<f64> {
    (0..n)
        .map(|q| {
            psi.iter()
                .enumerate()
                .map(|(i, a)| if (i >> (n - 1 - q)) & 1 == 0 { a.norm_sqr() } else { -a.norm_sqr() })
                .sum()
        })
        .collect()
}

/// A random tape with every parameter used once.
pub fn random_tape(r: &mut impl Rng, n: usize, layers: usize) -> (Vec<TapeOp>, usize) {
    let mut ops = Vec::new();
    let mut next = 0;
    for _ in 0..layers {
        for q in 0..n {
            match r.random_range(0..3) {
                0 => {
                    ops.push(TapeOp::Rot { qubit: q, params: [next, next + 1, next + 2] });
                    next += 3;
                }
                1 => {
                    ops.push(TapeOp::Ry { qubit: q, param: next });
                    next += 1;
                }
                _ => {
                    ops.push(TapeOp::Rz { qubit: q, param: next });
                    next += 1;
                }
            }
        }
        if n > 1 {
            for _ in 0..r.random_range(0..=n) {
                let a = r.random_range(0..n);
                let b = (a + r.random_range(1..n)) % n;
                ops.push(TapeOp::Cz { control: a, target: b });
            }
        }
    }
    (ops, next)
}

pub fn random_state(r: &mut impl Rng, n: usize) -> Vec<C> {
    let v: Vec<C> = (0..1 << n)
        .map(|_| C::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
        .collect();
    let norm = v.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    v.into_iter().map(|a| a / norm).collect()
}

/// Conv2d with an explicitly zero-padded copy of the input.
/// x: [cin, h, w], w: [cout, cin, k, k].
pub fn conv_oracle(
    x: &[f64],
    cin: usize,
    side: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize) {
    let ps = side + 2 * pad;
    let mut padded = vec![0.0; cin * ps * ps];
    for c in 0..cin {
        for i in 0..side {
            for j in 0..side {
                padded[(c * ps + i + pad) * ps + j + pad] = x[(c * side + i) * side + j];
            }
        }
    }
    let out = (ps - k) / stride + 1;
    let mut y = vec![0.0; cout * out * out];
    for o in 0..cout {
        for i in 0..out {
            for j in 0..out {
                let mut acc = b[o];
                for c in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            acc += w[((o * cin + c) * k + u) * k + v]
                                * padded[(c * ps + i * stride + u) * ps + j * stride + v];
                        }
                    }
                }
                y[(o * out + i) * out + j] = acc;
            }
        }
    }
    (y, out)
}

/// Transposed convolution as a stride-1 convolution of the zero-dilated,
/// re-padded input with the flipped, channel-swapped kernel.
/// x: [cin, h, w], w: [cin, cout, k, k].
#[allow(clippy::too_many_arguments)]
pub fn conv_transpose_oracle(
    x: &[f64],
    cin: usize,
    side: usize,
    w: &[f64],
    b: &[f64],
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    out_pad: usize,
) -> (Vec<f64>, usize) {
    let dil = (side - 1) * stride + 1;
    let lo = k - 1 - pad;
    let hi = k - 1 - pad + out_pad;
    let ps = dil + lo + hi;
    let mut canvas = vec![0.0; cin * ps * ps];
    for c in 0..cin {
        for i in 0..side {
            for j in 0..side {
                canvas[(c * ps + lo + i * stride) * ps + lo + j * stride] = x[(c * side + i) * side + j];
            }
        }
    }
    let mut flipped = vec![0.0; cout * cin * k * k];
    for c in 0..cin {
        for o in 0..cout {
            for u in 0..k {
                for v in 0..k {
                    flipped[((o * cin + c) * k + (k - 1 - u)) * k + (k - 1 - v)] = w[((c * cout + o) * k + u) * k + v];
                }
            }
        }
    }
    let out = ps - k + 1;
    let mut y = vec![0.0; cout * out * out];
    for o in 0..cout {
        for i in 0..out {
            for j in 0..out {
                let mut acc = b[o];
                for c in 0..cin {
                    for u in 0..k {
                        for v in 0..k {
                            acc += flipped[((o * cin + c) * k + u) * k + v] * canvas[(c * ps + i + u) * ps + j + v];
                        }
                    }
                }
                y[(o * out + i) * out + j] = acc;
            }
        }
    }
    (y, out)
}

pub fn uniform_vec(r: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| r.random_range(lo..hi)).collect()
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error with an absolute floor for tiny gradients.
pub fn grad_close(analytic: f64, numeric: f64, rel: f64, abs_floor: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    if scale < abs_floor {
        (analytic - numeric).abs() <= abs_floor
    } else {
        (analytic - numeric).abs() / scale <= rel
    }
}
