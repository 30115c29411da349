//! Shared test support: an expression corpus, an independent reference
//! evaluator, and small dense linear-algebra oracles.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FUNCS1: [&str; 7] = ["sin", "cos", "exp", "log", "abs", "tanh", "sqrt"];
const FUNCS2: [&str; 2] = ["min", "max"];
const ATOMS: [&str; 4] = ["x", "y", "t", "pi"];

fn literal(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4) {
        0 => rng.random_range(0..10).to_string(),
        1 => format!("{:.3}", rng.random_range(0.0..5.0)),
        2 => format!("{}e-{}", rng.random_range(1..9), rng.random_range(1..4)),
        _ => format!("0.{}", rng.random_range(1..100)),
    }
}

fn gen(rng: &mut ChaCha8Rng, depth: u32) -> String {
    if depth == 0 || rng.random_bool(0.25) {
        return if rng.random_bool(0.5) {
            literal(rng)
        } else {
            ATOMS[rng.random_range(0..ATOMS.len())].to_string()
        };
    }
    match rng.random_range(0..9) {
        0 => format!("-{}", gen(rng, depth - 1)),
        1 => format!("({})", gen(rng, depth - 1)),
        2 => format!("{}({})", FUNCS1[rng.random_range(0..FUNCS1.len())], gen(rng, depth - 1)),
        3 => format!(
            "{}({}, {})",
            FUNCS2[rng.random_range(0..FUNCS2.len())],
            gen(rng, depth - 1),
            gen(rng, depth - 1)
        ),
        4 => format!("{}^{}", gen(rng, depth - 1), gen(rng, depth - 1)),
        k => {
            let op = ["+", "-", "*", "/"][k - 5];
            let sp = if rng.random_bool(0.5) { " " } else { "" };
            format!("{}{sp}{op}{sp}{}", gen(rng, depth - 1), gen(rng, depth - 1))
        }
    }
}

/// 200 expressions: fixed cases followed by seeded random ones.
pub fn corpus() -> Vec<String> {
    let mut out: Vec<String> = [
        "0.05*cos(x)",
        "sin(2*x)*exp(-t)",
        "2^3^2",
        "pi",
        "-x^2",
        "2^-1",
        "-2^-3*4",
        "1 - -x",
        "min(x, max(y, t))",
        "(1 + x)*(1 - x)/(2 + t)",
        "sqrt(abs(sin(x*y)))",
        "tanh(x - t)^2",
        "log(1 + x^2)",
        "exp(-(x - 1)^2/0.1)",
        "x/y/t",
        "x - y - t",
        "2^x^-1",
        "--x",
        "1e-3*x",
        "3.25e2 - 0.5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    while out.len() < 200 {
        let depth = rng.random_range(1..7);
        out.push(gen(&mut rng, depth));
    }
    out
}

/// Evaluation points `(x, y, t)` used against the corpus.
pub fn sample_points() -> Vec<(f64, f64, f64)> {
    vec![(0.3, 1.7, 0.25), (2.0, 0.5, 0.9), (1.234, 3.0, 0.0), (0.01, 0.02, 0.03)]
}

/// Direct recursive-descent evaluator over the source text. `Err(())` for
/// domain errors; panics on malformed input (the corpus is well formed).
pub struct RefEval<'s> {
    s: &'s [u8],
    i: usize,
    x: f64,
    y: f64,
    t: f64,
}

impl<'s> RefEval<'s> {
    pub fn eval(src: &'s str, x: f64, y: f64, t: f64) -> Result<f64, ()> {
        let mut p = RefEval { s: src.as_bytes(), i: 0, x, y, t };
        let v = p.sum()?;
        p.ws();
        assert_eq!(p.i, p.s.len(), "trailing input in {src}");
        Ok(v)
    }

    fn ws(&mut self) {
        while self.i < self.s.len() && self.s[self.i].is_ascii_whitespace() {
            self.i += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.ws();
        self.s.get(self.i).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.i += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<f64, ()> {
        let mut v = self.product()?;
        loop {
            if self.eat(b'+') {
                v += self.product()?;
            } else if self.eat(b'-') {
                v -= self.product()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn product(&mut self) -> Result<f64, ()> {
        let mut v = self.unary()?;
        loop {
            if self.eat(b'*') {
                v *= self.unary()?;
            } else if self.eat(b'/') {
                v /= self.unary()?;
            } else {
                return Ok(v);
            }
        }
    }

    fn unary(&mut self) -> Result<f64, ()> {
        if self.eat(b'-') {
            return Ok(-self.unary()?);
        }
        self.power()
    }

    fn power(&mut self) -> Result<f64, ()> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exp = self.unary()?;
            return Ok(base.powf(exp));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<f64, ()> {
        let c = self.peek().expect("atom");
        if self.eat(b'(') {
            let v = self.sum()?;
            assert!(self.eat(b')'));
            return Ok(v);
        }
        if c.is_ascii_digit() || c == b'.' {
            let start = self.i;
            while self.i < self.s.len() && (self.s[self.i].is_ascii_digit() || self.s[self.i] == b'.') {
                self.i += 1;
            }
            if self.i < self.s.len() && (self.s[self.i] == b'e' || self.s[self.i] == b'E') {
                self.i += 1;
                if self.s[self.i] == b'-' || self.s[self.i] == b'+' {
                    self.i += 1;
                }
                while self.i < self.s.len() && self.s[self.i].is_ascii_digit() {
                    self.i += 1;
                }
            }
            let text = std::str::from_utf8(&self.s[start..self.i]).unwrap();
            return Ok(text.parse().unwrap());
        }
        let start = self.i;
        while self.i < self.s.len() && self.s[self.i].is_ascii_alphabetic() {
            self.i += 1;
        }
        let name = std::str::from_utf8(&self.s[start..self.i]).unwrap();
        match name {
            "x" => return Ok(self.x),
            "y" => return Ok(self.y),
            "t" => return Ok(self.t),
            "pi" => return Ok(std::f64::consts::PI),
            _ => {}
        }
        assert!(self.eat(b'('), "call {name}");
        let a = self.sum()?;
        let v = match name {
            "sin" => a.sin(),
            "cos" => a.cos(),
            "exp" => a.exp(),
            "abs" => a.abs(),
            "tanh" => a.tanh(),
            "log" if a <= 0.0 => return Err(()),
            "log" => a.ln(),
            "sqrt" if a < 0.0 => return Err(()),
            "sqrt" => a.sqrt(),
            "min" | "max" => {
                assert!(self.eat(b','));
                let b = self.sum()?;
                if name == "min" {
                    a.min(b)
                } else {
                    a.max(b)
                }
            }
            other => panic!("unknown function {other}"),
        };
        assert!(self.eat(b')'));
        Ok(v)
    }
}

/// Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut a: DMatrix<f64>, mut b: DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[(i, c)].abs().total_cmp(&a[(j, c)].abs())).unwrap();
        a.swap_rows(c, p);
        b.swap_rows(c, p);
        for r in c + 1..n {
            let f = a[(r, c)] / a[(c, c)];
            if f != 0.0 {
                for k in c..n {
                    a[(r, k)] -= f * a[(c, k)];
                }
                for k in 0..b.ncols() {
                    b[(r, k)] -= f * b[(c, k)];
                }
            }
        }
    }
    for c in (0..n).rev() {
        for k in 0..b.ncols() {
            let mut s = b[(c, k)];
            for j in c + 1..n {
                s -= a[(c, j)] * b[(j, k)];
            }
            b[(c, k)] = s / a[(c, c)];
        }
    }
    b
}

/// Dense Crank–Nicolson propagation of `y' + (A + diag e_k) y = f_k` over the
/// grid, returning the grid-space affine map `(P, q)`.
pub fn dense_period_map(
    a: &DMatrix<f64>,
    e: impl Fn(usize) -> DVector<f64>,
    f: impl Fn(usize) -> DVector<f64>,
    dt: f64,
    steps: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let n = a.nrows();
    let mut p = DMatrix::identity(n, n);
    let mut q = DVector::zeros(n);
    for k in 0..steps {
        let b = a + DMatrix::from_diagonal(&e(k));
        let lhs = DMatrix::identity(n, n) + &b * (0.5 * dt);
        let rhs = DMatrix::identity(n, n) - &b * (0.5 * dt);
        let mut rhs_all = DMatrix::zeros(n, n + 1);
        rhs_all.view_mut((0, 0), (n, n)).copy_from(&(&rhs * &p));
        let qk = &rhs * &q + f(k) * dt;
        rhs_all.set_column(n, &qk);
        let next = gauss_solve(lhs, rhs_all);
        p = next.columns(0, n).clone_owned();
        q = next.column(n).clone_owned();
    }
    (p, q)
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}
