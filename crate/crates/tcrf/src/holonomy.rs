//! Finite holonomy groups of the flat torus model.
//!
//! An element acts as z -> Uz + b in real coordinates (x1, y1, ..., xn, yn).
//! Lattice preservation plus unitarity force U to be an integer orthogonal
//! matrix commuting with the complex structure J, i.e. a signed permutation
//! compatible with the pairing of axes into complex coordinates. The
//! translation b is rational with denominators dividing the grid size, so
//! the action permutes grid points exactly.

use num_complex::Complex64;
use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Reduced rational with positive denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational {
    pub num: i64,
    pub den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::config("rational", "zero denominator"));
        }
        let s = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den).max(1);
        Ok(Rational { num: s * num / g, den: s * den / g })
    }

    pub fn zero() -> Self {
        Rational { num: 0, den: 1 }
    }

    /// Representative in [0, 1).
    pub fn mod1(self) -> Self {
        Rational { num: self.num.rem_euclid(self.den), den: self.den }
    }

    pub fn add(self, o: Rational) -> Rational {
        let den = self.den * o.den;
        let num = self.num * o.den + o.num * self.den;
        Rational::new(num, den).expect("nonzero denominator")
    }

    pub fn scale(self, k: i64) -> Rational {
        Rational::new(self.num * k, self.den).expect("nonzero denominator")
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Numerator of self * len, which must be integral for grid use.
    pub fn grid_offset(self, len: usize) -> Result<i64> {
        let n = self.num * len as i64;
        if n % self.den != 0 {
            return Err(Error::config(
                "holonomy/b",
                format!("translation {self} is not a multiple of 1/{len}"),
            ));
        }
        Ok(n / self.den)
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for Rational {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse = |t: &str| {
            t.trim()
                .parse::<i64>()
                .map_err(|_| Error::config("rational", format!("bad integer {t:?}")))
        };
        match s.split_once('/') {
            Some((a, b)) => Rational::new(parse(a)?, parse(b)?),
            None => Rational::new(parse(s)?, 1),
        }
    }
}

/// One affine holonomy map z -> Uz + b.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HolonomyElement {
    /// Row-major 2n x 2n integer matrix.
    pub u: Vec<i64>,
    /// Translation per real axis, stored mod 1.
    pub b: Vec<Rational>,
}

impl HolonomyElement {
    pub fn identity(axes: usize) -> Self {
        let mut u = vec![0; axes * axes];
        for i in 0..axes {
            u[i * axes + i] = 1;
        }
        HolonomyElement { u, b: vec![Rational::zero(); axes] }
    }

    pub fn axes(&self) -> usize {
        self.b.len()
    }

    fn at(&self, r: usize, c: usize) -> i64 {
        self.u[r * self.axes() + c]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity(self.axes())
    }

    /// self after other: z -> U_s (U_o z + b_o) + b_s.
    pub fn compose(&self, other: &HolonomyElement) -> HolonomyElement {
        let d = self.axes();
        let mut u = vec![0i64; d * d];
        for r in 0..d {
            for c in 0..d {
                let mut s = 0;
                for k in 0..d {
                    s += self.at(r, k) * other.at(k, c);
                }
                u[r * d + c] = s;
            }
        }
        let b = (0..d)
            .map(|r| {
                let mut acc = self.b[r];
                for k in 0..d {
                    acc = acc.add(other.b[k].scale(self.at(r, k)));
                }
                acc.mod1()
            })
            .collect();
        HolonomyElement { u, b }
    }

    /// Checks the structural constraints: orthogonality over the integers
    /// (lattice-preserving unitary) and commutation with the complex
    /// structure pairing axis 2j with 2j+1; translations must land on the
    /// grid of size `len`.
    pub fn validate(&self, n: usize, len: usize) -> Result<()> {
        let d = self.axes();
        if d != 2 * n || self.u.len() != d * d {
            return Err(Error::config(
                "holonomy/U",
                format!("expected a {} x {} matrix", 2 * n, 2 * n),
            ));
        }
        for r in 0..d {
            for c in 0..d {
                let dot: i64 = (0..d).map(|k| self.at(k, r) * self.at(k, c)).sum();
                let want = i64::from(r == c);
                if dot != want {
                    return Err(Error::config("holonomy/U", "matrix is not orthogonal"));
                }
            }
        }
        // J maps x_j -> y_j -> -x_j; commuting with J = complex linearity.
        let j_of = |k: usize| if k % 2 == 0 { (k + 1, 1i64) } else { (k - 1, -1) };
        for r in 0..d {
            for c in 0..d {
                let (jc, sc) = j_of(c);
                let uj = sc * self.at(r, jc);
                let (jr, sr) = j_of(r);
                // (JU)_{rc} = sign * U_{jr', c} with J acting on the left:
                // row x_j of JU is -row y_j of U, row y_j is +row x_j.
                let ju = -sr * self.at(jr, c);
                if uj != ju {
                    return Err(Error::config(
                        "holonomy/U",
                        "matrix does not commute with the complex structure",
                    ));
                }
            }
        }
        for t in &self.b {
            t.grid_offset(len)?;
        }
        Ok(())
    }

    fn normalized(&self) -> HolonomyElement {
        HolonomyElement { u: self.u.clone(), b: self.b.iter().map(|t| t.mod1()).collect() }
    }

    /// Complex n x n matrix of the linear part, row-major.
    pub fn u_complex(&self, n: usize) -> Vec<Complex64> {
        let mut m = vec![Complex64::default(); n * n];
        for j in 0..n {
            for k in 0..n {
                m[j * n + k] =
                    Complex64::new(self.at(2 * j, 2 * k) as f64, self.at(2 * j + 1, 2 * k) as f64);
            }
        }
        m
    }

    /// Image of the grid point with coordinates `c`, as grid coordinates.
    pub fn map_coords(&self, c: &[usize], len: usize) -> Vec<usize> {
        let d = self.axes();
        (0..d)
            .map(|r| {
                let mut acc = self.b[r].grid_offset(len).expect("validated translation");
                for k in 0..d {
                    acc += self.at(r, k) * c[k] as i64;
                }
                acc.rem_euclid(len as i64) as usize
            })
            .collect()
    }
}

/// Closes a generator list into a group, identity included. Errors if the
/// closure exceeds `cap` elements (the model requires finite holonomy).
pub fn close_group(
    axes: usize,
    generators: &[HolonomyElement],
    cap: usize,
) -> Result<Vec<HolonomyElement>> {
    let id = HolonomyElement::identity(axes);
    let mut seen: BTreeSet<HolonomyElement> = BTreeSet::new();
    seen.insert(id.clone());
    let mut frontier = vec![id];
    while let Some(elem) = frontier.pop() {
        for g in generators {
            let next = g.compose(&elem).normalized();
            if seen.insert(next.clone()) {
                if seen.len() > cap {
                    return Err(Error::config(
                        "holonomy",
                        format!("group closure exceeds {cap} elements"),
                    ));
                }
                frontier.push(next);
            }
        }
    }
    // Deterministic order with the identity first; callers rely on that.
    let mut out: Vec<HolonomyElement> = seen.into_iter().collect();
    let pos = out.iter().position(HolonomyElement::is_identity).expect("identity was seeded");
    out.swap(0, pos);
    Ok(out)
}

/// Determinant of the minor of a complex matrix on `rows` x `cols`.
pub fn minor_det(m: &[Complex64], n: usize, rows: &[usize], cols: &[usize]) -> Complex64 {
    debug_assert_eq!(rows.len(), cols.len());
    match rows.len() {
        0 => Complex64::new(1.0, 0.0),
        1 => m[rows[0] * n + cols[0]],
        _ => {
            let mut det = Complex64::default();
            let mut sign = 1.0;
            for (i, &r) in rows.iter().enumerate() {
                let rest: Vec<usize> =
                    rows.iter().enumerate().filter(|&(k, _)| k != i).map(|(_, &v)| v).collect();
                det += sign * m[r * n + cols[0]] * minor_det(m, n, &rest, &cols[1..]);
                sign = -sign;
            }
            det
        }
    }
}
