//! Integer vectors of the Stern-Brocot structure: parents, children, ancestors
//! and the cyclic angular order. Everything here is exact integer arithmetic.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::Error;

/// Coordinates beyond this bound could overflow the quadratic predicates.
pub const COORD_LIMIT: i64 = 1 << 20;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct IVec {
    pub a: i64,
    pub b: i64,
}

impl fmt::Debug for IVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a, self.b)
    }
}

impl fmt::Display for IVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.a, self.b)
    }
}

pub const fn v(a: i64, b: i64) -> IVec {
    IVec { a, b }
}

impl IVec {
    pub const ZERO: IVec = v(0, 0);

    pub fn det(self, o: IVec) -> i64 {
        self.a * o.b - self.b * o.a
    }

    pub fn dot(self, o: IVec) -> i64 {
        self.a * o.a + self.b * o.b
    }

    pub fn norm2(self) -> i64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        (self.norm2() as f64).sqrt()
    }

    pub fn norm_inf(self) -> i64 {
        self.a.abs().max(self.b.abs())
    }

    pub fn is_zero(self) -> bool {
        self.a == 0 && self.b == 0
    }

    pub fn is_unit(self) -> bool {
        self.norm2() == 1
    }

    /// Lexicographically positive: the representative kept among `e` and `-e`.
    pub fn is_lex_positive(self) -> bool {
        self.a > 0 || (self.a == 0 && self.b > 0)
    }

    pub fn rot90(self) -> IVec {
        v(-self.b, self.a)
    }

    pub fn as_f64(self) -> [f64; 2] {
        [self.a as f64, self.b as f64]
    }
}

impl Add for IVec {
    type Output = IVec;
    fn add(self, o: IVec) -> IVec {
        v(self.a + o.a, self.b + o.b)
    }
}

impl Sub for IVec {
    type Output = IVec;
    fn sub(self, o: IVec) -> IVec {
        v(self.a - o.a, self.b - o.b)
    }
}

impl Neg for IVec {
    type Output = IVec;
    fn neg(self) -> IVec {
        v(-self.a, -self.b)
    }
}

impl Mul<IVec> for i64 {
    type Output = IVec;
    fn mul(self, o: IVec) -> IVec {
        v(self * o.a, self * o.b)
    }
}

pub fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

pub fn is_irreducible(e: IVec) -> Result<bool, Error> {
    if e.is_zero() {
        return Err(Error::InvalidArgument("zero vector".into()));
    }
    Ok(gcd(e.a, e.b) == 1)
}

/// Irreducible test that treats the zero vector as reducible.
pub fn irreducible(e: IVec) -> bool {
    !e.is_zero() && gcd(e.a, e.b) == 1
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Basis {
    pub f: IVec,
    pub g: IVec,
}

impl Basis {
    pub fn is_basis(&self) -> bool {
        self.f.det(self.g).abs() == 1
    }
    pub fn is_direct(&self) -> bool {
        self.f.det(self.g) == 1
    }
    pub fn is_acute(&self) -> bool {
        self.f.dot(self.g) >= 0
    }
}

/// Returns `(x, y, g)` with `x·a + y·b = g = gcd(a, b) ≥ 0`.
fn ext_gcd(a: i64, b: i64) -> (i64, i64, i64) {
    let (mut r0, mut r1) = (a, b);
    let (mut s0, mut s1) = (1i64, 0i64);
    let (mut t0, mut t1) = (0i64, 1i64);
    while r1 != 0 {
        let q = r0.div_euclid(r1);
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if r0 < 0 {
        (-s0, -t0, -r0)
    } else {
        (s0, t0, r0)
    }
}

/// The unique direct acute basis `(f, g)` with `f + g = e`.
pub fn parents(e: IVec) -> Result<Basis, Error> {
    if !irreducible(e) {
        return Err(Error::InvalidArgument(format!("{e} is not irreducible")));
    }
    if e.is_unit() {
        return Err(Error::NoParents);
    }
    debug_assert!(e.norm_inf() < COORD_LIMIT);
    // det(f, e) = f.a·e.b − f.b·e.a = 1
    let (x, y, g) = ext_gcd(e.b, -e.a);
    debug_assert_eq!(g, 1);
    let f0 = v(x, y);
    // f = f0 + t·e; choose t so that the projection of f onto e falls in (0, 1)
    let n2 = e.norm2();
    let t0 = (-f0.dot(e)).div_euclid(n2);
    for t in [t0, t0 + 1, t0 - 1, t0 + 2] {
        let f = f0 + t * e;
        let g = e - f;
        if f.dot(g) >= 0 {
            return Ok(Basis { f, g });
        }
    }
    unreachable!("every irreducible non-unit vector has parents")
}

/// The pair `(f, g)` used to generate children: the parents for non-unit `e`,
/// and for a unit vector the two orthogonal units with `det(f,e) = det(e,g) = 1`.
pub fn generating_pair(e: IVec) -> Basis {
    if e.is_unit() {
        Basis {
            f: -e.rot90(),
            g: e.rot90(),
        }
    } else {
        parents(e).expect("irreducible")
    }
}

/// All vectors having `e` as a parent with norm at most `norm_bound`, ordered by
/// `k` and then f-branch before g-branch.
pub fn children(e: IVec, norm_bound: f64) -> Vec<IVec> {
    let Basis { f, g } = generating_pair(e);
    let b2 = norm_bound * norm_bound;
    let mut out = Vec::new();
    for k in 1.. {
        let c1 = f + k * e;
        let c2 = k * e + g;
        let ok1 = (c1.norm2() as f64) <= b2;
        let ok2 = (c2.norm2() as f64) <= b2;
        if ok1 {
            out.push(c1);
        }
        if ok2 {
            out.push(c2);
        }
        // ⟨f,e⟩ ≥ 0 and ⟨g,e⟩ ≥ 0, so both branches grow with k
        if !ok1 && !ok2 {
            break;
        }
    }
    out
}

/// Smallest set containing `e` and closed under taking parents.
pub fn ancestors(e: IVec) -> Vec<IVec> {
    let mut out = vec![e];
    let mut i = 0;
    while i < out.len() {
        let x = out[i];
        i += 1;
        if x.is_unit() {
            continue;
        }
        let Basis { f, g } = parents(x).expect("irreducible");
        for p in [f, g] {
            if !out.contains(&p) {
                out.push(p);
            }
        }
    }
    out
}

/// Angular half: 0 for angles in `[0, π)` measured from the positive a-axis.
fn half(x: IVec) -> u8 {
    if x.b > 0 || (x.b == 0 && x.a > 0) {
        0
    } else {
        1
    }
}

/// Total order by angle in `[0, 2π)` from the positive a-axis, ties by length.
pub fn angle_cmp(x: IVec, y: IVec) -> Ordering {
    half(x)
        .cmp(&half(y))
        .then_with(|| 0.cmp(&x.det(y)))
        .then_with(|| x.norm2().cmp(&y.norm2()))
}

/// Same as [`angle_cmp`] on directions only (positive multiples are equal).
pub fn direction_cmp(x: IVec, y: IVec) -> Ordering {
    half(x).cmp(&half(y)).then_with(|| 0.cmp(&x.det(y)))
}

/// Angle of `x` measured counterclockwise from `r`, as an orderable key class:
/// compares `x` and `y` by their angle in `[0, 2π)` from `r`.
pub fn angle_from_cmp(r: IVec, x: IVec, y: IVec) -> Ordering {
    let rel = |z: IVec| {
        let d = r.det(z);
        let p = r.dot(z);
        // [0, π) → 0, [π, 2π) → 1
        if d > 0 || (d == 0 && p > 0) {
            0u8
        } else {
            1u8
        }
    };
    rel(x).cmp(&rel(y)).then_with(|| 0.cmp(&x.det(y)))
}

/// True iff `f ≺ e ≺ g` strictly in cyclic counterclockwise order.
pub fn cyclic_between(f: IVec, e: IVec, g: IVec) -> Result<bool, Error> {
    if f.is_zero() || e.is_zero() || g.is_zero() {
        return Err(Error::InvalidArgument("zero vector".into()));
    }
    Ok(strictly_between(f, e, g))
}

pub(crate) fn strictly_between(f: IVec, e: IVec, g: IVec) -> bool {
    let same_dir = |x: IVec, y: IVec| x.det(y) == 0 && x.dot(y) > 0;
    if same_dir(f, e) {
        return false;
    }
    if same_dir(f, g) {
        // g coincides with f: the open arc is the full turn minus one ray
        return true;
    }
    angle_from_cmp(f, e, g) == Ordering::Less
}

/// True iff the counterclockwise arc from `f` to `g` is strictly less than π.
pub fn arc_below_pi(f: IVec, g: IVec) -> bool {
    f.det(g) > 0
}

/// Precomputed irreducibility and parents for offsets with `|a|, |b| ≤ radius`.
pub struct OffsetTable {
    radius: i64,
    width: usize,
    entries: Vec<Option<Basis>>,
    irreducible: Vec<bool>,
}

impl OffsetTable {
    pub fn new(radius: i64) -> Self {
        let width = (2 * radius + 1) as usize;
        let mut entries = vec![None; width * width];
        let mut irr = vec![false; width * width];
        for a in -radius..=radius {
            for b in -radius..=radius {
                let e = v(a, b);
                let k = (a + radius) as usize * width + (b + radius) as usize;
                if irreducible(e) {
                    irr[k] = true;
                    if !e.is_unit() {
                        entries[k] = Some(parents(e).unwrap());
                    }
                }
            }
        }
        Self {
            radius,
            width,
            entries,
            irreducible: irr,
        }
    }

    pub fn radius(&self) -> i64 {
        self.radius
    }

    #[inline]
    fn slot(&self, e: IVec) -> Option<usize> {
        if e.a.abs() > self.radius || e.b.abs() > self.radius {
            return None;
        }
        Some((e.a + self.radius) as usize * self.width + (e.b + self.radius) as usize)
    }

    #[inline]
    pub fn is_irreducible(&self, e: IVec) -> bool {
        match self.slot(e) {
            Some(k) => self.irreducible[k],
            None => irreducible(e),
        }
    }

    /// Parents of an irreducible non-unit vector.
    #[inline]
    pub fn parents(&self, e: IVec) -> Basis {
        match self.slot(e) {
            Some(k) => self.entries[k].expect("irreducible non-unit offset"),
            None => parents(e).expect("irreducible non-unit offset"),
        }
    }
}
