//! Truncated multivariate Taylor jets up to total order 4.
//!
//! Coefficients are stored densely by graded multi-index: all monomials of
//! degree 0, then degree 1, and so on. The table for a lower order is a
//! prefix of the table for a higher order, so truncation is a slice.
//! Coefficient `c_α` stores `∂^α f / α!` at the base point.

use std::collections::HashMap;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, ExprError, Result};
use crate::expr::{ExprAst, Scalar, VarKind};

pub const MAX_ORDER: usize = 4;

/// Multi-index tables shared by all jets over the same number of variables.
#[derive(Debug)]
pub struct JetLayout {
    nvars: usize,
    exponents: Vec<Vec<u8>>,
    /// `upto[d]` = number of monomials of total degree ≤ d.
    upto: [usize; MAX_ORDER + 1],
    index: HashMap<Vec<u8>, usize>,
    /// Triples `(a, b, c)` with `x^a x^b = x^c`, sorted by degree of `c`.
    products: Vec<(u32, u32, u32)>,
    products_upto: [usize; MAX_ORDER + 1],
    /// `raise[i * nvars + v]` is the index of `x^{α_i + e_v}` or `u32::MAX`.
    raise: Vec<u32>,
    factorial: Vec<f64>,
}

impl JetLayout {
    fn build(nvars: usize) -> JetLayout {
        let mut exponents: Vec<Vec<u8>> = Vec::new();
        let mut upto = [0; MAX_ORDER + 1];
        for (d, slot) in upto.iter_mut().enumerate() {
            let mut cur = vec![0u8; nvars];
            push_degree(&mut exponents, &mut cur, 0, d as u8);
            *slot = exponents.len();
        }
        let index: HashMap<Vec<u8>, usize> = exponents
            .iter()
            .enumerate()
            .map(|(i, e)| (e.clone(), i))
            .collect();
        let degree = |e: &[u8]| e.iter().map(|&v| v as usize).sum::<usize>();

        let mut products = Vec::new();
        for (ia, a) in exponents.iter().enumerate() {
            for (ib, b) in exponents.iter().enumerate() {
                if degree(a) + degree(b) > MAX_ORDER {
                    continue;
                }
                let c: Vec<u8> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                products.push((ia as u32, ib as u32, index[&c] as u32));
            }
        }
        products.sort_by_key(|&(_, _, c)| degree(&exponents[c as usize]));
        let mut products_upto = [0; MAX_ORDER + 1];
        for (d, slot) in products_upto.iter_mut().enumerate() {
            *slot = products
                .iter()
                .take_while(|&&(_, _, c)| degree(&exponents[c as usize]) <= d)
                .count();
        }

        let mut raise = vec![u32::MAX; exponents.len() * nvars];
        for (i, e) in exponents.iter().enumerate() {
            for v in 0..nvars {
                let mut r = e.clone();
                r[v] += 1;
                if let Some(&j) = index.get(&r) {
                    raise[i * nvars + v] = j as u32;
                }
            }
        }
        let factorial = exponents
            .iter()
            .map(|e| e.iter().map(|&k| fact(k as usize)).product())
            .collect();
        JetLayout {
            nvars,
            exponents,
            upto,
            index,
            products,
            products_upto,
            raise,
            factorial,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    /// Number of coefficients of a jet of order `d`.
    pub fn len(&self, order: usize) -> usize {
        self.upto[order]
    }

    pub fn exponent(&self, i: usize) -> &[u8] {
        &self.exponents[i]
    }

    pub fn index_of(&self, alpha: &[u8]) -> Option<usize> {
        self.index.get(alpha).copied()
    }
}

fn push_degree(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, pos: usize, remaining: u8) {
    if pos + 1 == cur.len() {
        cur[pos] = remaining;
        out.push(cur.clone());
        cur[pos] = 0;
        return;
    }
    if cur.is_empty() {
        if remaining == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for k in (0..=remaining).rev() {
        cur[pos] = k;
        push_degree(out, cur, pos + 1, remaining - k);
    }
    cur[pos] = 0;
}

fn fact(k: usize) -> f64 {
    (1..=k).map(|i| i as f64).product()
}

/// Shared layout for `nvars` variables.
pub fn layout(nvars: usize) -> Arc<JetLayout> {
    static CACHE: OnceLock<Mutex<HashMap<usize, Arc<JetLayout>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    map.entry(nvars)
        .or_insert_with(|| Arc::new(JetLayout::build(nvars)))
        .clone()
}

#[derive(Debug, Clone)]
pub struct Jet {
    layout: Arc<JetLayout>,
    order: usize,
    coeffs: Vec<f64>,
}

impl Jet {
    pub fn constant(layout: &Arc<JetLayout>, order: usize, value: f64) -> Jet {
        assert!(order <= MAX_ORDER);
        let mut coeffs = vec![0.0; layout.len(order)];
        coeffs[0] = value;
        Jet {
            layout: layout.clone(),
            order,
            coeffs,
        }
    }

    /// The coordinate function `value + t_var`.
    pub fn variable(layout: &Arc<JetLayout>, order: usize, var: usize, value: f64) -> Jet {
        let mut j = Jet::constant(layout, order, value);
        if order >= 1 {
            j.coeffs[1 + var] = 1.0;
        }
        j
    }

    pub fn from_coeffs(layout: &Arc<JetLayout>, order: usize, coeffs: Vec<f64>) -> Jet {
        assert_eq!(coeffs.len(), layout.len(order));
        Jet {
            layout: layout.clone(),
            order,
            coeffs,
        }
    }

    pub fn layout(&self) -> &Arc<JetLayout> {
        &self.layout
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn nvars(&self) -> usize {
        self.layout.nvars
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn value(&self) -> f64 {
        self.coeffs[0]
    }

    /// First-order coefficient in variable `var`, i.e. `∂f/∂t_var`.
    pub fn grad(&self, var: usize) -> f64 {
        if self.order == 0 {
            0.0
        } else {
            self.coeffs[1 + var]
        }
    }

    /// `∂^α f` at the base point.
    pub fn partial(&self, alpha: &[u8]) -> Result<f64> {
        if alpha.len() != self.layout.nvars {
            return Err(Error::InvalidInput(format!(
                "multi-index has {} entries, jet has {} variables",
                alpha.len(),
                self.layout.nvars
            )));
        }
        let requested: usize = alpha.iter().map(|&a| a as usize).sum();
        if requested > self.order {
            return Err(Error::OrderExceeded {
                requested,
                order: self.order,
            });
        }
        let i = self.layout.index_of(alpha).expect("graded table is complete");
        Ok(self.coeffs[i] * self.layout.factorial[i])
    }

    pub fn truncate(&self, order: usize) -> Jet {
        let order = order.min(self.order);
        Jet {
            layout: self.layout.clone(),
            order,
            coeffs: self.coeffs[..self.layout.len(order)].to_vec(),
        }
    }

    /// `∂f/∂t_var` as a jet of one lower order.
    pub fn derivative(&self, var: usize) -> Jet {
        assert!(self.order >= 1, "cannot differentiate an order-0 jet");
        let order = self.order - 1;
        let n = self.layout.nvars;
        let len = self.layout.len(order);
        let mut coeffs = Vec::with_capacity(len);
        for i in 0..len {
            let j = self.layout.raise[i * n + var] as usize;
            let k = self.layout.exponents[i][var] as f64 + 1.0;
            coeffs.push(self.coeffs[j] * k);
        }
        Jet {
            layout: self.layout.clone(),
            order,
            coeffs,
        }
    }

    pub fn scale(&self, c: f64) -> Jet {
        Jet {
            layout: self.layout.clone(),
            order: self.order,
            coeffs: self.coeffs.iter().map(|v| v * c).collect(),
        }
    }

    pub fn add_const(&self, c: f64) -> Jet {
        let mut r = self.clone();
        r.coeffs[0] += c;
        r
    }

    fn zip(&self, other: &Jet, f: impl Fn(f64, f64) -> f64) -> Jet {
        debug_assert!(Arc::ptr_eq(&self.layout, &other.layout));
        let order = self.order.min(other.order);
        let len = self.layout.len(order);
        Jet {
            layout: self.layout.clone(),
            order,
            coeffs: (0..len).map(|i| f(self.coeffs[i], other.coeffs[i])).collect(),
        }
    }

    fn product(&self, other: &Jet) -> Jet {
        debug_assert!(Arc::ptr_eq(&self.layout, &other.layout));
        let order = self.order.min(other.order);
        let mut coeffs = vec![0.0; self.layout.len(order)];
        for &(a, b, c) in &self.layout.products[..self.layout.products_upto[order]] {
            coeffs[c as usize] += self.coeffs[a as usize] * other.coeffs[b as usize];
        }
        Jet {
            layout: self.layout.clone(),
            order,
            coeffs,
        }
    }

    /// `Σ_k series[k] (f − f₀)^k`, given the Taylor coefficients of the outer
    /// function at `f₀`.
    fn compose(&self, series: &[f64]) -> Jet {
        let mut shifted = self.clone();
        shifted.coeffs[0] = 0.0;
        let mut r = Jet::constant(&self.layout, self.order, series[self.order]);
        for k in (0..self.order).rev() {
            r = r.product(&shifted);
            r.coeffs[0] += series[k];
        }
        r
    }

    fn series(&self, f: impl Fn(usize) -> f64) -> Vec<f64> {
        (0..=self.order).map(f).collect()
    }
}

impl Scalar for Jet {
    const SINGULAR_GUARD: f64 = 1e-12;

    fn lift(&self, c: f64) -> Self {
        Jet::constant(&self.layout, self.order, c)
    }
    fn value(&self) -> f64 {
        self.coeffs[0]
    }
    fn add(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a + b)
    }
    fn sub(&self, other: &Self) -> Self {
        self.zip(other, |a, b| a - b)
    }
    fn mul(&self, other: &Self) -> Self {
        self.product(other)
    }
    fn neg(&self) -> Self {
        self.scale(-1.0)
    }
    fn recip(&self) -> Self {
        let a = self.value();
        let s = self.series(|k| (if k % 2 == 0 { 1.0 } else { -1.0 }) / a.powi(k as i32 + 1));
        self.compose(&s)
    }
    fn sqrt(&self) -> Self {
        self.powf(0.5)
    }
    fn sin(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        let d = [s, c, -s, -c];
        let ser = self.series(|k| d[k % 4] / fact(k));
        self.compose(&ser)
    }
    fn cos(&self) -> Self {
        let (s, c) = self.value().sin_cos();
        let d = [c, -s, -c, s];
        let ser = self.series(|k| d[k % 4] / fact(k));
        self.compose(&ser)
    }
    fn exp(&self) -> Self {
        let e = self.value().exp();
        let ser = self.series(|k| e / fact(k));
        self.compose(&ser)
    }
    fn ln(&self) -> Self {
        let a = self.value();
        let ser = self.series(|k| {
            if k == 0 {
                a.ln()
            } else {
                let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
                sign / (k as f64 * a.powi(k as i32))
            }
        });
        self.compose(&ser)
    }
    fn powf(&self, r: f64) -> Self {
        let a = self.value();
        let ser = self.series(|k| {
            let mut binom = 1.0;
            for i in 0..k {
                binom *= (r - i as f64) / (i as f64 + 1.0);
            }
            binom * a.powf(r - k as f64)
        });
        self.compose(&ser)
    }
}

macro_rules! jet_binop {
    ($tr:ident, $m:ident, $f:expr) => {
        impl $tr<&Jet> for &Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                $f(self, rhs)
            }
        }
        impl $tr<Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: Jet) -> Jet {
                $f(&self, &rhs)
            }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, rhs: &Jet) -> Jet {
                $f(&self, rhs)
            }
        }
    };
}

jet_binop!(Add, add, |a: &Jet, b: &Jet| a.zip(b, |x, y| x + y));
jet_binop!(Sub, sub, |a: &Jet, b: &Jet| a.zip(b, |x, y| x - y));
jet_binop!(Mul, mul, |a: &Jet, b: &Jet| a.product(b));

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

/// A chart coordinate: `(kind, zero-based index)`.
pub type Var = (VarKind, usize);

/// `x1..xn, y1..yn`, the ordering used for full phase-space jets.
pub fn all_vars(n: usize) -> Vec<Var> {
    (0..n)
        .map(|i| (VarKind::X, i))
        .chain((0..n).map(|i| (VarKind::Y, i)))
        .collect()
}

/// Jet-valued assignment of `x` and `y`. Variable `active[k]` becomes jet
/// variable `k`; every other coordinate is a constant.
pub fn seed(x: &[f64], y: &[f64], active: &[Var], order: usize) -> Result<(Vec<Jet>, Vec<Jet>)> {
    if order > MAX_ORDER {
        return Err(Error::OrderExceeded {
            requested: order,
            order: MAX_ORDER,
        });
    }
    // An empty layout cannot carry a constant-only jet, so keep one slot.
    let lay = layout(active.len().max(1));
    let make = |kind: VarKind, vals: &[f64]| -> Vec<Jet> {
        vals.iter()
            .enumerate()
            .map(|(i, &v)| match active.iter().position(|&a| a == (kind, i)) {
                Some(k) => Jet::variable(&lay, order, k, v),
                None => Jet::constant(&lay, order, v),
            })
            .collect()
    };
    Ok((make(VarKind::X, x), make(VarKind::Y, y)))
}

/// Evaluate `ast` over a jet seed.
pub fn eval_jet(ast: &ExprAst, x: &[f64], y: &[f64], active: &[Var], order: usize) -> Result<Jet> {
    let (xj, yj) = seed(x, y, active, order)?;
    Ok(ast.eval(&xj, &yj)?)
}

/// Default base step by derivative order, before scaling by the coordinate.
const FD_STEPS: [f64; MAX_ORDER + 1] = [1e-3, 1e-3, 2e-3, 5e-3, 1e-2];

/// Central-difference weights `(offset in units of h, weight · h^k)` for a
/// second-order accurate k-th derivative.
fn stencil(k: u8) -> &'static [(f64, f64)] {
    match k {
        0 => &[(0.0, 1.0)],
        1 => &[(-1.0, -0.5), (1.0, 0.5)],
        2 => &[(-1.0, 1.0), (0.0, -2.0), (1.0, 1.0)],
        3 => &[(-2.0, -0.5), (-1.0, 1.0), (1.0, -1.0), (2.0, 0.5)],
        _ => &[(-2.0, 1.0), (-1.0, -4.0), (0.0, 6.0), (1.0, -4.0), (2.0, 1.0)],
    }
}

/// Finite-difference estimate of `∂^α f` with `α` indexed over
/// `x1..xn, y1..yn`. Tensor-product central stencils at steps `h` and `h/2`
/// are combined by Richardson extrapolation. Each coordinate's step is
/// `h · max(1, |coordinate|)`; without `h` a per-order default is used.
pub fn fd_partial(
    ast: &ExprAst,
    x: &[f64],
    y: &[f64],
    alpha: &[u8],
    h: Option<f64>,
) -> Result<f64, ExprError> {
    let n = x.len();
    assert_eq!(alpha.len(), 2 * n, "multi-index must cover x and y");
    let total: usize = alpha.iter().map(|&a| a as usize).sum();
    assert!(total <= MAX_ORDER, "fd_partial supports |alpha| <= 4");
    let base = h.unwrap_or(FD_STEPS[total]);
    let point: Vec<f64> = x.iter().chain(y).copied().collect();
    let steps: Vec<f64> = point.iter().map(|c| base * c.abs().max(1.0)).collect();
    let coarse = fd_stencil(ast, &point, alpha, &steps, 1.0)?;
    let fine = fd_stencil(ast, &point, alpha, &steps, 0.5)?;
    Ok((4.0 * fine - coarse) / 3.0)
}

fn fd_stencil(
    ast: &ExprAst,
    point: &[f64],
    alpha: &[u8],
    steps: &[f64],
    factor: f64,
) -> Result<f64, ExprError> {
    let n = point.len() / 2;
    let active: Vec<usize> = (0..point.len()).filter(|&i| alpha[i] > 0).collect();
    let mut sum = 0.0;
    let mut idx = vec![0usize; active.len()];
    let mut p = point.to_vec();
    loop {
        let mut w = 1.0;
        for (slot, &var) in active.iter().enumerate() {
            let (off, wt) = stencil(alpha[var])[idx[slot]];
            let h = steps[var] * factor;
            p[var] = point[var] + off * h;
            w *= wt / h.powi(alpha[var] as i32);
        }
        sum += w * ast.eval(&p[..n], &p[n..])?;
        // Odometer over the stencil product.
        let mut k = 0;
        loop {
            if k == active.len() {
                return Ok(sum);
            }
            idx[k] += 1;
            if idx[k] < stencil(alpha[active[k]]).len() {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval_scalar, parse};

    fn binom(n: usize, k: usize) -> usize {
        (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
    }

    #[test]
    fn table_sizes() {
        for m in 1..=8 {
            let lay = layout(m);
            for d in 0..=MAX_ORDER {
                assert_eq!(lay.len(d), binom(m + d, d));
            }
        }
        assert_eq!(layout(8).len(4), 495);
    }

    #[test]
    fn square_at_two() {
        let ast = parse("y1^2", 1).unwrap();
        let j = eval_jet(&ast, &[0.0], &[2.0], &[(VarKind::Y, 0)], 2).unwrap();
        assert_eq!(j.coeffs(), &[4.0, 4.0, 1.0]);
    }

    #[test]
    fn no_active_variables_gives_value() {
        let ast = parse("sin(x1)*y1 + exp(y2)", 2).unwrap();
        let j = eval_jet(&ast, &[0.3, 0.1], &[0.5, -0.2], &[], 0).unwrap();
        let s = eval_scalar(&ast, &[0.3, 0.1], &[0.5, -0.2]).unwrap();
        assert_eq!(j.value(), s);
    }

    #[test]
    fn mixed_quartic_monomial() {
        let ast = parse("y1^2*y2^2", 2).unwrap();
        let act = [(VarKind::Y, 0), (VarKind::Y, 1)];
        let j = eval_jet(&ast, &[0.0, 0.0], &[0.0, 0.0], &act, 4).unwrap();
        let lay = j.layout().clone();
        for (i, c) in j.coeffs().iter().enumerate() {
            let expect = if lay.exponent(i) == [2, 2] { 1.0 } else { 0.0 };
            assert_eq!(*c, expect);
        }
    }

    #[test]
    fn partial_extraction() {
        let ast = parse("y1^2+y2^2", 2).unwrap();
        let act = [(VarKind::Y, 0), (VarKind::Y, 1)];
        let j = eval_jet(&ast, &[0.0, 0.0], &[1.0, 3.0], &act, 2).unwrap();
        assert_eq!(j.partial(&[2, 0]).unwrap(), 2.0);
        assert_eq!(j.partial(&[0, 0]).unwrap(), 10.0);
        let j4 = eval_jet(&ast, &[0.0, 0.0], &[1.0, 3.0], &act, 4).unwrap();
        assert!(matches!(
            j4.partial(&[5, 0]),
            Err(Error::OrderExceeded { requested: 5, order: 4 })
        ));
    }

    #[test]
    fn derivative_lowers_order() {
        let ast = parse("x1^3*y1", 1).unwrap();
        let act = all_vars(1);
        let j = eval_jet(&ast, &[2.0], &[3.0], &act, 3).unwrap();
        let dx = j.derivative(0);
        assert_eq!(dx.order(), 2);
        // d/dx = 3 x^2 y; its x-derivative is 6 x y = 36.
        assert!((dx.partial(&[1, 0]).unwrap() - 36.0).abs() < 1e-12);
        assert!((dx.value() - 36.0).abs() < 1e-12);
    }

    #[test]
    fn fd_examples() {
        let ast = parse("y1^3", 1).unwrap();
        let d = fd_partial(&ast, &[0.0], &[0.7], &[0, 3], Some(1e-2)).unwrap();
        assert!((d - 6.0).abs() < 1e-6);
        let ast = parse("sin(x1)*y1", 1).unwrap();
        let d = fd_partial(&ast, &[0.4], &[1.3], &[1, 1], None).unwrap();
        assert!((d - 0.4f64.cos()).abs() < 1e-7);
    }

    #[test]
    fn fd_matches_jets_on_euclidean_norm() {
        let ast = parse("sqrt(y1^2+y2^2)", 2).unwrap();
        let act = all_vars(2);
        let j = eval_jet(&ast, &[0.0, 0.0], &[1.0, 1.0], &act, 3).unwrap();
        let lay = j.layout().clone();
        for i in 0..lay.len(3) {
            let alpha = lay.exponent(i).to_vec();
            let fd = fd_partial(&ast, &[0.0, 0.0], &[1.0, 1.0], &alpha, None).unwrap();
            assert!((fd - j.partial(&alpha).unwrap()).abs() < 1e-5, "{alpha:?}");
        }
    }

    #[test]
    fn fd_reports_domain_errors() {
        let ast = parse("log(y1)", 1).unwrap();
        assert!(fd_partial(&ast, &[0.0], &[1e-4], &[0, 2], Some(1e-2)).is_err());
    }
}
