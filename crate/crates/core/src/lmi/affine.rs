//! Matrix-valued affine expressions C + sum_i x_i A_i over a registry of
//! structured matrix variables.

use nalgebra::{DMatrix, DVector};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarKind {
    Symmetric,
    Full,
    Diagonal,
    Scalar,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub len: usize,
}

/// Registry of matrix variables flattened into one decision vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VarSpace {
    pub blocks: Vec<VarBlock>,
    pub n: usize,
}

/// Handle to a registered block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarId(pub usize);

impl VarSpace {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, kind: VarKind, rows: usize, cols: usize, len: usize) -> VarId {
        self.blocks.push(VarBlock { name: name.to_string(), kind, rows, cols, offset: self.n, len });
        self.n += len;
        VarId(self.blocks.len() - 1)
    }

    pub fn sym(&mut self, name: &str, n: usize) -> VarId {
        self.push(name, VarKind::Symmetric, n, n, n * (n + 1) / 2)
    }

    pub fn full(&mut self, name: &str, rows: usize, cols: usize) -> VarId {
        self.push(name, VarKind::Full, rows, cols, rows * cols)
    }

    pub fn diag(&mut self, name: &str, n: usize) -> VarId {
        self.push(name, VarKind::Diagonal, n, n, n)
    }

    pub fn scalar(&mut self, name: &str) -> VarId {
        self.push(name, VarKind::Scalar, 1, 1, 1)
    }

    pub fn block(&self, id: VarId) -> &VarBlock {
        &self.blocks[id.0]
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.blocks.iter().position(|b| b.name == name).map(VarId)
    }

    /// The variable block as an affine expression.
    pub fn expr(&self, id: VarId) -> Affine {
        let b = &self.blocks[id.0];
        let mut terms = BTreeMap::new();
        let mut k = b.offset;
        match b.kind {
            VarKind::Symmetric => {
                for j in 0..b.cols {
                    for i in 0..=j {
                        let mut a = DMatrix::zeros(b.rows, b.cols);
                        a[(i, j)] = 1.0;
                        a[(j, i)] = 1.0;
                        terms.insert(k, a);
                        k += 1;
                    }
                }
            }
            VarKind::Full => {
                for i in 0..b.rows {
                    for j in 0..b.cols {
                        let mut a = DMatrix::zeros(b.rows, b.cols);
                        a[(i, j)] = 1.0;
                        terms.insert(k, a);
                        k += 1;
                    }
                }
            }
            VarKind::Diagonal => {
                for i in 0..b.rows {
                    let mut a = DMatrix::zeros(b.rows, b.cols);
                    a[(i, i)] = 1.0;
                    terms.insert(k, a);
                    k += 1;
                }
            }
            VarKind::Scalar => {
                terms.insert(k, DMatrix::from_element(1, 1, 1.0));
            }
        }
        Affine { constant: DMatrix::zeros(b.rows, b.cols), terms }
    }

    /// Value of a block at the decision vector x.
    pub fn value_of(&self, id: VarId, x: &DVector<f64>) -> DMatrix<f64> {
        self.expr(id).eval(x)
    }

    /// Decision-vector entries that reproduce the given block value
    /// (symmetric part for symmetric blocks, diagonal for diagonal blocks).
    pub fn set_value(&self, id: VarId, value: &DMatrix<f64>, x: &mut DVector<f64>) {
        let b = &self.blocks[id.0];
        let mut k = b.offset;
        match b.kind {
            VarKind::Symmetric => {
                for j in 0..b.cols {
                    for i in 0..=j {
                        x[k] = 0.5 * (value[(i, j)] + value[(j, i)]);
                        k += 1;
                    }
                }
            }
            VarKind::Full => {
                for i in 0..b.rows {
                    for j in 0..b.cols {
                        x[k] = value[(i, j)];
                        k += 1;
                    }
                }
            }
            VarKind::Diagonal => {
                for i in 0..b.rows {
                    x[k] = value[(i, i)];
                    k += 1;
                }
            }
            VarKind::Scalar => x[k] = value[(0, 0)],
        }
    }
}

/// C + sum_k x_k A_k with dense coefficients; small blocks only.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub constant: DMatrix<f64>,
    pub terms: BTreeMap<usize, DMatrix<f64>>,
}

impl Affine {
    pub fn constant(c: DMatrix<f64>) -> Self {
        Affine { constant: c, terms: BTreeMap::new() }
    }

    pub fn zeros(r: usize, c: usize) -> Self {
        Self::constant(DMatrix::zeros(r, c))
    }

    pub fn identity(n: usize, s: f64) -> Self {
        Self::constant(DMatrix::identity(n, n) * s)
    }

    pub fn nrows(&self) -> usize {
        self.constant.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.constant.ncols()
    }

    pub fn is_constant(&self) -> bool {
        self.terms.values().all(|a| a.iter().all(|v| *v == 0.0))
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, a) in &self.terms {
            if x[*k] != 0.0 {
                m += a * x[*k];
            }
        }
        m
    }

    fn map(&self, f: impl Fn(&DMatrix<f64>) -> DMatrix<f64>) -> Affine {
        Affine { constant: f(&self.constant), terms: self.terms.iter().map(|(k, a)| (*k, f(a))).collect() }
    }

    pub fn add(&self, o: &Affine) -> Affine {
        assert_eq!((self.nrows(), self.ncols()), (o.nrows(), o.ncols()), "affine add shape");
        let mut out = self.clone();
        out.constant += &o.constant;
        for (k, a) in &o.terms {
            out.terms.entry(*k).and_modify(|b| *b += a).or_insert_with(|| a.clone());
        }
        out
    }

    pub fn sub(&self, o: &Affine) -> Affine {
        self.add(&o.scale(-1.0))
    }

    pub fn add_const(&self, c: &DMatrix<f64>) -> Affine {
        let mut out = self.clone();
        out.constant += c;
        out
    }

    pub fn scale(&self, s: f64) -> Affine {
        self.map(|a| a * s)
    }

    pub fn t(&self) -> Affine {
        self.map(|a| a.transpose())
    }

    /// self * m
    pub fn mul(&self, m: &DMatrix<f64>) -> Affine {
        self.map(|a| a * m)
    }

    /// m * self
    pub fn lmul(&self, m: &DMatrix<f64>) -> Affine {
        self.map(|a| m * a)
    }

    /// Sub-block of the expression.
    pub fn view(&self, r: usize, c: usize, nr: usize, nc: usize) -> Affine {
        self.map(|a| a.view((r, c), (nr, nc)).into_owned())
    }

    /// self + self^T
    pub fn he(&self) -> Affine {
        self.add(&self.t())
    }
}

/// A symmetric affine matrix stored as sparse triplets per variable, with
/// both triangles present.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLmi {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    /// (variable, entries (row, col, value))
    pub terms: Vec<(usize, Vec<(usize, usize, f64)>)>,
}

impl SparseLmi {
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (k, e) in &self.terms {
            let v = x[*k];
            if v != 0.0 {
                for &(r, c, a) in e {
                    m[(r, c)] += a * v;
                }
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> SparseLmi {
        SparseLmi {
            dim: self.dim,
            constant: &self.constant * s,
            terms: self.terms.iter().map(|(k, e)| (*k, e.iter().map(|&(r, c, v)| (r, c, v * s)).collect())).collect(),
        }
    }

    pub fn shift(&self, s: f64) -> SparseLmi {
        let mut out = self.clone();
        for i in 0..self.dim {
            out.constant[(i, i)] += s;
        }
        out
    }

    pub fn max_asymmetry(&self) -> f64 {
        let c = &self.constant;
        let mut worst = (c - c.transpose()).amax();
        for (_, e) in &self.terms {
            let mut map = BTreeMap::new();
            for &(r, c, v) in e {
                *map.entry((r, c)).or_insert(0.0) += v;
            }
            for (&(r, c), v) in &map {
                let w = map.get(&(c, r)).copied().unwrap_or(0.0);
                worst = worst.max((v - w).abs());
            }
        }
        worst
    }
}

/// Symmetric block matrix assembled from upper-triangle blocks.
#[derive(Debug, Clone)]
pub struct BlockSym {
    pub sizes: Vec<usize>,
    pub names: Vec<String>,
    blocks: BTreeMap<(usize, usize), Affine>,
}

impl BlockSym {
    pub fn new(sizes: Vec<usize>, names: Vec<String>) -> Self {
        assert_eq!(sizes.len(), names.len());
        BlockSym { sizes, names, blocks: BTreeMap::new() }
    }

    /// One unnamed block.
    pub fn single(a: Affine) -> Self {
        let n = a.nrows();
        let mut b = BlockSym::new(vec![n], vec!["x".into()]);
        b.set(0, 0, a);
        b
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn offset(&self, i: usize) -> usize {
        self.sizes[..i].iter().sum()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Sets block (i, j), i <= j. Empty blocks are zero.
    pub fn set(&mut self, i: usize, j: usize, a: Affine) {
        assert!(i <= j, "set upper blocks only");
        assert_eq!((a.nrows(), a.ncols()), (self.sizes[i], self.sizes[j]), "block ({i},{j}) shape");
        self.blocks.insert((i, j), a);
    }

    /// Adds to block (i, j), i <= j.
    pub fn add(&mut self, i: usize, j: usize, a: Affine) {
        let cur = self.blocks.remove(&(i, j));
        let next = match cur {
            Some(c) => c.add(&a),
            None => a,
        };
        self.set(i, j, next);
    }

    pub fn get(&self, i: usize, j: usize) -> Option<&Affine> {
        self.blocks.get(&(i, j))
    }

    pub fn to_sparse(&self) -> SparseLmi {
        let n = self.dim();
        let mut constant = DMatrix::zeros(n, n);
        let mut terms: BTreeMap<usize, Vec<(usize, usize, f64)>> = BTreeMap::new();
        for (&(bi, bj), a) in &self.blocks {
            let (oi, oj) = (self.offset(bi), self.offset(bj));
            let diag = bi == bj;
            for r in 0..a.nrows() {
                for c in 0..a.ncols() {
                    let v = if diag { 0.5 * (a.constant[(r, c)] + a.constant[(c, r)]) } else { a.constant[(r, c)] };
                    constant[(oi + r, oj + c)] = v;
                    constant[(oj + c, oi + r)] = v;
                }
            }
            for (k, m) in &a.terms {
                let e = terms.entry(*k).or_default();
                for r in 0..m.nrows() {
                    for c in 0..m.ncols() {
                        let v = if diag { 0.5 * (m[(r, c)] + m[(c, r)]) } else { m[(r, c)] };
                        if v == 0.0 || (diag && c < r) {
                            continue;
                        }
                        e.push((oi + r, oj + c, v));
                        if !(diag && r == c) {
                            e.push((oj + c, oi + r, v));
                        }
                    }
                }
            }
        }
        terms.retain(|_, e| !e.is_empty());
        SparseLmi { dim: n, constant, terms: terms.into_iter().collect() }
    }

    /// Dense value at x.
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        self.to_sparse().eval(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variable_roundtrip() {
        let mut vs = VarSpace::new();
        let p = vs.sym("P", 3);
        let n = vs.full("N", 2, 3);
        let l = vs.diag("L", 4);
        let s = vs.scalar("s");
        assert_eq!(vs.n, 6 + 6 + 4 + 1);
        let mut x = DVector::zeros(vs.n);
        let pv = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 4.0]);
        let nv = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        vs.set_value(p, &pv, &mut x);
        vs.set_value(n, &nv, &mut x);
        vs.set_value(l, &DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0])), &mut x);
        vs.set_value(s, &DMatrix::from_element(1, 1, 7.0), &mut x);
        assert_eq!(vs.value_of(p, &x), pv);
        assert_eq!(vs.value_of(n, &x), nv);
        assert_eq!(vs.value_of(l, &x)[(3, 3)], 4.0);
        assert_eq!(vs.value_of(s, &x)[(0, 0)], 7.0);
        assert_eq!(vs.find("N"), Some(n));
    }

    #[test]
    fn block_assembly_is_symmetric() {
        let mut vs = VarSpace::new();
        let p = vs.sym("P", 2);
        let n = vs.full("N", 2, 2);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -3.0, 0.5]);
        let mut b = BlockSym::new(vec![2, 2], vec!["x".into(), "y".into()]);
        b.set(0, 0, vs.expr(p).mul(&a).he());
        b.set(0, 1, vs.expr(n).add(&vs.expr(p)));
        b.set(1, 1, vs.expr(n).he().scale(-1.0));
        let sp = b.to_sparse();
        assert!(sp.max_asymmetry() < 1e-15);
        let x = DVector::from_fn(vs.n, |i, _| i as f64 * 0.3 - 1.0);
        let m = sp.eval(&x);
        let pv = vs.value_of(p, &x);
        let nv = vs.value_of(n, &x);
        let top = &pv * &a + (&pv * &a).transpose();
        assert!((m.view((0, 0), (2, 2)) - top).amax() < 1e-14);
        assert!((m.view((0, 2), (2, 2)) - (&nv + &pv)).amax() < 1e-14);
        assert!((m.view((2, 0), (2, 2)) - (&nv + &pv).transpose()).amax() < 1e-14);
    }
}
