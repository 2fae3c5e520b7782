//! Localization operators, POV measures over node partitions and the
//! discretized Naimark extension.
//!
//! Everything lives on the nodes of a quadrature rule. `L^2(X, dnu)` becomes
//! the space of node samples with the weighted inner product, so in the
//! coordinates `sqrt(w_k) F(x_k)` it is plain `H^n` and every operator is a
//! finite matrix. Cells are node predicates and never split a node, which is
//! what makes the additivity statements exact.

use std::f64::consts::PI;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{CoefficientVector, Kernel};
use crate::measures::MeasureRule;
use crate::poly::Family;
use crate::qlinalg::QMatrix;
use crate::quaternion::Quaternion;

/// Above this node count the entrywise Naimark residual (quadratic in the
/// node count) is skipped; the operator norm bounds it anyway.
pub const MAX_ENTRY_NODES: usize = 4096;
const COND_LIMIT: f64 = 1e8;
const HERMITIAN_TOL: f64 = 1e-10;

/// Correctly rounded floating-point sum (Shewchuk's nonoverlapping partials).
/// The result depends only on the multiset of summands.
#[derive(Clone, Debug, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn merge(&mut self, other: &ExactSum) {
        for &p in &other.partials {
            self.add(p);
        }
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(&top) = p.last() else { return 0.0 };
        let mut n = p.len() - 1;
        let (mut hi, mut lo) = (top, 0.0);
        while n > 0 {
            let x = hi;
            let y = p[n - 1];
            n -= 1;
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // half-way case: the remaining partials decide the rounding direction
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = 2.0 * lo;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

/// Coordinates a cell predicate can test. For planar rules the axis is `i`
/// (`theta1 = pi/2`, `phi = 0`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NodeCoords {
    pub r: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub phi: f64,
    pub x: f64,
    pub y: f64,
}

pub fn node_coords(rule: &MeasureRule, k: usize) -> NodeCoords {
    let (p, (theta1, phi)) = if rule.angular.is_empty() {
        (rule.planar[k], (PI / 2.0, 0.0))
    } else {
        let na = rule.angular.len();
        let a = rule.angular[k % na];
        (rule.planar[k / na], (a.theta1, a.phi))
    };
    NodeCoords { r: p.x.hypot(p.y), theta1, theta2: p.y.atan2(p.x).rem_euclid(2.0 * PI), phi, x: p.x, y: p.y }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Var {
    R,
    Theta1,
    Theta2,
    Phi,
    X,
    Y,
}

impl Var {
    fn parse(s: &str) -> Option<Var> {
        Some(match s {
            "r" => Var::R,
            "theta1" | "θ1" => Var::Theta1,
            "theta2" | "θ2" => Var::Theta2,
            "phi" | "φ" => Var::Phi,
            "x" => Var::X,
            "y" => Var::Y,
            _ => return None,
        })
    }

    fn of(self, c: &NodeCoords) -> f64 {
        match self {
            Var::R => c.r,
            Var::Theta1 => c.theta1,
            Var::Theta2 => c.theta2,
            Var::Phi => c.phi,
            Var::X => c.x,
            Var::Y => c.y,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Var::R => "r",
            Var::Theta1 => "theta1",
            Var::Theta2 => "theta2",
            Var::Phi => "phi",
            Var::X => "x",
            Var::Y => "y",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CmpOp {
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub var: Var,
    pub op: CmpOp,
    pub value: f64,
}

impl Comparison {
    fn holds(&self, c: &NodeCoords) -> bool {
        let v = self.var.of(c);
        match self.op {
            CmpOp::Lt => v < self.value,
            CmpOp::Le => v <= self.value,
            CmpOp::Gt => v > self.value,
            CmpOp::Ge => v >= self.value,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predicate {
    True,
    Cmp(Comparison),
    /// Explicit node indices; not expressible in the text format.
    Nodes(Vec<usize>),
    And(Vec<Predicate>),
}

impl Predicate {
    fn holds(&self, k: usize, c: &NodeCoords) -> bool {
        match self {
            Predicate::True => true,
            Predicate::Cmp(cmp) => cmp.holds(c),
            Predicate::Nodes(ks) => ks.binary_search(&k).is_ok(),
            Predicate::And(ps) => ps.iter().all(|p| p.holds(k, c)),
        }
    }

    fn and(self, other: Predicate) -> Predicate {
        match (self, other) {
            (Predicate::True, p) | (p, Predicate::True) => p,
            (Predicate::And(mut a), Predicate::And(b)) => {
                a.extend(b);
                Predicate::And(a)
            }
            (Predicate::And(mut a), p) => {
                a.push(p);
                Predicate::And(a)
            }
            (p, Predicate::And(mut b)) => {
                b.insert(0, p);
                Predicate::And(b)
            }
            (p, q) => Predicate::And(vec![p, q]),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::True => write!(f, "true"),
            Predicate::Cmp(c) => write!(f, "{} {} {}", c.var.name(), c.op.symbol(), c.value),
            Predicate::Nodes(ks) => write!(f, "nodes{ks:?}"),
            Predicate::And(ps) => {
                for (i, p) in ps.iter().enumerate() {
                    if i > 0 {
                        write!(f, " & ")?;
                    }
                    write!(f, "{p}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub name: String,
    pub descriptor: String,
    pub predicate: Predicate,
}

impl Cell {
    pub fn new(name: impl Into<String>, predicate: Predicate) -> Self {
        Cell { name: name.into(), descriptor: predicate.to_string(), predicate }
    }
}

/// Finite family of disjoint cells. `covers_domain` is a claim that is checked
/// against the nodes whenever the partition is assigned to a rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub cells: Vec<Cell>,
    pub covers_domain: bool,
}

/// Node-to-cell map of a partition on a particular rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    pub cell_of: Vec<Option<usize>>,
    pub members: Vec<Vec<usize>>,
    pub covers: bool,
}

fn parse_value(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let (a, b) = s.split_once("pi")?;
    let a = a.trim().trim_end_matches('*').trim();
    let coef = match a {
        "" => 1.0,
        "-" => -1.0,
        _ => a.parse().ok()?,
    };
    let b = b.trim();
    let div = if b.is_empty() { 1.0 } else { b.strip_prefix('/')?.trim().parse().ok()? };
    Some(coef * PI / div)
}

fn parse_comparison(s: &str) -> std::result::Result<Comparison, String> {
    // two-character operators first
    for (sym, op) in [("<=", CmpOp::Le), (">=", CmpOp::Ge), ("<", CmpOp::Lt), (">", CmpOp::Gt)] {
        if let Some((l, r)) = s.split_once(sym) {
            let var = Var::parse(l.trim()).ok_or_else(|| format!("unknown variable '{}'", l.trim()))?;
            let value = parse_value(r).ok_or_else(|| format!("bad number '{}'", r.trim()))?;
            return Ok(Comparison { var, op, value });
        }
    }
    Err(format!("expected a comparison, got '{s}'"))
}

impl Partition {
    pub fn new(cells: Vec<Cell>, covers_domain: bool) -> Self {
        Partition { cells, covers_domain }
    }

    /// The single cell `X`.
    pub fn whole() -> Self {
        Partition::new(vec![Cell::new("all", Predicate::True)], true)
    }

    /// `{r < r0}` and `{r >= r0}`.
    pub fn radial_split(r0: f64) -> Self {
        let c = |op, name: &str| Cell::new(name, Predicate::Cmp(Comparison { var: Var::R, op, value: r0 }));
        Partition::new(vec![c(CmpOp::Lt, "inner"), c(CmpOp::Ge, "outer")], true)
    }

    /// `{Re q > 0}` and its complement.
    pub fn half_spaces() -> Self {
        let c = |op, name: &str| Cell::new(name, Predicate::Cmp(Comparison { var: Var::X, op, value: 0.0 }));
        Partition::new(vec![c(CmpOp::Gt, "re_pos"), c(CmpOp::Le, "re_nonpos")], true)
    }

    /// One cell per node index `0..n`.
    pub fn singletons(n: usize) -> Self {
        Partition::new((0..n).map(|k| Cell::new(format!("node{k}"), Predicate::Nodes(vec![k]))).collect(), true)
    }

    /// Pairwise intersections, cells of `self` outermost.
    pub fn refine(&self, other: &Partition) -> Partition {
        let mut cells = Vec::with_capacity(self.cells.len() * other.cells.len());
        for a in &self.cells {
            for b in &other.cells {
                cells.push(Cell::new(format!("{}/{}", a.name, b.name), a.predicate.clone().and(b.predicate.clone())));
            }
        }
        Partition::new(cells, self.covers_domain && other.covers_domain)
    }

    /// Text format: one `name: predicate` per line, predicates being `true` or
    /// comparisons like `r < 1.5` or `theta2 >= pi/2` joined by `&`. Blank lines
    /// and `#` comments are ignored. The result claims no coverage.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::PartitionSyntax { line: i + 1, msg };
            let (name, pred) = line.split_once(':').ok_or_else(|| err("missing ':'".into()))?;
            let name = name.trim();
            if name.is_empty() {
                return Err(err("empty cell name".into()));
            }
            let mut p = Predicate::True;
            if pred.trim() != "true" {
                for term in pred.split('&') {
                    p = p.and(Predicate::Cmp(parse_comparison(term.trim()).map_err(err)?));
                }
            }
            cells.push(Cell { name: name.to_string(), descriptor: pred.trim().to_string(), predicate: p });
        }
        if cells.is_empty() {
            return Err(Error::PartitionSyntax { line: 0, msg: "no cells".into() });
        }
        Ok(Partition::new(cells, false))
    }

    pub fn to_text(&self) -> String {
        self.cells.iter().map(|c| format!("{}: {}\n", c.name, c.predicate)).collect()
    }

    pub fn assign(&self, rule: &MeasureRule) -> Result<Assignment> {
        let n = rule.node_count();
        let mut cell_of = vec![None; n];
        let mut members = vec![Vec::new(); self.cells.len()];
        for (k, slot) in cell_of.iter_mut().enumerate() {
            let c = node_coords(rule, k);
            for (ci, cell) in self.cells.iter().enumerate() {
                if cell.predicate.holds(k, &c) {
                    if slot.is_some() {
                        return Err(Error::OverlappingCells { node: k });
                    }
                    *slot = Some(ci);
                    members[ci].push(k);
                }
            }
        }
        let covers = cell_of.iter().all(Option::is_some);
        if self.covers_domain && !covers {
            let k = cell_of.iter().position(Option::is_none).unwrap_or(0);
            return Err(Error::BadParams(format!("partition claims to cover the domain but misses node {k}")));
        }
        Ok(Assignment { cell_of, members, covers })
    }
}

/// Radius splitting the rule's mass in two halves, placed halfway between the
/// two nodes where the cumulative weight crosses one half.
pub fn median_radius(rule: &MeasureRule) -> Result<f64> {
    if rule.planar.is_empty() {
        return Err(Error::EmptyRule);
    }
    let mut pts: Vec<(f64, f64)> = rule.planar.iter().map(|p| (p.x.hypot(p.y), p.w)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pts.iter().map(|p| p.1).sum();
    let mut acc = 0.0;
    for (i, &(r, w)) in pts.iter().enumerate() {
        acc += w;
        if acc >= 0.5 * total {
            let next = pts.get(i + 1).map_or(r, |p| p.0);
            return Ok(0.5 * (r + next));
        }
    }
    Ok(pts[pts.len() - 1].0)
}

/// `F(x)_ij = sum_a conj(f_i(x)_a) f_j(x)_a`: the rank-`dim` positive
/// operator with `<phi | F(x) psi> = conj(phi(x)) psi(x)`.
pub fn family_localization(fam: &dyn Family, x: Quaternion) -> Result<QMatrix> {
    let n = fam.len();
    let d = fam.target_dim();
    let v = fam.values(x)?;
    let mut m = QMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let s: Quaternion = (0..d).map(|a| v[i * d + a].conj() * v[j * d + a]).sum();
            m[(i, j)] = s;
            m[(j, i)] = s.conj();
        }
    }
    Ok(m)
}

pub fn localization_operator(ker: &Kernel, x: Quaternion) -> Result<QMatrix> {
    family_localization(&ker.family, x)
}

fn check_rule(rule: &MeasureRule) -> Result<()> {
    if rule.node_count() == 0 {
        return Err(Error::EmptyRule);
    }
    if rule.lifts() {
        return Err(Error::BadParams("node-level operators need a rule with genuine quaternionic nodes".into()));
    }
    Ok(())
}

/// Basis values at every node, node-major.
fn node_values(fam: &dyn Family, rule: &MeasureRule) -> Result<Vec<Vec<Quaternion>>> {
    (0..rule.node_count()).into_par_iter().map(|k| fam.values(rule.node(k).0)).collect()
}

/// Exactly summed POV matrices `a(Delta) = sum_{k in Delta} w_k F(x_k)`, one
/// accumulator per real component of the upper triangle.
pub struct PovAssembly {
    dim: usize,
    cells: Vec<Vec<ExactSum>>,
}

impl PovAssembly {
    pub fn build(ker: &Kernel, rule: &MeasureRule, part: &Partition) -> Result<Self> {
        check_rule(rule)?;
        let asg = part.assign(rule)?;
        let vals = node_values(&ker.family, rule)?;
        let n = ker.family.len();
        let ntri = n * (n + 1) / 2;
        let cells = asg
            .members
            .par_iter()
            .map(|ks| {
                let mut acc = vec![ExactSum::new(); 4 * ntri];
                for &k in ks {
                    let w = rule.node(k).1;
                    let f = &vals[k];
                    let mut t = 0;
                    for i in 0..n {
                        for j in i..n {
                            let e = f[i].conj() * f[j] * w;
                            for (c, x) in [e.x0, e.x1, e.x2, e.x3].into_iter().enumerate() {
                                acc[4 * t + c].add(x);
                            }
                            t += 1;
                        }
                    }
                }
                acc
            })
            .collect();
        Ok(PovAssembly { dim: n, cells })
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn matrix(&self, acc: &[ExactSum]) -> QMatrix {
        let n = self.dim;
        let mut m = QMatrix::zeros(n, n);
        let mut t = 0;
        for i in 0..n {
            for j in i..n {
                let v = |c: usize| acc[4 * t + c].value();
                let e = if i == j { Quaternion::real(v(0)) } else { Quaternion::new(v(0), v(1), v(2), v(3)) };
                m[(i, j)] = e;
                m[(j, i)] = e.conj();
                t += 1;
            }
        }
        m
    }

    pub fn cell(&self, i: usize) -> QMatrix {
        self.matrix(&self.cells[i])
    }

    /// `a` of the union of the given cells, summed exactly (bit-identical to
    /// assembling the union as one cell).
    pub fn union(&self, idx: &[usize]) -> QMatrix {
        let mut acc = vec![ExactSum::new(); self.cells.first().map_or(0, Vec::len)];
        for &i in idx {
            for (a, b) in acc.iter_mut().zip(&self.cells[i]) {
                a.merge(b);
            }
        }
        self.matrix(&acc)
    }

    pub fn matrices(&self) -> Vec<QMatrix> {
        (0..self.len()).map(|i| self.cell(i)).collect()
    }
}

pub fn pov_measure(ker: &Kernel, rule: &MeasureRule, part: &Partition) -> Result<Vec<QMatrix>> {
    Ok(PovAssembly::build(ker, rule, part)?.matrices())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    /// Max over parent cells of `|mu_phi(C) - sum_children mu_phi(D)|`, exact sums.
    pub additivity_defect: f64,
    /// Max entry of `a(C) - union of children`, exact sums.
    pub operator_defect: f64,
    /// Smallest `mu_phi(Delta)` seen.
    pub min_measure: f64,
    /// Cumulative sums of `mu_phi` over each partition's cells never decrease.
    pub monotone: bool,
    /// Every `a(Delta)` passes the positivity test at 1e-9.
    pub positive: bool,
    /// `max |<phi|a(Delta) phi> - sum_{k in Delta} w_k |phi(x_k)|^2|`.
    pub density_defect: f64,
    /// `max |mu_phi(X) - ||phi||^2|`; only meaningful for covering partitions.
    pub total_defect: f64,
    /// `max |a(X) - I|` from the coarsest partition.
    pub normalization_defect: f64,
    /// `a(empty) = 0` exactly.
    pub empty_is_zero: bool,
}

fn quad_form(a: &QMatrix, c: &[Quaternion]) -> f64 {
    let n = c.len();
    let mut s = Quaternion::ZERO;
    for i in 0..n {
        for j in 0..n {
            s += c[i].conj() * a[(i, j)] * c[j];
        }
    }
    s.x0
}

/// Weak sigma-additivity on a refining sequence of partitions, tested with
/// `n_phi` random unit coefficient vectors. Regularity of the measure holds by
/// construction at node level and is not reported separately.
pub fn sigma_additivity_check(
    ker: &Kernel,
    rule: &MeasureRule,
    nested: &[Partition],
    n_phi: usize,
    seed: u64,
) -> Result<SigmaReport> {
    check_rule(rule)?;
    if nested.is_empty() {
        return Err(Error::BadParams("need at least one partition".into()));
    }
    let n = ker.family.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phis: Vec<Vec<Quaternion>> = (0..n_phi)
        .map(|_| {
            let c: Vec<Quaternion> = (0..n)
                .map(|_| Quaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            CoefficientVector::new(c.clone()).scale_right(Quaternion::real(1.0 / CoefficientVector::new(c).norm())).coeffs.0
        })
        .collect();
    let vals = node_values(&ker.family, rule)?;
    // per node: w_k |phi(x_k)|^2 for every phi
    let dens: Vec<Vec<f64>> = (0..rule.node_count())
        .map(|k| {
            let w = rule.node(k).1;
            phis.iter().map(|c| w * vals[k].iter().zip(c).map(|(f, a)| *f * *a).sum::<Quaternion>().norm2()).collect()
        })
        .collect();

    let mut rep = SigmaReport {
        additivity_defect: 0.0,
        operator_defect: 0.0,
        min_measure: f64::INFINITY,
        monotone: true,
        positive: true,
        density_defect: 0.0,
        total_defect: 0.0,
        normalization_defect: 0.0,
        empty_is_zero: true,
    };
    let mut prev: Option<(Assignment, Vec<Vec<ExactSum>>, PovAssembly)> = None;
    for (level, part) in nested.iter().enumerate() {
        let asg = part.assign(rule)?;
        let pov = PovAssembly::build(ker, rule, part)?;
        let mus: Vec<Vec<ExactSum>> = asg
            .members
            .iter()
            .map(|ks| {
                let mut acc = vec![ExactSum::new(); n_phi];
                for &k in ks {
                    for (a, &d) in acc.iter_mut().zip(&dens[k]) {
                        a.add(d);
                    }
                }
                acc
            })
            .collect();
        let mut total = vec![ExactSum::new(); n_phi];
        for (ci, mu) in mus.iter().enumerate() {
            let a = pov.cell(ci);
            rep.positive &= a.is_positive(1e-9)?;
            if asg.members[ci].is_empty() {
                rep.empty_is_zero &= a.max_abs() == 0.0;
            }
            for (p, m) in mu.iter().enumerate() {
                let v = m.value();
                rep.min_measure = rep.min_measure.min(v);
                rep.density_defect = rep.density_defect.max((quad_form(&a, &phis[p]) - v).abs());
            }
            for (t, m) in total.iter_mut().zip(mu) {
                let before = t.value();
                t.merge(m);
                rep.monotone &= t.value() >= before;
            }
        }
        if asg.covers {
            for t in &total {
                rep.total_defect = rep.total_defect.max((t.value() - 1.0).abs());
            }
        }
        if level == 0 && asg.covers {
            let all: Vec<usize> = (0..pov.len()).collect();
            rep.normalization_defect = (&pov.union(&all) - &QMatrix::identity(n)).max_abs();
        }
        if let Some((pasg, pmus, ppov)) = &prev {
            for (pc, pks) in pasg.members.iter().enumerate() {
                let children: Vec<usize> = (0..part.cells.len())
                    .filter(|&c| asg.members[c].first().is_some_and(|&k| pasg.cell_of[k] == Some(pc)))
                    .collect();
                let mut covered = 0;
                for &c in &children {
                    if asg.members[c].iter().any(|&k| pasg.cell_of[k] != Some(pc)) {
                        return Err(Error::BadParams(format!("cell '{}' straddles coarser cells", part.cells[c].name)));
                    }
                    covered += asg.members[c].len();
                }
                if covered != pks.len() {
                    return Err(Error::BadParams(format!("cell '{}' is not exhausted by its refinement", nested[level - 1].cells[pc].name)));
                }
                for p in 0..n_phi {
                    let mut acc = ExactSum::new();
                    for &c in &children {
                        acc.merge(&mus[c][p]);
                    }
                    rep.additivity_defect = rep.additivity_defect.max((pmus[pc][p].value() - acc.value()).abs());
                }
                rep.operator_defect = rep.operator_defect.max((&ppov.cell(pc) - &pov.union(&children)).max_abs());
            }
        }
        prev = Some((asg, mus, pov));
    }
    Ok(rep)
}

/// The PV measure `P(Delta)`: multiplication by the node indicator.
#[derive(Clone, Debug, PartialEq)]
pub struct PvProjection {
    pub diag: Vec<f64>,
}

impl PvProjection {
    pub fn new(asg: &Assignment, cell: usize) -> Self {
        PvProjection { diag: asg.cell_of.iter().map(|c| if *c == Some(cell) { 1.0 } else { 0.0 }).collect() }
    }

    /// `P^2 = P`, checked entrywise without tolerance.
    pub fn is_idempotent(&self) -> bool {
        self.diag.iter().all(|&d| d * d == d)
    }

    /// `P = P^dagger`: a real diagonal.
    pub fn is_hermitian(&self) -> bool {
        self.diag.iter().all(|d| d.is_finite())
    }

    pub fn to_matrix(&self) -> QMatrix {
        let d: Vec<Quaternion> = self.diag.iter().map(|&x| Quaternion::real(x)).collect();
        QMatrix::diagonal(&d)
    }
}

/// Node-sampled `L^2(X, dnu)` in the orthonormal coordinates `sqrt(w_k) F(x_k)`.
#[derive(Clone, Debug)]
pub struct DiscreteL2 {
    pub nodes: Vec<Quaternion>,
    pub weights: Vec<f64>,
    /// `B_ki = sqrt(w_k) f_i(x_k)`.
    pub basis_matrix: QMatrix,
    /// `G = B^dagger B`, the quadrature Gram matrix of the sampled basis.
    pub gram: QMatrix,
    /// `U = B G^{-1/2}`; `P_K = U U^dagger`.
    pub frame: QMatrix,
    pub gram_cond: f64,
}

impl DiscreteL2 {
    pub fn new(ker: &Kernel, rule: &MeasureRule) -> Result<Self> {
        check_rule(rule)?;
        let fam = &ker.family;
        let n = fam.len();
        let (nodes, weights): (Vec<Quaternion>, Vec<f64>) = rule.nodes().into_iter().unzip();
        let mut data = Vec::with_capacity(nodes.len() * n);
        for (q, w) in nodes.iter().zip(&weights) {
            let s = w.sqrt();
            data.extend(fam.eval_all(*q)?.into_iter().map(|f| f * s));
        }
        let basis_matrix = QMatrix::from_rows(nodes.len(), n, data)?;
        let mut gram = basis_matrix.adjoint().matmul(&basis_matrix)?;
        symmetrize(&mut gram);
        let (g_isqrt, gram_cond) = gram.inverse_sqrt(HERMITIAN_TOL)?;
        if gram_cond > COND_LIMIT {
            return Err(Error::IllConditionedBasis { cond: gram_cond });
        }
        let frame = basis_matrix.matmul(&g_isqrt)?;
        Ok(DiscreteL2 { nodes, weights, basis_matrix, gram, frame, gram_cond })
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn dim(&self) -> usize {
        self.frame.cols()
    }

    /// `P_K` as a dense node-by-node matrix; only for small rules.
    pub fn projector(&self) -> Result<QMatrix> {
        if self.node_count() > MAX_ENTRY_NODES {
            return Err(Error::BudgetExceeded { nodes: self.node_count(), limit: MAX_ENTRY_NODES });
        }
        self.frame.matmul(&self.frame.adjoint())
    }

    /// `max(|U^dagger U - I|)`, which controls both `P_K^2 - P_K` and `P_K - P_K^dagger`.
    pub fn frame_defect(&self) -> Result<f64> {
        Ok((&self.frame.adjoint().matmul(&self.frame)? - &QMatrix::identity(self.dim())).max_abs())
    }

    /// `sum_{k in ks} row_k(M)^dagger row_k(M)`.
    fn restricted_gram(m: &QMatrix, ks: &[usize]) -> QMatrix {
        let n = m.cols();
        let mut g = QMatrix::zeros(n, n);
        for &k in ks {
            let r = m.row(k);
            for i in 0..n {
                for j in i..n {
                    g[(i, j)] += r[i].conj() * r[j];
                }
            }
        }
        for i in 0..n {
            g[(i, i)] = Quaternion::real(g[(i, i)].x0);
            for j in 0..i {
                g[(i, j)] = g[(j, i)].conj();
            }
        }
        g
    }
}

fn symmetrize(m: &mut QMatrix) {
    let n = m.rows();
    for i in 0..n {
        m[(i, i)] = Quaternion::real(m[(i, i)].x0);
        for j in 0..i {
            let s = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = s;
            m[(j, i)] = s.conj();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NaimarkReport {
    /// Max over cells of `||P_K P(Delta) P_K - a_K(Delta)||` in operator norm.
    pub residual: f64,
    pub per_cell: Vec<f64>,
    /// Same in the max-entry norm; `None` above `MAX_ENTRY_NODES` nodes.
    pub max_entry: Option<f64>,
    pub gram_cond: f64,
    pub frame_defect: f64,
    /// Every `P(Delta)` is idempotent and Hermitian without tolerance.
    pub pv_exact: bool,
    pub nodes: usize,
}

/// Compares the compression `P_K P(Delta) P_K` with the POV matrix `a(Delta)`
/// carried to node coordinates by the frame `U`. Both live on the range of
/// `U`, so the difference is `U (U^dagger P U - a) U^dagger` and its operator
/// norm is that of the small matrix in the middle.
pub fn naimark_residual(ker: &Kernel, rule: &MeasureRule, part: &Partition) -> Result<NaimarkReport> {
    let l2 = DiscreteL2::new(ker, rule)?;
    let asg = part.assign(rule)?;
    let mut pv_exact = true;
    let mids: Vec<QMatrix> = (0..part.cells.len())
        .map(|c| {
            let pv = PvProjection::new(&asg, c);
            pv_exact &= pv.is_idempotent() && pv.is_hermitian();
            let ks = &asg.members[c];
            &DiscreteL2::restricted_gram(&l2.frame, ks) - &DiscreteL2::restricted_gram(&l2.basis_matrix, ks)
        })
        .collect();
    let per_cell: Vec<f64> = mids.iter().map(|m| m.operator_norm(HERMITIAN_TOL)).collect::<Result<_>>()?;
    let max_entry = if l2.node_count() <= MAX_ENTRY_NODES {
        let mut worst = 0.0f64;
        for m in &mids {
            let v = l2.frame.matmul(m)?;
            let u = &l2.frame;
            let w = (0..l2.node_count())
                .into_par_iter()
                .map(|k| {
                    let vk = v.row(k);
                    (0..l2.node_count())
                        .map(|l| vk.iter().zip(u.row(l)).map(|(a, b)| *a * b.conj()).sum::<Quaternion>().norm())
                        .fold(0.0f64, f64::max)
                })
                .reduce(|| 0.0, f64::max);
            worst = worst.max(w);
        }
        Some(worst)
    } else {
        None
    };
    Ok(NaimarkReport {
        residual: per_cell.iter().copied().fold(0.0, f64::max),
        per_cell,
        max_entry,
        gram_cond: l2.gram_cond,
        frame_defect: l2.frame_defect()?,
        pv_exact,
        nodes: l2.node_count(),
    })
}

/// Naimark residuals at `levels` successive doublings of the planar orders.
/// The angular orders stay fixed: the integrands are affine in the axis and
/// the base angular rule is already exact for them.
pub fn naimark_refinement(ker: &Kernel, rule: &MeasureRule, part: &Partition, levels: usize) -> Result<Vec<NaimarkReport>> {
    let mut out = Vec::with_capacity(levels);
    let mut orders = rule.orders;
    for _ in 0..levels {
        let r = rule.with_orders(orders)?;
        out.push(naimark_residual(ker, &r, part)?);
        orders.radial *= 2;
        orders.theta2 *= 2;
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimalityWitness {
    /// The `min(rows, cols)`-th singular value of `[P(Delta) phi_i]`.
    pub sigma_min: f64,
    pub rank: usize,
    /// Dimension of the node space.
    pub node_dim: usize,
}

impl MinimalityWitness {
    /// Node-level spanning: the columns reach every node coordinate.
    pub fn spans(&self) -> bool {
        self.rank == self.node_dim
    }
}

/// Node-level stand-in for the density statement: how much of the discretized
/// `L^2` the vectors `P(Delta) phi_i` span.
pub fn minimality_witness(ker: &Kernel, rule: &MeasureRule, part: &Partition) -> Result<MinimalityWitness> {
    check_rule(rule)?;
    let asg = part.assign(rule)?;
    let fam = &ker.family;
    let n = fam.len();
    let nodes = rule.node_count();
    let cols = part.cells.len() * n;
    let mut m = QMatrix::zeros(nodes, cols);
    for k in 0..nodes {
        let Some(c) = asg.cell_of[k] else { continue };
        let (q, w) = rule.node(k);
        let s = w.sqrt();
        for (i, f) in fam.eval_all(q)?.into_iter().enumerate() {
            m[(k, c * n + i)] = f * s;
        }
    }
    let sv = m.singular_values();
    Ok(MinimalityWitness { sigma_min: sv.last().copied().unwrap_or(0.0), rank: m.rank(1e-10), node_dim: nodes })
}

/// The diagonal operator `A = diag(eps^{-n})` on Hermite coefficients, `n <= N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagonalA {
    pub epsilon: f64,
    pub diag: Vec<f64>,
}

pub fn diag_operator_a(epsilon: f64, n: usize) -> Result<DiagonalA> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::BadEpsilon(epsilon));
    }
    Ok(DiagonalA { epsilon, diag: (0..=n).map(|k| epsilon.powi(-(k as i32))).collect() })
}

impl DiagonalA {
    pub fn matrix(&self) -> QMatrix {
        let d: Vec<Quaternion> = self.diag.iter().map(|&x| Quaternion::real(x)).collect();
        QMatrix::diagonal(&d)
    }

    /// `sum_{n <= N} eps^n`, exactly summed.
    pub fn trace_inverse(&self) -> f64 {
        let mut s = ExactSum::new();
        for k in 0..self.diag.len() {
            s.add(self.epsilon.powi(k as i32));
        }
        s.value()
    }

    fn check(&self, c: &[Quaternion]) -> Result<()> {
        if c.len() != self.diag.len() {
            return Err(Error::DimensionMismatch { expected: self.diag.len(), found: c.len() });
        }
        Ok(())
    }

    pub fn apply(&self, c: &[Quaternion]) -> Result<Vec<Quaternion>> {
        self.check(c)?;
        Ok(c.iter().zip(&self.diag).map(|(x, &d)| *x * d).collect())
    }

    /// `sum eps^{-n} conj(f_n) g_n`.
    pub fn scaled_inner_product(&self, f: &[Quaternion], g: &[Quaternion]) -> Result<Quaternion> {
        self.check(f)?;
        self.check(g)?;
        Ok(f.iter().zip(g).zip(&self.diag).map(|((a, b), &d)| a.conj() * *b * d).sum())
    }

    /// Truncated domain test `sum eps^{-2n} |c_n|^2 < budget`.
    pub fn in_domain(&self, c: &[Quaternion], budget: f64) -> Result<bool> {
        self.check(c)?;
        Ok(c.iter().zip(&self.diag).map(|(x, &d)| d * d * x.norm2()).sum::<f64>() < budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::kernel_series;
    use crate::measures::{build_rule, MeasureKind, MeasureParams, QuadOrders, Reduction};

    fn canonical_rule(radial: usize, theta2: usize) -> MeasureRule {
        let o = QuadOrders { radial, theta2, ..QuadOrders::default() };
        build_rule(MeasureKind::CanonicalGaussQ, MeasureParams::none(), o, Reduction::Full).unwrap()
    }

    fn q(a: f64, b: f64, c: f64, d: f64) -> Quaternion {
        Quaternion::new(a, b, c, d)
    }

    #[test]
    fn exact_sum_is_order_independent() {
        let xs = [1e16, 1.0, -1e16, 1e-3, 3.0, -2.5e-17, 7.0];
        let mut a = ExactSum::new();
        xs.iter().for_each(|&x| a.add(x));
        let mut b = ExactSum::new();
        xs.iter().rev().for_each(|&x| b.add(x));
        assert_eq!(a.value(), b.value());
        assert_eq!(a.value(), 11.001);
        let mut c = ExactSum::new();
        c.add(0.1);
        c.add(0.2);
        c.add(-0.3);
        // 0.1 + 0.2 - 0.3 in binary
        assert_eq!(c.value(), 2.7755575615628914e-17);
    }

    #[test]
    fn partition_text_format() {
        let p = Partition::parse("# two halves\ninner: r < 1.5\nouter: r >= 1.5 & theta2 <= 2*pi\n\nq: theta1 > pi/4\n").unwrap();
        assert_eq!(p.cells.len(), 3);
        assert_eq!(p.cells[1].predicate, Predicate::And(vec![
            Predicate::Cmp(Comparison { var: Var::R, op: CmpOp::Ge, value: 1.5 }),
            Predicate::Cmp(Comparison { var: Var::Theta2, op: CmpOp::Le, value: 2.0 * PI }),
        ]));
        let t = Partition::parse("all: true").unwrap();
        assert_eq!(t.cells[0].predicate, Predicate::True);
        assert!(matches!(Partition::parse("inner r < 1"), Err(Error::PartitionSyntax { line: 1, .. })));
        assert!(matches!(Partition::parse("a: r < 1\nb: z < 1"), Err(Error::PartitionSyntax { line: 2, .. })));
        assert!(matches!(Partition::parse("a: r < one"), Err(Error::PartitionSyntax { .. })));
        let back = Partition::parse(&p.to_text()).unwrap();
        assert_eq!(back.cells.iter().map(|c| &c.predicate).collect::<Vec<_>>(), p.cells.iter().map(|c| &c.predicate).collect::<Vec<_>>());
    }

    #[test]
    fn overlapping_and_uncovering_partitions_rejected() {
        let rule = canonical_rule(4, 8);
        let p = Partition::parse("a: r < 2\nb: r > 1").unwrap();
        assert!(matches!(p.assign(&rule), Err(Error::OverlappingCells { .. })));
        let mut gap = Partition::parse("a: r < 1").unwrap();
        assert!(!gap.assign(&rule).unwrap().covers);
        gap.covers_domain = true;
        assert!(gap.assign(&rule).is_err());
    }

    #[test]
    fn localization_operator_examples() {
        let ker = Kernel::canonical().with_truncation(8).unwrap();
        let f0 = localization_operator(&ker, Quaternion::ZERO).unwrap();
        let mut e = QMatrix::zeros(9, 9);
        e[(0, 0)] = Quaternion::ONE;
        assert_eq!(f0, e);
        let ker = Kernel::canonical();
        let x = q(0.4, -0.3, 0.5, 0.2);
        let f = localization_operator(&ker, x).unwrap();
        let k = kernel_series(&ker, x, x).unwrap().value;
        assert!((f.trace() - k).norm() < 1e-12 * k.norm());
        assert!(f.is_positive(1e-12).unwrap());
        assert_eq!(f.rank(1e-10), 1);
    }

    #[test]
    fn localization_identity_on_random_vectors() {
        let ker = Kernel::hermite(0.5).unwrap().with_truncation(20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = || rng.gen_range(-1.0..1.0);
        for _ in 0..50 {
            let x = q(r(), r(), r(), r());
            let phi: Vec<Quaternion> = (0..21).map(|_| q(r(), r(), r(), r())).collect();
            let psi: Vec<Quaternion> = (0..21).map(|_| q(r(), r(), r(), r())).collect();
            let f = localization_operator(&ker, x).unwrap();
            let fpsi = f.apply(&psi.clone().into()).unwrap();
            let lhs: Quaternion = phi.iter().zip(fpsi.iter()).map(|(a, b)| a.conj() * *b).sum();
            let vals = ker.family.eval_all(x).unwrap();
            let ev = |c: &[Quaternion]| vals.iter().zip(c).map(|(f, a)| *f * *a).sum::<Quaternion>();
            let rhs = ev(&phi).conj() * ev(&psi);
            assert!((lhs - rhs).norm() < 1e-10 * (1.0 + rhs.norm()));
        }
    }

    #[test]
    fn pov_normalization_and_node_additivity() {
        let ker = Kernel::canonical().with_truncation(6).unwrap();
        let rule = canonical_rule(24, 64);
        let whole = pov_measure(&ker, &rule, &Partition::whole()).unwrap();
        assert!((&whole[0] - &QMatrix::identity(7)).max_abs() < 1e-9);
        let halves = PovAssembly::build(&ker, &rule, &Partition::half_spaces()).unwrap();
        assert_eq!(halves.union(&[0, 1]), whole[0]);
        for a in halves.matrices() {
            assert!(a.is_positive(1e-9).unwrap());
        }
        let empty = pov_measure(&ker, &rule, &Partition::parse("none: r < 0").unwrap()).unwrap();
        assert_eq!(empty[0].max_abs(), 0.0);
    }

    #[test]
    fn reduced_rule_is_rejected() {
        let rule = build_rule(MeasureKind::CanonicalGaussQ, MeasureParams::none(), QuadOrders::default(), Reduction::Reduced).unwrap();
        let ker = Kernel::canonical().with_truncation(3).unwrap();
        assert!(pov_measure(&ker, &rule, &Partition::whole()).is_err());
    }

    #[test]
    fn sigma_additivity_on_refinement() {
        let ker = Kernel::canonical().with_truncation(6).unwrap();
        let rule = canonical_rule(24, 64);
        let m = median_radius(&rule).unwrap();
        let two = Partition::radial_split(m);
        let four = two.refine(&Partition::half_spaces());
        let rep = sigma_additivity_check(&ker, &rule, &[Partition::whole(), two, four], 8, 11).unwrap();
        assert_eq!(rep.additivity_defect, 0.0);
        assert_eq!(rep.operator_defect, 0.0);
        assert!(rep.min_measure >= 0.0 && rep.monotone && rep.positive && rep.empty_is_zero);
        assert!(rep.total_defect < 1e-9, "{}", rep.total_defect);
        assert!(rep.normalization_defect < 1e-9);
        assert!(rep.density_defect < 1e-12);
    }

    #[test]
    fn non_refinement_rejected() {
        let ker = Kernel::canonical().with_truncation(3).unwrap();
        let rule = canonical_rule(8, 16);
        let err = sigma_additivity_check(&ker, &rule, &[Partition::radial_split(1.0), Partition::half_spaces()], 2, 0);
        assert!(err.is_err());
    }

    #[test]
    fn naimark_trivial_cells() {
        let ker = Kernel::canonical().with_truncation(4).unwrap();
        let rule = canonical_rule(8, 16);
        let rep = naimark_residual(&ker, &rule, &Partition::whole()).unwrap();
        assert!(rep.residual < 1e-12, "{}", rep.residual);
        assert!(rep.max_entry.unwrap() <= rep.residual + 1e-15);
        assert!(rep.pv_exact);
        let none = naimark_residual(&ker, &rule, &Partition::parse("none: r < 0").unwrap()).unwrap();
        assert_eq!(none.residual, 0.0);
        assert_eq!(none.max_entry, Some(0.0));
    }

    #[test]
    fn projector_is_an_orthogonal_projection() {
        let ker = Kernel::canonical().with_truncation(4).unwrap();
        let rule = canonical_rule(4, 8);
        let l2 = DiscreteL2::new(&ker, &rule).unwrap();
        let p = l2.projector().unwrap();
        assert!((&p.matmul(&p).unwrap() - &p).max_abs() < 1e-10);
        assert!(p.hermitian_defect() < 1e-10);
        assert_eq!(p.rank(1e-8), 5);
    }

    #[test]
    fn compression_matches_pov_on_small_rule() {
        // direct dense check of P_K P(Delta) P_K against U a U^dagger
        let ker = Kernel::canonical().with_truncation(3).unwrap();
        let rule = canonical_rule(4, 8);
        let part = Partition::half_spaces();
        let l2 = DiscreteL2::new(&ker, &rule).unwrap();
        let asg = part.assign(&rule).unwrap();
        let p = l2.projector().unwrap();
        let pov = pov_measure(&ker, &rule, &part).unwrap();
        let mut direct = 0.0f64;
        for (c, a) in pov.iter().enumerate() {
            let pv = PvProjection::new(&asg, c).to_matrix();
            let lhs = p.matmul(&pv).unwrap().matmul(&p).unwrap();
            let rhs = l2.frame.matmul(a).unwrap().matmul(&l2.frame.adjoint()).unwrap();
            direct = (&lhs - &rhs).data().iter().fold(direct, |m, e| m.max(e.norm()));
        }
        let rep = naimark_residual(&ker, &rule, &part).unwrap();
        assert!((direct - rep.max_entry.unwrap()).abs() < 1e-13, "{direct} {:?} {}", rep.max_entry, rep.residual);
        assert!(direct <= rep.residual + 1e-15);
    }

    #[test]
    fn ill_conditioned_basis_detected() {
        let ker = Kernel::canonical().with_truncation(12).unwrap();
        let mut rule = canonical_rule(4, 8);
        rule.planar.truncate(3);
        assert!(matches!(DiscreteL2::new(&ker, &rule), Err(Error::IllConditionedBasis { .. })));
    }

    #[test]
    fn minimality_witness_examples() {
        let ker = Kernel::canonical().with_truncation(3).unwrap();
        let mut rule = build_rule(MeasureKind::TwoIndexGauss, MeasureParams::none(), QuadOrders { radial: 5, theta2: 8, ..QuadOrders::default() }, Reduction::Full).unwrap();
        rule.planar.truncate(20);
        let whole = minimality_witness(&ker, &rule, &Partition::whole()).unwrap();
        assert_eq!(whole.rank, 4);
        let single = minimality_witness(&ker, &rule, &Partition::singletons(40)).unwrap();
        assert!(single.spans() && single.sigma_min > 0.0);
        let coarse = minimality_witness(&ker, &rule, &Partition::half_spaces()).unwrap();
        assert!(coarse.rank < 40 && !coarse.spans());
    }

    #[test]
    fn operator_a() {
        let a = diag_operator_a(0.5, 50).unwrap();
        assert!((a.trace_inverse() - (2.0 - 0.5f64.powi(50))).abs() < 1e-15);
        assert!((diag_operator_a(0.5, 100).unwrap().trace_inverse() - 2.0).abs() < 1e-12);
        let h0: Vec<Quaternion> = (0..51).map(|k| if k == 0 { Quaternion::ONE } else { Quaternion::ZERO }).collect();
        assert_eq!(a.apply(&h0).unwrap(), h0);
        let f = |n: usize| -> Vec<Quaternion> {
            (0..51).map(|k| if k == n { Quaternion::real(0.5f64.powf(n as f64 / 2.0)) } else { Quaternion::ZERO }).collect()
        };
        for n in 0..6 {
            for m in 0..6 {
                let s = a.scaled_inner_product(&f(n), &f(m)).unwrap();
                assert!((s - Quaternion::real(if n == m { 1.0 } else { 0.0 })).norm() < 1e-14);
            }
        }
        assert!(a.in_domain(&f(3), 10.0).unwrap());
        assert!(matches!(diag_operator_a(1.0, 5), Err(Error::BadEpsilon(_))));
        assert!(matches!(diag_operator_a(0.0, 5), Err(Error::BadEpsilon(_))));
    }
}
