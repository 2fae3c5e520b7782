//! Batch driver: every verification as a command with a machine-readable report.
//!
//! Options can come from flags or from a TOML file given with `--config`
//! (same names, kebab-case); flags win. Exit codes: 0 when every checked value
//! is within tolerance, 1 when one is not, 2 for configuration errors and 3 when
//! a computation fails.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::kernels::{gram_matrix, kernel_closed, kernel_series, Kernel};
use crate::measures::{
    build_rule, kernel_square_integrability, orthogonality_matrix, two_index_orthogonality, MeasureKind, MeasureParams,
    MeasureRule, QuadOrders, Reduction,
};
use crate::poly::{BasisFamily, Domain, Family, FixedIndex, Hermite2Convention, MAX_INDEX, MAX_INDEX_TWO};
use crate::pov::{
    diag_operator_a, median_radius, minimality_witness, naimark_refinement, sigma_additivity_check, Partition,
    PovAssembly,
};
use crate::qlinalg::{inner, QMatrix, QVector};
use crate::quaternion::Quaternion;

pub const SCHEMA: u32 = 1;
const MAX_GRID: usize = 10_000;
/// Residuals below this are at the roundoff floor and exempt from monotonicity.
const FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommandName {
    QuatSelftest,
    Orthogonality,
    KernelCompare,
    GramCheck,
    SquareIntegrability,
    Pov,
    Naimark,
    TraceA,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    Monomial,
    Hermite,
    Laguerre,
    Hermite2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpaceName {
    Real,
    Complex,
    Quaternion,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConventionName {
    Displayed,
    Signed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReductionName {
    Reduced,
    Full,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Raw options, shared by the command line and the config file.
#[derive(Parser, Debug, Default, Clone, Deserialize)]
#[command(name = "qrkhs", version, about = "Quaternionic reproducing kernels: numerical verification runs")]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Option<CommandName>,
    /// TOML file with the same option names.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub family: Option<FamilyName>,
    #[arg(long, value_enum)]
    pub space: Option<SpaceName>,
    #[arg(long, allow_hyphen_values = true)]
    pub epsilon: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// Family truncation N.
    #[arg(long)]
    pub n: Option<usize>,
    /// Largest index checked by `orthogonality`.
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Fixed index of the two-index Hermite family.
    #[arg(long)]
    pub fixed: Option<usize>,
    #[arg(long, value_enum)]
    pub convention: Option<ConventionName>,
    /// `start:stop:step`.
    #[arg(long, allow_hyphen_values = true)]
    pub grid: Option<String>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub pairs: Option<usize>,
    #[arg(long)]
    pub cases: Option<usize>,
    /// Partition file, one `name: predicate` cell per line.
    #[arg(long)]
    pub partition: Option<PathBuf>,
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long, value_enum)]
    pub reduction: Option<ReductionName>,
    #[arg(long)]
    pub radial: Option<usize>,
    #[arg(long)]
    pub theta2: Option<usize>,
    #[arg(long)]
    pub theta1: Option<usize>,
    #[arg(long)]
    pub phi: Option<usize>,
    #[arg(long)]
    pub tail: Option<f64>,
    /// Override the command's tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl Args {
    /// Field-wise `self.or(file)`.
    fn over(self, f: Args) -> Args {
        Args {
            command: self.command.or(f.command),
            config: self.config,
            family: self.family.or(f.family),
            space: self.space.or(f.space),
            epsilon: self.epsilon.or(f.epsilon),
            alpha: self.alpha.or(f.alpha),
            n: self.n.or(f.n),
            max_n: self.max_n.or(f.max_n),
            fixed: self.fixed.or(f.fixed),
            convention: self.convention.or(f.convention),
            grid: self.grid.or(f.grid),
            points: self.points.or(f.points),
            pairs: self.pairs.or(f.pairs),
            cases: self.cases.or(f.cases),
            partition: self.partition.or(f.partition),
            levels: self.levels.or(f.levels),
            reduction: self.reduction.or(f.reduction),
            radial: self.radial.or(f.radial),
            theta2: self.theta2.or(f.theta2),
            theta1: self.theta1.or(f.theta1),
            phi: self.phi.or(f.phi),
            tail: self.tail.or(f.tail),
            tol: self.tol.or(f.tol),
            format: self.format.or(f.format),
            out: self.out.or(f.out),
            seed: self.seed.or(f.seed),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("computation failed: {0}")]
    Compute(#[from] Error),
    #[error("cannot write report: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Output(_) => 3,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FamilySpec {
    pub kind: FamilyName,
    pub space: SpaceName,
    pub epsilon: f64,
    pub alpha: f64,
    pub n: usize,
    pub fixed: usize,
    pub convention: ConventionName,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub params: MeasureParams,
    pub reduction: Reduction,
    pub orders: QuadOrders,
}

/// Fully resolved and validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: CommandName,
    pub family: FamilySpec,
    pub measure: MeasureSpec,
    pub max_n: usize,
    pub grid: Option<(f64, f64, f64)>,
    pub points: usize,
    pub pairs: usize,
    pub cases: usize,
    pub levels: usize,
    pub partition: Option<PathBuf>,
    pub tol: Option<f64>,
    pub format: Format,
    #[serde(skip)]
    pub out: Option<PathBuf>,
    pub seed: u64,
}

fn parse_grid(s: &str) -> Result<(f64, f64, f64), CliError> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || cfg_err(format!("grid '{s}' is not start:stop:step"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<f64> = parts.iter().map(|p| p.trim().parse::<f64>()).collect::<Result<_, _>>().map_err(|_| bad())?;
    let (a, b, h) = (v[0], v[1], v[2]);
    if !(h > 0.0) || !(b >= a) || !a.is_finite() || !b.is_finite() {
        return Err(cfg_err(format!("grid '{s}' needs start <= stop and step > 0")));
    }
    if (b - a) / h > MAX_GRID as f64 {
        return Err(cfg_err(format!("grid '{s}' has more than {MAX_GRID} points")));
    }
    Ok((a, b, h))
}

fn grid_values((a, b, h): (f64, f64, f64)) -> Vec<f64> {
    let n = ((b - a) / h + 1e-9).floor() as usize;
    (0..=n).map(|i| a + h * i as f64).collect()
}

impl RunConfig {
    /// Merges flags over the config file (if any), fills defaults and checks
    /// every precondition before anything is computed.
    pub fn resolve(args: Args) -> Result<RunConfig, CliError> {
        let args = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
                let file: Args = toml::from_str(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
                args.clone().over(file)
            }
            None => args,
        };
        let command = args.command.ok_or_else(|| cfg_err("no command given"))?;
        let kind = args.family.unwrap_or(match command {
            CommandName::Naimark => FamilyName::Laguerre,
            _ => FamilyName::Monomial,
        });
        let space = args.space.unwrap_or(match (command, kind) {
            (CommandName::KernelCompare, FamilyName::Hermite | FamilyName::Laguerre) => SpaceName::Real,
            _ => SpaceName::Quaternion,
        });
        let epsilon = args.epsilon.unwrap_or(match (command, kind) {
            (CommandName::Naimark, _) => 0.4,
            (CommandName::TraceA, _) => 0.5,
            (_, FamilyName::Monomial | FamilyName::Hermite2) => 1.0,
            _ => 0.5,
        });
        let alpha = args.alpha.unwrap_or(0.0);
        match kind {
            FamilyName::Hermite | FamilyName::Laguerre if !(epsilon > 0.0 && epsilon < 1.0) => {
                return Err(cfg_err(format!("epsilon {epsilon} not in (0, 1)")))
            }
            FamilyName::Laguerre if !(alpha > -1.0) || !alpha.is_finite() => {
                return Err(cfg_err(format!("alpha {alpha} must exceed -1")))
            }
            FamilyName::Monomial | FamilyName::Hermite2 if space != SpaceName::Quaternion => {
                return Err(cfg_err("monomial and two-index families live on the quaternions only"))
            }
            _ => {}
        }
        if command == CommandName::TraceA && !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(cfg_err(format!("epsilon {epsilon} not in (0, 1)")));
        }
        let max_n = args.max_n.unwrap_or(if kind == FamilyName::Hermite2 { 4 } else { 6 });
        let n = args.n.unwrap_or(match command {
            CommandName::Orthogonality => max_n,
            CommandName::KernelCompare => 300,
            CommandName::Pov => 6,
            CommandName::Naimark => 5,
            CommandName::TraceA => 100,
            _ => match kind {
                FamilyName::Monomial => 60,
                FamilyName::Hermite => 120,
                FamilyName::Laguerre => 150,
                FamilyName::Hermite2 => 40,
            },
        });
        let limit = if kind == FamilyName::Hermite2 { MAX_INDEX_TWO } else { MAX_INDEX };
        if n > limit && command != CommandName::TraceA {
            return Err(cfg_err(format!("N = {n} exceeds {limit}")));
        }
        if command == CommandName::Orthogonality && max_n > n {
            return Err(cfg_err(format!("max-n {max_n} exceeds N = {n}")));
        }
        let convention = args.convention.unwrap_or(ConventionName::Signed);
        let family = FamilySpec { kind, space, epsilon, alpha, n, fixed: args.fixed.unwrap_or(0), convention };

        let mkind = match (kind, space) {
            (FamilyName::Monomial, _) => MeasureKind::CanonicalGaussQ,
            (FamilyName::Hermite2, _) => MeasureKind::TwoIndexGauss,
            (FamilyName::Hermite, SpaceName::Real) => MeasureKind::RealHermite,
            (FamilyName::Hermite, SpaceName::Complex) => MeasureKind::HermiteComplex,
            (FamilyName::Hermite, SpaceName::Quaternion) => MeasureKind::HermiteQuat,
            (FamilyName::Laguerre, SpaceName::Real) => MeasureKind::RealLaguerre,
            (FamilyName::Laguerre, SpaceName::Complex) => MeasureKind::LaguerreComplex,
            (FamilyName::Laguerre, SpaceName::Quaternion) => MeasureKind::LaguerreQuat,
        };
        let params = match kind {
            FamilyName::Hermite => MeasureParams::hermite(epsilon),
            FamilyName::Laguerre => MeasureParams::laguerre(alpha, epsilon),
            _ => MeasureParams::none(),
        };
        let node_level = matches!(
            command,
            CommandName::SquareIntegrability | CommandName::Pov | CommandName::Naimark
        );
        let reduction = match args.reduction {
            Some(ReductionName::Full) => Reduction::Full,
            Some(ReductionName::Reduced) if node_level && space == SpaceName::Quaternion => {
                return Err(cfg_err("this command needs the full rule on quaternionic measures"))
            }
            Some(ReductionName::Reduced) => Reduction::Reduced,
            None if node_level => Reduction::Full,
            None => Reduction::Reduced,
        };
        let growth = matches!(kind, FamilyName::Hermite | FamilyName::Laguerre) && space != SpaceName::Real;
        let (radial, theta2) = match command {
            CommandName::SquareIntegrability => (6, if kind == FamilyName::Laguerre { 32 } else { 16 }),
            CommandName::Naimark => (6, 16),
            CommandName::Pov => (12, 64),
            _ => (24, if growth { 256 } else { 64 }),
        };
        let mut orders = QuadOrders {
            radial: args.radial.unwrap_or(radial),
            theta2: args.theta2.unwrap_or(theta2),
            ..QuadOrders::default()
        };
        if let Some(t) = args.theta1 {
            orders.theta1 = t;
        }
        if let Some(p) = args.phi {
            orders.phi = p;
        }
        if let Some(t) = args.tail {
            if !(t > 0.0 && t < 1.0) {
                return Err(cfg_err(format!("tail {t} not in (0, 1)")));
            }
            orders.tail = t;
        }
        if command == CommandName::Orthogonality {
            let per = if kind == FamilyName::Hermite2 { 4 } else { 2 };
            orders.degree = orders.degree.max(per * max_n);
        }
        if orders.radial == 0 || orders.theta2 == 0 || orders.theta1 == 0 || orders.phi == 0 {
            return Err(cfg_err("quadrature orders must be positive"));
        }
        let grid = match (&args.grid, command) {
            (Some(g), _) => Some(parse_grid(g)?),
            (None, CommandName::KernelCompare) => {
                Some(if kind == FamilyName::Laguerre { (0.0, 8.0, 1.0) } else { (-2.0, 2.0, 0.5) })
            }
            (None, _) => None,
        };
        if command == CommandName::KernelCompare && kind == FamilyName::Hermite2 {
            return Err(cfg_err("the two-index family has no closed-form kernel"));
        }
        if matches!(command, CommandName::Pov | CommandName::Naimark) && kind == FamilyName::Hermite2 {
            return Err(cfg_err("POV commands use the one-index families"));
        }
        if let Some(t) = args.tol {
            if !(t >= 0.0) {
                return Err(cfg_err(format!("tolerance {t} must be nonnegative")));
            }
        }
        let points = args.points.unwrap_or(20);
        if points == 0 || points > crate::kernels::GRAM_MAX_POINTS {
            return Err(cfg_err(format!("points must be in 1..={}", crate::kernels::GRAM_MAX_POINTS)));
        }
        Ok(RunConfig {
            command,
            family,
            measure: MeasureSpec { kind: mkind, params, reduction, orders },
            max_n,
            grid,
            points,
            pairs: args.pairs.unwrap_or(5),
            cases: args.cases.unwrap_or(1000),
            levels: args.levels.unwrap_or(3).max(1),
            partition: args.partition,
            tol: args.tol,
            format: args.format.unwrap_or_default(),
            out: args.out,
            seed: args.seed.unwrap_or(0),
        })
    }

    fn tol(&self, default: f64) -> f64 {
        self.tol.unwrap_or(default)
    }

    pub fn basis_family(&self) -> Result<BasisFamily, Error> {
        let f = &self.family;
        let fam = match f.kind {
            FamilyName::Monomial => BasisFamily::monomial(f.n)?,
            FamilyName::Hermite => BasisFamily::hermite(f.epsilon, f.n)?,
            FamilyName::Laguerre => BasisFamily::laguerre(f.alpha, f.epsilon, f.n)?,
            FamilyName::Hermite2 => {
                let conv = match f.convention {
                    ConventionName::Displayed => Hermite2Convention::AsDisplayed,
                    ConventionName::Signed => Hermite2Convention::Signed,
                };
                BasisFamily::hermite2(FixedIndex::First(f.fixed), conv, f.n)?
            }
        };
        Ok(fam.with_domain(match (f.kind, f.space) {
            (FamilyName::Laguerre, SpaceName::Real) => Domain::PositiveHalfLine,
            (_, SpaceName::Real) => Domain::RealLine,
            (_, SpaceName::Complex) => Domain::ComplexPlane,
            (_, SpaceName::Quaternion) => Domain::QuaternionSpace,
        }))
    }

    pub fn kernel(&self) -> Result<Kernel, Error> {
        Ok(Kernel::new(self.basis_family()?))
    }

    pub fn rule(&self) -> Result<MeasureRule, Error> {
        let m = &self.measure;
        build_rule(m.kind, m.params, m.orders, m.reduction)
    }
}

/// One reported number with its tolerance; `tol = None` marks an
/// informational value that cannot fail.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Row {
    pub check: String,
    pub case: String,
    pub value: f64,
    pub tol: Option<f64>,
    pub passed: bool,
}

impl Row {
    pub fn check(check: &str, case: impl Into<String>, value: f64, tol: f64) -> Row {
        Row { check: check.into(), case: case.into(), value, tol: Some(tol), passed: value <= tol }
    }

    pub fn info(check: &str, case: impl Into<String>, value: f64) -> Row {
        Row { check: check.into(), case: case.into(), value, tol: None, passed: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub schema: u32,
    pub command: CommandName,
    pub config: RunConfig,
    /// Quadrature and truncation parameters behind the numbers.
    pub provenance: Vec<String>,
    pub rows: Vec<Row>,
    pub passed: bool,
}

impl Report {
    fn new(config: &RunConfig, provenance: Vec<String>, rows: Vec<Row>) -> Report {
        let passed = rows.iter().all(|r| r.passed);
        Report { schema: SCHEMA, command: config.command, config: config.clone(), provenance, rows, passed }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_csv(&self) -> String {
        fn field(s: &str) -> String {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.to_string()
            }
        }
        let prov = self.provenance.join("; ");
        let mut out = String::from("schema,command,check,case,value,tol,passed,provenance\n");
        let cmd = serde_json::to_value(self.command).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        for r in &self.rows {
            let tol = r.tol.map_or(String::new(), |t| format!("{t:e}"));
            let _ = writeln!(
                out,
                "{},{},{},{},{:e},{},{},{}",
                SCHEMA,
                cmd,
                field(&r.check),
                field(&r.case),
                r.value,
                tol,
                r.passed,
                field(&prov)
            );
        }
        out
    }

    pub fn render(&self) -> String {
        match self.config.format {
            Format::Json => self.to_json(),
            Format::Csv => self.to_csv(),
        }
    }
}

fn rule_provenance(rule: &MeasureRule) -> String {
    let o = &rule.orders;
    format!(
        "rule v{} {:?} {:?} radial={} theta2={} theta1={} phi={} degree={} tail={:e} radius={} nodes={}",
        rule.version,
        rule.kind,
        rule.reduction,
        o.radial,
        o.theta2,
        o.theta1,
        o.phi,
        o.degree,
        o.tail,
        rule.radius,
        rule.node_count()
    )
}

fn family_provenance(cfg: &RunConfig) -> String {
    let f = &cfg.family;
    format!("family {:?} on {:?} epsilon={} alpha={} N={}", f.kind, f.space, f.epsilon, f.alpha, f.n)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

fn rq(rng: &mut ChaCha8Rng) -> Quaternion {
    Quaternion::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

fn rv(rng: &mut ChaCha8Rng, d: usize) -> QVector {
    QVector((0..d).map(|_| rq(rng)).collect())
}

/// Random point of the family's domain, in a box where the kernels are tame.
pub fn random_point(rng: &mut ChaCha8Rng, kind: FamilyName, space: SpaceName) -> Quaternion {
    let q = rq(rng);
    let x0 = if kind == FamilyName::Laguerre { 1.0 + q.x0 } else { q.x0 };
    match space {
        SpaceName::Real => Quaternion::real(2.0 * x0),
        SpaceName::Complex => Quaternion::new(x0, q.x1, 0.0, 0.0),
        SpaceName::Quaternion => Quaternion::new(x0, q.x1, q.x2, q.x3),
    }
}

/// Worst relative errors of the algebraic identities over `cases` random draws each.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestResult {
    pub polarization: f64,
    pub cauchy_schwarz: f64,
    pub lemma_equality: f64,
    pub lemma_inequality: f64,
    pub conj_antihom_exact: f64,
    pub conj_antihom: f64,
    pub norm_multiplicativity: f64,
}

pub fn quat_selftest(cases: usize, seed: u64) -> Result<SelftestResult, Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = 4;
    let units = [Quaternion::I, Quaternion::J, Quaternion::K];
    let mut r = SelftestResult {
        polarization: 0.0,
        cauchy_schwarz: 0.0,
        lemma_equality: 0.0,
        lemma_inequality: 0.0,
        conj_antihom_exact: 0.0,
        conj_antihom: 0.0,
        norm_multiplicativity: 0.0,
    };
    for _ in 0..cases {
        let (phi, psi) = (rv(&mut rng, d), rv(&mut rng, d));
        let n2 = |v: &QVector| v.norm2();
        let mut rhs = Quaternion::real(n2(&(&phi + &psi)) - n2(&(&phi - &psi)));
        for u in units {
            let pu = phi.scale_right(u);
            rhs += u * (n2(&(&pu + &psi)) - n2(&(&pu - &psi)));
        }
        let ip = inner(&phi, &psi)?;
        r.polarization = r.polarization.max((ip * 4.0 - rhs).norm() / (4.0 * phi.norm() * psi.norm()));
        let cs = ip.norm2() / (phi.norm2() * psi.norm2()) - 1.0;
        r.cauchy_schwarz = r.cauchy_schwarz.max(cs);

        let b = QMatrix::from_fn(d, d, |_, _| rq(&mut rng));
        let mut a = b.adjoint().matmul(&b)?;
        for i in 0..d {
            a[(i, i)] = Quaternion::real(a[(i, i)].x0);
            for j in 0..i {
                a[(i, j)] = a[(j, i)].conj();
            }
        }
        let aphi = a.apply(&phi)?;
        let lhs = aphi.norm2();
        let a2phi = a.apply(&aphi)?;
        let mid = inner(&a2phi, &phi)?;
        r.lemma_equality = r.lemma_equality.max((mid - Quaternion::real(lhs)).norm() / lhs);
        let opnorm = a.operator_norm(1e-10)?;
        let bound = opnorm * inner(&aphi, &phi)?.x0;
        r.lemma_inequality = r.lemma_inequality.max(lhs / bound - 1.0);

        let (p, q) = (rq(&mut rng), rq(&mut rng));
        let e = (p * q).conj() - q.conj() * p.conj();
        r.conj_antihom = r.conj_antihom.max(e.norm() / (p.norm() * q.norm()));
        let small = |rng: &mut ChaCha8Rng| {
            Quaternion::new(
                rng.gen_range(-9i32..=9) as f64,
                rng.gen_range(-9i32..=9) as f64,
                rng.gen_range(-9i32..=9) as f64,
                rng.gen_range(-9i32..=9) as f64,
            )
        };
        let (pi, qi) = (small(&mut rng), small(&mut rng));
        r.conj_antihom_exact = r.conj_antihom_exact.max(((pi * qi).conj() - qi.conj() * pi.conj()).max_abs());
        let prod = p.norm2() * q.norm2();
        r.norm_multiplicativity = r.norm_multiplicativity.max(((p * q).norm2() - prod).abs() / prod);
    }
    Ok(r)
}

fn cmd_quat_selftest(cfg: &RunConfig) -> Result<Report, CliError> {
    let cases = cfg.cases;
    let s = quat_selftest(cases, cfg.seed)?;
    let case = format!("cases={cases} seed={}", cfg.seed);
    let rows = vec![
        Row::check("polarization identity", case.clone(), s.polarization, cfg.tol(1e-11)),
        Row::check("cauchy-schwarz excess", case.clone(), s.cauchy_schwarz, cfg.tol(1e-12)),
        Row::check("|A phi|^2 = <A^2 phi|phi>", case.clone(), s.lemma_equality, cfg.tol(1e-10)),
        Row::check("|A phi|^2 <= |A| <A phi|phi> excess", case.clone(), s.lemma_inequality, cfg.tol(1e-10)),
        Row::check("conj anti-homomorphism (integers)", case.clone(), s.conj_antihom_exact, 0.0),
        Row::check("conj anti-homomorphism", case.clone(), s.conj_antihom, cfg.tol(1e-15)),
        Row::check("norm multiplicativity", case, s.norm_multiplicativity, cfg.tol(1e-12)),
    ];
    Ok(Report::new(cfg, vec![format!("quaternion suites, 4-dimensional vectors and operators")], rows))
}

/// `|int conj(q^m) q^n dnu - n! delta_mn| / n!` from the normalized Gram matrix.
pub fn monomial_scaled_residuals(gram: &QMatrix) -> Vec<(usize, usize, f64)> {
    let d = gram.rows();
    let mut out = Vec::with_capacity(d * d);
    for m in 0..d {
        for n in 0..d {
            let raw = gram[(m, n)] * (factorial(m) * factorial(n)).sqrt();
            let target = if m == n { factorial(n) } else { 0.0 };
            out.push((m, n, (raw - Quaternion::real(target)).norm() / factorial(n)));
        }
    }
    out
}

fn cmd_orthogonality(cfg: &RunConfig) -> Result<Report, CliError> {
    let rule = cfg.rule()?;
    let f = &cfg.family;
    let mut rows = Vec::new();
    match f.kind {
        FamilyName::Hermite2 => {
            let conv = match f.convention {
                ConventionName::Displayed => Hermite2Convention::AsDisplayed,
                ConventionName::Signed => Hermite2Convention::Signed,
            };
            let rep = two_index_orthogonality(&rule, conv, cfg.max_n)?;
            let p = cfg.max_n + 1;
            let tol = cfg.tol(1e-8);
            for (a, row) in rep.residuals.iter().enumerate() {
                for (b, &v) in row.iter().enumerate() {
                    let case = format!("(n,m)=({},{}) (l,k)=({},{})", a / p, a % p, b / p, b % p);
                    rows.push(Row::check("normalized residual", case, v, tol));
                }
            }
        }
        FamilyName::Monomial => {
            let fam = cfg.basis_family()?;
            let rep = orthogonality_matrix(&fam, &rule, cfg.max_n)?;
            let tol = cfg.tol(1e-10);
            for (m, n, v) in monomial_scaled_residuals(&rep.gram) {
                rows.push(Row::check("residual / n!", format!("m={m} n={n}"), v, tol));
            }
        }
        FamilyName::Hermite | FamilyName::Laguerre => {
            let fam = cfg.basis_family()?;
            let rep = orthogonality_matrix(&fam, &rule, cfg.max_n)?;
            let tol = cfg.tol(if f.kind == FamilyName::Hermite { 1e-8 } else { 1e-7 });
            for (m, row) in rep.residuals.iter().enumerate() {
                for (n, &v) in row.iter().enumerate() {
                    rows.push(Row::check("residual", format!("m={m} n={n}"), v, tol));
                }
            }
        }
    }
    Ok(Report::new(cfg, vec![family_provenance(cfg), rule_provenance(&rule)], rows))
}

/// Point pairs of the kernel comparison: `(a + bJ, b + aJ)` over the grid, with
/// `J = i` on C and `J = (i + j + k)/sqrt 3` on H; imaginary parts are halved.
pub fn compare_pairs(grid: &[f64], space: SpaceName) -> Vec<(Quaternion, Quaternion)> {
    let axis = match space {
        SpaceName::Real => Quaternion::ZERO,
        SpaceName::Complex => Quaternion::I,
        SpaceName::Quaternion => Quaternion::new(0.0, 1.0, 1.0, 1.0) * (1.0 / 3f64.sqrt()),
    };
    let mut out = Vec::with_capacity(grid.len() * grid.len());
    for &a in grid {
        for &b in grid {
            let (x, y) = if space == SpaceName::Real {
                (Quaternion::real(a), Quaternion::real(b))
            } else {
                (Quaternion::real(a) + axis * (0.5 * b), Quaternion::real(b) + axis * (0.5 * a))
            };
            out.push((x, y));
        }
    }
    out
}

fn cmd_kernel_compare(cfg: &RunConfig) -> Result<Report, CliError> {
    let ker = cfg.kernel()?;
    let grid = grid_values(cfg.grid.expect("resolved"));
    let tol = cfg.tol(1e-9);
    let mut rows = Vec::new();
    for (x, y) in compare_pairs(&grid, cfg.family.space) {
        let s = kernel_series(&ker, x, y)?;
        let c = kernel_closed(&ker, x, y)?;
        let rel = (c - s.value).norm() / s.value.norm().max(f64::MIN_POSITIVE);
        rows.push(Row::check("closed vs series", format!("x={x} y={y} terms={} tail={:e}", s.terms, s.tail), rel, tol));
    }
    let prov = vec![family_provenance(cfg), format!("series tail tolerance {:e}, closed form {:?}", ker.tol, ker.closed_form)];
    Ok(Report::new(cfg, prov, rows))
}

fn cmd_gram_check(cfg: &RunConfig) -> Result<Report, CliError> {
    let ker = cfg.kernel()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts: Vec<Quaternion> =
        (0..cfg.points).map(|_| random_point(&mut rng, cfg.family.kind, cfg.family.space)).collect();
    let g = gram_matrix(&ker, &pts, None)?;
    let ev = g.embedded_eigenvalues(1e-9)?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    let case = format!("points={} seed={}", cfg.points, cfg.seed);
    let rows = vec![
        Row::check("negative eigenvalue magnitude", case.clone(), (-lo).max(0.0), cfg.tol(1e-9)),
        Row::info("smallest embedding eigenvalue", case.clone(), lo),
        Row::info("largest embedding eigenvalue", case.clone(), hi),
        Row::check("hermitian defect", case, g.hermitian_defect(), 1e-12 * hi.max(1.0)),
    ];
    Ok(Report::new(cfg, vec![family_provenance(cfg)], rows))
}

fn doubled_planar(o: QuadOrders) -> QuadOrders {
    QuadOrders { radial: 2 * o.radial, theta2: 2 * o.theta2, ..o }
}

fn cmd_square_integrability(cfg: &RunConfig) -> Result<Report, CliError> {
    let ker = cfg.kernel()?;
    let coarse = cfg.rule()?;
    let fine = coarse.with_orders(doubled_planar(coarse.orders))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tol = cfg.tol(1e-6);
    let mut rows = Vec::new();
    for _ in 0..cfg.pairs {
        let x = random_point(&mut rng, cfg.family.kind, cfg.family.space);
        let y = random_point(&mut rng, cfg.family.kind, cfg.family.space);
        let r0 = kernel_square_integrability(&ker, &coarse, x, y)?;
        let r1 = kernel_square_integrability(&ker, &fine, x, y)?;
        let case = format!("x={x} y={y}");
        rows.push(Row::info("residual at base orders", case.clone(), r0));
        rows.push(Row::check("residual at doubled orders", case.clone(), r1, tol));
        rows.push(Row::check("refinement ratio", case, if r1 < FLOOR { 0.0 } else { r1 / r0 }, 1.0));
    }
    Ok(Report::new(cfg, vec![family_provenance(cfg), rule_provenance(&coarse), rule_provenance(&fine)], rows))
}

fn load_partition(cfg: &RunConfig, reference: &MeasureRule) -> Result<Partition, CliError> {
    match &cfg.partition {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
            Partition::parse(&text).map_err(|e| cfg_err(format!("{}: {e}", path.display())))
        }
        None => Ok(Partition::radial_split(median_radius(reference)?)),
    }
}

/// Rule fine enough that its median radius stands in for the continuum one.
fn median_reference(rule: &MeasureRule) -> Result<MeasureRule, Error> {
    rule.with_orders(QuadOrders { radial: 48, theta2: 128, theta1: 1, phi: 2, ..rule.orders })
}

fn cmd_pov(cfg: &RunConfig) -> Result<Report, CliError> {
    let ker = cfg.kernel()?;
    let rule = cfg.rule()?;
    let part = load_partition(cfg, &median_reference(&rule)?)?;
    let asg = part.assign(&rule)?;
    let pov = PovAssembly::build(&ker, &rule, &part)?;
    let d = ker.family.len();
    let mut rows = Vec::new();
    for (c, cell) in part.cells.iter().enumerate() {
        let a = pov.cell(c);
        let lo = a.hermitian_eigenvalues(1e-10)?.first().copied().unwrap_or(0.0);
        let case = format!("{}: {} ({} nodes)", cell.name, cell.descriptor, asg.members[c].len());
        rows.push(Row::check("negative eigenvalue of a(cell)", case.clone(), (-lo).max(0.0), cfg.tol(1e-9)));
        rows.push(Row::info("trace of a(cell)", case, a.trace().x0));
    }
    let mut nested = vec![Partition::whole()];
    if asg.covers {
        let all: Vec<usize> = (0..part.cells.len()).collect();
        let total = pov.union(&all);
        rows.push(Row::check("|a(X) - I|", "union of all cells", (&total - &QMatrix::identity(d)).max_abs(), cfg.tol(1e-9)));
        nested.push(part.clone());
        nested.push(part.refine(&Partition::half_spaces()));
    } else {
        rows.push(Row::info("cells cover the domain", "", 0.0));
    }
    let s = sigma_additivity_check(&ker, &rule, &nested, 8, cfg.seed)?;
    let case = format!("{} nested partitions, 8 random unit vectors", nested.len());
    rows.push(Row::check("additivity defect", case.clone(), s.additivity_defect, 0.0));
    rows.push(Row::check("operator additivity defect", case.clone(), s.operator_defect, 0.0));
    rows.push(Row::check("negative cell measure", case.clone(), (-s.min_measure).max(0.0), 0.0));
    rows.push(Row::check("monotonicity violations", case.clone(), if s.monotone { 0.0 } else { 1.0 }, 0.0));
    rows.push(Row::check("<phi|a phi> vs node density", case.clone(), s.density_defect, cfg.tol(1e-12)));
    rows.push(Row::check("mu_phi(X) - |phi|^2", case.clone(), s.total_defect, cfg.tol(1e-9)));
    rows.push(Row::check("a(empty) nonzero", case, if s.empty_is_zero { 0.0 } else { 1.0 }, 0.0));
    Ok(Report::new(cfg, vec![family_provenance(cfg), rule_provenance(&rule)], rows))
}

/// Largest ratio of consecutive residuals, ignoring steps that land on the roundoff floor.
pub fn worst_refinement_ratio(residuals: &[f64]) -> f64 {
    residuals
        .windows(2)
        .map(|w| if w[1] < FLOOR { 0.0 } else { w[1] / w[0] })
        .fold(0.0, f64::max)
}

fn cmd_naimark(cfg: &RunConfig) -> Result<Report, CliError> {
    let ker = cfg.kernel()?;
    let rule = cfg.rule()?;
    let part = load_partition(cfg, &median_reference(&rule)?)?;
    let reps = naimark_refinement(&ker, &rule, &part, cfg.levels)?;
    let tol = cfg.tol(1e-7);
    let mut rows = Vec::new();
    let mut prov = vec![family_provenance(cfg), format!("partition: {}", part.to_text().trim_end().replace('\n', " | "))];
    let mut orders = rule.orders;
    for (i, r) in reps.iter().enumerate() {
        let case = format!("radial={} theta2={} nodes={}", orders.radial, orders.theta2, r.nodes);
        prov.push(rule_provenance(&rule.with_orders(orders)?));
        if i + 1 == reps.len() {
            rows.push(Row::check("naimark residual (operator norm)", case.clone(), r.residual, tol));
        } else {
            rows.push(Row::info("naimark residual (operator norm)", case.clone(), r.residual));
        }
        if let Some(e) = r.max_entry {
            rows.push(Row::info("naimark residual (max entry)", case.clone(), e));
        }
        rows.push(Row::info("gram condition number", case.clone(), r.gram_cond));
        rows.push(Row::check("projector defect |U'U - I|", case.clone(), r.frame_defect, 1e-10));
        rows.push(Row::check("P(cell) not an exact projection", case, if r.pv_exact { 0.0 } else { 1.0 }, 0.0));
        orders = doubled_planar(orders);
    }
    let res: Vec<f64> = reps.iter().map(|r| r.residual).collect();
    rows.push(Row::check("worst refinement ratio", format!("{} levels", reps.len()), worst_refinement_ratio(&res), 1.1));
    if rule.node_count() <= 20_000 {
        let w = minimality_witness(&ker, &rule, &part)?;
        let case = format!("base rule, {} nodes", w.node_dim);
        rows.push(Row::info("minimality witness sigma_min", case.clone(), w.sigma_min));
        rows.push(Row::info("minimality witness rank", case, w.rank as f64));
    }
    Ok(Report::new(cfg, prov, rows))
}

fn cmd_trace_a(cfg: &RunConfig) -> Result<Report, CliError> {
    let eps = cfg.family.epsilon;
    let n = cfg.family.n;
    let a = diag_operator_a(eps, n)?;
    let tr = a.trace_inverse();
    let limit = 1.0 / (1.0 - eps);
    let partial = (1.0 - eps.powi(n as i32 + 1)) / (1.0 - eps);
    let unit = |k: usize| -> Vec<Quaternion> {
        (0..=n).map(|j| if j == k { Quaternion::real(eps.powf(k as f64 / 2.0)) } else { Quaternion::ZERO }).collect()
    };
    let mut ortho = 0.0f64;
    for k in 0..=n.min(20) {
        for l in 0..=n.min(20) {
            let s = a.scaled_inner_product(&unit(k), &unit(l))?;
            ortho = ortho.max((s - Quaternion::real(if k == l { 1.0 } else { 0.0 })).norm());
        }
    }
    let case = format!("epsilon={eps} N={n}");
    let rows = vec![
        Row::check("|Tr A^-1 - 1/(1-eps)|", case.clone(), (tr - limit).abs(), cfg.tol(1e-12)),
        Row::check("|Tr A^-1 - partial geometric sum|", case.clone(), (tr - partial).abs(), 1e-14 * limit),
        Row::check("scaled orthonormality of f_n", case, ortho, 1e-13),
    ];
    Ok(Report::new(cfg, vec![format!("A = diag(eps^-n), n <= {n}")], rows))
}

pub fn run(cfg: &RunConfig) -> Result<Report, CliError> {
    match cfg.command {
        CommandName::QuatSelftest => cmd_quat_selftest(cfg),
        CommandName::Orthogonality => cmd_orthogonality(cfg),
        CommandName::KernelCompare => cmd_kernel_compare(cfg),
        CommandName::GramCheck => cmd_gram_check(cfg),
        CommandName::SquareIntegrability => cmd_square_integrability(cfg),
        CommandName::Pov => cmd_pov(cfg),
        CommandName::Naimark => cmd_naimark(cfg),
        CommandName::TraceA => cmd_trace_a(cfg),
    }
}

fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("QRKHS_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| cfg_err(format!("QRKHS_THREADS='{v}' is not a count")))?;
        if n == 0 {
            return Err(cfg_err("QRKHS_THREADS must be positive"));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Parses `argv`, runs the command, writes the report and returns the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(argv) {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = configure_threads().and_then(|_| RunConfig::resolve(args)).and_then(|cfg| {
        let report = run(&cfg)?;
        let text = report.render();
        match &cfg.out {
            Some(p) => std::fs::write(p, &text).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?,
            None => print!("{text}"),
        }
        Ok(report.passed)
    });
    match result {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("qrkhs: {e}");
            e.exit_code()
        }
    }
}
