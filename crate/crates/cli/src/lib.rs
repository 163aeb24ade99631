//! Command-line front end for `adkit`.
//!
//! [`run`] parses arguments, dispatches to the library and returns the exit
//! status: 0 on success, 1 on a numerical failure (domain violation,
//! singular Hessian, divergence) and 2 on a usage error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;

use adkit::bench::{
    benchmark_helmholtz, helmholtz_make, BenchConfig, ExampleFn, Helmholtz, Logistic, Objective,
    Quadratic, Rosenbrock, DEFAULT_REPS,
};
use adkit::numdiff::{error_curve, log_grid};
use adkit::optim::{
    gradient_descent, mlp_train, newton, value_and_grad, GdConfig, GradMode, Iterate, NewtonConfig,
    MLP_SEED,
};
use adkit::{grad_numeric, hvp, jacobian_forward, jacobian_reverse, AdError, DiffKind, DiffScheme};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Parser)]
#[command(name = "adkit", version, about = "Forward, reverse and nested automatic differentiation on built-in functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Value and gradient of a built-in function.
    Grad(PointArgs),
    /// Jacobian of a built-in function (a single row for scalar functions).
    Jacobian(PointArgs),
    /// Hessian-vector product by forward-over-reverse differentiation.
    Hvp {
        #[command(flatten)]
        point: PointArgs,
        /// Direction vector, comma separated; same length as the point.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        dir: Vec<f64>,
    },
    /// Forward and center difference errors against step size, as CSV.
    Errcurve {
        /// Evaluation point of 64x(1-x)(1-2x)^2(1-8x+8x^2)^2.
        #[arg(long, default_value_t = 0.2, allow_hyphen_values = true)]
        x0: f64,
        /// Smallest step of the log-spaced grid.
        #[arg(long, default_value_t = 1e-14)]
        h_min: f64,
        /// Largest step of the log-spaced grid.
        #[arg(long, default_value_t = 1e-1)]
        h_max: f64,
        /// Number of grid points.
        #[arg(long, default_value_t = 100)]
        points: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Relative timing of Helmholtz gradients, as CSV.
    Helmholtz {
        /// Dimensions to benchmark.
        #[arg(long, value_delimiter = ',', default_value = "1,8,15,22,29,36,43,50")]
        n_list: Vec<usize>,
        /// Instance seed [default: 42, or ADKIT_SEED].
        #[arg(long, env = "ADKIT_SEED")]
        seed: Option<u64>,
        /// Timed repetitions per measurement (the median is reported).
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        /// Write zeros in every timing column.
        #[arg(long)]
        no_time: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimizer demos writing their trajectory as CSV.
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FnName {
    Example,
    Logistic,
    Helmholtz,
    Rosenbrock,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Forward,
    Reverse,
    Numeric,
}

impl From<Mode> for GradMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Forward => GradMode::Forward,
            Mode::Reverse => GradMode::Reverse,
            Mode::Numeric => GradMode::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scheme {
    Forward,
    Center,
}

#[derive(Debug, Args)]
pub struct PointArgs {
    /// Built-in function.
    #[arg(long = "fn", value_enum)]
    pub func: FnName,
    /// Differentiation mode.
    #[arg(long, value_enum, default_value_t = Mode::Reverse)]
    pub mode: Mode,
    /// Evaluation point, comma separated [default: the function's standard point].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub at: Option<Vec<f64>>,
    /// Finite-difference step for numeric mode [default: scaled sqrt/cbrt of machine epsilon].
    #[arg(long)]
    pub h: Option<f64>,
    /// Finite-difference scheme for numeric mode.
    #[arg(long, value_enum, default_value_t = Scheme::Center)]
    pub scheme: Scheme,
    /// Logistic map iterations (1 to 4).
    #[arg(long, default_value_t = 4)]
    pub iters: usize,
    /// Helmholtz dimension when no point is given.
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    /// Helmholtz instance seed [default: 42, or ADKIT_SEED].
    #[arg(long, env = "ADKIT_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DemoKind {
    /// Gradient descent (`iter,f,grad_norm`).
    Gd,
    /// Newton's method with step halving (`iter,f,grad_norm`).
    Newton,
    /// 2-2-1 sigmoid network on XOR (`epoch,loss`).
    Mlp,
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(value_enum)]
    pub kind: DemoKind,
    /// Objective for gd and newton.
    #[arg(long = "fn", value_enum, default_value_t = FnName::Rosenbrock)]
    pub func: FnName,
    /// Gradient mode for gd.
    #[arg(long, value_enum, default_value_t = Mode::Reverse)]
    pub mode: Mode,
    /// Step size [default: 1e-3 for gd, 1 for newton, 0.5 for mlp].
    #[arg(long)]
    pub eta: Option<f64>,
    /// Iterations or epochs [default: 1000 for gd, 50 for newton, 5000 for mlp].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Stop when the infinity norm of the gradient falls below this.
    #[arg(long, default_value_t = 1e-10)]
    pub grad_tol: f64,
    /// Starting point [default: the function's standard point].
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub x0: Option<Vec<f64>>,
    /// Seed for mlp initialization or the Helmholtz instance [default: 7 for mlp, 42 otherwise; ADKIT_SEED overrides].
    #[arg(long, env = "ADKIT_SEED")]
    pub seed: Option<u64>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// A runtime failure together with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<AdError> for Failure {
    fn from(e: AdError) -> Self {
        let code = match e {
            AdError::Dimension { .. } | AdError::InvalidArgument(_) => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            // help and version go to stdout with status 0
            let sink: &mut dyn Write = if code == 0 { out } else { err };
            let _ = sink.write_all(text.as_bytes());
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(f) => {
            let _ = writeln!(err, "error: {}", f.message);
            f.code
        }
    }
}

/// Formats `x` with 12 significant digits in `%g` style; exact ties round
/// to even.
pub fn fmt_g(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mant, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let (sign, mant) = match mant.strip_prefix('-') {
        Some(m) => ("-", m),
        None => ("", mant),
    };
    let digits: String = mant.chars().filter(|c| c.is_ascii_digit()).collect();
    if !(-4..DIGITS).contains(&exp) {
        let m = trim_fraction(&format!("{}.{}", &digits[..1], &digits[1..]));
        let es = if exp < 0 { '-' } else { '+' };
        format!("{sign}{m}e{es}{:02}", exp.abs())
    } else if exp < 0 {
        let zeros = "0".repeat((-exp - 1) as usize);
        format!("{sign}{}", trim_fraction(&format!("0.{zeros}{digits}")))
    } else {
        let split = exp as usize + 1;
        format!(
            "{sign}{}",
            trim_fraction(&format!("{}.{}", &digits[..split], &digits[split..]))
        )
    }
}

fn trim_fraction(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| fmt_g(*x)).collect::<Vec<_>>().join(",")
}

fn resolve_seed(seed: Option<u64>, default: u64) -> u64 {
    seed.unwrap_or(default)
}

/// A built-in objective selected on the command line.
enum Builtin {
    Example(ExampleFn),
    Logistic(Logistic),
    Helmholtz(Helmholtz),
    Rosenbrock(Rosenbrock),
    Quadratic(Quadratic),
}

macro_rules! with_objective {
    ($b:expr, $o:ident => $body:expr) => {
        match $b {
            Builtin::Example($o) => $body,
            Builtin::Logistic($o) => $body,
            Builtin::Helmholtz($o) => $body,
            Builtin::Rosenbrock($o) => $body,
            Builtin::Quadratic($o) => $body,
        }
    };
}

/// Builds the objective and its evaluation point, checking arity.
fn select(
    func: FnName,
    at: Option<Vec<f64>>,
    iters: usize,
    n: usize,
    seed: Option<u64>,
) -> Result<(Builtin, Vec<f64>), Failure> {
    let seed = resolve_seed(seed, DEFAULT_SEED);
    let (b, default_point, arity): (Builtin, Vec<f64>, Option<usize>) = match func {
        FnName::Example => (Builtin::Example(ExampleFn), vec![2.0, 5.0], Some(2)),
        FnName::Logistic => {
            if !(1..=4).contains(&iters) {
                return Err(usage(format!("--iters must be in 1..=4, got {iters}")));
            }
            (Builtin::Logistic(Logistic { iterations: iters }), vec![0.2], Some(1))
        }
        FnName::Quadratic => (Builtin::Quadratic(Quadratic::standard()), vec![1.0; 3], Some(3)),
        FnName::Rosenbrock => {
            let dim = at.as_ref().map_or(2, Vec::len);
            if dim < 2 {
                return Err(usage(format!("rosenbrock takes at least 2 inputs, got {dim}")));
            }
            let mut start = vec![1.0; dim];
            start[0] = -1.2;
            (Builtin::Rosenbrock(Rosenbrock { n: dim }), start, None)
        }
        FnName::Helmholtz => {
            let dim = at.as_ref().map_or(n, Vec::len);
            if dim == 0 {
                return Err(usage("helmholtz takes at least 1 input"));
            }
            let spec = helmholtz_make(dim, seed)?;
            let start = spec.standard_point();
            (Builtin::Helmholtz(Helmholtz(spec)), start, None)
        }
    };
    let point = at.unwrap_or(default_point);
    if let Some(k) = arity {
        if point.len() != k {
            return Err(usage(format!(
                "{} takes {k} inputs, got {}",
                with_objective!(&b, o => o.name()),
                point.len()
            )));
        }
    }
    Ok((b, point))
}

fn gradient<O: Objective>(obj: &O, x: &[f64], args: &PointArgs) -> Result<(f64, Vec<f64>), Failure> {
    match args.mode {
        Mode::Numeric => {
            let kind = match args.scheme {
                Scheme::Forward => DiffKind::Forward,
                Scheme::Center => DiffKind::Center,
            };
            let scheme = DiffScheme::new(kind, args.h)?;
            let (g, _) = grad_numeric(|p| obj.eval(p), x, scheme)?;
            Ok((obj.eval(x)?, g))
        }
        m => Ok(value_and_grad(obj, x, m.into())?),
    }
}

fn open_out<'a>(path: &Option<PathBuf>, out: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>, Failure> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).map_err(|e| Failure {
            code: 1,
            message: format!("{}: {e}", p.display()),
        })?),
        None => Box::new(out),
    })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn write_trajectory<W: Write>(w: W, traj: &[Iterate]) -> Result<(), Failure> {
    let mut wr = csv_writer(w);
    wr.write_record(["iter", "f", "grad_norm"])?;
    for it in traj {
        wr.write_record([it.iter.to_string(), fmt_g(it.f), fmt_g(it.grad_norm)])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<(), Failure> {
    match cmd {
        Command::Grad(args) => {
            let (b, x) = select(args.func, args.at.clone(), args.iters, args.n, args.seed)?;
            let (y, g) = with_objective!(&b, o => gradient(o, &x, &args))?;
            writeln!(out, "y={}", fmt_g(y))?;
            writeln!(out, "grad={}", join(&g))?;
        }
        Command::Jacobian(args) => {
            let (b, x) = select(args.func, args.at.clone(), args.iters, args.n, args.seed)?;
            let (y, rows) = with_objective!(&b, o => {
                let y = o.eval(&x)?;
                let rows = match args.mode {
                    Mode::Forward => jacobian_forward(|p| Ok(vec![o.eval(p)?]), &x)?,
                    Mode::Reverse => jacobian_reverse(|p| Ok(vec![o.eval(p)?]), &x)?,
                    Mode::Numeric => vec![gradient(o, &x, &args)?.1],
                };
                (y, rows)
            });
            writeln!(out, "y={}", fmt_g(y))?;
            let rows: Vec<String> = rows.iter().map(|r| join(r)).collect();
            writeln!(out, "jacobian={}", rows.join(";"))?;
        }
        Command::Hvp { point, dir } => {
            let (b, x) = select(point.func, point.at.clone(), point.iters, point.n, point.seed)?;
            if dir.len() != x.len() {
                return Err(usage(format!(
                    "--dir has {} entries, the point has {}",
                    dir.len(),
                    x.len()
                )));
            }
            let (y, hv) = with_objective!(&b, o => (o.eval(&x)?, hvp(|p| o.eval(p), &x, &dir)?));
            writeln!(out, "y={}", fmt_g(y))?;
            writeln!(out, "hvp={}", join(&hv))?;
        }
        Command::Errcurve {
            x0,
            h_min,
            h_max,
            points,
            out: path,
        } => {
            let grid = log_grid(h_min, h_max, points)?;
            let rows = error_curve(x0, &grid)?;
            let mut wr = csv_writer(open_out(&path, out)?);
            wr.write_record(["h", "e_forward", "e_center"])?;
            for r in rows {
                wr.write_record([fmt_g(r.h), fmt_g(r.e_forward), fmt_g(r.e_center)])?;
            }
            wr.flush()?;
        }
        Command::Helmholtz {
            n_list,
            seed,
            reps,
            no_time,
            out: path,
        } => {
            if n_list.contains(&0) {
                return Err(usage("--n-list entries must be at least 1"));
            }
            let cfg = BenchConfig {
                n_list,
                seed: resolve_seed(seed, DEFAULT_SEED),
                reps,
                timed: !no_time,
            };
            let records = benchmark_helmholtz(&cfg)?;
            let mut wr = csv_writer(open_out(&path, out)?);
            wr.write_record(adkit::bench::CSV_HEADER.split(','))?;
            for r in records {
                let mut row = vec![r.n.to_string()];
                row.extend(r.csv_fields().iter().map(|v| fmt_g(*v)));
                wr.write_record(row)?;
            }
            wr.flush()?;
        }
        Command::Demo(args) => demo(args, out)?,
    }
    Ok(())
}

fn demo(args: DemoArgs, out: &mut dyn Write) -> Result<(), Failure> {
    match args.kind {
        DemoKind::Mlp => {
            let curve = mlp_train(
                resolve_seed(args.seed, MLP_SEED),
                args.eta.unwrap_or(0.5),
                args.iters.unwrap_or(5000),
            )?;
            let mut wr = csv_writer(open_out(&args.out, out)?);
            wr.write_record(["epoch", "loss"])?;
            for (k, l) in curve.iter().enumerate() {
                wr.write_record([k.to_string(), fmt_g(*l)])?;
            }
            wr.flush()?;
        }
        DemoKind::Gd | DemoKind::Newton => {
            let (b, x0) = select(args.func, args.x0.clone(), 4, 2, args.seed)?;
            let traj = if args.kind == DemoKind::Gd {
                let cfg = GdConfig {
                    eta: args.eta.unwrap_or(1e-3),
                    max_iters: args.iters.unwrap_or(1000),
                    grad_tol: args.grad_tol,
                    mode: args.mode.into(),
                    backtrack: false,
                };
                with_objective!(&b, o => gradient_descent(o, &x0, &cfg))?
            } else {
                let cfg = NewtonConfig {
                    eta: args.eta.unwrap_or(1.0),
                    max_iters: args.iters.unwrap_or(50),
                    grad_tol: args.grad_tol,
                    backtrack: true,
                };
                with_objective!(&b, o => newton(o, &x0, &cfg))?
            };
            write_trajectory(open_out(&args.out, out)?, &traj)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn g_format() {
        assert_eq!(fmt_g(11.652062987246), "11.6520629872");
        assert_eq!(fmt_g(5.5), "5.5");
        assert_eq!(fmt_g(1.0), "1");
        assert_eq!(fmt_g(-0.5), "-0.5");
        assert_eq!(fmt_g(1e-14), "1e-14");
        assert_eq!(fmt_g(0.0001), "0.0001");
        assert_eq!(fmt_g(0.00001234), "1.234e-05");
        assert_eq!(fmt_g(123456789012.0), "123456789012");
        assert_eq!(fmt_g(1234567890123.0), "1.23456789012e+12");
        assert_eq!(fmt_g(0.0), "0");
        assert_eq!(fmt_g(f64::NAN), "nan");
        assert_eq!(fmt_g(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn g_format_ties_to_even() {
        // exact binary ties one digit past the 12th significant digit
        assert_eq!(fmt_g(100000000000.5), "100000000000");
        assert_eq!(fmt_g(100000000001.5), "100000000002");
        assert_eq!(fmt_g(-100000000002.5), "-100000000002");
    }

    #[test]
    fn arity_errors_are_usage_errors() {
        let err = select(FnName::Example, Some(vec![2.0]), 4, 2, None).err().unwrap();
        assert_eq!(err.code, 2);
        let err = select(FnName::Rosenbrock, Some(vec![2.0]), 4, 2, None).err().unwrap();
        assert_eq!(err.code, 2);
        assert!(select(FnName::Logistic, None, 5, 2, None).is_err());
    }

    #[test]
    fn scalar_objectives_evaluate() {
        let (b, x) = select(FnName::Helmholtz, None, 4, 3, Some(1)).unwrap();
        assert_eq!(x.len(), 3);
        let y: f64 = with_objective!(&b, o => o.eval(&x)).unwrap();
        assert!(y.is_finite());
    }
}
