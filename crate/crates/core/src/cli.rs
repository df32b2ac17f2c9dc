//! `casimir` command-line front end.
//!
//! Lengths are given in the same unit as `--Lx` (default 1) and rescaled internally to
//! `Lx = 1`; energies come out in `hbar c / Lx^3`, forces in `hbar c / Lx^4`.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::analytic::{de_correction, perturbative_energy_second, pfa_energy};
use crate::engine::{converge_in_m, configure_threads, CasimirResult, ConvergeSpec, Engine, Geometry, Placement, QuadratureSpec};
use crate::error::Error;
use crate::qep::{eigen_table, modal_analysis, DEFAULT_MATCH_TOL};
use crate::spectral::{GratingProfile, Polarization, SpectralPoint};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 2;
pub const EXIT_UNCONVERGED: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "casimir", version, about = "Casimir energies and forces between periodic gratings (C method)")]
pub struct Cli {
    /// key=value file with defaults for any flag (flags win)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub output: Option<Format>,
    /// write the table here instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Energy per area
    Energy(Params),
    /// Lateral and normal force per area, optionally swept over b
    Force(Params),
    /// Eigenvalues of the modal problem at one (kappa, kx) node
    Eig(Params),
    /// Numeric energy next to PFA+DE and perturbative references
    Compare(Params),
    /// Value at M = M_start, M_start+5, ... with the convergence flag
    Converge(Params),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Params {
    /// amplitude of the (first) sinusoidal grating
    #[arg(long)]
    pub a: Option<f64>,
    /// amplitude of a second, facing sinusoidal grating (plate if absent)
    #[arg(long)]
    pub a2: Option<f64>,
    #[arg(long)]
    pub d: Option<f64>,
    /// lateral displacement of the second grating
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long = "Lx")]
    pub lx: Option<f64>,
    /// Fourier truncation M (N = 2M+1)
    #[arg(long = "M")]
    pub m: Option<usize>,
    /// increase M in steps of 5 until the relative change is below 1e-3
    #[arg(long)]
    pub converge: bool,
    /// exit with status 3 when a result is not converged
    #[arg(long)]
    pub strict: bool,
    /// largest M tried by --converge
    #[arg(long = "M-max")]
    pub m_max: Option<usize>,
    /// number of equally spaced b values in [0, Lx) for `force`
    #[arg(long = "b-sweep")]
    pub b_sweep: Option<usize>,
    /// comma-separated a/d values for `compare`
    #[arg(long = "a-over-d", value_delimiter = ',')]
    pub a_over_d: Option<Vec<f64>>,
    /// comma-separated d values for `compare` at fixed --a
    #[arg(long = "d-list", value_delimiter = ',')]
    pub d_list: Option<Vec<f64>>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub kx: Option<f64>,
    #[arg(long = "n-kappa")]
    pub n_kappa: Option<usize>,
    #[arg(long = "n-kx")]
    pub n_kx: Option<usize>,
    #[arg(long = "rel-tol")]
    pub rel_tol: Option<f64>,
    #[arg(long = "match-tol")]
    pub match_tol: Option<f64>,
}

/// Flat `key = value` configuration; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<HashMap<String, String>, String> {
    let mut map = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", no + 1))?;
        map.insert(k.trim().trim_start_matches("--").to_string(), v.trim().to_string());
    }
    Ok(map)
}

fn from_file<T: FromStr>(file: &HashMap<String, String>, keys: &[&str]) -> Result<Option<T>, String> {
    for k in keys {
        if let Some(v) = file.get(*k) {
            return v.parse().map(Some).map_err(|_| format!("config: cannot parse {k}={v}"));
        }
    }
    Ok(None)
}

fn list_from_file(file: &HashMap<String, String>, key: &str) -> Result<Option<Vec<f64>>, String> {
    match file.get(key) {
        None => Ok(None),
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| format!("config: cannot parse {key}={v}")))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
    }
}

impl Params {
    /// Fill every unset flag from the config file.
    pub fn merged(mut self, file: &HashMap<String, String>) -> Result<Self, String> {
        macro_rules! fill {
            ($field:ident, $($key:literal),+) => {
                if self.$field.is_none() {
                    self.$field = from_file(file, &[$($key),+])?;
                }
            };
        }
        fill!(a, "a");
        fill!(a2, "a2");
        fill!(d, "d");
        fill!(b, "b");
        fill!(lx, "Lx", "lx");
        fill!(m, "M", "m");
        fill!(m_max, "M-max", "M_max", "m_max");
        fill!(b_sweep, "b-sweep", "b_sweep");
        fill!(kappa, "kappa");
        fill!(kx, "kx");
        fill!(n_kappa, "n-kappa", "n_kappa");
        fill!(n_kx, "n-kx", "n_kx");
        fill!(rel_tol, "rel-tol", "rel_tol");
        fill!(match_tol, "match-tol", "match_tol");
        if self.a_over_d.is_none() {
            self.a_over_d = list_from_file(file, "a-over-d")?.or(list_from_file(file, "a_over_d")?);
        }
        if self.d_list.is_none() {
            self.d_list = list_from_file(file, "d-list")?.or(list_from_file(file, "d_list")?);
        }
        if !self.converge {
            self.converge = from_file::<bool>(file, &["converge"])?.unwrap_or(false);
        }
        if !self.strict {
            self.strict = from_file::<bool>(file, &["strict"])?.unwrap_or(false);
        }
        Ok(self)
    }

    fn lx(&self) -> f64 {
        self.lx.unwrap_or(1.0)
    }

    /// A length rescaled to units of Lx.
    fn len(&self, v: Option<f64>, default: f64) -> f64 {
        v.unwrap_or(default) / self.lx()
    }

    fn engine(&self) -> Engine {
        let q = QuadratureSpec::default();
        Engine {
            quad: QuadratureSpec {
                n_kappa: self.n_kappa.unwrap_or(q.n_kappa),
                n_kx: self.n_kx.unwrap_or(q.n_kx),
                rel_tol: self.rel_tol.unwrap_or(q.rel_tol),
                ..q
            },
            match_tol: self.match_tol.unwrap_or(DEFAULT_MATCH_TOL),
            ..Engine::default()
        }
    }

    fn converge_spec(&self) -> ConvergeSpec {
        ConvergeSpec { m_start: self.m.unwrap_or(1), m_max: self.m_max.unwrap_or(30), ..ConvergeSpec::default() }
    }
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_domain() { EXIT_DOMAIN } else { EXIT_SOLVER };
        CliError { code, message: e.to_string() }
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError { code: EXIT_DOMAIN, message: msg.into() }
}

/// Emits rows as CSV (header from the first row) or JSON lines.
struct Sink {
    format: Format,
    csv: Option<csv::Writer<Box<dyn Write>>>,
    raw: Option<Box<dyn Write>>,
}

impl Sink {
    fn new(format: Format, out: Box<dyn Write>) -> Self {
        match format {
            Format::Csv => Sink { format, csv: Some(csv::Writer::from_writer(out)), raw: None },
            Format::Json => Sink { format, csv: None, raw: Some(out) },
        }
    }

    fn row<T: Serialize>(&mut self, row: &T) -> Result<(), CliError> {
        let io_err = |e: String| CliError { code: EXIT_SOLVER, message: format!("output: {e}") };
        match self.format {
            Format::Csv => self.csv.as_mut().expect("csv sink").serialize(row).map_err(|e| io_err(e.to_string())),
            Format::Json => {
                let mut v = serde_json::to_value(row).map_err(|e| io_err(e.to_string()))?;
                v.as_object_mut().expect("rows are structs").insert("schema_version".into(), SCHEMA_VERSION.into());
                let w = self.raw.as_mut().expect("json sink");
                writeln!(w, "{v}").map_err(|e| io_err(e.to_string()))
            }
        }
    }

    fn finish(mut self) -> Result<(), CliError> {
        let res = match (self.csv.as_mut(), self.raw.as_mut()) {
            (Some(c), _) => c.flush(),
            (_, Some(r)) => r.flush(),
            _ => Ok(()),
        };
        res.map_err(|e| CliError { code: EXIT_SOLVER, message: format!("output: {e}") })
    }
}

#[derive(Debug, Serialize)]
struct EnergyRow {
    a: f64,
    a2: Option<f64>,
    d: f64,
    b: f64,
    #[serde(rename = "Lx")]
    lx: f64,
    #[serde(rename = "M_used")]
    m_used: usize,
    converged: bool,
    #[serde(rename = "E_TM")]
    e_tm: f64,
    #[serde(rename = "E_TE")]
    e_te: f64,
    #[serde(rename = "E_total")]
    e_total: f64,
    #[serde(rename = "E_over_PFA")]
    e_over_pfa: Option<f64>,
    quad_err: f64,
}

#[derive(Debug, Serialize)]
struct ForceRow {
    a: f64,
    a2: f64,
    d: f64,
    b: f64,
    #[serde(rename = "Lx")]
    lx: f64,
    #[serde(rename = "M_used")]
    m_used: usize,
    converged: bool,
    #[serde(rename = "F_lat_TM")]
    f_lat_tm: f64,
    #[serde(rename = "F_lat_TE")]
    f_lat_te: f64,
    #[serde(rename = "F_lat")]
    f_lat: f64,
    #[serde(rename = "F_normal")]
    f_normal: f64,
    quad_err: f64,
}

#[derive(Debug, Serialize)]
struct CompareRow {
    a: f64,
    d: f64,
    #[serde(rename = "M_used")]
    m_used: usize,
    converged: bool,
    #[serde(rename = "E_TM")]
    e_tm: f64,
    #[serde(rename = "E_TE")]
    e_te: f64,
    #[serde(rename = "E_total")]
    e_total: f64,
    #[serde(rename = "E_PFA")]
    e_pfa: f64,
    #[serde(rename = "E_PFA_DE_TM")]
    e_pfa_de_tm: f64,
    #[serde(rename = "E_PFA_DE_TE")]
    e_pfa_de_te: f64,
    #[serde(rename = "dev_PFA_DE_TM")]
    dev_pfa_de_tm: f64,
    #[serde(rename = "dev_PFA_DE_TE")]
    dev_pfa_de_te: f64,
    #[serde(rename = "E_pert_TM")]
    e_pert_tm: f64,
    #[serde(rename = "E_pert_TE")]
    e_pert_te: f64,
    #[serde(rename = "dev_pert_TM")]
    dev_pert_tm: f64,
    #[serde(rename = "dev_pert_TE")]
    dev_pert_te: f64,
}

#[derive(Debug, Serialize)]
struct ConvergeRow {
    #[serde(rename = "M")]
    m: usize,
    value: f64,
    rel_change: Option<f64>,
    converged: bool,
}

/// Parse arguments, run, and return the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_DOMAIN } else { EXIT_OK };
        }
    };
    configure_threads();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

pub fn run(cli: Cli) -> Result<i32, CliError> {
    let file = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| usage(format!("config {}: {e}", p.display())))?;
            parse_config(&text).map_err(usage)?
        }
        None => HashMap::new(),
    };
    let format = match cli.output {
        Some(f) => f,
        None => match file.get("output").map(String::as_str) {
            Some("json") => Format::Json,
            Some("csv") | None => Format::Csv,
            Some(other) => return Err(usage(format!("config: unknown output format {other}"))),
        },
    };
    let out: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(io::BufWriter::new(fs::File::create(p).map_err(|e| usage(format!("{}: {e}", p.display())))?)),
        None => Box::new(io::BufWriter::new(io::stdout())),
    };
    let mut sink = Sink::new(format, out);
    let code = match cli.command {
        Command::Energy(p) => cmd_energy(&p.merged(&file).map_err(usage)?, &mut sink)?,
        Command::Force(p) => cmd_force(&p.merged(&file).map_err(usage)?, &mut sink)?,
        Command::Eig(p) => cmd_eig(&p.merged(&file).map_err(usage)?, &mut sink)?,
        Command::Compare(p) => cmd_compare(&p.merged(&file).map_err(usage)?, &mut sink)?,
        Command::Converge(p) => cmd_converge(&p.merged(&file).map_err(usage)?, &mut sink)?,
    };
    sink.finish()?;
    Ok(code)
}

fn geometry(p: &Params, a: f64, a2: Option<f64>, d: f64, b: f64) -> Result<Geometry, Error> {
    let g1 = GratingProfile::sinusoid(a, 1.0)?;
    match a2 {
        None => Geometry::plate_grating(g1, d),
        Some(a2) => Geometry::grating_grating(g1, GratingProfile::sinusoid(a2 / p.lx(), 1.0)?, d, b),
    }
}

fn energy_at(p: &Params, engine: &Engine, geom: &Geometry) -> Result<CasimirResult, Error> {
    if p.converge {
        Ok(converge_in_m(|m| engine.energy(geom, m), &p.converge_spec())?.result)
    } else {
        engine.energy(geom, p.m.unwrap_or(10))
    }
}

fn strict_code(p: &Params, all_converged: bool) -> i32 {
    if p.strict && !all_converged {
        EXIT_UNCONVERGED
    } else {
        EXIT_OK
    }
}

fn require(v: Option<f64>, name: &str) -> Result<f64, CliError> {
    v.ok_or_else(|| usage(format!("--{name} is required")))
}

fn cmd_energy(p: &Params, sink: &mut Sink) -> Result<i32, CliError> {
    let (a, d, b) = (p.len(p.a, 0.0), p.len(Some(require(p.d, "d")?), 0.0), p.len(p.b, 0.0));
    let a2 = p.a2.map(|v| v / p.lx());
    let geom = geometry(p, a, p.a2, d, b)?;
    let engine = p.engine();
    let r = energy_at(p, &engine, &geom)?;
    let e_over_pfa = match a2 {
        None => Some(r.value / pfa_energy(a, d)?),
        Some(_) => None,
    };
    sink.row(&EnergyRow {
        a,
        a2,
        d,
        b,
        lx: p.lx(),
        m_used: r.m_used,
        converged: r.converged,
        e_tm: r.per_polarization.tm,
        e_te: r.per_polarization.te,
        e_total: r.value,
        e_over_pfa,
        quad_err: r.quad_error_estimate,
    })?;
    Ok(strict_code(p, r.converged))
}

fn cmd_force(p: &Params, sink: &mut Sink) -> Result<i32, CliError> {
    let a = p.len(p.a, 0.0);
    let a2 = p.a2.map_or(a, |v| v / p.lx());
    let d = p.len(Some(require(p.d, "d")?), 0.0);
    let bs: Vec<f64> = match p.b_sweep {
        Some(0) => return Err(usage("--b-sweep needs at least one point")),
        Some(n) => (0..n).map(|i| i as f64 / n as f64).collect(),
        None => vec![p.len(p.b, 0.0)],
    };
    let geom = Geometry::grating_grating(GratingProfile::sinusoid(a, 1.0)?, GratingProfile::sinusoid(a2, 1.0)?, d, bs[0])?;
    let engine = p.engine();
    let placements: Vec<Placement> = bs.iter().map(|&b| Placement { d, b }).collect();
    // Reflection matrices do not depend on b: one pass serves the whole sweep.
    let run = |m: usize| engine.evaluate(&geom, &placements, m, true);
    let (obs, m_used, m_converged) = if p.converge {
        let spec = p.converge_spec();
        let mut last = None;
        let rep = converge_in_m(
            |m| {
                let o = run(m)?;
                // Track the sum of |F| over the sweep so that zeros at b = 0 do not stall the test.
                let norm: f64 = o.iter().map(|x| x.lateral_force.value.abs() + x.normal_force.value.abs()).sum();
                let r = CasimirResult { value: norm, ..o[0].lateral_force };
                last = Some(o);
                Ok(r)
            },
            &spec,
        )?;
        (last.expect("at least one evaluation"), rep.result.m_used, rep.result.converged)
    } else {
        let m = p.m.unwrap_or(10);
        (run(m)?, m, true)
    };
    let mut all = true;
    for (o, &b) in obs.iter().zip(&bs) {
        let converged = m_converged && o.lateral_force.converged && o.normal_force.converged;
        all &= converged;
        sink.row(&ForceRow {
            a,
            a2,
            d,
            b,
            lx: p.lx(),
            m_used,
            converged,
            f_lat_tm: o.lateral_force.per_polarization.tm,
            f_lat_te: o.lateral_force.per_polarization.te,
            f_lat: o.lateral_force.value,
            f_normal: o.normal_force.value,
            quad_err: o.lateral_force.quad_error_estimate.max(o.normal_force.quad_error_estimate),
        })?;
    }
    Ok(strict_code(p, all))
}

fn cmd_eig(p: &Params, sink: &mut Sink) -> Result<i32, CliError> {
    let a = p.len(p.a, 0.0);
    let kappa = require(p.kappa, "kappa")? * p.lx();
    let kx = require(p.kx, "kx")? * p.lx();
    let tol = p.match_tol.unwrap_or(DEFAULT_MATCH_TOL);
    let point = SpectralPoint::new(kappa, kx, p.m.unwrap_or(10), 1.0)?;
    let profile = GratingProfile::sinusoid(a, 1.0)?;
    let (_, sol, matching) = modal_analysis(&profile, &point, tol)?;
    for row in eigen_table(&sol, &point, &matching, tol) {
        sink.row(&row)?;
    }
    Ok(EXIT_OK)
}

fn cmd_compare(p: &Params, sink: &mut Sink) -> Result<i32, CliError> {
    let points: Vec<(f64, f64)> = match (&p.a_over_d, &p.d_list) {
        (Some(ratios), None) => {
            let d = p.len(Some(require(p.d, "d")?), 0.0);
            ratios.iter().map(|&r| (r * d, d)).collect()
        }
        (ratio, Some(ds)) => {
            let r = match ratio.as_deref() {
                Some([r]) => Some(*r),
                Some(_) => return Err(usage("with --d-list give at most one --a-over-d value")),
                None => None,
            };
            ds.iter()
                .map(|&dv| {
                    let d = dv / p.lx();
                    match r {
                        Some(r) => Ok((r * d, d)),
                        None => Ok((p.len(Some(require(p.a, "a")?), 0.0), d)),
                    }
                })
                .collect::<Result<_, CliError>>()?
        }
        (None, None) => vec![(p.len(p.a, 0.0), p.len(Some(require(p.d, "d")?), 0.0))],
    };
    let mut engine = p.engine();
    // Parallelism goes to the sweep; each point integrates serially.
    if points.len() > 1 {
        engine.parallel = false;
    }
    let rows: Vec<Result<CompareRow, Error>> = points
        .par_iter()
        .map(|&(a, d)| {
            let geom = geometry(p, a, None, d, 0.0)?;
            let r = energy_at(p, &engine, &geom)?;
            let pfa = pfa_energy(a, d)?;
            let de_tm = de_correction(Polarization::TM, a, d, 1.0)?;
            let de_te = de_correction(Polarization::TE, a, d, 1.0)?;
            let e2 = perturbative_energy_second(&GratingProfile::sinusoid(a, 1.0)?, d)?;
            let flat_half = pfa_energy(0.0, d)? / 2.0;
            let (e_pfa_de_tm, e_pfa_de_te) = (pfa / 2.0 + de_tm, pfa / 2.0 + de_te);
            let (e_pert_tm, e_pert_te) = (flat_half + e2.tm, flat_half + e2.te);
            let dev = |num: f64, reference: f64| num / reference - 1.0;
            Ok(CompareRow {
                a,
                d,
                m_used: r.m_used,
                converged: r.converged,
                e_tm: r.per_polarization.tm,
                e_te: r.per_polarization.te,
                e_total: r.value,
                e_pfa: pfa,
                e_pfa_de_tm,
                e_pfa_de_te,
                dev_pfa_de_tm: dev(r.per_polarization.tm, e_pfa_de_tm),
                dev_pfa_de_te: dev(r.per_polarization.te, e_pfa_de_te),
                e_pert_tm,
                e_pert_te,
                dev_pert_tm: dev(r.per_polarization.tm, e_pert_tm),
                dev_pert_te: dev(r.per_polarization.te, e_pert_te),
            })
        })
        .collect();
    let mut all = true;
    for row in rows {
        let row = row?;
        all &= row.converged;
        sink.row(&row)?;
    }
    Ok(strict_code(p, all))
}

fn cmd_converge(p: &Params, sink: &mut Sink) -> Result<i32, CliError> {
    let (a, d, b) = (p.len(p.a, 0.0), p.len(Some(require(p.d, "d")?), 0.0), p.len(p.b, 0.0));
    let geom = geometry(p, a, p.a2, d, b)?;
    let engine = p.engine();
    let rep = converge_in_m(|m| engine.energy(&geom, m), &p.converge_spec())?;
    let mut prev: Option<f64> = None;
    let n = rep.history.len();
    for (i, &(m, v)) in rep.history.iter().enumerate() {
        let rel_change = prev.map(|q| (v - q).abs() / q.abs());
        let converged = i + 1 == n && rep.result.converged;
        sink.row(&ConvergeRow { m, value: v, rel_change, converged })?;
        prev = Some(v);
    }
    if let Some(reason) = &rep.stopped_by {
        log::warn!("sweep stopped early: {reason}");
    }
    Ok(strict_code(p, rep.result.converged))
}
