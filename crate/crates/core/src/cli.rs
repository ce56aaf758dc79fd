//! The `haarlab` command line: configuration loading, subcommands and output files.
//!
//! A run reads an optional key-value config file (or a JSON manifest from an earlier
//! run), applies flag overrides, validates everything, and writes its outputs plus
//! `manifest.json` into the output directory. Exit codes: 0 success, 2 invalid
//! input, 3 a tolerance or agreement failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::parse_kv;
use crate::error::{invalid, Error, Result};
use crate::experiments::{
    agree, apply_operator, classify, fixed_battery, identity_suite, packet_n_list, rate_fit, region_scan, scan_csv,
    standard_battery, Fault, FitModel, OperatorSpec, ProbeSpec, ScanRow, ScanSetup, Tolerances,
};
use crate::generators::{unc_packet, weierstrass_packet, FractalKind, RademacherSigns};
use crate::grid::{GridField, GridSpec};
use crate::kernels::{KernelBank, DEFAULT_DELTA_MIN, LEVEL_GAP};
use crate::manifest::RunManifest;
use crate::norms::{LocalMeans, SmoothnessParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_TOLERANCE: i32 = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormChoice {
    Tl,
    Besov,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultChoice {
    None,
    Mask,
}

/// Everything a run needs. Every field maps to one config key.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub d: usize,
    pub j: u32,
    pub b: u32,
    /// Moment order; derived from (s, p, q, d) when absent.
    pub m: Option<u32>,
    pub delta_min: f64,
    pub s: f64,
    pub p: f64,
    pub q: f64,
    pub a: Option<f64>,
    /// Level truncation; `J − 4` when absent.
    pub k: Option<u32>,
    pub norm: NormChoice,
    pub n: u32,
    pub n_list: Vec<u32>,
    pub packet_n_list: Vec<u32>,
    pub model: Option<FitModel>,
    pub seed: u64,
    pub generator: String,
    pub input: Option<PathBuf>,
    pub operator: String,
    pub mask_a: f64,
    pub probes: String,
    pub tuples: Vec<(f64, f64, f64)>,
    pub draws: u32,
    pub tol: Tolerances,
    pub fault: FaultChoice,
    pub fractal_kind: FractalKind,
    pub fractal_j: u32,
    pub band: f64,
    pub level: u32,
    pub kappa: u32,
    pub sigma: u32,
    pub out: PathBuf,
}

/// Keys accepted in config files and `--set`.
pub const KEYS: &[&str] = &[
    "d",
    "J",
    "B",
    "M",
    "delta_min",
    "s",
    "p",
    "q",
    "A",
    "K",
    "norm",
    "N",
    "N_list",
    "packet_N_list",
    "model",
    "seed",
    "generator",
    "input",
    "operator",
    "mask_a",
    "probes",
    "tuples",
    "draws",
    "tol_power",
    "tol_exp",
    "tol_r2",
    "fault",
    "fractal_kind",
    "fractal_j",
    "band",
    "level",
    "kappa",
    "sigma",
    "out",
];

fn parse_val<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Parse(format!("bad value {v:?} for `{key}`")))
}

/// `2..10`, `8..40:4` or a comma list.
pub fn parse_n_list(v: &str) -> Result<Vec<u32>> {
    let v = v.trim();
    if let Some((a, rest)) = v.split_once("..") {
        let (b, step) = match rest.split_once(':') {
            Some((b, st)) => (b, parse_val::<usize>("N_list", st)?),
            None => (rest, 1),
        };
        let (a, b) = (parse_val::<u32>("N_list", a)?, parse_val::<u32>("N_list", b)?);
        if step == 0 || b < a {
            return Err(Error::Parse(format!("empty range {v:?}")));
        }
        return Ok((a..=b).step_by(step).collect());
    }
    v.split(',').map(|t| parse_val("N_list", t)).collect()
}

fn fmt_list(v: &[u32]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// `s,p,q; s,p,q; ...`
pub fn parse_tuples(v: &str) -> Result<Vec<(f64, f64, f64)>> {
    v.split(';')
        .filter(|t| !t.trim().is_empty())
        .map(|t| {
            let x: Vec<f64> = t.split(',').map(|c| parse_val("tuples", c)).collect::<Result<_>>()?;
            match x[..] {
                [s, p, q] => Ok((s, p, q)),
                _ => Err(Error::Parse(format!("tuple {t:?} needs three numbers"))),
            }
        })
        .collect()
}

fn fmt_tuples(v: &[(f64, f64, f64)]) -> String {
    v.iter().map(|(s, p, q)| format!("{s},{p},{q}")).collect::<Vec<_>>().join("; ")
}

fn fractal_name(k: FractalKind) -> &'static str {
    match k {
        FractalKind::F1Gj => "f1_gj",
        FractalKind::F1Gsum => "f1_gsum",
        FractalKind::F2Gj => "f2_gj",
        FractalKind::F2Gsum => "f2_gsum",
    }
}

fn default_n_list(d: usize, j: u32) -> Vec<u32> {
    let top = if d == 1 { 10 } else { 6 }.min(j.saturating_sub(LEVEL_GAP));
    (2..=top.max(2)).collect()
}

impl RunConfig {
    /// Build from key-value pairs; absent keys take their defaults.
    pub fn from_kv(kv: &BTreeMap<String, String>) -> Result<Self> {
        if let Some(k) = kv.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::Parse(format!("unknown config key `{k}`")));
        }
        let get = |k: &str| kv.get(k).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
        macro_rules! val {
            ($k:expr, $default:expr) => {
                match get($k) {
                    Some(v) => parse_val($k, &v)?,
                    None => $default,
                }
            };
        }
        let d: usize = val!("d", 1);
        let j: u32 = val!("J", 14);
        let s: f64 = val!("s", 1.0);
        let p: f64 = val!("p", 0.8);
        let q: f64 = val!("q", 1.0);
        let model = match get("model").as_deref() {
            None | Some("auto") => None,
            Some(m) => Some(m.parse()?),
        };
        let norm = match get("norm").as_deref() {
            None | Some("tl") => NormChoice::Tl,
            Some("besov") => NormChoice::Besov,
            Some(o) => return Err(Error::Parse(format!("unknown norm {o:?}"))),
        };
        let fault = match get("fault").as_deref() {
            None | Some("none") => FaultChoice::None,
            Some("mask") => FaultChoice::Mask,
            Some(o) => return Err(Error::Parse(format!("unknown fault {o:?}"))),
        };
        let def_tol = Tolerances::default();
        let cfg = Self {
            d,
            j,
            b: val!("B", 2),
            m: get("M").map(|v| parse_val("M", &v)).transpose()?,
            delta_min: val!("delta_min", DEFAULT_DELTA_MIN),
            s,
            p,
            q,
            a: get("A").map(|v| parse_val("A", &v)).transpose()?,
            k: get("K").map(|v| parse_val("K", &v)).transpose()?,
            norm,
            n: val!("N", 4),
            n_list: match get("N_list") {
                Some(v) => parse_n_list(&v)?,
                None => default_n_list(d, j),
            },
            packet_n_list: match get("packet_N_list") {
                Some(v) => parse_n_list(&v)?,
                None => packet_n_list(),
            },
            model,
            seed: val!("seed", 1),
            generator: get("generator").unwrap_or_else(|| "density_failure".into()),
            input: get("input").map(PathBuf::from),
            operator: get("operator").unwrap_or_else(|| "en".into()),
            mask_a: val!("mask_a", 1.0),
            probes: get("probes").unwrap_or_else(|| "standard".into()),
            tuples: match get("tuples") {
                Some(v) => parse_tuples(&v)?,
                None => vec![(s, p, q)],
            },
            draws: val!("draws", 16),
            tol: Tolerances {
                power: val!("tol_power", def_tol.power),
                exponential: val!("tol_exp", def_tol.exponential),
                r2: val!("tol_r2", def_tol.r2),
            },
            fault,
            fractal_kind: match get("fractal_kind") {
                Some(v) => v.parse()?,
                None => FractalKind::F1Gsum,
            },
            fractal_j: val!("fractal_j", 3),
            band: val!("band", 4.0),
            level: val!("level", 2),
            kappa: val!("kappa", 1),
            sigma: val!("sigma", 1),
            out: PathBuf::from(get("out").unwrap_or_else(|| "out".into())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// All keys except `out`, which does not affect results.
    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("d", self.d.to_string());
        put("J", self.j.to_string());
        put("B", self.b.to_string());
        put("M", self.m.map_or(String::new(), |v| v.to_string()));
        put("delta_min", self.delta_min.to_string());
        put("s", self.s.to_string());
        put("p", self.p.to_string());
        put("q", self.q.to_string());
        put("A", self.a.map_or(String::new(), |v| v.to_string()));
        put("K", self.k.map_or(String::new(), |v| v.to_string()));
        put("norm", if self.norm == NormChoice::Tl { "tl" } else { "besov" }.into());
        put("N", self.n.to_string());
        put("N_list", fmt_list(&self.n_list));
        put("packet_N_list", fmt_list(&self.packet_n_list));
        put(
            "model",
            match self.model {
                None => "auto",
                Some(FitModel::Power) => "power",
                Some(FitModel::Exponential) => "exp",
            }
            .into(),
        );
        put("seed", self.seed.to_string());
        put("generator", self.generator.clone());
        put("input", self.input.as_ref().map_or(String::new(), |p| p.display().to_string()));
        put("operator", self.operator.clone());
        put("mask_a", self.mask_a.to_string());
        put("probes", self.probes.clone());
        put("tuples", fmt_tuples(&self.tuples));
        put("draws", self.draws.to_string());
        put("tol_power", self.tol.power.to_string());
        put("tol_exp", self.tol.exponential.to_string());
        put("tol_r2", self.tol.r2.to_string());
        put("fault", if self.fault == FaultChoice::Mask { "mask" } else { "none" }.into());
        put("fractal_kind", fractal_name(self.fractal_kind).into());
        put("fractal_j", self.fractal_j.to_string());
        put("band", self.band.to_string());
        put("level", self.level.to_string());
        put("kappa", self.kappa.to_string());
        put("sigma", self.sigma.to_string());
        m
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::new(self.d, self.j, self.b)
    }

    pub fn k_cap(&self) -> u32 {
        self.j.saturating_sub(LEVEL_GAP)
    }

    /// Norm parameters for one tuple, honouring `A`, `M` and `K` overrides.
    pub fn params(&self, s: f64, p: f64, q: f64) -> Result<SmoothnessParams> {
        let k = self.k.unwrap_or(self.k_cap());
        let mut prm = SmoothnessParams::new(s, p, q, self.d, k)?;
        if let Some(a) = self.a {
            prm.a = a;
        }
        if let Some(m) = self.m {
            prm.m = m;
        }
        prm.validate(self.d)?;
        Ok(prm)
    }

    pub fn validate(&self) -> Result<()> {
        let spec = self.spec()?;
        if !matches!(self.d, 1 | 2) {
            return Err(invalid(format!("d = {} is not supported (1 or 2)", self.d)));
        }
        let cap = self.k_cap();
        if let Some(k) = self.k {
            if k > cap {
                return Err(Error::ResolutionTooCoarse(format!("K = {k} exceeds J − {LEVEL_GAP} = {cap}")));
            }
        }
        if self.n + 2 > spec.j {
            return Err(Error::LevelTooFine { k: self.n, j: spec.j });
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n > cap) {
            return Err(invalid(format!("N_list must be non-empty with N <= {cap}")));
        }
        if self.tuples.is_empty() {
            return Err(invalid("no tuples"));
        }
        if !(self.delta_min > 0.0) || !(self.band > 0.0) || self.draws == 0 {
            return Err(invalid("delta_min, band and draws must be positive"));
        }
        if !(-1.0..=1.0).contains(&self.mask_a) {
            return Err(Error::MaskOutOfRange { value: self.mask_a });
        }
        if !matches!(self.probes.as_str(), "standard" | "fixed") {
            return Err(invalid(format!("unknown probe family {:?}", self.probes)));
        }
        self.operator()?;
        self.params(self.s, self.p, self.q)?;
        for &(s, p, q) in &self.tuples {
            if !(p > 0.0 && q > 0.0 && s.is_finite()) {
                return Err(invalid(format!("tuple ({s}, {p}, {q}) is not valid")));
            }
        }
        Ok(())
    }

    pub fn operator(&self) -> Result<OperatorSpec> {
        Ok(match self.operator.as_str() {
            "identity" => OperatorSpec::Identity,
            "en" => OperatorSpec::En,
            "tn" => OperatorSpec::Tn { a: self.mask_a },
            "sr" => OperatorSpec::Sr,
            "pe" => OperatorSpec::Pe { seed: self.seed },
            o => return Err(invalid(format!("unknown operator {o:?}"))),
        })
    }

    pub fn moment_order(&self, s: f64, p: f64, q: f64) -> Result<u32> {
        Ok(self.params(s, p, q)?.m)
    }

    pub fn bank(&self, m: u32) -> Result<KernelBank> {
        KernelBank::build(m, self.spec()?, self.delta_min)
    }

    pub fn battery(&self) -> Vec<ProbeSpec> {
        if self.probes == "fixed" {
            fixed_battery(self.d, self.seed)
        } else {
            standard_battery(self.d, self.seed)
        }
    }

    /// The input field: a binary file from `input`, or the named generator.
    pub fn field(&self, bank: &KernelBank) -> Result<GridField> {
        if let Some(path) = &self.input {
            let mut f = GridField::read_binary(path)?;
            if f.spec != bank.spec {
                return Err(invalid("input field grid differs from the configured grid"));
            }
            if f.margin.is_none() {
                f.refresh_margin();
            }
            return Ok(f);
        }
        let spec = bank.spec;
        let probe = match self.generator.as_str() {
            "zero" => return Ok(GridField::zeros(spec)),
            "weierstrass" => {
                return weierstrass_packet(self.n, &RademacherSigns::new(self.seed), spec);
            }
            "unc" => return unc_packet(self.kappa, self.sigma, self.n, spec),
            "density_failure" => ProbeSpec::DensityFailure,
            "fractal" => ProbeSpec::Fractal { kind: self.fractal_kind, j: self.fractal_j },
            "random" => ProbeSpec::RandomBandLimited { band: self.band, seed: self.seed },
            "cell_constant" => ProbeSpec::CellConstant { level: self.level, seed: self.seed },
            "counterexample" => ProbeSpec::Counterexample { q: self.q, n_draws: self.draws, seed: self.seed },
            g => return Err(invalid(format!("unknown generator {g:?}"))),
        };
        probe.build(self.n, bank)
    }
}

#[derive(Parser, Debug)]
#[command(name = "haarlab", version, about = "Haar system and smoothness-norm experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Triebel–Lizorkin (or Besov) norm of a field.
    Norm,
    /// Apply E_N, T_N, S_R or P_E to a field and export the result.
    Avg,
    /// Emit a generated field.
    Gen,
    /// Growth of ‖E_N‖ for one (s, p, q) tuple.
    Rate,
    /// Growth of ‖E_N‖ over a list of tuples, with region verdicts.
    Scan,
    /// Exact identities of the Haar machinery.
    Check,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Norm => "norm",
            Command::Avg => "avg",
            Command::Gen => "gen",
            Command::Rate => "rate",
            Command::Scan => "scan",
            Command::Check => "check",
        }
    }
}

#[derive(clap::Args, Debug, Default)]
pub struct Flags {
    /// Key-value config file, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub seed: Option<String>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub d: Option<String>,
    #[arg(long = "J", global = true, allow_negative_numbers = true)]
    pub j: Option<String>,
    #[arg(long = "N", global = true, allow_negative_numbers = true)]
    pub n: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub s: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub p: Option<String>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub q: Option<String>,
    /// power, exp or auto.
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub model: Option<String>,
    /// Any other config key, as KEY=VALUE.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

/// Config file (or manifest) values overridden by flags.
pub fn load_config(flags: &Flags) -> Result<RunConfig> {
    let mut kv = match &flags.config {
        Some(path) if path.extension().is_some_and(|e| e == "json") => {
            let m = RunManifest::read(path)?;
            if !m.verify() {
                return Err(Error::Parse(format!("manifest {} fails its hash check", path.display())));
            }
            m.config
        }
        Some(path) => parse_kv(&fs::read_to_string(path)?)?,
        None => BTreeMap::new(),
    };
    for item in &flags.set {
        let (k, v) = item.split_once('=').ok_or_else(|| Error::Parse(format!("--set {item:?} needs KEY=VALUE")))?;
        kv.insert(k.trim().to_string(), v.trim().to_string());
    }
    let pairs = [
        ("seed", &flags.seed),
        ("d", &flags.d),
        ("J", &flags.j),
        ("N", &flags.n),
        ("s", &flags.s),
        ("p", &flags.p),
        ("q", &flags.q),
        ("model", &flags.model),
    ];
    for (k, v) in pairs {
        if let Some(v) = v {
            kv.insert(k.into(), v.clone());
        }
    }
    if let Some(o) = &flags.out {
        kv.insert("out".into(), o.display().to_string());
    }
    RunConfig::from_kv(&kv)
}

/// Result of a subcommand: exit code, one-line summary and the files written.
#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub summary: String,
    pub files: Vec<PathBuf>,
}

struct Writer {
    dir: PathBuf,
    files: Vec<PathBuf>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: Vec::new() })
    }

    fn text(&mut self, name: &str, body: &str) -> Result<()> {
        let p = self.dir.join(name);
        fs::write(&p, body)?;
        self.files.push(p);
        Ok(())
    }

    fn field(&mut self, base: &str, f: &GridField, hash: &str) -> Result<()> {
        let p = self.dir.join(base);
        f.write_binary(&p, Some(hash))?;
        self.files.push(p.with_extension("bin"));
        self.files.push(p.with_extension("hdr"));
        if f.spec.d == 1 {
            let c = p.with_extension("csv");
            f.write_csv(&c, Some(hash))?;
            self.files.push(c);
        }
        Ok(())
    }

    fn manifest(&mut self, m: &RunManifest) -> Result<()> {
        let p = self.dir.join("manifest.json");
        m.write(&p)?;
        self.files.push(p);
        Ok(())
    }
}

fn kernels_of(banks: &[&KernelBank]) -> BTreeMap<u32, String> {
    banks.iter().map(|b| (b.m_moments, b.hash())).collect()
}

/// Two-column plot data, one series per file.
fn plot_data(hash: &str, x: &str, y: &str, pts: &[(f64, f64)]) -> String {
    let mut s = format!("# manifest = {hash}\n# {x} {y}\n");
    for (a, b) in pts {
        let _ = writeln!(s, "{a} {b:e}");
    }
    s
}

pub fn cmd_norm(cfg: &RunConfig) -> Result<Outcome> {
    let bank = cfg.bank(cfg.moment_order(cfg.s, cfg.p, cfg.q)?)?;
    let prm = cfg.params(cfg.s, cfg.p, cfg.q)?;
    let man = RunManifest::new("norm", cfg.to_kv(), kernels_of(&[&bank]));
    let f = cfg.field(&bank)?;
    let lm = LocalMeans::compute(&f, prm.k, &bank)?;
    let rep = match cfg.norm {
        NormChoice::Tl => lm.tl(&prm)?,
        NormChoice::Besov => lm.besov(&prm)?,
    };
    let mut w = Writer::new(&cfg.out)?;
    w.text("norm.csv", &rep.to_csv(Some(man.short_hash())))?;
    w.manifest(&man)?;
    Ok(Outcome { code: EXIT_OK, summary: format!("norm = {:e}", rep.value), files: w.files })
}

pub fn cmd_avg(cfg: &RunConfig) -> Result<Outcome> {
    let bank = cfg.bank(cfg.moment_order(cfg.s, cfg.p, cfg.q)?)?;
    let man = RunManifest::new("avg", cfg.to_kv(), kernels_of(&[&bank]));
    let f = cfg.field(&bank)?;
    let g = apply_operator(&cfg.operator()?, &f, cfg.n)?;
    let mut w = Writer::new(&cfg.out)?;
    w.field("avg", &g, man.short_hash())?;
    w.manifest(&man)?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: format!("{} at N = {}: max |g| = {:e}", cfg.operator, cfg.n, g.max_abs()),
        files: w.files,
    })
}

pub fn cmd_gen(cfg: &RunConfig) -> Result<Outcome> {
    let bank = cfg.bank(cfg.moment_order(cfg.s, cfg.p, cfg.q)?)?;
    let man = RunManifest::new("gen", cfg.to_kv(), kernels_of(&[&bank]));
    let f = cfg.field(&bank)?;
    let mut w = Writer::new(&cfg.out)?;
    w.field("field", &f, man.short_hash())?;
    w.manifest(&man)?;
    Ok(Outcome {
        code: EXIT_OK,
        summary: format!("{}: {} samples, max |f| = {:e}", cfg.generator, f.len(), f.max_abs()),
        files: w.files,
    })
}

fn scan_setup(cfg: &RunConfig) -> Result<ScanSetup> {
    Ok(ScanSetup {
        spec: cfg.spec()?,
        n_list: cfg.n_list.clone(),
        packet_n_list: cfg.packet_n_list.clone(),
        probes: cfg.battery(),
        n_draws: cfg.draws,
        seed: cfg.seed,
        tol: cfg.tol,
    })
}

fn scan_banks(cfg: &RunConfig, tuples: &[(f64, f64, f64)]) -> Result<BTreeMap<u32, String>> {
    let mut out = BTreeMap::new();
    for &(s, p, q) in tuples {
        if let Ok(m) = cfg.moment_order(s, p, q) {
            if let std::collections::btree_map::Entry::Vacant(e) = out.entry(m) {
                e.insert(cfg.bank(m)?.hash());
            }
        }
    }
    Ok(out)
}

/// Refit with the requested model when it differs from the automatic one.
fn apply_model(rows: &mut [ScanRow], model: Option<FitModel>, d: usize, tol: &Tolerances) -> Result<()> {
    let Some(model) = model else { return Ok(()) };
    for r in rows.iter_mut() {
        if let Some(fit) = &r.fit {
            if fit.model != model {
                let refit = rate_fit(&fit.samples, model)?;
                let growth = classify(r.s, r.p, r.q, d).predicted_growth;
                r.agree = match growth.target() {
                    Some((m, _)) if m == model => agree(&refit, growth, tol),
                    _ => None,
                };
                r.fit = Some(refit);
            }
        }
    }
    Ok(())
}

fn scan_outcome(rows: &[ScanRow]) -> i32 {
    if rows.iter().any(|r| r.agree == Some(false) || r.error.is_some()) {
        EXIT_TOLERANCE
    } else {
        EXIT_OK
    }
}

fn row_summary(r: &ScanRow) -> String {
    match (&r.fit, &r.error) {
        (Some(f), _) => format!(
            "({}, {}, {}): predicted {}, {:?} exponent {:.4} (r2 {:.3}), agree {}",
            r.s,
            r.p,
            r.q,
            r.verdict.predicted_growth.label(),
            f.model,
            f.exponent,
            f.r2,
            r.agree.map_or("n/a".to_string(), |a| a.to_string())
        ),
        (None, Some(e)) => format!("({}, {}, {}): error: {e}", r.s, r.p, r.q),
        (None, None) => format!("({}, {}, {}): no fit", r.s, r.p, r.q),
    }
}

pub fn cmd_rate(cfg: &RunConfig) -> Result<Outcome> {
    let tuple = [(cfg.s, cfg.p, cfg.q)];
    let man = RunManifest::new("rate", cfg.to_kv(), scan_banks(cfg, &tuple)?);
    let mut rows = region_scan(&tuple, &scan_setup(cfg)?);
    apply_model(&mut rows, cfg.model, cfg.d, &cfg.tol)?;
    let h = man.short_hash();
    let mut w = Writer::new(&cfg.out)?;
    w.text("rate.csv", &scan_csv(&rows, Some(h)))?;
    if let Some(f) = &rows[0].fit {
        w.text("rate_series.dat", &plot_data(h, "N", "ratio", &f.samples))?;
    }
    w.manifest(&man)?;
    Ok(Outcome { code: scan_outcome(&rows), summary: row_summary(&rows[0]), files: w.files })
}

pub fn cmd_scan(cfg: &RunConfig) -> Result<Outcome> {
    let man = RunManifest::new("scan", cfg.to_kv(), scan_banks(cfg, &cfg.tuples)?);
    let mut rows = region_scan(&cfg.tuples, &scan_setup(cfg)?);
    apply_model(&mut rows, cfg.model, cfg.d, &cfg.tol)?;
    let h = man.short_hash();
    let mut w = Writer::new(&cfg.out)?;
    w.text("scan.csv", &scan_csv(&rows, Some(h)))?;
    for (i, r) in rows.iter().enumerate() {
        if let Some(f) = &r.fit {
            w.text(&format!("scan_series_{i}.dat"), &plot_data(h, "N", "ratio", &f.samples))?;
        }
    }
    w.manifest(&man)?;
    let summary = rows.iter().map(row_summary).collect::<Vec<_>>().join("\n");
    Ok(Outcome { code: scan_outcome(&rows), summary, files: w.files })
}

pub fn cmd_check(cfg: &RunConfig) -> Result<Outcome> {
    let bank = cfg.bank(cfg.moment_order(cfg.s, cfg.p, cfg.q)?)?;
    let man = RunManifest::new("check", cfg.to_kv(), kernels_of(&[&bank]));
    let fault = (cfg.fault == FaultChoice::Mask).then_some(Fault::PerturbMask);
    let rep = identity_suite(cfg.spec()?, &bank, cfg.seed, fault)?;
    let mut w = Writer::new(&cfg.out)?;
    w.text("check.csv", &rep.to_csv(Some(man.short_hash())))?;
    w.manifest(&man)?;
    let (code, summary) = if rep.all_pass() {
        (EXIT_OK, format!("all {} checks pass", rep.checks.len()))
    } else {
        (EXIT_TOLERANCE, format!("failed: {}", rep.failures().join(", ")))
    };
    Ok(Outcome { code, summary, files: w.files })
}

pub fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    match cmd {
        Command::Norm => cmd_norm(cfg),
        Command::Avg => cmd_avg(cfg),
        Command::Gen => cmd_gen(cfg),
        Command::Rate => cmd_rate(cfg),
        Command::Scan => cmd_scan(cfg),
        Command::Check => cmd_check(cfg),
    }
}

/// Parse arguments, run, print the summary and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let res = load_config(&cli.flags).and_then(|cfg| execute(cli.cmd, &cfg));
    match res {
        Ok(o) => {
            println!("{}", o.summary);
            if o.code != EXIT_OK {
                eprintln!("haarlab {}: tolerance failure", cli.cmd.name());
            }
            o.code
        }
        Err(e) => {
            eprintln!("haarlab {}: {e}", cli.cmd.name());
            EXIT_INVALID
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kv(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn lists_and_tuples_parse() {
        assert_eq!(parse_n_list("2..5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_n_list("8..20:4").unwrap(), vec![8, 12, 16, 20]);
        assert_eq!(parse_n_list("3, 7").unwrap(), vec![3, 7]);
        assert!(parse_n_list("5..2").is_err());
        let t = parse_tuples("0.4,2,3; 0,inf,2").unwrap();
        assert_eq!(t[1], (0.0, f64::INFINITY, 2.0));
        assert!(parse_tuples("1,2").is_err());
    }

    #[test]
    fn kv_round_trip_is_exact() {
        let cfg = RunConfig::from_kv(&kv(&[("q", "inf"), ("s", "0.5"), ("tuples", "0.4,2,3; 0.5,0.9,8")])).unwrap();
        let back = RunConfig::from_kv(&cfg.to_kv()).unwrap();
        assert_eq!(RunConfig { out: cfg.out.clone(), ..back }, cfg);
        assert_eq!(cfg.n_list, (2..=10).collect::<Vec<_>>());
    }

    #[test]
    fn validation_rejects_bad_input() {
        assert!(RunConfig::from_kv(&kv(&[("p", "-1")])).is_err());
        assert!(RunConfig::from_kv(&kv(&[("J", "9"), ("K", "6")])).is_err());
        assert!(RunConfig::from_kv(&kv(&[("N_list", "2..12")])).is_err());
        assert!(RunConfig::from_kv(&kv(&[("colour", "red")])).is_err());
        assert!(RunConfig::from_kv(&kv(&[("d", "3"), ("J", "6"), ("B", "1")])).is_err());
        assert!(RunConfig::from_kv(&kv(&[("mask_a", "2")])).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "J = 12\nseed = 4\nq = 2\n").unwrap();
        let flags = Flags { config: Some(path), seed: Some("9".into()), ..Default::default() };
        let cfg = load_config(&flags).unwrap();
        assert_eq!((cfg.j, cfg.seed, cfg.q), (12, 9, 2.0));
        assert_eq!(*cfg.n_list.last().unwrap(), 8);
    }
}
