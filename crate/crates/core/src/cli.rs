//! Command-line front end. JSON is the machine interface; CSV is used for
//! tables only.

use std::collections::BTreeMap;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Number, Value};

use crate::basis::build_basis;
use crate::chaos::stroock_decompose;
use crate::config_space::{compound_value, expectation, max_abs_diff, parse_list, sample_path, ModelParams, PathFunctional, Space};
use crate::error::{Error, Result};
use crate::hedging::{ls_oracle, martingale_diagnostics, optimal_strategy, Market, MarketParams};
use crate::measure_change::{compound_density, doleans_density, girsanov_density, girsanov_drift, girsanov_varphi, reweighted_expectation, TargetMeasure};
use crate::stein::{
    compound_poisson_bound, dna_bound, dna_count, dna_target, exact_tv, head_run_bound, head_run_functional,
    head_run_lambda0, head_run_variance, head_run_variance_identity, law_of, poisson_bound, poisson_pmf, tv_optimal_set,
};
use crate::verify::{random_functional, run_suite};

#[derive(Parser, Debug)]
#[command(name = "marbin", version, about = "Exact calculus, Stein bounds and hedging on marked binomial processes")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// File of `key = value` lines supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Write output here instead of stdout.
    #[arg(long, short, global = true)]
    output: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Omit the timestamp so repeated runs are byte-identical.
    #[arg(long, global = true)]
    no_timestamp: bool,
    #[arg(long, short, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample paths of the marked binomial process.
    Simulate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        paths: Option<usize>,
    },
    /// Chaotic decomposition of a functional.
    Decompose {
        #[command(flatten)]
        model: ModelArgs,
        /// counting | compound | compensated | indicator:RANK | random
        #[arg(long)]
        functional: Option<String>,
    },
    /// Stein-method approximation bounds.
    Stein {
        #[command(subcommand)]
        which: SteinCommand,
    },
    /// Quadratic hedging in the ternary market.
    Hedge(HedgeArgs),
    /// Change of measure between two marked binomial laws.
    Girsanov {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "target-lambda", allow_hyphen_values = true)]
        target_lambda: Option<f64>,
        #[arg(long = "target-Q", allow_hyphen_values = true)]
        target_q: Option<String>,
    },
    /// Run the enumeration identity suite.
    Verify {
        #[command(flatten)]
        model: ModelArgs,
    },
}

#[derive(Subcommand, Debug)]
enum SteinCommand {
    /// Head runs of length m in n+1 coin tosses.
    Headrun {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        p: Option<f64>,
    },
    /// DNA clump counts against a Pólya-Aeppli law.
    Dna {
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        h: Option<usize>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        cutoff: Option<usize>,
    },
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long = "T")]
    horizon: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    marks: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "Q")]
    q: Option<String>,
}

#[derive(Args, Debug)]
struct HedgeArgs {
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    r: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// call:K=<strike> | discounted | constant:<c>
    #[arg(long)]
    claim: Option<String>,
    #[arg(long)]
    x: Option<f64>,
    #[arg(long)]
    a0: Option<f64>,
}

/// Flag values fall back to the config file, then to defaults.
struct Settings {
    file: BTreeMap<String, String>,
}

impl Settings {
    fn load(path: Option<&str>) -> Result<Self> {
        let mut file = BTreeMap::new();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {p}: {e}")))?;
            for (no, raw) in text.lines().enumerate() {
                let line = raw.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("line {}: expected key = value", no + 1)))?;
                file.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(Settings { file })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.file.get(key) {
            Some(v) => v.parse().map(Some).map_err(|_| Error::Config(format!("bad value for {key}: '{v}'"))),
            None => Ok(None),
        }
    }

    fn need<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.get(flag, key)?.ok_or_else(|| Error::Config(format!("missing --{key}")))
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.get(flag, key)?.unwrap_or(default))
    }

    fn model(&self, m: &ModelArgs, seed: u64) -> Result<ModelParams> {
        let horizon = self.need(m.horizon, "T")?;
        let marks = parse_list(&self.need(m.marks.clone(), "marks")?, "marks")?;
        let lambda = self.need(m.lambda, "lambda")?;
        let q = parse_list(&self.need(m.q.clone(), "Q")?, "Q")?;
        ModelParams::new(horizon, marks, lambda, q, seed)
    }
}

/// A float as a JSON number with 17 significant digits; non-finite becomes null.
pub fn num(x: f64) -> Value {
    if !x.is_finite() {
        return Value::Null;
    }
    Number::from_str(&crate::fmt17(x)).map(Value::Number).unwrap_or(Value::Null)
}

fn nums(xs: &[f64]) -> Value {
    Value::Array(xs.iter().map(|&x| num(x)).collect())
}

fn table(rows: &[Vec<f64>]) -> Value {
    Value::Array(rows.iter().map(|r| nums(r)).collect())
}

fn params_json(p: &ModelParams) -> Value {
    json!({
        "T": p.horizon,
        "marks": nums(&p.marks),
        "lambda": num(p.jump_prob),
        "Q": nums(&p.mark_probs),
    })
}

enum Outcome {
    Ok(String),
    /// Output plus a message for stderr; exit 1.
    Fail(String, String),
}

/// Runs the CLI on `argv` (program name first) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new().filter_level(level).parse_default_env().try_init();
    match execute(&cli) {
        Ok(Outcome::Ok(text)) => emit(&cli, &text),
        Ok(Outcome::Fail(text, msg)) => {
            let code = emit(&cli, &text);
            eprintln!("{msg}");
            if code == 0 {
                1
            } else {
                code
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn emit(cli: &Cli, text: &str) -> i32 {
    match &cli.output {
        Some(path) => match std::fs::write(path, text) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("error: cannot write {path}: {e}");
                2
            }
        },
        None => {
            print!("{text}");
            0
        }
    }
}

fn execute(cli: &Cli) -> Result<Outcome> {
    let settings = Settings::load(cli.config.as_deref())?;
    let seed = settings.or(cli.seed, "seed", 0)?;
    let mut head = Map::new();
    head.insert("seed".into(), json!(seed));
    if !cli.no_timestamp {
        let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        head.insert("timestamp".into(), json!(secs));
    }
    let finish = |mut body: Map<String, Value>| -> String {
        let mut out = head.clone();
        out.append(&mut body);
        let mut s = serde_json::to_string_pretty(&Value::Object(out)).expect("serializable");
        s.push('\n');
        s
    };
    match &cli.command {
        Command::Simulate { model, paths } => {
            let p = settings.model(model, seed)?;
            let count = settings.or(*paths, "paths", 10)?;
            simulate(&p, count, cli.format, finish)
        }
        Command::Decompose { model, functional } => {
            let p = settings.model(model, seed)?;
            let which = settings.or(functional.clone(), "functional", "counting".to_string())?;
            decompose(&p, &which, seed, cli.format, finish)
        }
        Command::Stein { which } => match which {
            SteinCommand::Headrun { n, m, p } => {
                let n = settings.need(*n, "n")?;
                let m = settings.need(*m, "m")?;
                let p = settings.need(*p, "p")?;
                headrun(n, m, p).map(|b| Outcome::Ok(finish(b)))
            }
            SteinCommand::Dna { n, h, alpha, mu, cutoff } => {
                let n = settings.need(*n, "n")?;
                let h = settings.need(*h, "h")?;
                let alpha = settings.need(*alpha, "alpha")?;
                let mu = settings.need(*mu, "mu")?;
                let cutoff = settings.or(*cutoff, "cutoff", 40)?;
                dna(n, h, alpha, mu, cutoff).map(|b| Outcome::Ok(finish(b)))
            }
        },
        Command::Hedge(h) => {
            let market = MarketParams::new(
                settings.need(h.a, "a")?,
                settings.need(h.b, "b")?,
                settings.need(h.r, "r")?,
                settings.need(h.lambda, "lambda")?,
                settings.need(h.p, "p")?,
                settings.need(h.horizon, "T")?,
                settings.or(h.x, "x", 1.0)?,
                settings.or(h.a0, "a0", 1.0)?,
            )?;
            let claim = settings.or(h.claim.clone(), "claim", "call:K=1".to_string())?;
            hedge(market, &claim).map(|b| Outcome::Ok(finish(b)))
        }
        Command::Girsanov { model, target_lambda, target_q } => {
            let p = settings.model(model, seed)?;
            let tl = settings.need(*target_lambda, "target-lambda")?;
            let tq = parse_list(&settings.need(target_q.clone(), "target-Q")?, "target-Q")?;
            girsanov(&p, TargetMeasure::new(tl, tq)?).map(|b| Outcome::Ok(finish(b)))
        }
        Command::Verify { model } => {
            let p = settings.model(model, seed)?;
            let report = run_suite(&p, seed)?;
            let checks: Vec<Value> = report
                .checks
                .iter()
                .map(|c| json!({"name": c.name, "residual": num(c.residual), "tolerance": num(c.tolerance), "pass": c.pass()}))
                .collect();
            let mut body = Map::new();
            body.insert("params".into(), params_json(&p));
            body.insert("pass".into(), json!(report.all_pass()));
            body.insert("checks".into(), Value::Array(checks));
            let text = finish(body);
            if report.all_pass() {
                Ok(Outcome::Ok(text))
            } else {
                let w = report.worst().expect("non-empty report");
                Ok(Outcome::Fail(
                    text,
                    format!("verify failed: worst offender '{}' residual {} > {}", w.name, crate::fmt17(w.residual), crate::fmt17(w.tolerance)),
                ))
            }
        }
    }
}

fn simulate(p: &ModelParams, count: usize, format: Format, finish: impl Fn(Map<String, Value>) -> String) -> Result<Outcome> {
    let paths: Vec<_> = (0..count as u64).map(|i| sample_path(p, i)).collect();
    if format == Format::Csv {
        let mut out = String::from("path,t,mark\n");
        for (i, w) in paths.iter().enumerate() {
            for t in 1..=p.horizon {
                let d = w.digit(t);
                if d > 0 {
                    out.push_str(&format!("{i},{t},{}\n", crate::fmt17(p.marks[d - 1])));
                }
            }
        }
        return Ok(Outcome::Ok(out));
    }
    let rows: Vec<Value> = paths
        .iter()
        .map(|w| {
            let jumps: Vec<Value> = (1..=p.horizon)
                .filter(|&t| w.digit(t) > 0)
                .map(|t| json!([t, num(p.marks[w.digit(t) - 1])]))
                .collect();
            let (n, y, ybar) = compound_value(p, w, p.horizon)?;
            Ok(json!({"jumps": jumps, "N_T": n, "Y_T": num(y), "Ybar_T": num(ybar)}))
        })
        .collect::<Result<_>>()?;
    let mut body = Map::new();
    body.insert("params".into(), params_json(p));
    body.insert("paths".into(), Value::Array(rows));
    Ok(Outcome::Ok(finish(body)))
}

fn decompose(p: &ModelParams, which: &str, seed: u64, format: Format, finish: impl Fn(Map<String, Value>) -> String) -> Result<Outcome> {
    let space = Space::new(p.clone())?;
    let basis = build_basis(p)?;
    let t = p.horizon;
    let f = match which {
        "counting" => PathFunctional::counting(&space, t),
        "compound" => PathFunctional::compound(&space, t),
        "compensated" => PathFunctional::compensated(&space, t),
        "random" => random_functional(&space, seed),
        other => match other.strip_prefix("indicator:") {
            Some(r) => {
                let rank: usize = r.parse().map_err(|_| Error::Config(format!("bad rank '{r}'")))?;
                if rank >= space.size() {
                    return Err(Error::OutOfRange(format!("rank {rank}")));
                }
                PathFunctional::indicator(&space, rank)
            }
            None => return Err(Error::Config(format!("unknown functional '{other}'"))),
        },
    };
    let c = stroock_decompose(&basis, &f)?;
    if format == Format::Csv {
        return Ok(Outcome::Ok(c.to_csv()));
    }
    let mut rows = vec![json!({"order": 0, "support": [], "value": num(c.f0)})];
    for (i, kernel) in c.orders.iter().enumerate() {
        for (s, v) in kernel {
            let sup: Vec<Value> = s.iter().map(|&(t, k)| json!([t, k])).collect();
            rows.push(json!({"order": i + 1, "support": sup, "value": num(*v)}));
        }
    }
    let mut body = Map::new();
    body.insert("params".into(), params_json(p));
    body.insert("functional".into(), json!(which));
    body.insert("coefficients".into(), Value::Array(rows));
    Ok(Outcome::Ok(finish(body)))
}

fn headrun(n: usize, m: usize, p: f64) -> Result<Map<String, Value>> {
    let u = head_run_functional(n, m, p)?;
    let lambda0 = head_run_lambda0(n, m, p);
    let mut body = Map::new();
    body.insert("n".into(), json!(n));
    body.insert("m".into(), json!(m));
    body.insert("p".into(), num(p));
    body.insert("lambda0".into(), num(lambda0));
    body.insert("bound".into(), num(head_run_bound(n, m, p)));
    let identity = head_run_variance_identity(n, m, p);
    let mut check = Map::new();
    check.insert("identity".into(), num(identity));
    check.insert("closed_form".into(), num(head_run_variance(n, m, p)));
    if u.is_exact() {
        let law = law_of(&u)?;
        let tv = exact_tv(&law, &poisson_pmf(lambda0, law.len() + (10.0 * lambda0) as usize + 60))?;
        body.insert("exact_tv".into(), num(tv));
        let var = crate::malliavin::variance(&u)?;
        check.insert("enumerated".into(), num(var));
        check.insert("identity_matches".into(), json!((var - identity).abs() <= 1e-10));
        let b = poisson_bound(&u, lambda0)?;
        body.insert(
            "evaluated_bound".into(),
            json!({"first_term": num(b.first_term), "second_term": num(b.second_term), "bound": num(b.bound)}),
        );
        body.insert("mean".into(), num(expectation(&u)?));
    }
    body.insert("variance_check".into(), Value::Object(check));
    Ok(body)
}

fn dna(n: usize, h: usize, alpha: f64, mu: f64, cutoff: usize) -> Result<Map<String, Value>> {
    let target = dna_target(n, h, alpha, mu, cutoff)?;
    let count = dna_count(n, h, alpha, mu, cutoff)?;
    let law = count.law(count.horizon);
    let tv = exact_tv(&law, &target.pmf)?;
    let family = vec![tv_optimal_set(&law, &target.pmf)];
    let cb = compound_poisson_bound(&count, &target, &family)?;
    let mut body = Map::new();
    body.insert("lambda0".into(), num(target.lambda0));
    body.insert("d_pc".into(), num(target.d_pc));
    body.insert("bound".into(), num(dna_bound(n, h, alpha, mu)?));
    body.insert("chaos_bound".into(), num(cb.bound));
    body.insert("exact_tv".into(), num(tv));
    Ok(body)
}

fn hedge(mp: MarketParams, claim: &str) -> Result<Map<String, Value>> {
    let x = mp.x;
    let market = Market::new(mp)?;
    let f = if claim == "discounted" {
        market.discounted_terminal()
    } else if let Some(k) = claim.strip_prefix("call:K=") {
        market.european_call(k.parse().map_err(|_| Error::Config(format!("bad strike '{k}'")))?)
    } else if let Some(c) = claim.strip_prefix("constant:") {
        PathFunctional::constant(&market.space, c.parse().map_err(|_| Error::Config(format!("bad constant '{c}'")))?)
    } else {
        return Err(Error::Config(format!("unknown claim '{claim}'")));
    };
    let opt = optimal_strategy(&market, &f, x)?;
    let (_, oracle) = ls_oracle(&market, &f, x)?;
    let diag = martingale_diagnostics(&market.params);
    let mut body = Map::new();
    body.insert("claim".into(), json!(claim));
    body.insert("x".into(), num(x));
    body.insert("phi_star".into(), table(&opt.strategy.phi));
    body.insert("alpha".into(), table(&opt.strategy.alpha));
    body.insert("residual_risk".into(), num(opt.residual_risk));
    if (opt.residual_risk_unpredictable - opt.residual_risk).abs() > 1e-12 {
        body.insert("residual_risk_unpredictable".into(), num(opt.residual_risk_unpredictable));
    }
    body.insert("oracle_residual".into(), num(oracle));
    body.insert("theta".into(), table(&opt.theta));
    body.insert("drift_gap".into(), num(diag.gap));
    body.insert("K_t".into(), nums(&diag.k));
    body.insert("K_step_printed".into(), num(diag.k_step_printed));
    body.insert("self_financing_residual".into(), num(opt.strategy.self_financing_residual(&market)));
    Ok(body)
}

fn girsanov(p: &ModelParams, target: TargetMeasure) -> Result<Map<String, Value>> {
    let space = Space::new(p.clone())?;
    let basis = build_basis(p)?;
    let drift = girsanov_drift(p, &target)?;
    let g: Vec<f64> = (0..p.n_marks()).map(|k| drift[&vec![(1, k)]]).collect();
    let density = girsanov_density(&space, &target, p.horizon)?;
    let dv = density.values()?;
    let doleans = doleans_density(&basis, &space, &target, p.horizon)?;
    let compound = compound_density(&space, &target)?;
    let tgt = Space::new(target.as_params(p)?)?;
    let factor = (0..space.size())
        .map(|r| ((dv[r] * space.probs()[r] - tgt.probs()[r]) / tgt.probs()[r]).abs())
        .fold(0.0, f64::max);
    let mut body = Map::new();
    body.insert("params".into(), params_json(p));
    body.insert("target".into(), json!({"lambda": num(target.jump_prob), "Q": nums(&target.mark_probs)}));
    body.insert("drift".into(), nums(&g));
    body.insert("varphi".into(), nums(&girsanov_varphi(p, &target)?));
    body.insert("density_mean".into(), num(expectation(&density)?));
    body.insert("factorization_rel_residual".into(), num(factor));
    body.insert("doleans_residual".into(), num(max_abs_diff(doleans.values()?, dv)));
    body.insert("compound_residual".into(), num(max_abs_diff(compound.values()?, dv)));
    body.insert(
        "reweighted_N_T".into(),
        num(reweighted_expectation(&PathFunctional::counting(&space, p.horizon), &target)?),
    );
    Ok(body)
}
