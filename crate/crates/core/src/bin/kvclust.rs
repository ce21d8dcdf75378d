use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kvclust::calibration::{profile_head, select_outliers, split_samples, DEFAULT_THRESHOLD};
use kvclust::pipeline::{compress_step, run_pipeline, CacheState, CompressionConfig, HeadInput};
use kvclust::synth::{generate_synthetic, profile_heads, SyntheticSpec, DEFAULT_WINDOW};
use kvclust::tensor::{load_tensor, save_tensor};
use kvclust::theory::{random_valid_score, verify_theorem};
use kvclust::{Error, Matrix};

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_CONFIG: u8 = 4;
const EXIT_FORMAT: u8 = 5;
const EXIT_VERIFY: u8 = 6;
const EXIT_INPUT: u8 = 7;
const EXIT_NONCONVERGENCE: u8 = 8;

#[derive(Parser)]
#[command(name = "kvclust", version, about = "KV-cache clustering toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic per-head queries, keys and values as tensor files
    Generate(GenerateArgs),
    /// Run prefill and decode with compression, emitting a CSV transcript
    Run(RunArgs),
    /// Profile heads for unmatched keys and pick outlier heads
    Calibrate(CalibrateArgs),
    /// Exhaustively check that the alternating partition is optimal
    VerifyTheorem(VerifyArgs),
    /// Mean key similarity as a function of token distance, as CSV
    Profile(ProfileArgs),
    /// Compress one dumped cache down to its budget
    CompressOnce(CompressArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    d: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    /// Correlation length of the key walk, in tokens ("inf" freezes it)
    #[arg(long, default_value_t = 64.0)]
    locality: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    /// Directory holding head{h}.{queries,keys,values}.ckvt
    #[arg(long)]
    dir: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the cache ratio from the config
    #[arg(long)]
    ratio: Option<f64>,
    /// Number of trailing tokens to decode (defaults to the config's max_decode)
    #[arg(long)]
    decode: Option<usize>,
    /// Comma-separated head indices that keep their full cache
    #[arg(long, value_delimiter = ',')]
    outliers: Vec<usize>,
    /// Transcript destination; stdout when omitted
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = 256)]
    chunk: usize,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    /// Rows per calibration sample
    #[arg(long, default_value_t = 1024)]
    sample_len: usize,
    #[arg(long, default_value_t = 0.04)]
    ratio: f64,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long)]
    dir: PathBuf,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    /// Anchor tokens sampled per head
    #[arg(long, default_value_t = 64)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompressArgs {
    #[arg(long)]
    keys: PathBuf,
    #[arg(long)]
    values: PathBuf,
    /// Column tensor of cluster degrees; all ones when omitted
    #[arg(long)]
    degrees: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Target length; defaults to the config budget for this cache length
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

enum Failure {
    Lib(Error),
    Verify(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn head_path(dir: &Path, head: usize, kind: &str) -> PathBuf {
    dir.join(format!("head{head}.{kind}.ckvt"))
}

fn count_heads(dir: &Path) -> CliResult<usize> {
    let count = (0..)
        .take_while(|&h| head_path(dir, h, "keys").is_file())
        .count();
    if count == 0 {
        return Err(Error::Io {
            path: head_path(dir, 0, "keys"),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no head tensors found"),
        }
        .into());
    }
    Ok(count)
}

fn load_keys(dir: &Path) -> CliResult<Vec<Matrix>> {
    (0..count_heads(dir)?)
        .map(|h| Ok(load_tensor(head_path(dir, h, "keys"))?))
        .collect()
}

fn load_config(path: Option<&Path>) -> CliResult<CompressionConfig> {
    let Some(path) = path else {
        return Ok(CompressionConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(CompressionConfig::from_config_str(&text)?)
}

fn write_output(path: Option<&Path>, text: &str) -> CliResult {
    match path {
        Some(p) => fs::write(p, text).map_err(|source| {
            Error::Io {
                path: p.to_path_buf(),
                source,
            }
            .into()
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(dir: &Path) -> CliResult {
    fs::create_dir_all(dir).map_err(|source| {
        Error::Io {
            path: dir.to_path_buf(),
            source,
        }
        .into()
    })
}

fn generate(a: GenerateArgs) -> CliResult {
    let heads = generate_synthetic(&SyntheticSpec {
        n: a.n,
        d: a.d,
        heads: a.heads,
        locality: a.locality,
        noise: a.noise,
        seed: a.seed,
    })?;
    create_dir(&a.out)?;
    for (h, data) in heads.iter().enumerate() {
        save_tensor(head_path(&a.out, h, "queries"), &data.queries)?;
        save_tensor(head_path(&a.out, h, "keys"), &data.keys)?;
        save_tensor(head_path(&a.out, h, "values"), &data.values)?;
    }
    eprintln!(
        "wrote {} heads of {}x{} to {}",
        heads.len(),
        a.n,
        a.d,
        a.out.display()
    );
    Ok(())
}

fn run(a: RunArgs) -> CliResult {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(r) = a.ratio {
        cfg.cache_ratio = r;
    }
    let decode = a.decode.unwrap_or(cfg.max_decode);
    cfg.max_decode = cfg.max_decode.max(decode);
    cfg.head_count = count_heads(&a.dir)?;

    let heads = (0..cfg.head_count)
        .map(|h| {
            let q = load_tensor(head_path(&a.dir, h, "queries"))?;
            let k = load_tensor(head_path(&a.dir, h, "keys"))?;
            let v = load_tensor(head_path(&a.dir, h, "values"))?;
            let prompt = k
                .rows()
                .checked_sub(decode)
                .filter(|&p| p > 0)
                .ok_or_else(|| {
                    Error::Config(format!("cannot decode {decode} of {} tokens", k.rows()))
                })?;
            Ok(HeadInput::split(&q, &k, &v, prompt)?)
        })
        .collect::<CliResult<Vec<_>>>()?;

    let t = run_pipeline(&heads, &cfg, &a.outliers)?;
    write_output(a.out.as_deref(), &t.to_csv())?;
    let budgets: Vec<String> = t.budgets.iter().map(usize::to_string).collect();
    eprintln!(
        "budgets={} compressions={} similarity_evals={} mean_l2={:.6e} max_l2={:.6e}",
        budgets.join(","),
        t.compressions.len(),
        t.similarity_evals,
        t.mean_l2_error(),
        t.max_l2_error()
    );
    Ok(())
}

fn calibrate(a: CalibrateArgs) -> CliResult {
    let keys = load_keys(&a.dir)?;
    let profiles = keys
        .iter()
        .enumerate()
        .map(|(h, k)| profile_head(h, &split_samples(k, a.sample_len), a.chunk, a.threshold))
        .collect::<kvclust::Result<Vec<_>>>()?;
    let outliers = select_outliers(&profiles, a.ratio)?;
    let mut s = String::from("head_index,proportion,sample_count,sample_variance\n");
    for p in &profiles {
        writeln!(
            s,
            "{},{:.6},{},{:.6e}",
            p.head_index, p.unmatched_proportion, p.sample_count, p.sample_variance
        )
        .unwrap();
    }
    let list: Vec<String> = outliers.iter().map(usize::to_string).collect();
    writeln!(s, "outliers: {}", list.join(",")).unwrap();
    print!("{s}");
    Ok(())
}

fn verify(a: VerifyArgs) -> CliResult {
    let mut failures = 0;
    let mut s = String::from("trial,n,best,alternating,result\n");
    for trial in 0..a.trials {
        let f = random_valid_score(a.n.max(1), a.seed.wrapping_add(trial as u64));
        let r = verify_theorem(a.n, &f)?;
        if !r.holds {
            failures += 1;
        }
        writeln!(
            s,
            "{trial},{},{:.12},{:.12},{}",
            a.n,
            r.best_value,
            r.alternating_value,
            if r.holds { "pass" } else { "FAIL" }
        )
        .unwrap();
    }
    writeln!(s, "summary: {}/{} passed", a.trials - failures, a.trials).unwrap();
    print!("{s}");
    if failures > 0 {
        return Err(Failure::Verify(format!(
            "{failures} of {} trials failed",
            a.trials
        )));
    }
    Ok(())
}

fn profile(a: ProfileArgs) -> CliResult {
    let keys = load_keys(&a.dir)?;
    let curve = profile_heads(&keys, a.window, a.samples, a.seed)?;
    write_output(a.out.as_deref(), &curve.to_csv())
}

fn compress_once(a: CompressArgs) -> CliResult {
    let cfg = load_config(a.config.as_deref())?;
    let keys = load_tensor(&a.keys)?;
    let values = load_tensor(&a.values)?;
    let degrees = match &a.degrees {
        Some(p) => load_tensor(p)?
            .as_slice()
            .iter()
            .map(|&d| {
                if d >= 1.0 && d.fract() == 0.0 {
                    Ok(d as u64)
                } else {
                    Err(Error::Contract(format!(
                        "degree {d} is not a positive integer"
                    )))
                }
            })
            .collect::<kvclust::Result<Vec<_>>>()?,
        None => vec![1; keys.rows()],
    };
    let budget = match a.budget {
        Some(b) => b,
        None => cfg.budget(keys.rows())?,
    };
    let mut state = CacheState::from_parts(keys, values, degrees, budget)?;
    let (len_before, sum_before) = (state.len(), state.degree_total());
    let event = compress_step(&mut state, &cfg)?;

    create_dir(&a.out)?;
    save_tensor(a.out.join("keys.ckvt"), state.keys())?;
    save_tensor(a.out.join("values.ckvt"), state.values())?;
    let deg: Vec<f64> = state.degrees().iter().map(|&d| d as f64).collect();
    save_tensor(a.out.join("degrees.ckvt"), &Matrix::new(deg.len(), 1, deg)?)?;
    println!("len_before,len_after,passes,budget,degree_sum_before,degree_sum_after");
    println!(
        "{len_before},{},{},{budget},{sum_before},{}",
        state.len(),
        event.passes.len(),
        state.degree_total()
    );
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Config(_) => EXIT_CONFIG,
        Error::Format { .. } => EXIT_FORMAT,
        Error::Dimension(_) | Error::NonFinite(_) | Error::Contract(_) => EXIT_INPUT,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        #[allow(unreachable_patterns)]
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Calibrate(a) => calibrate(a),
        Command::VerifyTheorem(a) => verify(a),
        Command::Profile(a) => profile(a),
        Command::CompressOnce(a) => compress_once(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::Verify(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}
