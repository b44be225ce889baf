//! Command-line front end. Every command reads its inputs from files (or a
//! tree argument), prints a deterministic report on stdout, and signals the
//! outcome through the exit code: 0 yes/success, 1 no (a witness is part of
//! the report), 2 usage or validation error, 3 budget exceeded. Timing goes
//! to stderr so stdout stays byte-for-byte reproducible.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use qpcheck::automaton::{
    parse_automaton, render_automaton, BudgetExceeded, DiffSide, TreeAutomaton,
};
use qpcheck::oracle::{
    check_eval_equivalence, check_weak_equation, find_strong_counterexample, language_up_to,
    EnumerationBudget,
};
use qpcheck::preservation::{
    construct_weak_query, strong_preserves, weak_preserves, CheckError, Construction,
};
use qpcheck::query::{parse_query, render_query, Query};
use qpcheck::report::{
    format_value_tuples, oracle_summary, strong_report, weak_report, Format, Report,
};
use qpcheck::transducer::{parse_transducer, ApplyError, Transducer};
use qpcheck::tree::parse_tree;

#[derive(Parser)]
#[command(
    name = "qpcheck",
    version,
    about = "Decide whether a tree transform preserves a tree query",
    max_term_width = 100
)]
struct Cli {
    /// Cap on the state count of any constructed automaton.
    #[arg(long, global = true, default_value_t = 1_000_000)]
    budget: usize,

    /// Cap on tree size (node count) for oracle enumeration.
    #[arg(long = "max-size", global = true, default_value_t = 8)]
    max_size: usize,

    /// Report format on stdout.
    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum OutputFormat {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a query on a tree and print the selected value tuples.
    Eval {
        /// Query file.
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        /// Tree in the parenthesized grammar, e.g. "(f @1 (a @2) (a @3))".
        tree: String,
    },
    /// Run a transducer on a tree and print the output tree.
    Apply {
        /// Transducer file.
        #[arg(short = 't', long = "transducer")]
        transducer: PathBuf,
        /// Input tree.
        tree: String,
    },
    /// Decide whether the transducer weakly preserves the query: the query's
    /// values must be readable off the outputs alone, pooled per output.
    CheckWeak {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 't', long = "transducer")]
        transducer: PathBuf,
    },
    /// Decide whether the transducer strongly preserves the query: some
    /// target query must recover the source values from each output.
    CheckStrong {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 't', long = "transducer")]
        transducer: PathBuf,
    },
    /// Build the target query over output trees when weak preservation
    /// holds; it selects, per output, the pooled values of all sources.
    Construct {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 't', long = "transducer")]
        transducer: PathBuf,
        /// Write the target query here instead of the report body.
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Operations on automaton files.
    #[command(subcommand)]
    Automaton(AutomatonOp),
    /// Brute-force checks over enumerated small trees.
    #[command(subcommand)]
    Oracle(OracleOp),
}

#[derive(Subcommand)]
enum AutomatonOp {
    /// Expand epsilon rules and drop states no accepting run uses.
    Reduce {
        input: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Intersect two languages by synchronous product.
    Product {
        first: PathBuf,
        second: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Union of two languages over the merged alphabet.
    Union {
        first: PathBuf,
        second: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Complement over the automaton's own alphabet.
    Complement {
        input: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: Option<PathBuf>,
    },
    /// Decide language equality; a smallest separating tree is reported.
    Equiv { first: PathBuf, second: PathBuf },
    /// Decide language emptiness; a smallest accepted tree is reported.
    Empty { input: PathBuf },
}

#[derive(Subcommand)]
enum OracleOp {
    /// Compare the query evaluator against explicit run enumeration.
    Eval {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
    },
    /// Construct the target query, then check the pooled-values equation on
    /// every enumerated output.
    Weak {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 't', long = "transducer")]
        transducer: PathBuf,
    },
    /// Search for two sources with the same output but different values;
    /// such a pair refutes strong preservation directly.
    Strong {
        #[arg(short = 'q', long = "query")]
        query: PathBuf,
        #[arg(short = 't', long = "transducer")]
        transducer: PathBuf,
    },
    /// List every accepted tree up to the enumeration size.
    Language { input: PathBuf },
}

struct Failure {
    code: u8,
    message: String,
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

impl From<BudgetExceeded> for Failure {
    fn from(b: BudgetExceeded) -> Failure {
        Failure { code: 3, message: b.to_string() }
    }
}

impl From<CheckError> for Failure {
    fn from(e: CheckError) -> Failure {
        match e {
            CheckError::Budget(b) => b.into(),
            CheckError::Invalid(message) => Failure { code: 2, message },
        }
    }
}

/// Enumeration failures carry their cause only in the message: a missing
/// nullary symbol is a validation error, a blown tree cap is a budget one.
fn oracle_failure(message: String) -> Failure {
    let code = if message.contains("exceeds") { 3 } else { 2 };
    Failure { code, message }
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    fs::write(path, content).map_err(|e| usage(format!("{}: {e}", path.display())))
}

fn load_query(path: &Path) -> Result<Query, Failure> {
    parse_query(&read_file(path)?).map_err(|e| usage(format!("{}:{e}", path.display())))
}

fn load_transducer(path: &Path) -> Result<Transducer, Failure> {
    parse_transducer(&read_file(path)?).map_err(|e| usage(format!("{}:{e}", path.display())))
}

fn load_automaton(path: &Path) -> Result<TreeAutomaton, Failure> {
    parse_automaton(&read_file(path)?).map_err(|e| usage(format!("{}:{e}", path.display())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let format = match cli.format {
        OutputFormat::Text => Format::Text,
        OutputFormat::Json => Format::Json,
    };
    let code = match dispatch(&cli) {
        Ok((report, code)) => {
            print!("{}", report.render(format));
            code
        }
        Err(f) => {
            eprintln!("{}", f.message);
            f.code
        }
    };
    eprintln!("elapsed: {:?}", start.elapsed());
    ExitCode::from(code)
}

fn dispatch(cli: &Cli) -> Result<(Report, u8), Failure> {
    match &cli.command {
        Command::Eval { query, tree } => cmd_eval(query, tree),
        Command::Apply { transducer, tree } => cmd_apply(transducer, tree),
        Command::CheckWeak { query, transducer } => {
            let q = load_query(query)?;
            let tr = load_transducer(transducer)?;
            let d = weak_preserves(&q, &tr, cli.budget)?;
            let code = if d.preserved { 0 } else { 1 };
            Ok((weak_report("check-weak", &d), code))
        }
        Command::CheckStrong { query, transducer } => {
            let q = load_query(query)?;
            let tr = load_transducer(transducer)?;
            let d = strong_preserves(&q, &tr, cli.budget)?;
            let code = if d.preserved { 0 } else { 1 };
            Ok((strong_report("check-strong", &d), code))
        }
        Command::Construct { query, transducer, out } => {
            cmd_construct(query, transducer, out.as_deref(), cli.budget)
        }
        Command::Automaton(op) => automaton_op(op, cli.budget),
        Command::Oracle(op) => oracle_op(op, cli.budget, cli.max_size),
    }
}

fn cmd_eval(query: &Path, tree: &str) -> Result<(Report, u8), Failure> {
    let q = load_query(query)?;
    let t = parse_tree(tree, &q.automaton.alphabet)
        .map_err(|e| usage(format!("tree argument: {e}")))?;
    let mut report = Report::new("eval");
    report.body_line(format_value_tuples(&q.eval_values(&t)));
    Ok((report, 0))
}

fn cmd_apply(transducer: &Path, tree: &str) -> Result<(Report, u8), Failure> {
    let tr = load_transducer(transducer)?;
    let t = parse_tree(tree, &tr.input_alphabet)
        .map_err(|e| usage(format!("tree argument: {e}")))?;
    let mut report = Report::new("apply");
    match tr.apply(&t) {
        Ok(out) => {
            report.body_line(out.to_string());
            Ok((report, 0))
        }
        Err(e @ ApplyError::NotInDomain { .. }) => {
            report.verdict("in domain", "no");
            report.fact("reason", e.to_string());
            Ok((report, 1))
        }
        Err(e @ ApplyError::ImproperInput(_)) => Err(usage(e.to_string())),
    }
}

fn cmd_construct(
    query: &Path,
    transducer: &Path,
    out: Option<&Path>,
    budget: usize,
) -> Result<(Report, u8), Failure> {
    let q = load_query(query)?;
    let tr = load_transducer(transducer)?;
    match construct_weak_query(&q, &tr, budget)? {
        Construction::NotPreserved(d) => Ok((weak_report("construct", &d), 1)),
        Construction::Built { query: built, weak } => {
            let mut report = weak_report("construct", &weak);
            report.fact("target states", built.automaton.states.len().to_string());
            report.fact("target selections", built.selections.len().to_string());
            let rendered = render_query(&built);
            match out {
                Some(path) => {
                    write_file(path, &rendered)?;
                    report.fact("target query written to", path.display().to_string());
                }
                None => {
                    for line in rendered.lines() {
                        report.body_line(line);
                    }
                }
            }
            Ok((report, 0))
        }
    }
}

fn automaton_op(op: &AutomatonOp, budget: usize) -> Result<(Report, u8), Failure> {
    match op {
        AutomatonOp::Reduce { input, out } => {
            let a = load_automaton(input)?.eliminate_epsilon();
            finish_automaton("automaton reduce", a, out.as_deref())
        }
        AutomatonOp::Product { first, second, out } => {
            let a = load_automaton(first)?.eliminate_epsilon();
            let b = load_automaton(second)?.eliminate_epsilon();
            let p = a.product(&b).map_err(usage)?;
            finish_automaton("automaton product", p, out.as_deref())
        }
        AutomatonOp::Union { first, second, out } => {
            let a = load_automaton(first)?;
            let b = load_automaton(second)?;
            let u = a.union(&b).map_err(usage)?.eliminate_epsilon();
            finish_automaton("automaton union", u, out.as_deref())
        }
        AutomatonOp::Complement { input, out } => {
            let a = load_automaton(input)?.eliminate_epsilon();
            let c = a.complement(budget)?;
            finish_automaton("automaton complement", c, out.as_deref())
        }
        AutomatonOp::Equiv { first, second } => {
            let a = load_automaton(first)?.eliminate_epsilon();
            let b = load_automaton(second)?.eliminate_epsilon();
            let eq = a.equivalent(&b, budget)?;
            let mut report = Report::new("automaton equiv");
            report.verdict("equivalent", if eq.equal { "yes" } else { "no" });
            if let Some((side, t)) = &eq.witness {
                report.fact("separating tree", t.to_string());
                report.fact(
                    "accepted by",
                    match side {
                        DiffSide::FirstOnly => "only the first automaton",
                        DiffSide::SecondOnly => "only the second automaton",
                    },
                );
            }
            let code = if eq.equal { 0 } else { 1 };
            Ok((report, code))
        }
        AutomatonOp::Empty { input } => {
            let a = load_automaton(input)?.eliminate_epsilon();
            let mut report = Report::new("automaton empty");
            match a.smallest_accepted() {
                Some(t) => {
                    report.verdict("empty", "no");
                    report.fact("accepted tree", t.to_string());
                    Ok((report, 1))
                }
                None => {
                    report.verdict("empty", "yes");
                    Ok((report, 0))
                }
            }
        }
    }
}

fn finish_automaton(
    command: &str,
    a: TreeAutomaton,
    out: Option<&Path>,
) -> Result<(Report, u8), Failure> {
    let mut report = Report::new(command);
    report.fact("states", a.states.len().to_string());
    report.fact("rules", a.rules.len().to_string());
    let rendered = render_automaton(&a);
    match out {
        Some(path) => {
            write_file(path, &rendered)?;
            report.fact("automaton written to", path.display().to_string());
        }
        None => {
            for line in rendered.lines() {
                report.body_line(line);
            }
        }
    }
    Ok((report, 0))
}

fn oracle_op(op: &OracleOp, budget: usize, max_size: usize) -> Result<(Report, u8), Failure> {
    let enumeration = EnumerationBudget::with_max_nodes(max_size);
    match op {
        OracleOp::Eval { query } => {
            let q = load_query(query)?;
            let o = check_eval_equivalence(&q, &enumeration).map_err(oracle_failure)?;
            let code = if o.ok() { 0 } else { 1 };
            Ok((oracle_summary("oracle eval", "evaluators agree", &o), code))
        }
        OracleOp::Weak { query, transducer } => {
            let q = load_query(query)?;
            let tr = load_transducer(transducer)?;
            match construct_weak_query(&q, &tr, budget)? {
                Construction::NotPreserved(d) => Ok((weak_report("oracle weak", &d), 1)),
                Construction::Built { query: built, .. } => {
                    let o = check_weak_equation(&q, &built, &tr, &enumeration)
                        .map_err(oracle_failure)?;
                    let code = if o.ok() { 0 } else { 1 };
                    Ok((oracle_summary("oracle weak", "pooled values match", &o), code))
                }
            }
        }
        OracleOp::Strong { query, transducer } => {
            let q = load_query(query)?;
            let tr = load_transducer(transducer)?;
            let found =
                find_strong_counterexample(&q, &tr, &enumeration).map_err(oracle_failure)?;
            let mut report = Report::new("oracle strong");
            match found {
                Some((first, second)) => {
                    report.verdict("sources with one output agree", "no");
                    let image = tr.apply(&first).expect("counterexamples come from the domain");
                    report.fact("first source", first.to_string());
                    report.fact("second source", second.to_string());
                    report.fact("shared output", image.to_string());
                    report.fact("first values", format_value_tuples(&q.eval_values(&first)));
                    report.fact("second values", format_value_tuples(&q.eval_values(&second)));
                    Ok((report, 1))
                }
                None => {
                    report.verdict("sources with one output agree", "yes");
                    Ok((report, 0))
                }
            }
        }
        OracleOp::Language { input } => {
            let a = load_automaton(input)?.eliminate_epsilon();
            let trees = language_up_to(&a, &enumeration).map_err(oracle_failure)?;
            let mut report = Report::new("oracle language");
            report.fact("accepted trees", trees.len().to_string());
            for t in trees {
                report.body_line(t.to_string());
            }
            Ok((report, 0))
        }
    }
}
