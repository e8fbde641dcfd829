//! `semirng`: semiring computations over CTC and RNN-T lattices.
//!
//! Machine-readable JSON goes to stdout (byte-identical across runs for
//! identical inputs); diagnostics go to stderr. Exit codes: 0 success,
//! 2 validation error, 3 infeasible-alignment posterior request.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use semirng_core::axioms;
use semirng_core::ctc::{build_ctc_lattice, ctc_state_posteriors, CtcLattice};
use semirng_core::engine::{compute, compute_wavefront, count_ops, lift_table, ComputeOptions};
use semirng_core::error::CtcError;
use semirng_core::io::{json_number, load_case, write_tensor, CaseInput, Tensor};
use semirng_core::lattice::Lattice;
use semirng_core::losses::{
    ctc_semiring_distillation_loss, rnnt_semiring_distillation_loss, LossConfig, LossReport,
    ModelKind,
};
use semirng_core::oracle::{enumerate_paths, oracle_quantities, OracleMode};
use semirng_core::rnnt::{build_rnnt_lattice, wavefront_schedule, RnntLattice};
use semirng_core::semiring::{SemiringId, SemiringValue};
use semirng_core::{gradient, GradientTable};

#[derive(Parser)]
#[command(name = "semirng", version, about = "Semiring DP over alignment lattices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute over a CTC case file
    Ctc(LatticeArgs),
    /// Compute over an RNN-T case file
    Rnnt(LatticeArgs),
    /// Distillation losses (requires teacher tensors in the case file)
    Distill(DistillArgs),
    /// Run the randomized semiring-axiom suite
    Axioms(AxiomArgs),
    /// Time sequential vs wavefront schedules on a synthetic grid
    Bench(BenchArgs),
}

#[derive(Args)]
struct LatticeArgs {
    /// JSON case file
    case: PathBuf,
    /// Semiring to run (probability, log, tropical, counting, entropy,
    /// log-entropy, log-reverse-kl)
    #[arg(long)]
    semiring: Option<String>,
    /// Also report alignment entropy (log-entropy pass)
    #[arg(long)]
    entropy: bool,
    /// Report d(total)/d(input log-probabilities)
    #[arg(long)]
    grad: bool,
    /// Write CTC state posteriors to this tensor file
    #[arg(long, value_name = "OUT")]
    posteriors: Option<PathBuf>,
    /// Mirror every reported quantity with brute-force enumeration
    #[arg(long)]
    oracle_check: bool,
    /// Report scalar multiplication/addition counts of the pass
    #[arg(long)]
    count_ops: bool,
    /// Entropy-regularization weight: total = nll - alpha * entropy
    #[arg(long, value_name = "A")]
    alpha_ent: Option<f64>,
    /// RNN-T only: require alignments to end with the final blank
    #[arg(long)]
    final_blank: bool,
    /// Accept NaN payload entries in tensor files
    #[arg(long)]
    allow_nan: bool,
}

#[derive(Args)]
struct DistillArgs {
    case: PathBuf,
    #[arg(long, default_value_t = 0.0)]
    alpha_state: f64,
    #[arg(long, default_value_t = 0.0)]
    alpha_seq: f64,
    #[arg(long)]
    allow_nan: bool,
}

#[derive(Args)]
struct AxiomArgs {
    /// Restrict to one semiring (default: all seven)
    #[arg(long)]
    semiring: Option<String>,
    #[arg(long, default_value_t = axioms::DEFAULT_TRIALS)]
    trials: usize,
    #[arg(long, default_value_t = axioms::DEFAULT_SEED)]
    seed: u64,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    t: usize,
    #[arg(long)]
    u: usize,
    #[arg(long, default_value = "log-entropy")]
    semiring: String,
    #[arg(long, default_value_t = 3)]
    repeat: usize,
}

struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn validation(msg: impl Into<String>) -> Self {
        Failure {
            code: 2,
            msg: msg.into(),
        }
    }

    fn from_display(e: impl std::fmt::Display) -> Self {
        Failure::validation(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Ctc(args) => run_lattice(Kind::Ctc, args),
        Command::Rnnt(args) => run_lattice(Kind::Rnnt, args),
        Command::Distill(args) => run_distill(args),
        Command::Axioms(args) => run_axioms(args),
        Command::Bench(args) => run_bench(args),
    };
    match result {
        Ok(json) => {
            println!("{json}");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn env_threads() -> usize {
    std::env::var("SEMIRNG_THREADS")
        .ok()
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

#[derive(Clone, Copy, PartialEq)]
enum Kind {
    Ctc,
    Rnnt,
}

/// Everything the selected pass produced, ready for JSON assembly.
#[derive(Default)]
struct Report {
    nll: Option<f64>,
    entropy: Option<f64>,
    kl_seq: Option<f64>,
    total: Option<f64>,
    grad: Option<GradientTable>,
    ops: Option<(u64, u64)>,
    oracle: Vec<(&'static str, String)>,
    paths: Option<u64>,
}

fn run_lattice(kind: Kind, args: LatticeArgs) -> Result<String, Failure> {
    let (_case, input) = load_case(&args.case, args.allow_nan).map_err(Failure::from_display)?;

    if args.final_blank && kind == Kind::Ctc {
        return Err(Failure::validation("--final-blank applies to rnnt only"));
    }
    if args.posteriors.is_some() && kind == Kind::Rnnt {
        return Err(Failure::validation("--posteriors applies to ctc only"));
    }

    // pin down the semiring of the main pass
    let wants_entropy = args.entropy || args.alpha_ent.is_some();
    let semiring = match &args.semiring {
        Some(name) => {
            let s: SemiringId = name.parse().map_err(Failure::from_display)?;
            if wants_entropy && s != SemiringId::LogEntropy {
                return Err(Failure::validation(
                    "--entropy / --alpha-ent require the log-entropy semiring",
                ));
            }
            s
        }
        None if wants_entropy => SemiringId::LogEntropy,
        None => SemiringId::Log,
    };

    let bundle = match (&input, kind) {
        (CaseInput::Ctc { labels, student, teacher }, Kind::Ctc) => {
            let cl = build_ctc_lattice(student.frames(), labels, student.vocab())
                .map_err(Failure::from_display)?;
            LatticeBundle {
                ctc: Some(cl),
                rnnt: None,
                student: student.table().to_vec(),
                teacher: teacher.as_ref().map(|t| t.table().to_vec()),
                student_normalized: student.normalized(),
                teacher_normalized: teacher.as_ref().map(|t| t.normalized()).unwrap_or(false),
            }
        }
        (CaseInput::Rnnt { student, teacher, .. }, Kind::Rnnt) => {
            let rl = build_rnnt_lattice(student.frames(), student.labels(), args.final_blank);
            LatticeBundle {
                ctc: None,
                rnnt: Some(rl),
                student: student.weight_table(),
                teacher: teacher.as_ref().map(|t| t.weight_table()),
                student_normalized: student.normalized(),
                teacher_normalized: teacher.as_ref().map(|t| t.normalized()).unwrap_or(false),
            }
        }
        (CaseInput::Ctc { .. }, Kind::Rnnt) => {
            return Err(Failure::validation("case kind is \"ctc\"; use the ctc subcommand"))
        }
        (CaseInput::Rnnt { .. }, Kind::Ctc) => {
            return Err(Failure::validation("case kind is \"rnnt\"; use the rnnt subcommand"))
        }
    };

    let report = evaluate(&bundle, semiring, &args)?;

    if let Some(out) = &args.posteriors {
        let (CaseInput::Ctc { labels, student, .. }, Some(cl)) = (&input, &bundle.ctc) else {
            unreachable!("validated above");
        };
        let post = match ctc_state_posteriors(student, labels) {
            Ok(p) => p,
            Err(CtcError::InfeasibleAlignment) => {
                return Err(Failure {
                    code: 3,
                    msg: "infeasible alignment: posteriors undefined (P(y|x) = 0)".into(),
                })
            }
            Err(e) => return Err(Failure::from_display(e)),
        };
        let tensor = Tensor::new(vec![cl.frames(), cl.states()], post);
        write_tensor(out, &tensor).map_err(Failure::from_display)?;
    }

    Ok(render_report(&report))
}

struct LatticeBundle {
    ctc: Option<CtcLattice>,
    rnnt: Option<RnntLattice>,
    student: Vec<f64>,
    teacher: Option<Vec<f64>>,
    student_normalized: bool,
    teacher_normalized: bool,
}

impl LatticeBundle {
    fn lattice(&self) -> &Lattice {
        match (&self.ctc, &self.rnnt) {
            (Some(c), None) => c.lattice(),
            (None, Some(r)) => r.lattice(),
            _ => unreachable!(),
        }
    }
}

fn evaluate(bundle: &LatticeBundle, semiring: SemiringId, args: &LatticeArgs) -> Result<Report, Failure> {
    let lattice = bundle.lattice();
    let mut report = Report::default();

    // entropy-class passes are only meaningful on normalized inputs
    let needs_normalized = matches!(
        semiring,
        SemiringId::Entropy | SemiringId::LogEntropy | SemiringId::LogReverseKl
    );
    if needs_normalized && !bundle.student_normalized {
        return Err(Failure::validation(format!(
            "semiring {semiring} requires normalized log-probabilities"
        )));
    }
    let teacher = match semiring.needs_teacher() {
        false => None,
        true => {
            let t = bundle.teacher.as_deref().ok_or_else(|| {
                Failure::validation("log-reverse-kl requires teacher tensors in the case file")
            })?;
            if !bundle.teacher_normalized {
                return Err(Failure::validation(
                    "log-reverse-kl requires a normalized teacher",
                ));
            }
            Some(t)
        }
    };

    let weights = match semiring {
        SemiringId::Counting => vec![SemiringValue::Count(1); bundle.student.len()],
        _ => lift_table(&bundle.student, teacher, semiring).map_err(Failure::from_display)?,
    };

    let opts = ComputeOptions {
        want_ops: args.count_ops,
        ..Default::default()
    };
    let threads = env_threads();
    let result = match &bundle.rnnt {
        Some(rl) if !rl.final_blank() && threads > 0 => {
            let groups = wavefront_schedule(rl.frames(), rl.labels());
            compute_wavefront(lattice, &weights, semiring, opts, &groups, threads)
        }
        _ => compute(lattice, &weights, semiring, opts),
    }
    .map_err(Failure::from_display)?;

    if let Some(ops) = result.ops {
        report.ops = Some((ops.real_multiplications, ops.real_additions));
    }

    match semiring {
        SemiringId::Probability => {
            report.nll = Some(-result.total.component(0).ln());
        }
        SemiringId::Log => {
            report.nll = Some(-result.total.component(0));
        }
        SemiringId::Tropical => {
            // NLL of the single best alignment
            report.nll = Some(-result.total.component(0));
        }
        SemiringId::Counting => {
            report.paths = Some(match result.total {
                SemiringValue::Count(n) => n,
                _ => unreachable!(),
            });
        }
        SemiringId::Entropy => {
            report.nll = Some(-result.total.component(0).ln());
            report.entropy = Some(-result.total.component(1));
        }
        SemiringId::LogEntropy => {
            report.nll = Some(-result.total.component(0));
            report.entropy = Some(result.total.component(1).exp());
        }
        SemiringId::LogReverseKl => {
            report.nll = Some(-result.total.component(0));
            report.kl_seq = Some(result.total.component(3).exp() - result.total.component(2).exp());
        }
    }

    if let Some(alpha) = args.alpha_ent {
        let (nll, h) = (report.nll.unwrap(), report.entropy.unwrap());
        report.total = Some(nll - alpha * h);
    }

    if args.grad {
        let component_nll_sign: (usize, f64) = match semiring {
            SemiringId::Log | SemiringId::LogEntropy | SemiringId::LogReverseKl => (0, -1.0),
            other => {
                return Err(Failure::validation(format!(
                    "--grad is unsupported for the {other} semiring"
                )))
            }
        };
        let mut g = gradient(lattice, &bundle.student, teacher, semiring, component_nll_sign.0)
            .map_err(Failure::from_display)?;
        g.scale(component_nll_sign.1);
        if let Some(alpha) = args.alpha_ent {
            // d total = d nll - alpha * H * d c1
            let h = report.entropy.unwrap();
            if alpha != 0.0 && h != 0.0 {
                let g_ent = gradient(lattice, &bundle.student, None, SemiringId::LogEntropy, 1)
                    .map_err(Failure::from_display)?;
                g.axpy(-alpha * h, &g_ent);
            }
        }
        report.grad = Some(g);
    }

    if args.oracle_check {
        let paths = enumerate_paths(lattice, &bundle.student, teacher.map(|t| &t[..]))
            .map_err(Failure::from_display)?;
        report.paths = Some(paths.len() as u64);
        let mut oracle = Vec::new();
        if report.nll.is_some() {
            let o_nll = match semiring {
                SemiringId::Tropical => -semirng_core::oracle::best_path_logp(&paths),
                _ => -oracle_quantities(&paths, OracleMode::Likelihood).ln(),
            };
            oracle.push(("nll", json_number(o_nll)));
        }
        if report.entropy.is_some() {
            oracle.push((
                "entropy",
                json_number(oracle_quantities(&paths, OracleMode::Entropy)),
            ));
        }
        if report.kl_seq.is_some() {
            oracle.push(("kl_seq", json_number(oracle_quantities(&paths, OracleMode::Kl))));
        }
        if let Some(alpha) = args.alpha_ent {
            let o_nll = -oracle_quantities(&paths, OracleMode::Likelihood).ln();
            let o_h = oracle_quantities(&paths, OracleMode::Entropy);
            oracle.push(("total", json_number(o_nll - alpha * o_h)));
        }
        report.oracle = oracle;
    }

    Ok(report)
}

fn render_report(r: &Report) -> String {
    let mut fields: Vec<(&str, String)> = Vec::new();
    if let Some(x) = r.nll {
        fields.push(("nll", json_number(x)));
    }
    if let Some(x) = r.entropy {
        fields.push(("entropy", json_number(x)));
    }
    if let Some(x) = r.kl_seq {
        fields.push(("kl_seq", json_number(x)));
    }
    if let Some(x) = r.total {
        fields.push(("total", json_number(x)));
    }
    if let Some(g) = &r.grad {
        let entries: Vec<String> = g
            .iter()
            .map(|(k, v)| format!("\"{k}\":{}", json_number(v)))
            .collect();
        fields.push(("grad", format!("{{{}}}", entries.join(","))));
    }
    if let Some((mul, add)) = r.ops {
        fields.push(("ops", format!("{{\"mul\":{mul},\"add\":{add}}}")));
    }
    if !r.oracle.is_empty() {
        let entries: Vec<String> = r
            .oracle
            .iter()
            .map(|(k, v)| format!("\"{k}\":{v}"))
            .collect();
        fields.push(("oracle", format!("{{{}}}", entries.join(","))));
    }
    if let Some(n) = r.paths {
        fields.push(("paths", n.to_string()));
    }
    render_object(&fields)
}

fn render_object(fields: &[(&str, String)]) -> String {
    let entries: Vec<String> = fields
        .iter()
        .map(|(k, v)| format!("\"{k}\":{v}"))
        .collect();
    format!("{{{}}}", entries.join(","))
}

fn run_distill(args: DistillArgs) -> Result<String, Failure> {
    let (_case, input) = load_case(&args.case, args.allow_nan).map_err(Failure::from_display)?;
    let (report, _ops) = match &input {
        CaseInput::Ctc {
            labels,
            student,
            teacher,
        } => {
            let teacher = teacher
                .as_ref()
                .ok_or_else(|| Failure::validation("distill requires teacher_logits"))?;
            let cfg = LossConfig::new(0.0, args.alpha_state, args.alpha_seq, 0.0, ModelKind::Ctc)
                .map_err(Failure::from_display)?;
            ctc_semiring_distillation_loss(teacher, student, labels, &cfg)
                .map_err(Failure::from_display)?
        }
        CaseInput::Rnnt {
            labels,
            blank_id,
            student_joint,
            teacher_joint,
            ..
        } => {
            let (Some(student), Some(teacher)) = (student_joint, teacher_joint) else {
                return Err(Failure::validation(
                    "distill requires full joint logits and teacher_logits (pre-sliced tensors cannot produce kl_state)",
                ));
            };
            let cfg = LossConfig::new(0.0, args.alpha_state, args.alpha_seq, 0.0, ModelKind::Rnnt)
                .map_err(Failure::from_display)?;
            rnnt_semiring_distillation_loss(teacher, student, labels, *blank_id, &cfg)
                .map_err(Failure::from_display)?
        }
    };
    Ok(render_loss_report(&report))
}

fn render_loss_report(r: &LossReport) -> String {
    let mut fields: Vec<(&str, String)> = vec![("nll", json_number(r.nll))];
    if let Some(x) = r.entropy {
        fields.push(("entropy", json_number(x)));
    }
    if let Some(x) = r.kl_state {
        fields.push(("kl_state", json_number(x)));
    }
    if let Some(x) = r.kl_seq {
        fields.push(("kl_seq", json_number(x)));
    }
    if let Some(x) = r.teacher_entropy_term {
        fields.push(("teacher_entropy_term", json_number(x)));
    }
    fields.push(("total", json_number(r.total)));
    render_object(&fields)
}

fn run_axioms(args: AxiomArgs) -> Result<String, Failure> {
    let semirings: Vec<SemiringId> = match &args.semiring {
        Some(name) => vec![name.parse().map_err(Failure::from_display)?],
        None => SemiringId::ALL.to_vec(),
    };
    let mut results = Vec::new();
    let mut all_ok = true;
    for s in semirings {
        let report = axioms::check_semiring(s, args.trials, axioms::DEFAULT_TOLERANCE, args.seed);
        let ok = report.passed();
        all_ok &= ok;
        for failure in report.failures.iter().take(3) {
            eprintln!(
                "axiom failure: semiring={} law={} trial={}",
                s,
                failure.law.name(),
                failure.trial
            );
        }
        results.push(format!(
            "{{\"semiring\":\"{}\",\"failures\":{}}}",
            s,
            report.failures.len()
        ));
    }
    let json = format!(
        "{{\"trials\":{},\"tolerance\":{},\"results\":[{}],\"ok\":{}}}",
        args.trials,
        json_number(axioms::DEFAULT_TOLERANCE),
        results.join(","),
        all_ok
    );
    if all_ok {
        Ok(json)
    } else {
        // report goes to stdout either way; the exit code carries the verdict
        println!("{json}");
        Err(Failure {
            code: 1,
            msg: "axiom suite failed".into(),
        })
    }
}

fn run_bench(args: BenchArgs) -> Result<String, Failure> {
    let semiring: SemiringId = args.semiring.parse().map_err(Failure::from_display)?;
    if args.t < 1 {
        return Err(Failure::validation("--t must be >= 1"));
    }
    let rl = build_rnnt_lattice(args.t, args.u, false);
    let len = args.t * (args.u + 1) + (args.t + 1) * args.u;
    // synthetic but deterministic weights
    let logp: Vec<f64> = (0..len)
        .map(|i| -0.05 - ((i * 2654435761) % 1000) as f64 / 1000.0)
        .collect();
    let weights = match semiring {
        SemiringId::Counting => vec![SemiringValue::Count(1); len],
        _ => lift_table(&logp, semiring.needs_teacher().then_some(&logp[..]), semiring)
            .map_err(Failure::from_display)?,
    };
    let groups = wavefront_schedule(args.t, args.u);
    let threads = env_threads();

    let mut sequential_total = None;
    let mut wavefront_total = None;
    let mut seq_ns: u128 = 0;
    let mut wave_ns: u128 = 0;
    for _ in 0..args.repeat.max(1) {
        let start = std::time::Instant::now();
        let r = compute(rl.lattice(), &weights, semiring, ComputeOptions::default())
            .map_err(Failure::from_display)?;
        seq_ns += start.elapsed().as_nanos();
        sequential_total = Some(r.total);

        let start = std::time::Instant::now();
        let r = compute_wavefront(
            rl.lattice(),
            &weights,
            semiring,
            ComputeOptions::default(),
            &groups,
            threads,
        )
        .map_err(Failure::from_display)?;
        wave_ns += start.elapsed().as_nanos();
        wavefront_total = Some(r.total);
    }
    let repeat = args.repeat.max(1) as u128;
    eprintln!(
        "bench t={} u={} semiring={} threads={}: sequential {} us/run, wavefront {} us/run",
        args.t,
        args.u,
        semiring,
        threads,
        seq_ns / repeat / 1000,
        wave_ns / repeat / 1000
    );

    let ops = count_ops(rl.lattice(), semiring);
    let bitwise_equal = sequential_total == wavefront_total;
    let total_str = match sequential_total.unwrap() {
        SemiringValue::Count(n) => n.to_string(),
        v => {
            let comps: Vec<String> = (0..semiring.arity()).map(|i| json_number(v.component(i))).collect();
            format!("[{}]", comps.join(","))
        }
    };
    Ok(render_object(&[
        ("t", args.t.to_string()),
        ("u", args.u.to_string()),
        ("semiring", format!("\"{semiring}\"")),
        ("repeat", args.repeat.to_string()),
        ("edges", rl.lattice().edges().len().to_string()),
        (
            "ops",
            format!(
                "{{\"mul\":{},\"add\":{}}}",
                ops.real_multiplications, ops.real_additions
            ),
        ),
        ("total", total_str),
        ("bitwise_equal", bitwise_equal.to_string()),
    ]))
}
