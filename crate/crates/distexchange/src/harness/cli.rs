//! Command-line front end: `run` executes a scenario file, `validate`
//! checks one without executing, and `demo` replays the bundled two-user
//! market scenario while narrating each architecture process with its
//! oracle trace. Exit codes: 0 success, 1 scenario failure, 2 usage error.

use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use super::scenario::{parse_scenario, validate_scenario, Action};
use super::{load_taxonomy, run_scenario, RunReport, Scenario, Simulation, StepRecord};

const BUNDLED_ALICE_BOB: &str = include_str!("../../scenarios/alice_bob.scn");

#[derive(Parser)]
#[command(
    name = "distexchange",
    about = "Deterministic data-market simulator with on-ledger usage policies",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario file and print (or write) its run report.
    Run {
        scenario: PathBuf,
        /// Overrides the seed declared in the scenario file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the oracle trace to this file.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the run report to this file instead of stdout.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Parse and validate a scenario file without executing it.
    Validate { scenario: PathBuf },
    /// Replay the bundled two-user scenario and narrate each process.
    Demo,
}

/// Entry point shared by the binary and the tests. `args` must include the
/// program name.
pub fn cli<I>(args: I) -> i32
where
    I: IntoIterator<Item = String>,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match cli.command {
        Command::Run {
            scenario,
            seed,
            trace,
            report,
        } => run_command(&scenario, seed, trace.as_deref(), report.as_deref()),
        Command::Validate { scenario } => validate_command(&scenario),
        Command::Demo => {
            let stdout = std::io::stdout();
            match demo(&mut stdout.lock()) {
                Ok(()) => 0,
                Err(e) => {
                    eprintln!("demo failed: {e}");
                    1
                }
            }
        }
    }
}

fn load_scenario(path: &std::path::Path) -> Result<Scenario, i32> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            eprintln!("cannot read {}: {e}", path.display());
            return Err(2);
        }
    };
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_owned());
    parse_scenario(&text, &name).map_err(|e| {
        eprintln!("{}: {e}", path.display());
        1
    })
}

fn run_command(
    path: &std::path::Path,
    seed: Option<u64>,
    trace: Option<&std::path::Path>,
    report_path: Option<&std::path::Path>,
) -> i32 {
    let mut scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    let report = match run_scenario(&scenario) {
        Ok(report) => report,
        Err(e) => {
            eprintln!("scenario failed at {e}");
            if let Some(trace_path) = trace {
                let _ = std::fs::write(trace_path, e.partial_trace.join("\n"));
            }
            return 1;
        }
    };
    if let Some(trace_path) = trace {
        let mut text = report.trace.join("\n");
        text.push('\n');
        if let Err(e) = std::fs::write(trace_path, text) {
            eprintln!("cannot write {}: {e}", trace_path.display());
            return 2;
        }
    }
    let rendered = report.render();
    match report_path {
        Some(p) => {
            if let Err(e) = std::fs::write(p, &rendered) {
                eprintln!("cannot write {}: {e}", p.display());
                return 2;
            }
        }
        None => print!("{rendered}"),
    }
    if report.all_assertions_pass() {
        0
    } else {
        eprintln!("run finished with failed assertions");
        1
    }
}

fn validate_command(path: &std::path::Path) -> i32 {
    let scenario = match load_scenario(path) {
        Ok(s) => s,
        Err(code) => return code,
    };
    let taxonomy = match load_taxonomy(&scenario.taxonomy) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("{e}");
            return 1;
        }
    };
    let issues = validate_scenario(&scenario, Some(&taxonomy));
    if issues.is_empty() {
        println!(
            "{}: ok ({} steps, seed {})",
            path.display(),
            scenario.steps.len(),
            scenario.seed
        );
        0
    } else {
        for issue in &issues {
            eprintln!("{}: {issue}", path.display());
        }
        1
    }
}

struct Section {
    title: &'static str,
    narrative: &'static str,
    matches: fn(&Action) -> bool,
}

const SECTIONS: &[Section] = &[
    Section {
        title: "Pod initiation",
        narrative: "Each user asks their pod manager to initialize a pod with its \
                    default policy; the manager pushes the pod's web reference and \
                    policy to the market contract.",
        matches: |a| matches!(a, Action::InitPod { .. }),
    },
    Section {
        title: "Resource initiation",
        narrative: "Owners add already-uploaded resources to the market: the pod \
                    manager checks ownership and pushes the resource reference and \
                    its usage policy into the contract's index.",
        matches: |a| matches!(a, Action::Publish { .. }),
    },
    Section {
        title: "Resource indexing",
        narrative: "A consumer's trusted application reads the resource link and \
                    policy straight from the contract via pull-out; nothing is \
                    written on chain.",
        matches: |a| matches!(a, Action::Acquire { .. }),
    },
    Section {
        title: "Resource access",
        narrative: "With a fee certificate in hand, the trusted application fetches \
                    the resource from the owner's pod manager, which verifies the \
                    certificate, serves the bytes, and reports the new copy holder \
                    on chain.",
        matches: |a| matches!(a, Action::PayFee { .. } | Action::Acquire { .. }),
    },
    Section {
        title: "Policy modification",
        narrative: "An owner replaces a resource's policy; the contract bumps the \
                    version and notifies every copy holder via push-out so their \
                    sandboxes apply the change locally.",
        matches: |a| matches!(a, Action::UpdatePolicy { .. }),
    },
    Section {
        title: "Policy monitoring",
        narrative: "The pod manager starts a compliance audit; the contract pulls \
                    signed evidence from every copy holder and pushes the verified \
                    bundle back to the requesting manager.",
        matches: |a| matches!(a, Action::Monitor { .. }),
    },
];

fn section_trace_lines(
    records: &[StepRecord],
    report: &RunReport,
    section: &Section,
) -> Vec<String> {
    let mut lines = Vec::new();
    for record in records.iter().filter(|r| (section.matches)(&r.action)) {
        for line in &report.trace[record.trace_start..record.trace_end] {
            // The acquisition step spans two processes: its pull-out lines
            // belong to indexing, everything else to access.
            let is_pull_out = line.contains(" pull-out ");
            let keep = match section.title {
                "Resource indexing" => is_pull_out,
                "Resource access" => !is_pull_out,
                _ => true,
            };
            if keep {
                lines.push(line.clone());
            }
        }
    }
    lines
}

/// Replays the bundled two-user scenario and prints one labeled section
/// per architecture process, each with its narrative and oracle trace.
pub fn demo(out: &mut dyn Write) -> std::io::Result<()> {
    let scenario = parse_scenario(BUNDLED_ALICE_BOB, "alice_bob").expect("bundled scenario parses");
    let taxonomy = load_taxonomy(&scenario.taxonomy).expect("default taxonomy loads");
    let mut sim = Simulation::new(scenario.seed, taxonomy);
    sim.run_steps(&scenario)
        .map_err(|e| std::io::Error::other(e.to_string()))?;
    let report = sim.report(&scenario.name);
    let records = sim.step_records();

    writeln!(out, "distexchange demo: two users trade datasets under")?;
    writeln!(out, "usage policies, tighten them, and audit compliance.")?;
    writeln!(out)?;

    for (i, section) in SECTIONS.iter().enumerate() {
        writeln!(out, "== Process {}: {} ==", i + 1, section.title)?;
        writeln!(out, "{}", section.narrative)?;
        let steps: Vec<&StepRecord> = records
            .iter()
            .filter(|r| (section.matches)(&r.action))
            .collect();
        for record in &steps {
            writeln!(
                out,
                "  step {} t={} {}: {}",
                record.index, record.at, record.actor, record.outcome
            )?;
        }
        writeln!(out, "  oracle trace:")?;
        for line in section_trace_lines(records, &report, section) {
            writeln!(out, "    {line}")?;
        }
        writeln!(out)?;
    }

    writeln!(out, "== Local enforcement ==")?;
    for record in records
        .iter()
        .filter(|r| matches!(r.action, Action::Use { .. }))
    {
        writeln!(
            out,
            "  t={} {} -> {}",
            record.at, record.actor, record.outcome
        )?;
    }
    writeln!(out)?;
    writeln!(out, "== Outcome ==")?;
    for line in &report.monitors {
        writeln!(out, "  {line}")?;
    }
    writeln!(out, "  blocks sealed: {}", report.blocks)?;
    writeln!(out, "  final head hash: {}", report.final_head_hash)?;
    for a in &report.assertions {
        match &a.failure {
            None => writeln!(out, "  check {}: ok", a.name)?,
            Some(f) => writeln!(out, "  check {}: FAIL {f}", a.name)?,
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_cli(args: &[&str]) -> i32 {
        cli(std::iter::once("distexchange".to_owned()).chain(args.iter().map(|s| (*s).to_owned())))
    }

    #[test]
    fn missing_scenario_file_is_a_usage_error() {
        assert_eq!(run_cli(&["run", "definitely-missing.scn"]), 2);
    }

    #[test]
    fn unknown_subcommand_is_a_usage_error() {
        assert_eq!(run_cli(&["frobnicate"]), 2);
    }

    #[test]
    fn runtime_failures_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.scn");
        std::fs::write(
            &path,
            "0 alice CREATE_ACTOR\n0 alice INIT_POD pod://a\n0 alice INIT_POD pod://a\n",
        )
        .unwrap();
        assert_eq!(run_cli(&["run", path.to_str().unwrap()]), 1);
    }

    #[test]
    fn seed_override_changes_the_head_hash() {
        let dir = tempfile::tempdir().unwrap();
        let scn = dir.path().join("alice_bob.scn");
        std::fs::write(&scn, BUNDLED_ALICE_BOB).unwrap();
        let default_report = dir.path().join("default.txt");
        let seeded_report = dir.path().join("seeded.txt");
        assert_eq!(
            run_cli(&[
                "run",
                scn.to_str().unwrap(),
                "--report",
                default_report.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(
            run_cli(&[
                "run",
                scn.to_str().unwrap(),
                "--seed",
                "9",
                "--report",
                seeded_report.to_str().unwrap()
            ]),
            0
        );
        let default_text = std::fs::read_to_string(&default_report).unwrap();
        let seeded_text = std::fs::read_to_string(&seeded_report).unwrap();
        assert_ne!(default_text, seeded_text);
        assert!(seeded_text.contains("seed 9"));
    }

    #[test]
    fn demo_subcommand_exits_zero() {
        assert_eq!(run_cli(&["demo"]), 0);
    }

    #[test]
    fn help_exits_cleanly() {
        assert_eq!(run_cli(&["--help"]), 0);
    }

    #[test]
    fn demo_prints_all_six_processes() {
        let mut buffer = Vec::new();
        demo(&mut buffer).unwrap();
        let text = String::from_utf8(buffer).unwrap();
        for title in [
            "Pod initiation",
            "Resource initiation",
            "Resource indexing",
            "Resource access",
            "Policy modification",
            "Policy monitoring",
        ] {
            assert!(text.contains(title), "missing section {title}");
        }
        assert!(text.contains("final head hash"));
    }

    #[test]
    fn validate_accepts_bundled_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("alice_bob.scn");
        std::fs::write(&path, BUNDLED_ALICE_BOB).unwrap();
        assert_eq!(run_cli(&["validate", path.to_str().unwrap()]), 0);
    }

    #[test]
    fn validate_flags_broken_scenario() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("broken.scn");
        std::fs::write(&path, "5 - TICK\n0 ghost USE x medical\n").unwrap();
        assert_eq!(run_cli(&["validate", path.to_str().unwrap()]), 1);
    }

    #[test]
    fn run_writes_identical_traces_across_invocations() {
        let dir = tempfile::tempdir().unwrap();
        let scn = dir.path().join("alice_bob.scn");
        std::fs::write(&scn, BUNDLED_ALICE_BOB).unwrap();
        let t1 = dir.path().join("t1.log");
        let t2 = dir.path().join("t2.log");
        let r1 = dir.path().join("r1.txt");
        let r2 = dir.path().join("r2.txt");
        assert_eq!(
            run_cli(&[
                "run",
                scn.to_str().unwrap(),
                "--trace",
                t1.to_str().unwrap(),
                "--report",
                r1.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(
            run_cli(&[
                "run",
                scn.to_str().unwrap(),
                "--trace",
                t2.to_str().unwrap(),
                "--report",
                r2.to_str().unwrap()
            ]),
            0
        );
        assert_eq!(std::fs::read(&t1).unwrap(), std::fs::read(&t2).unwrap());
        assert_eq!(std::fs::read(&r1).unwrap(), std::fs::read(&r2).unwrap());
    }
}
