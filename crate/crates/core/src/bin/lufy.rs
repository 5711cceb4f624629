use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use lufy_core::eval::{self, ContainmentJudge, EvalReport};
use lufy_core::fitting::{annotate, lm_fit, load_corpus, AnnotatedExample, FitConfig};
use lufy_core::forgetting::Strategy;
use lufy_core::session::load_qa;
use lufy_core::{ChatEngine, EngineConfig, Error, Result};

#[derive(Parser)]
#[command(name = "lufy", version, about = "Conversational memory engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EngineArgs {
    /// JSON config file.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override the configured strategy.
    #[arg(long)]
    strategy: Option<Strategy>,
    /// Override the configured store path.
    #[arg(long)]
    store: Option<PathBuf>,
}

impl EngineArgs {
    fn config(&self) -> Result<EngineConfig> {
        let mut c = match &self.config {
            Some(p) => EngineConfig::load(p)?,
            None => EngineConfig::default(),
        };
        if let Some(s) = self.strategy {
            c.strategy = s;
        }
        if let Some(p) = &self.store {
            c.store_path = Some(p.clone());
        }
        c.validate()?;
        Ok(c)
    }

    fn engine(&self) -> Result<ChatEngine> {
        ChatEngine::from_config(self.config()?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP service.
    Serve {
        #[command(flatten)]
        engine: EngineArgs,
        /// Override the configured bind address.
        #[arg(long)]
        bind: Option<String>,
    },
    /// Chat in the terminal. `/end` closes the session, `/quit` exits.
    Chat {
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Feed a transcript of `{"session": n, "user": "..."}` lines.
    Replay {
        transcript: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Fit weights on an annotated corpus.
    Fit {
        corpus: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        lambda: f64,
        /// Use metrics as written instead of regularizing them first.
        #[arg(long)]
        raw: bool,
        /// Write the fitted weights here as JSON.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a QA corpus against a store.
    Eval {
        qa: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Retrieval-only PRF across cosine thresholds.
    Sweep {
        #[arg(long)]
        qa: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, default_value_t = 0.75)]
        from: f64,
        #[arg(long, default_value_t = 0.83)]
        to: f64,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
    },
}

#[derive(Deserialize)]
struct ReplayLine {
    session: u32,
    user: String,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Serve { engine, bind } => {
            let config = engine.config()?;
            let bind = bind.unwrap_or_else(|| config.bind.clone());
            let engine = ChatEngine::from_config(config)?;
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(lufy_core::server::serve(engine, &bind))
        }
        Command::Chat { engine } => chat(engine.engine()?),
        Command::Replay { transcript, engine } => replay(engine.engine()?, &transcript),
        Command::Fit {
            corpus,
            lambda,
            raw,
            out,
        } => fit(&corpus, lambda, raw, out),
        Command::Eval { qa, engine, json, csv } => {
            let engine = engine.engine()?;
            let pairs = load_qa(&qa)?;
            let mut verdicts = Vec::with_capacity(pairs.len());
            for p in &pairs {
                verdicts.push(eval::answer_qa(&engine, p, &ContainmentJudge)?);
            }
            let c = engine.config();
            let report = EvalReport {
                strategy: c.strategy.to_string(),
                qa: if verdicts.is_empty() { None } else { Some(eval::qa_report(&verdicts)?) },
                retention: eval::retention_rows(engine.store().reports()),
                sweep: Vec::new(),
                topk: eval::topk_hit_ratio(
                    &pairs,
                    engine.store(),
                    engine.providers().embedder.as_ref(),
                    10,
                    c.retrieval_alpha(),
                )?,
                verdicts,
            };
            report.print_summary(&mut io::stdout())?;
            if let Some(p) = json {
                report.write_json(&p)?;
            }
            if let Some(p) = csv {
                report.write_csv(&p)?;
            }
            Ok(())
        }
        Command::Sweep {
            qa,
            engine,
            from,
            to,
            step,
        } => {
            if !(step > 0.0 && from <= to) {
                return Err(Error::InvalidInput("need from <= to and step > 0".into()));
            }
            let engine = engine.engine()?;
            let pairs = load_qa(&qa)?;
            let n = ((to - from) / step + 1e-9).floor() as usize;
            let ts: Vec<f64> = (0..=n).map(|i| from + step * i as f64).collect();
            let c = engine.config();
            let points = eval::sweep_thresholds(
                &pairs,
                engine.store(),
                engine.providers().embedder.as_ref(),
                &ts,
                c.k,
                c.retrieval_alpha(),
            )?;
            println!("threshold,precision,recall,f1");
            for p in points {
                println!("{:.3},{:.4},{:.4},{:.4}", p.threshold, p.precision, p.recall, p.f1);
            }
            Ok(())
        }
    }
}

fn chat(mut engine: ChatEngine) -> Result<()> {
    let mut session = match engine.store().open_session() {
        Some(s) => s,
        None => engine.open_session()?,
    };
    println!("session {session} ({}). /end closes it, /quit exits.", engine.config().strategy);
    let stdin = io::stdin();
    let mut out = io::stdout();
    loop {
        write!(out, "you> ")?;
        out.flush()?;
        let mut line = String::new();
        if stdin.lock().read_line(&mut line)? == 0 {
            break;
        }
        match line.trim() {
            "" => continue,
            "/quit" => break,
            "/end" => {
                let r = engine.close_session(session)?;
                println!("kept {} of {} memories", r.retained, r.considered);
                session = engine.open_session()?;
                println!("session {session}");
            }
            text => match engine.handle_turn(session, text) {
                Ok(t) => println!("bot> {}", t.bot_text),
                Err(e) => eprintln!("turn failed: {e}"),
            },
        }
    }
    engine.flush()
}

fn replay(mut engine: ChatEngine, path: &std::path::Path) -> Result<()> {
    let text = std::fs::read_to_string(path)?;
    let mut current: Option<(u32, u32)> = None;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let l: ReplayLine = serde_json::from_str(line).map_err(|e| Error::Persistence {
            path: path.display().to_string(),
            line: i + 1,
            reason: e.to_string(),
        })?;
        let session = match current {
            Some((label, s)) if label == l.session => s,
            previous => {
                if let Some((_, s)) = previous {
                    print_close(&mut engine, s)?;
                }
                let s = engine.open_session()?;
                current = Some((l.session, s));
                s
            }
        };
        let t = engine.handle_turn(session, &l.user)?;
        println!("[{session}] user: {}", l.user);
        println!("[{session}] bot:  {}", t.bot_text);
    }
    if let Some((_, s)) = current {
        print_close(&mut engine, s)?;
    }
    engine.flush()
}

fn print_close(engine: &mut ChatEngine, session: u32) -> Result<()> {
    let r = engine.close_session(session)?;
    println!(
        "session {session} closed: kept {} of {} ({:.1}%)",
        r.retained,
        r.considered,
        100.0 * r.pass_rate
    );
    Ok(())
}

fn fit(corpus: &std::path::Path, lambda: f64, raw: bool, out: Option<PathBuf>) -> Result<()> {
    let lines = load_corpus(corpus)?;
    let data: Vec<AnnotatedExample> = if raw {
        lines
            .iter()
            .map(|c| AnnotatedExample {
                metrics: c.metrics,
                label: c.label,
            })
            .collect()
    } else {
        annotate(&lines)?
    };
    let stage1 = FitConfig {
        lambda,
        ..FitConfig::default()
    };
    let first = lm_fit(&data, &stage1)?;
    let second = lm_fit(
        &data,
        &FitConfig {
            lambda,
            ..FitConfig::stage2_from(&first.weights)
        },
    )?;
    for (name, r) in [("stage 1", &first), ("stage 2", &second)] {
        println!(
            "{name}: loss {:.6} -> {:.6} in {} iterations{}",
            r.initial_loss,
            r.final_loss,
            r.iterations,
            if r.converged { "" } else { " (not converged)" }
        );
    }
    let w = second.weight_vector(lufy_core::retrieval::DEFAULT_ALPHA);
    let text = serde_json::to_string_pretty(&w).map_err(io::Error::other)?;
    println!("{text}");
    if let Some(p) = out {
        std::fs::write(p, text)?;
    }
    Ok(())
}
