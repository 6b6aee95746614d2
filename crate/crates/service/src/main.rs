use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use ed25519_dalek::SigningKey;
use serde_json::json;
use trustreg_core::commitment::CommitmentLog;
use trustreg_core::config::ServiceConfig;
use trustreg_core::identity::key_to_hex;
use trustreg_core::quorum::{replay, Cluster, EventLog, LogError, Participant, Payload, SignedRequest, COMMITMENTS_FILE, EVENTS_FILE};
use trustreg_core::scenario::{bundled, bundled_scenario, Scenario};
use trustreg_core::settlement::{verify_settlement, SettlementPrivateInputs, SettlementTranscript};
use trustreg_service::{router, shared, ApiEnvelope};

const CONFIG_FILE: &str = "config.toml";
const REPORT_FILE: &str = "report.json";

#[derive(Parser)]
#[command(name = "trustreg", version, about = "Web-of-trust issuer registry with a simulated maintainer quorum")]
struct Cli {
    /// Flat TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed for maintainer keys, participants and scenarios.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding the event log, commitment log and effective config.
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Runs the HTTP service.
    Serve {
        #[arg(long)]
        listen: Option<String>,
    },
    /// Runs a scenario script (a file or a bundled name) and prints its report.
    Scenario {
        script: Option<String>,
        /// Lists the bundled scenarios.
        #[arg(long)]
        list: bool,
    },
    /// Rebuilds state from an event log and checks every commitment.
    Replay {
        /// Event log to read instead of the one in --data-dir.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Prints the deterministic keys for a participant DID, or for every
    /// maintainer when given `maintainers`.
    Keygen { label: String },
    /// Signs a payload with a seed-derived key and prints the API envelope.
    Sign {
        /// Payload as JSON, e.g. '{"faucet":{"amount":500}}'.
        payload: String,
        #[arg(long, conflicts_with = "maintainer", required_unless_present = "maintainer")]
        did: Option<String>,
        /// Sign as maintainer number N instead of a participant.
        #[arg(long)]
        maintainer: Option<usize>,
        #[arg(long)]
        nonce: u64,
        #[arg(long, default_value = "cli")]
        request_id: String,
    },
    /// Checks a settlement transcript against its revealed private inputs.
    VerifyTranscript { transcript: PathBuf, reveal: PathBuf },
}

fn load_config(cli: &Cli) -> Result<ServiceConfig> {
    let stored = cli.data_dir.as_ref().map(|d| d.join(CONFIG_FILE)).filter(|p| p.exists());
    let mut cfg = match cli.config.as_ref().or(stored.as_ref()) {
        Some(path) => ServiceConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ServiceConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.data_dir {
        cfg.data_dir = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_config(dir: &Path, cfg: &ServiceConfig) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut stored = cfg.clone();
    stored.data_dir = None;
    std::fs::write(dir.join(CONFIG_FILE), toml::to_string(&stored)?)?;
    Ok(())
}

async fn serve(cfg: ServiceConfig, listen: Option<String>) -> Result<()> {
    let addr = listen.unwrap_or_else(|| cfg.listen.clone());
    let cluster = match &cfg.data_dir {
        Some(dir) => {
            write_config(dir, &cfg)?;
            Cluster::open(cfg.clone(), dir)?
        }
        None => Cluster::new(cfg.clone()),
    };
    tracing::info!(registry_id = %cfg.registry_id(), events = cluster.log().len(), "registry ready");
    let listener = tokio::net::TcpListener::bind(&addr).await.with_context(|| format!("binding {addr}"))?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(shared(cluster))).await?;
    Ok(())
}

fn scenario(cli: &Cli, script: Option<&str>, list: bool) -> Result<()> {
    if list {
        for (name, _) in bundled() {
            println!("{name}");
        }
        return Ok(());
    }
    let Some(script) = script else { bail!("name a scenario file or bundled scenario, or pass --list") };
    let parsed = match bundled_scenario(script) {
        Some(s) => s?,
        None => {
            let text = std::fs::read_to_string(script).with_context(|| format!("reading {script}"))?;
            let name = Path::new(script).file_stem().map_or(script.to_string(), |s| s.to_string_lossy().into_owned());
            Scenario::parse(&name, &text)?
        }
    };
    let parsed = match cli.seed {
        Some(seed) => parsed.with_seed(seed),
        None => parsed,
    };
    let run = parsed.run()?;
    let json = run.report.to_json();
    if let Some(dir) = &cli.data_dir {
        write_config(dir, run.cluster.config())?;
        run.cluster.log().write_to(&dir.join(EVENTS_FILE))?;
        std::fs::write(dir.join(COMMITMENTS_FILE), run.cluster.commitments().to_text())?;
        std::fs::write(dir.join(REPORT_FILE), &json)?;
    }
    print!("{json}");
    Ok(())
}

fn replay_log(cli: &Cli, log: Option<&Path>) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let events = match (log, &cli.data_dir) {
        (Some(path), _) => path.to_path_buf(),
        (None, Some(dir)) => dir.join(EVENTS_FILE),
        (None, None) => bail!("pass --log or --data-dir"),
    };
    let result = EventLog::load(&events).and_then(|l| replay(&cfg, &l));
    let replayed = match result {
        Ok(r) => r,
        Err(LogError::LogCorrupt { index, reason }) => {
            println!("{}", json!({ "status": "corrupt", "index": index, "reason": reason }));
            return Ok(ExitCode::from(2));
        }
        Err(e) => return Err(e.into()),
    };
    let published = cli.data_dir.as_ref().map(|d| d.join(COMMITMENTS_FILE)).filter(|p| p.exists());
    let published_match = match published {
        Some(path) => Some(CommitmentLog::load(&path, &cfg.maintainer_set())? == *replayed.state.commitments()),
        None => None,
    };
    let state = &replayed.state;
    let report = json!({
        "status": if published_match == Some(false) { "mismatch" } else { "ok" },
        "events": state.applied(),
        "epoch": state.current_epoch(),
        "commitments_checked": replayed.commitments_checked,
        "published_commitments_match": published_match,
        "roots": state.roots(),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if published_match == Some(false) { ExitCode::from(3) } else { ExitCode::SUCCESS })
}

fn keygen(cfg: &ServiceConfig, label: &str) -> Result<()> {
    let entry = |id: &str, key: &SigningKey| {
        json!({
            "id": id,
            "signing_key": hex::encode(key.to_bytes()),
            "verification_key": key_to_hex(&key.verifying_key()),
        })
    };
    let out = if label == "maintainers" {
        json!(cfg.maintainer_keys().iter().map(|k| entry(k.id.as_str(), &k.signing_key)).collect::<Vec<_>>())
    } else {
        let p = Participant::derived(cfg.seed, label);
        entry(p.did.as_str(), &p.key)
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

fn sign(cfg: &ServiceConfig, payload: &str, did: Option<&str>, maintainer: Option<usize>, nonce: u64, request_id: String) -> Result<()> {
    let payload: Payload = serde_json::from_str(payload).context("parsing payload")?;
    let body = match (did, maintainer) {
        (_, Some(i)) => {
            let keys = cfg.maintainer_keys();
            let Some(key) = keys.get(i) else { bail!("no maintainer {i}") };
            SignedRequest::sign(key.id.as_str(), payload, nonce, &key.signing_key)
        }
        (Some(did), None) => {
            let p = Participant::derived(cfg.seed, did);
            SignedRequest::sign(p.did.as_str(), payload, nonce, &p.key)
        }
        (None, None) => bail!("pass --did or --maintainer"),
    };
    println!("{}", serde_json::to_string(&ApiEnvelope { request_id, body })?);
    Ok(())
}

fn verify_transcript(cfg: &ServiceConfig, transcript: &Path, reveal: &Path) -> Result<ExitCode> {
    let text = std::fs::read_to_string(transcript)?;
    let t = SettlementTranscript::from_text(&text)?;
    let private: SettlementPrivateInputs = serde_json::from_str(&std::fs::read_to_string(reveal)?)?;
    let ok = verify_settlement(cfg.hash, &t, &private);
    println!("{}", if ok { "accept" } else { "reject" });
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Serve { listen } => {
            let cfg = load_config(&cli)?;
            tokio::runtime::Runtime::new()?.block_on(serve(cfg, listen.clone()))?;
        }
        Command::Scenario { script, list } => scenario(&cli, script.as_deref(), *list)?,
        Command::Replay { log } => return replay_log(&cli, log.as_deref()),
        Command::Keygen { label } => keygen(&load_config(&cli)?, label)?,
        Command::Sign { payload, did, maintainer, nonce, request_id } => {
            sign(&load_config(&cli)?, payload, did.as_deref(), *maintainer, *nonce, request_id.clone())?
        }
        Command::VerifyTranscript { transcript, reveal } => return verify_transcript(&load_config(&cli)?, transcript, reveal),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
