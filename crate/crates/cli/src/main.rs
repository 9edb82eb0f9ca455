use std::io::{self, BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use enclave_gate::batch::{batch_deidentify, BatchOptions};
use enclave_gate_core::audit::verify_bytes;
use enclave_gate_core::{
    AuditAction, AuditEvent, AuditLog, Channel, Flag, FlagSet, FlowRequest, Mode, PayloadClass, PolicySet, Principal, Privilege,
    PseudonymVault, RuleSet, SystemClock, VaultKey, Verdict, Zone,
};
use enclave_gate_gateway::auth::{generate_totp_secret, hash_password};
use enclave_gate_gateway::GatewayConfig;
use rand::rngs::OsRng;
use rand::RngCore;
use serde_json::json;

const OPERATOR: &str = "ops-cli";

#[derive(Parser)]
#[command(name = "enclave-gate", version, about = "Operate the enclave ingress gateway")]
struct Cli {
    /// Gateway configuration file. Supplies default paths for every command;
    /// ENCLAVE_GATE_* variables override it as they do for the gateway.
    #[arg(long, global = true, env = "ENCLAVE_GATE_CONFIG")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the HTTP gateway until interrupted.
    Serve,
    /// De-identify files offline.
    #[command(subcommand)]
    Deid(DeidCommand),
    /// Manage the pseudonym vault and its key.
    #[command(subcommand)]
    Vault(VaultCommand),
    /// Inspect the audit log.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Evaluate the zone policy.
    #[command(subcommand)]
    Policy(PolicyCommand),
    /// Read a password from standard input and print its PHC hash.
    HashPassword {
        /// Also generate a fresh base32 TOTP secret.
        #[arg(long)]
        totp: bool,
    },
}

#[derive(Subcommand)]
enum DeidCommand {
    /// De-identify every file of a directory into another directory.
    Batch(BatchArgs),
}

#[derive(Args)]
struct BatchArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Where to list quarantined inputs [default: OUTPUT/quarantine-manifest.json]
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Rule-set file [default: the standard rule set]
    #[arg(long)]
    rules: Option<PathBuf>,
    #[command(flatten)]
    vault: VaultArgs,
    /// Append audit entries to this log. Do not point it at a log a running gateway holds open.
    #[arg(long)]
    audit: Option<PathBuf>,
}

#[derive(Args)]
struct VaultArgs {
    #[arg(long)]
    vault: Option<PathBuf>,
    #[arg(long)]
    vault_key: Option<PathBuf>,
}

#[derive(Subcommand)]
enum VaultCommand {
    /// Write a new random vault key as hex. Refuses to overwrite.
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a sealed dump of every mapping.
    Export {
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        vault: VaultArgs,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Load mappings from an export made with the same key.
    Import {
        #[arg(long = "in")]
        input: PathBuf,
        #[command(flatten)]
        vault: VaultArgs,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum AuditCommand {
    /// Check every link of the hash chain.
    Verify {
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum PolicyCommand {
    /// Decide one flow and print the decision with its rule trace.
    Check(CheckArgs),
    /// Print the decision for every point of the request domain.
    Matrix {
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = MatrixFormat::Json)]
        format: MatrixFormat,
    },
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    from: Zone,
    #[arg(long)]
    to: Zone,
    #[arg(long)]
    channel: Channel,
    #[arg(long, default_value = "opaque")]
    payload: PayloadClass,
    #[arg(long, default_value = "managed-cluster")]
    mode: Mode,
    /// Repeatable.
    #[arg(long = "flag")]
    flags: Vec<Flag>,
    /// The principal has completed multi-factor authentication.
    #[arg(long)]
    mfa: bool,
    #[arg(long)]
    principal: Option<String>,
    #[arg(long)]
    policy: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Json,
    Tsv,
}

/// Parsed `--config`, loaded lazily because most commands work without one.
struct Ctx {
    config: Option<GatewayConfig>,
}

impl Ctx {
    fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let config = path.map(GatewayConfig::load).transpose().context("loading configuration")?;
        Ok(Ctx { config })
    }

    fn path(&self, flag: Option<PathBuf>, from_config: impl Fn(&GatewayConfig) -> Option<PathBuf>, what: &str) -> anyhow::Result<PathBuf> {
        match flag.or_else(|| self.config.as_ref().and_then(from_config)) {
            Some(p) => Ok(p),
            None => bail!("{what} is required (pass the flag or --config)"),
        }
    }

    fn optional(&self, flag: Option<PathBuf>, from_config: impl Fn(&GatewayConfig) -> Option<PathBuf>) -> Option<PathBuf> {
        flag.or_else(|| self.config.as_ref().and_then(from_config))
    }

    fn vault(&self, args: VaultArgs) -> anyhow::Result<PseudonymVault> {
        let key_path = self.path(args.vault_key, |c| Some(c.vault_key_path.clone()), "--vault-key")?;
        let vault_path = self.path(args.vault, |c| Some(c.vault_path.clone()), "--vault")?;
        let key = VaultKey::load(&key_path).with_context(|| format!("vault key {}", key_path.display()))?;
        PseudonymVault::open(&vault_path, key).with_context(|| format!("vault {}", vault_path.display()))
    }

    fn audit(&self, flag: Option<PathBuf>) -> anyhow::Result<Option<AuditLog>> {
        self.optional(flag, |c| Some(c.audit_path.clone()))
            .map(|p| AuditLog::open(&p, Arc::new(SystemClock)).with_context(|| format!("audit log {}", p.display())))
            .transpose()
    }

    fn policy(&self, flag: Option<PathBuf>) -> anyhow::Result<PolicySet> {
        match self.optional(flag, |c| c.policy_path.clone()) {
            Some(p) => PolicySet::load(&p).with_context(|| format!("policy {}", p.display())),
            None => Ok(PolicySet::shipped()),
        }
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn deid_batch(ctx: &Ctx, args: BatchArgs) -> anyhow::Result<u8> {
    let rules = match ctx.optional(args.rules, |c| c.rules_path.clone()) {
        Some(p) => RuleSet::load(&p).with_context(|| format!("rules {}", p.display()))?,
        None => RuleSet::standard(),
    };
    let vault = ctx.vault(args.vault)?;
    let audit = ctx.audit(args.audit)?;
    if !args.input.is_dir() {
        bail!("input directory {} does not exist", args.input.display());
    }
    let opts = BatchOptions {
        input: &args.input,
        output: &args.output,
        manifest: args.manifest.as_deref(),
        rules: &rules,
        vault: &vault,
        audit: audit.as_ref(),
    };
    let report = batch_deidentify(&opts).context("batch run")?;
    for f in &report.failures {
        eprintln!("error: {}: {}", f.file, f.error);
    }
    print_json(&report)?;
    Ok(report.exit_code() as u8)
}

fn vault_cmd(ctx: &Ctx, cmd: VaultCommand) -> anyhow::Result<u8> {
    match cmd {
        VaultCommand::Keygen { out } => {
            let mut key = [0u8; 32];
            OsRng.fill_bytes(&mut key);
            let mut file = std::fs::OpenOptions::new()
                .write(true)
                .create_new(true)
                .open(&out)
                .with_context(|| format!("creating {}", out.display()))?;
            #[cfg(unix)]
            {
                use std::os::unix::fs::PermissionsExt;
                file.set_permissions(std::fs::Permissions::from_mode(0o600))?;
            }
            writeln!(file, "{}", hex::encode(key))?;
            print_json(&json!({ "key_path": out }))?;
        }
        VaultCommand::Export { out, vault, audit } => {
            let vault = ctx.vault(vault)?;
            let audit = ctx.audit(audit)?;
            let doc = vault.export_mappings(&[Privilege::Export].into_iter().collect())?;
            if let Some(log) = &audit {
                log.append(AuditEvent::new(OPERATOR, AuditAction::VaultExport, "vault", format!("entries={}", vault.len())))?;
            }
            std::fs::write(&out, &doc).with_context(|| format!("writing {}", out.display()))?;
            print_json(&json!({ "entries": vault.len(), "bytes": doc.len(), "path": out }))?;
        }
        VaultCommand::Import { input, vault, audit } => {
            let vault = ctx.vault(vault)?;
            let audit = ctx.audit(audit)?;
            let doc = std::fs::read(&input).with_context(|| format!("reading {}", input.display()))?;
            let added = vault.import_mappings(&doc)?;
            if let Some(log) = &audit {
                log.append(AuditEvent::new(OPERATOR, AuditAction::VaultImport, "vault", format!("imported={added}")))?;
            }
            print_json(&json!({ "added": added, "entries": vault.len() }))?;
        }
    }
    Ok(0)
}

fn audit_verify(ctx: &Ctx, log: Option<PathBuf>) -> anyhow::Result<u8> {
    let path = ctx.path(log, |c| Some(c.audit_path.clone()), "--log")?;
    let bytes = std::fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
    let report = verify_bytes(&bytes);
    print_json(&report)?;
    Ok(if report.ok { 0 } else { 1 })
}

fn policy_check(ctx: &Ctx, args: CheckArgs) -> anyhow::Result<u8> {
    let policy = ctx.policy(args.policy)?;
    let request = FlowRequest {
        principal: Principal { id: args.principal.unwrap_or_else(|| OPERATOR.into()), mfa_verified: args.mfa, mode: args.mode },
        from: args.from,
        to: args.to,
        channel: args.channel,
        payload: args.payload,
        flags: args.flags.into_iter().collect::<FlagSet>(),
    };
    let decision = policy.check_flow(&request);
    print_json(&json!({
        "request": request,
        "verdict": decision.verdict,
        "rule": decision.deciding_rule(),
        "trace": decision.trace,
    }))?;
    Ok(if decision.verdict == Verdict::Allow { 0 } else { 1 })
}

fn policy_matrix(ctx: &Ctx, policy: Option<PathBuf>, format: MatrixFormat) -> anyhow::Result<u8> {
    let rows = ctx.policy(policy)?.enumerate_matrix();
    let mut out = BufWriter::new(io::stdout().lock());
    match format {
        MatrixFormat::Json => {
            writeln!(out, "[")?;
            for (i, row) in rows.iter().enumerate() {
                let sep = if i + 1 < rows.len() { "," } else { "" };
                writeln!(out, "{}{sep}", serde_json::to_string(row)?)?;
            }
            writeln!(out, "]")?;
        }
        MatrixFormat::Tsv => {
            writeln!(out, "from\tto\tchannel\tpayload\tmode\tmfa\tflags\tverdict\trule")?;
            for r in &rows {
                let flags: Vec<String> = r.flags.iter().map(|f| f.to_string()).collect();
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    r.from,
                    r.to,
                    r.channel,
                    r.payload,
                    r.mode,
                    r.mfa,
                    flags.join(","),
                    r.verdict.to_string().to_ascii_lowercase(),
                    r.rule
                )?;
            }
        }
    }
    out.flush()?;
    Ok(0)
}

fn hash_password_cmd(totp: bool) -> anyhow::Result<u8> {
    let mut line = String::new();
    io::stdin().lock().read_line(&mut line)?;
    let password = line.trim_end_matches(['\n', '\r']);
    if password.is_empty() {
        bail!("empty password on standard input");
    }
    let mut doc = json!({ "password_hash": hash_password(password) });
    if totp {
        doc["totp_secret"] = json!(generate_totp_secret());
    }
    print_json(&doc)?;
    Ok(0)
}

fn serve(ctx: Ctx) -> anyhow::Result<u8> {
    let Some(config) = ctx.config else { bail!("serve needs --config") };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .with_writer(io::stderr)
        .init();
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(enclave_gate_gateway::serve(config)).map_err(|e| anyhow::anyhow!(e))?;
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    let ctx = Ctx::load(cli.config.as_deref())?;
    match cli.command {
        Command::Serve => serve(ctx),
        Command::Deid(DeidCommand::Batch(args)) => deid_batch(&ctx, args),
        Command::Vault(cmd) => vault_cmd(&ctx, cmd),
        Command::Audit(AuditCommand::Verify { log }) => audit_verify(&ctx, log),
        Command::Policy(PolicyCommand::Check(args)) => policy_check(&ctx, args),
        Command::Policy(PolicyCommand::Matrix { policy, format }) => policy_matrix(&ctx, policy, format),
        Command::HashPassword { totp } => hash_password_cmd(totp),
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on its own usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.chain().any(|c| c.downcast_ref::<io::Error>().is_some_and(|io| io.kind() == io::ErrorKind::BrokenPipe)) => {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
