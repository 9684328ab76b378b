//! `mgvo`: launch VO nodes and call the grid services from a shell.

mod cache;

use std::io::Write;
use std::net::{TcpListener, ToSocketAddrs};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use mgvo::compute::{AlgorithmPayload, JobStatus};
use mgvo::storage::Lfn;
use mgvo::vo::{
    CentralNode, Client, ClientError, ErrorCode, SiteConfig, SiteNode, TcpServer, TcpTransport, Transport,
    TransportError,
};
use mgvo::SystemClock;

use crate::cache::TokenCache;

/// Command-line client and node launcher for a federated mammography grid.
///
/// Exit codes: 0 success, 1 usage or startup error, 2 protocol or
/// authentication error, 3 partial query result (some site reported ERROR).
#[derive(Debug, Parser)]
#[command(name = "mgvo", version)]
struct Cli {
    /// Central node address (host:port).
    #[arg(long, env = "MGVO_CENTRAL", global = true)]
    central: Option<String>,
    /// Per-request timeout in milliseconds.
    #[arg(long, default_value_t = 30_000, global = true)]
    timeout_ms: u64,
    /// Token cache file. Defaults to ~/.mgvo/token.
    #[arg(long, env = "MGVO_TOKEN_CACHE", global = true)]
    token_cache: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Role {
    Central,
    Site,
}

#[derive(Debug, Args)]
struct SiteArg {
    /// Target site: a member name (resolved via the central node) or host:port.
    #[arg(long, env = "MGVO_SITE")]
    site: String,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a central or site node until terminated. Prints "READY <name> <addr>".
    Serve {
        role: Role,
        /// Address to listen on; port 0 picks a free port.
        #[arg(long, default_value = "127.0.0.1:0")]
        listen: String,
        /// Site name (site role).
        #[arg(long)]
        name: Option<String>,
        /// Directory holding the site's store, catalog log and job log.
        #[arg(long)]
        store_root: Option<PathBuf>,
        /// Account as user:secret (central role, repeatable).
        #[arg(long = "user", value_name = "USER:SECRET")]
        users: Vec<String>,
        /// Credential the site registers with (site role).
        #[arg(long, env = "MGVO_SERVICE_USER")]
        service_user: Option<String>,
        #[arg(long, env = "MGVO_SERVICE_SECRET", hide_env_values = true)]
        service_secret: Option<String>,
        /// Per-site timeout for federated queries.
        #[arg(long, default_value_t = 5000)]
        query_timeout_ms: u64,
    },
    /// Authenticate at the central node and cache the token.
    Login {
        #[arg(long)]
        user: String,
        #[arg(long, env = "MGVO_SECRET", hide_env_values = true)]
        secret: String,
    },
    /// List VO members as "name address" lines.
    Sites {
        /// Ask this site instead of the central node.
        #[arg(long)]
        site: Option<String>,
    },
    /// Ingest a DICOM file; prints the assigned LFN.
    Add {
        #[command(flatten)]
        target: SiteArg,
        file: PathBuf,
    },
    /// Fetch a file by LFN into OUT ("-" for standard output).
    Retrieve {
        #[command(flatten)]
        target: SiteArg,
        lfn: String,
        out: PathBuf,
    },
    /// Run a federated query; XML on stdout, per-site summary on stderr.
    Query {
        #[command(flatten)]
        target: SiteArg,
        text: String,
    },
    /// Register an algorithm; prints its LFN.
    AddAlg {
        #[command(flatten)]
        target: SiteArg,
        #[arg(long)]
        name: String,
        #[arg(long)]
        version: String,
        /// Built-in algorithm id, e.g. smf-norm.
        #[arg(long, conflicts_with = "file", required_unless_present = "file")]
        builtin: Option<String>,
        /// Executable to upload.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run an algorithm where its input lives; prints the job record.
    ExecAlg {
        #[command(flatten)]
        target: SiteArg,
        #[arg(long)]
        name: String,
        #[arg(long)]
        version: String,
        #[arg(long)]
        input: String,
    },
}

#[derive(Debug)]
enum Fail {
    Usage(anyhow::Error),
    Remote(anyhow::Error),
    Partial,
}

impl From<ClientError> for Fail {
    fn from(e: ClientError) -> Self {
        Fail::Remote(e.into())
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Fail {
    Fail::Usage(e.into())
}

fn usage_msg(msg: impl std::fmt::Display) -> Fail {
    Fail::Usage(anyhow!("{msg}"))
}

struct Ctx {
    central: Option<String>,
    timeout_ms: u64,
    cache: TokenCache,
}

impl Ctx {
    fn central(&self) -> Result<&str, Fail> {
        self.central
            .as_deref()
            .ok_or_else(|| usage_msg("no central node: pass --central or set MGVO_CENTRAL"))
    }

    fn client(&self) -> Result<Client, Fail> {
        let entry = self
            .cache
            .load()
            .map_err(|e| Fail::Remote(e.context("not logged in; run `mgvo login`")))?;
        Ok(Client::new(Arc::new(TcpTransport::new()), self.timeout_ms).with_token(entry.token))
    }

    /// A site name becomes its registered address; host:port passes through.
    fn resolve(&self, client: &Client, site: &str) -> Result<String, Fail> {
        if site.contains(':') {
            return Ok(site.to_owned());
        }
        client
            .list_sites(self.central()?)?
            .into_iter()
            .find(|s| s.name == site)
            .map(|s| s.address)
            .ok_or_else(|| usage_msg(format!("unknown site {site}")))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_env("MGVO_LOG")
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(std::io::stderr)
        .init();
    let ctx = Ctx {
        central: cli.central,
        timeout_ms: cli.timeout_ms,
        cache: TokenCache::new(cli.token_cache.unwrap_or_else(cache::default_path)),
    };
    match run(&ctx, cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail::Usage(e)) => {
            eprintln!("mgvo: {e:#}");
            ExitCode::from(1)
        }
        Err(Fail::Remote(e)) => {
            eprintln!("mgvo: {e:#}");
            ExitCode::from(2)
        }
        Err(Fail::Partial) => ExitCode::from(3),
    }
}

fn run(ctx: &Ctx, command: Command) -> Result<(), Fail> {
    let mut stdout = std::io::stdout().lock();
    match command {
        Command::Serve {
            role: Role::Central,
            listen,
            users,
            ..
        } => serve_central(&listen, &users),
        Command::Serve {
            role: Role::Site,
            listen,
            name,
            store_root,
            service_user,
            service_secret,
            query_timeout_ms,
            ..
        } => {
            let name = name.ok_or_else(|| usage_msg("serve site needs --name"))?;
            let root = store_root.ok_or_else(|| usage_msg("serve site needs --store-root"))?;
            let user = service_user.ok_or_else(|| usage_msg("serve site needs --service-user"))?;
            let secret = service_secret.ok_or_else(|| usage_msg("serve site needs --service-secret"))?;
            let mut config = SiteConfig::new(&name, "", ctx.central()?);
            config.federation =
                mgvo::federation::FederationConfig::new(query_timeout_ms, true).map_err(usage)?;
            config.call_timeout_ms = ctx.timeout_ms;
            serve_site(config, &listen, &root, &user, &secret)
        }
        Command::Login { user, secret } => {
            let mut client = Client::new(Arc::new(TcpTransport::new()), ctx.timeout_ms);
            let session = client.login(ctx.central()?, &user, &secret)?;
            ctx.cache.store(&session).map_err(usage)?;
            eprintln!(
                "logged in as {}; token cached in {} (expires at {} ms)",
                session.user,
                ctx.cache.path().display(),
                session.expires_at
            );
            Ok(())
        }
        Command::Sites { site } => {
            let client = ctx.client()?;
            let addr = match site {
                Some(s) => ctx.resolve(&client, &s)?,
                None => ctx.central()?.to_owned(),
            };
            for s in client.list_sites(&addr)? {
                writeln!(stdout, "{} {}", s.name, s.address).map_err(usage)?;
            }
            Ok(())
        }
        Command::Add { target, file } => {
            let bytes = std::fs::read(&file)
                .with_context(|| format!("reading {}", file.display()))
                .map_err(usage)?;
            let client = ctx.client()?;
            let receipt = client.add(&ctx.resolve(&client, &target.site)?, &bytes)?;
            writeln!(stdout, "{}", receipt.lfn).map_err(usage)
        }
        Command::Retrieve { target, lfn, out } => {
            let lfn: Lfn = lfn.parse().map_err(usage)?;
            let client = ctx.client()?;
            let bytes = client.retrieve(&ctx.resolve(&client, &target.site)?, &lfn)?;
            if out.as_os_str() == "-" {
                stdout.write_all(&bytes).map_err(usage)
            } else {
                std::fs::write(&out, bytes)
                    .with_context(|| format!("writing {}", out.display()))
                    .map_err(usage)
            }
        }
        Command::Query { target, text } => {
            let client = ctx.client()?;
            let (rs, xml) = client.query(&ctx.resolve(&client, &target.site)?, &text)?;
            writeln!(stdout, "{xml}").map_err(usage)?;
            for s in &rs.sites {
                match s.error_message() {
                    None => eprintln!("{}: {} rows ({} ms)", s.site, s.rows().len(), s.elapsed_ms),
                    Some(m) => eprintln!("{}: ERROR {m} ({} ms)", s.site, s.elapsed_ms),
                }
            }
            eprintln!("total: {} rows from {} sites", rs.total_rows(), rs.sites.len());
            if rs.error_sites().next().is_some() {
                return Err(Fail::Partial);
            }
            Ok(())
        }
        Command::AddAlg {
            target,
            name,
            version,
            builtin,
            file,
        } => {
            let payload = match (builtin, file) {
                (Some(id), _) => AlgorithmPayload::Builtin(id),
                (None, Some(path)) => AlgorithmPayload::Executable(
                    std::fs::read(&path)
                        .with_context(|| format!("reading {}", path.display()))
                        .map_err(usage)?,
                ),
                (None, None) => return Err(usage_msg("pass --builtin or --file")),
            };
            let client = ctx.client()?;
            let lfn =
                client.add_algorithm(&ctx.resolve(&client, &target.site)?, &name, &version, &payload)?;
            writeln!(stdout, "{lfn}").map_err(usage)
        }
        Command::ExecAlg {
            target,
            name,
            version,
            input,
        } => {
            let input: Lfn = input.parse().map_err(usage)?;
            let client = ctx.client()?;
            let job = client.exec_algorithm(&ctx.resolve(&client, &target.site)?, &name, &version, &input)?;
            writeln!(stdout, "{}", job.to_line()).map_err(usage)?;
            match job.status {
                JobStatus::Done => Ok(()),
                JobStatus::Failed => Err(Fail::Remote(anyhow!("job {} failed", job.job_id))),
            }
        }
    }
}

fn ready(name: &str, addr: impl std::fmt::Display) -> ! {
    println!("READY {name} {addr}");
    loop {
        std::thread::park();
    }
}

fn serve_central(listen: &str, users: &[String]) -> Result<(), Fail> {
    let central = Arc::new(CentralNode::new(Arc::new(SystemClock), None));
    for u in users {
        let (user, secret) = u
            .split_once(':')
            .ok_or_else(|| usage_msg(format!("--user expects USER:SECRET, got {u:?}")))?;
        central.add_user(user, secret);
    }
    let server = TcpServer::bind(listen, central)
        .with_context(|| format!("binding {listen}"))
        .map_err(usage)?;
    ready("central", server.local_addr())
}

/// Turns a port-0 listen address into a concrete one, since the site must
/// know the address it advertises before it starts serving.
fn concrete_addr(listen: &str) -> anyhow::Result<String> {
    let addr = listen
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| anyhow!("{listen} resolves to nothing"))?;
    if addr.port() != 0 {
        return Ok(listen.to_owned());
    }
    Ok(TcpListener::bind(addr)?.local_addr()?.to_string())
}

fn serve_site(
    mut config: SiteConfig,
    listen: &str,
    root: &std::path::Path,
    user: &str,
    secret: &str,
) -> Result<(), Fail> {
    let addr = concrete_addr(listen)
        .with_context(|| format!("binding {listen}"))
        .map_err(usage)?;
    config.address = addr.clone();
    let name = config.name.clone();
    let central = config.central.clone();
    let transport: Arc<dyn Transport> = Arc::new(TcpTransport::new());
    let node = Arc::new(
        SiteNode::on_disk(config, root, Arc::clone(&transport), Arc::new(SystemClock))
            .map_err(|e| usage_msg(format!("opening {}: {e}", root.display())))?,
    );
    let server = TcpServer::bind(&addr, node.clone())
        .with_context(|| format!("binding {addr}"))
        .map_err(usage)?;
    match node.register(user, secret) {
        Ok(_) => {}
        Err(ClientError::Transport(e @ (TransportError::Unreachable(_) | TransportError::Timeout))) => {
            return Err(usage_msg(format!("central unreachable: {central}: {e}")));
        }
        Err(e) if e.code() == Some(ErrorCode::DuplicateSite) => {
            // A restarted site may take its old slot back, but only at the same address.
            let mut client = Client::new(transport, 5000);
            let session = client
                .login(&central, user, secret)
                .map_err(|e| usage(anyhow!(e)))?;
            let same = client
                .list_sites(&central)
                .map_err(|e| usage(anyhow!(e)))?
                .iter()
                .any(|s| s.name == name && s.address == addr);
            if !same {
                return Err(usage_msg(format!("site name {name} is already registered")));
            }
            node.refresh_members(&session.token);
        }
        Err(e) => return Err(usage(anyhow!(e).context("registration failed"))),
    }
    ready(&name, server.local_addr())
}
