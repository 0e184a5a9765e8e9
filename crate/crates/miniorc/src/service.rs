//! The platform behind a mutex, with the journal as the single write path.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Mutex, MutexGuard};

use miniorc_core::broker::{RuleOwner, compile_rules};
use miniorc_core::iam::{Claims, ExternalIdentity, SigningKey};
use miniorc_core::ids::AccountId;
use miniorc_core::platform::{Command, Outcome, Platform, PlatformError};
use tokio::sync::watch;

use crate::config::{ClockMode, Config, ConfigError, DatasetFile, SiteFile, read_toml};
use crate::error::ApiError;
use crate::journal::{Journal, JournalError, JournalOptions, Meta};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("journal record {0} is corrupt; refusing to start")]
    JournalCorrupt(u64),
    #[error(transparent)]
    Journal(JournalError),
    #[error("bootstrap {what}: {message}")]
    Bootstrap { what: String, message: String },
    #[error("cannot listen on {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
}

impl From<JournalError> for ServeError {
    fn from(e: JournalError) -> Self {
        match e {
            JournalError::Corrupt(seq) => ServeError::JournalCorrupt(seq),
            other => ServeError::Journal(other),
        }
    }
}

/// Who is asking and under which request id.
#[derive(Clone, Debug, Default)]
pub struct RequestCtx {
    pub request_id: Option<String>,
    pub actor: Option<AccountId>,
}

impl RequestCtx {
    pub fn system() -> Self {
        RequestCtx::default()
    }

    pub fn as_account(actor: &AccountId, request_id: Option<String>) -> Self {
        RequestCtx { request_id, actor: Some(actor.clone()) }
    }
}

/// A command that made it into the journal.
#[derive(Clone, Debug)]
pub struct Committed {
    pub seq: u64,
    pub request_id: String,
    pub outcome: Result<Outcome, PlatformError>,
}

struct State {
    platform: Platform,
    journal: Journal,
}

pub struct Service {
    state: Mutex<State>,
    events: watch::Sender<u64>,
    config: Config,
    reads: AtomicU64,
}

fn generated_key() -> Vec<u8> {
    use rand::RngCore;
    let mut key = vec![0u8; 32];
    rand::rng().fill_bytes(&mut key);
    key
}

impl Service {
    /// Restores state from the journal directory and, on a fresh journal,
    /// applies the bootstrap documents.
    pub fn open(config: Config) -> Result<Service, ServeError> {
        let key_hex = match &config.auth.signing_key {
            Some(k) => {
                let bytes = hex::decode(k.trim()).map_err(|e| ServeError::Bootstrap {
                    what: "signing key".into(),
                    message: e.to_string(),
                })?;
                SigningKey::new(&bytes)
                    .map_err(|e| ServeError::Bootstrap { what: "signing key".into(), message: e.to_string() })?;
                hex::encode(bytes)
            }
            None => hex::encode(generated_key()),
        };
        let options = JournalOptions { fsync: config.journal.fsync, snapshot_every: config.journal.snapshot_every };
        let platform_config = config.platform.clone();
        let opened = Journal::open(
            &config.journal.dir,
            move || Meta { platform: platform_config, signing_key: key_hex },
            options,
        )?;
        let mut platform = opened.base;
        for rec in opened.tail {
            let _ = platform.apply(rec.payload);
        }
        let (events, _) = watch::channel(platform.last_event_seq());
        let service = Service {
            state: Mutex::new(State { platform, journal: opened.journal }),
            events,
            config,
            reads: AtomicU64::new(0),
        };
        if opened.fresh {
            service.bootstrap()?;
        }
        Ok(service)
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn clock_mode(&self) -> ClockMode {
        self.config.clock.mode
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Runs `f` against the committed state.
    pub fn read<R>(&self, f: impl FnOnce(&Platform) -> R) -> R {
        let st = self.lock();
        f(&st.platform)
    }

    pub fn next_read_id(&self) -> String {
        format!("q{:08}", self.reads.fetch_add(1, Ordering::Relaxed) + 1)
    }

    pub fn last_seq(&self) -> u64 {
        self.lock().journal.last_seq()
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.events.subscribe()
    }

    /// Journals `cmd`, then applies it. A command that the platform rejects
    /// stays in the journal; replay rejects it the same way.
    pub fn execute(&self, cmd: Command, ctx: &RequestCtx) -> Result<Committed, ApiError> {
        if matches!(cmd, Command::Advance { .. }) && self.clock_mode() == ClockMode::Realtime {
            return Err(ApiError::new("ADVANCE_IN_REALTIME", "the clock advances by itself in realtime mode"));
        }
        self.commit(cmd, ctx)
    }

    fn commit(&self, cmd: Command, ctx: &RequestCtx) -> Result<Committed, ApiError> {
        let mut st = self.lock();
        let now = st.platform.now();
        let actor = ctx.actor.as_ref().map(|a| a.to_string());
        let rec = st.journal.append(now, ctx.request_id.clone(), actor, cmd)?;
        let outcome = st.platform.apply(rec.payload);
        if st.journal.snapshot_due() {
            let State { platform, journal } = &mut *st;
            if let Err(e) = journal.write_snapshot(platform) {
                tracing::warn!(error = %e, "snapshot failed");
            }
        }
        let last_event = st.platform.last_event_seq();
        drop(st);
        self.events.send_replace(last_event);
        Ok(Committed { seq: rec.seq, request_id: rec.request_id, outcome })
    }

    /// [`Service::execute`] with the platform error folded into the result.
    pub fn run(&self, cmd: Command, ctx: &RequestCtx) -> Result<(Outcome, String), ApiError> {
        let c = self.execute(cmd, ctx)?;
        Ok((c.outcome?, c.request_id))
    }

    /// One realtime tick; ignores the clock mode.
    pub fn tick(&self) -> Result<(), ApiError> {
        self.commit(Command::Advance { dt: 1 }, &RequestCtx::system()).map(|_| ())
    }

    pub fn authenticate(&self, token: &str) -> Result<Claims, ApiError> {
        self.read(|p| p.iam().introspect(token, p.now())).map_err(|e| ApiError::from(PlatformError::from(e)))
    }

    pub fn account_of(&self, identity: &ExternalIdentity) -> Option<AccountId> {
        self.read(|p| p.iam().account_of(identity).cloned())
    }

    fn bootstrap(&self) -> Result<(), ServeError> {
        let boot = self.config.bootstrap.clone();
        let fail = |what: String| move |e: ApiError| ServeError::Bootstrap { what: what.clone(), message: e.to_string() };
        let ctx = RequestCtx::system();
        let sites: Option<SiteFile> = boot.sites.as_ref().map(|p| read_toml(&self.config.resolve(p))).transpose()?;
        let datasets: Option<DatasetFile> =
            boot.datasets.as_ref().map(|p| read_toml(&self.config.resolve(p))).transpose()?;
        let audience = self.config.auth.default_audience.clone();
        self.run(Command::RegisterClient { name: audience.clone() }, &ctx).map_err(fail(format!("client {audience}")))?;
        if let Some(file) = sites {
            for entry in file.sites {
                let what = format!("site {}", entry.descriptor.site_id);
                let cmd = Command::RegisterSite { descriptor: entry.descriptor, simulation: entry.simulation };
                self.run(cmd, &ctx).map_err(fail(what))?;
            }
        }
        for acct in boot.accounts {
            let identity = ExternalIdentity::new(&acct.issuer, &acct.subject, acct.kind);
            let what = format!("account {identity}");
            let (outcome, _) =
                self.run(Command::LinkCredential { identity, account: None }, &ctx).map_err(fail(what.clone()))?;
            let Outcome::Account { account_id } = outcome else {
                return Err(fail(what)(ApiError::new("INTERNAL", "unexpected outcome")));
            };
            for group in acct.groups {
                self.run(Command::AddToGroup { account: account_id.clone(), group }, &ctx).map_err(fail(what.clone()))?;
            }
        }
        if let Some(file) = datasets {
            for entry in file.datasets {
                let what = format!("dataset in space {}", entry.spec.space);
                let (outcome, _) = self.run(Command::AddDataset { spec: entry.spec }, &ctx).map_err(fail(what.clone()))?;
                let Outcome::Dataset { dataset_id } = outcome else {
                    return Err(fail(what)(ApiError::new("INTERNAL", "unexpected outcome")));
                };
                for r in entry.replicas {
                    let cmd =
                        Command::PutReplica { dataset: dataset_id.clone(), site: r.site, fraction: r.fraction, qos: r.qos };
                    self.run(cmd, &ctx).map_err(fail(format!("replica of {dataset_id}")))?;
                }
            }
        }
        for (key, text) in boot.rules {
            let owner = parse_rule_owner(&key).map_err(|m| ServeError::Bootstrap { what: format!("rules {key}"), message: m })?;
            compile_rules(&text).map_err(|e| ServeError::Bootstrap { what: format!("rules {key}"), message: e.to_string() })?;
            self.run(Command::SetRules { owner, text }, &ctx).map_err(fail(format!("rules {key}")))?;
        }
        Ok(())
    }
}

/// `global`, `group:<name>` or `user:<account>`.
pub fn parse_rule_owner(key: &str) -> Result<RuleOwner, String> {
    match key.split_once(':') {
        None if key == "global" => Ok(RuleOwner::Global),
        Some(("group", g)) if !g.is_empty() => Ok(RuleOwner::Group(g.to_string())),
        Some(("user", u)) if !u.is_empty() => Ok(RuleOwner::User(AccountId::new(u))),
        _ => Err(format!("rule owner `{key}` is not global, group:<name> or user:<account>")),
    }
}
