//! Command-line client. Every command is one or two route calls.

use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{Value, json};

use crate::client::{Client, ClientError, Raw};

#[derive(Debug, Parser)]
#[command(name = "miniorc", version, about = "PaaS orchestrator gateway and client")]
pub struct Cli {
    /// Gateway base URL.
    #[arg(long, global = true, env = "MINIORC_URL", default_value = "http://127.0.0.1:8640")]
    pub url: String,
    /// Bearer token.
    #[arg(long, global = true, env = "MINIORC_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
    #[arg(long, short, global = true, value_enum, default_value_t = Output::Table)]
    pub output: Output,
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Table,
    /// The response body exactly as the gateway sent it.
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Run the gateway.
    Serve {
        #[arg(long, env = "MINIORC_CONFIG")]
        config: Option<PathBuf>,
    },
    /// Obtain a token for an external identity.
    Login {
        #[arg(long)]
        issuer: String,
        #[arg(long)]
        subject: String,
        #[arg(long, default_value = "oidc")]
        kind: String,
        #[arg(long)]
        audience: Option<String>,
    },
    /// Submit a TOSCA template file.
    Submit {
        file: PathBuf,
        /// `name=value`; the value is read as JSON when it parses, else as text.
        #[arg(long = "input", short = 'i')]
        inputs: Vec<String>,
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Show one deployment.
    Status {
        id: String,
    },
    /// Delete a deployment and release its resources.
    Delete {
        id: String,
    },
    /// List visible deployments.
    List,
    /// Catalog sites with health and free resources.
    Sites,
    /// Site ranking as seen by one account.
    Rank {
        #[arg(long)]
        user: String,
        #[arg(long)]
        data_locality: Option<String>,
    },
    /// Copy a dataset to another site.
    Transfer {
        dataset: String,
        dst: String,
        #[arg(long)]
        src: Option<String>,
    },
    /// Set the replica count of a deployment's services.
    Scale {
        deployment: String,
        replicas: u32,
    },
    /// Advance the manual clock by `dt` seconds.
    Advance {
        dt: u64,
    },
    /// Wait for deployment events after sequence `after`.
    Events {
        id: String,
        #[arg(long, default_value_t = 0)]
        after: u64,
        #[arg(long)]
        timeout: Option<u64>,
    },
    /// Cluster nodes and per-framework dominant shares.
    Cluster,
}

fn parse_input(s: &str) -> Result<(String, Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("input `{s}` is not name=value"))?;
    if k.is_empty() {
        return Err(format!("input `{s}` has an empty name"));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => "-".into(),
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn table(out: &mut dyn Write, header: &[&str], rows: &[Vec<String>]) -> std::io::Result<()> {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<String>| {
        cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
    };
    writeln!(out, "{}", line(header.iter().map(|h| h.to_string()).collect()))?;
    for r in rows {
        writeln!(out, "{}", line(r.clone()))?;
    }
    Ok(())
}

enum Failure {
    Usage(String),
    Client(ClientError),
}

impl From<ClientError> for Failure {
    fn from(e: ClientError) -> Self {
        Failure::Client(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

/// Runs a client command and returns the process exit code.
pub fn run(cli: &Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match execute(cli, out) {
        Ok(()) => 0,
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "USAGE: {m}");
            2
        }
        Err(Failure::Client(e)) => {
            let _ = writeln!(err, "{}: {}", e.code(), message(&e));
            e.exit_code()
        }
    }
}

fn message(e: &ClientError) -> String {
    match e {
        ClientError::Api(a) => a.message.clone(),
        other => other.to_string(),
    }
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), Failure> {
    let client = Client::new(&cli.url, cli.token.clone());
    let json_mode = cli.output == Output::Json;
    let emit = |out: &mut dyn Write, raw: &Raw| -> Result<(), Failure> {
        writeln!(out, "{}", raw.body)?;
        Ok(())
    };
    match &cli.command {
        Cmd::Serve { .. } => Err(Failure::Usage("serve is handled by the binary entry point".into())),
        Cmd::Login { issuer, subject, kind, audience } => {
            let mut body = json!({ "issuer": issuer, "subject": subject, "kind": kind });
            if let Some(a) = audience {
                body["audience"] = json!(a);
            }
            let raw = client.post("/iam/login", &body)?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            writeln!(out, "{}", cell(&v["token"]))?;
            Ok(())
        }
        Cmd::Submit { file, inputs, scenario } => {
            let template = std::fs::read_to_string(file)
                .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", file.display())))?;
            let mut map = serde_json::Map::new();
            for i in inputs {
                let (k, v) = parse_input(i).map_err(Failure::Usage)?;
                map.insert(k, v);
            }
            let mut body = json!({ "template": template, "inputs": map });
            if let Some(s) = scenario {
                body["scenario"] = json!(s.to_ascii_uppercase());
            }
            let raw = client.post("/deployments", &body)?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            writeln!(out, "{}", cell(&v["deployment_id"]))?;
            Ok(())
        }
        Cmd::Status { id } => {
            let raw = client.get(&format!("/deployments/{id}"), &[])?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            let failure = v["failure"].as_object().map_or("-".to_string(), |f| {
                format!("{} ({})", cell(&f["reason"]), cell(&f["detail"]))
            });
            let rows = vec![
                vec!["deployment".into(), cell(&v["deployment_id"])],
                vec!["state".into(), cell(&v["state"])],
                vec!["scenario".into(), cell(&v["scenario"])],
                vec!["site".into(), cell(&v["placement"]["site_id"])],
                vec!["failure".into(), failure],
            ];
            table(out, &["field", "value"], &rows)?;
            let endpoints = v["endpoints"].as_array().cloned().unwrap_or_default();
            for e in endpoints {
                writeln!(out, "endpoint {} {}", cell(&e["name"]), cell(&e["address"]))?;
            }
            Ok(())
        }
        Cmd::Delete { id } => {
            let raw = client.delete(&format!("/deployments/{id}"))?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            writeln!(out, "{} {}", cell(&v["deployment_id"]), cell(&v["state"]))?;
            Ok(())
        }
        Cmd::List => {
            let raw = client.get("/deployments", &[])?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            let rows: Vec<Vec<String>> = v["items"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|d| {
                    vec![cell(&d["deployment_id"]), cell(&d["state"]), cell(&d["scenario"]), cell(&d["site"])]
                })
                .collect();
            table(out, &["deployment", "state", "scenario", "site"], &rows)?;
            Ok(())
        }
        Cmd::Sites => {
            let raw = client.get("/sites", &[])?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            let rows: Vec<Vec<String>> = v["items"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|s| {
                    let free = &s["site"]["last_sample"]["free"];
                    vec![
                        cell(&s["site"]["descriptor"]["site_id"]),
                        cell(&s["site"]["health"]),
                        cell(&free["cpu"]),
                        cell(&free["mem"]),
                        cell(&s["site"]["descriptor"]["base_cost"]),
                    ]
                })
                .collect();
            table(out, &["site", "health", "free_cpu", "free_mem", "cost"], &rows)?;
            Ok(())
        }
        Cmd::Rank { user, data_locality } => {
            let mut q = vec![("user", user.as_str())];
            if let Some(d) = data_locality {
                q.push(("data_locality", d.as_str()));
            }
            let raw = client.get("/rank", &q)?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            let mut rows: Vec<Vec<String>> = v["ordered"]
                .as_array()
                .into_iter()
                .flatten()
                .enumerate()
                .map(|(i, r)| vec![(i + 1).to_string(), cell(&r["site_id"]), cell(&r["score"])])
                .collect();
            rows.extend(
                v["rejected"]
                    .as_array()
                    .into_iter()
                    .flatten()
                    .map(|r| vec!["-".into(), cell(&r["site_id"]), format!("rejected {}", cell(&r["failed"]))]),
            );
            table(out, &["rank", "site", "score"], &rows)?;
            Ok(())
        }
        Cmd::Transfer { dataset, dst, src } => {
            let raw = client.post("/transfers", &json!({ "dataset": dataset, "dst": dst, "src": src }))?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            for t in v["transfers"].as_array().into_iter().flatten() {
                writeln!(out, "{}", cell(t))?;
            }
            Ok(())
        }
        Cmd::Scale { deployment, replicas } => {
            let raw = client.patch(&format!("/deployments/{deployment}"), &json!({ "replicas": replicas }))?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            writeln!(out, "{} {}", cell(&v["deployment_id"]), cell(&v["state"]))?;
            Ok(())
        }
        Cmd::Advance { dt } => {
            let raw = client.post("/clock/advance", &json!({ "dt": dt }))?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            writeln!(out, "now {} events {}", cell(&v["now"]), cell(&v["events"]))?;
            Ok(())
        }
        Cmd::Events { id, after, timeout } => {
            let after = after.to_string();
            let timeout = timeout.map(|t| t.to_string());
            let mut q = vec![("after", after.as_str())];
            if let Some(t) = &timeout {
                q.push(("timeout", t.as_str()));
            }
            let raw = client.get(&format!("/deployments/{id}/events"), &q)?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            let rows: Vec<Vec<String>> = v["events"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|e| {
                    let k = &e["kind"];
                    vec![cell(&e["seq"]), cell(&e["at"]), cell(&k["from"]), cell(&k["to"]), cell(&k["detail"])]
                })
                .collect();
            table(out, &["seq", "at", "from", "to", "detail"], &rows)?;
            writeln!(out, "next {}", cell(&v["next"]))?;
            Ok(())
        }
        Cmd::Cluster => {
            let raw = client.get("/cluster", &[])?;
            if json_mode {
                return emit(out, &raw);
            }
            let v = raw.json()?;
            let rows: Vec<Vec<String>> = v["nodes"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|n| {
                    vec![
                        cell(&n["node_id"]),
                        format!("{}/{}", cell(&n["free"]["cpu"]), cell(&n["total"]["cpu"])),
                        format!("{}/{}", cell(&n["free"]["mem"]), cell(&n["total"]["mem"])),
                        cell(&n["alive"]),
                        cell(&n["draining"]),
                    ]
                })
                .collect();
            table(out, &["node", "cpu free/total", "mem free/total", "alive", "draining"], &rows)?;
            for f in v["frameworks"].as_array().into_iter().flatten() {
                writeln!(out, "framework {} share {}", cell(&f["framework"]["framework_id"]), cell(&f["dominant_share"]))?;
            }
            Ok(())
        }
    }
}
