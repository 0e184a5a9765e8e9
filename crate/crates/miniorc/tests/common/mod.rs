#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::sync::mpsc;
use std::thread::JoinHandle;

use miniorc::client::{Client, Raw};
use miniorc::config::Config;
use miniorc::service::Service;
use serde_json::{Value, json};

pub const KEY_HEX: &str = "000102030405060708090a0b0c0d0e0f101112131415161718191a1b1c1d1e1f";

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

/// The shipped sample configuration pointed at `dir`, with a fixed key.
pub fn fixture_config(dir: &Path) -> Config {
    let mut cfg = Config::from_file(&fixtures().join("miniorc.toml")).unwrap();
    cfg.journal.dir = dir.to_path_buf();
    cfg.journal.fsync = false;
    cfg.auth.signing_key = Some(KEY_HEX.into());
    cfg.server.listen = "127.0.0.1:0".into();
    cfg
}

/// A gateway on an ephemeral port, running on its own runtime thread.
pub struct Gateway {
    pub url: String,
    pub service: Arc<Service>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Gateway {
    pub fn start(config: Config) -> Gateway {
        let service = Arc::new(Service::open(config).expect("service opens"));
        Gateway::start_with(service)
    }

    pub fn start_with(service: Arc<Service>) -> Gateway {
        let (tx, rx) = mpsc::channel();
        let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
        let svc = service.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build().unwrap();
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
                tx.send(listener.local_addr().unwrap()).unwrap();
                let shutdown = async move {
                    let _ = stopped.await;
                };
                miniorc::serve_on(listener, svc, shutdown).await.unwrap();
            });
        });
        let addr = rx.recv().unwrap();
        Gateway { url: format!("http://{addr}"), service, stop: Some(stop), thread: Some(thread) }
    }

    pub fn client(&self, token: Option<&str>) -> Client {
        Client::new(&self.url, token.map(str::to_string))
    }

    pub fn login(&self, subject: &str) -> String {
        let raw = self
            .client(None)
            .post("/iam/login", &json!({ "issuer": "https://iam.example.org", "subject": subject }))
            .unwrap();
        raw.json().unwrap()["token"].as_str().unwrap().to_string()
    }

    pub fn stop(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.shutdown();
    }
}

pub fn body(raw: &Raw) -> Value {
    raw.json().unwrap()
}
