#![allow(dead_code)]

use std::sync::Arc;

use reqwest::multipart::{Form, Part};
use reqwest::{Client, RequestBuilder, Response};
use serde::de::DeserializeOwned;
use viz_core::compliance::LicenseManifest;
use viz_core::registry::ListingDraft;
use viz_gateway::{router, Clock, SharedState};

pub const FEB_10_2026: i64 = 1_770_681_600;
pub const MAR_1_2026: i64 = 1_772_323_200;

pub struct Server {
    pub base: String,
    pub client: Client,
    pub task: tokio::task::JoinHandle<()>,
}

impl Server {
    pub async fn start(state: SharedState) -> Self {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let addr = listener.local_addr().unwrap();
        let task = tokio::spawn(async move {
            axum::serve(listener, router(state)).await.unwrap();
        });
        Self {
            base: format!("http://{addr}"),
            client: Client::new(),
            task,
        }
    }

    pub fn get(&self, path: &str, token: &str) -> RequestBuilder {
        self.client.get(format!("{}{path}", self.base)).bearer_auth(token)
    }

    pub fn post(&self, path: &str, token: &str) -> RequestBuilder {
        self.client.post(format!("{}{path}", self.base)).bearer_auth(token)
    }

    pub fn put(&self, path: &str, token: &str) -> RequestBuilder {
        self.client.put(format!("{}{path}", self.base)).bearer_auth(token)
    }

    pub fn delete(&self, path: &str, token: &str) -> RequestBuilder {
        self.client.delete(format!("{}{path}", self.base)).bearer_auth(token)
    }

    pub fn publish(&self, token: &str, bundle: Vec<u8>, manifest: &LicenseManifest, draft: &ListingDraft) -> RequestBuilder {
        let form = Form::new()
            .part("bundle", Part::bytes(bundle).file_name("adapter.vzab"))
            .text("manifest", serde_json::to_string(manifest).unwrap())
            .text("listing", serde_json::to_string(draft).unwrap());
        self.post("/v1/adapters", token).multipart(form)
    }

    pub fn stop(self) {
        self.task.abort();
    }
}

/// Status plus decoded body; panics with the raw body if decoding fails.
pub async fn json<T: DeserializeOwned>(resp: Response) -> (u16, T) {
    let status = resp.status().as_u16();
    let text = resp.text().await.unwrap();
    let body = serde_json::from_str(&text).unwrap_or_else(|e| panic!("{status}: {text}: {e}"));
    (status, body)
}

pub fn clock_handle<C: Clock + 'static>(c: C) -> (Arc<C>, Arc<dyn Clock>) {
    let c = Arc::new(c);
    (c.clone(), c)
}
