//! Typed client for the review service.

use anonkit_core::model::{AttributeKind, ExposureLevel};
use anonkit_core::wire::{
    AggregateResponse, ContributionQuery, ContributionResponse, ErrorBody, Health, RatingAck, RatingRequest,
    SamplesResponse, TextSide, WhatIfRequest, WhatIfResponse,
};
use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use url::Url;

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("invalid base url: {0}")]
    Url(#[from] url::ParseError),
    #[error("transport: {0}")]
    Transport(#[from] reqwest::Error),
    /// The service answered with an error body.
    #[error("{status} {}: {}", body.error, body.message)]
    Api { status: u16, body: ErrorBody },
}

impl ClientError {
    /// Machine-readable error kind reported by the service, if any.
    pub fn api_kind(&self) -> Option<&str> {
        match self {
            ClientError::Api { body, .. } => Some(&body.error),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Client {
    base: Url,
    http: reqwest::Client,
}

impl Client {
    pub fn new(base: &str) -> Result<Self, ClientError> {
        let mut base = Url::parse(base)?;
        if !base.path().ends_with('/') {
            base.set_path(&format!("{}/", base.path()));
        }
        Ok(Self { base, http: reqwest::Client::new() })
    }

    fn url(&self, path: &str, query: &[(&str, String)]) -> Result<Url, ClientError> {
        let mut url = self.base.join(path)?;
        if !query.is_empty() {
            url.query_pairs_mut().extend_pairs(query.iter().map(|(k, v)| (*k, v.as_str())));
        }
        Ok(url)
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        if status.is_success() {
            return Ok(resp.json().await?);
        }
        let body = resp.json::<ErrorBody>().await.unwrap_or_else(|_| ErrorBody {
            error: "http".into(),
            message: status.canonical_reason().unwrap_or("error").into(),
        });
        Err(ClientError::Api { status: status.as_u16(), body })
    }

    async fn get<T: DeserializeOwned>(&self, path: &str, query: &[(&str, String)]) -> Result<T, ClientError> {
        Self::decode(self.http.get(self.url(path, query)?).send().await?).await
    }

    async fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        Self::decode(self.http.post(self.url(path, &[])?).json(body).send().await?).await
    }

    pub async fn health(&self) -> Result<Health, ClientError> {
        self.get("health", &[]).await
    }

    /// Starts a new blinded session, or resumes `session`.
    pub async fn samples(&self, session: Option<&str>) -> Result<SamplesResponse, ClientError> {
        let q: Vec<_> = session.map(|s| ("session", s.to_string())).into_iter().collect();
        self.get("samples", &q).await
    }

    pub async fn rate(&self, rating: &RatingRequest) -> Result<RatingAck, ClientError> {
        self.post("ratings", rating).await
    }

    pub async fn aggregate(&self, unblind: bool) -> Result<AggregateResponse, ClientError> {
        self.get("aggregate", &[("unblind", unblind.to_string())]).await
    }

    pub async fn what_if(&self, sample_id: &str, level: ExposureLevel) -> Result<WhatIfResponse, ClientError> {
        self.post("what-if", &WhatIfRequest { sample_id: sample_id.into(), level }).await
    }

    pub async fn contribution(&self, q: &ContributionQuery) -> Result<ContributionResponse, ClientError> {
        let mut pairs = vec![
            ("sample_id", q.sample_id.clone()),
            ("attribute", enum_str(&q.attribute)),
            ("mode", enum_str(&q.mode)),
            ("side", enum_str(&q.side)),
        ];
        if let Some(level) = q.level {
            pairs.push(("level", enum_str(&level)));
        }
        self.get("contribution", &pairs).await
    }

    /// Shorthand for the original-text contribution of one attribute.
    pub async fn contribution_of(
        &self,
        sample_id: &str,
        attribute: AttributeKind,
    ) -> Result<ContributionResponse, ClientError> {
        self.contribution(&ContributionQuery {
            sample_id: sample_id.into(),
            attribute,
            mode: Default::default(),
            side: TextSide::Original,
            level: None,
        })
        .await
    }
}

// Unit enums serialize to a bare JSON string; strip the quotes for query use.
fn enum_str<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}
