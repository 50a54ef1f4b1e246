//! Remote backend client and the bundled stub server.
//!
//! The wire protocol is HTTP/1.1 with JSON bodies:
//!
//! ```text
//! POST /v1/tokenize             {"text": str}                  -> {"tokens": [int, ...]}
//! POST /v1/next_token_logprobs  {"tokens": [int,...], "top_k": int}
//!                               -> {"vocab_size": int, "logprobs": [[int, float], ...]}
//! POST /v1/detokenize           {"tokens": [int, ...]}         -> {"text": str}
//! ```
//!
//! Logprob lists are sorted by descending logprob. The client exponentiates
//! the returned entries and spreads the residual mass `1 - sum` uniformly
//! over the unreturned ids, so the reconstructed vector is a valid
//! distribution even when `top_k` truncates the tail. At `top_k >=
//! vocab_size` the reconstruction is exact up to the log/exp round trip.
//!
//! The stub server replays a [`TableLm`] over this protocol; it exists so
//! the remote path can be tested hermetically.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::context::Tokenizer;
use crate::provider::{LmProvider, NextTokenDistribution, ProviderError, TableLm};
use crate::vocab::{TokenId, EOS_TOKEN};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

/// Env var naming the default remote base URL.
pub const REMOTE_URL_ENV: &str = "CFD_REMOTE_URL";

#[derive(Debug, Serialize, Deserialize)]
struct TokenizeRequest {
    text: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct TokenizeResponse {
    tokens: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogprobsRequest {
    tokens: Vec<u32>,
    top_k: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct LogprobsResponse {
    vocab_size: usize,
    logprobs: Vec<(u32, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetokenizeRequest {
    tokens: Vec<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DetokenizeResponse {
    text: String,
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

/// HTTP client for a remote next-token backend.
///
/// Tokenization happens server-side; this client only ever moves token ids
/// and log-probabilities, converting the latter to probabilities because
/// the combination rule subtracts probabilities, not logs.
#[derive(Debug)]
pub struct RemoteLm {
    agent: ureq::Agent,
    base_url: String,
    top_k: usize,
    vocab_size: usize,
    eos_id: TokenId,
}

impl RemoteLm {
    /// Connect and probe the backend: one logprobs call learns the
    /// vocabulary size, one tokenize call resolves the end-of-sequence id
    /// from its surface form.
    pub fn connect(base_url: &str, top_k: usize, timeout: Duration) -> Result<Self, ProviderError> {
        let agent = ureq::AgentBuilder::new()
            .timeout_read(timeout)
            .timeout_write(timeout)
            .build();
        let base_url = base_url.trim_end_matches('/').to_string();
        let mut lm = Self {
            agent,
            base_url,
            top_k,
            vocab_size: 0,
            eos_id: TokenId(0),
        };
        let probe: LogprobsResponse = lm.post(
            "/v1/next_token_logprobs",
            &LogprobsRequest {
                tokens: Vec::new(),
                top_k: 1,
            },
        )?;
        if probe.vocab_size == 0 {
            return Err(ProviderError::Protocol("backend reports vocab_size 0".into()));
        }
        lm.vocab_size = probe.vocab_size;
        let eos = lm.tokenize_text(EOS_TOKEN)?;
        match eos.as_slice() {
            [id] => lm.eos_id = *id,
            other => {
                return Err(ProviderError::Protocol(format!(
                    "tokenizing {EOS_TOKEN:?} returned {} ids, expected 1",
                    other.len()
                )))
            }
        }
        Ok(lm)
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ProviderError> {
        let url = format!("{}{}", self.base_url, path);
        let response = self
            .agent
            .post(&url)
            .send_json(body)
            .map_err(|e| match e {
                ureq::Error::Status(code, resp) => ProviderError::Protocol(format!(
                    "{url} returned HTTP {code}: {}",
                    resp.into_string().unwrap_or_default()
                )),
                ureq::Error::Transport(t) => ProviderError::BackendUnavailable(t.to_string()),
            })?;
        response
            .into_json()
            .map_err(|e| ProviderError::Protocol(format!("{url}: invalid response body: {e}")))
    }

    fn tokenize_text(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        let response: TokenizeResponse = self.post(
            "/v1/tokenize",
            &TokenizeRequest {
                text: text.to_string(),
            },
        )?;
        Ok(response.tokens.into_iter().map(TokenId).collect())
    }

    fn distribution_from_logprobs(
        &self,
        response: LogprobsResponse,
    ) -> Result<NextTokenDistribution, ProviderError> {
        if response.vocab_size != self.vocab_size {
            return Err(ProviderError::Protocol(format!(
                "backend changed vocab_size from {} to {}",
                self.vocab_size, response.vocab_size
            )));
        }
        let mut probs = vec![f64::NAN; self.vocab_size];
        let mut returned_mass = 0.0;
        let mut returned = 0usize;
        for &(id, logprob) in &response.logprobs {
            let index = id as usize;
            if index >= self.vocab_size {
                return Err(ProviderError::Protocol(format!(
                    "logprob id {id} out of range for vocab_size {}",
                    self.vocab_size
                )));
            }
            if !probs[index].is_nan() {
                return Err(ProviderError::Protocol(format!(
                    "duplicate logprob entry for id {id}"
                )));
            }
            let p = logprob.exp();
            probs[index] = p;
            returned_mass += p;
            returned += 1;
        }
        let unreturned = self.vocab_size - returned;
        let residual = if unreturned > 0 {
            ((1.0 - returned_mass) / unreturned as f64).max(0.0)
        } else {
            0.0
        };
        for p in probs.iter_mut() {
            if p.is_nan() {
                *p = residual;
            }
        }
        NextTokenDistribution::new(probs)
    }
}

impl LmProvider for RemoteLm {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn tokenize(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        self.tokenize_text(text)
    }

    fn detokenize(&self, ids: &[TokenId]) -> Result<String, ProviderError> {
        let response: DetokenizeResponse = self.post(
            "/v1/detokenize",
            &DetokenizeRequest {
                tokens: ids.iter().map(|t| t.0).collect(),
            },
        )?;
        Ok(response.text)
    }

    fn next_distribution(&self, prefix: &[TokenId]) -> Result<NextTokenDistribution, ProviderError> {
        let response: LogprobsResponse = self.post(
            "/v1/next_token_logprobs",
            &LogprobsRequest {
                tokens: prefix.iter().map(|t| t.0).collect(),
                top_k: self.top_k,
            },
        )?;
        self.distribution_from_logprobs(response)
    }

    fn eos_id(&self) -> Result<TokenId, ProviderError> {
        Ok(self.eos_id)
    }
}

impl Tokenizer for RemoteLm {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, ProviderError> {
        self.tokenize_text(text)
    }
}

// ---------------------------------------------------------------------------
// Stub server
// ---------------------------------------------------------------------------

/// In-process HTTP server replaying a [`TableLm`] over the wire protocol.
/// Binds an ephemeral localhost port; shuts down on drop.
pub struct StubServer {
    url: String,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl StubServer {
    pub fn spawn(lm: TableLm) -> std::io::Result<Self> {
        let server = Arc::new(
            tiny_http::Server::http("127.0.0.1:0")
                .map_err(|e| std::io::Error::other(e.to_string()))?,
        );
        let port = server
            .server_addr()
            .to_ip()
            .expect("tcp listener has an ip address")
            .port();
        let url = format!("http://127.0.0.1:{port}");
        let worker = Arc::clone(&server);
        let lm = Arc::new(lm);
        let handle = std::thread::spawn(move || {
            while let Ok(request) = worker.recv() {
                handle_request(&lm, request);
            }
        });
        Ok(Self {
            url,
            server,
            handle: Some(handle),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}

fn respond_json<T: Serialize>(request: tiny_http::Request, status: u16, body: &T) {
    let payload = serde_json::to_vec(body).expect("response serializes");
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..])
        .expect("static header is valid");
    let response = tiny_http::Response::from_data(payload)
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

#[derive(Serialize)]
struct ErrorBody {
    error: String,
}

fn handle_request(lm: &TableLm, mut request: tiny_http::Request) {
    let mut body = String::new();
    if request.as_reader().read_to_string(&mut body).is_err() {
        return respond_json(
            request,
            400,
            &ErrorBody {
                error: "unreadable body".into(),
            },
        );
    }
    let url = request.url().to_string();
    match url.as_str() {
        "/v1/tokenize" => match serde_json::from_str::<TokenizeRequest>(&body) {
            Ok(req) => {
                let tokens = crate::vocab::tokenize(&req.text, lm.vocabulary());
                respond_json(
                    request,
                    200,
                    &TokenizeResponse {
                        tokens: tokens.into_iter().map(|t| t.0).collect(),
                    },
                )
            }
            Err(e) => bad_request(request, e),
        },
        "/v1/detokenize" => match serde_json::from_str::<DetokenizeRequest>(&body) {
            Ok(req) => {
                let ids: Vec<TokenId> = req.tokens.into_iter().map(TokenId).collect();
                match crate::vocab::detokenize(&ids, lm.vocabulary()) {
                    Ok(text) => respond_json(request, 200, &DetokenizeResponse { text }),
                    Err(e) => respond_json(
                        request,
                        400,
                        &ErrorBody {
                            error: e.to_string(),
                        },
                    ),
                }
            }
            Err(e) => bad_request(request, e),
        },
        "/v1/next_token_logprobs" => match serde_json::from_str::<LogprobsRequest>(&body) {
            Ok(req) => {
                let prefix: Vec<TokenId> = req.tokens.into_iter().map(TokenId).collect();
                match lm.next_distribution(&prefix) {
                    Ok(dist) => {
                        // Zero-probability tokens are omitted: their logprob
                        // is not finite and their mass is reconstructed as
                        // zero on the client whenever the returned mass
                        // already sums to one.
                        let mut entries: Vec<(u32, f64)> = dist
                            .probs()
                            .iter()
                            .enumerate()
                            .filter(|(_, &p)| p > 0.0)
                            .map(|(i, &p)| (i as u32, p))
                            .collect();
                        entries.sort_by(|a, b| {
                            b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0))
                        });
                        entries.truncate(req.top_k);
                        respond_json(
                            request,
                            200,
                            &LogprobsResponse {
                                vocab_size: lm.vocab_size(),
                                logprobs: entries
                                    .into_iter()
                                    .map(|(id, p)| (id, p.ln()))
                                    .collect(),
                            },
                        )
                    }
                    Err(e) => respond_json(
                        request,
                        500,
                        &ErrorBody {
                            error: e.to_string(),
                        },
                    ),
                }
            }
            Err(e) => bad_request(request, e),
        },
        _ => respond_json(
            request,
            404,
            &ErrorBody {
                error: format!("no such endpoint: {url}"),
            },
        ),
    }
}

fn bad_request(request: tiny_http::Request, e: serde_json::Error) {
    respond_json(
        request,
        400,
        &ErrorBody {
            error: format!("invalid request body: {e}"),
        },
    );
}
