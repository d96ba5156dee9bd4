use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;

use sha2::{Digest, Sha256};

use super::{ChatProvider, ChatRequest, ChatResponse, ProviderError};

/// SHA-256 over `system`, a NUL separator, and `user`, hex-encoded.
pub fn prompt_digest(system: &str, user: &str) -> String {
    let mut h = Sha256::new();
    h.update(system.as_bytes());
    h.update([0u8]);
    h.update(user.as_bytes());
    hex::encode(h.finalize())
}

/// Serves previously recorded responses, keyed by prompt digest. Identical
/// prompts recorded more than once (retries) are replayed in recorded order.
pub struct ReplayProvider {
    cache: Mutex<HashMap<String, VecDeque<ChatResponse>>>,
    id: String,
}

impl ReplayProvider {
    pub fn new(entries: impl IntoIterator<Item = (String, ChatResponse)>) -> Self {
        let mut cache: HashMap<String, VecDeque<ChatResponse>> = HashMap::new();
        let mut id = None;
        for (digest, resp) in entries {
            id.get_or_insert_with(|| resp.provider_id.clone());
            cache.entry(digest).or_default().push_back(resp);
        }
        ReplayProvider {
            cache: Mutex::new(cache),
            id: id.unwrap_or_else(|| "replay".into()),
        }
    }

    pub fn remaining(&self) -> usize {
        self.cache.lock().unwrap().values().map(VecDeque::len).sum()
    }
}

impl ChatProvider for ReplayProvider {
    fn id(&self) -> &str {
        &self.id
    }

    fn max_in_flight(&self) -> usize {
        4
    }

    fn complete(&self, req: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        let digest = prompt_digest(&req.system, &req.user);
        self.cache
            .lock()
            .unwrap()
            .get_mut(&digest)
            .and_then(VecDeque::pop_front)
            .ok_or(ProviderError::ReplayMiss(digest))
    }
}
