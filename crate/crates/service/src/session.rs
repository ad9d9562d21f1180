use std::collections::HashMap;

use medledger_core::ledger::Clock;
use medledger_core::{Digest, PublicKey, Signature};
use parking_lot::Mutex;
use rand::rngs::OsRng;
use rand::RngCore;
use serde::Serialize;

use crate::error::ApiError;

pub const CHALLENGE_TTL_MS: u64 = 5 * 60 * 1000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    pub token: String,
    pub identity_id: Digest,
    pub issued_at_ms: u64,
    pub ttl_ms: u64,
}

impl Session {
    pub fn expires_at_ms(&self) -> u64 {
        self.issued_at_ms.saturating_add(self.ttl_ms)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Challenge {
    pub challenge: String,
    /// The exact bytes (UTF-8) the client must sign.
    pub message: String,
    pub expires_at_ms: u64,
}

fn random_hex() -> String {
    let mut bytes = [0u8; 32];
    OsRng.fill_bytes(&mut bytes);
    hex::encode(bytes)
}

pub fn login_message(username: &str, challenge: &str) -> String {
    format!("medledger-login:{username}:{challenge}")
}

/// Outstanding login challenges and issued bearer tokens.
pub struct SessionStore {
    ttl_ms: u64,
    clock: Clock,
    challenges: Mutex<HashMap<String, Challenge>>,
    sessions: Mutex<HashMap<String, Session>>,
}

impl SessionStore {
    pub fn new(ttl_ms: u64, clock: Clock) -> Self {
        SessionStore {
            ttl_ms,
            clock,
            challenges: Mutex::new(HashMap::new()),
            sessions: Mutex::new(HashMap::new()),
        }
    }

    fn now(&self) -> u64 {
        (self.clock)()
    }

    /// Issues a fresh challenge for `username`, replacing any earlier one.
    pub fn challenge(&self, username: &str) -> Challenge {
        let challenge = random_hex();
        let c = Challenge {
            message: login_message(username, &challenge),
            challenge,
            expires_at_ms: self.now() + CHALLENGE_TTL_MS,
        };
        self.challenges
            .lock()
            .insert(username.to_string(), c.clone());
        c
    }

    /// Checks `signature` against the outstanding challenge and issues a
    /// token. The challenge is consumed either way.
    pub fn login(
        &self,
        username: &str,
        public_key: &PublicKey,
        signature: &Signature,
    ) -> Result<Session, ApiError> {
        let now = self.now();
        let challenge = self
            .challenges
            .lock()
            .remove(username)
            .filter(|c| now < c.expires_at_ms)
            .ok_or_else(|| ApiError::unauthorized("NoChallenge", "request a challenge first"))?;
        if !public_key.verify(challenge.message.as_bytes(), signature) {
            return Err(ApiError::unauthorized(
                "BadSignature",
                "signature does not verify",
            ));
        }
        let session = Session {
            token: random_hex(),
            identity_id: public_key.identity_id(),
            issued_at_ms: now,
            ttl_ms: self.ttl_ms,
        };
        self.sessions
            .lock()
            .insert(session.token.clone(), session.clone());
        Ok(session)
    }

    pub fn authenticate(&self, token: &str) -> Result<Session, ApiError> {
        let now = self.now();
        let mut sessions = self.sessions.lock();
        let session = sessions
            .get(token)
            .cloned()
            .ok_or_else(|| ApiError::unauthorized("InvalidToken", "unknown session token"))?;
        if now >= session.expires_at_ms() {
            sessions.remove(token);
            return Err(ApiError::unauthorized("TokenExpired", "session expired"));
        }
        Ok(session)
    }

    pub fn logout(&self, token: &str) -> bool {
        self.sessions.lock().remove(token).is_some()
    }
}
