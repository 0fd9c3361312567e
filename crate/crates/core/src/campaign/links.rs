use std::collections::HashSet;
use std::fmt;

use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use rand::{CryptoRng, Rng, RngCore};
use serde::{Deserialize, Serialize};

use super::words::{ADJECTIVES, NOUNS};
use super::CampaignDefinition;

/// Entropy carried by every magic-link token.
pub const TOKEN_BITS: usize = 96;
const TOKEN_BYTES: usize = TOKEN_BITS / 8;
/// Base64url carries 6 bits per symbol: 96 / 6 = 16 symbols, no padding.
pub const TOKEN_LEN: usize = TOKEN_BITS / 6;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Token(String);

impl Token {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut bytes = [0u8; TOKEN_BYTES];
        rng.fill_bytes(&mut bytes);
        Token(URL_SAFE_NO_PAD.encode(bytes))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Token {
    fn from(s: &str) -> Self {
        Token(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Annotator,
    Manager,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserIdentity {
    pub user_id: String,
    pub token: Token,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MagicLink {
    #[serde(flatten)]
    pub identity: UserIdentity,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignLinks {
    pub annotators: Vec<MagicLink>,
    pub manager: MagicLink,
}

impl CampaignLinks {
    pub fn all(&self) -> impl Iterator<Item = &MagicLink> {
        self.annotators.iter().chain(std::iter::once(&self.manager))
    }
}

/// URL carrying `token` as a query parameter.
pub fn link_url(base_url: &str, token: &Token) -> String {
    format!("{}/?token={}", base_url.trim_end_matches('/'), token)
}

/// One annotator link per task (task-based) or per `info.users` (pooled),
/// plus a single dashboard link. Tokens come from the thread-local CSPRNG.
pub fn generate_links(def: &CampaignDefinition, base_url: &str) -> CampaignLinks {
    generate_links_with(def, base_url, &mut rand::rng())
}

pub fn generate_links_with<R: RngCore + CryptoRng>(
    def: &CampaignDefinition,
    base_url: &str,
    rng: &mut R,
) -> CampaignLinks {
    let mut names = HashSet::new();
    let mut tokens = HashSet::new();
    let mut identity = |role: Role, rng: &mut R| loop {
        let user_id = format!(
            "{}-{}-{}",
            ADJECTIVES[rng.random_range(0..ADJECTIVES.len())],
            NOUNS[rng.random_range(0..NOUNS.len())],
            rng.random_range(100..1000)
        );
        let token = Token::random(rng);
        if names.contains(&user_id) || tokens.contains(&token) {
            continue;
        }
        names.insert(user_id.clone());
        tokens.insert(token.clone());
        let url = link_url(base_url, &token);
        break MagicLink {
            identity: UserIdentity { user_id, token, role },
            url,
        };
    };

    let annotators = (0..def.info.users)
        .map(|_| identity(Role::Annotator, rng))
        .collect();
    let manager = identity(Role::Manager, rng);
    CampaignLinks { annotators, manager }
}
