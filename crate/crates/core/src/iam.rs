//! Identity harmonization and token service.
//!
//! External identities (issuer, subject) are linked to platform accounts.
//! Logging in with any linked identity yields a signed bearer token carrying
//! the account id and its groups. Tokens are `v1.<payload>.<tag>` with both
//! parts base64url; the tag is HMAC-SHA256 over a length-prefixed canonical
//! encoding of every claim.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use base64::Engine;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;

use crate::ids::AccountId;

pub const TOKEN_TTL_SECS: u64 = 3600;
pub const ADMIN_GROUP: &str = "admin";
const TOKEN_PREFIX: &str = "v1";
const DERIVED_PREFIX: &str = "v1d";

type HmacSha256 = Hmac<Sha256>;

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IdentityKind {
    Oidc,
    Saml,
    X509,
}

impl IdentityKind {
    pub fn as_str(self) -> &'static str {
        match self {
            IdentityKind::Oidc => "oidc",
            IdentityKind::Saml => "saml",
            IdentityKind::X509 => "x509",
        }
    }
}

/// A credential asserted by an outside identity provider. Only the
/// (issuer, subject) pair identifies it; the kind is a label.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExternalIdentity {
    pub issuer: String,
    pub subject: String,
    pub kind: IdentityKind,
}

impl ExternalIdentity {
    pub fn new(issuer: &str, subject: &str, kind: IdentityKind) -> Self {
        ExternalIdentity { issuer: issuer.to_string(), subject: subject.to_string(), kind }
    }

    fn key(&self) -> (&str, &str) {
        (&self.issuer, &self.subject)
    }
}

impl PartialEq for ExternalIdentity {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for ExternalIdentity {}

impl PartialOrd for ExternalIdentity {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for ExternalIdentity {
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl fmt::Display for ExternalIdentity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}", self.issuer, self.subject)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Account {
    pub account_id: AccountId,
    pub linked: BTreeSet<ExternalIdentity>,
    pub groups: BTreeSet<String>,
    pub enabled: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claims {
    pub token_id: String,
    pub account_id: AccountId,
    pub groups: BTreeSet<String>,
    pub issued_at: u64,
    pub expires_at: u64,
    pub audience: String,
}

impl Claims {
    pub fn is_admin(&self) -> bool {
        self.groups.contains(ADMIN_GROUP)
    }

    pub fn in_group(&self, g: &str) -> bool {
        self.groups.contains(g)
    }

    fn canonical(&self) -> Vec<u8> {
        let mut out = Vec::new();
        field(&mut out, self.token_id.as_bytes());
        field(&mut out, self.account_id.as_str().as_bytes());
        field(&mut out, self.groups.len().to_string().as_bytes());
        for g in &self.groups {
            field(&mut out, g.as_bytes());
        }
        field(&mut out, self.issued_at.to_string().as_bytes());
        field(&mut out, self.expires_at.to_string().as_bytes());
        field(&mut out, self.audience.as_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Option<Claims> {
        let mut r = Reader(bytes);
        let token_id = r.text()?;
        let account_id = AccountId::new(r.text()?);
        let n: usize = r.text()?.parse().ok()?;
        let mut groups = BTreeSet::new();
        for _ in 0..n {
            groups.insert(r.text()?);
        }
        let issued_at = r.text()?.parse().ok()?;
        let expires_at = r.text()?.parse().ok()?;
        let audience = r.text()?;
        r.0.is_empty().then_some(Claims { token_id, account_id, groups, issued_at, expires_at, audience })
    }
}

/// `<decimal length>:<bytes>` keeps the encoding injective.
fn field(out: &mut Vec<u8>, bytes: &[u8]) {
    out.extend_from_slice(bytes.len().to_string().as_bytes());
    out.push(b':');
    out.extend_from_slice(bytes);
}

struct Reader<'a>(&'a [u8]);

impl Reader<'_> {
    fn text(&mut self) -> Option<String> {
        let colon = self.0.iter().position(|b| *b == b':')?;
        let len: usize = core::str::from_utf8(&self.0[..colon]).ok()?.parse().ok()?;
        let rest = &self.0[colon + 1..];
        if rest.len() < len {
            return None;
        }
        let s = core::str::from_utf8(&rest[..len]).ok()?.to_string();
        self.0 = &rest[len..];
        Some(s)
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    Malformed,
    Signature,
    Expired,
    Revoked,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InvalidReason::Malformed => "malformed",
            InvalidReason::Signature => "signature",
            InvalidReason::Expired => "expired",
            InvalidReason::Revoked => "revoked",
        })
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TranslationTarget {
    ShellCredential,
    StorageCredential,
}

impl TranslationTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            TranslationTarget::ShellCredential => "shell_credential",
            TranslationTarget::StorageCredential => "storage_credential",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "shell_credential" => Some(TranslationTarget::ShellCredential),
            "storage_credential" => Some(TranslationTarget::StorageCredential),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedClaims {
    pub credential_id: String,
    pub account_id: AccountId,
    pub target: TranslationTarget,
    pub source_token: String,
    pub issued_at: u64,
    pub expires_at: u64,
}

impl DerivedClaims {
    fn canonical(&self) -> Vec<u8> {
        let mut out = Vec::new();
        field(&mut out, self.credential_id.as_bytes());
        field(&mut out, self.account_id.as_str().as_bytes());
        field(&mut out, self.target.as_str().as_bytes());
        field(&mut out, self.source_token.as_bytes());
        field(&mut out, self.issued_at.to_string().as_bytes());
        field(&mut out, self.expires_at.to_string().as_bytes());
        out
    }

    fn decode(bytes: &[u8]) -> Option<DerivedClaims> {
        let mut r = Reader(bytes);
        let credential_id = r.text()?;
        let account_id = AccountId::new(r.text()?);
        let target = TranslationTarget::parse(&r.text()?)?;
        let source_token = r.text()?;
        let issued_at = r.text()?.parse().ok()?;
        let expires_at = r.text()?.parse().ok()?;
        r.0.is_empty().then_some(DerivedClaims { credential_id, account_id, target, source_token, issued_at, expires_at })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientCredentials {
    pub client_id: String,
    pub client_secret: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page<T> {
    pub items: Vec<T>,
    /// Pass back as `after` to fetch the next page.
    pub next: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupListing {
    pub name: String,
    pub members: Vec<AccountId>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
pub enum IamError {
    #[error("identity {identity} is already linked to {account}")]
    AlreadyLinked { identity: String, account: AccountId },
    #[error("unknown account {0}")]
    UnknownAccount(AccountId),
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("account {0} is disabled")]
    AccountDisabled(AccountId),
    #[error("unknown audience {0}")]
    UnknownAudience(String),
    #[error("client {0} already registered")]
    DuplicateClient(String),
    #[error("caller lacks the {0} group")]
    Forbidden(String),
    #[error("invalid token ({0})")]
    Invalid(InvalidReason),
    #[error("invalid request: {0}")]
    BadRequest(String),
}

impl IamError {
    pub fn code(&self) -> &'static str {
        match self {
            IamError::AlreadyLinked { .. } => "ALREADY_LINKED",
            IamError::UnknownAccount(_) => "UNKNOWN_ACCOUNT",
            IamError::UnknownIdentity(_) => "UNKNOWN_IDENTITY",
            IamError::AccountDisabled(_) => "ACCOUNT_DISABLED",
            IamError::UnknownAudience(_) => "UNKNOWN_AUDIENCE",
            IamError::DuplicateClient(_) => "DUPLICATE_CLIENT",
            IamError::Forbidden(_) => "FORBIDDEN",
            IamError::Invalid(_) => "INVALID_TOKEN",
            IamError::BadRequest(_) => "BAD_REQUEST",
        }
    }
}

/// Key for token tags. Keep it out of logs; `Debug` is redacted.
#[derive(Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigningKey(Vec<u8>);

impl SigningKey {
    /// Keys shorter than 16 bytes are refused.
    pub fn new(bytes: &[u8]) -> Result<Self, IamError> {
        if bytes.len() < 16 {
            return Err(IamError::BadRequest(String::from("signing key must be at least 16 bytes")));
        }
        Ok(SigningKey(bytes.to_vec()))
    }

    fn mac(&self, domain: &str, msg: &[u8]) -> HmacSha256 {
        let mut m = HmacSha256::new_from_slice(&self.0).expect("hmac accepts any key length");
        m.update(domain.as_bytes());
        m.update(b"\0");
        m.update(msg);
        m
    }

    fn tag(&self, domain: &str, msg: &[u8]) -> Vec<u8> {
        self.mac(domain, msg).finalize().into_bytes().to_vec()
    }

    fn verify(&self, domain: &str, msg: &[u8], tag: &[u8]) -> bool {
        self.mac(domain, msg).verify_slice(tag).is_ok()
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SigningKey(..)")
    }
}

fn seal(key: &SigningKey, prefix: &str, payload: &[u8]) -> String {
    let tag = key.tag(prefix, payload);
    format!("{prefix}.{}.{}", URL_SAFE_NO_PAD.encode(payload), URL_SAFE_NO_PAD.encode(tag))
}

fn open(key: &SigningKey, prefix: &str, text: &str) -> Result<Vec<u8>, InvalidReason> {
    let mut parts = text.trim().split('.');
    let (Some(p), Some(body), Some(tag), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(InvalidReason::Malformed);
    };
    if p != prefix {
        return Err(InvalidReason::Malformed);
    }
    let payload = URL_SAFE_NO_PAD.decode(body).map_err(|_| InvalidReason::Malformed)?;
    let tag = URL_SAFE_NO_PAD.decode(tag).map_err(|_| InvalidReason::Malformed)?;
    if !key.verify(prefix, &payload, &tag) {
        return Err(InvalidReason::Signature);
    }
    Ok(payload)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iam {
    key: SigningKey,
    pub ttl: u64,
    accounts: BTreeMap<AccountId, Account>,
    #[serde(with = "crate::ids::pairs")]
    links: BTreeMap<ExternalIdentity, AccountId>,
    clients: BTreeSet<String>,
    revoked: BTreeSet<String>,
    next_account: u64,
    next_token: u64,
}

impl Iam {
    pub fn new(key: SigningKey) -> Self {
        Iam {
            key,
            ttl: TOKEN_TTL_SECS,
            accounts: BTreeMap::new(),
            links: BTreeMap::new(),
            clients: BTreeSet::new(),
            revoked: BTreeSet::new(),
            next_account: 0,
            next_token: 0,
        }
    }

    pub fn account(&self, id: &AccountId) -> Option<&Account> {
        self.accounts.get(id)
    }

    pub fn accounts(&self) -> impl Iterator<Item = &Account> {
        self.accounts.values()
    }

    pub fn account_of(&self, ext: &ExternalIdentity) -> Option<&AccountId> {
        self.links.get(ext)
    }

    pub fn has_client(&self, name: &str) -> bool {
        self.clients.contains(name)
    }

    /// Links `ext` to `account`, or to a fresh account when none is given.
    /// Linking an identity to the account it already belongs to is a no-op.
    pub fn link_credential(&mut self, ext: ExternalIdentity, account: Option<&AccountId>) -> Result<AccountId, IamError> {
        if let Some(a) = account {
            if !self.accounts.contains_key(a) {
                return Err(IamError::UnknownAccount(a.clone()));
            }
        }
        if let Some(owner) = self.links.get(&ext) {
            return match account {
                None => Ok(owner.clone()),
                Some(a) if a == owner => Ok(owner.clone()),
                Some(_) => Err(IamError::AlreadyLinked { identity: ext.to_string(), account: owner.clone() }),
            };
        }
        let id = match account {
            Some(a) => a.clone(),
            None => {
                self.next_account += 1;
                let id = AccountId::new(format!("acc-{:06}", self.next_account));
                self.accounts.insert(
                    id.clone(),
                    Account { account_id: id.clone(), linked: BTreeSet::new(), groups: BTreeSet::new(), enabled: true },
                );
                id
            }
        };
        self.accounts.get_mut(&id).expect("account").linked.insert(ext.clone());
        self.links.insert(ext, id.clone());
        Ok(id)
    }

    pub fn add_to_group(&mut self, account: &AccountId, group: &str) -> Result<(), IamError> {
        if group.is_empty() {
            return Err(IamError::BadRequest(String::from("empty group name")));
        }
        let a = self.accounts.get_mut(account).ok_or_else(|| IamError::UnknownAccount(account.clone()))?;
        a.groups.insert(group.to_string());
        Ok(())
    }

    pub fn remove_from_group(&mut self, account: &AccountId, group: &str) -> Result<(), IamError> {
        let a = self.accounts.get_mut(account).ok_or_else(|| IamError::UnknownAccount(account.clone()))?;
        a.groups.remove(group);
        Ok(())
    }

    pub fn set_enabled(&mut self, account: &AccountId, enabled: bool) -> Result<(), IamError> {
        let a = self.accounts.get_mut(account).ok_or_else(|| IamError::UnknownAccount(account.clone()))?;
        a.enabled = enabled;
        Ok(())
    }

    pub fn register_client(&mut self, name: &str) -> Result<ClientCredentials, IamError> {
        if name.is_empty() {
            return Err(IamError::BadRequest(String::from("empty client name")));
        }
        if !self.clients.insert(name.to_string()) {
            return Err(IamError::DuplicateClient(name.to_string()));
        }
        let secret = URL_SAFE_NO_PAD.encode(self.key.tag("client", name.as_bytes()));
        Ok(ClientCredentials { client_id: name.to_string(), client_secret: secret })
    }

    /// Issues a token for the account `ext` is linked to.
    pub fn authenticate(&mut self, ext: &ExternalIdentity, audience: &str, now: u64) -> Result<(String, Claims), IamError> {
        if !self.clients.contains(audience) {
            return Err(IamError::UnknownAudience(audience.to_string()));
        }
        let id = self.links.get(ext).ok_or_else(|| IamError::UnknownIdentity(ext.to_string()))?;
        let account = &self.accounts[id];
        if !account.enabled {
            return Err(IamError::AccountDisabled(id.clone()));
        }
        self.next_token += 1;
        let claims = Claims {
            token_id: format!("tok-{:08}", self.next_token),
            account_id: id.clone(),
            groups: account.groups.clone(),
            issued_at: now,
            expires_at: now + self.ttl,
            audience: audience.to_string(),
        };
        Ok((seal(&self.key, TOKEN_PREFIX, &claims.canonical()), claims))
    }

    /// Claims of a token that verifies, has not expired and is not revoked.
    pub fn introspect(&self, token: &str, now: u64) -> Result<Claims, IamError> {
        let payload = open(&self.key, TOKEN_PREFIX, token).map_err(IamError::Invalid)?;
        let claims = Claims::decode(&payload).ok_or(IamError::Invalid(InvalidReason::Malformed))?;
        if now > claims.expires_at {
            return Err(IamError::Invalid(InvalidReason::Expired));
        }
        if self.revoked.contains(&claims.token_id) {
            return Err(IamError::Invalid(InvalidReason::Revoked));
        }
        Ok(claims)
    }

    pub fn revoke(&mut self, token_id: &str) {
        self.revoked.insert(token_id.to_string());
    }

    pub fn is_revoked(&self, token_id: &str) -> bool {
        self.revoked.contains(token_id)
    }

    /// Derives a credential for a non-HTTP service. It expires with the
    /// source token but survives the source token's revocation.
    pub fn translate_token(&mut self, token: &str, target: TranslationTarget, now: u64) -> Result<(String, DerivedClaims), IamError> {
        let claims = self.introspect(token, now)?;
        self.next_token += 1;
        let derived = DerivedClaims {
            credential_id: format!("cred-{:08}", self.next_token),
            account_id: claims.account_id,
            target,
            source_token: claims.token_id,
            issued_at: now,
            expires_at: claims.expires_at,
        };
        Ok((seal(&self.key, DERIVED_PREFIX, &derived.canonical()), derived))
    }

    /// Mints a derived credential on the platform's own authority, e.g. for
    /// access to a deployment's endpoints. `source` names what it was issued
    /// for and takes the place of the source token id.
    pub fn issue_derived(&mut self, account: &AccountId, target: TranslationTarget, source: &str, now: u64) -> Result<(String, DerivedClaims), IamError> {
        if !self.accounts.contains_key(account) {
            return Err(IamError::UnknownAccount(account.clone()));
        }
        self.next_token += 1;
        let derived = DerivedClaims {
            credential_id: format!("cred-{:08}", self.next_token),
            account_id: account.clone(),
            target,
            source_token: source.to_string(),
            issued_at: now,
            expires_at: now + self.ttl,
        };
        Ok((seal(&self.key, DERIVED_PREFIX, &derived.canonical()), derived))
    }

    pub fn introspect_derived(&self, credential: &str, now: u64) -> Result<DerivedClaims, IamError> {
        let payload = open(&self.key, DERIVED_PREFIX, credential).map_err(IamError::Invalid)?;
        let claims = DerivedClaims::decode(&payload).ok_or(IamError::Invalid(InvalidReason::Malformed))?;
        if now > claims.expires_at {
            return Err(IamError::Invalid(InvalidReason::Expired));
        }
        Ok(claims)
    }

    /// Accounts ordered by id, optionally narrowed to ids or linked subjects
    /// containing `filter`. Admin only.
    pub fn list_users(&self, caller: &Claims, filter: Option<&str>, after: Option<&str>, limit: usize) -> Result<Page<Account>, IamError> {
        require_admin(caller)?;
        let matches = |a: &Account| match filter {
            None => true,
            Some(f) => a.account_id.as_str().contains(f) || a.linked.iter().any(|l| l.subject.contains(f)),
        };
        let items = self
            .accounts
            .values()
            .filter(|a| after.is_none_or(|c| a.account_id.as_str() > c))
            .filter(|a| matches(a))
            .cloned();
        Ok(paginate(items, limit, |a| a.account_id.as_str().to_string()))
    }

    /// Groups ordered by name with their members. Admin only.
    pub fn list_groups(&self, caller: &Claims, after: Option<&str>, limit: usize) -> Result<Page<GroupListing>, IamError> {
        require_admin(caller)?;
        let mut groups: BTreeMap<&str, Vec<AccountId>> = BTreeMap::new();
        for a in self.accounts.values() {
            for g in &a.groups {
                groups.entry(g).or_default().push(a.account_id.clone());
            }
        }
        let items = groups
            .into_iter()
            .filter(|(name, _)| after.is_none_or(|c| *name > c))
            .map(|(name, members)| GroupListing { name: name.to_string(), members });
        Ok(paginate(items, limit, |g| g.name.clone()))
    }
}

fn require_admin(caller: &Claims) -> Result<(), IamError> {
    if caller.is_admin() { Ok(()) } else { Err(IamError::Forbidden(String::from(ADMIN_GROUP))) }
}

fn paginate<T>(items: impl Iterator<Item = T>, limit: usize, cursor: impl Fn(&T) -> String) -> Page<T> {
    let limit = limit.max(1);
    let mut items: Vec<T> = items.take(limit + 1).collect();
    let next = if items.len() > limit {
        items.truncate(limit);
        items.last().map(&cursor)
    } else {
        None
    };
    Page { items, next }
}
