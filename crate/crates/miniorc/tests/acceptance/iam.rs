//! Random link and login sequences against an independent model of the
//! identity-to-account map, plus single-field token tampering.

use std::collections::{BTreeMap, BTreeSet};

use base64::Engine;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use miniorc_core::iam::{ExternalIdentity, Iam, IamError, IdentityKind, SigningKey};
use miniorc_core::ids::AccountId;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::support::{KEY, pick};

const OPS: u64 = 10_000;
const AUDIENCE: &str = "portal";

fn identities() -> Vec<ExternalIdentity> {
    let issuers = [
        ("https://login.example.org", IdentityKind::Oidc),
        ("https://idp.example.edu/saml", IdentityKind::Saml),
        ("CN=Example CA,O=Example", IdentityKind::X509),
        ("https://accounts.example.com", IdentityKind::Oidc),
    ];
    let mut out = Vec::new();
    for (issuer, kind) in issuers {
        for k in 0..25 {
            out.push(ExternalIdentity::new(issuer, &format!("user{k}"), kind));
        }
    }
    out
}

/// `<decimal length>:<bytes>` fields of a token payload.
fn fields(payload: &[u8]) -> Option<Vec<Vec<u8>>> {
    let mut rest = payload;
    let mut out = Vec::new();
    while !rest.is_empty() {
        let colon = rest.iter().position(|b| *b == b':')?;
        let len: usize = std::str::from_utf8(&rest[..colon]).ok()?.parse().ok()?;
        let body = rest.get(colon + 1..colon + 1 + len)?;
        out.push(body.to_vec());
        rest = &rest[colon + 1 + len..];
    }
    Some(out)
}

fn join(fields: &[Vec<u8>]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in fields {
        out.extend_from_slice(f.len().to_string().as_bytes());
        out.push(b':');
        out.extend_from_slice(f);
    }
    out
}

/// Every single-field variant of `token`: each payload field altered in
/// place, plus the version and tag parts.
fn mutations(token: &str) -> Result<Vec<String>, String> {
    let parts: Vec<&str> = token.split('.').collect();
    let [version, body, tag] = parts[..] else { return Err(format!("token has {} parts", parts.len())) };
    let payload = URL_SAFE_NO_PAD.decode(body).map_err(|e| e.to_string())?;
    let fs = fields(&payload).ok_or("payload does not split into fields")?;
    let mut out = Vec::new();
    for i in 0..fs.len() {
        let mut changed = fs.clone();
        let f = &mut changed[i];
        match f.last_mut() {
            Some(b) if b.is_ascii_digit() => *b = if *b == b'9' { b'0' } else { *b + 1 },
            Some(b) => *b ^= 0x01,
            None => f.push(b'x'),
        }
        out.push(format!("{version}.{}.{tag}", URL_SAFE_NO_PAD.encode(join(&changed))));
    }
    let mut dropped = fs.clone();
    dropped.pop();
    out.push(format!("{version}.{}.{tag}", URL_SAFE_NO_PAD.encode(join(&dropped))));
    out.push(format!("v2.{body}.{tag}"));
    let mut t = URL_SAFE_NO_PAD.decode(tag).map_err(|e| e.to_string())?;
    t[0] ^= 0x80;
    out.push(format!("{version}.{body}.{}", URL_SAFE_NO_PAD.encode(t)));
    Ok(out)
}

pub fn run() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(0x1A5);
    let mut iam = Iam::new(SigningKey::new(KEY).map_err(|e| e.to_string())?);
    iam.register_client(AUDIENCE).map_err(|e| e.to_string())?;
    let pool = identities();
    let mut model: BTreeMap<ExternalIdentity, AccountId> = BTreeMap::new();
    let mut disabled: BTreeSet<AccountId> = BTreeSet::new();
    let mut tokens: Vec<(String, AccountId)> = Vec::new();
    let mut now = 0u64;
    let (mut logins, mut pairs, mut tampered) = (0u64, 0u64, 0u64);

    for op in 0..OPS {
        now += rng.random_range(0..3);
        let ext = pick(&mut rng, &pool).clone();
        match rng.random_range(0..10) {
            0..=2 => {
                let got = iam.link_credential(ext.clone(), None).map_err(|e| e.to_string())?;
                let want = model.entry(ext).or_insert_with(|| got.clone());
                if *want != got {
                    return Err(format!("op {op}: identity moved from {want} to {got}"));
                }
            }
            3..=4 => {
                let accounts: Vec<AccountId> = model.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
                if accounts.is_empty() {
                    continue;
                }
                let target = pick(&mut rng, &accounts).clone();
                let result = iam.link_credential(ext.clone(), Some(&target));
                match (model.get(&ext), result) {
                    (None, Ok(a)) if a == target => {
                        model.insert(ext, a);
                    }
                    (Some(owner), Ok(a)) if *owner == target && a == target => {}
                    (Some(owner), Err(IamError::AlreadyLinked { .. })) if *owner != target => {}
                    (m, r) => return Err(format!("op {op}: link to {target} with model {m:?} gave {r:?}")),
                }
            }
            5..=7 => match (iam.authenticate(&ext, AUDIENCE, now), model.get(&ext)) {
                (Ok((token, claims)), Some(a)) if claims.account_id == *a && !disabled.contains(a) => {
                    let seen = iam.introspect(&token, now).map_err(|e| format!("op {op}: fresh token rejected: {e}"))?;
                    if seen.account_id != *a {
                        return Err(format!("op {op}: token for {a} introspects as {}", seen.account_id));
                    }
                    logins += 1;
                    tokens.push((token, a.clone()));
                }
                (Err(IamError::UnknownIdentity(_)), None) => {}
                (Err(IamError::AccountDisabled(_)), Some(a)) if disabled.contains(a) => {}
                (r, m) => return Err(format!("op {op}: login with model {m:?} gave {r:?}")),
            },
            8 => {
                if let Some(a) = model.get(&ext).cloned() {
                    let enable = disabled.contains(&a);
                    iam.set_enabled(&a, enable).map_err(|e| e.to_string())?;
                    if enable {
                        disabled.remove(&a);
                    } else {
                        disabled.insert(a);
                    }
                }
            }
            _ => {
                if let Some(a) = model.get(&ext).cloned() {
                    iam.add_to_group(&a, pick(&mut rng, &["physics", "biology", "ops"])).map_err(|e| e.to_string())?;
                }
            }
        }

        // no identity maps to two accounts, and the map matches the model
        let mut owners: BTreeMap<&ExternalIdentity, &AccountId> = BTreeMap::new();
        for acc in iam.accounts() {
            for ext in &acc.linked {
                if let Some(prev) = owners.insert(ext, &acc.account_id) {
                    return Err(format!("op {op}: {ext} linked to both {prev} and {}", acc.account_id));
                }
            }
        }
        if owners.len() != model.len() || model.iter().any(|(e, a)| iam.account_of(e) != Some(a)) {
            return Err(format!("op {op}: identity map diverges from the model"));
        }

        if op % 100 == 99 {
            let mut by_account: BTreeMap<&AccountId, Vec<&ExternalIdentity>> = BTreeMap::new();
            for (e, a) in &model {
                by_account.entry(a).or_default().push(e);
            }
            for (a, exts) in by_account.iter().filter(|(a, e)| e.len() >= 2 && !disabled.contains(**a)) {
                let (t1, _) = iam.authenticate(exts[0], AUDIENCE, now).map_err(|e| e.to_string())?;
                let (t2, _) = iam.authenticate(exts[exts.len() - 1], AUDIENCE, now).map_err(|e| e.to_string())?;
                let c1 = iam.introspect(&t1, now).map_err(|e| e.to_string())?;
                let c2 = iam.introspect(&t2, now).map_err(|e| e.to_string())?;
                if c1.account_id != c2.account_id || c1.account_id != **a {
                    return Err(format!("op {op}: credentials of {a} yield {} and {}", c1.account_id, c2.account_id));
                }
                pairs += 1;
            }
        }
        if op % 20 == 0 {
            if let Some((token, _)) = tokens.last() {
                for forged in mutations(token)? {
                    if let Ok(c) = iam.introspect(&forged, now) {
                        return Err(format!("op {op}: tampered token accepted for {}", c.account_id));
                    }
                    tampered += 1;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(String::from("no account ever held two credentials"));
    }
    let accounts = model.values().collect::<BTreeSet<_>>().len();
    Ok(format!(
        "{OPS} ops over {} identities and {accounts} accounts; {logins} logins, {pairs} cross-credential checks, {tampered} tampered tokens all rejected",
        model.len()
    ))
}
