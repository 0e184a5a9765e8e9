//! String-backed identifiers for the entities the platform tracks.

use alloc::string::String;
use core::fmt;
use core::borrow::Borrow;

use serde::{Deserialize, Serialize};

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(String::from(s))
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }

        impl Borrow<str> for $name {
            fn borrow(&self) -> &str {
                &self.0
            }
        }
    };
}

string_id!(
    /// An IaaS site registered in the catalog.
    SiteId
);
string_id!(
    /// A platform account; the harmonized identity behind every credential.
    AccountId
);
string_id!(DatasetId);
string_id!(DeploymentId);
string_id!(
    /// A slave node of the two-level cluster.
    NodeId
);
string_id!(FrameworkId);
string_id!(TaskId);
string_id!(ServiceId);
string_id!(JobId);
string_id!(TransferId);
string_id!(InstanceId);
string_id!(SlaId);

/// Serializes a map with composite keys as a list of `[key, value]` pairs,
/// for formats whose map keys must be strings.
pub mod pairs {
    use alloc::collections::BTreeMap;
    use alloc::vec::Vec;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(map: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(map.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        let items: Vec<(K, V)> = Vec::deserialize(d)?;
        Ok(items.into_iter().collect())
    }
}
