//! Process addresses of the form `/root/tenants/{tenant}/processes/{process}`.

use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Address {
    pub tenant: String,
    pub process: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AddressError {
    #[error("malformed address `{0}`: expected /root/tenants/<tenant>/processes/<process>")]
    Shape(String),
    #[error("invalid token `{0}`: expected 1 to 64 characters from [A-Za-z0-9_-]")]
    Token(String),
}

/// Tenant ids, process ids and subscription ids all share this grammar.
pub fn valid_token(s: &str) -> bool {
    (1..=64).contains(&s.len()) && s.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'-')
}

pub fn check_token(s: &str) -> Result<&str, AddressError> {
    if valid_token(s) {
        Ok(s)
    } else {
        Err(AddressError::Token(s.to_string()))
    }
}

impl Address {
    pub fn new(tenant: &str, process: &str) -> Result<Address, AddressError> {
        Ok(Address { tenant: check_token(tenant)?.to_string(), process: check_token(process)?.to_string() })
    }
}

impl FromStr for Address {
    type Err = AddressError;

    fn from_str(s: &str) -> Result<Address, AddressError> {
        let parts: Vec<&str> = s.split('/').collect();
        match parts[..] {
            ["", "root", "tenants", t, "processes", p] => Address::new(t, p),
            _ => Err(AddressError::Shape(s.to_string())),
        }
    }
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "/root/tenants/{}/processes/{}", self.tenant, self.process)
    }
}
