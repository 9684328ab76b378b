use std::fmt;
use std::str::FromStr;

use thiserror::Error;

/// Site component of the reserved LFNs for compiled-in algorithms.
pub const BUILTIN_SITE: &str = "_builtin";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Images,
    Smf,
    Reports,
    Algorithms,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Images => "images",
            Category::Smf => "smf",
            Category::Reports => "reports",
            Category::Algorithms => "algorithms",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "images" => Category::Images,
            "smf" => Category::Smf,
            "reports" => Category::Reports,
            "algorithms" => Category::Algorithms,
            _ => return None,
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid logical file name {0:?}")]
pub struct InvalidLfn(pub String);

/// Logical file name: `lfn:/mgvo/<site>/<category>/<name>`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lfn {
    site: String,
    category: Category,
    name: String,
}

pub fn valid_site_name(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-' || b == b'_')
}

pub fn valid_file_name(s: &str) -> bool {
    !s.is_empty()
        && s != "."
        && s != ".."
        && !s.ends_with(".meta")
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'.' | b'_' | b'-'))
}

impl Lfn {
    pub fn new(site: &str, category: Category, name: &str) -> Result<Self, InvalidLfn> {
        if !valid_site_name(site) || !valid_file_name(name) {
            return Err(InvalidLfn(format!(
                "lfn:/mgvo/{site}/{}/{name}",
                category.as_str()
            )));
        }
        Ok(Self {
            site: site.to_owned(),
            category,
            name: name.to_owned(),
        })
    }

    pub fn builtin(id: &str) -> Result<Self, InvalidLfn> {
        Self::new(BUILTIN_SITE, Category::Algorithms, id)
    }

    pub fn site(&self) -> &str {
        &self.site
    }

    pub fn category(&self) -> Category {
        self.category
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_builtin(&self) -> bool {
        self.site == BUILTIN_SITE
    }
}

impl fmt::Display for Lfn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "lfn:/mgvo/{}/{}/{}",
            self.site,
            self.category.as_str(),
            self.name
        )
    }
}

impl FromStr for Lfn {
    type Err = InvalidLfn;

    fn from_str(s: &str) -> Result<Self, InvalidLfn> {
        let bad = || InvalidLfn(s.to_owned());
        let rest = s.strip_prefix("lfn:/mgvo/").ok_or_else(bad)?;
        let mut parts = rest.split('/');
        let (Some(site), Some(cat), Some(name), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let category = Category::parse(cat).ok_or_else(bad)?;
        Self::new(site, category, name).map_err(|_| bad())
    }
}
