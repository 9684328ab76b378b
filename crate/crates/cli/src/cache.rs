//! Token cache: one line, `user token expires_at`, readable by the owner only.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mgvo::vo::Session;

pub fn default_path() -> PathBuf {
    let home = std::env::var_os("HOME").map_or_else(|| PathBuf::from("."), PathBuf::from);
    home.join(".mgvo").join("token")
}

pub struct TokenCache {
    path: PathBuf,
}

impl TokenCache {
    pub fn new(path: PathBuf) -> Self {
        Self { path }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn store(&self, session: &Session) -> anyhow::Result<()> {
        if let Some(dir) = self.path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        let mut opts = fs::OpenOptions::new();
        opts.write(true).create(true).truncate(true);
        #[cfg(unix)]
        {
            use std::os::unix::fs::OpenOptionsExt;
            opts.mode(0o600);
        }
        let mut f = opts
            .open(&self.path)
            .with_context(|| format!("writing {}", self.path.display()))?;
        // The mode above only applies to new files.
        #[cfg(unix)]
        {
            use std::os::unix::fs::PermissionsExt;
            f.set_permissions(fs::Permissions::from_mode(0o600))?;
        }
        writeln!(f, "{} {} {}", session.user, session.token, session.expires_at)?;
        Ok(())
    }

    pub fn load(&self) -> anyhow::Result<Session> {
        let text =
            fs::read_to_string(&self.path).with_context(|| format!("reading {}", self.path.display()))?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let [user, token, expires] = fields[..] else {
            bail!("{} is not a token cache", self.path.display());
        };
        Ok(Session {
            user: user.to_owned(),
            token: token.to_owned(),
            expires_at: expires
                .parse()
                .with_context(|| format!("bad expiry in {}", self.path.display()))?,
        })
    }
}
