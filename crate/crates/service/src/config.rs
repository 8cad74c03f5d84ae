use std::net::{IpAddr, SocketAddr};
use std::time::Duration;

/// Runtime settings, read from `MSM_*` environment variables.
#[derive(Debug, Clone)]
pub struct Config {
    pub bind: IpAddr,
    pub port: u16,
    /// Maximum upload size in bytes.
    pub upload_limit: usize,
    pub session_ttl: Duration,
    /// Wall-clock limit of one analysis request.
    pub timeout: Duration,
    /// Allowed browser origin; any origin when unset.
    pub cors_origin: Option<String>,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            bind: IpAddr::from([127, 0, 0, 1]),
            port: 8080,
            upload_limit: 32 * 1024 * 1024,
            session_ttl: Duration::from_secs(2 * 60 * 60),
            timeout: Duration::from_secs(120),
            cors_origin: None,
        }
    }
}

impl Config {
    pub fn from_env() -> Result<Config, String> {
        Config::from_lookup(|k| std::env::var(k).ok())
    }

    pub fn from_lookup(get: impl Fn(&str) -> Option<String>) -> Result<Config, String> {
        fn parsed<T: std::str::FromStr>(
            key: &str,
            v: Option<String>,
            default: T,
        ) -> Result<T, String> {
            match v {
                None => Ok(default),
                Some(s) => s
                    .trim()
                    .parse()
                    .map_err(|_| format!("{key}: cannot parse `{s}`")),
            }
        }
        let d = Config::default();
        Ok(Config {
            bind: parsed("MSM_BIND", get("MSM_BIND"), d.bind)?,
            port: parsed("MSM_PORT", get("MSM_PORT"), d.port)?,
            upload_limit: parsed("MSM_UPLOAD_LIMIT", get("MSM_UPLOAD_LIMIT"), d.upload_limit)?,
            session_ttl: Duration::from_secs(parsed(
                "MSM_SESSION_TTL",
                get("MSM_SESSION_TTL"),
                d.session_ttl.as_secs(),
            )?),
            timeout: Duration::from_secs(parsed(
                "MSM_TIMEOUT",
                get("MSM_TIMEOUT"),
                d.timeout.as_secs(),
            )?),
            cors_origin: get("MSM_CORS_ORIGIN").filter(|s| !s.is_empty()),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        SocketAddr::new(self.bind, self.port)
    }
}
