use std::sync::Arc;

use mgvo::federation::FederationConfig;
use mgvo::vo::{CentralNode, Client, SiteConfig, SiteNode};
use mgvo::{Clock, SimClock};

use crate::net::{sim_addr, Fault, SimNetwork};
use crate::oracle::OracleStore;
use crate::HarnessError;

/// Name of the central node on the simulated network.
pub const CENTRAL: &str = "central";
/// Clinician account created in every simulated VO.
pub const USER: &str = "clinician";
pub const SECRET: &str = "mammo";
/// Credential the sites use to register themselves.
pub const SERVICE_USER: &str = "site-service";
const SERVICE_SECRET: &str = "site-service-secret";

/// Simulated start time: 2005-04-01T00:00:00Z.
pub const EPOCH_MS: u64 = 1_112_313_600_000;

#[derive(Debug, Clone)]
pub struct VoBuilder {
    seed: u64,
    sites: Vec<String>,
    federation: FederationConfig,
}

impl VoBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            sites: Vec::new(),
            federation: FederationConfig::default(),
        }
    }

    pub fn site(mut self, name: &str) -> Self {
        self.sites.push(name.to_owned());
        self
    }

    pub fn sites<'a>(mut self, names: impl IntoIterator<Item = &'a str>) -> Self {
        self.sites.extend(names.into_iter().map(str::to_owned));
        self
    }

    pub fn federation(mut self, config: FederationConfig) -> Self {
        self.federation = config;
        self
    }

    pub fn build(self) -> Result<SimVo, HarnessError> {
        let net = SimNetwork::new();
        let clock = SimClock::new(EPOCH_MS);
        let central = Arc::new(CentralNode::new(Arc::new(clock.clone()), Some(self.seed)));
        central.add_user(USER, SECRET);
        central.add_user(SERVICE_USER, SERVICE_SECRET);
        net.attach(CENTRAL, central.clone());
        let mut vo = SimVo {
            net,
            clock,
            central,
            sites: Vec::new(),
            federation: self.federation,
        };
        for name in &self.sites {
            vo.add_site(name)?;
        }
        Ok(vo)
    }
}

/// A whole VO inside one process: central node, sites, network and clock.
pub struct SimVo {
    net: SimNetwork,
    clock: SimClock,
    central: Arc<CentralNode>,
    sites: Vec<Arc<SiteNode>>,
    federation: FederationConfig,
}

impl SimVo {
    /// Starts a site and registers it with the central node.
    pub fn add_site(&mut self, name: &str) -> Result<Arc<SiteNode>, HarnessError> {
        let mut config = SiteConfig::new(name, &sim_addr(name), &sim_addr(CENTRAL));
        config.federation = self.federation;
        let clock: Arc<dyn Clock> = Arc::new(self.clock.clone());
        let node = Arc::new(SiteNode::in_memory(config, self.net.endpoint(name), clock));
        self.net.attach(name, node.clone());
        node.register(SERVICE_USER, SERVICE_SECRET)?;
        self.sites.push(Arc::clone(&node));
        Ok(node)
    }

    pub fn network(&self) -> &SimNetwork {
        &self.net
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn central(&self) -> &Arc<CentralNode> {
        &self.central
    }

    pub fn sites(&self) -> &[Arc<SiteNode>] {
        &self.sites
    }

    pub fn site(&self, name: &str) -> Result<&Arc<SiteNode>, HarnessError> {
        self.sites
            .iter()
            .find(|s| s.name() == name)
            .ok_or_else(|| HarnessError::UnknownSite(name.to_owned()))
    }

    /// A client logged in as the clinician.
    pub fn client(&self) -> Result<Client, HarnessError> {
        let mut c = Client::new(self.net.endpoint("client"), 60_000);
        c.login(&sim_addr(CENTRAL), USER, SECRET)?;
        Ok(c)
    }

    pub fn inject_fault(&self, site: &str, fault: Fault) -> Result<(), HarnessError> {
        self.site(site)?;
        self.net.inject_fault(site, fault)
    }

    pub fn clear_fault(&self, site: &str) {
        self.net.clear_fault(site);
    }

    pub fn advance_clock(&self, ms: u64) {
        self.clock.advance(ms);
    }

    /// `(site, log text)` for every site, in registration order.
    pub fn catalog_logs(&self) -> Result<Vec<(String, String)>, HarnessError> {
        self.sites
            .iter()
            .map(|s| Ok((s.name().to_owned(), s.catalog().log_text()?)))
            .collect()
    }

    /// Oracle over every site's catalog log, read directly from the nodes.
    pub fn oracle(&self) -> Result<OracleStore, HarnessError> {
        Ok(OracleStore::from_logs(&self.catalog_logs()?)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use mgvo::vo::{ErrorCode, Kind, TOKEN_LIFETIME_MS};

    #[test]
    fn builds_and_registers_sites() {
        let vo = VoBuilder::new(1).sites(["b", "a"]).build().unwrap();
        let c = vo.client().unwrap();
        let names: Vec<String> = c
            .list_sites("sim:b")
            .unwrap()
            .into_iter()
            .map(|s| s.name)
            .collect();
        assert_eq!(names, ["a", "b"]);
        assert!(matches!(vo.site("zz"), Err(HarnessError::UnknownSite(_))));
        assert!(matches!(
            vo.inject_fault("zz", Fault::Halt),
            Err(HarnessError::UnknownSite(_))
        ));
    }

    #[test]
    fn seeded_vo_issues_the_same_tokens() {
        let token = |seed| {
            let vo = VoBuilder::new(seed).site("a").build().unwrap();
            vo.client().unwrap().token().unwrap().to_owned()
        };
        assert_eq!(token(9), token(9));
        assert_ne!(token(9), token(10));
    }

    #[test]
    fn expiry_follows_the_simulated_clock() {
        let vo = VoBuilder::new(1).sites(["a", "b"]).build().unwrap();
        let c = vo.client().unwrap();
        c.query("sim:a", "SELECT patients WHERE patient.sex = 'F'")
            .unwrap();
        vo.advance_clock(TOKEN_LIFETIME_MS + 1);
        for s in ["sim:a", "sim:b"] {
            let e = c.query(s, "SELECT patients WHERE patient.sex = 'F'").unwrap_err();
            assert_eq!(e.code(), Some(ErrorCode::Expired));
        }
        assert!(vo.network().count(Kind::ValidateToken) >= 2);
    }
}
