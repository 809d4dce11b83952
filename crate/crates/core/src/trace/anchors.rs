use std::collections::BTreeMap;
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{AnchorId, Infrastructure};
use crate::geo::GeodeticPosition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mobility {
    Fixed,
    Mobile,
    #[default]
    Unknown,
}

impl Mobility {
    pub fn tag(self) -> &'static str {
        match self {
            Mobility::Fixed => "FIXED",
            Mobility::Mobile => "MOBILE",
            Mobility::Unknown => "UNKNOWN",
        }
    }
}

impl FromStr for Mobility {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FIXED" => Ok(Mobility::Fixed),
            "MOBILE" => Ok(Mobility::Mobile),
            "UNKNOWN" | "" => Ok(Mobility::Unknown),
            other => Err(format!("unknown mobility '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorRecord {
    pub anchor_id: AnchorId,
    pub infrastructure: Infrastructure,
    /// Required for FIXED anchors.
    pub position: Option<GeodeticPosition>,
    pub mobility: Mobility,
    pub name: Option<String>,
}

impl AnchorRecord {
    pub fn fixed(
        anchor_id: impl Into<AnchorId>,
        infrastructure: Infrastructure,
        position: GeodeticPosition,
        name: Option<String>,
    ) -> Self {
        Self {
            anchor_id: anchor_id.into(),
            infrastructure,
            position: Some(position),
            mobility: Mobility::Fixed,
            name,
        }
    }
}

/// An IPv4 or IPv6 network prefix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct IpPrefix {
    network: IpAddr,
    len: u8,
}

impl IpPrefix {
    pub fn new(addr: IpAddr, len: u8) -> Result<Self, String> {
        let max = match addr {
            IpAddr::V4(_) => 32,
            IpAddr::V6(_) => 128,
        };
        if len > max {
            return Err(format!("prefix length {len} exceeds {max}"));
        }
        Ok(Self {
            network: mask(addr, len),
            len,
        })
    }

    pub fn len(&self) -> u8 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn contains(&self, addr: IpAddr) -> bool {
        matches!(
            (self.network, addr),
            (IpAddr::V4(_), IpAddr::V4(_)) | (IpAddr::V6(_), IpAddr::V6(_))
        ) && mask(addr, self.len) == self.network
    }
}

fn mask(addr: IpAddr, len: u8) -> IpAddr {
    match addr {
        IpAddr::V4(a) => {
            let bits = u32::from(a);
            let m = if len == 0 {
                0
            } else {
                u32::MAX << (32 - len as u32)
            };
            IpAddr::V4((bits & m).into())
        }
        IpAddr::V6(a) => {
            let bits = u128::from(a);
            let m = if len == 0 {
                0
            } else {
                u128::MAX << (128 - len as u32)
            };
            IpAddr::V6((bits & m).into())
        }
    }
}

impl fmt::Display for IpPrefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.network, self.len)
    }
}

impl FromStr for IpPrefix {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, len) = match s.split_once('/') {
            Some((a, l)) => (a, Some(l)),
            None => (s, None),
        };
        let addr: IpAddr = addr
            .trim()
            .parse()
            .map_err(|e| format!("bad address '{addr}': {e}"))?;
        let len = match len {
            Some(l) => l
                .trim()
                .parse::<u8>()
                .map_err(|e| format!("bad prefix length '{l}': {e}"))?,
            None => match addr {
                IpAddr::V4(_) => 32,
                IpAddr::V6(_) => 128,
            },
        };
        IpPrefix::new(addr, len)
    }
}

/// Tabulated IP geolocation with longest-prefix matching.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeoIpTable {
    entries: BTreeMap<IpPrefix, GeodeticPosition>,
}

impl GeoIpTable {
    pub fn insert(&mut self, prefix: IpPrefix, position: GeodeticPosition) {
        self.entries.insert(prefix, position);
    }

    pub fn lookup(&self, addr: IpAddr) -> Option<GeodeticPosition> {
        self.entries
            .iter()
            .filter(|(p, _)| p.contains(addr))
            .max_by_key(|(p, _)| p.len())
            .map(|(_, pos)| *pos)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&IpPrefix, &GeodeticPosition)> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnchorDatabase {
    anchors: BTreeMap<(Infrastructure, AnchorId), AnchorRecord>,
    pub geoip_table: GeoIpTable,
}

impl AnchorDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces a record. FIXED anchors must carry a position.
    pub fn insert(&mut self, record: AnchorRecord) -> Result<(), String> {
        if record.mobility == Mobility::Fixed {
            match &record.position {
                Some(p) => p.validate().map_err(|e| e.to_string())?,
                None => return Err(format!("fixed anchor {} has no position", record.anchor_id)),
            }
        }
        self.anchors
            .insert((record.infrastructure, record.anchor_id.clone()), record);
        Ok(())
    }

    pub fn get(&self, infra: Infrastructure, id: &AnchorId) -> Option<&AnchorRecord> {
        self.anchors.get(&(infra, id.clone()))
    }

    pub fn position(&self, infra: Infrastructure, id: &AnchorId) -> Option<GeodeticPosition> {
        self.get(infra, id).and_then(|r| r.position)
    }

    pub fn remove(&mut self, infra: Infrastructure, id: &AnchorId) -> Option<AnchorRecord> {
        self.anchors.remove(&(infra, id.clone()))
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &AnchorRecord> {
        self.anchors.values()
    }

    pub fn records_for(&self, infra: Infrastructure) -> impl Iterator<Item = &AnchorRecord> {
        self.anchors
            .values()
            .filter(move |r| r.infrastructure == infra)
    }
}

/// Pattern set used to drop non-fixed anchors.
#[derive(Debug, Clone)]
pub struct CleaningRules {
    patterns: Vec<Regex>,
    pub drop_mobile: bool,
}

impl CleaningRules {
    pub const DEFAULT_PATTERNS: [&'static str; 4] =
        ["^AndroidAP", "iPhone", "Galaxy.*Hotspot", "^DIRECT-"];

    pub fn new(patterns: &[&str]) -> Result<Self, regex::Error> {
        let patterns = patterns
            .iter()
            .map(|p| Regex::new(p))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            patterns,
            drop_mobile: true,
        })
    }

    /// Default patterns plus literal operator prefixes (bus, rail, ferry Wi-Fi).
    pub fn with_operator_prefixes(prefixes: &[String]) -> Result<Self, regex::Error> {
        let mut rules = Self::default();
        for p in prefixes {
            rules
                .patterns
                .push(Regex::new(&format!("^{}", regex::escape(p)))?);
        }
        Ok(rules)
    }

    pub fn push_pattern(&mut self, pattern: &str) -> Result<(), regex::Error> {
        self.patterns.push(Regex::new(pattern)?);
        Ok(())
    }

    /// The first rule matching the record, rendered for the removal log.
    pub fn matching_rule(&self, record: &AnchorRecord) -> Option<String> {
        if self.drop_mobile && record.mobility == Mobility::Mobile {
            return Some("mobility=MOBILE".into());
        }
        let name = record.name.as_deref()?;
        self.patterns
            .iter()
            .find(|re| re.is_match(name))
            .map(|re| format!("name~/{}/", re.as_str()))
    }
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self::new(&Self::DEFAULT_PATTERNS).expect("default patterns compile")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemovalLogEntry {
    pub infrastructure: Infrastructure,
    pub anchor_id: AnchorId,
    pub name: Option<String>,
    pub rule: String,
}

/// Removes anchors matched by `rules`; returns the cleaned database and one
/// log entry per removal.
pub fn clean_anchors(
    db: &AnchorDatabase,
    rules: &CleaningRules,
) -> (AnchorDatabase, Vec<RemovalLogEntry>) {
    let mut out = AnchorDatabase {
        anchors: BTreeMap::new(),
        geoip_table: db.geoip_table.clone(),
    };
    let mut log_entries = Vec::new();
    for (key, record) in &db.anchors {
        match rules.matching_rule(record) {
            Some(rule) => {
                log::info!(
                    "removed anchor {}/{} ({}) by rule {}",
                    record.infrastructure,
                    record.anchor_id,
                    record.name.as_deref().unwrap_or("-"),
                    rule
                );
                log_entries.push(RemovalLogEntry {
                    infrastructure: record.infrastructure,
                    anchor_id: record.anchor_id.clone(),
                    name: record.name.clone(),
                    rule,
                });
            }
            None => {
                out.anchors.insert(key.clone(), record.clone());
            }
        }
    }
    (out, log_entries)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn wifi(id: &str, name: &str, mobility: Mobility) -> AnchorRecord {
        AnchorRecord {
            anchor_id: id.into(),
            infrastructure: Infrastructure::Wifi,
            position: Some(GeodeticPosition::new(59.4, 17.95, 10.0).unwrap()),
            mobility,
            name: Some(name.to_string()),
        }
    }

    #[test]
    fn hotspot_names_are_removed() {
        let mut db = AnchorDatabase::new();
        db.insert(wifi("a", "AndroidAP_1234", Mobility::Fixed))
            .unwrap();
        db.insert(wifi("b", "eduroam", Mobility::Fixed)).unwrap();
        let (clean, log) = clean_anchors(&db, &CleaningRules::default());
        assert_eq!(clean.len(), 1);
        assert!(clean.get(Infrastructure::Wifi, &"b".into()).is_some());
        assert_eq!(log.len(), 1);
        assert_eq!(log[0].anchor_id.as_str(), "a");
        assert!(log[0].rule.contains("AndroidAP"));
    }

    #[test]
    fn ten_anchors_three_matching() {
        let mut db = AnchorDatabase::new();
        let names = [
            "eduroam",
            "Home-5G",
            "iPhone von Anna",
            "Cafe",
            "DIRECT-xy-Printer",
            "Library",
            "Office",
            "Guest",
            "Galaxy S21 Hotspot",
            "Lab",
        ];
        for (i, n) in names.iter().enumerate() {
            db.insert(wifi(&format!("ap{i}"), n, Mobility::Fixed))
                .unwrap();
        }
        let (clean, log) = clean_anchors(&db, &CleaningRules::default());
        assert_eq!(clean.len(), 7);
        assert_eq!(log.len(), 3);
    }

    #[test]
    fn mobile_flag_and_operator_prefix() {
        let mut db = AnchorDatabase::new();
        db.insert(wifi("a", "Lab", Mobility::Mobile)).unwrap();
        db.insert(wifi("b", "SJ-Train-Wifi", Mobility::Unknown))
            .unwrap();
        db.insert(wifi("c", "Lab2", Mobility::Unknown)).unwrap();
        let rules = CleaningRules::with_operator_prefixes(&["SJ-".to_string()]).unwrap();
        let (clean, log) = clean_anchors(&db, &rules);
        assert_eq!(clean.len(), 1);
        assert_eq!(log[0].rule, "mobility=MOBILE");
        assert_eq!(log[1].rule, "name~/^SJ\\-/");
    }

    #[test]
    fn fixed_without_position_is_rejected() {
        let mut db = AnchorDatabase::new();
        let mut r = wifi("a", "x", Mobility::Fixed);
        r.position = None;
        assert!(db.insert(r).is_err());
    }

    #[test]
    fn longest_prefix_wins() {
        let mut t = GeoIpTable::default();
        let a = GeodeticPosition::new(59.0, 18.0, 0.0).unwrap();
        let b = GeodeticPosition::new(60.0, 19.0, 0.0).unwrap();
        t.insert("10.0.0.0/8".parse().unwrap(), a);
        t.insert("10.1.0.0/16".parse().unwrap(), b);
        assert_eq!(t.lookup("10.1.2.3".parse().unwrap()), Some(b));
        assert_eq!(t.lookup("10.2.2.3".parse().unwrap()), Some(a));
        assert_eq!(t.lookup("11.0.0.1".parse().unwrap()), None);
        assert_eq!(t.lookup("::1".parse().unwrap()), None);
    }

    #[test]
    fn prefix_display_round_trip() {
        let p: IpPrefix = "192.168.7.9/24".parse().unwrap();
        assert_eq!(p.to_string(), "192.168.7.0/24");
        assert_eq!(p.to_string().parse::<IpPrefix>().unwrap(), p);
        assert!("1.2.3.4/33".parse::<IpPrefix>().is_err());
    }

    proptest! {
        #[test]
        fn cleaning_is_idempotent(
            names in proptest::collection::vec(
                prop_oneof![
                    "[A-Za-z]{1,8}",
                    Just("AndroidAP_x".to_string()),
                    Just("my iPhone".to_string()),
                    Just("DIRECT-ab".to_string()),
                ],
                0..20,
            ),
            mobile in proptest::collection::vec(any::<bool>(), 20),
        ) {
            let mut db = AnchorDatabase::new();
            for (i, n) in names.iter().enumerate() {
                let m = if mobile[i] { Mobility::Mobile } else { Mobility::Fixed };
                db.insert(wifi(&format!("ap{i}"), n, m)).unwrap();
            }
            let rules = CleaningRules::default();
            let (once, _) = clean_anchors(&db, &rules);
            let (twice, log2) = clean_anchors(&once, &rules);
            prop_assert_eq!(&once, &twice);
            prop_assert!(log2.is_empty());
        }
    }
}
