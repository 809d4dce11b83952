//! Line-delimited JSON traces and the CSV anchor database.
//!
//! A trace is a sequence of frames. Each frame opens with its `lbs` record,
//! whose `t` is the frame timestamp; every following record up to the next
//! `lbs` belongs to that frame. A frame holds exactly one `motion` record and
//! at most one `truth` record.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::net::IpAddr;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{
    AnchorDatabase, AnchorRecord, Constellation, Infrastructure, IpPrefix, Mobility, MotionSample,
    RangingObservation, TraceError, TraceFrame, ALIGNMENT_TOLERANCE_S,
};
use crate::geo::{GeodeticPosition, OrientationAngles};

const KINDS: [&str; 8] = [
    "motion", "gnss", "wifi", "cell", "bt", "geoip", "lbs", "truth",
];

fn allowed_fields(kind: &str) -> &'static [&'static str] {
    match kind {
        "motion" => &["vx", "vy", "vz", "ax", "ay", "az", "roll", "pitch", "yaw"],
        "gnss" => &["sat", "const", "pr_m", "sat_x", "sat_y", "sat_z"],
        "wifi" | "cell" | "bt" => &["anchor", "rssi_dbm"],
        "geoip" => &["server", "rtt_ms"],
        "lbs" => &["lat", "lon", "alt", "client_ip"],
        "truth" => &["lat", "lon", "alt"],
        _ => &[],
    }
}

fn optional_field(kind: &str, field: &str) -> bool {
    kind == "lbs" && field == "client_ip"
}

struct LineRecord<'a> {
    line: usize,
    map: &'a Map<String, Value>,
}

impl LineRecord<'_> {
    fn err(&self, reason: impl Into<String>) -> TraceError {
        TraceError::MalformedTrace {
            line: self.line,
            reason: reason.into(),
        }
    }

    fn num(&self, field: &str) -> Result<f64, TraceError> {
        match self.map.get(field) {
            Some(Value::Number(n)) => n
                .as_f64()
                .filter(|v| v.is_finite())
                .ok_or_else(|| self.err(format!("field '{field}' is not a finite number"))),
            Some(_) => Err(self.err(format!("field '{field}' must be a number"))),
            None => Err(self.err(format!("missing field '{field}'"))),
        }
    }

    fn text(&self, field: &str) -> Result<&str, TraceError> {
        match self.map.get(field) {
            Some(Value::String(s)) => Ok(s),
            Some(_) => Err(self.err(format!("field '{field}' must be a string"))),
            None => Err(self.err(format!("missing field '{field}'"))),
        }
    }

    fn position(&self) -> Result<GeodeticPosition, TraceError> {
        GeodeticPosition::new(self.num("lat")?, self.num("lon")?, self.num("alt")?)
            .map_err(|e| self.err(e.to_string()))
    }
}

/// Reads a trace from any buffered reader.
pub fn read_trace<R: BufRead>(reader: R) -> Result<Vec<TraceFrame>, TraceError> {
    let mut frames: Vec<TraceFrame> = Vec::new();
    let mut has_motion = false;
    let mut frame_line = 0;

    let finish =
        |frame: &mut TraceFrame, has_motion: bool, line: usize| -> Result<(), TraceError> {
            if !has_motion {
                return Err(TraceError::MalformedTrace {
                    line,
                    reason: format!("frame at t={} has no motion record", frame.timestamp),
                });
            }
            if frame.observations.is_empty() {
                return Err(TraceError::MalformedTrace {
                    line,
                    reason: format!("frame at t={} has no ranging observation", frame.timestamp),
                });
            }
            frame.sort_observations();
            frame.relabel();
            frame
                .validate(ALIGNMENT_TOLERANCE_S)
                .map_err(|reason| TraceError::MalformedTrace { line, reason })
        };

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let value: Value =
            serde_json::from_str(trimmed).map_err(|e| TraceError::MalformedTrace {
                line: lineno,
                reason: e.to_string(),
            })?;
        let Value::Object(map) = value else {
            return Err(TraceError::MalformedTrace {
                line: lineno,
                reason: "record is not an object".into(),
            });
        };
        let rec = LineRecord {
            line: lineno,
            map: &map,
        };
        let t = rec.num("t")?;
        let kind = rec.text("kind")?;
        if !KINDS.contains(&kind) {
            return Err(rec.err(format!("unknown kind '{kind}'")));
        }
        let allowed = allowed_fields(kind);
        for key in map.keys() {
            if key != "t" && key != "kind" && !allowed.contains(&key.as_str()) {
                return Err(rec.err(format!("unexpected field '{key}' for kind '{kind}'")));
            }
        }
        for field in allowed {
            if !map.contains_key(*field) && !optional_field(kind, field) {
                return Err(rec.err(format!("missing field '{field}' for kind '{kind}'")));
            }
        }

        if kind == "lbs" {
            if let Some(prev) = frames.last_mut() {
                finish(prev, has_motion, frame_line)?;
                if t <= prev.timestamp {
                    return Err(TraceError::NonMonotonicTimestamps {
                        line: lineno,
                        previous: prev.timestamp,
                        current: t,
                    });
                }
            }
            let mut frame = TraceFrame::new(t, MotionSample::stationary(t), rec.position()?);
            if let Some(ip) = map.get("client_ip") {
                let Value::String(s) = ip else {
                    return Err(rec.err("field 'client_ip' must be a string"));
                };
                frame.client_ip = Some(
                    s.parse::<IpAddr>()
                        .map_err(|e| rec.err(format!("bad client_ip: {e}")))?,
                );
            }
            frames.push(frame);
            has_motion = false;
            frame_line = lineno;
            continue;
        }

        let Some(frame) = frames.last_mut() else {
            return Err(rec.err(format!("'{kind}' record before the first lbs record")));
        };
        match kind {
            "motion" => {
                if has_motion {
                    return Err(rec.err("second motion record in one frame"));
                }
                frame.motion = MotionSample {
                    timestamp: t,
                    velocity: Vector3::new(rec.num("vx")?, rec.num("vy")?, rec.num("vz")?),
                    acceleration: Vector3::new(rec.num("ax")?, rec.num("ay")?, rec.num("az")?),
                    orientation: OrientationAngles::new(
                        rec.num("roll")?,
                        rec.num("pitch")?,
                        rec.num("yaw")?,
                    ),
                };
                has_motion = true;
            }
            "truth" => {
                if frame.ground_truth.is_some() {
                    return Err(rec.err("second truth record in one frame"));
                }
                frame.ground_truth = Some(rec.position()?);
            }
            "gnss" => {
                let constellation: Constellation =
                    rec.text("const")?.parse().map_err(|e: String| rec.err(e))?;
                frame.observations.push(RangingObservation::gnss(
                    t,
                    rec.text("sat")?,
                    constellation,
                    rec.num("pr_m")?,
                    Vector3::new(rec.num("sat_x")?, rec.num("sat_y")?, rec.num("sat_z")?),
                ));
            }
            "wifi" | "cell" | "bt" => {
                let infra: Infrastructure = kind.parse().map_err(|e: String| rec.err(e))?;
                frame.observations.push(RangingObservation::rssi(
                    t,
                    infra,
                    rec.text("anchor")?,
                    rec.num("rssi_dbm")?,
                ));
            }
            "geoip" => {
                frame.observations.push(RangingObservation::rtt(
                    t,
                    rec.text("server")?,
                    rec.num("rtt_ms")?,
                ));
            }
            _ => unreachable!("kind checked above"),
        }
        if let Some(o) = frame.observations.last() {
            o.validate().map_err(|e| rec.err(e))?;
        }
    }
    if let Some(last) = frames.last_mut() {
        finish(last, has_motion, frame_line)?;
    }
    Ok(frames)
}

pub fn load_trace(path: impl AsRef<Path>) -> Result<Vec<TraceFrame>, TraceError> {
    read_trace(BufReader::new(File::open(path)?))
}

fn position_record(kind: &str, t: f64, p: &GeodeticPosition) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("t".into(), t.into());
    m.insert("kind".into(), kind.into());
    m.insert("lat".into(), p.latitude.into());
    m.insert("lon".into(), p.longitude.into());
    m.insert("alt".into(), p.altitude.into());
    m
}

fn emit<W: Write>(w: &mut W, m: Map<String, Value>) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, &Value::Object(m))?;
    w.write_all(b"\n")
}

/// Writes frames in the trace format. Floats are written in shortest
/// round-trip form, so reading the output reproduces the frames exactly.
pub fn write_trace<W: Write>(writer: W, frames: &[TraceFrame]) -> std::io::Result<()> {
    let mut w = BufWriter::new(writer);
    for f in frames {
        let mut lbs = position_record("lbs", f.timestamp, &f.lbs_position);
        if let Some(ip) = f.client_ip {
            lbs.insert("client_ip".into(), ip.to_string().into());
        }
        emit(&mut w, lbs)?;
        if let Some(truth) = &f.ground_truth {
            emit(&mut w, position_record("truth", f.timestamp, truth))?;
        }
        let m = &f.motion;
        let mut rec = Map::new();
        rec.insert("t".into(), m.timestamp.into());
        rec.insert("kind".into(), "motion".into());
        for (k, v) in [
            ("vx", m.velocity.x),
            ("vy", m.velocity.y),
            ("vz", m.velocity.z),
            ("ax", m.acceleration.x),
            ("ay", m.acceleration.y),
            ("az", m.acceleration.z),
            ("roll", m.orientation.roll),
            ("pitch", m.orientation.pitch),
            ("yaw", m.orientation.yaw),
        ] {
            rec.insert(k.into(), v.into());
        }
        emit(&mut w, rec)?;
        for o in &f.observations {
            let mut rec = Map::new();
            rec.insert("t".into(), o.timestamp.into());
            rec.insert("kind".into(), o.infrastructure.tag().into());
            match o.infrastructure {
                Infrastructure::Gnss => {
                    let sat = o.satellite_position.unwrap_or_else(Vector3::zeros);
                    rec.insert("sat".into(), o.anchor_id.as_str().into());
                    rec.insert(
                        "const".into(),
                        o.constellation.unwrap_or(Constellation::Gps).name().into(),
                    );
                    rec.insert("pr_m".into(), o.value.into());
                    rec.insert("sat_x".into(), sat.x.into());
                    rec.insert("sat_y".into(), sat.y.into());
                    rec.insert("sat_z".into(), sat.z.into());
                }
                Infrastructure::GeoIp => {
                    rec.insert("server".into(), o.anchor_id.as_str().into());
                    rec.insert("rtt_ms".into(), o.value.into());
                }
                _ => {
                    rec.insert("anchor".into(), o.anchor_id.as_str().into());
                    rec.insert("rssi_dbm".into(), o.value.into());
                }
            }
            emit(&mut w, rec)?;
        }
    }
    w.flush()
}

pub fn save_trace(path: impl AsRef<Path>, frames: &[TraceFrame]) -> Result<(), TraceError> {
    write_trace(File::create(path)?, frames)?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AnchorRow {
    anchor_id: String,
    infra: String,
    lat: Option<f64>,
    lon: Option<f64>,
    alt: Option<f64>,
    mobility: String,
    name: Option<String>,
}

/// Loads the anchor database. Rows with `infra = iptable` populate the
/// GeoIP lookup table and carry a CIDR prefix in `anchor_id`.
pub fn load_anchor_db(path: impl AsRef<Path>) -> Result<AnchorDatabase, TraceError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(0, e))?;
    let mut db = AnchorDatabase::new();
    for (idx, row) in reader.deserialize::<AnchorRow>().enumerate() {
        let record = idx + 1;
        let bad = |reason: String| TraceError::MalformedAnchorDb { record, reason };
        let row = row.map_err(|e| csv_err(record, e))?;
        let position = match (row.lat, row.lon, row.alt) {
            (Some(lat), Some(lon), alt) => Some(
                GeodeticPosition::new(lat, lon, alt.unwrap_or(0.0))
                    .map_err(|e| bad(e.to_string()))?,
            ),
            (None, None, _) => None,
            _ => return Err(bad("partial position".into())),
        };
        if row.infra.eq_ignore_ascii_case("iptable") {
            let prefix: IpPrefix = row.anchor_id.parse().map_err(bad)?;
            let pos = position.ok_or_else(|| bad("iptable row without position".into()))?;
            db.geoip_table.insert(prefix, pos);
            continue;
        }
        let infrastructure: Infrastructure = row.infra.parse().map_err(bad)?;
        let mobility: Mobility = row.mobility.parse().map_err(bad)?;
        if db
            .get(infrastructure, &row.anchor_id.as_str().into())
            .is_some()
        {
            return Err(bad(format!(
                "duplicate anchor id '{}' for {infrastructure}",
                row.anchor_id
            )));
        }
        db.insert(AnchorRecord {
            anchor_id: row.anchor_id.into(),
            infrastructure,
            position,
            mobility,
            name: row.name.filter(|n| !n.is_empty()),
        })
        .map_err(bad)?;
    }
    Ok(db)
}

fn csv_err(record: usize, e: csv::Error) -> TraceError {
    TraceError::MalformedAnchorDb {
        record,
        reason: e.to_string(),
    }
}

pub fn save_anchor_db(path: impl AsRef<Path>, db: &AnchorDatabase) -> Result<(), TraceError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(0, e))?;
    let rows = db
        .records()
        .map(|r| AnchorRow {
            anchor_id: r.anchor_id.to_string(),
            infra: r.infrastructure.tag().to_string(),
            lat: r.position.map(|p| p.latitude),
            lon: r.position.map(|p| p.longitude),
            alt: r.position.map(|p| p.altitude),
            mobility: r.mobility.tag().to_string(),
            name: r.name.clone(),
        })
        .chain(db.geoip_table.iter().map(|(prefix, p)| AnchorRow {
            anchor_id: prefix.to_string(),
            infra: "iptable".into(),
            lat: Some(p.latitude),
            lon: Some(p.longitude),
            alt: Some(p.altitude),
            mobility: Mobility::Fixed.tag().to_string(),
            name: None,
        }));
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(0, e))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"t":0.0,"kind":"lbs","lat":59.4,"lon":17.95,"alt":30.0}
{"t":0.0,"kind":"motion","vx":0,"vy":0,"vz":0,"ax":0,"ay":0,"az":0,"roll":0,"pitch":0,"yaw":0}
{"t":0.0,"kind":"wifi","anchor":"aa:bb","rssi_dbm":-60.5}
"#;

    #[test]
    fn minimal_file_has_one_frame() {
        let frames = read_trace(MINIMAL.as_bytes()).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].observations.len(), 1);
        assert_eq!(frames[0].observations[0].value, -60.5);
        assert_eq!(frames[0].attack_label, None);
    }

    #[test]
    fn positive_rssi_is_rejected() {
        let bad = MINIMAL.replace("-60.5", "5");
        match read_trace(bad.as_bytes()) {
            Err(TraceError::MalformedTrace { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected MalformedTrace, got {other:?}"),
        }
    }

    #[test]
    fn unknown_field_and_missing_field_are_rejected() {
        let extra = MINIMAL.replace("\"rssi_dbm\"", "\"snr\":3,\"rssi_dbm\"");
        assert!(matches!(
            read_trace(extra.as_bytes()),
            Err(TraceError::MalformedTrace { line: 3, .. })
        ));
        let missing = MINIMAL.replace(",\"yaw\":0", "");
        assert!(matches!(
            read_trace(missing.as_bytes()),
            Err(TraceError::MalformedTrace { line: 2, .. })
        ));
    }

    #[test]
    fn record_before_first_frame_is_rejected() {
        let text = r#"{"t":0.0,"kind":"wifi","anchor":"a","rssi_dbm":-60}"#;
        assert!(matches!(
            read_trace(text.as_bytes()),
            Err(TraceError::MalformedTrace { line: 1, .. })
        ));
    }

    #[test]
    fn non_monotonic_frames_are_rejected() {
        let second = MINIMAL.replace("\"t\":0.0", "\"t\":-1.0");
        let text = format!("{MINIMAL}{second}");
        assert!(matches!(
            read_trace(text.as_bytes()),
            Err(TraceError::NonMonotonicTimestamps { line: 4, .. })
        ));
    }

    #[test]
    fn observation_outside_tolerance_is_rejected() {
        let bad = MINIMAL.replace(
            "{\"t\":0.0,\"kind\":\"wifi\"",
            "{\"t\":0.9,\"kind\":\"wifi\"",
        );
        assert!(read_trace(bad.as_bytes()).is_err());
    }

    #[test]
    fn constellation_aliases_are_accepted() {
        let text = format!(
            "{}{}\n",
            MINIMAL,
            r#"{"t":0.0,"kind":"gnss","sat":"E01","const":"GAL","pr_m":2.2e7,"sat_x":1.5e7,"sat_y":0,"sat_z":2.1e7}"#
        );
        let frames = read_trace(text.as_bytes()).unwrap();
        let g = frames[0]
            .observations_for(Infrastructure::Gnss)
            .next()
            .unwrap();
        assert_eq!(g.constellation, Some(Constellation::Galileo));
    }
}
