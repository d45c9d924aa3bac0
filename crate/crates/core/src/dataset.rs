//! Newline-delimited JSON artifacts.
//!
//! Every file starts with a header line (format, version, config hash, kind)
//! followed by one record per line. Floats are written with 17 significant
//! digits and parsed with correct rounding, so write→read is bit-exact.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::dynamics::ControllerId;
use crate::policy::{Dataset, Inference, StepRecord, Variant};
use crate::scenario::{AttackRecord, MissionLog, MissionStep};
use crate::{Error, Result};

pub const FORMAT: &str = "swarm-imitation";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// What the records are: `mission`, `attacks`, `dataset-gt`, ...
    pub kind: String,
}

impl Header {
    pub fn new(kind: &str, config_hash: &str) -> Self {
        Self {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: config_hash.into(),
            kind: kind.into(),
        }
    }
}

/// `{:.16e}` floats: 17 significant digits.
struct Sig17;

impl Formatter for Sig17 {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{value:.8e}")
    }
}

pub fn to_line<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, Sig17);
    value
        .serialize(&mut ser)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("serde_json writes UTF-8"))
}

pub fn from_line<T: DeserializeOwned>(line: &str) -> Result<T> {
    serde_json::from_str(line).map_err(|e| Error::Format(e.to_string()))
}

pub fn write_records<'a, T: Serialize + 'a>(
    path: &Path,
    header: &Header,
    records: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io_err = |e| Error::io(path, e);
    writeln!(w, "{}", to_line(header)?).map_err(io_err)?;
    for r in records {
        writeln!(w, "{}", to_line(r)?).map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

pub fn read_records<T: DeserializeOwned>(path: &Path) -> Result<(Header, Vec<T>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let located = |n: usize, e: Error| Error::Format(format!("{}:{n}: {e}", path.display()));
    let first = lines
        .next()
        .ok_or_else(|| located(1, Error::Format("missing header".into())))?
        .map_err(|e| Error::io(path, e))?;
    let header: Header = from_line(&first).map_err(|e| located(1, e))?;
    if header.format != FORMAT || header.version != VERSION {
        return Err(located(
            1,
            Error::Format(format!("unsupported format {} v{}", header.format, header.version)),
        ));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        records.push(from_line(&line).map_err(|e| located(i + 2, e))?);
    }
    Ok((header, records))
}

/// One training/inference row. Optional fields depend on the variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub episode_id: usize,
    pub k: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_true: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_est: Option<Vec<f64>>,
    pub e_true: Vec<f64>,
    pub e_meas: Vec<f64>,
}

pub fn gt_records(log: &MissionLog) -> Vec<DatasetRecord> {
    log.steps
        .iter()
        .map(|s| DatasetRecord {
            episode_id: s.episode,
            k: s.k,
            true_label: Some(s.controller.label()),
            map_label: None,
            mu: None,
            x_true: Some(s.team.clone()),
            x_est: None,
            e_true: s.env.clone(),
            e_meas: s.env_meas.clone(),
        })
        .collect()
}

pub fn imm_records(log: &MissionLog, inferred: &[Inference]) -> Result<Vec<DatasetRecord>> {
    if inferred.len() != log.steps.len() {
        return Err(Error::Dimension(format!(
            "{} filter outputs for {} steps",
            inferred.len(),
            log.steps.len()
        )));
    }
    Ok(log
        .steps
        .iter()
        .zip(inferred)
        .map(|(s, inf)| DatasetRecord {
            episode_id: s.episode,
            k: s.k,
            true_label: Some(s.controller.label()),
            map_label: Some(inf.label.label()),
            mu: Some(inf.mu.clone()),
            x_true: Some(s.team.clone()),
            x_est: Some(inf.estimate.clone()),
            e_true: s.env.clone(),
            e_meas: s.env_meas.clone(),
        })
        .collect())
}

fn label(value: Option<u8>, what: &str, k: u64) -> Result<ControllerId> {
    let v = value.ok_or_else(|| Error::Format(format!("record k={k} lacks {what}")))?;
    ControllerId::from_label(v).ok_or_else(|| Error::Format(format!("record k={k}: bad {what} {v}")))
}

/// Groups records into episodes. Episode ids must be non-decreasing and
/// start at 0.
pub fn to_dataset(records: &[DatasetRecord], variant: Variant) -> Result<Dataset> {
    let mut episodes: Vec<Vec<StepRecord>> = Vec::new();
    for r in records {
        if r.episode_id + 1 < episodes.len() || r.episode_id > episodes.len() {
            return Err(Error::Format(format!(
                "record k={} has episode {} out of order",
                r.k, r.episode_id
            )));
        }
        if r.episode_id == episodes.len() {
            episodes.push(Vec::new());
        }
        let (label, state) = match variant {
            Variant::Gt => (label(r.true_label, "true_label", r.k)?, r.x_true.as_ref()),
            Variant::Imm => (label(r.map_label, "map_label", r.k)?, r.x_est.as_ref()),
        };
        let state = state.ok_or_else(|| Error::Format(format!("record k={} lacks a robot state", r.k)))?;
        episodes[r.episode_id].push(StepRecord {
            episode_id: r.episode_id,
            step_index: r.k,
            label,
            robot_state: state.clone(),
            env_meas: r.e_meas.clone(),
        });
    }
    Ok(Dataset { episodes })
}

pub const MISSION_FILE: &str = "mission.jsonl";
pub const ATTACKS_FILE: &str = "attacks.jsonl";

pub fn write_mission(dir: &Path, log: &MissionLog, config_hash: &str) -> Result<()> {
    write_records(&dir.join(MISSION_FILE), &Header::new("mission", config_hash), &log.steps)?;
    write_records(&dir.join(ATTACKS_FILE), &Header::new("attacks", config_hash), &log.attacks)
}

/// Reads a mission back; returns it with the header of the step file.
pub fn read_mission(dir: &Path, dt: f64) -> Result<(Header, MissionLog)> {
    let (header, steps): (Header, Vec<MissionStep>) = read_records(&dir.join(MISSION_FILE))?;
    let (attack_header, attacks): (Header, Vec<AttackRecord>) = read_records(&dir.join(ATTACKS_FILE))?;
    if header.kind != "mission" || attack_header.kind != "attacks" {
        return Err(Error::Format("mission files have unexpected kinds".into()));
    }
    if attack_header.config_hash != header.config_hash {
        return Err(Error::Format("mission and attack files come from different configs".into()));
    }
    let mut episode_starts = Vec::new();
    for (i, s) in steps.iter().enumerate() {
        if s.episode == episode_starts.len() {
            episode_starts.push(i);
        } else if s.episode + 1 != episode_starts.len() {
            return Err(Error::Format(format!("step k={} has episode {} out of order", s.k, s.episode)));
        }
    }
    if episode_starts.len() != attacks.len() {
        return Err(Error::Format(format!(
            "{} episodes but {} attacks",
            episode_starts.len(),
            attacks.len()
        )));
    }
    Ok((
        header,
        MissionLog {
            dt,
            steps,
            attacks,
            episode_starts,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_record(rng: &mut ChaCha8Rng) -> DatasetRecord {
        let mut v = |n: usize| -> Vec<f64> {
            (0..n)
                .map(|_| {
                    let mag = 10f64.powi(rng.random_range(-12..4));
                    rng.random_range(-1.0..1.0) * mag
                })
                .collect()
        };
        DatasetRecord {
            episode_id: 3,
            k: 99,
            true_label: Some(2),
            map_label: Some(5),
            mu: Some(v(5)),
            x_true: Some(v(10)),
            x_est: Some(v(10)),
            e_true: v(6),
            e_meas: v(6),
        }
    }

    #[test]
    fn seventeen_digit_floats() {
        assert_eq!(to_line(&0.1f64).unwrap(), "1.0000000000000001e-1");
        assert_eq!(from_line::<f64>("1.0000000000000001e-1").unwrap(), 0.1);
        let tiny = f64::MIN_POSITIVE * 3.0;
        assert_eq!(from_line::<f64>(&to_line(&tiny).unwrap()).unwrap(), tiny);
    }

    #[test]
    fn records_round_trip_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..2000 {
            let r = random_record(&mut rng);
            let back: DatasetRecord = from_line(&to_line(&r).unwrap()).unwrap();
            assert_eq!(back, r);
        }
    }

    #[test]
    fn optional_fields_are_omitted() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut r = random_record(&mut rng);
        r.map_label = None;
        r.mu = None;
        r.x_est = None;
        let line = to_line(&r).unwrap();
        assert!(!line.contains("map_label") && !line.contains("mu"));
        assert_eq!(from_line::<DatasetRecord>(&line).unwrap(), r);
    }

    #[test]
    fn file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records: Vec<DatasetRecord> = (0..50).map(|_| random_record(&mut rng)).collect();
        let header = Header::new("dataset-imm", "00ff");
        write_records(&path, &header, &records).unwrap();
        let (h, back): (Header, Vec<DatasetRecord>) = read_records(&path).unwrap();
        assert_eq!((h, back), (header, records));

        std::fs::write(&path, "{\"format\":\"swarm-imitation\",\"version\":1,\"config_hash\":\"x\",\"kind\":\"k\"}\n{oops}\n").unwrap();
        let err = read_records::<DatasetRecord>(&path).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains(":2:")), "{err}");
        assert_eq!(err.exit_code(), 3);
        let missing = read_records::<DatasetRecord>(&dir.path().join("none.jsonl")).unwrap_err();
        assert!(matches!(missing, Error::Io { .. }));
    }

    #[test]
    fn grouping_requires_ordered_episodes() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut a = random_record(&mut rng);
        a.episode_id = 0;
        let mut b = a.clone();
        b.episode_id = 1;
        let ds = to_dataset(&[a.clone(), a.clone(), b.clone()], Variant::Imm).unwrap();
        assert_eq!(ds.episodes.len(), 2);
        assert_eq!(ds.episodes[0][0].label, ControllerId::StarFormation);
        assert_eq!(to_dataset(&[a.clone()], Variant::Gt).unwrap().episodes[0][0].label, ControllerId::LeaderFollower);
        assert!(to_dataset(&[b.clone(), a.clone()], Variant::Gt).is_err());
        let mut no_est = a;
        no_est.x_est = None;
        assert!(to_dataset(&[no_est], Variant::Imm).is_err());
    }
}
