//! Event/emission CSV formats, JSON-lines report writing, and session replay.
//!
//! Events: `detector,timestamp_ps` with detectors D1-D5. Emissions:
//! `index,polarization,class`. Both are plain text with a header row, so a
//! recorded session can be replayed through sync recovery and post-processing
//! without re-simulating the optics.

use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::receiver::{DetectionRecord, DetectorId, EventOrigin};
use crate::session::{process_events, ProcessedRound, RoundReport};
use crate::transmitter::{IntensityClass, Polarization, PulseTrain};

pub const EVENTS_HEADER: &str = "detector,timestamp_ps";
pub const EMISSIONS_HEADER: &str = "index,polarization,class";

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::CsvParse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

pub fn write_events_csv(path: &Path, events: &[DetectionRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{EVENTS_HEADER}")?;
    for e in events {
        writeln!(w, "{},{}", e.detector.name(), e.timestamp_ps)?;
    }
    w.flush()?;
    Ok(())
}

/// Read an event log. Replayed records carry nominal origins (sync for D5,
/// signal otherwise); origins never reach protocol logic.
pub fn read_events_csv(path: &Path) -> Result<Vec<DetectionRecord>> {
    let file = std::fs::File::open(path)?;
    let mut events = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if lineno == 1 {
            if line.trim() != EVENTS_HEADER {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected header '{EVENTS_HEADER}', got '{line}'"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(det), Some(ts), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(parse_err(path, lineno, "expected 2 columns"));
        };
        let detector = DetectorId::from_name(det.trim())
            .ok_or_else(|| parse_err(path, lineno, format!("unknown detector '{det}'")))?;
        let timestamp_ps: i64 = ts
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad timestamp '{ts}'")))?;
        events.push(DetectionRecord {
            detector,
            timestamp_ps,
            origin: if detector == DetectorId::D5 {
                EventOrigin::Sync
            } else {
                EventOrigin::Signal
            },
        });
    }
    Ok(events)
}

pub fn write_emissions_csv(path: &Path, train: &PulseTrain) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{EMISSIONS_HEADER}")?;
    for rec in train.iter() {
        writeln!(
            w,
            "{},{},{}",
            rec.index,
            rec.polarization.name(),
            rec.class.name()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Rebuild a pulse train from an emission log. Rows must be the contiguous
/// sequence 0..n.
pub fn read_emissions_csv(path: &Path, cfg: &ExperimentConfig) -> Result<PulseTrain> {
    let file = std::fs::File::open(path)?;
    let mut codes: Vec<u8> = Vec::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if lineno == 1 {
            if line.trim() != EMISSIONS_HEADER {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected header '{EMISSIONS_HEADER}', got '{line}'"),
                ));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let mut cols = line.split(',');
        let (Some(idx), Some(pol), Some(class), None) =
            (cols.next(), cols.next(), cols.next(), cols.next())
        else {
            return Err(parse_err(path, lineno, "expected 3 columns"));
        };
        let idx: u64 = idx
            .trim()
            .parse()
            .map_err(|_| parse_err(path, lineno, format!("bad index '{idx}'")))?;
        if idx != codes.len() as u64 {
            return Err(parse_err(
                path,
                lineno,
                format!("expected index {}, got {idx}", codes.len()),
            ));
        }
        let pol: Polarization = pol
            .trim()
            .parse()
            .map_err(|e: Error| parse_err(path, lineno, e.to_string()))?;
        let class: IntensityClass = class
            .trim()
            .parse()
            .map_err(|e: Error| parse_err(path, lineno, e.to_string()))?;
        codes.push(code_of(pol, class));
    }
    Ok(PulseTrain::from_parts(codes, &cfg.source))
}

/// 4-bit word reproducing the given polarization and class under the encoder.
fn code_of(pol: Polarization, class: IntensityClass) -> u8 {
    let hi = match pol {
        Polarization::H => 0b00,
        Polarization::V => 0b01,
        Polarization::D => 0b10,
        Polarization::A => 0b11,
    };
    let lo = match class {
        IntensityClass::Signal => 0b11,
        IntensityClass::Decoy => 0b01,
        IntensityClass::Vacuum => 0b00,
    };
    (hi << 2) | lo
}

/// Replay a recorded session: run sync recovery and post-processing over the
/// imported events, deterministically under `cfg.seed` (round 0).
pub fn analyze_session(
    cfg: &ExperimentConfig,
    events_path: &Path,
    emissions_path: &Path,
) -> Result<ProcessedRound> {
    let train = read_emissions_csv(emissions_path, cfg)?;
    let events = read_events_csv(events_path)?;
    process_events(cfg, 0, &train, &events)
}

pub fn write_reports_jsonl(path: &Path, reports: &[RoundReport]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in reports {
        let line = serde_json::to_string(r).expect("report serializes");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

/// Curve CSV: one row per swept distance.
pub fn write_curve_csv(path: &Path, points: &[crate::decoy::RatePoint]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        w,
        "distance_m,loss_db,q_signal,e_signal,y1_lower,e1_upper,rate_per_pulse,rate_bps"
    )?;
    for p in points {
        writeln!(
            w,
            "{},{},{:e},{:e},{:e},{:e},{:e},{}",
            p.distance_m,
            p.loss_db,
            p.q_signal,
            p.e_signal,
            p.y1_lower,
            p.e1_upper,
            p.rate_per_pulse,
            p.rate_bps
        )?;
    }
    w.flush()?;
    Ok(())
}
