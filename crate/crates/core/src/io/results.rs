//! Plain CSV outputs with a header row: localization results, rankings and
//! selected image pairs.

use std::fmt::Write as _;
use std::path::Path;

use csv::{ReaderBuilder, StringRecord, Trim};
use nalgebra::{Quaternion, Vector3};

use super::text::{display_name, fmt_f64};
use super::{check_id, write_text, DataError};
use crate::geometry::{OverlapPair, Pose};
use crate::localization::{FailureKind, LocalizationResult, Outcome};
use crate::retrieval::{RankedItem, Ranking};

pub const RESULTS_HEADER: &str = "query,method,k,outcome,qw,qx,qy,qz,tx,ty,tz,inliers,matches";
pub const RANKINGS_HEADER: &str = "query,rank,image,score";
pub const PAIRS_HEADER: &str = "image_a,image_b,radius";

const SUCCESS: &str = "success";

/// A localization result tagged with the method that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub method: String,
    pub result: LocalizationResult,
}

fn read_csv(path: &Path, header: &str) -> Result<Vec<(usize, StringRecord)>, DataError> {
    let file = display_name(path);
    let text = std::fs::read_to_string(path).map_err(|e| DataError::from_io(path, e))?;
    let mut reader = ReaderBuilder::new().trim(Trim::All).from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| DataError::Parse {
            file: file.clone(),
            line: 1,
            reason: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if found != header {
        return Err(DataError::Parse {
            file,
            line: 1,
            reason: format!("header `{found}`, expected `{header}`"),
        });
    }
    let columns = header.split(',').count();
    reader
        .records()
        .map(|r| {
            let r = r.map_err(|e| DataError::Parse {
                file: file.clone(),
                line: e.position().map_or(0, |p| p.line() as usize),
                reason: e.to_string(),
            })?;
            let line = r.position().map_or(0, |p| p.line() as usize);
            if r.len() != columns {
                return Err(DataError::Parse {
                    file: file.clone(),
                    line,
                    reason: format!("expected {columns} fields, found {}", r.len()),
                });
            }
            Ok((line, r))
        })
        .collect()
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, r: &StringRecord, i: usize) -> Result<T, DataError> {
    r[i].parse().map_err(|_| DataError::Parse {
        file: display_name(path),
        line,
        reason: format!("invalid field {} `{}`", i + 1, &r[i]),
    })
}

/// One row per record, in the given order. Failures leave the pose and
/// count columns empty.
pub fn save_results(path: &Path, records: &[ResultRecord]) -> Result<(), DataError> {
    let mut s = format!("{RESULTS_HEADER}\n");
    for rec in records {
        check_id(&rec.result.query)?;
        check_id(&rec.method)?;
        let r = &rec.result;
        match &r.outcome {
            Outcome::Success { pose, inliers, matches } => {
                let fields: Vec<String> = pose
                    .wxyz()
                    .iter()
                    .chain(pose.position().iter())
                    .map(|x| fmt_f64(*x))
                    .collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{SUCCESS},{},{inliers},{matches}",
                    r.query,
                    rec.method,
                    r.k,
                    fields.join(",")
                );
            }
            Outcome::Failure(kind) => {
                let _ = writeln!(s, "{},{},{},{kind},,,,,,,,,", r.query, rec.method, r.k);
            }
        }
    }
    write_text(path, &s)
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRecord>, DataError> {
    read_csv(path, RESULTS_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            let k: usize = field(path, line, &r, 2)?;
            let outcome = if &r[3] == SUCCESS {
                let mut v = [0.0; 7];
                for (i, slot) in v.iter_mut().enumerate() {
                    *slot = field(path, line, &r, 4 + i)?;
                }
                let pose = Pose::new(Vector3::new(v[4], v[5], v[6]), Quaternion::new(v[0], v[1], v[2], v[3]))
                    .map_err(|e| DataError::Parse {
                        file: display_name(path),
                        line,
                        reason: e.to_string(),
                    })?;
                Outcome::Success {
                    pose,
                    inliers: field(path, line, &r, 11)?,
                    matches: field(path, line, &r, 12)?,
                }
            } else {
                let kind: FailureKind = r[3].parse().map_err(|reason| DataError::Parse {
                    file: display_name(path),
                    line,
                    reason,
                })?;
                if r.iter().skip(4).any(|f| !f.is_empty()) {
                    return Err(DataError::Parse {
                        file: display_name(path),
                        line,
                        reason: "failure row with pose fields".into(),
                    });
                }
                Outcome::Failure(kind)
            };
            Ok(ResultRecord {
                method: r[1].to_string(),
                result: LocalizationResult {
                    query: r[0].to_string(),
                    k,
                    outcome,
                },
            })
        })
        .collect()
}

/// One row per ranked item; ranks start at 1.
pub fn save_rankings(path: &Path, rankings: &[Ranking]) -> Result<(), DataError> {
    let mut s = format!("{RANKINGS_HEADER}\n");
    for r in rankings {
        check_id(&r.query)?;
        for (i, item) in r.items.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", r.query, i + 1, item.id, fmt_f64(item.score));
        }
    }
    write_text(path, &s)
}

/// Rankings grouped by consecutive query rows, in file order.
pub fn load_rankings(path: &Path) -> Result<Vec<Ranking>, DataError> {
    let mut out: Vec<Ranking> = Vec::new();
    for (line, r) in read_csv(path, RANKINGS_HEADER)? {
        let rank: usize = field(path, line, &r, 1)?;
        let item = RankedItem {
            id: r[2].to_string(),
            score: field(path, line, &r, 3)?,
        };
        match out.last_mut() {
            Some(last) if last.query == r[0] => {
                if rank != last.items.len() + 1 {
                    return Err(DataError::Parse {
                        file: display_name(path),
                        line,
                        reason: format!("rank {rank} out of sequence"),
                    });
                }
                last.items.push(item);
            }
            _ => {
                if rank != 1 {
                    return Err(DataError::Parse {
                        file: display_name(path),
                        line,
                        reason: "ranking does not start at rank 1".into(),
                    });
                }
                out.push(Ranking {
                    query: r[0].to_string(),
                    items: vec![item],
                });
            }
        }
    }
    Ok(out)
}

pub fn save_pairs(path: &Path, pairs: &[OverlapPair]) -> Result<(), DataError> {
    let mut s = format!("{PAIRS_HEADER}\n");
    for p in pairs {
        let _ = writeln!(s, "{},{},{}", p.first, p.second, fmt_f64(p.radius));
    }
    write_text(path, &s)
}

pub fn load_pairs(path: &Path) -> Result<Vec<OverlapPair>, DataError> {
    read_csv(path, PAIRS_HEADER)?
        .into_iter()
        .map(|(line, r)| {
            Ok(OverlapPair {
                first: r[0].to_string(),
                second: r[1].to_string(),
                radius: field(path, line, &r, 2)?,
            })
        })
        .collect()
}
