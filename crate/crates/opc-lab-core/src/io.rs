//! CSV serialization of experience buffers.
//!
//! Replay buffers flatten to one row per transition with columns
//! `iteration,b,t,s_*,a_*,next_*,reward,terminal`; simulated buffers share
//! that schema and append the provenance columns
//! `branch,source_b,source_t,step` plus a `# generated=` footer. Floats are
//! written with 17 significant digits so a write/read cycle reproduces every
//! value bitwise.

use std::path::Path;

use crate::env::{Trajectory, Transition};
use crate::error::{LabError, LabResult};
use crate::models::ReplayBuffer;
use crate::rollout::{SimBuffer, SimEntry};
use crate::{ActionVec, StateVec};

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn base_header(n_s: usize, n_a: usize) -> Vec<String> {
    let mut header = vec!["iteration".to_string(), "b".to_string(), "t".to_string()];
    header.extend((0..n_s).map(|i| format!("s_{i}")));
    header.extend((0..n_a).map(|i| format!("a_{i}")));
    header.extend((0..n_s).map(|i| format!("next_{i}")));
    header.push("reward".to_string());
    header.push("terminal".to_string());
    header
}

fn transition_fields(tr: &Transition) -> Vec<String> {
    let mut fields = vec![tr.t.to_string()];
    fields.extend(tr.state.iter().map(|v| fmt_f64(*v)));
    fields.extend(tr.action.iter().map(|v| fmt_f64(*v)));
    fields.extend(tr.next_state.iter().map(|v| fmt_f64(*v)));
    fields.push(fmt_f64(tr.reward));
    fields.push(if tr.terminal { "1" } else { "0" }.to_string());
    fields
}

fn check_dims(tr: &Transition, n_s: usize, n_a: usize) -> LabResult<()> {
    if tr.state.len() != n_s || tr.next_state.len() != n_s {
        return Err(LabError::DimensionMismatch {
            context: "buffer csv state",
            expected: n_s,
            actual: if tr.state.len() != n_s {
                tr.state.len()
            } else {
                tr.next_state.len()
            },
        });
    }
    if tr.action.len() != n_a {
        return Err(LabError::DimensionMismatch {
            context: "buffer csv action",
            expected: n_a,
            actual: tr.action.len(),
        });
    }
    Ok(())
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> LabResult<Vec<u8>> {
    writer.into_inner().map_err(|e| LabError::Io(e.into_error()))
}

/// Writes a replay buffer to `path`, one row per transition.
pub fn write_buffer_csv(buffer: &ReplayBuffer, path: &Path) -> LabResult<()> {
    let first = buffer
        .trajectories
        .iter()
        .flat_map(|traj| traj.transitions.first())
        .next()
        .ok_or(LabError::EmptyInput {
            context: "write_buffer_csv",
        })?;
    let n_s = first.state.len();
    let n_a = first.action.len();
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(base_header(n_s, n_a))?;
    for traj in &buffer.trajectories {
        for tr in &traj.transitions {
            check_dims(tr, n_s, n_a)?;
            let mut fields = vec![traj.iteration.to_string(), traj.rollout.to_string()];
            fields.extend(transition_fields(tr));
            writer.write_record(fields)?;
        }
    }
    std::fs::write(path, finish_csv(writer)?)?;
    Ok(())
}

struct SchemaDims {
    n_s: usize,
    n_a: usize,
}

fn parse_header(actual: &csv::StringRecord, provenance: bool) -> LabResult<SchemaDims> {
    let n_s = actual.iter().filter(|h| h.starts_with("s_")).count();
    let n_a = actual.iter().filter(|h| h.starts_with("a_")).count();
    let mut expected = base_header(n_s, n_a);
    if provenance {
        for col in ["branch", "source_b", "source_t", "step"] {
            expected.push(col.to_string());
        }
    }
    if n_s == 0 || actual.iter().ne(expected.iter().map(|s| s.as_str())) {
        return Err(LabError::Parse {
            context: "buffer csv header",
            message: format!("expected columns {expected:?}, found {actual:?}"),
        });
    }
    Ok(SchemaDims { n_s, n_a })
}

fn parse_usize(record: &csv::StringRecord, idx: usize) -> LabResult<usize> {
    record
        .get(idx)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| LabError::Parse {
            context: "buffer csv integer field",
            message: format!("column {idx} of row {record:?}"),
        })
}

fn parse_f64(record: &csv::StringRecord, idx: usize) -> LabResult<f64> {
    record
        .get(idx)
        .and_then(|f| f.parse().ok())
        .ok_or_else(|| LabError::Parse {
            context: "buffer csv float field",
            message: format!("column {idx} of row {record:?}"),
        })
}

fn parse_range(record: &csv::StringRecord, start: usize, n: usize) -> LabResult<Vec<f64>> {
    (start..start + n).map(|i| parse_f64(record, i)).collect()
}

/// Parses the transition columns starting at `offset` (the `t` column).
fn parse_transition(
    record: &csv::StringRecord,
    offset: usize,
    dims: &SchemaDims,
) -> LabResult<Transition> {
    let s_at = offset + 1;
    let a_at = s_at + dims.n_s;
    let next_at = a_at + dims.n_a;
    let reward_at = next_at + dims.n_s;
    let t = parse_usize(record, offset)?;
    let state = StateVec::from_vec(parse_range(record, s_at, dims.n_s)?);
    let action = ActionVec::from_vec(parse_range(record, a_at, dims.n_a)?);
    let next_state = StateVec::from_vec(parse_range(record, next_at, dims.n_s)?);
    let reward = parse_f64(record, reward_at)?;
    let terminal = match record.get(reward_at + 1) {
        Some("0") => false,
        Some("1") => true,
        other => {
            return Err(LabError::Parse {
                context: "buffer csv terminal flag",
                message: format!("expected 0 or 1, found {other:?}"),
            })
        }
    };
    Ok(Transition {
        t,
        state,
        action,
        next_state,
        reward,
        terminal,
    })
}

/// Reads a replay buffer written by [`write_buffer_csv`].
///
/// Rows regroup into trajectories whenever `(iteration, b)` changes or `t`
/// stops increasing, so buffers whose trajectories share ids still
/// round-trip.
pub fn read_buffer_csv(path: &Path) -> LabResult<ReplayBuffer> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_path(path)?;
    let dims = parse_header(reader.headers()?, false)?;
    let mut buffer = ReplayBuffer::default();
    let mut current: Option<Trajectory> = None;
    for record in reader.records() {
        let record = record?;
        let iteration = parse_usize(&record, 0)?;
        let rollout = parse_usize(&record, 1)?;
        let tr = parse_transition(&record, 2, &dims)?;
        let split = match &current {
            None => true,
            Some(traj) => {
                traj.iteration != iteration
                    || traj.rollout != rollout
                    || traj.transitions.last().is_some_and(|prev| prev.t >= tr.t)
            }
        };
        if split {
            if let Some(done) = current.take() {
                buffer.push(done);
            }
            current = Some(Trajectory {
                iteration,
                rollout,
                transitions: Vec::new(),
            });
        }
        current.as_mut().expect("trajectory started").transitions.push(tr);
    }
    if let Some(done) = current {
        buffer.push(done);
    }
    Ok(buffer)
}

/// Writes a simulated buffer to `path`: the replay schema with `iteration`
/// fixed to zero and `b` set to the branch id, plus provenance columns and a
/// `# generated=` footer recording the pre-truncation size.
pub fn write_sim_csv(sim: &SimBuffer, path: &Path) -> LabResult<()> {
    let first = sim.entries.first().ok_or(LabError::EmptyInput {
        context: "write_sim_csv",
    })?;
    let n_s = first.transition.state.len();
    let n_a = first.transition.action.len();
    let mut header = base_header(n_s, n_a);
    for col in ["branch", "source_b", "source_t", "step"] {
        header.push(col.to_string());
    }
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(header)?;
    for entry in &sim.entries {
        check_dims(&entry.transition, n_s, n_a)?;
        let mut fields = vec!["0".to_string(), entry.branch.to_string()];
        fields.extend(transition_fields(&entry.transition));
        fields.push(entry.branch.to_string());
        fields.push(entry.source_b.to_string());
        fields.push(entry.source_t.to_string());
        fields.push(entry.step.to_string());
        writer.write_record(fields)?;
    }
    let mut bytes = finish_csv(writer)?;
    bytes.extend_from_slice(format!("# generated={}\n", sim.generated).as_bytes());
    std::fs::write(path, bytes)?;
    Ok(())
}

/// Reads a simulated buffer written by [`write_sim_csv`].
pub fn read_sim_csv(path: &Path) -> LabResult<SimBuffer> {
    let raw = std::fs::read_to_string(path)?;
    let generated = raw
        .lines()
        .rev()
        .find_map(|line| line.strip_prefix("# generated="))
        .and_then(|v| v.trim().parse::<usize>().ok())
        .ok_or_else(|| LabError::Parse {
            context: "sim csv footer",
            message: "missing '# generated=' footer".into(),
        })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .comment(Some(b'#'))
        .from_reader(raw.as_bytes());
    let dims = parse_header(reader.headers()?, true)?;
    let base = base_header(dims.n_s, dims.n_a).len();
    let mut entries = Vec::new();
    for record in reader.records() {
        let record = record?;
        entries.push(SimEntry {
            branch: parse_usize(&record, base)?,
            source_b: parse_usize(&record, base + 1)?,
            source_t: parse_usize(&record, base + 2)?,
            step: parse_usize(&record, base + 3)?,
            transition: parse_transition(&record, 2, &dims)?,
        });
    }
    Ok(SimBuffer { entries, generated })
}
