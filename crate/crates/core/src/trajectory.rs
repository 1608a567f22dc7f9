//! Trajectory data model, JSONL dataset I/O, segmentation and the textual
//! projection consumed by language-side evaluators.
//!
//! Time indices in the public API are 1-based (`t = 1..=T`).

use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// Minimum trajectory length; second-order differences need three steps.
pub const MIN_LEN: usize = 3;

/// Default segment length used when comparing trajectory pairs.
pub const DEFAULT_SEGMENT_LEN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnvTag {
    #[default]
    MetaworldLike,
    ManiskillLike,
    DmcLike,
    Custom,
}

impl EnvTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EnvTag::MetaworldLike => "metaworld-like",
            EnvTag::ManiskillLike => "maniskill-like",
            EnvTag::DmcLike => "dmc-like",
            EnvTag::Custom => "custom",
        }
    }
}

impl std::str::FromStr for EnvTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "metaworld-like" => Ok(EnvTag::MetaworldLike),
            "maniskill-like" => Ok(EnvTag::ManiskillLike),
            "dmc-like" => Ok(EnvTag::DmcLike),
            "custom" => Ok(EnvTag::Custom),
            other => Err(Error::InvalidArgument(format!("unknown env tag {other:?}"))),
        }
    }
}

impl fmt::Display for EnvTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A length-`T` sequence of states, actions and optional frame references.
///
/// Immutable once constructed; every edit produces a new value.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    id: String,
    env_tag: EnvTag,
    states: Array2<f64>,
    actions: Array2<f64>,
    frames: Option<Vec<String>>,
}

impl Trajectory {
    pub fn new(
        id: impl Into<String>,
        env_tag: EnvTag,
        states: Array2<f64>,
        actions: Array2<f64>,
        frames: Option<Vec<String>>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |message: String| Error::InvalidTrajectory {
            id: id.clone(),
            message,
        };
        let t = states.nrows();
        if actions.nrows() != t {
            return Err(invalid(format!(
                "states have {t} rows but actions have {}",
                actions.nrows()
            )));
        }
        if t < MIN_LEN {
            return Err(invalid(format!("length {t} is below the minimum {MIN_LEN}")));
        }
        if let Some((idx, _)) = states
            .iter()
            .chain(actions.iter())
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Err(invalid(format!("non-finite entry at flat index {idx}")));
        }
        if let Some(frames) = &frames {
            if frames.len() != t {
                return Err(invalid(format!(
                    "{} frames for {t} steps",
                    frames.len()
                )));
            }
        }
        Ok(Self {
            id,
            env_tag,
            states,
            actions,
            frames,
        })
    }

    /// Builds a trajectory from row vectors.
    pub fn from_rows(
        id: impl Into<String>,
        env_tag: EnvTag,
        states: &[Vec<f64>],
        actions: &[Vec<f64>],
    ) -> Result<Self> {
        let id = id.into();
        let states = rows_to_array(&id, "states", states)?;
        let actions = rows_to_array(&id, "actions", actions)?;
        Self::new(id, env_tag, states, actions, None)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn env_tag(&self) -> EnvTag {
        self.env_tag
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.ncols()
    }

    pub fn combined_dim(&self) -> usize {
        self.state_dim() + self.action_dim()
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }

    pub fn actions(&self) -> ArrayView2<'_, f64> {
        self.actions.view()
    }

    pub fn frames(&self) -> Option<&[String]> {
        self.frames.as_deref()
    }

    /// State row at 1-based step `t`.
    pub fn state(&self, t: usize) -> Result<ArrayView1<'_, f64>> {
        self.check_index(t)?;
        Ok(self.states.row(t - 1))
    }

    pub fn action(&self, t: usize) -> Result<ArrayView1<'_, f64>> {
        self.check_index(t)?;
        Ok(self.actions.row(t - 1))
    }

    /// The combined observation-action vector `[s_t, a_t]` at 1-based step `t`.
    pub fn combined_vector(&self, t: usize) -> Result<Array1<f64>> {
        self.check_index(t)?;
        let mut out = Vec::with_capacity(self.combined_dim());
        out.extend(self.states.row(t - 1).iter().copied());
        out.extend(self.actions.row(t - 1).iter().copied());
        Ok(Array1::from(out))
    }

    /// All combined vectors as a `T × (d_s + d_a)` matrix; row `i` is step `i + 1`.
    pub fn combined(&self) -> Array2<f64> {
        ndarray::concatenate(ndarray::Axis(1), &[self.states.view(), self.actions.view()])
            .expect("row counts validated at construction")
    }

    /// Contiguous slice of `len` steps starting at 1-based `start`.
    pub fn segment(&self, start: usize, len: usize) -> Result<Trajectory> {
        let t = self.len();
        if start == 0 || len == 0 || start + len > t + 1 {
            return Err(Error::InvalidArgument(format!(
                "segment start={start} len={len} out of range for length {t}"
            )));
        }
        let rows = s![start - 1..start - 1 + len, ..];
        let frames = self
            .frames
            .as_ref()
            .map(|f| f[start - 1..start - 1 + len].to_vec());
        Trajectory::new(
            self.id.clone(),
            self.env_tag,
            self.states.slice(rows).to_owned(),
            self.actions.slice(rows).to_owned(),
            frames,
        )
    }

    /// Copy with a new id; used when deriving edited trajectories.
    pub fn with_id(&self, id: impl Into<String>) -> Trajectory {
        Trajectory {
            id: id.into(),
            ..self.clone()
        }
    }

    /// One line per dimension, `<name>: [v1, v2, ...]`, values rounded to
    /// three decimals. State dimensions come first, then action dimensions.
    pub fn textual_projection(&self, dim_names: &[impl AsRef<str>]) -> Result<String> {
        project_rows(self.states.view(), self.actions.view(), dim_names)
    }

    fn check_index(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() {
            return Err(Error::IndexOutOfRange {
                index: t,
                len: self.len(),
            });
        }
        Ok(())
    }
}

/// Textual projection over raw state/action rows. Unlike
/// [`Trajectory::textual_projection`] this places no lower bound on `T`.
pub fn project_rows(
    states: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    dim_names: &[impl AsRef<str>],
) -> Result<String> {
    let width = states.ncols() + actions.ncols();
    if dim_names.len() != width {
        return Err(Error::DimensionMismatch {
            expected: width,
            actual: dim_names.len(),
        });
    }
    let mut out = String::new();
    let columns = states.columns().into_iter().chain(actions.columns());
    for (name, column) in dim_names.iter().zip(columns) {
        out.push_str(name.as_ref());
        out.push_str(": [");
        for (i, v) in column.iter().enumerate() {
            if i > 0 {
                out.push_str(", ");
            }
            write_rounded(&mut out, *v);
        }
        out.push_str("]\n");
    }
    Ok(out)
}

fn write_rounded(out: &mut String, v: f64) {
    let rounded = format!("{v:.3}");
    // -0.000 and 0.000 denote the same rounded value
    if rounded.trim_start_matches('-').chars().all(|c| c == '0' || c == '.') {
        out.push_str("0.000");
    } else {
        let _ = write!(out, "{rounded}");
    }
}

/// An ordered pair of equal-length trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPair {
    pub a: Trajectory,
    pub b: Trajectory,
}

impl TrajectoryPair {
    pub fn new(a: Trajectory, b: Trajectory) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::InvalidArgument(format!(
                "pair lengths differ: {} vs {}",
                a.len(),
                b.len()
            )));
        }
        Ok(Self { a, b })
    }

    pub fn swapped(&self) -> Self {
        Self {
            a: self.b.clone(),
            b: self.a.clone(),
        }
    }
}

/// Preference over a pair: `A` preferred (1), `B` preferred (0), or indecision (-1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PreferenceLabel {
    Indecision,
    BPreferred,
    APreferred,
}

impl PreferenceLabel {
    pub const ALL: [PreferenceLabel; 3] = [
        PreferenceLabel::Indecision,
        PreferenceLabel::BPreferred,
        PreferenceLabel::APreferred,
    ];

    pub fn value(self) -> i8 {
        match self {
            PreferenceLabel::APreferred => 1,
            PreferenceLabel::BPreferred => 0,
            PreferenceLabel::Indecision => -1,
        }
    }

    pub fn from_value(v: i64) -> Result<Self> {
        match v {
            1 => Ok(PreferenceLabel::APreferred),
            0 => Ok(PreferenceLabel::BPreferred),
            -1 => Ok(PreferenceLabel::Indecision),
            other => Err(Error::InvalidArgument(format!(
                "preference label must be -1, 0 or 1, got {other}"
            ))),
        }
    }

    /// Label after swapping the pair order: 1 and 0 exchange, -1 is fixed.
    pub fn swapped(self) -> Self {
        match self {
            PreferenceLabel::APreferred => PreferenceLabel::BPreferred,
            PreferenceLabel::BPreferred => PreferenceLabel::APreferred,
            PreferenceLabel::Indecision => PreferenceLabel::Indecision,
        }
    }

    /// Position of the label in `ALL` (and in soft-score vectors).
    pub fn index(self) -> usize {
        match self {
            PreferenceLabel::Indecision => 0,
            PreferenceLabel::BPreferred => 1,
            PreferenceLabel::APreferred => 2,
        }
    }

    pub fn is_clear(self) -> bool {
        self != PreferenceLabel::Indecision
    }
}

impl fmt::Display for PreferenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value())
    }
}

impl Serialize for PreferenceLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_i8(self.value())
    }
}

impl<'de> Deserialize<'de> for PreferenceLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = i64::deserialize(d)?;
        PreferenceLabel::from_value(v).map_err(serde::de::Error::custom)
    }
}

fn rows_to_array(id: &str, field: &str, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = rows.first().map_or(0, Vec::len);
    let mut flat = Vec::with_capacity(rows.len() * width);
    for (i, row) in rows.iter().enumerate() {
        if row.len() != width {
            return Err(Error::InvalidTrajectory {
                id: id.to_string(),
                message: format!("{field}[{i}] has {} entries, expected {width}", row.len()),
            });
        }
        flat.extend_from_slice(row);
    }
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("shape checked"))
}

/// Reads a trajectory JSONL file. Blank lines are ignored.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<Trajectory>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, i + 1)?);
    }
    Ok(out)
}

/// Parses one JSONL trajectory record; `line` is only used in error reports.
pub fn parse_record(text: &str, line: usize) -> Result<Trajectory> {
    let schema = |id: Option<&str>, field: &str, message: String| Error::Schema {
        line,
        id: id.map(str::to_string),
        field: field.to_string(),
        message,
    };
    let value: Value =
        serde_json::from_str(text).map_err(|e| schema(None, "<record>", e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| schema(None, "<record>", "expected a JSON object".into()))?;
    let id = obj
        .get("id")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(None, "id", "missing or not a string".into()))?;
    let env_tag = obj
        .get("env_tag")
        .and_then(Value::as_str)
        .ok_or_else(|| schema(Some(id), "env_tag", "missing or not a string".into()))?
        .parse::<EnvTag>()
        .map_err(|e| schema(Some(id), "env_tag", e.to_string()))?;
    let states = parse_matrix(obj, "states").map_err(|(f, m)| schema(Some(id), &f, m))?;
    let actions = parse_matrix(obj, "actions").map_err(|(f, m)| schema(Some(id), &f, m))?;
    if states.len() != actions.len() {
        return Err(schema(
            Some(id),
            "actions",
            format!(
                "{} state rows but {} action rows",
                states.len(),
                actions.len()
            ),
        ));
    }
    let frames = match obj.get("frames") {
        None | Some(Value::Null) => None,
        Some(Value::Array(items)) => Some(
            items
                .iter()
                .enumerate()
                .map(|(i, v)| {
                    v.as_str().map(str::to_string).ok_or_else(|| {
                        schema(Some(id), &format!("frames[{i}]"), "not a string".into())
                    })
                })
                .collect::<Result<Vec<_>>>()?,
        ),
        Some(_) => return Err(schema(Some(id), "frames", "not an array".into())),
    };
    let states = rows_to_array(id, "states", &states)
        .map_err(|e| schema(Some(id), "states", e.to_string()))?;
    let actions = rows_to_array(id, "actions", &actions)
        .map_err(|e| schema(Some(id), "actions", e.to_string()))?;
    Trajectory::new(id, env_tag, states, actions, frames)
        .map_err(|e| schema(Some(id), "<record>", e.to_string()))
}

fn parse_matrix(
    obj: &Map<String, Value>,
    field: &str,
) -> std::result::Result<Vec<Vec<f64>>, (String, String)> {
    let rows = obj
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| (field.to_string(), "missing or not an array".to_string()))?;
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let row = row
                .as_array()
                .ok_or_else(|| (format!("{field}[{i}]"), "not an array".to_string()))?;
            row.iter()
                .enumerate()
                .map(|(j, v)| {
                    v.as_f64()
                        .ok_or_else(|| (format!("{field}[{i}][{j}]"), "not a number".to_string()))
                })
                .collect()
        })
        .collect()
}

/// Serializes a trajectory as one JSONL record (no trailing newline).
pub fn to_record(traj: &Trajectory) -> Value {
    let rows = |m: ArrayView2<'_, f64>| -> Vec<Vec<f64>> {
        m.rows().into_iter().map(|r| r.to_vec()).collect()
    };
    let mut record = json!({
        "id": traj.id(),
        "env_tag": traj.env_tag().as_str(),
        "states": rows(traj.states()),
        "actions": rows(traj.actions()),
    });
    if let Some(frames) = traj.frames() {
        record["frames"] = json!(frames);
    }
    record
}

pub fn save_dataset(path: impl AsRef<Path>, trajectories: &[Trajectory]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for traj in trajectories {
        serde_json::to_writer(&mut w, &to_record(traj))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
