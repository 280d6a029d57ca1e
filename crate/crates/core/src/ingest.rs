//! File formats: EuRoC-style IMU and ground-truth CSVs, a line-delimited
//! JSON feature-track file, and JSONL result records.
//!
//! Floating-point values are written in shortest round-trip form, so every
//! writer/loader pair reproduces its input bit for bit.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Quaternion, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::{FeatureTrack, ImageBounds, Intrinsics, Pixel};
use crate::imu::{ImuError, ImuSample, ImuWindow};
use crate::lie::{Rotation, Vec3};
use crate::synth::Scenario;

/// Largest timestamp distance accepted by [`GroundTruth::nearest`].
pub const MAX_GT_GAP_NS: i64 = 10_000_000;

pub const TRACKS_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("line {line}: timestamp does not increase")]
    NonMonotonicTime { line: u64 },
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("line {line}: {msg}")]
    Schema { line: u64, msg: String },
    #[error("no ground-truth entry within {max_gap_ns} ns of t = {t_ns} ns")]
    NoNearbyTimestamp { t_ns: i64, max_gap_ns: i64 },
    #[error(transparent)]
    Imu(#[from] ImuError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn open(path: &Path) -> Result<File, IngestError> {
    File::open(path).map_err(io_err(path))
}

fn create(path: &Path) -> Result<BufWriter<File>, IngestError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Numeric CSV rows with their 1-based line numbers. `#` lines are comments;
/// a non-numeric first row is taken as a header and skipped.
fn numeric_rows<R: Read>(reader: R, columns: usize) -> Result<Vec<(u64, Vec<String>)>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let fields: Vec<String> = rec.iter().map(str::to_string).collect();
        if i == 0 && fields.first().is_some_and(|f| f.parse::<i64>().is_err()) && line == 1 {
            continue;
        }
        if fields.len() != columns {
            return Err(IngestError::Parse {
                line,
                msg: format!("expected {columns} columns, found {}", fields.len()),
            });
        }
        rows.push((line, fields));
    }
    Ok(rows)
}

fn parse_ns(line: u64, s: &str) -> Result<i64, IngestError> {
    s.parse().map_err(|_| IngestError::Parse {
        line,
        msg: format!("invalid timestamp '{s}'"),
    })
}

fn parse_floats(line: u64, fields: &[String]) -> Result<Vec<f64>, IngestError> {
    fields
        .iter()
        .map(|s| {
            s.parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .ok_or_else(|| IngestError::Parse {
                    line,
                    msg: format!("invalid number '{s}'"),
                })
        })
        .collect()
}

fn seconds_since(ns: i64, origin: i64) -> f64 {
    (ns - origin) as f64 * 1e-9
}

/// Parses `timestamp_ns,wx,wy,wz,ax,ay,az` rows.
pub fn parse_imu_csv<R: Read>(reader: R) -> Result<ImuWindow, IngestError> {
    let rows = numeric_rows(reader, 7)?;
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let mut stamps = Vec::with_capacity(rows.len());
    let mut readings = Vec::with_capacity(rows.len());
    for (line, fields) in &rows {
        let ns = parse_ns(*line, &fields[0])?;
        if stamps.last().is_some_and(|&prev| ns <= prev) {
            return Err(IngestError::NonMonotonicTime { line: *line });
        }
        let v = parse_floats(*line, &fields[1..])?;
        stamps.push(ns);
        readings.push((Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5])));
    }
    let origin = stamps[0];
    let dt_ns = if stamps.len() < 2 {
        // A single sample has no gap; any positive period keeps it usable.
        1
    } else {
        let mut gaps: Vec<i64> = stamps.windows(2).map(|w| w[1] - w[0]).collect();
        gaps.sort_unstable();
        gaps[(gaps.len() - 1) / 2]
    };
    let samples = stamps
        .iter()
        .zip(readings)
        .map(|(&ns, (g, a))| ImuSample::new(seconds_since(ns, origin), g, a))
        .collect();
    Ok(ImuWindow::with_origin(samples, dt_ns as f64 * 1e-9, origin)?)
}

pub fn load_imu_csv(path: &Path) -> Result<ImuWindow, IngestError> {
    parse_imu_csv(open(path)?)
}

pub fn write_imu_csv(path: &Path, imu: &ImuWindow) -> Result<(), IngestError> {
    let mut w = create(path)?;
    let mut body = String::from(
        "#timestamp [ns],w_RS_S_x [rad s^-1],w_RS_S_y [rad s^-1],w_RS_S_z [rad s^-1],\
         a_RS_S_x [m s^-2],a_RS_S_y [m s^-2],a_RS_S_z [m s^-2]\n",
    );
    for s in imu.samples() {
        let ns = imu.origin_ns() + (s.t * 1e9).round() as i64;
        body.push_str(&format!(
            "{ns},{},{},{},{},{},{}\n",
            s.gyro.x, s.gyro.y, s.gyro.z, s.accel.x, s.accel.y, s.accel.z
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// One ground-truth row: body pose, velocity and biases.
#[derive(Debug, Clone, PartialEq)]
pub struct GtEntry {
    pub t_ns: i64,
    pub position: Vec3,
    /// `(w, x, y, z)` exactly as stored in the file.
    pub quaternion: [f64; 4],
    /// Body-to-world rotation of the normalized quaternion.
    pub rotation: Rotation,
    pub velocity: Vec3,
    pub bg: Vec3,
    pub ba: Vec3,
}

impl GtEntry {
    pub fn new(t_ns: i64, position: Vec3, quaternion: [f64; 4], velocity: Vec3, bg: Vec3, ba: Vec3) -> Option<Self> {
        let [w, x, y, z] = quaternion;
        let q = Quaternion::new(w, x, y, z);
        if !(q.norm() > 0.0) {
            return None;
        }
        let m = UnitQuaternion::new_normalize(q).to_rotation_matrix().into_inner();
        let rotation = Rotation::from_matrix(m).ok()?;
        Some(Self {
            t_ns,
            position,
            quaternion,
            rotation,
            velocity,
            bg,
            ba,
        })
    }
}

/// `(w, x, y, z)` of a rotation.
pub fn quaternion_of(r: &Rotation) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r.matrix()));
    [q.w, q.i, q.j, q.k]
}

/// Ground-truth trajectory sorted by time.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub entries: Vec<GtEntry>,
}

impl GroundTruth {
    /// Entry closest in time to `t_ns`, if within [`MAX_GT_GAP_NS`].
    pub fn nearest(&self, t_ns: i64) -> Result<&GtEntry, IngestError> {
        let idx = self.entries.partition_point(|e| e.t_ns < t_ns);
        let candidates = [idx.checked_sub(1), Some(idx)];
        candidates
            .into_iter()
            .flatten()
            .filter_map(|i| self.entries.get(i))
            .min_by_key(|e| (e.t_ns - t_ns).abs())
            .filter(|e| (e.t_ns - t_ns).abs() <= MAX_GT_GAP_NS)
            .ok_or(IngestError::NoNearbyTimestamp {
                t_ns,
                max_gap_ns: MAX_GT_GAP_NS,
            })
    }
}

/// Parses EuRoC `state_groundtruth_estimate0/data.csv` rows: timestamp,
/// position, quaternion (w, x, y, z), velocity, gyro bias, accel bias.
pub fn parse_groundtruth_csv<R: Read>(reader: R) -> Result<GroundTruth, IngestError> {
    let rows = numeric_rows(reader, 17)?;
    if rows.is_empty() {
        return Err(IngestError::EmptyFile);
    }
    let mut entries: Vec<GtEntry> = Vec::with_capacity(rows.len());
    for (line, fields) in &rows {
        let ns = parse_ns(*line, &fields[0])?;
        if entries.last().is_some_and(|e| ns <= e.t_ns) {
            return Err(IngestError::NonMonotonicTime { line: *line });
        }
        let v = parse_floats(*line, &fields[1..])?;
        let v3 = |i: usize| Vec3::new(v[i], v[i + 1], v[i + 2]);
        let entry = GtEntry::new(ns, v3(0), [v[3], v[4], v[5], v[6]], v3(7), v3(10), v3(13)).ok_or(
            IngestError::Parse {
                line: *line,
                msg: "quaternion has zero norm".to_string(),
            },
        )?;
        entries.push(entry);
    }
    Ok(GroundTruth { entries })
}

pub fn load_groundtruth_csv(path: &Path) -> Result<GroundTruth, IngestError> {
    parse_groundtruth_csv(open(path)?)
}

pub fn write_groundtruth_csv(path: &Path, gt: &GroundTruth) -> Result<(), IngestError> {
    let mut w = create(path)?;
    let mut body = String::from(
        "#timestamp,p_RS_R_x [m],p_RS_R_y [m],p_RS_R_z [m],q_RS_w [],q_RS_x [],q_RS_y [],q_RS_z [],\
         v_RS_R_x [m s^-1],v_RS_R_y [m s^-1],v_RS_R_z [m s^-1],\
         b_w_RS_S_x [rad s^-1],b_w_RS_S_y [rad s^-1],b_w_RS_S_z [rad s^-1],\
         b_a_RS_S_x [m s^-2],b_a_RS_S_y [m s^-2],b_a_RS_S_z [m s^-2]\n",
    );
    for e in &gt.entries {
        let q = e.quaternion;
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            e.t_ns,
            e.position.x,
            e.position.y,
            e.position.z,
            q[0],
            q[1],
            q[2],
            q[3],
            e.velocity.x,
            e.velocity.y,
            e.velocity.z,
            e.bg.x,
            e.bg.y,
            e.bg.z,
            e.ba.x,
            e.ba.y,
            e.ba.z
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackHeader {
    v: u32,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    frame_ts_ns: Vec<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    width: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    height: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TrackRecord {
    id: u64,
    obs: BTreeMap<usize, [f64; 2]>,
}

/// Contents of a track file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackFile {
    pub intrinsics: Intrinsics,
    pub image: Option<ImageBounds>,
    /// Absolute camera timestamps; frame indices in tracks refer to this list.
    pub frame_ns: Vec<i64>,
    pub tracks: Vec<FeatureTrack>,
}

pub fn parse_tracks_json<R: Read>(reader: R) -> Result<TrackFile, IngestError> {
    let reader = BufReader::new(reader);
    let mut header: Option<(Intrinsics, Option<ImageBounds>, Vec<i64>)> = None;
    let mut tracks = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line.map_err(|e| IngestError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let schema = |msg: String| IngestError::Schema { line: line_no, msg };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|e| IngestError::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        match &header {
            None => {
                let h: TrackHeader = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
                if h.v != TRACKS_VERSION {
                    return Err(schema(format!("unsupported version {}", h.v)));
                }
                if h.frame_ts_ns.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(schema("frame timestamps must increase".to_string()));
                }
                let k = Intrinsics::new(h.fx, h.fy, h.cx, h.cy).map_err(|e| schema(e.to_string()))?;
                let image = match (h.width, h.height) {
                    (Some(width), Some(height)) => Some(ImageBounds { width, height }),
                    (None, None) => None,
                    _ => return Err(schema("width and height must be given together".to_string())),
                };
                header = Some((k, image, h.frame_ts_ns));
            }
            Some((_, image, frames)) => {
                let r: TrackRecord = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
                if !ids.insert(r.id) {
                    return Err(schema(format!("duplicate track id {}", r.id)));
                }
                if let Some((&f, _)) = r.obs.iter().find(|(&f, _)| f >= frames.len()) {
                    return Err(schema(format!("track {} refers to unknown frame {f}", r.id)));
                }
                let obs = r.obs.into_iter().map(|(f, [u, v])| (f, Pixel::new(u, v))).collect();
                let track = FeatureTrack::new(r.id, obs);
                track.validate(image.as_ref()).map_err(|e| schema(e.to_string()))?;
                tracks.push(track);
            }
        }
    }
    let (intrinsics, image, frame_ns) = header.ok_or(IngestError::EmptyFile)?;
    Ok(TrackFile {
        intrinsics,
        image,
        frame_ns,
        tracks,
    })
}

pub fn load_tracks_json(path: &Path) -> Result<TrackFile, IngestError> {
    parse_tracks_json(open(path)?)
}

pub fn write_tracks_json(path: &Path, file: &TrackFile) -> Result<(), IngestError> {
    let k = &file.intrinsics;
    let header = TrackHeader {
        v: TRACKS_VERSION,
        fx: k.fx,
        fy: k.fy,
        cx: k.cx,
        cy: k.cy,
        frame_ts_ns: file.frame_ns.clone(),
        width: file.image.map(|b| b.width),
        height: file.image.map(|b| b.height),
    };
    let records: Vec<TrackRecord> = file
        .tracks
        .iter()
        .map(|t| TrackRecord {
            id: t.id,
            obs: t.obs.iter().map(|(&f, z)| (f, [z.x, z.y])).collect(),
        })
        .collect();
    let mut w = create(path)?;
    let json = |e: serde_json::Error| IngestError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    };
    serde_json::to_writer(&mut w, &header).map_err(json)?;
    writeln!(w).map_err(io_err(path))?;
    for r in &records {
        serde_json::to_writer(&mut w, r).map_err(json)?;
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), IngestError> {
    let mut w = create(path)?;
    for r in records {
        serde_json::to_writer(&mut w, r).map_err(|e| IngestError::Io {
            path: path.to_path_buf(),
            source: e.into(),
        })?;
        writeln!(w).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Everything an initialization run consumes.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub imu: ImuWindow,
    pub intrinsics: Intrinsics,
    pub image: Option<ImageBounds>,
    pub frame_ns: Vec<i64>,
    /// Camera timestamps in the IMU time base (seconds since the first
    /// IMU sample).
    pub frame_times: Vec<f64>,
    pub tracks: Vec<FeatureTrack>,
    pub groundtruth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(imu: ImuWindow, tracks: TrackFile, groundtruth: Option<GroundTruth>) -> Self {
        let frame_times = tracks
            .frame_ns
            .iter()
            .map(|&ns| seconds_since(ns, imu.origin_ns()))
            .collect();
        Self {
            imu,
            intrinsics: tracks.intrinsics,
            image: tracks.image,
            frame_ns: tracks.frame_ns,
            frame_times,
            tracks: tracks.tracks,
            groundtruth,
        }
    }

    pub fn load(imu: &Path, tracks: &Path, groundtruth: Option<&Path>) -> Result<Self, IngestError> {
        let gt = groundtruth.map(load_groundtruth_csv).transpose()?;
        Ok(Self::new(load_imu_csv(imu)?, load_tracks_json(tracks)?, gt))
    }

    /// In-memory equivalent of exporting `sc` and loading the files back.
    pub fn from_scenario(sc: &Scenario) -> Self {
        let cfg = &sc.config;
        let entries = sc
            .frame_ns
            .iter()
            .zip(&sc.true_states)
            .map(|(&ns, st)| {
                GtEntry::new(
                    ns,
                    st.position,
                    quaternion_of(&st.rotation),
                    st.velocity,
                    cfg.true_bg,
                    cfg.true_ba,
                )
                .expect("rotation quaternions have unit norm")
            })
            .collect();
        let tracks = TrackFile {
            intrinsics: cfg.intrinsics,
            image: Some(cfg.image),
            frame_ns: sc.frame_ns.clone(),
            tracks: sc.tracks.clone(),
        };
        Self::new(sc.imu.clone(), tracks, Some(GroundTruth { entries }))
    }

    pub fn track_file(&self) -> TrackFile {
        TrackFile {
            intrinsics: self.intrinsics,
            image: self.image,
            frame_ns: self.frame_ns.clone(),
            tracks: self.tracks.clone(),
        }
    }

    /// Writes `imu.csv`, `tracks.jsonl` and, when present, `groundtruth.csv`
    /// into `dir`.
    pub fn export(&self, dir: &Path) -> Result<ExportPaths, IngestError> {
        let paths = ExportPaths {
            imu: dir.join("imu.csv"),
            tracks: dir.join("tracks.jsonl"),
            groundtruth: dir.join("groundtruth.csv"),
        };
        write_imu_csv(&paths.imu, &self.imu)?;
        write_tracks_json(&paths.tracks, &self.track_file())?;
        if let Some(gt) = &self.groundtruth {
            write_groundtruth_csv(&paths.groundtruth, gt)?;
        }
        Ok(paths)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExportPaths {
    pub imu: PathBuf,
    pub tracks: PathBuf,
    pub groundtruth: PathBuf,
}
