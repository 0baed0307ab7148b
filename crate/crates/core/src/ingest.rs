//! Ingestion of KITTI-tracking-style labels and estimator pose/motion files
//! into canonical planar tracks, plus the canonical file formats and the
//! uniform scale calibration.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geom::{
    pitch_rotation, project_to_plane, recover_pose, wrap_angle, AxisConvention, Motion3, Pose3,
};
use crate::track::{AgentState2, FrameClock, SourceTag, Track, TrackSegment};

/// Minimum per-frame step length for differenced headings; below this the
/// previous heading is carried forward to avoid flapping at near-zero speed.
pub const EPS_MOVE: f64 = 0.01;

/// Tolerance for the unit-quaternion check at the parse boundary.
pub const QUAT_NORM_TOL: f64 = 1e-3;

/// Translation tolerance for the motion/pose consistency check.
pub const MOTION_CONSISTENCY_TOL: f64 = 1e-3;

/// One KITTI tracking label row, kept in camera coordinates.
#[derive(Debug, Clone)]
pub struct KittiRecord {
    pub frame: i64,
    pub track_id: i64,
    pub object_type: String,
    pub truncated: f64,
    pub occluded: f64,
    /// Bounding-box center in camera coordinates (x right, y down, z forward).
    pub location: Vector3<f64>,
    /// Rotation about the camera y-axis, radians.
    pub rotation_y: f64,
}

/// Whether planar headings come from the source's own orientation channel or
/// from differencing consecutive positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadingMode {
    Provided,
    Differenced,
}

impl std::str::FromStr for HeadingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "provided" => Ok(HeadingMode::Provided),
            "differenced" => Ok(HeadingMode::Differenced),
            other => Err(Error::Config(format!(
                "unknown heading source '{other}' (expected provided or differenced)"
            ))),
        }
    }
}

/// Estimator output for one scene: camera poses, per-object poses and
/// optional per-object motions, all world-frame.
#[derive(Debug, Clone)]
pub struct SceneBundle {
    pub camera_poses: BTreeMap<i64, Pose3>,
    pub object_poses: BTreeMap<i64, BTreeMap<i64, Pose3>>,
    pub object_motions: BTreeMap<i64, BTreeMap<i64, Motion3>>,
    pub clock: FrameClock,
}

impl SceneBundle {
    /// Validate that every motion at frame k has object poses at k-1 and k.
    pub fn new(
        camera_poses: BTreeMap<i64, Pose3>,
        object_poses: BTreeMap<i64, BTreeMap<i64, Pose3>>,
        object_motions: BTreeMap<i64, BTreeMap<i64, Motion3>>,
        clock: FrameClock,
    ) -> Result<Self> {
        for (id, motions) in &object_motions {
            let poses = object_poses
                .get(id)
                .ok_or_else(|| Error::Data(format!("motions given for object {id} without poses")))?;
            for k in motions.keys() {
                if !poses.contains_key(&(k - 1)) || !poses.contains_key(k) {
                    return Err(Error::Data(format!(
                        "object {id}: motion at frame {k} lacks poses at frames {} and {k}",
                        k - 1
                    )));
                }
            }
        }
        Ok(Self {
            camera_poses,
            object_poses,
            object_motions,
            clock,
        })
    }
}

/// Parse result for estimator files: the scene plus non-fatal findings.
#[derive(Debug, Clone)]
pub struct EstimatorParse {
    pub scene: SceneBundle,
    pub warnings: Vec<String>,
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, content: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(path, e))?;
        }
    }
    std::fs::write(path, content).map_err(|e| Error::io(path, e))
}

/// Fixed-point formatting used by every emitted file; 1e-9 absolute
/// round-trip accuracy at the magnitudes the harness handles.
pub(crate) fn fmt9(v: f64) -> String {
    format!("{v:.9}")
}

fn parse_field<T: std::str::FromStr>(
    token: &str,
    name: &str,
    path: &str,
    line: usize,
) -> Result<T> {
    token.parse::<T>().map_err(|_| Error::Parse {
        path: path.to_string(),
        line,
        message: format!("invalid {name} value '{token}'"),
    })
}

/// Parse a KITTI tracking label file into per-object camera-frame records.
///
/// Rows are whitespace separated with 17 or 18 columns (frame, track id,
/// type, truncated, occluded, alpha, 4 bbox, 3 dimensions, 3 location,
/// rotation_y, optional score). `DontCare` rows and negative track ids are
/// dropped; when `type_whitelist` is given, only listed types are kept.
/// Within one track id, frames must be strictly increasing in file order.
pub fn parse_kitti_tracking_labels(
    path: &Path,
    type_whitelist: Option<&[String]>,
) -> Result<BTreeMap<i64, Vec<KittiRecord>>> {
    let content = read_file(path)?;
    let path_str = path.display().to_string();
    let mut records: BTreeMap<i64, Vec<KittiRecord>> = BTreeMap::new();
    let mut last_frame: BTreeMap<i64, i64> = BTreeMap::new();

    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        if tokens.len() != 17 && tokens.len() != 18 {
            return Err(Error::Parse {
                path: path_str.clone(),
                line,
                message: format!("expected 17 or 18 fields, got {}", tokens.len()),
            });
        }
        let frame: i64 = parse_field(tokens[0], "frame", &path_str, line)?;
        let track_id: i64 = parse_field(tokens[1], "track id", &path_str, line)?;
        let object_type = tokens[2].to_string();
        let truncated: f64 = parse_field(tokens[3], "truncated", &path_str, line)?;
        let occluded: f64 = parse_field(tokens[4], "occluded", &path_str, line)?;
        let _alpha: f64 = parse_field(tokens[5], "alpha", &path_str, line)?;
        for (i, name) in [(6, "bbox"), (7, "bbox"), (8, "bbox"), (9, "bbox")] {
            let _: f64 = parse_field(tokens[i], name, &path_str, line)?;
        }
        for (i, name) in [(10, "dimension"), (11, "dimension"), (12, "dimension")] {
            let _: f64 = parse_field(tokens[i], name, &path_str, line)?;
        }
        let lx: f64 = parse_field(tokens[13], "location", &path_str, line)?;
        let ly: f64 = parse_field(tokens[14], "location", &path_str, line)?;
        let lz: f64 = parse_field(tokens[15], "location", &path_str, line)?;
        let rotation_y: f64 = parse_field(tokens[16], "rotation_y", &path_str, line)?;

        if object_type == "DontCare" || track_id < 0 {
            continue;
        }
        if let Some(whitelist) = type_whitelist {
            if !whitelist.iter().any(|t| t == &object_type) {
                continue;
            }
        }
        if let Some(&prev) = last_frame.get(&track_id) {
            if frame <= prev {
                return Err(Error::Data(format!(
                    "object {track_id}: frame {frame} at {path_str}:{line} does not increase past {prev}"
                )));
            }
        }
        last_frame.insert(track_id, frame);
        records.entry(track_id).or_default().push(KittiRecord {
            frame,
            track_id,
            object_type,
            truncated,
            occluded,
            location: Vector3::new(lx, ly, lz),
            rotation_y,
        });
    }
    Ok(records)
}

fn parse_pose_rows(content: &str, path_str: &str) -> Result<BTreeMap<i64, BTreeMap<i64, Pose3>>> {
    let mut out: BTreeMap<i64, BTreeMap<i64, Pose3>> = BTreeMap::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let tokens: Vec<&str> = trimmed.split_whitespace().collect();
        if tokens.len() != 9 {
            return Err(Error::Parse {
                path: path_str.to_string(),
                line,
                message: format!("expected 9 fields (frame id tx ty tz qx qy qz qw), got {}", tokens.len()),
            });
        }
        let frame: i64 = parse_field(tokens[0], "frame", path_str, line)?;
        let object_id: i64 = parse_field(tokens[1], "object id", path_str, line)?;
        let mut vals = [0.0f64; 7];
        for (i, v) in vals.iter_mut().enumerate() {
            *v = parse_field(tokens[2 + i], "pose component", path_str, line)?;
        }
        let [tx, ty, tz, qx, qy, qz, qw] = vals;
        let norm = (qx * qx + qy * qy + qz * qz + qw * qw).sqrt();
        if (norm - 1.0).abs() > QUAT_NORM_TOL {
            return Err(Error::Data(format!(
                "non-unit quaternion (norm {norm:.6}) at {path_str}:{line}"
            )));
        }
        let pose = Pose3::from_quaternion(qx, qy, qz, qw, Vector3::new(tx, ty, tz))?;
        if out.entry(object_id).or_default().insert(frame, pose).is_some() {
            return Err(Error::Data(format!(
                "duplicate pose for object {object_id} frame {frame} at {path_str}:{line}"
            )));
        }
    }
    Ok(out)
}

/// Parse a canonical pose file: rows `frame object_id tx ty tz qx qy qz qw`,
/// `#` comments, object id 0 reserved for the camera.
pub fn parse_pose_file(path: &Path) -> Result<BTreeMap<i64, BTreeMap<i64, Pose3>>> {
    let content = read_file(path)?;
    parse_pose_rows(&content, &path.display().to_string())
}

/// Serialize frame-indexed poses per object into the canonical pose format.
///
/// Values use shortest-exact float formatting so poses survive a write/parse
/// cycle losslessly (quaternion components rounded to a fixed number of
/// decimals would bend the rotation by more than the round-trip tolerance).
pub fn write_pose_file(poses: &BTreeMap<i64, BTreeMap<i64, Pose3>>) -> String {
    let mut out = String::from("# frame object_id tx ty tz qx qy qz qw\n");
    for (id, by_frame) in poses {
        for (frame, pose) in by_frame {
            let t = pose.translation();
            let [qx, qy, qz, qw] = pose.to_quaternion();
            out.push_str(&format!(
                "{frame} {id} {} {} {} {qx} {qy} {qz} {qw}\n",
                t.x, t.y, t.z,
            ));
        }
    }
    out
}

/// Parse estimator output into a [`SceneBundle`].
///
/// `pose_path` holds camera (id 0) and object poses; `motion_path`, when
/// given, holds world-centric frame-to-frame motions in the same format.
/// Motions are validated against the pose pairs they claim to connect;
/// translation disagreement beyond [`MOTION_CONSISTENCY_TOL`] is reported in
/// the warning channel rather than failing the parse.
pub fn parse_estimator_tracks(
    pose_path: &Path,
    motion_path: Option<&Path>,
    clock: FrameClock,
) -> Result<EstimatorParse> {
    let mut all_poses = parse_pose_rows(&read_file(pose_path)?, &pose_path.display().to_string())?;
    let camera_poses = all_poses.remove(&0).unwrap_or_default();
    let object_poses = all_poses;

    let mut object_motions: BTreeMap<i64, BTreeMap<i64, Motion3>> = BTreeMap::new();
    if let Some(mpath) = motion_path {
        let rows = parse_pose_rows(&read_file(mpath)?, &mpath.display().to_string())?;
        for (id, by_frame) in rows {
            let motions = by_frame
                .into_iter()
                .map(|(frame, pose)| (frame, Motion3::new(pose)))
                .collect();
            object_motions.insert(id, motions);
        }
    }

    let mut warnings = Vec::new();
    for (id, motions) in &object_motions {
        if let Some(poses) = object_poses.get(id) {
            for (k, motion) in motions {
                if let (Some(prev), Some(curr)) = (poses.get(&(k - 1)), poses.get(k)) {
                    let recovered = recover_pose(motion, prev);
                    let dev = (recovered.translation() - curr.translation()).norm();
                    if dev > MOTION_CONSISTENCY_TOL {
                        warnings.push(format!(
                            "object {id} frame {k}: motion-recovered pose deviates from stored pose by {dev:.6} m"
                        ));
                    }
                }
            }
        }
    }

    let scene = SceneBundle::new(camera_poses, object_poses, object_motions, clock)?;
    Ok(EstimatorParse { scene, warnings })
}

/// Fill speed and heading channels for a contiguous run of planar positions.
///
/// Speeds come from central finite differences (one-sided at the ends).
/// Headings come from `provided_heading` when given; otherwise from the
/// direction of each forward displacement, carrying the previous heading
/// across steps shorter than [`EPS_MOVE`]. A track that never moves gets
/// heading 0 throughout.
pub fn derive_kinematics(
    start_frame: i64,
    positions: &[[f64; 2]],
    clock: FrameClock,
    provided_heading: Option<&[f64]>,
) -> Vec<AgentState2> {
    let n = positions.len();
    assert!(n >= 1, "derive_kinematics needs at least one position");
    if let Some(h) = provided_heading {
        assert_eq!(h.len(), n, "provided heading series length must match positions");
    }
    let dt = clock.dt();

    let dist = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let mut speeds = vec![0.0; n];
    if n >= 2 {
        speeds[0] = dist(positions[0], positions[1]) / dt;
        speeds[n - 1] = dist(positions[n - 2], positions[n - 1]) / dt;
        for i in 1..n - 1 {
            speeds[i] = dist(positions[i - 1], positions[i + 1]) / (2.0 * dt);
        }
    }

    let headings: Vec<f64> = match provided_heading {
        Some(h) => h.iter().map(|&v| wrap_angle(v)).collect(),
        None => differenced_headings(positions),
    };

    (0..n)
        .map(|i| {
            AgentState2::new(
                start_frame + i as i64,
                positions[i][0],
                positions[i][1],
                headings[i],
                speeds[i],
            )
        })
        .collect()
}

fn differenced_headings(positions: &[[f64; 2]]) -> Vec<f64> {
    let n = positions.len();
    let mut raw: Vec<Option<f64>> = vec![None; n];
    for i in 0..n.saturating_sub(1) {
        let dx = positions[i + 1][0] - positions[i][0];
        let dy = positions[i + 1][1] - positions[i][1];
        if (dx * dx + dy * dy).sqrt() >= EPS_MOVE {
            raw[i] = Some(f64::atan2(dy, dx));
        }
    }
    let first_valid = raw.iter().flatten().next().copied();
    let mut headings = vec![0.0; n];
    let mut last = first_valid.unwrap_or(0.0);
    for i in 0..n {
        if let Some(h) = raw[i] {
            last = h;
        }
        headings[i] = last;
    }
    headings
}

/// Transform camera-frame label records of one object into a world-frame
/// planar track.
///
/// Each record's pose (rotation_y about camera y, bounding-box-center
/// location) is composed with that frame's camera pose and projected under
/// `convention`. With [`HeadingMode::Provided`] the heading channel is the
/// projected label yaw; otherwise it is differenced from positions.
pub fn to_world_track(
    records: &[KittiRecord],
    camera_poses: &BTreeMap<i64, Pose3>,
    convention: AxisConvention,
    clock: FrameClock,
    heading_mode: HeadingMode,
) -> Result<Track> {
    if records.is_empty() {
        return Err(Error::Data("no records for object".into()));
    }
    let object_id = records[0].track_id;
    let missing: Vec<i64> = records
        .iter()
        .map(|r| r.frame)
        .filter(|f| !camera_poses.contains_key(f))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Data(format!(
            "object {object_id}: no camera pose for frames {missing:?}"
        )));
    }

    let mut segments = Vec::new();
    let mut group: Vec<(i64, [f64; 2], f64)> = Vec::new();
    let flush = |group: &mut Vec<(i64, [f64; 2], f64)>, segments: &mut Vec<TrackSegment>| -> Result<()> {
        if group.is_empty() {
            return Ok(());
        }
        let start_frame = group[0].0;
        let positions: Vec<[f64; 2]> = group.iter().map(|g| g.1).collect();
        let headings: Vec<f64> = group.iter().map(|g| g.2).collect();
        let provided = match heading_mode {
            HeadingMode::Provided => Some(headings.as_slice()),
            HeadingMode::Differenced => None,
        };
        let states = derive_kinematics(start_frame, &positions, clock, provided);
        segments.push(TrackSegment::new(states)?);
        group.clear();
        Ok(())
    };

    for r in records {
        let cam = &camera_poses[&r.frame];
        let obj_cam = Pose3::new(pitch_rotation(r.rotation_y), r.location)?;
        let world = cam.compose(&obj_cam);
        let p2 = project_to_plane(&world, convention);
        if let Some(&(last_frame, _, _)) = group.last() {
            if r.frame != last_frame + 1 {
                flush(&mut group, &mut segments)?;
            }
        }
        group.push((r.frame, [p2.x, p2.y], p2.heading));
    }
    flush(&mut group, &mut segments)?;
    Track::from_segments(object_id, SourceTag::Gt, segments)
}

/// Project every object trajectory of an estimator scene into planar tracks.
pub fn scene_to_tracks(
    scene: &SceneBundle,
    convention: AxisConvention,
    heading_mode: HeadingMode,
) -> Result<Vec<Track>> {
    let mut tracks = Vec::new();
    for (&object_id, poses) in &scene.object_poses {
        let mut segments = Vec::new();
        let mut group: Vec<(i64, [f64; 2], f64)> = Vec::new();
        for (&frame, pose) in poses {
            let p2 = project_to_plane(pose, convention);
            if let Some(&(last_frame, _, _)) = group.last() {
                if frame != last_frame + 1 {
                    push_segment(&mut group, &mut segments, scene.clock, heading_mode)?;
                }
            }
            group.push((frame, [p2.x, p2.y], p2.heading));
        }
        push_segment(&mut group, &mut segments, scene.clock, heading_mode)?;
        tracks.push(Track::from_segments(object_id, SourceTag::Estimated, segments)?);
    }
    Ok(tracks)
}

fn push_segment(
    group: &mut Vec<(i64, [f64; 2], f64)>,
    segments: &mut Vec<TrackSegment>,
    clock: FrameClock,
    heading_mode: HeadingMode,
) -> Result<()> {
    if group.is_empty() {
        return Ok(());
    }
    let start_frame = group[0].0;
    let positions: Vec<[f64; 2]> = group.iter().map(|g| g.1).collect();
    let headings: Vec<f64> = group.iter().map(|g| g.2).collect();
    let provided = match heading_mode {
        HeadingMode::Provided => Some(headings.as_slice()),
        HeadingMode::Differenced => None,
    };
    let states = derive_kinematics(start_frame, &positions, clock, provided);
    segments.push(TrackSegment::new(states)?);
    group.clear();
    Ok(())
}

/// Uniformly rescale positions and speeds so the track's mean speed matches
/// the reference profile's mean. Headings are unchanged.
pub fn calibrate_scale(track: &Track, reference_speeds: &[f64]) -> Result<(Track, f64)> {
    if track.n_states() < 2 {
        return Err(Error::Data("scale calibration needs at least two states".into()));
    }
    if reference_speeds.is_empty() {
        return Err(Error::Data("empty reference speed profile".into()));
    }
    let ref_mean = reference_speeds.iter().sum::<f64>() / reference_speeds.len() as f64;
    if !(ref_mean > 0.0) {
        return Err(Error::Data(format!(
            "reference speed profile mean must be positive, got {ref_mean}"
        )));
    }
    let track_mean = track.states().map(|s| s.speed).sum::<f64>() / track.n_states() as f64;
    if track_mean <= 0.0 {
        return Err(Error::Data(
            "track mean speed is zero; cannot calibrate scale".into(),
        ));
    }
    let scale = ref_mean / track_mean;
    let scaled = track.map_states(track.source_tag, |s| {
        AgentState2::new(s.frame, s.x * scale, s.y * scale, s.heading, s.speed * scale)
    });
    Ok((scaled, scale))
}

/// Canonical 2D state file header.
pub const STATE_CSV_HEADER: &str = "frame,object_id,x,y,heading,speed";

/// Serialize tracks into the canonical 2D state CSV.
pub fn write_state_csv(tracks: &[Track]) -> String {
    let mut ordered: Vec<&Track> = tracks.iter().collect();
    ordered.sort_by_key(|t| t.object_id);
    let mut out = String::from(STATE_CSV_HEADER);
    out.push('\n');
    for track in ordered {
        for s in track.states() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.frame,
                track.object_id,
                fmt9(s.x),
                fmt9(s.y),
                fmt9(s.heading),
                fmt9(s.speed),
            ));
        }
    }
    out
}

pub fn write_state_csv_file(tracks: &[Track], path: &Path) -> Result<()> {
    write_file(path, &write_state_csv(tracks))
}

/// Parse the canonical 2D state CSV into per-object tracks tagged `tag`.
pub fn parse_state_csv(content: &str, tag: SourceTag, origin: &str) -> Result<Vec<Track>> {
    let mut lines = content.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == STATE_CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 1,
                message: format!("expected header '{STATE_CSV_HEADER}'"),
            })
        }
    }
    let mut by_object: BTreeMap<i64, Vec<AgentState2>> = BTreeMap::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let tokens: Vec<&str> = raw.split(',').collect();
        if tokens.len() != 6 {
            return Err(Error::Parse {
                path: origin.to_string(),
                line,
                message: format!("expected 6 columns, got {}", tokens.len()),
            });
        }
        let frame: i64 = parse_field(tokens[0], "frame", origin, line)?;
        let object_id: i64 = parse_field(tokens[1], "object id", origin, line)?;
        let x: f64 = parse_field(tokens[2], "x", origin, line)?;
        let y: f64 = parse_field(tokens[3], "y", origin, line)?;
        let heading: f64 = parse_field(tokens[4], "heading", origin, line)?;
        let speed: f64 = parse_field(tokens[5], "speed", origin, line)?;
        by_object
            .entry(object_id)
            .or_default()
            .push(AgentState2::new(frame, x, y, heading, speed));
    }
    let mut tracks = Vec::new();
    for (object_id, mut states) in by_object {
        states.sort_by_key(|s| s.frame);
        tracks.push(Track::from_states(object_id, tag, states)?);
    }
    Ok(tracks)
}

pub fn read_state_csv_file(path: &Path, tag: SourceTag) -> Result<Vec<Track>> {
    parse_state_csv(&read_file(path)?, tag, &path.display().to_string())
}
