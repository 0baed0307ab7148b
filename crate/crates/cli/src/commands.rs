//! Subcommand handlers: thin orchestration over the library, plus the file
//! and summary plumbing each command shares.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use trajeval_core::diagnostics::{
    compare_sources, comparison_roughness_csv, comparison_series_csv, report_roughness_csv,
    report_series_csv, smoothness,
};
use trajeval_core::geom::Pose3;
use trajeval_core::ingest::{
    calibrate_scale, parse_estimator_tracks, parse_kitti_tracking_labels, parse_pose_file,
    read_state_csv_file, scene_to_tracks, to_world_track, write_state_csv_file,
};
use trajeval_core::metrics::{
    aggregate, aggregate_csv, instance_scores_csv, rpe, rpe_csv, score_batch, SequenceScores,
};
use trajeval_core::predictors::{
    predict_constant_velocity, predict_unicycle, run_external_predictor, write_prediction_csv_file,
    PredictedTrajectory, UnicycleControls,
};
use trajeval_core::smoothing::{ekf_smooth, EkfConfig};
use trajeval_core::synth::{corrupt, generate, MotionProfile, NoiseSpec};
use trajeval_core::windowing::{
    consecutive_pairs, instance_count, make_instances, read_instance_csv_file,
    write_instance_csv_file,
};
use trajeval_core::{
    Error, PredictionInstance, Result, SourceTag, Track, WindowSpec,
};

use crate::manifest::Manifest;
use crate::{
    parse_source_tag, DiagnoseArgs, EvaluateArgs, IngestArgs, PredictArgs, PredictorArg,
    RunContext, SmoothArgs, SynthArgs, WindowArgs,
};

// ---------------------------------------------------------------------------
// Shared plumbing
// ---------------------------------------------------------------------------

fn write_text(path: &Path, content: &str) -> Result<()> {
    std::fs::write(path, content).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// Pair inputs with labels: explicit labels must match the input count and
/// be unique; otherwise file stems are used (and must not collide).
fn label_inputs(inputs: &[PathBuf], labels: &[String]) -> Result<Vec<(String, PathBuf)>> {
    let resolved: Vec<String> = if labels.is_empty() {
        inputs.iter().map(|p| file_stem(p)).collect()
    } else if labels.len() == inputs.len() {
        labels.to_vec()
    } else {
        return Err(Error::Config(format!(
            "{} labels given for {} inputs",
            labels.len(),
            inputs.len()
        )));
    };
    let mut seen = BTreeSet::new();
    for label in &resolved {
        if !seen.insert(label.clone()) {
            return Err(Error::Config(format!(
                "duplicate sequence label '{label}'; disambiguate with --label"
            )));
        }
    }
    Ok(resolved.into_iter().zip(inputs.iter().cloned()).collect())
}

fn eligibility_error(scope: &str, spec: &WindowSpec) -> Error {
    Error::Data(format!(
        "no eligible objects in {scope}: an object is eligible only where it spans at least \
         min_history + 1 + horizon = {} consecutive frames (min_history={}, horizon={})",
        spec.min_segment_len(),
        spec.min_history,
        spec.horizon
    ))
}

fn all_instances(tracks: &[Track], spec: &WindowSpec) -> Vec<PredictionInstance> {
    let mut instances = Vec::new();
    for track in tracks {
        instances.extend(make_instances(track, spec));
    }
    instances
}

/// Owned form of the `--controls` flag.
enum ResolvedControls {
    Fitted,
    Constant { accel: f64, turn_rate: f64 },
}

impl ResolvedControls {
    fn parse(raw: Option<&str>) -> Result<Self> {
        let raw = match raw {
            None => return Ok(ResolvedControls::Fitted),
            Some(r) => r.trim(),
        };
        if raw == "fitted" {
            return Ok(ResolvedControls::Fitted);
        }
        let (mut accel, mut turn_rate) = (0.0, 0.0);
        for part in raw.split(',') {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value in --controls, got '{part}'")))?;
            let value: f64 = value.trim().parse().map_err(|_| {
                Error::Config(format!("bad number '{}' for '{}' in --controls", value.trim(), key.trim()))
            })?;
            match key.trim() {
                "accel" => accel = value,
                "turn_rate" => turn_rate = value,
                other => {
                    return Err(Error::Config(format!(
                        "unknown --controls key '{other}' (expected accel, turn_rate)"
                    )))
                }
            }
        }
        Ok(ResolvedControls::Constant { accel, turn_rate })
    }

    fn as_controls(&self) -> UnicycleControls<'static> {
        match *self {
            ResolvedControls::Fitted => UnicycleControls::FittedConstant,
            ResolvedControls::Constant { accel, turn_rate } => {
                UnicycleControls::Constant { accel, turn_rate }
            }
        }
    }

    fn describe(&self) -> String {
        match self {
            ResolvedControls::Fitted => "fitted".into(),
            ResolvedControls::Constant { accel, turn_rate } => {
                format!("accel={accel},turn_rate={turn_rate}")
            }
        }
    }
}

/// Run the selected predictor over a batch of instances.
fn run_predictor(
    ctx: &RunContext,
    instances: &[PredictionInstance],
    predictor: PredictorArg,
    controls: &ResolvedControls,
    command: Option<&str>,
    external_workdir: &Path,
) -> Result<Vec<PredictedTrajectory>> {
    match predictor {
        PredictorArg::Cv => Ok(instances
            .iter()
            .map(|inst| predict_constant_velocity(inst, ctx.clock))
            .collect()),
        PredictorArg::Unicycle => instances
            .iter()
            .map(|inst| predict_unicycle(inst, controls.as_controls(), &ctx.limits, ctx.clock))
            .collect(),
        PredictorArg::External => {
            let command = command.ok_or_else(|| {
                Error::Config("--command is required with --predictor external".into())
            })?;
            std::fs::create_dir_all(external_workdir).map_err(|e| Error::Io {
                path: external_workdir.display().to_string(),
                source: e,
            })?;
            run_external_predictor(instances, command, external_workdir, "external")
        }
    }
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

pub(crate) fn ingest(ctx: &RunContext, mut manifest: Manifest, args: IngestArgs) -> Result<()> {
    manifest.put("command", "ingest");
    manifest.put("format", format!("{:?}", args.format).to_lowercase());
    manifest.put("input", args.input.display());
    manifest.put_opt("motion", args.motion.as_ref().map(|p| p.display()));
    manifest.put_opt("camera_poses", args.camera_poses.as_ref().map(|p| p.display()));
    manifest.put("convention", format!("{:?}", args.convention).to_lowercase());
    manifest.put("heading", format!("{:?}", args.heading).to_lowercase());
    manifest.put_list("types", args.types.clone().unwrap_or_default());
    manifest.put("source_tag", &args.source_tag);
    manifest.put_opt("scale_reference", args.scale_reference.as_ref().map(|p| p.display()));
    manifest.write(&ctx.out)?;

    let tracks = match args.format {
        crate::IngestFormat::KittiGt => {
            let by_id = parse_kitti_tracking_labels(&args.input, args.types.as_deref())?;
            let camera_poses: BTreeMap<i64, Pose3> = match &args.camera_poses {
                Some(path) => {
                    let mut all = parse_pose_file(path)?;
                    all.remove(&0).ok_or_else(|| {
                        Error::Data(format!(
                            "camera pose file '{}' has no camera rows (object_id 0)",
                            path.display()
                        ))
                    })?
                }
                None => by_id
                    .values()
                    .flatten()
                    .map(|r| (r.frame, Pose3::identity()))
                    .collect(),
            };
            let mut tracks = Vec::new();
            for records in by_id.values() {
                tracks.push(to_world_track(
                    records,
                    &camera_poses,
                    args.convention.into(),
                    ctx.clock,
                    args.heading.into(),
                )?);
            }
            tracks
        }
        crate::IngestFormat::Estimator => {
            let parsed = parse_estimator_tracks(&args.input, args.motion.as_deref(), ctx.clock)?;
            for w in &parsed.warnings {
                eprintln!("warning: {w}");
            }
            let mut tracks =
                scene_to_tracks(&parsed.scene, args.convention.into(), args.heading.into())?;
            if let Some(reference) = &args.scale_reference {
                let ref_tracks = read_state_csv_file(reference, SourceTag::Gt)?;
                let speeds_by_id: BTreeMap<i64, Vec<f64>> = ref_tracks
                    .iter()
                    .map(|t| (t.object_id, t.states().map(|s| s.speed).collect()))
                    .collect();
                for track in &mut tracks {
                    if let Some(speeds) = speeds_by_id.get(&track.object_id) {
                        let (scaled, factor) = calibrate_scale(track, speeds)?;
                        println!("object {}: scale factor {factor:.6}", track.object_id);
                        *track = scaled;
                    }
                }
            }
            tracks
        }
        crate::IngestFormat::Canonical => {
            read_state_csv_file(&args.input, parse_source_tag(&args.source_tag)?)?
        }
    };

    if tracks.is_empty() {
        return Err(Error::Data(format!(
            "no objects survived ingestion from '{}'",
            args.input.display()
        )));
    }
    let out_path = ctx.out.join("states.csv");
    write_state_csv_file(&tracks, &out_path)?;

    let total_segments: usize = tracks.iter().map(|t| t.segments().len()).sum();
    let total_states: usize = tracks.iter().map(|t| t.n_states()).sum();
    println!(
        "ingested {} object(s), {total_segments} segment(s), {total_states} state(s)",
        tracks.len()
    );
    for track in &tracks {
        let first = track.segments().first().unwrap().start_frame();
        let last = track.segments().last().unwrap().end_frame();
        println!(
            "object {}: {} segment(s), {} state(s), frames {first}..{last}",
            track.object_id,
            track.segments().len(),
            track.n_states()
        );
    }
    println!("wrote {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// smooth
// ---------------------------------------------------------------------------

pub(crate) fn smooth(ctx: &RunContext, mut manifest: Manifest, args: SmoothArgs) -> Result<()> {
    let cfg = match &args.filter_config {
        Some(path) => EkfConfig::from_key_values(&read_text(path)?)?,
        None => EkfConfig::default(),
    };
    manifest.put("command", "smooth");
    manifest.put("input", args.input.display());
    manifest.put_opt("filter_config", args.filter_config.as_ref().map(|p| p.display()));
    manifest.put("source_tag", &args.source_tag);
    manifest.put("ekf_accel_std", cfg.accel_std);
    manifest.put("ekf_turn_rate_std", cfg.turn_rate_std);
    manifest.put("ekf_pos_std", cfg.pos_std);
    match cfg.heading_std {
        Some(v) => manifest.put("ekf_heading_std", v),
        None => manifest.put("ekf_heading_std", "off"),
    }
    manifest.put("ekf_init_pos_var", cfg.init_pos_var);
    manifest.put("ekf_init_heading_var", cfg.init_heading_var);
    manifest.put("ekf_init_speed_var", cfg.init_speed_var);
    manifest.write(&ctx.out)?;

    let tracks = read_state_csv_file(&args.input, parse_source_tag(&args.source_tag)?)?;
    let smoothed: Vec<Track> = tracks
        .iter()
        .map(|t| ekf_smooth(t, ctx.clock, &cfg))
        .collect::<Result<_>>()?;
    let out_path = ctx.out.join("smoothed.csv");
    write_state_csv_file(&smoothed, &out_path)?;
    println!(
        "smoothed {} object(s), {} state(s)",
        smoothed.len(),
        smoothed.iter().map(|t| t.n_states()).sum::<usize>()
    );
    println!("wrote {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// diagnose
// ---------------------------------------------------------------------------

pub(crate) fn diagnose(ctx: &RunContext, mut manifest: Manifest, args: DiagnoseArgs) -> Result<()> {
    let labeled_paths = label_inputs(&args.input, &args.label)?;
    manifest.put("command", "diagnose");
    manifest.put_list("input", args.input.iter().map(|p| p.display().to_string()));
    manifest.put_list("labels", labeled_paths.iter().map(|(l, _)| l.clone()));
    manifest.put("source_tag", &args.source_tag);
    manifest.write(&ctx.out)?;

    let tag = parse_source_tag(&args.source_tag)?;
    let mut sources: Vec<(String, Vec<Track>)> = Vec::new();
    for (label, path) in &labeled_paths {
        sources.push((label.clone(), read_state_csv_file(path, tag)?));
    }

    // Per-source tables.
    for (label, tracks) in &sources {
        for track in tracks {
            let reports = smoothness(track);
            let base = format!("{label}_obj{}", track.object_id);
            write_text(
                &ctx.out.join(format!("series_{base}.csv")),
                &report_series_csv(label, &reports),
            )?;
            write_text(
                &ctx.out.join(format!("roughness_{base}.csv")),
                &report_roughness_csv(label, &reports),
            )?;
            for r in &reports {
                println!(
                    "{label} object {} frames {}..: roughness step={} speed={} heading={}",
                    r.object_id,
                    r.start_frame,
                    r.roughness_step_distance.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
                    r.roughness_speed.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
                    r.roughness_heading.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into()),
                );
            }
        }
    }

    // Cross-source comparison, one file pair per object common to all
    // sources, restricted to the common frames.
    if sources.len() >= 2 {
        let by_id: Vec<BTreeMap<i64, &Track>> = sources
            .iter()
            .map(|(_, tracks)| tracks.iter().map(|t| (t.object_id, t)).collect())
            .collect();
        let mut common: BTreeSet<i64> = by_id[0].keys().copied().collect();
        for m in &by_id[1..] {
            common = common.intersection(&m.keys().copied().collect()).copied().collect();
        }
        if common.is_empty() {
            return Err(Error::Data(
                "no object id present in every source; nothing to compare".into(),
            ));
        }
        for id in common {
            let labeled: Vec<(String, &Track)> = sources
                .iter()
                .zip(&by_id)
                .map(|((label, _), m)| (label.clone(), m[&id]))
                .collect();
            let cmp = compare_sources(&labeled)?;
            write_text(
                &ctx.out.join(format!("comparison_series_obj{id}.csv")),
                &comparison_series_csv(&cmp),
            )?;
            write_text(
                &ctx.out.join(format!("comparison_roughness_obj{id}.csv")),
                &comparison_roughness_csv(&cmp),
            )?;
            println!("object {id}: compared {} sources on common frames", sources.len());
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// window
// ---------------------------------------------------------------------------

pub(crate) fn window(ctx: &RunContext, mut manifest: Manifest, args: WindowArgs) -> Result<()> {
    manifest.put("command", "window");
    manifest.put("input", args.input.display());
    manifest.put("source_tag", &args.source_tag);
    manifest.write(&ctx.out)?;

    let tracks = read_state_csv_file(&args.input, parse_source_tag(&args.source_tag)?)?;
    let instances = all_instances(&tracks, &ctx.spec);
    if instances.is_empty() {
        return Err(eligibility_error(
            &format!("'{}'", args.input.display()),
            &ctx.spec,
        ));
    }
    let out_path = ctx.out.join("instances.csv");
    write_instance_csv_file(&instances, &out_path)?;

    let eligible_segments: usize = tracks
        .iter()
        .flat_map(|t| t.segments())
        .filter(|s| instance_count(s.len(), &ctx.spec) > 0)
        .count();
    let total_segments: usize = tracks.iter().map(|t| t.segments().len()).sum();
    println!(
        "windowed {} object(s): {eligible_segments}/{total_segments} eligible segment(s), \
         {} instance(s), {} consistency pair(s)",
        tracks.len(),
        instances.len(),
        consecutive_pairs(&instances).len()
    );
    println!("wrote {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// predict
// ---------------------------------------------------------------------------

pub(crate) fn predict(ctx: &RunContext, mut manifest: Manifest, args: PredictArgs) -> Result<()> {
    let controls = ResolvedControls::parse(args.controls.as_deref())?;
    manifest.put("command", "predict");
    manifest.put("instances", args.instances.display());
    manifest.put("predictor", args.predictor.label());
    manifest.put("controls", controls.describe());
    manifest.put_opt("external_command", args.command.as_deref());
    manifest.write(&ctx.out)?;

    let instances = read_instance_csv_file(&args.instances)?;
    if instances.is_empty() {
        return Err(Error::Data(format!(
            "'{}' contains no prediction instances",
            args.instances.display()
        )));
    }
    let predictions = run_predictor(
        ctx,
        &instances,
        args.predictor,
        &controls,
        args.command.as_deref(),
        &ctx.out.join("external"),
    )?;
    let out_path = ctx.out.join("predictions.csv");
    write_prediction_csv_file(&predictions, &out_path)?;
    println!(
        "predicted {} trajectories with {}",
        predictions.len(),
        args.predictor.label()
    );
    println!("wrote {}", out_path.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate
// ---------------------------------------------------------------------------

/// A sequence evaluated end to end: windows sliced from its own states,
/// predictions scored against truth from that same source.
fn evaluate_sequence(
    ctx: &RunContext,
    label: &str,
    path: &Path,
    tag: SourceTag,
    predictor: PredictorArg,
    controls: &ResolvedControls,
    command: Option<&str>,
) -> Result<SequenceScores> {
    let tracks = read_state_csv_file(path, tag)?;
    let instances = all_instances(&tracks, &ctx.spec);
    if instances.is_empty() {
        return Err(eligibility_error(&format!("sequence '{label}'"), &ctx.spec));
    }
    let predictions = run_predictor(
        ctx,
        &instances,
        predictor,
        controls,
        command,
        &ctx.out.join(format!("external_{label}")),
    )?;
    let scores = score_batch(&instances, &predictions)?;
    Ok(SequenceScores {
        sequence: label.to_string(),
        scores,
    })
}

pub(crate) fn evaluate(ctx: &RunContext, mut manifest: Manifest, args: EvaluateArgs) -> Result<()> {
    let sequences: Vec<(String, PathBuf)> = match &args.sequences_dir {
        Some(dir) => {
            let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
                .map_err(|e| Error::Io {
                    path: dir.display().to_string(),
                    source: e,
                })?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|ext| ext == "csv"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::Data(format!(
                    "no sequence CSV files in '{}'",
                    dir.display()
                )));
            }
            label_inputs(&paths, &[])?
        }
        None => {
            if args.input.is_empty() {
                return Err(Error::Config(
                    "evaluate needs --input (repeatable) or --sequences-dir".into(),
                ));
            }
            label_inputs(&args.input, &args.label)?
        }
    };

    let controls = ResolvedControls::parse(args.controls.as_deref())?;
    manifest.put("command", "evaluate");
    manifest.put_list(
        "sequences",
        sequences.iter().map(|(l, p)| format!("{l}={}", p.display())),
    );
    manifest.put("predictor", args.predictor.label());
    manifest.put("controls", controls.describe());
    manifest.put_opt("external_command", args.command.as_deref());
    manifest.put("source_tag", &args.source_tag);
    manifest.put_opt("rpe_reference", args.rpe_reference.as_ref().map(|p| p.display()));
    manifest.put_opt("rpe_estimate", args.rpe_estimate.as_ref().map(|p| p.display()));
    manifest.put("rpe_delta", args.rpe_delta);
    manifest.write(&ctx.out)?;

    let tag = parse_source_tag(&args.source_tag)?;

    // Sequences are independent: fan out, then assemble reports in input
    // order from a single writer.
    let mut results: Vec<Option<Result<SequenceScores>>> = Vec::new();
    results.resize_with(sequences.len(), || None);
    std::thread::scope(|scope| {
        for (slot, (label, path)) in results.iter_mut().zip(&sequences) {
            let controls = &controls;
            let command = args.command.as_deref();
            let predictor = args.predictor;
            scope.spawn(move || {
                *slot = Some(evaluate_sequence(
                    ctx, label, path, tag, predictor, controls, command,
                ));
            });
        }
    });

    let mut groups = Vec::with_capacity(sequences.len());
    for slot in results {
        groups.push(slot.expect("sequence evaluation did not run")?);
    }
    for g in &groups {
        write_text(
            &ctx.out.join(format!("instance_scores_{}.csv", g.sequence)),
            &instance_scores_csv(&g.scores),
        )?;
    }
    let rows = aggregate(&groups)?;
    write_text(&ctx.out.join("aggregate.csv"), &aggregate_csv(&rows))?;
    for row in &rows {
        println!(
            "{}: instances={} ace_pairs={} mean_ade={:.4} mean_fde={:.4} mean_ace={}",
            row.sequence,
            row.instances,
            row.ace_pairs,
            row.mean_ade,
            row.mean_fde,
            row.mean_ace.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
        );
    }

    if let (Some(ref_path), Some(est_path)) = (&args.rpe_reference, &args.rpe_estimate) {
        let reference = parse_pose_file(ref_path)?;
        let estimate = parse_pose_file(est_path)?;
        let mut scores = Vec::new();
        for (id, ref_chain) in &reference {
            let Some(est_chain) = estimate.get(id) else {
                continue;
            };
            let label = if *id == 0 { "camera".to_string() } else { format!("object{id}") };
            scores.push((label, rpe(ref_chain, est_chain, args.rpe_delta)?));
        }
        if scores.is_empty() {
            return Err(Error::Data(
                "no trajectory id present in both pose files; nothing to compare".into(),
            ));
        }
        write_text(&ctx.out.join("rpe.csv"), &rpe_csv(&scores))?;
        for (label, s) in &scores {
            println!(
                "rpe {label}: delta={} pairs={} t_rmse={:.4} m r_rmse={:.4} deg",
                s.delta, s.n_pairs, s.rpe_t_rmse, s.rpe_r_rmse
            );
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub(crate) fn synth(ctx: &RunContext, mut manifest: Manifest, args: SynthArgs) -> Result<()> {
    let profile = MotionProfile::parse(&read_text(&args.profile)?)?;
    manifest.put("command", "synth");
    manifest.put("profile", args.profile.display());
    manifest.put("sigma_pos", args.sigma_pos);
    manifest.put("sigma_heading", args.sigma_heading);
    // Generation runs at the profile's own clock, not --rate-hz.
    manifest.put("profile_rate_hz", profile.clock.rate_hz());
    manifest.put("profile_object_id", profile.object_id);
    manifest.write(&ctx.out)?;

    let clean = generate(&profile)?;
    let noise = NoiseSpec::new(args.sigma_pos, args.sigma_heading, ctx.seed)?;
    let track = corrupt(&clean, &noise, profile.clock)?;
    let out_path = ctx.out.join("synthetic.csv");
    write_state_csv_file(std::slice::from_ref(&track), &out_path)?;
    println!(
        "generated object {} with {} state(s) at {} Hz (sigma_pos={}, sigma_heading={}, seed={})",
        track.object_id,
        track.n_states(),
        profile.clock.rate_hz(),
        args.sigma_pos,
        args.sigma_heading,
        ctx.seed
    );
    println!("wrote {}", out_path.display());
    Ok(())
}
