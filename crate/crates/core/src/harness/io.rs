//! On-disk dataset layout: PPM frames, raw little-endian arrays with JSON
//! sidecars, `cameras.json` and `tracks.f32`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{FrameData, GroundTruth, SceneDataset, Tracks};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::dynmask::ObjectMaskFrame;
use crate::error::{Error, Result};
use crate::geometry::{CameraFrame, CameraIntrinsics, Se3};
use crate::grid::{Grid, Mask};

#[derive(Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    channels: usize,
    dtype: String,
}

#[derive(Serialize, Deserialize)]
struct CameraRecord {
    intrinsics: CameraIntrinsics,
    /// Row-major 4×4 world-to-camera matrix.
    w2c: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct TracksHeader {
    n: usize,
    t: usize,
}

#[derive(Serialize, Deserialize)]
struct Labels {
    dynamic_ids: Vec<u16>,
    track_ids: Vec<u16>,
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::json(path, e))?;
    write(path, s.as_bytes())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read(path)?).map_err(|e| Error::json(path, e))
}

fn frame_name(t: usize, ext: &str) -> String {
    format!("{t:05}.{ext}")
}

fn dtype_size(dtype: &str) -> Option<usize> {
    match dtype {
        "f32" => Some(4),
        "u16" => Some(2),
        "u8" => Some(1),
        _ => None,
    }
}

fn write_raw(path: &Path, width: usize, height: usize, channels: usize, dtype: &str, bytes: &[u8]) -> Result<()> {
    write(path, bytes)?;
    write_json(&path.with_extension("json"), &Sidecar { width, height, channels, dtype: dtype.into() })
}

/// Reads a raw array and checks it against its sidecar and the expected
/// shape. Returns the payload bytes.
fn read_raw(path: &Path, width: usize, height: usize, channels: usize, dtype: &str) -> Result<Vec<u8>> {
    let side: Sidecar = read_json(&path.with_extension("json"))?;
    let mismatch = |detail: String| Error::ShapeMismatch { path: path.to_path_buf(), detail };
    let size = dtype_size(&side.dtype).ok_or_else(|| mismatch(format!("unknown dtype {}", side.dtype)))?;
    let bytes = read(path)?;
    if bytes.len() != side.width * side.height * side.channels * size {
        return Err(mismatch(format!(
            "{} bytes on disk, sidecar says {}x{}x{} {}",
            bytes.len(),
            side.width,
            side.height,
            side.channels,
            side.dtype
        )));
    }
    if side.width != width || side.height != height || side.channels != channels || side.dtype != dtype {
        return Err(mismatch(format!(
            "got {}x{}x{} {}, expected {width}x{height}x{channels} {dtype}",
            side.width, side.height, side.channels, side.dtype
        )));
    }
    Ok(bytes)
}

fn f32_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect()
}

fn f32_values(bytes: &[u8]) -> Vec<f64> {
    bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect()
}

fn write_grid(path: &Path, g: &Grid) -> Result<()> {
    write_raw(path, g.width, g.height, g.channels, "f32", &f32_bytes(&g.data))
}

fn read_grid(path: &Path, width: usize, height: usize, channels: usize) -> Result<Grid> {
    let data = f32_values(&read_raw(path, width, height, channels, "f32")?);
    Ok(Grid { width, height, channels, data })
}

fn write_mask(path: &Path, m: &Mask) -> Result<()> {
    let bytes: Vec<u8> = m.data.iter().map(|&b| b as u8).collect();
    write_raw(path, m.width, m.height, 1, "u8", &bytes)
}

fn read_mask(path: &Path, width: usize, height: usize) -> Result<Mask> {
    let bytes = read_raw(path, width, height, 1, "u8")?;
    Ok(Mask { width, height, data: bytes.iter().map(|&b| b != 0).collect() })
}

/// 8-bit binary PPM. Values are clamped to [0,1] and rounded.
pub fn write_ppm(path: &Path, image: &Grid) -> Result<()> {
    let mut bytes = format!("P6\n{} {}\n255\n", image.width, image.height).into_bytes();
    bytes.extend(image.data.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    write(path, &bytes)
}

pub fn read_ppm(path: &Path) -> Result<Grid> {
    let bytes = read(path)?;
    let bad = || Error::BadMagic(path.to_path_buf());
    if !bytes.starts_with(b"P6") {
        return Err(bad());
    }
    // header: magic, width, height, maxval, separated by whitespace and comments
    let mut fields = Vec::new();
    let mut i = 2;
    while fields.len() < 3 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if start == i {
            return Err(bad());
        }
        let s = std::str::from_utf8(&bytes[start..i]).map_err(|_| bad())?;
        fields.push(s.parse::<usize>().map_err(|_| bad())?);
    }
    i += 1;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Invalid(format!("{}: only 8-bit PPM is supported", path.display())));
    }
    let pixels = bytes.get(i..).unwrap_or(&[]);
    if pixels.len() != w * h * 3 {
        return Err(Error::ShapeMismatch {
            path: path.to_path_buf(),
            detail: format!("{} pixel bytes for {w}x{h}", pixels.len()),
        });
    }
    Ok(Grid { width: w, height: h, channels: 3, data: pixels.iter().map(|&b| b as f64 / 255.0).collect() })
}

pub fn save_dataset(ds: &SceneDataset, dir: &Path) -> Result<()> {
    ds.validate()?;
    let sub = |name: &str| -> Result<PathBuf> {
        let p = dir.join(name);
        mkdir(&p)?;
        Ok(p)
    };
    let frames = sub("frames")?;
    let depth = sub("depth")?;
    let fwd = sub("flow_fwd")?;
    let bwd = sub("flow_bwd")?;
    let objects = sub("objects")?;
    let has_uncert = ds.frames.iter().any(|f| f.uncertainty.is_some());
    let has_masks = ds.frames.iter().any(|f| f.dyn_mask.is_some());
    for (t, f) in ds.frames.iter().enumerate() {
        write_ppm(&frames.join(frame_name(t, "ppm")), &f.image)?;
        write_grid(&depth.join(frame_name(t, "f32")), &f.depth)?;
        write_grid(&fwd.join(frame_name(t, "f32")), &f.flow_fwd)?;
        write_grid(&bwd.join(frame_name(t, "f32")), &f.flow_bwd)?;
        let ids: Vec<u8> = f.objects.ids.iter().flat_map(|v| v.to_le_bytes()).collect();
        write_raw(&objects.join(frame_name(t, "u16")), ds.width, ds.height, 1, "u16", &ids)?;
        if has_uncert {
            let u = f.uncertainty.clone().unwrap_or_else(|| Grid::zeros(ds.width, ds.height, 1));
            write_grid(&sub("uncert")?.join(frame_name(t, "f32")), &u)?;
        }
        if has_masks {
            let m = f.dyn_mask.clone().unwrap_or_else(|| Mask::new(ds.width, ds.height, false));
            write_mask(&sub("masks")?.join(frame_name(t, "u8")), &m)?;
        }
    }
    let cams: Vec<CameraRecord> = ds
        .frames
        .iter()
        .map(|f| CameraRecord { intrinsics: f.camera.intrinsics, w2c: f.camera.w2c.to_row_major().to_vec() })
        .collect();
    write_json(&dir.join("cameras.json"), &cams)?;
    write(&dir.join("tracks.f32"), &f32_bytes(&ds.tracks.data))?;
    write_json(&dir.join("tracks.json"), &TracksHeader { n: ds.tracks.n, t: ds.tracks.t })?;
    if let Some(truth) = &ds.truth {
        let gt = sub("gt")?;
        write_json(
            &gt.join("labels.json"),
            &Labels { dynamic_ids: truth.dynamic_ids.clone(), track_ids: truth.track_ids.clone() },
        )?;
        let sff = sub("gt/scene_flow_fwd")?;
        let sfb = sub("gt/scene_flow_bwd")?;
        let vf = sub("gt/valid_fwd")?;
        let vb = sub("gt/valid_bwd")?;
        for t in 0..ds.num_frames() {
            write_grid(&sff.join(frame_name(t, "f32")), &truth.scene_flow_fwd[t])?;
            write_grid(&sfb.join(frame_name(t, "f32")), &truth.scene_flow_bwd[t])?;
            write_mask(&vf.join(frame_name(t, "u8")), &truth.flow_valid_fwd[t])?;
            write_mask(&vb.join(frame_name(t, "u8")), &truth.flow_valid_bwd[t])?;
        }
        if let Some(set) = &truth.set {
            save_checkpoint(set, &gt.join("set.rigs"))?;
        }
    }
    Ok(())
}

fn channel_dir(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if p.is_dir() {
        Ok(p)
    } else {
        Err(Error::MissingChannel(name.into()))
    }
}

fn count_frames(frames: &Path) -> usize {
    (0..).take_while(|&t| frames.join(frame_name(t, "ppm")).is_file()).count()
}

pub fn load_dataset(dir: &Path) -> Result<SceneDataset> {
    let frames_dir = channel_dir(dir, "frames")?;
    let depth = channel_dir(dir, "depth")?;
    let fwd = channel_dir(dir, "flow_fwd")?;
    let bwd = channel_dir(dir, "flow_bwd")?;
    let objects = channel_dir(dir, "objects")?;
    let uncert = dir.join("uncert");
    let masks = dir.join("masks");
    let n_frames = count_frames(&frames_dir);
    if n_frames == 0 {
        return Err(Error::MissingChannel("frames".into()));
    }
    let cams_path = dir.join("cameras.json");
    if !cams_path.is_file() {
        return Err(Error::MissingChannel("cameras".into()));
    }
    let cams: Vec<CameraRecord> = read_json(&cams_path)?;
    if cams.len() != n_frames {
        return Err(Error::ShapeMismatch {
            path: cams_path,
            detail: format!("{} cameras for {n_frames} frames", cams.len()),
        });
    }
    let first = read_ppm(&frames_dir.join(frame_name(0, "ppm")))?;
    let (w, h) = (first.width, first.height);
    let mut out = Vec::with_capacity(n_frames);
    for (t, rec) in cams.iter().enumerate() {
        let image_path = frames_dir.join(frame_name(t, "ppm"));
        let image = read_ppm(&image_path)?;
        if image.width != w || image.height != h {
            return Err(Error::ShapeMismatch { path: image_path, detail: "frame size differs from frame 0".into() });
        }
        let m: [f64; 16] = rec.w2c.as_slice().try_into().map_err(|_| Error::ShapeMismatch {
            path: dir.join("cameras.json"),
            detail: format!("camera {t} w2c has {} entries", rec.w2c.len()),
        })?;
        let camera = CameraFrame::new(rec.intrinsics, Se3::from_row_major(&m));
        let ids_bytes = read_raw(&objects.join(frame_name(t, "u16")), w, h, 1, "u16")?;
        let ids = ids_bytes.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();
        let uncertainty = match uncert.is_dir() {
            true => Some(read_grid(&uncert.join(frame_name(t, "f32")), w, h, 1)?),
            false => None,
        };
        let dyn_mask = match masks.is_dir() {
            true => Some(read_mask(&masks.join(frame_name(t, "u8")), w, h)?),
            false => None,
        };
        out.push(FrameData {
            image,
            camera,
            depth: read_grid(&depth.join(frame_name(t, "f32")), w, h, 1)?,
            flow_fwd: read_grid(&fwd.join(frame_name(t, "f32")), w, h, 2)?,
            flow_bwd: read_grid(&bwd.join(frame_name(t, "f32")), w, h, 2)?,
            uncertainty,
            objects: ObjectMaskFrame { width: w, height: h, ids },
            dyn_mask,
        });
    }
    let tracks_path = dir.join("tracks.f32");
    let tracks = if tracks_path.is_file() {
        let hdr: TracksHeader = read_json(&dir.join("tracks.json"))?;
        let bytes = read(&tracks_path)?;
        if bytes.len() != hdr.n * hdr.t * 3 * 4 || hdr.t != n_frames {
            return Err(Error::ShapeMismatch {
                path: tracks_path,
                detail: format!("{} bytes for n={} t={} ({n_frames} frames)", bytes.len(), hdr.n, hdr.t),
            });
        }
        Tracks { n: hdr.n, t: hdr.t, data: f32_values(&bytes) }
    } else {
        Tracks::empty(n_frames)
    };
    let gt = dir.join("gt");
    let truth = if gt.is_dir() {
        let labels: Labels = read_json(&gt.join("labels.json"))?;
        let mut truth = GroundTruth {
            dynamic_ids: labels.dynamic_ids,
            track_ids: labels.track_ids,
            scene_flow_fwd: Vec::new(),
            scene_flow_bwd: Vec::new(),
            flow_valid_fwd: Vec::new(),
            flow_valid_bwd: Vec::new(),
            set: None,
        };
        for t in 0..n_frames {
            truth.scene_flow_fwd.push(read_grid(&gt.join("scene_flow_fwd").join(frame_name(t, "f32")), w, h, 3)?);
            truth.scene_flow_bwd.push(read_grid(&gt.join("scene_flow_bwd").join(frame_name(t, "f32")), w, h, 3)?);
            truth.flow_valid_fwd.push(read_mask(&gt.join("valid_fwd").join(frame_name(t, "u8")), w, h)?);
            truth.flow_valid_bwd.push(read_mask(&gt.join("valid_bwd").join(frame_name(t, "u8")), w, h)?);
        }
        let set_path = gt.join("set.rigs");
        if set_path.is_file() {
            truth.set = Some(load_checkpoint(&set_path)?);
        }
        Some(truth)
    } else {
        None
    };
    let ds = SceneDataset { width: w, height: h, frames: out, tracks, truth };
    ds.validate()?;
    Ok(ds)
}

/// Writes per-frame dynamic masks as `dir/masks/%05d.u8`, the layout
/// [`load_dataset`] picks up.
pub fn save_masks(masks: &[Mask], dir: &Path) -> Result<()> {
    let out = dir.join("masks");
    mkdir(&out)?;
    for (t, m) in masks.iter().enumerate() {
        write_mask(&out.join(frame_name(t, "u8")), m)?;
    }
    Ok(())
}

/// One camera in the `cameras.json` record format.
pub fn read_camera(path: &Path) -> Result<CameraFrame> {
    let rec: CameraRecord = read_json(path)?;
    let m: [f64; 16] = rec.w2c.as_slice().try_into().map_err(|_| Error::ShapeMismatch {
        path: path.to_path_buf(),
        detail: format!("w2c has {} entries", rec.w2c.len()),
    })?;
    let cam = CameraFrame::new(rec.intrinsics, Se3::from_row_major(&m));
    cam.intrinsics.validate()?;
    Ok(cam)
}
