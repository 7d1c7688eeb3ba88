//! UV maps on disk. A map stored at `base` is
//! - `base.pfm` (1 or 3 channels) or `base.vism` (visibility over an
//!   environment grid) for the values,
//! - `base.mask.png`, a 1-bit valid mask,
//! - `base.weight.pfm`, the splat weights (sparse maps only).
//!
//! UV row `i` is image row `i`. Winning `(camera, ray)` sources are not
//! stored; maps read back have none.

use std::path::{Path, PathBuf};

use uvrelight_core::geomaps::SparseUVMap;
use uvrelight_core::image::Image;
use uvrelight_core::inpaint::DenseUVMap;

use super::{pfm, png, suffixed, vism};
use crate::{Error, Result};

/// Values, mask and optional weights, the part shared by sparse and dense maps.
struct Parts<'a> {
    height: usize,
    width: usize,
    channels: usize,
    values: &'a [f32],
    valid: &'a [bool],
}

fn write_parts(base: &Path, p: Parts, env: Option<(usize, usize)>) -> Result<Vec<PathBuf>> {
    let values = match env {
        Some((eh, ew)) => {
            if eh * ew != p.channels {
                return Err(Error::Input(format!("{}: {} channels for a {eh}x{ew} grid", base.display(), p.channels)));
            }
            let path = suffixed(base, ".vism");
            let b = vism::VisBlock {
                height: p.height,
                width: p.width,
                env_height: eh,
                env_width: ew,
                values: p.values.to_vec(),
                valid: p.valid.to_vec(),
            };
            vism::write(&path, &b)?;
            path
        }
        None => {
            let path = suffixed(base, ".pfm");
            pfm::write(&path, &Image { width: p.width, height: p.height, channels: p.channels, data: p.values.to_vec() })?;
            path
        }
    };
    let mask = suffixed(base, ".mask.png");
    png::write_mask(&mask, p.width, p.height, p.valid)?;
    Ok(vec![values, mask])
}

/// `(height, width, channels, values, valid, env grid)`.
type Loaded = (usize, usize, usize, Vec<f32>, Vec<bool>, Option<(usize, usize)>);

fn read_parts(base: &Path) -> Result<Loaded> {
    let vpath = suffixed(base, ".vism");
    let mpath = suffixed(base, ".mask.png");
    let (mw, mh, mask) = png::read_mask(&mpath)?;
    if vpath.exists() {
        let b = vism::read(&vpath)?;
        if (mw, mh) != (b.width, b.height) || mask != b.valid {
            return Err(Error::format(&mpath, "mask disagrees with the VISM block"));
        }
        let c = b.channels();
        return Ok((b.height, b.width, c, b.values, b.valid, Some((b.env_height, b.env_width))));
    }
    let ppath = suffixed(base, ".pfm");
    let img = pfm::read(&ppath)?;
    if (mw, mh) != (img.width, img.height) {
        return Err(Error::format(&mpath, format!("{mw}x{mh} mask for a {}x{} map", img.width, img.height)));
    }
    let mut values = img.data;
    for (k, on) in mask.iter().enumerate() {
        if !on {
            values[k * img.channels..(k + 1) * img.channels].iter_mut().for_each(|v| *v = 0.0);
        }
    }
    Ok((img.height, img.width, img.channels, values, mask, None))
}

pub fn write_sparse(base: &Path, m: &SparseUVMap, env: Option<(usize, usize)>) -> Result<Vec<PathBuf>> {
    let p = Parts { height: m.height, width: m.width, channels: m.channels, values: &m.values, valid: &m.valid };
    let mut out = write_parts(base, p, env)?;
    let wpath = suffixed(base, ".weight.pfm");
    pfm::write(&wpath, &Image { width: m.width, height: m.height, channels: 1, data: m.best_weight.clone() })?;
    out.push(wpath);
    Ok(out)
}

pub fn read_sparse(base: &Path) -> Result<(SparseUVMap, Option<(usize, usize)>)> {
    let (h, w, c, values, valid, env) = read_parts(base)?;
    let wpath = suffixed(base, ".weight.pfm");
    let wimg = pfm::read(&wpath)?;
    if (wimg.width, wimg.height, wimg.channels) != (w, h, 1) {
        return Err(Error::format(&wpath, "weight map does not match the values"));
    }
    let mut m = SparseUVMap::new(h, w, c).map_err(crate::error::bad_input(base))?;
    m.values = values;
    m.valid = valid;
    m.best_weight = wimg.data;
    Ok((m, env))
}

pub fn write_dense(base: &Path, m: &DenseUVMap, env: Option<(usize, usize)>) -> Result<Vec<PathBuf>> {
    write_parts(base, Parts { height: m.height, width: m.width, channels: m.channels, values: &m.values, valid: &m.valid }, env)
}

pub fn read_dense(base: &Path) -> Result<(DenseUVMap, Option<(usize, usize)>)> {
    let (height, width, channels, values, valid, env) = read_parts(base)?;
    Ok((DenseUVMap { height, width, channels, values, valid }, env))
}
