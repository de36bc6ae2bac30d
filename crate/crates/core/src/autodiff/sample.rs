//! Bilinear resampling of a `d x H x W` patch (or a batch of them) under a linear map of its pixel grid.
//!
//! Output pixel `(i, j)` has offset `p = (j - c_col, i - c_row)` from the patch
//! center and reads the input at `g_inv * p`. Reads outside the patch return
//! `fill`. Offsets are in pixels; for a linear map this is the same action as
//! in the unit-square chart coordinates, since a uniform rescale commutes with it.
//! A `2 x 3` transform `[A | t]` adds a pixel translation `t` to the read position.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn check(patch: &Tensor, g_inv: &Tensor) -> Result<(usize, usize, usize)> {
    let shape = patch.shape();
    if shape.len() < 3 {
        return Err(Error::shape(
            "grid_sample",
            format!("patch must be d x H x W or batched, got {shape:?}"),
        ));
    }
    if g_inv.shape() != [2, 2] && g_inv.shape() != [2, 3] {
        return Err(Error::shape(
            "grid_sample",
            format!("planar transform must be 2 x 2 or 2 x 3, got {:?}", g_inv.shape()),
        ));
    }
    if !g_inv.all_finite() {
        return Err(Error::NonFinite("grid_sample transform".into()));
    }
    Ok(dims(patch))
}

/// Leading axes fold into channels; the transform is shared.
fn dims(patch: &Tensor) -> (usize, usize, usize) {
    let s = patch.shape();
    let r = s.len();
    (s[..r - 2].iter().product(), s[r - 2], s[r - 1])
}

/// Linear part and translation of a `2 x 2` or `2 x 3` transform.
fn unpack(g_inv: &Tensor) -> ([f64; 4], [f64; 2]) {
    let g = g_inv.data();
    if g.len() == 4 {
        ([g[0], g[1], g[2], g[3]], [0.0, 0.0])
    } else {
        ([g[0], g[1], g[3], g[4]], [g[2], g[5]])
    }
}

#[inline]
fn source(g: &[f64; 4], t: &[f64; 2], cr: f64, cc: f64, i: usize, j: usize) -> (f64, f64) {
    let x = j as f64 - cc;
    let y = i as f64 - cr;
    let qx = g[0] * x + g[1] * y + t[0];
    let qy = g[2] * x + g[3] * y + t[1];
    (cr + qy, cc + qx)
}

pub(crate) fn grid_sample_forward(patch: &Tensor, g_inv: &Tensor, fill: f64) -> Result<Tensor> {
    let (d, h, w) = check(patch, g_inv)?;
    let (g, t) = unpack(g_inv);
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    let src = patch.data();
    let mut out = vec![0.0; d * h * w];
    let at = |ch: usize, r: isize, c: isize| -> f64 {
        if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
            fill
        } else {
            src[(ch * h + r as usize) * w + c as usize]
        }
    };
    for i in 0..h {
        for j in 0..w {
            let (r, c) = source(&g, &t, cr, cc, i, j);
            let r0 = r.floor();
            let c0 = c.floor();
            let fr = r - r0;
            let fc = c - c0;
            let (r0, c0) = (r0 as isize, c0 as isize);
            let w00 = (1.0 - fr) * (1.0 - fc);
            let w01 = (1.0 - fr) * fc;
            let w10 = fr * (1.0 - fc);
            let w11 = fr * fc;
            for ch in 0..d {
                let mut v = w00 * at(ch, r0, c0);
                if w01 != 0.0 {
                    v += w01 * at(ch, r0, c0 + 1);
                }
                if w10 != 0.0 {
                    v += w10 * at(ch, r0 + 1, c0);
                }
                if w11 != 0.0 {
                    v += w11 * at(ch, r0 + 1, c0 + 1);
                }
                out[(ch * h + i) * w + j] = v;
            }
        }
    }
    Tensor::new(patch.shape().to_vec(), out)
}

/// Returns `(d patch, d g_inv)` for the requested operands.
pub(crate) fn grid_sample_backward(
    patch: &Tensor,
    g_inv: &Tensor,
    fill: f64,
    grad_out: &Tensor,
    want_patch: bool,
    want_g: bool,
) -> (Option<Tensor>, Option<Tensor>) {
    let (d, h, w) = dims(patch);
    let (g, t) = unpack(g_inv);
    let cr = (h as f64 - 1.0) / 2.0;
    let cc = (w as f64 - 1.0) / 2.0;
    let src = patch.data();
    let go = grad_out.data();
    let mut gp = if want_patch {
        vec![0.0; d * h * w]
    } else {
        Vec::new()
    };
    let mut gg = [0.0f64; 6];
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h as isize && c < w as isize;
    let at = |ch: usize, r: isize, c: isize| -> f64 {
        if inside(r, c) {
            src[(ch * h + r as usize) * w + c as usize]
        } else {
            fill
        }
    };
    for i in 0..h {
        for j in 0..w {
            let (r, c) = source(&g, &t, cr, cc, i, j);
            let r0f = r.floor();
            let c0f = c.floor();
            let fr = r - r0f;
            let fc = c - c0f;
            let (r0, c0) = (r0f as isize, c0f as isize);
            let mut d_r = 0.0;
            let mut d_c = 0.0;
            for ch in 0..d {
                let go_v = go[(ch * h + i) * w + j];
                if go_v == 0.0 {
                    continue;
                }
                if want_patch {
                    let corners = [
                        (r0, c0, (1.0 - fr) * (1.0 - fc)),
                        (r0, c0 + 1, (1.0 - fr) * fc),
                        (r0 + 1, c0, fr * (1.0 - fc)),
                        (r0 + 1, c0 + 1, fr * fc),
                    ];
                    for (rr, ccn, wt) in corners {
                        if wt != 0.0 && inside(rr, ccn) {
                            gp[(ch * h + rr as usize) * w + ccn as usize] += go_v * wt;
                        }
                    }
                }
                if want_g {
                    let v00 = at(ch, r0, c0);
                    let v01 = at(ch, r0, c0 + 1);
                    let v10 = at(ch, r0 + 1, c0);
                    let v11 = at(ch, r0 + 1, c0 + 1);
                    d_r += go_v * ((1.0 - fc) * (v10 - v00) + fc * (v11 - v01));
                    d_c += go_v * ((1.0 - fr) * (v01 - v00) + fr * (v11 - v10));
                }
            }
            if want_g {
                let x = j as f64 - cc;
                let y = i as f64 - cr;
                // col = cc + g0 x + g1 y ; row = cr + g2 x + g3 y
                gg[0] += d_c * x;
                gg[1] += d_c * y;
                gg[2] += d_r * x;
                gg[3] += d_r * y;
                gg[4] += d_c;
                gg[5] += d_r;
            }
        }
    }
    (
        want_patch.then(|| Tensor::new(patch.shape().to_vec(), gp).expect("shape")),
        want_g.then(|| {
            let data = if g_inv.len() == 4 {
                gg[..4].to_vec()
            } else {
                vec![gg[0], gg[1], gg[4], gg[2], gg[3], gg[5]]
            };
            Tensor::new(g_inv.shape().to_vec(), data).expect("shape")
        }),
    )
}

/// Resample `patch` at `g_inv * p` for every output pixel `p`, reading `fill` outside.
pub fn grid_sample(patch: &Tensor, g_inv: &Tensor, fill: f64) -> Result<Tensor> {
    grid_sample_forward(patch, g_inv, fill)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(d: usize, h: usize, w: usize) -> Tensor {
        Tensor::new(
            vec![d, h, w],
            (0..d * h * w).map(|v| (v as f64 * 0.37).sin()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn identity_is_exact() {
        let p = ramp(2, 7, 7);
        let out = grid_sample(&p, &Tensor::eye(2), 0.0).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn quarter_turn_is_index_permutation() {
        let p = ramp(1, 5, 5);
        // g = [[0,-1],[1,0]], g_inv = [[0,1],[-1,0]]
        let g_inv = Tensor::from_rows(&[[0.0, 1.0], [-1.0, 0.0]]);
        let out = grid_sample(&p, &g_inv, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                // source col = c + y = i, source row = c - x = 4 - j
                assert_eq!(out.at3(0, i, j), p.at3(0, 4 - j, i));
            }
        }
    }

    #[test]
    fn translation_out_of_view_is_zero_fill() {
        let p = ramp(2, 5, 5);
        let shift = Tensor::from_rows(&[[1.0, 0.0, 9.0], [0.0, 1.0, 0.0]]);
        let out = grid_sample(&p, &shift, 0.0).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
        let filled = grid_sample(&p, &shift, 2.5).unwrap();
        assert!(filled.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn large_expansion_keeps_only_center() {
        let p = ramp(1, 5, 5);
        let g_inv = Tensor::from_rows(&[[100.0, 0.0], [0.0, 100.0]]);
        let out = grid_sample(&p, &g_inv, 0.0).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let want = if (i, j) == (2, 2) { p.at3(0, 2, 2) } else { 0.0 };
                assert_eq!(out.at3(0, i, j), want);
            }
        }
    }
}
