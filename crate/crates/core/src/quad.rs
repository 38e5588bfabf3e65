//! Adaptive Gauss-Kronrod (7/15) quadrature for vector-valued integrands.
//!
//! The scale functions have derivative jumps at multiples of the jump size, so
//! callers pass those points as breakpoints and each panel stays smooth.

use nalgebra::DVector;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_DEPTH: u32 = 40;

fn kronrod<F>(f: &F, a: f64, b: f64) -> Result<(DVector<f64>, f64)>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut k = &fc * WGK[7];
    let mut g = &fc * WG[3];
    for (i, x) in XGK.iter().take(7).enumerate() {
        let f1 = f(c - h * x)?;
        let f2 = f(c + h * x)?;
        let s = f1 + f2;
        k += &s * WGK[i];
        if i % 2 == 1 {
            g += &s * WG[i / 2];
        }
    }
    let err = (&k - &g).amax() * h.abs();
    Ok((k * h, err))
}

fn recurse<F>(f: &F, a: f64, b: f64, tol: f64, depth: u32) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let (val, err) = kronrod(f, a, b)?;
    if err <= tol {
        return Ok(val);
    }
    if depth >= MAX_DEPTH {
        return Err(Error::QuadratureFailed(format!(
            "panel [{a}, {b}] error {err:e} above {tol:e} at maximum depth"
        )));
    }
    let m = 0.5 * (a + b);
    Ok(recurse(f, a, m, 0.5 * tol, depth + 1)? + recurse(f, m, b, 0.5 * tol, depth + 1)?)
}

/// Integrates `f` over `[a, b]`, splitting at every breakpoint inside the
/// interval. The error target is `abs_tol + rel_tol * |integral|` in max norm.
pub fn integrate<F>(f: F, a: f64, b: f64, breaks: &[f64], abs_tol: f64, rel_tol: f64) -> Result<DVector<f64>>
where
    F: Fn(f64) -> Result<DVector<f64>>,
{
    let mut pts = vec![a];
    pts.extend(breaks.iter().copied().filter(|x| *x > a && *x < b));
    pts.push(b);
    pts.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
    pts.dedup();
    // coarse pass to size the relative target
    let mut coarse: Option<DVector<f64>> = None;
    for w in pts.windows(2) {
        let (v, _) = kronrod(&f, w[0], w[1])?;
        coarse = Some(match coarse {
            Some(acc) => acc + v,
            None => v,
        });
    }
    let Some(coarse) = coarse else {
        return Err(Error::QuadratureFailed("empty interval".into()));
    };
    let tol = abs_tol.max(rel_tol * coarse.amax());
    let panels = (pts.len() - 1) as f64;
    let mut total = DVector::zeros(coarse.len());
    for w in pts.windows(2) {
        total += recurse(&f, w[0], w[1], tol / panels, 0)?;
    }
    Ok(total)
}

/// Scalar convenience wrapper.
pub fn integrate_scalar<F>(f: F, a: f64, b: f64, breaks: &[f64], abs_tol: f64, rel_tol: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    let v = integrate(|x| Ok(DVector::from_element(1, f(x)?)), a, b, breaks, abs_tol, rel_tol)?;
    Ok(v[0])
}
