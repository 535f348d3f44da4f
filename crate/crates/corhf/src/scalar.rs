//! Floating point abstraction for the numeric core.
//!
//! All of the filter math is written against [`Scalar`] so that the same
//! code runs at `f32` or `f64`. Special functions are computed in `f64`
//! internally and cast, which is exact for `f64` and as good as the target
//! precision allows for `f32`.

// Coefficient tables below quote the published values in full; the compiler
// rounds them once, which is what we want.
#![allow(clippy::excessive_precision)]

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, NumAssign, NumCast};

/// Scalar type the numeric core is generic over.
pub trait Scalar:
    Float + NumAssign + NumCast + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Converts an `f64` constant. Panics if the value is not representable,
    /// which cannot happen for the finite literals used in this crate.
    fn of(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("constant not representable in scalar type")
    }

    /// Lossy view as `f64`, used for diagnostics and error reporting.
    fn as_f64(self) -> f64;

    /// Natural log of the gamma function.
    fn lgamma(self) -> Self;

    /// Error function.
    fn erf(self) -> Self;

    /// Complementary error function, accurate in the far tail.
    fn erfc(self) -> Self;

    /// Standard normal CDF.
    fn norm_cdf(self) -> Self {
        let half = Self::of(0.5);
        half * (-self / Self::of(std::f64::consts::SQRT_2)).erfc()
    }

    /// Standard normal quantile function. `self` must lie strictly in (0, 1).
    fn norm_quantile(self) -> Self;

    /// Smallest value strictly greater than `self`.
    fn next_up(self) -> Self;
}

impl Scalar for f64 {
    fn as_f64(self) -> f64 {
        self
    }

    fn lgamma(self) -> f64 {
        statrs::function::gamma::ln_gamma(self)
    }

    fn erf(self) -> f64 {
        erf_f64(self)
    }

    fn erfc(self) -> f64 {
        erfc_f64(self)
    }

    fn norm_quantile(self) -> f64 {
        norm_quantile_f64(self)
    }

    fn next_up(self) -> f64 {
        f64::next_up(self)
    }
}

impl Scalar for f32 {
    fn as_f64(self) -> f64 {
        self as f64
    }

    fn lgamma(self) -> f32 {
        statrs::function::gamma::ln_gamma(self as f64) as f32
    }

    fn erf(self) -> f32 {
        erf_f64(self as f64) as f32
    }

    fn erfc(self) -> f32 {
        erfc_f64(self as f64) as f32
    }

    fn norm_quantile(self) -> f32 {
        norm_quantile_f64(self as f64) as f32
    }

    fn next_up(self) -> f32 {
        f32::next_up(self)
    }
}

/// Cody's rational approximations for erf/erfc, accurate to close to full
/// double precision on all three argument ranges.
fn erf_f64(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        let z = y * y;
        let mut num = ERF_A[4] * z;
        let mut den = z;
        for i in 0..3 {
            num = (num + ERF_A[i]) * z;
            den = (den + ERF_B[i]) * z;
        }
        x * (num + ERF_A[3]) / (den + ERF_B[3])
    } else if x < 0.0 {
        erfc_scaled(y) - 1.0
    } else {
        1.0 - erfc_scaled(y)
    }
}

fn erfc_f64(x: f64) -> f64 {
    let y = x.abs();
    if y <= 0.46875 {
        1.0 - erf_f64(x)
    } else if x < 0.0 {
        2.0 - erfc_scaled(y)
    } else {
        erfc_scaled(y)
    }
}

/// erfc(y) for y > 0.46875.
fn erfc_scaled(y: f64) -> f64 {
    let result = if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (num + ERF_C[7]) / (den + ERF_D[7])
    } else if y < 26.6 {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let r = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        (FRAC_1_SQRT_PI - r) / y
    } else {
        return 0.0;
    };
    // Split the exponent to keep exp(-y^2) accurate for large y.
    let ysq = (y * 16.0).trunc() / 16.0;
    let del = (y - ysq) * (y + ysq);
    (-ysq * ysq).exp() * (-del).exp() * result
}

const FRAC_1_SQRT_PI: f64 = 5.641_895_835_477_562_9e-1;

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6e0,
    1.138_641_541_510_501_56e2,
    3.774_852_376_853_020_2e2,
    3.209_377_589_138_469_47e3,
    1.857_777_061_846_031_53e-1,
];

const ERF_B: [f64; 4] = [
    2.360_129_095_234_412_1e1,
    2.440_246_379_344_441_73e2,
    1.282_616_526_077_372_28e3,
    2.844_236_833_439_170_62e3,
];

const ERF_C: [f64; 9] = [
    5.641_884_969_886_700_9e-1,
    8.883_149_794_388_375_94e0,
    6.611_919_063_714_162_95e1,
    2.986_351_381_974_001_31e2,
    8.819_522_212_417_690_9e2,
    1.712_047_612_634_070_58e3,
    2.051_078_377_826_071_47e3,
    1.230_339_354_797_997_25e3,
    2.153_115_354_744_038_46e-8,
];

const ERF_D: [f64; 8] = [
    1.574_492_611_070_983_47e1,
    1.176_939_508_913_124_99e2,
    5.371_811_018_620_098_58e2,
    1.621_389_574_566_690_19e3,
    3.290_799_235_733_459_63e3,
    4.362_619_090_143_247_16e3,
    3.439_367_674_143_721_64e3,
    1.230_339_354_803_749_42e3,
];

const ERF_P: [f64; 6] = [
    3.053_266_349_612_323_44e-1,
    3.603_448_999_498_044_39e-1,
    1.257_817_261_112_292_46e-1,
    1.608_378_514_874_227_66e-2,
    6.587_491_615_298_378_03e-4,
    1.631_538_713_730_209_78e-2,
];

const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822_42e0,
    1.872_952_849_923_460_47e0,
    5.279_051_029_514_284_12e-1,
    6.051_834_131_244_131_91e-2,
    2.335_204_976_268_691_85e-3,
];

/// Wichura's AS 241 rational approximation (PPND16), accurate to close to
/// full double precision over (0, 1).
fn norm_quantile_f64(p: f64) -> f64 {
    assert!(
        p > 0.0 && p < 1.0,
        "normal quantile requires p in (0, 1), got {p}"
    );
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * horner(r, &CENTRAL_NUM) / horner(r, &CENTRAL_DEN);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let value = if r <= 5.0 {
        let r = r - 1.6;
        horner(r, &TAIL_NUM) / horner(r, &TAIL_DEN)
    } else {
        let r = r - 5.0;
        horner(r, &FAR_TAIL_NUM) / horner(r, &FAR_TAIL_DEN)
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

fn horner(x: f64, coeffs: &[f64; 8]) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];

const CENTRAL_DEN: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];

const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];

const TAIL_DEN: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];

const FAR_TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];

const FAR_TAIL_DEN: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];
