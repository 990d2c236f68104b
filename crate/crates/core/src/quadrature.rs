//! Globally adaptive Gauss–Kronrod (10/21) quadrature.

/// Abscissae of the 21-point Kronrod rule on [−1, 1] (non-negative half).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];

const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_958_109_831_074,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];

/// Weights of the embedded 10-point Gauss rule (odd Kronrod nodes).
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_338,
];

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadResult {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuadError<E> {
    Integrand(E),
    Budget { value: f64, abs_error: f64 },
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gk21<E, F: FnMut(f64) -> Result<f64, E>>(f: &mut F, a: f64, b: f64) -> Result<Segment, E> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kron = fc * WGK[10];
    let mut gauss = 0.0;
    let mut abs_k = kron.abs();
    let mut fv = [0.0f64; 21];
    fv[10] = fc;
    for j in 0..10 {
        let dx = h * XGK[j];
        let f1 = f(c - dx)?;
        let f2 = f(c + dx)?;
        fv[j] = f1;
        fv[20 - j] = f2;
        kron += WGK[j] * (f1 + f2);
        abs_k += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kron;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv[j] - mean).abs() + (fv[20 - j] - mean).abs());
    }
    let value = kron * h;
    let asc = asc * h.abs();
    let mut err = ((kron - gauss) * h).abs();
    if asc != 0.0 && err != 0.0 {
        err = asc * (200.0 * err / asc).powf(1.5).min(1.0);
    }
    let resabs = abs_k * h.abs();
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    Ok(Segment {
        a,
        b,
        value,
        error: err,
    })
}

/// Integrates `f` over `[points[0], points[last]]`, treating the interior
/// points as initial breakpoints, until the total error estimate falls
/// below `max(abs_tol, rel_tol·|I|)` or `max_evals` is exhausted.
pub fn integrate<E, F>(
    mut f: F,
    points: &[f64],
    rel_tol: f64,
    abs_tol: f64,
    max_evals: usize,
) -> Result<QuadResult, QuadError<E>>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let mut segs = Vec::with_capacity(points.len() + 64);
    let mut evals = 0usize;
    for w in points.windows(2) {
        if w[1] > w[0] {
            segs.push(gk21(&mut f, w[0], w[1]).map_err(QuadError::Integrand)?);
            evals += 21;
        }
    }
    loop {
        let value: f64 = segs.iter().map(|s| s.value).sum();
        let error: f64 = segs.iter().map(|s| s.error).sum();
        if error <= abs_tol.max(rel_tol * value.abs()) {
            return Ok(QuadResult {
                value,
                abs_error: error,
                evaluations: evals,
            });
        }
        if evals + 42 > max_evals {
            return Err(QuadError::Budget {
                value,
                abs_error: error,
            });
        }
        let (idx, worst) = segs
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.error.total_cmp(&y.1.error))
            .map(|(i, s)| (i, *s))
            .expect("at least one segment");
        let m = 0.5 * (worst.a + worst.b);
        if !(m > worst.a && m < worst.b) {
            return Err(QuadError::Budget {
                value,
                abs_error: error,
            });
        }
        let left = gk21(&mut f, worst.a, m).map_err(QuadError::Integrand)?;
        let right = gk21(&mut f, m, worst.b).map_err(QuadError::Integrand)?;
        evals += 42;
        segs[idx] = left;
        segs.push(right);
    }
}
