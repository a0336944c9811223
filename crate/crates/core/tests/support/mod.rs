//! Independent oracles shared by integration tests.
#![allow(dead_code)]

use czvar_core::grid::SampledFunction;
use czvar_core::C64;
use rustfft::FftPlanner;

/// `Si(x_k)` at `x_k = k·dx`, by composite Simpson with 16 panels per step.
fn sine_integral_table(dx: f64, count: usize) -> Vec<f64> {
    let sinc = |t: f64| if t == 0.0 { 1.0 } else { t.sin() / t };
    let panels = 16;
    let mut out = Vec::with_capacity(count);
    let mut acc = 0.0;
    out.push(0.0);
    for k in 1..count {
        let a = (k - 1) as f64 * dx;
        let step = dx / panels as f64;
        let mut s = sinc(a) + sinc(a + dx);
        for m in 1..panels {
            s += if m % 2 == 1 { 4.0 } else { 2.0 } * sinc(a + m as f64 * step);
        }
        acc += s * step / 3.0;
        out.push(acc);
    }
    out
}

/// `∫_{|u|>ε} f(x-u)/u du` on the line for 1-d samples, via the multiplier
/// `-i sgn(ξ)(π - 2 Si(ε|ξ|))` on a zero-extended periodic domain `pad` times longer.
pub fn truncated_hilbert_oracle(f: &SampledFunction, eps: f64, pad: usize) -> Vec<C64> {
    let g = f.grid().points();
    let h = f.grid().spacing();
    let n = g * pad;
    let mut data = vec![C64::default(); n];
    data[..g].copy_from_slice(f.values());
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut data);
    let dxi = std::f64::consts::TAU / (n as f64 * h);
    let si = sine_integral_table(eps * dxi, n / 2 + 1);
    for (k, v) in data.iter_mut().enumerate() {
        let (m, sign) = if k <= n / 2 { (k, 1.0) } else { (n - k, -1.0) };
        if m == 0 {
            *v = C64::default();
            continue;
        }
        let mult = C64::new(0.0, -sign) * (std::f64::consts::PI - 2.0 * si[m]);
        *v *= mult;
    }
    planner.plan_fft_inverse(n).process(&mut data);
    data[..g].iter().map(|v| v / n as f64).collect()
}

/// Relative L² distance between samples, restricted to indices selected by `keep`.
pub fn restricted_rel(a: &[C64], b: &[C64], keep: impl Fn(usize) -> bool) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in (0..a.len()).filter(|&i| keep(i)) {
        num += (a[i] - b[i]).norm_sqr();
        den += b[i].norm_sqr();
    }
    (num / den).sqrt()
}
