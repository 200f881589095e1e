//! Composite Gauss–Legendre quadrature on the unit interval.

/// Panels on `[0, 1]`; four nodes each gives 4096 evaluation points.
pub const PANELS: usize = 1024;

const NODES: [f64; 4] = [
    -0.861_136_311_594_052_6,
    -0.339_981_043_584_856_3,
    0.339_981_043_584_856_3,
    0.861_136_311_594_052_6,
];
const WEIGHTS: [f64; 4] = [
    0.347_854_845_137_453_9,
    0.652_145_154_862_546_1,
    0.652_145_154_862_546_1,
    0.347_854_845_137_453_9,
];

/// `∫₀¹ f(w) dw`.
pub fn integrate_unit(mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = 1.0 / PANELS as f64;
    let mut total = 0.0;
    for k in 0..PANELS {
        let mid = (k as f64 + 0.5) * h;
        let mut panel = 0.0;
        for (x, w) in NODES.iter().zip(WEIGHTS) {
            panel += w * f(mid + 0.5 * h * x);
        }
        total += 0.5 * h * panel;
    }
    total
}
