//! Quadrature rules: a degree-4 six-point triangle rule and Gauss-Legendre
//! on [0, 1] for boundary integrals.

/// Barycentric coordinates and weights of the degree-4 rule; weights sum to 1
/// and get scaled by the triangle area at use sites.
pub const TRI_DEGREE4: [([f64; 3], f64); 6] = [
    (
        [0.445948490915965, 0.445948490915965, 0.108103018168070],
        0.223381589678011,
    ),
    (
        [0.445948490915965, 0.108103018168070, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.108103018168070, 0.445948490915965, 0.445948490915965],
        0.223381589678011,
    ),
    (
        [0.091576213509771, 0.091576213509771, 0.816847572980459],
        0.109951743655322,
    ),
    (
        [0.091576213509771, 0.816847572980459, 0.091576213509771],
        0.109951743655322,
    ),
    (
        [0.816847572980459, 0.091576213509771, 0.091576213509771],
        0.109951743655322,
    ),
];

/// Five-point Gauss-Legendre nodes/weights on [0, 1]; exact through degree 9.
pub fn gauss_legendre_5() -> [(f64, f64); 5] {
    let nodes = [
        -0.906_179_845_938_664,
        -0.538_469_310_105_683,
        0.0,
        0.538_469_310_105_683,
        0.906_179_845_938_664,
    ];
    let weights = [
        0.236_926_885_056_189,
        0.478_628_670_499_366,
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
    ];
    let mut out = [(0.0, 0.0); 5];
    for k in 0..5 {
        out[k] = (0.5 * (nodes[k] + 1.0), 0.5 * weights[k]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn triangle_rule_integrates_quartics() {
        // On the reference triangle, integral of l1^a l2^b l3^c is
        // a! b! c! 2A / (a+b+c+2)! with A = 1/2.
        let monomial = |p: [u32; 3]| -> f64 {
            let mut acc = 0.0;
            for (bary, w) in TRI_DEGREE4 {
                acc += w * bary[0].powi(p[0] as i32) * bary[1].powi(p[1] as i32) * bary[2].powi(p[2] as i32);
            }
            acc * 0.5
        };
        let fact = |n: u32| (1..=n.max(1)).product::<u32>() as f64;
        for p in [[4, 0, 0], [2, 2, 0], [1, 1, 2], [3, 1, 0], [0, 0, 4]] {
            let exact = fact(p[0]) * fact(p[1]) * fact(p[2]) / fact(p[0] + p[1] + p[2] + 2);
            assert_relative_eq!(monomial(p), exact, max_relative = 1e-13);
        }
    }

    #[test]
    fn gauss_rule_integrates_degree_nine() {
        let rule = gauss_legendre_5();
        let mut acc = 0.0;
        for (x, w) in rule {
            acc += w * x.powi(9);
        }
        assert_relative_eq!(acc, 0.1, max_relative = 1e-13);
        let total: f64 = rule.iter().map(|(_, w)| w).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-14);
    }
}
