//! Adaptive Gauss-Kronrod (7, 15) quadrature for vector-valued integrands.

use nalgebra::DVector;

// published node and weight tables, kept at full printed precision
#[allow(clippy::excessive_precision)]
const XGK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];

#[allow(clippy::excessive_precision)]
const WGK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];

/// Gauss weights on the odd Kronrod nodes (`XGK[1]`, `XGK[3]`, ...; centre last).
#[allow(clippy::excessive_precision)]
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Result of an adaptive integration.
#[derive(Debug, Clone)]
pub struct Quadrature {
    pub value: DVector<f64>,
    /// Sum of the Kronrod-Gauss differences over the accepted panels.
    pub error: f64,
    pub evaluations: usize,
}

fn gk15<F>(f: &mut F, a: f64, b: f64) -> (DVector<f64>, f64)
where
    F: FnMut(f64) -> DVector<f64>,
{
    let c = 0.5 * (a + b);
    let hl = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = &fc * WGK[7];
    let mut gauss = &fc * WG[3];
    for j in 0..7 {
        let dx = hl * XGK[j];
        let fl = f(c - dx);
        let fr = f(c + dx);
        let sum = &fl + &fr;
        kron += &sum * WGK[j];
        if j % 2 == 1 {
            gauss += &sum * WG[j / 2];
        }
    }
    let err = ((&kron - &gauss) * hl).norm();
    (kron * hl, err)
}

/// Integrates `f` over `[a, b]` to `|err| <= max(abs_tol, rel_tol |I|)` by
/// global bisection of the worst panel.
pub fn integrate<F>(
    mut f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Quadrature
where
    F: FnMut(f64) -> DVector<f64>,
{
    let (v, e) = gk15(&mut f, a, b);
    let mut panels = vec![(a, b, v, e)];
    let mut evaluations = 15;
    loop {
        let total: DVector<f64> = panels
            .iter()
            .skip(1)
            .fold(panels[0].2.clone(), |acc, p| acc + &p.2);
        let err: f64 = panels.iter().map(|p| p.3).sum();
        if err <= abs_tol.max(rel_tol * total.norm()) || panels.len() >= max_panels {
            return Quadrature {
                value: total,
                error: err,
                evaluations,
            };
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .map(|(i, _)| i)
            .expect("at least one panel");
        let (pa, pb, _, _) = panels.swap_remove(worst);
        let mid = 0.5 * (pa + pb);
        let (v1, e1) = gk15(&mut f, pa, mid);
        let (v2, e2) = gk15(&mut f, mid, pb);
        evaluations += 30;
        panels.push((pa, mid, v1, e1));
        panels.push((mid, pb, v2, e2));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let q = integrate(
            |t| DVector::from_vec(vec![t.powi(5), 1.0]),
            -1.0,
            2.0,
            1e-14,
            0.0,
            100,
        );
        assert!((q.value[0] - (64.0 - 1.0) / 6.0).abs() < 1e-12);
        assert!((q.value[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn peaked_integrand_adapts() {
        let q = integrate(
            |t| DVector::from_vec(vec![(-100.0 * t * t).exp()]),
            -3.0,
            3.0,
            1e-13,
            0.0,
            500,
        );
        let exact = (std::f64::consts::PI / 100.0).sqrt();
        assert!((q.value[0] - exact).abs() < 1e-12);
    }
}
