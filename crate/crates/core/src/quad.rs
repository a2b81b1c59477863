//! Fixed-node Gauss-Legendre quadrature used for kernel and birth integrals.

/// 20-point Gauss-Legendre rule on [-1, 1]: (node, weight).
pub const GL20: [(f64, f64); 20] = [
    (-0.9931285991850949, 0.017614007139153273),
    (-0.9639719272779138, 0.04060142980038622),
    (-0.9122344282513258, 0.06267204833410944),
    (-0.8391169718222188, 0.08327674157670467),
    (-0.7463319064601508, 0.10193011981724026),
    (-0.636053680726515, 0.11819453196151825),
    (-0.5108670019508271, 0.13168863844917653),
    (-0.37370608871541955, 0.14209610931838187),
    (-0.2277858511416451, 0.14917298647260366),
    (-0.07652652113349734, 0.15275338713072578),
    (0.07652652113349734, 0.15275338713072578),
    (0.2277858511416451, 0.14917298647260366),
    (0.37370608871541955, 0.14209610931838187),
    (0.5108670019508271, 0.13168863844917653),
    (0.636053680726515, 0.11819453196151825),
    (0.7463319064601508, 0.10193011981724026),
    (0.8391169718222188, 0.08327674157670467),
    (0.9122344282513258, 0.06267204833410944),
    (0.9639719272779138, 0.04060142980038622),
    (0.9931285991850949, 0.017614007139153273),
];

/// ∫_a^b f, single 20-node panel. Nodes are strictly interior.
pub fn integrate<E>(a: f64, b: f64, mut f: impl FnMut(f64) -> Result<f64, E>) -> Result<f64, E> {
    if a == b {
        return Ok(0.0);
    }
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL20 {
        acc += w * f(mid + half * x)?;
    }
    Ok(acc * half)
}

/// Composite rule with `panels` equal panels, for mass checks of rough kernels.
pub fn integrate_composite<E>(
    a: f64,
    b: f64,
    panels: usize,
    mut f: impl FnMut(f64) -> Result<f64, E>,
) -> Result<f64, E> {
    let mut acc = 0.0;
    let w = (b - a) / panels as f64;
    for i in 0..panels {
        acc += integrate(a + i as f64 * w, a + (i + 1) as f64 * w, &mut f)?;
    }
    Ok(acc)
}
