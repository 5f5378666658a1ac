use std::path::Path;

use super::{CoefficientSet, EnvSpec};
use crate::error::{Error, Result};
use crate::gridio::{read_bundle, write_bundle, GridBundle};
use crate::lattice::MAX_DIM;

/// Parse an environment specification from TOML text.
///
/// ```toml
/// dimension = 2
/// model = "shot-noise"          # constant | shot-noise | smoothed-checkerboard | spectral-field
/// period = 32.0
/// spacing = 0.125
/// hamiltonian = "power"         # power | quadratic-drift
/// q = 2.0
/// lambda1 = 2.0
/// lambda2 = 0.0
/// seed = 7
///
/// [params]
/// bump_radius = 1.0
/// bump_amplitude = 1.0
/// intensity = 0.1
/// ```
pub fn parse_env_spec(text: &str) -> Result<EnvSpec> {
    let spec: EnvSpec = toml::from_str(text).map_err(|e| {
        let key = e.span().map(|s| format!("byte {}..{}", s.start, s.end)).unwrap_or_default();
        Error::config(key, e.message().to_string())
    })?;
    spec.validate()?;
    Ok(spec)
}

/// Write all fields to the binary grid container with a sidecar holding
/// the specification and seed.
pub fn export_coefficients(cs: &CoefficientSet, path: &Path) -> Result<()> {
    let d = cs.dim();
    let mut b = GridBundle::new(cs.lattice);
    b.push("a", 1, cs.a.clone());
    b.push("V", 1, cs.v.clone());
    b.push("b", d, cs.b.clone());
    b.push("sigma", d * d, cs.sigma.clone());
    let meta = serde_json::json!({
        "kind": "coefficients",
        "d": d,
        "L": cs.spec.period,
        "h": cs.spec.spacing,
        "model": cs.spec.model,
        "seed": cs.seed,
        "offset": &cs.offset[..d],
        "spec": cs.spec,
        "bump_centers": cs.bump_centers.iter().map(|c| c[..d].to_vec()).collect::<Vec<_>>(),
    });
    write_bundle(path, &b, &meta)
}

pub fn import_coefficients(path: &Path) -> Result<CoefficientSet> {
    let (bundle, meta) = read_bundle(path)?;
    let spec: EnvSpec = serde_json::from_value(meta["spec"].clone())?;
    let d = spec.dimension;
    let take = |name: &str| -> Result<Vec<f64>> {
        bundle
            .field(name)
            .map(|f| f.to_vec())
            .ok_or_else(|| Error::Format(format!("field `{name}` missing from {}", path.display())))
    };
    let sigma = take("sigma")?;
    let n = bundle.lattice.len();
    let mut amat = vec![0.0; n * d * d];
    for i in 0..n {
        let mut s = [[0.0; MAX_DIM]; MAX_DIM];
        for r in 0..d {
            for c in 0..d {
                s[r][c] = sigma[i * d * d + r * d + c];
            }
        }
        let a = super::half_gram(&s, d);
        for r in 0..d {
            for c in 0..d {
                amat[i * d * d + r * d + c] = a[r][c];
            }
        }
    }
    let mut offset = [0.0; MAX_DIM];
    if let Some(o) = meta["offset"].as_array() {
        for (k, v) in o.iter().enumerate().take(d) {
            offset[k] = v.as_f64().unwrap_or(0.0);
        }
    }
    let mut bump_centers = Vec::new();
    if let Some(list) = meta["bump_centers"].as_array() {
        for c in list {
            let mut p = [0.0; MAX_DIM];
            if let Some(cs) = c.as_array() {
                for (k, v) in cs.iter().enumerate().take(d) {
                    p[k] = v.as_f64().unwrap_or(0.0);
                }
            }
            bump_centers.push(p);
        }
    }
    Ok(CoefficientSet {
        seed: meta["seed"].as_u64().unwrap_or(spec.seed),
        spec,
        lattice: bundle.lattice,
        a: take("a")?,
        v: take("V")?,
        b: take("b")?,
        sigma,
        amat,
        offset,
        bump_centers,
    })
}
