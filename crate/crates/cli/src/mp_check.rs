use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use explvar::data::{centered_gram_eigenvalues, standardize, Dataset};
use explvar::variance::{mp_tau2_theoretical, tau2_from_eigenvalues};
use explvar::{Error, Mat, Result};

use crate::MpCheckArgs;

#[derive(Debug, Serialize)]
struct MpReport {
    n: usize,
    p: usize,
    xi: f64,
    lambda: f64,
    seed: u64,
    tau2_hat: f64,
    tau2_mp: f64,
    relative_gap: f64,
}

pub fn run(args: &MpCheckArgs) -> Result<String> {
    let (n, p) = (args.n, args.p);
    if n < 4 || p < 4 {
        return Err(Error::InvalidParameter("mp-check needs n, p >= 4".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let x = Mat::from_fn(n, p, |_, _| Distribution::<f64>::sample(&StandardNormal, &mut rng));
    let d = standardize(&Dataset::new(vec![0.0; n], x, None)?)?;
    let eigs = centered_gram_eigenvalues(&d)?;
    let tau2_hat = tau2_from_eigenvalues(&eigs, n, p, args.lambda);
    let xi = n as f64 / p as f64;
    let tau2_mp = mp_tau2_theoretical(xi, args.lambda)?;
    let report = MpReport {
        n,
        p,
        xi,
        lambda: args.lambda,
        seed: args.seed,
        tau2_hat,
        tau2_mp,
        relative_gap: (tau2_hat - tau2_mp).abs() / tau2_mp,
    };
    serde_json::to_string_pretty(&report).map_err(|e| Error::InvalidParameter(e.to_string()))
}
