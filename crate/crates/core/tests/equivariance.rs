mod common;

use rand::seq::SliceRandom;
use stateaug_rrm::channel::{generate_realization, GeometryConfig};
use stateaug_rrm::gnn::{layer_dims, permute_matrix, EdgeNormalization, GnnParams, PolicyNet, RegressorNet};
use stateaug_rrm::rng;

#[test]
fn policy_and_regressor_commute_with_relabeling() {
    let geo = GeometryConfig { users: 6, ..Default::default() };
    let real = generate_realization(&geo, 17).unwrap();
    let norm = EdgeNormalization::from_direct_links([&real.long_term_gain], 3.0).unwrap();
    let dims = layer_dims(1, &[16, 16]);
    let policy = PolicyNet::new(GnnParams::init(&dims, 1).unwrap(), 0.01, 1.0, norm).unwrap();
    let regressor = RegressorNet::new(GnnParams::init(&dims, 2).unwrap(), norm).unwrap();
    let mu = [0.1, 1.3, 0.0, 2.2, 0.7, 0.4];
    let g = &real.long_term_gain;
    let p = policy.forward(g, &mu).unwrap();
    let d = regressor.forward(g).unwrap();
    let mut r = rng::stream(5);
    for _ in 0..20 {
        let mut perm: Vec<usize> = (0..6).collect();
        perm.shuffle(&mut r);
        let gp = permute_matrix(g, &perm);
        let mup: Vec<f64> = perm.iter().map(|&i| mu[i]).collect();
        let pp = policy.forward(&gp, &mup).unwrap();
        let dp = regressor.forward(&gp).unwrap();
        for i in 0..6 {
            assert!((pp[i] - p[perm[i]]).abs() <= 1e-6 * 0.01);
            assert!((dp[i] - d[perm[i]]).abs() <= 1e-9);
        }
    }
}
