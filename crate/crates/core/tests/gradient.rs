mod common;

use common::{finite_difference_check, random_instance};

#[test]
fn lagrangian_gradient_matches_central_differences() {
    for seed in 0..10 {
        let inst = random_instance(seed, 3, 3, &[4, 4]);
        let rep = finite_difference_check(&inst, 1e-5, 1e-4);
        assert!(rep.worst <= 1e-4, "seed {seed}: worst relative error {:e} at {}", rep.worst, rep.worst_index);
        assert!(rep.checked > rep.below_resolution);
    }
}

#[test]
fn perturbed_gradient_is_caught() {
    let inst = random_instance(3, 3, 3, &[4, 4]);
    let a = inst.analytic();
    let k = (0..a.len()).max_by(|&i, &j| a[i].abs().total_cmp(&a[j].abs())).unwrap();
    let mut plus = inst.policy.clone();
    plus.gnn.params.as_mut_slice()[k] += 1e-5;
    let mut minus = inst.policy.clone();
    minus.gnn.params.as_mut_slice()[k] -= 1e-5;
    let numeric = (inst.value(&plus) - inst.value(&minus)) / 2e-5;
    assert!(common::rel_err(a[k] * 1.001, numeric, 0.0) > 1e-4);
    assert!(common::rel_err(a[k], numeric, 0.0) <= 1e-4);
}
