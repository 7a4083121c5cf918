use gridmpc_core::dispatch::{CapsPlan, DispatchParams, HorizonSolver};
use gridmpc_core::network::{
    flow_residual_pu, nodal_residuals, parse_case, GridCase, NetworkSystem, Scaling, IEEE30_CASE,
};
use proptest::prelude::*;

fn setup() -> (GridCase, DispatchParams) {
    let case = parse_case(IEEE30_CASE).unwrap();
    let params = Scaling::for_case(&case, &DispatchParams::default(), 400.0).unwrap().params(&DispatchParams::default());
    (case, params)
}

fn plan(case: GridCase, params: &DispatchParams, load: &[f64], caps: [f64; 2], soc: f64) -> (f64, Vec<f64>) {
    let sys = NetworkSystem::new(case.clone(), params.clone()).unwrap();
    let fixed = vec![caps; load.len()];
    let out = sys.plan(0, load, CapsPlan::Fixed(&fixed), soc).unwrap();
    assert!(flow_residual_pu(&case, &out.extra) <= 1e-8);
    for r in nodal_residuals(&case, &out.decision, &out.extra) {
        assert!(r.abs() <= 1e-6, "nodal residual {r}");
    }
    (out.objective, out.extra.flows)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn branch_orientation_and_reference_do_not_change_dispatch(
        scale in prop::collection::vec(0.5..1.05f64, 3),
        pv in 0.0..1.0f64,
        wind in 0.0..1.0f64,
        soc in 0.0..=1.0f64,
        reference in 0usize..30,
    ) {
        let (case, params) = setup();
        let nominal = case.total_nominal_load_mw() * 1000.0;
        let load: Vec<f64> = scale.iter().map(|s| s * nominal).collect();
        let caps = [pv * params.pv_capacity, wind * params.wind_capacity];
        let (obj, _) = plan(case.clone(), &params, &load, caps, soc);

        let mut flipped = case.clone();
        for br in &mut flipped.branches {
            std::mem::swap(&mut br.from, &mut br.to);
        }
        let (obj_flipped, _) = plan(flipped, &params, &load, caps, soc);
        prop_assert!((obj - obj_flipped).abs() <= 1e-7 * obj.abs().max(1.0), "{} vs {}", obj, obj_flipped);

        let mut moved = case.clone();
        moved.reference = reference;
        let (obj_moved, _) = plan(moved, &params, &load, caps, soc);
        prop_assert!((obj - obj_moved).abs() <= 1e-7 * obj.abs().max(1.0), "{} vs {}", obj, obj_moved);
    }
}

#[test]
fn radial_flows_flip_sign_with_orientation() {
    // On a radial line the flow is fixed by the loads, so it is unique.
    let text = "BASE\nmva\n100\nBUS\nid type pd\n1 3 0\n2 1 1\n3 1 0.5\nBRANCH\nfrom to x rate\n\
                1 2 0.1 10\n2 3 0.2 10\nGEN\nbus kind pmin pmax\n1 0 0 10\n1 1 0 0.5\n1 2 0 0.6\nSTORAGE\nbus\n1\n";
    let case = parse_case(text).unwrap();
    let params = DispatchParams::default();
    let (obj, flows) = plan(case.clone(), &params, &[1500.0], [0.0, 0.0], 0.5);
    let mut flipped = case.clone();
    for br in &mut flipped.branches {
        std::mem::swap(&mut br.from, &mut br.to);
    }
    let (obj2, flows2) = plan(flipped, &params, &[1500.0], [0.0, 0.0], 0.5);
    assert!((obj - obj2).abs() < 1e-9);
    assert!((flows[1] - 500.0).abs() < 1e-6, "{flows:?}");
    for (a, b) in flows.iter().zip(&flows2) {
        assert!((a + b).abs() < 1e-6);
    }
}
