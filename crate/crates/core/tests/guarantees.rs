//! The guarantees that hold on the built-in problems, asserted end to end.

use majorant_core::bounds::{combined_weights, equivalence_constants, majorant_ii_n, AlphaChoice, MajorantInput, MajorantParams};
use majorant_core::constants::{eigenvalue_oracle, payne_weinberger_bound, trace_constant_isosceles_hypotenuse, trace_constant_rect2, trace_constant_right_triangle_leg, OracleConstraint};
use majorant_core::fields::{combined_norm, error_measure, Difference, FluxField, QuadratureOrder, VectorDifference};
use majorant_core::mesh::Shape;
use majorant_core::pipeline::{compute_bounds, equivalence_diagnostic, measure, prepare, Settings};
use majorant_core::problems::{manufactured_problem, ManufacturedId, ManufacturedProblem};
use majorant_core::residuals::{enforce_mean_zero, MuField};

const IDS: [ManufacturedId; 3] = [ManufacturedId::Mp1, ManufacturedId::Mp2, ManufacturedId::Mp3];
const Q: QuadratureOrder = QuadratureOrder { space: 4, time: 3 };

fn settings(n: usize) -> Settings {
    Settings { resolution: n, time_steps: n, ..Settings::default() }
}

type Pairs = (Vec<(String, f64, f64)>, (f64, f64));

/// (measure, bound) for every majorant, then (minorant measure, minorant).
fn run(mp: &ManufacturedProblem, n: usize) -> Pairs {
    let s = settings(n);
    let setup = prepare(&mp.spec, &s, None, None).unwrap();
    let b = compute_bounds(&setup, &mp.spec, &s, Some(mp)).unwrap();
    let mut out = Vec::new();
    let mut entries = vec![("I_N", &b.majorant_i_n), ("II_N", &b.majorant_ii_n)];
    if let Ok(e) = &b.majorant_i {
        entries.push(("I", e));
    }
    if let Some(o) = &b.majorant_optimized {
        entries.push(("optimized", &o.entry));
    }
    for (name, e) in entries {
        let m = measure(&setup, &mp.spec, mp, &e.weights, 4).unwrap().total;
        out.push((name.to_string(), m, e.value));
    }
    let low = measure(&setup, &mp.spec, mp, &b.minorant.weights, 4).unwrap().total;
    (out, (low, b.minorant.value))
}

#[test]
fn majorants_bound_the_error_and_the_minorant_stays_below() {
    for id in IDS {
        let mp = manufactured_problem(id);
        let mut previous = f64::INFINITY;
        for n in [4, 8, 16] {
            let (majorants, (low_measure, low)) = run(&mp, n);
            for (name, m, bound) in &majorants {
                assert!(*m <= bound + 1e-8 * (1.0 + bound), "{id} n={n} {name}: {m} > {bound}");
                assert!(low <= *bound, "{id} n={n}: minorant above {name}");
            }
            assert!(low >= 0.0 && low <= low_measure + 1e-8, "{id} n={n}: {low} vs {low_measure}");
            let i_n = majorants.iter().find(|m| m.0 == "I_N").unwrap().2;
            assert!(i_n < previous, "{id}: majorant does not decrease under refinement");
            previous = i_n;
        }
    }
}

#[test]
fn majorant_and_error_converge_at_the_same_rate() {
    let mp = manufactured_problem(ManufacturedId::Mp1);
    let levels: Vec<_> = [4, 8, 16].iter().map(|&n| run(&mp, n).0).collect();
    let get = |k: usize, name: &str| levels[k].iter().find(|m| m.0 == name).unwrap().clone();
    for k in 1..3 {
        let (_, e0, m0) = get(k - 1, "optimized");
        let (_, e1, m1) = get(k, "optimized");
        let (re, rm) = ((e0 / e1).log2(), (m0 / m1).log2());
        assert!((re - rm).abs() <= 1.0, "level {k}: error rate {re}, majorant rate {rm}");
    }
}

/// The double inequalities between the decomposed majorants and the error
/// norms hold once the mesh resolves the solution (they fail on the coarsest
/// MP1 mesh, which the acceptance run reports).
#[test]
fn equivalence_bounds_hold_on_refined_meshes() {
    let mp = manufactured_problem(ManufacturedId::Mp1);
    let spec = &mp.spec;
    for n in [8, 16] {
        let s = Settings { optimizer_iterations: 0, ..settings(n) };
        let setup = prepare(spec, &s, None, None).unwrap();
        let e = Difference(&mp.exact, &setup.v);
        let eq = equivalence_diagnostic(&setup, spec, &s.majorant).unwrap();
        assert!(eq.constants.c_maj >= 2.0 * eq.constants.c_er + 1.0);
        let mu0 = MuField::constant(setup.part.n_cells(), 0.0);
        let (y0, _) = enforce_mean_zero(&setup.y, &setup.v, None, spec, &mu0, 4).unwrap();
        let w = combined_weights(&eq.constants, eq.alphas, spec);
        let cn = combined_norm(&setup.part, &e, &VectorDifference(&mp.flux, &y0), &w, spec, &setup.times, Q).total;
        assert!(eq.majorant_i_n <= cn && cn <= eq.constants.c_maj * eq.majorant_i_n, "n={n}");

        let yp = FluxField::project(setup.part.clone(), setup.times.clone(), &mp.flux);
        let (yw, _) = enforce_mean_zero(&yp, &setup.v, Some(&e), spec, &mu0, 4).unwrap();
        let p = MajorantParams { alphas: AlphaChoice::Constant, ..s.majorant.clone() };
        let input = MajorantInput {
            part: &setup.part,
            v: &setup.v,
            y: &yw,
            w: Some(&e),
            spec,
            constants: &setup.constants,
            mu: &mu0,
            times: &setup.times,
        };
        let m2 = majorant_ii_n(&input, &p).unwrap();
        let k = equivalence_constants(&setup.constants, m2.alphas[0], &p, spec).unwrap().k_ii;
        let meas = error_measure(&setup.part, &e, &m2.weights, spec, &setup.times, Q).unwrap().total;
        assert!(meas <= m2.value && m2.value <= k * meas, "n={n}: {meas} {} {}", m2.value, k * meas);
    }
}

#[test]
fn planar_closed_forms_match_the_oracle() {
    let s2 = 2f64.sqrt();
    let cases = [
        (trace_constant_rect2(1.0, 1.0).unwrap(), Shape::Rectangle { h1: 1.0, h2: 1.0 }, 0),
        (trace_constant_rect2(0.5, 1.0).unwrap(), Shape::Rectangle { h1: 0.5, h2: 1.0 }, 0),
        (trace_constant_right_triangle_leg(1.0).unwrap(), Shape::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] }, 0),
        (trace_constant_isosceles_hypotenuse(2.0).unwrap(), Shape::Triangle { vertices: [[0.0, 0.0], [s2, 0.0], [0.0, s2]] }, 1),
    ];
    for (closed, shape, side) in cases {
        let o = eigenvalue_oracle(&shape, &OracleConstraint::ZeroMeanTrace(vec![side]), 64).unwrap();
        assert!((closed - o).abs() <= 0.01 * o, "{shape:?}: {closed} vs {o}");
        let p = eigenvalue_oracle(&shape, &OracleConstraint::ZeroMeanVolume, 32).unwrap();
        assert!(payne_weinberger_bound(shape.diameter()) >= p);
    }
}
