//! Acceptance run: one PASS/FAIL line per criterion. Criteria that are known
//! not to hold are reported, not asserted; the guarantees that do hold are
//! asserted by the integration tests of both crates.

use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use majorant_cli::config::{ApproximationConfig, FluxConfig, ProblemConfig, RunConfig, VChoice, YStart};
use majorant_cli::report::{read_csv, write_csv, BoundReport};
use majorant_cli::{run_convergence, Estimate};
use majorant_core::bounds::{
    check_alpha_constraint, combined_weights, equivalence_constants, majorant_i, majorant_i_n, majorant_ii_n, minorant,
    optimize_alphas, AlphaChoice, MajorantInput, MajorantParams, MinorantParams,
};
use majorant_core::constants::{
    eigenvalue_oracle, payne_weinberger_bound, trace_constant_isosceles_hypotenuse, trace_constant_rect2,
    trace_constant_rect3, trace_constant_right_triangle_leg, OracleConstraint,
};
use majorant_core::fields::{
    combined_norm, divergence_identity_residual, error_measure, AnalyticScalar, AnalyticVector, Difference, FluxField,
    QuadratureOrder, TimeGrid, VectorDifference, Zero,
};
use majorant_core::mesh::{build_partition, BoundaryKind, DomainSpec, Point, Shape};
use majorant_core::pipeline::{equivalence_diagnostic, prepare, Settings};
use majorant_core::problems::{error_identity_check, manufactured_problem, reference_solver, ManufacturedId};
use majorant_core::residuals::{compute_residuals, enforce_mean_zero, MuField, MuStrategy};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BOUND_TOL: f64 = 1e-8;
const RUNTIME_LIMIT_S: f64 = 60.0;
const EXACTNESS_TOL: f64 = 1e-8;
const ORACLE_GRID: usize = 64;
const ORACLE_REL_TOL: f64 = 0.01;
const DIV_IDENTITY_TOL: f64 = 1e-10;
const ENERGY_GAP_TOL: f64 = 1e-9;
const EQUIV_TOL: f64 = 1e-8;
const RATE_GAP: f64 = 1.0;
const MONOTONE_TOL: f64 = 1e-12;
const ALPHA_TOL: f64 = 1e-12;
const MEAN_TOL: f64 = 1e-11;
const LEVELS: usize = 3;
const IDS: [ManufacturedId; 3] = [ManufacturedId::Mp1, ManufacturedId::Mp2, ManufacturedId::Mp3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!("criterion {n} [{name}]: {} | {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

fn config(id: ManufacturedId) -> RunConfig {
    RunConfig {
        id: id.to_string(),
        problem: ProblemConfig { manufactured: Some(id.to_string()), inline: None },
        ..RunConfig::default()
    }
}

fn value(r: &BoundReport, key: &str) -> Option<f64> {
    r.bounds.get(key).and_then(|b| b.value())
}

fn measure(r: &BoundReport, key: &str) -> Option<f64> {
    r.error_measures.as_ref().and_then(|m| m.get(key)).map(|m| m.total)
}

fn upper_bounds(ladders: &[(ManufacturedId, Vec<Estimate>)]) -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut slowest: f64 = 0.0;
    let mut notes = Vec::new();
    for (id, runs) in ladders {
        for e in runs {
            let r = &e.report;
            for key in ["majorant_I", "majorant_I_N", "majorant_II_N", "majorant_optimized"] {
                let (Some(m), Some(err)) = (value(r, key), measure(r, key)) else {
                    continue;
                };
                worst = worst.max(err / m);
                if err > m + BOUND_TOL * (1.0 + m) {
                    pass = false;
                    notes.push(format!("{id} n={} {key}: measure {err:.3e} > {m:.3e}", r.mesh.resolution));
                }
            }
            let t = r.wall_time_s.unwrap_or(0.0);
            slowest = slowest.max(t);
            if t > RUNTIME_LIMIT_S {
                pass = false;
                notes.push(format!("{id} n={} took {t:.1} s", r.mesh.resolution));
            }
        }
    }
    let skipped = ladders
        .iter()
        .filter(|(_, runs)| runs.iter().any(|e| value(&e.report, "majorant_I").is_none()))
        .map(|(id, _)| id.to_string())
        .collect::<Vec<_>>();
    Outcome {
        pass,
        detail: format!(
            "9 runs, largest measure/majorant {worst:.3}, slowest run {slowest:.2} s{}{}",
            if skipped.is_empty() { String::new() } else { format!(", majorant_I not applicable on {}", skipped.join(",")) },
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    }
}

fn lower_bounds(ladders: &[(ManufacturedId, Vec<Estimate>)]) -> Outcome {
    let mut pass = true;
    let mut notes = Vec::new();
    let mut worst_eff: f64 = 0.0;
    for (id, runs) in ladders {
        for e in runs {
            let r = &e.report;
            let m = value(r, "minorant").unwrap();
            let err = measure(r, "minorant").unwrap();
            worst_eff = worst_eff.max((m / err).sqrt());
            if m < 0.0 || m > err + BOUND_TOL {
                pass = false;
                notes.push(format!("{id} n={}: minorant {m:.3e} vs measure {err:.3e}", r.mesh.resolution));
            }
        }
    }
    Outcome {
        pass,
        detail: format!(
            "minorant in [0, measure] on 9 runs, largest sqrt(minorant/measure) {worst_eff:.3}{}",
            if notes.is_empty() { String::new() } else { format!("; {}", notes.join("; ")) }
        ),
    }
}

/// Interpolated u and projected flux on the finest level, plus the analytic
/// pair itself for comparison.
fn exactness() -> Outcome {
    let n = 16;
    let mut pass = true;
    let mut parts = Vec::new();
    for id in IDS {
        let cfg = RunConfig {
            mesh: majorant_cli::config::MeshConfig { resolution: n, time_steps: n, threshold: None },
            approximation: ApproximationConfig { v: VChoice::ExactInterpolant, y: YStart::ExactProjection },
            flux: FluxConfig { optimizer_iterations: 0, ..FluxConfig::default() },
            ..config(id)
        };
        let r = majorant_cli::run_estimate(&cfg).unwrap().report;
        let majorants: Vec<f64> =
            ["majorant_I", "majorant_I_N", "majorant_II_N"].iter().filter_map(|k| value(&r, k)).collect();
        let low = value(&r, "minorant").unwrap();
        if majorants.iter().any(|m| *m > EXACTNESS_TOL) || low > EXACTNESS_TOL {
            pass = false;
        }

        let mp = manufactured_problem(id);
        let s = Settings { resolution: n, time_steps: n, optimizer_iterations: 0, ..Settings::default() };
        let setup = prepare(&mp.spec, &s, None, None).unwrap();
        let input = MajorantInput {
            part: &setup.part,
            v: &mp.exact,
            y: &mp.flux,
            w: None,
            spec: &mp.spec,
            constants: &setup.constants,
            mu: &setup.mu,
            times: &setup.times,
        };
        let p = MajorantParams::default();
        let mut analytic = vec![majorant_i_n(&input, &p).unwrap().value];
        analytic.push(majorant_ii_n(&MajorantInput { w: Some(&Zero), ..input }, &p).unwrap().value.abs());
        if let Ok(m) = majorant_i(&input, &p) {
            analytic.push(m.value);
        }
        let a_low = minorant(&setup.part, &mp.exact, &mp.spec, &setup.times, &MinorantParams::default()).unwrap().value;
        parts.push(format!(
            "{id}: interpolated max majorant {:.2e} minorant {low:.2e}, analytic max {:.2e} minorant {a_low:.2e}",
            majorants.iter().copied().fold(0.0, f64::max),
            analytic.iter().copied().fold(0.0, f64::max)
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn constants_vs_oracle() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    let legs = Shape::Triangle { vertices: [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]] };
    let s2 = 2f64.sqrt();
    let hyp = Shape::Triangle { vertices: [[0.0, 0.0], [s2, 0.0], [0.0, s2]] };
    let cases: [(&str, f64, Shape, usize); 4] = [
        ("rect2(1,1)", trace_constant_rect2(1.0, 1.0).unwrap(), Shape::Rectangle { h1: 1.0, h2: 1.0 }, 0),
        ("rect3(1,2,1)", trace_constant_rect3(1.0, 2.0, 1.0).unwrap(), Shape::Box { h1: 1.0, h2: 2.0, h3: 1.0 }, 0),
        ("leg h=1", trace_constant_right_triangle_leg(1.0).unwrap(), legs, 0),
        ("hypotenuse h=2", trace_constant_isosceles_hypotenuse(2.0).unwrap(), hyp, 1),
    ];
    for (name, closed, shape, side) in cases {
        let t = Instant::now();
        let o = eigenvalue_oracle(&shape, &OracleConstraint::ZeroMeanTrace(vec![side]), ORACLE_GRID).unwrap();
        let gap = (closed - o).abs() / o;
        if gap > ORACLE_REL_TOL {
            pass = false;
        }
        parts.push(format!("{name} {closed:.5} vs {o:.5} ({:.2}%, {:.0} s)", 100.0 * gap, t.elapsed().as_secs_f64()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pw_ok = 0;
    for k in 0..10 {
        let shape = if k % 2 == 0 {
            Shape::Rectangle { h1: rng.gen_range(0.2..2.0), h2: rng.gen_range(0.2..2.0) }
        } else {
            Shape::Triangle {
                vertices: [
                    [0.0, 0.0],
                    [rng.gen_range(0.3..2.0), rng.gen_range(-0.5..0.5)],
                    [rng.gen_range(-0.5..1.5), rng.gen_range(0.3..2.0)],
                ],
            }
        };
        let o = eigenvalue_oracle(&shape, &OracleConstraint::ZeroMeanVolume, ORACLE_GRID).unwrap();
        if payne_weinberger_bound(shape.diameter()) >= o {
            pw_ok += 1;
        }
    }
    if pw_ok < 10 {
        pass = false;
    }
    parts.push(format!("Payne-Weinberger above oracle on {pw_ok}/10 random cells"));
    Outcome { pass, detail: parts.join(", ") }
}

fn identities() -> Outcome {
    let part = build_partition(&DomainSpec::rectangle([0.0, 0.0], [1.0, 1.0], [BoundaryKind::Dirichlet, BoundaryKind::Robin, BoundaryKind::Robin, BoundaryKind::Robin]), &[3]).unwrap();
    let times = TimeGrid::uniform(1.0, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let c: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let a: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        let b: [f64; 6] = std::array::from_fn(|_| rng.gen_range(-2.0..2.0));
        // e vanishes on x = 0 (the Dirichlet side); y is quadratic.
        let e = AnalyticScalar {
            value: Arc::new(move |x, t| (1.0 + t) * x.x * (c[0] + c[1] * x.x + c[2] * x.y)),
            grad: Arc::new(move |x, t| {
                Point::new((1.0 + t) * (c[0] + 2.0 * c[1] * x.x + c[2] * x.y), (1.0 + t) * c[2] * x.x, 0.0)
            }),
            dt: Arc::new(move |x, _| x.x * (c[0] + c[1] * x.x + c[2] * x.y)),
        };
        let quad = |k: &[f64; 6], x: &Point| {
            k[0] + k[1] * x.x + k[2] * x.y + k[3] * x.x * x.x + k[4] * x.x * x.y + k[5] * x.y * x.y
        };
        let y = AnalyticVector {
            value: Arc::new(move |x, t| Point::new(quad(&a, x), quad(&b, x), 0.0) * (1.0 + t)),
            div: Arc::new(move |x, t| {
                (1.0 + t) * (a[1] + 2.0 * a[3] * x.x + a[4] * x.y + b[2] + b[4] * x.x + 2.0 * b[5] * x.y)
            }),
        };
        let r = divergence_identity_residual(&part, &y, &e, &times, QuadratureOrder { space: 4, time: 3 });
        worst = worst.max(r.abs());
    }
    let mp = manufactured_problem(ManufacturedId::Mp3);
    let part = Arc::new(build_partition(&mp.spec.domain, &[4]).unwrap());
    let times = TimeGrid::uniform(1.0, 4).unwrap();
    let v = reference_solver(&mp.spec, part.clone(), &times).unwrap();
    let gap = error_identity_check(&part, &v, &mp, &times, QuadratureOrder { space: 4, time: 3 });
    Outcome {
        pass: worst <= DIV_IDENTITY_TOL && gap <= ENERGY_GAP_TOL,
        detail: format!("divergence identity max residual {worst:.2e} on 20 pairs, MP3 error identity gap {gap:.2e}"),
    }
}

fn equivalence() -> Outcome {
    let mp = manufactured_problem(ManufacturedId::Mp1);
    let spec = &mp.spec;
    let q = QuadratureOrder { space: 4, time: 3 };
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [4, 8, 16] {
        let s = Settings { resolution: n, time_steps: n, optimizer_iterations: 0, ..Settings::default() };
        let setup = prepare(spec, &s, None, None).unwrap();
        let e = Difference(&mp.exact, &setup.v);

        // M̄²_I,N ≤ combined norm ≤ C_MAJ·M̄²_I,N with μ = 0 and constant α.
        let eq = equivalence_diagnostic(&setup, spec, &s.majorant).unwrap();
        let mu0 = MuField::constant(setup.part.n_cells(), 0.0);
        let (y0, _) = enforce_mean_zero(&setup.y, &setup.v, None, spec, &mu0, s.majorant.order).unwrap();
        let w = combined_weights(&eq.constants, eq.alphas, spec);
        let cn = combined_norm(&setup.part, &e, &VectorDifference(&mp.flux, &y0), &w, spec, &setup.times, q).total;
        let m = eq.majorant_i_n;
        let first = m <= cn * (1.0 + EQUIV_TOL) && cn <= eq.constants.c_maj * m * (1.0 + EQUIV_TOL);

        // [e]² ≤ M̄_II,N ≤ 𝒦[e]² with w = u − v and y the projected exact flux.
        let yp = FluxField::project(setup.part.clone(), setup.times.clone(), &mp.flux);
        let (yw, _) = enforce_mean_zero(&yp, &setup.v, Some(&e), spec, &mu0, s.majorant.order).unwrap();
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
        let meas = error_measure(&setup.part, &e, &m2.weights, spec, &setup.times, q).unwrap().total;
        let second = meas <= m2.value * (1.0 + EQUIV_TOL) && m2.value <= k * meas * (1.0 + EQUIV_TOL);
        pass &= first && second;
        parts.push(format!(
            "n={n}: I {m:.3e} <= {cn:.3e} <= {:.3e} {}, II {meas:.3e} <= {:.3e} <= {:.3e} {}",
            eq.constants.c_maj * m,
            if first { "holds" } else { "violated" },
            m2.value,
            k * meas,
            if second { "holds" } else { "violated" }
        ));
    }
    Outcome { pass, detail: parts.join("; ") }
}

fn rates(mp1: &[Estimate]) -> Outcome {
    let rows: Vec<_> = mp1.iter().map(|e| e.row.clone()).collect();
    // rates are recomputed from the CSV text, as a reader of the table would
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf).unwrap();
    let rows = read_csv(&buf[..]).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for k in 1..rows.len() {
        let (p, c) = (&rows[k - 1], &rows[k]);
        let rm = (p.majorant_optimized.unwrap() / c.majorant_optimized.unwrap()).log2();
        let re = (p.error_measure.unwrap() / c.error_measure.unwrap()).log2();
        pass &= (rm - re).abs() <= RATE_GAP;
        pass &= c.rate_majorant_optimized.is_some_and(|r| (r - rm).abs() <= 1e-12);
        parts.push(format!("level {k}: optimized majorant {rm:.3}, error measure {re:.3}"));
    }
    Outcome { pass, detail: parts.join(", ") }
}

fn monotonicity(mp1: &[Estimate]) -> Outcome {
    let mut pass = true;
    let mut steps = 0;
    for e in mp1 {
        let h = &e.report.optimizer_history;
        steps += h.len();
        pass &= h.windows(2).all(|w| w[1] <= w[0] + MONOTONE_TOL);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let r: [f64; 3] = std::array::from_fn(|_| rng.gen_range(1e-3..10.0));
        let delta = rng.gen_range(0.05..=2.0);
        let a = optimize_alphas(r, delta);
        let s: f64 = a.iter().map(|x| 1.0 / x).sum();
        worst = worst.max((s - delta).abs());
        pass &= check_alpha_constraint(&a, delta).is_ok();
    }
    pass &= worst <= ALPHA_TOL;
    Outcome {
        pass,
        detail: format!("{steps} optimizer iterates non-increasing on 3 MP1 levels, alpha constraint error {worst:.1e} on 100 triples"),
    }
}

fn mean_zero() -> Outcome {
    let mp = manufactured_problem(ManufacturedId::Mp1);
    let spec = &mp.spec;
    // threshold above ϱ = 1 makes every cell weak, so every cell is constrained
    let s = Settings { resolution: 4, time_steps: 2, threshold: Some(2.0), mu: MuStrategy::Zero, ..Settings::default() };
    let setup = prepare(spec, &s, None, None).unwrap();
    let part = &setup.part;
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let dofs = (0..2 * setup.times.n_slabs())
        .map(|_| DVector::from_fn(part.n_faces(), |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    let y = FluxField::new(part.clone(), setup.times.clone(), dofs).unwrap();
    let (y2, _) = enforce_mean_zero(&y, &setup.v, None, spec, &setup.mu, 4).unwrap();
    let res = compute_residuals(part, &setup.v, &y2, None, spec, &setup.mu).unwrap();
    let mut worst: f64 = 0.0;
    for tp in setup.times.flux_points() {
        let local = res.local(tp.t, 4).unwrap();
        for (c, i) in local.source_rest_integral.iter().enumerate() {
            worst = worst.max(i.abs() / part.subdomains[c].measure);
        }
        for (j, &f) in part.robin_faces.iter().enumerate() {
            worst = worst.max(local.boundary_integral[j].abs() / part.faces[f].measure);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("skip.toml");
    std::fs::write(&path, "[problem]\nmanufactured = \"mp1\"\n[flux]\nmethod = \"gradient_average\"\n").unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_majorant")).args(["estimate", "--config"]).arg(&path).output().unwrap();
    let code = status.status.code();
    Outcome {
        pass: worst <= MEAN_TOL && code == Some(3),
        detail: format!(
            "largest mean after correction {worst:.1e} over {} cells and {} Robin faces, uncorrected run exits with {code:?}",
            part.n_cells(),
            part.robin_faces.len()
        ),
    }
}

fn main() {
    let start = Instant::now();
    let ladders: Vec<(ManufacturedId, Vec<Estimate>)> =
        IDS.iter().map(|&id| (id, run_convergence(&config(id), LEVELS).unwrap())).collect();
    let outcomes = [
        ("guaranteed upper bound", upper_bounds(&ladders)),
        ("guaranteed lower bound", lower_bounds(&ladders)),
        ("exactness", exactness()),
        ("constants vs oracle", constants_vs_oracle()),
        ("identity checks", identities()),
        ("equivalence", equivalence()),
        ("rate tracking", rates(&ladders[0].1)),
        ("optimizer monotonicity", monotonicity(&ladders[0].1)),
        ("mean-zero enforcement", mean_zero()),
    ];
    for (k, (name, o)) in outcomes.iter().enumerate() {
        report(k + 1, name, o);
    }
    let passed = outcomes.iter().filter(|(_, o)| o.pass).count();
    println!("acceptance: {passed}/{} criteria pass ({:.0} s)", outcomes.len(), start.elapsed().as_secs_f64());
}
