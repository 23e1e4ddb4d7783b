//! Acceptance suite: one test per criterion, each printing a pass/fail
//! line. Run with `cargo test --test acceptance -- --nocapture` to see
//! the lines; tolerances and thresholds are pinned in the assertions.

use somd::backend::{run_method, Backend, DeviceReport, RunConfig};
use somd::corpus::{self, pack_blocks, unpack_blocks, PROGRAMS};
use somd::device_sim::{launch, run_gpu, DeviceState, ExecConfigGpu, LaunchArgs};
use somd::interp::interpret;
use somd::parser::parse;
use somd::partition::{index_partition, row_disjoint_partition, StrategyRegistry};
use somd::plan_gpu::{
    dump_gpu_plan, grid_config, lower_gpu, GridConfig, KExpr, KStmt, Kernel, KernelBody,
};
use somd::plan_sm::{dump_plan, lower_master_sm};
use somd::runtime_sm::ExecConfigSM;
use somd::validate::validate;
use somd::value::{approx_eq, ArrayData, Scalar, Value};
use rand::rngs::SmallRng;
use rand::{Rng, SeedableRng};
use std::time::Instant;

fn registry() -> StrategyRegistry {
    StrategyRegistry::with_builtins()
}

fn sm_config(n_slaves: usize) -> RunConfig {
    RunConfig {
        backend: Backend::Sm,
        n_slaves,
        sm: ExecConfigSM { pool_size: n_slaves, ..Default::default() },
        ..Default::default()
    }
}

fn gpu_config(seed: u64, max_group: usize) -> RunConfig {
    RunConfig {
        backend: Backend::GpuSim,
        n_slaves: 1,
        gpu: ExecConfigGpu { max_group_size: max_group, seed, ..Default::default() },
        ..Default::default()
    }
}

fn pass(criterion: u32, detail: &str) {
    println!("ACCEPTANCE {criterion}: PASS - {detail}");
}

/// Criterion 1: the paper's annotated listings parse and validate, and the
/// lowered stencil plan matches the golden master/slave structure exactly.
#[test]
fn criterion_01_parse_fidelity_and_plan_golden() {
    for (name, src) in corpus::LISTINGS {
        let program = parse(src).unwrap_or_else(|e| panic!("{name} parse: {e:?}"));
        validate(program, &registry()).unwrap_or_else(|e| panic!("{name} validate: {e:?}"));
    }

    let (_, listing6) = corpus::LISTINGS.iter().find(|(n, _)| *n == "listing6").unwrap();
    let vp = validate(parse(listing6).unwrap(), &registry()).unwrap();
    let plan = lower_master_sm(&vp, "stencil", 4).unwrap();
    let dump = dump_plan(&vp, &plan);
    let golden = include_str!("golden/listing6_plan.txt");
    assert_eq!(dump, golden, "stencil plan diverged from the golden dump");

    // the structural facts the golden pins down
    assert!(dump.contains("Phaser fence = new Phaser(nSlaves);"));
    assert!(dump.contains("Phaser completed = new Phaser(nSlaves + 1);"));
    assert!(dump.contains("IndexPartitioner(G.length - 1, 2, {1,1})"));
    assert!(dump.contains("IndexPartitioner(G[0].length - 1, 2, {1,1})"));
    assert!(dump.contains("results[rank] = Gtotal;"));
    assert_eq!(plan.partition_calls.len(), 2);
    pass(1, "listings 1,2,4,5,6,7 validate; stencil plan matches the golden file");
}

/// Criterion 2: thread-grid arithmetic rounds a million-element problem
/// to 1954 groups of 512.
#[test]
fn criterion_02_grid_arithmetic() {
    let g = grid_config(1_000_000, 512);
    assert_eq!(
        g,
        GridConfig { n_groups: 1954, group_size: 512, total_threads: 1_000_448 }
    );
    assert_eq!(grid_config(512, 512), GridConfig { n_groups: 1, group_size: 512, total_threads: 512 });
    assert_eq!(grid_config(1000, 256), GridConfig { n_groups: 4, group_size: 256, total_threads: 1024 });
    pass(2, "grid_config(1000000, 512) = 1954 x 512 = 1000448");
}

/// Criterion 3: worker-pool output equals the sequential oracle for every
/// corpus program, slave count and random input.
#[test]
fn criterion_03_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = SmallRng::seed_from_u64(0xACCE);
    let mut runs = 0usize;
    for p in PROGRAMS {
        let vp = corpus::load(p);
        for case in 0..20u64 {
            let size = random_size(p.name, &mut rng);
            let seed = 1000 + case;
            let args = corpus::generate_args(p.name, size, seed);
            let oracle = interpret(&vp, p.entry, &args)
                .unwrap_or_else(|e| panic!("{} oracle: {e}", p.name));
            for n_slaves in [1usize, 2, 3, 4, 8] {
                let out = run_method(&vp, &registry(), p.entry, &args, &sm_config(n_slaves))
                    .unwrap_or_else(|e| panic!("{} sm n={n_slaves}: {e}", p.name));
                assert!(
                    approx_eq(&out.value, &oracle, p.tol_sm),
                    "{} size={size} seed={seed} n_slaves={n_slaves}: sm != seq (tol {})",
                    p.name,
                    p.tol_sm
                );
                runs += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "suite took {elapsed:?}, budget is two minutes");
    pass(3, &format!("{runs} runs across 9 programs x 5 slave counts x 20 inputs in {elapsed:?}"));
}

fn random_size(name: &str, rng: &mut SmallRng) -> usize {
    match name {
        "sor" => rng.gen_range(4..14),
        "lufact" => rng.gen_range(2..12),
        "series" => rng.gen_range(2..7),
        "crypt" => rng.gen_range(0..64),
        "sparsematmult" => rng.gen_range(1..40),
        _ => rng.gen_range(0..48),
    }
}

/// Criterion 4: the device simulator matches the worker pool on every
/// GPU-eligible program, and group-order randomization changes nothing.
#[test]
fn criterion_04_backend_equivalence() {
    let mut rng = SmallRng::seed_from_u64(0xBACE);
    for p in PROGRAMS.iter().filter(|p| p.gpu_eligible) {
        let vp = corpus::load(p);
        for case in 0..3u64 {
            let size = random_size(p.name, &mut rng).max(2);
            let args = corpus::generate_args(p.name, size, 7 + case);
            let sm = run_method(&vp, &registry(), p.entry, &args, &sm_config(4))
                .unwrap_or_else(|e| panic!("{} sm: {e}", p.name));
            let mut outputs = Vec::new();
            for seed in 0..10u64 {
                let out = run_method(&vp, &registry(), p.entry, &args, &gpu_config(seed, 8))
                    .unwrap_or_else(|e| panic!("{} gpu seed {seed}: {e}", p.name));
                assert!(
                    approx_eq(&out.value, &sm.value, p.tol_gpu),
                    "{} size={size}: gpu-sim != sm at tolerance {}",
                    p.name,
                    p.tol_gpu
                );
                outputs.push(out.value);
            }
            for w in outputs.windows(2) {
                assert_eq!(w[0], w[1], "{}: group-order seed changed the output", p.name);
            }
        }
    }
    pass(4, "gpu-sim == sm on 8 eligible programs; 10 group-order seeds bitwise identical");
}

/// Criterion 5: the relaxation plan at 100 iterations issues exactly 100
/// update-kernel launches and one reduction launch, with a single matrix
/// put and a single partials get.
#[test]
fn criterion_05_kernel_launch_ledger_shape() {
    let p = corpus::find("sor").unwrap();
    let vp = corpus::load(p);
    let plan = lower_gpu(&vp, "sor").unwrap();
    let golden = include_str!("golden/sor_kernels.txt");
    assert_eq!(dump_gpu_plan(&plan), golden, "kernel dump diverged from the golden file");

    let args = corpus::generate_args("sor", 16, 3); // 100 iterations baked in
    let run = run_gpu(&vp, &plan, &args, &ExecConfigGpu { max_group_size: 32, ..Default::default() })
        .unwrap();
    let update = run.launches.iter().filter(|k| k.as_str() == "K1").count();
    let copy = run.launches.iter().filter(|k| k.as_str() == "K2").count();
    let reduce = run.launches.iter().filter(|k| k.as_str() == "K3").count();
    assert_eq!(update, 100, "update kernel launches");
    assert_eq!(reduce, 1, "reduction kernel launches");
    assert_eq!(copy, 100, "write-back kernel launches");
    assert_eq!(run.ledger.puts("g"), 1, "matrix staged exactly once");
    assert_eq!(run.ledger.gets("partials2"), 1, "partials fetched exactly once");
    assert_eq!(run.ledger.gets("g"), 0, "matrix is not returned, so never fetched");
    assert_eq!(run.ledger.records.len(), 2, "no other transfers");
    pass(5, "100 update launches + 1 reduction launch; ledger = {1 put(g), 1 get(partials)}");
}

/// Criterion 6: randomized partition properties, ten thousand cases, zero
/// violations.
#[test]
fn criterion_06_partition_properties() {
    let mut rng = SmallRng::seed_from_u64(0x9a53);
    for case in 0..10_000u32 {
        let length = rng.gen_range(0..10_000usize);
        let n = rng.gen_range(1..=64usize);
        let before = rng.gen_range(0..=3u32);
        let after = rng.gen_range(0..=3u32);
        let ranges = index_partition(length, n, (before, after));
        assert_eq!(ranges.len(), n, "case {case}: count");
        let mut at = 0usize;
        let mut max = 0usize;
        let mut min = usize::MAX;
        for r in &ranges {
            assert_eq!(r.lo, at, "case {case}: contiguous coverage");
            assert!(r.hi >= r.lo, "case {case}: non-reversed");
            assert!(r.view_lo <= r.lo && r.hi <= r.view_hi, "case {case}: window contains owned");
            assert!(r.view_hi <= length, "case {case}: view clamped");
            max = max.max(r.owned_len());
            min = min.min(r.owned_len());
            at = r.hi;
        }
        assert_eq!(at, length, "case {case}: full coverage");
        assert!(max - min <= 1, "case {case}: balance within one");

        // row-disjointness of the sparse partitioner
        let rows: Vec<i64> = {
            let mut v: Vec<i64> = (0..rng.gen_range(0..200)).map(|_| rng.gen_range(0..40)).collect();
            v.sort_unstable();
            v
        };
        let slaves = rng.gen_range(1..=8usize);
        let parts = row_disjoint_partition(&rows, slaves);
        let mut at = 0usize;
        for r in &parts {
            assert_eq!(r.lo, at, "case {case}: row split coverage");
            if r.hi > r.lo && r.hi < rows.len() {
                assert_ne!(rows[r.hi - 1], rows[r.hi], "case {case}: range straddles a row");
            }
            at = r.hi;
        }
        assert_eq!(at, rows.len(), "case {case}: row split covers all elements");
    }
    pass(6, "10000 randomized cases: coverage, disjointness, balance, views, row-disjointness");
}

/// Criterion 7: the constructed cross-group hazard is flagged in strict
/// mode; corpus kernels stay hazard-free across ten seeds.
#[test]
fn criterion_07_hazard_detection() {
    // group 0 writes the cells group 1 reads within one launch
    let kernel = Kernel {
        id: 0,
        name: "K1".into(),
        size: somd::ast::Expr::IntLit(8, somd::diag::Span::new(0, 0)),
        n_regs: 2,
        body: KernelBody::Compute(vec![
            KStmt::Let { reg: 0, expr: KExpr::GlobalId },
            KStmt::If {
                cond: KExpr::Binary {
                    op: somd::ast::BinOp::Lt,
                    lhs: Box::new(KExpr::Reg(0)),
                    rhs: Box::new(KExpr::Lit(Scalar::Int(4))),
                },
                then: vec![KStmt::Store {
                    buf: 0,
                    index: KExpr::Binary {
                        op: somd::ast::BinOp::Add,
                        lhs: Box::new(KExpr::Reg(0)),
                        rhs: Box::new(KExpr::Lit(Scalar::Int(4))),
                    },
                    value: KExpr::Reg(0),
                    name: "cells".into(),
                }],
                els: vec![KStmt::Let {
                    reg: 1,
                    expr: KExpr::Load {
                        buf: 0,
                        index: Box::new(KExpr::Reg(0)),
                        name: "cells".into(),
                    },
                }],
            },
        ]),
    };
    let grid = grid_config(8, 4);
    let args = LaunchArgs { scalars: vec![] };

    let mut strict_state = device_with_buffer();
    let strict = ExecConfigGpu { max_group_size: 4, strict_hazards: true, ..Default::default() };
    let err = launch(&kernel, grid, &mut strict_state, &args, &strict).unwrap_err();
    assert!(err.message.contains("hazard"), "strict mode surfaces the conflict: {err}");

    let mut warn_state = device_with_buffer();
    let warn = ExecConfigGpu { max_group_size: 4, strict_hazards: false, ..Default::default() };
    launch(&kernel, grid, &mut warn_state, &args, &warn).unwrap();
    assert!(!warn_state.hazards.is_empty(), "warn mode records the conflict");
    assert!(warn_state
        .hazards
        .iter()
        .all(|h| h.writer_group == 0 && h.reader_group == 1));

    // corpus kernels across ten seeds produce no records (strict mode is
    // already on in criterion 4's runs; recheck the collected reports)
    let mut corpus_hazards = 0usize;
    for p in PROGRAMS.iter().filter(|p| p.gpu_eligible) {
        let vp = corpus::load(p);
        let args = corpus::generate_args(p.name, 12.max(random_floor(p.name)), 3);
        for seed in 0..10u64 {
            let out = run_method(&vp, &registry(), p.entry, &args, &gpu_config(seed, 8)).unwrap();
            let report: &DeviceReport = out.device.as_ref().unwrap();
            corpus_hazards += report.hazards.len();
        }
    }
    assert_eq!(corpus_hazards, 0, "corpus kernels must stay hazard-free");
    pass(7, "constructed hazard flagged strict + recorded warn; corpus hazard-free over 10 seeds");
}

fn random_floor(name: &str) -> usize {
    match name {
        "lufact" => 4,
        "series" => 3,
        _ => 12,
    }
}

fn device_with_buffer() -> DeviceState {
    let mut state = DeviceState::new(4);
    let id = state.alloc("cells", somd::ast::ScalarType::Int, [8, 1], 1);
    assert_eq!(id, 0);
    state
}

/// Criterion 8: speedup smoke at desk scale; asserted on machines with at
/// least four cores, report-only below that.
#[test]
fn criterion_08_speedup_smoke() {
    let cores = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
    let assertive = cores >= 4;
    let (series_size, crypt_size, reps) = if assertive { (1000, 1_000_000, 3) } else { (200, 100_000, 2) };

    let series = corpus::find("series").unwrap();
    let s1 = median_time(series, 1, series_size, reps);
    let s4 = median_time(series, 4, series_size, reps);
    let series_speedup = s1 / s4;

    let crypt = corpus::find("crypt").unwrap();
    let c1 = median_time(crypt, 1, crypt_size, reps);
    let c4 = median_time(crypt, 4, crypt_size, reps);
    let crypt_speedup = c1 / c4;

    if assertive {
        assert!(
            series_speedup >= 2.0,
            "series 4-slave speedup {series_speedup:.2} below 2.0 on a {cores}-core machine"
        );
        assert!(
            crypt_speedup >= 1.5,
            "crypt 4-slave speedup {crypt_speedup:.2} below 1.5 on a {cores}-core machine"
        );
        pass(8, &format!("series {series_speedup:.2}x, crypt {crypt_speedup:.2}x with 4 slaves vs 1"));
    } else {
        pass(
            8,
            &format!(
                "report-only ({cores} cores < 4): series {series_speedup:.2}x, crypt {crypt_speedup:.2}x"
            ),
        );
    }
}

fn median_time(p: &corpus::CorpusProgram, n_slaves: usize, size: usize, reps: usize) -> f64 {
    let vp = corpus::load(p);
    let args = corpus::generate_args(p.name, size, 17);
    let cfg = RunConfig {
        backend: Backend::Sm,
        n_slaves,
        sm: ExecConfigSM { pool_size: n_slaves, watchdog: None, stress_seed: None },
        ..Default::default()
    };
    let mut times = Vec::new();
    for _ in 0..reps {
        let t = Instant::now();
        run_method(&vp, &registry(), p.entry, &args, &cfg).unwrap();
        times.push(t.elapsed().as_secs_f64());
    }
    somd::bench::median(&times)
}

/// Criterion 9: the factorization's fine-grained repeated invocations
/// carry visible per-call overhead; characterized, not asserted.
#[test]
fn criterion_09_lufact_overhead_report() {
    let p = corpus::find("lufact").unwrap();
    let vp = corpus::load(p);
    let size = 50usize;
    let args = corpus::generate_args("lufact", size, 23);

    let t = Instant::now();
    let oracle = interpret(&vp, "lufact", &args).unwrap();
    let seq_time = t.elapsed().as_secs_f64();

    let cfg = sm_config(4);
    let t = Instant::now();
    let out = run_method(&vp, &registry(), "lufact", &args, &cfg).unwrap();
    let sm_time = t.elapsed().as_secs_f64();
    assert!(approx_eq(&out.value, &oracle, 0.0), "outputs must agree regardless of timing");

    let invocations = size - 1; // one distributed elimination per column
    let ratio = sm_time / seq_time;
    pass(
        9,
        &format!(
            "report-only: {invocations} distributed invocations; sm(4)/seq wall ratio {ratio:.2} \
             (per-invocation partition+spawn+reduce overhead dominates this workload)"
        ),
    );
}

/// Criterion 10: decipher(cipher(x)) restores x bitwise, including
/// non-multiple-of-eight lengths.
#[test]
fn criterion_10_crypt_round_trip() {
    let p = corpus::find("crypt").unwrap();
    let vp = corpus::load(p);
    let mut rng = SmallRng::seed_from_u64(0xC0DE);
    for len in [0usize, 1, 7, 8, 100_000] {
        let bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        let keys: [i32; 4] = corpus::crypt_keys(&mut rng);
        let blocks = Value::array(pack_blocks(&bytes));
        let mut args = vec![blocks];
        args.extend(keys.map(Value::int));

        let cfg = sm_config(4);
        let ciphered = run_method(&vp, &registry(), "cipher", &args, &cfg).unwrap().value;
        let mut back_args = vec![ciphered];
        back_args.extend(keys.map(Value::int));
        let deciphered = run_method(&vp, &registry(), "decipher", &back_args, &cfg).unwrap().value;

        let arr: &ArrayData = deciphered.as_array().expect("array result");
        assert_eq!(unpack_blocks(arr, len), bytes, "round trip at length {len}");
    }
    pass(10, "decipher(cipher(x)) bitwise for lengths 0, 1, 7, 8, 100000");
}
