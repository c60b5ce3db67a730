//! Brute-force and Monte Carlo oracles for the worked examples. Every check
//! draws its reference value from code that shares nothing with the path it
//! checks beyond the public entry point.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rachsim::analytic::{
    compare_with_simulation, exact_drain_time, fluid_capacity, fluid_drain_trajectory, optimize_retx_probability,
    slot_success_probability, stability_boundary, ContentionModel, RetxPolicy,
};
use rachsim::cobalt::{
    build_frame_map, cobalt_transmit, resolve_tti, signaling_message_count, CellTag, CobaltConfig, CobaltDevice,
    CobaltOutcome, DeliveryPath, DeliveryRecord,
};
use rachsim::energy::{battery_lifetime, idle_cycle_energy, wh_to_mj, DrxConfig, PowerModel, MS_PER_DAY};
use rachsim::kernel::{RngStream, SimTime};
use rachsim::rach::{
    eab_gate, enb_process_opportunity, msg1_retx_decision, select_preamble, CollisionModel, DetectionModel,
    EabConfig, EabDecision, Msg1Outcome, PrachConfig, RetxDecision, SignalingCounts, Transmission,
};
use rachsim::scenario::parse_scenario;
use rachsim::traffic::{
    next_data_arrival, sample_activation_time, sample_activation_times, sample_beta, PriorityClass, TrafficLaw,
    TrafficModel,
};
use rachsim::Simulation;

pub type Check = fn() -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("uniform draw bins", uniform_draw_bins),
    ("uniform activations per second", uniform_activations_per_second),
    ("beta activation peak", beta_activation_peak),
    ("beta moments", beta_moments),
    ("poisson mean gap", poisson_mean_gap),
    ("barring admits half", barring_admits_half),
    ("two-device preamble clash", two_device_preamble_clash),
    ("singletons for 30 devices", singletons_for_30_devices),
    ("singleton fraction for 100 devices", singleton_fraction_for_100_devices),
    ("clean access delay", clean_access_delay_matches_timers),
    ("msg1 decisions at p = 0.5", msg1_decisions_at_half),
    ("clean access energy", clean_access_energy_hand_sum),
    ("paging cycle energy ratio", paging_cycle_energy_ratio),
    ("ten-year battery exists", ten_year_battery_exists),
    ("frame map cell count", frame_map_cell_count),
    ("contention region deliveries", contention_region_deliveries),
    ("signaling message counts", signaling_message_counts),
    ("slot success by enumeration", slot_success_by_enumeration),
    ("optimal probability by grid", optimal_probability_by_grid),
    ("drain time by monte carlo", drain_time_by_monte_carlo),
    ("fluid drain vs population", fluid_drain_vs_population),
    ("stability boundary by bisection", stability_boundary_by_bisection),
    ("tiny instance comparison", tiny_instance_comparison),
    ("large instance delay comparison", large_instance_delay_comparison),
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(what: &str, got: f64, want: f64, tol: f64) -> Result<(), String> {
    ensure((got - want).abs() <= tol, || format!("{what}: got {got}, want {want} +- {tol}"))
}

fn close_rel(what: &str, got: f64, want: f64, rel: f64) -> Result<(), String> {
    ensure((got - want).abs() <= rel * want.abs(), || {
        format!("{what}: got {got}, want {want} within {:.1}%", rel * 100.0)
    })
}

/// Upper chi-square quantile at z = 3.09 (0.1% tail), Wilson-Hilferty.
fn chi_square_limit(df: f64) -> f64 {
    let z = 3.09;
    let a = 2.0 / (9.0 * df);
    df * (1.0 - a + z * a.sqrt()).powi(3)
}

fn chi_square(counts: &[u64], expected: f64) -> f64 {
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

/// Singleton bins when `balls` land uniformly in `bins`, by direct simulation.
fn mc_singletons(balls: u32, bins: u32, trials: u32, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut occ = vec![0u32; bins as usize];
    let mut total = 0u64;
    for _ in 0..trials {
        occ.iter_mut().for_each(|o| *o = 0);
        for _ in 0..balls {
            occ[r.random_range(0..bins) as usize] += 1;
        }
        total += occ.iter().filter(|&&o| o == 1).count() as u64;
    }
    total as f64 / f64::from(trials)
}

pub fn uniform_draw_bins() -> Result<(), String> {
    let mut s = RngStream::new(11, 3);
    let mut bins = vec![0u64; 54];
    for _ in 0..1_000_000 {
        bins[s.draw_uniform(54).map_err(|e| e.to_string())? as usize] += 1;
    }
    let chi = chi_square(&bins, 1e6 / 54.0);
    ensure(chi < chi_square_limit(53.0), || format!("chi-square {chi} at 10^6 draws"))?;
    // At 10^6 draws 1% of a bin is about 1.4 standard deviations, so the
    // per-bin bound is checked where it is meaningful.
    let mut bins = vec![0u64; 54];
    for _ in 0..10_000_000 {
        bins[s.draw_uniform(54).map_err(|e| e.to_string())? as usize] += 1;
    }
    let want = 1e7 / 54.0;
    for (i, &c) in bins.iter().enumerate() {
        close_rel(&format!("bin {i}"), c as f64, want, 0.01)?;
    }
    Ok(())
}

fn per_second(n: u32, seed: u64) -> Result<Vec<u64>, String> {
    let model = TrafficModel {
        law: TrafficLaw::Uniform { span_ms: 60_000 },
        population: n,
    };
    let times = sample_activation_times(&model, &mut RngStream::new(seed, 1)).map_err(|e| e.to_string())?;
    let mut counts = vec![0u64; 60];
    for t in times {
        counts[(t.ms() / 1000) as usize] += 1;
    }
    Ok(counts)
}

pub fn uniform_activations_per_second() -> Result<(), String> {
    // 5% of 1000 is 1.6 standard deviations; with 60 seconds some second is
    // almost surely outside. The count law is checked at N = 60000 by
    // chi-square and the 5% band at ten times the population.
    let counts = per_second(60_000, 5)?;
    ensure(counts.iter().sum::<u64>() == 60_000, || "lost activations".into())?;
    let chi = chi_square(&counts, 1000.0);
    ensure(chi < chi_square_limit(59.0), || format!("chi-square {chi} over 60 s"))?;
    for (s, &c) in per_second(600_000, 6)?.iter().enumerate() {
        close_rel(&format!("second {s}"), c as f64, 10_000.0, 0.05)?;
    }
    Ok(())
}

pub fn beta_activation_peak() -> Result<(), String> {
    let law = TrafficLaw::Beta {
        alpha: 3.0,
        beta: 4.0,
        span_ms: 10_000,
    };
    let mut s = RngStream::new(3, 9);
    let mut bins = vec![0u64; 20];
    for _ in 0..1_000_000 {
        let t = sample_activation_time(&law, &mut s).map_err(|e| e.to_string())?;
        bins[((t.ms() / 500) as usize).min(19)] += 1;
    }
    let peak = (0..20).max_by_key(|&i| bins[i]).unwrap();
    // Mode (a - 1) / (a + b - 2) of the span is 4000 ms: the 3.5-4.0 s or 4.0-4.5 s bin.
    let mode_ms = (3.0 - 1.0) / (3.0 + 4.0 - 2.0) * 10_000.0;
    ensure(peak == 7 || peak == 8, || format!("peak bin {peak}, mode at {mode_ms} ms"))
}

pub fn beta_moments() -> Result<(), String> {
    let mut s = RngStream::new(4, 2);
    let xs: Vec<f64> = (0..100_000)
        .map(|_| sample_beta(3.0, 4.0, &mut s))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    close("mean", mean, 3.0 / 7.0, 0.01)?;
    close_rel("variance", var, 12.0 / (49.0 * 8.0), 0.10)
}

pub fn poisson_mean_gap() -> Result<(), String> {
    let law = TrafficLaw::Poisson { rate_per_s: 1.0 };
    let mut s = RngStream::new(8, 8);
    let mut now = SimTime::ZERO;
    for _ in 0..100_000 {
        now = next_data_arrival(&law, now, &mut s).map_err(|e| e.to_string())?;
    }
    close_rel("mean gap", now.ms() as f64 / 1e5, 1000.0, 0.02)
}

pub fn barring_admits_half() -> Result<(), String> {
    let cfg = EabConfig {
        enabled: true,
        barring_factor: 0.5,
        applies_to: vec![PriorityClass::LowPriority],
        ..EabConfig::default()
    };
    let mut s = RngStream::new(2, 5);
    let admitted = (0..100_000)
        .filter(|_| eab_gate(PriorityClass::LowPriority, &cfg, &mut s) == EabDecision::Admitted)
        .count();
    close("admitted fraction", admitted as f64 / 1e5, 0.5, 0.01)
}

pub fn two_device_preamble_clash() -> Result<(), String> {
    let (mut a, mut b) = (RngStream::new(6, 1), RngStream::new(6, 2));
    let trials = 100_000;
    let mut same = 0;
    for _ in 0..trials {
        let x = select_preamble(54, &mut a).map_err(|e| e.to_string())?;
        let y = select_preamble(54, &mut b).map_err(|e| e.to_string())?;
        same += u32::from(x == y);
    }
    let p = 1.0 / 54.0;
    let sd = (p * (1.0 - p) / f64::from(trials)).sqrt();
    close("P(same preamble)", f64::from(same) / f64::from(trials), p, 3.0 * sd)
}

fn ideal_prach(collision: CollisionModel) -> PrachConfig {
    PrachConfig {
        detection_model: DetectionModel::AlwaysDetected,
        collision_model: collision,
        ..PrachConfig::default()
    }
}

fn opportunity(u: u32, cfg: &PrachConfig, dev: &mut RngStream, cell: &mut RngStream) -> Result<(u32, Vec<Msg1Outcome>), String> {
    let txs: Vec<Transmission> = (0..u)
        .map(|d| {
            Ok(Transmission {
                device: d,
                preamble: select_preamble(cfg.num_preambles, dev)?,
                attempt: 1,
            })
        })
        .collect::<Result<_, rachsim::rach::RachError>>()
        .map_err(|e| e.to_string())?;
    let r = enb_process_opportunity(&txs, cfg, cell).map_err(|e| e.to_string())?;
    Ok((r.singleton_preambles, r.outcomes))
}

pub fn singletons_for_30_devices() -> Result<(), String> {
    let cfg = ideal_prach(CollisionModel::CollideAtMsg3);
    let (mut dev, mut cell) = (RngStream::new(12, 1), RngStream::new(12, 0));
    let trials = 20_000;
    let mut total = 0u64;
    for _ in 0..trials {
        total += u64::from(opportunity(30, &cfg, &mut dev, &mut cell)?.0);
    }
    let oracle = mc_singletons(30, 54, 100_000, 1);
    close_rel("singletons", total as f64 / f64::from(trials), oracle, 0.02)
}

pub fn singleton_fraction_for_100_devices() -> Result<(), String> {
    let cfg = ideal_prach(CollisionModel::CollideAtMsg3);
    let (mut dev, mut cell) = (RngStream::new(13, 1), RngStream::new(13, 0));
    let mut clean = 0u64;
    for _ in 0..10_000 {
        let (_, outcomes) = opportunity(100, &cfg, &mut dev, &mut cell)?;
        clean += outcomes
            .iter()
            .filter(|o| **o == Msg1Outcome::RarGranted { contended: false })
            .count() as u64;
    }
    let oracle = mc_singletons(100, 54, 50_000, 2) / 100.0;
    close_rel("singleton fraction", clean as f64 / 1e6, oracle, 0.02)
}

fn lone_device(seed: u64) -> Result<rachsim::MetricsReport, String> {
    let text = format!(
        "seed = {seed}\ntrace = true\npopulation.low.n = 1\npopulation.low.law = \"uniform\"\n\
         population.low.span_ms = 1000\nprach.detection_model = \"always_detected\"\n"
    );
    let sc = parse_scenario(&text).map_err(|e| e.to_string())?.scenario;
    Simulation::run(sc).map_err(|e| e.to_string())
}

/// Hand timeline of an uncontended access from activation `a` with default timers:
/// wait for the next 5-sf opportunity, preamble, 3 sf to the RAR, 5 sf to Msg3,
/// Msg3 itself, 5 sf to Msg4.
fn hand_timeline(a: u64) -> (u64, u64, u64, u64) {
    let wait = (5 - a % 5) % 5;
    let delay = wait + 3 + 5 + 1 + 5;
    let idle_ms = wait + 5;
    let rx_ms = 2 + 5;
    let tx_ms = 2;
    (delay, idle_ms, rx_ms, tx_ms)
}

pub fn clean_access_delay_matches_timers() -> Result<(), String> {
    for seed in 1..=20 {
        let r = lone_device(seed)?;
        let rec = &r.trace.as_ref().ok_or("no trace")?[0];
        let a = rec.activation_ms.ok_or("not activated")?;
        let done = rec.completion_ms.ok_or("no completion")?;
        ensure(rec.preambles_sent == 1, || "needed a retry".into())?;
        let (delay, ..) = hand_timeline(a);
        ensure(done - a == delay, || format!("activation {a}: delay {} vs {delay}", done - a))?;
    }
    Ok(())
}

pub fn msg1_decisions_at_half() -> Result<(), String> {
    let mut s = RngStream::new(14, 4);
    let mut now = 0;
    for _ in 0..100_000 {
        if msg1_retx_decision(Some(0.5), &mut s).map_err(|e| e.to_string())? == RetxDecision::TransmitNow {
            now += 1;
        }
    }
    close("transmit fraction", f64::from(now) / 1e5, 0.5, 0.01)
}

pub fn clean_access_energy_hand_sum() -> Result<(), String> {
    let pw = PowerModel::default();
    for seed in 1..=20 {
        let r = lone_device(seed)?;
        let rec = &r.trace.as_ref().ok_or("no trace")?[0];
        let (_, idle, rx, tx) = hand_timeline(rec.activation_ms.unwrap());
        let tx_mw = pw.p_tx_base_mw + 10f64.powf(13.0 / 10.0);
        let want = (idle as f64 * pw.p_idle_mw + rx as f64 * pw.p_rx_mw + tx as f64 * tx_mw) / 1000.0;
        close("access energy", rec.energy_mj, want, 1e-9)?;
    }
    Ok(())
}

/// Sums the DRX schedule millisecond by millisecond.
fn brute_idle_energy(drx: &DrxConfig, pw: &PowerModel, horizon_ms: u64) -> f64 {
    let mut uj = 0.0;
    let mut wakeups = 0u64;
    for t in 0..horizon_ms {
        let phase = t % drx.paging_cycle_ms;
        if phase == 0 {
            wakeups += 1;
        }
        uj += if phase < drx.on_duration_ms { pw.p_rx_mw } else { pw.p_inactive_mw };
    }
    uj / 1000.0 + wakeups as f64 * drx.wakeup_overhead_mj
}

pub fn paging_cycle_energy_ratio() -> Result<(), String> {
    let pw = PowerModel::default();
    let mut energies = Vec::new();
    for cycle in [2560, 40_960] {
        let drx = DrxConfig {
            enabled: true,
            paging_cycle_ms: cycle,
            ..DrxConfig::default()
        };
        let brute = brute_idle_energy(&drx, &pw, MS_PER_DAY);
        let closed = idle_cycle_energy(&drx, &pw, MS_PER_DAY).map_err(|e| e.to_string())?;
        close_rel(&format!("cycle {cycle}"), closed, brute, 1e-9)?;
        energies.push(closed);
    }
    let ratio = energies[0] / energies[1];
    ensure(ratio > 10.0, || format!("2.56 s vs 40.96 s ratio only {ratio}"))
}

pub fn ten_year_battery_exists() -> Result<(), String> {
    let pw = PowerModel::default();
    let battery = wh_to_mj(5.0);
    let mut found = None;
    let mut cycle = 2560u64;
    while cycle <= 10_485_760 {
        let drx = DrxConfig {
            enabled: true,
            paging_cycle_ms: cycle,
            ..DrxConfig::default()
        };
        let per_cycle = drx.on_duration_ms as f64 * pw.p_rx_mw / 1000.0
            + (cycle - drx.on_duration_ms) as f64 * pw.p_inactive_mw / 1000.0
            + drx.wakeup_overhead_mj;
        let daily_oracle = per_cycle * MS_PER_DAY as f64 / cycle as f64;
        let daily = idle_cycle_energy(&drx, &pw, MS_PER_DAY).map_err(|e| e.to_string())?;
        close_rel(&format!("daily energy at {cycle} ms"), daily, daily_oracle, 0.01)?;
        let days = battery_lifetime(daily, battery).map_err(|e| e.to_string())?;
        if days > 3650.0 && found.is_none() {
            found = Some((cycle, days));
        }
        cycle *= 2;
    }
    ensure(found.is_some(), || "no paging cycle reaches ten years".into())
}

pub fn frame_map_cell_count() -> Result<(), String> {
    let prach = PrachConfig::default();
    let cobalt = CobaltConfig::default();
    let map = build_frame_map(25, &prach, Some(&cobalt)).map_err(|e| e.to_string())?;
    let mut h2h = 0;
    let mut other = 0;
    for sf in 0..5u64 {
        let row = &map.cells[(sf % map.window_sf) as usize];
        ensure(row.len() == 25, || format!("row {sf} has {} RBs", row.len()))?;
        for tag in row {
            if *tag == CellTag::PuschH2h {
                h2h += 1;
            } else {
                other += 1;
            }
        }
    }
    // 125 cells less 2 + 2 PUCCH edges per subframe, one 6-RB PRACH and 4 contention RBs per subframe.
    let want = 5 * 25 - 5 * 4 - 6 - 5 * 4;
    ensure(h2h == want && other == 125 - want, || format!("h2h cells {h2h}, want {want}"))?;
    ensure(map.counts_over(5).h2h == want as u64, || "counts_over disagrees".into())
}

pub fn contention_region_deliveries() -> Result<(), String> {
    let cfg = CobaltConfig {
        region_rbs_per_tti: 10,
        ..CobaltConfig::default()
    };
    let mut s = RngStream::new(15, 1);
    let trials = 10_000;
    let mut delivered = 0usize;
    for _ in 0..trials {
        let attempts = (0..20)
            .map(|id| {
                let mut dev = CobaltDevice {
                    pending: true,
                    attempts: 0,
                };
                cobalt_transmit(id, &mut dev, &cfg, &mut s)
            })
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| e.to_string())?;
        delivered += resolve_tti(&attempts, &cfg, SimTime(0))
            .iter()
            .filter(|o| matches!(o, CobaltOutcome::Delivered(_)))
            .count();
    }
    let oracle = mc_singletons(20, 10, 100_000, 3);
    close_rel("delivered", delivered as f64 / f64::from(trials), oracle, 0.02)
}

pub fn signaling_message_counts() -> Result<(), String> {
    let legacy = DeliveryRecord {
        rach: SignalingCounts {
            msg1: 1,
            msg2: 1,
            msg3: 1,
            msg4: 1,
        },
        cobalt_attempts: 0,
        delivered_via: Some(DeliveryPath::LegacyRach),
    };
    let direct = DeliveryRecord {
        rach: SignalingCounts::default(),
        cobalt_attempts: 1,
        delivered_via: Some(DeliveryPath::Cobalt),
    };
    // Msg1..Msg4, grant, data / data, ack.
    ensure(signaling_message_count(&legacy) == 6, || "legacy count".into())?;
    ensure(signaling_message_count(&direct) == 2, || "direct count".into())
}

/// Tagged-device success by enumerating every channel assignment (p = 1).
fn enumerate(u: u32, m: u32) -> f64 {
    let total = u64::from(m).pow(u);
    let mut ok = 0u64;
    for code in 0..total {
        let ch: Vec<u64> = (0..u).map(|i| (code / u64::from(m).pow(i)) % u64::from(m)).collect();
        if ch[1..].iter().all(|&c| c != ch[0]) {
            ok += 1;
        }
    }
    ok as f64 / total as f64
}

pub fn slot_success_by_enumeration() -> Result<(), String> {
    for (u, m, want) in [(2, 2, 0.5), (3, 2, 0.25)] {
        let e = enumerate(u, m);
        close(&format!("enumeration U={u} M={m}"), e, want, 1e-12)?;
        let model = ContentionModel::new(m, u, 1.0).map_err(|e| e.to_string())?;
        close(&format!("model U={u} M={m}"), slot_success_probability(&model), e, 1e-12)?;
    }
    Ok(())
}

pub fn optimal_probability_by_grid() -> Result<(), String> {
    for (m, u, want) in [(5u32, 10u32, 0.5), (54, 540, 0.1)] {
        let thr = |p: f64| f64::from(u) * p * (1.0 - p / f64::from(m)).powi(u as i32 - 1);
        let grid = (1..=10_000)
            .map(|i| f64::from(i) * 1e-4)
            .max_by(|a, b| thr(*a).total_cmp(&thr(*b)))
            .unwrap();
        close(&format!("grid M={m} U={u}"), grid, want, 1e-4)?;
        close(&format!("optimizer M={m} U={u}"), optimize_retx_probability(m, u), grid, 1e-4)?;
    }
    Ok(())
}

/// Drain times of `u` always-transmitting devices on `m` channels.
fn mc_drain(u: u32, m: u32, trials: u32, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let mut occ = vec![0u32; m as usize];
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..trials {
        let mut n = u;
        let mut t = 0u32;
        while n > 0 {
            t += 1;
            occ.iter_mut().for_each(|o| *o = 0);
            for _ in 0..n {
                occ[r.random_range(0..m) as usize] += 1;
            }
            n -= occ.iter().filter(|&&o| o == 1).count() as u32;
        }
        sum += f64::from(t);
        sq += f64::from(t) * f64::from(t);
    }
    let k = f64::from(trials);
    let mean = sum / k;
    (mean, ((sq / k - mean * mean) / k).sqrt())
}

pub fn drain_time_by_monte_carlo() -> Result<(), String> {
    let two = exact_drain_time(2, 2, RetxPolicy::Fixed(1.0)).map_err(|e| e.to_string())?;
    close("U=2 M=2 exact", two.mean_drain_slots, 2.0, 1e-9)?;
    let (mc, se) = mc_drain(2, 2, 1_000_000, 4);
    close("U=2 M=2 monte carlo", mc, 2.0, 3.0 * se)?;
    let three = exact_drain_time(2, 3, RetxPolicy::Fixed(1.0)).map_err(|e| e.to_string())?;
    let (mc, se) = mc_drain(3, 2, 1_000_000, 5);
    close("U=3 M=2", three.mean_drain_slots, mc, 3.0 * se)
}

/// Mean backlog per slot of `n0` devices draining with p = min(1, M/n).
fn mc_adaptive_backlog(n0: u32, m: u32, slots: usize, runs: u32, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    let mut mean = vec![0.0; slots + 1];
    let mut occ = vec![0u32; m as usize];
    for _ in 0..runs {
        let mut n = n0;
        mean[0] += f64::from(n);
        for slot in mean.iter_mut().skip(1) {
            if n > 0 {
                let p = (f64::from(m) / f64::from(n)).min(1.0);
                occ.iter_mut().for_each(|o| *o = 0);
                for _ in 0..n {
                    if r.random::<f64>() < p {
                        occ[r.random_range(0..m) as usize] += 1;
                    }
                }
                n -= occ.iter().filter(|&&o| o == 1).count() as u32;
            }
            *slot += f64::from(n);
        }
    }
    mean.iter().map(|s| s / f64::from(runs)).collect()
}

pub fn fluid_drain_vs_population() -> Result<(), String> {
    let policy = RetxPolicy::MOverBacklog { scale: 1.0 };
    let none = |_t: f64| 0.0;
    let traj = fluid_drain_trajectory(54, &none, 100.0, policy, 60.0).map_err(|e| e.to_string())?;
    ensure(traj.backlog.windows(2).all(|w| w[1] <= w[0]), || "fluid backlog rose".into())?;
    // Drain time: first slot the fluid backlog falls below one device.
    let drain = traj.backlog.iter().position(|&n| n < 1.0).ok_or("fluid did not drain")?;
    let sim = mc_adaptive_backlog(100, 54, drain, 20_000, 6);
    // Error is taken relative to the initial backlog; pointwise ratios blow up
    // as both backlogs approach zero.
    for decile in 1..=10 {
        let t = (drain as f64 * f64::from(decile) / 10.0).round() as usize;
        close(&format!("backlog at decile {decile} (slot {t})"), traj.backlog[t], sim[t], 0.10 * 100.0)?;
    }
    Ok(())
}

/// Euler-integrated backlog from empty under constant arrivals stays bounded.
fn euler_stable(m: u32, lambda: f64) -> bool {
    let mf = f64::from(m);
    let mut n: f64 = 0.0;
    for _ in 0..400_000 {
        let p = if n > 0.0 { (mf / n).min(1.0) } else { 1.0 };
        let g = if n > 0.0 { n * p * (1.0 - p / mf).powf(n - 1.0) } else { 0.0 };
        n = (n + 0.05 * (lambda - g)).max(0.0);
        if n > 10.0 * mf {
            return false;
        }
    }
    true
}

pub fn stability_boundary_by_bisection() -> Result<(), String> {
    let policy = RetxPolicy::MOverBacklog { scale: 1.0 };
    let (mut lo, mut hi) = (0.0, 54.0);
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if euler_stable(54, mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let cap = fluid_capacity(54, policy);
    close_rel("capacity", cap, oracle, 0.01)?;
    let boundary = stability_boundary(54, policy, 0.0, 10_000.0).map_err(|e| e.to_string())?;
    close_rel("stability boundary", boundary, oracle, 0.01)?;
    let over = move |_t: f64| 1.05 * oracle;
    let t = fluid_drain_trajectory(54, &over, 0.0, policy, 2_000.0).map_err(|e| e.to_string())?;
    let last = *t.backlog.last().unwrap();
    ensure(!t.stable && last > t.backlog[t.backlog.len() / 2], || {
        format!("arrivals above capacity did not diverge (n = {last})")
    })
}

fn slot_run(m: u32, u: u32, p: f64, drain_rounds: Option<u32>, seed: u64) -> Result<rachsim::MetricsReport, String> {
    let tail = match drain_rounds {
        None => "analytic.saturated = true\nduration_sf = 500050".to_string(),
        Some(r) => format!("analytic.saturated = false\nanalytic.rounds = {r}\nduration_sf = 1000000000"),
    };
    let text = format!(
        "seed = {seed}\nmode = \"analytic_compare\"\npopulation.low.n = {u}\npopulation.low.law = \"uniform\"\n\
         prach.num_preambles = {m}\nprach.detection_model = \"always_detected\"\n\
         prach.collision_model = \"destroyed_at_msg1\"\nprach.retx_control = \"fixed\"\n\
         prach.msg1_retx_probability = {p}\n{tail}\n"
    );
    let sc = parse_scenario(&text).map_err(|e| e.to_string())?.scenario;
    Simulation::run(sc).map_err(|e| e.to_string())
}

pub fn tiny_instance_comparison() -> Result<(), String> {
    let report = slot_run(2, 2, 1.0, None, 21)?;
    let model = ContentionModel::new(2, 2, 1.0).map_err(|e| e.to_string())?;
    let dev = compare_with_simulation(&model, &report).map_err(|e| e.to_string())?;
    let d = dev.get("slot_success_probability").ok_or("metric missing")?;
    ensure(d.std_errors.unwrap() <= 3.0, || format!("{d:?}"))?;
    // Independent reference: two devices, two channels, both always transmit.
    let mut r = rng(7);
    let hits = (0..1_000_000).filter(|_| r.random_range(0..2) != r.random_range(0..2)).count();
    close("monte carlo reference", d.analytic, hits as f64 / 1e6, 0.002)
}

pub fn large_instance_delay_comparison() -> Result<(), String> {
    let p = 54.0 / 200.0;
    let report = slot_run(54, 200, p, Some(400), 22)?;
    let model = ContentionModel::new(54, 200, p).map_err(|e| e.to_string())?;
    let dev = compare_with_simulation(&model, &report).map_err(|e| e.to_string())?;
    let d = dev.get("mean_delay_slots").ok_or("metric missing")?;
    ensure(d.relative.abs() <= 0.05 && d.within_tolerance, || format!("{d:?}"))
}
