//! Acceptance gate. Runs every criterion, prints one line per criterion and
//! exits non-zero if any of them fails.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use herdlink::analytics::{grazing_time, haversine_m, LatLon};
use herdlink::codec::{decode_frame, encode_frame, time_on_air, LoraParams, StatusFlags, TelemetryFrame, FRAME_LEN};
use herdlink::energy::{
    battery_lifetime_days, daily_consumption, reference_budgets, self_sustainability_area_factor, BatteryModel,
    HarvestModel,
};
use herdlink::fusion::{LowPass, CORNER_HZ};
use herdlink::ingest::{ingest_reader, run_end_to_end, FrameStore, LogStore, PipelineConfig};
use herdlink::simulator::gnss::sample_gnss;
use herdlink::simulator::{run_simulation, FirmwareSchedule, FollowParams, Mode, SimConfig};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    ((value - target) / target).abs() <= rel
}

fn energy_sum() -> Outcome {
    // hourly rows: radio, GNSS, accelerometer, magnetometer, MCU
    let oracle = (0.024 + 11.53 + 0.216 + 2.43 + 7.13) * 24.0;
    let daily = daily_consumption(&reference_budgets()).map_err(|e| e.to_string())?;
    check(
        (daily - oracle).abs() < 1e-9 && within(daily, 511.9, 0.001),
        format!("{daily:.3} J/day (oracle {oracle:.3}, reference 511.9)"),
    )
}

fn lifetime() -> Outcome {
    let daily = daily_consumption(&reference_budgets()).map_err(|e| e.to_string())?;
    let battery = BatteryModel::default();
    let harvest = HarvestModel::default().with_efficiency(0.8);
    let base = battery_lifetime_days(&battery, daily, None)
        .map_err(|e| e.to_string())?
        .days()
        .ok_or("battery-only run cannot be self-sustaining")?;
    let with = battery_lifetime_days(&battery, daily, Some(&harvest))
        .map_err(|e| e.to_string())?
        .days()
        .ok_or("unexpectedly self-sustaining")?;
    let oracle_base = 5.2 * 3600.0 * 3.7 / 511.92;
    let oracle_with = 5.2 * 3600.0 * 3.7 / (511.92 - 0.8 * 184.9);
    let gain = with / base - 1.0;
    check(
        (base - oracle_base).abs() < 1e-6
            && (with - oracle_with).abs() < 1e-6
            && (120.0..=150.0).contains(&base)
            && (0.38..=0.44).contains(&gain),
        format!("battery-only {base:.1} d, with harvest {with:.1} d, gain {:.1}%", gain * 100.0),
    )
}

fn sustainability() -> Outcome {
    let daily = daily_consumption(&reference_budgets()).map_err(|e| e.to_string())?;
    let f = self_sustainability_area_factor(daily, &HarvestModel::default().with_efficiency(1.0))
        .map_err(|e| e.to_string())?;
    check(
        (f - 511.92 / 184.9).abs() < 1e-9 && within(f, 2.78, 0.005),
        format!("area factor {f:.3} (reference 2.78)"),
    )
}

/// Independent time-on-air: explicit header, CRC on, no LDRO at SF8/125k.
fn toa_oracle(sf: f64, bw: f64, cr: f64, preamble: f64, pl: f64) -> f64 {
    let t_sym = 2f64.powf(sf) / bw;
    let num = 8.0 * pl - 4.0 * sf + 28.0 + 16.0;
    let n = 8.0 + ((num / (4.0 * sf)).ceil() * (cr + 4.0)).max(0.0);
    (preamble + 4.25) * t_sym + n * t_sym
}

fn airtime() -> Outcome {
    let toa = time_on_air(&LoraParams::eu868(8), FRAME_LEN as u32).map_err(|e| e.to_string())?;
    let oracle = toa_oracle(8.0, 125_000.0, 1.0, 8.0, 44.0);
    check(
        (toa - oracle).abs() < 1e-12 && within(toa, 0.170, 0.10),
        format!("{:.1} ms (oracle {:.1} ms, reference 170 ms)", toa * 1e3, oracle * 1e3),
    )
}

fn firmware_cadence() -> Outcome {
    let config = SimConfig {
        animals: 1,
        duration_s: 86_400.0,
        ..SimConfig::default()
    };
    let out = run_simulation(&config).map_err(|e| e.to_string())?;
    let fw = &out.animals[0].firmware;
    let total = fw.ledger.total_j();
    check(
        fw.frames.len() == 96 && within(total, 511.9, 0.02),
        format!("{} frames, ledger {total:.2} J/day", fw.frames.len()),
    )
}

fn random_frame(rng: &mut ChaCha8Rng) -> TelemetryFrame {
    TelemetryFrame {
        device_id: rng.random(),
        sequence: rng.random(),
        frame_timestamp: rng.random(),
        latitude_e7: rng.random_range(-900_000_000..=900_000_000),
        longitude_e7: rng.random_range(-1_800_000_000..=1_800_000_000),
        fix_timestamp: rng.random(),
        fix_accuracy_dm: rng.random(),
        heading_q8: rng.random(),
        head_pitch_deg: rng.random_range(-90..=90),
        movement_avg_dm: rng.random(),
        battery_mv_div20: rng.random(),
        temperature_dc: rng.random(),
        status_flags: StatusFlags::new(rng.random(), rng.random(), rng.random()),
        ..TelemetryFrame::default()
    }
}

fn codec_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..10_000 {
        let f = random_frame(&mut rng);
        let bytes = encode_frame(&f).map_err(|e| format!("frame {i}: {e}"))?;
        if bytes.len() != FRAME_LEN {
            return Err(format!("frame {i}: {} bytes", bytes.len()));
        }
        let back = decode_frame(&bytes).map_err(|e| format!("frame {i}: {e}"))?;
        if back != f {
            return Err(format!("frame {i} differs after round trip"));
        }
    }
    Ok("10000 frames identical, all 31 bytes".into())
}

/// Steady-state amplitude of the filter response to a unit sine, measured
/// by projection over whole periods.
fn sine_gain(freq: f64, dt: f64) -> Result<f64, String> {
    let mut lp = LowPass::new(0.0);
    let settle = (20.0 / freq / dt) as usize;
    let measure = (10.0 / freq / dt).round() as usize;
    let (mut s, mut c) = (0.0, 0.0);
    for k in 0..settle + measure {
        let t = k as f64 * dt;
        let y = lp.step((2.0 * PI * freq * t).sin(), dt, CORNER_HZ).map_err(|e| e.to_string())?;
        if k >= settle {
            s += y * (2.0 * PI * freq * t).sin();
            c += y * (2.0 * PI * freq * t).cos();
        }
    }
    Ok(2.0 * (s * s + c * c).sqrt() / measure as f64)
}

fn filter_response() -> Outcome {
    let dt = 1.0 / 60.0;
    let gain = sine_gain(CORNER_HZ, dt)?;
    let mut lp = LowPass::new(0.0);
    let mut y = 0.0;
    for _ in 0..(120.0 / dt) as usize {
        y = lp.step(1.0, dt, CORNER_HZ).map_err(|e| e.to_string())?;
    }
    let target = 1.0 / 2f64.sqrt();
    check(
        within(gain, target, 0.02) && (y - 1.0).abs() <= 1e-3,
        format!("gain at corner {gain:.4} (target {target:.4}), DC gain {y:.6}"),
    )
}

fn grazing_classifier() -> Outcome {
    let config = SimConfig {
        seed: 8,
        animals: 2,
        duration_s: 3.0 * 86_400.0,
        schedule: FirmwareSchedule::five_minute(),
        ..SimConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e2e = run_end_to_end(&config, &PipelineConfig::default(), dir.path()).map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for a in &e2e.simulation.animals {
        let records = &e2e.report.analysis.records[&a.device_id];
        // a record covers the measurement window ending at its fix
        let window = config.schedule.measurement_period_s;
        let correct = records
            .iter()
            .filter(|r| {
                let t = r.interval_start - f64::from(config.start_unix);
                (a.trajectory.dominant_mode(t - window, t) == Mode::Grazing) == r.grazing
            })
            .count();
        let accuracy = correct as f64 / records.len() as f64;
        let estimated = grazing_time(records).map_err(|e| e.to_string())?;
        let truth = a.trajectory.time_in(Mode::Grazing);
        let err = (estimated - truth).abs() / truth;
        ok &= accuracy >= 0.95 && err <= 0.05;
        details.push(format!(
            "device {}: accuracy {:.1}%, grazing {:.2} h vs truth {:.2} h ({:.1}%)",
            a.device_id,
            accuracy * 100.0,
            estimated / 3600.0,
            truth / 3600.0,
            err * 100.0
        ));
    }
    check(ok, details.join("; "))
}

fn correlation_recovery() -> Outcome {
    let config = SimConfig {
        seed: 9,
        animals: 2,
        duration_s: 3.0 * 86_400.0,
        schedule: FirmwareSchedule::five_minute(),
        follow: Some(FollowParams {
            lag_s: 1200.0,
            ..FollowParams::default()
        }),
        ..SimConfig::default()
    };
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let e2e = run_end_to_end(&config, &PipelineConfig::default(), dir.path()).map_err(|e| e.to_string())?;
    let peaks = &e2e.report.analysis.peaks;
    let mut ok = peaks.len() == 2;
    let mut details = Vec::new();
    for p in peaks {
        let c = p.coefficient.unwrap_or(f64::NAN);
        ok &= (p.lag_seconds - 1200.0).abs() <= 300.0 && c >= 0.6;
        details.push(format!("{} peak {:.0} min r={c:.3}", p.series_name, p.lag_seconds / 60.0));
    }
    check(ok, details.join("; "))
}

fn gnss_noise() -> Outcome {
    let p = LatLon::new(46.8, 9.83);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut errs: Vec<f64> = (0..10_000)
        .map(|_| haversine_m(p, sample_gnss(p, 0.0, &mut rng).position()))
        .collect();
    errs.sort_by(f64::total_cmp);
    let median = (errs[4999] + errs[5000]) / 2.0;
    check(within(median, 2.5, 0.10), format!("median error {median:.3} m"))
}

fn dir_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path = entry.map_err(|e| e.to_string())?.path();
        let name = path.file_name().unwrap().to_string_lossy().into_owned();
        out.push((name, fs::read(&path).map_err(|e| e.to_string())?));
    }
    out.sort();
    Ok(out)
}

fn e2e_determinism() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = root.path().join(name);
        let status = Command::new(env!("CARGO_BIN_EXE_herdlink"))
            .args(["e2e", "--seed", "42", "--out-dir"])
            .arg(&dir)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(format!("run {name} failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        runs.push(dir_files(&dir)?);
    }
    let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
    let has_outputs = names.contains(&"frames.log")
        && names.contains(&"correlation.csv")
        && names.iter().any(|n| n.starts_with("activity_"));
    check(
        has_outputs && runs[0] == runs[1],
        format!("{} files byte-identical across two runs", runs[0].len()),
    )
}

fn ingest_conservation() -> Outcome {
    let sim = run_simulation(&SimConfig {
        duration_s: 6.0 * 3600.0,
        ..SimConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let valid: Vec<String> = sim.frame_log.iter().map(|l| l.to_string()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut corpus: Vec<Vec<u8>> = Vec::new();
    for line in &valid {
        corpus.push(line.clone().into_bytes());
        match rng.random_range(0..8) {
            0 => corpus.push(line.clone().into_bytes()),
            1 => corpus.push(line[..rng.random_range(0..line.len())].as_bytes().to_vec()),
            2 => {
                let mut b = line.clone().into_bytes();
                let i = rng.random_range(0..b.len());
                b[i] = rng.random();
                corpus.push(b);
            }
            3 => corpus.push(line.replacen(",01", ",02", 1).into_bytes()),
            4 => corpus.push(Vec::new()),
            5 => corpus.push(format!("{line},extra").into_bytes()),
            _ => {}
        }
    }
    corpus.push(b"\xff\xfe\xfd".to_vec());
    let mut input = Vec::new();
    for l in &corpus {
        input.extend_from_slice(l);
        input.push(b'\n');
    }
    let store = LogStore::in_memory();
    let stats = ingest_reader(&store, input.as_slice()).map_err(|e| e.to_string())?;
    let ok = stats.is_conserved()
        && stats.ingested == corpus.len()
        && store.len() == stats.stored
        && store.dead_letters().len() == stats.dead_lettered
        && stats.stored >= valid.len()
        && stats.dead_lettered > 0
        && stats.duplicates > 0;
    check(
        ok,
        format!(
            "ingested {} = stored {} + duplicates {} + dead-lettered {}",
            stats.ingested, stats.stored, stats.duplicates, stats.dead_lettered
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("energy sum", energy_sum),
        ("lifetime", lifetime),
        ("self-sustainability", sustainability),
        ("airtime", airtime),
        ("firmware cadence", firmware_cadence),
        ("codec round trip", codec_round_trip),
        ("filter response", filter_response),
        ("grazing classifier", grazing_classifier),
        ("correlation recovery", correlation_recovery),
        ("gnss noise", gnss_noise),
        ("end-to-end determinism", e2e_determinism),
        ("ingest conservation", ingest_conservation),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} {name}: PASS ({detail}) [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} {name}: FAIL ({detail}) [{secs:.1}s]", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
