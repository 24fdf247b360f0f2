#![allow(dead_code)]

use gridbid::dynamics::Reference;
use gridbid::network::{check_feasible, validate_case, Bus, Generator, Line, NetworkCase};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn standard_initial_bids() -> Vec<f64> {
    vec![7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254]
}

/// A connected network on `n_buses` buses: a random spanning tree plus
/// possibly one extra line.
fn random_topology(rng: &mut ChaCha8Rng, n_buses: u32, extra: bool) -> Vec<Line> {
    let mut lines = Vec::new();
    for to in 2..=n_buses {
        let from = rng.random_range(1..to);
        let (from_bus, to_bus) = if rng.random_bool(0.5) { (from, to) } else { (to, from) };
        lines.push(Line {
            from_bus,
            to_bus,
            limit: rng.random_range(0.3..3.0),
        });
    }
    if extra && n_buses >= 3 {
        let a = rng.random_range(1..=n_buses);
        let b = rng.random_range(1..=n_buses);
        let dup = lines
            .iter()
            .any(|l| (l.from_bus == a && l.to_bus == b) || (l.from_bus == b && l.to_bus == a));
        if a != b && !dup {
            lines.push(Line {
                from_bus: a,
                to_bus: b,
                limit: rng.random_range(0.3..3.0),
            });
        }
    }
    lines
}

/// A feasible case with `gens_per_bus` generators at each of a random,
/// nonempty set of buses.
pub fn random_case(rng: &mut ChaCha8Rng, max_buses: u32, max_gen_buses: u32, gens_per_bus: u32, extra_line: bool) -> NetworkCase {
    loop {
        let n_buses = rng.random_range(2..=max_buses);
        let buses = (1..=n_buses)
            .map(|id| Bus {
                id,
                load: if rng.random_bool(0.7) { rng.random_range(0.0..2.0) } else { 0.0 },
            })
            .collect();
        let lines = random_topology(rng, n_buses, extra_line);
        let n_gen_buses = rng.random_range(1..=max_gen_buses.min(n_buses));
        let mut gen_buses: Vec<u32> = (1..=n_buses).collect();
        for i in (1..gen_buses.len()).rev() {
            gen_buses.swap(i, rng.random_range(0..=i));
        }
        gen_buses.truncate(n_gen_buses as usize);
        gen_buses.sort_unstable();
        let mut generators = Vec::new();
        for &bus in &gen_buses {
            for _ in 0..gens_per_bus {
                generators.push(Generator {
                    id: generators.len() as u32 + 1,
                    bus,
                    a: rng.random_range(0.05..0.5),
                    c: rng.random_range(0.0..3.0),
                });
            }
        }
        let case = NetworkCase {
            buses,
            lines,
            generators,
        };
        if validate_case(&case).is_sound() && check_feasible(&case).is_ok() {
            return case;
        }
    }
}

/// Random small cases where an efficient Nash equilibrium exists and is
/// unique: two generators at every generating bus, all dispatched.
pub fn random_equilibrium_cases(seed: u64, count: usize) -> Vec<(NetworkCase, Reference)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    while out.len() < count {
        let case = random_case(&mut rng, 4, 2, 2, true);
        if total_load(&case) < 0.5 {
            continue;
        }
        if let Some(reference) = Reference::compute(&case).unwrap() {
            if reference.x_star.iter().all(|&x| x > 1e-3) {
                out.push((case, reference));
            }
        }
    }
    out
}

fn total_load(case: &NetworkCase) -> f64 {
    case.buses.iter().map(|b| b.load).sum()
}
