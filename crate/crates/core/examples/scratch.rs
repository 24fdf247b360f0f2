use gridbid::dynamics::*;
use gridbid::robustness::*;
use gridbid::IsoPolicy;
fn main() {
    let case = gridbid::network::ieee9_modified();
    let b1 = gridbid::BidProfile::new(vec![7.6096, 9.9313, 7.6087, 8.4827, 6.6175, 7.5254]);
    let stop = StoppingCriterion::horizon(5000);
    for seed in 0..3u64 {
    let sv = DisturbanceModel::StepsizeVariation{nominal_beta:0.01};
    let c = run_perturbed(&case,&b1,&StepsizeSchedule::PerGeneratorRandom{low:0.001,high:0.1},&sv,&stop,&IsoPolicy::Deterministic,seed).unwrap();
    let d = run_perturbed(&case,&b1,&StepsizeSchedule::Decaying{low:0.001,high:0.1,target:0.01,rate:0.999},&sv,&stop,&IsoPolicy::Deterministic,seed).unwrap();
    let dmax = c.records.iter().map(|r| r.disturbance.as_ref().unwrap().iter().map(|v|v*v).sum::<f64>().sqrt()).fold(0.0,f64::max);
    let r = min_radius_for_step(&case, 0.01).unwrap();
    let th = 0.99*contracting_theta(0.01, case.a_max());
    let bnd = perturbed_bounds(&case, r, th, dmax, 0.01).unwrap();
    let v = check_perturbed(&case,&c,&bnd,r,th,0.01).unwrap();
    println!("seed {seed}: const term {:?} decay term {:?} dmax {dmax} G {} viol {}", c.terminal_distance(), d.terminal_distance(), bnd.g, v.total());
    let last: Vec<f64> = c.distances().unwrap()[4000..].to_vec();
    println!("  const last1000 max {}", last.iter().cloned().fold(0.0,f64::max));
    }
    let reference = Reference::compute(&case).unwrap().unwrap();
    let mk = |g: usize| -> (usize, Box<dyn Strategy>) { (g, StrategySpec::MultiplicativeUndercut{rival: g as u32 + 2, factor:0.99, floor:None, floor_at_equilibrium:true, width:1.0}.build(&case, g, Some(&reference)).unwrap()) };
    for seed in 0..3u64 {
    let t = run_collusion(&case,&b1,&StepsizeSchedule::Constant{beta:0.01}, vec![mk(0),mk(2),mk(4)], false, &stop,&IsoPolicy::Deterministic,seed).unwrap();
    for g in [0,2,4] { let gap = t.payoff_gap(&case,g).unwrap(); let tail=&gap[4000..]; println!("seed {seed} gen {} pos {} max {}", g+1, tail.iter().filter(|v| **v>=0.0).count(), tail.iter().cloned().fold(f64::MIN,f64::max)); }
    }
}
