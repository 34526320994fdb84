// diagnostic: specular-only known-vehicle track typing over time
use diffuse_slam::geom::LandmarkType;
use diffuse_slam::runner::{default_scenario, LikelihoodMode, Simulation};

fn main() {
    let mut config = default_scenario();
    config.seed = 3;
    config.likelihood_mode = LikelihoodMode::AllPaths;
    let mut sim = Simulation::new(config, true).unwrap();
    for _ in 0..40 {
        sim.step(None).unwrap();
        let best = sim.best_particle();
        let hyp = best.map.best_hypothesis();
        let mut entries: Vec<String> = hyp
            .bernoullis
            .iter()
            .map(|b| {
                let c = b.density.map_component();
                format!(
                    "#{}:{}{} r{:.2}@({:.0},{:.0})",
                    b.id,
                    b.density.map_type().label(),
                    if b.density.map_type() == LandmarkType::Bs { "*" } else { "" },
                    b.existence,
                    c.mean.x,
                    c.mean.y
                )
            })
            .collect();
        entries.truncate(9);
        println!("step {:2}: {}", sim.step_index(), entries.join(" "));
    }
}
