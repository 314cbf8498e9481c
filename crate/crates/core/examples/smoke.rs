use rl_core::executor::measure_fps;
use rl_core::specfile::load_spec_file;
use std::path::Path;

fn main() {
    let base = load_spec_file(Path::new("specs/benchmark/synth_fps.json")).unwrap();
    for rep in 0..2 {
        for (w, e) in [(1usize, 1usize), (1, 16), (1, 64)] {
            let mut spec = base.clone();
            spec.meta.num_sessions = w;
            spec.env[0].num_envs = e;
            let r = measure_fps(&spec, 3.0).unwrap();
            println!("rep {rep} workers {w} envs {e}: fps {:.0}", r.fps);
        }
    }
}
