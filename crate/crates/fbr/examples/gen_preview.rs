fn main() {
    let cfg = fbr::synthdata::SynthConfig { train_count: 8, ..Default::default() };
    let samples = fbr::synthdata::generate(&cfg, fbr::synthdata::Split::Train).unwrap();
    fbr::synthdata::dump_split(&samples, std::path::Path::new("/tmp/preview")).unwrap();
    for s in &samples {
        let classes: Vec<usize> = s.label.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i + 1).collect();
        println!("idx {} classes {:?} texture {}", s.index, classes, s.texture_id);
    }
}
