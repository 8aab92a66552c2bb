use foodai_core::experiment::ImbalanceExperiment;
fn main() {
    let mut e = ImbalanceExperiment::default();
    let args: Vec<String> = std::env::args().collect();
    if args.len() > 1 { e.train.epochs = args[1].parse().unwrap(); }
    if args.len() > 2 { e.train.learning_rate = args[2].parse().unwrap(); }
    if args.len() > 3 && args[3] == "aug" { e.train.augmentation = Default::default(); }
    let s = e.run(|r| println!("{} {:>13} top1 {:.4} min {:.3} best {} {:.1}s  {:?}", r.seed, r.loss, r.top1, r.min_recall, r.best_epoch, r.seconds,
        r.per_class_recall.iter().filter(|(_, v)| **v < 1.0).map(|(k, v)| format!("{k}={v:.2}")).collect::<Vec<_>>())).unwrap();
    println!("CE top1 {:.4} min {:.4} | FL top1 {:.4} min {:.4}", s.ce_mean_top1, s.ce_mean_min_recall, s.focal_mean_top1, s.focal_mean_min_recall);
}
