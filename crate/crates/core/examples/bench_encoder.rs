use std::time::Instant;
use trajlet::encoder::{encode_input, EncoderConfig, EncoderParams, Mode};
use trajlet::geometry::{NormalizedTrajectory, Point};

fn main() {
    let cfg = EncoderConfig {
        d_model: 64,
        num_heads: 4,
        num_layers: 1,
        d_emb: 16,
        ..EncoderConfig::default()
    };
    let p = EncoderParams::init(cfg.clone(), 1).unwrap();
    let nt = NormalizedTrajectory::from_canonical(
        "b",
        None,
        (0..60)
            .map(|i| Point::new(i as f64 * 0.5, (i as f64 * 0.1).sin()))
            .collect(),
    );
    let inp = encode_input(&nt, &cfg).unwrap();
    let t = Instant::now();
    let reps = 200;
    for s in 0..reps {
        let (_, tape) = p.forward(&inp, Mode::Train { seed: s }).unwrap();
        let _ = p.backward(&tape, &[0.1; 16]).unwrap();
    }
    println!(
        "fwd+bwd: {:.3} ms/sample",
        t.elapsed().as_secs_f64() * 1e3 / reps as f64
    );
    let t = Instant::now();
    for _ in 0..reps {
        let _ = p.embed(&inp).unwrap();
    }
    println!(
        "eval fwd: {:.3} ms/sample",
        t.elapsed().as_secs_f64() * 1e3 / reps as f64
    );
}
