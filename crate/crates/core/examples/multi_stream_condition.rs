//! The three condition streams and their fusion into one token sequence.
//!
//! cargo run --release --example multi_stream_condition

use protoflow::autograd::Mat;
use protoflow::msc::{Msc, MscConfig, Stream};
use protoflow::rng::SeededRng;

fn main() -> protoflow::Result<()> {
    let msc = Msc::new(MscConfig::default())?;
    let params = msc.init_params(&mut SeededRng::new(0));
    let prompt = msc.embed_prompt("tumor region with nuclear atypia")?;
    let mut rng = SeededRng::new(1);
    let protos = Mat::from_shape_fn((5, msc.config().proto_dim), |_| rng.normal());

    let c = msc.compose(&params, &prompt, &protos)?;
    let (dst, rts, ps) = c.layout();
    println!("prompt tokens {}, prototypes {}", prompt.nrows(), protos.nrows());
    println!("condition: {} x {} = [dst {dst}; rts {rts}; ps {ps}]", c.len(), c.width());
    for s in Stream::ALL {
        let seg = c.segment(s);
        let rms = (seg.iter().map(|v| v * v).sum::<f64>() / seg.len().max(1) as f64).sqrt();
        println!("  {:>3}: rows {:2}, rms {rms:.3}", s.name(), seg.nrows());
    }

    // No prototypes: the ps segment is empty and the other streams are unchanged.
    let empty = msc.compose(&params, &prompt, &Mat::zeros((0, msc.config().proto_dim)))?;
    println!("without prototypes: layout {:?}, dst unchanged {}", empty.layout(), empty.segment(Stream::Dst) == c.segment(Stream::Dst));

    let null = msc.null_composite(&params, prompt.nrows(), protos.nrows())?;
    println!("null condition layout {:?}", null.layout());
    Ok(())
}
