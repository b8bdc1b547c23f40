//! Global (text + vision) plus local (keyword) prototype retrieval over the
//! toy bank, under each retrieval mode and prototype budget.
//!
//! cargo run --release --example hybrid_retrieval

use protoflow::embed::ProviderSpec;
use protoflow::eval::km_allocation;
use protoflow::retrieval::{hybrid_retrieve, rarest_keywords, RetrievalConfig, RetrievalMode};
use protoflow::toy::{self, BankPlan, CurationPlan, ToyConfig, ToyWorld};

fn main() -> protoflow::Result<()> {
    let world = ToyWorld::new(
        ToyConfig {
            pool_size: 1500,
            ..ToyConfig::default()
        },
        ProviderSpec::default(),
    )?;
    let plan = CurationPlan {
        refined_size: 500,
        ..CurationPlan::default()
    };
    let splits = toy::curate(&world, &plan, 0)?;
    let bank = toy::build_bank(&world, &splits, &BankPlan::default(), 0)?;
    println!("bank of {} prototypes", bank.len());

    let prompt = "tumor region with nuclear atypia";
    println!("rarest keywords: {:?}", rarest_keywords(prompt, &bank));
    let r = hybrid_retrieve(prompt, &bank, &RetrievalConfig::default(), world.provider())?;
    println!("K_m = 16 -> {} ids\n{}", r.len(), r.report());

    for mode in RetrievalMode::ALL {
        let cfg = mode.apply(&RetrievalConfig::default());
        let r = hybrid_retrieve(prompt, &bank, &cfg, world.provider())?;
        let same_class = r
            .ids
            .iter()
            .filter(|&&i| ToyWorld::class_of_caption(&bank.captions()[i]) == Some(0))
            .count();
        println!("{:>14}: {:2} ids, {same_class} from the prompt's class", mode.name(), r.len());
    }
    for km in [0, 4, 8, 16, 32] {
        let cfg = km_allocation(km, &RetrievalConfig::default())?;
        let r = hybrid_retrieve(prompt, &bank, &cfg, world.provider())?;
        println!("K_m = {km:2}: (k_t, k_v, n_kw, n_per) = ({}, {}, {}, {}) -> {} ids", cfg.k_t, cfg.k_v, cfg.n_kw, cfg.n_per, r.len());
    }
    Ok(())
}
