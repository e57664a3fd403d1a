//! One batch through the embedding-production pipeline: record frequent
//! channels, build the per-class mask, fill the transformation bank, then
//! produce embeddings around each anchor.

use das_dml::das::{das_produce, DasConfig, FrequencyRecorder, TransformationBank};
use das_dml::math;
use das_dml::SeededRng;

fn main() -> das_dml::Result<()> {
    let mut rng = SeededRng::new(9);
    let dim = 8;
    let labels = [0, 0, 1, 1];
    let anchors: Vec<Vec<f64>> = labels
        .iter()
        .map(|_| math::l2_normalize(&(0..dim).map(|_| rng.normal()).collect::<Vec<_>>()))
        .collect::<Result<_, _>>()?;
    let config = DasConfig::default();

    let mut frm = FrequencyRecorder::new(2, dim);
    frm.update(&anchors, &labels, config.top_k)?;
    let mask = frm.mask(config.top_k)?;
    for c in 0..2 {
        println!("class {c}: counts {:?} mask {:?}", frm.row(c), mask.row(c).iter().map(|&b| u8::from(b)).collect::<Vec<_>>());
    }

    let mut bank = TransformationBank::new(2, config.bank_capacity, dim);
    let stored = bank.update(&anchors, &labels)?;
    println!("bank: {stored} transformations stored, filled = [{}, {}]", bank.filled(0), bank.filled(1));

    for (i, (v, &l)) in anchors.iter().zip(&labels).enumerate() {
        let produced = das_produce(v, l, i, &mask, &bank, &config, &mut rng)?;
        let cos: Vec<String> = produced.iter().map(|p| format!("{:.5}", math::dot(&p.embedding, v))).collect();
        println!("anchor {i} (class {l}): {} produced, cos to anchor [{}]", produced.len(), cos.join(", "));
    }
    Ok(())
}
