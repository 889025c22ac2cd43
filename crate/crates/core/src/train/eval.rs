//! Hue-based stand-in for a sentiment classifier: how far transfer moves an
//! object's hue toward the reference object's.

use sentigan_tensor::RngState;

use super::corpus::CorpusSample;
use crate::error::{Error, Result};
use crate::image::{hue_distance, masked_mean_hue};
use crate::inference::transfer_object;
use crate::nets::ModelParams;

/// Gap closure `(|in − ref| − |out − ref|) / |in − ref|` over circular hue
/// distances; zero when the input already matches or a hue is undefined.
pub fn gap_closure(hue_in: Option<f64>, hue_ref: Option<f64>, hue_out: Option<f64>) -> f64 {
    let (Some(i), Some(r), Some(o)) = (hue_in, hue_ref, hue_out) else { return 0.0 };
    let gap_in = hue_distance(i, r);
    if gap_in < 1e-6 {
        return 0.0;
    }
    (gap_in - hue_distance(o, r)) / gap_in
}

/// Sorted distinct adjectives; the first two name the palette groups.
fn palettes(corpus: &[CorpusSample]) -> Result<[Vec<usize>; 2]> {
    let mut words: Vec<&str> = corpus.iter().map(|s| s.anp.0.as_str()).collect();
    words.sort_unstable();
    words.dedup();
    if words.len() < 2 {
        return Err(Error::contract(format!("corpus needs two palettes, found {words:?}")));
    }
    let group = |w: &str| corpus.iter().enumerate().filter(|(_, s)| s.anp.0 == w).map(|(i, _)| i).collect();
    Ok([group(words[0]), group(words[1])])
}

/// Two ratios per trial: palette A onto B and B onto A, at strength 1, t = 1.
pub fn hue_shift_ratios(params: &ModelParams, corpus: &[CorpusSample], trials: usize, rng: &mut RngState) -> Result<Vec<f64>> {
    let groups = palettes(corpus)?;
    let mut out = Vec::with_capacity(2 * trials);
    for _ in 0..trials {
        let a = &corpus[groups[0][rng.below(groups[0].len())]];
        let b = &corpus[groups[1][rng.below(groups[1].len())]];
        let ma = &a.masks[rng.below(a.masks.len())].1;
        let mb = &b.masks[rng.below(b.masks.len())].1;
        for (inp, mi, rf, mr) in [(a, ma, b, mb), (b, mb, a, ma)] {
            let result = transfer_object(&inp.image, mi, &rf.image, mr, 1.0, 1.0, params)?;
            out.push(gap_closure(
                masked_mean_hue(&inp.image, mi),
                masked_mean_hue(&rf.image, mr),
                masked_mean_hue(&result, mi),
            ));
        }
    }
    Ok(out)
}

pub fn eval_hue_shift(params: &ModelParams, corpus: &[CorpusSample], trials: usize, rng: &mut RngState) -> Result<f64> {
    if trials == 0 {
        return Err(Error::contract("trials must be ≥ 1"));
    }
    let r = hue_shift_ratios(params, corpus, trials, rng)?;
    Ok(r.iter().sum::<f64>() / r.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::corpus::{generate_corpus, SyntheticCorpusSpec};

    #[test]
    fn gap_closure_limits() {
        assert_eq!(gap_closure(Some(30.0), Some(220.0), Some(30.0)), 0.0);
        assert_eq!(gap_closure(Some(30.0), Some(220.0), Some(220.0)), 1.0);
        assert_eq!(gap_closure(Some(30.0), Some(30.0), Some(100.0)), 0.0);
        assert_eq!(gap_closure(Some(30.0), None, Some(100.0)), 0.0);
        assert!((gap_closure(Some(350.0), Some(50.0), Some(20.0)) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_palette_is_a_contract_error() {
        let mut corpus = generate_corpus(&SyntheticCorpusSpec::two_palette(4, 32, 1)).unwrap();
        for s in &mut corpus {
            s.anp.0 = "warm".into();
        }
        let p = crate::nets::init_params(&crate::nets::NetConfig::default(), &mut RngState::new(0)).unwrap();
        assert!(matches!(eval_hue_shift(&p, &corpus, 2, &mut RngState::new(0)), Err(Error::Contract(_))));
    }
}
