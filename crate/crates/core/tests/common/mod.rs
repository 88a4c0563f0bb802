//! BLEU oracle shared by the evaluation and acceptance tests.

use rand::Rng;

/// Counts n-grams by linear scans over plain vectors.
fn count_in(grams: &[Vec<u32>], g: &[u32]) -> usize {
    grams.iter().filter(|x| x.as_slice() == g).count()
}

fn grams(s: &[u32], n: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut i = 0;
    while i + n <= s.len() {
        out.push(s[i..i + n].to_vec());
        i += 1;
    }
    out
}

pub fn oracle_bleu(hyps: &[Vec<u32>], refs: &[Vec<u32>]) -> f64 {
    let mut logs = 0.0;
    let mut zero = false;
    let (mut c, mut r) = (0usize, 0usize);
    for n in 1..=4 {
        let (mut m, mut t) = (0usize, 0usize);
        for (h, rf) in hyps.iter().zip(refs) {
            let hg = grams(h, n);
            let rg = grams(rf, n);
            t += hg.len();
            let mut seen: Vec<Vec<u32>> = Vec::new();
            for g in &hg {
                if seen.contains(g) {
                    continue;
                }
                seen.push(g.clone());
                m += count_in(&hg, g).min(count_in(&rg, g));
            }
        }
        if m == 0 || t == 0 {
            zero = true;
        } else {
            logs += (m as f64 / t as f64).ln();
        }
    }
    for (h, rf) in hyps.iter().zip(refs) {
        c += h.len();
        r += rf.len();
    }
    if zero || c == 0 {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    100.0 * bp * (logs / 4.0).exp()
}

pub fn random_corpus(rng: &mut impl Rng, sentences: usize, vocab: u32) -> (Vec<Vec<u32>>, Vec<Vec<u32>>) {
    let mut hyps = Vec::new();
    let mut refs = Vec::new();
    for _ in 0..sentences {
        let r: Vec<u32> = (0..rng.gen_range(4..12)).map(|_| rng.gen_range(0..vocab)).collect();
        // hypotheses are noisy copies so higher-order matches occur
        let mut h: Vec<u32> = r.iter().filter(|_| rng.gen_bool(0.85)).copied().collect();
        for x in h.iter_mut() {
            if rng.gen_bool(0.1) {
                *x = rng.gen_range(0..vocab);
            }
        }
        if rng.gen_bool(0.3) {
            h.push(rng.gen_range(0..vocab));
        }
        hyps.push(h);
        refs.push(r);
    }
    (hyps, refs)
}
