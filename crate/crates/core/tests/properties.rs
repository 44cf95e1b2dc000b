use proptest::prelude::*;

use vad::data::{sample_mcar, Dataset, MaskMatrix};
use vad::distributions::{masked_gauss_loglik, masked_gauss_loglik_var, MaskedLikelihoodSpec};
use vad::engine::eval_mse;
use vad::models::{DecoderMLP, EncoderMLP, PosteriorBank, SigmaMode};
use vad::tensor::{Activation, Tape, Tensor};

fn values(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, n)
}

fn bits(a: &[f64]) -> Vec<u64> {
    a.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn backward_is_linear_in_the_loss(x in values(6), alpha in prop::sample::select(vec![0.5, 2.0, 4.0, -8.0])) {
        let grad = |scale: f64| {
            let mut t = Tape::new();
            let v = t.leaf(Tensor::matrix(2, 3, x.clone()).unwrap(), true).unwrap();
            let h = t.activation(Activation::Tanh, v).unwrap();
            let sq = t.mul(h, v).unwrap();
            let s = t.sum(sq).unwrap();
            let l = t.scale(s, scale).unwrap();
            t.backward(l).unwrap();
            t.grad(v).unwrap().to_vec()
        };
        let base = grad(1.0);
        let scaled = grad(alpha);
        for (b, s) in base.iter().zip(&scaled) {
            prop_assert_eq!((alpha * b).to_bits(), s.to_bits());
        }
    }

    #[test]
    fn reused_tensor_accumulates_branches(x in values(4)) {
        let mut t = Tape::new();
        let v = t.leaf(Tensor::vector(x.clone()), true).unwrap();
        let a = t.activation(Activation::Sigmoid, v).unwrap();
        let b = t.scale(v, 3.0).unwrap();
        let both = t.add(a, b).unwrap();
        let l = t.sum(both).unwrap();
        t.backward(l).unwrap();
        let g = t.grad(v).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            let s = Activation::Sigmoid.apply(*xi);
            prop_assert!((gi - (s * (1.0 - s) + 3.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn tape_is_deterministic(x in values(6), w in values(6)) {
        let run = || {
            let mut t = Tape::new();
            let a = t.leaf(Tensor::matrix(2, 3, x.clone()).unwrap(), true).unwrap();
            let b = t.leaf(Tensor::matrix(3, 2, w.clone()).unwrap(), true).unwrap();
            let m = t.matmul(a, b).unwrap();
            let r = t.activation(Activation::Relu, m).unwrap();
            let l = t.mean(r).unwrap();
            t.backward(l).unwrap();
            (bits(t.value(l).data()), bits(t.grad(a).unwrap()), bits(t.grad(b).unwrap()))
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn decode_is_permutation_equivariant(z in values(8), seed in 0u64..1000, perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let dec = DecoderMLP::new(&[2, 5, 3], Activation::Tanh, Activation::Identity, seed).unwrap();
        let out = dec.decode(&Tensor::matrix(4, 2, z.clone()).unwrap()).unwrap();
        let permuted: Vec<f64> = perm.iter().flat_map(|&i| z[2 * i..2 * i + 2].to_vec()).collect();
        let out_p = dec.decode(&Tensor::matrix(4, 2, permuted).unwrap()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            prop_assert_eq!(bits(out_p.row(k)), bits(out.row(i)));
        }
    }

    #[test]
    fn posterior_rows_are_independent(i in 0usize..5, j in 0usize..5, delta in -1.0..1.0f64) {
        prop_assume!(i != j);
        let mut bank = PosteriorBank::new(5, 3, SigmaMode::Learnable, 11).unwrap();
        let before = bank.get(j);
        let (mu, ls) = bank.row_mut(i);
        mu.iter_mut().for_each(|m| *m += delta);
        ls.iter_mut().for_each(|l| *l -= delta);
        prop_assert_eq!(bank.get(j), before);

        // The gradient a row receives ignores every other row's parameters.
        let dec = DecoderMLP::new(&[3, 4, 2], Activation::Tanh, Activation::Identity, 1).unwrap();
        let x = vec![0.3; 10];
        let mask = vec![true; 10];
        let grad_of = |bank: &PosteriorBank| {
            let mut t = Tape::new();
            let vars = dec.register(&mut t, false).unwrap();
            let mu = t.leaf(bank.mu_tensor(), true).unwrap();
            let out = dec.forward(&mut t, &vars, mu).unwrap();
            let ll = masked_gauss_loglik_var(&mut t, out, &x, &mask, &[1.0, 1.0]).unwrap();
            let l = t.sum(ll).unwrap();
            t.backward(l).unwrap();
            t.grad(mu).unwrap()[3 * j..3 * j + 3].to_vec()
        };
        let fresh = PosteriorBank::new(5, 3, SigmaMode::Learnable, 11).unwrap();
        prop_assert_eq!(bits(&grad_of(&fresh)), bits(&grad_of(&bank)));
    }

    #[test]
    fn encoder_ignores_masked_out_values(x in values(5), noise in values(5), m in prop::collection::vec(any::<bool>(), 5), seed in 0u64..100) {
        let enc = EncoderMLP::new(5, &[6], 2, Activation::Tanh, true, seed).unwrap();
        let perturbed: Vec<f64> = x.iter().zip(&noise).zip(&m).map(|((&v, &e), &o)| if o { v } else { v + 10.0 * e }).collect();
        let a = enc.encode(&x, &m).unwrap();
        let b = enc.encode(&perturbed, &m).unwrap();
        prop_assert_eq!(bits(&a.mu), bits(&b.mu));
        prop_assert_eq!(bits(&a.log_sigma), bits(&b.log_sigma));
    }

    #[test]
    fn masked_loglik_is_additive(dec in values(6), x in values(6), m in prop::collection::vec(any::<bool>(), 6), split in prop::collection::vec(any::<bool>(), 6)) {
        let spec = |mask: Vec<bool>| MaskedLikelihoodSpec::uniform(mask, 1.0).unwrap();
        let whole = masked_gauss_loglik(&dec, &x, &spec(m.clone())).unwrap();
        let part_a: Vec<bool> = m.iter().zip(&split).map(|(&o, &s)| o && s).collect();
        let part_b: Vec<bool> = m.iter().zip(&split).map(|(&o, &s)| o && !s).collect();
        let a = masked_gauss_loglik(&dec, &x, &spec(part_a)).unwrap();
        let b = masked_gauss_loglik(&dec, &x, &spec(part_b)).unwrap();
        prop_assert!((whole - (a + b)).abs() < 1e-12);
        let per_coord: f64 = (0..6)
            .filter(|&k| m[k])
            .map(|k| masked_gauss_loglik(&dec[k..=k], &x[k..=k], &spec(vec![true])).unwrap())
            .sum();
        prop_assert!((whole - per_coord).abs() < 1e-12);
    }

    #[test]
    fn apply_mask_preserves_observed_entries(x in values(12), seed in 0u64..1000, rate in 0.0..1.0f64) {
        let mask = sample_mcar(3, 4, rate, seed).unwrap();
        let ds = Dataset::apply_mask(Tensor::matrix(3, 4, x.clone()).unwrap(), mask.clone()).unwrap();
        for (k, (&v, &o)) in x.iter().zip(mask.bits()).enumerate() {
            if o {
                prop_assert_eq!(ds.x().data()[k].to_bits(), v.to_bits());
            } else {
                prop_assert!(ds.x().data()[k].is_nan());
            }
        }
    }

    #[test]
    fn full_mse_is_observed_fraction_weighted(d in values(12), t in values(12), m in prop::collection::vec(any::<bool>(), 12)) {
        let mask = MaskMatrix::new(3, 4, m).unwrap();
        let c = eval_mse(&Tensor::matrix(3, 4, d).unwrap(), &Tensor::matrix(3, 4, t).unwrap(), &mask).unwrap();
        let f = mask.observed_fraction();
        let mixed = f * c.incomplete.unwrap_or(0.0) + (1.0 - f) * c.missing.unwrap_or(0.0);
        prop_assert!((c.full.unwrap() - mixed).abs() < 1e-12);
    }

    #[test]
    fn decoder_param_count_matches_layers(dims in prop::collection::vec(1usize..20, 2..5)) {
        let dec = DecoderMLP::new(&dims, Activation::Tanh, Activation::Identity, 0).unwrap();
        let expected: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        prop_assert_eq!(dec.param_count(), expected);
    }
}
