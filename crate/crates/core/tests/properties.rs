use std::collections::BTreeSet;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Zero};
use omegaforge::bits::{self, MeasureSource, ThresholdOracle};
use omegaforge::codes::{self, CounterMachine, Instruction};
use omegaforge::dioph::{self, EquationFamily, Polynomial, SearchBox};
use omegaforge::dprm;
use omegaforge::measures::{self, HaltingSchedule, ScheduleEntry};
use proptest::prelude::*;

/// Reduced `num/den` in (0, 1) with a non-power-of-two denominator.
fn non_dyadic() -> impl Strategy<Value = (u64, u64)> {
    (3u64..1_000_000_000)
        .prop_flat_map(|den| (1..den, Just(den)))
        .prop_filter("non-dyadic", |&(n, d)| {
            let g = num_integer::gcd(n, d);
            !(d / g).is_power_of_two()
        })
}

fn rational(n: u64, d: u64) -> BigRational {
    BigRational::new(BigInt::from(n), BigInt::from(d))
}

fn long_division(n: u64, d: u64, b: u32, k: usize) -> Vec<u8> {
    let (mut r, d) = (BigUint::from(n), BigUint::from(d));
    (0..k)
        .map(|_| {
            r *= b;
            let digit = &r / &d;
            r %= &d;
            u8::try_from(digit).unwrap()
        })
        .collect()
}

fn machine() -> impl Strategy<Value = CounterMachine> {
    (1usize..=3, 1usize..=5).prop_flat_map(|(regs, n)| {
        let ins = prop_oneof![
            (1..=regs).prop_map(|reg| Instruction::Inc { reg }),
            (1..=regs, 1..=n + 1).prop_map(|(reg, target)| Instruction::DecJz { reg, target }),
            Just(Instruction::Halt),
        ];
        prop::collection::vec(ins, n).prop_map(move |v| CounterMachine::new(regs, v).unwrap())
    })
}

fn schedule() -> impl Strategy<Value = HaltingSchedule> {
    prop::collection::vec((1u64..=3, 1u64..=12, prop::option::of(1u64..=40)), 0..10)
        .prop_map(|raw| {
            let mut index = 0;
            raw.into_iter()
                .map(|(gap, len, step)| {
                    index += gap;
                    ScheduleEntry { index, code_length: len, halt_step: step }
                })
                .collect::<Vec<_>>()
        })
        .prop_filter("Kraft sum at most 1", |es| es.iter().map(|e| 1u64 << (12 - e.code_length)).sum::<u64>() <= 1 << 12)
        .prop_map(|es| HaltingSchedule::synthetic(es).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn qk_digits_and_parity((n, d) in non_dyadic(), b in 2u32..=16, k in 1usize..=40) {
        let src = MeasureSource::ground_truth(rational(n, d)).unwrap();
        let rec = bits::q_k(k, &src, b).unwrap();
        let digits = long_division(n, d, b, k);
        prop_assert_eq!(rec.padded_digits(), digits.clone());
        if b == 2 {
            prop_assert_eq!(bits::parity(&rec.q), digits[k - 1]);
        }
        let next = bits::q_k(k + 1, &src, b).unwrap();
        prop_assert_eq!(&next.q / b, rec.q);
    }

    #[test]
    fn bisection_matches_expansion((n, d) in non_dyadic(), k in 1usize..=40) {
        let src = MeasureSource::ground_truth(rational(n, d)).unwrap();
        let rep = bits::bisection_bits(k, &ThresholdOracle { k, base: 2, src: &src }).unwrap();
        prop_assert_eq!(rep.queries, k as u64);
        prop_assert_eq!(rep.digits, long_division(n, d, 2, k));
    }

    #[test]
    fn approximants_climb_to_the_limit(s in schedule()) {
        let exact = measures::omega_exact(&s).unwrap();
        let tau = measures::tau_exact(&s);
        let h = s.exhaustion_horizon();
        let (mut po, mut pt) = (BigRational::zero(), BigRational::zero());
        for i in 1..=h + 1 {
            let o = measures::omega_i(&s, i).unwrap();
            let t = measures::tau_i(&s, i).unwrap();
            prop_assert!(po <= o && o <= exact);
            prop_assert!(pt <= t && t <= tau);
            po = o;
            pt = t;
        }
        prop_assert_eq!(po, exact);
        prop_assert_eq!(pt, tau);
        prop_assert!(s.kraft_sum() <= BigRational::one());
    }

    #[test]
    fn schedule_text_round_trip(s in schedule()) {
        prop_assert_eq!(s.to_text().parse::<HaltingSchedule>().unwrap(), s);
    }

    #[test]
    fn codes_round_trip_and_prefix_free(a in machine(), b in machine()) {
        let ca = codes::encode(&a).unwrap();
        let cb = codes::encode(&b).unwrap();
        prop_assert_eq!(codes::decode(&ca.bits).unwrap(), a.clone());
        prop_assert_eq!(CounterMachine::parse_asm(&a.to_asm()).unwrap(), a.clone());
        if a != b {
            prop_assert!(!ca.bits.is_prefix_of(&cb.bits) && !cb.bits.is_prefix_of(&ca.bits));
        }
    }

    #[test]
    fn structural_prediction_is_sound(m in machine()) {
        if codes::provably_halts_structurally(&m) {
            let out = codes::run(&m, &codes::Bitstring::new(), 1000);
            prop_assert!(out.halted());
        }
    }

    #[test]
    fn w_values_are_solvable_set(a in 1i64..=4, c in -3i64..=3, e in 0i64..=3, k in 1u64..=5) {
        // a*N - c*k - e*x1*x1 - x2 = 0 over small boxes
        let v = Polynomial::var;
        let poly = v("N").scale(a) - (v("k").scale(c)) - (v("x1") * v("x1")).scale(e) - v("x2");
        let fam = EquationFamily::with(poly, &["k", "N"], &["x1", "x2"]).unwrap();
        let w = dioph::value_set_polynomial(&fam).unwrap();
        let bx = SearchBox::cube(2, 6);
        let want: BTreeSet<BigInt> = dioph::solvable_set(&fam, &[k..=k, 1..=15], &bx)
            .unwrap()
            .into_iter()
            .map(|p| BigInt::from(p[1]))
            .collect();
        let got = dioph::positive_values(&w, k, &SearchBox::new(vec![1..=15, 1..=6, 1..=6])).unwrap();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn conjunction_solver_matches_sum_of_squares(a in 1i64..=3, b in 0i64..=4, p in 1u64..=12) {
        let v = Polynomial::var;
        let unknowns = ["x1", "x2", "x3"];
        let e1 = EquationFamily::with(v("x1").scale(a) + v("x2") - v("p"), &["p"], &unknowns).unwrap();
        let e2 = EquationFamily::with(v("x3") - Polynomial::exp2("x2") + Polynomial::constant(b), &["p"], &unknowns).unwrap();
        let both = dprm::combine(&[e1.clone(), e2.clone()]).unwrap();
        let bx = SearchBox::cube(3, 10);
        let sys = dioph::solve_system_in_box(&[e1, e2], &[p], &bx, None).unwrap();
        let brute = dioph::solve_in_box(&both, &[p], &bx).unwrap();
        prop_assert!(sys.exhausted);
        prop_assert_eq!(sys.solutions, brute.solutions);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn halting_runs_give_fragile_witnesses(m in machine(), a in 1u64..=6) {
        let sys = dprm::compile(&m).unwrap();
        if let Some(t) = dprm::trace(&m, a, 60) {
            let w = dprm::witness_from_trace(&sys, &t).unwrap();
            prop_assert!(dprm::verify_witness(&sys, &w).unwrap());
            prop_assert!(dprm::verify_combined(&sys, &w).unwrap());
            prop_assert_eq!(dprm::decode_trace(&sys, &m, &w).unwrap(), t);
            for (label, p) in dprm::perturbations(&w) {
                prop_assert!(!dprm::verify_witness(&sys, &p).unwrap(), "{} verifies", label);
            }
        }
    }
}
