use proptest::prelude::*;

use qosnet_core::neural::{class_relabellings, quantize_bandwidth};
use qosnet_core::qos::{effective_bandwidth, qos_exponent, Traffic};
use qosnet_core::Service;

fn service() -> impl Strategy<Value = Service> {
    prop_oneof![Just(Service::Tolerant), Just(Service::Sensitive), Just(Service::Urllc)]
}

proptest! {
    #[test]
    fn quantized_bandwidth_fits_the_budget(fr in prop::collection::vec(0.0f64..40.0, 1..12), n_max in 1u32..64) {
        let q = quantize_bandwidth(&fr, n_max);
        prop_assert_eq!(q.len(), fr.len());
        prop_assert!(q.iter().sum::<u32>() <= n_max);
    }

    #[test]
    fn integral_requests_within_budget_are_kept(req in prop::collection::vec(0u32..6, 1..8)) {
        let n_max = req.iter().sum::<u32>().max(1);
        let fr: Vec<f64> = req.iter().map(|&n| f64::from(n)).collect();
        prop_assert_eq!(quantize_bandwidth(&fr, n_max), req);
    }

    #[test]
    fn relabellings_preserve_classes(svcs in prop::collection::vec(service(), 1..10)) {
        let orders = class_relabellings(&svcs);
        prop_assert!(!orders.is_empty());
        prop_assert_eq!(&orders[0], &(0..svcs.len()).collect::<Vec<_>>());
        for o in &orders {
            let mut sorted = o.clone();
            sorted.sort_unstable();
            prop_assert_eq!(sorted, (0..svcs.len()).collect::<Vec<_>>());
            for (k, &j) in o.iter().enumerate() {
                prop_assert_eq!(svcs[k], svcs[j]);
            }
        }
    }

    #[test]
    fn effective_bandwidth_recovers_the_violation_target(
        arrivals in 100.0f64..1000.0,
        bits in 100.0f64..8000.0,
        delay in 1e-3f64..0.1,
        violation in 1e-6f64..0.1,
    ) {
        let t = Traffic::Sensitive { arrivals, size_rate: 1.0 / bits, delay, violation };
        let theta = qos_exponent(&t).unwrap();
        let eb = effective_bandwidth(&t).unwrap();
        prop_assert!(eb >= arrivals * bits * (1.0 - 1e-12));
        let back = (-theta * eb * delay).exp();
        prop_assert!((back / violation - 1.0).abs() < 1e-8);
    }
}
