//! Proportional-fair boundary flow allocation, shared by the road and region
//! interfaces. Replaces random vehicle transfer with a deterministic rule:
//! each sender's pair demands are rationed to its cap, then each receiver
//! scales its incoming offers to fit its supply.

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransferRequest {
    pub sender: usize,
    pub receiver: usize,
    /// Raw demand for this sender-receiver pair (veh per interval).
    pub amount: f64,
}

/// Returns the granted amount per request. Guarantees, up to rounding:
/// sum over a sender's grants <= its cap, sum over a receiver's grants <= its
/// supply, and every grant is proportional to its raw demand.
pub fn allocate_proportional(
    requests: &[TransferRequest],
    sender_caps: &[f64],
    receiver_supplies: &[f64],
) -> Vec<f64> {
    let mut sent = vec![0.0; sender_caps.len()];
    for r in requests {
        debug_assert!(r.amount >= 0.0);
        sent[r.sender] += r.amount;
    }
    let sender_scale: Vec<f64> = sent
        .iter()
        .zip(sender_caps)
        .map(|(&total, &cap)| {
            if total > cap && total > 0.0 {
                (cap.max(0.0)) / total
            } else {
                1.0
            }
        })
        .collect();

    let mut offered = vec![0.0; receiver_supplies.len()];
    for r in requests {
        offered[r.receiver] += r.amount * sender_scale[r.sender];
    }
    let receiver_scale: Vec<f64> = offered
        .iter()
        .zip(receiver_supplies)
        .map(|(&total, &supply)| {
            if total > supply && total > 0.0 {
                (supply.max(0.0)) / total
            } else {
                1.0
            }
        })
        .collect();

    requests
        .iter()
        .map(|r| r.amount * sender_scale[r.sender] * receiver_scale[r.receiver])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn req(sender: usize, receiver: usize, amount: f64) -> TransferRequest {
        TransferRequest {
            sender,
            receiver,
            amount,
        }
    }

    #[test]
    fn one_to_one_is_min_of_demand_and_supply() {
        let granted = allocate_proportional(&[req(0, 0, 10.0)], &[10.0], &[20.0]);
        assert_eq!(granted, vec![10.0]);
        let granted = allocate_proportional(&[req(0, 0, 10.0)], &[10.0], &[4.0]);
        assert_eq!(granted, vec![4.0]);
    }

    #[test]
    fn zero_supply_blocks_everything() {
        let granted =
            allocate_proportional(&[req(0, 0, 10.0), req(1, 0, 3.0)], &[10.0, 3.0], &[0.0]);
        assert_eq!(granted, vec![0.0, 0.0]);
    }

    #[test]
    fn shared_supply_splits_proportionally() {
        let granted =
            allocate_proportional(&[req(0, 0, 10.0), req(1, 0, 30.0)], &[10.0, 30.0], &[20.0]);
        assert_eq!(granted, vec![5.0, 15.0]);
    }

    #[test]
    fn sender_cap_rations_across_receivers() {
        let granted = allocate_proportional(
            &[req(0, 0, 6.0), req(0, 1, 2.0)],
            &[4.0],
            &[100.0, 100.0],
        );
        assert_eq!(granted, vec![3.0, 1.0]);
    }

    proptest! {
        #[test]
        fn conserves_caps_and_supplies(
            amounts in proptest::collection::vec(0.0f64..50.0, 1..20),
            caps in proptest::collection::vec(0.0f64..40.0, 4),
            supplies in proptest::collection::vec(0.0f64..40.0, 3),
        ) {
            let requests: Vec<TransferRequest> = amounts
                .iter()
                .enumerate()
                .map(|(i, &a)| req(i % 4, (i * 7) % 3, a))
                .collect();
            let granted = allocate_proportional(&requests, &caps, &supplies);
            let mut per_sender = vec![0.0; 4];
            let mut per_receiver = vec![0.0; 3];
            for (g, r) in granted.iter().zip(&requests) {
                prop_assert!(*g >= 0.0);
                prop_assert!(*g <= r.amount + 1e-12);
                per_sender[r.sender] += g;
                per_receiver[r.receiver] += g;
            }
            for (s, c) in per_sender.iter().zip(&caps) {
                prop_assert!(s <= &(c + 1e-9));
            }
            for (s, c) in per_receiver.iter().zip(&supplies) {
                prop_assert!(s <= &(c + 1e-9));
            }
        }
    }
}
