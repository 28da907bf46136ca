use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    Connect,
    Disconnect,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChurnSpec {
    AlwaysOn,
    /// Explicit timed transitions, strictly increasing and alternating.
    Script(Vec<(u64, Transition)>),
    /// Alternating exponential holding times. On-periods are never shorter
    /// than `min_on`; every period lasts at least one tick.
    Exponential {
        mean_on: u64,
        mean_off: u64,
        min_on: u64,
        start_on: bool,
    },
}

/// Connect/disconnect times for one node, up to and including `horizon`.
pub fn churn_process(spec: &ChurnSpec, seed: u64, horizon: u64) -> Vec<(u64, Transition)> {
    match spec {
        ChurnSpec::AlwaysOn => vec![(0, Transition::Connect)],
        ChurnSpec::Script(s) => s
            .iter()
            .copied()
            .take_while(|(t, _)| *t <= horizon)
            .collect(),
        ChurnSpec::Exponential {
            mean_on,
            mean_off,
            min_on,
            start_on,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let on = Exp::new(1.0 / *mean_on as f64).expect("mean_on is positive");
            let off = Exp::new(1.0 / *mean_off as f64).expect("mean_off is positive");
            let mut hold = |d: &Exp<f64>, floor: u64| (d.sample(&mut rng).ceil() as u64).max(floor);
            let mut out = Vec::new();
            let mut t = 0u64;
            let mut up = *start_on;
            if up {
                out.push((0, Transition::Connect));
            }
            loop {
                let dt = if up {
                    hold(&on, *min_on)
                } else {
                    hold(&off, 1)
                };
                t = t.saturating_add(dt);
                if t > horizon {
                    break;
                }
                up = !up;
                out.push((
                    t,
                    if up {
                        Transition::Connect
                    } else {
                        Transition::Disconnect
                    },
                ));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Transition::*;

    #[test]
    fn script_is_echoed() {
        let s = ChurnSpec::Script(vec![(0, Connect), (50, Disconnect)]);
        assert_eq!(
            churn_process(&s, 1, 100),
            vec![(0, Connect), (50, Disconnect)]
        );
        assert_eq!(churn_process(&s, 1, 10), vec![(0, Connect)]);
    }

    #[test]
    fn always_on_connects_once() {
        assert_eq!(
            churn_process(&ChurnSpec::AlwaysOn, 9, 1000),
            vec![(0, Connect)]
        );
    }

    #[test]
    fn exponential_is_seeded_alternating_and_bounded() {
        let s = ChurnSpec::Exponential {
            mean_on: 40,
            mean_off: 10,
            min_on: 25,
            start_on: true,
        };
        let a = churn_process(&s, 77, 5000);
        assert_eq!(a, churn_process(&s, 77, 5000));
        assert_ne!(a, churn_process(&s, 78, 5000));
        assert_eq!(a[0], (0, Connect));
        for w in a.windows(2) {
            assert!(w[0].0 < w[1].0);
            assert_ne!(w[0].1, w[1].1);
            if w[0].1 == Connect {
                assert!(w[1].0 - w[0].0 >= 25);
            }
        }
        assert!(a.last().unwrap().0 <= 5000);
        assert!(a.len() > 20);
    }

    #[test]
    fn starting_off_begins_with_connect_later() {
        let s = ChurnSpec::Exponential {
            mean_on: 5,
            mean_off: 5,
            min_on: 1,
            start_on: false,
        };
        let a = churn_process(&s, 3, 1000);
        assert_eq!(a[0].1, Connect);
        assert!(a[0].0 > 0);
    }
}
