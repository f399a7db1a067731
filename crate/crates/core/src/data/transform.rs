use super::RawSeries;
use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Relative change between consecutive points: `(x[t+1] - x[t]) / x[t]`.
pub fn pct_change(s: &RawSeries) -> Result<RawSeries> {
    let v = s.values();
    let (len, n) = (v.rows(), v.cols());
    let mut out = Vec::with_capacity((len - 1) * n);
    for t in 0..len - 1 {
        for c in 0..n {
            let prev = v.get(t, c);
            if prev == 0.0 {
                return Err(Error::ZeroDenominator {
                    channel: s.channel_names[c].clone(),
                    index: t,
                });
            }
            out.push((v.get(t + 1, c) - prev) / prev);
        }
    }
    if len < 2 {
        return Err(Error::invalid(format!(
            "series `{}` is too short for a percentage transform",
            s.name
        )));
    }
    let values = Tensor::new(vec![len - 1, n], out)?;
    RawSeries::new(s.name.clone(), s.channel_names.clone(), values)
}

/// Inverts [`pct_change`] given the first row of the original series.
pub fn cumulative_reconstruct(changes: &Tensor, first: &[f64]) -> Tensor {
    let n = first.len();
    let mut rows = Vec::with_capacity((changes.rows() + 1) * n);
    rows.extend_from_slice(first);
    let mut prev = first.to_vec();
    for t in 0..changes.rows() {
        for c in 0..n {
            prev[c] *= 1.0 + changes.get(t, c);
        }
        rows.extend_from_slice(&prev);
    }
    Tensor::from_rows(&rows.chunks(n).collect::<Vec<_>>()).expect("consistent widths")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(values: Vec<f64>) -> RawSeries {
        RawSeries::from_channels("s", &[("close", values)]).unwrap()
    }

    #[test]
    fn definition_examples() {
        let two = pct_change(&one(vec![100.0, 110.0])).unwrap();
        assert_eq!(two.len(), 1);
        assert!((two.channel(0)[0] - 0.10).abs() < 1e-15);

        let out = pct_change(&one(vec![100.0, 110.0, 99.0])).unwrap();
        let got = out.channel(0);
        assert!((got[0] - 0.10).abs() < 1e-15);
        assert!((got[1] + 0.10).abs() < 1e-15);

        let flat = pct_change(&one(vec![5.0, 5.0, 5.0])).unwrap();
        assert_eq!(flat.channel(0), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_denominator_names_channel() {
        let s = RawSeries::from_channels("s", &[("open", vec![1.0, 2.0, 3.0]), ("close", vec![1.0, 0.0, 2.0])])
            .unwrap();
        match pct_change(&s) {
            Err(Error::ZeroDenominator { channel, index }) => {
                assert_eq!(channel, "close");
                assert_eq!(index, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn reconstruction_recovers_series(
            values in proptest::collection::vec(prop_oneof![1.0..500.0f64, -500.0..-1.0f64], 3..40)
        ) {
            let s = one(values.clone());
            let ch = pct_change(&s).unwrap();
            let rec = cumulative_reconstruct(ch.values(), &[values[0]]);
            for (t, v) in values.iter().enumerate() {
                let r = rec.get(t, 0);
                prop_assert!((r - v).abs() <= 1e-10 * v.abs());
            }
        }
    }
}
