//! JSON has no infinities; these adapters write them as strings.

use serde::{de, Deserialize, Deserializer, Serializer};

#[derive(Deserialize)]
#[serde(untagged)]
enum Repr {
    Num(f64),
    Str(String),
}

fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
    match r {
        Repr::Num(v) => Ok(v),
        Repr::Str(s) => match s.as_str() {
            "-inf" => Ok(f64::NEG_INFINITY),
            "inf" => Ok(f64::INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(E::custom(format!("expected a number, got \"{other}\""))),
        },
    }
}

pub mod extended_f64 {
    use super::*;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }
}

pub mod extended_f64_opt {
    use super::*;

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(v) => extended_f64::serialize(v, s),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        Option::<Repr>::deserialize(d)?.map(from_repr).transpose()
    }
}

#[cfg(test)]
mod tests {
    use serde::{Deserialize, Serialize};

    #[derive(Debug, Serialize, Deserialize, PartialEq)]
    struct Probe {
        #[serde(with = "super::extended_f64")]
        v: f64,
        #[serde(with = "super::extended_f64_opt", default)]
        o: Option<f64>,
    }

    #[test]
    fn infinities_round_trip() {
        for v in [f64::NEG_INFINITY, f64::INFINITY, 0.455, -1.0] {
            let p = Probe { v, o: Some(v) };
            let s = serde_json::to_string(&p).unwrap();
            let back: Probe = serde_json::from_str(&s).unwrap();
            assert_eq!(back, p);
            assert_eq!(serde_json::to_string(&back).unwrap(), s);
        }
        let p: Probe = serde_json::from_str(r#"{"v": "-inf", "o": null}"#).unwrap();
        assert_eq!(p.v, f64::NEG_INFINITY);
        assert_eq!(p.o, None);
    }
}
