//! JSON form `{variables, weights, cap, terms: [{exp, re, im}]}`.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::{Exp, Series, Space, C64, DEFAULT_EPS};

#[derive(Serialize, Deserialize)]
struct TermJson {
    exp: Vec<u16>,
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct SeriesJson {
    variables: Vec<String>,
    weights: Vec<u32>,
    cap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    param_cap: Option<u32>,
    terms: Vec<TermJson>,
}

impl Serialize for Series {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        let sp = self.space();
        let j = SeriesJson {
            variables: sp.names().to_vec(),
            weights: sp.weights().to_vec(),
            cap: sp.cap(),
            param_cap: sp.weights().contains(&0).then_some(sp.param_cap()),
            terms: self.iter().map(|(e, v)| TermJson { exp: e.to_vec(), re: v.re, im: v.im }).collect(),
        };
        j.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Series {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        use serde::de::Error;
        let j = SeriesJson::deserialize(d)?;
        if j.variables.len() != j.weights.len() {
            return Err(D::Error::custom("variables and weights differ in length"));
        }
        let sp = Space::with_options(j.variables, j.weights, j.cap, j.param_cap.unwrap_or(j.cap), DEFAULT_EPS);
        let mut terms = Vec::with_capacity(j.terms.len());
        for t in j.terms {
            if t.exp.len() != sp.nvars() {
                return Err(D::Error::custom("exponent length differs from variable count"));
            }
            terms.push((Exp::from_vec(t.exp), C64::new(t.re, t.im)));
        }
        Ok(Series::from_terms(&sp, terms))
    }
}

#[cfg(test)]
mod tests {
    use super::super::parse::parse_series;
    use super::*;

    #[test]
    fn round_trip_and_canonical_order() {
        let sp = Space::new(["x", "xi", "h"], vec![1, 1, 2], 6);
        let s = parse_series("x^2*xi - 0.5i*h + 3*xi + 1", &sp).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Series = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
        assert!(text.starts_with(r#"{"variables":["x","xi","h"],"weights":[1,1,2],"cap":6,"terms":[{"exp":[0,0,0]"#));
        assert_eq!(serde_json::to_string(&back).unwrap(), text);
    }

    #[test]
    fn malformed_rejected() {
        let bad = r#"{"variables":["x"],"weights":[1,2],"cap":3,"terms":[]}"#;
        assert!(serde_json::from_str::<Series>(bad).is_err());
        let bad = r#"{"variables":["x"],"weights":[1],"cap":3,"terms":[{"exp":[1,1],"re":1,"im":0}]}"#;
        assert!(serde_json::from_str::<Series>(bad).is_err());
    }
}
