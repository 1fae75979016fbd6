use crate::error::{Error, Result};

/// Identity indices on each side of the name rule, in input order.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct NameSplit {
    pub train: Vec<usize>,
    pub eval: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Case-insensitive first letter A-E goes to evaluation, anything else to
/// training. Order within each side follows the input.
pub fn split_names<S: AsRef<str>>(names: &[S]) -> Result<NameSplit> {
    let mut out = NameSplit::default();
    for (i, name) in names.iter().enumerate() {
        let name = name.as_ref();
        let Some(first) = name.chars().next() else {
            return Err(Error::InvalidArgument(format!("identity {i} has an empty name")));
        };
        if !first.is_alphabetic() {
            out.warnings.push(format!(
                "identity {name:?} does not start with a letter; assigned to training"
            ));
        }
        if matches!(first.to_ascii_lowercase(), 'a'..='e') {
            out.eval.push(i);
        } else {
            out.train.push(i);
        }
    }
    if out.eval.is_empty() {
        out.warnings
            .push("evaluation split is empty (no names start with A-E)".into());
    }
    if out.train.is_empty() {
        out.warnings
            .push("training split is empty (every name starts with A-E)".into());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rule_application() {
        let s = split_names(&["Alice", "Zoe", "Bob", "Frank"]).unwrap();
        assert_eq!(s.eval, vec![0, 2]);
        assert_eq!(s.train, vec![1, 3]);
        assert!(s.warnings.is_empty());
    }

    #[test]
    fn case_insensitive_and_boundaries() {
        let s = split_names(&["eve", "Fred", "dan", "éric", "9lives"]).unwrap();
        assert_eq!(s.eval, vec![0, 2]);
        assert_eq!(s.train, vec![1, 3, 4]);
        assert_eq!(s.warnings.len(), 1);
    }

    #[test]
    fn empty_eval_warns() {
        let s = split_names(&["Fay", "Zed"]).unwrap();
        assert!(s.eval.is_empty());
        assert!(s.warnings.iter().any(|w| w.contains("evaluation split is empty")));
        assert!(split_names(&["Ann", ""]).is_err());
    }
}
