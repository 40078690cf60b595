use super::CounterImportance;
use crate::diag::{Anchor, DiagnosticId, DiagnosticLine, Source};
use crate::ingest::CounterDictionary;
use crate::util::fmt_sig3;

/// Renders `IA-xx: <name> — <description> (impact <w>)` lines, filling in
/// each selection's description from the dictionary (raw name if absent).
pub fn describe_counters(selection: &mut [CounterImportance], dict: &CounterDictionary) -> Vec<DiagnosticLine> {
    selection
        .iter_mut()
        .enumerate()
        .map(|(k, c)| {
            c.description = match dict.describe(&c.counter_name) {
                Some(d) => d.to_string(),
                None => {
                    log::warn!("counter `{}` has no dictionary entry; using its raw name", c.counter_name);
                    c.counter_name.clone()
                }
            };
            let id = DiagnosticId::new(Source::Ia, k + 1);
            c.diagnostic_id = id.to_string();
            DiagnosticLine {
                id,
                text: format!("{} — {} (impact {})", c.counter_name, c.description, fmt_sig3(c.avg_weight)),
                anchor: Anchor::Counter { name: c.counter_name.clone(), coefficient: c.mean_coefficient },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn importance(name: &str, w: f64) -> CounterImportance {
        CounterImportance {
            counter_name: name.into(),
            avg_weight: w,
            selection_frequency: 1.0,
            mean_coefficient: w,
            description: String::new(),
            diagnostic_id: String::new(),
        }
    }

    #[test]
    fn known_counter_line() {
        let dict: CounterDictionary = [(
            "lts__t_sectors_evict_first_lookup_miss.sum".to_string(),
            "high L2 cache evictions".to_string(),
        )]
        .into_iter()
        .collect();
        let mut sel = vec![importance("lts__t_sectors_evict_first_lookup_miss.sum", 0.18912)];
        let lines = describe_counters(&mut sel, &dict);
        assert_eq!(
            lines[0].rendered(),
            "IA-01: lts__t_sectors_evict_first_lookup_miss.sum — high L2 cache evictions (impact 0.189)"
        );
        assert_eq!(sel[0].diagnostic_id, "IA-01");
    }

    #[test]
    fn unknown_falls_back_to_name() {
        let mut sel = vec![importance("a", 1.0), importance("b", 0.5)];
        let lines = describe_counters(&mut sel, &CounterDictionary::default());
        assert_eq!(sel[1].description, "b");
        assert_eq!(lines[1].rendered(), "IA-02: b — b (impact 0.500)");
    }

    #[test]
    fn empty_selection() {
        assert!(describe_counters(&mut [], &CounterDictionary::default()).is_empty());
    }
}
