//! Logged-episode stores: CSV ingestion with validation, the normalized
//! store format, corpus export, and the bundled synthetic retail store.
//!
//! Input columns, matched by header name: `episode_id`, `t`, `order`,
//! `sales`, `censored`, and optionally `group` and `demand`. Other columns
//! are ignored. `censored` is `1`/`true` for a stockout (the conventional
//! event indicator equals `1 − censored`). A blank `demand` means unknown.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use icgps_core::env::{censor, CensoredObs, HistoryStep};
use icgps_core::harness::LabeledEpisode;
use icgps_core::rng::stream;
use icgps_core::train::{BehaviorPolicy, Episode};
use icgps_core::{DemandModel, FamilyPrior, ParamPrior, TaskPrior};

use crate::error::{LabError, Result};

/// Ingested episodes in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Store {
    pub ids: Vec<String>,
    pub episodes: Vec<LabeledEpisode>,
}

impl Store {
    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn steps(&self) -> usize {
        self.episodes.iter().map(|e| e.episode.len()).sum()
    }

    pub fn censored_fraction(&self) -> f64 {
        let c = self
            .episodes
            .iter()
            .flat_map(|e| &e.episode.steps)
            .filter(|s| s.obs.censored)
            .count();
        c as f64 / self.steps().max(1) as f64
    }

    /// Largest order, sale or demand value in the store.
    pub fn max_value(&self) -> f64 {
        let mut m: f64 = 0.0;
        for e in &self.episodes {
            for s in &e.episode.steps {
                m = m.max(s.order);
            }
            for d in e.episode.demands.iter().flatten() {
                m = m.max(*d);
            }
        }
        m
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Some(true),
        "0" | "false" => Some(false),
        _ => None,
    }
}

fn parse_value(row: usize, name: &str, s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| LabError::data(row, format!("{name} `{s}` is not a number")))?;
    if !(v >= 0.0 && v.is_finite()) {
        return Err(LabError::data(row, format!("{name} {v} must be finite and nonnegative")));
    }
    Ok(v)
}

struct Building {
    id: String,
    group: String,
    last_t: u64,
    steps: Vec<HistoryStep>,
    demands: Vec<Option<f64>>,
}

impl Building {
    fn finish(self, first_row: usize) -> Result<(String, LabeledEpisode)> {
        let known = self.demands.iter().filter(|d| d.is_some()).count();
        let demands = if known == self.demands.len() {
            Some(self.demands.into_iter().flatten().collect())
        } else if known == 0 {
            None
        } else {
            return Err(LabError::data(
                first_row,
                format!("episode `{}` mixes known and unknown demand", self.id),
            ));
        };
        let mut episode = Episode::new(self.steps)?;
        episode.demands = demands;
        Ok((
            self.id,
            LabeledEpisode {
                group: self.group,
                episode,
            },
        ))
    }
}

/// Parse and validate a store. Row numbers in errors are file line numbers
/// (the header is line 1).
pub fn read_store<R: Read>(reader: R) -> Result<Store> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| LabError::data(1, e))?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let need = |name: &str| col(name).ok_or_else(|| LabError::data(1, format!("missing column `{name}`")));
    let (c_id, c_t, c_order, c_sales, c_cens) =
        (need("episode_id")?, need("t")?, need("order")?, need("sales")?, need("censored")?);
    let (c_group, c_demand) = (col("group"), col("demand"));

    let mut store = Store {
        ids: Vec::new(),
        episodes: Vec::new(),
    };
    let mut seen: HashSet<String> = HashSet::new();
    let mut current: Option<(Building, usize)> = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| LabError::data(e.position().map_or(0, |p| p.line() as usize), e))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |c: usize| rec.get(c).unwrap_or("");
        let id = field(c_id).to_string();
        if id.is_empty() {
            return Err(LabError::data(row, "empty episode_id"));
        }
        let t: u64 = field(c_t)
            .parse()
            .map_err(|_| LabError::data(row, format!("t `{}` is not a nonnegative integer", field(c_t))))?;
        let order = parse_value(row, "order", field(c_order))?;
        let sales = parse_value(row, "sales", field(c_sales))?;
        let censored = parse_bool(field(c_cens))
            .ok_or_else(|| LabError::data(row, format!("censored `{}` is not 0/1/true/false", field(c_cens))))?;
        let demand = match c_demand.map(field) {
            Some(s) if !s.is_empty() => Some(parse_value(row, "demand", s)?),
            _ => None,
        };
        let group = c_group.map(field).filter(|g| !g.is_empty()).unwrap_or("all").to_string();

        if censored && sales != order {
            return Err(LabError::data(row, format!("censored row must have sales == order ({sales} != {order})")));
        }
        if !censored && sales > order {
            return Err(LabError::data(row, format!("sales {sales} exceed order {order}")));
        }
        if let Some(d) = demand {
            let consistent = if censored { d > order } else { d == sales };
            if !consistent {
                return Err(LabError::data(row, format!("demand {d} contradicts the censored observation")));
            }
        }

        let continuing = matches!(&current, Some((b, _)) if b.id == id);
        if !continuing {
            if let Some((b, first)) = current.take() {
                let (eid, ep) = b.finish(first)?;
                store.ids.push(eid);
                store.episodes.push(ep);
            }
            if !seen.insert(id.clone()) {
                return Err(LabError::data(row, format!("episode `{id}` is not contiguous")));
            }
            current = Some((
                Building {
                    id: id.clone(),
                    group: group.clone(),
                    last_t: t,
                    steps: Vec::new(),
                    demands: Vec::new(),
                },
                row,
            ));
        } else {
            let (b, _) = current.as_mut().unwrap();
            if t <= b.last_t {
                return Err(LabError::data(row, format!("t = {t} does not increase (previous {})", b.last_t)));
            }
            if group != b.group {
                return Err(LabError::data(row, format!("episode `{id}` changes group")));
            }
            b.last_t = t;
        }
        let (b, _) = current.as_mut().unwrap();
        b.steps.push(HistoryStep {
            order,
            obs: CensoredObs { sales, censored },
        });
        b.demands.push(demand);
    }
    if let Some((b, first)) = current.take() {
        let (eid, ep) = b.finish(first)?;
        store.ids.push(eid);
        store.episodes.push(ep);
    }
    if store.is_empty() {
        return Err(LabError::data(2, "store has no rows"));
    }
    Ok(store)
}

pub fn load(path: &Path) -> Result<Store> {
    let f = std::fs::File::open(path).map_err(|e| LabError::io(path, e))?;
    read_store(std::io::BufReader::new(f))
}

/// Normalized store: fixed column order, `t` renumbered from 1, `censored`
/// as 0/1, blank `demand` when unknown.
pub fn write_store<W: Write>(store: &Store, w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["episode_id", "group", "t", "order", "sales", "censored", "demand"])?;
    for (id, e) in store.ids.iter().zip(&store.episodes) {
        for (i, s) in e.episode.steps.iter().enumerate() {
            let demand = e.episode.demands.as_ref().map(|d| d[i].to_string()).unwrap_or_default();
            wtr.write_record([
                id.as_str(),
                e.group.as_str(),
                &(i + 1).to_string(),
                &s.order.to_string(),
                &s.obs.sales.to_string(),
                if s.obs.censored { "1" } else { "0" },
                &demand,
            ])?;
        }
    }
    wtr.flush().map_err(|e| LabError::Io {
        path: "<store>".into(),
        source: e,
    })?;
    Ok(())
}

/// Synthetic training corpus with latent columns.
pub fn write_corpus<W: Write>(corpus: &[Episode], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "episode_id",
        "t",
        "order",
        "sales",
        "censored",
        "demand",
        "true_family",
        "true_param1",
        "true_param2",
    ])?;
    for (i, e) in corpus.iter().enumerate() {
        let (family, params) = match &e.true_model {
            Some(m) if m.is_continuous() => (m.family_name().to_string(), m.params()),
            Some(m) => (m.family_name().to_string(), Vec::new()),
            None => (String::new(), Vec::new()),
        };
        let p = |k: usize| params.get(k).map(|v| v.to_string()).unwrap_or_default();
        for (t, s) in e.steps.iter().enumerate() {
            let demand = e.demands.as_ref().map(|d| d[t].to_string()).unwrap_or_default();
            wtr.write_record([
                i.to_string().as_str(),
                &(t + 1).to_string(),
                &s.order.to_string(),
                &s.obs.sales.to_string(),
                if s.obs.censored { "1" } else { "0" },
                &demand,
                &family,
                &p(0),
                &p(1),
            ])?;
        }
    }
    wtr.flush().map_err(|e| LabError::Io {
        path: "<corpus>".into(),
        source: e,
    })?;
    Ok(())
}

/// Product groups of the bundled store: lognormal `(mu, sigma)` ranges.
pub const STORE_GROUPS: [(&str, (f64, f64), (f64, f64)); 4] = [
    ("technology", (0.9, 1.3), (0.35, 0.55)),
    ("office", (1.3, 1.7), (0.25, 0.45)),
    ("furniture", (0.5, 0.9), (0.45, 0.65)),
    ("apparel", (1.0, 1.4), (0.55, 0.75)),
];
pub const STORE_EPISODES_PER_GROUP: usize = 5;
pub const STORE_HORIZON: usize = 40;
/// Logged orders sit at this quantile of each episode's demand law.
pub const STORE_LOG_LEVEL: f64 = 0.3;
pub const STORE_SEED: u64 = 20_240_601;

/// Prior covering every group of the bundled store.
pub fn store_prior() -> TaskPrior {
    let lo_mu = STORE_GROUPS.iter().map(|g| g.1 .0).fold(f64::INFINITY, f64::min);
    let hi_mu = STORE_GROUPS.iter().map(|g| g.1 .1).fold(0.0, f64::max);
    let lo_s = STORE_GROUPS.iter().map(|g| g.2 .0).fold(f64::INFINITY, f64::min);
    let hi_s = STORE_GROUPS.iter().map(|g| g.2 .1).fold(0.0, f64::max);
    TaskPrior::single(FamilyPrior::LogNormal {
        mu: ParamPrior::Uniform(lo_mu, hi_mu),
        sigma: ParamPrior::Uniform(lo_s, hi_s),
    })
}

/// The bundled 20-episode store: lognormal demand per episode, logged
/// orders at the episode's 0.3-quantile (about 70% of steps censored),
/// latent demand kept in the `demand` column.
pub fn synthetic_store(bound: f64) -> Result<Store> {
    let behavior = BehaviorPolicy::TaskQuantile { level: STORE_LOG_LEVEL };
    let mut store = Store {
        ids: Vec::new(),
        episodes: Vec::new(),
    };
    for (gi, (name, mu, sigma)) in STORE_GROUPS.iter().enumerate() {
        for k in 0..STORE_EPISODES_PER_GROUP {
            let mut rng = stream(STORE_SEED, "store", gi as u64, k as u64, 0);
            let m = mu.0 + (mu.1 - mu.0) * icgps_core::rng::unit(&mut rng);
            let s = sigma.0 + (sigma.1 - sigma.0) * icgps_core::rng::unit(&mut rng);
            let task = DemandModel::LogNormal {
                mu: round4(m),
                sigma: round4(s),
            };
            let mut ep = icgps_core::train::simulate_episode(&task, &behavior, STORE_HORIZON, bound, &mut rng)?;
            // Four decimals, like a real export; keep the censoring consistent.
            let demands: Vec<f64> = ep.demands.take().unwrap().into_iter().map(|d| round4(d).min(bound)).collect();
            let order = round4(ep.steps[0].order).min(bound);
            ep.steps = demands
                .iter()
                .map(|&d| HistoryStep {
                    order,
                    obs: censor(order, d).expect("rounded values stay in range"),
                })
                .collect();
            ep.demands = Some(demands);
            store.ids.push(format!("{name}-{}", k + 1));
            store.episodes.push(LabeledEpisode {
                group: name.to_string(),
                episode: ep,
            });
        }
    }
    Ok(store)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Store> {
        read_store(text.as_bytes())
    }

    #[test]
    fn well_formed_two_episodes() {
        let s = parse("episode_id,t,order,sales,censored\na,1,3,2,0\na,2,3,3,1\nb,1,4,1.5,false\n").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.ids, ["a", "b"]);
        assert_eq!(s.episodes[0].episode.len(), 2);
        assert!(s.episodes[0].episode.steps[1].obs.censored);
        assert_eq!(s.episodes[1].group, "all");
        assert!(s.episodes[0].episode.demands.is_none());
    }

    #[test]
    fn censored_sales_mismatch_cites_row() {
        match parse("episode_id,t,order,sales,censored\na,1,3,2,0\na,2,3,2.5,1\n") {
            Err(LabError::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn non_monotone_t_rejected() {
        match parse("episode_id,t,order,sales,censored\na,2,3,2,0\na,2,3,1,0\n") {
            Err(LabError::Data { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("does not increase"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_violations() {
        let head = "episode_id,t,order,sales,censored,demand\n";
        for (body, row) in [
            ("a,1,3,4,0,4\n", 2),
            ("a,1,3,2,0,2\nb,1,1,1,1,5\na,2,3,1,0,1\n", 4),
            ("a,1,3,2,0,2\na,2,3,3,1,2\n", 3),
            ("a,1,3,2,0,\na,2,3,3,1,5\n", 2),
            ("a,1,x,2,0,2\n", 2),
            ("a,1,3,2,maybe,2\n", 2),
        ] {
            match parse(&format!("{head}{body}")) {
                Err(LabError::Data { row: r, .. }) => assert_eq!(r, row, "{body}"),
                other => panic!("{body}: {other:?}"),
            }
        }
        assert!(matches!(parse("episode_id,t,order,sales\n"), Err(LabError::Data { row: 1, .. })));
    }

    #[test]
    fn normalized_round_trip() {
        let s = synthetic_store(40.0).unwrap();
        let mut buf = Vec::new();
        write_store(&s, &mut buf).unwrap();
        let back = read_store(buf.as_slice()).unwrap();
        // The generating task is not part of the file format.
        let mut s = s;
        for e in &mut s.episodes {
            e.episode.true_model = None;
        }
        assert_eq!(back, s);
    }

    #[test]
    fn synthetic_store_is_heavily_censored() {
        let s = synthetic_store(40.0).unwrap();
        assert_eq!(s.len(), 20);
        let f = s.censored_fraction();
        assert!((0.55..0.85).contains(&f), "censored fraction {f}");
        for e in &s.episodes {
            assert!(STORE_GROUPS.iter().any(|g| g.0 == e.group));
            assert_eq!(e.episode.len(), STORE_HORIZON);
        }
    }
}
