//! The ordered core set, good-set membership and the eluder-style size cap.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::mdp::{ActionId, FeatureMap, StateId};
use crate::numerics::{FeatureVector, GramState};

/// Upper bound on the number of core-set insertions when every insertion
/// has uncertainty above `tau` and features lie in the unit ball:
///
/// `C_max = e/(e-1) · (1+τ)/τ · d · (ln(1 + 1/τ) + ln(1 + 1/λ))`.
pub fn c_max(dim: usize, tau: f64, lambda: f64) -> f64 {
    let e = std::f64::consts::E;
    e / (e - 1.0) * (1.0 + tau) / tau * dim as f64 * ((1.0 / tau).ln_1p() + (1.0 / lambda).ln_1p())
}

/// Core-set element `(s, a, φ(s, a), q)`; `q_estimate` is `None` until a
/// rollout estimates it for the current policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreSetEntry {
    pub state: StateId,
    pub action: ActionId,
    pub feature: FeatureVector,
    pub q_estimate: Option<f64>,
}

impl CoreSetEntry {
    pub fn new(state: StateId, action: ActionId, feature: FeatureVector) -> Self {
        Self {
            state,
            action,
            feature,
            q_estimate: None,
        }
    }
}

/// Bookkeeping for one insertion, used to check the determinant-growth
/// argument after the fact.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub uncertainty: f64,
    pub log_det_before: f64,
    pub log_det_after: f64,
}

/// Ordered core set with its regularized Gram matrix. Entries are never
/// reordered: rollouts run over them in insertion order.
#[derive(Debug, Clone)]
pub struct CoreSet {
    entries: Vec<CoreSetEntry>,
    gram: GramState,
    tau: f64,
    insertions: Vec<Insertion>,
}

impl CoreSet {
    pub fn new(dim: usize, lambda: f64, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(invalid("tau", format!("must be positive, got {tau}")));
        }
        Ok(Self {
            entries: Vec::new(),
            gram: GramState::new(dim, lambda)?,
            tau,
            insertions: Vec::new(),
        })
    }

    /// Seeds the core set from the initial state: actions are scanned in
    /// index order, the first is always added and every later one is added
    /// iff it is outside the current good set.
    pub fn initialize<F: FeatureMap + ?Sized>(
        rho: StateId,
        fmap: &F,
        action_count: usize,
        lambda: f64,
        tau: f64,
    ) -> Result<Self> {
        let mut set = Self::new(fmap.dim(), lambda, tau)?;
        for a in 0..action_count {
            let phi = fmap.feature(rho, ActionId(a))?;
            if set.is_empty() || !set.is_confident(&phi)? {
                set.add_entry(CoreSetEntry::new(rho, ActionId(a), phi))?;
            }
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[CoreSetEntry] {
        &self.entries
    }

    pub fn gram(&self) -> &GramState {
        &self.gram
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn lambda(&self) -> f64 {
        self.gram.lambda()
    }

    pub fn dim(&self) -> usize {
        self.gram.dim()
    }

    pub fn c_max(&self) -> f64 {
        c_max(self.dim(), self.tau, self.lambda())
    }

    pub fn insertions(&self) -> &[Insertion] {
        &self.insertions
    }

    pub fn uncertainty(&self, phi: &FeatureVector) -> Result<f64> {
        self.gram.uncertainty(phi)
    }

    /// Good-set membership: `φᵀA⁻¹φ ≤ τ`. Ties count as confident.
    pub fn is_confident(&self, phi: &FeatureVector) -> Result<bool> {
        Ok(self.gram.uncertainty(phi)? <= self.tau)
    }

    /// Appends `entry` and updates the Gram matrix. Fails with
    /// [`Error::BoundViolation`] once the size would reach `C_max`.
    pub fn add_entry(&mut self, entry: CoreSetEntry) -> Result<()> {
        check_dim(self.dim(), entry.feature.dim())?;
        let c_max = self.c_max();
        let size = self.entries.len() + 1;
        if size as f64 >= c_max {
            return Err(Error::BoundViolation { size, c_max });
        }
        let uncertainty = self.gram.uncertainty(&entry.feature)?;
        let next = self.gram.rank_one_update(&entry.feature)?;
        self.insertions.push(Insertion {
            uncertainty,
            log_det_before: self.gram.log_det(),
            log_det_after: next.log_det(),
        });
        self.gram = next;
        self.entries.push(entry);
        Ok(())
    }

    pub fn reset_estimates(&mut self) {
        for e in &mut self.entries {
            e.q_estimate = None;
        }
    }

    pub fn set_estimates(&mut self, estimates: &[f64]) -> Result<()> {
        if estimates.len() != self.entries.len() {
            return Err(Error::LengthMismatch {
                left: self.entries.len(),
                right: estimates.len(),
            });
        }
        for (e, &q) in self.entries.iter_mut().zip(estimates) {
            e.q_estimate = Some(q);
        }
        Ok(())
    }

    pub fn features(&self) -> Vec<FeatureVector> {
        self.entries.iter().map(|e| e.feature.clone()).collect()
    }

    /// Ridge weights from the stored estimates; every estimate must be set.
    pub fn ridge_weights(&self) -> Result<Vec<f64>> {
        let targets = self
            .entries
            .iter()
            .map(|e| e.q_estimate.ok_or_else(|| invalid("q_estimate", "missing estimate")))
            .collect::<Result<Vec<_>>>()?;
        self.gram.ridge_solve(&self.features(), &targets)
    }

    /// Line-oriented dump: `state<TAB>action<TAB>f1,f2,...<TAB>q|none`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let features = e
                .feature
                .as_slice()
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",");
            let q = e.q_estimate.map_or_else(|| "none".to_string(), |q| q.to_string());
            let _ = writeln!(out, "{}\t{}\t{}\t{}", e.state, e.action, features, q);
        }
        out
    }
}

/// Parses the format written by [`CoreSet::to_text`].
pub fn parse_entries(text: &str) -> Result<Vec<CoreSetEntry>> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(parse_err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let state = fields[0]
            .parse()
            .map_err(|e| parse_err(format!("state: {e}")))?;
        let action = fields[1]
            .parse()
            .map_err(|e| parse_err(format!("action: {e}")))?;
        let values = fields[2]
            .split(',')
            .map(|x| x.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| parse_err(format!("feature: {e}")))?;
        let feature = FeatureVector::new(values).map_err(|e| parse_err(e.to_string()))?;
        let q_estimate = match fields[3] {
            "none" => None,
            q => Some(q.parse().map_err(|e| parse_err(format!("q: {e}")))?),
        };
        entries.push(CoreSetEntry {
            state: StateId(state),
            action: ActionId(action),
            feature,
            q_estimate,
        });
    }
    Ok(entries)
}
