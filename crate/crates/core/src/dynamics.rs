//! Lookup-table coarse dynamics: the mean per-cycle body-frame displacement
//! of each primitive.
//!
//! Statistics are kept in Cartesian delta space `(dx, dy, dbeta)` and only
//! converted to `(r, alpha, beta)` on read, so averaging stays unbiased for
//! short displacements.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{DeltaPose, Pose2};
use crate::policy::{ActionMode, PrimitiveId, PrimitiveLibrary};
use crate::sim::{SimState, Simulator};

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Running mean and sum of squared deviations (Welford).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaStats {
    pub count: u64,
    /// Mean of (dx, dy, dbeta).
    pub mean: [f64; 3],
    pub m2: [f64; 3],
    /// Entry is fixed (e.g. a zeroed stand primitive) and ignores updates.
    #[serde(default)]
    pub pinned: bool,
}

impl DeltaStats {
    pub fn push(&mut self, sample: [f64; 3]) {
        if self.pinned {
            return;
        }
        self.count += 1;
        let n = self.count as f64;
        for k in 0..3 {
            let d = sample[k] - self.mean[k];
            self.mean[k] += d / n;
            self.m2[k] += d * (sample[k] - self.mean[k]);
        }
    }

    /// Unbiased sample variance; zero with fewer than two samples.
    pub fn variance(&self) -> [f64; 3] {
        if self.count < 2 {
            return [0.0; 3];
        }
        self.m2.map(|v| v / (self.count - 1) as f64)
    }

    pub fn standard_error(&self) -> [f64; 3] {
        let n = self.count.max(1) as f64;
        self.variance().map(|v| (v / n).sqrt())
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LookupTable {
    entries: [DeltaStats; 4],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableFile {
    version: u32,
    entries: Vec<TableEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableEntry {
    primitive: String,
    count: u64,
    mean: [f64; 3],
    m2: [f64; 3],
    variance: [f64; 3],
    pinned: bool,
}

impl LookupTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self, id: PrimitiveId) -> &DeltaStats {
        &self.entries[id.index()]
    }

    pub fn update(&mut self, id: PrimitiveId, delta: &DeltaPose) {
        let (dx, dy) = delta.to_cartesian();
        self.entries[id.index()].push([dx, dy, delta.beta]);
    }

    /// Hard-sets an entry to the given displacement and stops updating it.
    pub fn pin(&mut self, id: PrimitiveId, delta: &DeltaPose) {
        let (dx, dy) = delta.to_cartesian();
        self.entries[id.index()] = DeltaStats {
            count: 1,
            mean: [dx, dy, delta.beta],
            m2: [0.0; 3],
            pinned: true,
        };
    }

    pub fn predict(&self, id: PrimitiveId) -> Result<DeltaPose> {
        let e = &self.entries[id.index()];
        if e.count == 0 {
            return Err(Error::UnseenPrimitive(id.index()));
        }
        Ok(DeltaPose::from_cartesian(e.mean[0], e.mean[1], e.mean[2]))
    }

    pub fn is_complete(&self) -> bool {
        self.entries.iter().all(|e| e.count > 0)
    }

    /// Predicted poses after each primitive, starting with `pose0`.
    pub fn rollout(&self, pose0: Pose2, sequence: &[PrimitiveId]) -> Result<Vec<Pose2>> {
        let mut poses = Vec::with_capacity(sequence.len() + 1);
        poses.push(pose0);
        let mut p = pose0;
        for &id in sequence {
            p = p.compose(&self.predict(id)?);
            poses.push(p);
        }
        Ok(poses)
    }

    pub fn to_json(&self) -> String {
        let file = TableFile {
            version: TABLE_FORMAT_VERSION,
            entries: PrimitiveId::ALL
                .iter()
                .map(|&id| {
                    let e = &self.entries[id.index()];
                    TableEntry {
                        primitive: id.name().to_string(),
                        count: e.count,
                        mean: e.mean,
                        m2: e.m2,
                        variance: e.variance(),
                        pinned: e.pinned,
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("table serialises")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TableFile =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("table file: {e}")))?;
        if file.version != TABLE_FORMAT_VERSION {
            return Err(Error::Format(format!(
                "table format version {} unsupported (expected {TABLE_FORMAT_VERSION})",
                file.version
            )));
        }
        let mut table = LookupTable::new();
        let mut seen = [false; 4];
        for e in file.entries {
            let id = PrimitiveId::from_name(&e.primitive)
                .ok_or_else(|| Error::Format(format!("unknown primitive '{}'", e.primitive)))?;
            if std::mem::replace(&mut seen[id.index()], true) {
                return Err(Error::Format(format!("duplicate entry '{}'", e.primitive)));
            }
            if e.mean.iter().chain(&e.m2).any(|v| !v.is_finite()) {
                return Err(Error::Format(format!("non-finite entry '{}'", e.primitive)));
            }
            table.entries[id.index()] = DeltaStats {
                count: e.count,
                mean: e.mean,
                m2: e.m2,
                pinned: e.pinned,
            };
        }
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TableLearning {
    pub cycles: usize,
    pub steps_per_cycle: usize,
    /// Pin the stand entry to exactly zero displacement.
    pub zero_stand: bool,
    pub seed: u64,
}

impl Default for TableLearning {
    fn default() -> Self {
        Self {
            cycles: 50,
            steps_per_cycle: 100,
            zero_stand: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub table: LookupTable,
    pub state: SimState,
    /// Executed primitive and measured displacement per cycle.
    pub cycles: Vec<(PrimitiveId, DeltaPose)>,
    /// Set when the simulator failed; the table holds completed cycles.
    pub error: Option<Error>,
}

/// Runs `cycles` uniformly random primitives back to back from `state` and
/// averages their measured displacements.
pub fn learn_table(
    sim: &Simulator,
    library: &PrimitiveLibrary,
    state: SimState,
    settings: &TableLearning,
) -> LearnOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut table = LookupTable::new();
    if settings.zero_stand {
        table.pin(PrimitiveId::Stand, &DeltaPose::ZERO);
    }
    let mut state = state;
    let mut cycles = Vec::with_capacity(settings.cycles);
    for _ in 0..settings.cycles {
        let id = PrimitiveId::ALL[rng.random_range(0..PrimitiveId::ALL.len())];
        let out = sim.run_cycle(
            &state,
            library.get(id),
            settings.steps_per_cycle,
            ActionMode::Deterministic,
            &mut rng,
        );
        match out {
            Ok(o) => {
                table.update(id, &o.delta);
                cycles.push((id, o.delta));
                state = o.state;
            }
            Err(e) => {
                return LearnOutcome {
                    table,
                    state,
                    cycles,
                    error: Some(e),
                }
            }
        }
    }
    LearnOutcome {
        table,
        state,
        cycles,
        error: None,
    }
}
