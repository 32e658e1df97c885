//! Lexicographically sortable identifiers and event-time timestamps.

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use ulid::Ulid;

/// UTC milliseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub const MS_PER_DAY: f64 = 86_400_000.0;

    pub fn as_millis(self) -> i64 {
        self.0
    }

    /// Elapsed days from `earlier` to `self`; negative if `earlier` is later.
    pub fn days_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / Self::MS_PER_DAY
    }

    pub fn plus_days(self, days: f64) -> Timestamp {
        Timestamp(self.0 + (days * Self::MS_PER_DAY).round() as i64)
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

macro_rules! sortable_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub Ulid);

        impl $name {
            /// Millisecond timestamp embedded in the id.
            pub fn timestamp_ms(&self) -> u64 {
                self.0.timestamp_ms()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                self.0.fmt(f)
            }
        }

        impl FromStr for $name {
            type Err = ulid::DecodeError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                Ulid::from_string(s).map($name)
            }
        }

        impl From<Ulid> for $name {
            fn from(id: Ulid) -> Self {
                $name(id)
            }
        }
    };
}

sortable_id!(
    /// Identifies a captured memory trace.
    TraceId
);
sortable_id!(
    /// Identifies one immutable rationale version.
    VersionId
);
sortable_id!(
    /// Position-independent identity of a log event.
    EventId
);
sortable_id!(
    /// Identifies a drift report.
    FlagId
);

/// Source of "now" for the engine. Injected so tests can drive event time.
pub trait Clock: Send + Sync {
    fn now(&self) -> Timestamp;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> Timestamp {
        let ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0);
        Timestamp(ms)
    }
}

/// Manually advanced clock shared between the test and the engine.
#[derive(Debug, Clone)]
pub struct ManualClock(Arc<AtomicI64>);

impl ManualClock {
    pub fn new(start: Timestamp) -> Self {
        ManualClock(Arc::new(AtomicI64::new(start.0)))
    }

    pub fn set(&self, at: Timestamp) {
        self.0.store(at.0, Ordering::SeqCst);
    }

    pub fn advance_ms(&self, ms: i64) -> Timestamp {
        Timestamp(self.0.fetch_add(ms, Ordering::SeqCst) + ms)
    }

    pub fn advance_days(&self, days: f64) -> Timestamp {
        self.advance_ms((days * Timestamp::MS_PER_DAY).round() as i64)
    }
}

impl Clock for ManualClock {
    fn now(&self) -> Timestamp {
        Timestamp(self.0.load(Ordering::SeqCst))
    }
}

/// Produces strictly increasing 128-bit ids: 48-bit millisecond prefix,
/// 80 random bits. Within one millisecond (or if the clock steps back) the
/// previous id is incremented, so generation order always equals sort order.
#[derive(Debug, Clone)]
pub struct IdGenerator {
    last: Ulid,
    rng: ChaCha8Rng,
}

impl IdGenerator {
    pub fn new() -> Self {
        IdGenerator {
            last: Ulid::nil(),
            rng: ChaCha8Rng::from_entropy(),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        IdGenerator {
            last: Ulid::nil(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Never hand out an id at or below `floor` (used after replay).
    pub fn observe(&mut self, floor: Ulid) {
        if floor > self.last {
            self.last = floor;
        }
    }

    pub fn next(&mut self, now: Timestamp) -> Ulid {
        let ms = now.0.max(0) as u64;
        let candidate = Ulid::from_parts(ms, self.rng.gen::<u128>());
        let id = if candidate > self.last {
            candidate
        } else {
            self.last.increment().unwrap_or_else(|| {
                // random bits exhausted: borrow the next millisecond
                Ulid::from_parts(self.last.timestamp_ms() + 1, self.rng.gen::<u128>())
            })
        };
        self.last = id;
        id
    }
}

impl Default for IdGenerator {
    fn default() -> Self {
        Self::new()
    }
}
