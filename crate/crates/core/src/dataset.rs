//! Synthetic scene metadata and scene-regularization filters.
//!
//! Each synthetic scene carries a density level, a time of day, a weather
//! code, its head count and a congestion ratio. A [`FilterRule`] keeps the
//! scenes whose attributes fall inside the target dataset's ranges; all
//! bounds are inclusive.
//!
//! Level codes: 0: 0~10, 1: 0~25, 2: 0~50, 3: 0~100, 4: 0~300, 5: 0~600,
//! 6: 0~1k, 7: 0~2k, 8: 0~4k heads.
//!
//! Weather codes: 0 clear, 1 clouds, 2 rain, 3 foggy, 4 thunder, 5 overcast,
//! 6 extra sunny.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const MAX_LEVEL: u8 = 8;
pub const MAX_WEATHER: u8 = 6;
pub const MINUTES_PER_DAY: u16 = 24 * 60;

#[derive(Debug, Clone, PartialEq)]
pub struct SceneMeta {
    pub id: String,
    pub level: u8,
    /// Minutes since midnight, `0..=1439`.
    pub time_minutes: u16,
    pub weather: u8,
    pub count: u64,
    pub ratio: f64,
}

impl SceneMeta {
    pub fn validate(&self) -> Result<()> {
        if self.level > MAX_LEVEL {
            return Err(Error::invalid(format!("scene {}: level {} > {MAX_LEVEL}", self.id, self.level)));
        }
        if self.time_minutes >= MINUTES_PER_DAY {
            return Err(Error::invalid(format!("scene {}: time {} out of range", self.id, self.time_minutes)));
        }
        if self.weather > MAX_WEATHER {
            return Err(Error::invalid(format!(
                "scene {}: weather {} > {MAX_WEATHER}",
                self.id, self.weather
            )));
        }
        if !(0.0..=1.0).contains(&self.ratio) {
            return Err(Error::invalid(format!("scene {}: ratio {} outside [0, 1]", self.id, self.ratio)));
        }
        Ok(())
    }
}

/// Parses `H:MM` / `HH:MM` into minutes since midnight, so `"19:59"` is 1199.
pub fn parse_time(s: &str) -> Result<u16> {
    let (h, m) = s
        .split_once(':')
        .ok_or_else(|| Error::invalid(format!("time `{s}` is not HH:MM")))?;
    let h: u16 = h.trim().parse().map_err(|_| Error::invalid(format!("bad hour in `{s}`")))?;
    let m: u16 = m.trim().parse().map_err(|_| Error::invalid(format!("bad minute in `{s}`")))?;
    if h > 23 || m > 59 {
        return Err(Error::invalid(format!("time `{s}` out of range")));
    }
    Ok(h * 60 + m)
}

pub fn format_time(minutes: u16) -> String {
    format!("{:02}:{:02}", minutes / 60, minutes % 60)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRule {
    levels: BTreeSet<u8>,
    time_range: (u16, u16),
    weathers: BTreeSet<u8>,
    count_range: (u64, u64),
    ratio_range: (f64, f64),
}

impl FilterRule {
    pub fn new(
        levels: impl IntoIterator<Item = u8>,
        time_range: (u16, u16),
        weathers: impl IntoIterator<Item = u8>,
        count_range: (u64, u64),
        ratio_range: (f64, f64),
    ) -> Result<Self> {
        let levels: BTreeSet<u8> = levels.into_iter().collect();
        let weathers: BTreeSet<u8> = weathers.into_iter().collect();
        if levels.is_empty() || weathers.is_empty() {
            return Err(Error::invalid("filter rule needs at least one level and one weather"));
        }
        if time_range.0 > time_range.1 || time_range.1 >= MINUTES_PER_DAY {
            return Err(Error::invalid(format!("bad time range {time_range:?}")));
        }
        if count_range.0 > count_range.1 {
            return Err(Error::invalid(format!("bad count range {count_range:?}")));
        }
        if !(ratio_range.0 <= ratio_range.1) {
            return Err(Error::invalid(format!("bad ratio range {ratio_range:?}")));
        }
        Ok(FilterRule {
            levels,
            time_range,
            weathers,
            count_range,
            ratio_range,
        })
    }

    pub fn levels(&self) -> &BTreeSet<u8> {
        &self.levels
    }

    pub fn time_range(&self) -> (u16, u16) {
        self.time_range
    }

    pub fn weathers(&self) -> &BTreeSet<u8> {
        &self.weathers
    }

    pub fn count_range(&self) -> (u64, u64) {
        self.count_range
    }

    pub fn ratio_range(&self) -> (f64, f64) {
        self.ratio_range
    }

    pub fn accepts(&self, meta: &SceneMeta) -> bool {
        fn within<T: PartialOrd>(v: T, (lo, hi): (T, T)) -> bool {
            lo <= v && v <= hi
        }
        self.levels.contains(&meta.level)
            && within(meta.time_minutes, self.time_range)
            && self.weathers.contains(&meta.weather)
            && within(meta.count, self.count_range)
            && within(meta.ratio, self.ratio_range)
    }
}

/// Real target datasets with a built-in filter preset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DatasetId {
    ShanghaiTechA,
    ShanghaiTechB,
    WorldExpo,
    UcfQnrf,
    Mall,
    Ucsd,
}

impl DatasetId {
    pub const ALL: [DatasetId; 6] = [
        DatasetId::ShanghaiTechA,
        DatasetId::ShanghaiTechB,
        DatasetId::WorldExpo,
        DatasetId::UcfQnrf,
        DatasetId::Mall,
        DatasetId::Ucsd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetId::ShanghaiTechA => "shta",
            DatasetId::ShanghaiTechB => "shtb",
            DatasetId::WorldExpo => "worldexpo",
            DatasetId::UcfQnrf => "ucf_qnrf",
            DatasetId::Mall => "mall",
            DatasetId::Ucsd => "ucsd",
        }
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DatasetId::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown dataset `{s}`")))
    }
}

const fn hm(h: u16, m: u16) -> u16 {
    h * 60 + m
}

/// The scene filter used when adapting to `dataset`.
pub fn preset_rule(dataset: DatasetId) -> FilterRule {
    let (levels, time, weathers, count, ratio): (&[u8], _, &[u8], _, _) = match dataset {
        DatasetId::ShanghaiTechA => (&[4, 5, 6, 7, 8], (hm(6, 0), hm(19, 59)), &[0, 1, 3, 5, 6], (25, 4000), (0.5, 1.0)),
        DatasetId::ShanghaiTechB => (&[1, 2, 3, 4, 5], (hm(6, 0), hm(19, 59)), &[0, 1, 5, 6], (10, 600), (0.3, 1.0)),
        DatasetId::WorldExpo => (&[2, 3, 4, 5, 6], (hm(6, 0), hm(18, 59)), &[0, 1, 5, 6], (0, 1000), (0.0, 1.0)),
        DatasetId::UcfQnrf => (&[4, 5, 6, 7, 8], (hm(5, 0), hm(20, 59)), &[0, 1, 5, 6], (400, 4000), (0.6, 1.0)),
        DatasetId::Mall | DatasetId::Ucsd => (&[1, 2, 3, 4], (hm(8, 0), hm(18, 59)), &[0, 1, 5, 6], (0, 200), (0.0, 1.0)),
    };
    FilterRule::new(levels.iter().copied(), time, weathers.iter().copied(), count, ratio)
        .expect("presets are well-formed")
}

/// Keeps the scenes accepted by `rule`, in input order.
pub fn filter_scenes(metas: &[SceneMeta], rule: &FilterRule) -> Vec<SceneMeta> {
    metas.iter().filter(|m| rule.accepts(m)).cloned().collect()
}
