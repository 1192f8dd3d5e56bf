use std::fmt;
use std::str::FromStr;

use crate::error::Error;

macro_rules! vocabulary {
    ($(#[$m:meta])* $name:ident { $($var:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum $name {
            $($var),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$var),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$var => $s),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self, Error> {
                match s.trim() {
                    $($s => Ok($name::$var),)+
                    other => Err(Error::Data(format!(
                        "'{other}' is not a valid {}; expected one of: {}",
                        stringify!($name),
                        [$($s),+].join(", ")
                    ))),
                }
            }
        }
    };
}

vocabulary!(
    /// Anatomical site of the lesion.
    Region {
        HeadNeck => "head_neck",
        Trunk => "trunk",
        UpperExtremity => "upper_extremity",
        LowerExtremity => "lower_extremity",
        Acral => "acral",
    }
);

vocabulary!(
    /// Skin phototype collapsed to two groups.
    SkinTone {
        Light => "light",
        Dark => "dark",
    }
);

vocabulary!(Gender {
    Male => "male",
    Female => "female",
});

vocabulary!(AgeGroup {
    Young => "18-30",
    Middle => "31-50",
    Senior => "51+",
});

/// Per-sample labels. Absent fields come from blank metadata cells.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Meta {
    pub region: Option<Region>,
    pub skin_tone: Option<SkinTone>,
    pub gender: Option<Gender>,
    pub age_group: Option<AgeGroup>,
}

impl Meta {
    pub fn complete(region: Region, skin_tone: SkinTone, gender: Gender, age_group: AgeGroup) -> Self {
        Meta {
            region: Some(region),
            skin_tone: Some(skin_tone),
            gender: Some(gender),
            age_group: Some(age_group),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.region.is_some() && self.skin_tone.is_some() && self.gender.is_some() && self.age_group.is_some()
    }
}

/// Parse an optional vocabulary cell; blank means absent.
pub fn parse_cell<V: FromStr<Err = Error>>(cell: &str) -> Result<Option<V>, Error> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        cell.parse().map(Some)
    }
}
