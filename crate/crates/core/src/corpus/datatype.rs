use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

macro_rules! data_types {
    ($($variant:ident => $name:literal),+ $(,)?) => {
        /// One of the 32 data categories of an iOS privacy label.
        ///
        /// Declaration order is the canonical column order used by every
        /// table and CSV the crate writes.
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        #[repr(u8)]
        pub enum DataType {
            $($variant),+
        }

        impl DataType {
            pub const ALL: [DataType; 32] = [$(DataType::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $(DataType::$variant => $name),+
                }
            }
        }
    };
}

data_types! {
    Name => "Name",
    EmailAddress => "Email Address",
    PhoneNumber => "Phone Number",
    PhysicalAddress => "Physical Address",
    OtherUserContactInfo => "Other User Contact Info",
    Health => "Health",
    Fitness => "Fitness",
    PaymentInfo => "Payment Info",
    CreditInfo => "Credit Info",
    OtherFinancialInfo => "Other Financial Info",
    PreciseLocation => "Precise Location",
    CoarseLocation => "Coarse Location",
    SensitiveInfo => "Sensitive Info",
    Contacts => "Contacts",
    EmailsOrTextMessages => "Emails or Text Messages",
    PhotosOrVideos => "Photos or Videos",
    AudioData => "Audio Data",
    GameplayContent => "Gameplay Content",
    CustomerSupport => "Customer Support",
    OtherUserContent => "Other User Content",
    BrowsingHistory => "Browsing History",
    SearchHistory => "Search History",
    UserId => "User Id",
    DeviceId => "Device Id",
    PurchaseHistory => "Purchase History",
    ProductInteraction => "Product Interaction",
    AdvertisingData => "Advertising Data",
    OtherUsageData => "Other Usage Data",
    CrashData => "Crash Data",
    PerformanceData => "Performance Data",
    OtherDiagnosticData => "Other Diagnostic Data",
    OtherDataTypes => "Other Data Types",
}

impl DataType {
    pub const COUNT: usize = 32;

    /// Position in the canonical order, `0..32`.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<DataType> {
        Self::ALL.get(index).copied()
    }

    /// Lowercase, dash-separated form used in file names.
    pub fn slug(self) -> String {
        self.name().to_ascii_lowercase().replace(' ', "-")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown data type `{0}`")]
pub struct UnknownDataType(pub String);

impl FromStr for DataType {
    type Err = UnknownDataType;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|d| d.name() == s)
            .ok_or_else(|| UnknownDataType(s.to_string()))
    }
}

impl fmt::Display for DataType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for DataType {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for DataType {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn exactly_32_distinct_and_ordered() {
        let names: HashSet<_> = DataType::ALL.iter().map(|d| d.name()).collect();
        assert_eq!(names.len(), 32);
        for (i, d) in DataType::ALL.iter().enumerate() {
            assert_eq!(d.index(), i);
            assert_eq!(DataType::from_index(i), Some(*d));
        }
        assert_eq!(DataType::ALL[0], DataType::Name);
        assert_eq!(DataType::ALL[31], DataType::OtherDataTypes);
    }

    #[test]
    fn name_round_trip() {
        for d in DataType::ALL {
            assert_eq!(d.name().parse::<DataType>().unwrap(), d);
        }
        assert!("Nmae".parse::<DataType>().is_err());
        assert_eq!(DataType::EmailsOrTextMessages.slug(), "emails-or-text-messages");
    }
}
