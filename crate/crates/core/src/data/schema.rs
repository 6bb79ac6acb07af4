//! Column layouts and class maps of the two supported datasets.
//!
//! NSL-KDD (`KDDTrain+.txt` / `KDDTest+.txt`): 41 features, the attack name,
//! then a difficulty score that is dropped. Files without the difficulty
//! column are accepted too.
//!
//! UNSW-NB15 (`UNSW_NB15_training-set.csv` / `UNSW_NB15_testing-set.csv`): a
//! row id, 42 features, the attack category and a 0/1 label. The id and the
//! 0/1 label are dropped; both tasks derive from the attack category, where an
//! empty cell means normal traffic.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetName {
    NslKdd,
    UnswNb15,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::NslKdd => "nsl-kdd",
            DatasetName::UnswNb15 => "unsw-nb15",
        }
    }
}

impl fmt::Display for DatasetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Binary,
    Multi,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Binary => "binary",
            Task::Multi => "multi",
        }
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Task::Binary),
            "multi" => Ok(Task::Multi),
            _ => Err(Error::InvalidArgument(format!("unknown task '{s}' (binary|multi)"))),
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSchema {
    pub name: DatasetName,
    /// Every column of a full row, in file order.
    pub columns: Vec<String>,
    pub feature_columns: Vec<(String, ColumnKind)>,
    pub label_column: String,
    pub drop_columns: Vec<String>,
    /// How many of the trailing dropped columns may be absent from a row.
    pub optional_trailing: usize,
    /// Multi-class vocabulary; index 0 is normal traffic.
    pub classes: Vec<String>,
    /// Raw label value (after normalization) to class index.
    pub class_map: Vec<(String, usize)>,
}

const NSL_KDD_FEATURES: [&str; 41] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
];

// Attack name -> category, covering every attack in the train and test files.
const NSL_KDD_ATTACKS: [(&str, &str); 39] = [
    ("back", "DoS"),
    ("land", "DoS"),
    ("neptune", "DoS"),
    ("pod", "DoS"),
    ("smurf", "DoS"),
    ("teardrop", "DoS"),
    ("apache2", "DoS"),
    ("mailbomb", "DoS"),
    ("processtable", "DoS"),
    ("udpstorm", "DoS"),
    ("ipsweep", "Probe"),
    ("nmap", "Probe"),
    ("portsweep", "Probe"),
    ("satan", "Probe"),
    ("mscan", "Probe"),
    ("saint", "Probe"),
    ("ftp_write", "R2L"),
    ("guess_passwd", "R2L"),
    ("imap", "R2L"),
    ("multihop", "R2L"),
    ("phf", "R2L"),
    ("spy", "R2L"),
    ("warezclient", "R2L"),
    ("warezmaster", "R2L"),
    ("named", "R2L"),
    ("sendmail", "R2L"),
    ("snmpgetattack", "R2L"),
    ("snmpguess", "R2L"),
    ("worm", "R2L"),
    ("xlock", "R2L"),
    ("xsnoop", "R2L"),
    ("buffer_overflow", "U2R"),
    ("loadmodule", "U2R"),
    ("perl", "U2R"),
    ("rootkit", "U2R"),
    ("httptunnel", "U2R"),
    ("ps", "U2R"),
    ("sqlattack", "U2R"),
    ("xterm", "U2R"),
];

const UNSW_NB15_FEATURES: [&str; 42] = [
    "dur",
    "proto",
    "service",
    "state",
    "spkts",
    "dpkts",
    "sbytes",
    "dbytes",
    "rate",
    "sttl",
    "dttl",
    "sload",
    "dload",
    "sloss",
    "dloss",
    "sinpkt",
    "dinpkt",
    "sjit",
    "djit",
    "swin",
    "stcpb",
    "dtcpb",
    "dwin",
    "tcprtt",
    "synack",
    "ackdat",
    "smean",
    "dmean",
    "trans_depth",
    "response_body_len",
    "ct_srv_src",
    "ct_state_ttl",
    "ct_dst_ltm",
    "ct_src_dport_ltm",
    "ct_dst_sport_ltm",
    "ct_dst_src_ltm",
    "is_ftp_login",
    "ct_ftp_cmd",
    "ct_flw_http_mthd",
    "ct_src_ltm",
    "ct_srv_dst",
    "is_sm_ips_ports",
];

const UNSW_NB15_CLASSES: [&str; 10] =
    ["Normal", "Analysis", "Backdoor", "DoS", "Exploits", "Fuzzers", "Generic", "Reconnaissance", "Shellcode", "Worms"];

fn features(names: &[&str], categorical: &[&str]) -> Vec<(String, ColumnKind)> {
    names
        .iter()
        .map(|&n| {
            let kind = if categorical.contains(&n) { ColumnKind::Categorical } else { ColumnKind::Numeric };
            (n.to_owned(), kind)
        })
        .collect()
}

impl DatasetSchema {
    pub fn nsl_kdd() -> Self {
        let classes: Vec<String> = ["Normal", "DoS", "Probe", "R2L", "U2R"].map(String::from).to_vec();
        let mut class_map = vec![("normal".to_owned(), 0)];
        for (attack, category) in NSL_KDD_ATTACKS {
            let idx = classes.iter().position(|c| c == category).unwrap();
            class_map.push((attack.to_owned(), idx));
        }
        let mut columns: Vec<String> = NSL_KDD_FEATURES.iter().map(|s| s.to_string()).collect();
        columns.push("label".into());
        columns.push("difficulty".into());
        Self {
            name: DatasetName::NslKdd,
            columns,
            feature_columns: features(&NSL_KDD_FEATURES, &["protocol_type", "service", "flag"]),
            label_column: "label".into(),
            drop_columns: vec!["difficulty".into()],
            optional_trailing: 1,
            classes,
            class_map,
        }
    }

    pub fn unsw_nb15() -> Self {
        let classes: Vec<String> = UNSW_NB15_CLASSES.map(String::from).to_vec();
        let mut class_map: Vec<(String, usize)> = classes.iter().cloned().zip(0..).collect();
        // Spelling used by the original four-part release.
        class_map.push(("Backdoors".into(), 2));
        // Benign rows may leave the category empty.
        class_map.push((String::new(), 0));
        let mut columns = vec!["id".to_owned()];
        columns.extend(UNSW_NB15_FEATURES.iter().map(|s| s.to_string()));
        columns.push("attack_cat".into());
        columns.push("label".into());
        Self {
            name: DatasetName::UnswNb15,
            columns,
            feature_columns: features(&UNSW_NB15_FEATURES, &["proto", "service", "state"]),
            label_column: "attack_cat".into(),
            drop_columns: vec!["id".into(), "label".into()],
            optional_trailing: 0,
            classes,
            class_map,
        }
    }

    pub fn for_name(name: DatasetName) -> Self {
        match name {
            DatasetName::NslKdd => Self::nsl_kdd(),
            DatasetName::UnswNb15 => Self::unsw_nb15(),
        }
    }

    pub fn feature_kind(&self, name: &str) -> Option<ColumnKind> {
        self.feature_columns.iter().find(|(n, _)| n == name).map(|(_, k)| *k)
    }

    /// Multi-class index of a raw label value. Surrounding whitespace and a
    /// trailing `.` are ignored.
    pub fn class_of(&self, raw: &str) -> Result<usize> {
        let key = normalize_label(raw);
        self.class_map
            .iter()
            .find(|(v, _)| v == key)
            .map(|(_, c)| *c)
            .ok_or_else(|| Error::UnknownLabel(raw.to_owned()))
    }
}

pub(crate) fn normalize_label(raw: &str) -> &str {
    let t = raw.trim();
    t.strip_suffix('.').unwrap_or(t)
}
