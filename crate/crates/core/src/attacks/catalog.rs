use serde::{Deserialize, Serialize};

use crate::losses::LossKind;
use crate::query_reduction::Scheme;

/// Attack procedures the toolkit can run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttackMethod {
    RandomNoise,
    DiffOfMeans,
    TransferFgs,
    TransferIfgs,
    Fd,
    Ifd,
    Spsa,
    Fgs,
    Ifgs,
}

impl AttackMethod {
    pub const ALL: [AttackMethod; 9] = [
        Self::RandomNoise,
        Self::DiffOfMeans,
        Self::TransferFgs,
        Self::TransferIfgs,
        Self::Fd,
        Self::Ifd,
        Self::Spsa,
        Self::Fgs,
        Self::Ifgs,
    ];

    pub fn knowledge(self) -> Knowledge {
        match self {
            Self::RandomNoise | Self::DiffOfMeans | Self::TransferFgs | Self::TransferIfgs => Knowledge::ZeroQuery,
            Self::Fd | Self::Ifd | Self::Spsa => Knowledge::QueryBased,
            Self::Fgs | Self::Ifgs => Knowledge::WhiteBox,
        }
    }

    pub fn is_iterative(self) -> bool {
        matches!(self, Self::TransferIfgs | Self::Ifd | Self::Spsa | Self::Ifgs)
    }

    /// Whether the method's behavior depends on the loss function.
    pub fn uses_loss(self) -> bool {
        !matches!(self, Self::RandomNoise | Self::DiffOfMeans)
    }

    pub fn supports_targeted(self) -> bool {
        self != Self::RandomNoise
    }

    /// Kebab-case identifier used in configs and on the command line.
    pub fn id(self) -> &'static str {
        match self {
            Self::RandomNoise => "random-noise",
            Self::DiffOfMeans => "diff-of-means",
            Self::TransferFgs => "transfer-fgs",
            Self::TransferIfgs => "transfer-ifgs",
            Self::Fd => "fd",
            Self::Ifd => "ifd",
            Self::Spsa => "spsa",
            Self::Fgs => "fgs",
            Self::Ifgs => "ifgs",
        }
    }

    pub fn from_id(id: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == id)
    }
}

/// How much access to the target an attack needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Knowledge {
    /// Black-box, no queries except the final verification.
    ZeroQuery,
    /// Black-box, queries the target's probabilities.
    QueryBased,
    /// Full gradient access.
    WhiteBox,
}

impl Knowledge {
    pub fn name(self) -> &'static str {
        match self {
            Self::ZeroQuery => "zero-query",
            Self::QueryBased => "query-based",
            Self::WhiteBox => "white-box",
        }
    }
}

/// One row of the attack taxonomy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CatalogEntry {
    pub method: AttackMethod,
    pub knowledge: Knowledge,
    pub loss: Option<LossKind>,
    pub scheme: Scheme,
    pub abbreviation: String,
    pub untargeted: bool,
    pub targeted: bool,
}

/// Every attack configuration family in the taxonomy, with its display
/// abbreviation. Query-reduced rows use a placeholder `k`.
pub fn catalog() -> Vec<CatalogEntry> {
    const K: usize = 8;
    let mut rows = Vec::new();
    let mut push = |method: AttackMethod, loss: Option<LossKind>, scheme: Scheme| {
        rows.push(CatalogEntry {
            method,
            knowledge: method.knowledge(),
            loss,
            scheme,
            abbreviation: display_name(method, loss.unwrap_or(LossKind::Logit), false, &scheme, false),
            untargeted: true,
            targeted: method.supports_targeted(),
        });
    };
    push(AttackMethod::RandomNoise, None, Scheme::None);
    push(AttackMethod::DiffOfMeans, None, Scheme::None);
    for method in [AttackMethod::TransferFgs, AttackMethod::TransferIfgs] {
        for loss in [LossKind::Xent, LossKind::Logit] {
            push(method, Some(loss), Scheme::None);
        }
    }
    for method in [AttackMethod::Fd, AttackMethod::Ifd] {
        for loss in [LossKind::Xent, LossKind::Logit] {
            push(method, Some(loss), Scheme::None);
        }
    }
    for scheme in [Scheme::RandomGroups { k: K }, Scheme::Pca { k: K }] {
        for method in [AttackMethod::Fd, AttackMethod::Ifd] {
            push(method, Some(LossKind::Logit), scheme);
        }
    }
    push(AttackMethod::Spsa, Some(LossKind::Logit), Scheme::None);
    for method in [AttackMethod::Fgs, AttackMethod::Ifgs] {
        for loss in [LossKind::Xent, LossKind::Logit] {
            push(method, Some(loss), Scheme::None);
        }
    }
    rows
}

/// Table-style abbreviation, e.g. `FD-logit`, `IGE-QR (PCA-100, logit)`,
/// `WB IFGS-xent-T` or `FD-logit (rand. init)`.
pub fn display_name(method: AttackMethod, loss: LossKind, targeted: bool, scheme: &Scheme, rand_init: bool) -> String {
    let l = loss.name();
    let mut name = match (method, scheme) {
        (AttackMethod::RandomNoise, _) => "Rand.".to_string(),
        (AttackMethod::DiffOfMeans, _) => "D. of M.".to_string(),
        (AttackMethod::TransferFgs, _) => format!("Transfer FGS-{l}"),
        (AttackMethod::TransferIfgs, _) => format!("Transfer IFGS-{l}"),
        (AttackMethod::Fd, Scheme::None) => format!("FD-{l}"),
        (AttackMethod::Ifd, Scheme::None) => format!("IFD-{l}"),
        (AttackMethod::Fd, s) => format!("GE-QR ({}, {l})", s.label()),
        (AttackMethod::Ifd, s) => format!("IGE-QR ({}, {l})", s.label()),
        (AttackMethod::Spsa, _) => format!("SPSA-{l}"),
        (AttackMethod::Fgs, _) => format!("WB FGS-{l}"),
        (AttackMethod::Ifgs, _) => format!("WB IFGS-{l}"),
    };
    if targeted {
        name.push_str("-T");
    }
    if rand_init {
        name.push_str(" (rand. init)");
    }
    name
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_follow_table_abbreviations() {
        assert_eq!(
            display_name(AttackMethod::Fd, LossKind::Logit, false, &Scheme::None, false),
            "FD-logit"
        );
        assert_eq!(
            display_name(
                AttackMethod::Ifd,
                LossKind::Logit,
                false,
                &Scheme::Pca { k: 100 },
                false
            ),
            "IGE-QR (PCA-100, logit)"
        );
        assert_eq!(
            display_name(
                AttackMethod::Fd,
                LossKind::Logit,
                true,
                &Scheme::RandomGroups { k: 8 },
                false
            ),
            "GE-QR (RG-8, logit)-T"
        );
        assert_eq!(
            display_name(AttackMethod::Ifgs, LossKind::Xent, false, &Scheme::None, false),
            "WB IFGS-xent"
        );
        assert_eq!(
            display_name(AttackMethod::Fd, LossKind::Logit, false, &Scheme::None, true),
            "FD-logit (rand. init)"
        );
    }

    #[test]
    fn catalog_covers_the_taxonomy() {
        let rows = catalog();
        assert_eq!(rows.len(), 2 + 4 + 4 + 4 + 1 + 4);
        assert!(rows.iter().all(|r| r.method.knowledge() == r.knowledge));
        assert_eq!(rows.iter().filter(|r| r.knowledge == Knowledge::WhiteBox).count(), 4);
        assert!(!rows[0].targeted);
        for m in AttackMethod::ALL {
            assert_eq!(AttackMethod::from_id(m.id()), Some(m));
        }
    }
}
