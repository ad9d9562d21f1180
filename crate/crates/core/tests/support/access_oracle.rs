//! Brute-force access oracle: enumerates every role × ownership × grant ×
//! scope × expiry × action combination, builds a real chain for each, and
//! compares `evaluate_access` against an explicit decision table.

use medledger_core::policy::{make_grant, make_registration, make_self_registration};
use medledger_core::testkit::extend;
use medledger_core::{evaluate_access, Access, Action, Chain, DenyReason, KeyPair, Role, Scope};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Case {
    pub role: Role,
    pub owns: bool,
    /// `(scope, expired)` when a grant exists.
    pub grant: Option<(Scope, bool)>,
    pub action: Action,
}

/// The decision table, written out row by row.
pub fn reference(case: Case) -> Access {
    use Access::*;
    use DenyReason::*;
    match (case.owns, case.role, case.grant, case.action) {
        (true, _, _, _) => Allow,
        (false, Role::Admin, _, _) => Allow,
        (false, _, None, _) => Deny(NoGrant),
        (false, _, Some((_, true)), _) => Deny(Expired),
        (false, _, Some((Scope::Read, false)), Action::Read) => Allow,
        (false, _, Some((Scope::Read, false)), Action::Write) => Deny(InsufficientScope),
        (false, _, Some((Scope::ReadWrite, false)), _) => Allow,
    }
}

pub fn all_cases() -> Vec<Case> {
    let mut out = Vec::new();
    for role in Role::ALL {
        for owns in [false, true] {
            // Only patients can own a patient id.
            if owns && role != Role::Patient {
                continue;
            }
            for grant in [
                None,
                Some((Scope::Read, false)),
                Some((Scope::Read, true)),
                Some((Scope::ReadWrite, false)),
                Some((Scope::ReadWrite, true)),
            ] {
                for action in [Action::Read, Action::Write] {
                    out.push(Case {
                        role,
                        owns,
                        grant,
                        action,
                    });
                }
            }
        }
    }
    out
}

const EXPIRES_AT: u64 = 1_000;

/// Evaluates `case` through a real mined chain.
pub fn evaluate(case: Case) -> Access {
    let admin = KeyPair::from_label("oracle:admin", Role::Admin, "admin");
    let owner = KeyPair::from_label("oracle:owner", Role::Patient, "owner");
    let requester = if case.owns {
        owner.clone()
    } else {
        KeyPair::from_label("oracle:requester", case.role, "requester")
    };
    let mut txs = vec![
        make_self_registration(&admin, None, 0),
        make_self_registration(&owner, Some(1), 0),
    ];
    if !case.owns {
        let pid = (case.role == Role::Patient).then_some(2);
        // Only the bootstrap identity may self-register as admin.
        txs.push(make_registration(
            &admin,
            &requester.public_key(),
            case.role,
            &requester.name,
            pid,
            0,
        ));
    }
    let mut chain = extend(&Chain::new(0), txs, 1);
    if let Some((scope, _)) = case.grant {
        let grant = make_grant(
            &owner,
            1,
            requester.identity_id(),
            scope,
            Some(EXPIRES_AT),
            1,
        );
        chain = extend(&chain, vec![grant], 2);
    }
    let now = match case.grant {
        Some((_, true)) => EXPIRES_AT + 1_000,
        _ => EXPIRES_AT - 1,
    };
    evaluate_access(chain.state(), &requester.identity_id(), 1, case.action, now)
}
