//! Two-round contributory group key agreement for networks with one
//! powerful leader and many constrained users.
//!
//! Users submit encrypted, signed random contributions; the leader
//! interpolates them together with its own point into a secret polynomial and
//! broadcasts its coefficients masked per user. Each user unmasks the secret
//! with a single XOR pass and checks with one Horner evaluation that its own
//! contribution lies on the polynomial.
//!
//! * [`field`]: GF(p) arithmetic, Horner evaluation, Lagrange interpolation.
//! * [`codec`]: secret, keystream, roster and wire-message encodings.
//! * [`crypto`]: primitive interfaces plus deterministic toy instantiations.
//! * [`protocol`]: leader and user state machines, join and leave.
//! * [`harness`]: deterministic network simulation, adversary scripts, cost metering.
//! * [`cli`]: the `gka` command-line front end.

pub mod cli;
pub mod codec;
pub mod crypto;
pub mod field;
pub mod harness;
pub mod meter;
pub mod protocol;

pub use codec::{BroadcastMessage, ContributionMessage, MasterSecret, Message, Roster, SessionKey};
pub use field::{FieldElement, FieldParams, SecretPolynomial};
pub use meter::OpCounts;
pub use protocol::{AbscissaMode, Counter, LeaderState, PartyId, Phase, ProtocolError, UserState};
