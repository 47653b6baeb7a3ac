//! Operation counters used to check the protocol's online-cost claims.

use std::ops::AddAssign;

use serde::Serialize;

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpCounts {
    pub field_mults: u64,
    pub xor_octets: u64,
    pub xor_passes: u64,
    pub hash_calls: u64,
    pub signs: u64,
    pub verifies: u64,
    pub encrypts: u64,
    pub decrypts: u64,
}

impl OpCounts {
    /// Counters accumulated since `earlier`.
    pub fn since(&self, earlier: &OpCounts) -> OpCounts {
        OpCounts {
            field_mults: self.field_mults - earlier.field_mults,
            xor_octets: self.xor_octets - earlier.xor_octets,
            xor_passes: self.xor_passes - earlier.xor_passes,
            hash_calls: self.hash_calls - earlier.hash_calls,
            signs: self.signs - earlier.signs,
            verifies: self.verifies - earlier.verifies,
            encrypts: self.encrypts - earlier.encrypts,
            decrypts: self.decrypts - earlier.decrypts,
        }
    }
}

impl AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: OpCounts) {
        self.field_mults += rhs.field_mults;
        self.xor_octets += rhs.xor_octets;
        self.xor_passes += rhs.xor_passes;
        self.hash_calls += rhs.hash_calls;
        self.signs += rhs.signs;
        self.verifies += rhs.verifies;
        self.encrypts += rhs.encrypts;
        self.decrypts += rhs.decrypts;
    }
}
