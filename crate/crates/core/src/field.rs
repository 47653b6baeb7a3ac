//! Prime-field arithmetic over GF(p), Horner evaluation and Lagrange interpolation.
//!
//! Elements carry a shared handle to their [`FieldParams`] so that mixing
//! moduli is detectable. Values are arbitrary precision; the protocol uses
//! 61-bit primes for tests and a 256-bit prime for demos, so nothing here
//! assumes a machine-word modulus.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::Arc;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use rand::RngCore;
use thiserror::Error;

use crate::meter::OpCounts;

/// Upper bound below which primality is established by trial division.
const EXHAUSTIVE_PRIMALITY_LIMIT: u64 = 1 << 20;

/// Miller-Rabin witnesses. Deterministic below 3.3 * 10^24, probabilistic above.
const MR_WITNESSES: [u32; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

/// secp256k1 base-field prime, 2^256 - 2^32 - 977.
const DEMO_PRIME_256_HEX: &str =
    "fffffffffffffffffffffffffffffffffffffffffffffffffffffffefffffc2f";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FieldError {
    #[error("zero has no multiplicative inverse")]
    ZeroInverse,
    #[error("operands belong to different fields")]
    MixedModulus,
    #[error("duplicate interpolation abscissa {0}")]
    DuplicateAbscissa(BigUint),
    #[error("interpolation needs at least one point")]
    NoPoints,
    #[error("empty polynomial")]
    EmptyPolynomial,
    #[error("modulus {0} is not prime")]
    NotPrime(BigUint),
    #[error("no prime available with {0} bits")]
    UnsupportedBits(u64),
}

/// Modulus and derived encoding width of a prime field.
#[derive(Debug, PartialEq, Eq)]
pub struct FieldParams {
    p: BigUint,
    width: usize,
    bits: u64,
    mask_top: u8,
}

impl FieldParams {
    pub fn new(p: BigUint) -> Result<Arc<Self>, FieldError> {
        if !is_prime(&p) {
            return Err(FieldError::NotPrime(p));
        }
        let bits = p.bits();
        let width = bits.div_ceil(8) as usize;
        let top_bits = bits - 8 * (width as u64 - 1);
        let mask_top = if top_bits == 8 { 0xff } else { (1u8 << top_bits) - 1 };
        Ok(Arc::new(Self { p, width, bits, mask_top }))
    }

    pub fn from_u64(p: u64) -> Result<Arc<Self>, FieldError> {
        Self::new(BigUint::from(p))
    }

    /// The Mersenne prime 2^61 - 1.
    pub fn mersenne61() -> Arc<Self> {
        Self::from_u64((1u64 << 61) - 1).expect("2^61-1 is prime")
    }

    /// A fixed published 256-bit prime.
    pub fn demo256() -> Arc<Self> {
        let p = BigUint::parse_bytes(DEMO_PRIME_256_HEX.as_bytes(), 16).expect("valid hex");
        Self::new(p).expect("demo prime is prime")
    }

    /// A prime of exactly `bits` bits: well-known primes for 61, 127 and 256,
    /// otherwise the largest prime below 2^bits.
    pub fn with_bits(bits: u64) -> Result<Arc<Self>, FieldError> {
        match bits {
            0 | 1 => Err(FieldError::UnsupportedBits(bits)),
            61 => Ok(Self::mersenne61()),
            127 => Self::new((BigUint::one() << 127u32) - 1u32),
            256 => Ok(Self::demo256()),
            _ => {
                let floor = BigUint::one() << (bits - 1);
                let mut candidate = (BigUint::one() << bits) - 1u32;
                while candidate >= floor {
                    if is_prime(&candidate) {
                        return Self::new(candidate);
                    }
                    candidate -= 1u32;
                }
                Err(FieldError::UnsupportedBits(bits))
            }
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.p
    }

    /// Octets per encoded element.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Builds an element, reducing `value` mod p.
    pub fn element(self: &Arc<Self>, value: impl Into<BigUint>) -> FieldElement {
        FieldElement { value: value.into() % &self.p, params: Arc::clone(self) }
    }

    pub fn zero(self: &Arc<Self>) -> FieldElement {
        self.element(0u32)
    }

    pub fn one(self: &Arc<Self>) -> FieldElement {
        self.element(1u32)
    }

    /// Big-endian fixed-width encoding of `value`, which must be < p.
    pub fn encode(&self, value: &BigUint, out: &mut Vec<u8>) {
        let raw = if value.is_zero() { Vec::new() } else { value.to_bytes_be() };
        debug_assert!(raw.len() <= self.width);
        out.resize(out.len() + self.width - raw.len(), 0);
        out.extend_from_slice(&raw);
    }

    /// Decodes one fixed-width chunk; `None` when the chunk is not a canonical element.
    pub fn decode(self: &Arc<Self>, chunk: &[u8]) -> Option<FieldElement> {
        if chunk.len() != self.width {
            return None;
        }
        let value = BigUint::from_bytes_be(chunk);
        (value < self.p).then(|| FieldElement { value, params: Arc::clone(self) })
    }

    /// Uniform sample by rejection from `bits`-bit random integers.
    pub fn sample(self: &Arc<Self>, rng: &mut dyn RngCore, exclude_zero: bool) -> FieldElement {
        let mut buf = vec![0u8; self.width];
        loop {
            rng.fill_bytes(&mut buf);
            buf[0] &= self.mask_top;
            let value = BigUint::from_bytes_be(&buf);
            if value >= self.p || (exclude_zero && value.is_zero()) {
                continue;
            }
            return FieldElement { value, params: Arc::clone(self) };
        }
    }
}

/// Free-function form of [`FieldParams::sample`].
pub fn sample_field_element(
    params: &Arc<FieldParams>,
    rng: &mut dyn RngCore,
    exclude_zero: bool,
) -> FieldElement {
    params.sample(rng, exclude_zero)
}

/// Trial division below 2^20, Miller-Rabin above.
pub fn is_prime(n: &BigUint) -> bool {
    if let Some(small) = n.to_u64() {
        if small < EXHAUSTIVE_PRIMALITY_LIMIT {
            if small < 2 {
                return false;
            }
            let mut d = 2u64;
            while d * d <= small {
                if small % d == 0 {
                    return false;
                }
                d += 1;
            }
            return true;
        }
    }
    if n.is_even() {
        return false;
    }
    let one = BigUint::one();
    let n_minus_one = n - &one;
    let s = n_minus_one.trailing_zeros().unwrap_or(0);
    let d = &n_minus_one >> s;
    'witness: for a in MR_WITNESSES {
        let a = BigUint::from(a);
        if (&a % n).is_zero() {
            continue;
        }
        let mut x = a.modpow(&d, n);
        if x == one || x == n_minus_one {
            continue;
        }
        for _ in 1..s {
            x = x.modpow(&BigUint::from(2u32), n);
            if x == n_minus_one {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// An element of GF(p).
#[derive(Clone)]
pub struct FieldElement {
    value: BigUint,
    params: Arc<FieldParams>,
}

impl FieldElement {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn params(&self) -> &Arc<FieldParams> {
        &self.params
    }

    pub fn is_zero(&self) -> bool {
        self.value.is_zero()
    }

    pub fn same_field(&self, other: &FieldElement) -> bool {
        Arc::ptr_eq(&self.params, &other.params) || self.params.p == other.params.p
    }

    fn check(&self, other: &FieldElement) -> Result<(), FieldError> {
        if self.same_field(other) {
            Ok(())
        } else {
            Err(FieldError::MixedModulus)
        }
    }

    fn with_value(&self, value: BigUint) -> FieldElement {
        FieldElement { value, params: Arc::clone(&self.params) }
    }

    pub fn try_add(&self, rhs: &FieldElement) -> Result<FieldElement, FieldError> {
        self.check(rhs)?;
        Ok(self.with_value((&self.value + &rhs.value) % &self.params.p))
    }

    pub fn try_sub(&self, rhs: &FieldElement) -> Result<FieldElement, FieldError> {
        self.check(rhs)?;
        let p = &self.params.p;
        Ok(self.with_value((&self.value + p - &rhs.value) % p))
    }

    pub fn try_mul(&self, rhs: &FieldElement) -> Result<FieldElement, FieldError> {
        self.check(rhs)?;
        Ok(self.with_value((&self.value * &rhs.value) % &self.params.p))
    }

    /// Multiplicative inverse by the extended Euclidean algorithm.
    pub fn inv(&self) -> Result<FieldElement, FieldError> {
        if self.value.is_zero() {
            return Err(FieldError::ZeroInverse);
        }
        let p = BigInt::from_biguint(Sign::Plus, self.params.p.clone());
        let a = BigInt::from_biguint(Sign::Plus, self.value.clone());
        let egcd = a.extended_gcd(&p);
        debug_assert!(egcd.gcd.is_one());
        let inv = egcd.x.mod_floor(&p);
        Ok(self.with_value(inv.to_biguint().expect("non-negative after mod_floor")))
    }

    /// Fixed-width big-endian encoding.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.params.width);
        self.params.encode(&self.value, &mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        self.params.encode(&self.value, out);
    }
}

pub fn fe_inv(a: &FieldElement) -> Result<FieldElement, FieldError> {
    a.inv()
}

impl PartialEq for FieldElement {
    fn eq(&self, other: &Self) -> bool {
        self.value == other.value && self.same_field(other)
    }
}

impl Eq for FieldElement {}

impl PartialOrd for FieldElement {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for FieldElement {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value.cmp(&other.value).then_with(|| self.params.p.cmp(&other.params.p))
    }
}

impl std::hash::Hash for FieldElement {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.value.hash(state);
    }
}

impl fmt::Debug for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

impl fmt::Display for FieldElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.value)
    }
}

// Operator impls panic on mixed moduli; the `try_*` methods report it instead.
impl<'a> Add<&'a FieldElement> for &'a FieldElement {
    type Output = FieldElement;
    fn add(self, rhs: &'a FieldElement) -> FieldElement {
        self.try_add(rhs).expect("mixed moduli")
    }
}

impl<'a> Sub<&'a FieldElement> for &'a FieldElement {
    type Output = FieldElement;
    fn sub(self, rhs: &'a FieldElement) -> FieldElement {
        self.try_sub(rhs).expect("mixed moduli")
    }
}

impl<'a> Mul<&'a FieldElement> for &'a FieldElement {
    type Output = FieldElement;
    fn mul(self, rhs: &'a FieldElement) -> FieldElement {
        self.try_mul(rhs).expect("mixed moduli")
    }
}

impl Neg for &FieldElement {
    type Output = FieldElement;
    fn neg(self) -> FieldElement {
        let p = &self.params.p;
        self.with_value((p - &self.value) % p)
    }
}

/// Coefficients `[a_0, a_1, ..., a_n]` of `A(x) = a_0 + a_1 x + ... + a_n x^n`.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretPolynomial {
    coeffs: Vec<FieldElement>,
}

impl SecretPolynomial {
    pub fn new(coeffs: Vec<FieldElement>) -> Result<Self, FieldError> {
        let first = coeffs.first().ok_or(FieldError::EmptyPolynomial)?;
        if coeffs.iter().any(|c| !c.same_field(first)) {
            return Err(FieldError::MixedModulus);
        }
        Ok(Self { coeffs })
    }

    pub fn coeffs(&self) -> &[FieldElement] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn params(&self) -> &Arc<FieldParams> {
        self.coeffs[0].params()
    }

    /// Horner evaluation; adds exactly `len - 1` multiplications to `ops`.
    pub fn eval_horner(&self, x: &FieldElement, ops: &mut OpCounts) -> Result<FieldElement, FieldError> {
        poly_eval_horner(self, x, ops)
    }

    /// Power-sum evaluation, used as an independent check of Horner.
    pub fn eval_naive(&self, x: &FieldElement) -> Result<FieldElement, FieldError> {
        self.coeffs[0].check(x)?;
        let mut acc = x.params.zero();
        let mut power = x.params.one();
        for c in &self.coeffs {
            acc = &acc + &(c * &power);
            power = &power * x;
        }
        Ok(acc)
    }
}

impl fmt::Debug for SecretPolynomial {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.coeffs.iter()).finish()
    }
}

/// `a_0 + x(a_1 + x(a_2 + ...))`.
pub fn poly_eval_horner(
    poly: &SecretPolynomial,
    x: &FieldElement,
    ops: &mut OpCounts,
) -> Result<FieldElement, FieldError> {
    let (last, rest) = poly.coeffs.split_last().ok_or(FieldError::EmptyPolynomial)?;
    last.check(x)?;
    let mut acc = last.clone();
    for c in rest.iter().rev() {
        acc = &(&acc * x) + c;
        ops.field_mults += 1;
    }
    Ok(acc)
}

/// Lagrange interpolation through `points`, accumulating basis polynomials.
///
/// The master product `M(x) = prod (x - x_j)` is built once and each basis
/// numerator is recovered from it by synthetic division, so the whole
/// interpolation costs O(n^2) field multiplications.
pub fn lagrange_interpolate(
    points: &[(FieldElement, FieldElement)],
) -> Result<SecretPolynomial, FieldError> {
    lagrange_interpolate_counted(points, &mut OpCounts::default())
}

/// [`lagrange_interpolate`], adding the multiplications performed to `ops`.
pub fn lagrange_interpolate_counted(
    points: &[(FieldElement, FieldElement)],
    ops: &mut OpCounts,
) -> Result<SecretPolynomial, FieldError> {
    let (first, _) = points.first().ok_or(FieldError::NoPoints)?;
    let params = Arc::clone(first.params());
    for (x, y) in points {
        first.check(x)?;
        first.check(y)?;
    }
    let mut xs: Vec<&BigUint> = points.iter().map(|(x, _)| x.value()).collect();
    xs.sort();
    if let Some(dup) = xs.windows(2).find(|w| w[0] == w[1]) {
        return Err(FieldError::DuplicateAbscissa(dup[0].clone()));
    }

    let k = points.len();
    // master[j] is the coefficient of x^j in prod (x - x_i); degree k, monic.
    let mut master = vec![params.zero(); k + 1];
    master[0] = params.one();
    for (i, (xi, _)) in points.iter().enumerate() {
        let neg = -xi;
        for j in (0..=i + 1).rev() {
            let shifted = if j > 0 { master[j - 1].clone() } else { params.zero() };
            master[j] = &shifted + &(&master[j] * &neg);
        }
        ops.field_mults += i as u64 + 2;
    }

    let mut coeffs = vec![params.zero(); k];
    let mut basis = vec![params.zero(); k];
    for (i, (xi, yi)) in points.iter().enumerate() {
        // basis = M(x) / (x - x_i)
        basis[k - 1] = master[k].clone();
        for j in (0..k - 1).rev() {
            basis[j] = &master[j + 1] + &(xi * &basis[j + 1]);
        }
        let mut denom = params.one();
        for (m, (xm, _)) in points.iter().enumerate() {
            if m != i {
                denom = &denom * &(xi - xm);
            }
        }
        let scale = yi * &denom.inv()?;
        for (c, b) in coeffs.iter_mut().zip(&basis) {
            *c = &*c + &(b * &scale);
        }
        // synthetic division, denominator, scale and accumulation
        ops.field_mults += 3 * k as u64 - 1;
    }
    SecretPolynomial::new(coeffs)
}
