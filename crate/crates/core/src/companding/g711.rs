// Segmented 8-bit G.711 codec on 16-bit linear PCM.
//
// Codeword layout: P SSS QQQQ (sign, segment, quantization step).
//
//   a-law:  magnitude (one's complement for negatives) split into 8 segments,
//           segments 0 and 1 share a step of 16, segment s > 1 uses 16 << (s-1).
//           Positive sign bit is 1; even bits are inverted on the wire (^ 0x55).
//   mu-law: magnitude biased by 132 and clipped at 32635, segment s covers
//           biased [128 << s, 256 << s) with step 8 << s. Negative sign bit
//           is 1; the whole codeword is complemented on the wire.
//
// Decoding returns the reconstruction level of the quantization cell. For
// mu-law both zero codes (0xFF and 0x7F) reconstruct to 0.

use super::LawKind;

const ALAW_INVERT: u8 = 0x55;
const MULAW_BIAS: i32 = 0x84;
const MULAW_CLIP: i32 = 32635;

/// Largest magnitude the a-law decoder produces.
pub const ALAW_PEAK: i16 = 32256;
/// Largest magnitude the mu-law decoder produces.
pub const MULAW_PEAK: i16 = 32124;

#[inline]
fn top_bit(v: i32) -> i32 {
    debug_assert!(v > 0);
    31 - v.leading_zeros() as i32
}

#[inline]
fn alaw_encode(pcm: i16) -> u8 {
    let (mag, sign) = if pcm >= 0 {
        (pcm as i32, 0x80)
    } else {
        (-(pcm as i32) - 1, 0x00)
    };
    let seg = (top_bit(mag | 0xFF) - 7).max(0);
    let shift = if seg == 0 { 4 } else { seg + 3 };
    let mant = (mag >> shift) & 0x0F;
    ((sign | (seg << 4) | mant) as u8) ^ ALAW_INVERT
}

#[inline]
fn alaw_decode(code: u8) -> i16 {
    let c = (code ^ ALAW_INVERT) as i32;
    let seg = (c >> 4) & 0x07;
    let mant = c & 0x0F;
    let mag = if seg == 0 {
        (mant << 4) + 8
    } else {
        ((mant << 4) + 0x108) << (seg - 1)
    };
    (if c & 0x80 != 0 { mag } else { -mag }) as i16
}

#[inline]
fn mulaw_encode(pcm: i16) -> u8 {
    let (mag, sign) = if pcm < 0 {
        (-(pcm as i32) - 1, 0x80)
    } else {
        (pcm as i32, 0x00)
    };
    let biased = mag.min(MULAW_CLIP) + MULAW_BIAS;
    let seg = top_bit(biased) - 7;
    let mant = (biased >> (seg + 3)) & 0x0F;
    !((sign | (seg << 4) | mant) as u8)
}

#[inline]
fn mulaw_decode(code: u8) -> i16 {
    let c = (!code) as i32;
    let seg = (c >> 4) & 0x07;
    let mant = c & 0x0F;
    let t = ((mant << 3) + MULAW_BIAS) << seg;
    (if c & 0x80 != 0 { MULAW_BIAS - t } else { t - MULAW_BIAS }) as i16
}

/// Encodes one linear sample to a G.711 codeword. Total over `i16`.
#[inline]
pub fn g711_encode(pcm: i16, kind: LawKind) -> u8 {
    match kind {
        LawKind::ALaw => alaw_encode(pcm),
        LawKind::MuLaw => mulaw_encode(pcm),
    }
}

/// Decodes a G.711 codeword to its linear reconstruction level.
#[inline]
pub fn g711_decode(code: u8, kind: LawKind) -> i16 {
    match kind {
        LawKind::ALaw => alaw_decode(code),
        LawKind::MuLaw => mulaw_decode(code),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LAWS: [LawKind; 2] = [LawKind::ALaw, LawKind::MuLaw];

    #[test]
    fn zero_codewords() {
        assert_eq!(g711_encode(0, LawKind::MuLaw), 0xFF);
        assert_eq!(g711_encode(-1, LawKind::MuLaw), 0x7F);
        assert_eq!(g711_decode(0xFF, LawKind::MuLaw), 0);
        assert_eq!(g711_decode(0x7F, LawKind::MuLaw), 0);
        assert_eq!(g711_encode(0, LawKind::ALaw), 0xD5);
        assert_eq!(g711_encode(-1, LawKind::ALaw), 0x55);
        assert_eq!(g711_decode(0xD5, LawKind::ALaw), 8);
        assert_eq!(g711_decode(0x55, LawKind::ALaw), -8);
    }

    #[test]
    fn peak_codewords() {
        assert_eq!(g711_decode(0x80, LawKind::MuLaw), MULAW_PEAK);
        assert_eq!(g711_decode(0x00, LawKind::MuLaw), -MULAW_PEAK);
        assert_eq!(g711_encode(i16::MAX, LawKind::MuLaw), 0x80);
        assert_eq!(g711_encode(i16::MIN, LawKind::MuLaw), 0x00);
        assert_eq!(g711_decode(0xAA, LawKind::ALaw), ALAW_PEAK);
        assert_eq!(g711_decode(0x2A, LawKind::ALaw), -ALAW_PEAK);
        assert_eq!(g711_encode(i16::MAX, LawKind::ALaw), 0xAA);
        assert_eq!(g711_encode(i16::MIN, LawKind::ALaw), 0x2A);
    }

    #[test]
    fn mu_law_sign_symmetry() {
        for x in 0..=i16::MAX {
            let p = g711_encode(x, LawKind::MuLaw);
            let n = g711_encode(-x - 1, LawKind::MuLaw);
            assert_eq!(p ^ n, 0x80, "x = {x}");
        }
    }

    #[test]
    fn a_law_codes_round_trip() {
        for c in 0..=255u8 {
            assert_eq!(g711_encode(g711_decode(c, LawKind::ALaw), LawKind::ALaw), c);
        }
    }

    #[test]
    fn mu_law_codes_round_trip_except_negative_zero() {
        for c in 0..=255u8 {
            let back = g711_encode(g711_decode(c, LawKind::MuLaw), LawKind::MuLaw);
            if c == 0x7F {
                assert_eq!(back, 0xFF);
            } else {
                assert_eq!(back, c);
            }
        }
    }

    #[test]
    fn quantization_is_idempotent() {
        for law in LAWS {
            for x in i16::MIN..=i16::MAX {
                let once = g711_decode(g711_encode(x, law), law);
                let twice = g711_decode(g711_encode(once, law), law);
                assert_eq!(once, twice);
            }
        }
    }

    #[test]
    fn decode_is_monotone_in_input() {
        for law in LAWS {
            let mut prev = i16::MIN;
            for x in i16::MIN..=i16::MAX {
                let y = g711_decode(g711_encode(x, law), law);
                assert!(y >= prev);
                prev = y;
            }
        }
    }
}
