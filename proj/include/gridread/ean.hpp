#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "gridread/rng.hpp"

namespace gridread {

// ---------------------------------------------------------------------------
// Sequence specifications
// ---------------------------------------------------------------------------

enum class Symbology { EAN13, EAN8, GENERIC };

// Describes the recognition problem: alphabet size N, max length L, whether
// the length is fixed, and the validity rule used for decoded sequences.
struct SequenceSpec {
  Symbology id = Symbology::EAN13;
  int alphabet_size = 10;  // N
  int max_length = 13;     // L
  bool fixed_length = true;
  bool has_na_class = false;   // adds a "not available" class per digit
  bool has_length_head = false;

  static SequenceSpec ean13() { return SequenceSpec{Symbology::EAN13, 10, 13, true, false, false}; }
  static SequenceSpec ean8() { return SequenceSpec{Symbology::EAN8, 10, 8, true, false, false}; }
  static SequenceSpec generic(int alphabet, int max_len, bool fixed,
                              bool na_class, bool length_head) {
    if (length_head && fixed)
      throw std::invalid_argument("length head requires variable length");
    return SequenceSpec{Symbology::GENERIC, alphabet, max_len, fixed, na_class, length_head};
  }

  // Effective class count per digit slot.
  int classes_per_digit() const { return alphabet_size + (has_na_class ? 1 : 0); }
  // Index of the NA class, valid only when has_na_class.
  int na_class() const { return alphabet_size; }
  // Length-head classes: lengths 0..L inclusive.
  int length_classes() const { return has_length_head ? max_length + 1 : 0; }
};

// ---------------------------------------------------------------------------
// GS1 encoding tables (EAN/UPC)
//
// L-codes are the odd-parity left patterns, G-codes the even-parity left
// patterns, R-codes the right patterns. Structural cross-checks used by the
// test suite: R(x) is the bitwise complement of L(x), G(x) is R(x) reversed,
// every L pattern has odd dark-module count and every G pattern even.
// ---------------------------------------------------------------------------

namespace ean_tables {

inline constexpr std::array<const char*, 10> kLCodes = {
    "0001101", "0011001", "0010011", "0111101", "0100011",
    "0110001", "0101111", "0111011", "0110111", "0001011"};

inline constexpr std::array<const char*, 10> kGCodes = {
    "0100111", "0110011", "0011011", "0100001", "0011101",
    "0111001", "0000101", "0010001", "0001001", "0010111"};

inline constexpr std::array<const char*, 10> kRCodes = {
    "1110010", "1100110", "1101100", "1000010", "1011100",
    "1001110", "1010000", "1000100", "1001000", "1110100"};

// EAN-13 parity of the six left digits, selected by the implicit first digit.
// 'L' = odd parity (L-code), 'G' = even parity (G-code).
inline constexpr std::array<const char*, 10> kFirstDigitParity = {
    "LLLLLL", "LLGLGG", "LLGGLG", "LLGGGL", "LGLLGG",
    "LGGLLG", "LGGGLL", "LGLGLG", "LGLGGL", "LGGLGL"};

inline constexpr const char* kStartGuard = "101";
inline constexpr const char* kCenterGuard = "01010";
inline constexpr const char* kEndGuard = "101";

inline constexpr int kEan13Modules = 95;
inline constexpr int kEan8Modules = 67;

}  // namespace ean_tables

// A digit string together with its symbology and rendered module pattern
// ('1' = dark module, '0' = light module).
struct BarcodeSymbol {
  std::string digits;
  Symbology symbology = Symbology::EAN13;
  std::string modules;
};

// ---------------------------------------------------------------------------
// Checksum
// ---------------------------------------------------------------------------

namespace detail {

inline void require_digits(const std::string& s) {
  for (char c : s)
    if (c < '0' || c > '9')
      throw std::invalid_argument("non-digit character in sequence");
}

inline int symbology_length(Symbology s) {
  switch (s) {
    case Symbology::EAN13: return 13;
    case Symbology::EAN8: return 8;
    default: throw std::invalid_argument("no fixed length for GENERIC");
  }
}

}  // namespace detail

// GS1 mod-10 check digit for the payload (full length minus one). Weights
// alternate 1/3 with weight 3 on every position that is even counted from the
// right end of the complete code.
inline int checksum(const std::string& payload, Symbology sym) {
  const int full_len = detail::symbology_length(sym);
  if (static_cast<int>(payload.size()) != full_len - 1)
    throw std::invalid_argument("payload length must be " + std::to_string(full_len - 1));
  detail::require_digits(payload);
  int sum = 0;
  for (int i = 0; i < full_len - 1; ++i) {
    const int pos_from_right = full_len - i;  // check digit is position 1
    const int weight = (pos_from_right % 2 == 0) ? 3 : 1;
    sum += weight * (payload[i] - '0');
  }
  return (10 - sum % 10) % 10;
}

// True iff `digits` has the right length/alphabet for `spec` and, for EAN
// symbologies, the trailing check digit is correct. Never throws.
inline bool validate(const std::string& digits, const SequenceSpec& spec) {
  const int len = static_cast<int>(digits.size());
  if (spec.fixed_length) {
    if (len != spec.max_length) return false;
  } else {
    if (len < 1 || len > spec.max_length) return false;
  }
  for (char c : digits) {
    if (c < '0' || c - '0' >= spec.alphabet_size) return false;
  }
  if (spec.id == Symbology::GENERIC) return true;
  const std::string payload = digits.substr(0, digits.size() - 1);
  return checksum(payload, spec.id) == digits.back() - '0';
}

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline BarcodeSymbol encode(const std::string& digits, Symbology sym) {
  using namespace ean_tables;
  const SequenceSpec spec = sym == Symbology::EAN13 ? SequenceSpec::ean13()
                                                    : SequenceSpec::ean8();
  if (sym == Symbology::GENERIC)
    throw std::invalid_argument("GENERIC profile has no module encoding");
  if (!validate(digits, spec))
    throw std::invalid_argument("invalid digit string for encoding: " + digits);

  std::string m;
  m += kStartGuard;
  if (sym == Symbology::EAN13) {
    const char* parity = kFirstDigitParity[digits[0] - '0'];
    for (int i = 0; i < 6; ++i) {
      const int d = digits[1 + i] - '0';
      m += (parity[i] == 'L') ? kLCodes[d] : kGCodes[d];
    }
    m += kCenterGuard;
    for (int i = 7; i < 13; ++i) m += kRCodes[digits[i] - '0'];
  } else {
    for (int i = 0; i < 4; ++i) m += kLCodes[digits[i] - '0'];
    m += kCenterGuard;
    for (int i = 4; i < 8; ++i) m += kRCodes[digits[i] - '0'];
  }
  m += kEndGuard;
  return BarcodeSymbol{digits, sym, m};
}

// ---------------------------------------------------------------------------
// Scanline reference decoder
//
// Accepts only ideal renderings: one symbol, unrotated, uniform integer
// module width, optional quiet zones. Serves as the test oracle and as the
// validity rule plugged into inference; robustness to distortion is the
// model's job, not this decoder's.
// ---------------------------------------------------------------------------

enum class DecodeStage { ok, run_length, guard, pattern, parity, checksum_fail };

struct DecodeResult {
  bool ok = false;
  std::string digits;
  DecodeStage stage = DecodeStage::ok;
  std::string message;

  static DecodeResult failure(DecodeStage st, std::string msg) {
    DecodeResult r;
    r.ok = false;
    r.stage = st;
    r.message = std::move(msg);
    return r;
  }
};

namespace detail {

inline int match_pattern(const std::string& modules, int offset,
                         const std::array<const char*, 10>& table) {
  for (int d = 0; d < 10; ++d) {
    bool eq = true;
    for (int k = 0; k < 7; ++k) {
      if (modules[offset + k] != table[d][k]) { eq = false; break; }
    }
    if (eq) return d;
  }
  return -1;
}

inline bool match_guard(const std::string& modules, int offset, const char* guard) {
  for (int k = 0; guard[k]; ++k)
    if (modules[offset + k] != guard[k]) return false;
  return true;
}

// Decode from an exact module string (length 95 or 67).
inline DecodeResult decode_modules(const std::string& m) {
  using namespace ean_tables;
  const int n = static_cast<int>(m.size());
  const bool is13 = n == kEan13Modules;
  const bool is8 = n == kEan8Modules;
  if (!is13 && !is8)
    return DecodeResult::failure(DecodeStage::run_length,
                                 "module count " + std::to_string(n));
  const int left_digits = is13 ? 6 : 4;
  const int right_digits = left_digits;
  const int center_off = 3 + 7 * left_digits;
  const int right_off = center_off + 5;
  const int end_off = right_off + 7 * right_digits;
  if (!match_guard(m, 0, kStartGuard) || !match_guard(m, center_off, kCenterGuard) ||
      !match_guard(m, end_off, kEndGuard))
    return DecodeResult::failure(DecodeStage::guard, "guard mismatch");

  std::string parity;
  std::string digits;
  for (int i = 0; i < left_digits; ++i) {
    const int off = 3 + 7 * i;
    int d = match_pattern(m, off, kLCodes);
    if (d >= 0) {
      parity += 'L';
    } else {
      d = match_pattern(m, off, kGCodes);
      if (d < 0)
        return DecodeResult::failure(DecodeStage::pattern,
                                     "unknown left pattern at digit " + std::to_string(i));
      parity += 'G';
    }
    digits += static_cast<char>('0' + d);
  }
  for (int i = 0; i < right_digits; ++i) {
    const int off = right_off + 7 * i;
    const int d = match_pattern(m, off, kRCodes);
    if (d < 0)
      return DecodeResult::failure(DecodeStage::pattern,
                                   "unknown right pattern at digit " + std::to_string(i));
    digits += static_cast<char>('0' + d);
  }

  if (is13) {
    int first = -1;
    for (int f = 0; f < 10; ++f)
      if (parity == kFirstDigitParity[f]) { first = f; break; }
    if (first < 0)
      return DecodeResult::failure(DecodeStage::parity, "parity sequence " + parity);
    digits.insert(digits.begin(), static_cast<char>('0' + first));
  } else if (parity != std::string(left_digits, 'L')) {
    return DecodeResult::failure(DecodeStage::parity, "EAN-8 left group must be all L");
  }

  const SequenceSpec spec = is13 ? SequenceSpec::ean13() : SequenceSpec::ean8();
  if (!validate(digits, spec))
    return DecodeResult::failure(DecodeStage::checksum_fail, "checksum failed for " + digits);
  DecodeResult r;
  r.ok = true;
  r.digits = digits;
  return r;
}

}  // namespace detail

// Decode a dark/light profile (1 = dark). Leading/trailing quiet zone is
// trimmed, then the uniform module width is recovered from run lengths.
inline DecodeResult decode_scanline(const std::vector<std::uint8_t>& profile) {
  using namespace ean_tables;
  int lo = 0, hi = static_cast<int>(profile.size());
  while (lo < hi && profile[lo] == 0) ++lo;
  while (hi > lo && profile[hi - 1] == 0) --hi;
  const int span = hi - lo;
  if (span <= 0)
    return DecodeResult::failure(DecodeStage::run_length, "empty profile");

  int width = 0;
  if (span % kEan13Modules == 0) width = span / kEan13Modules;
  else if (span % kEan8Modules == 0) width = span / kEan8Modules;
  if (width == 0)
    return DecodeResult::failure(DecodeStage::run_length,
                                 "span " + std::to_string(span) +
                                     " is not a whole number of modules");

  // Each module must be a constant block of `width` samples.
  std::string modules;
  modules.reserve(span / width);
  for (int m = lo; m < hi; m += width) {
    const std::uint8_t v = profile[m];
    for (int k = 1; k < width; ++k)
      if (profile[m + k] != v)
        return DecodeResult::failure(DecodeStage::run_length,
                                     "non-uniform module width");
    modules += v ? '1' : '0';
  }
  return detail::decode_modules(modules);
}

inline DecodeResult decode_scanline(const std::string& modules) {
  std::vector<std::uint8_t> profile(modules.size());
  for (size_t i = 0; i < modules.size(); ++i) profile[i] = modules[i] == '1';
  return decode_scanline(profile);
}

// ---------------------------------------------------------------------------
// Random sequences
// ---------------------------------------------------------------------------

// Uniform random payload with the correct check digit appended (EAN), or a
// random in-alphabet string for the GENERIC profile. Deterministic per seed.
inline std::string random_valid_sequence(const SequenceSpec& spec, Rng& rng) {
  if (spec.id == Symbology::GENERIC) {
    const int len = spec.fixed_length
                        ? spec.max_length
                        : static_cast<int>(rng.uniform_int(1, spec.max_length));
    std::string s;
    for (int i = 0; i < len; ++i)
      s += static_cast<char>('0' + rng.uniform_int(0, spec.alphabet_size - 1));
    return s;
  }
  const int full_len = detail::symbology_length(spec.id);
  std::string payload;
  for (int i = 0; i < full_len - 1; ++i)
    payload += static_cast<char>('0' + rng.uniform_int(0, 9));
  payload += static_cast<char>('0' + checksum(payload, spec.id));
  return payload;
}

inline std::string random_valid_sequence(const SequenceSpec& spec, std::uint64_t seed) {
  Rng rng(seed);
  return random_valid_sequence(spec, rng);
}

inline Symbology symbology_from_string(const std::string& s) {
  if (s == "ean13" || s == "EAN13") return Symbology::EAN13;
  if (s == "ean8" || s == "EAN8") return Symbology::EAN8;
  if (s == "generic" || s == "GENERIC") return Symbology::GENERIC;
  throw std::invalid_argument("unknown symbology: " + s);
}

inline std::string to_string(Symbology s) {
  switch (s) {
    case Symbology::EAN13: return "ean13";
    case Symbology::EAN8: return "ean8";
    default: return "generic";
  }
}

}  // namespace gridread
