#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "sbd/binary_io.hpp"
#include "sbd/errors.hpp"
#include "sbd/random.hpp"

namespace sbd {

enum class Pooling : std::uint8_t { none = 0, mean = 1, last = 2, max = 3 };

inline const char* to_string(Pooling p) {
  switch (p) {
    case Pooling::none: return "none";
    case Pooling::mean: return "mean";
    case Pooling::last: return "last";
    case Pooling::max: return "max";
  }
  return "?";
}

inline Pooling parse_pooling(const std::string& s) {
  if (s == "none") return Pooling::none;
  if (s == "mean") return Pooling::mean;
  if (s == "last") return Pooling::last;
  if (s == "max") return Pooling::max;
  throw ValidationError("unknown pooling mode '" + s + "'");
}

inline constexpr std::uint8_t kBuggy = 1;
inline constexpr std::uint8_t kPatched = 0;

// One code snippet's residual-stream activations. tokens is token_count x d,
// row-major; token_count == 0 means the record carries only a pooled vector.
struct ActivationRecord {
  std::string snippet_id;
  std::string pair_id;
  std::uint8_t label = kPatched;
  std::uint32_t token_count = 0;
  std::vector<float> tokens;
  std::optional<std::vector<float>> pooled;

  std::span<const float> token_row(std::size_t t, std::size_t d) const {
    return std::span<const float>(tokens).subspan(t * d, d);
  }

  bool operator==(const ActivationRecord&) const = default;
};

struct ActivationDataset {
  std::string model_name;
  std::uint32_t layer_index = 0;
  std::uint32_t d = 0;
  Pooling pooling = Pooling::none;
  std::vector<ActivationRecord> records;

  bool operator==(const ActivationDataset&) const = default;
};

namespace detail {

inline bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

inline std::string record_name(const ActivationRecord& r, std::size_t i) {
  return "record " + std::to_string(i) + " ('" + r.snippet_id + "')";
}

}  // namespace detail

// Throws ValidationError naming the first offending record.
inline void validate(const ActivationDataset& ds) {
  if (ds.d == 0) {
    throw ValidationError("dataset width d must be positive");
  }
  struct Seen {
    int buggy = 0;
    int patched = 0;
  };
  std::map<std::string, Seen> pairs;
  for (std::size_t i = 0; i < ds.records.size(); ++i) {
    const auto& r = ds.records[i];
    const std::string name = detail::record_name(r, i);
    if (r.label != kBuggy && r.label != kPatched) {
      throw ValidationError(name + ": label must be 0 or 1, got " + std::to_string(r.label));
    }
    if (r.token_count == 0 && !r.pooled) {
      throw ValidationError(name + ": has neither token activations nor a pooled vector");
    }
    if (r.tokens.size() != static_cast<std::size_t>(r.token_count) * ds.d) {
      throw ValidationError(name + ": token matrix has " + std::to_string(r.tokens.size()) +
                            " entries, expected token_count*d = " +
                            std::to_string(static_cast<std::size_t>(r.token_count) * ds.d));
    }
    if (!detail::all_finite(r.tokens)) {
      throw ValidationError(name + ": token activations contain NaN or Inf");
    }
    if (r.pooled) {
      if (r.pooled->size() != ds.d) {
        throw ValidationError(name + ": pooled vector has " + std::to_string(r.pooled->size()) +
                              " entries, expected " + std::to_string(ds.d));
      }
      if (!detail::all_finite(*r.pooled)) {
        throw ValidationError(name + ": pooled vector contains NaN or Inf");
      }
    }
    auto& seen = pairs[r.pair_id];
    int& count = r.label == kBuggy ? seen.buggy : seen.patched;
    if (++count > 1) {
      throw ValidationError(name + ": pair '" + r.pair_id + "' has more than one " +
                            (r.label == kBuggy ? "buggy" : "patched") + " record");
    }
  }
}

// Bytes a record occupies in the SAB encoding.
inline std::uint64_t sab_record_size(const ActivationRecord& r, std::uint32_t d) {
  return 2 + r.snippet_id.size() + 2 + r.pair_id.size() + 1 + 4 +
         static_cast<std::uint64_t>(r.token_count) * d * 4 + 1 + (r.pooled ? std::uint64_t{d} * 4 : 0);
}

inline std::uint64_t sab_header_size(const ActivationDataset& ds) {
  return 4 + 2 + 2 + ds.model_name.size() + 4 + 4 + 1 + 8;
}

inline constexpr std::uint16_t kSabVersion = 1;

inline Bytes write_dataset(const ActivationDataset& ds) {
  validate(ds);
  ByteWriter w;
  w.magic("SAB1");
  w.u16(kSabVersion);
  w.short_string(ds.model_name);
  w.u32(ds.layer_index);
  w.u32(ds.d);
  w.u8(static_cast<std::uint8_t>(ds.pooling));
  w.u64(ds.records.size());
  for (const auto& r : ds.records) {
    w.short_string(r.snippet_id);
    w.short_string(r.pair_id);
    w.u8(r.label);
    w.u32(r.token_count);
    for (float v : r.tokens) w.f32(v);
    w.u8(r.pooled ? 1 : 0);
    if (r.pooled) {
      for (float v : *r.pooled) w.f32(v);
    }
  }
  return std::move(w).bytes();
}

// Returns the number of bytes written.
inline std::uint64_t write_dataset(const ActivationDataset& ds, std::ostream& sink) {
  const Bytes bytes = write_dataset(ds);
  sink.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!sink) {
    throw IoError("failed writing " + std::to_string(bytes.size()) + " bytes of SAB data");
  }
  return bytes.size();
}

inline ActivationDataset read_dataset(std::span<const std::uint8_t> data) {
  ByteReader in(data);
  if (!in.expect_magic("SAB1")) {
    throw UnsupportedFormatError("not an SAB activation file (bad magic)");
  }
  const std::uint16_t version = in.u16();
  if (version != kSabVersion) {
    throw UnsupportedFormatError("unsupported SAB version " + std::to_string(version));
  }
  ActivationDataset ds;
  ds.model_name = in.short_string();
  ds.layer_index = in.u32();
  ds.d = in.u32();
  const std::uint8_t tag = in.u8();
  if (tag > static_cast<std::uint8_t>(Pooling::max)) {
    throw ValidationError("unknown pooling tag " + std::to_string(tag));
  }
  ds.pooling = static_cast<Pooling>(tag);
  const std::uint64_t count = in.u64();
  if (ds.d == 0) {
    throw ValidationError("dataset width d must be positive");
  }
  // Every record needs at least 10 bytes; reject absurd counts before reserving.
  if (count > in.remaining() / 10) {
    // Records past remaining / 10 cannot be complete; name the first of them.
    throw CorruptionError("record count " + std::to_string(count) + " exceeds file size", in.offset(),
                          static_cast<std::int64_t>(in.remaining() / 10));
  }
  ds.records.reserve(count);
  for (std::uint64_t i = 0; i < count; ++i) {
    in.set_record(static_cast<std::int64_t>(i));
    ActivationRecord r;
    r.snippet_id = in.short_string();
    r.pair_id = in.short_string();
    r.label = in.u8();
    r.token_count = in.u32();
    const std::uint64_t n = static_cast<std::uint64_t>(r.token_count) * ds.d;
    in.require(n * 4);
    r.tokens.resize(n);
    for (auto& v : r.tokens) v = in.f32();
    const std::uint8_t has_pooled = in.u8();
    if (has_pooled > 1) {
      throw ValidationError(detail::record_name(r, i) + ": has_pooled flag must be 0 or 1");
    }
    if (has_pooled == 1) {
      in.require(std::uint64_t{ds.d} * 4);
      std::vector<float> p(ds.d);
      for (auto& v : p) v = in.f32();
      r.pooled = std::move(p);
    }
    ds.records.push_back(std::move(r));
  }
  in.set_record(-1);
  if (!in.at_end()) {
    throw CorruptionError(std::to_string(in.remaining()) + " trailing bytes after last record", in.offset());
  }
  validate(ds);
  return ds;
}

inline ActivationDataset read_dataset(std::istream& source) {
  Bytes data((std::istreambuf_iterator<char>(source)), std::istreambuf_iterator<char>());
  return read_dataset(std::span<const std::uint8_t>(data));
}

inline ActivationDataset load_dataset(const std::string& path) { return read_dataset(read_file_bytes(path)); }

inline void save_dataset(const ActivationDataset& ds, const std::string& path) {
  write_file_bytes(path, write_dataset(ds));
}

// Aggregates token rows into one d-vector. Accumulates in double.
inline std::vector<float> pool_tokens(const ActivationRecord& rec, Pooling mode) {
  if (mode == Pooling::none) {
    throw ValidationError("pooling mode 'none' requested; use token granularity instead");
  }
  if (rec.token_count == 0) {
    throw MissingTokensError("record '" + rec.snippet_id + "' has no token activations to pool");
  }
  const std::size_t d = rec.tokens.size() / rec.token_count;
  std::vector<float> out(d);
  switch (mode) {
    case Pooling::mean:
      for (std::size_t j = 0; j < d; ++j) {
        double sum = 0.0;
        for (std::size_t t = 0; t < rec.token_count; ++t) sum += rec.tokens[t * d + j];
        out[j] = static_cast<float>(sum / rec.token_count);
      }
      break;
    case Pooling::last: {
      auto row = rec.token_row(rec.token_count - 1, d);
      std::copy(row.begin(), row.end(), out.begin());
      break;
    }
    case Pooling::max:
      for (std::size_t j = 0; j < d; ++j) {
        float m = rec.tokens[j];
        for (std::size_t t = 1; t < rec.token_count; ++t) m = std::max(m, rec.tokens[t * d + j]);
        out[j] = m;
      }
      break;
    case Pooling::none:
      break;
  }
  return out;
}

// The snippet-level vector: the stored pooled vector when present,
// otherwise the token rows pooled with `fallback`.
inline std::vector<float> record_vector(const ActivationRecord& rec, Pooling fallback = Pooling::mean) {
  if (rec.pooled) return *rec.pooled;
  return pool_tokens(rec, fallback);
}

struct SynthSpec {
  std::size_t n_pairs = 100;
  std::uint32_t d = 16;
  std::vector<std::uint32_t> planted_dims = {0, 1, 2};
  double effect_size = 4.0;
  double noise_scale = 0.5;
  std::uint64_t seed = 0;
  // 0 emits pooled-only records; otherwise each record gets this many token
  // rows and a mean-pooled vector.
  std::uint32_t tokens_per_record = 0;
  std::string model_name = "synthetic";
  std::uint32_t layer_index = 0;
};

inline std::string synth_pair_id(std::size_t i) {
  std::ostringstream os;
  os << "pair-" << std::setw(5) << std::setfill('0') << i;
  return os.str();
}

// Buggy and patched members share a Gaussian base (scale noise_scale); the
// buggy member is shifted by +effect_size on each planted dimension.
inline ActivationDataset synth_paired_dataset(const SynthSpec& spec) {
  if (spec.n_pairs == 0 || spec.d == 0) {
    throw ValidationError("synthetic dataset needs n_pairs > 0 and d > 0");
  }
  for (auto dim : spec.planted_dims) {
    if (dim >= spec.d) {
      throw ValidationError("planted dimension " + std::to_string(dim) + " out of range [0, " +
                            std::to_string(spec.d) + ")");
    }
  }
  ActivationDataset ds;
  ds.model_name = spec.model_name;
  ds.layer_index = spec.layer_index;
  ds.d = spec.d;
  ds.pooling = Pooling::mean;
  ds.records.reserve(2 * spec.n_pairs);
  Rng rng(spec.seed);
  const std::uint32_t rows = std::max<std::uint32_t>(spec.tokens_per_record, 1);
  for (std::size_t i = 0; i < spec.n_pairs; ++i) {
    std::vector<float> base(static_cast<std::size_t>(rows) * spec.d);
    for (auto& v : base) v = static_cast<float>(spec.noise_scale * rng.normal());
    std::vector<float> shifted = base;
    for (std::uint32_t t = 0; t < rows; ++t) {
      for (auto dim : spec.planted_dims) {
        shifted[t * spec.d + dim] += static_cast<float>(spec.effect_size);
      }
    }
    const std::string pair = synth_pair_id(i);
    for (auto [label, values] : {std::pair{kBuggy, &shifted}, std::pair{kPatched, &base}}) {
      ActivationRecord r;
      r.pair_id = pair;
      r.snippet_id = pair + (label == kBuggy ? "/buggy" : "/patched");
      r.label = label;
      if (spec.tokens_per_record == 0) {
        r.pooled = *values;
      } else {
        r.token_count = rows;
        r.tokens = *values;
        r.pooled = pool_tokens(r, Pooling::mean);
      }
      ds.records.push_back(std::move(r));
    }
  }
  return ds;
}

}  // namespace sbd
