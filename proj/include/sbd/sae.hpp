#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sbd/binary_io.hpp"
#include "sbd/errors.hpp"
#include "sbd/random.hpp"

namespace sbd {

template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

enum class Activation : std::uint8_t { relu = 0 };
enum class SparsityPenalty : std::uint8_t { l1 = 0 };

inline constexpr double kDefaultActivityEpsilon = 1e-6;

// Tied-weight sparse autoencoder: c = relu(M x + b), x_hat = M^T c.
// Rows of `dictionary` (M, d_hid x d_in) are the dictionary atoms.
template <typename T = double>
struct SaeParams {
  Matrix<T> dictionary;
  Vector<T> bias;
  Activation activation = Activation::relu;
  SparsityPenalty sparsity = SparsityPenalty::l1;
  T alpha = 0;

  std::size_t d_in() const { return static_cast<std::size_t>(dictionary.cols()); }
  std::size_t d_hid() const { return static_cast<std::size_t>(dictionary.rows()); }

  // M = I, b = 0: the code is relu(x) and features are the input coordinates.
  static SaeParams identity(std::size_t d) {
    SaeParams p;
    p.dictionary = Matrix<T>::Identity(d, d);
    p.bias = Vector<T>::Zero(d);
    return p;
  }

  // M ~ U[-init_scale, init_scale] drawn row-major from `seed`, b = 0.
  static SaeParams random(std::size_t d_in, std::size_t d_hid, double init_scale, std::uint64_t seed,
                          T alpha = 0) {
    SaeParams p;
    p.dictionary.resize(d_hid, d_in);
    Rng rng(seed);
    for (Eigen::Index i = 0; i < p.dictionary.size(); ++i) {
      p.dictionary.data()[i] = static_cast<T>(rng.uniform(-init_scale, init_scale));
    }
    p.bias = Vector<T>::Zero(d_hid);
    p.alpha = alpha;
    return p;
  }

  template <typename U>
  SaeParams<U> cast() const {
    SaeParams<U> out;
    out.dictionary = dictionary.template cast<U>();
    out.bias = bias.template cast<U>();
    out.activation = activation;
    out.sparsity = sparsity;
    out.alpha = static_cast<U>(alpha);
    return out;
  }

  bool operator==(const SaeParams& o) const {
    return dictionary.rows() == o.dictionary.rows() && dictionary.cols() == o.dictionary.cols() &&
           dictionary == o.dictionary && bias == o.bias && activation == o.activation &&
           sparsity == o.sparsity && alpha == o.alpha;
  }
};

template <typename T>
void validate(const SaeParams<T>& p) {
  if (p.d_in() == 0 || p.d_hid() == 0) {
    throw ShapeError("SAE dimensions must be positive");
  }
  if (static_cast<std::size_t>(p.bias.size()) != p.d_hid()) {
    throw ShapeError("SAE bias has " + std::to_string(p.bias.size()) + " entries, expected d_hid = " +
                     std::to_string(p.d_hid()));
  }
  if (!p.dictionary.allFinite() || !p.bias.allFinite() || !std::isfinite(static_cast<double>(p.alpha))) {
    throw ValidationError("SAE parameters contain NaN or Inf");
  }
  if (p.alpha < 0) {
    throw ValidationError("SAE sparsity weight alpha must be non-negative");
  }
}

template <typename T>
struct SparseCode {
  Vector<T> values;
  std::size_t l0 = 0;  // entries above the activity threshold
  T l1 = 0;

  std::size_t size() const { return static_cast<std::size_t>(values.size()); }
};

template <typename T>
SparseCode<T> make_code(Vector<T> values, double activity_epsilon = kDefaultActivityEpsilon) {
  SparseCode<T> c;
  c.values = std::move(values);
  c.l1 = c.values.cwiseAbs().sum();
  c.l0 = static_cast<std::size_t>((c.values.array() > static_cast<T>(activity_epsilon)).count());
  return c;
}

namespace detail {

template <typename T>
void check_input(const SaeParams<T>& p, Eigen::Index n) {
  if (static_cast<std::size_t>(n) != p.d_in()) {
    throw ShapeError("input has " + std::to_string(n) + " entries, SAE expects d_in = " + std::to_string(p.d_in()));
  }
}

template <typename T>
void check_code(const SaeParams<T>& p, Eigen::Index n) {
  if (static_cast<std::size_t>(n) != p.d_hid()) {
    throw ShapeError("code has " + std::to_string(n) + " entries, SAE expects d_hid = " +
                     std::to_string(p.d_hid()));
  }
}

}  // namespace detail

template <typename T>
SparseCode<T> encode(const SaeParams<T>& p, const Vector<T>& x, double activity_epsilon = kDefaultActivityEpsilon) {
  detail::check_input(p, x.size());
  Vector<T> z = p.dictionary * x + p.bias;
  return make_code<T>(z.cwiseMax(T(0)), activity_epsilon);
}

template <typename T>
Vector<T> decode(const SaeParams<T>& p, const Vector<T>& code_values) {
  detail::check_code(p, code_values.size());
  return p.dictionary.transpose() * code_values;
}

template <typename T>
Vector<T> decode(const SaeParams<T>& p, const SparseCode<T>& c) {
  return decode(p, c.values);
}

template <typename T>
struct LossTerms {
  T total = 0;
  T recon = 0;     // ||x - x_hat||^2
  T sparsity = 0;  // l1(c)
};

template <typename T>
LossTerms<T> loss(const SaeParams<T>& p, const Vector<T>& x) {
  const SparseCode<T> c = encode(p, x);
  const Vector<T> residual = decode(p, c) - x;
  LossTerms<T> out;
  out.recon = residual.squaredNorm();
  out.sparsity = c.l1;
  out.total = out.recon + p.alpha * out.sparsity;
  return out;
}

template <typename T>
struct SaeGradients {
  Matrix<T> dictionary;
  Vector<T> bias;
};

namespace detail {

// Adds the per-sample gradient into `acc` and returns the sample's total loss.
// With z = Mx + b, c = relu(z), r = M^T c - x:
//   dL/dc = 2 M r + alpha        (l1 term; c >= 0)
//   dL/dz = dL/dc * [z > 0]      (relu subgradient 0 at z = 0)
//   dL/dM = c (2r)^T + (dL/dz) x^T   (decoder use + encoder use of M)
//   dL/db = dL/dz
template <typename T>
T accumulate_gradients(const SaeParams<T>& p, const Vector<T>& x, SaeGradients<T>& acc) {
  const Vector<T> z = p.dictionary * x + p.bias;
  const Vector<T> c = z.cwiseMax(T(0));
  const Vector<T> r = p.dictionary.transpose() * c - x;
  const Vector<T> grad_c = ((T(2) * (p.dictionary * r)).array() + p.alpha).matrix();
  const Vector<T> grad_z = (grad_c.array() * (z.array() > T(0)).template cast<T>()).matrix();
  acc.dictionary.noalias() += c * (T(2) * r).transpose();
  acc.dictionary.noalias() += grad_z * x.transpose();
  acc.bias += grad_z;
  return r.squaredNorm() + p.alpha * c.sum();
}

template <typename T>
SaeGradients<T> zero_gradients(const SaeParams<T>& p) {
  return {Matrix<T>::Zero(p.d_hid(), p.d_in()), Vector<T>::Zero(p.d_hid())};
}

}  // namespace detail

// Analytic gradient of loss(p, x).total with respect to M and b.
template <typename T>
SaeGradients<T> loss_gradients(const SaeParams<T>& p, const Vector<T>& x) {
  detail::check_input(p, x.size());
  SaeGradients<T> g = detail::zero_gradients(p);
  detail::accumulate_gradients(p, x, g);
  return g;
}

struct TrainConfig {
  double learning_rate = 0.02;
  std::size_t epochs = 200;
  std::size_t batch_size = 16;
  std::uint64_t seed = 0;
  double init_scale = 0.1;
  double alpha = 0.2;
  double activity_epsilon = kDefaultActivityEpsilon;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.learning_rate > 0) || cfg.epochs == 0 || cfg.batch_size == 0 || !(cfg.init_scale > 0) ||
      !(cfg.alpha >= 0) || !(cfg.activity_epsilon >= 0)) {
    throw ValidationError("invalid SAE training config: learning_rate, epochs, batch_size and init_scale must be "
                          "positive; alpha and activity_epsilon non-negative");
  }
}

template <typename T>
struct TrainResult {
  SaeParams<T> params;
  T initial_mean_loss = 0;
  T final_mean_loss = 0;
  std::vector<T> epoch_mean_loss;
};

template <typename T>
T mean_loss(const SaeParams<T>& p, const Matrix<T>& data) {
  T sum = 0;
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    sum += loss<T>(p, data.row(i).transpose()).total;
  }
  return sum / static_cast<T>(data.rows());
}

// Seeded mini-batch SGD on the mean loss; samples are the rows of `data`.
// Single-threaded: the accumulation order is part of the determinism contract.
template <typename T>
TrainResult<T> train(const Matrix<T>& data, std::size_t d_hid, const TrainConfig& cfg) {
  validate(cfg);
  if (data.rows() == 0 || data.cols() == 0) {
    throw DegenerateDataError("SAE training needs at least one non-empty sample");
  }
  if (d_hid == 0) {
    throw ShapeError("d_hid must be positive");
  }
  if (!data.allFinite()) {
    throw ValidationError("SAE training data contains NaN or Inf");
  }
  TrainResult<T> result;
  result.params = SaeParams<T>::random(static_cast<std::size_t>(data.cols()), d_hid, cfg.init_scale,
                                       derive_seed(cfg.seed, 0), static_cast<T>(cfg.alpha));
  SaeParams<T>& p = result.params;
  result.initial_mean_loss = mean_loss(p, data);

  Rng order_rng(derive_seed(cfg.seed, 1));
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.rows()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  SaeGradients<T> g = detail::zero_gradients(p);
  const T lr = static_cast<T>(cfg.learning_rate);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      g.dictionary.setZero();
      g.bias.setZero();
      for (std::size_t k = start; k < stop; ++k) {
        detail::accumulate_gradients<T>(p, data.row(order[k]).transpose(), g);
      }
      const T step = lr / static_cast<T>(stop - start);
      p.dictionary -= step * g.dictionary;
      p.bias -= step * g.bias;
    }
    const T epoch_loss = mean_loss(p, data);
    if (!std::isfinite(static_cast<double>(epoch_loss))) {
      throw TrainingDivergedError(epoch);
    }
    result.epoch_mean_loss.push_back(epoch_loss);
  }
  result.final_mean_loss = result.epoch_mean_loss.back();
  return result;
}

// ---- SWB weight files -------------------------------------------------------

inline constexpr std::uint16_t kSwbVersion = 1;

struct SwbHeader {
  std::uint16_t version = kSwbVersion;
  std::uint32_t d_in = 0;
  std::uint32_t d_hid = 0;
  Activation activation = Activation::relu;
  SparsityPenalty sparsity = SparsityPenalty::l1;
  float alpha = 0;

  std::uint64_t payload_bytes() const { return (std::uint64_t{d_hid} * d_in + d_hid) * 4; }
};

inline constexpr std::size_t kSwbHeaderSize = 4 + 2 + 4 + 4 + 1 + 1 + 4;

// Values are stored as f32; parameters that are not f32-representable round.
template <typename T>
Bytes write_sae(const SaeParams<T>& p) {
  validate(p);
  ByteWriter w;
  w.magic("SWB1");
  w.u16(kSwbVersion);
  w.u32(static_cast<std::uint32_t>(p.d_in()));
  w.u32(static_cast<std::uint32_t>(p.d_hid()));
  w.u8(static_cast<std::uint8_t>(p.activation));
  w.u8(static_cast<std::uint8_t>(p.sparsity));
  w.f32(static_cast<float>(p.alpha));
  for (Eigen::Index i = 0; i < p.dictionary.size(); ++i) w.f32(static_cast<float>(p.dictionary.data()[i]));
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) w.f32(static_cast<float>(p.bias[i]));
  return std::move(w).bytes();
}

namespace detail {

inline SwbHeader read_swb_header(ByteReader& in) {
  if (!in.expect_magic("SWB1")) {
    throw UnsupportedFormatError("not an SWB weight file (bad magic)");
  }
  SwbHeader h;
  h.version = in.u16();
  if (h.version != kSwbVersion) {
    throw UnsupportedFormatError("unsupported SWB version " + std::to_string(h.version));
  }
  h.d_in = in.u32();
  h.d_hid = in.u32();
  const std::uint8_t act = in.u8();
  const std::uint8_t sp = in.u8();
  if (act != static_cast<std::uint8_t>(Activation::relu)) {
    throw UnsupportedFormatError("unsupported SAE activation tag " + std::to_string(act));
  }
  if (sp != static_cast<std::uint8_t>(SparsityPenalty::l1)) {
    throw UnsupportedFormatError("unsupported SAE sparsity tag " + std::to_string(sp));
  }
  h.alpha = in.f32();
  if (h.d_in == 0 || h.d_hid == 0) {
    throw ShapeError("SWB header declares an empty dictionary (" + std::to_string(h.d_hid) + " x " +
                     std::to_string(h.d_in) + ")");
  }
  return h;
}

}  // namespace detail

// Header only, but still checks the payload length against the declared shape.
inline SwbHeader read_sae_header(std::span<const std::uint8_t> data) {
  ByteReader in(data);
  SwbHeader h = detail::read_swb_header(in);
  if (in.remaining() != h.payload_bytes()) {
    throw ShapeError("SWB payload is " + std::to_string(in.remaining()) + " bytes, header shape " +
                     std::to_string(h.d_hid) + " x " + std::to_string(h.d_in) + " requires " +
                     std::to_string(h.payload_bytes()));
  }
  return h;
}

inline SaeParams<double> read_sae(std::span<const std::uint8_t> data) {
  const SwbHeader h = read_sae_header(data);
  ByteReader in(data);
  detail::read_swb_header(in);
  SaeParams<double> p;
  p.alpha = h.alpha;
  p.dictionary.resize(h.d_hid, h.d_in);
  for (Eigen::Index i = 0; i < p.dictionary.size(); ++i) p.dictionary.data()[i] = in.f32();
  p.bias.resize(h.d_hid);
  for (Eigen::Index i = 0; i < p.bias.size(); ++i) p.bias[i] = in.f32();
  validate(p);
  return p;
}

inline SaeParams<double> load_sae(const std::string& path) { return read_sae(read_file_bytes(path)); }

template <typename T>
void save_sae(const SaeParams<T>& p, const std::string& path) {
  write_file_bytes(path, write_sae(p));
}

}  // namespace sbd
